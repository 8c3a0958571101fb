#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace sntf::npy {

enum class Dtype { f4, f8, u1 };

inline std::string_view descr(Dtype d) {
    switch (d) {
    case Dtype::f4: return "<f4";
    case Dtype::f8: return "<f8";
    case Dtype::u1: return "|u1";
    }
    return "";
}

/// Dense C-order array widened to double.
struct Array {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    Dtype source_dtype = Dtype::f8;

    std::size_t ndim() const { return shape.size(); }
};

inline std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

namespace detail {

inline constexpr std::array<char, 6> magic = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

inline std::string shape_literal(const std::vector<std::size_t>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    if (shape.size() == 1) s += ",";
    return s + ")";
}

// The Python dict literal numpy writes, padded so the data starts on a
// 64-byte boundary.
inline std::string header(Dtype dtype, const std::vector<std::size_t>& shape) {
    std::string dict = "{'descr': '" + std::string(descr(dtype)) +
                       "', 'fortran_order': False, 'shape': " + shape_literal(shape) + ", }";
    const std::size_t prefix = magic.size() + 2 + 2;
    std::size_t total = prefix + dict.size() + 1;
    const std::size_t pad = (64 - total % 64) % 64;
    dict.append(pad, ' ');
    dict.push_back('\n');
    return dict;
}

template <typename U>
U load_le(const unsigned char* p) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return v;
}

template <typename U>
void store_le(U v, std::string& out) {
    for (std::size_t i = 0; i < sizeof(U); ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\n'))
        s.remove_suffix(1);
    return s;
}

// Value text following 'key': in the header dict.
inline std::string_view dict_value(std::string_view dict, std::string_view key,
                                   const std::string& where) {
    const std::string quoted = "'" + std::string(key) + "'";
    const auto k = dict.find(quoted);
    if (k == std::string_view::npos)
        throw DataError(where + ": header lacks key " + quoted);
    auto rest = dict.substr(k + quoted.size());
    rest = trim(rest);
    if (rest.empty() || rest.front() != ':') throw DataError(where + ": malformed header near " + quoted);
    rest = trim(rest.substr(1));
    if (!rest.empty() && rest.front() == '(') {
        const auto close = rest.find(')');
        if (close == std::string_view::npos) throw DataError(where + ": unterminated shape tuple");
        return rest.substr(0, close + 1);
    }
    if (!rest.empty() && rest.front() == '\'') {
        const auto close = rest.find('\'', 1);
        if (close == std::string_view::npos) throw DataError(where + ": unterminated string");
        return rest.substr(0, close + 1);
    }
    const auto end = rest.find_first_of(",}");
    return trim(rest.substr(0, end));
}

inline std::vector<std::size_t> parse_shape(std::string_view tuple, const std::string& where) {
    std::vector<std::size_t> shape;
    std::string_view inner = tuple.substr(1, tuple.size() - 2);
    while (true) {
        inner = trim(inner);
        if (inner.empty()) break;
        const auto comma = inner.find(',');
        const auto tok = trim(inner.substr(0, comma));
        if (tok.empty()) throw DataError(where + ": malformed shape " + std::string(tuple));
        std::size_t v = 0;
        for (char ch : tok) {
            if (ch < '0' || ch > '9') throw DataError(where + ": malformed shape " + std::string(tuple));
            v = v * 10 + static_cast<std::size_t>(ch - '0');
        }
        shape.push_back(v);
        if (comma == std::string_view::npos) break;
        inner = inner.substr(comma + 1);
    }
    return shape;
}

} // namespace detail

/// Encodes an array as .npy v1.0 bytes (little-endian, C order).
inline std::string encode(const std::vector<std::size_t>& shape, const std::vector<double>& values,
                          Dtype dtype = Dtype::f8) {
    sntf::detail::require(!shape.empty(), "npy: refusing to write a 0-dimensional array");
    sntf::detail::require(element_count(shape) == values.size(),
                          "npy: value count does not match shape");
    const std::string head = detail::header(dtype, shape);
    std::string out(detail::magic.begin(), detail::magic.end());
    out.push_back('\x01');
    out.push_back('\x00');
    detail::store_le(static_cast<std::uint16_t>(head.size()), out);
    out += head;
    for (double v : values) {
        switch (dtype) {
        case Dtype::f8: detail::store_le(std::bit_cast<std::uint64_t>(v), out); break;
        case Dtype::f4: detail::store_le(std::bit_cast<std::uint32_t>(static_cast<float>(v)), out); break;
        case Dtype::u1:
            sntf::detail::require(v >= 0.0 && v <= 255.0 && v == static_cast<double>(static_cast<std::uint8_t>(v)),
                                  "npy: value not representable as uint8");
            out.push_back(static_cast<char>(static_cast<std::uint8_t>(v)));
            break;
        }
    }
    return out;
}

inline Array decode(std::string_view bytes, const std::string& where = "npy") {
    const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 10 || std::memcmp(bytes.data(), detail::magic.data(), detail::magic.size()) != 0)
        throw DataError(where + ": bad magic (not a .npy file)");
    if (u[6] != 1 || u[7] != 0)
        throw DataError(where + ": unsupported .npy version " + std::to_string(u[6]) + "." +
                        std::to_string(u[7]) + " (only 1.0)");
    const std::size_t hlen = detail::load_le<std::uint16_t>(u + 8);
    if (bytes.size() < 10 + hlen) throw DataError(where + ": truncated header");
    const std::string_view dict = bytes.substr(10, hlen);

    const auto d = detail::dict_value(dict, "descr", where);
    Array out;
    if (d == "'<f8'")
        out.source_dtype = Dtype::f8;
    else if (d == "'<f4'")
        out.source_dtype = Dtype::f4;
    else if (d == "'|u1'")
        out.source_dtype = Dtype::u1;
    else
        throw DataError(where + ": unsupported dtype " + std::string(d) +
                        " (expected '<f8', '<f4' or '|u1')");

    const auto fo = detail::dict_value(dict, "fortran_order", where);
    if (fo == "True") throw DataError(where + ": Fortran-order arrays are not supported");
    if (fo != "False") throw DataError(where + ": malformed fortran_order value " + std::string(fo));

    const auto sh = detail::dict_value(dict, "shape", where);
    if (sh.empty() || sh.front() != '(') throw DataError(where + ": malformed shape");
    out.shape = detail::parse_shape(sh, where);
    if (out.shape.empty()) throw DataError(where + ": 0-dimensional arrays are not supported");
    const std::size_t n = element_count(out.shape);
    if (n == 0) throw DataError(where + ": empty array (a dimension is zero)");

    const std::size_t width = out.source_dtype == Dtype::f8 ? 8 : out.source_dtype == Dtype::f4 ? 4 : 1;
    const std::size_t data_off = 10 + hlen;
    if (bytes.size() != data_off + n * width)
        throw DataError(where + ": payload is " + std::to_string(bytes.size() - data_off) +
                        " bytes, expected " + std::to_string(n * width));
    out.values.resize(n);
    const unsigned char* p = u + data_off;
    for (std::size_t i = 0; i < n; ++i) {
        switch (out.source_dtype) {
        case Dtype::f8: out.values[i] = std::bit_cast<double>(detail::load_le<std::uint64_t>(p + 8 * i)); break;
        case Dtype::f4:
            out.values[i] = static_cast<double>(std::bit_cast<float>(detail::load_le<std::uint32_t>(p + 4 * i)));
            break;
        case Dtype::u1: out.values[i] = static_cast<double>(p[i]); break;
        }
    }
    return out;
}

inline Array read_array(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode(bytes, path.string());
}

inline void write_array(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
                        const std::vector<double>& values, Dtype dtype = Dtype::f8) {
    const std::string bytes = encode(shape, values, dtype);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

inline void write_array(const std::filesystem::path& path, const Array& a,
                        Dtype dtype = Dtype::f8) {
    write_array(path, a.shape, a.values, dtype);
}

} // namespace sntf::npy
