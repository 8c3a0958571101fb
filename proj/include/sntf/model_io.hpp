#pragma once

#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "editing.hpp"
#include "error.hpp"
#include "factorization.hpp"
#include "npy.hpp"
#include "synthetic.hpp"
#include "tensor.hpp"

namespace sntf::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int format_version = 1;

inline npy::Array to_array(const Matrix& m) {
    npy::Array a;
    a.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
    a.values.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) a.values.push_back(m(i, j));
    return a;
}

inline Matrix to_matrix(const npy::Array& a, const std::string& where) {
    if (a.ndim() != 2)
        throw DataError(where + ": expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
    Matrix m(static_cast<Eigen::Index>(a.shape[0]), static_cast<Eigen::Index>(a.shape[1]));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = a.values[static_cast<std::size_t>(i * m.cols() + j)];
    return m;
}

inline Vector to_vector(const npy::Array& a) {
    return Eigen::Map<const Vector>(a.values.data(), static_cast<Eigen::Index>(a.values.size()));
}

inline void write_matrix(const fs::path& path, const Matrix& m) { npy::write_array(path, to_array(m)); }

inline Matrix read_matrix(const fs::path& path) {
    return to_matrix(npy::read_array(path), path.string());
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw DataError("write failed: " + path.string());
}

inline json read_json(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": malformed metadata (" + e.what() + ")");
    }
}

template <typename T>
T field(const json& j, const char* key, const fs::path& where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw DataError(where.string() + ": missing or invalid field '" + key + "'");
    }
}

inline void check_version(const json& j, const fs::path& where) {
    const int v = field<int>(j, "format_version", where);
    if (v != format_version)
        throw DataError(where.string() + ": unsupported format_version " + std::to_string(v));
}

/// Shortest text that round-trips the double exactly.
inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline fs::path sidecar_path(const fs::path& array_path) {
    fs::path p = array_path;
    return p.replace_extension(".json");
}

// Batches: one N x C x S array plus {height, width} in a .json sidecar.

inline void write_batch(const fs::path& path, const ActivationBatch& batch) {
    const std::size_t n = batch.size(), c = batch.channels(), s = batch.spatial();
    std::vector<double> values;
    values.reserve(n * c * s);
    for (const auto& z : batch)
        for (Eigen::Index ci = 0; ci < z.data().rows(); ++ci)
            for (Eigen::Index si = 0; si < z.data().cols(); ++si) values.push_back(z.data()(ci, si));
    npy::write_array(path, {n, c, s}, values);
    json meta = {{"format_version", format_version},
                 {"height", batch.dims().height},
                 {"width", batch.dims().width}};
    write_text(sidecar_path(path), meta.dump(2) + "\n");
}

inline ActivationBatch read_batch(const fs::path& path) {
    const auto arr = npy::read_array(path);
    if (arr.ndim() != 3)
        throw DataError(path.string() + ": expected an N x C x S array, got " +
                        std::to_string(arr.ndim()) + "-D");
    const auto side = sidecar_path(path);
    if (!fs::exists(side)) throw DataError(path.string() + ": missing sidecar " + side.string());
    const json meta = read_json(side);
    check_version(meta, side);
    const SpatialDims dims{field<std::size_t>(meta, "height", side),
                           field<std::size_t>(meta, "width", side)};
    const std::size_t n = arr.shape[0], c = arr.shape[1], s = arr.shape[2];
    if (dims.size() != s)
        throw DataError(side.string() + ": height*width = " + std::to_string(dims.size()) +
                        " but the array has S = " + std::to_string(s));
    std::vector<ActivationSample> samples;
    samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Matrix z(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(s));
        const double* base = arr.values.data() + i * c * s;
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t si = 0; si < s; ++si)
                z(static_cast<Eigen::Index>(ci), static_cast<Eigen::Index>(si)) = base[ci * s + si];
        samples.emplace_back(std::move(z), dims);
    }
    return ActivationBatch(std::move(samples));
}

inline json to_json(const FitConfig& cfg) {
    json j = {{"appearance_rank", cfg.appearance_rank},
              {"parts_rank", cfg.parts_rank},
              {"iterations", cfg.iterations},
              {"learning_rate", cfg.learning_rate},
              {"seed", cfg.seed},
              {"nonneg", cfg.nonneg},
              {"convergence_tol", cfg.convergence_tol},
              {"step_rule", to_string(cfg.step_rule)}};
    j["minibatch"] = cfg.minibatch ? json(*cfg.minibatch) : json(nullptr);
    return j;
}

inline FitConfig fit_config_from_json(const json& j, const fs::path& where) {
    FitConfig cfg;
    cfg.appearance_rank = field<std::size_t>(j, "appearance_rank", where);
    cfg.parts_rank = field<std::size_t>(j, "parts_rank", where);
    cfg.iterations = field<std::size_t>(j, "iterations", where);
    cfg.learning_rate = field<double>(j, "learning_rate", where);
    cfg.seed = field<std::uint64_t>(j, "seed", where);
    cfg.nonneg = field<bool>(j, "nonneg", where);
    cfg.convergence_tol = field<double>(j, "convergence_tol", where);
    try {
        cfg.step_rule = parse_step_rule(field<std::string>(j, "step_rule", where));
    } catch (const UsageError& e) {
        throw DataError(where.string() + ": " + e.what());
    }
    if (j.contains("minibatch") && !j["minibatch"].is_null())
        cfg.minibatch = field<std::size_t>(j, "minibatch", where);
    return cfg;
}

/// One "iteration,loss" pair per line.
inline std::string loss_trace_text(const FitStats& stats) {
    std::string out = "iteration,loss\n";
    for (const auto& [it, l] : stats.loss_trace)
        out += std::to_string(it) + "," + format_double(l) + "\n";
    return out;
}

/// Directory layout: appearance.npy, parts.npy, model.json, loss_trace.csv.
inline void save_model(const FactorModel& model, const fs::path& dir) {
    fs::create_directories(dir);
    write_matrix(dir / "appearance.npy", model.appearance);
    write_matrix(dir / "parts.npy", model.parts);
    json meta = {{"format_version", format_version},
                 {"channels", model.appearance.rows()},
                 {"height", model.dims.height},
                 {"width", model.dims.width},
                 {"appearance_rank", model.appearance.cols()},
                 {"parts_rank", model.parts.cols()},
                 {"fit_config", to_json(model.config)},
                 {"final_loss", model.stats.final_loss},
                 {"iterations", model.stats.iterations}};
    json trace = json::array();
    for (const auto& [it, l] : model.stats.loss_trace) trace.push_back(json::array({it, l}));
    meta["loss_trace"] = std::move(trace);
    write_text(dir / "model.json", meta.dump(2) + "\n");
    write_text(dir / "loss_trace.csv", loss_trace_text(model.stats));
}

inline FactorModel load_model(const fs::path& dir) {
    const auto meta_path = dir / "model.json";
    if (!fs::is_directory(dir)) throw DataError(dir.string() + ": not a model directory");
    if (!fs::exists(meta_path)) throw DataError(dir.string() + ": missing model.json");
    const json meta = read_json(meta_path);
    check_version(meta, meta_path);

    FactorModel model;
    model.appearance = read_matrix(dir / "appearance.npy");
    model.parts = read_matrix(dir / "parts.npy");
    model.dims = {field<std::size_t>(meta, "height", meta_path),
                  field<std::size_t>(meta, "width", meta_path)};
    const auto channels = field<Eigen::Index>(meta, "channels", meta_path);
    const auto rc = field<Eigen::Index>(meta, "appearance_rank", meta_path);
    const auto rs = field<Eigen::Index>(meta, "parts_rank", meta_path);
    if (model.appearance.rows() != channels || model.appearance.cols() != rc)
        throw DataError(meta_path.string() + ": appearance.npy is " +
                        sntf::detail::shape_str(model.appearance.rows(), model.appearance.cols()) +
                        ", metadata says " + sntf::detail::shape_str(channels, rc));
    if (static_cast<std::size_t>(model.parts.rows()) != model.dims.size() || model.parts.cols() != rs)
        throw DataError(meta_path.string() + ": parts.npy is " +
                        sntf::detail::shape_str(model.parts.rows(), model.parts.cols()) +
                        ", metadata says " +
                        sntf::detail::shape_str(static_cast<Eigen::Index>(model.dims.size()), rs));
    if (rc < 1 || rc > channels || rs < 1 || static_cast<std::size_t>(rs) > model.dims.size())
        throw DataError(meta_path.string() + ": ranks must satisfy 1 <= R_C <= C and 1 <= R_S <= S");
    if (!model.appearance.allFinite() || !model.parts.allFinite())
        throw DataError(dir.string() + ": factor arrays contain non-finite values");
    model.config = fit_config_from_json(field<json>(meta, "fit_config", meta_path), meta_path);
    model.stats.final_loss = field<double>(meta, "final_loss", meta_path);
    model.stats.iterations = field<std::size_t>(meta, "iterations", meta_path);
    for (const auto& e : field<json>(meta, "loss_trace", meta_path)) {
        if (!e.is_array() || e.size() != 2)
            throw DataError(meta_path.string() + ": malformed loss_trace entry");
        model.stats.loss_trace.emplace_back(e[0].get<std::size_t>(), e[1].get<double>());
    }
    return model;
}

/// Truth layout: appearance.npy, parts.npy, lambdas.npy (N x R_C x R_S), truth.json.
inline void save_truth(const PlantedTruth& truth, const fs::path& dir) {
    fs::create_directories(dir);
    write_matrix(dir / "appearance.npy", truth.appearance);
    write_matrix(dir / "parts.npy", truth.parts);
    const auto rc = static_cast<std::size_t>(truth.appearance.cols());
    const auto rs = static_cast<std::size_t>(truth.parts.cols());
    std::vector<double> lam;
    for (const auto& l : truth.lambdas)
        for (Eigen::Index i = 0; i < l.rows(); ++i)
            for (Eigen::Index j = 0; j < l.cols(); ++j) lam.push_back(l(i, j));
    npy::write_array(dir / "lambdas.npy", {truth.lambdas.size(), rc, rs}, lam);
    json meta = {{"format_version", format_version},
                 {"height", truth.dims.height},
                 {"width", truth.dims.width},
                 {"noise_sigma", truth.noise_sigma},
                 {"seed", truth.seed}};
    write_text(dir / "truth.json", meta.dump(2) + "\n");
}

inline PlantedTruth load_truth(const fs::path& dir) {
    const auto meta_path = dir / "truth.json";
    const json meta = read_json(meta_path);
    check_version(meta, meta_path);
    PlantedTruth t;
    t.appearance = read_matrix(dir / "appearance.npy");
    t.parts = read_matrix(dir / "parts.npy");
    t.dims = {field<std::size_t>(meta, "height", meta_path), field<std::size_t>(meta, "width", meta_path)};
    t.noise_sigma = field<double>(meta, "noise_sigma", meta_path);
    t.seed = field<std::uint64_t>(meta, "seed", meta_path);
    if (static_cast<std::size_t>(t.parts.rows()) != t.dims.size())
        throw DataError(meta_path.string() + ": parts rows do not match height*width");
    const auto lam = npy::read_array(dir / "lambdas.npy");
    if (lam.ndim() != 3 || lam.shape[1] != static_cast<std::size_t>(t.appearance.cols()) ||
        lam.shape[2] != static_cast<std::size_t>(t.parts.cols()))
        throw DataError((dir / "lambdas.npy").string() + ": shape inconsistent with factors");
    const std::size_t block = lam.shape[1] * lam.shape[2];
    for (std::size_t n = 0; n < lam.shape[0]; ++n) {
        Matrix l(static_cast<Eigen::Index>(lam.shape[1]), static_cast<Eigen::Index>(lam.shape[2]));
        for (Eigen::Index i = 0; i < l.rows(); ++i)
            for (Eigen::Index j = 0; j < l.cols(); ++j)
                l(i, j) = lam.values[n * block + static_cast<std::size_t>(i * l.cols() + j)];
        t.lambdas.push_back(std::move(l));
    }
    return t;
}

/// Edit record on disk: the part lives in its own .npy file (length S or H x W).
struct EditRecord {
    std::size_t appearance_index = 0;
    double alpha = 0.0;
    fs::path part_file;
    PartNorm norm = PartNorm::max;
};

inline void save_edit_record(const EditRecord& r, const fs::path& path) {
    json j = {{"format_version", format_version},
              {"appearance_index", r.appearance_index},
              {"alpha", r.alpha},
              {"part_file", r.part_file.generic_string()},
              {"norm", r.norm == PartNorm::max ? "max" : "l2"}};
    write_text(path, j.dump(2) + "\n");
}

inline EditRecord load_edit_record(const fs::path& path) {
    const json j = read_json(path);
    check_version(j, path);
    EditRecord r;
    r.appearance_index = field<std::size_t>(j, "appearance_index", path);
    r.alpha = field<double>(j, "alpha", path);
    r.part_file = field<std::string>(j, "part_file", path);
    if (r.part_file.is_relative()) r.part_file = path.parent_path() / r.part_file;
    const auto norm = j.contains("norm") ? field<std::string>(j, "norm", path) : std::string("max");
    if (norm == "max")
        r.norm = PartNorm::max;
    else if (norm == "l2")
        r.norm = PartNorm::l2;
    else
        throw DataError(path.string() + ": unknown norm '" + norm + "'");
    return r;
}

/// Reads a part/mask file: either length S or H x W (row-major flattened).
inline Vector read_spatial_vector(const fs::path& path, SpatialDims dims) {
    const auto a = npy::read_array(path);
    const bool flat = a.ndim() == 1 && a.shape[0] == dims.size();
    const bool grid = a.ndim() == 2 && a.shape[0] == dims.height && a.shape[1] == dims.width;
    if (!flat && !grid)
        throw DataError(path.string() + ": expected shape (" + std::to_string(dims.size()) +
                        ",) or (" + std::to_string(dims.height) + ", " +
                        std::to_string(dims.width) + ")");
    return to_vector(a);
}

inline EditSpec load_edit_spec(const fs::path& path, SpatialDims dims) {
    const auto r = load_edit_record(path);
    return EditSpec{r.appearance_index, read_spatial_vector(r.part_file, dims), r.alpha, r.norm};
}

} // namespace sntf::io
