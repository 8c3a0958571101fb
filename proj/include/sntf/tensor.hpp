#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"

namespace sntf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Spatial extent of a feature map; S = height * width.
struct SpatialDims {
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t size() const { return height * width; }
    bool operator==(const SpatialDims&) const = default;
};

/// Raw H x W x C feature map stored row-major (h, w, c).
struct FeatureMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<double> values;

    FeatureMap() = default;
    FeatureMap(std::size_t h, std::size_t w, std::size_t c)
        : height(h), width(w), channels(c), values(h * w * c, 0.0) {}

    double& operator()(std::size_t h, std::size_t w, std::size_t c) {
        return values[(h * width + w) * channels + c];
    }
    double operator()(std::size_t h, std::size_t w, std::size_t c) const {
        return values[(h * width + w) * channels + c];
    }
};

namespace detail {

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.allFinite();
}

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

} // namespace detail

/// One sample's mode-3 unfolding: C x S, column s = h * W + w.
class ActivationSample {
public:
    ActivationSample(Matrix data, SpatialDims dims) : data_(std::move(data)), dims_(dims) {
        detail::require(dims_.height >= 1 && dims_.width >= 1,
                        "activation sample: spatial dims must be positive");
        detail::require(data_.rows() >= 1, "activation sample: need at least one channel");
        detail::require(static_cast<std::size_t>(data_.cols()) == dims_.size(),
                        "activation sample: column count " + std::to_string(data_.cols()) +
                            " != H*W = " + std::to_string(dims_.size()));
        detail::require(detail::all_finite(data_), "activation sample: non-finite entries");
    }

    const Matrix& data() const { return data_; }
    SpatialDims dims() const { return dims_; }
    std::size_t channels() const { return static_cast<std::size_t>(data_.rows()); }
    std::size_t spatial() const { return dims_.size(); }

private:
    Matrix data_;
    SpatialDims dims_;
};

/// N samples sharing (C, H, W).
class ActivationBatch {
public:
    explicit ActivationBatch(std::vector<ActivationSample> samples) : samples_(std::move(samples)) {
        detail::require(!samples_.empty(), "activation batch: empty");
        const auto& first = samples_.front();
        for (std::size_t i = 1; i < samples_.size(); ++i) {
            detail::require(samples_[i].dims() == first.dims() &&
                                samples_[i].channels() == first.channels(),
                            "activation batch: sample " + std::to_string(i) +
                                " has different dimensions than sample 0");
        }
    }

    std::size_t size() const { return samples_.size(); }
    std::size_t channels() const { return samples_.front().channels(); }
    std::size_t spatial() const { return samples_.front().spatial(); }
    SpatialDims dims() const { return samples_.front().dims(); }

    const ActivationSample& operator[](std::size_t i) const { return samples_[i]; }
    const std::vector<ActivationSample>& samples() const { return samples_; }
    auto begin() const { return samples_.begin(); }
    auto end() const { return samples_.end(); }

    /// Subset in the given order; indices must be in range.
    ActivationBatch select(const std::vector<std::size_t>& indices) const {
        std::vector<ActivationSample> out;
        out.reserve(indices.size());
        for (auto i : indices) {
            detail::require(i < samples_.size(), "activation batch: index out of range");
            out.push_back(samples_[i]);
        }
        return ActivationBatch(std::move(out));
    }

    double squared_norm() const {
        double s = 0.0;
        for (const auto& z : samples_) s += z.data().squaredNorm();
        return s;
    }

private:
    std::vector<ActivationSample> samples_;
};

/// Unfolds an H x W x C feature map along the channel mode.
inline ActivationSample mode3_unfold(const FeatureMap& raw) {
    detail::require(raw.height >= 1 && raw.width >= 1 && raw.channels >= 1,
                    "mode3_unfold: all dimensions must be >= 1");
    detail::require(raw.values.size() == raw.height * raw.width * raw.channels,
                    "mode3_unfold: value count does not match dimensions");
    const std::size_t spatial = raw.height * raw.width;
    Matrix out(raw.channels, spatial);
    for (std::size_t s = 0; s < spatial; ++s) {
        for (std::size_t c = 0; c < raw.channels; ++c) {
            const double v = raw.values[s * raw.channels + c];
            if (!std::isfinite(v)) {
                throw DataError("mode3_unfold: non-finite value at (h=" +
                                std::to_string(s / raw.width) + ", w=" +
                                std::to_string(s % raw.width) + ", c=" + std::to_string(c) + ")");
            }
            out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(s)) = v;
        }
    }
    return ActivationSample(std::move(out), {raw.height, raw.width});
}

/// Inverse of the row-major spatial flattening.
inline Matrix fold_spatial(const Vector& v, std::size_t height, std::size_t width) {
    detail::require(static_cast<std::size_t>(v.size()) == height * width,
                    "fold_spatial: length " + std::to_string(v.size()) + " != " +
                        std::to_string(height) + "*" + std::to_string(width));
    Matrix out(height, width);
    for (std::size_t h = 0; h < height; ++h)
        for (std::size_t w = 0; w < width; ++w)
            out(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w)) =
                v(static_cast<Eigen::Index>(h * width + w));
    return out;
}

/// Row-major flattening of an H x W matrix.
inline Vector flatten_spatial(const Matrix& m) {
    Vector out(m.size());
    for (Eigen::Index h = 0; h < m.rows(); ++h)
        for (Eigen::Index w = 0; w < m.cols(); ++w) out(h * m.cols() + w) = m(h, w);
    return out;
}

/// Z x_3 B for every sample: Z_i * B^T, each C x R.
inline std::vector<Matrix> mode3_product(const ActivationBatch& batch, const Matrix& b) {
    detail::require(static_cast<std::size_t>(b.cols()) == batch.spatial(),
                    "mode3_product: B is " + detail::shape_str(b.rows(), b.cols()) +
                        " but S = " + std::to_string(batch.spatial()));
    std::vector<Matrix> out;
    out.reserve(batch.size());
    for (const auto& z : batch) out.push_back(z.data() * b.transpose());
    return out;
}

} // namespace sntf
