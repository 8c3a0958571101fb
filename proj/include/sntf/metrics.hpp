#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "error.hpp"
#include "tensor.hpp"

namespace sntf {

/// N x H x W x C images (or feature maps), row-major.
struct ImageBatch {
    std::size_t count = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<double> values;

    ImageBatch() = default;
    ImageBatch(std::size_t n, std::size_t h, std::size_t w, std::size_t c)
        : count(n), height(h), width(w), channels(c), values(n * h * w * c, 0.0) {}

    std::size_t sample_size() const { return height * width * channels; }
    double& operator()(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
        return values[((n * height + h) * width + w) * channels + c];
    }
    double operator()(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
        return values[((n * height + h) * width + w) * channels + c];
    }
};

/// H x W region of interest with entries in [0, 1], broadcast over channels.
struct RoiMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;

    RoiMask() = default;
    RoiMask(std::size_t h, std::size_t w, std::vector<double> v)
        : height(h), width(w), values(std::move(v)) {
        detail::require(values.size() == h * w, "roi mask: value count != H*W");
        for (double x : values)
            detail::require(x >= 0.0 && x <= 1.0, "roi mask: entries must lie in [0, 1]");
    }

    RoiMask complement() const {
        std::vector<double> v(values.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 - values[i];
        return RoiMask(height, width, std::move(v));
    }
};

/// Feature maps viewed as images: channel c at (h, w) = Z(c, h * W + w).
inline ImageBatch as_images(const ActivationBatch& batch) {
    const auto dims = batch.dims();
    ImageBatch out(batch.size(), dims.height, dims.width, batch.channels());
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const Matrix& z = batch[n].data();
        for (std::size_t h = 0; h < dims.height; ++h)
            for (std::size_t w = 0; w < dims.width; ++w)
                for (std::size_t c = 0; c < batch.channels(); ++c)
                    out(n, h, w, c) = z(static_cast<Eigen::Index>(c),
                                        static_cast<Eigen::Index>(h * dims.width + w));
    }
    return out;
}

struct RoirSample {
    std::size_t index = 0;
    double ratio = 0.0;
};

struct RoirResult {
    double mean = 0.0;
    double stddev = 0.0;  // population (ddof = 0)
    std::vector<RoirSample> samples;
    /// Samples with no change inside the ROI.
    std::vector<std::size_t> excluded;
};

namespace detail {

inline void check_pair(const ImageBatch& x, const ImageBatch& y, const char* who) {
    require(x.count == y.count && x.height == y.height && x.width == y.width &&
                x.channels == y.channels,
            std::string(who) + ": original and edited batches differ in shape");
    require(x.values.size() == x.count * x.sample_size() &&
                y.values.size() == y.count * y.sample_size(),
            std::string(who) + ": value count does not match shape");
    require(x.count >= 1, std::string(who) + ": empty batch");
}

} // namespace detail

/// Region-of-interest ratio: ||(1 - M) * (X - X')|| / ||M * (X - X')|| per
/// sample, averaged over samples with a nonzero denominator.
inline RoirResult roir(const RoiMask& mask, const ImageBatch& x, const ImageBatch& edited) {
    detail::check_pair(x, edited, "roir");
    detail::require(mask.height == x.height && mask.width == x.width,
                    "roir: mask is " + std::to_string(mask.height) + "x" +
                        std::to_string(mask.width) + " but images are " +
                        std::to_string(x.height) + "x" + std::to_string(x.width));
    RoirResult out;
    for (std::size_t n = 0; n < x.count; ++n) {
        double outside = 0.0, inside = 0.0;
        for (std::size_t h = 0; h < x.height; ++h)
            for (std::size_t w = 0; w < x.width; ++w) {
                const double m = mask.values[h * x.width + w];
                for (std::size_t c = 0; c < x.channels; ++c) {
                    const double d = x(n, h, w, c) - edited(n, h, w, c);
                    const double din = m * d;
                    const double dout = (1.0 - m) * d;
                    inside += din * din;
                    outside += dout * dout;
                }
            }
        if (inside == 0.0) {
            out.excluded.push_back(n);
            continue;
        }
        out.samples.push_back({n, std::sqrt(outside) / std::sqrt(inside)});
    }
    if (out.samples.empty())
        throw DataError("roir: every sample has zero change inside the region of interest (" +
                        std::to_string(out.excluded.size()) + " excluded)");
    double sum = 0.0;
    for (const auto& s : out.samples) sum += s.ratio;
    out.mean = sum / static_cast<double>(out.samples.size());
    double var = 0.0;
    for (const auto& s : out.samples) var += (s.ratio - out.mean) * (s.ratio - out.mean);
    out.stddev = std::sqrt(var / static_cast<double>(out.samples.size()));
    return out;
}

/// Per-pixel squared difference averaged over channels; one H x W map per sample.
inline std::vector<Matrix> mse_map(const ImageBatch& x, const ImageBatch& edited) {
    detail::check_pair(x, edited, "mse_map");
    std::vector<Matrix> out;
    out.reserve(x.count);
    for (std::size_t n = 0; n < x.count; ++n) {
        Matrix m(static_cast<Eigen::Index>(x.height), static_cast<Eigen::Index>(x.width));
        for (std::size_t h = 0; h < x.height; ++h)
            for (std::size_t w = 0; w < x.width; ++w) {
                double acc = 0.0;
                for (std::size_t c = 0; c < x.channels; ++c) {
                    const double d = x(n, h, w, c) - edited(n, h, w, c);
                    acc += d * d;
                }
                m(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w)) =
                    acc / static_cast<double>(x.channels);
            }
        out.push_back(std::move(m));
    }
    return out;
}

/// |a & b| / |a | b|; two empty masks give 1.
inline double iou(const std::vector<bool>& a, const std::vector<bool>& b) {
    detail::require(a.size() == b.size(), "iou: masks have different lengths");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] && b[i]) ? 1 : 0;
        uni += (a[i] || b[i]) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

} // namespace sntf
