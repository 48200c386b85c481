#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "partpool/backbone.hpp"
#include "partpool/layers.hpp"
#include "partpool/types.hpp"

namespace partpool {

/// Binary target maps aligned to the feature grid: per (image, part) at
/// most one positive cell, all-zero plane for an invisible part.
template <class T>
struct HeatmapBatch {
    Tensor4<T> targets;                     // (N, P, H', W'), values in {0,1}
    std::vector<std::vector<GridLoc>> cells; // positive cell per (image, part)
};

/// Nearest cell-center index along one axis; Euclidean ties go to the
/// lower index. Centers sit at (k + 0.5) * stride.
inline std::size_t nearest_cell(double v, std::size_t stride, std::size_t count) {
    const double t = v / static_cast<double>(stride);
    double k = std::floor(t);
    // v exactly on a cell boundary is equidistant from both neighbors.
    if (k > 0.0 && k * static_cast<double>(stride) == v) k -= 1.0;
    if (k < 0.0) k = 0.0;
    if (k > static_cast<double>(count - 1)) k = static_cast<double>(count - 1);
    return static_cast<std::size_t>(k);
}

template <class T>
HeatmapBatch<T> encode_targets(const std::vector<std::vector<KeypointAnnotation>>& annotations,
                               std::size_t num_parts, std::size_t grid_h, std::size_t grid_w,
                               std::size_t stride) {
    const std::size_t n = annotations.size();
    HeatmapBatch<T> batch;
    batch.targets = Tensor4<T>(n, num_parts, grid_h, grid_w);
    batch.cells.assign(n, std::vector<GridLoc>(num_parts));
    const double img_w = static_cast<double>(grid_w * stride);
    const double img_h = static_cast<double>(grid_h * stride);
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& kp : annotations[i]) {
            if (kp.part >= num_parts) throw DataError("keypoint part id out of range");
            if (!kp.visible) continue;
            if (kp.x < 0 || kp.y < 0 || kp.x > img_w || kp.y > img_h)
                throw DataError("visible keypoint outside image bounds");
            const std::size_t col = nearest_cell(kp.x, stride, grid_w);
            const std::size_t row = nearest_cell(kp.y, stride, grid_h);
            batch.targets.at(i, kp.part, row, col) = T(1);
            batch.cells[i][kp.part] = {row, col, true};
        }
    }
    return batch;
}

/// Pixelwise sigmoid cross entropy summed over parts and grid, divided by
/// the batch size only. Gradient in the fused form (sigmoid(z) - p) / N.
template <class T>
std::pair<T, Tensor4<T>> heatmap_loss(const Tensor4<T>& logits, const Tensor4<T>& targets) {
    if (!logits.same_shape(targets))
        throw UsageError("heatmap_loss: logits " + logits.shape_str() + " vs targets " +
                         targets.shape_str());
    for (T p : targets.data)
        if (p != T(0) && p != T(1)) throw DataError("heatmap target outside {0,1}");
    const T inv_n = T(1) / static_cast<T>(logits.n);
    Tensor4<T> grad(logits.n, logits.c, logits.h, logits.w);
    T loss = T(0);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const T z = logits.data[i];
        const T p = targets.data[i];
        loss += std::max(z, T(0)) - z * p + std::log1p(std::exp(-std::abs(z)));
        grad.data[i] = (sigmoid_scalar(z) - p) * inv_n;
    }
    loss *= inv_n;
    if (!std::isfinite(static_cast<double>(loss)))
        throw NumericError("heatmap_loss: non-finite loss");
    return {loss, grad};
}

enum class PoolMode { Mean, Max };

/// Pools a w x w feature window centered on each part location (clipped to
/// the grid) and stacks the P pooled vectors. Invisible parts contribute a
/// zero vector and receive no gradient; locations get no gradient at all.
template <class T>
class CoordinateTransfer {
  public:
    explicit CoordinateTransfer(std::size_t window = 3, PoolMode mode = PoolMode::Mean)
        : window_(window), mode_(mode) {
        if (window % 2 == 0) throw ConfigError("coordinate transfer window must be odd");
    }

    /// Output shape (N, P, D, 1).
    Tensor4<T> forward(const FeatureMap<T>& features,
                       const std::vector<std::vector<GridLoc>>& locations) {
        const Tensor4<T>& f = features.values;
        if (locations.size() != f.n) throw UsageError("locations batch size mismatch");
        const std::size_t num_parts = locations.empty() ? 0 : locations[0].size();
        cached_locations_ = locations;
        cached_shape_ = {f.n, f.c, f.h, f.w};
        Tensor4<T> out(f.n, num_parts, f.c, 1);
        if (mode_ == PoolMode::Max) argmax_.assign(out.size(), 0);
        for (std::size_t n = 0; n < f.n; ++n) {
            if (locations[n].size() != num_parts)
                throw UsageError("ragged part-location list");
            for (std::size_t p = 0; p < num_parts; ++p) {
                const GridLoc& loc = locations[n][p];
                if (!loc.valid) continue;
                if (loc.row >= f.h || loc.col >= f.w)
                    throw UsageError("part location outside feature grid");
                const auto [r0, r1] = clip(loc.row, f.h);
                const auto [c0, c1] = clip(loc.col, f.w);
                const T count = static_cast<T>((r1 - r0) * (c1 - c0));
                for (std::size_t d = 0; d < f.c; ++d) {
                    if (mode_ == PoolMode::Mean) {
                        T acc = T(0);
                        for (std::size_t i = r0; i < r1; ++i)
                            for (std::size_t j = c0; j < c1; ++j) acc += f.at(n, d, i, j);
                        out.at(n, p, d, 0) = acc / count;
                    } else {
                        T best = f.at(n, d, r0, c0);
                        std::size_t best_ij = r0 * f.w + c0;
                        for (std::size_t i = r0; i < r1; ++i)
                            for (std::size_t j = c0; j < c1; ++j)
                                if (f.at(n, d, i, j) > best) {
                                    best = f.at(n, d, i, j);
                                    best_ij = i * f.w + j;
                                }
                        out.at(n, p, d, 0) = best;
                        argmax_[(n * num_parts + p) * f.c + d] = best_ij;
                    }
                }
            }
        }
        has_forward_ = true;
        return out;
    }

    Tensor4<T> backward(const Tensor4<T>& grad_parts) {
        if (!has_forward_) throw UsageError("coordinate transfer backward before forward");
        Tensor4<T> grad_f(cached_shape_[0], cached_shape_[1], cached_shape_[2],
                          cached_shape_[3]);
        const std::size_t fw = cached_shape_[3];
        for (std::size_t n = 0; n < grad_parts.n; ++n)
            for (std::size_t p = 0; p < grad_parts.c; ++p) {
                const GridLoc& loc = cached_locations_[n][p];
                if (!loc.valid) continue;
                const auto [r0, r1] = clip(loc.row, cached_shape_[2]);
                const auto [c0, c1] = clip(loc.col, fw);
                const T inv = T(1) / static_cast<T>((r1 - r0) * (c1 - c0));
                for (std::size_t d = 0; d < grad_parts.h; ++d) {
                    const T g = grad_parts.at(n, p, d, 0);
                    if (mode_ == PoolMode::Mean) {
                        for (std::size_t i = r0; i < r1; ++i)
                            for (std::size_t j = c0; j < c1; ++j)
                                grad_f.at(n, d, i, j) += g * inv;
                    } else {
                        const std::size_t ij = argmax_[(n * grad_parts.c + p) * grad_parts.h + d];
                        grad_f.at(n, d, ij / fw, ij % fw) += g;
                    }
                }
            }
        return grad_f;
    }

    std::size_t window() const { return window_; }

  private:
    std::pair<std::size_t, std::size_t> clip(std::size_t center, std::size_t extent) const {
        const std::size_t half = window_ / 2;
        const std::size_t lo = center > half ? center - half : 0;
        const std::size_t hi = std::min(center + half + 1, extent);
        return {lo, hi};
    }

    std::size_t window_;
    PoolMode mode_;
    std::vector<std::vector<GridLoc>> cached_locations_;
    std::array<std::size_t, 4> cached_shape_{};
    std::vector<std::size_t> argmax_;
    bool has_forward_ = false;
};

/// Full bilinear pooling: sum over spatial cells of the outer product of
/// the feature vector with itself, then signed square root and L2
/// normalization. Output shape (N, D*D, 1, 1).
template <class T>
Tensor4<T> bilinear_pool(const Tensor4<T>& features) {
    features.require_finite("bilinear_pool input");
    const std::size_t d = features.c;
    Tensor4<T> out(features.n, d * d, 1, 1);
    for (std::size_t n = 0; n < features.n; ++n) {
        for (std::size_t i = 0; i < features.h; ++i)
            for (std::size_t j = 0; j < features.w; ++j)
                for (std::size_t a = 0; a < d; ++a) {
                    const T fa = features.at(n, a, i, j);
                    for (std::size_t b = 0; b < d; ++b)
                        out.at(n, a * d + b, 0, 0) += fa * features.at(n, b, i, j);
                }
        T norm = T(0);
        for (std::size_t k = 0; k < d * d; ++k) {
            T& v = out.at(n, k, 0, 0);
            v = v >= T(0) ? std::sqrt(v) : -std::sqrt(-v);
            norm += v * v;
        }
        if (norm > T(0)) {
            const T inv = T(1) / std::sqrt(norm);
            for (std::size_t k = 0; k < d * d; ++k) out.at(n, k, 0, 0) *= inv;
        }
    }
    return out;
}

/// Random Maclaurin projection: phi(x) = (1/sqrt(d)) (W1 x) .* (W2 x) with
/// fixed +-1 sign matrices. <phi(x), phi(y)> estimates <x, y>^2.
class RandomMaclaurinProjection {
  public:
    RandomMaclaurinProjection(std::size_t out_dim, std::size_t in_dim, std::uint64_t seed)
        : d_(out_dim), in_dim_(in_dim), seed_(seed) {
        Rng rng(seed);
        w1_.resize(d_ * in_dim_);
        w2_.resize(d_ * in_dim_);
        for (auto& v : w1_) v = static_cast<std::int8_t>(rng.sign());
        for (auto& v : w2_) v = static_cast<std::int8_t>(rng.sign());
    }

    std::size_t out_dim() const { return d_; }
    std::size_t in_dim() const { return in_dim_; }
    std::uint64_t seed() const { return seed_; }

    template <class T>
    std::vector<T> project(const std::vector<T>& x, const std::vector<std::int8_t>& w) const {
        std::vector<T> out(d_, T(0));
        for (std::size_t k = 0; k < d_; ++k) {
            T acc = T(0);
            const std::int8_t* row = &w[k * in_dim_];
            for (std::size_t i = 0; i < in_dim_; ++i)
                acc += row[i] > 0 ? x[i] : -x[i];
            out[k] = acc;
        }
        return out;
    }

    const std::vector<std::int8_t>& w1() const { return w1_; }
    const std::vector<std::int8_t>& w2() const { return w2_; }

  private:
    std::size_t d_, in_dim_;
    std::uint64_t seed_;
    std::vector<std::int8_t> w1_, w2_;
};

/// Compact bilinear feature with cached state for the analytic backward.
template <class T>
class CompactBilinear {
  public:
    explicit CompactBilinear(const RandomMaclaurinProjection* proj) : proj_(proj) {}

    /// (N, D, 1, 1) -> (N, d, 1, 1)
    Tensor4<T> forward(const Tensor4<T>& x) {
        if (x.c != proj_->in_dim())
            throw ConfigError("compact bilinear: input dim " + std::to_string(x.c) +
                              " != " + std::to_string(proj_->in_dim()));
        x.require_finite("compact bilinear input");
        const std::size_t d = proj_->out_dim();
        const T scale = T(1) / std::sqrt(static_cast<T>(d));
        cached_x_ = x;
        u_.assign(x.n, {});
        v_.assign(x.n, {});
        Tensor4<T> out(x.n, d, 1, 1);
        for (std::size_t n = 0; n < x.n; ++n) {
            std::vector<T> xv(x.data.begin() + n * x.c, x.data.begin() + (n + 1) * x.c);
            u_[n] = proj_->project(xv, proj_->w1());
            v_[n] = proj_->project(xv, proj_->w2());
            for (std::size_t k = 0; k < d; ++k)
                out.at(n, k, 0, 0) = scale * u_[n][k] * v_[n][k];
        }
        has_forward_ = true;
        return out;
    }

    Tensor4<T> backward(const Tensor4<T>& grad_out) {
        if (!has_forward_) throw UsageError("compact bilinear backward before forward");
        const std::size_t d = proj_->out_dim();
        const std::size_t in_dim = proj_->in_dim();
        const T scale = T(1) / std::sqrt(static_cast<T>(d));
        Tensor4<T> grad_x(cached_x_.n, in_dim, 1, 1);
        for (std::size_t n = 0; n < cached_x_.n; ++n)
            for (std::size_t k = 0; k < d; ++k) {
                const T g = grad_out.at(n, k, 0, 0) * scale;
                const std::int8_t* r1 = &proj_->w1()[k * in_dim];
                const std::int8_t* r2 = &proj_->w2()[k * in_dim];
                for (std::size_t i = 0; i < in_dim; ++i) {
                    const T s1 = r1[i] > 0 ? T(1) : T(-1);
                    const T s2 = r2[i] > 0 ? T(1) : T(-1);
                    grad_x.at(n, i, 0, 0) += g * (v_[n][k] * s1 + u_[n][k] * s2);
                }
            }
        return grad_x;
    }

  private:
    const RandomMaclaurinProjection* proj_;
    Tensor4<T> cached_x_;
    std::vector<std::vector<T>> u_, v_;
    bool has_forward_ = false;
};

} // namespace partpool
