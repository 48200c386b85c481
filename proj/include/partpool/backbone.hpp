#pragma once

#include <cstddef>
#include <vector>

#include "partpool/layers.hpp"
#include "partpool/types.hpp"

namespace partpool {

/// Architecture of the shared feature extractor: `blocks` repetitions of
/// [conv3x3-ReLU x2, maxpool2x2]. Output stride is 2^blocks.
struct BackboneConfig {
    std::size_t input_size = 64;
    std::vector<std::size_t> channels = {16, 32, 64};
    std::size_t num_parts = 5;

    std::size_t blocks() const { return channels.size(); }
    std::size_t stride() const { return std::size_t(1) << blocks(); }
    std::size_t feature_channels() const { return channels.back(); }

    std::size_t grid_size() const {
        const std::size_t s = stride();
        if (input_size % s != 0)
            throw ConfigError("input_size must be divisible by 2^blocks");
        return input_size / s;
    }

    void validate() const {
        if (channels.empty()) throw ConfigError("backbone needs at least one block");
        if (num_parts == 0) throw ConfigError("num_parts must be >= 1");
        (void)grid_size();
    }
};

/// Shared spatial feature map plus the grid-to-pixel mapping.
/// Cell (i, j) maps to pixel center x = (j + 0.5)*stride, y = (i + 0.5)*stride.
template <class T>
struct FeatureMap {
    Tensor4<T> values; // (N, D, H', W')
    std::size_t stride = 1;

    double cell_x(std::size_t j) const { return (static_cast<double>(j) + 0.5) * stride; }
    double cell_y(std::size_t i) const { return (static_cast<double>(i) + 0.5) * stride; }
};

template <class T>
class Backbone {
  public:
    Backbone() = default;
    Backbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        std::size_t cin = 3;
        for (std::size_t c : cfg.channels) {
            conv_a_.emplace_back(c, cin, 3, 1, 1, rng);
            conv_b_.emplace_back(c, c, 3, 1, 1, rng);
            cin = c;
        }
        relu_a_.resize(cfg.channels.size());
        relu_b_.resize(cfg.channels.size());
        pool_.resize(cfg.channels.size());
    }

    FeatureMap<T> forward(const Tensor4<T>& images) {
        if (images.h != cfg_.input_size || images.w != cfg_.input_size || images.c != 3)
            throw ConfigError("backbone: expected Nx3x" + std::to_string(cfg_.input_size) +
                              "x" + std::to_string(cfg_.input_size) + " input, got " +
                              images.shape_str());
        Tensor4<T> x = images;
        for (std::size_t b = 0; b < cfg_.blocks(); ++b) {
            x = relu_a_[b].forward(conv_a_[b].forward(x));
            x = relu_b_[b].forward(conv_b_[b].forward(x));
            x = pool_[b].forward(x);
        }
        return {std::move(x), cfg_.stride()};
    }

    Tensor4<T> backward(const Tensor4<T>& grad_features) {
        Tensor4<T> g = grad_features;
        for (std::size_t b = cfg_.blocks(); b-- > 0;) {
            g = pool_[b].backward(g);
            g = conv_b_[b].backward(relu_b_[b].backward(g));
            g = conv_a_[b].backward(relu_a_[b].backward(g));
        }
        return g;
    }

    void zero_grad() {
        for (auto& c : conv_a_) c.zero_grad();
        for (auto& c : conv_b_) c.zero_grad();
    }

    void params(std::vector<ParamView<T>>& out) {
        for (std::size_t b = 0; b < conv_a_.size(); ++b) {
            const std::string p = "backbone.block" + std::to_string(b);
            conv_a_[b].params(p + ".conv0", "backbone", out);
            conv_b_[b].params(p + ".conv1", "backbone", out);
        }
    }

    const BackboneConfig& config() const { return cfg_; }

  private:
    BackboneConfig cfg_;
    std::vector<Conv2d<T>> conv_a_, conv_b_;
    std::vector<ReLU<T>> relu_a_, relu_b_;
    std::vector<MaxPool2x2<T>> pool_;
};

/// 1x1 convolution scoring one logit map per part.
template <class T>
class KeypointHead {
  public:
    KeypointHead() = default;
    KeypointHead(std::size_t num_parts, std::size_t feature_channels, Rng& rng)
        : conv_(num_parts, feature_channels, 1, 1, 0, rng) {}

    Tensor4<T> forward(const FeatureMap<T>& features) { return conv_.forward(features.values); }
    Tensor4<T> backward(const Tensor4<T>& grad_logits) { return conv_.backward(grad_logits); }
    void zero_grad() { conv_.zero_grad(); }
    void params(std::vector<ParamView<T>>& out) { conv_.params("kphead.conv", "kphead", out); }
    Conv2d<T>& conv() { return conv_; }

  private:
    Conv2d<T> conv_;
};

/// Per-part argmax cell of each logit map (row-major tie-break), mapped to
/// pixel coordinates via the cell-center rule. Score is sigmoid(max logit).
template <class T>
std::vector<std::vector<DecodedKeypoint>> decode_keypoints(const Tensor4<T>& logits,
                                                           std::size_t stride) {
    logits.require_finite("decode_keypoints input");
    std::vector<std::vector<DecodedKeypoint>> out(logits.n);
    for (std::size_t n = 0; n < logits.n; ++n) {
        out[n].reserve(logits.c);
        for (std::size_t p = 0; p < logits.c; ++p) {
            std::size_t bi = 0, bj = 0;
            T best = logits.at(n, p, 0, 0);
            for (std::size_t i = 0; i < logits.h; ++i)
                for (std::size_t j = 0; j < logits.w; ++j)
                    if (logits.at(n, p, i, j) > best) {
                        best = logits.at(n, p, i, j);
                        bi = i;
                        bj = j;
                    }
            out[n].push_back({p, (static_cast<double>(bj) + 0.5) * stride,
                              (static_cast<double>(bi) + 0.5) * stride,
                              static_cast<double>(sigmoid_scalar(best))});
        }
    }
    return out;
}

/// Grid cell of the per-part argmax, for pooling at test time.
template <class T>
std::vector<GridLoc> argmax_cells(const Tensor4<T>& logits, std::size_t image) {
    std::vector<GridLoc> out(logits.c);
    for (std::size_t p = 0; p < logits.c; ++p) {
        std::size_t bi = 0, bj = 0;
        T best = logits.at(image, p, 0, 0);
        for (std::size_t i = 0; i < logits.h; ++i)
            for (std::size_t j = 0; j < logits.w; ++j)
                if (logits.at(image, p, i, j) > best) {
                    best = logits.at(image, p, i, j);
                    bi = i;
                    bj = j;
                }
        out[p] = {bi, bj, true};
    }
    return out;
}

} // namespace partpool
