#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "partpool/backbone.hpp"
#include "partpool/part_layers.hpp"

namespace partpool {

struct ModelConfig {
    BackboneConfig backbone;
    std::size_t num_classes = 10;
    std::size_t window = 3;
    PoolMode pool_mode = PoolMode::Mean;
    bool compact_bilinear = false;
    std::size_t cb_dim = 5120;
    std::uint64_t cb_seed = 1;
    // Ablation: classify from the global-average-pooled holistic vector
    // alone, skipping part pooling.
    bool holistic_only = false;

    std::size_t holistic_dim() const {
        return compact_bilinear ? cb_dim : backbone.feature_channels();
    }
    std::size_t joint_dim() const {
        if (holistic_only) return holistic_dim();
        return backbone.num_parts * backbone.feature_channels() + holistic_dim();
    }

    // Flat numeric encoding, embedded in checkpoints so that evaluation can
    // rebuild the exact architecture.
    std::vector<float> encode() const {
        std::vector<float> v;
        v.push_back(static_cast<float>(backbone.input_size));
        v.push_back(static_cast<float>(backbone.channels.size()));
        for (std::size_t c : backbone.channels) v.push_back(static_cast<float>(c));
        v.push_back(static_cast<float>(backbone.num_parts));
        v.push_back(static_cast<float>(num_classes));
        v.push_back(static_cast<float>(window));
        v.push_back(pool_mode == PoolMode::Max ? 1.f : 0.f);
        v.push_back(compact_bilinear ? 1.f : 0.f);
        v.push_back(static_cast<float>(cb_dim));
        v.push_back(static_cast<float>(cb_seed));
        v.push_back(holistic_only ? 1.f : 0.f);
        return v;
    }

    static ModelConfig decode(const std::vector<float>& v) {
        ModelConfig cfg;
        std::size_t i = 0;
        auto next = [&]() {
            if (i >= v.size()) throw DataError("truncated model config in checkpoint");
            return v[i++];
        };
        cfg.backbone.input_size = static_cast<std::size_t>(next());
        const std::size_t nblocks = static_cast<std::size_t>(next());
        cfg.backbone.channels.clear();
        for (std::size_t b = 0; b < nblocks; ++b)
            cfg.backbone.channels.push_back(static_cast<std::size_t>(next()));
        cfg.backbone.num_parts = static_cast<std::size_t>(next());
        cfg.num_classes = static_cast<std::size_t>(next());
        cfg.window = static_cast<std::size_t>(next());
        cfg.pool_mode = next() > 0.5f ? PoolMode::Max : PoolMode::Mean;
        cfg.compact_bilinear = next() > 0.5f;
        cfg.cb_dim = static_cast<std::size_t>(next());
        cfg.cb_seed = static_cast<std::uint64_t>(next());
        cfg.holistic_only = next() > 0.5f;
        return cfg;
    }
};

/// Global average pooling (N, D, H, W) -> (N, D, 1, 1).
template <class T>
Tensor4<T> gap_forward(const Tensor4<T>& f) {
    Tensor4<T> out(f.n, f.c, 1, 1);
    const T inv = T(1) / static_cast<T>(f.h * f.w);
    for (std::size_t n = 0; n < f.n; ++n)
        for (std::size_t c = 0; c < f.c; ++c) {
            T acc = T(0);
            for (std::size_t i = 0; i < f.h; ++i)
                for (std::size_t j = 0; j < f.w; ++j) acc += f.at(n, c, i, j);
            out.at(n, c, 0, 0) = acc * inv;
        }
    return out;
}

template <class T>
void gap_backward_into(const Tensor4<T>& grad_out, Tensor4<T>& grad_f) {
    const T inv = T(1) / static_cast<T>(grad_f.h * grad_f.w);
    for (std::size_t n = 0; n < grad_f.n; ++n)
        for (std::size_t c = 0; c < grad_f.c; ++c) {
            const T g = grad_out.at(n, c, 0, 0) * inv;
            for (std::size_t i = 0; i < grad_f.h; ++i)
                for (std::size_t j = 0; j < grad_f.w; ++j) grad_f.at(n, c, i, j) += g;
        }
}

/// The complete network: shared backbone, keypoint scoring head, part
/// pooling, holistic branch and the joint classifier.
template <class T>
class Model {
  public:
    Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), transfer_(cfg.window, cfg.pool_mode) {
        cfg.backbone.validate();
        Rng rng(seed);
        backbone_ = Backbone<T>(cfg.backbone, rng);
        head_ = KeypointHead<T>(cfg.backbone.num_parts, cfg.backbone.feature_channels(), rng);
        if (cfg.compact_bilinear) {
            proj_ = std::make_shared<RandomMaclaurinProjection>(
                cfg.cb_dim, cfg.backbone.feature_channels(), cfg.cb_seed);
        }
        classifier_ = Affine<T>(cfg.num_classes, cfg.joint_dim(), rng);
    }

    const ModelConfig& config() const { return cfg_; }
    Backbone<T>& backbone() { return backbone_; }
    KeypointHead<T>& head() { return head_; }
    Affine<T>& classifier() { return classifier_; }
    const RandomMaclaurinProjection* projection() const { return proj_.get(); }

    FeatureMap<T> features(const Tensor4<T>& images) { return backbone_.forward(images); }
    Tensor4<T> kp_logits(const FeatureMap<T>& f) { return head_.forward(f); }

    /// Builds the joint representation from an already-computed feature
    /// map. `locations` may come from ground truth or from the decoded
    /// keypoint head; ignored when the model is holistic-only.
    Tensor4<T> stack_forward(const FeatureMap<T>& f,
                             const std::vector<std::vector<GridLoc>>& locations) {
        Tensor4<T> holistic = gap_forward(f.values);
        if (cfg_.compact_bilinear) {
            cb_ = CompactBilinear<T>(proj_.get());
            holistic = cb_->forward(holistic);
        }
        if (cfg_.holistic_only) return holistic;
        Tensor4<T> parts = transfer_.forward(f, locations);
        const std::size_t pd = parts.c * parts.h; // P * D
        Tensor4<T> stack(f.values.n, pd + holistic.c, 1, 1);
        for (std::size_t n = 0; n < stack.n; ++n) {
            for (std::size_t k = 0; k < pd; ++k)
                stack.data[n * stack.c + k] = parts.data[n * pd + k];
            for (std::size_t k = 0; k < holistic.c; ++k)
                stack.data[n * stack.c + pd + k] = holistic.data[n * holistic.c + k];
        }
        return stack;
    }

    /// Backward through the stack: returns the feature-map gradient.
    Tensor4<T> stack_backward(const Tensor4<T>& grad_stack, const FeatureMap<T>& f) {
        Tensor4<T> grad_f(f.values.n, f.values.c, f.values.h, f.values.w);
        Tensor4<T> grad_holistic(f.values.n, cfg_.holistic_dim(), 1, 1);
        if (cfg_.holistic_only) {
            grad_holistic = grad_stack;
        } else {
            const std::size_t pd = cfg_.backbone.num_parts * cfg_.backbone.feature_channels();
            Tensor4<T> grad_parts(f.values.n, cfg_.backbone.num_parts,
                                  cfg_.backbone.feature_channels(), 1);
            for (std::size_t n = 0; n < grad_stack.n; ++n) {
                for (std::size_t k = 0; k < pd; ++k)
                    grad_parts.data[n * pd + k] = grad_stack.data[n * grad_stack.c + k];
                for (std::size_t k = 0; k < grad_holistic.c; ++k)
                    grad_holistic.data[n * grad_holistic.c + k] =
                        grad_stack.data[n * grad_stack.c + pd + k];
            }
            grad_f = transfer_.backward(grad_parts);
        }
        Tensor4<T> gh = grad_holistic;
        if (cfg_.compact_bilinear) gh = cb_->backward(grad_holistic);
        gap_backward_into(gh, grad_f);
        return grad_f;
    }

    /// Classification loss for a batch; returns loss and the feature-map
    /// gradient (classifier gradients accumulate internally).
    std::pair<T, Tensor4<T>> classification_loss(const FeatureMap<T>& f,
                                                 const std::vector<std::vector<GridLoc>>& locations,
                                                 const std::vector<std::size_t>& labels) {
        Tensor4<T> stack = stack_forward(f, locations);
        Tensor4<T> logits = classifier_.forward(stack);
        auto [loss, grad_logits] = softmax_cross_entropy(logits, labels);
        Tensor4<T> grad_stack = classifier_.backward(grad_logits);
        return {loss, stack_backward(grad_stack, f)};
    }

    void zero_grad() {
        backbone_.zero_grad();
        head_.zero_grad();
        classifier_.zero_grad();
    }

    std::vector<ParamView<T>> params() {
        std::vector<ParamView<T>> out;
        backbone_.params(out);
        head_.params(out);
        classifier_.params("classifier.fc", "classifier", out);
        return out;
    }

    std::map<std::string, Tensor4<float>> state() {
        std::map<std::string, Tensor4<float>> s;
        for (auto& p : params()) s[p.name] = p.value->template cast<float>();
        return s;
    }

    void load_state(const std::map<std::string, Tensor4<float>>& s) {
        for (auto& p : params()) {
            auto it = s.find(p.name);
            if (it == s.end()) throw DataError("checkpoint missing parameter " + p.name);
            if (it->second.n != p.value->n || it->second.c != p.value->c ||
                it->second.h != p.value->h || it->second.w != p.value->w)
                throw ConfigError("checkpoint shape mismatch for " + p.name);
            *p.value = it->second.template cast<T>();
        }
    }

  private:
    ModelConfig cfg_;
    Backbone<T> backbone_;
    KeypointHead<T> head_;
    CoordinateTransfer<T> transfer_;
    std::shared_ptr<RandomMaclaurinProjection> proj_;
    std::optional<CompactBilinear<T>> cb_;
    Affine<T> classifier_;
};

} // namespace partpool
