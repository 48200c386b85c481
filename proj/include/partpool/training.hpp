#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "partpool/model.hpp"
#include "partpool/synth.hpp"

namespace partpool {

enum class StageLoss { Keypoint, Classification, Joint };
enum class PoolingSource { GroundTruth, Predicted };

struct Stage {
    std::string name;
    std::vector<std::string> trainable; // parameter groups; empty = freeze all
    double learning_rate = 0.0;
    std::size_t epochs = 0;
    StageLoss loss = StageLoss::Keypoint;
    PoolingSource pooling = PoolingSource::GroundTruth;
};

struct TrainingConfig {
    std::uint64_t seed = 1;
    std::size_t batch_size = 8;
    double lambda = 1.0;
    std::vector<Stage> stages;

    // Stops a stage early once the relative loss improvement over a
    // 3-epoch window drops below this.
    double convergence_rel_improvement = 1e-3;
    std::size_t convergence_window = 3;
};

/// The 4-stage schedule: score head on frozen features, localization
/// fine-tuning at lr/10, classifiers on ground-truth pooling, then joint
/// fine-tuning of everything at a further lr/10.
inline std::vector<Stage> default_schedule(double base_lr, std::size_t kp_epochs = 20,
                                           std::size_t cls_epochs = 30,
                                           std::size_t joint_epochs = 8) {
    return {
        {"kp-head", {"kphead"}, base_lr, kp_epochs, StageLoss::Keypoint,
         PoolingSource::GroundTruth},
        {"kp-finetune", {"kphead", "backbone"}, base_lr / 10.0, kp_epochs,
         StageLoss::Keypoint, PoolingSource::GroundTruth},
        {"classifier", {"classifier"}, base_lr, cls_epochs, StageLoss::Classification,
         PoolingSource::GroundTruth},
        {"joint", {"backbone", "kphead", "classifier"}, base_lr / 100.0, joint_epochs,
         StageLoss::Joint, PoolingSource::GroundTruth},
    };
}

struct LogRow {
    std::string stage;
    std::size_t epoch = 0;
    double loss_kp = 0.0;
    double loss_cls = 0.0;
    double loss_total = 0.0;
};

/// Grid-cell pooling locations for one sample. Train mode reuses the
/// target-encoding cells; test mode takes the keypoint head's argmax.
template <class T>
std::vector<GridLoc> pooled_locations(const Sample& sample, PoolingSource mode,
                                      Model<T>& model) {
    const BackboneConfig& bc = model.config().backbone;
    if (mode == PoolingSource::GroundTruth) {
        const auto batch = encode_targets<T>({sample.keypoints}, bc.num_parts,
                                             bc.grid_size(), bc.grid_size(), bc.stride());
        return batch.cells[0];
    }
    Tensor4<T> img = images_to_tensor({sample}, 0, 1).template cast<T>();
    FeatureMap<T> f = model.features(img);
    Tensor4<T> logits = model.kp_logits(f);
    return argmax_cells(logits, 0);
}

template <class T>
struct BatchLoss {
    T kp = T(0);
    T cls = T(0);
    T total = T(0);
};

namespace detail {

template <class T>
std::vector<std::vector<GridLoc>> batch_locations(const FeatureMap<T>& f,
                                                  const HeatmapBatch<T>& targets,
                                                  PoolingSource pooling, Model<T>& model) {
    if (pooling == PoolingSource::GroundTruth) return targets.cells;
    Tensor4<T> logits = model.kp_logits(f);
    std::vector<std::vector<GridLoc>> out(logits.n);
    for (std::size_t n = 0; n < logits.n; ++n) out[n] = argmax_cells(logits, n);
    return out;
}

} // namespace detail

/// Forward + backward for one batch under the given stage loss.
/// Gradients accumulate into the model; `into_backbone` controls whether
/// the feature-map gradient is propagated through the backbone.
template <class T>
BatchLoss<T> batch_backward(Model<T>& model, FeatureMap<T>& features,
                            const std::vector<std::vector<KeypointAnnotation>>& annotations,
                            const std::vector<std::size_t>& labels, StageLoss loss_kind,
                            PoolingSource pooling, T lambda, bool into_backbone) {
    const BackboneConfig& bc = model.config().backbone;
    const auto targets = encode_targets<T>(annotations, bc.num_parts, bc.grid_size(),
                                           bc.grid_size(), bc.stride());
    BatchLoss<T> out;
    Tensor4<T> grad_f(features.values.n, features.values.c, features.values.h,
                      features.values.w);
    bool have_grad_f = false;

    if (loss_kind == StageLoss::Classification || loss_kind == StageLoss::Joint) {
        const auto locations = detail::batch_locations(features, targets, pooling, model);
        auto [cls_loss, g] = model.classification_loss(features, locations, labels);
        out.cls = cls_loss;
        grad_f = g;
        have_grad_f = true;
    }
    if (loss_kind == StageLoss::Keypoint || loss_kind == StageLoss::Joint) {
        const T scale = loss_kind == StageLoss::Joint ? lambda : T(1);
        Tensor4<T> logits = model.kp_logits(features);
        auto [kp_loss, grad_logits] = heatmap_loss(logits, targets.targets);
        out.kp = kp_loss;
        if (scale != T(1))
            for (T& v : grad_logits.data) v *= scale;
        Tensor4<T> g = model.head().backward(grad_logits);
        if (have_grad_f) {
            for (std::size_t i = 0; i < grad_f.size(); ++i) grad_f.data[i] += g.data[i];
        } else {
            grad_f = std::move(g);
            have_grad_f = true;
        }
    }
    switch (loss_kind) {
        case StageLoss::Keypoint: out.total = out.kp; break;
        case StageLoss::Classification: out.total = out.cls; break;
        case StageLoss::Joint: out.total = out.cls + lambda * out.kp; break;
    }
    if (into_backbone && have_grad_f) model.backbone().backward(grad_f);
    return out;
}

/// Joint loss (classification + lambda * keypoint) for a batch,
/// accumulating all gradients. Exposed for gradient checking.
template <class T>
BatchLoss<T> joint_loss(Model<T>& model, const Tensor4<T>& images,
                        const std::vector<std::vector<KeypointAnnotation>>& annotations,
                        const std::vector<std::size_t>& labels, T lambda,
                        PoolingSource pooling = PoolingSource::GroundTruth) {
    if (lambda < T(0)) throw UsageError("joint_loss: lambda must be >= 0");
    FeatureMap<T> f = model.features(images);
    return batch_backward(model, f, annotations, labels, StageLoss::Joint, pooling, lambda,
                          true);
}

/// Runs one stage of the schedule over the training set. Only the stage's
/// trainable groups change. Returns per-epoch log rows.
template <class T>
std::vector<LogRow> run_stage(Model<T>& model, const std::vector<Sample>& data,
                              const Stage& stage, const TrainingConfig& cfg, Rng& rng) {
    for (const auto& g : stage.trainable) {
        bool known = false;
        for (const auto& p : model.params())
            if (p.group == g) known = true;
        if (!known) throw ConfigError("unknown parameter group '" + g + "' in stage " +
                                      stage.name);
    }
    const bool backbone_trainable =
        std::find(stage.trainable.begin(), stage.trainable.end(), "backbone") !=
        stage.trainable.end();
    // With a frozen backbone the shared features are constant across the
    // stage; compute them once.
    std::vector<Tensor4<T>> feature_cache;
    const std::size_t stride = model.config().backbone.stride();
    if (!backbone_trainable && !stage.trainable.empty()) {
        feature_cache.reserve(data.size());
        const std::size_t chunk = std::max<std::size_t>(cfg.batch_size, 1);
        for (std::size_t i = 0; i < data.size(); i += chunk) {
            const std::size_t count = std::min(chunk, data.size() - i);
            Tensor4<T> imgs = images_to_tensor(data, i, count).template cast<T>();
            FeatureMap<T> f = model.features(imgs);
            for (std::size_t n = 0; n < count; ++n) {
                Tensor4<T> one(1, f.values.c, f.values.h, f.values.w);
                std::copy_n(&f.values.data[n * f.values.c * f.values.h * f.values.w],
                            one.size(), one.data.begin());
                feature_cache.push_back(std::move(one));
            }
        }
    }

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<LogRow> log;
    std::vector<double> epoch_losses;
    for (std::size_t epoch = 0; epoch < stage.epochs; ++epoch) {
        // Seeded Fisher-Yates shuffle.
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(i)]);
        double sum_kp = 0, sum_cls = 0, sum_total = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - start);
            std::vector<std::vector<KeypointAnnotation>> anns(count);
            std::vector<std::size_t> labels(count);
            FeatureMap<T> features;
            if (!feature_cache.empty()) {
                const Tensor4<T>& probe = feature_cache[0];
                features.values = Tensor4<T>(count, probe.c, probe.h, probe.w);
                features.stride = stride;
                for (std::size_t n = 0; n < count; ++n) {
                    const Tensor4<T>& src = feature_cache[order[start + n]];
                    std::copy(src.data.begin(), src.data.end(),
                              features.values.data.begin() + n * src.size());
                }
            } else {
                Tensor4<T> imgs(count, 3, model.config().backbone.input_size,
                                model.config().backbone.input_size);
                for (std::size_t n = 0; n < count; ++n) {
                    Tensor4<T> one =
                        images_to_tensor(data, order[start + n], 1).template cast<T>();
                    std::copy(one.data.begin(), one.data.end(),
                              imgs.data.begin() + n * one.size());
                }
                features = model.features(imgs);
            }
            for (std::size_t n = 0; n < count; ++n) {
                anns[n] = data[order[start + n]].keypoints;
                labels[n] = data[order[start + n]].class_label;
            }
            BatchLoss<T> l =
                batch_backward(model, features, anns, labels, stage.loss, stage.pooling,
                               static_cast<T>(cfg.lambda),
                               backbone_trainable && !stage.trainable.empty());
            if (!stage.trainable.empty()) {
                auto params = model.params();
                sgd_step(params, stage.trainable, static_cast<T>(stage.learning_rate));
            }
            model.zero_grad();
            sum_kp += static_cast<double>(l.kp);
            sum_cls += static_cast<double>(l.cls);
            sum_total += static_cast<double>(l.total);
            ++batches;
        }
        LogRow row{stage.name, epoch, sum_kp / batches, sum_cls / batches,
                   sum_total / batches};
        log.push_back(row);
        epoch_losses.push_back(row.loss_total);
        const std::size_t w = cfg.convergence_window;
        if (epoch_losses.size() > w) {
            const double prev = epoch_losses[epoch_losses.size() - 1 - w];
            const double cur = epoch_losses.back();
            const double rel = (prev - cur) / std::max(std::abs(prev), 1e-12);
            if (rel < cfg.convergence_rel_improvement) break;
        }
    }
    return log;
}

/// Runs the full schedule; one RNG stream drives shuffling across stages.
template <class T>
std::vector<LogRow> train_schedule(Model<T>& model, const std::vector<Sample>& data,
                                   const TrainingConfig& cfg) {
    Rng rng(Rng::mix(cfg.seed, 0x7141));
    std::vector<LogRow> log;
    for (const auto& stage : cfg.stages) {
        auto rows = run_stage(model, data, stage, cfg, rng);
        log.insert(log.end(), rows.begin(), rows.end());
    }
    return log;
}

/// Predictions over a split: decoded keypoints and class labels.
template <class T>
struct SplitPredictions {
    std::vector<std::vector<DecodedKeypoint>> keypoints; // per image, per part
    std::vector<std::size_t> labels;
};

template <class T>
SplitPredictions<T> predict_split(Model<T>& model, const std::vector<Sample>& samples,
                                  std::size_t batch_size = 16) {
    SplitPredictions<T> out;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const std::size_t count = std::min(batch_size, samples.size() - start);
        Tensor4<T> imgs = images_to_tensor(samples, start, count).template cast<T>();
        FeatureMap<T> f = model.features(imgs);
        Tensor4<T> logits = model.kp_logits(f);
        auto decoded = decode_keypoints(logits, f.stride);
        std::vector<std::vector<GridLoc>> locations(count);
        for (std::size_t n = 0; n < count; ++n) locations[n] = argmax_cells(logits, n);
        Tensor4<T> stack = model.stack_forward(f, locations);
        Tensor4<T> cls_logits = model.classifier().forward(stack);
        for (std::size_t n = 0; n < count; ++n) {
            out.keypoints.push_back(std::move(decoded[n]));
            std::size_t best = 0;
            for (std::size_t k = 1; k < cls_logits.c; ++k)
                if (cls_logits.at(n, k, 0, 0) > cls_logits.at(n, best, 0, 0)) best = k;
            out.labels.push_back(best);
        }
    }
    return out;
}

inline void write_training_log(const std::string& path, const std::vector<LogRow>& log) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write training log: " + path);
    os << "stage,epoch,loss_kp,loss_cls,loss_total\n";
    char buf[64];
    for (const auto& r : log) {
        os << r.stage << "," << r.epoch << ",";
        std::snprintf(buf, sizeof buf, "%.8g,%.8g,%.8g", r.loss_kp, r.loss_cls,
                      r.loss_total);
        os << buf << "\n";
    }
}

} // namespace partpool
