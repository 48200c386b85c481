#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "partpool/errors.hpp"
#include "partpool/synth.hpp"
#include "partpool/training.hpp"

namespace partpool {

inline nlohmann::json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    try {
        nlohmann::json j;
        is >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed JSON in " + path + ": " + e.what());
    }
}

inline GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
    GeneratorConfig cfg;
    try {
        cfg.seed = j.value("seed", cfg.seed);
        cfg.image_size = j.value("image_size", cfg.image_size);
        cfg.num_classes = j.value("num_classes", cfg.num_classes);
        cfg.num_parts = j.value("num_parts", cfg.num_parts);
        cfg.train_per_class = j.value("train_per_class", cfg.train_per_class);
        cfg.test_per_class = j.value("test_per_class", cfg.test_per_class);
        cfg.max_rotation = j.value("max_rotation", cfg.max_rotation);
        cfg.max_translation_frac = j.value("max_translation_frac", cfg.max_translation_frac);
        cfg.min_scale = j.value("min_scale", cfg.min_scale);
        cfg.max_scale = j.value("max_scale", cfg.max_scale);
        cfg.occlusion_prob = j.value("occlusion_prob", cfg.occlusion_prob);
        const std::string mode = j.value("palette_mode", std::string("shared"));
        if (mode == "shared") cfg.palette_mode = PaletteMode::SharedPermuted;
        else if (mode == "disjoint") cfg.palette_mode = PaletteMode::Disjoint;
        else throw ConfigError("unknown palette_mode: " + mode);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad generator config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline Stage stage_from_json(const nlohmann::json& j) {
    Stage s;
    try {
        s.name = j.at("name").get<std::string>();
        s.trainable = j.value("trainable", std::vector<std::string>{});
        s.learning_rate = j.at("lr").get<double>();
        s.epochs = j.at("epochs").get<std::size_t>();
        const std::string loss = j.value("loss", std::string("keypoint"));
        if (loss == "keypoint") s.loss = StageLoss::Keypoint;
        else if (loss == "classification") s.loss = StageLoss::Classification;
        else if (loss == "joint") s.loss = StageLoss::Joint;
        else throw ConfigError("unknown stage loss: " + loss);
        const std::string pooling = j.value("pooling", std::string("gt"));
        if (pooling == "gt") s.pooling = PoolingSource::GroundTruth;
        else if (pooling == "predicted") s.pooling = PoolingSource::Predicted;
        else throw ConfigError("unknown pooling source: " + pooling);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad stage config: ") + e.what());
    }
    if (s.learning_rate < 0) throw ConfigError("stage learning rate must be >= 0");
    return s;
}

struct TrainSetup {
    TrainingConfig training;
    ModelConfig model; // num_parts / num_classes filled in from the dataset
};

inline TrainSetup train_setup_from_json(const nlohmann::json& j) {
    TrainSetup out;
    try {
        out.training.seed = j.value("seed", std::uint64_t(1));
        out.training.batch_size = j.value("batch_size", std::size_t(8));
        out.training.lambda = j.value("lambda", 1.0);
        if (out.training.batch_size == 0) throw ConfigError("batch_size must be >= 1");
        if (out.training.lambda < 0) throw ConfigError("lambda must be >= 0");

        out.model.window = j.value("window", std::size_t(3));
        const std::string pool = j.value("pool_mode", std::string("mean"));
        if (pool == "mean") out.model.pool_mode = PoolMode::Mean;
        else if (pool == "max") out.model.pool_mode = PoolMode::Max;
        else throw ConfigError("unknown pool_mode: " + pool);
        out.model.holistic_only = j.value("holistic_only", false);
        if (j.contains("compact_bilinear")) {
            const auto& cb = j.at("compact_bilinear");
            out.model.compact_bilinear = cb.value("enabled", false);
            out.model.cb_dim = cb.value("dim", std::size_t(5120));
            out.model.cb_seed = cb.value("seed", std::uint64_t(1));
        }
        if (j.contains("backbone")) {
            const auto& bb = j.at("backbone");
            out.model.backbone.input_size =
                bb.value("input_size", out.model.backbone.input_size);
            out.model.backbone.channels =
                bb.value("channels", out.model.backbone.channels);
        }
        const double base_lr = j.value("base_lr", 0.5);
        if (j.contains("stages")) {
            out.training.stages.clear();
            for (const auto& sj : j.at("stages"))
                out.training.stages.push_back(stage_from_json(sj));
        } else {
            out.training.stages = default_schedule(base_lr);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad training config: ") + e.what());
    }
    return out;
}

} // namespace partpool
