// partpool: synthetic-data generation, staged training, evaluation and
// visualization for the part-pooled fine-grained classifier.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <omp.h>

#include <CLI11.hpp>

#include "partpool/checkpoint.hpp"
#include "partpool/config_json.hpp"
#include "partpool/manifest.hpp"
#include "partpool/metrics.hpp"
#include "partpool/model.hpp"
#include "partpool/synth.hpp"
#include "partpool/training.hpp"

namespace pp = partpool;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw pp::ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

constexpr const char* kMetaKey = "meta.arch";

void save_model_checkpoint(const std::string& path, pp::Model<float>& model) {
    auto state = model.state();
    const std::vector<float> meta = model.config().encode();
    pp::Tensor4<float> meta_t(1, 1, 1, meta.size());
    meta_t.data = meta;
    state[kMetaKey] = std::move(meta_t);
    pp::save_checkpoint(path, state);
}

pp::Model<float> load_model_checkpoint(const std::string& path) {
    auto state = pp::load_checkpoint(path);
    auto it = state.find(kMetaKey);
    if (it == state.end()) throw pp::DataError("checkpoint has no architecture record");
    pp::ModelConfig cfg = pp::ModelConfig::decode(it->second.data);
    pp::Model<float> model(cfg, 0);
    model.load_state(state);
    return model;
}

pp::PartBoxRule default_box_rule(std::size_t num_parts) {
    pp::PartBoxRule rule;
    pp::PartBoxRule::Group front{"front", {}}, back{"back", {}};
    for (std::size_t p = 0; p < num_parts; ++p)
        ((p < (num_parts + 1) / 2) ? front : back).parts.push_back(p);
    if (!front.parts.empty()) rule.groups.push_back(front);
    if (!back.parts.empty()) rule.groups.push_back(back);
    return rule;
}

struct Rgb8 {
    std::uint8_t r, g, b;
};

Rgb8 part_color(std::size_t part, std::size_t num_parts) {
    // Fixed hue wheel per part index.
    const double h = 360.0 * part / std::max<std::size_t>(num_parts, 1);
    const double c = 1.0, x = 1.0 - std::abs(std::fmod(h / 60.0, 2.0) - 1.0);
    double r = 0, g = 0, b = 0;
    if (h < 60) { r = c; g = x; }
    else if (h < 120) { r = x; g = c; }
    else if (h < 180) { g = c; b = x; }
    else if (h < 240) { g = x; b = c; }
    else if (h < 300) { r = x; b = c; }
    else { r = c; b = x; }
    auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(v * 255.0)); };
    return {q(r), q(g), q(b)};
}

void draw_marker(pp::ImageU8& img, double x, double y, std::size_t x_offset, Rgb8 color) {
    const long cx = std::lround(x) + static_cast<long>(x_offset);
    const long cy = std::lround(y);
    for (long d = -2; d <= 2; ++d) {
        for (auto [px, py] : {std::pair<long, long>{cx + d, cy}, {cx, cy + d}}) {
            if (px < 0 || py < 0 || px >= static_cast<long>(img.width) ||
                py >= static_cast<long>(img.height))
                continue;
            img.at(static_cast<std::size_t>(py), static_cast<std::size_t>(px), 0) = color.r;
            img.at(static_cast<std::size_t>(py), static_cast<std::size_t>(px), 1) = color.g;
            img.at(static_cast<std::size_t>(py), static_cast<std::size_t>(px), 2) = color.b;
        }
    }
}

int cmd_generate(const std::string& config_path, const std::string& out_dir) {
    const std::string started = pp::timestamp_now();
    pp::GeneratorConfig cfg;
    std::uint64_t hash = 0;
    if (!config_path.empty()) {
        const std::string raw = read_file(config_path);
        hash = pp::fnv1a(raw);
        cfg = pp::generator_config_from_json(pp::load_json_file(config_path));
    }
    cfg.validate();
    pp::Dataset ds = pp::generate(cfg);
    std::filesystem::create_directories(out_dir);
    pp::save_dataset(out_dir, ds);
    pp::write_manifest(out_dir, "generate", hash, cfg.seed,
                       {out_dir + "/train.json", out_dir + "/test.json"}, started,
                       pp::timestamp_now());
    std::cout << "generated " << ds.train.size() << " train / " << ds.test.size()
              << " test samples in " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_dir) {
    const std::string started = pp::timestamp_now();
    std::uint64_t hash = 0;
    pp::TrainSetup setup;
    if (!config_path.empty()) {
        const std::string raw = read_file(config_path);
        hash = pp::fnv1a(raw);
        setup = pp::train_setup_from_json(pp::load_json_file(config_path));
    } else {
        setup.training.stages = pp::default_schedule(0.5);
    }
    pp::LoadedSplit train = pp::load_split(data_dir, "train");
    setup.model.backbone.num_parts = train.num_parts;
    setup.model.backbone.input_size = train.samples[0].image.width;
    setup.model.num_classes = train.num_classes;
    setup.model.backbone.validate();

    pp::Model<float> model(setup.model, setup.training.seed);
    auto log = pp::train_schedule(model, train.samples, setup.training);

    std::filesystem::create_directories(out_dir);
    const std::string ckpt = out_dir + "/model.ppool";
    const std::string log_path = out_dir + "/train_log.csv";
    save_model_checkpoint(ckpt, model);
    pp::write_training_log(log_path, log);
    pp::write_manifest(out_dir, "train", hash, setup.training.seed, {ckpt, log_path},
                       started, pp::timestamp_now());
    std::cout << "trained " << log.size() << " epochs total; checkpoint at " << ckpt << "\n";
    return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt_path,
             const std::string& out_dir, const std::string& split) {
    const std::string started = pp::timestamp_now();
    pp::Model<float> model = load_model_checkpoint(ckpt_path);
    pp::LoadedSplit data = pp::load_split(data_dir, split);
    if (data.num_parts != model.config().backbone.num_parts)
        throw pp::ConfigError("dataset has " + std::to_string(data.num_parts) +
                              " parts but checkpoint expects " +
                              std::to_string(model.config().backbone.num_parts));
    if (data.num_classes > model.config().num_classes)
        throw pp::ConfigError("dataset has more classes than the checkpoint");

    auto preds = pp::predict_split(model, data.samples);

    std::vector<std::vector<pp::PredictedKeypoint>> pred_kps;
    std::vector<std::vector<pp::KeypointAnnotation>> gt_kps;
    std::vector<pp::Box> boxes;
    std::vector<std::size_t> labels;
    const double img_w = data.samples[0].image.width;
    const double img_h = data.samples[0].image.height;
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        std::vector<pp::PredictedKeypoint> row(data.num_parts);
        for (const auto& kp : preds.keypoints[i]) row[kp.part] = {kp.x, kp.y, true};
        pred_kps.push_back(std::move(row));
        gt_kps.push_back(data.samples[i].keypoints);
        boxes.push_back(data.samples[i].object_box);
        labels.push_back(data.samples[i].class_label);
    }

    std::filesystem::create_directories(out_dir);
    const pp::PckConfig pck_cfg;
    pp::write_metric_csv(out_dir + "/pck.csv",
                         pp::pck(pred_kps, gt_kps, boxes, data.num_parts, pck_cfg),
                         {"pck on split " + split});

    const pp::PartBoxRule rule = default_box_rule(data.num_parts);
    std::vector<std::vector<std::optional<pp::Box>>> pred_boxes, gt_boxes;
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        pred_boxes.push_back(pp::part_boxes(pred_kps[i], rule, img_w, img_h));
        std::vector<pp::PredictedKeypoint> gt_row(data.num_parts);
        for (const auto& kp : gt_kps[i])
            gt_row[kp.part] = {kp.x, kp.y, kp.visible};
        gt_boxes.push_back(pp::part_boxes(gt_row, rule, img_w, img_h));
    }
    pp::write_metric_csv(out_dir + "/pcp.csv", pp::pcp(pred_boxes, gt_boxes, rule),
                         {"pcp on split " + split, rule.describe()});

    pp::MetricRow acc_row{"accuracy", 0.0, pp::accuracy(preds.labels, labels),
                          labels.size()};
    pp::write_metric_csv(out_dir + "/accuracy.csv", {acc_row},
                         {"classification accuracy on split " + split});

    pp::write_manifest(out_dir, "eval", pp::fnv1a(ckpt_path), 0,
                       {out_dir + "/pck.csv", out_dir + "/pcp.csv",
                        out_dir + "/accuracy.csv"},
                       started, pp::timestamp_now());
    std::cout << "accuracy " << acc_row.fraction << " on " << labels.size()
              << " samples; reports in " << out_dir << "\n";
    return 0;
}

int cmd_viz(const std::string& data_dir, const std::string& ckpt_path,
            const std::string& out_dir, std::size_t n, const std::string& split) {
    const std::string started = pp::timestamp_now();
    pp::Model<float> model = load_model_checkpoint(ckpt_path);
    pp::LoadedSplit data = pp::load_split(data_dir, split);
    if (n > data.samples.size())
        throw pp::ConfigError("--n exceeds split size " + std::to_string(data.samples.size()));
    std::filesystem::create_directories(out_dir);

    std::vector<std::string> outputs;
    for (std::size_t i = 0; i < n; ++i) {
        const pp::Sample& s = data.samples[i];
        pp::Tensor4<float> img = pp::images_to_tensor(data.samples, i, 1);
        auto f = model.features(img);
        auto logits = model.kp_logits(f);
        auto decoded = pp::decode_keypoints(logits, f.stride);

        for (std::size_t p = 0; p < logits.c; ++p) {
            pp::ImageU8 hm;
            hm.width = logits.w;
            hm.height = logits.h;
            hm.channels = 1;
            hm.pixels.resize(logits.h * logits.w);
            for (std::size_t y = 0; y < logits.h; ++y)
                for (std::size_t x = 0; x < logits.w; ++x)
                    hm.pixels[y * logits.w + x] = static_cast<std::uint8_t>(
                        std::lround(255.0 * pp::sigmoid_scalar(logits.at(0, p, y, x))));
            char name[64];
            std::snprintf(name, sizeof name, "%s/sample_%04zu_part%zu.pgm",
                          out_dir.c_str(), i, p);
            pp::write_pgm(name, hm);
            outputs.push_back(name);
        }

        // Side-by-side overlay: ground truth markers left, predictions right.
        pp::ImageU8 overlay;
        overlay.width = 2 * s.image.width;
        overlay.height = s.image.height;
        overlay.channels = 3;
        overlay.pixels.resize(overlay.width * overlay.height * 3);
        for (std::size_t y = 0; y < s.image.height; ++y)
            for (std::size_t x = 0; x < s.image.width; ++x)
                for (std::size_t c = 0; c < 3; ++c) {
                    overlay.at(y, x, c) = s.image.at(y, x, c);
                    overlay.at(y, x + s.image.width, c) = s.image.at(y, x, c);
                }
        for (const auto& kp : s.keypoints)
            if (kp.visible)
                draw_marker(overlay, kp.x, kp.y, 0, part_color(kp.part, data.num_parts));
        for (const auto& kp : decoded[0])
            draw_marker(overlay, kp.x, kp.y, s.image.width,
                        part_color(kp.part, data.num_parts));
        char name[64];
        std::snprintf(name, sizeof name, "%s/sample_%04zu_overlay.ppm", out_dir.c_str(), i);
        pp::write_ppm(name, overlay);
        outputs.push_back(name);
    }
    pp::write_manifest(out_dir, "viz", pp::fnv1a(ckpt_path), 0, outputs, started,
                       pp::timestamp_now());
    std::cout << "wrote visualizations for " << n << " samples to " << out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    if (const char* threads = std::getenv("PARTPOOL_THREADS")) {
        const int t = std::atoi(threads);
        if (t > 0) omp_set_num_threads(t);
    }

    CLI::App app{"part-pooled fine-grained recognition toolkit"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_dir, ckpt_path, split = "test";
    std::size_t viz_n = 8;

    auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
    gen->add_option("--config", config_path, "generator config JSON");
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* train = app.add_subcommand("train", "run the staged training schedule");
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--config", config_path, "training config JSON");
    train->add_option("--out", out_dir, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    eval->add_option("--out", out_dir, "output directory")->required();
    eval->add_option("--split", split, "dataset split (train|test)");

    auto* viz = app.add_subcommand("viz", "export heatmaps and keypoint overlays");
    viz->add_option("--data", data_dir, "dataset directory")->required();
    viz->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    viz->add_option("--out", out_dir, "output directory")->required();
    viz->add_option("--n", viz_n, "number of samples to render");
    viz->add_option("--split", split, "dataset split (train|test)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_generate(config_path, out_dir);
        if (train->parsed()) return cmd_train(data_dir, config_path, out_dir);
        if (eval->parsed()) return cmd_eval(data_dir, ckpt_path, out_dir, split);
        if (viz->parsed()) return cmd_viz(data_dir, ckpt_path, out_dir, viz_n, split);
    } catch (const pp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return pp::ConfigError::exit_code;
    } catch (const pp::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return pp::DataError::exit_code;
    } catch (const pp::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return pp::NumericError::exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
