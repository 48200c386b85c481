#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "partpool/checkpoint.hpp"
#include "partpool/config_json.hpp"
#include "partpool/image_io.hpp"
#include "partpool/model.hpp"
#include "partpool/rng.hpp"
#include "partpool/synth.hpp"
#include "test_helpers.hpp"

using namespace partpool;
namespace fs = std::filesystem;

namespace {

std::vector<char> slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

} // namespace

TEST_CASE("checkpoint: values and shapes round-trip exactly") {
    TempDir dir("pp_fmt_ckpt");
    Rng rng(1);
    std::map<std::string, Tensor4<float>> tensors;
    tensors["b.weight"] = Tensor4<float>(2, 3, 4, 5);
    tensors["a.bias"] = Tensor4<float>(7, 1, 1, 1);
    for (auto& [name, t] : tensors)
        for (auto& v : t.data) v = static_cast<float>(rng.uniform(-10, 10));

    const std::string path = dir.str() + "/model.ckpt";
    save_checkpoint(path, tensors);
    auto loaded = load_checkpoint(path);
    REQUIRE(loaded.size() == 2);
    for (const auto& [name, t] : tensors) {
        REQUIRE(loaded.count(name) == 1);
        CHECK(loaded[name].shape_str() == t.shape_str());
        CHECK(loaded[name].data == t.data); // bit-exact, not approximate
    }
}

TEST_CASE("checkpoint: save is byte-deterministic and order-independent") {
    TempDir dir("pp_fmt_ckpt_det");
    std::map<std::string, Tensor4<float>> tensors;
    tensors["z"] = Tensor4<float>(1, 1, 1, 2, 0.5f);
    tensors["a"] = Tensor4<float>(1, 1, 2, 1, -1.25f);
    const std::string p1 = dir.str() + "/one.ckpt", p2 = dir.str() + "/two.ckpt";
    save_checkpoint(p1, tensors);
    save_checkpoint(p2, tensors);
    CHECK(slurp(p1) == slurp(p2));

    // Magic header first, then records in name order ("a" before "z").
    auto bytes = slurp(p1);
    REQUIRE(bytes.size() > 11);
    CHECK(std::string(bytes.begin(), bytes.begin() + 7) == "PPOOL1\n");
    CHECK(bytes[11] == 'a');
}

TEST_CASE("checkpoint: bad magic and truncation are data errors") {
    TempDir dir("pp_fmt_ckpt_bad");
    const std::string good = dir.str() + "/good.ckpt";
    save_checkpoint(good, {{"w", Tensor4<float>(1, 2, 2, 2, 1.0f)}});

    const std::string bad_magic = dir.str() + "/bad_magic.ckpt";
    {
        auto bytes = slurp(good);
        bytes[0] = 'X';
        std::ofstream os(bad_magic, std::ios::binary);
        os.write(bytes.data(), bytes.size());
    }
    CHECK_THROWS_AS(load_checkpoint(bad_magic), DataError);

    const std::string truncated = dir.str() + "/truncated.ckpt";
    {
        auto bytes = slurp(good);
        std::ofstream os(truncated, std::ios::binary);
        os.write(bytes.data(), bytes.size() - 5);
    }
    CHECK_THROWS_AS(load_checkpoint(truncated), DataError);
    CHECK_THROWS_AS(load_checkpoint(dir.str() + "/missing.ckpt"), DataError);
}

TEST_CASE("model state survives a checkpoint round trip") {
    TempDir dir("pp_fmt_model");
    ModelConfig cfg;
    cfg.backbone.input_size = 16;
    cfg.backbone.channels = {3, 4};
    cfg.backbone.num_parts = 2;
    cfg.num_classes = 3;
    Model<float> a(cfg, 5), b(cfg, 6); // different init

    const std::string path = dir.str() + "/model.ckpt";
    save_checkpoint(path, a.state());
    b.load_state(load_checkpoint(path));
    auto sa = a.state(), sb = b.state();
    REQUIRE(sa.size() == sb.size());
    for (const auto& [name, t] : sa) {
        REQUIRE(sb.count(name) == 1);
        CHECK(sb[name].data == t.data);
    }

    // Same input -> identical logits after the round trip.
    Tensor4<float> img(1, 3, 16, 16, 0.25f);
    auto fa = a.features(img), fb = b.features(img);
    CHECK(fa.values.data == fb.values.data);
}

TEST_CASE("model config encode/decode is lossless") {
    ModelConfig cfg;
    cfg.backbone.input_size = 32;
    cfg.backbone.channels = {8, 16};
    cfg.backbone.num_parts = 4;
    cfg.num_classes = 12;
    cfg.window = 5;
    cfg.pool_mode = PoolMode::Max;
    cfg.compact_bilinear = true;
    cfg.cb_dim = 256;
    cfg.cb_seed = 9;
    cfg.holistic_only = true;
    auto back = ModelConfig::decode(cfg.encode());
    CHECK(back.encode() == cfg.encode());
    CHECK(back.backbone.channels == cfg.backbone.channels);
    CHECK(back.cb_seed == 9);
    CHECK_THROWS_AS(ModelConfig::decode({64.f, 2.f}), DataError);
}

TEST_CASE("PPM round trip is pixel-exact") {
    TempDir dir("pp_fmt_ppm");
    ImageU8 img;
    img.width = 3;
    img.height = 2;
    img.channels = 3;
    img.pixels = {0, 1, 2, 3, 4, 5, 6, 7, 8, 250, 251, 252, 253, 254, 255, 128, 0, 64};
    const std::string path = dir.str() + "/img.ppm";
    write_ppm(path, img);
    auto back = read_ppm(path);
    CHECK(back.width == 3);
    CHECK(back.height == 2);
    CHECK(back.channels == 3);
    CHECK(back.pixels == img.pixels);
}

TEST_CASE("PGM round trip is pixel-exact") {
    TempDir dir("pp_fmt_pgm");
    ImageU8 img;
    img.width = 4;
    img.height = 3;
    img.channels = 1;
    img.pixels = {0, 255, 17, 34, 51, 68, 85, 102, 119, 136, 153, 170};
    const std::string path = dir.str() + "/img.pgm";
    write_pgm(path, img);
    auto back = read_pgm(path);
    CHECK(back.channels == 1);
    CHECK(back.pixels == img.pixels);
}

TEST_CASE("image reader skips comments and rejects malformed files") {
    TempDir dir("pp_fmt_img_bad");
    const std::string commented = dir.str() + "/c.ppm";
    {
        std::ofstream os(commented, std::ios::binary);
        os << "P6\n# a comment\n2 1\n# another\n255\n";
        os.write("\x01\x02\x03\x04\x05\x06", 6);
    }
    auto img = read_ppm(commented);
    CHECK(img.width == 2);
    CHECK(img.pixels == std::vector<std::uint8_t>({1, 2, 3, 4, 5, 6}));

    const std::string bad_magic = dir.str() + "/bad.ppm";
    {
        std::ofstream os(bad_magic, std::ios::binary);
        os << "P5\n2 1\n255\n";
        os.write("\x01\x02", 2);
    }
    CHECK_THROWS_AS(read_ppm(bad_magic), DataError); // P5 body, read as PPM

    const std::string short_body = dir.str() + "/short.ppm";
    {
        std::ofstream os(short_body, std::ios::binary);
        os << "P6\n2 2\n255\n";
        os.write("\x01\x02\x03", 3);
    }
    CHECK_THROWS_AS(read_ppm(short_body), DataError);
    CHECK_THROWS_AS(read_ppm(dir.str() + "/missing.ppm"), DataError);
}

TEST_CASE("dataset save/load round trip preserves samples and annotations") {
    TempDir dir("pp_fmt_dataset");
    GeneratorConfig cfg;
    cfg.seed = 11;
    cfg.num_classes = 2;
    cfg.num_parts = 3;
    cfg.train_per_class = 20;
    cfg.test_per_class = 2;
    Dataset ds = generate(cfg);
    save_dataset(dir.str(), ds);

    auto train = load_split(dir.str(), "train");
    auto test = load_split(dir.str(), "test");
    CHECK(train.num_parts == 3);
    CHECK(train.num_classes == 2);
    REQUIRE(train.samples.size() == ds.train.size());
    REQUIRE(test.samples.size() == ds.test.size());
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
        const Sample& a = ds.train[i];
        const Sample& b = train.samples[i];
        CHECK(a.image.pixels == b.image.pixels);
        CHECK(a.class_label == b.class_label);
        CHECK(a.object_box.x == b.object_box.x);
        CHECK(a.object_box.w == b.object_box.w);
        REQUIRE(a.keypoints.size() == b.keypoints.size());
        for (std::size_t p = 0; p < a.keypoints.size(); ++p) {
            CHECK(a.keypoints[p].part == b.keypoints[p].part);
            CHECK(a.keypoints[p].x == b.keypoints[p].x);
            CHECK(a.keypoints[p].y == b.keypoints[p].y);
            CHECK(a.keypoints[p].visible == b.keypoints[p].visible);
        }
    }
}

TEST_CASE("loading malformed annotations is a data error") {
    TempDir dir("pp_fmt_ann_bad");
    { std::ofstream(dir.str() + "/train.json") << "{ not json"; }
    CHECK_THROWS_AS(load_split(dir.str(), "train"), DataError);
    { std::ofstream(dir.str() + "/test.json") << "[{\"file\": \"x.ppm\"}]"; }
    CHECK_THROWS_AS(load_split(dir.str(), "test"), DataError);
    CHECK_THROWS_AS(load_split(dir.str(), "val"), DataError);
}

TEST_CASE("generator config JSON: defaults, overrides and rejection") {
    auto cfg = generator_config_from_json(nlohmann::json::parse(
        R"({"seed": 3, "num_classes": 4, "palette_mode": "disjoint"})"));
    CHECK(cfg.seed == 3);
    CHECK(cfg.num_classes == 4);
    CHECK(cfg.num_parts == 5); // default retained
    CHECK(cfg.palette_mode == PaletteMode::Disjoint);

    CHECK_THROWS_AS(
        generator_config_from_json(nlohmann::json::parse(R"({"palette_mode": "x"})")),
        ConfigError);
    CHECK_THROWS_AS(
        generator_config_from_json(nlohmann::json::parse(R"({"num_classes": 1})")),
        ConfigError);
    CHECK_THROWS_AS(
        generator_config_from_json(nlohmann::json::parse(R"({"seed": "abc"})")),
        ConfigError);
}

TEST_CASE("training config JSON: default schedule and explicit stages") {
    auto setup = train_setup_from_json(nlohmann::json::parse(R"({"base_lr": 0.2})"));
    REQUIRE(setup.training.stages.size() == 4);
    CHECK(setup.training.stages[0].learning_rate == 0.2);
    CHECK(setup.training.stages[3].learning_rate == doctest::Approx(0.002));
    CHECK(setup.training.batch_size == 8);
    CHECK(setup.model.window == 3);

    auto custom = train_setup_from_json(nlohmann::json::parse(R"({
        "seed": 9, "batch_size": 4, "lambda": 0.5, "window": 5,
        "pool_mode": "max", "holistic_only": true,
        "compact_bilinear": {"enabled": true, "dim": 128, "seed": 2},
        "backbone": {"input_size": 32, "channels": [8, 16]},
        "stages": [{"name": "s", "trainable": ["classifier"], "lr": 0.1,
                    "epochs": 3, "loss": "classification", "pooling": "predicted"}]
    })"));
    CHECK(custom.training.seed == 9);
    CHECK(custom.training.lambda == 0.5);
    CHECK(custom.model.pool_mode == PoolMode::Max);
    CHECK(custom.model.holistic_only);
    CHECK(custom.model.compact_bilinear);
    CHECK(custom.model.cb_dim == 128);
    CHECK(custom.model.backbone.channels == std::vector<std::size_t>({8, 16}));
    REQUIRE(custom.training.stages.size() == 1);
    CHECK(custom.training.stages[0].pooling == PoolingSource::Predicted);
    CHECK(custom.training.stages[0].loss == StageLoss::Classification);

    CHECK_THROWS_AS(train_setup_from_json(nlohmann::json::parse(R"({"lambda": -1})")),
                    ConfigError);
    CHECK_THROWS_AS(train_setup_from_json(nlohmann::json::parse(R"({"batch_size": 0})")),
                    ConfigError);
    CHECK_THROWS_AS(train_setup_from_json(nlohmann::json::parse(
                        R"({"stages": [{"name": "s", "lr": -0.1, "epochs": 1}]})")),
                    ConfigError);
    CHECK_THROWS_AS(train_setup_from_json(nlohmann::json::parse(
                        R"({"stages": [{"name": "s", "epochs": 1}]})")),
                    ConfigError); // missing lr
}
