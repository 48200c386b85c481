#include <doctest.h>

#include "partpool/backbone.hpp"
#include "partpool/part_layers.hpp"
#include "test_helpers.hpp"

using namespace partpool;
using pptest::fill_uniform;
using pptest::max_grad_rel_error;

namespace {

BackboneConfig tiny_config() {
    BackboneConfig cfg;
    cfg.input_size = 8;
    cfg.channels = {3, 4};
    cfg.num_parts = 2;
    return cfg;
}

double dot(const Tensor4<double>& a, const Tensor4<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

} // namespace

TEST_CASE("default config produces an 8x8 grid with 64 channels") {
    BackboneConfig cfg; // defaults: 64 input, 3 blocks
    CHECK(cfg.stride() == 8);
    CHECK(cfg.grid_size() == 8);
    Rng rng(1);
    Backbone<float> net(cfg, rng);
    Tensor4<float> imgs(1, 3, 64, 64, 0.5f);
    auto f = net.forward(imgs);
    CHECK(f.values.shape_str() == "1x64x8x8");
    CHECK(f.stride == 8);
}

TEST_CASE("32px input with 3 blocks gives a 4x4 grid") {
    BackboneConfig cfg;
    cfg.input_size = 32;
    CHECK(cfg.grid_size() == 4);
}

TEST_CASE("input size not divisible by the stride is rejected") {
    BackboneConfig cfg;
    cfg.input_size = 60;
    CHECK_THROWS_AS(cfg.grid_size(), ConfigError);
}

TEST_CASE("doubling the input size doubles the grid edge") {
    BackboneConfig small, big;
    small.input_size = 32;
    big.input_size = 64;
    Rng r1(7), r2(7);
    Backbone<float> net_small(small, r1);
    Backbone<float> net_big(big, r2); // identical weights, different input size
    Tensor4<float> im32(1, 3, 32, 32, 0.3f), im64(1, 3, 64, 64, 0.3f);
    auto f32 = net_small.forward(im32);
    auto f64 = net_big.forward(im64);
    CHECK(f32.values.h * 2 == f64.values.h);
    CHECK(f32.values.w * 2 == f64.values.w);
}

TEST_CASE("backbone forward is deterministic") {
    BackboneConfig cfg = tiny_config();
    Rng r1(3), r2(3);
    Backbone<float> a(cfg, r1), b(cfg, r2);
    Tensor4<float> imgs(2, 3, 8, 8);
    Rng rng(4);
    for (auto& v : imgs.data) v = static_cast<float>(rng.uniform());
    auto fa = a.forward(imgs);
    auto fb = b.forward(imgs);
    CHECK(fa.values.data == fb.values.data);
}

TEST_CASE("size mismatch is a configuration error") {
    BackboneConfig cfg = tiny_config();
    Rng rng(5);
    Backbone<float> net(cfg, rng);
    Tensor4<float> imgs(1, 3, 16, 16, 0.0f);
    CHECK_THROWS_AS(net.forward(imgs), ConfigError);
}

TEST_CASE("keypoint head: zero weights give sigmoid 0.5 everywhere") {
    Rng rng(6);
    KeypointHead<double> head(3, 4, rng);
    head.conv().weight().zero();
    head.conv().bias().zero();
    FeatureMap<double> f;
    f.values = Tensor4<double>(1, 4, 2, 2);
    fill_uniform(f.values, rng);
    f.stride = 4;
    auto logits = head.forward(f);
    for (double v : logits.data) {
        CHECK(v == 0.0);
        CHECK(sigmoid_scalar(v) == doctest::Approx(0.5));
    }
}

TEST_CASE("keypoint head: selector kernel copies a feature channel") {
    Rng rng(7);
    KeypointHead<double> head(1, 3, rng);
    head.conv().weight().zero();
    head.conv().bias().zero();
    head.conv().weight().at(0, 0, 0, 0) = 1.0; // pick channel 0
    FeatureMap<double> f;
    f.values = Tensor4<double>(1, 3, 3, 3);
    fill_uniform(f.values, rng);
    f.stride = 2;
    auto logits = head.forward(f);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(logits.at(0, 0, i, j) == doctest::Approx(f.values.at(0, 0, i, j)));
}

TEST_CASE("gradient check through head and backbone on a 2-image batch") {
    BackboneConfig cfg = tiny_config();
    Rng rng(8);
    Backbone<double> net(cfg, rng);
    KeypointHead<double> head(cfg.num_parts, cfg.feature_channels(), rng);
    Tensor4<double> imgs(2, 3, 8, 8);
    fill_uniform(imgs, rng, 0.0, 1.0);
    Tensor4<double> g(2, cfg.num_parts, cfg.grid_size(), cfg.grid_size());
    fill_uniform(g, rng);

    auto loss = [&]() { return dot(head.forward(net.forward(imgs)), g); };
    loss();
    net.zero_grad();
    head.zero_grad();
    net.backward(head.backward(g));

    std::vector<ParamView<double>> params;
    net.params(params);
    head.params(params);
    for (auto& p : params)
        CHECK(max_grad_rel_error(loss, p.value->data, p.grad->data) < 1e-4);
}

TEST_CASE("no dead parameters at init") {
    BackboneConfig cfg = tiny_config();
    Rng rng(9);
    Backbone<double> net(cfg, rng);
    KeypointHead<double> head(cfg.num_parts, cfg.feature_channels(), rng);
    Tensor4<double> imgs(4, 3, 8, 8);
    fill_uniform(imgs, rng, 0.0, 1.0);
    Tensor4<double> g(4, cfg.num_parts, cfg.grid_size(), cfg.grid_size());
    fill_uniform(g, rng);
    head.forward(net.forward(imgs));
    net.zero_grad();
    head.zero_grad();
    net.backward(head.backward(g));
    std::vector<ParamView<double>> params;
    net.params(params);
    head.params(params);
    for (auto& p : params) {
        bool any = false;
        for (double v : p.grad->data) any |= v != 0.0;
        CHECK_MESSAGE(any, p.name);
    }
}

TEST_CASE("decode_keypoints maps grid cells to pixel centers") {
    Tensor4<double> logits(1, 1, 8, 8, -1.0);
    logits.at(0, 0, 2, 3) = 5.0;
    auto kps = decode_keypoints(logits, 8);
    CHECK(kps[0][0].x == doctest::Approx(28.0));
    CHECK(kps[0][0].y == doctest::Approx(20.0));
    CHECK(kps[0][0].score == doctest::Approx(sigmoid_scalar(5.0)));
}

TEST_CASE("decode_keypoints breaks ties toward cell (0,0)") {
    Tensor4<double> logits(1, 2, 8, 8, 0.25);
    auto kps = decode_keypoints(logits, 8);
    for (const auto& kp : kps[0]) {
        CHECK(kp.x == doctest::Approx(4.0));
        CHECK(kp.y == doctest::Approx(4.0));
    }
}

TEST_CASE("decode_keypoints matches an exhaustive scan on 100 random cases") {
    Rng rng(10);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t h = 2 + rng.uniform_int(7), w = 2 + rng.uniform_int(7);
        Tensor4<double> logits(1, 2, h, w);
        fill_uniform(logits, rng);
        const std::size_t stride = 1 + rng.uniform_int(8);
        auto kps = decode_keypoints(logits, stride);
        for (std::size_t p = 0; p < 2; ++p) {
            // Exhaustive scan oracle.
            double best = -1e18;
            std::size_t bi = 0, bj = 0;
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    if (logits.at(0, p, i, j) > best) {
                        best = logits.at(0, p, i, j);
                        bi = i;
                        bj = j;
                    }
            CHECK(kps[0][p].x == doctest::Approx((bj + 0.5) * stride));
            CHECK(kps[0][p].y == doctest::Approx((bi + 0.5) * stride));
        }
    }
}

TEST_CASE("decode(encode(k)) lands within stride/2 of k (Chebyshev)") {
    Rng rng(11);
    const std::size_t grid = 8, stride = 8;
    for (int rep = 0; rep < 200; ++rep) {
        const double x = rng.uniform(0.0, grid * stride);
        const double y = rng.uniform(0.0, grid * stride);
        auto batch = encode_targets<double>({{{0, x, y, true}}}, 1, grid, grid, stride);
        Tensor4<double> logits(1, 1, grid, grid, -10.0);
        REQUIRE(batch.cells[0][0].valid);
        logits.at(0, 0, batch.cells[0][0].row, batch.cells[0][0].col) = 10.0;
        auto kps = decode_keypoints(logits, stride);
        CHECK(std::abs(kps[0][0].x - x) <= stride / 2.0);
        CHECK(std::abs(kps[0][0].y - y) <= stride / 2.0);
    }
}
