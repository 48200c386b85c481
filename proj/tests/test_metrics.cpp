#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "partpool/metrics.hpp"
#include "partpool/rng.hpp"
#include "test_helpers.hpp"

using namespace partpool;

namespace {

MetricRow find_row(const std::vector<MetricRow>& rows, const std::string& name,
                   double threshold) {
    for (const auto& r : rows)
        if (r.name == name && r.threshold == threshold) return r;
    REQUIRE_MESSAGE(false, "row not found: " << name << "@" << threshold);
    return {};
}

} // namespace

TEST_CASE("pck: worked example at threshold 5.0") {
    // Box 50x40 -> alpha 0.1 gives threshold 5.0. Distances 3, 5, 7:
    // the first two are correct (inclusive boundary), the third is not.
    PckConfig cfg;
    cfg.alphas = {0.1};
    std::vector<std::vector<KeypointAnnotation>> gt{{{0, 10, 10, true}},
                                                    {{0, 10, 10, true}},
                                                    {{0, 10, 10, true}}};
    std::vector<std::vector<PredictedKeypoint>> pred{{{13, 10, true}},
                                                     {{10, 15, true}},
                                                     {{17, 10, true}}};
    std::vector<Box> boxes(3, Box{0, 0, 50, 40});
    auto rows = pck(pred, gt, boxes, 1, cfg);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].count == 3);
    CHECK(rows[0].fraction == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("pck: boundary distance exactly alpha*max(h,w) counts as correct") {
    PckConfig cfg;
    cfg.alphas = {0.1};
    std::vector<std::vector<KeypointAnnotation>> gt{{{0, 0, 0, true}}};
    std::vector<Box> boxes{{0, 0, 50, 40}};
    auto exact = pck({{{5.0, 0, true}}}, gt, boxes, 1, cfg);
    CHECK(exact[0].fraction == 1.0);
    auto past = pck({{{5.0 + 1e-9, 0, true}}}, gt, boxes, 1, cfg);
    CHECK(past[0].fraction == 0.0);
}

TEST_CASE("pck: invisible keypoints are excluded from the denominator") {
    PckConfig cfg;
    cfg.alphas = {0.1};
    std::vector<std::vector<KeypointAnnotation>> gt{{{0, 10, 10, true}},
                                                    {{0, 10, 10, false}}};
    std::vector<std::vector<PredictedKeypoint>> pred{{{10, 10, true}}, {{10, 10, true}}};
    std::vector<Box> boxes(2, Box{0, 0, 50, 40});
    auto rows = pck(pred, gt, boxes, 1, cfg);
    CHECK(rows[0].count == 1);
    CHECK(rows[0].fraction == 1.0);
}

TEST_CASE("pck: a missing prediction for a visible keypoint is incorrect") {
    PckConfig cfg;
    cfg.alphas = {0.1};
    std::vector<std::vector<KeypointAnnotation>> gt{{{0, 10, 10, true}}};
    std::vector<std::vector<PredictedKeypoint>> pred{{{10, 10, false}}};
    std::vector<Box> boxes{{0, 0, 50, 40}};
    auto rows = pck(pred, gt, boxes, 1, cfg);
    CHECK(rows[0].count == 1);
    CHECK(rows[0].fraction == 0.0);
}

TEST_CASE("pck: all-invisible part is undefined, not zero-correct") {
    PckConfig cfg;
    cfg.alphas = {0.05};
    std::vector<std::vector<KeypointAnnotation>> gt{{{0, 1, 1, false}}};
    std::vector<std::vector<PredictedKeypoint>> pred{{{1, 1, true}}};
    std::vector<Box> boxes{{0, 0, 10, 10}};
    auto rows = pck(pred, gt, boxes, 1, cfg);
    CHECK_FALSE(rows[0].defined());
}

TEST_CASE("pck is monotone in alpha") {
    Rng rng(1);
    PckConfig cfg; // default ladder 0.02..0.10
    const std::size_t parts = 3, images = 40;
    std::vector<std::vector<KeypointAnnotation>> gt(images);
    std::vector<std::vector<PredictedKeypoint>> pred(images);
    std::vector<Box> boxes(images);
    for (std::size_t i = 0; i < images; ++i) {
        boxes[i] = {0, 0, rng.uniform(20, 60), rng.uniform(20, 60)};
        for (std::size_t p = 0; p < parts; ++p) {
            gt[i].push_back({p, rng.uniform(0, 64), rng.uniform(0, 64),
                             rng.uniform() > 0.2});
            pred[i].push_back({gt[i][p].x + rng.uniform(-6, 6),
                               gt[i][p].y + rng.uniform(-6, 6), rng.uniform() > 0.1});
        }
    }
    auto rows = pck(pred, gt, boxes, parts, cfg);
    for (std::size_t p = 0; p < parts; ++p) {
        double prev = -1.0;
        for (double a : cfg.alphas) {
            auto row = find_row(rows, "part" + std::to_string(p), a);
            CHECK(row.fraction >= prev);
            prev = row.fraction;
        }
    }
}

TEST_CASE("pck matches a brute-force recount on random data") {
    Rng rng(2);
    PckConfig cfg;
    cfg.alphas = {0.05, 0.1};
    const std::size_t parts = 2, images = 60;
    std::vector<std::vector<KeypointAnnotation>> gt(images);
    std::vector<std::vector<PredictedKeypoint>> pred(images);
    std::vector<Box> boxes(images);
    for (std::size_t i = 0; i < images; ++i) {
        boxes[i] = {rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(10, 50),
                    rng.uniform(10, 50)};
        for (std::size_t p = 0; p < parts; ++p) {
            gt[i].push_back({p, rng.uniform(0, 64), rng.uniform(0, 64),
                             rng.uniform() > 0.3});
            pred[i].push_back({rng.uniform(0, 64), rng.uniform(0, 64),
                               rng.uniform() > 0.2});
        }
    }
    auto rows = pck(pred, gt, boxes, parts, cfg);
    for (std::size_t p = 0; p < parts; ++p)
        for (double a : cfg.alphas) {
            std::size_t correct = 0, total = 0;
            for (std::size_t i = 0; i < images; ++i) {
                if (!gt[i][p].visible) continue;
                ++total;
                if (!pred[i][p].present) continue;
                const double dx = pred[i][p].x - gt[i][p].x;
                const double dy = pred[i][p].y - gt[i][p].y;
                if (std::sqrt(dx * dx + dy * dy) <=
                    a * std::max(boxes[i].w, boxes[i].h))
                    ++correct;
            }
            auto row = find_row(rows, "part" + std::to_string(p), a);
            CHECK(row.count == total);
            if (total) CHECK(row.fraction == doctest::Approx(double(correct) / total));
        }
}

TEST_CASE("part boxes: tight box plus margin, clipped to the image") {
    PartBoxRule rule;
    rule.groups = {{"head", {0, 1}}};
    std::vector<PredictedKeypoint> kps{{10, 10, true}, {13, 14, true}};
    auto boxes = part_boxes(kps, rule, 64, 64);
    REQUIRE(boxes.size() == 1);
    REQUIRE(boxes[0].has_value());
    const double margin = 0.10 * 5.0; // diagonal of the 3x4 tight box
    CHECK(boxes[0]->x == doctest::Approx(10.0 - margin));
    CHECK(boxes[0]->y == doctest::Approx(10.0 - margin));
    CHECK(boxes[0]->w == doctest::Approx(3.0 + 2 * margin));
    CHECK(boxes[0]->h == doctest::Approx(4.0 + 2 * margin));
}

TEST_CASE("part boxes clip at the image border") {
    PartBoxRule rule;
    rule.groups = {{"g", {0, 1}}};
    std::vector<PredictedKeypoint> kps{{0.3, 1, true}, {3.3, 5, true}};
    auto boxes = part_boxes(kps, rule, 64, 64);
    CHECK(boxes[0]->x == 0.0); // margin 0.5 would reach -0.2, clipped
    CHECK(boxes[0]->y == doctest::Approx(1.0 - 0.5));
}

TEST_CASE("part boxes: absent keypoints collapse to nullopt") {
    PartBoxRule rule;
    rule.groups = {{"g", {0, 1}}, {"h", {2}}};
    std::vector<PredictedKeypoint> kps{{1, 1, false}, {4, 5, false}, {9, 9, true}};
    auto boxes = part_boxes(kps, rule, 64, 64);
    CHECK_FALSE(boxes[0].has_value());
    REQUIRE(boxes[1].has_value());
    // Single keypoint: degenerate tight box, zero margin.
    CHECK(boxes[1]->w == 0.0);
    CHECK(boxes[1]->h == 0.0);

    PartBoxRule bad;
    bad.groups = {{"empty", {}}};
    CHECK_THROWS_AS(part_boxes(kps, bad, 64, 64), ConfigError);
}

TEST_CASE("iou: the overlapping-thirds example") {
    Box a{0, 0, 2, 2}, b{1, 0, 2, 2};
    // intersection 1x2=2, union 4+4-2=6
    CHECK(Box::iou(a, b) == doctest::Approx(1.0 / 3.0));
    CHECK(Box::iou(a, a) == doctest::Approx(1.0));
    CHECK(Box::iou(a, Box{10, 10, 2, 2}) == 0.0);
}

TEST_CASE("pcp: strict IoU threshold and undefined handling") {
    PartBoxRule rule;
    rule.groups = {{"g", {0}}};
    Box gt{0, 0, 4, 4};
    Box exactly_half{0, 0, 4, 2};   // IoU = 8/16 = 0.5 -> incorrect (strict)
    Box good{0, 0, 4, 3.8};         // IoU ~ 0.95
    std::vector<std::vector<std::optional<Box>>> gts{{gt}, {gt}, {gt}, {std::nullopt}};
    std::vector<std::vector<std::optional<Box>>> preds{
        {exactly_half}, {good}, {std::nullopt}, {good}};
    auto rows = pcp(preds, gts, rule);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].count == 3); // undefined ground truth excluded
    CHECK(rows[0].fraction == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("pcp matches a brute-force recount on random boxes") {
    Rng rng(3);
    PartBoxRule rule;
    rule.groups = {{"a", {0}}, {"b", {1}}};
    const std::size_t images = 80;
    std::vector<std::vector<std::optional<Box>>> gts(images), preds(images);
    for (std::size_t i = 0; i < images; ++i)
        for (std::size_t g = 0; g < 2; ++g) {
            auto random_box = [&]() -> std::optional<Box> {
                if (rng.uniform() < 0.15) return std::nullopt;
                return Box{rng.uniform(0, 30), rng.uniform(0, 30), rng.uniform(2, 20),
                           rng.uniform(2, 20)};
            };
            gts[i].push_back(random_box());
            preds[i].push_back(random_box());
        }
    auto rows = pcp(preds, gts, rule);
    for (std::size_t g = 0; g < 2; ++g) {
        std::size_t correct = 0, total = 0;
        for (std::size_t i = 0; i < images; ++i) {
            if (!gts[i][g]) continue;
            ++total;
            if (preds[i][g] && Box::iou(*preds[i][g], *gts[i][g]) > 0.5) ++correct;
        }
        CHECK(rows[g].count == total);
        CHECK(rows[g].fraction == doctest::Approx(double(correct) / total));
    }
}

TEST_CASE("accuracy counts exact matches") {
    CHECK(accuracy({0, 1, 2, 1}, {0, 1, 1, 1}) == doctest::Approx(0.75));
    CHECK(accuracy({5}, {5}) == 1.0);
    CHECK_THROWS_AS(accuracy({0}, {0, 1}), UsageError);
    CHECK_THROWS_AS(accuracy({}, {}), UsageError);
}

TEST_CASE("metric CSV renders undefined rows and comments") {
    std::vector<MetricRow> rows;
    rows.push_back({"part0", 0.05, 0.875, 40});
    rows.push_back({"part1", 0.05, 0.0, 0});
    const std::string path = "toy_metrics.csv";
    write_metric_csv(path, rows, {"split: test"});
    std::ifstream is(path);
    REQUIRE(is.good());
    std::string line;
    std::getline(is, line);
    CHECK(line == "# split: test");
    std::getline(is, line);
    CHECK(line == "name,threshold,fraction,count");
    std::getline(is, line);
    CHECK(line == "part0,0.05,0.875000,40");
    std::getline(is, line);
    CHECK(line == "part1,0.05,undefined,0");
    std::remove(path.c_str());
}

TEST_CASE("pck rejects inconsistent inputs and non-positive alphas") {
    PckConfig cfg;
    std::vector<std::vector<KeypointAnnotation>> gt{{{0, 1, 1, true}}};
    std::vector<std::vector<PredictedKeypoint>> pred{{{1, 1, true}}};
    CHECK_THROWS_AS(pck(pred, gt, {}, 1, cfg), UsageError);
    cfg.alphas = {0.0};
    CHECK_THROWS_AS(pck(pred, gt, {Box{0, 0, 1, 1}}, 1, cfg), ConfigError);
}
