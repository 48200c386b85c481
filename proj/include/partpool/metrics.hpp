#pragma once

#include <optional>
#include <string>
#include <vector>

#include "partpool/types.hpp"

namespace partpool {

struct PckConfig {
    std::vector<double> alphas = {0.02, 0.05, 0.08, 0.10};
};

/// One evaluated row: fraction of correct cases among `count` (the
/// denominator after excluding invisible / undefined entries). A zero
/// count leaves the metric undefined.
struct MetricRow {
    std::string name;
    double threshold = 0.0;
    double fraction = 0.0;
    std::size_t count = 0;
    bool defined() const { return count > 0; }
};

/// A keypoint prediction aligned by part id; absent predictions count as
/// incorrect for visible ground truth.
struct PredictedKeypoint {
    double x = 0.0, y = 0.0;
    bool present = true;
};

/// PCK per (part, alpha): a visible ground-truth keypoint counts as
/// correct when the prediction lies within alpha * max(h, w) of it
/// (inclusive), with (h, w) from the per-image object box.
std::vector<MetricRow> pck(const std::vector<std::vector<PredictedKeypoint>>& predictions,
                           const std::vector<std::vector<KeypointAnnotation>>& ground_truth,
                           const std::vector<Box>& object_boxes, std::size_t num_parts,
                           const PckConfig& config);

struct PartBoxRule {
    struct Group {
        std::string name;
        std::vector<std::size_t> parts;
    };
    std::vector<Group> groups;
    double margin_frac = 0.10; // fraction of the tight box diagonal

    std::string describe() const;
};

/// Tight axis-aligned box over the group's present keypoints, expanded by
/// the margin and clipped to the image. nullopt when no keypoint in the
/// group is present.
std::vector<std::optional<Box>> part_boxes(const std::vector<PredictedKeypoint>& keypoints,
                                           const PartBoxRule& rule, double image_w,
                                           double image_h);

/// PCP per group: correct iff IoU strictly exceeds 0.5. Undefined ground
/// truth boxes are excluded; an undefined prediction against a defined
/// ground truth counts as incorrect.
std::vector<MetricRow> pcp(const std::vector<std::vector<std::optional<Box>>>& predicted,
                           const std::vector<std::vector<std::optional<Box>>>& ground_truth,
                           const PartBoxRule& rule);

double accuracy(const std::vector<std::size_t>& predicted,
                const std::vector<std::size_t>& truth);

/// CSV report, columns name,threshold,fraction,count. Undefined rows
/// print "undefined" in the fraction column. Lines in `comments` are
/// prefixed with '#'.
void write_metric_csv(const std::string& path, const std::vector<MetricRow>& rows,
                      const std::vector<std::string>& comments = {});

} // namespace partpool
