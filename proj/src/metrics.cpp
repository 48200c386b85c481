#include "partpool/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "partpool/errors.hpp"

namespace partpool {

std::vector<MetricRow> pck(const std::vector<std::vector<PredictedKeypoint>>& predictions,
                           const std::vector<std::vector<KeypointAnnotation>>& ground_truth,
                           const std::vector<Box>& object_boxes, std::size_t num_parts,
                           const PckConfig& config) {
    if (predictions.size() != ground_truth.size() ||
        predictions.size() != object_boxes.size())
        throw UsageError("pck: prediction/ground-truth/box counts differ");
    for (double a : config.alphas)
        if (!(a > 0)) throw ConfigError("pck: alpha must be > 0");

    std::vector<MetricRow> rows;
    for (std::size_t part = 0; part < num_parts; ++part)
        for (double alpha : config.alphas) {
            std::size_t correct = 0, total = 0;
            for (std::size_t img = 0; img < ground_truth.size(); ++img) {
                const KeypointAnnotation* gt = nullptr;
                for (const auto& kp : ground_truth[img])
                    if (kp.part == part) gt = &kp;
                if (!gt || !gt->visible) continue;
                ++total;
                if (part >= predictions[img].size() || !predictions[img][part].present)
                    continue; // missing prediction: incorrect
                const auto& pr = predictions[img][part];
                const double dist = std::hypot(pr.x - gt->x, pr.y - gt->y);
                const double thr =
                    alpha * std::max(object_boxes[img].h, object_boxes[img].w);
                if (dist <= thr) ++correct;
            }
            MetricRow row;
            row.name = "part" + std::to_string(part);
            row.threshold = alpha;
            row.count = total;
            row.fraction = total ? static_cast<double>(correct) / total : 0.0;
            rows.push_back(row);
        }
    return rows;
}

std::string PartBoxRule::describe() const {
    std::ostringstream os;
    os << "tight box over visible group keypoints, expanded by "
       << margin_frac * 100 << "% of the box diagonal, clipped to image; groups:";
    for (const auto& g : groups) {
        os << " " << g.name << "=[";
        for (std::size_t i = 0; i < g.parts.size(); ++i)
            os << (i ? "," : "") << g.parts[i];
        os << "]";
    }
    return os.str();
}

std::vector<std::optional<Box>> part_boxes(const std::vector<PredictedKeypoint>& keypoints,
                                           const PartBoxRule& rule, double image_w,
                                           double image_h) {
    std::vector<std::optional<Box>> out;
    for (const auto& group : rule.groups) {
        if (group.parts.empty()) throw ConfigError("part box group must be non-empty");
        double min_x = 1e18, min_y = 1e18, max_x = -1e18, max_y = -1e18;
        bool any = false;
        for (std::size_t part : group.parts) {
            if (part >= keypoints.size() || !keypoints[part].present) continue;
            any = true;
            min_x = std::min(min_x, keypoints[part].x);
            min_y = std::min(min_y, keypoints[part].y);
            max_x = std::max(max_x, keypoints[part].x);
            max_y = std::max(max_y, keypoints[part].y);
        }
        if (!any) {
            out.push_back(std::nullopt);
            continue;
        }
        const double diag = std::hypot(max_x - min_x, max_y - min_y);
        const double margin = rule.margin_frac * diag;
        const double x0 = std::max(0.0, min_x - margin);
        const double y0 = std::max(0.0, min_y - margin);
        const double x1 = std::min(image_w, max_x + margin);
        const double y1 = std::min(image_h, max_y + margin);
        out.push_back(Box{x0, y0, x1 - x0, y1 - y0});
    }
    return out;
}

std::vector<MetricRow> pcp(const std::vector<std::vector<std::optional<Box>>>& predicted,
                           const std::vector<std::vector<std::optional<Box>>>& ground_truth,
                           const PartBoxRule& rule) {
    if (predicted.size() != ground_truth.size())
        throw UsageError("pcp: prediction/ground-truth counts differ");
    std::vector<MetricRow> rows;
    for (std::size_t g = 0; g < rule.groups.size(); ++g) {
        std::size_t correct = 0, total = 0;
        for (std::size_t img = 0; img < ground_truth.size(); ++img) {
            if (!ground_truth[img][g].has_value()) continue;
            ++total;
            if (!predicted[img][g].has_value()) continue; // undefined: incorrect
            if (Box::iou(*predicted[img][g], *ground_truth[img][g]) > 0.5) ++correct;
        }
        MetricRow row;
        row.name = rule.groups[g].name;
        row.threshold = 0.5;
        row.count = total;
        row.fraction = total ? static_cast<double>(correct) / total : 0.0;
        rows.push_back(row);
    }
    return rows;
}

double accuracy(const std::vector<std::size_t>& predicted,
                const std::vector<std::size_t>& truth) {
    if (predicted.size() != truth.size()) throw UsageError("accuracy: length mismatch");
    if (predicted.empty()) throw UsageError("accuracy: empty input");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == truth[i];
    return static_cast<double>(correct) / predicted.size();
}

void write_metric_csv(const std::string& path, const std::vector<MetricRow>& rows,
                      const std::vector<std::string>& comments) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write metric report: " + path);
    for (const auto& c : comments) os << "# " << c << "\n";
    os << "name,threshold,fraction,count\n";
    char buf[64];
    for (const auto& r : rows) {
        os << r.name << ",";
        std::snprintf(buf, sizeof buf, "%.6g", r.threshold);
        os << buf << ",";
        if (r.defined()) {
            std::snprintf(buf, sizeof buf, "%.6f", r.fraction);
            os << buf;
        } else {
            os << "undefined";
        }
        os << "," << r.count << "\n";
    }
    if (!os) throw DataError("metric report write failed: " + path);
}

} // namespace partpool
