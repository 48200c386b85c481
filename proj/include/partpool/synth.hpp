#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "partpool/image_io.hpp"
#include "partpool/tensor.hpp"
#include "partpool/types.hpp"

namespace partpool {

/// One dataset example. Images are kept as 8-bit RGB so that generation
/// and the on-disk PPM form are byte-identical.
struct Sample {
    ImageU8 image;
    std::vector<KeypointAnnotation> keypoints; // exactly P entries
    std::size_t class_label = 0;
    Box object_box;
};

enum class PaletteMode {
    SharedPermuted, // one palette, class-specific part assignment
    Disjoint,       // per-class palettes (negative control for the
                    // confusability check)
};

struct GeneratorConfig {
    std::uint64_t seed = 1;
    std::size_t image_size = 64;
    std::size_t num_classes = 10;
    std::size_t num_parts = 5;
    std::size_t train_per_class = 100;
    std::size_t test_per_class = 30;
    double max_rotation = 1.5707963267948966; // +-90 degrees
    double max_translation_frac = 0.125;      // +-S/8
    double min_scale = 0.7, max_scale = 1.3;
    double occlusion_prob = 0.1;
    PaletteMode palette_mode = PaletteMode::SharedPermuted;

    void validate() const;
};

struct Dataset {
    GeneratorConfig config;
    std::vector<Sample> train;
    std::vector<Sample> test;
};

Dataset generate(const GeneratorConfig& config);

/// Canonical (pre-pose) part offsets from the object center, pixels.
std::vector<std::pair<double, double>> canonical_part_offsets(std::size_t num_parts);

/// Renders one sample at an explicit similarity pose (deterministic given
/// its arguments; `generate` draws poses and delegates here).
Sample render_posed_sample(const GeneratorConfig& config, std::size_t class_label,
                           double rotation, double tx, double ty, double scale,
                           const std::vector<bool>& occluded, std::uint64_t noise_seed);

struct ConfusabilityReport {
    double max_class_distance = 0.0; // max pairwise chi-square between class
                                     // mean color histograms
    double threshold = 0.0;
    bool pass = false;
};

/// Rejects generator configs whose classes are separable by global color
/// statistics alone.
ConfusabilityReport holistic_confusability_check(const std::vector<Sample>& samples,
                                                 std::size_t num_classes,
                                                 double threshold = 0.015);

// On-disk layout: <dir>/{train,test}_NNNNN.ppm plus one JSON annotation
// file per split (<dir>/train.json, <dir>/test.json).
void save_dataset(const std::string& dir, const Dataset& ds);
struct LoadedSplit {
    std::vector<Sample> samples;
    std::size_t num_parts = 0;
    std::size_t num_classes = 0;
};
LoadedSplit load_split(const std::string& dir, const std::string& split);

/// Stacks sample images into a float tensor in [0, 1].
Tensor4<float> images_to_tensor(const std::vector<Sample>& samples, std::size_t first,
                                std::size_t count);

} // namespace partpool
