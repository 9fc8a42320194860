#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ftea/metrics.hpp"
#include "ftea/tensor.hpp"

namespace ftea {

// Target-domain corruption strengths. The "none" profile is all zeros; a
// zero illumination_gain means no gain is applied.
struct ShiftProfile {
    int depth_boundary_jitter_px = 0;
    double depth_noise_std_mm = 0.0;
    double illumination_gain = 0.0;
    double hue_shift = 0.0;
    double texture_noise_std = 0.0;

    static ShiftProfile none() { return {}; }
    static ShiftProfile shifted() { return {2, 5.0, 1.3, 0.1, 0.05}; }
    void validate() const;
};

struct SceneConfig {
    int height = 64, width = 64;
    int objects_min = 2, objects_max = 5;
    int min_area_px = 30;
    void validate() const;
};

struct SceneSample {
    Tensor rgb;    // [3,H,W], quantized to the 8-bit grid
    Tensor depth;  // [1,H,W] millimeters, quantized to integers
    InstanceLabeling labels;
    uint64_t seed = 0;
    int object_count = 0;
    std::string profile_name;
    // table plane in millimeters: base + sx*x + sy*y
    double table_base = 0.0, table_sx = 0.0, table_sy = 0.0;
    std::vector<int> object_heights_mm;  // indexed by instance id - 1

    double table_depth_mm(int x, int y) const { return table_base + table_sx * x + table_sy * y; }
};

// Deterministic: one seed fixes the geometry, and the corruption draws use
// an independent stream, so labels are identical across profiles.
SceneSample gen_scene(uint64_t seed, const SceneConfig& config, const ShiftProfile& profile,
                      const std::string& profile_name = "custom");

struct DatasetManifest {
    int count = 0;
    int height = 0, width = 0;
    uint64_t base_seed = 0;
    std::string profile_name;
    struct Entry {
        uint64_t seed = 0;
        std::string rgb, depth, labels;  // relative to the manifest directory
    };
    std::vector<Entry> samples;
};

// Writes count scenes (PPM + two PGMs each) plus manifest.json. Re-running
// with the same arguments reproduces byte-identical files.
DatasetManifest gen_dataset(const SceneConfig& config, const ShiftProfile& profile, int count,
                            uint64_t base_seed, const std::filesystem::path& out_dir,
                            const std::string& profile_name);

DatasetManifest read_manifest(const std::filesystem::path& manifest_path);

}  // namespace ftea
