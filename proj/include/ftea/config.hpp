#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ftea/adapt.hpp"
#include "ftea/net.hpp"
#include "ftea/pipeline.hpp"
#include "ftea/scenegen.hpp"

namespace ftea {

// Flat TOML subset: `key = value` lines with #-comments; values are quoted
// strings, booleans, integers, or floats. No tables.
class FlatToml {
public:
    static FlatToml parse(const std::string& text);
    static FlatToml parse_file(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::vector<std::string> keys() const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

private:
    enum class Kind { string, number, boolean, integer };
    struct Value {
        Kind kind;
        std::string str;
        double num = 0.0;
        long long integer = 0;
        bool flag = false;
    };
    std::map<std::string, Value> values_;
};

// Full run configuration with the defaults used throughout; any field can
// come from a config file, and CLI flags override file values.
struct RunConfig {
    // scene generation
    int height = 64, width = 64;
    int objects_min = 2, objects_max = 5;
    int min_area_px = 30;
    std::string profile = "none";
    int depth_boundary_jitter_px = 0;
    double depth_noise_std_mm = 0.0;
    double illumination_gain = 0.0;
    double hue_shift = 0.0;
    double texture_noise_std = 0.0;
    uint64_t seed = 0;

    // network
    int embed_dim = 8;
    double depth_scale = 0.001;

    // clustering
    double kappa = 30.0;
    int cluster_seeds = 64;
    int cluster_max_iters = 100;
    double cluster_tol = 1e-5;
    double merge_cos = 0.95;
    double min_cluster_frac = 0.001;

    // objectives
    double lambda1 = 1.0, lambda2 = 1.0;
    int k = 2;
    double temperature = 1.0;
    int sample_px = 1024;

    // adaptation
    double base_lr = 0.005;
    int warmup_iters = 100;
    int total_iters = 500;
    double bn_momentum = 0.5;
    bool shuffle = false;
    std::string modalities = "rgb,depth";

    // pretraining
    int pretrain_steps = 2000;
    double pretrain_lr = 0.1;

    // evaluation
    int boundary_radius = 1;

    static RunConfig from_toml(const FlatToml& toml);
    void validate() const;

    ShiftProfile resolve_profile() const;
    SceneConfig scene_config() const;
    NetworkSpec network_spec() const;
    NetworkSpec network_spec(int h, int w) const;
    ClusterParams cluster_params(int pixel_count) const;
    LossConfig loss_config() const;
    AdaptConfig adapt_config(int pixel_count) const;
    PretrainConfig pretrain_config() const;
};

const std::vector<std::string>& known_profiles();

}  // namespace ftea
