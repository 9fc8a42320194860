#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ftea/adapt.hpp"
#include "ftea/metrics.hpp"
#include "ftea/net.hpp"

namespace ftea {

struct PretrainConfig {
    int steps = 2000;
    double lr = 0.1;
    uint64_t seed = 0;
    int sample_px = 1024;
};

struct PretrainRecord {
    int step = 0;
    double loss = 0.0;
    bool skipped = false;
};

// Supervised warm-up on clean scenes: cross-entropy against ground-truth
// region centroids, plain SGD on every parameter, BN running stats updated
// each step. Images cycle in order; single-region images are skipped.
std::vector<PretrainRecord> pretrain_run(Model& model, const std::vector<SceneInput>& inputs,
                                         const std::vector<InstanceLabeling>& labels,
                                         const PretrainConfig& cfg);

void write_pretrain_trace_jsonl(const std::vector<PretrainRecord>& trace,
                                const std::filesystem::path& path);

// Eval-mode forward, mean shift on the fused map, border-dominant cluster
// as background, then Hungarian-matched metrics against the ground truth.
MetricsReport evaluate_model(const Model& model, const std::vector<SceneInput>& inputs,
                             const std::vector<InstanceLabeling>& labels,
                             const ClusterParams& cluster, int boundary_radius = 1);

// Prediction for a single input with the current weights (eval mode).
InstanceLabeling predict_mask(const Model& model, const SceneInput& input,
                              const ClusterParams& cluster);

void write_report_json(const MetricsReport& report, const std::filesystem::path& path);

// FNV-1a over the serialized conv tensors; BN state excluded. Used to
// check that adaptation leaves convolutions untouched.
uint64_t conv_weights_hash(const Model& model);

}  // namespace ftea
