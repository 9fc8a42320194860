#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ftea/clustering.hpp"
#include "ftea/dataset.hpp"
#include "ftea/net.hpp"
#include "ftea/objectives.hpp"

namespace ftea {

struct AdaptConfig {
    double base_lr = 0.005;
    int warmup_iters = 100;
    int total_iters = 500;
    double bn_momentum = 0.5;
    LossConfig loss;
    ClusterParams cluster;
    bool shuffle = false;
    uint64_t shuffle_seed = 0;
    bool adapt_rgb = true;
    bool adapt_depth = true;

    void validate() const;
};

struct TraceRecord {
    int iter = 0;
    double lr = 0.0;
    double l_neo = 0.0, l_ckd = 0.0, l_total = 0.0;
    int n = 0;
    double step_ms = 0.0;
    bool skipped = false;
};

using AdaptTrace = std::vector<TraceRecord>;

// Linear warmup to base_lr, then cosine decay to 0 over the remainder.
double lr_at(int iter, const AdaptConfig& cfg);

// One unsupervised step: train-mode forward, cluster the fused map, build
// the weighted objective, backpropagate, and apply a plain SGD update to
// the BN gamma/beta of the selected streams. Running statistics of the
// selected streams are folded in from the same forward pass. Conv tensors
// are never touched. On clustering failure the model is left unchanged and
// the record is marked skipped.
TraceRecord adapt_step(Model& model, const SceneInput& input, int iter, const AdaptConfig& cfg,
                       GradMap* grads_out = nullptr);

// Cycles through the sequence in order (or a seeded per-epoch permutation
// when shuffle is set) for total_iters steps.
AdaptTrace adapt_run(Model& model, const std::vector<SceneInput>& sequence,
                     const AdaptConfig& cfg);

void write_trace_jsonl(const AdaptTrace& trace, const std::filesystem::path& path);

// Mean NEO entropy of one input under the current model, computed exactly
// as adapt_step would at the given iteration; used to probe progress
// without updating anything.
double probe_neo_entropy(const Model& model, const SceneInput& input, int iter,
                         const AdaptConfig& cfg);

}  // namespace ftea
