#pragma once

#include <cstdint>
#include <vector>

#include "ftea/clustering.hpp"
#include "ftea/graph.hpp"
#include "ftea/net.hpp"

namespace ftea {

struct LossConfig {
    double lambda1 = 1.0;  // weight on the entropy objective
    double lambda2 = 1.0;  // weight on the distillation objective
    int k = 2;             // nearest-cluster count for the entropy objective
    double temperature = 1.0;
    int sample_px = 1024;  // pixels sampled per iteration
    uint64_t rng_seed = 0;
    void validate() const;
};

// One pixel's class distribution over a cluster support set.
struct ProbabilityRow {
    std::vector<int> indices;
    std::vector<double> probs;
};

// probs_i = exp(cos(v,c_i)/T) / sum_j exp(cos(v,c_j)/T) over the support.
// Differentiable uses go through the graph ops; this is the value-level form.
ProbabilityRow nonparam_prob(const double* v, int c, const Tensor& centroids,
                             const std::vector<int>& support, double temperature);

// Seeded draw without replacement from the non-degenerate pixels; both
// losses of one iteration call this with the same config and therefore see
// the same pixels.
std::vector<int> sample_pixels(const std::vector<uint8_t>& degenerate, int pixel_count,
                               int sample_px, uint64_t seed);

// Mean Shannon entropy (bits) of the per-pixel distribution over the k
// nearest clusters. Centroids and cluster structure are fixed inputs;
// gradients flow only through the embedding map.
Node* neo_loss(Graph& graph, Node* fused_rows, const std::vector<uint8_t>& degenerate,
               const ClusterSet& clusters, const LossConfig& cfg);
Node* neo_loss_at(Graph& graph, Node* fused_rows, const std::vector<int>& positions,
                  const ClusterSet& clusters, const LossConfig& cfg);

// Detached distillation targets: teacher rows from the fused map plus
// per-modality centroids under the teacher's assignments.
struct CkdArtifacts {
    std::vector<int> positions;
    Tensor teacher_probs;   // [P, n]
    Tensor teacher_logp;    // [P, n], ln of teacher_probs
    Tensor rgb_centroids;   // [n, C]
    Tensor depth_centroids; // [n, C]
};

CkdArtifacts make_ckd_artifacts(const ForwardResult& fwd, const ClusterSet& clusters,
                                const LossConfig& cfg);

// Mean over pixels of (KL(t||s_rgb) + KL(t||s_d)) / 2 in nats.
Node* ckd_loss(Graph& graph, const ForwardResult& fwd, const ClusterSet& clusters,
               const LossConfig& cfg);
Node* ckd_loss_at(Graph& graph, const ForwardResult& fwd, const CkdArtifacts& art,
                  const LossConfig& cfg);

// lambda1 * neo + lambda2 * ckd
Node* total_loss(Graph& graph, Node* neo, Node* ckd, const LossConfig& cfg);

// Mean cross-entropy -ln P(true region | v, centroids, T=1) against
// detached centroids of the ground-truth regions (background included as a
// region). Throws if the mask has fewer than two regions.
Node* pretrain_loss(Graph& graph, Node* fused_rows, const std::vector<uint8_t>& degenerate,
                    const std::vector<int>& gt_labels, const LossConfig& cfg);

}  // namespace ftea
