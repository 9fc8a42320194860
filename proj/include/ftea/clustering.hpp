#pragma once

#include <cstdint>
#include <vector>

#include "ftea/tensor.hpp"

namespace ftea {

struct ClusterParams {
    double kappa = 30.0;   // vMF concentration
    int seeds = 64;        // farthest-point seeds
    int max_iters = 100;   // per-seed mode iterations
    double tol = 1e-5;     // cosine-change convergence threshold
    double merge_cos = 0.95;
    int min_cluster_px = 0;  // 0 disables dissolution
    void validate() const;

    static ClusterParams defaults(int pixel_count);
};

// Instance assignment over one embedding map. Centroids are unit-norm
// member means; `nearest` holds, per pixel, all cluster indices ordered by
// descending cosine similarity (ties to the lower index), so the k-nearest
// set of any pixel is a prefix of its row.
struct ClusterSet {
    std::vector<int> assignments;  // H*W entries in 0..n-1
    Tensor centroids;              // [n, C]
    int n = 0;
    std::vector<int> nearest;  // H*W rows of n indices
    int height = 0, width = 0;

    const int* nearest_row(int pixel) const { return nearest.data() + static_cast<size_t>(pixel) * n; }
};

// Mean shift with the vMF kernel on unit-sphere embeddings. rows is the
// pixel-major [H*W, C] map; degenerate pixels are excluded from mode
// estimation and assigned at the end. If density_log is given, the vMF
// kernel density (as log-sum-exp) is recorded at every iterate of every
// seed, in iteration order.
ClusterSet meanshift_vmf(const Tensor& rows, const std::vector<uint8_t>& degenerate, int height,
                         int width, const ClusterParams& params,
                         std::vector<std::vector<double>>* density_log = nullptr);

// Unit-normalized member means; throws on an empty or zero-sum cluster.
Tensor compute_centroids(const Tensor& rows, const std::vector<int>& assignments, int n,
                         const std::vector<uint8_t>* degenerate = nullptr);

// Indices of the min(k,n) largest cosine similarities, descending, ties to
// the lower index.
std::vector<int> nearest_clusters(const double* v, int c, const Tensor& centroids, int k);

// Instance label image: the cluster owning the most border pixels becomes
// background 0; the rest are numbered 1..n' in cluster-index order.
std::vector<int> clusters_to_mask(const ClusterSet& clusters);

}  // namespace ftea
