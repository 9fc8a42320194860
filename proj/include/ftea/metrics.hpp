#pragma once

#include <filesystem>
#include <utility>
#include <vector>

namespace ftea {

// Instance label image: 0 is background, object ids are 1..n contiguous.
struct InstanceLabeling {
    int height = 0, width = 0;
    std::vector<int> ids;

    int max_id() const;
    void validate() const;
};

// Remaps arbitrary nonnegative ids onto 0 plus a contiguous 1..n.
InstanceLabeling normalize_labels(int height, int width, const std::vector<int>& raw);

struct PRF {
    double p = 0.0, r = 0.0, f = 0.0;  // all in [0,100]
};

struct ImageMetrics {
    PRF overlap, boundary;
    double f_at_75 = 0.0;
};

// Max-total-affinity one-to-one assignment, rows to columns; -1 for
// unassigned rows. Affinities must be >= 0.
std::vector<int> solve_max_assignment(const std::vector<std::vector<double>>& affinity);

// Hungarian matching on the per-object F-measure affinity
// 2|c∩g| / (|c|+|g|); zero-affinity pairs stay unmatched. Returns
// (pred id, gt id) pairs.
std::vector<std::pair<int, int>> hungarian_match(const InstanceLabeling& pred,
                                                 const InstanceLabeling& gt);

PRF overlap_prf(const InstanceLabeling& pred, const InstanceLabeling& gt,
                const std::vector<std::pair<int, int>>& matching);

// Object boundaries are pixels with a 4-neighbor outside the object (the
// image border counts as outside); tolerance is a square dilation.
PRF boundary_prf(const InstanceLabeling& pred, const InstanceLabeling& gt,
                 const std::vector<std::pair<int, int>>& matching, int dilation_radius = 1);

// Percentage of ground-truth objects matched with per-object overlap
// F >= 0.75. 100 when there are no ground-truth objects.
double f_at_75(const InstanceLabeling& pred, const InstanceLabeling& gt,
               const std::vector<std::pair<int, int>>& matching);

ImageMetrics evaluate_image(const InstanceLabeling& pred, const InstanceLabeling& gt,
                            int boundary_radius = 1);

// Mean of the per-image values.
ImageMetrics aggregate_metrics(const std::vector<ImageMetrics>& per_image);

struct MetricsReport {
    ImageMetrics aggregate;
    std::vector<ImageMetrics> per_image;
};

InstanceLabeling read_mask_pgm(const std::filesystem::path& path);
void write_mask_pgm(const std::filesystem::path& path, const InstanceLabeling& mask);

}  // namespace ftea
