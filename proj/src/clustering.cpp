#include "ftea/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>

#include "ftea/errors.hpp"

namespace ftea {

namespace {

constexpr double kNormFloor = 1e-12;
constexpr int kPolishRounds = 50;

double dot(const double* a, const double* b, int c) {
    double s = 0.0;
    for (int i = 0; i < c; ++i) s += a[i] * b[i];
    return s;
}

double norm(const double* a, int c) { return std::sqrt(dot(a, a, c)); }

struct Modes {
    std::vector<std::vector<double>> dirs;  // unit vectors
    int c = 0;
    size_t count() const { return dirs.size(); }
};

// assignment = argmax cosine over modes; ties go to the lower index.
// Degenerate pixels have similarity 0 everywhere and land on mode 0.
std::vector<int> assign_all(const Tensor& rows, const Modes& modes) {
    const int hw = rows.dim(0), c = rows.dim(1);
    std::vector<int> out(static_cast<size_t>(hw), 0);
    for (int p = 0; p < hw; ++p) {
        const double* v = rows.data() + static_cast<size_t>(p) * c;
        double best = -2.0;
        int best_i = 0;
        for (size_t m = 0; m < modes.count(); ++m) {
            const double s = dot(v, modes.dirs[m].data(), c);
            if (s > best) {
                best = s;
                best_i = static_cast<int>(m);
            }
        }
        out[static_cast<size_t>(p)] = best_i;
    }
    return out;
}

// Lloyd rounds on the sphere until the assignment is a fixpoint of its own
// centroids; empty and all-degenerate clusters are dropped along the way.
void polish(const Tensor& rows, const std::vector<uint8_t>& degenerate, Modes& modes,
            std::vector<int>& assign) {
    const int hw = rows.dim(0), c = rows.dim(1);
    for (int round = 0; round < kPolishRounds; ++round) {
        std::vector<std::vector<double>> sums(modes.count(), std::vector<double>(static_cast<size_t>(c), 0.0));
        for (int p = 0; p < hw; ++p) {
            if (!degenerate.empty() && degenerate[static_cast<size_t>(p)]) continue;
            const double* v = rows.data() + static_cast<size_t>(p) * c;
            auto& s = sums[static_cast<size_t>(assign[static_cast<size_t>(p)])];
            for (int i = 0; i < c; ++i) s[static_cast<size_t>(i)] += v[i];
        }
        Modes next;
        next.c = c;
        for (auto& s : sums) {
            const double n = norm(s.data(), c);
            if (n <= kNormFloor) continue;
            for (double& x : s) x /= n;
            next.dirs.push_back(std::move(s));
        }
        if (next.dirs.empty()) return;  // nothing usable; keep previous modes
        std::vector<int> next_assign = assign_all(rows, next);
        const bool stable = modes.count() == next.count() && next_assign == assign;
        modes = std::move(next);
        assign = std::move(next_assign);
        if (stable) return;
    }
}

std::vector<int> cluster_sizes(const std::vector<int>& assign, size_t n) {
    std::vector<int> sizes(n, 0);
    for (int a : assign) ++sizes[static_cast<size_t>(a)];
    return sizes;
}

}  // namespace

void ClusterParams::validate() const {
    if (kappa <= 0.0) throw std::invalid_argument("ClusterParams: kappa must be > 0");
    if (seeds < 1) throw std::invalid_argument("ClusterParams: seeds must be >= 1");
    if (max_iters < 1) throw std::invalid_argument("ClusterParams: max_iters must be >= 1");
    if (tol <= 0.0) throw std::invalid_argument("ClusterParams: tol must be > 0");
    if (merge_cos <= 0.0 || merge_cos > 1.0)
        throw std::invalid_argument("ClusterParams: merge_cos must be in (0,1]");
    if (min_cluster_px < 0) throw std::invalid_argument("ClusterParams: min_cluster_px must be >= 0");
}

ClusterParams ClusterParams::defaults(int pixel_count) {
    ClusterParams p;
    p.min_cluster_px = std::max(1, pixel_count / 1000);
    return p;
}

ClusterSet meanshift_vmf(const Tensor& rows, const std::vector<uint8_t>& degenerate, int height,
                         int width, const ClusterParams& params,
                         std::vector<std::vector<double>>* density_log) {
    params.validate();
    if (rows.rank() != 2) throw std::invalid_argument("meanshift_vmf: embeddings must be [H*W,C]");
    const int hw = rows.dim(0), c = rows.dim(1);
    if (hw != height * width)
        throw std::invalid_argument("meanshift_vmf: rows " + std::to_string(hw) + " != " +
                                    std::to_string(height) + "*" + std::to_string(width));
    if (!degenerate.empty() && static_cast<int>(degenerate.size()) != hw)
        throw std::invalid_argument("meanshift_vmf: degenerate mask size mismatch");

    std::vector<int> active;
    active.reserve(static_cast<size_t>(hw));
    for (int p = 0; p < hw; ++p)
        if (degenerate.empty() || !degenerate[static_cast<size_t>(p)]) active.push_back(p);

    ClusterSet out;
    out.height = height;
    out.width = width;

    if (active.empty()) {
        // all-degenerate map: one catch-all cluster along the first axis
        out.n = 1;
        out.centroids = Tensor({1, c});
        out.centroids.raw()[0] = 1.0;
        out.assignments.assign(static_cast<size_t>(hw), 0);
        out.nearest.assign(static_cast<size_t>(hw), 0);
        return out;
    }

    auto row = [&](int p) { return rows.data() + static_cast<size_t>(p) * c; };

    // farthest-point seeding over the active pixels
    const int want_seeds = std::min<int>(params.seeds, static_cast<int>(active.size()));
    std::vector<int> seed_px;
    seed_px.push_back(active[0]);
    std::vector<double> best_cos(active.size(), -2.0);
    for (size_t i = 0; i < active.size(); ++i)
        best_cos[i] = dot(row(active[i]), row(seed_px[0]), c);
    while (static_cast<int>(seed_px.size()) < want_seeds) {
        size_t far = 0;
        for (size_t i = 1; i < active.size(); ++i)
            if (best_cos[i] < best_cos[far]) far = i;
        if (best_cos[far] >= 1.0 - 1e-12) break;  // every pixel coincides with a seed
        seed_px.push_back(active[far]);
        for (size_t i = 0; i < active.size(); ++i)
            best_cos[i] = std::max(best_cos[i], dot(row(active[i]), row(seed_px.back()), c));
    }

    // vMF mode iteration: z <- normalize(sum_x exp(kappa <z,v_x>) v_x)
    const double kappa = params.kappa;
    std::vector<std::vector<double>> modes_raw;
    std::vector<double> weights(active.size());
    for (int s = 0; s < static_cast<int>(seed_px.size()); ++s) {
        std::vector<double> z(row(seed_px[static_cast<size_t>(s)]), row(seed_px[static_cast<size_t>(s)]) + c);
        {
            const double zn = norm(z.data(), c);
            for (double& x : z) x /= zn;
        }
        std::vector<double> densities;
        for (int it = 0; it < params.max_iters; ++it) {
            double dmax = -2.0;
            for (size_t i = 0; i < active.size(); ++i) {
                weights[i] = dot(z.data(), row(active[i]), c);
                dmax = std::max(dmax, weights[i]);
            }
            double wsum = 0.0;
            for (double& wv : weights) {
                wv = std::exp(kappa * (wv - dmax));
                wsum += wv;
            }
            if (densities.empty()) densities.push_back(kappa * dmax + std::log(wsum));
            std::vector<double> znext(static_cast<size_t>(c), 0.0);
            for (size_t i = 0; i < active.size(); ++i) {
                const double* v = row(active[i]);
                for (int j = 0; j < c; ++j) znext[static_cast<size_t>(j)] += weights[i] * v[j];
            }
            const double zn = norm(znext.data(), c);
            if (zn <= kNormFloor) break;  // antipodal cancellation; keep current z
            for (double& x : znext) x /= zn;
            const double change = 1.0 - dot(z.data(), znext.data(), c);
            z = std::move(znext);
            // density at the new iterate
            double d2max = -2.0;
            double w2sum = 0.0;
            for (size_t i = 0; i < active.size(); ++i) {
                const double d = dot(z.data(), row(active[i]), c);
                d2max = std::max(d2max, d);
            }
            for (size_t i = 0; i < active.size(); ++i)
                w2sum += std::exp(kappa * (dot(z.data(), row(active[i]), c) - d2max));
            densities.push_back(kappa * d2max + std::log(w2sum));
            if (change < params.tol) break;
        }
        modes_raw.push_back(std::move(z));
        if (density_log) density_log->push_back(std::move(densities));
    }

    // merge converged modes by transitive cosine closeness, ascending order
    std::vector<int> group(modes_raw.size());
    std::iota(group.begin(), group.end(), 0);
    std::function<int(int)> find = [&](int i) {
        while (group[static_cast<size_t>(i)] != i) i = group[static_cast<size_t>(i)] = group[static_cast<size_t>(group[static_cast<size_t>(i)])];
        return i;
    };
    for (size_t i = 0; i < modes_raw.size(); ++i)
        for (size_t j = i + 1; j < modes_raw.size(); ++j)
            if (dot(modes_raw[i].data(), modes_raw[j].data(), c) >= params.merge_cos) {
                const int a = find(static_cast<int>(i)), b = find(static_cast<int>(j));
                if (a != b) group[static_cast<size_t>(std::max(a, b))] = std::min(a, b);
            }
    Modes modes;
    modes.c = c;
    std::vector<int> root_order;
    for (size_t i = 0; i < modes_raw.size(); ++i)
        if (find(static_cast<int>(i)) == static_cast<int>(i)) root_order.push_back(static_cast<int>(i));
    for (int r : root_order) {
        std::vector<double> mean(static_cast<size_t>(c), 0.0);
        for (size_t i = 0; i < modes_raw.size(); ++i)
            if (find(static_cast<int>(i)) == r)
                for (int j = 0; j < c; ++j) mean[static_cast<size_t>(j)] += modes_raw[i][static_cast<size_t>(j)];
        const double n = norm(mean.data(), c);
        if (n <= kNormFloor) {
            modes.dirs.push_back(modes_raw[static_cast<size_t>(r)]);
        } else {
            for (double& x : mean) x /= n;
            modes.dirs.push_back(std::move(mean));
        }
    }

    std::vector<int> assign = assign_all(rows, modes);
    polish(rows, degenerate, modes, assign);

    // dissolve undersized clusters, smallest first, re-polishing in between
    while (modes.count() > 1 && params.min_cluster_px > 0) {
        const auto sizes = cluster_sizes(assign, modes.count());
        size_t smallest = 0;
        for (size_t i = 1; i < sizes.size(); ++i)
            if (sizes[i] < sizes[smallest]) smallest = i;
        if (sizes[smallest] >= params.min_cluster_px) break;
        modes.dirs.erase(modes.dirs.begin() + static_cast<long>(smallest));
        assign = assign_all(rows, modes);
        polish(rows, degenerate, modes, assign);
    }

    out.n = static_cast<int>(modes.count());
    out.centroids = Tensor({out.n, c});
    for (int i = 0; i < out.n; ++i)
        std::copy(modes.dirs[static_cast<size_t>(i)].begin(), modes.dirs[static_cast<size_t>(i)].end(),
                  out.centroids.data() + static_cast<size_t>(i) * c);
    out.assignments = std::move(assign);

    out.nearest.resize(static_cast<size_t>(hw) * out.n);
    for (int p = 0; p < hw; ++p) {
        const auto order = nearest_clusters(row(p), c, out.centroids, out.n);
        std::copy(order.begin(), order.end(), out.nearest.begin() + static_cast<size_t>(p) * out.n);
    }
    return out;
}

Tensor compute_centroids(const Tensor& rows, const std::vector<int>& assignments, int n,
                         const std::vector<uint8_t>* degenerate) {
    if (rows.rank() != 2) throw std::invalid_argument("compute_centroids: embeddings must be [N,C]");
    const int c = rows.dim(1);
    const int count = rows.dim(0);
    if (static_cast<int>(assignments.size()) != count)
        throw std::invalid_argument("compute_centroids: assignment length mismatch");
    if (n < 1) throw std::invalid_argument("compute_centroids: n must be >= 1");

    Tensor centroids({n, c});
    std::vector<long long> members(static_cast<size_t>(n), 0);
    for (int p = 0; p < count; ++p) {
        const int a = assignments[static_cast<size_t>(p)];
        if (a < 0 || a >= n)
            throw std::invalid_argument("compute_centroids: assignment " + std::to_string(a) +
                                        " out of range");
        ++members[static_cast<size_t>(a)];
        if (degenerate && (*degenerate)[static_cast<size_t>(p)]) continue;
        const double* v = rows.data() + static_cast<size_t>(p) * c;
        double* cp = centroids.data() + static_cast<size_t>(a) * c;
        for (int j = 0; j < c; ++j) cp[j] += v[j];
    }
    for (int i = 0; i < n; ++i) {
        if (members[static_cast<size_t>(i)] == 0)
            throw std::invalid_argument("compute_centroids: cluster " + std::to_string(i) +
                                        " is empty");
        double* cp = centroids.data() + static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j) cp[j] /= static_cast<double>(members[static_cast<size_t>(i)]);
        const double nrm = norm(cp, c);
        if (nrm <= kNormFloor)
            throw std::runtime_error("compute_centroids: cluster " + std::to_string(i) +
                                     " has no usable member vectors");
        for (int j = 0; j < c; ++j) cp[j] /= nrm;
    }
    return centroids;
}

std::vector<int> nearest_clusters(const double* v, int c, const Tensor& centroids, int k) {
    if (k < 1) throw std::invalid_argument("nearest_clusters: k must be >= 1");
    const int n = centroids.dim(0);
    const double vn = norm(v, c);
    std::vector<std::pair<double, int>> sims(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* cp = centroids.data() + static_cast<size_t>(i) * c;
        const double cn = norm(cp, c);
        const double s = (vn <= kNormFloor || cn <= kNormFloor) ? 0.0 : dot(v, cp, c) / (vn * cn);
        sims[static_cast<size_t>(i)] = {s, i};
    }
    std::sort(sims.begin(), sims.end(),
              [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    std::vector<int> out;
    out.reserve(static_cast<size_t>(std::min(k, n)));
    for (int i = 0; i < std::min(k, n); ++i) out.push_back(sims[static_cast<size_t>(i)].second);
    return out;
}

std::vector<int> clusters_to_mask(const ClusterSet& clusters) {
    const int h = clusters.height, w = clusters.width;
    std::vector<long long> border(static_cast<size_t>(clusters.n), 0);
    std::vector<long long> total(static_cast<size_t>(clusters.n), 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int a = clusters.assignments[static_cast<size_t>(y) * w + x];
            ++total[static_cast<size_t>(a)];
            if (y == 0 || y == h - 1 || x == 0 || x == w - 1) ++border[static_cast<size_t>(a)];
        }
    int background = 0;
    for (int i = 1; i < clusters.n; ++i) {
        if (border[static_cast<size_t>(i)] > border[static_cast<size_t>(background)] ||
            (border[static_cast<size_t>(i)] == border[static_cast<size_t>(background)] &&
             total[static_cast<size_t>(i)] > total[static_cast<size_t>(background)]))
            background = i;
    }
    std::vector<int> relabel(static_cast<size_t>(clusters.n), 0);
    int next = 1;
    for (int i = 0; i < clusters.n; ++i)
        if (i != background) relabel[static_cast<size_t>(i)] = next++;
    std::vector<int> mask(clusters.assignments.size());
    for (size_t p = 0; p < mask.size(); ++p)
        mask[p] = relabel[static_cast<size_t>(clusters.assignments[p])];
    return mask;
}

}  // namespace ftea
