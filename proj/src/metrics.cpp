#include "ftea/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "ftea/image_io.hpp"

namespace ftea {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<long long> object_areas(const InstanceLabeling& m) {
    std::vector<long long> areas(static_cast<size_t>(m.max_id()) + 1, 0);
    for (int id : m.ids) ++areas[static_cast<size_t>(id)];
    return areas;
}

double safe_ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

double f_measure(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

// Per-object boundary masks: a member pixel is boundary when a 4-neighbor
// lies outside the object or outside the image.
std::vector<std::vector<uint8_t>> boundaries(const InstanceLabeling& m) {
    const int h = m.height, w = m.width;
    std::vector<std::vector<uint8_t>> out(static_cast<size_t>(m.max_id()) + 1);
    for (auto& b : out) b.assign(static_cast<size_t>(h) * w, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int id = m.ids[static_cast<size_t>(y) * w + x];
            if (id == 0) continue;
            bool edge = y == 0 || y == h - 1 || x == 0 || x == w - 1;
            if (!edge) {
                edge = m.ids[static_cast<size_t>(y - 1) * w + x] != id ||
                       m.ids[static_cast<size_t>(y + 1) * w + x] != id ||
                       m.ids[static_cast<size_t>(y) * w + x - 1] != id ||
                       m.ids[static_cast<size_t>(y) * w + x + 1] != id;
            }
            if (edge) out[static_cast<size_t>(id)][static_cast<size_t>(y) * w + x] = 1;
        }
    return out;
}

std::vector<uint8_t> dilate_square(const std::vector<uint8_t>& mask, int h, int w, int radius) {
    if (radius <= 0) return mask;
    std::vector<uint8_t> out(mask.size(), 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!mask[static_cast<size_t>(y) * w + x]) continue;
            const int y0 = std::max(0, y - radius), y1 = std::min(h - 1, y + radius);
            const int x0 = std::max(0, x - radius), x1 = std::min(w - 1, x + radius);
            for (int yy = y0; yy <= y1; ++yy)
                for (int xx = x0; xx <= x1; ++xx) out[static_cast<size_t>(yy) * w + xx] = 1;
        }
    return out;
}

long long intersect_count(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    long long n = 0;
    for (size_t i = 0; i < a.size(); ++i) n += a[i] && b[i];
    return n;
}

long long mask_count(const std::vector<uint8_t>& a) {
    long long n = 0;
    for (uint8_t v : a) n += v;
    return n;
}

// intersection pixel counts keyed by (pred id, gt id), objects only
std::map<std::pair<int, int>, long long> intersections(const InstanceLabeling& pred,
                                                       const InstanceLabeling& gt) {
    std::map<std::pair<int, int>, long long> out;
    for (size_t i = 0; i < pred.ids.size(); ++i) {
        const int a = pred.ids[i], b = gt.ids[i];
        if (a > 0 && b > 0) ++out[{a, b}];
    }
    return out;
}

void check_compatible(const InstanceLabeling& pred, const InstanceLabeling& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw std::invalid_argument("metrics: prediction and ground truth dims differ");
    pred.validate();
    gt.validate();
}

}  // namespace

int InstanceLabeling::max_id() const {
    int m = 0;
    for (int id : ids) m = std::max(m, id);
    return m;
}

void InstanceLabeling::validate() const {
    if (height < 1 || width < 1 || ids.size() != static_cast<size_t>(height) * width)
        throw std::invalid_argument("InstanceLabeling: bad geometry");
    const int n = max_id();
    std::vector<char> seen(static_cast<size_t>(n) + 1, 0);
    for (int id : ids) {
        if (id < 0) throw std::invalid_argument("InstanceLabeling: negative id");
        seen[static_cast<size_t>(id)] = 1;
    }
    for (int i = 1; i <= n; ++i)
        if (!seen[static_cast<size_t>(i)])
            throw std::invalid_argument("InstanceLabeling: ids not contiguous, missing " +
                                        std::to_string(i));
}

InstanceLabeling normalize_labels(int height, int width, const std::vector<int>& raw) {
    InstanceLabeling out;
    out.height = height;
    out.width = width;
    out.ids.resize(raw.size());
    std::map<int, int> remap{{0, 0}};
    int next = 1;
    std::vector<int> sorted;
    for (int v : raw)
        if (v > 0) sorted.push_back(v);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (int v : sorted) remap[v] = next++;
    for (size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] < 0) throw std::invalid_argument("normalize_labels: negative id");
        out.ids[i] = remap[raw[i]];
    }
    return out;
}

std::vector<int> solve_max_assignment(const std::vector<std::vector<double>>& affinity) {
    const int rows = static_cast<int>(affinity.size());
    if (rows == 0) return {};
    const int cols = static_cast<int>(affinity[0].size());
    for (const auto& r : affinity)
        if (static_cast<int>(r.size()) != cols)
            throw std::invalid_argument("solve_max_assignment: ragged affinity matrix");
    if (cols == 0) return std::vector<int>(static_cast<size_t>(rows), -1);

    if (rows > cols) {
        // transpose, solve, invert
        std::vector<std::vector<double>> t(static_cast<size_t>(cols),
                                           std::vector<double>(static_cast<size_t>(rows)));
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) t[static_cast<size_t>(j)][static_cast<size_t>(i)] = affinity[static_cast<size_t>(i)][static_cast<size_t>(j)];
        const auto col_to_row = solve_max_assignment(t);
        std::vector<int> out(static_cast<size_t>(rows), -1);
        for (int j = 0; j < cols; ++j)
            if (col_to_row[static_cast<size_t>(j)] >= 0) out[static_cast<size_t>(col_to_row[static_cast<size_t>(j)])] = j;
        return out;
    }

    // shortest augmenting path with potentials on the min-cost form
    double amax = 0.0;
    for (const auto& r : affinity)
        for (double v : r) {
            if (v < 0.0) throw std::invalid_argument("solve_max_assignment: negative affinity");
            amax = std::max(amax, v);
        }
    auto cost = [&](int i, int j) { return amax - affinity[static_cast<size_t>(i)][static_cast<size_t>(j)]; };

    std::vector<double> u(static_cast<size_t>(rows) + 1, 0.0), v(static_cast<size_t>(cols) + 1, 0.0);
    std::vector<int> match(static_cast<size_t>(cols) + 1, 0);  // column -> row, 1-based
    std::vector<int> way(static_cast<size_t>(cols) + 1, 0);
    for (int i = 1; i <= rows; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(cols) + 1, kInf);
        std::vector<char> used(static_cast<size_t>(cols) + 1, 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            const int i0 = match[static_cast<size_t>(j0)];
            double delta = kInf;
            int j1 = -1;
            for (int j = 1; j <= cols; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= cols; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(match[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<size_t>(j0)];
            match[static_cast<size_t>(j0)] = match[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> out(static_cast<size_t>(rows), -1);
    for (int j = 1; j <= cols; ++j)
        if (match[static_cast<size_t>(j)] > 0) out[static_cast<size_t>(match[static_cast<size_t>(j)]) - 1] = j - 1;
    return out;
}

std::vector<std::pair<int, int>> hungarian_match(const InstanceLabeling& pred,
                                                 const InstanceLabeling& gt) {
    check_compatible(pred, gt);
    const int np = pred.max_id(), ng = gt.max_id();
    if (np == 0 || ng == 0) return {};

    const auto inter = intersections(pred, gt);
    const auto pa = object_areas(pred);
    const auto ga = object_areas(gt);
    std::vector<std::vector<double>> affinity(static_cast<size_t>(np),
                                              std::vector<double>(static_cast<size_t>(ng), 0.0));
    for (const auto& [key, count] : inter) {
        const auto [pi, gi] = key;
        affinity[static_cast<size_t>(pi) - 1][static_cast<size_t>(gi) - 1] =
            2.0 * static_cast<double>(count) /
            static_cast<double>(pa[static_cast<size_t>(pi)] + ga[static_cast<size_t>(gi)]);
    }
    const auto row_to_col = solve_max_assignment(affinity);
    std::vector<std::pair<int, int>> out;
    for (int i = 0; i < np; ++i) {
        const int j = row_to_col[static_cast<size_t>(i)];
        if (j >= 0 && affinity[static_cast<size_t>(i)][static_cast<size_t>(j)] > 0.0)
            out.emplace_back(i + 1, j + 1);
    }
    return out;
}

PRF overlap_prf(const InstanceLabeling& pred, const InstanceLabeling& gt,
                const std::vector<std::pair<int, int>>& matching) {
    check_compatible(pred, gt);
    const auto pa = object_areas(pred);
    const auto ga = object_areas(gt);
    long long pred_total = 0, gt_total = 0;
    for (size_t i = 1; i < pa.size(); ++i) pred_total += pa[i];
    for (size_t j = 1; j < ga.size(); ++j) gt_total += ga[j];

    if (pred_total == 0 && gt_total == 0) return {100.0, 100.0, 100.0};

    const auto inter = intersections(pred, gt);
    long long matched = 0;
    for (const auto& [pi, gi] : matching) {
        auto it = inter.find({pi, gi});
        if (it != inter.end()) matched += it->second;
    }
    PRF out;
    out.p = 100.0 * safe_ratio(static_cast<double>(matched), static_cast<double>(pred_total));
    out.r = 100.0 * safe_ratio(static_cast<double>(matched), static_cast<double>(gt_total));
    out.f = f_measure(out.p, out.r);
    return out;
}

PRF boundary_prf(const InstanceLabeling& pred, const InstanceLabeling& gt,
                 const std::vector<std::pair<int, int>>& matching, int dilation_radius) {
    check_compatible(pred, gt);
    if (dilation_radius < 0) throw std::invalid_argument("boundary_prf: radius must be >= 0");
    const int h = pred.height, w = pred.width;
    const auto pb = boundaries(pred);
    const auto gb = boundaries(gt);

    long long pred_total = 0, gt_total = 0;
    for (size_t i = 1; i < pb.size(); ++i) pred_total += mask_count(pb[i]);
    for (size_t j = 1; j < gb.size(); ++j) gt_total += mask_count(gb[j]);
    if (pred_total == 0 && gt_total == 0) return {100.0, 100.0, 100.0};

    long long p_num = 0, r_num = 0;
    for (const auto& [pi, gi] : matching) {
        const auto& pmask = pb[static_cast<size_t>(pi)];
        const auto& gmask = gb[static_cast<size_t>(gi)];
        p_num += intersect_count(pmask, dilate_square(gmask, h, w, dilation_radius));
        r_num += intersect_count(dilate_square(pmask, h, w, dilation_radius), gmask);
    }
    PRF out;
    out.p = 100.0 * safe_ratio(static_cast<double>(p_num), static_cast<double>(pred_total));
    out.r = 100.0 * safe_ratio(static_cast<double>(r_num), static_cast<double>(gt_total));
    out.f = f_measure(out.p, out.r);
    return out;
}

double f_at_75(const InstanceLabeling& pred, const InstanceLabeling& gt,
               const std::vector<std::pair<int, int>>& matching) {
    check_compatible(pred, gt);
    const int ng = gt.max_id();
    if (ng == 0) return 100.0;
    const auto inter = intersections(pred, gt);
    const auto pa = object_areas(pred);
    const auto ga = object_areas(gt);
    int hits = 0;
    for (const auto& [pi, gi] : matching) {
        auto it = inter.find({pi, gi});
        const long long common = it == inter.end() ? 0 : it->second;
        const double f = 2.0 * static_cast<double>(common) /
                         static_cast<double>(pa[static_cast<size_t>(pi)] + ga[static_cast<size_t>(gi)]);
        if (f >= 0.75) ++hits;
    }
    return 100.0 * hits / ng;
}

ImageMetrics evaluate_image(const InstanceLabeling& pred, const InstanceLabeling& gt,
                            int boundary_radius) {
    const auto matching = hungarian_match(pred, gt);
    ImageMetrics m;
    m.overlap = overlap_prf(pred, gt, matching);
    m.boundary = boundary_prf(pred, gt, matching, boundary_radius);
    m.f_at_75 = f_at_75(pred, gt, matching);
    return m;
}

ImageMetrics aggregate_metrics(const std::vector<ImageMetrics>& per_image) {
    ImageMetrics agg;
    if (per_image.empty()) return agg;
    for (const auto& m : per_image) {
        agg.overlap.p += m.overlap.p;
        agg.overlap.r += m.overlap.r;
        agg.overlap.f += m.overlap.f;
        agg.boundary.p += m.boundary.p;
        agg.boundary.r += m.boundary.r;
        agg.boundary.f += m.boundary.f;
        agg.f_at_75 += m.f_at_75;
    }
    const double n = static_cast<double>(per_image.size());
    agg.overlap.p /= n;
    agg.overlap.r /= n;
    agg.overlap.f /= n;
    agg.boundary.p /= n;
    agg.boundary.r /= n;
    agg.boundary.f /= n;
    agg.f_at_75 /= n;
    return agg;
}

InstanceLabeling read_mask_pgm(const std::filesystem::path& path) {
    const Pgm16 img = read_pgm16(path);
    std::vector<int> raw(img.values.begin(), img.values.end());
    InstanceLabeling out = normalize_labels(img.height, img.width, raw);
    out.validate();
    return out;
}

void write_mask_pgm(const std::filesystem::path& path, const InstanceLabeling& mask) {
    mask.validate();
    std::vector<uint16_t> values(mask.ids.size());
    for (size_t i = 0; i < values.size(); ++i) values[i] = static_cast<uint16_t>(mask.ids[i]);
    write_pgm16(path, mask.height, mask.width, values);
}

}  // namespace ftea
