#include "ftea/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "ftea/rng.hpp"

namespace ftea {

namespace {
constexpr double kLn2 = 0.6931471805599453;
}

void LossConfig::validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0)
        throw std::invalid_argument("LossConfig: lambda weights must be >= 0");
    if (k < 1) throw std::invalid_argument("LossConfig: k must be >= 1");
    if (temperature <= 0.0) throw std::invalid_argument("LossConfig: temperature must be > 0");
    if (sample_px < 1) throw std::invalid_argument("LossConfig: sample_px must be >= 1");
}

ProbabilityRow nonparam_prob(const double* v, int c, const Tensor& centroids,
                             const std::vector<int>& support, double temperature) {
    if (support.empty()) throw std::invalid_argument("nonparam_prob: empty support");
    if (temperature <= 0.0) throw std::invalid_argument("nonparam_prob: T must be > 0");
    const int n = centroids.dim(0);
    double vn = 0.0;
    for (int j = 0; j < c; ++j) vn += v[j] * v[j];
    vn = std::sqrt(vn);

    ProbabilityRow row;
    row.indices = support;
    row.probs.resize(support.size());
    std::vector<double> sims(support.size());
    for (size_t i = 0; i < support.size(); ++i) {
        const int idx = support[i];
        if (idx < 0 || idx >= n)
            throw std::invalid_argument("nonparam_prob: support index " + std::to_string(idx) +
                                        " out of range");
        const double* cp = centroids.data() + static_cast<size_t>(idx) * c;
        double dot = 0.0, cn = 0.0;
        for (int j = 0; j < c; ++j) {
            dot += v[j] * cp[j];
            cn += cp[j] * cp[j];
        }
        cn = std::sqrt(cn);
        sims[i] = (vn <= 1e-12 || cn <= 1e-12) ? 0.0 : dot / (vn * cn);
    }
    const double smax = *std::max_element(sims.begin(), sims.end());
    double denom = 0.0;
    for (size_t i = 0; i < support.size(); ++i) {
        row.probs[i] = std::exp((sims[i] - smax) / temperature);
        denom += row.probs[i];
    }
    for (double& p : row.probs) p /= denom;
    return row;
}

std::vector<int> sample_pixels(const std::vector<uint8_t>& degenerate, int pixel_count,
                               int sample_px, uint64_t seed) {
    std::vector<int> eligible;
    eligible.reserve(static_cast<size_t>(pixel_count));
    for (int p = 0; p < pixel_count; ++p)
        if (degenerate.empty() || !degenerate[static_cast<size_t>(p)]) eligible.push_back(p);
    const int take = std::min<int>(sample_px, static_cast<int>(eligible.size()));
    Rng rng = make_rng(mix_seed(seed, 0x9a3e));
    for (int i = 0; i < take; ++i) {
        std::uniform_int_distribution<size_t> pick(static_cast<size_t>(i), eligible.size() - 1);
        std::swap(eligible[static_cast<size_t>(i)], eligible[pick(rng)]);
    }
    eligible.resize(static_cast<size_t>(take));
    return eligible;
}

Node* neo_loss(Graph& g, Node* fused_rows, const std::vector<uint8_t>& degenerate,
               const ClusterSet& clusters, const LossConfig& cfg) {
    cfg.validate();
    const auto positions =
        sample_pixels(degenerate, fused_rows->value.dim(0), cfg.sample_px, cfg.rng_seed);
    return neo_loss_at(g, fused_rows, positions, clusters, cfg);
}

Node* neo_loss_at(Graph& g, Node* fused_rows, const std::vector<int>& positions,
                  const ClusterSet& clusters, const LossConfig& cfg) {
    if (clusters.n < 1) throw std::invalid_argument("neo_loss: no clusters");
    if (positions.empty()) return g.constant(Tensor::scalar(0.0));
    const int k_eff = std::min(cfg.k, clusters.n);

    std::vector<std::vector<int>> supports;
    supports.reserve(positions.size());
    for (int p : positions) {
        const int* order = clusters.nearest_row(p);
        supports.emplace_back(order, order + k_eff);
    }

    Node* rows = g.gather_rows(fused_rows, positions);
    Node* sims = g.cosine_sim(rows, g.constant(clusters.centroids));
    Node* sel = g.take_per_row(sims, std::move(supports));
    Node* probs = g.softmax_temp(sel, 1.0);
    Node* plogp = g.mul(probs, g.log_floor(probs));
    Node* ent = g.mean_all(g.row_sum(plogp));
    return g.scale(ent, -1.0 / kLn2);  // bits
}

CkdArtifacts make_ckd_artifacts(const ForwardResult& fwd, const ClusterSet& clusters,
                                const LossConfig& cfg) {
    cfg.validate();
    if (clusters.n < 1) throw std::invalid_argument("ckd_loss: no clusters");
    CkdArtifacts art;
    art.positions = sample_pixels(fwd.fused_degenerate, fwd.fused->value.dim(0), cfg.sample_px,
                                  cfg.rng_seed);

    const int n = clusters.n;
    std::vector<int> all(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;

    const int c = fwd.fused->value.dim(1);
    const int p_count = static_cast<int>(art.positions.size());
    art.teacher_probs = Tensor({std::max(p_count, 1), n});
    art.teacher_logp = Tensor({std::max(p_count, 1), n});
    for (int i = 0; i < p_count; ++i) {
        const double* v = fwd.fused->value.data() + static_cast<size_t>(art.positions[static_cast<size_t>(i)]) * c;
        const auto row = nonparam_prob(v, c, clusters.centroids, all, cfg.temperature);
        for (int j = 0; j < n; ++j) {
            art.teacher_probs.at2(i, j) = row.probs[static_cast<size_t>(j)];
            art.teacher_logp.at2(i, j) = std::log(std::max(row.probs[static_cast<size_t>(j)], 1e-12));
        }
    }

    // per-modality centroids under the teacher's assignments
    art.rgb_centroids = compute_centroids(fwd.rgb_only->value, clusters.assignments, n,
                                          &fwd.rgb_degenerate);
    art.depth_centroids = compute_centroids(fwd.depth_only->value, clusters.assignments, n,
                                            &fwd.depth_degenerate);
    return art;
}

Node* ckd_loss(Graph& g, const ForwardResult& fwd, const ClusterSet& clusters,
               const LossConfig& cfg) {
    return ckd_loss_at(g, fwd, make_ckd_artifacts(fwd, clusters, cfg), cfg);
}

Node* ckd_loss_at(Graph& g, const ForwardResult& fwd, const CkdArtifacts& art,
                  const LossConfig& cfg) {
    if (art.positions.empty()) return g.constant(Tensor::scalar(0.0));

    Node* p_const = g.constant(art.teacher_probs);
    Node* logp_const = g.constant(art.teacher_logp);

    auto kl_to_student = [&](Node* student_rows, const Tensor& centroids) {
        Node* rows = g.gather_rows(student_rows, art.positions);
        Node* sims = g.cosine_sim(rows, g.constant(centroids));
        Node* q = g.softmax_temp(sims, cfg.temperature);
        Node* diff = g.sub(logp_const, g.log_floor(q));
        return g.mean_all(g.row_sum(g.mul(p_const, diff)));
    };

    Node* kl_rgb = kl_to_student(fwd.rgb_only, art.rgb_centroids);
    Node* kl_depth = kl_to_student(fwd.depth_only, art.depth_centroids);
    return g.weighted_sum({kl_rgb, kl_depth}, {0.5, 0.5});
}

Node* total_loss(Graph& g, Node* neo, Node* ckd, const LossConfig& cfg) {
    return g.weighted_sum({neo, ckd}, {cfg.lambda1, cfg.lambda2});
}

Node* pretrain_loss(Graph& g, Node* fused_rows, const std::vector<uint8_t>& degenerate,
                    const std::vector<int>& gt_labels, const LossConfig& cfg) {
    cfg.validate();
    const int hw = fused_rows->value.dim(0);
    if (static_cast<int>(gt_labels.size()) != hw)
        throw std::invalid_argument("pretrain_loss: label map size mismatch");

    // regions are the distinct labels, background included
    std::vector<int> sorted = gt_labels;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    if (sorted.size() < 2)
        throw std::invalid_argument("pretrain_loss: mask has fewer than two regions");
    const int regions = static_cast<int>(sorted.size());
    std::vector<int> region_of(gt_labels.size());
    for (size_t p = 0; p < gt_labels.size(); ++p)
        region_of[p] = static_cast<int>(
            std::lower_bound(sorted.begin(), sorted.end(), gt_labels[p]) - sorted.begin());

    const Tensor centroids =
        compute_centroids(fused_rows->value, region_of, regions, degenerate.empty() ? nullptr : &degenerate);

    const auto positions = sample_pixels(degenerate, hw, cfg.sample_px, cfg.rng_seed);
    if (positions.empty()) return g.constant(Tensor::scalar(0.0));

    std::vector<std::vector<int>> truth;
    truth.reserve(positions.size());
    for (int p : positions) truth.push_back({region_of[static_cast<size_t>(p)]});

    Node* rows = g.gather_rows(fused_rows, positions);
    Node* sims = g.cosine_sim(rows, g.constant(centroids));
    Node* logq = g.log_floor(g.softmax_temp(sims, 1.0));
    Node* picked = g.take_per_row(logq, std::move(truth));
    return g.scale(g.mean_all(picked), -1.0);
}

}  // namespace ftea
