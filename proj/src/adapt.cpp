#include "ftea/adapt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ftea/errors.hpp"
#include "ftea/rng.hpp"

namespace ftea {

void AdaptConfig::validate() const {
    if (base_lr <= 0.0) throw std::invalid_argument("AdaptConfig: base_lr must be > 0");
    if (warmup_iters < 0 || total_iters < 0 || warmup_iters > total_iters)
        throw std::invalid_argument("AdaptConfig: need 0 <= warmup_iters <= total_iters");
    if (bn_momentum <= 0.0 || bn_momentum > 1.0)
        throw std::invalid_argument("AdaptConfig: bn_momentum must be in (0,1]");
    if (!adapt_rgb && !adapt_depth)
        throw std::invalid_argument("AdaptConfig: modality mask must select at least one stream");
    loss.validate();
    cluster.validate();
}

double lr_at(int iter, const AdaptConfig& cfg) {
    if (iter < 0 || iter >= cfg.total_iters)
        throw std::invalid_argument("lr_at: iteration " + std::to_string(iter) +
                                    " outside [0," + std::to_string(cfg.total_iters) + ")");
    if (iter < cfg.warmup_iters)
        return cfg.base_lr * static_cast<double>(iter + 1) / cfg.warmup_iters;
    const double span = static_cast<double>(cfg.total_iters - cfg.warmup_iters);
    const double t = static_cast<double>(iter - cfg.warmup_iters);
    return cfg.base_lr * 0.5 * (1.0 + std::cos(M_PI * t / span));
}

namespace {

// "rgb.0.gamma" -> stream + role
bool parse_bn_param(const std::string& name, Stream& stream, std::string& role) {
    const auto first = name.find('.');
    const auto last = name.rfind('.');
    if (first == std::string::npos || last == first) return false;
    const std::string s = name.substr(0, first);
    role = name.substr(last + 1);
    if (s == "rgb") stream = Stream::rgb;
    else if (s == "depth") stream = Stream::depth;
    else return false;
    return role == "gamma" || role == "beta";
}

uint64_t iteration_seed(const LossConfig& loss, int iter) {
    return mix_seed(loss.rng_seed, static_cast<uint64_t>(iter) + 1);
}

}  // namespace

TraceRecord adapt_step(Model& model, const SceneInput& input, int iter, const AdaptConfig& cfg,
                       GradMap* grads_out) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    TraceRecord rec;
    rec.iter = iter;
    rec.lr = lr_at(iter, cfg);

    Graph g;
    ForwardResult fwd = forward_graph(g, model, input.rgb, input.depth, Mode::train, true);

    ClusterSet clusters;
    try {
        clusters = meanshift_vmf(fwd.fused->value, fwd.fused_degenerate, fwd.height, fwd.width,
                                 cfg.cluster);
        if (clusters.n < 1) throw std::runtime_error("no clusters");
    } catch (const std::exception&) {
        rec.skipped = true;
        rec.step_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                          .count();
        return rec;  // model untouched: nothing was committed
    }
    rec.n = clusters.n;

    LossConfig loss_cfg = cfg.loss;
    loss_cfg.rng_seed = iteration_seed(cfg.loss, iter);
    Node* neo = neo_loss(g, fwd.fused, fwd.fused_degenerate, clusters, loss_cfg);
    Node* ckd = ckd_loss(g, fwd, clusters, loss_cfg);
    Node* total = total_loss(g, neo, ckd, loss_cfg);
    rec.l_neo = neo->scalar();
    rec.l_ckd = ckd->scalar();
    rec.l_total = total->scalar();

    GradMap grads = g.backward(total);
    if (grads_out) *grads_out = grads;

    for (const auto& [name, grad] : grads) {
        Stream stream;
        std::string role;
        if (!parse_bn_param(name, stream, role)) continue;
        if (stream == Stream::rgb && !cfg.adapt_rgb) continue;
        if (stream == Stream::depth && !cfg.adapt_depth) continue;
        Tensor& value = model.weights.at(name);
        for (long long i = 0; i < value.numel(); ++i) value[i] -= rec.lr * grad[i];
    }
    commit_bn_updates(model, fwd.pending_bn, cfg.adapt_rgb, cfg.adapt_depth);

    rec.step_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

AdaptTrace adapt_run(Model& model, const std::vector<SceneInput>& sequence,
                     const AdaptConfig& cfg) {
    cfg.validate();
    if (sequence.empty()) throw std::invalid_argument("adapt_run: empty input sequence");
    model.spec.bn_momentum = cfg.bn_momentum;

    AdaptTrace trace;
    trace.reserve(static_cast<size_t>(cfg.total_iters));
    const size_t n = sequence.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int iter = 0; iter < cfg.total_iters; ++iter) {
        const size_t pos = static_cast<size_t>(iter) % n;
        if (pos == 0 && cfg.shuffle) {
            Rng rng = make_rng(mix_seed(cfg.shuffle_seed, static_cast<uint64_t>(iter) / n));
            std::shuffle(order.begin(), order.end(), rng);
        }
        trace.push_back(adapt_step(model, sequence[order[pos]], iter, cfg));
    }
    return trace;
}

void write_trace_jsonl(const AdaptTrace& trace, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot open '" + path.string() + "' for writing");
    for (const auto& r : trace) {
        nlohmann::json j{{"iter", r.iter},       {"lr", r.lr},    {"l_neo", r.l_neo},
                         {"l_ckd", r.l_ckd},     {"l_total", r.l_total}, {"n", r.n},
                         {"step_ms", r.step_ms}, {"skipped", r.skipped}};
        os << j.dump() << "\n";
    }
    if (!os) throw io_error("write failed for '" + path.string() + "'");
}

double probe_neo_entropy(const Model& model, const SceneInput& input, int iter,
                         const AdaptConfig& cfg) {
    Graph g;
    ForwardResult fwd = forward_graph(g, model, input.rgb, input.depth, Mode::train, true);
    const ClusterSet clusters = meanshift_vmf(fwd.fused->value, fwd.fused_degenerate, fwd.height,
                                              fwd.width, cfg.cluster);
    LossConfig loss_cfg = cfg.loss;
    loss_cfg.rng_seed = iteration_seed(cfg.loss, iter);
    return neo_loss(g, fwd.fused, fwd.fused_degenerate, clusters, loss_cfg)->scalar();
}

}  // namespace ftea
