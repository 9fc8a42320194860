#include "ftea/pipeline.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ftea/clustering.hpp"
#include "ftea/errors.hpp"
#include "ftea/objectives.hpp"
#include "ftea/rng.hpp"

namespace ftea {

using json = nlohmann::json;

std::vector<PretrainRecord> pretrain_run(Model& model, const std::vector<SceneInput>& inputs,
                                         const std::vector<InstanceLabeling>& labels,
                                         const PretrainConfig& cfg) {
    if (inputs.empty()) throw std::invalid_argument("pretrain_run: empty dataset");
    if (inputs.size() != labels.size())
        throw std::invalid_argument("pretrain_run: inputs and labels disagree");
    if (cfg.steps < 0) throw std::invalid_argument("pretrain_run: steps must be >= 0");
    if (cfg.lr <= 0.0) throw std::invalid_argument("pretrain_run: lr must be > 0");

    std::vector<PretrainRecord> trace;
    trace.reserve(static_cast<size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        const size_t idx = static_cast<size_t>(step) % inputs.size();
        PretrainRecord rec;
        rec.step = step;

        Graph g;
        ForwardResult fwd =
            forward_graph(g, model, inputs[idx].rgb, inputs[idx].depth, Mode::train, false);

        LossConfig loss_cfg;
        loss_cfg.sample_px = cfg.sample_px;
        loss_cfg.rng_seed = mix_seed(cfg.seed, static_cast<uint64_t>(step) + 1);

        Node* loss;
        try {
            loss = pretrain_loss(g, fwd.fused, fwd.fused_degenerate, labels[idx].ids, loss_cfg);
        } catch (const std::invalid_argument&) {
            rec.skipped = true;  // single-region image
            trace.push_back(rec);
            continue;
        }
        rec.loss = loss->scalar();

        const GradMap grads = g.backward(loss);
        for (const auto& [name, grad] : grads) {
            Tensor& value = model.weights.at(name);
            for (long long i = 0; i < value.numel(); ++i) value[i] -= cfg.lr * grad[i];
        }
        commit_bn_updates(model, fwd.pending_bn, true, true);
        trace.push_back(rec);
    }
    return trace;
}

void write_pretrain_trace_jsonl(const std::vector<PretrainRecord>& trace,
                                const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot open '" + path.string() + "' for writing");
    for (const auto& r : trace)
        os << json{{"step", r.step}, {"loss", r.loss}, {"skipped", r.skipped}}.dump() << "\n";
    if (!os) throw io_error("write failed for '" + path.string() + "'");
}

InstanceLabeling predict_mask(const Model& model, const SceneInput& input,
                              const ClusterParams& cluster) {
    Graph g;
    ForwardResult fwd = forward_graph(g, model, input.rgb, input.depth, Mode::eval, true);
    const ClusterSet clusters =
        meanshift_vmf(fwd.fused->value, fwd.fused_degenerate, fwd.height, fwd.width, cluster);
    InstanceLabeling pred;
    pred.height = fwd.height;
    pred.width = fwd.width;
    pred.ids = clusters_to_mask(clusters);
    return pred;
}

MetricsReport evaluate_model(const Model& model, const std::vector<SceneInput>& inputs,
                             const std::vector<InstanceLabeling>& labels,
                             const ClusterParams& cluster, int boundary_radius) {
    if (inputs.size() != labels.size())
        throw std::invalid_argument("evaluate_model: inputs and labels disagree");
    MetricsReport report;
    for (size_t i = 0; i < inputs.size(); ++i) {
        const InstanceLabeling pred = predict_mask(model, inputs[i], cluster);
        report.per_image.push_back(evaluate_image(pred, labels[i], boundary_radius));
    }
    report.aggregate = aggregate_metrics(report.per_image);
    return report;
}

namespace {
json prf_json(const PRF& v) { return {{"p", v.p}, {"r", v.r}, {"f", v.f}}; }
}  // namespace

void write_report_json(const MetricsReport& report, const std::filesystem::path& path) {
    json j;
    j["overlap"] = prf_json(report.aggregate.overlap);
    j["boundary"] = prf_json(report.aggregate.boundary);
    j["f_at_75"] = report.aggregate.f_at_75;
    j["per_image"] = json::array();
    for (const auto& m : report.per_image)
        j["per_image"].push_back({{"overlap", prf_json(m.overlap)},
                                  {"boundary", prf_json(m.boundary)},
                                  {"f_at_75", m.f_at_75}});
    std::ofstream os(path);
    if (!os) throw io_error("cannot open '" + path.string() + "' for writing");
    os << j.dump(2) << "\n";
    if (!os) throw io_error("write failed for '" + path.string() + "'");
}

uint64_t conv_weights_hash(const Model& model) {
    uint64_t hash = 1469598103934665603ull;
    auto feed = [&hash](const void* data, size_t len) {
        const unsigned char* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < len; ++i) {
            hash ^= p[i];
            hash *= 1099511628211ull;
        }
    };
    for (const auto& [name, tensor] : model.weights.tensors()) {
        const bool conv = name.size() > 7 && (name.compare(name.size() - 7, 7, ".kernel") == 0);
        const bool bias = name.size() > 5 && (name.compare(name.size() - 5, 5, ".bias") == 0);
        if (!conv && !bias) continue;
        feed(name.data(), name.size());
        feed(tensor.data(), static_cast<size_t>(tensor.numel()) * sizeof(double));
    }
    return hash;
}

}  // namespace ftea
