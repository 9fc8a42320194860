#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "ftea/adapt.hpp"
#include "ftea/config.hpp"
#include "ftea/dataset.hpp"
#include "ftea/errors.hpp"
#include "ftea/pipeline.hpp"
#include "ftea/svg_plot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ftea;

namespace {

RunConfig load_run_config(const std::string& config_path) {
    if (config_path.empty()) return RunConfig{};
    return RunConfig::from_toml(FlatToml::parse_file(config_path));
}

void require_labels_present(const fs::path& dir) {
    const auto manifest = read_manifest(dir / "manifest.json");
    for (const auto& e : manifest.samples)
        if (!fs::exists(dir / e.labels))
            throw std::invalid_argument("missing ground-truth labels: " +
                                        (dir / e.labels).string());
}

std::vector<InstanceLabeling> dataset_labels(const Dataset& ds) {
    std::vector<InstanceLabeling> out;
    for (size_t i = 0; i < ds.size(); ++i) out.push_back(ds.labels(i));
    return out;
}

std::vector<SceneInput> dataset_inputs(const Dataset& ds) {
    std::vector<SceneInput> out;
    for (size_t i = 0; i < ds.size(); ++i) out.push_back(ds.input(i));
    return out;
}

struct GenArgs {
    std::string config, out, profile;
    int count = 16;
    long long seed = -1;
    int height = -1, width = -1, objects_min = -1, objects_max = -1;
};

int run_gen(const GenArgs& args, bool profile_set) {
    RunConfig cfg = load_run_config(args.config);
    if (profile_set) cfg.profile = args.profile;
    if (args.seed >= 0) cfg.seed = static_cast<uint64_t>(args.seed);
    if (args.height > 0) cfg.height = args.height;
    if (args.width > 0) cfg.width = args.width;
    if (args.objects_min > 0) cfg.objects_min = args.objects_min;
    if (args.objects_max > 0) cfg.objects_max = args.objects_max;
    cfg.validate();

    const auto manifest = gen_dataset(cfg.scene_config(), cfg.resolve_profile(), args.count,
                                      cfg.seed, args.out, cfg.profile);
    std::cout << "wrote " << manifest.count << " scenes (" << manifest.height << "x"
              << manifest.width << ", profile " << manifest.profile_name << ") to " << args.out
              << "\n";
    return 0;
}

struct PretrainArgs {
    std::string config, data, out, trace;
    int steps = -1;
    long long seed = -1;
    double lr = -1.0;
    int embed_dim = -1;
};

int run_pretrain(const PretrainArgs& args) {
    RunConfig cfg = load_run_config(args.config);
    if (args.steps >= 0) cfg.pretrain_steps = args.steps;
    if (args.seed >= 0) cfg.seed = static_cast<uint64_t>(args.seed);
    if (args.lr > 0.0) cfg.pretrain_lr = args.lr;
    if (args.embed_dim > 0) cfg.embed_dim = args.embed_dim;

    require_labels_present(args.data);
    const Dataset ds = Dataset::open(args.data, true);
    if (ds.size() == 0) throw std::invalid_argument("pretrain: dataset is empty");

    cfg.height = ds.height();
    cfg.width = ds.width();
    cfg.validate();

    Model model = init_model(cfg.network_spec(), cfg.seed);
    const auto trace = pretrain_run(model, dataset_inputs(ds), dataset_labels(ds),
                                    cfg.pretrain_config());
    save_weights(model.weights, args.out);
    if (!args.trace.empty()) write_pretrain_trace_jsonl(trace, args.trace);

    if (!trace.empty())
        std::cout << "pretrain: " << trace.size() << " steps, loss " << trace.front().loss
                  << " -> " << trace.back().loss << "\n";
    std::cout << "wrote weights to " << args.out << "\n";
    return 0;
}

struct AdaptArgs {
    std::string config, weights, data, out, trace, modalities;
    int iters = -1, warmup = -1, k = -1, sample_px = -1;
    long long seed = -1;
    double lr = -1.0, temp = -1.0, lambda1 = -1.0, lambda2 = -1.0;
    bool shuffle = false;
};

int run_adapt(const AdaptArgs& args, bool shuffle_set) {
    RunConfig cfg = load_run_config(args.config);
    if (args.iters >= 0) cfg.total_iters = args.iters;
    if (args.warmup >= 0) cfg.warmup_iters = args.warmup;
    if (args.k > 0) cfg.k = args.k;
    if (args.sample_px > 0) cfg.sample_px = args.sample_px;
    if (args.seed >= 0) cfg.seed = static_cast<uint64_t>(args.seed);
    if (args.lr > 0.0) cfg.base_lr = args.lr;
    if (args.temp > 0.0) cfg.temperature = args.temp;
    if (args.lambda1 >= 0.0) cfg.lambda1 = args.lambda1;
    if (args.lambda2 >= 0.0) cfg.lambda2 = args.lambda2;
    if (!args.modalities.empty()) cfg.modalities = args.modalities;
    if (shuffle_set) cfg.shuffle = args.shuffle;
    if (cfg.warmup_iters > cfg.total_iters) cfg.warmup_iters = cfg.total_iters;

    // unsupervised by construction: the dataset is opened without labels
    const Dataset ds = Dataset::open(args.data, false);
    if (ds.size() == 0) throw std::invalid_argument("adapt: dataset is empty");

    cfg.height = ds.height();
    cfg.width = ds.width();
    cfg.validate();

    Model model;
    model.spec = cfg.network_spec();
    model.weights = load_weights(args.weights);

    const AdaptConfig adapt_cfg = cfg.adapt_config(ds.height() * ds.width());
    AdaptTrace trace;
    if (cfg.total_iters > 0) trace = adapt_run(model, dataset_inputs(ds), adapt_cfg);

    save_weights(model.weights, args.out);
    if (!args.trace.empty()) write_trace_jsonl(trace, args.trace);

    double mean_ms = 0.0;
    for (const auto& r : trace) mean_ms += r.step_ms;
    if (!trace.empty()) mean_ms /= static_cast<double>(trace.size());
    std::cout << "adapt: " << trace.size() << " iterations, mean step " << mean_ms << " ms\n";
    std::cout << "wrote weights to " << args.out << "\n";
    return 0;
}

struct EvalArgs {
    std::string config, weights, data, report, plot, trace;
};

int run_eval(const EvalArgs& args) {
    RunConfig cfg = load_run_config(args.config);
    require_labels_present(args.data);
    const Dataset ds = Dataset::open(args.data, true);
    if (ds.size() == 0) throw std::invalid_argument("eval: dataset is empty");

    cfg.height = ds.height();
    cfg.width = ds.width();
    cfg.validate();

    Model model;
    model.spec = cfg.network_spec();
    model.weights = load_weights(args.weights);

    const MetricsReport report =
        evaluate_model(model, dataset_inputs(ds), dataset_labels(ds),
                       cfg.cluster_params(ds.height() * ds.width()), cfg.boundary_radius);
    write_report_json(report, args.report);

    const auto& a = report.aggregate;
    std::cout << "overlap  P " << a.overlap.p << " R " << a.overlap.r << " F " << a.overlap.f
              << "\n";
    std::cout << "boundary P " << a.boundary.p << " R " << a.boundary.r << " F " << a.boundary.f
              << "\n";
    std::cout << "F@.75    " << a.f_at_75 << "\n";

    if (!args.plot.empty()) {
        fs::create_directories(args.plot);
        std::vector<double> per_f;
        std::vector<std::string> names;
        for (size_t i = 0; i < report.per_image.size(); ++i) {
            per_f.push_back(report.per_image[i].overlap.f);
            names.push_back(std::to_string(i));
        }
        write_bar_chart_svg(fs::path(args.plot) / "per_image_overlap_f.svg",
                            "Per-image overlap F", names, per_f);
        write_bar_chart_svg(fs::path(args.plot) / "summary.svg", "Aggregate metrics",
                            {"ov.P", "ov.R", "ov.F", "bd.P", "bd.R", "bd.F", "F@.75"},
                            {a.overlap.p, a.overlap.r, a.overlap.f, a.boundary.p, a.boundary.r,
                             a.boundary.f, a.f_at_75});
        if (!args.trace.empty()) {
            std::ifstream is(args.trace);
            if (!is) throw io_error("cannot open trace '" + args.trace + "'");
            Series neo{"l_neo", {}}, ckd{"l_ckd", {}}, total{"l_total", {}};
            std::string line;
            while (std::getline(is, line)) {
                if (line.empty()) continue;
                const json j = json::parse(line);
                neo.values.push_back(j.at("l_neo").get<double>());
                ckd.values.push_back(j.at("l_ckd").get<double>());
                total.values.push_back(j.at("l_total").get<double>());
            }
            write_line_chart_svg(fs::path(args.plot) / "loss_curves.svg", "Adaptation losses",
                                 {neo, ckd, total});
        }
    }
    return 0;
}

struct BenchArgs {
    std::string config, weights, data;
    int iters = 100;
};

int run_bench(const BenchArgs& args) {
    RunConfig cfg = load_run_config(args.config);
    if (args.iters < 1) throw std::invalid_argument("bench: iters must be >= 1");
    const Dataset ds = Dataset::open(args.data, false);
    if (ds.size() == 0) throw std::invalid_argument("bench: dataset is empty");

    cfg.height = ds.height();
    cfg.width = ds.width();
    cfg.validate();

    Model model;
    model.spec = cfg.network_spec();
    model.weights = load_weights(args.weights);

    const ClusterParams cluster = cfg.cluster_params(ds.height() * ds.width());
    using clock = std::chrono::steady_clock;

    double infer_ms = 0.0;
    for (int i = 0; i < args.iters; ++i) {
        const auto t0 = clock::now();
        predict_mask(model, ds.input(static_cast<size_t>(i) % ds.size()), cluster);
        infer_ms += std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    }
    infer_ms /= args.iters;

    AdaptConfig adapt_cfg = cfg.adapt_config(ds.height() * ds.width());
    adapt_cfg.total_iters = std::max(adapt_cfg.total_iters, args.iters);
    Model scratch = model;
    double adapt_ms = 0.0;
    for (int i = 0; i < args.iters; ++i) {
        const auto rec = adapt_step(scratch, ds.input(static_cast<size_t>(i) % ds.size()), i, adapt_cfg);
        adapt_ms += rec.step_ms;
    }
    adapt_ms /= args.iters;

    const json j{{"iters", args.iters},
                 {"inference_ms_mean", infer_ms},
                 {"adapt_step_ms_mean", adapt_ms}};
    std::cout << j.dump() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Test-time adaptation lab for RGB-D pixel-embedding segmentation"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* cmd_gen = app.add_subcommand("gen", "Generate a synthetic tabletop RGB-D dataset");
    cmd_gen->add_option("--config", gen.config, "Flat TOML config file");
    cmd_gen->add_option("--out", gen.out, "Output dataset directory")->required();
    cmd_gen->add_option("--count", gen.count, "Number of scenes");
    auto* gen_profile = cmd_gen->add_option("--profile", gen.profile, "Shift profile name");
    cmd_gen->add_option("--seed", gen.seed, "Base seed");
    cmd_gen->add_option("--height", gen.height, "Scene height");
    cmd_gen->add_option("--width", gen.width, "Scene width");
    cmd_gen->add_option("--objects-min", gen.objects_min, "Minimum object count");
    cmd_gen->add_option("--objects-max", gen.objects_max, "Maximum object count");

    PretrainArgs pre;
    auto* cmd_pre = app.add_subcommand("pretrain", "Train the toy embedding network on clean scenes");
    cmd_pre->add_option("--config", pre.config, "Flat TOML config file");
    cmd_pre->add_option("--data", pre.data, "Labeled dataset directory")->required();
    cmd_pre->add_option("--out", pre.out, "Output weights file")->required();
    cmd_pre->add_option("--steps", pre.steps, "Training steps");
    cmd_pre->add_option("--seed", pre.seed, "Init and sampling seed");
    cmd_pre->add_option("--lr", pre.lr, "Learning rate");
    cmd_pre->add_option("--embed-dim", pre.embed_dim, "Embedding dimension");
    cmd_pre->add_option("--trace", pre.trace, "Loss trace JSONL path");

    AdaptArgs ad;
    auto* cmd_ad = app.add_subcommand("adapt", "Adapt BN parameters on unlabeled test scenes");
    cmd_ad->add_option("--config", ad.config, "Flat TOML config file");
    cmd_ad->add_option("--weights", ad.weights, "Input weights file")->required();
    cmd_ad->add_option("--data", ad.data, "Unlabeled dataset directory")->required();
    cmd_ad->add_option("--out", ad.out, "Output weights file")->required();
    cmd_ad->add_option("--iters", ad.iters, "Adaptation iterations");
    cmd_ad->add_option("--warmup", ad.warmup, "Warmup iterations");
    cmd_ad->add_option("--lr", ad.lr, "Base learning rate");
    cmd_ad->add_option("--k", ad.k, "Nearest clusters in the entropy objective");
    cmd_ad->add_option("--temp", ad.temp, "Distillation temperature");
    cmd_ad->add_option("--lambda1", ad.lambda1, "Entropy objective weight");
    cmd_ad->add_option("--lambda2", ad.lambda2, "Distillation weight");
    cmd_ad->add_option("--modalities", ad.modalities, "Streams to adapt: rgb,depth");
    cmd_ad->add_option("--sample-px", ad.sample_px, "Sampled pixels per iteration");
    cmd_ad->add_option("--seed", ad.seed, "Sampling seed");
    auto* ad_shuffle = cmd_ad->add_flag("--shuffle", ad.shuffle, "Shuffle image order per epoch");
    cmd_ad->add_option("--trace", ad.trace, "Trace JSONL path");

    EvalArgs ev;
    auto* cmd_ev = app.add_subcommand("eval", "Evaluate segmentation metrics against ground truth");
    cmd_ev->add_option("--config", ev.config, "Flat TOML config file");
    cmd_ev->add_option("--weights", ev.weights, "Weights file")->required();
    cmd_ev->add_option("--data", ev.data, "Labeled dataset directory")->required();
    cmd_ev->add_option("--report", ev.report, "Metrics report JSON path")->required();
    cmd_ev->add_option("--plot", ev.plot, "Directory for SVG plots");
    cmd_ev->add_option("--trace", ev.trace, "Adaptation trace JSONL to plot");

    BenchArgs be;
    auto* cmd_be = app.add_subcommand("bench", "Time inference and adaptation steps");
    cmd_be->add_option("--config", be.config, "Flat TOML config file");
    cmd_be->add_option("--weights", be.weights, "Weights file")->required();
    cmd_be->add_option("--data", be.data, "Dataset directory")->required();
    cmd_be->add_option("--iters", be.iters, "Iterations to average over");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (cmd_gen->parsed()) return run_gen(gen, gen_profile->count() > 0);
        if (cmd_pre->parsed()) return run_pretrain(pre);
        if (cmd_ad->parsed()) return run_adapt(ad, ad_shuffle->count() > 0);
        if (cmd_ev->parsed()) return run_eval(ev);
        if (cmd_be->parsed()) return run_bench(be);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
