#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ftea/adapt.hpp"
#include "ftea/clustering.hpp"
#include "ftea/config.hpp"
#include "ftea/dataset.hpp"
#include "ftea/metrics.hpp"
#include "ftea/pipeline.hpp"
#include "ftea/scenegen.hpp"

namespace py = pybind11;
using namespace ftea;

namespace {

py::array_t<double> tensor_to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.dims().begin(), t.dims().end());
    py::array_t<double> out(shape);
    std::copy(t.data(), t.data() + t.numel(), out.mutable_data());
    return out;
}

Tensor array_to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int> dims(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) dims[static_cast<size_t>(i)] = static_cast<int>(a.shape(i));
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor(std::move(dims), std::move(data));
}

py::array_t<int> labels_to_array(const InstanceLabeling& m) {
    py::array_t<int> out({m.height, m.width});
    std::copy(m.ids.begin(), m.ids.end(), out.mutable_data());
    return out;
}

InstanceLabeling array_to_labels(const py::array_t<int, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("label mask must be 2-D");
    std::vector<int> raw(a.data(), a.data() + a.size());
    return normalize_labels(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), raw);
}

py::dict prf_dict(const PRF& v) {
    py::dict d;
    d["p"] = v.p;
    d["r"] = v.r;
    d["f"] = v.f;
    return d;
}

py::dict metrics_dict(const ImageMetrics& m) {
    py::dict d;
    d["overlap"] = prf_dict(m.overlap);
    d["boundary"] = prf_dict(m.boundary);
    d["f_at_75"] = m.f_at_75;
    return d;
}

ShiftProfile profile_by_name(const std::string& name) {
    if (name == "none") return ShiftProfile::none();
    if (name == "shifted") return ShiftProfile::shifted();
    throw std::invalid_argument("unknown profile '" + name + "' (known: none, shifted)");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Test-time adaptation lab for RGB-D pixel-embedding segmentation";

    m.def(
        "lr_at",
        [](int iter, double base_lr, int warmup_iters, int total_iters) {
            AdaptConfig cfg;
            cfg.base_lr = base_lr;
            cfg.warmup_iters = warmup_iters;
            cfg.total_iters = total_iters;
            return lr_at(iter, cfg);
        },
        py::arg("iter"), py::arg("base_lr") = 0.005, py::arg("warmup_iters") = 100,
        py::arg("total_iters") = 500, "Warmup-cosine learning rate at one iteration");

    m.def(
        "gen_scene",
        [](uint64_t seed, int height, int width, int objects_min, int objects_max,
           const std::string& profile) {
            SceneConfig cfg;
            cfg.height = height;
            cfg.width = width;
            cfg.objects_min = objects_min;
            cfg.objects_max = objects_max;
            const SceneSample s = gen_scene(seed, cfg, profile_by_name(profile), profile);
            py::dict d;
            d["rgb"] = tensor_to_array(s.rgb);
            d["depth"] = tensor_to_array(s.depth);
            d["labels"] = labels_to_array(s.labels);
            d["object_count"] = s.object_count;
            d["seed"] = s.seed;
            return d;
        },
        py::arg("seed"), py::arg("height") = 64, py::arg("width") = 64, py::arg("objects_min") = 2,
        py::arg("objects_max") = 5, py::arg("profile") = "none",
        "Deterministic synthetic tabletop scene with ground-truth labels");

    m.def(
        "gen_dataset",
        [](const std::string& out_dir, int count, uint64_t seed, int height, int width,
           int objects_min, int objects_max, const std::string& profile) {
            SceneConfig cfg;
            cfg.height = height;
            cfg.width = width;
            cfg.objects_min = objects_min;
            cfg.objects_max = objects_max;
            const auto manifest =
                gen_dataset(cfg, profile_by_name(profile), count, seed, out_dir, profile);
            return manifest.count;
        },
        py::arg("out_dir"), py::arg("count"), py::arg("seed") = 0, py::arg("height") = 64,
        py::arg("width") = 64, py::arg("objects_min") = 2, py::arg("objects_max") = 5,
        py::arg("profile") = "none", "Write a dataset directory with manifest.json");

    m.def(
        "pretrain",
        [](const std::string& data_dir, const std::string& out_weights, int steps, uint64_t seed,
           double lr, int embed_dim) {
            const Dataset ds = Dataset::open(data_dir, true);
            if (ds.size() == 0) throw std::invalid_argument("pretrain: dataset is empty");
            RunConfig cfg;
            cfg.height = ds.height();
            cfg.width = ds.width();
            cfg.embed_dim = embed_dim;
            cfg.seed = seed;
            Model model = init_model(cfg.network_spec(), seed);
            PretrainConfig pc;
            pc.steps = steps;
            pc.lr = lr;
            pc.seed = seed;
            std::vector<SceneInput> inputs;
            std::vector<InstanceLabeling> labels;
            for (size_t i = 0; i < ds.size(); ++i) {
                inputs.push_back(ds.input(i));
                labels.push_back(ds.labels(i));
            }
            const auto trace = pretrain_run(model, inputs, labels, pc);
            save_weights(model.weights, out_weights);
            std::vector<double> losses;
            for (const auto& r : trace) losses.push_back(r.loss);
            return losses;
        },
        py::arg("data_dir"), py::arg("out_weights"), py::arg("steps") = 200, py::arg("seed") = 0,
        py::arg("lr") = 0.1, py::arg("embed_dim") = 8,
        "Supervised warm-up training; returns the per-step loss trace");

    m.def(
        "adapt",
        [](const std::string& weights_in, const std::string& data_dir,
           const std::string& weights_out, int iters, double lr, int k, double temp,
           double lambda1, double lambda2, const std::string& modalities, uint64_t seed) {
            const Dataset ds = Dataset::open(data_dir, false);
            if (ds.size() == 0) throw std::invalid_argument("adapt: dataset is empty");
            RunConfig cfg;
            cfg.height = ds.height();
            cfg.width = ds.width();
            cfg.total_iters = iters;
            cfg.warmup_iters = std::min(cfg.warmup_iters, iters);
            cfg.base_lr = lr;
            cfg.k = k;
            cfg.temperature = temp;
            cfg.lambda1 = lambda1;
            cfg.lambda2 = lambda2;
            cfg.modalities = modalities;
            cfg.seed = seed;
            Model model;
            model.spec = cfg.network_spec();
            model.weights = load_weights(weights_in);
            AdaptTrace trace;
            if (iters > 0)
                trace = adapt_run(model, [&] {
                    std::vector<SceneInput> v;
                    for (size_t i = 0; i < ds.size(); ++i) v.push_back(ds.input(i));
                    return v;
                }(), cfg.adapt_config(ds.height() * ds.width()));
            save_weights(model.weights, weights_out);
            py::list out;
            for (const auto& r : trace) {
                py::dict d;
                d["iter"] = r.iter;
                d["lr"] = r.lr;
                d["l_neo"] = r.l_neo;
                d["l_ckd"] = r.l_ckd;
                d["l_total"] = r.l_total;
                d["n"] = r.n;
                out.append(d);
            }
            return out;
        },
        py::arg("weights_in"), py::arg("data_dir"), py::arg("weights_out"), py::arg("iters") = 500,
        py::arg("lr") = 0.005, py::arg("k") = 2, py::arg("temp") = 1.0, py::arg("lambda1") = 1.0,
        py::arg("lambda2") = 1.0, py::arg("modalities") = "rgb,depth", py::arg("seed") = 0,
        "Fully test-time BN adaptation; returns the iteration trace");

    m.def(
        "evaluate",
        [](const std::string& weights, const std::string& data_dir) {
            const Dataset ds = Dataset::open(data_dir, true);
            if (ds.size() == 0) throw std::invalid_argument("evaluate: dataset is empty");
            RunConfig cfg;
            cfg.height = ds.height();
            cfg.width = ds.width();
            Model model;
            model.spec = cfg.network_spec();
            model.weights = load_weights(weights);
            std::vector<SceneInput> inputs;
            std::vector<InstanceLabeling> labels;
            for (size_t i = 0; i < ds.size(); ++i) {
                inputs.push_back(ds.input(i));
                labels.push_back(ds.labels(i));
            }
            const MetricsReport report = evaluate_model(
                model, inputs, labels, cfg.cluster_params(ds.height() * ds.width()));
            py::dict d = metrics_dict(report.aggregate);
            py::list per_image;
            for (const auto& m2 : report.per_image) per_image.append(metrics_dict(m2));
            d["per_image"] = per_image;
            return d;
        },
        py::arg("weights"), py::arg("data_dir"),
        "Segmentation metrics of a weights file on a labeled dataset");

    m.def(
        "evaluate_masks",
        [](const py::array_t<int, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<int, py::array::c_style | py::array::forcecast>& gt,
           int boundary_radius) {
            return metrics_dict(
                evaluate_image(array_to_labels(pred), array_to_labels(gt), boundary_radius));
        },
        py::arg("pred"), py::arg("gt"), py::arg("boundary_radius") = 1,
        "Overlap/Boundary P-R-F and F@.75 between two instance masks");

    m.def(
        "hungarian",
        [](const std::vector<std::vector<double>>& affinity) {
            const auto row_to_col = solve_max_assignment(affinity);
            std::vector<std::pair<int, int>> pairs;
            for (size_t i = 0; i < row_to_col.size(); ++i)
                if (row_to_col[i] >= 0) pairs.emplace_back(static_cast<int>(i), row_to_col[i]);
            return pairs;
        },
        py::arg("affinity"), "Max-total-affinity assignment as (row, col) pairs");

    m.def(
        "meanshift",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& points,
           double kappa, int seeds, double merge_cos) {
            if (points.ndim() != 2) throw std::invalid_argument("points must be [N,C]");
            Tensor rows = array_to_tensor(points);
            ClusterParams params;
            params.kappa = kappa;
            params.seeds = seeds;
            params.merge_cos = merge_cos;
            const ClusterSet cs =
                meanshift_vmf(rows, {}, 1, rows.dim(0), params);
            py::array_t<int> labels(static_cast<py::ssize_t>(cs.assignments.size()));
            std::copy(cs.assignments.begin(), cs.assignments.end(), labels.mutable_data());
            return py::make_tuple(labels, tensor_to_array(cs.centroids));
        },
        py::arg("points"), py::arg("kappa") = 30.0, py::arg("seeds") = 64,
        py::arg("merge_cos") = 0.95,
        "vMF mean shift over unit vectors; returns (labels, centroids)");
}
