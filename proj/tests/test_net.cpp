#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "ftea/net.hpp"
#include "ftea/pipeline.hpp"
#include "ftea/rng.hpp"

using namespace ftea;
namespace fs = std::filesystem;

namespace {

Tensor random_input(std::vector<int> dims, uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Rng rng = make_rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(dims));
    for (long long i = 0; i < t.numel(); ++i) t[i] = u(rng);
    return t;
}

fs::path temp_file(const char* name) {
    return fs::temp_directory_path() / (std::string("ftea_net_test_") + name);
}

}  // namespace

TEST_CASE("update_bn_stats momentum semantics") {
    BNLayerState st;
    st.gamma = Tensor::full({1}, 1.0);
    st.beta = Tensor({1});
    st.run_mean = Tensor({1});
    st.run_var = Tensor::full({1}, 1.0);
    st.momentum = 0.5;

    // momentum 0.5 averages old and new
    BNLayerState once = update_bn_stats(st, Tensor({1}, {2.0}), Tensor({1}, {1.0}));
    CHECK(once.run_mean[0] == doctest::Approx(1.0));

    // applying the same batch twice
    BNLayerState twice = update_bn_stats(once, Tensor({1}, {2.0}), Tensor({1}, {1.0}));
    CHECK(twice.run_mean[0] == doctest::Approx(1.5));

    // momentum 1 replaces the running stats
    st.momentum = 1.0;
    BNLayerState rep = update_bn_stats(st, Tensor({1}, {2.0}), Tensor({1}, {3.0}));
    CHECK(rep.run_mean[0] == doctest::Approx(2.0));
    CHECK(rep.run_var[0] == doctest::Approx(3.0));

    CHECK_THROWS_AS(update_bn_stats(st, Tensor({1}, {0.0}), Tensor({1}, {-0.1})),
                    std::invalid_argument);
}

TEST_CASE("network spec validation") {
    CHECK_THROWS_AS(NetworkSpec::toy(63, 64, 8), std::invalid_argument);  // stride 2 must divide
    CHECK_THROWS_AS(NetworkSpec::toy(64, 64, 1), std::invalid_argument);
    const NetworkSpec spec = NetworkSpec::toy(32, 64, 4);
    CHECK(spec.downsample(Stream::rgb) == 2);
    CHECK(spec.rgb_layers.back().out_channels == 4);
}

TEST_CASE("forward produces unit-norm pixels on all three maps") {
    const NetworkSpec spec = NetworkSpec::toy(16, 16, 4);
    Model model = init_model(spec, 5);
    const Tensor rgb = random_input({3, 16, 16}, 1);
    const Tensor depth = random_input({1, 16, 16}, 2, 900.0, 1100.0);
    const PixelEmbeddingMap map = forward(model, rgb, depth, Mode::eval);
    for (const Tensor* m : {&map.fused, &map.rgb_only, &map.depth_only}) {
        for (int p = 0; p < 16 * 16; ++p) {
            double norm = 0.0;
            for (int c = 0; c < 4; ++c) norm += m->at2(p, c) * m->at2(p, c);
            CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("zero input with zero weights raises degenerate flags, not NaN") {
    const NetworkSpec spec = NetworkSpec::toy(8, 8, 4);
    Model model = init_model(spec, 5);
    // zero every conv kernel and bias so both stacks emit zero maps
    std::vector<std::string> conv_names;
    for (const auto& [name, tensor] : model.weights.tensors())
        if (name.find(".kernel") != std::string::npos || name.find(".bias") != std::string::npos)
            conv_names.push_back(name);
    for (const auto& name : conv_names)
        model.weights.at(name) = Tensor(model.weights.get(name).dims());
    Graph g;
    const ForwardResult fwd = forward_graph(g, model, Tensor({3, 8, 8}), Tensor({1, 8, 8}),
                                            Mode::eval, true);
    CHECK(fwd.fused->value.all_finite());
    bool any_flag = false;
    for (uint8_t f : fwd.fused_degenerate) any_flag |= f != 0;
    CHECK(any_flag);
}

TEST_CASE("forward is deterministic bit for bit") {
    const NetworkSpec spec = NetworkSpec::toy(16, 16, 4);
    Model a = init_model(spec, 9);
    Model b = init_model(spec, 9);
    const Tensor rgb = random_input({3, 16, 16}, 3);
    const Tensor depth = random_input({1, 16, 16}, 4, 900.0, 1100.0);
    const PixelEmbeddingMap ma = forward(a, rgb, depth, Mode::train);
    const PixelEmbeddingMap mb = forward(b, rgb, depth, Mode::train);
    CHECK(ma.fused.raw() == mb.fused.raw());
    CHECK(a.weights == b.weights);  // identical running-stat updates
}

TEST_CASE("train mode commits running stats, eval mode is pure") {
    const NetworkSpec spec = NetworkSpec::toy(16, 16, 4);
    Model model = init_model(spec, 11);
    const WeightStore before = model.weights;
    const Tensor rgb = random_input({3, 16, 16}, 5);
    const Tensor depth = random_input({1, 16, 16}, 6, 900.0, 1100.0);

    forward(model, rgb, depth, Mode::eval);
    CHECK(model.weights == before);

    forward(model, rgb, depth, Mode::train);
    CHECK_FALSE(model.weights == before);
    // only running stats moved
    for (const auto& [name, tensor] : before.tensors()) {
        if (name.find("run_") == std::string::npos) CHECK(model.weights.get(name) == tensor);
    }
}

TEST_CASE("modality-masked commit freezes the other stream") {
    const NetworkSpec spec = NetworkSpec::toy(16, 16, 4);
    Model model = init_model(spec, 13);
    const WeightStore before = model.weights;
    Graph g;
    const ForwardResult fwd =
        forward_graph(g, model, random_input({3, 16, 16}, 7),
                      random_input({1, 16, 16}, 8, 900.0, 1100.0), Mode::train, true);
    commit_bn_updates(model, fwd.pending_bn, false, true);
    for (const auto& [name, tensor] : before.tensors()) {
        if (name.rfind("rgb.", 0) == 0) CHECK(model.weights.get(name) == tensor);
    }
    bool depth_changed = false;
    for (const auto& [name, tensor] : before.tensors())
        if (name.rfind("depth.", 0) == 0 && !(model.weights.get(name) == tensor))
            depth_changed = true;
    CHECK(depth_changed);
}

TEST_CASE("weights round trip bit-exactly") {
    const NetworkSpec spec = NetworkSpec::toy(16, 16, 4);
    const Model model = init_model(spec, 17);
    const fs::path path = temp_file("roundtrip.ftea");
    save_weights(model.weights, path);
    const WeightStore loaded = load_weights(path);
    CHECK(loaded == model.weights);

    // file itself round-trips byte for byte through load+save
    const fs::path path2 = temp_file("roundtrip2.ftea");
    save_weights(loaded, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    fs::remove(path);
    fs::remove(path2);
}

TEST_CASE("weights file format errors") {
    const fs::path path = temp_file("bad.ftea");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE";
    }
    CHECK_THROWS_WITH_AS(load_weights(path), doctest::Contains("bad magic"), io_error);

    // truncated: valid magic and header, then nothing
    {
        std::ofstream os(path, std::ios::binary);
        os << "FTEA";
        const uint32_t version = 1, count = 3;
        os.write(reinterpret_cast<const char*>(&version), 4);
        os.write(reinterpret_cast<const char*>(&count), 4);
    }
    CHECK_THROWS_AS(load_weights(path), io_error);
    fs::remove(path);
    CHECK_THROWS_AS(load_weights(path), io_error);  // missing file
}

TEST_CASE("duplicate tensor names are rejected on load") {
    // hand-build a file with the same tensor twice
    const fs::path path = temp_file("dup.ftea");
    WeightStore store;
    store.put("x", Tensor({1}, {1.0}));
    save_weights(store, path);
    // append the single tensor record again and patch the count
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const std::string record = bytes.substr(12);
    bytes[8] = 2;  // tensor count low byte
    bytes += record;
    std::ofstream out(path, std::ios::binary);
    out << bytes;
    out.close();
    CHECK_THROWS_WITH_AS(load_weights(path), doctest::Contains("duplicate tensor 'x'"), io_error);
    fs::remove(path);
}

TEST_CASE("freeze contract: conv tensors identical under masked BN updates") {
    const NetworkSpec spec = NetworkSpec::toy(16, 16, 4);
    Model model = init_model(spec, 19);
    const uint64_t conv_hash = conv_weights_hash(model);
    for (int step = 0; step < 3; ++step)
        forward(model, random_input({3, 16, 16}, 100 + step),
                random_input({1, 16, 16}, 200 + step, 900.0, 1100.0), Mode::train);
    CHECK(conv_weights_hash(model) == conv_hash);
}
