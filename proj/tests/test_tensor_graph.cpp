#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "ftea/graph.hpp"
#include "ftea/rng.hpp"

using namespace ftea;

namespace {

Tensor random_tensor(std::vector<int> dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(dims));
    std::uniform_real_distribution<double> u(lo, hi);
    for (long long i = 0; i < t.numel(); ++i) t[i] = u(rng);
    return t;
}

// FD check of a scalar-valued graph builder with respect to one named leaf.
// build() must construct the graph from the given leaf values and return
// the root. skip(v) marks coordinates near a kink.
void check_gradient(const std::string& leaf, Tensor leaf_value,
                    const std::function<Node*(Graph&, const Tensor&)>& build,
                    const std::function<bool(double)>& skip = {}) {
    Graph g;
    Node* root = build(g, leaf_value);
    const GradMap grads = g.backward(root);
    REQUIRE(grads.count(leaf) == 1);
    const Tensor& analytic = grads.at(leaf);

    auto f = [&](const std::vector<double>& x) {
        Tensor t(leaf_value.dims(), x);
        Graph g2;
        return build(g2, t)->scalar();
    };
    const std::vector<double> numeric = finite_difference(f, leaf_value.raw());
    for (long long i = 0; i < leaf_value.numel(); ++i) {
        if (skip && skip(leaf_value[i])) continue;
        CAPTURE(i);
        CHECK(rel_gap(analytic[i], numeric[static_cast<size_t>(i)]) <= 1e-4);
    }
}

// random projection to a scalar so every output entry gets a distinct adjoint
Node* project(Graph& g, Node* out, Rng& rng) {
    Tensor weights = random_tensor(out->value.dims(), rng);
    return g.scale(g.mean_all(g.mul(out, g.constant(weights))),
                   static_cast<double>(out->value.numel()));
}

// six nested loops, no shared code with the graph op
Tensor conv_oracle(const Tensor& x, const Tensor& k, int stride, int pad) {
    const int ci = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    Tensor out({co, oh, ow});
    for (int a = 0; a < co; ++a)
        for (int b = 0; b < ci; ++b)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx)
                    for (int i = 0; i < kh; ++i)
                        for (int j = 0; j < kw; ++j) {
                            const int iy = y * stride - pad + i;
                            const int ix = xx * stride - pad + j;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            out.at3(a, y, xx) +=
                                x.at3(b, iy, ix) *
                                k[((static_cast<long long>(a) * ci + b) * kh + i) * kw + j];
                        }
    return out;
}

}  // namespace

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), std::invalid_argument);
    const Tensor t({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.all_finite());
}

TEST_CASE("conv2d box sum and scalar product") {
    Graph g;
    Node* x = g.constant(Tensor::full({1, 3, 3}, 1.0));
    Node* k = g.constant(Tensor::full({1, 1, 3, 3}, 1.0));
    Node* y = g.conv2d(x, k, 1, 1);
    CHECK(y->value.at3(0, 1, 1) == doctest::Approx(9.0));
    CHECK(y->value.at3(0, 0, 0) == doctest::Approx(4.0));
    CHECK(y->value.at3(0, 2, 2) == doctest::Approx(4.0));

    Node* s = g.conv2d(g.constant(Tensor({1, 1, 1}, {2.0})),
                       g.constant(Tensor({1, 1, 1, 1}, {3.0})), 1, 0);
    CHECK(s->value[0] == doctest::Approx(6.0));
}

TEST_CASE("conv2d equals the nested-loop oracle") {
    Rng rng = make_rng(42);
    for (const auto& [stride, pad] : std::vector<std::pair<int, int>>{{1, 0}, {1, 1}, {2, 1}}) {
        const Tensor x = random_tensor({2, 5, 5}, rng);
        const Tensor k = random_tensor({3, 2, 3, 3}, rng);
        Graph g;
        Node* y = g.conv2d(g.constant(x), g.constant(k), stride, pad);
        const Tensor want = conv_oracle(x, k, stride, pad);
        REQUIRE(y->value.same_dims(want));
        for (long long i = 0; i < want.numel(); ++i)
            CHECK(std::abs(y->value[i] - want[i]) <= 1e-12);
    }
}

TEST_CASE("conv2d dimension errors name the axis") {
    Graph g;
    Node* x = g.constant(Tensor({2, 4, 4}));
    Node* k = g.constant(Tensor({3, 1, 3, 3}));
    CHECK_THROWS_WITH_AS(g.conv2d(x, k, 1, 1), doctest::Contains("C_in"), std::invalid_argument);
    CHECK_THROWS_AS(g.conv2d(x, g.constant(Tensor({3, 2, 2, 2})), 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(g.conv2d(g.constant(Tensor({1, 2, 2})), g.constant(Tensor({1, 1, 5, 5})), 1, 0),
                    std::invalid_argument);
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng = make_rng(7);
    const Tensor x0 = random_tensor({2, 4, 4}, rng);
    const Tensor k0 = random_tensor({2, 2, 3, 3}, rng);
    auto rng_proj = make_rng(8);
    check_gradient("x", x0, [&](Graph& g, const Tensor& v) {
        Node* x = g.param("x", v);
        return project(g, g.conv2d(x, g.constant(k0), 1, 1), rng_proj);
    });
    auto rng_proj2 = make_rng(8);
    check_gradient("k", k0, [&](Graph& g, const Tensor& v) {
        Node* k = g.param("k", v);
        return project(g, g.conv2d(g.constant(x0), k, 2, 1), rng_proj2);
    });
}

TEST_CASE("elementwise and shape op gradients match finite differences") {
    Rng rng = make_rng(11);
    const Tensor a0 = random_tensor({3, 4}, rng, 0.2, 2.0);
    const Tensor b0 = random_tensor({3, 4}, rng, 0.2, 2.0);

    auto proj_seed = [&](uint64_t s) { return make_rng(s); };

    {
        auto pr = proj_seed(1);
        check_gradient("a", a0, [&](Graph& g, const Tensor& v) {
            return project(g, g.add(g.param("a", v), g.constant(b0)), pr);
        });
    }
    {
        auto pr = proj_seed(2);
        check_gradient("a", a0, [&](Graph& g, const Tensor& v) {
            return project(g, g.sub(g.constant(b0), g.param("a", v)), pr);
        });
    }
    {
        auto pr = proj_seed(3);
        check_gradient("a", a0, [&](Graph& g, const Tensor& v) {
            return project(g, g.mul(g.param("a", v), g.constant(b0)), pr);
        });
    }
    {
        auto pr = proj_seed(4);
        check_gradient("a", a0, [&](Graph& g, const Tensor& v) {
            return project(g, g.scale(g.param("a", v), -2.5), pr);
        });
    }
    {
        auto pr = proj_seed(5);
        check_gradient("a", a0, [&](Graph& g, const Tensor& v) {
            return project(g, g.log_floor(g.param("a", v)), pr);
        });
    }
    {
        auto pr = proj_seed(6);
        check_gradient("a", a0, [&](Graph& g, const Tensor& v) {
            return project(g, g.softmax_temp(g.param("a", v), 0.7), pr);
        });
    }
    {
        auto pr = proj_seed(7);
        check_gradient("a", a0, [&](Graph& g, const Tensor& v) {
            return project(g, g.l2_normalize_rows(g.param("a", v)), pr);
        });
    }
    {
        auto pr = proj_seed(8);
        check_gradient("a", a0, [&](Graph& g, const Tensor& v) {
            return project(g, g.gather_rows(g.param("a", v), {2, 0, 2}), pr);
        });
    }
    {
        auto pr = proj_seed(9);
        check_gradient("a", a0, [&](Graph& g, const Tensor& v) {
            return project(g, g.take_per_row(g.param("a", v), {{1, 3}, {0, 0}, {2, 1}}), pr);
        });
    }
    {
        auto pr = proj_seed(10);
        check_gradient("a", a0, [&](Graph& g, const Tensor& v) {
            return project(g, g.row_sum(g.param("a", v)), pr);
        });
    }
    check_gradient("a", a0,
                   [&](Graph& g, const Tensor& v) { return g.mean_all(g.param("a", v)); });

    const Tensor x3 = random_tensor({2, 3, 4}, rng);
    {
        auto pr = proj_seed(12);
        check_gradient("a", x3, [&](Graph& g, const Tensor& v) {
            return project(g, g.bilinear_upsample(g.param("a", v), 2), pr);
        });
    }
    {
        auto pr = proj_seed(13);
        check_gradient("a", x3, [&](Graph& g, const Tensor& v) {
            return project(g, g.channels_last(g.param("a", v)), pr);
        });
    }
    {
        auto pr = proj_seed(14);
        check_gradient("a", x3, [&](Graph& g, const Tensor& v) {
            Node* b = g.param("a", v);
            return project(g, g.add_channel_bias(b, g.constant(Tensor({2}, {0.3, -0.7}))), pr);
        });
    }

    // relu, skipping points near the kink
    {
        auto pr = proj_seed(15);
        check_gradient(
            "a", a0,
            [&](Graph& g, const Tensor& v) { return project(g, g.relu(g.param("a", v)), pr); },
            [](double x) { return std::abs(x) < 1e-3; });
    }
}

TEST_CASE("cosine_sim values and gradients") {
    Graph g;
    Node* a = g.constant(Tensor({1, 2}, {1.0, 0.0}));
    Node* b = g.constant(Tensor({1, 2}, {1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0)}));
    CHECK(g.cosine_sim(a, b)->value[0] == doctest::Approx(0.70711).epsilon(1e-4));

    // cosine is norm-invariant in both arguments
    Node* a2 = g.constant(Tensor({1, 2}, {3.0, 0.0}));
    CHECK(g.cosine_sim(a2, b)->value[0] == doctest::Approx(g.cosine_sim(a, b)->value[0]));

    Rng rng = make_rng(13);
    const Tensor lhs = random_tensor({3, 4}, rng, 0.3, 1.5);
    const Tensor rhs = random_tensor({5, 4}, rng, 0.3, 1.5);
    auto pr1 = make_rng(77);
    check_gradient("a", lhs, [&](Graph& g2, const Tensor& v) {
        return project(g2, g2.cosine_sim(g2.param("a", v), g2.constant(rhs)), pr1);
    });
    auto pr2 = make_rng(77);
    check_gradient("b", rhs, [&](Graph& g2, const Tensor& v) {
        return project(g2, g2.cosine_sim(g2.constant(lhs), g2.param("b", v)), pr2);
    });
}

TEST_CASE("batchnorm train matches the hand computation") {
    Graph g;
    Node* x = g.constant(Tensor({1, 2, 2}, {1.0, 2.0, 3.0, 4.0}));
    Node* gamma = g.constant(Tensor({1}, {2.0}));
    Node* beta = g.constant(Tensor({1}, {1.0}));
    Tensor mean, var;
    Node* y = g.batchnorm_train(x, gamma, beta, 0.0, &mean, &var);
    // population variance of {1,2,3,4} is 1.25
    CHECK(mean[0] == doctest::Approx(2.5));
    CHECK(var[0] == doctest::Approx(1.25));
    const double s = std::sqrt(1.25);
    CHECK(y->value[0] == doctest::Approx((1.0 - 2.5) / s * 2.0 + 1.0));
    CHECK(y->value[1] == doctest::Approx((2.0 - 2.5) / s * 2.0 + 1.0));
    CHECK(y->value[2] == doctest::Approx((3.0 - 2.5) / s * 2.0 + 1.0));
    CHECK(y->value[3] == doctest::Approx((4.0 - 2.5) / s * 2.0 + 1.0));
    CHECK(y->value[0] == doctest::Approx(-1.3416407865 * 2.0 + 1.0));
}

TEST_CASE("batchnorm eval with identity affine is the identity") {
    Graph g;
    Rng rng = make_rng(3);
    const Tensor x0 = random_tensor({2, 3, 3}, rng);
    Node* y = g.batchnorm_eval(g.constant(x0), g.constant(Tensor::full({2}, 1.0)),
                               g.constant(Tensor({2})), Tensor({2}), Tensor::full({2}, 1.0), 0.0);
    for (long long i = 0; i < x0.numel(); ++i) CHECK(y->value[i] == doctest::Approx(x0[i]));
}

TEST_CASE("batchnorm gradients match finite differences") {
    Rng rng = make_rng(21);
    const Tensor x0 = random_tensor({2, 3, 3}, rng);
    const Tensor g0 = random_tensor({2}, rng, 0.5, 1.5);
    const Tensor b0 = random_tensor({2}, rng);
    const double eps = 1e-5;

    auto build_sum = [](Graph& g, Node* y) { return g.scale(g.mean_all(y), 18.0); };

    check_gradient("gamma", g0, [&](Graph& g, const Tensor& v) {
        Tensor m, va;
        return build_sum(
            g, g.batchnorm_train(g.constant(x0), g.param("gamma", v), g.constant(b0), eps, &m, &va));
    });
    check_gradient("beta", b0, [&](Graph& g, const Tensor& v) {
        Tensor m, va;
        return build_sum(
            g, g.batchnorm_train(g.constant(x0), g.constant(g0), g.param("beta", v), eps, &m, &va));
    });
    auto pr = make_rng(99);
    check_gradient("x", x0, [&](Graph& g, const Tensor& v) {
        Tensor m, va;
        return project(
            g, g.batchnorm_train(g.param("x", v), g.constant(g0), g.constant(b0), eps, &m, &va), pr);
    });
    auto pr2 = make_rng(99);
    check_gradient("x", x0, [&](Graph& g, const Tensor& v) {
        return project(g,
                       g.batchnorm_eval(g.param("x", v), g.constant(g0), g.constant(b0),
                                        Tensor({2}, {0.1, -0.2}), Tensor({2}, {0.9, 1.1}), eps),
                       pr2);
    });
}

TEST_CASE("batchnorm errors") {
    Graph g;
    Node* x = g.constant(Tensor({2, 2, 2}));
    CHECK_THROWS_AS(g.batchnorm_train(x, g.constant(Tensor({3})), g.constant(Tensor({3})), 1e-5),
                    std::invalid_argument);
    Node* tiny = g.constant(Tensor({1, 1, 1}));
    CHECK_THROWS_AS(g.batchnorm_train(tiny, g.constant(Tensor({1})), g.constant(Tensor({1})), 1e-5),
                    std::invalid_argument);
}

TEST_CASE("softmax_temp is uniform on constant rows and sums to one") {
    Graph g;
    for (double t : {0.25, 1.0, 7.0}) {
        Node* y = g.softmax_temp(g.constant(Tensor::full({2, 5}, 3.7)), t);
        for (long long i = 0; i < y->value.numel(); ++i)
            CHECK(y->value[i] == doctest::Approx(0.2).epsilon(1e-12));
    }
    Rng rng = make_rng(5);
    Node* y = g.softmax_temp(g.constant(random_tensor({4, 6}, rng, -3.0, 3.0)), 0.5);
    for (int r = 0; r < 4; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 6; ++c) sum += y->value.at2(r, c);
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("bilinear upsample of a constant map is constant") {
    Graph g;
    Node* y = g.bilinear_upsample(g.constant(Tensor::full({2, 3, 4}, 0.42)), 3);
    CHECK(y->value.dims() == std::vector<int>{2, 9, 12});
    for (long long i = 0; i < y->value.numel(); ++i) CHECK(y->value[i] == doctest::Approx(0.42));
}

TEST_CASE("l2_normalize_rows flags degenerate rows and passes them through") {
    Graph g;
    std::vector<uint8_t> flags;
    Node* y =
        g.l2_normalize_rows(g.constant(Tensor({2, 3}, {3.0, 4.0, 0.0, 0.0, 0.0, 0.0})), &flags);
    CHECK(flags == std::vector<uint8_t>{0, 1});
    CHECK(y->value.at2(0, 0) == doctest::Approx(0.6));
    CHECK(y->value.at2(0, 1) == doctest::Approx(0.8));
    CHECK(y->value.at2(1, 0) == doctest::Approx(0.0));
}

TEST_CASE("backward of a plain sum gives all-ones adjoints") {
    Graph g;
    Rng rng = make_rng(17);
    const Tensor x0 = random_tensor({3, 5}, rng);
    Node* x = g.param("x", x0);
    Node* root = g.scale(g.mean_all(x), static_cast<double>(x0.numel()));
    const GradMap grads = g.backward(root);
    for (long long i = 0; i < x0.numel(); ++i) CHECK(grads.at("x")[i] == doctest::Approx(1.0));
}

TEST_CASE("backward rejects non-scalar roots") {
    Graph g;
    Node* x = g.param("x", Tensor({2, 2}));
    CHECK_THROWS_AS(g.backward(g.relu(x)), std::invalid_argument);
}

TEST_CASE("frozen leaves are absent from the gradient map") {
    Graph g;
    Node* x = g.param("x", Tensor::full({2, 2}, 1.0));
    Node* k = g.param("frozen_kernel", Tensor::full({2, 2}, 2.0), true);
    Node* root = g.mean_all(g.mul(x, k));
    const GradMap grads = g.backward(root);
    CHECK(grads.count("x") == 1);
    CHECK(grads.count("frozen_kernel") == 0);
}

TEST_CASE("adjoints are linear and backward is repeatable") {
    Graph g;
    Rng rng = make_rng(23);
    const Tensor x0 = random_tensor({4, 3}, rng, 0.2, 1.8);
    Node* x = g.param("x", x0);
    Node* f = g.mean_all(g.mul(x, x));
    Node* h = g.mean_all(g.log_floor(x));
    Node* combined = g.weighted_sum({f, h}, {2.0, -3.0});

    const GradMap gf = g.backward(f);
    const GradMap gh = g.backward(h);
    const GradMap gc = g.backward(combined);
    for (long long i = 0; i < x0.numel(); ++i)
        CHECK(gc.at("x")[i] ==
              doctest::Approx(2.0 * gf.at("x")[i] - 3.0 * gh.at("x")[i]).epsilon(1e-12));

    // no accumulation across repeated sweeps
    const GradMap again = g.backward(combined);
    for (long long i = 0; i < x0.numel(); ++i)
        CHECK(again.at("x")[i] == doctest::Approx(gc.at("x")[i]).epsilon(1e-15));
}

TEST_CASE("ops reject non-finite results") {
    Graph g;
    Node* big = g.constant(Tensor::full({1, 2}, 1e308));
    CHECK_THROWS_WITH_AS(g.add(big, big), doctest::Contains("op_add"), std::runtime_error);
}
