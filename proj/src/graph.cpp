#include "ftea/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "ftea/errors.hpp"

namespace ftea {

namespace {

constexpr double kNormFloor = 1e-12;
constexpr double kLogFloor = 1e-12;

void check_rank(const Node* n, int rank, const char* op, const char* role) {
    if (n->value.rank() != rank)
        throw std::invalid_argument(std::string(op) + ": " + role + " must have rank " +
                                    std::to_string(rank) + ", got dims " + n->value.dims_str());
}

void ensure_grad(Node* n) {
    if (!n->grad.same_dims(n->value)) n->grad = Tensor(n->value.dims());
}

}  // namespace

Node* Graph::make(const char* op, Tensor value, std::vector<Node*> inputs) {
    if (!value.all_finite())
        throw std::runtime_error(std::string(op) + ": non-finite value produced");
    nodes_.emplace_back();
    Node* n = &nodes_.back();
    n->op = op;
    n->value = std::move(value);
    n->inputs = std::move(inputs);
    for (Node* in : n->inputs)
        if (in->requires_grad) n->requires_grad = true;
    return n;
}

Node* Graph::constant(Tensor value) { return make("constant", std::move(value), {}); }

Node* Graph::param(const std::string& name, Tensor value, bool frozen) {
    Node* n = make("param", std::move(value), {});
    n->leaf_name = name;
    n->requires_grad = !frozen;
    return n;
}

Node* Graph::conv2d(Node* input, Node* kernel, int stride, int pad) {
    check_rank(input, 3, "op_conv2d", "input");
    check_rank(kernel, 4, "op_conv2d", "kernel");
    const int ci = input->value.dim(0), h = input->value.dim(1), w = input->value.dim(2);
    const int co = kernel->value.dim(0), kci = kernel->value.dim(1);
    const int kh = kernel->value.dim(2), kw = kernel->value.dim(3);
    if (kci != ci)
        throw std::invalid_argument("op_conv2d: input channel axis " + std::to_string(ci) +
                                    " != kernel C_in axis " + std::to_string(kci));
    if (kh % 2 == 0 || kw % 2 == 0)
        throw std::invalid_argument("op_conv2d: kernel extents must be odd, got kh=" +
                                    std::to_string(kh) + " kw=" + std::to_string(kw));
    if (stride < 1) throw std::invalid_argument("op_conv2d: stride must be positive");
    if (pad < 0) throw std::invalid_argument("op_conv2d: pad must be nonnegative");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    if (h + 2 * pad < kh || w + 2 * pad < kw || oh < 1 || ow < 1)
        throw std::invalid_argument("op_conv2d: output extent collapsed on H/W axis (input " +
                                    input->value.dims_str() + ", kernel " +
                                    kernel->value.dims_str() + ")");

    Tensor out({co, oh, ow});
    const Tensor& x = input->value;
    const Tensor& k = kernel->value;
    for (int c = 0; c < co; ++c)
        for (int y = 0; y < oh; ++y)
            for (int xo = 0; xo < ow; ++xo) {
                double acc = 0.0;
                for (int c2 = 0; c2 < ci; ++c2)
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = y * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        const double* xrow = x.data() + (static_cast<size_t>(c2) * h + iy) * w;
                        const double* krow =
                            k.data() + ((static_cast<size_t>(c) * ci + c2) * kh + ky) * kw;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = xo * stride - pad + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc += xrow[ix] * krow[kx];
                        }
                    }
                out.at3(c, y, xo) = acc;
            }

    Node* n = make("op_conv2d", std::move(out), {input, kernel});
    n->backprop = [n, input, kernel, stride, pad, ci, h, w, co, kh, kw]() {
        const Tensor& g = n->grad;
        const int oh = n->value.dim(1), ow = n->value.dim(2);
        if (input->requires_grad) {
            ensure_grad(input);
            for (int c = 0; c < co; ++c)
                for (int y = 0; y < oh; ++y)
                    for (int xo = 0; xo < ow; ++xo) {
                        const double gv = g.at3(c, y, xo);
                        if (gv == 0.0) continue;
                        for (int c2 = 0; c2 < ci; ++c2)
                            for (int ky = 0; ky < kh; ++ky) {
                                const int iy = y * stride - pad + ky;
                                if (iy < 0 || iy >= h) continue;
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int ix = xo * stride - pad + kx;
                                    if (ix < 0 || ix >= w) continue;
                                    input->grad.at3(c2, iy, ix) +=
                                        gv * kernel->value
                                                 .data()[((static_cast<size_t>(c) * ci + c2) * kh +
                                                          ky) *
                                                             kw +
                                                         kx];
                                }
                            }
                    }
        }
        if (kernel->requires_grad) {
            ensure_grad(kernel);
            for (int c = 0; c < co; ++c)
                for (int y = 0; y < oh; ++y)
                    for (int xo = 0; xo < ow; ++xo) {
                        const double gv = g.at3(c, y, xo);
                        if (gv == 0.0) continue;
                        for (int c2 = 0; c2 < ci; ++c2)
                            for (int ky = 0; ky < kh; ++ky) {
                                const int iy = y * stride - pad + ky;
                                if (iy < 0 || iy >= h) continue;
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int ix = xo * stride - pad + kx;
                                    if (ix < 0 || ix >= w) continue;
                                    kernel->grad
                                        .data()[((static_cast<size_t>(c) * ci + c2) * kh + ky) *
                                                    kw +
                                                kx] += gv * input->value.at3(c2, iy, ix);
                                }
                            }
                    }
        }
    };
    return n;
}

Node* Graph::add_channel_bias(Node* input, Node* bias) {
    check_rank(input, 3, "op_add_channel_bias", "input");
    check_rank(bias, 1, "op_add_channel_bias", "bias");
    const int c = input->value.dim(0), h = input->value.dim(1), w = input->value.dim(2);
    if (bias->value.dim(0) != c)
        throw std::invalid_argument("op_add_channel_bias: channel axis " + std::to_string(c) +
                                    " != bias length " + std::to_string(bias->value.dim(0)));
    Tensor out = input->value;
    for (int ch = 0; ch < c; ++ch) {
        const double b = bias->value[ch];
        double* plane = out.data() + static_cast<size_t>(ch) * h * w;
        for (int i = 0; i < h * w; ++i) plane[i] += b;
    }
    Node* n = make("op_add_channel_bias", std::move(out), {input, bias});
    n->backprop = [n, input, bias, c, h, w]() {
        if (input->requires_grad) {
            ensure_grad(input);
            for (long long i = 0; i < n->grad.numel(); ++i) input->grad[i] += n->grad[i];
        }
        if (bias->requires_grad) {
            ensure_grad(bias);
            for (int ch = 0; ch < c; ++ch) {
                const double* plane = n->grad.data() + static_cast<size_t>(ch) * h * w;
                double acc = 0.0;
                for (int i = 0; i < h * w; ++i) acc += plane[i];
                bias->grad[ch] += acc;
            }
        }
    };
    return n;
}

Node* Graph::batchnorm_train(Node* input, Node* gamma, Node* beta, double eps,
                             Tensor* batch_mean_out, Tensor* batch_var_out) {
    check_rank(input, 3, "op_batchnorm", "input");
    const int c = input->value.dim(0), h = input->value.dim(1), w = input->value.dim(2);
    const int plane = h * w;
    if (gamma->value.numel() != c || beta->value.numel() != c)
        throw std::invalid_argument("op_batchnorm: channel axis " + std::to_string(c) +
                                    " != affine parameter length");
    if (plane < 2)
        throw std::invalid_argument("op_batchnorm: train mode needs H*W >= 2, got " +
                                    std::to_string(plane));

    Tensor mean({c}), var({c});
    Tensor xhat(input->value.dims());
    std::vector<double> inv_std(static_cast<size_t>(c));
    Tensor out(input->value.dims());
    for (int ch = 0; ch < c; ++ch) {
        const double* xp = input->value.data() + static_cast<size_t>(ch) * plane;
        double m = 0.0;
        for (int i = 0; i < plane; ++i) m += xp[i];
        m /= plane;
        double v = 0.0;
        for (int i = 0; i < plane; ++i) v += (xp[i] - m) * (xp[i] - m);
        v /= plane;
        if (v + eps <= 0.0)
            throw std::runtime_error("op_batchnorm: sigma^2+eps <= 0 on channel " +
                                     std::to_string(ch));
        mean[ch] = m;
        var[ch] = v;
        const double is = 1.0 / std::sqrt(v + eps);
        inv_std[static_cast<size_t>(ch)] = is;
        const double g = gamma->value[ch], b = beta->value[ch];
        double* xh = xhat.data() + static_cast<size_t>(ch) * plane;
        double* op = out.data() + static_cast<size_t>(ch) * plane;
        for (int i = 0; i < plane; ++i) {
            xh[i] = (xp[i] - m) * is;
            op[i] = g * xh[i] + b;
        }
    }
    if (batch_mean_out) *batch_mean_out = mean;
    if (batch_var_out) *batch_var_out = var;

    Node* n = make("op_batchnorm", std::move(out), {input, gamma, beta});
    n->backprop = [n, input, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), c,
                   plane]() {
        const Tensor& g = n->grad;
        for (int ch = 0; ch < c; ++ch) {
            const double* gp = g.data() + static_cast<size_t>(ch) * plane;
            const double* xh = xhat.data() + static_cast<size_t>(ch) * plane;
            double sum_g = 0.0, sum_gx = 0.0;
            for (int i = 0; i < plane; ++i) {
                sum_g += gp[i];
                sum_gx += gp[i] * xh[i];
            }
            if (gamma->requires_grad) {
                ensure_grad(gamma);
                gamma->grad[ch] += sum_gx;
            }
            if (beta->requires_grad) {
                ensure_grad(beta);
                beta->grad[ch] += sum_g;
            }
            if (input->requires_grad) {
                ensure_grad(input);
                const double scale = gamma->value[ch] * inv_std[static_cast<size_t>(ch)];
                const double mg = sum_g / plane, mgx = sum_gx / plane;
                double* ip = input->grad.data() + static_cast<size_t>(ch) * plane;
                for (int i = 0; i < plane; ++i) ip[i] += scale * (gp[i] - mg - xh[i] * mgx);
            }
        }
    };
    return n;
}

Node* Graph::batchnorm_eval(Node* input, Node* gamma, Node* beta, const Tensor& run_mean,
                            const Tensor& run_var, double eps) {
    check_rank(input, 3, "op_batchnorm", "input");
    const int c = input->value.dim(0), h = input->value.dim(1), w = input->value.dim(2);
    const int plane = h * w;
    if (gamma->value.numel() != c || beta->value.numel() != c || run_mean.numel() != c ||
        run_var.numel() != c)
        throw std::invalid_argument("op_batchnorm: channel axis " + std::to_string(c) +
                                    " != state vector length");
    Tensor out(input->value.dims());
    Tensor xhat(input->value.dims());
    std::vector<double> inv_std(static_cast<size_t>(c));
    for (int ch = 0; ch < c; ++ch) {
        if (run_var[ch] + eps <= 0.0)
            throw std::runtime_error("op_batchnorm: sigma^2+eps <= 0 on channel " +
                                     std::to_string(ch));
        const double is = 1.0 / std::sqrt(run_var[ch] + eps);
        inv_std[static_cast<size_t>(ch)] = is;
        const double m = run_mean[ch], g = gamma->value[ch], b = beta->value[ch];
        const double* xp = input->value.data() + static_cast<size_t>(ch) * plane;
        double* xh = xhat.data() + static_cast<size_t>(ch) * plane;
        double* op = out.data() + static_cast<size_t>(ch) * plane;
        for (int i = 0; i < plane; ++i) {
            xh[i] = (xp[i] - m) * is;
            op[i] = g * xh[i] + b;
        }
    }
    Node* n = make("op_batchnorm", std::move(out), {input, gamma, beta});
    n->backprop = [n, input, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), c,
                   plane]() {
        const Tensor& g = n->grad;
        for (int ch = 0; ch < c; ++ch) {
            const double* gp = g.data() + static_cast<size_t>(ch) * plane;
            const double* xh = xhat.data() + static_cast<size_t>(ch) * plane;
            if (gamma->requires_grad || beta->requires_grad) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (int i = 0; i < plane; ++i) {
                    sum_g += gp[i];
                    sum_gx += gp[i] * xh[i];
                }
                if (gamma->requires_grad) {
                    ensure_grad(gamma);
                    gamma->grad[ch] += sum_gx;
                }
                if (beta->requires_grad) {
                    ensure_grad(beta);
                    beta->grad[ch] += sum_g;
                }
            }
            if (input->requires_grad) {
                ensure_grad(input);
                const double scale = gamma->value[ch] * inv_std[static_cast<size_t>(ch)];
                double* ip = input->grad.data() + static_cast<size_t>(ch) * plane;
                for (int i = 0; i < plane; ++i) ip[i] += scale * gp[i];
            }
        }
    };
    return n;
}

Node* Graph::relu(Node* input) {
    Tensor out = input->value;
    for (long long i = 0; i < out.numel(); ++i)
        if (out[i] < 0.0) out[i] = 0.0;
    Node* n = make("op_relu", std::move(out), {input});
    n->backprop = [n, input]() {
        if (!input->requires_grad) return;
        ensure_grad(input);
        for (long long i = 0; i < n->grad.numel(); ++i)
            if (input->value[i] > 0.0) input->grad[i] += n->grad[i];
    };
    return n;
}

Node* Graph::add(Node* a, Node* b) {
    if (!a->value.same_dims(b->value))
        throw std::invalid_argument("op_add: dims " + a->value.dims_str() + " != " +
                                    b->value.dims_str());
    Tensor out = a->value;
    for (long long i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    Node* n = make("op_add", std::move(out), {a, b});
    n->backprop = [n, a, b]() {
        for (Node* in : {a, b}) {
            if (!in->requires_grad) continue;
            ensure_grad(in);
            for (long long i = 0; i < n->grad.numel(); ++i) in->grad[i] += n->grad[i];
        }
    };
    return n;
}

Node* Graph::sub(Node* a, Node* b) {
    if (!a->value.same_dims(b->value))
        throw std::invalid_argument("op_sub: dims " + a->value.dims_str() + " != " +
                                    b->value.dims_str());
    Tensor out = a->value;
    for (long long i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
    Node* n = make("op_sub", std::move(out), {a, b});
    n->backprop = [n, a, b]() {
        if (a->requires_grad) {
            ensure_grad(a);
            for (long long i = 0; i < n->grad.numel(); ++i) a->grad[i] += n->grad[i];
        }
        if (b->requires_grad) {
            ensure_grad(b);
            for (long long i = 0; i < n->grad.numel(); ++i) b->grad[i] -= n->grad[i];
        }
    };
    return n;
}

Node* Graph::mul(Node* a, Node* b) {
    if (!a->value.same_dims(b->value))
        throw std::invalid_argument("op_mul: dims " + a->value.dims_str() + " != " +
                                    b->value.dims_str());
    Tensor out = a->value;
    for (long long i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    Node* n = make("op_mul", std::move(out), {a, b});
    n->backprop = [n, a, b]() {
        if (a->requires_grad) {
            ensure_grad(a);
            for (long long i = 0; i < n->grad.numel(); ++i) a->grad[i] += n->grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            ensure_grad(b);
            for (long long i = 0; i < n->grad.numel(); ++i) b->grad[i] += n->grad[i] * a->value[i];
        }
    };
    return n;
}

Node* Graph::scale(Node* input, double factor) {
    Tensor out = input->value;
    for (long long i = 0; i < out.numel(); ++i) out[i] *= factor;
    Node* n = make("op_scale", std::move(out), {input});
    n->backprop = [n, input, factor]() {
        if (!input->requires_grad) return;
        ensure_grad(input);
        for (long long i = 0; i < n->grad.numel(); ++i) input->grad[i] += n->grad[i] * factor;
    };
    return n;
}

Node* Graph::bilinear_upsample(Node* input, int factor) {
    check_rank(input, 3, "op_bilinear_upsample", "input");
    if (factor < 1) throw std::invalid_argument("op_bilinear_upsample: factor must be >= 1");
    const int c = input->value.dim(0), h = input->value.dim(1), w = input->value.dim(2);
    const int oh = h * factor, ow = w * factor;

    // pixel-center sample positions, clamped at the borders
    auto taps = [factor](int out_extent, int in_extent) {
        std::vector<std::tuple<int, int, double>> t(static_cast<size_t>(out_extent));
        for (int d = 0; d < out_extent; ++d) {
            double src = (d + 0.5) / factor - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(in_extent - 1));
            const int i0 = static_cast<int>(src);
            const int i1 = std::min(i0 + 1, in_extent - 1);
            t[static_cast<size_t>(d)] = {i0, i1, src - i0};
        }
        return t;
    };
    const auto rows = taps(oh, h);
    const auto cols = taps(ow, w);

    Tensor out({c, oh, ow});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y) {
            const auto [y0, y1, fy] = rows[static_cast<size_t>(y)];
            for (int x = 0; x < ow; ++x) {
                const auto [x0, x1, fx] = cols[static_cast<size_t>(x)];
                out.at3(ch, y, x) = (1 - fy) * (1 - fx) * input->value.at3(ch, y0, x0) +
                                    (1 - fy) * fx * input->value.at3(ch, y0, x1) +
                                    fy * (1 - fx) * input->value.at3(ch, y1, x0) +
                                    fy * fx * input->value.at3(ch, y1, x1);
            }
        }
    Node* n = make("op_bilinear_upsample", std::move(out), {input});
    n->backprop = [n, input, rows, cols, c, oh, ow]() {
        if (!input->requires_grad) return;
        ensure_grad(input);
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < oh; ++y) {
                const auto [y0, y1, fy] = rows[static_cast<size_t>(y)];
                for (int x = 0; x < ow; ++x) {
                    const auto [x0, x1, fx] = cols[static_cast<size_t>(x)];
                    const double g = n->grad.at3(ch, y, x);
                    input->grad.at3(ch, y0, x0) += g * (1 - fy) * (1 - fx);
                    input->grad.at3(ch, y0, x1) += g * (1 - fy) * fx;
                    input->grad.at3(ch, y1, x0) += g * fy * (1 - fx);
                    input->grad.at3(ch, y1, x1) += g * fy * fx;
                }
            }
    };
    return n;
}

Node* Graph::channels_last(Node* input) {
    check_rank(input, 3, "op_channels_last", "input");
    const int c = input->value.dim(0), h = input->value.dim(1), w = input->value.dim(2);
    const int hw = h * w;
    Tensor out({hw, c});
    for (int ch = 0; ch < c; ++ch)
        for (int p = 0; p < hw; ++p) out.at2(p, ch) = input->value[static_cast<long long>(ch) * hw + p];
    Node* n = make("op_channels_last", std::move(out), {input});
    n->backprop = [n, input, c, hw]() {
        if (!input->requires_grad) return;
        ensure_grad(input);
        for (int ch = 0; ch < c; ++ch)
            for (int p = 0; p < hw; ++p)
                input->grad[static_cast<long long>(ch) * hw + p] += n->grad.at2(p, ch);
    };
    return n;
}

Node* Graph::l2_normalize_rows(Node* input, std::vector<uint8_t>* degenerate_out) {
    check_rank(input, 2, "op_l2_normalize_rows", "input");
    const int r = input->value.dim(0), c = input->value.dim(1);
    Tensor out(input->value.dims());
    std::vector<double> norms(static_cast<size_t>(r));
    std::vector<uint8_t> flags(static_cast<size_t>(r), 0);
    for (int i = 0; i < r; ++i) {
        const double* xp = input->value.data() + static_cast<size_t>(i) * c;
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += xp[j] * xp[j];
        const double norm = std::sqrt(s);
        norms[static_cast<size_t>(i)] = norm;
        double* op = out.data() + static_cast<size_t>(i) * c;
        if (norm <= kNormFloor) {
            flags[static_cast<size_t>(i)] = 1;
            std::copy(xp, xp + c, op);
        } else {
            for (int j = 0; j < c; ++j) op[j] = xp[j] / norm;
        }
    }
    if (degenerate_out) *degenerate_out = flags;
    Node* n = make("op_l2_normalize_rows", std::move(out), {input});
    n->backprop = [n, input, norms = std::move(norms), flags = std::move(flags), r, c]() {
        if (!input->requires_grad) return;
        ensure_grad(input);
        for (int i = 0; i < r; ++i) {
            const double* gp = n->grad.data() + static_cast<size_t>(i) * c;
            double* ip = input->grad.data() + static_cast<size_t>(i) * c;
            if (flags[static_cast<size_t>(i)]) {
                for (int j = 0; j < c; ++j) ip[j] += gp[j];
                continue;
            }
            const double* yp = n->value.data() + static_cast<size_t>(i) * c;
            double gy = 0.0;
            for (int j = 0; j < c; ++j) gy += gp[j] * yp[j];
            const double inv = 1.0 / norms[static_cast<size_t>(i)];
            for (int j = 0; j < c; ++j) ip[j] += (gp[j] - yp[j] * gy) * inv;
        }
    };
    return n;
}

Node* Graph::gather_rows(Node* input, std::vector<int> rows) {
    check_rank(input, 2, "op_gather_rows", "input");
    const int r = input->value.dim(0), c = input->value.dim(1);
    if (rows.empty()) throw std::invalid_argument("op_gather_rows: empty row list");
    for (int idx : rows)
        if (idx < 0 || idx >= r)
            throw std::invalid_argument("op_gather_rows: row " + std::to_string(idx) +
                                        " out of range [0," + std::to_string(r) + ")");
    Tensor out({static_cast<int>(rows.size()), c});
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy(input->value.data() + static_cast<size_t>(rows[i]) * c,
                  input->value.data() + static_cast<size_t>(rows[i] + 1) * c,
                  out.data() + i * c);
    Node* n = make("op_gather_rows", std::move(out), {input});
    n->backprop = [n, input, rows = std::move(rows), c]() {
        if (!input->requires_grad) return;
        ensure_grad(input);
        for (size_t i = 0; i < rows.size(); ++i) {
            const double* gp = n->grad.data() + i * c;
            double* ip = input->grad.data() + static_cast<size_t>(rows[i]) * c;
            for (int j = 0; j < c; ++j) ip[j] += gp[j];
        }
    };
    return n;
}

Node* Graph::cosine_sim(Node* a, Node* b) {
    check_rank(a, 2, "op_cosine_sim", "lhs");
    check_rank(b, 2, "op_cosine_sim", "rhs");
    const int p = a->value.dim(0), c = a->value.dim(1), q = b->value.dim(0);
    if (b->value.dim(1) != c)
        throw std::invalid_argument("op_cosine_sim: feature axis " + std::to_string(c) + " != " +
                                    std::to_string(b->value.dim(1)));
    std::vector<double> na(static_cast<size_t>(p)), nb(static_cast<size_t>(q));
    auto norms = [c](const Tensor& t, std::vector<double>& out) {
        for (int i = 0; i < t.dim(0); ++i) {
            const double* xp = t.data() + static_cast<size_t>(i) * c;
            double s = 0.0;
            for (int j = 0; j < c; ++j) s += xp[j] * xp[j];
            out[static_cast<size_t>(i)] = std::sqrt(s);
        }
    };
    norms(a->value, na);
    norms(b->value, nb);
    Tensor out({p, q});
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < q; ++j) {
            if (na[static_cast<size_t>(i)] <= kNormFloor || nb[static_cast<size_t>(j)] <= kNormFloor) {
                out.at2(i, j) = 0.0;
                continue;
            }
            const double* ap = a->value.data() + static_cast<size_t>(i) * c;
            const double* bp = b->value.data() + static_cast<size_t>(j) * c;
            double dot = 0.0;
            for (int k = 0; k < c; ++k) dot += ap[k] * bp[k];
            out.at2(i, j) = dot / (na[static_cast<size_t>(i)] * nb[static_cast<size_t>(j)]);
        }
    Node* n = make("op_cosine_sim", std::move(out), {a, b});
    n->backprop = [n, a, b, na = std::move(na), nb = std::move(nb), p, q, c]() {
        for (int i = 0; i < p; ++i) {
            for (int j = 0; j < q; ++j) {
                const double g = n->grad.at2(i, j);
                if (g == 0.0) continue;
                const double nai = na[static_cast<size_t>(i)], nbj = nb[static_cast<size_t>(j)];
                if (nai <= kNormFloor || nbj <= kNormFloor) continue;
                const double cos = n->value.at2(i, j);
                const double* ap = a->value.data() + static_cast<size_t>(i) * c;
                const double* bp = b->value.data() + static_cast<size_t>(j) * c;
                if (a->requires_grad) {
                    ensure_grad(a);
                    double* gp = a->grad.data() + static_cast<size_t>(i) * c;
                    for (int k = 0; k < c; ++k)
                        gp[k] += g * (bp[k] / (nai * nbj) - cos * ap[k] / (nai * nai));
                }
                if (b->requires_grad) {
                    ensure_grad(b);
                    double* gp = b->grad.data() + static_cast<size_t>(j) * c;
                    for (int k = 0; k < c; ++k)
                        gp[k] += g * (ap[k] / (nai * nbj) - cos * bp[k] / (nbj * nbj));
                }
            }
        }
    };
    return n;
}

Node* Graph::softmax_temp(Node* input, double temperature) {
    check_rank(input, 2, "op_softmax_temp", "input");
    if (temperature <= 0.0) throw std::invalid_argument("op_softmax_temp: T must be > 0");
    const int r = input->value.dim(0), c = input->value.dim(1);
    Tensor out(input->value.dims());
    for (int i = 0; i < r; ++i) {
        const double* zp = input->value.data() + static_cast<size_t>(i) * c;
        double* op = out.data() + static_cast<size_t>(i) * c;
        double zmax = zp[0];
        for (int j = 1; j < c; ++j) zmax = std::max(zmax, zp[j]);
        double denom = 0.0;
        for (int j = 0; j < c; ++j) {
            op[j] = std::exp((zp[j] - zmax) / temperature);
            denom += op[j];
        }
        for (int j = 0; j < c; ++j) op[j] /= denom;
    }
    Node* n = make("op_softmax_temp", std::move(out), {input});
    n->backprop = [n, input, temperature, r, c]() {
        if (!input->requires_grad) return;
        ensure_grad(input);
        for (int i = 0; i < r; ++i) {
            const double* gp = n->grad.data() + static_cast<size_t>(i) * c;
            const double* pp = n->value.data() + static_cast<size_t>(i) * c;
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += gp[j] * pp[j];
            double* ip = input->grad.data() + static_cast<size_t>(i) * c;
            for (int j = 0; j < c; ++j) ip[j] += pp[j] * (gp[j] - dot) / temperature;
        }
    };
    return n;
}

Node* Graph::log_floor(Node* input) {
    Tensor out = input->value;
    for (long long i = 0; i < out.numel(); ++i) out[i] = std::log(std::max(out[i], kLogFloor));
    Node* n = make("op_log", std::move(out), {input});
    n->backprop = [n, input]() {
        if (!input->requires_grad) return;
        ensure_grad(input);
        for (long long i = 0; i < n->grad.numel(); ++i)
            input->grad[i] += n->grad[i] / std::max(input->value[i], kLogFloor);
    };
    return n;
}

Node* Graph::take_per_row(Node* input, std::vector<std::vector<int>> idx) {
    check_rank(input, 2, "op_take_per_row", "input");
    const int r = input->value.dim(0), c = input->value.dim(1);
    if (static_cast<int>(idx.size()) != r)
        throw std::invalid_argument("op_take_per_row: index rows " + std::to_string(idx.size()) +
                                    " != input rows " + std::to_string(r));
    const size_t k = idx.empty() ? 0 : idx[0].size();
    if (k == 0) throw std::invalid_argument("op_take_per_row: empty selection");
    for (const auto& row : idx) {
        if (row.size() != k)
            throw std::invalid_argument("op_take_per_row: ragged index rows");
        for (int j : row)
            if (j < 0 || j >= c)
                throw std::invalid_argument("op_take_per_row: column " + std::to_string(j) +
                                            " out of range [0," + std::to_string(c) + ")");
    }
    Tensor out({r, static_cast<int>(k)});
    for (int i = 0; i < r; ++i)
        for (size_t j = 0; j < k; ++j)
            out.at2(i, static_cast<int>(j)) = input->value.at2(i, idx[static_cast<size_t>(i)][j]);
    Node* n = make("op_take_per_row", std::move(out), {input});
    n->backprop = [n, input, idx = std::move(idx), k]() {
        if (!input->requires_grad) return;
        ensure_grad(input);
        for (int i = 0; i < n->value.dim(0); ++i)
            for (size_t j = 0; j < k; ++j)
                input->grad.at2(i, idx[static_cast<size_t>(i)][j]) +=
                    n->grad.at2(i, static_cast<int>(j));
    };
    return n;
}

Node* Graph::row_sum(Node* input) {
    check_rank(input, 2, "op_row_sum", "input");
    const int r = input->value.dim(0), c = input->value.dim(1);
    Tensor out({r});
    for (int i = 0; i < r; ++i) {
        const double* xp = input->value.data() + static_cast<size_t>(i) * c;
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += xp[j];
        out[i] = s;
    }
    Node* n = make("op_row_sum", std::move(out), {input});
    n->backprop = [n, input, r, c]() {
        if (!input->requires_grad) return;
        ensure_grad(input);
        for (int i = 0; i < r; ++i) {
            double* ip = input->grad.data() + static_cast<size_t>(i) * c;
            for (int j = 0; j < c; ++j) ip[j] += n->grad[i];
        }
    };
    return n;
}

Node* Graph::mean_all(Node* input) {
    const long long m = input->value.numel();
    double s = 0.0;
    for (long long i = 0; i < m; ++i) s += input->value[i];
    Node* n = make("op_mean", Tensor::scalar(s / m), {input});
    n->backprop = [n, input, m]() {
        if (!input->requires_grad) return;
        ensure_grad(input);
        const double g = n->grad[0] / m;
        for (long long i = 0; i < m; ++i) input->grad[i] += g;
    };
    return n;
}

Node* Graph::weighted_sum(const std::vector<Node*>& terms, const std::vector<double>& weights) {
    if (terms.empty() || terms.size() != weights.size())
        throw std::invalid_argument("op_weighted_sum: need matching nonempty terms and weights");
    double acc = 0.0;
    for (size_t i = 0; i < terms.size(); ++i) {
        if (terms[i]->value.numel() != 1)
            throw std::invalid_argument("op_weighted_sum: term " + std::to_string(i) +
                                        " is not scalar");
        acc += weights[i] * terms[i]->value[0];
    }
    Node* n = make("op_weighted_sum", Tensor::scalar(acc), terms);
    n->backprop = [n, weights]() {
        for (size_t i = 0; i < n->inputs.size(); ++i) {
            Node* in = n->inputs[i];
            if (!in->requires_grad) continue;
            ensure_grad(in);
            in->grad[0] += n->grad[0] * weights[i];
        }
    };
    return n;
}

GradMap Graph::backward(Node* root) {
    if (root->value.numel() != 1)
        throw std::invalid_argument("backward: root must be scalar, got dims " +
                                    root->value.dims_str());

    // iterative post-order; visits each reachable node once
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* in = node->inputs[next++];
            if (seen.insert(in).second) stack.emplace_back(in, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        n->grad = Tensor(n->value.dims());
    }
    root->grad[0] = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->backprop) n->backprop();
    }

    GradMap result;
    for (Node* n : order) {
        if (n->leaf_name.empty() || !n->requires_grad) continue;
        if (!result.emplace(n->leaf_name, n->grad).second)
            throw internal_error("backward: duplicate parameter node '" + n->leaf_name + "'");
    }
    return result;
}

double rel_gap(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                      std::vector<double> x, double h) {
    std::vector<double> grad(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

}  // namespace ftea
