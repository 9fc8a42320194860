#pragma once

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ftea/tensor.hpp"

namespace ftea {

class Graph;

// One node of the reverse-mode graph. Forward values are computed eagerly
// at construction; adjoints are filled in by Graph::backward. A node's
// adjoint always has the dims of its value.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Node*> inputs;
    std::function<void()> backprop;  // accumulates into the inputs' grads
    std::string leaf_name;           // non-empty for named parameters
    const char* op = "leaf";

    double scalar() const { return value[0]; }
};

using GradMap = std::map<std::string, Tensor>;

// Arena for one differentiation graph. Nodes stay valid for the lifetime
// of the graph; the graph is rebuilt from scratch every iteration.
class Graph {
public:
    // leaves ------------------------------------------------------------
    Node* constant(Tensor value);
    // A frozen parameter participates in the forward pass but receives no
    // adjoint and is absent from the backward result map.
    Node* param(const std::string& name, Tensor value, bool frozen = false);

    // ops ----------------------------------------------------------------
    // cross-correlation, kernel [C_out,C_in,kh,kw] with odd kh,kw
    Node* conv2d(Node* input, Node* kernel, int stride, int pad);
    Node* add_channel_bias(Node* input, Node* bias);
    // train-mode BN over the H*W plane of each channel (population variance);
    // batch statistics are exposed so the caller can fold them into running
    // stats. H*W must be >= 2.
    Node* batchnorm_train(Node* input, Node* gamma, Node* beta, double eps,
                          Tensor* batch_mean_out = nullptr, Tensor* batch_var_out = nullptr);
    Node* batchnorm_eval(Node* input, Node* gamma, Node* beta,
                         const Tensor& run_mean, const Tensor& run_var, double eps);
    Node* relu(Node* input);
    Node* add(Node* a, Node* b);
    Node* sub(Node* a, Node* b);
    Node* mul(Node* a, Node* b);
    Node* scale(Node* input, double factor);
    // pixel-center (align-corners-false) interpolation, integer factor >= 1
    Node* bilinear_upsample(Node* input, int factor);
    // [C,H,W] -> [H*W, C]
    Node* channels_last(Node* input);
    // Rows with norm <= 1e-12 pass through unchanged and are flagged.
    Node* l2_normalize_rows(Node* input, std::vector<uint8_t>* degenerate_out = nullptr);
    Node* gather_rows(Node* input, std::vector<int> rows);
    // cosine similarity of every row of a against every row of b: [P,C]x[Q,C] -> [P,Q]
    Node* cosine_sim(Node* a, Node* b);
    // row-wise softmax of z/T with max subtraction
    Node* softmax_temp(Node* input, double temperature);
    // elementwise ln(max(x, 1e-12))
    Node* log_floor(Node* input);
    // per-row column selection: [P,n] with idx[p] of size k -> [P,k]
    Node* take_per_row(Node* input, std::vector<std::vector<int>> idx);
    // [P,n] -> [P]
    Node* row_sum(Node* input);
    // [..] -> scalar mean over all entries
    Node* mean_all(Node* input);
    // scalar combine: sum_i w_i * x_i
    Node* weighted_sum(const std::vector<Node*>& terms, const std::vector<double>& weights);

    // Reverse-mode sweep from a scalar root. Adjoints in the reachable
    // subgraph are reset first, so repeated calls give identical results.
    // Returns adjoints of reachable non-frozen named parameters.
    GradMap backward(Node* root);

    size_t size() const { return nodes_.size(); }

private:
    Node* make(const char* op, Tensor value, std::vector<Node*> inputs);
    std::deque<Node> nodes_;
};

// |analytic - numeric| / max(1, |analytic|) for the gradient checks.
double rel_gap(double analytic, double numeric);

// Central finite differences of f at x, h = 1e-5 per coordinate.
std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                      std::vector<double> x, double h = 1e-5);

}  // namespace ftea
