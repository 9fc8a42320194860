#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ftea/graph.hpp"
#include "ftea/tensor.hpp"

namespace ftea {

enum class Mode { train, eval };
enum class Stream { rgb, depth };

inline const char* stream_name(Stream s) { return s == Stream::rgb ? "rgb" : "depth"; }

// Per-channel BN state; the only state that changes at test time.
struct BNLayerState {
    Tensor gamma, beta, run_mean, run_var;
    double eps = 1e-5;
    double momentum = 0.5;  // weight of the new batch statistic

    int channels() const { return gamma.rank() ? gamma.dim(0) : 0; }
    void validate() const;
};

// run <- (1-m)*run + m*batch for mean and variance.
BNLayerState update_bn_stats(const BNLayerState& state, const Tensor& batch_mean,
                             const Tensor& batch_var);

struct ConvLayerSpec {
    int out_channels = 0;
    int ksize = 3;
    int stride = 1;
    bool has_bn = true;
    bool has_relu = true;
};

// Two-stream architecture: per-modality conv/BN stacks, bilinear upsample
// back to input resolution, elementwise-add fusion, per-pixel unit norm.
struct NetworkSpec {
    std::vector<ConvLayerSpec> rgb_layers, depth_layers;
    int embed_dim = 8;
    int height = 64, width = 64;
    double depth_scale = 0.001;  // millimeters to network input units
    double bn_eps = 1e-5;
    double bn_momentum = 0.5;

    static NetworkSpec toy(int height, int width, int embed_dim = 8);

    const std::vector<ConvLayerSpec>& layers(Stream s) const {
        return s == Stream::rgb ? rgb_layers : depth_layers;
    }
    int downsample(Stream s) const;
    void validate() const;
};

// Named tensor map holding everything the network owns: conv kernels and
// biases plus the four BN state vectors per layer. Keys look like
// "rgb.0.kernel" or "depth.2.gamma".
class WeightStore {
public:
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    Tensor& at(const std::string& name);
    void put(const std::string& name, Tensor t);
    size_t size() const { return tensors_.size(); }
    const std::map<std::string, Tensor>& tensors() const { return tensors_; }

    bool operator==(const WeightStore& other) const { return tensors_ == other.tensors_; }

private:
    std::map<std::string, Tensor> tensors_;
};

inline bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims() == b.dims() && a.raw() == b.raw();
}

// Binary weights file: magic "FTEA", u32 version, u32 tensor count, then
// per tensor u16 name length, name bytes, u8 rank, u32 dims, f32 data.
// All integers and floats little-endian.
void save_weights(const WeightStore& store, const std::filesystem::path& path);
WeightStore load_weights(const std::filesystem::path& path);

struct Model {
    NetworkSpec spec;
    WeightStore weights;

    BNLayerState bn_state(Stream s, int layer) const;
    void set_bn_state(Stream s, int layer, const BNLayerState& st);
};

// Weight init on the float32 grid so stores round-trip through the file
// format without value drift.
Model init_model(const NetworkSpec& spec, uint64_t seed);

// Per-pixel embeddings stored pixel-major: row p = y*W + x holds the C-dim
// vector of that pixel. All rows unit norm unless flagged degenerate.
struct PixelEmbeddingMap {
    Tensor fused, rgb_only, depth_only;  // each [H*W, C]
    std::vector<uint8_t> fused_degenerate, rgb_degenerate, depth_degenerate;
    int height = 0, width = 0, embed_dim = 0;
};

struct PendingBNUpdate {
    Stream stream;
    int layer;
    Tensor batch_mean, batch_var;
};

// Forward pass as a live graph; node values back the PixelEmbeddingMap.
struct ForwardResult {
    Node* fused = nullptr;
    Node* rgb_only = nullptr;
    Node* depth_only = nullptr;
    std::vector<uint8_t> fused_degenerate, rgb_degenerate, depth_degenerate;
    std::vector<PendingBNUpdate> pending_bn;
    int height = 0, width = 0, embed_dim = 0;

    PixelEmbeddingMap map() const;
};

// rgb [3,H,W] in [0,1], depth [1,H,W] in millimeters. Train mode computes
// batch statistics and reports them in pending_bn; nothing is written back
// until commit_bn_updates. frozen_conv removes conv kernels and biases from
// the trainable set.
ForwardResult forward_graph(Graph& graph, const Model& model, const Tensor& rgb,
                            const Tensor& depth, Mode mode, bool frozen_conv);

// Applies pending updates for the selected streams via update_bn_stats.
void commit_bn_updates(Model& model, const std::vector<PendingBNUpdate>& pending,
                       bool rgb_stream, bool depth_stream);

// Value-level forward. Train mode commits BN running stats to the model.
PixelEmbeddingMap forward(Model& model, const Tensor& rgb, const Tensor& depth, Mode mode);

}  // namespace ftea
