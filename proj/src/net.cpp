#include "ftea/net.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "ftea/errors.hpp"
#include "ftea/rng.hpp"

namespace ftea {

void BNLayerState::validate() const {
    const int c = channels();
    if (c == 0) throw std::invalid_argument("BNLayerState: empty gamma");
    if (beta.numel() != c || run_mean.numel() != c || run_var.numel() != c)
        throw std::invalid_argument("BNLayerState: state vectors disagree on channel count");
    for (int i = 0; i < c; ++i)
        if (run_var[i] < 0.0)
            throw std::invalid_argument("BNLayerState: negative running variance on channel " +
                                        std::to_string(i));
    if (momentum <= 0.0 || momentum > 1.0)
        throw std::invalid_argument("BNLayerState: momentum must be in (0,1]");
}

BNLayerState update_bn_stats(const BNLayerState& state, const Tensor& batch_mean,
                             const Tensor& batch_var) {
    const int c = state.channels();
    if (batch_mean.numel() != c || batch_var.numel() != c)
        throw std::invalid_argument("update_bn_stats: batch stats disagree on channel count");
    for (int i = 0; i < c; ++i)
        if (batch_var[i] < 0.0)
            throw std::invalid_argument("update_bn_stats: negative batch variance on channel " +
                                        std::to_string(i));
    BNLayerState out = state;
    const double m = state.momentum;
    for (int i = 0; i < c; ++i) {
        out.run_mean.raw()[static_cast<size_t>(i)] = (1.0 - m) * state.run_mean[i] + m * batch_mean[i];
        out.run_var.raw()[static_cast<size_t>(i)] = (1.0 - m) * state.run_var[i] + m * batch_var[i];
    }
    return out;
}

NetworkSpec NetworkSpec::toy(int height, int width, int embed_dim) {
    NetworkSpec spec;
    spec.height = height;
    spec.width = width;
    spec.embed_dim = embed_dim;
    spec.rgb_layers = {{16, 3, 1, true, true}, {32, 3, 2, true, true}, {embed_dim, 3, 1, true, false}};
    spec.depth_layers = spec.rgb_layers;
    spec.validate();
    return spec;
}

int NetworkSpec::downsample(Stream s) const {
    int f = 1;
    for (const auto& l : layers(s)) f *= l.stride;
    return f;
}

void NetworkSpec::validate() const {
    if (embed_dim < 2) throw std::invalid_argument("NetworkSpec: embedding dim must be >= 2");
    for (Stream s : {Stream::rgb, Stream::depth}) {
        const auto& ls = layers(s);
        if (ls.empty())
            throw std::invalid_argument(std::string("NetworkSpec: ") + stream_name(s) +
                                        " stream has no layers");
        if (ls.back().out_channels != embed_dim)
            throw std::invalid_argument(std::string("NetworkSpec: ") + stream_name(s) +
                                        " stream does not end in embed_dim channels");
        for (const auto& l : ls) {
            if (l.out_channels < 1 || l.ksize < 1 || l.ksize % 2 == 0 || l.stride < 1)
                throw std::invalid_argument("NetworkSpec: bad layer geometry");
        }
        const int f = downsample(s);
        if (height % f != 0 || width % f != 0)
            throw std::invalid_argument("NetworkSpec: downsample factor " + std::to_string(f) +
                                        " does not divide " + std::to_string(height) + "x" +
                                        std::to_string(width));
    }
    if (height < 2 || width < 2) throw std::invalid_argument("NetworkSpec: resolution too small");
    if (depth_scale <= 0.0) throw std::invalid_argument("NetworkSpec: depth_scale must be > 0");
    if (bn_momentum <= 0.0 || bn_momentum > 1.0)
        throw std::invalid_argument("NetworkSpec: bn_momentum must be in (0,1]");
}

const Tensor& WeightStore::get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::invalid_argument("WeightStore: missing tensor '" + name + "'");
    return it->second;
}

Tensor& WeightStore::at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::invalid_argument("WeightStore: missing tensor '" + name + "'");
    return it->second;
}

void WeightStore::put(const std::string& name, Tensor t) { tensors_[name] = std::move(t); }

namespace {

constexpr char kMagic[4] = {'F', 'T', 'E', 'A'};
constexpr uint32_t kFormatVersion = 1;

void write_u16(std::ostream& os, uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_f32(std::ostream& os, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32(os, bits);
}

uint16_t read_u16(std::istream& is) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2)) throw io_error("weights file truncated");
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw io_error("weights file truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

float read_f32(std::istream& is) {
    const uint32_t bits = read_u32(is);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace

void save_weights(const WeightStore& store, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open '" + path.string() + "' for writing");
    os.write(kMagic, 4);
    write_u32(os, kFormatVersion);
    write_u32(os, static_cast<uint32_t>(store.size()));
    for (const auto& [name, tensor] : store.tensors()) {
        if (name.size() > 0xffff) throw io_error("tensor name too long: " + name);
        write_u16(os, static_cast<uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(tensor.rank()));
        for (int i = 0; i < tensor.rank(); ++i) write_u32(os, static_cast<uint32_t>(tensor.dim(i)));
        for (long long i = 0; i < tensor.numel(); ++i)
            write_f32(os, static_cast<float>(tensor[i]));
    }
    if (!os) throw io_error("write failed for '" + path.string() + "'");
}

WeightStore load_weights(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open '" + path.string() + "'");
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw io_error("bad magic in '" + path.string() + "'");
    const uint32_t version = read_u32(is);
    if (version != kFormatVersion)
        throw io_error("unsupported weights format version " + std::to_string(version));
    const uint32_t count = read_u32(is);
    WeightStore store;
    for (uint32_t t = 0; t < count; ++t) {
        const uint16_t name_len = read_u16(is);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw io_error("weights file truncated");
        const int rank = is.get();
        if (rank == EOF || rank < 1) throw io_error("weights file truncated");
        std::vector<int> dims(static_cast<size_t>(rank));
        long long numel = 1;
        for (int i = 0; i < rank; ++i) {
            dims[static_cast<size_t>(i)] = static_cast<int>(read_u32(is));
            numel *= dims[static_cast<size_t>(i)];
        }
        std::vector<double> data(static_cast<size_t>(numel));
        for (long long i = 0; i < numel; ++i) data[static_cast<size_t>(i)] = read_f32(is);
        if (store.contains(name))
            throw io_error("duplicate tensor '" + name + "' in '" + path.string() + "'");
        store.put(name, Tensor(std::move(dims), std::move(data)));
    }
    return store;
}

namespace {

std::string key(Stream s, int layer, const char* role) {
    return std::string(stream_name(s)) + "." + std::to_string(layer) + "." + role;
}

// draws quantized to f32 so freshly initialized stores live on the file grid
double f32_grid(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

BNLayerState Model::bn_state(Stream s, int layer) const {
    BNLayerState st;
    st.gamma = weights.get(key(s, layer, "gamma"));
    st.beta = weights.get(key(s, layer, "beta"));
    st.run_mean = weights.get(key(s, layer, "run_mean"));
    st.run_var = weights.get(key(s, layer, "run_var"));
    st.eps = spec.bn_eps;
    st.momentum = spec.bn_momentum;
    return st;
}

void Model::set_bn_state(Stream s, int layer, const BNLayerState& st) {
    weights.at(key(s, layer, "gamma")) = st.gamma;
    weights.at(key(s, layer, "beta")) = st.beta;
    weights.at(key(s, layer, "run_mean")) = st.run_mean;
    weights.at(key(s, layer, "run_var")) = st.run_var;
}

Model init_model(const NetworkSpec& spec, uint64_t seed) {
    spec.validate();
    Model model;
    model.spec = spec;
    Rng rng = make_rng(mix_seed(seed, 0x11f7));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Stream s : {Stream::rgb, Stream::depth}) {
        int in_ch = s == Stream::rgb ? 3 : 1;
        const auto& layers = spec.layers(s);
        for (size_t l = 0; l < layers.size(); ++l) {
            const auto& layer = layers[l];
            const int fan_in = in_ch * layer.ksize * layer.ksize;
            const double std_dev = std::sqrt(2.0 / fan_in);
            Tensor kernel({layer.out_channels, in_ch, layer.ksize, layer.ksize});
            for (long long i = 0; i < kernel.numel(); ++i)
                kernel[i] = f32_grid(normal(rng) * std_dev);
            model.weights.put(key(s, static_cast<int>(l), "kernel"), std::move(kernel));
            model.weights.put(key(s, static_cast<int>(l), "bias"),
                              Tensor({layer.out_channels}));
            if (layer.has_bn) {
                model.weights.put(key(s, static_cast<int>(l), "gamma"),
                                  Tensor::full({layer.out_channels}, 1.0));
                model.weights.put(key(s, static_cast<int>(l), "beta"),
                                  Tensor({layer.out_channels}));
                model.weights.put(key(s, static_cast<int>(l), "run_mean"),
                                  Tensor({layer.out_channels}));
                model.weights.put(key(s, static_cast<int>(l), "run_var"),
                                  Tensor::full({layer.out_channels}, 1.0));
            }
            in_ch = layer.out_channels;
        }
    }
    return model;
}

PixelEmbeddingMap ForwardResult::map() const {
    PixelEmbeddingMap m;
    m.fused = fused->value;
    m.rgb_only = rgb_only->value;
    m.depth_only = depth_only->value;
    m.fused_degenerate = fused_degenerate;
    m.rgb_degenerate = rgb_degenerate;
    m.depth_degenerate = depth_degenerate;
    m.height = height;
    m.width = width;
    m.embed_dim = embed_dim;
    return m;
}

namespace {

Node* stream_stack(Graph& g, const Model& model, Stream s, Node* x, Mode mode, bool frozen_conv,
                   std::vector<PendingBNUpdate>& pending) {
    const auto& layers = model.spec.layers(s);
    for (size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        const int li = static_cast<int>(l);
        Node* kernel = g.param(key(s, li, "kernel"), model.weights.get(key(s, li, "kernel")),
                               frozen_conv);
        Node* bias = g.param(key(s, li, "bias"), model.weights.get(key(s, li, "bias")), frozen_conv);
        x = g.conv2d(x, kernel, layer.stride, layer.ksize / 2);
        x = g.add_channel_bias(x, bias);
        if (layer.has_bn) {
            Node* gamma = g.param(key(s, li, "gamma"), model.weights.get(key(s, li, "gamma")));
            Node* beta = g.param(key(s, li, "beta"), model.weights.get(key(s, li, "beta")));
            if (mode == Mode::train) {
                Tensor bm, bv;
                x = g.batchnorm_train(x, gamma, beta, model.spec.bn_eps, &bm, &bv);
                pending.push_back({s, li, std::move(bm), std::move(bv)});
            } else {
                x = g.batchnorm_eval(x, gamma, beta, model.weights.get(key(s, li, "run_mean")),
                                     model.weights.get(key(s, li, "run_var")), model.spec.bn_eps);
            }
        }
        if (layer.has_relu) x = g.relu(x);
    }
    const int factor = model.spec.downsample(s);
    if (factor > 1) x = g.bilinear_upsample(x, factor);
    return x;
}

}  // namespace

ForwardResult forward_graph(Graph& g, const Model& model, const Tensor& rgb, const Tensor& depth,
                            Mode mode, bool frozen_conv) {
    const auto& spec = model.spec;
    if (rgb.rank() != 3 || rgb.dim(0) != 3 || rgb.dim(1) != spec.height || rgb.dim(2) != spec.width)
        throw std::invalid_argument("forward: rgb dims " + rgb.dims_str() + " do not match spec " +
                                    std::to_string(spec.height) + "x" + std::to_string(spec.width));
    if (depth.rank() != 3 || depth.dim(0) != 1 || depth.dim(1) != spec.height ||
        depth.dim(2) != spec.width)
        throw std::invalid_argument("forward: depth dims " + depth.dims_str() +
                                    " do not match spec");

    ForwardResult out;
    out.height = spec.height;
    out.width = spec.width;
    out.embed_dim = spec.embed_dim;

    Node* rgb_in = g.constant(rgb);
    Tensor scaled_depth = depth;
    for (long long i = 0; i < scaled_depth.numel(); ++i) scaled_depth[i] *= spec.depth_scale;
    Node* depth_in = g.constant(std::move(scaled_depth));

    Node* rgb_raw = stream_stack(g, model, Stream::rgb, rgb_in, mode, frozen_conv, out.pending_bn);
    Node* depth_raw =
        stream_stack(g, model, Stream::depth, depth_in, mode, frozen_conv, out.pending_bn);

    // fusion on the upsampled raw maps, then per-pixel normalization
    Node* fused_raw = g.add(rgb_raw, depth_raw);
    out.fused = g.l2_normalize_rows(g.channels_last(fused_raw), &out.fused_degenerate);
    out.rgb_only = g.l2_normalize_rows(g.channels_last(rgb_raw), &out.rgb_degenerate);
    out.depth_only = g.l2_normalize_rows(g.channels_last(depth_raw), &out.depth_degenerate);
    return out;
}

void commit_bn_updates(Model& model, const std::vector<PendingBNUpdate>& pending, bool rgb_stream,
                       bool depth_stream) {
    for (const auto& u : pending) {
        if (u.stream == Stream::rgb && !rgb_stream) continue;
        if (u.stream == Stream::depth && !depth_stream) continue;
        model.set_bn_state(u.stream, u.layer,
                           update_bn_stats(model.bn_state(u.stream, u.layer), u.batch_mean,
                                           u.batch_var));
    }
}

PixelEmbeddingMap forward(Model& model, const Tensor& rgb, const Tensor& depth, Mode mode) {
    Graph g;
    ForwardResult r = forward_graph(g, model, rgb, depth, mode, true);
    if (mode == Mode::train) commit_bn_updates(model, r.pending_bn, true, true);
    return r.map();
}

}  // namespace ftea
