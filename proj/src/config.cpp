#include "ftea/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ftea/errors.hpp"
#include "ftea/rng.hpp"

namespace ftea {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
    return true;
}

}  // namespace

FlatToml FlatToml::parse(const std::string& text) {
    FlatToml out;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string where = "config line " + std::to_string(lineno);
        // strip comments outside of strings
        std::string body;
        bool in_string = false;
        for (char c : line) {
            if (c == '"') in_string = !in_string;
            if (c == '#' && !in_string) break;
            body += c;
        }
        body = trim(body);
        if (body.empty()) continue;
        if (body.front() == '[')
            throw std::invalid_argument(where + ": tables are not supported, the schema is flat");
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(where + ": expected 'key = value'");
        const std::string key = trim(body.substr(0, eq));
        const std::string raw = trim(body.substr(eq + 1));
        if (!valid_key(key)) throw std::invalid_argument(where + ": bad key '" + key + "'");
        if (out.values_.count(key))
            throw std::invalid_argument(where + ": duplicate key '" + key + "'");
        if (raw.empty()) throw std::invalid_argument(where + ": missing value for '" + key + "'");

        Value v;
        if (raw.front() == '"') {
            if (raw.size() < 2 || raw.back() != '"')
                throw std::invalid_argument(where + ": unterminated string for '" + key + "'");
            v.kind = Kind::string;
            v.str = raw.substr(1, raw.size() - 2);
        } else if (raw == "true" || raw == "false") {
            v.kind = Kind::boolean;
            v.flag = raw == "true";
        } else {
            const bool integral = raw.find_first_of(".eE") == std::string::npos;
            try {
                size_t used = 0;
                if (integral) {
                    v.kind = Kind::integer;
                    v.integer = std::stoll(raw, &used);
                    v.num = static_cast<double>(v.integer);
                } else {
                    v.kind = Kind::number;
                    v.num = std::stod(raw, &used);
                }
                if (used != raw.size()) throw std::invalid_argument("trailing garbage");
            } catch (const std::exception&) {
                throw std::invalid_argument(where + ": cannot parse value '" + raw + "' for '" +
                                            key + "'");
            }
        }
        out.values_.emplace(key, std::move(v));
    }
    return out;
}

FlatToml FlatToml::parse_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open config '" + path.string() + "'");
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse(buf.str());
}

std::vector<std::string> FlatToml::keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) out.push_back(k);
    return out;
}

std::string FlatToml::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second.kind != Kind::string)
        throw std::invalid_argument("config: '" + key + "' must be a string");
    return it->second.str;
}

double FlatToml::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second.kind != Kind::number && it->second.kind != Kind::integer)
        throw std::invalid_argument("config: '" + key + "' must be a number");
    return it->second.num;
}

long long FlatToml::get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second.kind != Kind::integer)
        throw std::invalid_argument("config: '" + key + "' must be an integer");
    return it->second.integer;
}

bool FlatToml::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second.kind != Kind::boolean)
        throw std::invalid_argument("config: '" + key + "' must be true or false");
    return it->second.flag;
}

const std::vector<std::string>& known_profiles() {
    static const std::vector<std::string> names{"none", "shifted", "custom"};
    return names;
}

RunConfig RunConfig::from_toml(const FlatToml& toml) {
    RunConfig c;
    static const std::set<std::string> known{
        "height", "width", "objects_min", "objects_max", "min_area_px", "profile",
        "depth_boundary_jitter_px", "depth_noise_std_mm", "illumination_gain", "hue_shift",
        "texture_noise_std", "seed", "embed_dim", "depth_scale", "kappa", "cluster_seeds",
        "cluster_max_iters", "cluster_tol", "merge_cos", "min_cluster_frac", "lambda1", "lambda2",
        "k", "temperature", "sample_px", "base_lr", "warmup_iters", "total_iters", "bn_momentum",
        "shuffle", "modalities", "pretrain_steps", "pretrain_lr", "boundary_radius"};
    for (const auto& key : toml.keys())
        if (!known.count(key)) throw std::invalid_argument("config: unknown key '" + key + "'");

    c.height = static_cast<int>(toml.get_int("height", c.height));
    c.width = static_cast<int>(toml.get_int("width", c.width));
    c.objects_min = static_cast<int>(toml.get_int("objects_min", c.objects_min));
    c.objects_max = static_cast<int>(toml.get_int("objects_max", c.objects_max));
    c.min_area_px = static_cast<int>(toml.get_int("min_area_px", c.min_area_px));
    c.profile = toml.get_string("profile", c.profile);
    c.depth_boundary_jitter_px =
        static_cast<int>(toml.get_int("depth_boundary_jitter_px", c.depth_boundary_jitter_px));
    c.depth_noise_std_mm = toml.get_double("depth_noise_std_mm", c.depth_noise_std_mm);
    c.illumination_gain = toml.get_double("illumination_gain", c.illumination_gain);
    c.hue_shift = toml.get_double("hue_shift", c.hue_shift);
    c.texture_noise_std = toml.get_double("texture_noise_std", c.texture_noise_std);
    c.seed = static_cast<uint64_t>(toml.get_int("seed", static_cast<long long>(c.seed)));
    c.embed_dim = static_cast<int>(toml.get_int("embed_dim", c.embed_dim));
    c.depth_scale = toml.get_double("depth_scale", c.depth_scale);
    c.kappa = toml.get_double("kappa", c.kappa);
    c.cluster_seeds = static_cast<int>(toml.get_int("cluster_seeds", c.cluster_seeds));
    c.cluster_max_iters = static_cast<int>(toml.get_int("cluster_max_iters", c.cluster_max_iters));
    c.cluster_tol = toml.get_double("cluster_tol", c.cluster_tol);
    c.merge_cos = toml.get_double("merge_cos", c.merge_cos);
    c.min_cluster_frac = toml.get_double("min_cluster_frac", c.min_cluster_frac);
    c.lambda1 = toml.get_double("lambda1", c.lambda1);
    c.lambda2 = toml.get_double("lambda2", c.lambda2);
    c.k = static_cast<int>(toml.get_int("k", c.k));
    c.temperature = toml.get_double("temperature", c.temperature);
    c.sample_px = static_cast<int>(toml.get_int("sample_px", c.sample_px));
    c.base_lr = toml.get_double("base_lr", c.base_lr);
    c.warmup_iters = static_cast<int>(toml.get_int("warmup_iters", c.warmup_iters));
    c.total_iters = static_cast<int>(toml.get_int("total_iters", c.total_iters));
    c.bn_momentum = toml.get_double("bn_momentum", c.bn_momentum);
    c.shuffle = toml.get_bool("shuffle", c.shuffle);
    c.modalities = toml.get_string("modalities", c.modalities);
    c.pretrain_steps = static_cast<int>(toml.get_int("pretrain_steps", c.pretrain_steps));
    c.pretrain_lr = toml.get_double("pretrain_lr", c.pretrain_lr);
    c.boundary_radius = static_cast<int>(toml.get_int("boundary_radius", c.boundary_radius));
    c.validate();
    return c;
}

void RunConfig::validate() const {
    scene_config().validate();
    resolve_profile().validate();
    if (std::find(known_profiles().begin(), known_profiles().end(), profile) ==
        known_profiles().end()) {
        std::string names;
        for (const auto& n : known_profiles()) names += (names.empty() ? "" : ", ") + n;
        throw std::invalid_argument("config: unknown profile '" + profile + "' (known: " + names +
                                    ")");
    }
    if (embed_dim < 2) throw std::invalid_argument("config: embed_dim must be >= 2");
    if (depth_scale <= 0.0) throw std::invalid_argument("config: depth_scale must be > 0");
    if (min_cluster_frac < 0.0 || min_cluster_frac > 1.0)
        throw std::invalid_argument("config: min_cluster_frac must be in [0,1]");
    cluster_params(height * width).validate();
    loss_config().validate();
    adapt_config(height * width).validate();
    if (pretrain_steps < 0) throw std::invalid_argument("config: pretrain_steps must be >= 0");
    if (pretrain_lr <= 0.0) throw std::invalid_argument("config: pretrain_lr must be > 0");
    if (boundary_radius < 0) throw std::invalid_argument("config: boundary_radius must be >= 0");
}

ShiftProfile RunConfig::resolve_profile() const {
    if (profile == "none") return ShiftProfile::none();
    if (profile == "shifted") return ShiftProfile::shifted();
    ShiftProfile p;
    p.depth_boundary_jitter_px = depth_boundary_jitter_px;
    p.depth_noise_std_mm = depth_noise_std_mm;
    p.illumination_gain = illumination_gain;
    p.hue_shift = hue_shift;
    p.texture_noise_std = texture_noise_std;
    return p;
}

SceneConfig RunConfig::scene_config() const {
    SceneConfig s;
    s.height = height;
    s.width = width;
    s.objects_min = objects_min;
    s.objects_max = objects_max;
    s.min_area_px = min_area_px;
    return s;
}

NetworkSpec RunConfig::network_spec() const { return network_spec(height, width); }

NetworkSpec RunConfig::network_spec(int h, int w) const {
    NetworkSpec spec = NetworkSpec::toy(h, w, embed_dim);
    spec.depth_scale = depth_scale;
    spec.bn_momentum = bn_momentum;
    return spec;
}

ClusterParams RunConfig::cluster_params(int pixel_count) const {
    ClusterParams p;
    p.kappa = kappa;
    p.seeds = cluster_seeds;
    p.max_iters = cluster_max_iters;
    p.tol = cluster_tol;
    p.merge_cos = merge_cos;
    p.min_cluster_px = static_cast<int>(min_cluster_frac * pixel_count);
    return p;
}

LossConfig RunConfig::loss_config() const {
    LossConfig l;
    l.lambda1 = lambda1;
    l.lambda2 = lambda2;
    l.k = k;
    l.temperature = temperature;
    l.sample_px = sample_px;
    l.rng_seed = seed;
    return l;
}

AdaptConfig RunConfig::adapt_config(int pixel_count) const {
    AdaptConfig a;
    a.base_lr = base_lr;
    a.warmup_iters = warmup_iters;
    a.total_iters = total_iters;
    a.bn_momentum = bn_momentum;
    a.loss = loss_config();
    a.cluster = cluster_params(pixel_count);
    a.shuffle = shuffle;
    a.shuffle_seed = mix_seed(seed, 0x5481);
    a.adapt_rgb = modalities.find("rgb") != std::string::npos;
    a.adapt_depth = modalities.find("depth") != std::string::npos;
    return a;
}

PretrainConfig RunConfig::pretrain_config() const {
    PretrainConfig p;
    p.steps = pretrain_steps;
    p.lr = pretrain_lr;
    p.seed = seed;
    p.sample_px = sample_px;
    return p;
}

}  // namespace ftea
