#include "ftea/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ftea/errors.hpp"
#include "ftea/image_io.hpp"
#include "ftea/rng.hpp"

namespace ftea {

using json = nlohmann::json;

void ShiftProfile::validate() const {
    if (depth_boundary_jitter_px < 0 || depth_noise_std_mm < 0.0 || illumination_gain < 0.0 ||
        hue_shift < 0.0 || texture_noise_std < 0.0)
        throw std::invalid_argument("ShiftProfile: fields must be >= 0");
}

void SceneConfig::validate() const {
    if (height < 32 || width < 32)
        throw std::invalid_argument("SceneConfig: resolution must be at least 32x32");
    if (objects_min < 1 || objects_max > 10 || objects_min > objects_max)
        throw std::invalid_argument("SceneConfig: object count range must lie within [1,10]");
    if (min_area_px < 1) throw std::invalid_argument("SceneConfig: min_area_px must be >= 1");
}

namespace {

struct Rgb {
    double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    return {r + m, g + m, b + m};
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    v = mx;
    const double d = mx - mn;
    s = mx > 0.0 ? d / mx : 0.0;
    if (d <= 0.0) {
        h = 0.0;
        return;
    }
    if (mx == r) h = std::fmod((g - b) / d, 6.0);
    else if (mx == g) h = (b - r) / d + 2.0;
    else h = (r - g) / d + 4.0;
    h /= 6.0;
    if (h < 0.0) h += 1.0;
}

enum class ShapeKind { rectangle, ellipse, triangle };

struct Shape {
    ShapeKind kind;
    // rectangle/ellipse: center and half extents; triangle: three vertices
    double cx = 0, cy = 0, ax = 0, ay = 0;
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    bool contains(double x, double y) const {
        switch (kind) {
            case ShapeKind::rectangle:
                return std::fabs(x - cx) <= ax && std::fabs(y - cy) <= ay;
            case ShapeKind::ellipse: {
                const double dx = (x - cx) / ax, dy = (y - cy) / ay;
                return dx * dx + dy * dy <= 1.0;
            }
            case ShapeKind::triangle: {
                auto side = [](double px, double py, double qx, double qy, double rx, double ry) {
                    return (qx - px) * (ry - py) - (qy - py) * (rx - px);
                };
                const double d0 = side(x0, y0, x1, y1, x, y);
                const double d1 = side(x1, y1, x2, y2, x, y);
                const double d2 = side(x2, y2, x0, y0, x, y);
                const bool neg = d0 < 0 || d1 < 0 || d2 < 0;
                const bool pos = d0 > 0 || d1 > 0 || d2 > 0;
                return !(neg && pos);
            }
        }
        return false;
    }
};

std::vector<int> shape_pixels(const Shape& s, int h, int w, int margin) {
    std::vector<int> px;
    for (int y = margin; y < h - margin; ++y)
        for (int x = margin; x < w - margin; ++x)
            if (s.contains(x, y)) px.push_back(y * w + x);
    // reject shapes that poke outside the margin
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const bool inside_margin = y >= margin && y < h - margin && x >= margin && x < w - margin;
            if (!inside_margin && s.contains(x, y)) return {};
        }
    return px;
}

double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace

SceneSample gen_scene(uint64_t seed, const SceneConfig& config, const ShiftProfile& profile,
                      const std::string& profile_name) {
    config.validate();
    profile.validate();
    const int h = config.height, w = config.width;
    const int hw = h * w;

    Rng geom = make_rng(mix_seed(seed, 0x6e05));

    SceneSample out;
    out.seed = seed;
    out.profile_name = profile_name;

    // table plane: shallow gradient, at most ~10mm of span across the image
    out.table_base = uniform(geom, 990.0, 1010.0);
    out.table_sx = uniform(geom, -0.08, 0.08);
    out.table_sy = uniform(geom, -0.08, 0.08);

    // smooth illumination over a flat base color
    const double illum_dir = uniform(geom, 0.0, 1.0);
    const double illum_lo = uniform(geom, 0.8, 0.9);
    const Rgb table_color{0.45, 0.42, 0.36};

    const int n_objects = uniform_int(geom, config.objects_min, config.objects_max);

    // distinct integer heights keep depth levels separable
    std::vector<int> height_pool(91);
    std::iota(height_pool.begin(), height_pool.end(), 30);
    for (int i = 0; i < n_objects; ++i)
        std::swap(height_pool[static_cast<size_t>(i)],
                  height_pool[static_cast<size_t>(uniform_int(geom, i, static_cast<int>(height_pool.size()) - 1))]);

    const double hue0 = uniform(geom, 0.0, 1.0);

    std::vector<int> canvas(static_cast<size_t>(hw), 0);  // 0 = table
    std::vector<long long> visible(static_cast<size_t>(n_objects) + 1, 0);
    std::vector<Rgb> colors{table_color};
    std::vector<int> heights;

    const int margin = 2;
    int placed = 0;
    for (int obj = 0; obj < n_objects; ++obj) {
        double size_hi = std::min(h, w) / 4.0;
        const double size_lo = 4.0;
        bool done = false;
        int attempts = 0;
        while (!done) {
            if (attempts >= 100) {
                size_hi = std::max(size_hi * 0.5, size_lo);
                attempts = 0;
                if (size_hi <= size_lo + 1e-9)
                    throw std::invalid_argument("gen_scene: cannot place object " +
                                                std::to_string(obj) + "; config too crowded");
            }
            ++attempts;
            Shape s;
            const int kind = uniform_int(geom, 0, 2);
            s.kind = kind == 0 ? ShapeKind::rectangle : kind == 1 ? ShapeKind::ellipse : ShapeKind::triangle;
            if (s.kind == ShapeKind::triangle) {
                const double cx = uniform(geom, margin + size_hi, w - margin - size_hi);
                const double cy = uniform(geom, margin + size_hi, h - margin - size_hi);
                s.x0 = cx + uniform(geom, -size_hi, size_hi);
                s.y0 = cy + uniform(geom, -size_hi, size_hi);
                s.x1 = cx + uniform(geom, -size_hi, size_hi);
                s.y1 = cy + uniform(geom, -size_hi, size_hi);
                s.x2 = cx + uniform(geom, -size_hi, size_hi);
                s.y2 = cy + uniform(geom, -size_hi, size_hi);
            } else {
                s.ax = uniform(geom, size_lo, size_hi);
                s.ay = uniform(geom, size_lo, size_hi);
                s.cx = uniform(geom, margin + s.ax, w - margin - s.ax);
                s.cy = uniform(geom, margin + s.ay, h - margin - s.ay);
            }
            const auto px = shape_pixels(s, h, w, margin);
            if (static_cast<int>(px.size()) < config.min_area_px) continue;

            // drawing must not starve any earlier object below min area
            std::vector<long long> covered(static_cast<size_t>(placed) + 1, 0);
            for (int p : px) ++covered[static_cast<size_t>(canvas[static_cast<size_t>(p)])];
            bool starves = false;
            for (int e = 1; e <= placed; ++e)
                if (visible[static_cast<size_t>(e)] - covered[static_cast<size_t>(e)] <
                    config.min_area_px)
                    starves = true;
            if (starves) continue;

            ++placed;
            for (int p : px) {
                --visible[static_cast<size_t>(canvas[static_cast<size_t>(p)])];
                canvas[static_cast<size_t>(p)] = placed;
            }
            visible[static_cast<size_t>(placed)] = static_cast<long long>(px.size());
            heights.push_back(height_pool[static_cast<size_t>(obj)]);
            colors.push_back(hsv_to_rgb(hue0 + 0.618033988749895 * obj, uniform(geom, 0.55, 0.9),
                                        uniform(geom, 0.6, 0.95)));
            done = true;
        }
    }

    out.object_count = placed;
    out.object_heights_mm = heights;
    out.labels.height = h;
    out.labels.width = w;
    out.labels.ids = canvas;
    out.labels.validate();

    // clean render
    Tensor rgb({3, h, w});
    Tensor depth({1, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int id = canvas[static_cast<size_t>(y) * w + x];
            const double table = out.table_depth_mm(x, y);
            depth.at3(0, y, x) = id == 0 ? table : table - heights[static_cast<size_t>(id - 1)];
            const double illum =
                illum_lo + (1.0 - illum_lo) *
                               (illum_dir * x / (w - 1) + (1.0 - illum_dir) * y / (h - 1));
            const Rgb& base = colors[static_cast<size_t>(id)];
            rgb.at3(0, y, x) = base.r * illum;
            rgb.at3(1, y, x) = base.g * illum;
            rgb.at3(2, y, x) = base.b * illum;
        }

    // corruptions draw from an independent stream so the geometry, and with
    // it the labels, never depends on the profile
    Rng corrupt = make_rng(mix_seed(seed, 0xc0de));
    std::normal_distribution<double> gauss(0.0, 1.0);

    if (profile.depth_noise_std_mm > 0.0)
        for (long long i = 0; i < depth.numel(); ++i)
            depth[i] += gauss(corrupt) * profile.depth_noise_std_mm;

    if (profile.depth_boundary_jitter_px > 0) {
        const int j = profile.depth_boundary_jitter_px;
        const Tensor source = depth;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int id = canvas[static_cast<size_t>(y) * w + x];
                bool boundary = false;
                if (y > 0 && canvas[static_cast<size_t>(y - 1) * w + x] != id) boundary = true;
                if (y < h - 1 && canvas[static_cast<size_t>(y + 1) * w + x] != id) boundary = true;
                if (x > 0 && canvas[static_cast<size_t>(y) * w + x - 1] != id) boundary = true;
                if (x < w - 1 && canvas[static_cast<size_t>(y) * w + x + 1] != id) boundary = true;
                if (!boundary) continue;
                const int ny = std::clamp(y + uniform_int(corrupt, -j, j), 0, h - 1);
                const int nx = std::clamp(x + uniform_int(corrupt, -j, j), 0, w - 1);
                depth.at3(0, y, x) = source.at3(0, ny, nx);
            }
    }

    if (profile.illumination_gain > 0.0)
        for (long long i = 0; i < rgb.numel(); ++i) rgb[i] *= profile.illumination_gain;

    if (profile.hue_shift > 0.0) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double hh, ss, vv;
                rgb_to_hsv(std::clamp(rgb.at3(0, y, x), 0.0, 1.0),
                           std::clamp(rgb.at3(1, y, x), 0.0, 1.0),
                           std::clamp(rgb.at3(2, y, x), 0.0, 1.0), hh, ss, vv);
                const Rgb c = hsv_to_rgb(hh + profile.hue_shift, ss, vv);
                rgb.at3(0, y, x) = c.r;
                rgb.at3(1, y, x) = c.g;
                rgb.at3(2, y, x) = c.b;
            }
    }

    if (profile.texture_noise_std > 0.0)
        for (long long i = 0; i < rgb.numel(); ++i) rgb[i] += gauss(corrupt) * profile.texture_noise_std;

    // quantize onto the file grids so in-memory samples match their files
    for (long long i = 0; i < rgb.numel(); ++i)
        rgb[i] = std::clamp(std::lround(std::clamp(rgb[i], 0.0, 1.0) * 255.0), 0L, 255L) / 255.0;
    for (long long i = 0; i < depth.numel(); ++i)
        depth[i] = static_cast<double>(std::clamp(std::lround(depth[i]), 0L, 65535L));

    out.rgb = std::move(rgb);
    out.depth = std::move(depth);
    return out;
}

namespace {
std::string sample_name(int index, const char* kind, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "scene_%05d_%s.%s", index, kind, ext);
    return buf;
}
}  // namespace

DatasetManifest gen_dataset(const SceneConfig& config, const ShiftProfile& profile, int count,
                            uint64_t base_seed, const std::filesystem::path& out_dir,
                            const std::string& profile_name) {
    if (count < 0) throw std::invalid_argument("gen_dataset: count must be >= 0");
    config.validate();
    profile.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw io_error("cannot create '" + out_dir.string() + "': " + ec.message());

    DatasetManifest manifest;
    manifest.count = count;
    manifest.height = config.height;
    manifest.width = config.width;
    manifest.base_seed = base_seed;
    manifest.profile_name = profile_name;

    for (int i = 0; i < count; ++i) {
        const uint64_t seed = base_seed + static_cast<uint64_t>(i);
        const SceneSample sample = gen_scene(seed, config, profile, profile_name);
        DatasetManifest::Entry e;
        e.seed = seed;
        e.rgb = sample_name(i, "rgb", "ppm");
        e.depth = sample_name(i, "depth", "pgm");
        e.labels = sample_name(i, "labels", "pgm");
        write_ppm(out_dir / e.rgb, sample.rgb);
        std::vector<uint16_t> depth_mm(static_cast<size_t>(sample.depth.numel()));
        for (long long p = 0; p < sample.depth.numel(); ++p)
            depth_mm[static_cast<size_t>(p)] = static_cast<uint16_t>(sample.depth[p]);
        write_pgm16(out_dir / e.depth, config.height, config.width, depth_mm);
        write_mask_pgm(out_dir / e.labels, sample.labels);
        manifest.samples.push_back(std::move(e));
    }

    json j;
    j["count"] = manifest.count;
    j["height"] = manifest.height;
    j["width"] = manifest.width;
    j["base_seed"] = manifest.base_seed;
    j["profile"] = manifest.profile_name;
    j["samples"] = json::array();
    for (const auto& e : manifest.samples)
        j["samples"].push_back(
            {{"seed", e.seed}, {"rgb", e.rgb}, {"depth", e.depth}, {"labels", e.labels}});
    std::ofstream os(out_dir / "manifest.json");
    if (!os) throw io_error("cannot write manifest in '" + out_dir.string() + "'");
    os << j.dump(2) << "\n";
    return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw io_error("cannot open '" + manifest_path.string() + "'");
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw io_error("bad manifest '" + manifest_path.string() + "': " + e.what());
    }
    DatasetManifest m;
    try {
        m.count = j.at("count").get<int>();
        m.height = j.at("height").get<int>();
        m.width = j.at("width").get<int>();
        m.base_seed = j.at("base_seed").get<uint64_t>();
        m.profile_name = j.at("profile").get<std::string>();
        for (const auto& e : j.at("samples")) {
            DatasetManifest::Entry entry;
            entry.seed = e.at("seed").get<uint64_t>();
            entry.rgb = e.at("rgb").get<std::string>();
            entry.depth = e.at("depth").get<std::string>();
            entry.labels = e.at("labels").get<std::string>();
            m.samples.push_back(std::move(entry));
        }
    } catch (const json::exception& e) {
        throw io_error("bad manifest '" + manifest_path.string() + "': " + e.what());
    }
    return m;
}

}  // namespace ftea
