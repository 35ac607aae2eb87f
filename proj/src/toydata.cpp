#include "matchcut/toydata.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "matchcut/rng.hpp"

namespace matchcut {

namespace {

constexpr int kSupersample = 4;
constexpr double kTintRange = 0.08;

double frac(double v) noexcept {
    const double f = v - std::floor(v);
    return f >= 1.0 ? 0.0 : f;
}

ShapeKind shape_from_string(const std::string& s) {
    if (s == "circle") return ShapeKind::circle;
    if (s == "square") return ShapeKind::square;
    if (s == "bar") return ShapeKind::bar;
    throw ValidationError("shape", "unknown shape '" + s + "'");
}

BackgroundKind background_from_string(const std::string& s) {
    if (s == "solid") return BackgroundKind::solid;
    if (s == "gradient") return BackgroundKind::gradient;
    throw ValidationError("background", "unknown background '" + s + "'");
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

std::string to_string(ShapeKind s) {
    switch (s) {
        case ShapeKind::circle: return "circle";
        case ShapeKind::square: return "square";
        case ShapeKind::bar: return "bar";
    }
    return "?";
}

std::string to_string(BackgroundKind b) { return b == BackgroundKind::solid ? "solid" : "gradient"; }

void SceneParams::validate() const {
    if (!(size > 0.0)) throw ValidationError("size", "must be positive");
    if (size > 1.0) throw ValidationError("size", "must not exceed the frame");
    if (frame_count < 1) throw ValidationError("frame_count", "must be >= 1");
    if (height < 1) throw ValidationError("height", "must be >= 1");
    if (width < 1) throw ValidationError("width", "must be >= 1");
    for (double c : color)
        if (!(c >= 0.0 && c <= 1.0)) throw ValidationError("color", "components must lie in [0, 1]");
    for (double c : background_color)
        if (!(c >= 0.0 && c <= 1.0)) throw ValidationError("background_color", "components must lie in [0, 1]");
    if (!std::isfinite(start_x) || !std::isfinite(start_y)) throw ValidationError("start_xy", "must be finite");
    if (!std::isfinite(velocity_x) || !std::isfinite(velocity_y))
        throw ValidationError("velocity_xy", "must be finite");
}

void to_json(nlohmann::json& j, const SceneParams& p) {
    j = {{"class_id", p.class_id},
         {"shape", to_string(p.shape)},
         {"color", p.color},
         {"background", to_string(p.background)},
         {"background_color", p.background_color},
         {"start_xy", {p.start_x, p.start_y}},
         {"velocity_xy", {p.velocity_x, p.velocity_y}},
         {"size", p.size},
         {"frame_count", p.frame_count},
         {"height", p.height},
         {"width", p.width},
         {"motion_policy", "wrap"}};
}

void from_json(const nlohmann::json& j, SceneParams& p) {
    p.class_id = j.value("class_id", 0);
    p.shape = shape_from_string(j.value("shape", std::string("circle")));
    p.color = j.value("color", Rgb{1.0, 1.0, 1.0});
    p.background = background_from_string(j.value("background", std::string("solid")));
    p.background_color = j.value("background_color", Rgb{0.0, 0.0, 0.0});
    const auto start = j.value("start_xy", std::array<double, 2>{0.5, 0.5});
    const auto vel = j.value("velocity_xy", std::array<double, 2>{0.0, 0.0});
    p.start_x = start[0];
    p.start_y = start[1];
    p.velocity_x = vel[0];
    p.velocity_y = vel[1];
    p.size = j.value("size", 0.3);
    p.frame_count = j.value("frame_count", 16);
    p.height = j.value("height", 32);
    p.width = j.value("width", 32);
}

nlohmann::json to_json(const Tracklet& t) {
    auto arr = nlohmann::json::array();
    for (const auto& p : t.points) arr.push_back({p.frame, p.x, p.y});
    return arr;
}

Tracklet tracklet_from_json(const nlohmann::json& j) {
    Tracklet t;
    for (const auto& e : j) t.points.push_back({e.at(0).get<int>(), e.at(1).get<double>(), e.at(2).get<double>()});
    return t;
}

const std::vector<ClassFamily>& toy_classes() {
    static const std::vector<ClassFamily> classes = {
        {"sun", ShapeKind::circle, {0.90, 0.75, 0.20}, {0.10, 0.10, 0.30}, 0.30},
        {"crate", ShapeKind::square, {0.30, 0.90, 0.40}, {0.25, 0.10, 0.10}, 0.28},
        {"plank", ShapeKind::bar, {0.85, 0.85, 0.92}, {0.10, 0.20, 0.15}, 0.45},
        {"bubble", ShapeKind::circle, {0.30, 0.70, 0.92}, {0.15, 0.12, 0.08}, 0.30},
    };
    return classes;
}

int num_toy_classes() { return static_cast<int>(toy_classes().size()); }

const std::vector<std::pair<int, int>>& motion_modes() {
    static const std::vector<std::pair<int, int>> modes = [] {
        std::vector<std::pair<int, int>> m;
        for (int speed : {1, 2})
            for (int dx = -1; dx <= 1; ++dx)
                for (int dy = -1; dy <= 1; ++dy)
                    if (dx != 0 || dy != 0) m.emplace_back(dx * speed, dy * speed);
        return m;
    }();
    return modes;
}

PixelVideo render_scene(const SceneParams& p) {
    p.validate();
    PixelVideo out({p.frame_count, 3, p.height, p.width});
    const double half_w = p.size / 2.0;
    const double half_h = (p.shape == ShapeKind::bar ? p.size / 3.0 : p.size) / 2.0 * p.width / p.height;
    const double radius2 = half_w * half_w;
    const int sub = kSupersample;
    const double inv_samples = 1.0 / (sub * sub);
    for (int f = 0; f < p.frame_count; ++f) {
        const double cx = frac(p.start_x + f * p.velocity_x);
        const double cy = frac(p.start_y + f * p.velocity_y);
        for (int y = 0; y < p.height; ++y) {
            const double grad = p.height == 1 ? 0.0 : static_cast<double>(y) / (p.height - 1);
            for (int x = 0; x < p.width; ++x) {
                int hits = 0;
                for (int sy = 0; sy < sub; ++sy) {
                    const double py = (y + (sy + 0.5) / sub) / p.height;
                    const double dy = wrap_delta(cy, py);
                    for (int sx = 0; sx < sub; ++sx) {
                        const double px = (x + (sx + 0.5) / sub) / p.width;
                        const double dx = wrap_delta(cx, px);
                        bool inside;
                        if (p.shape == ShapeKind::circle) {
                            // Radius is measured in width units; rescale y for non-square frames.
                            const double dyw = dy * p.height / p.width;
                            inside = dx * dx + dyw * dyw <= radius2;
                        } else {
                            inside = std::abs(dx) <= half_w && std::abs(dy) <= half_h;
                        }
                        hits += inside ? 1 : 0;
                    }
                }
                const double cover = hits * inv_samples;
                for (int c = 0; c < 3; ++c) {
                    double bg = p.background_color[static_cast<std::size_t>(c)];
                    if (p.background == BackgroundKind::gradient) bg = clamp01(bg + 0.3 * grad);
                    out.at(f, c, y, x) = bg * (1.0 - cover) + p.color[static_cast<std::size_t>(c)] * cover;
                }
            }
        }
    }
    return out;
}

Tracklet trajectory_of(const SceneParams& p) {
    Tracklet t;
    t.points.reserve(static_cast<std::size_t>(p.frame_count));
    for (int k = 0; k < p.frame_count; ++k)
        t.points.push_back({k, frac(p.start_x + k * p.velocity_x), frac(p.start_y + k * p.velocity_y)});
    return t;
}

SceneParams canonical_scene(int class_id, int mode, ToyVideoShape shape) {
    if (class_id < 0 || class_id >= num_toy_classes()) throw ValidationError("class_id", "out of range");
    const auto& fam = toy_classes()[static_cast<std::size_t>(class_id)];
    const auto [dx, dy] = motion_modes().at(static_cast<std::size_t>(mode));
    SceneParams p;
    p.class_id = class_id;
    p.shape = fam.shape;
    p.color = fam.color;
    p.background_color = fam.background_color;
    p.size = fam.size;
    p.velocity_x = static_cast<double>(dx) / shape.width;
    p.velocity_y = static_cast<double>(dy) / shape.height;
    p.frame_count = shape.frames;
    p.height = shape.height;
    p.width = shape.width;
    return p;
}

SceneParams sample_scene(int class_id, std::uint64_t seed, ToyVideoShape shape) {
    Rng rng(mix_seed(seed, "mode"));
    return sample_scene(class_id, rng.below(static_cast<int>(motion_modes().size())), seed, shape);
}

SceneParams sample_scene(int class_id, int mode, std::uint64_t seed, ToyVideoShape shape) {
    Rng rng(mix_seed(seed, "scene"));
    SceneParams p = canonical_scene(class_id, mode, shape);
    // Starts sit on the even pixel grid: every frame shares the canonical sub-pixel phase, and the
    // shift stays a whole number of 2x2 codec patches.
    p.start_x = 2.0 * rng.below(std::max(1, shape.width / 2)) / shape.width;
    p.start_y = 2.0 * rng.below(std::max(1, shape.height / 2)) / shape.height;
    for (std::size_t c = 0; c < 3; ++c) {
        const double tint = rng.uniform(-kTintRange, kTintRange);
        p.color[c] = clamp01(p.color[c] + tint);
        p.background_color[c] = clamp01(p.background_color[c] + tint);
    }
    return p;
}

std::pair<SceneParams, SceneParams> sample_prompt_pair(std::uint64_t seed, ToyVideoShape shape) {
    Rng rng(mix_seed(seed, "prompt_pair"));
    const int n = num_toy_classes();
    const int a = rng.below(n);
    const int b = (a + 1 + rng.below(n - 1)) % n;
    return {sample_scene(a, mix_seed(seed, 1), shape), sample_scene(b, mix_seed(seed, 2), shape)};
}

ToyDataset make_toy_dataset(int count, std::uint64_t seed, ToyVideoShape shape) {
    ToyDataset ds;
    ds.clips.reserve(static_cast<std::size_t>(count));
    const int n = num_toy_classes();
    for (int i = 0; i < count; ++i) {
        const int mode = (i / n) % static_cast<int>(motion_modes().size());
        auto p = sample_scene(i % n, mode, mix_seed(seed, static_cast<std::uint64_t>(i)), shape);
        ds.clips.push_back(render_scene(p));
        ds.params.push_back(p);
    }
    return ds;
}

double wrap_delta(double a, double b) noexcept {
    double d = b - a;
    d -= std::floor(d + 0.5);
    return d;
}

Tracklet track_object(const PixelVideo& video) {
    const auto& s = video.shape();
    Tracklet t;
    std::vector<double> scratch(s.plane_size());
    std::vector<double> weight(s.plane_size());
    for (int f = 0; f < s.frames; ++f) {
        std::fill(weight.begin(), weight.end(), 0.0);
        for (int c = 0; c < s.channels; ++c) {
            const auto plane = video.plane(f, c);
            std::copy(plane.begin(), plane.end(), scratch.begin());
            auto mid = scratch.begin() + static_cast<std::ptrdiff_t>(scratch.size() / 2);
            std::nth_element(scratch.begin(), mid, scratch.end());
            const double bg = *mid;
            for (std::size_t i = 0; i < plane.size(); ++i) weight[i] += (plane[i] - bg) * (plane[i] - bg);
        }
        std::complex<double> sx{}, sy{};
        for (int y = 0; y < s.height; ++y) {
            const double ay = 2.0 * std::numbers::pi * (y + 0.5) / s.height;
            for (int x = 0; x < s.width; ++x) {
                const double w = std::sqrt(weight[static_cast<std::size_t>(y) * s.width + x]);
                const double ax = 2.0 * std::numbers::pi * (x + 0.5) / s.width;
                sx += w * std::polar(1.0, ax);
                sy += w * std::polar(1.0, ay);
            }
        }
        auto angle_to_unit = [](std::complex<double> z) {
            if (std::abs(z) < 1e-12) return 0.5;
            return frac(std::arg(z) / (2.0 * std::numbers::pi));
        };
        t.points.push_back({f, angle_to_unit(sx), angle_to_unit(sy)});
    }
    return t;
}

}  // namespace matchcut
