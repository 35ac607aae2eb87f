#include "matchcut/intervene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "matchcut/image_io.hpp"
#include "matchcut/rng.hpp"

namespace matchcut {

namespace {

template <class E>
E enum_from(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const char* field) {
    for (const auto& [name, value] : table)
        if (s == name) return value;
    throw ValidationError(field, "unknown value '" + s + "'");
}

double clamp1(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

PixelVideo color_jitter(const PixelVideo& x, const ColorJitter& j, std::uint64_t seed) {
    if (x.shape().channels != 3) throw ShapeError("color_jitter expects RGB videos");
    Rng rng(mix_seed(seed, "color_jitter"));
    const double brightness = rng.uniform(1.0 - j.brightness, 1.0 + j.brightness);
    const double contrast = rng.uniform(1.0 - j.contrast, 1.0 + j.contrast);
    const double saturation = rng.uniform(1.0 - j.saturation, 1.0 + j.saturation);
    const double hue = rng.uniform(-j.hue, j.hue) * 2.0 * std::numbers::pi;
    // rotation about the grey axis
    const double ch = std::cos(hue), sh = std::sin(hue) / std::sqrt(3.0);
    const double m0 = ch + (1.0 - ch) / 3.0, m1 = (1.0 - ch) / 3.0 - sh, m2 = (1.0 - ch) / 3.0 + sh;
    PixelVideo out = x;
    const auto& s = x.shape();
    const std::size_t n = s.plane_size();
    for (int f = 0; f < s.frames; ++f) {
        auto r = out.plane(f, 0), g = out.plane(f, 1), b = out.plane(f, 2);
        for (std::size_t i = 0; i < n; ++i) {
            r[i] = clamp1(r[i] * brightness);
            g[i] = clamp1(g[i] * brightness);
            b[i] = clamp1(b[i] * brightness);
        }
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += luma(r[i], g[i], b[i]);
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            r[i] = clamp1(mean + contrast * (r[i] - mean));
            g[i] = clamp1(mean + contrast * (g[i] - mean));
            b[i] = clamp1(mean + contrast * (b[i] - mean));
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double y = luma(r[i], g[i], b[i]);
            r[i] = clamp1(y + saturation * (r[i] - y));
            g[i] = clamp1(y + saturation * (g[i] - y));
            b[i] = clamp1(y + saturation * (b[i] - y));
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double r0 = r[i], g0 = g[i], b0 = b[i];
            r[i] = clamp1(m0 * r0 + m1 * g0 + m2 * b0);
            g[i] = clamp1(m2 * r0 + m0 * g0 + m1 * b0);
            b[i] = clamp1(m1 * r0 + m2 * g0 + m0 * b0);
        }
    }
    return out;
}

PixelVideo load_reference(const InterventionSpec& spec, const VideoShape& s) {
    if (spec.reference_image) return *spec.reference_image;
    if (!spec.reference.empty()) {
        if (!std::filesystem::exists(spec.reference)) throw IoError("reference image not found: " + spec.reference.string());
        return load_png_image(spec.reference, s.channels == 1);
    }
    auto ref = procedural_reference(s.height, s.width, mix_seed(spec.seed, "reference"));
    if (s.channels == 3) return ref;
    PixelVideo gray({1, 1, s.height, s.width});
    for (std::size_t i = 0; i < gray.size(); ++i)
        gray[i] = luma(ref.plane(0, 0)[i], ref.plane(0, 1)[i], ref.plane(0, 2)[i]);
    return gray;
}

PixelVideo histogram_match(const PixelVideo& x, const InterventionSpec& spec) {
    const auto& s = x.shape();
    const PixelVideo ref = load_reference(spec, s);
    if (ref.shape().channels != s.channels) throw ValidationError("reference", "channel count differs from the video");
    PixelVideo out = x;
    for (int f = 0; f < s.frames; ++f)
        for (int c = 0; c < s.channels; ++c) {
            auto m = match_histogram(x.plane(f, c), ref.plane(f % ref.shape().frames, c));
            auto dst = out.plane(f, c);
            for (std::size_t i = 0; i < m.size(); ++i) dst[i] = clamp1(m[i]);
        }
    return out;
}

PixelVideo mask_composite(const PixelVideo& x, const InterventionSpec& spec) {
    const auto& s = x.shape();
    PixelVideo mask;
    if (spec.mask_image) {
        mask = *spec.mask_image;
    } else {
        if (spec.mask.empty()) throw ValidationError("mask", "mask_composite needs a mask");
        if (!std::filesystem::exists(spec.mask)) throw IoError("mask image not found: " + spec.mask.string());
        mask = load_png_image(spec.mask, true);
    }
    const auto& ms = mask.shape();
    if (ms.height != s.height || ms.width != s.width)
        throw ValidationError("mask", "mask is " + std::to_string(ms.height) + "x" + std::to_string(ms.width) +
                                          ", frames are " + std::to_string(s.height) + "x" + std::to_string(s.width));
    if (ms.frames != 1 && ms.frames != s.frames) throw ValidationError("mask", "mask frame count must be 1 or match the video");
    std::optional<PixelVideo> payload;
    if (spec.payload_image) {
        payload = spec.payload_image;
    } else if (!spec.payload.empty()) {
        if (!std::filesystem::exists(spec.payload)) throw IoError("payload image not found: " + spec.payload.string());
        payload = load_png_image(spec.payload, s.channels == 1);
    }
    if (payload) {
        const auto& ps = payload->shape();
        if (ps.height != s.height || ps.width != s.width || ps.channels != s.channels)
            throw ValidationError("payload", "payload image must match the frame size and channels");
        if (ps.frames != 1 && ps.frames != s.frames) throw ValidationError("payload", "payload frame count must be 1 or match the video");
    }
    PixelVideo out = x;
    const std::size_t n = s.plane_size();
    for (int f = 0; f < s.frames; ++f) {
        auto mplane = [&](std::size_t i) {
            double acc = 0.0;
            for (int c = 0; c < ms.channels; ++c) acc += mask.plane(ms.frames == 1 ? 0 : f, c)[i];
            return clamp1(acc / ms.channels);
        };
        for (int c = 0; c < s.channels; ++c) {
            auto dst = out.plane(f, c);
            for (std::size_t i = 0; i < n; ++i) {
                const double m = mplane(i);
                const double p = payload ? payload->plane(payload->shape().frames == 1 ? 0 : f, c)[i]
                                         : spec.fill[static_cast<std::size_t>(std::min(c, 2))];
                dst[i] = clamp1(m * p + (1.0 - m) * dst[i]);
            }
        }
    }
    return out;
}

}  // namespace

std::string to_string(InterventionKind k) {
    switch (k) {
        case InterventionKind::identity: return "identity";
        case InterventionKind::color_jitter: return "color_jitter";
        case InterventionKind::histogram_match: return "histogram_match";
        case InterventionKind::gamma: return "gamma";
        case InterventionKind::mask_composite: return "mask_composite";
    }
    return "identity";
}

std::string to_string(BranchScope s) {
    return s == BranchScope::both ? "both" : (s == BranchScope::a_only ? "a_only" : "b_only");
}

std::string to_string(RenoiseMode m) { return m == RenoiseMode::shift ? "shift" : "fresh"; }

InterventionKind intervention_kind_from_string(const std::string& s) {
    return enum_from<InterventionKind>(s,
                                       {{"identity", InterventionKind::identity},
                                        {"color_jitter", InterventionKind::color_jitter},
                                        {"histogram_match", InterventionKind::histogram_match},
                                        {"gamma", InterventionKind::gamma},
                                        {"mask_composite", InterventionKind::mask_composite}},
                                       "kind");
}

BranchScope branch_scope_from_string(const std::string& s) {
    return enum_from<BranchScope>(s, {{"both", BranchScope::both}, {"a_only", BranchScope::a_only}, {"b_only", BranchScope::b_only}},
                                  "branch_scope");
}

RenoiseMode renoise_mode_from_string(const std::string& s) {
    return enum_from<RenoiseMode>(s, {{"shift", RenoiseMode::shift}, {"fresh", RenoiseMode::fresh}}, "renoise");
}

bool InterventionSpec::applies_to(Branch b) const noexcept {
    if (branch_scope == BranchScope::both) return b != Branch::joint;
    return (branch_scope == BranchScope::a_only && b == Branch::a) || (branch_scope == BranchScope::b_only && b == Branch::b);
}

void InterventionSpec::validate() const {
    switch (kind) {
        case InterventionKind::gamma:
            if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ValidationError("gamma", "must be a finite value > 0");
            break;
        case InterventionKind::color_jitter:
            for (auto [name, v] : {std::pair{"jitter.brightness", jitter.brightness}, std::pair{"jitter.contrast", jitter.contrast},
                                   std::pair{"jitter.saturation", jitter.saturation}})
                if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(name, "must be in [0, 1]");
            if (!(jitter.hue >= 0.0 && jitter.hue <= 0.5)) throw ValidationError("jitter.hue", "must be in [0, 0.5]");
            break;
        case InterventionKind::mask_composite:
            if (!mask_image && mask.empty()) throw ValidationError("mask", "mask_composite needs a mask");
            for (double v : fill)
                if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("fill", "colour components must be in [0, 1]");
            break;
        default: break;
    }
}

void to_json(nlohmann::json& j, const InterventionSpec& s) {
    j = {{"kind", to_string(s.kind)}, {"branch_scope", to_string(s.branch_scope)}, {"renoise", to_string(s.renoise)}, {"seed", s.seed}};
    switch (s.kind) {
        case InterventionKind::gamma: j["gamma"] = s.gamma; break;
        case InterventionKind::color_jitter:
            j["jitter"] = {{"brightness", s.jitter.brightness},
                           {"contrast", s.jitter.contrast},
                           {"saturation", s.jitter.saturation},
                           {"hue", s.jitter.hue}};
            break;
        case InterventionKind::histogram_match:
            if (!s.reference.empty()) j["reference"] = s.reference.string();
            break;
        case InterventionKind::mask_composite:
            j["mask"] = s.mask.string();
            if (!s.payload.empty()) j["payload"] = s.payload.string();
            j["fill"] = s.fill;
            break;
        default: break;
    }
}

InterventionSpec intervention_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw ValidationError("intervention", "must be a JSON object");
    auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };
    InterventionSpec s;
    try {
        s.kind = intervention_kind_from_string(j.at("kind").get<std::string>());
        if (j.contains("branch_scope")) s.branch_scope = branch_scope_from_string(j["branch_scope"].get<std::string>());
        if (j.contains("renoise")) s.renoise = renoise_mode_from_string(j["renoise"].get<std::string>());
        if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("gamma")) s.gamma = j["gamma"].get<double>();
        if (j.contains("jitter")) {
            const auto& jj = j["jitter"];
            s.jitter.brightness = jj.value("brightness", s.jitter.brightness);
            s.jitter.contrast = jj.value("contrast", s.jitter.contrast);
            s.jitter.saturation = jj.value("saturation", s.jitter.saturation);
            s.jitter.hue = jj.value("hue", s.jitter.hue);
        }
        if (j.contains("reference")) s.reference = resolve(j["reference"].get<std::string>());
        if (j.contains("mask")) s.mask = resolve(j["mask"].get<std::string>());
        if (j.contains("payload")) s.payload = resolve(j["payload"].get<std::string>());
        if (j.contains("fill")) s.fill = j["fill"].get<std::array<double, 3>>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("intervention", e.what());
    }
    s.validate();
    return s;
}

std::vector<double> match_histogram(std::span<const double> source, std::span<const double> reference) {
    if (source.empty() || reference.empty()) throw ValidationError("histogram", "empty input");
    auto uniques = [](std::span<const double> v) {
        std::vector<double> sorted(v.begin(), v.end());
        std::sort(sorted.begin(), sorted.end());
        std::vector<double> values, quantiles;
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) continue;
            values.push_back(sorted[i]);
            quantiles.push_back(static_cast<double>(i + 1) / static_cast<double>(sorted.size()));
        }
        return std::pair{values, quantiles};
    };
    const auto [src_values, src_q] = uniques(source);
    const auto [ref_values, ref_q] = uniques(reference);
    std::vector<double> mapped(src_values.size());
    for (std::size_t i = 0; i < src_values.size(); ++i) {
        const double q = src_q[i];
        if (q <= ref_q.front()) {
            mapped[i] = ref_values.front();
        } else if (q >= ref_q.back()) {
            mapped[i] = ref_values.back();
        } else {
            const auto hi = static_cast<std::size_t>(std::upper_bound(ref_q.begin(), ref_q.end(), q) - ref_q.begin());
            const std::size_t lo = hi - 1;
            const double w = (q - ref_q[lo]) / (ref_q[hi] - ref_q[lo]);
            mapped[i] = ref_values[lo] + w * (ref_values[hi] - ref_values[lo]);
        }
    }
    std::vector<double> out(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) {
        const auto k = static_cast<std::size_t>(std::lower_bound(src_values.begin(), src_values.end(), source[i]) - src_values.begin());
        out[i] = mapped[k];
    }
    return out;
}

PixelVideo procedural_reference(int height, int width, std::uint64_t seed) {
    Rng rng(seed);
    PixelVideo out({1, 3, height, width});
    for (int c = 0; c < 3; ++c) {
        auto plane = out.plane(0, c);
        const double base = rng.uniform(0.2, 0.8);
        std::array<std::array<double, 4>, 3> waves{};
        for (auto& w : waves) w = {rng.uniform(0.1, 0.3), rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.0, 6.3)};
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                double v = base;
                for (const auto& w : waves)
                    v += w[0] * std::cos(2.0 * std::numbers::pi * (w[1] * x / width + w[2] * y / height) + w[3]);
                plane[static_cast<std::size_t>(y) * width + x] = clamp1(v);
            }
    }
    return out;
}

PixelVideo apply_tau(const PixelVideo& x, const InterventionSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case InterventionKind::identity: return x;
        case InterventionKind::gamma: {
            PixelVideo out = x;
            for (double& v : out.values()) v = std::pow(clamp1(v), spec.gamma);
            return out;
        }
        case InterventionKind::color_jitter: return color_jitter(x, spec.jitter, spec.seed);
        case InterventionKind::histogram_match: return histogram_match(x, spec);
        case InterventionKind::mask_composite: return mask_composite(x, spec);
    }
    return x;
}

StagedFork stage_fork(const Pipeline& p, const GenerationTrace& trace) {
    if (!trace.has_fork()) throw Error("trace has no fork checkpoint");
    StagedFork s;
    s.fork_latent = trace.fork_latent;
    s.base_preview = p.codec->decode(trace.fork_clean);
    s.base_encoded = p.codec->encode(s.base_preview);
    s.preview_a = s.base_preview;
    s.preview_b = s.base_preview;
    return s;
}

void stage_intervention(StagedFork& staged, const InterventionSpec& spec) {
    spec.validate();
    if (spec.applies_to(Branch::a)) {
        staged.preview_a = apply_tau(staged.preview_a, spec);
        staged.edited_a = staged.edited_a || spec.kind != InterventionKind::identity;
    }
    if (spec.applies_to(Branch::b)) {
        staged.preview_b = apply_tau(staged.preview_b, spec);
        staged.edited_b = staged.edited_b || spec.kind != InterventionKind::identity;
    }
    if (spec.renoise == RenoiseMode::fresh) staged.fresh_renoise = spec;
    ++staged.interventions;
}

std::pair<LatentVideo, LatentVideo> staged_fork_latents(const Pipeline& p, const StagedFork& staged, int joint_steps) {
    const Timestep level{p.schedule.num_steps() - joint_steps};
    auto edit = [&](const PixelVideo& preview, Branch b) {
        const auto encoded = p.codec->encode(preview);
        if (staged.fresh_renoise) {
            const auto seed = mix_seed(mix_seed(staged.fresh_renoise->seed, "renoise"), b == Branch::a ? 1 : 2);
            return noise_to_level(encoded, level, p.schedule, gaussian_video<LatentTag>(encoded.shape(), seed));
        }
        const double scale = std::sqrt(p.schedule.alpha_bar(level.t));
        LatentVideo z = staged.fork_latent;
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += scale * (encoded[i] - staged.base_encoded[i]);
        return z;
    };
    return {staged.edited_a ? edit(staged.preview_a, Branch::a) : staged.fork_latent,
            staged.edited_b ? edit(staged.preview_b, Branch::b) : staged.fork_latent};
}

MatchPair resume_from_stage(const Pipeline& p, const ForkConfig& cfg, const GenerationTrace& trace,
                            const StagedFork& staged) {
    MatchPair out;
    auto& tr = out.trace;
    tr.config = trace.config;
    tr.level = trace.level;
    tr.total_steps = trace.total_steps;
    tr.joint_steps = trace.joint_steps;
    tr.z_init = trace.z_init;
    tr.fork_latent = trace.fork_latent;
    tr.fork_clean = trace.fork_clean;
    for (const auto& r : trace.records)
        if (r.branch == Branch::joint) tr.records.push_back(r);
    auto [fa, fb] = staged_fork_latents(p, staged, cfg.joint_steps);
    auto [za, zb] = branch_phase(p, fa, fb, cfg, &tr);
    out.x_a = decode_output(p, za);
    out.x_b = decode_output(p, zb);
    tr.final_a = std::move(za);
    tr.final_b = std::move(zb);
    return out;
}

MatchPair inject(const Pipeline& p, const GenerationTrace& trace, const InterventionSpec& spec) {
    const ForkConfig cfg = trace.config.get<ForkConfig>();
    if (cfg.joint_steps != trace.joint_steps) throw ValidationError("trace", "joint_steps disagrees with the recorded config");
    auto staged = stage_fork(p, trace);
    stage_intervention(staged, spec);
    return resume_from_stage(p, cfg, trace, staged);
}

}  // namespace matchcut
