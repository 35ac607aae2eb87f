#include "matchcut/forksampler.hpp"

#include <cstdio>
#include <map>
#include <mutex>

#include "matchcut/rng.hpp"
#include "matchcut/tensor_io.hpp"
#include "matchcut/toy_backbone.hpp"
#include "matchcut/toydata.hpp"

namespace matchcut {

namespace {

template <class E>
E enum_from(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const char* field) {
    for (const auto& [name, value] : table)
        if (s == name) return value;
    throw ValidationError(field, "unknown value '" + s + "'");
}

std::uint64_t branch_tag(Branch b) {
    switch (b) {
        case Branch::joint: return mix_seed(0, "joint");
        case Branch::a: return mix_seed(0, "branch_a");
        case Branch::b: return mix_seed(0, "branch_b");
    }
    return 0;
}

LatentVideo path_noise(const NoiseSchedule& sched, const ForkConfig& cfg, const VideoShape& shape, Branch branch,
                       int iter) {
    const int t = cfg.total_steps() - iter + 1;
    if (sched.sigma(t) == 0.0) return LatentVideo(shape);
    return gaussian_video<LatentTag>(shape, mix_seed(mix_seed(cfg.seed_path, branch_tag(branch)),
                                                     static_cast<std::uint64_t>(iter)));
}

void require_finite(const LatentVideo& z, int iter, const char* what) {
    if (!z.all_finite()) throw NumericalError(iter, std::string("non-finite ") + what);
}

LatentVideo joint_estimate(const Pipeline& p, const ForkConfig& cfg, const LatentVideo& z, Timestep t) {
    const Denoiser& net = *p.denoiser;
    const double s = cfg.guidance.scale;
    std::optional<LatentVideo> null_est;
    if (s != 1.0) null_est = net.denoise(z, PromptSpec::null_prompt(), t);
    if (cfg.cfg_placement == CfgPlacement::per_prompt) {
        const auto ga = guided_denoise(net, z, cfg.prompt_a, t, cfg.guidance, null_est ? &*null_est : nullptr);
        const auto gb = guided_denoise(net, z, cfg.prompt_b, t, cfg.guidance, null_est ? &*null_est : nullptr);
        return combine_average(ga, gb);
    }
    if (s == 0.0) return *null_est;
    const auto cond = combine_average(net.denoise(z, cfg.prompt_a, t), net.denoise(z, cfg.prompt_b, t));
    return s == 1.0 ? cond : cfg_combine(*null_est, cond, s);
}

void record(GenerationTrace* trace, int iter, int t, Branch branch, const LatentVideo& z, const LatentVideo& eps,
            const LatentVideo& clean) {
    if (trace && trace->level == TraceLevel::full) trace->records.push_back({iter, t, branch, z, eps, clean});
}

struct CacheKey {
    std::string path;
    std::string schedule;
    auto operator<=>(const CacheKey&) const = default;
};

std::shared_ptr<const Denoiser> cached_toy(const std::filesystem::path& path, const NoiseSchedule& sched) {
    static std::mutex mu;
    static std::map<CacheKey, std::shared_ptr<const Denoiser>> cache;
    const CacheKey key{std::filesystem::absolute(path).lexically_normal().string(), nlohmann::json(sched.spec()).dump()};
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    if (!std::filesystem::exists(path))
        throw IoError("backbone weights not found: " + path.string() + " (run `matchcut train-toy` first)");
    auto net = std::make_shared<const ToyDenoiser>(ToyWeights::load(path), sched);
    cache.emplace(key, net);
    return net;
}

std::shared_ptr<const LatentCodec> cached_patch_codec(const std::filesystem::path& path) {
    static std::mutex mu;
    static std::map<std::string, std::shared_ptr<const LatentCodec>> cache;
    const auto key = std::filesystem::absolute(path).lexically_normal().string();
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    if (!std::filesystem::exists(path))
        throw IoError("codec weights not found: " + path.string() + " (run `matchcut train-toy` first)");
    auto codec = std::make_shared<const PatchCodec>(PatchCodec::load(path));
    cache.emplace(key, codec);
    return codec;
}

}  // namespace

std::string to_string(CombineKind c) { return c == CombineKind::average ? "average" : "linear_decay"; }
std::string to_string(CfgPlacement c) { return c == CfgPlacement::per_prompt ? "per_prompt" : "shared_unconditional"; }
std::string to_string(Branch b) {
    switch (b) {
        case Branch::joint: return "joint";
        case Branch::a: return "a";
        case Branch::b: return "b";
    }
    return "?";
}
std::string to_string(TraceLevel l) { return l == TraceLevel::fork ? "fork" : "full"; }

CombineKind combine_from_string(const std::string& s) {
    return enum_from<CombineKind>(s, {{"average", CombineKind::average}, {"linear_decay", CombineKind::linear_decay}},
                                  "combine");
}
CfgPlacement cfg_placement_from_string(const std::string& s) {
    return enum_from<CfgPlacement>(
        s, {{"per_prompt", CfgPlacement::per_prompt}, {"shared_unconditional", CfgPlacement::shared_unconditional}},
        "cfg_placement");
}
Branch branch_from_string(const std::string& s) {
    return enum_from<Branch>(s, {{"joint", Branch::joint}, {"a", Branch::a}, {"b", Branch::b}}, "branch");
}
TraceLevel trace_level_from_string(const std::string& s) {
    return enum_from<TraceLevel>(s, {{"fork", TraceLevel::fork}, {"full", TraceLevel::full}}, "trace_level");
}

void ForkConfig::validate() const {
    schedule.validate();
    prompt_a.validate();
    prompt_b.validate();
    if (prompt_a.is_null) throw ValidationError("prompt_a", "must not be the null prompt");
    if (prompt_b.is_null) throw ValidationError("prompt_b", "must not be the null prompt");
    if (joint_steps < 0 || joint_steps > schedule.num_steps)
        throw ValidationError("joint_steps", "K must lie in [0, T = " + std::to_string(schedule.num_steps) + "]");
    guidance.validate();
    if (codec != "identity" && codec != "patch") throw ValidationError("codec", "expected identity or patch");
    if (backbone != "toy" && backbone != "zero") throw ValidationError("backbone", "expected toy or zero");
    if (frames < 1) throw ValidationError("frames", "must be >= 1");
    if (height < 1) throw ValidationError("height", "must be >= 1");
    if (width < 1) throw ValidationError("width", "must be >= 1");
    if (frames > 1 && (cut_frame <= 0 || cut_frame >= frames))
        throw ValidationError("cut_frame", "must lie in (0, frames)");
}

void to_json(nlohmann::json& j, const ForkConfig& c) {
    j = {{"prompt_a", c.prompt_a},
         {"prompt_b", c.prompt_b},
         {"total_steps", c.total_steps()},
         {"joint_steps", c.joint_steps},
         {"guidance", {{"scale", c.guidance.scale}}},
         {"combine", to_string(c.combine)},
         {"cfg_placement", to_string(c.cfg_placement)},
         {"schedule", c.schedule},
         {"seed_init", c.seed_init},
         {"seed_path", c.seed_path},
         {"codec", c.codec},
         {"backbone", c.backbone},
         {"frames", c.frames},
         {"height", c.height},
         {"width", c.width},
         {"cut_frame", c.cut_frame}};
}

void from_json(const nlohmann::json& j, ForkConfig& c) {
    if (!j.is_object()) throw ValidationError("config", "expected a JSON object");
    c = ForkConfig{};
    auto field = [&](const char* name, auto& target) {
        if (!j.contains(name)) return;
        try {
            j.at(name).get_to(target);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(name, e.what());
        }
    };
    if (j.contains("prompt_a")) c.prompt_a = j.at("prompt_a").get<PromptSpec>();
    if (j.contains("prompt_b")) c.prompt_b = j.at("prompt_b").get<PromptSpec>();
    if (j.contains("schedule")) {
        try {
            c.schedule = j.at("schedule").get<ScheduleSpec>();
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("schedule", e.what());
        }
    }
    if (j.contains("total_steps")) {
        int T = 0;
        field("total_steps", T);
        if (j.contains("schedule") && j.at("schedule").contains("num_steps") && T != c.schedule.num_steps)
            throw ValidationError("total_steps", "disagrees with schedule.num_steps");
        c.schedule.num_steps = T;
    }
    field("joint_steps", c.joint_steps);
    if (j.contains("guidance")) {
        const auto& g = j.at("guidance");
        if (g.is_number())
            c.guidance.scale = g.get<double>();
        else
            c.guidance.scale = g.value("scale", c.guidance.scale);
    }
    if (j.contains("combine")) c.combine = combine_from_string(j.at("combine").get<std::string>());
    if (j.contains("cfg_placement")) c.cfg_placement = cfg_placement_from_string(j.at("cfg_placement").get<std::string>());
    field("seed_init", c.seed_init);
    field("seed_path", c.seed_path);
    field("codec", c.codec);
    field("backbone", c.backbone);
    field("frames", c.frames);
    field("height", c.height);
    field("width", c.width);
    field("cut_frame", c.cut_frame);
}

std::string json_digest(const nlohmann::json& j) {
    const std::string s = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Pipeline make_pipeline(const ForkConfig& cfg, std::shared_ptr<const Denoiser> denoiser,
                       std::shared_ptr<const LatentCodec> codec) {
    cfg.validate();
    Pipeline p{build_schedule(cfg.schedule), std::move(denoiser), std::move(codec), cfg.pixel_shape(), {}};
    p.latent_shape = p.codec->latent_shape(p.pixel_shape);
    if (p.denoiser->schedule().spec() != cfg.schedule)
        throw ValidationError("schedule", "backbone is bound to a different schedule");
    if (!p.denoiser->accepts(p.latent_shape))
        throw ValidationError("frames", "backbone does not accept latents of shape " + to_string(p.latent_shape));
    return p;
}

Pipeline make_pipeline(const ForkConfig& cfg, const std::filesystem::path& assets_dir) {
    cfg.validate();
    const NoiseSchedule sched = build_schedule(cfg.schedule);
    std::shared_ptr<const LatentCodec> codec;
    if (cfg.codec == "identity")
        codec = std::make_shared<const IdentityCodec>();
    else
        codec = cached_patch_codec(assets_dir / "codec.mctc");
    std::shared_ptr<const Denoiser> net;
    if (cfg.backbone == "zero") {
        const auto ls = codec->latent_shape(cfg.pixel_shape());
        net = std::make_shared<const ToyDenoiser>(ToyWeights::zeros(ls, num_toy_classes(), 1), sched);
    } else {
        net = cached_toy(assets_dir / (cfg.codec == "identity" ? "pixel_backbone.mctc" : "latent_backbone.mctc"), sched);
    }
    return make_pipeline(cfg, std::move(net), std::move(codec));
}

LatentVideo combine_average(const LatentVideo& e1, const LatentVideo& e2) {
    require_same_shape(e1, e2, "combine_average");
    LatentVideo out(e1.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (e1[i] + e2[i]) / 2.0;
    return out;
}

double linear_decay_weight(int iter, int decay_start, int total_steps) {
    if (decay_start < 0) throw ValidationError("decay_start", "must be >= 0");
    if (decay_start > total_steps) throw ValidationError("decay_start", "must not exceed T");
    if (iter <= decay_start || decay_start == total_steps) return 0.5;
    return 0.5 + 0.5 * static_cast<double>(iter - decay_start) / static_cast<double>(total_steps - decay_start);
}

std::pair<LatentVideo, LatentVideo> combine_linear_decay(const LatentVideo& e1, const LatentVideo& e2, int iter,
                                                         int decay_start, int total_steps) {
    require_same_shape(e1, e2, "combine_linear_decay");
    const double w = linear_decay_weight(iter, decay_start, total_steps);
    if (w == 0.5) {
        auto avg = combine_average(e1, e2);
        return {avg, avg};
    }
    LatentVideo a(e1.shape()), b(e1.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = w * e1[i] + (1.0 - w) * e2[i];
        b[i] = w * e2[i] + (1.0 - w) * e1[i];
    }
    return {std::move(a), std::move(b)};
}

LatentVideo initial_latent(const Pipeline& p, const ForkConfig& cfg) {
    return gaussian_video<LatentTag>(p.latent_shape, mix_seed(cfg.seed_init, "z_init"));
}

JointResult joint_phase(const Pipeline& p, const ForkConfig& cfg, const LatentVideo& z_init, GenerationTrace* trace) {
    const int T = cfg.total_steps();
    const int K = cfg.joint_steps;
    LatentVideo z = z_init;
    LatentVideo clean;
    for (int i = 1; i <= K; ++i) {
        const Timestep t{T - i + 1};
        const auto eps = joint_estimate(p, cfg, z, t);
        require_finite(eps, i, "joint noise estimate");
        clean = clean_estimate(z, eps, t, p.schedule);
        auto next = ddim_step(z, eps, t, p.schedule, path_noise(p.schedule, cfg, z.shape(), Branch::joint, i));
        require_finite(next, i, "joint latent");
        record(trace, i, t.t, Branch::joint, z, eps, clean);
        z = std::move(next);
    }
    if (K == 0) clean = clean_estimate(z, joint_estimate(p, cfg, z, {T}), {T}, p.schedule);
    return {std::move(z), std::move(clean)};
}

LatentVideo disjoint_phase(const Pipeline& p, const LatentVideo& z_start, const PromptSpec& prompt,
                           const ForkConfig& cfg, int start_iter, Branch branch, GenerationTrace* trace) {
    const int T = cfg.total_steps();
    if (start_iter < 0 || start_iter > T) throw ValidationError("start_iter", "must lie in [0, T]");
    LatentVideo z = z_start;
    for (int i = start_iter + 1; i <= T; ++i) {
        const Timestep t{T - i + 1};
        const auto eps = guided_denoise(*p.denoiser, z, prompt, t, cfg.guidance);
        require_finite(eps, i, "noise estimate");
        auto next = ddim_step(z, eps, t, p.schedule, path_noise(p.schedule, cfg, z.shape(), branch, i));
        require_finite(next, i, "latent");
        if (trace && trace->level == TraceLevel::full) record(trace, i, t.t, branch, z, eps, clean_estimate(z, eps, t, p.schedule));
        z = std::move(next);
    }
    return z;
}

std::pair<LatentVideo, LatentVideo> branch_phase(const Pipeline& p, const LatentVideo& fork_a,
                                                 const LatentVideo& fork_b, const ForkConfig& cfg,
                                                 GenerationTrace* trace) {
    const int K = cfg.joint_steps;
    if (cfg.combine == CombineKind::average)
        return {disjoint_phase(p, fork_a, cfg.prompt_a, cfg, K, Branch::a, trace),
                disjoint_phase(p, fork_b, cfg.prompt_b, cfg, K, Branch::b, trace)};
    const int T = cfg.total_steps();
    LatentVideo za = fork_a, zb = fork_b;
    for (int i = K + 1; i <= T; ++i) {
        const Timestep t{T - i + 1};
        const auto e1 = guided_denoise(*p.denoiser, za, cfg.prompt_a, t, cfg.guidance);
        const auto e2 = guided_denoise(*p.denoiser, zb, cfg.prompt_b, t, cfg.guidance);
        auto [ea, eb] = combine_linear_decay(e1, e2, i, K, T);
        require_finite(ea, i, "noise estimate");
        require_finite(eb, i, "noise estimate");
        auto na = ddim_step(za, ea, t, p.schedule, path_noise(p.schedule, cfg, za.shape(), Branch::a, i));
        auto nb = ddim_step(zb, eb, t, p.schedule, path_noise(p.schedule, cfg, zb.shape(), Branch::b, i));
        require_finite(na, i, "latent");
        require_finite(nb, i, "latent");
        if (trace && trace->level == TraceLevel::full) {
            record(trace, i, t.t, Branch::a, za, ea, clean_estimate(za, ea, t, p.schedule));
            record(trace, i, t.t, Branch::b, zb, eb, clean_estimate(zb, eb, t, p.schedule));
        }
        za = std::move(na);
        zb = std::move(nb);
    }
    return {std::move(za), std::move(zb)};
}

PixelVideo decode_output(const Pipeline& p, const LatentVideo& z0) { return clamp01(p.codec->decode(z0)); }

MatchPair generate_match_pair(const Pipeline& p, const ForkConfig& cfg, TraceLevel level) {
    cfg.validate();
    MatchPair out;
    auto& tr = out.trace;
    tr.config = cfg;
    tr.level = level;
    tr.total_steps = cfg.total_steps();
    tr.joint_steps = cfg.joint_steps;
    tr.z_init = initial_latent(p, cfg);
    auto joint = joint_phase(p, cfg, tr.z_init, &tr);
    tr.fork_latent = joint.fork_latent;
    tr.fork_clean = std::move(joint.fork_clean);
    auto [za, zb] = branch_phase(p, joint.fork_latent, joint.fork_latent, cfg, &tr);
    out.x_a = decode_output(p, za);
    out.x_b = decode_output(p, zb);
    tr.final_a = std::move(za);
    tr.final_b = std::move(zb);
    return out;
}

PixelVideo generate_single(const Pipeline& p, const ForkConfig& cfg, const PromptSpec& prompt,
                           const LatentVideo& z_init, Branch branch) {
    return decode_output(p, disjoint_phase(p, z_init, prompt, cfg, 0, branch));
}

void GenerationTrace::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    TensorArchive a;
    auto add = [&](const std::string& name, const LatentVideo& v) {
        if (!v.empty()) a.add_video(name, v, DType::f64);
    };
    add("z_init", z_init);
    add("fork_latent", fork_latent);
    add("fork_clean", fork_clean);
    add("final_a", final_a);
    add("final_b", final_b);
    nlohmann::json recs = nlohmann::json::array();
    for (std::size_t n = 0; n < records.size(); ++n) {
        const auto& r = records[n];
        const std::string base = "record/" + std::to_string(n) + "/";
        add(base + "z", r.z);
        add(base + "eps", r.eps);
        add(base + "clean", r.clean);
        recs.push_back({{"iteration", r.iteration}, {"t", r.t}, {"branch", to_string(r.branch)}});
    }
    a.save(dir / "latents.mctc");
    const nlohmann::json meta = {{"format", "matchcut.trace.v1"},
                                 {"config", config},
                                 {"level", to_string(level)},
                                 {"total_steps", total_steps},
                                 {"joint_steps", joint_steps},
                                 {"records", recs}};
    write_text_file(dir / "trace.json", meta.dump(1));
}

GenerationTrace GenerationTrace::load(const std::filesystem::path& dir) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_text_file(dir / "trace.json"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("trace.json: " + std::string(e.what()));
    }
    if (meta.value("format", "") != "matchcut.trace.v1") throw IoError("unsupported trace format in " + dir.string());
    const auto a = TensorArchive::load(dir / "latents.mctc");
    GenerationTrace t;
    t.config = meta.at("config");
    t.level = trace_level_from_string(meta.at("level").get<std::string>());
    t.total_steps = meta.at("total_steps").get<int>();
    t.joint_steps = meta.at("joint_steps").get<int>();
    auto get = [&](const std::string& name) {
        return a.contains(name) ? a.get_video<LatentTag>(name) : LatentVideo{};
    };
    t.z_init = get("z_init");
    t.fork_latent = get("fork_latent");
    t.fork_clean = get("fork_clean");
    t.final_a = get("final_a");
    t.final_b = get("final_b");
    const auto& recs = meta.at("records");
    for (std::size_t n = 0; n < recs.size(); ++n) {
        const std::string base = "record/" + std::to_string(n) + "/";
        t.records.push_back({recs[n].at("iteration").get<int>(), recs[n].at("t").get<int>(),
                             branch_from_string(recs[n].at("branch").get<std::string>()), get(base + "z"),
                             get(base + "eps"), get(base + "clean")});
    }
    return t;
}

int verify_trace_replay(const GenerationTrace& trace, const NoiseSchedule& sched) {
    if (trace.level != TraceLevel::full) throw Error("trace replay needs a full-level trace");
    if (sched.spec().stochasticity != 0.0) throw Error("trace replay is only defined for deterministic schedules");
    auto successor = [&](std::size_t n) -> const LatentVideo& {
        const auto& r = trace.records[n];
        for (std::size_t m = n + 1; m < trace.records.size(); ++m) {
            const auto& s = trace.records[m];
            if (s.iteration != r.iteration + 1) continue;
            if (r.branch == Branch::joint || s.branch == r.branch) return s.z;
        }
        if (r.branch == Branch::joint) return trace.fork_latent;
        return r.branch == Branch::a ? trace.final_a : trace.final_b;
    };
    int verified = 0;
    for (std::size_t n = 0; n < trace.records.size(); ++n) {
        const auto& r = trace.records[n];
        const LatentVideo zero(r.z.shape());
        const auto next = ddim_step(r.z, r.eps, {r.t}, sched, zero);
        if (!(next == successor(n)))
            throw Error("trace replay mismatch at iteration " + std::to_string(r.iteration) + " (" +
                        to_string(r.branch) + ")");
        if (!(clean_estimate(r.z, r.eps, {r.t}, sched) == r.clean))
            throw Error("trace clean estimate mismatch at iteration " + std::to_string(r.iteration));
        ++verified;
    }
    return verified;
}

}  // namespace matchcut
