#include "matchcut/harness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "matchcut/image_io.hpp"
#include "matchcut/rng.hpp"
#include "matchcut/tensor_io.hpp"
#include "matchcut/toydata.hpp"

namespace matchcut {

namespace fs = std::filesystem;

namespace {

void say(const std::function<void(const std::string&)>& log, const std::string& msg) {
    if (log) log(msg);
}

std::vector<LatentVideo> as_latents(const std::vector<PixelVideo>& clips) {
    std::vector<LatentVideo> out;
    out.reserve(clips.size());
    for (const auto& c : clips) out.push_back(retag<LatentTag>(c));
    return out;
}

std::vector<int> labels_of(const ToyDataset& ds) {
    std::vector<int> out;
    for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(ds.label(i));
    return out;
}

double adherence_mean(const AdherenceScorer& s, const ForkConfig& cfg, const PixelVideo& a, const PixelVideo& b) {
    return (s.score(a, cfg.prompt_a) + s.score(b, cfg.prompt_b)) / 2.0;
}

const char* const kBaselines[] = {"fork", "lower_bound", "v2v"};

std::string point_label(ExperimentKind kind, const nlohmann::json& v) {
    std::ostringstream out;
    switch (kind) {
        case ExperimentKind::single: return "single";
        case ExperimentKind::k_sweep: out << "K=" << v.get<int>(); break;
        case ExperimentKind::cfg_sweep: out << "cfg=" << v.get<double>(); break;
        case ExperimentKind::f_compare: out << "f=" << v.get<int>(); break;
        case ExperimentKind::seed_sweep: out << "seed=" << v.get<std::uint64_t>(); break;
        case ExperimentKind::intervention_sweep:
            if (v.is_string()) return v.get<std::string>();
            out << v.at("kind").get<std::string>();
            if (v.contains("branch_scope") && v["branch_scope"] != "both") out << ':' << v["branch_scope"].get<std::string>();
            break;
        case ExperimentKind::baseline_compare: return v.get<std::string>();
    }
    return out.str();
}

ForkConfig apply_point(ForkConfig cfg, ExperimentKind kind, const nlohmann::json& v, int pair) {
    switch (kind) {
        case ExperimentKind::k_sweep: cfg.joint_steps = v.get<int>(); break;
        case ExperimentKind::cfg_sweep: cfg.guidance.scale = v.get<double>(); break;
        case ExperimentKind::f_compare: cfg.cut_frame = v.get<int>(); break;
        case ExperimentKind::seed_sweep:
            cfg.seed_init = mix_seed(v.get<std::uint64_t>(), static_cast<std::uint64_t>(pair));
            cfg.seed_path = mix_seed(v.get<std::uint64_t>() ^ 0x5eedULL, static_cast<std::uint64_t>(pair));
            break;
        default: break;
    }
    return cfg;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text_file(path, j.dump(1) + "\n"); }

MetricRow row_from_json(const nlohmann::json& j) {
    nlohmann::json doc = {{"rows", nlohmann::json::array({j})}, {"aggregate", nlohmann::json::object()}};
    return MetricReport::from_json(doc).rows.front();
}

nlohmann::json row_to_json(const MetricRow& r) {
    MetricReport rep;
    rep.rows.push_back(r);
    return rep.to_json()["rows"][0];
}

std::string fmt(double v, int precision = 3) {
    std::ostringstream out;
    out << std::setprecision(precision) << v;
    return out.str();
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

PixelVideo assemble_matchcut(const PixelVideo& x_a, const PixelVideo& x_b, int cut_frame) {
    require_same_shape(x_a, x_b, "assemble_matchcut");
    const int F = x_a.shape().frames;
    if (cut_frame <= 0 || cut_frame >= F) throw ValidationError("cut_frame", "must lie in (0, frames)");
    PixelVideo out = x_a;
    const std::size_t begin = static_cast<std::size_t>(cut_frame) * x_a.shape().frame_size();
    std::copy(x_b.storage().begin() + static_cast<std::ptrdiff_t>(begin), x_b.storage().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(begin));
    return out;
}

SampleResult sample_from_level(const Pipeline& p, const ForkConfig& cfg, const PromptSpec& prompt,
                               const LatentVideo& z_start, int level, Branch branch) {
    const int T = cfg.total_steps();
    if (level < 0 || level > T) throw ValidationError("level", "must lie in [0, T]");
    auto z = disjoint_phase(p, z_start, prompt, cfg, T - level, branch);
    auto x = decode_output(p, z);
    return {std::move(z), std::move(x)};
}

std::pair<PixelVideo, PixelVideo> baseline_lower_bound(const Pipeline& p, const ForkConfig& cfg) {
    cfg.validate();
    const int T = cfg.total_steps();
    auto a = sample_from_level(p, cfg, cfg.prompt_a, initial_latent(p, cfg), T, Branch::a);
    const auto zb = gaussian_video<LatentTag>(p.latent_shape, mix_seed(cfg.seed_init, "lower_bound_b"));
    auto b = sample_from_level(p, cfg, cfg.prompt_b, zb, T, Branch::b);
    return {std::move(a.video), std::move(b.video)};
}

V2VResult baseline_v2v(const Pipeline& p, const ForkConfig& cfg, int level) {
    cfg.validate();
    const int T = cfg.total_steps();
    if (level < 0 || level > T) throw ValidationError("level", "must lie in [0, T]");
    auto a = sample_from_level(p, cfg, cfg.prompt_a, initial_latent(p, cfg), T, Branch::a);
    const auto noise = gaussian_video<LatentTag>(a.latent.shape(), mix_seed(cfg.seed_init, "v2v"));
    auto injected = noise_to_level(a.latent, {level}, p.schedule, noise);
    auto b = sample_from_level(p, cfg, cfg.prompt_b, injected, level, Branch::b);
    return {std::move(a.video), std::move(b.video), std::move(injected)};
}

void to_json(nlohmann::json& j, const ToyAssetsConfig& c) {
    j = {{"train_clips", c.train_clips},     {"val_clips", c.val_clips},
         {"probe_clips", c.probe_clips},     {"probe_held_out", c.probe_held_out},
         {"codec_channels", c.codec_channels}, {"latent_backbone", c.latent_backbone},
         {"seed", c.seed},                   {"backbone", c.backbone}};
}

void from_json(const nlohmann::json& j, ToyAssetsConfig& c) {
    c.train_clips = j.value("train_clips", c.train_clips);
    c.val_clips = j.value("val_clips", c.val_clips);
    c.probe_clips = j.value("probe_clips", c.probe_clips);
    c.probe_held_out = j.value("probe_held_out", c.probe_held_out);
    c.codec_channels = j.value("codec_channels", c.codec_channels);
    c.latent_backbone = j.value("latent_backbone", c.latent_backbone);
    c.seed = j.value("seed", c.seed);
    if (j.contains("backbone")) c.backbone = j["backbone"].get<ToyTrainConfig>();
}

nlohmann::json train_toy_assets(const fs::path& dir, const ToyAssetsConfig& cfg,
                                const std::function<void(const std::string&)>& log) {
    if (cfg.train_clips < 4 || cfg.val_clips < 1 || cfg.probe_clips < 4 || cfg.probe_held_out < 1)
        throw ValidationError("train_clips", "need at least 4 training clips and 1 validation clip");
    if (cfg.codec_channels < 1 || cfg.codec_channels > PatchCodec::kPatchDim)
        throw ValidationError("codec_channels", "must lie in [1, 12]");
    fs::create_directories(dir);
    const int classes = num_toy_classes();
    const auto train = make_toy_dataset(cfg.train_clips, mix_seed(cfg.seed, "train"));
    const auto val = make_toy_dataset(cfg.val_clips, mix_seed(cfg.seed, "val"));
    nlohmann::json manifest = {{"format", "matchcut.toy_assets.v1"}, {"config", cfg}};

    say(log, "training pixel backbone");
    const auto train_lat = as_latents(train.clips);
    const auto val_lat = as_latents(val.clips);
    const auto train_labels = labels_of(train);
    const auto val_labels = labels_of(val);
    auto pixel = train_toy_backbone(train_lat, train_labels, val_lat, val_labels, classes, cfg.backbone);
    pixel.weights.save(dir / "pixel_backbone.mctc");
    manifest["pixel_backbone"] = pixel.manifest;
    say(log, "pixel backbone validation loss " + fmt(pixel.manifest["validation_loss"].get<double>(), 4));

    say(log, "training patch codec");
    const auto codec = PatchCodec::train(train.clips, cfg.codec_channels);
    codec.save(dir / "codec.mctc");
    const auto held = std::vector<PixelVideo>(val.clips.begin(), val.clips.begin() + std::min<std::ptrdiff_t>(10, static_cast<std::ptrdiff_t>(val.size())));
    manifest["codec"] = {{"latent_channels", cfg.codec_channels},
                         {"tolerance", codec.tolerance()},
                         {"train_roundtrip_mae", codec.roundtrip_error(train.clips)},
                         {"held_out_clips", held.size()},
                         {"held_out_roundtrip_mae", codec.roundtrip_error(held)}};

    if (cfg.latent_backbone) {
        say(log, "training latent backbone");
        std::vector<LatentVideo> enc, enc_val;
        for (const auto& c : train.clips) enc.push_back(codec.encode(c));
        for (const auto& c : val.clips) enc_val.push_back(codec.encode(c));
        auto latent = train_toy_backbone(enc, train_labels, enc_val, val_labels, classes, cfg.backbone);
        latent.weights.save(dir / "latent_backbone.mctc");
        manifest["latent_backbone"] = latent.manifest;
    }

    say(log, "training adherence probe");
    const auto probe = ToyAdherenceProbe::train(make_toy_dataset(cfg.probe_clips, mix_seed(cfg.seed, "probe")),
                                                make_toy_dataset(cfg.probe_held_out, mix_seed(cfg.seed, "probe_held_out")));
    Rng rng(mix_seed(cfg.seed, "noise_video"));
    PixelVideo noise(train.clips.front().shape());
    for (double& v : noise.values()) v = rng.uniform();
    double noise_score = 0.0;
    for (int c = 0; c < classes; ++c) noise_score += probe.score(noise, PromptSpec::toy(c));
    auto probe_manifest = probe.manifest();
    probe_manifest["uniform_noise_mean_score"] = noise_score / classes;
    probe_manifest["prior"] = 1.0 / classes;
    probe.save(dir / "probe.mctc");
    write_json(dir / "probe.json", probe_manifest);
    manifest["probe"] = probe_manifest;

    write_json(dir / "manifest.json", manifest);
    return manifest;
}

std::shared_ptr<const ToyAdherenceProbe> load_probe(const fs::path& assets_dir) {
    static std::mutex mu;
    static std::map<std::string, std::shared_ptr<const ToyAdherenceProbe>> cache;
    const auto path = assets_dir / "probe.mctc";
    const auto key = fs::absolute(path).lexically_normal().string();
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    if (!fs::exists(path)) throw IoError("adherence probe not found: " + path.string() + " (run `matchcut train-toy` first)");
    auto probe = std::make_shared<const ToyAdherenceProbe>(ToyAdherenceProbe::load(path));
    cache.emplace(key, probe);
    return probe;
}

MetricReport evaluate_generation(const ForkConfig& cfg, const PixelVideo& x_a, const PixelVideo& x_b,
                                 const AdherenceScorer& adherence) {
    PairInput in{"pair", x_a, x_b, cfg.prompt_a, cfg.prompt_b, std::nullopt, std::nullopt, json_digest(cfg)};
    auto report = evaluate_pairs({in}, EvalConfig{&adherence, perceptual_proxy});
    report.provenance["config"] = cfg;
    return report;
}

void write_generation(const fs::path& dir, const ForkConfig& cfg, const PixelVideo& x_a, const PixelVideo& x_b,
                      const AdherenceScorer& adherence) {
    fs::create_directories(dir);
    const auto cut = assemble_matchcut(x_a, x_b, cfg.cut_frame);
    const auto report = evaluate_generation(cfg, x_a, x_b, adherence);
    save_video(dir / "x_a.apng", x_a);
    save_video(dir / "x_b.apng", x_b);
    save_video(dir / "matchcut.apng", cut);
    write_json(dir / "report.json", report.to_json());
}

std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::single: return "single";
        case ExperimentKind::k_sweep: return "k_sweep";
        case ExperimentKind::cfg_sweep: return "cfg_sweep";
        case ExperimentKind::f_compare: return "f_compare";
        case ExperimentKind::seed_sweep: return "seed_sweep";
        case ExperimentKind::intervention_sweep: return "intervention_sweep";
        case ExperimentKind::baseline_compare: return "baseline_compare";
    }
    return "single";
}

ExperimentKind experiment_kind_from_string(const std::string& s) {
    for (auto k : {ExperimentKind::single, ExperimentKind::k_sweep, ExperimentKind::cfg_sweep, ExperimentKind::f_compare,
                   ExperimentKind::seed_sweep, ExperimentKind::intervention_sweep, ExperimentKind::baseline_compare})
        if (to_string(k) == s) return k;
    throw ValidationError("kind", "unknown experiment kind '" + s + "'");
}

nlohmann::json ExperimentSpec::effective_grid() const {
    if (kind == ExperimentKind::single) return nlohmann::json::array({nullptr});
    return grid;
}

void ExperimentSpec::validate() const {
    base.validate();
    if (pairs < 1) throw ValidationError("pairs", "must be >= 1");
    if (out_dir.empty()) throw ValidationError("out_dir", "must be set");
    if (kind == ExperimentKind::single) return;
    if (!grid.is_array() || grid.empty()) throw ValidationError("grid", "must be a nonempty array");
    const int T = base.total_steps();
    for (const auto& v : grid) {
        switch (kind) {
            case ExperimentKind::k_sweep:
                if (!v.is_number_integer() || v.get<int>() < 0 || v.get<int>() > T)
                    throw ValidationError("grid", "K values must be integers in [0, T]");
                break;
            case ExperimentKind::cfg_sweep:
                if (!v.is_number() || !(v.get<double>() >= 0.0)) throw ValidationError("grid", "guidance scales must be >= 0");
                break;
            case ExperimentKind::f_compare:
                if (!v.is_number_integer() || v.get<int>() <= 0 || v.get<int>() >= base.frames)
                    throw ValidationError("grid", "cut frames must lie in (0, frames)");
                break;
            case ExperimentKind::seed_sweep:
                if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ValidationError("grid", "seeds must be non-negative integers");
                break;
            case ExperimentKind::intervention_sweep:
                if (v.is_string()) {
                    if (v != "none") throw ValidationError("grid", "interventions are objects or \"none\"");
                } else {
                    intervention_from_json(v);
                }
                break;
            case ExperimentKind::baseline_compare:
                if (!v.is_string() || std::find(std::begin(kBaselines), std::end(kBaselines), v.get<std::string>()) == std::end(kBaselines))
                    throw ValidationError("grid", "baselines are fork, lower_bound or v2v");
                break;
            default: break;
        }
    }
}

void to_json(nlohmann::json& j, const ExperimentSpec& s) {
    j = {{"kind", to_string(s.kind)}, {"base", s.base},
         {"grid", s.grid},            {"pairs", s.pairs},
         {"random_pairs", s.random_pairs}, {"pair_seed", s.pair_seed},
         {"out_dir", s.out_dir.string()}, {"assets_dir", s.assets_dir.string()},
         {"expectations", s.expectations}};
}

void from_json(const nlohmann::json& j, ExperimentSpec& s) {
    try {
        s.kind = experiment_kind_from_string(j.at("kind").get<std::string>());
        if (j.contains("base")) s.base = j["base"].get<ForkConfig>();
        s.grid = j.value("grid", nlohmann::json::array());
        s.pairs = j.value("pairs", s.pairs);
        s.random_pairs = j.value("random_pairs", s.random_pairs);
        s.pair_seed = j.value("pair_seed", s.pair_seed);
        if (j.contains("out_dir")) s.out_dir = j["out_dir"].get<std::string>();
        if (j.contains("assets_dir")) s.assets_dir = j["assets_dir"].get<std::string>();
        s.expectations = j.value("expectations", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("experiment", e.what());
    }
}

ForkConfig pair_config(const ExperimentSpec& spec, int index) {
    ForkConfig cfg = spec.base;
    if (!spec.random_pairs) return cfg;
    const auto [a, b] = sample_prompt_pair(mix_seed(spec.pair_seed, static_cast<std::uint64_t>(index)));
    cfg.prompt_a = PromptSpec::toy(a.class_id);
    cfg.prompt_b = PromptSpec::toy(b.class_id);
    cfg.seed_init = mix_seed(spec.base.seed_init, static_cast<std::uint64_t>(index));
    cfg.seed_path = mix_seed(spec.base.seed_path, static_cast<std::uint64_t>(index));
    return cfg;
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const AdherenceScorer& adherence,
                                const std::function<void(const std::string&)>& log) {
    spec.validate();
    fs::create_directories(spec.out_dir / "points");
    nlohmann::json spec_json = spec;
    spec_json.erase("out_dir");
    const auto spec_digest = json_digest(spec_json);
    const auto spec_path = spec.out_dir / "spec.json";
    if (fs::exists(spec_path)) {
        auto old = nlohmann::json::parse(read_text_file(spec_path));
        if (old.value("digest", "") != spec_digest)
            throw ValidationError("out_dir", "holds a different experiment (digest " + old.value("digest", "?") + ")");
    }
    write_json(spec_path, {{"digest", spec_digest}, {"spec", spec_json}});

    ExperimentResult result;
    const auto grid = spec.effective_grid();
    std::map<std::string, MatchPair> references;
    std::vector<PixelVideo> sheet_rows;
    std::set<std::string> used_labels;
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        const auto& value = grid[gi];
        GridPointSummary point;
        point.label = point_label(spec.kind, value);
        if (!used_labels.insert(point.label).second) point.label += "#" + std::to_string(gi);
        point.value = value;
        MetricReport point_report;
        for (int j = 0; j < spec.pairs; ++j) {
            const ForkConfig cfg = apply_point(pair_config(spec, j), spec.kind, value, j);
            const nlohmann::json key = {{"experiment", to_string(spec.kind)}, {"config", cfg}, {"value", value}};
            const auto digest = json_digest(key);
            const auto dir = spec.out_dir / "points" / digest;
            const std::string label = point.label + "/pair=" + std::to_string(j);
            try {
                MetricRow row;
                if (fs::exists(dir / "row.json")) {
                    row = row_from_json(nlohmann::json::parse(read_text_file(dir / "row.json")));
                } else {
                    say(log, label);
                    const auto p = make_pipeline(cfg, spec.assets_dir);
                    PixelVideo x_a, x_b;
                    std::map<std::string, double> extra;
                    if (spec.kind == ExperimentKind::intervention_sweep) {
                        const auto ref_key = json_digest(cfg);
                        auto it = references.find(ref_key);
                        if (it == references.end()) it = references.emplace(ref_key, generate_match_pair(p, cfg)).first;
                        const auto& ref = it->second;
                        if (value.is_string()) {
                            x_a = ref.x_a;
                            x_b = ref.x_b;
                        } else {
                            auto out = inject(p, ref.trace, intervention_from_json(value, spec.out_dir));
                            x_a = std::move(out.x_a);
                            x_b = std::move(out.x_b);
                        }
                        extra["ssim_to_reference"] = (ssim(x_a, ref.x_a) + ssim(x_b, ref.x_b)) / 2.0;
                        extra["adherence_delta"] = adherence_mean(adherence, cfg, x_a, x_b) -
                                                   adherence_mean(adherence, cfg, ref.x_a, ref.x_b);
                    } else if (spec.kind == ExperimentKind::baseline_compare && value != "fork") {
                        if (value == "lower_bound") {
                            std::tie(x_a, x_b) = baseline_lower_bound(p, cfg);
                        } else {
                            auto v2v = baseline_v2v(p, cfg, cfg.total_steps() - cfg.joint_steps);
                            x_a = std::move(v2v.x_a);
                            x_b = std::move(v2v.x_b);
                        }
                    } else {
                        auto mp = generate_match_pair(p, cfg);
                        x_a = std::move(mp.x_a);
                        x_b = std::move(mp.x_b);
                    }
                    PairInput in{label, x_a, x_b, cfg.prompt_a, cfg.prompt_b, std::nullopt, std::nullopt, digest};
                    row = evaluate_pair(in, EvalConfig{&adherence, perceptual_proxy});
                    row.extra = std::move(extra);
                    fs::create_directories(dir);
                    save_video(dir / "x_a.apng", x_a);
                    save_video(dir / "x_b.apng", x_b);
                    save_video(dir / "matchcut.apng", assemble_matchcut(x_a, x_b, cfg.cut_frame));
                    write_json(dir / "row.json", row_to_json(row));
                    ++result.computed;
                }
                row.label = label;
                point_report.rows.push_back(row);
                result.report.rows.push_back(row);
                if (j == 0) sheet_rows.push_back(load_video(dir / "matchcut.apng"));
            } catch (const std::exception& e) {
                point.failures.push_back(label + ": " + e.what());
                say(log, "failed " + label + ": " + e.what());
                ++result.failures;
            }
        }
        aggregate_report(point_report);
        point.aggregate = point_report.aggregate;
        result.points.push_back(std::move(point));
    }
    aggregate_report(result.report);
    result.report.provenance = {{"experiment", to_string(spec.kind)}, {"spec_digest", spec_digest},
                                {"adherence_scorer", adherence.name()}, {"expectations", spec.expectations}};

    nlohmann::json points = nlohmann::json::array();
    for (const auto& pt : result.points) {
        nlohmann::json agg = nlohmann::json::object();
        for (const auto& [name, s] : pt.aggregate) agg[name] = {{"mean", s.mean}, {"std", s.std}};
        points.push_back({{"label", pt.label}, {"value", pt.value}, {"aggregate", agg}, {"failures", pt.failures}});
    }
    write_json(spec.out_dir / "summary.json",
               {{"format", "matchcut.summary.v1"}, {"kind", to_string(spec.kind)}, {"spec_digest", spec_digest},
                {"pairs", spec.pairs}, {"points", points}, {"failures", result.failures}});
    write_json(spec.out_dir / "report.json", result.report.to_json());
    write_text_file(spec.out_dir / "report.csv", result.report.to_csv());
    if (!sheet_rows.empty()) {
        const auto sheet = contact_sheet(sheet_rows, sheet_rows.front().shape().frames);
        const auto png = encode_png_frame(sheet, 0);
        write_file_bytes(spec.out_dir / "contact_sheet.png", png);
    }
    render_plots(spec.out_dir);
    return result;
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const std::function<void(const std::string&)>& log) {
    return run_experiment(spec, *load_probe(spec.assets_dir), log);
}

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::vector<std::string>& x_ticks,
                          const std::vector<double>& mean, const std::vector<double>& spread) {
    if (x_ticks.size() != mean.size() || spread.size() != mean.size()) throw ValidationError("plot", "series lengths differ");
    constexpr double W = 480, H = 300, left = 56, right = 16, top = 32, bottom = 48;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < mean.size(); ++i) {
        lo = std::min(lo, mean[i] - spread[i]);
        hi = std::max(hi, mean[i] + spread[i]);
    }
    if (mean.empty()) lo = 0, hi = 1;
    if (hi - lo < 1e-9) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    const auto n = mean.size();
    auto px = [&](std::size_t i) { return left + (n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5) * (W - left - right); };
    auto py = [&](double v) { return top + (hi - v) / (hi - lo) * (H - top - bottom); };
    std::ostringstream s;
    s << std::fixed << std::setprecision(2);
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << xml_escape(title) << "</text>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double v = lo + (hi - lo) * k / 4.0;
        s << "<text x=\"" << left - 4 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << fmt(v) << "</text>\n";
    }
    for (std::size_t i = 0; i < n; ++i)
        s << "<text x=\"" << px(i) << "\" y=\"" << H - bottom + 14 << "\" text-anchor=\"middle\">" << xml_escape(x_ticks[i]) << "</text>\n";
    s << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << xml_escape(x_label) << "</text>\n";
    for (std::size_t i = 0; i < n; ++i)
        if (spread[i] > 0)
            s << "<line x1=\"" << px(i) << "\" y1=\"" << py(mean[i] - spread[i]) << "\" x2=\"" << px(i) << "\" y2=\""
              << py(mean[i] + spread[i]) << "\" stroke=\"#888\"/>\n";
    s << "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < n; ++i) s << (i ? " " : "") << px(i) << ',' << py(mean[i]);
    s << "\"/>\n";
    for (std::size_t i = 0; i < n; ++i) s << "<circle cx=\"" << px(i) << "\" cy=\"" << py(mean[i]) << "\" r=\"3\" fill=\"#1f5fa8\"/>\n";
    s << "</svg>\n";
    return s.str();
}

void render_plots(const fs::path& run_dir) {
    const auto summary = nlohmann::json::parse(read_text_file(run_dir / "summary.json"));
    const auto& points = summary.at("points");
    std::set<std::string> metrics;
    for (const auto& pt : points)
        for (const auto& [name, s] : pt.at("aggregate").items()) metrics.insert(name);
    const auto kind = summary.at("kind").get<std::string>();
    fs::create_directories(run_dir / "plots");
    for (const auto& m : metrics) {
        std::vector<std::string> ticks;
        std::vector<double> mean, spread;
        for (const auto& pt : points) {
            const auto& agg = pt.at("aggregate");
            if (!agg.contains(m)) continue;
            ticks.push_back(pt.at("label").get<std::string>());
            mean.push_back(agg[m].at("mean").get<double>());
            spread.push_back(agg[m].at("std").get<double>());
        }
        write_text_file(run_dir / "plots" / (m + ".svg"), svg_line_plot(m + " (" + kind + ")", kind, ticks, mean, spread));
    }
}

}  // namespace matchcut
