#pragma once

// Baselines, match-cut assembly, experiment sweeps and the toy asset pipeline.
//
// Run directories are content addressed: every grid point x pair lands in
// points/<digest>/ with its videos and row.json, and a rerun skips points
// whose row.json already exists. Plots are regenerated from summary.json.

#include <filesystem>
#include <functional>
#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include "matchcut/forksampler.hpp"
#include "matchcut/intervene.hpp"
#include "matchcut/metrics.hpp"
#include "matchcut/toy_backbone.hpp"

namespace matchcut {

/// Frames [0, cut) of x_a followed by frames [cut, F) of x_b.
PixelVideo assemble_matchcut(const PixelVideo& x_a, const PixelVideo& x_b, int cut_frame);

struct SampleResult {
    LatentVideo latent;
    PixelVideo video;
};

/// Denoises `z_start`, taken to sit at noise level `level`, down to 0 with one prompt.
SampleResult sample_from_level(const Pipeline& p, const ForkConfig& cfg, const PromptSpec& prompt,
                               const LatentVideo& z_start, int level, Branch branch);

/// Two independent generations; x_b starts from its own seed (seed_init mixed with "lower_bound_b").
std::pair<PixelVideo, PixelVideo> baseline_lower_bound(const Pipeline& p, const ForkConfig& cfg);

struct V2VResult {
    PixelVideo x_a;
    PixelVideo x_b;
    LatentVideo injected;  // x_a's latent noised to `level`
};

/// Generates x_a with prompt_a, noises its final latent to `level` (0..T) with
/// noise seeded from seed_init, then denoises with prompt_b.
V2VResult baseline_v2v(const Pipeline& p, const ForkConfig& cfg, int level);

/// Toy assets: trained backbones, codec and adherence probe.
struct ToyAssetsConfig {
    int train_clips = 256;
    int val_clips = 32;
    int probe_clips = 128;
    int probe_held_out = 64;
    int codec_channels = 6;
    bool latent_backbone = true;
    std::uint64_t seed = 11;
    ToyTrainConfig backbone{};
};

void to_json(nlohmann::json& j, const ToyAssetsConfig& c);
void from_json(const nlohmann::json& j, ToyAssetsConfig& c);

/// Trains everything into `dir` (pixel_backbone.mctc, codec.mctc,
/// latent_backbone.mctc, probe.mctc, manifest.json) and returns the manifest.
nlohmann::json train_toy_assets(const std::filesystem::path& dir, const ToyAssetsConfig& cfg,
                                const std::function<void(const std::string&)>& log = {});

/// Loads probe.mctc from an asset directory (cached per path).
std::shared_ptr<const ToyAdherenceProbe> load_probe(const std::filesystem::path& assets_dir);

/// The four artifacts of a finished generation: x_a.apng, x_b.apng,
/// matchcut.apng and report.json. Deterministic byte for byte.
inline const std::vector<std::string>& generation_artifacts() {
    static const std::vector<std::string> names = {"x_a.apng", "x_b.apng", "matchcut.apng", "report.json"};
    return names;
}

MetricReport evaluate_generation(const ForkConfig& cfg, const PixelVideo& x_a, const PixelVideo& x_b,
                                 const AdherenceScorer& adherence);
void write_generation(const std::filesystem::path& dir, const ForkConfig& cfg, const PixelVideo& x_a,
                      const PixelVideo& x_b, const AdherenceScorer& adherence);

enum class ExperimentKind { single, k_sweep, cfg_sweep, f_compare, seed_sweep, intervention_sweep, baseline_compare };

std::string to_string(ExperimentKind k);
ExperimentKind experiment_kind_from_string(const std::string& s);

struct ExperimentSpec {
    ExperimentKind kind = ExperimentKind::single;
    ForkConfig base{};
    /// K values, guidance scales, cut frames, seeds, intervention specs (or
    /// "none"), or baseline names {fork, lower_bound, v2v}, by kind.
    nlohmann::json grid = nlohmann::json::array();
    int pairs = 1;
    bool random_pairs = true;  // draw prompt classes and seeds per pair; false repeats base
    std::uint64_t pair_seed = 0;
    std::filesystem::path out_dir;
    std::filesystem::path assets_dir;
    nlohmann::json expectations = nlohmann::json::object();  // pre-registered, stored verbatim

    /// Throws ValidationError naming the field.
    void validate() const;
    /// Grid with the single-point default filled in.
    nlohmann::json effective_grid() const;
};

void to_json(nlohmann::json& j, const ExperimentSpec& s);
void from_json(const nlohmann::json& j, ExperimentSpec& s);

struct GridPointSummary {
    std::string label;
    nlohmann::json value;
    std::map<std::string, MetricStat> aggregate;
    std::vector<std::string> failures;
};

struct ExperimentResult {
    MetricReport report;
    std::vector<GridPointSummary> points;
    int computed = 0;  // rows produced in this call (0 on a full resume)
    int failures = 0;
};

/// Config of pair `index` at the base grid point.
ForkConfig pair_config(const ExperimentSpec& spec, int index);

ExperimentResult run_experiment(const ExperimentSpec& spec, const AdherenceScorer& adherence,
                                const std::function<void(const std::string&)>& log = {});
/// Uses the probe from spec.assets_dir.
ExperimentResult run_experiment(const ExperimentSpec& spec, const std::function<void(const std::string&)>& log = {});

/// Writes plots/<metric>.svg from summary.json in `run_dir`.
void render_plots(const std::filesystem::path& run_dir);

/// SVG line chart; x positions are the label indices.
std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::vector<std::string>& x_ticks,
                          const std::vector<double>& mean, const std::vector<double>& spread);

}  // namespace matchcut
