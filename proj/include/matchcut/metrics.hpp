#pragma once

// Evaluation metrics.
//
// ssim: Gaussian-weighted SSIM with an 11x11 window (sigma 1.5), K1 = 0.01,
// K2 = 0.03, dynamic range 1, population (not sample) covariances, averaged
// over every window lying fully inside the frame, then over frames and
// channels. Frames must be at least 11 pixels on each side.
//
// motion_consistency: mean over frame steps of (1 + cos)/2 between the two
// tracks' (wrap-aware) displacement vectors. Steps where either track does
// not move are skipped; two fully static tracks score 1, and tracks with no
// comparable step (one static, the other moving) score 0.5.
//
// perceptual_distance (default proxy): a 4-level pyramid of 2x2 box
// downsamplings; the score is the weighted sum 0.4, 0.3, 0.2, 0.1 of the mean
// absolute difference at each level, so identical videos score 0 and a black
// versus white video scores 1.
//
// adherence (toy): a per-frame softmax regression over colour and area
// features of the frame's foreground object, returning the probability of the
// prompt's class averaged over frames.

#include <array>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "matchcut/backbone.hpp"
#include "matchcut/tensor.hpp"
#include "matchcut/toydata.hpp"

namespace matchcut {

double ssim(const PixelVideo& x, const PixelVideo& y);

double motion_consistency(const Tracklet& a, const Tracklet& b);
/// Tracks both videos with track_object when no tracklets are supplied.
double motion_consistency(const PixelVideo& x, const PixelVideo& y, const Tracklet* track_x = nullptr,
                          const Tracklet* track_y = nullptr);

double perceptual_proxy(const PixelVideo& x, const PixelVideo& y);

using PerceptualFn = std::function<double(const PixelVideo&, const PixelVideo&)>;

/// Scores how well a video matches a prompt, in [0, 1].
class AdherenceScorer {
public:
    virtual ~AdherenceScorer() = default;
    virtual std::string name() const = 0;
    virtual double score(const PixelVideo& x, const PromptSpec& prompt) const = 0;
};

class ToyAdherenceProbe final : public AdherenceScorer {
public:
    static constexpr int kFeatures = 4;

    ToyAdherenceProbe() = default;

    struct TrainConfig {
        int iterations = 3000;
        double learning_rate = 0.5;
        double l2 = 1e-3;
        int noise_frames = 64;  // calibration frames with a uniform target
        std::uint64_t seed = 3;
    };

    /// Fits on the frames of `train`; reports accuracy on `held_out`.
    static ToyAdherenceProbe train(const ToyDataset& train_set, const ToyDataset& held_out, const TrainConfig& cfg);
    static ToyAdherenceProbe train(const ToyDataset& train_set, const ToyDataset& held_out);

    std::string name() const override { return "toy_probe"; }
    bool trained() const noexcept { return num_classes_ > 0; }
    int num_classes() const noexcept { return num_classes_; }
    /// Throws Error when untrained, ValidationError for non-toy prompts.
    double score(const PixelVideo& x, const PromptSpec& prompt) const override;
    std::vector<double> frame_probabilities(const PixelVideo& x, int frame) const;

    const nlohmann::json& manifest() const noexcept { return manifest_; }

    void save(const std::filesystem::path& path) const;
    static ToyAdherenceProbe load(const std::filesystem::path& path);

    static std::array<double, kFeatures> frame_features(const PixelVideo& x, int frame);

private:
    int num_classes_ = 0;
    std::vector<double> weights_;  // num_classes x (kFeatures + 1), last column bias
    std::vector<double> mean_, scale_;
    nlohmann::json manifest_;
};

struct PairInput {
    std::string label;
    PixelVideo x_a;
    PixelVideo x_b;
    PromptSpec prompt_a;
    PromptSpec prompt_b;
    std::optional<Tracklet> track_a;
    std::optional<Tracklet> track_b;
    std::string config_hash;
};

struct MetricRow {
    std::string label;
    double adherence_a = 0.0;
    double adherence_b = 0.0;
    double adherence_mean = 0.0;
    double motion_consistency = 0.0;
    double perceptual_distance = 0.0;
    double ssim = 0.0;
    std::string config_hash;
    std::map<std::string, double> extra;  // experiment-specific columns, aggregated like the rest
};

struct MetricStat {
    double mean = 0.0;
    double std = 0.0;  // population standard deviation
};

struct MetricReport {
    std::vector<MetricRow> rows;
    std::map<std::string, MetricStat> aggregate;
    nlohmann::json provenance = nlohmann::json::object();

    nlohmann::json to_json() const;
    static MetricReport from_json(const nlohmann::json& j);
    /// One line per pair; columns mirror the comparison table plus ssim.
    std::string to_csv() const;
};

struct EvalConfig {
    const AdherenceScorer* adherence = nullptr;  // required
    PerceptualFn perceptual = perceptual_proxy;
};

/// Scores every pair and aggregates. Throws ValidationError on empty input.
MetricReport evaluate_pairs(const std::vector<PairInput>& pairs, const EvalConfig& cfg);
MetricRow evaluate_pair(const PairInput& pair, const EvalConfig& cfg);
void aggregate_report(MetricReport& report);

}  // namespace matchcut
