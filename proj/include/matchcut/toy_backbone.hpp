#pragma once

// Toy spatiotemporal attention denoiser.
//
// The network keeps a bank of learned video templates P_j, `per_class` of
// them for every prompt class. For a latent z_t at signal level
// a = sqrt(abar_t), noise variance v = 1 - abar_t and log-SNR l = log(a^2 / v)
// it attends over all (template j, circular spatial shift s) pairs:
//
//     logit_js = kappa(l) * (a <z, S_s P_j> - a^2 |P_j|^2 / 2) / v + bias_j
//     m        = sum_js softmax(logit)_js S_s P_j
//     x0_hat   = m + beta(l) * (mean_c(z) / a - mean_c(m))        (per channel)
//     eps_hat  = gain(l) * (z - a x0_hat) / sqrt(v)
//
// A class prompt attends over its own templates, the null prompt over all of
// them. kappa, gain and beta are piecewise linear in l through learned knots,
// so the weights are independent of the step count. Correlations and the
// attention-weighted sums run in the Fourier domain. With all weights zero
// the output is identically zero.
//
// Latents with fewer frames than the templates use the templates' leading
// frames (frame_count = 1 gives an image model).

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <memory>
#include <span>
#include <vector>

#include "matchcut/backbone.hpp"

namespace matchcut {

struct ToyWeights {
    VideoShape template_shape{16, 3, 32, 32};
    int num_classes = 4;
    int per_class = 16;
    double lambda_min = -10.0;
    double lambda_max = 10.0;
    std::vector<float> templates;  // num_templates x template_shape.numel()
    std::vector<float> bias;       // num_templates
    std::vector<float> kappa;      // knots
    std::vector<float> gain;
    std::vector<float> beta;

    int num_templates() const noexcept { return num_classes * per_class; }
    int num_knots() const noexcept { return static_cast<int>(kappa.size()); }

    /// All-zero weights (templates, bias and every knot).
    static ToyWeights zeros(VideoShape template_shape, int num_classes, int per_class, int knots = 9);

    void validate() const;
    void save(const std::filesystem::path& path) const;
    static ToyWeights load(const std::filesystem::path& path);
};

class ToyDenoiser final : public Denoiser {
public:
    ToyDenoiser(ToyWeights weights, NoiseSchedule schedule);
    ~ToyDenoiser() override;

    std::string name() const override { return "toy"; }
    bool supports(const PromptSpec& prompt) const override;
    bool accepts(const VideoShape& shape) const override;
    const NoiseSchedule& schedule() const override { return schedule_; }
    const ToyWeights& weights() const noexcept { return weights_; }

    /// The network's internal clean estimate x0_hat (before the output map).
    LatentVideo clean_prediction(const LatentVideo& z, const PromptSpec& prompt, Timestep t) const;

protected:
    LatentVideo predict(const LatentVideo& z, const PromptSpec& prompt, Timestep t) const override;

private:
    struct Impl;
    ToyWeights weights_;
    NoiseSchedule schedule_;
    std::unique_ptr<Impl> impl_;
};

struct ToyTrainConfig {
    int templates_per_class = 16;
    int knots = 9;
    int steps = 240;
    int batch = 8;
    double lr_templates = 5e-4;
    double lr_scalars = 2e-2;
    double null_prob = 0.15;
    int validation_samples = 96;
    std::uint64_t seed = 7;
    ScheduleSpec schedule{};
};

void to_json(nlohmann::json& j, const ToyTrainConfig& c);
void from_json(const nlohmann::json& j, ToyTrainConfig& c);

struct ToyTrainResult {
    ToyWeights weights;
    nlohmann::json manifest;  // seed, losses, validation loss, zero-predictor baseline, ...
};

/// Denoising score matching: minimizes |eps_hat(sqrt(abar_t) x + sqrt(1 - abar_t) eps, c, t) - eps|^2
/// with t uniform, the null class substituted with probability null_prob, and Adam updates.
/// Templates start from a shift-invariant farthest-point selection of each class's clips.
/// `clips` are in the model's space (already encoded when training a latent backbone).
ToyTrainResult train_toy_backbone(std::span<const LatentVideo> clips, std::span<const int> labels,
                                  std::span<const LatentVideo> val_clips, std::span<const int> val_labels,
                                  int num_classes, const ToyTrainConfig& cfg);

/// Gradient of the per-element mean squared error for one example, exposed for
/// finite-difference testing. Returns the loss; gradients are accumulated
/// into `grad` (same layout as the float vectors of `weights`, concatenated:
/// templates, bias, kappa, gain, beta).
double toy_loss_and_gradient(const ToyWeights& weights, const NoiseSchedule& sched, const LatentVideo& z,
                             const LatentVideo& eps, const PromptSpec& prompt, Timestep t, std::vector<double>& grad);

}  // namespace matchcut
