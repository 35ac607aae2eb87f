#pragma once

// Timestep mathematics shared by every sampler.
//
// A step at timestep t (t = T is pure noise, t = 0 is clean) is the pair
//
//     z0_t    = z_t - gamma_t * eps_t                        (predict_clean)
//     z_{t-1} = eta_t * z0_t + sigma_t * noise               (renoise_step)
//
// with coefficients derived from the variance-preserving forward process
// z_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps and the generalized DDIM update
//
//     z_{t-1} = sqrt(abar_{t-1}) x0_hat + sqrt(1 - abar_{t-1} - sigma_t^2) eps_t + sigma_t * noise
//     x0_hat  = (z_t - sqrt(1 - abar_t) eps_t) / sqrt(abar_t)
//
// Factoring the deterministic part as eta_t (z_t - gamma_t eps_t) gives
//
//     eta_t   = sqrt(abar_{t-1} / abar_t)
//     gamma_t = sqrt(1 - abar_t) - sqrt(1 - abar_{t-1} - sigma_t^2) / eta_t
//     sigma_t = s * sqrt((1 - abar_{t-1}) / (1 - abar_t)) * sqrt(1 - abar_t / abar_{t-1})
//
// where s is ScheduleSpec::stochasticity (0 = DDIM, 1 = DDPM posterior
// variance) and abar_0 = 1. The composition is exactly the DDIM/DDPM update,
// sigma vanishes identically when s = 0, and with eps = 0 a rollout from z_T
// scales by prod(eta) = sqrt(1 / abar_T).
//
// z0_t above is the step's projected latent, not the clean video. The clean
// estimate shown in previews and edited by interventions is x0_hat. In
// whitened coordinates w_t = z_t / sqrt(abar_t) it reads
// x0_hat = w_t - clean_gamma_t * eps_t with clean_gamma_t = sqrt(1 - abar_t) / sqrt(abar_t);
// clean_estimate() evaluates that form.

#include <json.hpp>
#include <string>
#include <vector>

#include "matchcut/tensor.hpp"

namespace matchcut {

enum class BetaCurve { linear, cosine };

std::string to_string(BetaCurve c);
BetaCurve beta_curve_from_string(const std::string& s);

struct ScheduleSpec {
    int num_steps = 50;
    BetaCurve beta_curve = BetaCurve::linear;
    double beta_start = 0.002;
    double beta_end = 0.3;
    double stochasticity = 0.0;

    /// Throws ValidationError naming the offending field.
    void validate() const;

    friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

/// Remaining-noise index: t = T is pure noise, t = 0 fully denoised.
struct Timestep {
    int t = 0;
};

/// Immutable per-timestep coefficient tables. Arrays are indexed by t - 1.
class NoiseSchedule {
public:
    int num_steps() const noexcept { return static_cast<int>(alpha_bar_.size()); }
    const ScheduleSpec& spec() const noexcept { return spec_; }

    /// abar_t for t in [0, T]; abar_0 = 1.
    double alpha_bar(int t) const;
    double gamma(int t) const;
    double eta(int t) const;
    double sigma(int t) const;
    /// Whitened-frame coefficient sqrt(1 - abar_t) / sqrt(abar_t).
    double clean_gamma(int t) const;

    const std::vector<double>& alpha_bar_table() const noexcept { return alpha_bar_; }
    const std::vector<double>& gamma_table() const noexcept { return gamma_; }
    const std::vector<double>& eta_table() const noexcept { return eta_; }
    const std::vector<double>& sigma_table() const noexcept { return sigma_; }
    const std::vector<double>& beta_table() const noexcept { return beta_; }

    nlohmann::json to_json() const;

private:
    friend NoiseSchedule build_schedule(const ScheduleSpec& spec);

    ScheduleSpec spec_;
    std::vector<double> beta_;
    std::vector<double> alpha_bar_;
    std::vector<double> gamma_;
    std::vector<double> eta_;
    std::vector<double> sigma_;
};

NoiseSchedule build_schedule(const ScheduleSpec& spec);

LatentVideo predict_clean(const LatentVideo& z_t, const LatentVideo& eps_t, Timestep t, const NoiseSchedule& sched);
LatentVideo renoise_step(const LatentVideo& z0_est, Timestep t, const NoiseSchedule& sched, const LatentVideo& noise);
/// renoise_step(predict_clean(...)); the single step primitive used by every sampler.
LatentVideo ddim_step(const LatentVideo& z_t, const LatentVideo& eps_t, Timestep t, const NoiseSchedule& sched,
                      const LatentVideo& noise);

/// x0_hat = (z_t - sqrt(1 - abar_t) eps_t) / sqrt(abar_t).
LatentVideo clean_estimate(const LatentVideo& z_t, const LatentVideo& eps_t, Timestep t, const NoiseSchedule& sched);

/// Forward-process sample at level t: sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.
LatentVideo noise_to_level(const LatentVideo& x0, Timestep t, const NoiseSchedule& sched, const LatentVideo& noise);

void to_json(nlohmann::json& j, const ScheduleSpec& s);
void from_json(const nlohmann::json& j, ScheduleSpec& s);

}  // namespace matchcut
