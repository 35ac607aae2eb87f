#include "matchcut/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace matchcut {

std::string to_string(BetaCurve c) { return c == BetaCurve::linear ? "linear" : "cosine"; }

BetaCurve beta_curve_from_string(const std::string& s) {
    if (s == "linear") return BetaCurve::linear;
    if (s == "cosine") return BetaCurve::cosine;
    throw ValidationError("beta_curve", "unknown curve '" + s + "'");
}

void ScheduleSpec::validate() const {
    if (num_steps < 1) throw ValidationError("num_steps", "must be >= 1");
    if (!(beta_start > 0.0 && beta_start < 1.0)) throw ValidationError("beta_start", "must lie in (0, 1)");
    if (!(beta_end > 0.0 && beta_end < 1.0)) throw ValidationError("beta_end", "must lie in (0, 1)");
    if (!(beta_start < beta_end)) throw ValidationError("beta_start", "must be smaller than beta_end");
    if (!(stochasticity >= 0.0 && stochasticity <= 1.0))
        throw ValidationError("stochasticity", "must lie in [0, 1]");
}

namespace {

std::vector<double> make_betas(const ScheduleSpec& spec) {
    const int steps = spec.num_steps;
    std::vector<double> betas(static_cast<std::size_t>(steps));
    if (spec.beta_curve == BetaCurve::linear) {
        for (int i = 0; i < steps; ++i) {
            const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
            betas[static_cast<std::size_t>(i)] = spec.beta_start + (spec.beta_end - spec.beta_start) * frac;
        }
        return betas;
    }
    // Cosine curve with offset s = 0.008 and betas capped at 0.999.
    constexpr double offset = 0.008;
    auto f = [&](double t) {
        const double c = std::cos((t / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
        return c * c;
    };
    for (int i = 0; i < steps; ++i) {
        const double b = 1.0 - f(i + 1.0) / f(static_cast<double>(i));
        betas[static_cast<std::size_t>(i)] = std::clamp(b, 1e-8, 0.999);
    }
    return betas;
}

void check_t(const NoiseSchedule& s, int t, int lo) {
    if (t < lo || t > s.num_steps())
        throw ValidationError("t", "timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                                       std::to_string(s.num_steps()) + "]");
}

}  // namespace

NoiseSchedule build_schedule(const ScheduleSpec& spec) {
    spec.validate();
    NoiseSchedule s;
    s.spec_ = spec;
    s.beta_ = make_betas(spec);
    const auto n = s.beta_.size();
    s.alpha_bar_.resize(n);
    s.gamma_.resize(n);
    s.eta_.resize(n);
    s.sigma_.resize(n);
    double running = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        running *= 1.0 - s.beta_[i];
        s.alpha_bar_[i] = running;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double ab = s.alpha_bar_[i];
        const double ab_prev = i == 0 ? 1.0 : s.alpha_bar_[i - 1];
        const double sigma = spec.stochasticity * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
        const double eta = std::sqrt(ab_prev / ab);
        const double direction = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
        s.sigma_[i] = sigma;
        s.eta_[i] = eta;
        s.gamma_[i] = std::sqrt(1.0 - ab) - direction / eta;
    }
    return s;
}

double NoiseSchedule::alpha_bar(int t) const {
    check_t(*this, t, 0);
    return t == 0 ? 1.0 : alpha_bar_[static_cast<std::size_t>(t - 1)];
}
double NoiseSchedule::gamma(int t) const {
    check_t(*this, t, 1);
    return gamma_[static_cast<std::size_t>(t - 1)];
}
double NoiseSchedule::eta(int t) const {
    check_t(*this, t, 1);
    return eta_[static_cast<std::size_t>(t - 1)];
}
double NoiseSchedule::sigma(int t) const {
    check_t(*this, t, 1);
    return sigma_[static_cast<std::size_t>(t - 1)];
}
double NoiseSchedule::clean_gamma(int t) const {
    const double ab = alpha_bar(t);
    return std::sqrt(1.0 - ab) / std::sqrt(ab);
}

nlohmann::json NoiseSchedule::to_json() const {
    return {{"spec", spec_},          {"beta", beta_}, {"alpha_bar", alpha_bar_},
            {"gamma", gamma_},        {"eta", eta_},   {"sigma", sigma_},
            {"format", "matchcut.schedule.v1"}};
}

LatentVideo predict_clean(const LatentVideo& z_t, const LatentVideo& eps_t, Timestep t, const NoiseSchedule& sched) {
    require_same_shape(z_t, eps_t, "predict_clean");
    if (t.t == 0) throw ValidationError("t", "nothing to denoise at t = 0");
    const double g = sched.gamma(t.t);
    LatentVideo out(z_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = z_t[i] - g * eps_t[i];
    return out;
}

LatentVideo renoise_step(const LatentVideo& z0_est, Timestep t, const NoiseSchedule& sched, const LatentVideo& noise) {
    require_same_shape(z0_est, noise, "renoise_step");
    if (t.t == 0) throw ValidationError("t", "renoise_step requires t >= 1");
    const double eta = sched.eta(t.t);
    const double sigma = sched.sigma(t.t);
    LatentVideo out(z0_est.shape());
    if (sigma == 0.0) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = eta * z0_est[i];
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = eta * z0_est[i] + sigma * noise[i];
    }
    return out;
}

LatentVideo ddim_step(const LatentVideo& z_t, const LatentVideo& eps_t, Timestep t, const NoiseSchedule& sched,
                      const LatentVideo& noise) {
    return renoise_step(predict_clean(z_t, eps_t, t, sched), t, sched, noise);
}

LatentVideo clean_estimate(const LatentVideo& z_t, const LatentVideo& eps_t, Timestep t, const NoiseSchedule& sched) {
    require_same_shape(z_t, eps_t, "clean_estimate");
    if (t.t == 0) throw ValidationError("t", "clean_estimate requires t >= 1");
    const double inv_scale = 1.0 / std::sqrt(sched.alpha_bar(t.t));
    const double g = sched.clean_gamma(t.t);
    LatentVideo out(z_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = z_t[i] * inv_scale - g * eps_t[i];
    return out;
}

LatentVideo noise_to_level(const LatentVideo& x0, Timestep t, const NoiseSchedule& sched, const LatentVideo& noise) {
    require_same_shape(x0, noise, "noise_to_level");
    const double ab = sched.alpha_bar(t.t);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    LatentVideo out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * noise[i];
    return out;
}

void to_json(nlohmann::json& j, const ScheduleSpec& s) {
    j = {{"num_steps", s.num_steps},
         {"beta_curve", to_string(s.beta_curve)},
         {"beta_start", s.beta_start},
         {"beta_end", s.beta_end},
         {"stochasticity", s.stochasticity}};
}

void from_json(const nlohmann::json& j, ScheduleSpec& s) {
    ScheduleSpec d;
    s.num_steps = j.value("num_steps", d.num_steps);
    s.beta_curve = beta_curve_from_string(j.value("beta_curve", to_string(d.beta_curve)));
    s.beta_start = j.value("beta_start", d.beta_start);
    s.beta_end = j.value("beta_end", d.beta_end);
    s.stochasticity = j.value("stochasticity", d.stochasticity);
}

}  // namespace matchcut
