#include <doctest.h>

#include <cmath>

#include "../common.hpp"
#include "matchcut/error.hpp"
#include "matchcut/rng.hpp"
#include "matchcut/schedule.hpp"

using namespace matchcut;

namespace {

ScheduleSpec spec_of(const nlohmann::json& o, double s = 0.0) {
    ScheduleSpec spec;
    spec.num_steps = o["T"];
    spec.beta_curve = beta_curve_from_string(o["curve"]);
    if (spec.beta_curve == BetaCurve::linear) {
        spec.beta_start = o["beta_start"];
        spec.beta_end = o["beta_end"];
    }
    spec.stochasticity = s;
    return spec;
}

LatentVideo vec(const nlohmann::json& v) { return LatentVideo({1, 1, 1, 8}, v.get<std::vector<double>>()); }

void check_rel(const LatentVideo& got, const nlohmann::json& want, double tol) {
    const auto w = want.get<std::vector<double>>();
    REQUIRE(got.size() == w.size());
    for (std::size_t i = 0; i < w.size(); ++i)
        CHECK(std::abs(got[i] - w[i]) <= tol * std::max(1.0, std::abs(w[i])));
}

}  // namespace

TEST_CASE("alpha_bar matches the reference tables") {
    for (const auto& o : testing::oracles()["schedules"]) {
        const auto sched = build_schedule(spec_of(o));
        const auto want = o["alpha_bar"].get<std::vector<double>>();
        REQUIRE(sched.num_steps() == static_cast<int>(want.size()));
        CHECK(sched.alpha_bar(0) == 1.0);
        for (int t = 1; t <= sched.num_steps(); ++t)
            CHECK(std::abs(sched.alpha_bar(t) - want[t - 1]) <= 1e-6 * want[t - 1]);
    }
}

TEST_CASE("single steps match the reference update elementwise") {
    for (const auto& o : testing::oracles()["schedules"]) {
        for (const auto& step : o["steps"]) {
            const auto sched = build_schedule(spec_of(o, step["stochasticity"]));
            const Timestep t{step["t"]};
            const auto z = vec(o["z"]), eps = vec(o["eps"]), noise = vec(o["noise"]);
            check_rel(ddim_step(z, eps, t, sched, noise), step["next"], 1e-6);
            check_rel(clean_estimate(z, eps, t, sched), step["clean"], 1e-6);
        }
    }
}

TEST_CASE("zero noise estimate rolls out to z_T / sqrt(abar_T)") {
    for (const auto& o : testing::oracles()["schedules"]) {
        const auto sched = build_schedule(spec_of(o));
        auto z = vec(o["z"]);
        const LatentVideo zero(z.shape());
        for (int t = sched.num_steps(); t >= 1; --t) z = ddim_step(z, zero, Timestep{t}, sched, zero);
        check_rel(z, o["zero_eps_rollout"], 1e-6);
    }
}

TEST_CASE("deterministic schedule has zero sigma and ignores the noise argument") {
    const auto sched = build_schedule(ScheduleSpec{});
    for (double s : sched.sigma_table()) CHECK(s == 0.0);
    const auto z = gaussian_video<LatentTag>({1, 1, 1, 16}, 1);
    const auto eps = gaussian_video<LatentTag>({1, 1, 1, 16}, 2);
    const auto n1 = gaussian_video<LatentTag>({1, 1, 1, 16}, 3);
    const auto n2 = gaussian_video<LatentTag>({1, 1, 1, 16}, 4);
    CHECK(ddim_step(z, eps, Timestep{20}, sched, n1) == ddim_step(z, eps, Timestep{20}, sched, n2));
}

TEST_CASE("step composes predict_clean and renoise_step") {
    ScheduleSpec spec;
    spec.stochasticity = 0.5;
    const auto sched = build_schedule(spec);
    const auto z = gaussian_video<LatentTag>({1, 2, 3, 4}, 5);
    const auto eps = gaussian_video<LatentTag>({1, 2, 3, 4}, 6);
    const auto n = gaussian_video<LatentTag>({1, 2, 3, 4}, 7);
    const Timestep t{17};
    CHECK(ddim_step(z, eps, t, sched, n) == renoise_step(predict_clean(z, eps, t, sched), t, sched, n));
}

TEST_CASE("forward noising inverts the clean estimate") {
    const auto sched = build_schedule(ScheduleSpec{});
    const auto x0 = gaussian_video<LatentTag>({1, 1, 4, 4}, 8);
    const auto n = gaussian_video<LatentTag>({1, 1, 4, 4}, 9);
    for (int t : {1, 25, 50}) {
        const auto zt = noise_to_level(x0, Timestep{t}, sched, n);
        const auto back = clean_estimate(zt, n, Timestep{t}, sched);
        for (std::size_t i = 0; i < x0.size(); ++i) CHECK(back[i] == doctest::Approx(x0[i]).epsilon(1e-9));
    }
}

TEST_CASE("schedule validation names the field") {
    auto expect_field = [](ScheduleSpec s, const std::string& field) {
        try {
            s.validate();
            FAIL("expected ValidationError for " << field);
        } catch (const ValidationError& e) {
            CHECK(e.field() == field);
        }
    };
    ScheduleSpec s;
    s.num_steps = 0;
    expect_field(s, "num_steps");
    s = {};
    s.beta_end = 1.5;
    expect_field(s, "beta_end");
    s = {};
    s.beta_start = 0.5;
    s.beta_end = 0.1;
    expect_field(s, "beta_start");
    s = {};
    s.stochasticity = -0.1;
    expect_field(s, "stochasticity");
    const auto sched = build_schedule(ScheduleSpec{});
    CHECK_THROWS_AS(sched.gamma(0), ValidationError);
    CHECK_THROWS_AS(sched.gamma(51), ValidationError);
}

TEST_CASE("schedule spec JSON round trip") {
    ScheduleSpec s;
    s.num_steps = 30;
    s.beta_curve = BetaCurve::cosine;
    s.stochasticity = 0.3;
    nlohmann::json j = s;
    CHECK(j.get<ScheduleSpec>() == s);
}

TEST_CASE("seeded streams are reproducible and well distributed") {
    CHECK(mix_seed(1, "a") == mix_seed(1, "a"));
    CHECK(mix_seed(1, "a") != mix_seed(1, "b"));
    CHECK(mix_seed(1, 2) != mix_seed(2, 1));
    const auto g = gaussian_video<LatentTag>({1, 1, 100, 100}, 42);
    CHECK(g == gaussian_video<LatentTag>({1, 1, 100, 100}, 42));
    double m = 0, v = 0;
    for (double x : g.values()) m += x;
    m /= g.size();
    for (double x : g.values()) v += (x - m) * (x - m);
    v /= g.size();
    CHECK(std::abs(m) < 0.05);
    CHECK(std::abs(v - 1.0) < 0.05);
    Rng r(3);
    for (int i = 0; i < 1000; ++i) {
        const int k = r.below(7);
        CHECK((k >= 0 && k < 7));
    }
}
