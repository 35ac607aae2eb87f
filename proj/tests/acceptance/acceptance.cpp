// Usage: matchcut_acceptance <assets_dir> <matchcut_cli> <work_dir>
// Prints one PASS/FAIL line per criterion and exits non-zero when any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <httplib.h>
#include <iostream>
#include <sstream>
#include <thread>

#include "matchcut/harness.hpp"
#include "matchcut/image_io.hpp"
#include "matchcut/rng.hpp"
#include "matchcut/service.hpp"
#include "matchcut/tensor_io.hpp"

using namespace matchcut;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

fs::path g_assets, g_cli, g_work;
int g_failed = 0;

void criterion(const std::string& name, double budget_s, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = fn();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > budget_s) {
        o.pass = false;
        o.detail += "; over time budget";
    }
    if (!o.pass) ++g_failed;
    std::printf("%s %s: %s (%.1fs of %.0fs)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs, budget_s);
    std::fflush(stdout);
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s.precision(precision);
    s << std::fixed << v;
    return s.str();
}

ExperimentSpec toy_pairs(int pairs, std::uint64_t pair_seed) {
    ExperimentSpec s;
    s.base = ForkConfig{};
    s.pairs = pairs;
    s.pair_seed = pair_seed;
    s.assets_dir = g_assets;
    return s;
}

Pipeline pipeline_for(const ForkConfig& cfg) { return make_pipeline(cfg, g_assets); }

Outcome scheduler_conformance() {
    const auto oracles = json::parse(read_text_file(fs::path(MATCHCUT_TEST_DATA) / "oracles.json"));
    double worst = 0.0;
    auto rel = [&](double got, double want) {
        worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
    };
    for (const auto& o : oracles["schedules"]) {
        ScheduleSpec spec;
        spec.num_steps = o["T"];
        spec.beta_curve = beta_curve_from_string(o["curve"]);
        if (spec.beta_curve == BetaCurve::linear) {
            spec.beta_start = o["beta_start"];
            spec.beta_end = o["beta_end"];
        }
        const LatentVideo z({1, 1, 1, 8}, o["z"].get<std::vector<double>>());
        const LatentVideo eps({1, 1, 1, 8}, o["eps"].get<std::vector<double>>());
        const LatentVideo noise({1, 1, 1, 8}, o["noise"].get<std::vector<double>>());
        for (const auto& step : o["steps"]) {
            spec.stochasticity = step["stochasticity"];
            const auto sched = build_schedule(spec);
            const Timestep t{step["t"]};
            const auto next = ddim_step(z, eps, t, sched, noise);
            const auto clean = clean_estimate(z, eps, t, sched);
            for (std::size_t i = 0; i < 8; ++i) {
                rel(next[i], step["next"][i]);
                rel(clean[i], step["clean"][i]);
            }
        }
        spec.stochasticity = 0.0;
        const auto sched = build_schedule(spec);
        auto roll = z;
        const LatentVideo zero(z.shape());
        for (int t = sched.num_steps(); t >= 1; --t) roll = ddim_step(roll, zero, Timestep{t}, sched, zero);
        for (std::size_t i = 0; i < 8; ++i) rel(roll[i], o["zero_eps_rollout"][i]);
    }
    auto rollout = [] {
        ScheduleSpec spec;
        spec.stochasticity = 0.5;
        const auto sched = build_schedule(spec);
        auto z = gaussian_video<LatentTag>({4, 3, 16, 16}, 1);
        for (int t = sched.num_steps(); t >= 1; --t) {
            LatentVideo eps(z.shape());
            for (std::size_t i = 0; i < z.size(); ++i) eps[i] = std::tanh(z[i]);
            z = ddim_step(z, eps, Timestep{t}, sched, gaussian_video<LatentTag>(z.shape(), mix_seed(2, t)));
        }
        return z;
    };
    const bool repeatable = rollout() == rollout();
    return {worst <= 1e-6 && repeatable,
            "max relative error " + std::to_string(worst) + ", rerun bit-identical " + (repeatable ? "yes" : "no")};
}

Outcome boundary_equivalences() {
    const auto spec = toy_pairs(3, 101);
    bool k0 = true, kT = true;
    double ssim_T = 1.0, lpips_T = 0.0;
    for (int i = 0; i < spec.pairs; ++i) {
        auto cfg = pair_config(spec, i);
        cfg.joint_steps = 0;
        const auto p = pipeline_for(cfg);
        const auto pair = generate_match_pair(p, cfg);
        const auto z = initial_latent(p, cfg);
        k0 = k0 && pair.x_a == generate_single(p, cfg, cfg.prompt_a, z, Branch::a) &&
             pair.x_b == generate_single(p, cfg, cfg.prompt_b, z, Branch::b);
        cfg.joint_steps = cfg.total_steps();
        const auto same = generate_match_pair(p, cfg);
        kT = kT && same.x_a == same.x_b;
        ssim_T = std::min(ssim_T, ssim(same.x_a, same.x_b));
        lpips_T = std::max(lpips_T, perceptual_proxy(same.x_a, same.x_b));
    }
    return {k0 && kT && ssim_T == 1.0 && lpips_T == 0.0,
            std::string("K=0 independent ") + (k0 ? "bit-identical" : "differs") + ", K=T x'=x'' " + (kT ? "yes" : "no") +
                ", SSIM " + fmt(ssim_T, 6) + ", perceptual " + fmt(lpips_T, 6)};
}

Outcome prompt_swap_symmetry() {
    const auto spec = toy_pairs(3, 202);
    bool ok = true;
    int checked = 0;
    for (int i = 0; i < spec.pairs; ++i) {
        for (int K : {10, 30}) {
            auto cfg = pair_config(spec, i);
            cfg.joint_steps = K;
            const auto p = pipeline_for(cfg);
            const auto fwd = generate_match_pair(p, cfg);
            std::swap(cfg.prompt_a, cfg.prompt_b);
            const auto rev = generate_match_pair(p, cfg);
            ok = ok && fwd.x_a == rev.x_b && fwd.x_b == rev.x_a;
            ++checked;
        }
    }
    return {ok, std::to_string(checked) + " swapped runs " + (ok ? "bit-exact" : "not swapped")};
}

Outcome k_trend() {
    auto spec = toy_pairs(20, 303);
    spec.kind = ExperimentKind::k_sweep;
    const int T = spec.base.total_steps();
    spec.grid = json::array();
    for (int k = 0; k <= 5; ++k) spec.grid.push_back(k * T / 5);
    spec.out_dir = g_work / "k_trend";
    spec.expectations = {{"ssim", "non-decreasing in K, at most one inversion < 0.02"},
                         {"motion_consistency", "K=0.8T exceeds K=0 by >= 0.1"}};
    const auto r = run_experiment(spec);
    std::vector<double> s, mc;
    for (const auto& pt : r.points) {
        s.push_back(pt.aggregate.at("ssim").mean);
        mc.push_back(pt.aggregate.at("motion_consistency").mean);
    }
    int inversions = 0;
    bool small = true;
    for (std::size_t i = 1; i < s.size(); ++i)
        if (s[i] < s[i - 1]) {
            ++inversions;
            small = small && s[i - 1] - s[i] < 0.02;
        }
    const double gain = mc[4] - mc[0];
    std::string curve;
    for (std::size_t i = 0; i < s.size(); ++i) curve += (i ? " " : "") + fmt(s[i], 3);
    return {r.failures == 0 && (inversions == 0 || (inversions == 1 && small)) && gain >= 0.1,
            "20 pairs, SSIM by K [" + curve + "], inversions " + std::to_string(inversions) + ", motion consistency " +
                fmt(mc[0], 3) + " -> " + fmt(mc[4], 3) + " (gain " + fmt(gain, 3) + ")"};
}

Outcome intervention_exactness() {
    const auto spec = toy_pairs(3, 404);
    bool identity = true, scoped = true;
    for (int i = 0; i < spec.pairs; ++i) {
        auto cfg = pair_config(spec, i);
        cfg.joint_steps = 10 + 10 * i;
        const auto p = pipeline_for(cfg);
        const auto ref = generate_match_pair(p, cfg);
        const auto same = inject(p, ref.trace, InterventionSpec{});
        identity = identity && same.x_a == ref.x_a && same.x_b == ref.x_b;
        InterventionSpec g;
        g.kind = InterventionKind::gamma;
        g.gamma = 2.0;
        g.branch_scope = BranchScope::a_only;
        const auto a_only = inject(p, ref.trace, g);
        g.branch_scope = BranchScope::b_only;
        const auto b_only = inject(p, ref.trace, g);
        scoped = scoped && a_only.x_b == ref.x_b && !(a_only.x_a == ref.x_a) && b_only.x_a == ref.x_a &&
                 !(b_only.x_b == ref.x_b);
    }
    return {identity && scoped, std::string("identity ") + (identity ? "bit-exact" : "differs") + ", scoped edits " +
                                    (scoped ? "leave the other branch bit-identical" : "leak across branches")};
}

ExperimentResult tradeoff_sweep(int K, const std::string& name) {
    auto spec = toy_pairs(10, 505);
    spec.kind = ExperimentKind::intervention_sweep;
    spec.base.joint_steps = K;
    spec.grid = json::parse(R"([{"kind":"gamma","gamma":2.0},{"kind":"color_jitter","seed":1},{"kind":"histogram_match","seed":2}])");
    spec.out_dir = g_work / name;
    spec.expectations = {{"ssim_to_reference", "<= 0.98"}, {"adherence_delta", "|.| <= 0.05"}};
    return run_experiment(spec);
}

std::pair<bool, std::string> summarize_tradeoff(const ExperimentResult& r) {
    bool ok = r.failures == 0;
    std::string detail;
    for (const auto& pt : r.points) {
        const double s = pt.aggregate.at("ssim_to_reference").mean;
        const double d = pt.aggregate.at("adherence_delta").mean;
        ok = ok && 1.0 - s >= 0.02 && std::abs(d) <= 0.05;
        detail += (detail.empty() ? "" : ", ") + pt.label + " SSIM " + fmt(s, 3) + " dAdh " + fmt(d, 3);
    }
    return {ok, detail};
}

Outcome intervention_tradeoff() {
    const auto [ok, detail] = summarize_tradeoff(tradeoff_sweep(10, "tradeoff_k10"));
    return {ok, "10 pairs at K=0.2T: " + detail};
}

Outcome metric_oracles() {
    Rng r(7);
    PixelVideo x({4, 3, 32, 32});
    for (double& v : x.values()) v = r.uniform();
    const double self = ssim(x, x);
    auto moving = [](double vx, double vy) {
        auto p = canonical_scene(0, 0);
        p.velocity_x = vx;
        p.velocity_y = vy;
        return trajectory_of(p);
    };
    const double v = 1.0 / 32.0;
    const double same = motion_consistency(moving(v, 0), moving(v, 0));
    const double orth = motion_consistency(moving(v, 0), moving(0, v));
    const double opp = motion_consistency(moving(v, 0), moving(-v, 0));
    const auto probe = load_probe(g_assets);
    double worst = 1.0;
    for (int cls = 0; cls < num_toy_classes(); ++cls) {
        double sum = 0.0;
        for (int i = 0; i < 8; ++i) sum += probe->score(render_scene(sample_scene(cls, 90000 + 31 * i + cls)), PromptSpec::toy(cls));
        worst = std::min(worst, sum / 8);
    }
    const auto& m = probe->manifest();
    const bool recorded = m.contains("held_out_mean_score_correct_class") && m["held_out_mean_score_correct_class"].get<double>() >= 0.9;
    return {std::abs(self - 1.0) <= 1e-6 && same == 1.0 && orth == 0.5 && opp == 0.0 && worst >= 0.9 && recorded,
            "ssim(x,x) " + fmt(self, 9) + ", motion " + fmt(same, 1) + "/" + fmt(orth, 1) + "/" + fmt(opp, 1) +
                ", probe worst class " + fmt(worst, 3) + ", manifest " +
                (recorded ? fmt(m["held_out_mean_score_correct_class"].get<double>(), 3) : std::string("missing"))};
}

Outcome v2v_boundaries() {
    const auto spec = toy_pairs(3, 606);
    bool zero = true, full = true;
    for (int i = 0; i < spec.pairs; ++i) {
        const auto cfg = pair_config(spec, i);
        const auto p = pipeline_for(cfg);
        const auto none = baseline_v2v(p, cfg, 0);
        zero = zero && none.x_b == none.x_a;
        const auto all = baseline_v2v(p, cfg, cfg.total_steps());
        full = full && all.x_b == generate_single(p, cfg, cfg.prompt_b, all.injected, Branch::b);
    }
    return {zero && full, std::string("level 0 returns the input ") + (zero ? "bit-exact" : "no") +
                              ", level T equals fresh generation " + (full ? "bit-exact" : "no")};
}

Outcome cli_service_parity() {
    ForkConfig cfg;
    cfg.prompt_a = PromptSpec::toy(2);
    cfg.prompt_b = PromptSpec::toy(0);
    cfg.joint_steps = 20;
    cfg.seed_init = 77;
    cfg.seed_path = 78;
    const auto dir = g_work / "parity";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_text_file(dir / "config.json", json(cfg).dump(1));
    const std::string cmd = "\"" + g_cli.string() + "\" generate --config \"" + (dir / "config.json").string() +
                            "\" --assets \"" + g_assets.string() + "\" --out \"" + (dir / "cli").string() + "\" > /dev/null";
    if (std::system(cmd.c_str()) != 0) return {false, "CLI generate failed"};

    Service service(ServiceConfig{g_assets, dir / "service", {}, 2});
    const int port = service.bind("127.0.0.1", 0);
    std::thread th([&] { service.run(); });
    service.wait_until_ready();
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(600, 0);
    int same = 0;
    std::string detail;
    try {
        auto r = c.Post("/sessions", json(cfg).dump(), "application/json");
        if (!r || r->status != 201) throw Error("session creation failed");
        const std::string id = json::parse(r->body)["session_id"];
        r = c.Post("/sessions/" + id + "/joint?wait=1", "", "application/json");
        if (!r || r->status != 200) throw Error("joint phase failed");
        r = c.Post("/sessions/" + id + "/finalize?wait=1", "", "application/json");
        if (!r || r->status != 200) throw Error("finalize failed");
        for (const auto& name : generation_artifacts()) {
            const auto body = c.Get("/sessions/" + id + "/artifacts/" + name)->body;
            const auto bytes = read_file_bytes(dir / "cli" / name);
            if (body == std::string(bytes.begin(), bytes.end()))
                ++same;
            else
                detail += " " + name + " differs;";
        }
    } catch (const std::exception& e) {
        detail = e.what();
    }
    service.stop();
    th.join();
    const int n = static_cast<int>(generation_artifacts().size());
    return {same == n, std::to_string(same) + "/" + std::to_string(n) + " artifacts byte-identical" + detail};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 4) {
        std::cerr << "usage: matchcut_acceptance <assets_dir> <matchcut_cli> <work_dir>\n";
        return 2;
    }
    g_assets = argv[1];
    g_cli = argv[2];
    g_work = argv[3];
    fs::create_directories(g_work);

    criterion("scheduler conformance", 1, scheduler_conformance);
    criterion("boundary equivalences", 60, boundary_equivalences);
    criterion("prompt-swap symmetry", 60, prompt_swap_symmetry);
    criterion("K-trend", 1800, k_trend);
    criterion("intervention exactness", 300, intervention_exactness);
    criterion("intervention trade-off", 900, intervention_tradeoff);
    criterion("metric oracles", 300, metric_oracles);
    criterion("V2V boundaries", 120, v2v_boundaries);
    criterion("CLI/service parity", 300, cli_service_parity);

    const auto t0 = std::chrono::steady_clock::now();
    const auto [ok, detail] = summarize_tradeoff(tradeoff_sweep(20, "tradeoff_k20"));
    std::printf("INFO intervention trade-off at K=0.4T %s: %s (%.1fs)\n", ok ? "holds" : "does not hold", detail.c_str(),
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

    std::printf("%d criteria failed\n", g_failed);
    return g_failed == 0 ? 0 : 1;
}
