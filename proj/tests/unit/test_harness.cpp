#include <doctest.h>

#include "../common.hpp"
#include "matchcut/error.hpp"
#include "matchcut/harness.hpp"

using namespace matchcut;

namespace {

PixelVideo frames_valued(int frames, double offset) {
    PixelVideo v({frames, 3, 2, 2});
    for (int f = 0; f < frames; ++f)
        for (double& x : v.values().subspan(f * v.shape().frame_size(), v.shape().frame_size())) x = offset + f;
    return v;
}

}  // namespace

TEST_CASE("match cuts splice frames at the cut") {
    const auto a = frames_valued(40, 0.0), b = frames_valued(40, 100.0);
    const auto m = assemble_matchcut(a, b, 20);
    CHECK(m.at(19, 0, 0, 0) == 19.0);
    CHECK(m.at(20, 0, 0, 0) == 120.0);
    CHECK(m.shape() == a.shape());
    const auto two = assemble_matchcut(frames_valued(2, 0), frames_valued(2, 100), 1);
    CHECK(two.at(0, 0, 0, 0) == 0.0);
    CHECK(two.at(1, 0, 0, 0) == 101.0);
    CHECK(assemble_matchcut(a, a, 7) == a);
    CHECK_THROWS_AS(assemble_matchcut(a, b, 0), ValidationError);
    CHECK_THROWS_AS(assemble_matchcut(a, b, 40), ValidationError);
    CHECK_THROWS_AS(assemble_matchcut(a, frames_valued(39, 0), 5), ShapeError);
}

TEST_CASE("video-to-video boundaries") {
    const auto cfg = testing::small_config(4);
    const auto p = testing::synthetic_pipeline(cfg);
    const auto none = baseline_v2v(p, cfg, 0);
    CHECK(none.x_b == none.x_a);
    const auto full = baseline_v2v(p, cfg, cfg.total_steps());
    CHECK(full.x_b == generate_single(p, cfg, cfg.prompt_b, full.injected, Branch::b));
    CHECK_THROWS_AS(baseline_v2v(p, cfg, cfg.total_steps() + 1), ValidationError);
}

TEST_CASE("lower bound draws an independent second latent") {
    const auto cfg = testing::small_config(4);
    const auto p = testing::synthetic_pipeline(cfg);
    const auto [a, b] = baseline_lower_bound(p, cfg);
    CHECK(a == generate_single(p, cfg, cfg.prompt_a, initial_latent(p, cfg), Branch::a));
    CHECK_FALSE(b == generate_single(p, cfg, cfg.prompt_b, initial_latent(p, cfg), Branch::b));
    CHECK(baseline_lower_bound(p, cfg).second == b);
}

TEST_CASE("experiment specs validate their grids") {
    ExperimentSpec s;
    s.base = testing::small_config(2);
    s.out_dir = "/tmp/x";
    s.kind = ExperimentKind::k_sweep;
    s.grid = {0, 5, 10};
    CHECK_NOTHROW(s.validate());
    s.grid = {0, 11};
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s.kind = ExperimentKind::baseline_compare;
    s.grid = {"fork", "v2v", "lower_bound"};
    CHECK_NOTHROW(s.validate());
    s.grid = {"oracle"};
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s.kind = ExperimentKind::intervention_sweep;
    s.grid = nlohmann::json::parse(R"(["none", {"kind":"gamma","gamma":2}])");
    CHECK_NOTHROW(s.validate());
    s.grid = nlohmann::json::parse(R"([{"kind":"gamma","gamma":-2}])");
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s.kind = ExperimentKind::single;
    s.pairs = 0;
    try {
        s.validate();
        FAIL("pairs = 0 accepted");
    } catch (const ValidationError& e) {
        CHECK(e.field() == "pairs");
    }
    s.pairs = 3;
    nlohmann::json j = s;
    const auto back = j.get<ExperimentSpec>();
    CHECK(nlohmann::json(back) == j);
}

TEST_CASE("pair configs are seeded per index with distinct prompts") {
    ExperimentSpec s;
    s.base = testing::small_config(2);
    s.pairs = 5;
    for (int i = 0; i < 5; ++i) {
        const auto c = pair_config(s, i);
        CHECK(c.prompt_a != c.prompt_b);
        CHECK(nlohmann::json(c) == nlohmann::json(pair_config(s, i)));
        if (i > 0) CHECK(c.seed_init != pair_config(s, i - 1).seed_init);
    }
    s.random_pairs = false;
    CHECK(nlohmann::json(pair_config(s, 3)) == nlohmann::json(s.base));
}

TEST_CASE("line plots render one polyline with every tick") {
    const auto svg = svg_line_plot("ssim", "K", {"0", "10", "20"}, {0.2, 0.5, 0.9}, {0.01, 0.02, 0.0});
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("<polyline") != std::string::npos);
    CHECK(svg.find(">20<") != std::string::npos);
}
