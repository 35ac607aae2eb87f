#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "../common.hpp"
#include "matchcut/error.hpp"
#include "matchcut/intervene.hpp"
#include "matchcut/metrics.hpp"
#include "matchcut/rng.hpp"
#include "matchcut/toydata.hpp"

using namespace matchcut;

namespace {

PixelVideo uniform_video(VideoShape s, std::uint64_t seed) {
    Rng r(seed);
    PixelVideo v(s);
    for (double& x : v.values()) x = r.uniform();
    return v;
}

SceneParams moving(double vx, double vy) {
    SceneParams p = canonical_scene(0, 0);
    p.velocity_x = vx;
    p.velocity_y = vy;
    return p;
}

class ConstantScorer final : public AdherenceScorer {
public:
    std::string name() const override { return "constant"; }
    double score(const PixelVideo&, const PromptSpec& p) const override { return 0.5 + 0.1 * p.class_id; }
};

}  // namespace

TEST_CASE("ssim matches the reference implementation") {
    for (const auto& c : testing::oracles()["ssim"]) {
        const auto x = testing::video_from<PixelTag>(c["shape"], c["x"]);
        const auto y = testing::video_from<PixelTag>(c["shape"], c["y"]);
        CHECK(ssim(x, y) == doctest::Approx(c["ssim"].get<double>()).epsilon(1e-6));
        CHECK(ssim(y, x) == doctest::Approx(c["ssim"].get<double>()).epsilon(1e-6));
    }
}

TEST_CASE("ssim of a video with itself is one") {
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto x = uniform_video({3, 3, 20, 17}, seed);
        CHECK(std::abs(ssim(x, x) - 1.0) <= 1e-6);
    }
    const PixelVideo flat({1, 3, 12, 12}, 0.3);
    CHECK(std::abs(ssim(flat, flat) - 1.0) <= 1e-6);
}

TEST_CASE("ssim rejects frames smaller than the window and mismatched shapes") {
    const PixelVideo small({1, 3, 10, 10}, 0.5);
    CHECK_THROWS_AS(ssim(small, small), ValidationError);
    CHECK_THROWS_AS(ssim(PixelVideo({1, 3, 12, 12}), PixelVideo({1, 3, 12, 13})), ShapeError);
}

TEST_CASE("motion consistency is 1, 0.5 and 0 for identical, orthogonal and opposite motion") {
    const double v = 1.0 / 32.0;
    const auto right = trajectory_of(moving(v, 0));
    CHECK(motion_consistency(right, right) == 1.0);
    CHECK(motion_consistency(right, trajectory_of(moving(0, v))) == 0.5);
    CHECK(motion_consistency(right, trajectory_of(moving(-v, 0))) == 0.0);
}

TEST_CASE("motion consistency of static and mixed tracks") {
    const auto still = trajectory_of(moving(0, 0));
    const auto right = trajectory_of(moving(1.0 / 32.0, 0));
    CHECK(motion_consistency(still, still) == 1.0);
    CHECK(motion_consistency(still, right) == 0.5);
}

TEST_CASE("motion consistency handles wrap-around displacements") {
    Tracklet a, b;
    for (int f = 0; f < 4; ++f) {
        a.points.push_back({f, std::fmod(0.9 + 0.05 * f, 1.0), 0.5});
        b.points.push_back({f, 0.2 + 0.05 * f, 0.5});
    }
    CHECK(motion_consistency(a, b) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("tracked motion from rendered videos matches analytic motion") {
    const double v = 2.0 / 32.0;
    const auto x = render_scene(moving(v, 0));
    const auto y = render_scene(moving(-v, 0));
    CHECK(motion_consistency(x, x) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(motion_consistency(x, y) < 0.01);
}

TEST_CASE("perceptual proxy matches the reference and its anchors") {
    const auto& c = testing::oracles()["perceptual"];
    const auto x = testing::video_from<PixelTag>(c["shape"], c["x"]);
    const auto y = testing::video_from<PixelTag>(c["shape"], c["y"]);
    CHECK(perceptual_proxy(x, y) == doctest::Approx(c["distance"].get<double>()).epsilon(1e-9));
    CHECK(perceptual_proxy(x, y) == doctest::Approx(perceptual_proxy(y, x)).epsilon(1e-12));
    CHECK(perceptual_proxy(x, x) == 0.0);
    const PixelVideo black({2, 3, 16, 16}, 0.0), white({2, 3, 16, 16}, 1.0);
    CHECK(perceptual_proxy(black, white) == doctest::Approx(1.0));
}

TEST_CASE("histogram matching matches the reference") {
    for (const auto& c : testing::oracles()["histogram"]) {
        const auto src = c["source"].get<std::vector<double>>();
        const auto ref = c["reference"].get<std::vector<double>>();
        const auto want = c["matched"].get<std::vector<double>>();
        const auto got = match_histogram(src, ref);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-9));
    }
}

TEST_CASE("pair evaluation fills every column and aggregates with population std") {
    ConstantScorer scorer;
    EvalConfig cfg;
    cfg.adherence = &scorer;
    std::vector<PairInput> pairs;
    for (int i = 0; i < 3; ++i) {
        PairInput p;
        p.label = "p" + std::to_string(i);
        p.x_a = render_scene(sample_scene(0, 10 + i));
        p.x_b = render_scene(sample_scene(1, 20 + i));
        p.prompt_a = PromptSpec::toy(0);
        p.prompt_b = PromptSpec::toy(i);
        pairs.push_back(p);
    }
    const auto report = evaluate_pairs(pairs, cfg);
    REQUIRE(report.rows.size() == 3);
    CHECK(report.rows[2].adherence_b == doctest::Approx(0.7));
    CHECK(report.rows[0].adherence_mean == doctest::Approx(0.5));
    const auto& adh = report.aggregate.at("adherence_b");
    CHECK(adh.mean == doctest::Approx(0.6));
    CHECK(adh.std == doctest::Approx(std::sqrt(2.0 / 300.0)));
    CHECK_THROWS_AS(evaluate_pairs({}, cfg), ValidationError);

    const auto back = MetricReport::from_json(report.to_json());
    CHECK(back.rows.size() == 3);
    CHECK(back.rows[1].ssim == report.rows[1].ssim);
    CHECK(back.aggregate.at("ssim").mean == report.aggregate.at("ssim").mean);
    const auto csv = report.to_csv();
    CHECK(csv.rfind("label,", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("extra columns are aggregated and exported") {
    MetricReport r;
    for (int i = 0; i < 2; ++i) {
        MetricRow row;
        row.label = "r";
        row.extra["ssim_to_reference"] = i;
        r.rows.push_back(row);
    }
    aggregate_report(r);
    CHECK(r.aggregate.at("ssim_to_reference").mean == 0.5);
    CHECK(r.to_csv().find("ssim_to_reference") != std::string::npos);
    CHECK(MetricReport::from_json(r.to_json()).rows[1].extra.at("ssim_to_reference") == 1.0);
}
