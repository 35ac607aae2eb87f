#include <doctest.h>

#include <cmath>
#include <set>

#include "../common.hpp"
#include "matchcut/error.hpp"
#include "matchcut/image_io.hpp"
#include "matchcut/tensor_io.hpp"
#include "matchcut/toydata.hpp"

using namespace matchcut;

TEST_CASE("rendering is deterministic and in range") {
    const auto p = sample_scene(2, 99);
    const auto a = render_scene(p), b = render_scene(p);
    CHECK(a == b);
    CHECK(a.shape() == VideoShape{16, 3, 32, 32});
    for (double v : a.values()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("tracked positions follow the analytic trajectory") {
    for (int cls = 0; cls < num_toy_classes(); ++cls) {
        for (int mode = 0; mode < static_cast<int>(motion_modes().size()); mode += 3) {
            const auto p = sample_scene(cls, mode, 1000 + cls * 17 + mode);
            const auto truth = trajectory_of(p);
            const auto est = track_object(render_scene(p));
            REQUIRE(est.size() == truth.size());
            for (std::size_t f = 0; f < truth.size(); ++f) {
                CHECK(std::abs(wrap_delta(truth.points[f].x, est.points[f].x)) * p.width < 0.5);
                CHECK(std::abs(wrap_delta(truth.points[f].y, est.points[f].y)) * p.height < 0.5);
            }
        }
    }
}

TEST_CASE("scene validation rejects a zero-size object") {
    auto p = canonical_scene(0, 0);
    p.size = 0.0;
    CHECK_THROWS_AS(p.validate(), ValidationError);
    CHECK_THROWS_AS(render_scene(p), ValidationError);
}

TEST_CASE("datasets are class balanced and cover every motion mode") {
    const auto ds = make_toy_dataset(64, 5);
    REQUIRE(ds.size() == 64);
    std::vector<int> counts(num_toy_classes(), 0);
    std::set<std::pair<int, std::pair<double, double>>> combos;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        ++counts[ds.label(i)];
        combos.insert({ds.label(i), {ds.params[i].velocity_x, ds.params[i].velocity_y}});
    }
    for (int c : counts) CHECK(c == 64 / num_toy_classes());
    CHECK(combos.size() == static_cast<std::size_t>(num_toy_classes()) * motion_modes().size());
}

TEST_CASE("prompt pairs use distinct classes") {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto [a, b] = sample_prompt_pair(s);
        CHECK(a.class_id != b.class_id);
    }
}

TEST_CASE("scene parameters round trip through JSON") {
    const auto p = sample_scene(1, 3, 8);
    nlohmann::json j = p;
    const auto q = j.get<SceneParams>();
    CHECK(render_scene(q) == render_scene(p));
    const auto t = trajectory_of(p);
    const auto t2 = tracklet_from_json(to_json(t));
    REQUIRE(t2.size() == t.size());
    CHECK(t2.points[5].x == t.points[5].x);
}

TEST_CASE("tensor archives round trip and reject corrupt input") {
    TensorArchive a;
    const std::vector<double> v = {1.5, -2.25, 3.0, 1e-300};
    a.add("x", {2, 2}, v, DType::f64);
    const std::vector<float> f = {0.5f, 0.25f};
    a.add("w", {2}, f);
    const auto bytes = a.serialize();
    const auto b = TensorArchive::deserialize(bytes);
    CHECK(b.get("x").values == v);
    CHECK(b.get("w").values == std::vector<double>{0.5, 0.25});
    CHECK_FALSE(b.contains("y"));
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(TensorArchive::deserialize(bad), IoError);
    CHECK_THROWS_AS(TensorArchive::deserialize(std::span(bytes).first(bytes.size() - 3)), IoError);
}

TEST_CASE("animated PNG and frame directories are lossless at 8 bits") {
    auto v = render_scene(sample_scene(3, 4));
    for (double& x : v.values()) x = quantize8(x) / 255.0;
    CHECK(decode_apng(encode_apng(v)) == v);
    const auto dir = testing::scratch_dir("video_io");
    save_video(dir / "clip", v, {{"note", "x"}});
    CHECK(load_video(dir / "clip") == v);
    save_video(dir / "clip.apng", v);
    CHECK(load_video(dir / "clip.apng") == v);
    CHECK(encode_apng(v) == encode_apng(v));
    CHECK_THROWS_AS(load_video(dir / "missing.apng"), IoError);
}

TEST_CASE("contact sheets stack videos as rows") {
    const std::vector<PixelVideo> rows = {PixelVideo({4, 3, 8, 8}, 0.2), PixelVideo({4, 3, 8, 8}, 0.8)};
    const auto sheet = contact_sheet(rows, 3, 1);
    CHECK(sheet.shape() == VideoShape{1, 3, 8 * 2 + 1, 8 * 3 + 2});
}
