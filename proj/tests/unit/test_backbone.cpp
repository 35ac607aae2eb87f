#include <doctest.h>

#include <cmath>

#include "../common.hpp"
#include "matchcut/backbone.hpp"
#include "matchcut/error.hpp"
#include "matchcut/rng.hpp"
#include "matchcut/toy_backbone.hpp"
#include "matchcut/toydata.hpp"

using namespace matchcut;

namespace {

float& flat_param(ToyWeights& w, std::size_t i) {
    if (i < w.templates.size()) return w.templates[i];
    i -= w.templates.size();
    if (i < w.bias.size()) return w.bias[i];
    i -= w.bias.size();
    const std::size_t k = w.kappa.size();
    if (i < k) return w.kappa[i];
    i -= k;
    if (i < k) return w.gain[i];
    return w.beta[i - k];
}

ToyWeights random_weights(VideoShape s) {
    auto w = ToyWeights::zeros(s, 2, 2, 3);
    Rng r(1);
    for (auto& x : w.templates) x = static_cast<float>(r.uniform(0, 1));
    for (auto& x : w.bias) x = static_cast<float>(r.uniform(-0.5, 0.5));
    w.kappa = {0.8f, 1.1f, 0.9f};
    w.gain = {1.0f, 0.7f, 1.2f};
    w.beta = {0.3f, 0.6f, 0.9f};
    return w;
}

struct SmallData {
    std::vector<LatentVideo> clips, val;
    std::vector<int> labels, val_labels;
};

SmallData small_data() {
    SmallData d;
    const ToyVideoShape shape{4, 16, 16};
    const auto train = make_toy_dataset(32, 1, shape);
    const auto val = make_toy_dataset(8, 2, shape);
    for (std::size_t i = 0; i < train.size(); ++i) {
        d.clips.push_back(retag<LatentTag>(train.clips[i]));
        d.labels.push_back(train.label(i));
    }
    for (std::size_t i = 0; i < val.size(); ++i) {
        d.val.push_back(retag<LatentTag>(val.clips[i]));
        d.val_labels.push_back(val.label(i));
    }
    return d;
}

ToyTrainConfig small_train_config() {
    ToyTrainConfig c;
    c.templates_per_class = 2;
    c.steps = 60;
    c.batch = 4;
    c.validation_samples = 32;
    return c;
}

}  // namespace

TEST_CASE("guidance is affine in the scale with exact endpoints") {
    const auto en = gaussian_video<LatentTag>({2, 3, 4, 4}, 1);
    const auto ec = gaussian_video<LatentTag>({2, 3, 4, 4}, 2);
    CHECK(cfg_combine(en, ec, 0.0) == en);
    CHECK(cfg_combine(en, ec, 1.0) == ec);
    for (double s : {0.5, 2.0, 7.5}) {
        const auto g = cfg_combine(en, ec, s);
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == en[i] + s * (ec[i] - en[i]));
    }
}

TEST_CASE("zero weights predict zero noise") {
    const VideoShape s{2, 3, 8, 8};
    const ToyDenoiser net(ToyWeights::zeros(s, 4, 2), build_schedule({}));
    const auto z = gaussian_video<LatentTag>(s, 3);
    const auto e1 = net.denoise(z, PromptSpec::toy(1), Timestep{10});
    for (double v : e1.values()) CHECK(v == 0.0);
    const auto e2 = net.denoise(z, PromptSpec::null_prompt(), Timestep{50});
    for (double v : e2.values()) CHECK(v == 0.0);
}

TEST_CASE("denoiser contract rejects bad prompts, timesteps and shapes") {
    const VideoShape s{2, 3, 8, 8};
    const ToyDenoiser net(ToyWeights::zeros(s, 4, 2), build_schedule({}));
    const auto z = gaussian_video<LatentTag>(s, 3);
    CHECK_THROWS_AS(net.denoise(z, PromptSpec::toy(1), Timestep{0}), ValidationError);
    CHECK_THROWS_AS(net.denoise(z, PromptSpec::toy(1), Timestep{51}), ValidationError);
    CHECK_THROWS_AS(net.denoise(z, PromptSpec::toy(9), Timestep{5}), ValidationError);
    CHECK_THROWS_AS(net.denoise(z, PromptSpec::from_text("a red ball"), Timestep{5}), ValidationError);
    CHECK_THROWS_AS(net.denoise(gaussian_video<LatentTag>({2, 3, 8, 6}, 1), PromptSpec::toy(1), Timestep{5}),
                    ShapeError);
}

TEST_CASE("analytic gradient agrees with central differences") {
    const VideoShape s{3, 2, 8, 8};
    const auto w = random_weights(s);
    const auto sched = build_schedule({});
    auto x0 = gaussian_video<LatentTag>(s, 5);
    for (double& v : x0.values()) v = 0.5 + 0.2 * v;
    const auto eps = gaussian_video<LatentTag>(s, 6);
    const auto target = gaussian_video<LatentTag>(s, 9);
    for (int t : {3, 20}) {
        for (const auto& prompt : {PromptSpec::toy(1), PromptSpec::null_prompt()}) {
            const auto z = noise_to_level(x0, Timestep{t}, sched, eps);
            std::vector<double> grad;
            toy_loss_and_gradient(w, sched, z, target, prompt, Timestep{t}, grad);
            const std::size_t n = grad.size();
            for (std::size_t i : {std::size_t{5}, std::size_t{700}, std::size_t{1000}, std::size_t{1536},
                                  std::size_t{1539}, n - 9, n - 7, n - 5, n - 3, n - 1}) {
                ToyWeights a = w, b = w;
                flat_param(a, i) += 1e-2f;
                flat_param(b, i) -= 1e-2f;
                const double h = static_cast<double>(flat_param(a, i)) - flat_param(b, i);
                std::vector<double> unused;
                const double num = (toy_loss_and_gradient(a, sched, z, target, prompt, Timestep{t}, unused) -
                                    toy_loss_and_gradient(b, sched, z, target, prompt, Timestep{t}, unused)) /
                                   h;
                CHECK(std::abs(num - grad[i]) <= 1e-3 * (std::abs(num) + std::abs(grad[i])) + 1e-9);
            }
        }
    }
}

TEST_CASE("training is seeded, beats the zero predictor and round trips through disk") {
    const auto d = small_data();
    const auto cfg = small_train_config();
    const auto r1 = train_toy_backbone(d.clips, d.labels, d.val, d.val_labels, num_toy_classes(), cfg);
    const auto r2 = train_toy_backbone(d.clips, d.labels, d.val, d.val_labels, num_toy_classes(), cfg);
    CHECK(r1.weights.templates == r2.weights.templates);
    CHECK(r1.manifest["final_loss"] == r2.manifest["final_loss"]);
    CHECK(r1.manifest["seed"] == cfg.seed);
    CHECK(r1.manifest["validation_loss"].get<double>() < r1.manifest["zero_predictor_loss"].get<double>());
    CHECK(std::isfinite(r1.manifest["final_loss"].get<double>()));

    const auto dir = testing::scratch_dir("weights");
    r1.weights.save(dir / "w.mctc");
    const auto back = ToyWeights::load(dir / "w.mctc");
    CHECK(back.templates == r1.weights.templates);
    CHECK(back.kappa == r1.weights.kappa);
    CHECK(back.template_shape == r1.weights.template_shape);
}

TEST_CASE("identity codec is lossless and the patch codec stays within its tolerance") {
    const auto ds = make_toy_dataset(24, 3);
    const IdentityCodec id;
    CHECK(id.decode(id.encode(ds.clips[0])) == ds.clips[0]);

    const auto codec = PatchCodec::train(ds.clips, 6);
    CHECK(codec.latent_shape({16, 3, 32, 32}) == VideoShape{16, 6, 16, 16});
    const auto held = make_toy_dataset(10, 4);
    CHECK(codec.roundtrip_error(held.clips) <= codec.tolerance());
    CHECK(codec.decode(LatentVideo({2, 6, 16, 16})).all_finite());
    CHECK_THROWS_AS(codec.encode(PixelVideo({1, 3, 15, 16})), ShapeError);
    CHECK_THROWS_AS(PatchCodec::train(ds.clips, 13), ValidationError);

    const auto dir = testing::scratch_dir("codec");
    codec.save(dir / "codec.mctc");
    const auto loaded = PatchCodec::load(dir / "codec.mctc");
    CHECK(loaded.encode(held.clips[1]) == codec.encode(held.clips[1]));
}

TEST_CASE("prompt JSON forms") {
    CHECK(nlohmann::json(2).get<PromptSpec>() == PromptSpec::toy(2));
    CHECK(nlohmann::json::parse(R"({"text":"dog"})").get<PromptSpec>() == PromptSpec::from_text("dog"));
    CHECK(nlohmann::json::parse(R"({"null":true})").get<PromptSpec>() == PromptSpec::null_prompt());
    CHECK_THROWS_AS(nlohmann::json::parse(R"({"class_id":-3})").get<PromptSpec>(), ValidationError);
    CHECK_THROWS_AS(nlohmann::json("x").get<PromptSpec>(), ValidationError);
    GuidanceConfig g;
    g.scale = -1;
    CHECK_THROWS_AS(g.validate(), ValidationError);
}
