#pragma once

#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <string>

#include "matchcut/backbone.hpp"
#include "matchcut/forksampler.hpp"
#include "matchcut/rng.hpp"
#include "matchcut/schedule.hpp"
#include "matchcut/tensor_io.hpp"

namespace testing {

inline std::filesystem::path data_dir() { return MATCHCUT_TEST_DATA; }

inline const nlohmann::json& oracles() {
    static const auto j = nlohmann::json::parse(matchcut::read_text_file(data_dir() / "oracles.json"));
    return j;
}

inline std::filesystem::path assets_dir() {
    if (const char* env = std::getenv("MATCHCUT_ASSETS")) return env;
    return MATCHCUT_DEFAULT_ASSETS;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("matchcut_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

template <class Tag>
matchcut::Video<Tag> video_from(const nlohmann::json& shape, const nlohmann::json& values) {
    const auto s = shape.get<std::vector<int>>();
    return matchcut::Video<Tag>({s[0], s[1], s[2], s[3]}, values.get<std::vector<double>>());
}

/// A deterministic, nonlinear, prompt-dependent noise predictor for sampler tests.
inline std::shared_ptr<const matchcut::Denoiser> synthetic_denoiser(const matchcut::ScheduleSpec& spec,
                                                                    const matchcut::VideoShape& shape) {
    using namespace matchcut;
    auto fn = [](const LatentVideo& z, const PromptSpec& p, Timestep t) {
        LatentVideo out(z.shape());
        const double c = p.is_null ? 0.0 : 0.3 + 0.2 * p.class_id;
        for (std::size_t i = 0; i < z.size(); ++i)
            out[i] = 0.8 * std::tanh(z[i] + c * std::sin(0.37 * static_cast<double>(i % 97) + c)) + 0.01 * t.t * c;
        return out;
    };
    return std::make_shared<CallbackDenoiser>("synthetic", fn, build_schedule(spec), shape, false, true);
}

inline matchcut::ForkConfig small_config(int K = 4) {
    matchcut::ForkConfig c;
    c.schedule.num_steps = 10;
    c.joint_steps = K;
    c.frames = 4;
    c.height = 16;
    c.width = 16;
    c.cut_frame = 2;
    c.seed_init = 3;
    c.seed_path = 5;
    return c;
}

inline matchcut::Pipeline synthetic_pipeline(const matchcut::ForkConfig& c) {
    return matchcut::make_pipeline(c, synthetic_denoiser(c.schedule, c.pixel_shape()),
                                   std::make_shared<matchcut::IdentityCodec>());
}

}  // namespace testing
