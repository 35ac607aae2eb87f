#pragma once

// Two-prompt fork sampling.
//
// Iterations are numbered i = 1..T and iteration i runs at timestep
// t = T - i + 1. The first K iterations (joint phase) update one latent with
// a combination of both prompts' guided noise estimates; the remaining
// T - K iterations (disjoint phase) continue separately per prompt from the
// shared fork latent z_{T-K}.
//
// combine = linear_decay reuses K as the decay start: iterations past K keep
// two latents but each branch's estimate still mixes in the other branch's,
// with a weight that decays to zero at i = T.

#include <filesystem>
#include <functional>
#include <json.hpp>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "matchcut/backbone.hpp"
#include "matchcut/schedule.hpp"

namespace matchcut {

enum class CombineKind { average, linear_decay };
enum class CfgPlacement { per_prompt, shared_unconditional };
enum class Branch { joint, a, b };
/// How much of a run is kept in its trace: fork checkpoint and finals only, or every step.
enum class TraceLevel { fork, full };

std::string to_string(CombineKind c);
std::string to_string(CfgPlacement c);
std::string to_string(Branch b);
std::string to_string(TraceLevel l);
CombineKind combine_from_string(const std::string& s);
CfgPlacement cfg_placement_from_string(const std::string& s);
Branch branch_from_string(const std::string& s);
TraceLevel trace_level_from_string(const std::string& s);

struct ForkConfig {
    PromptSpec prompt_a = PromptSpec::toy(0);
    PromptSpec prompt_b = PromptSpec::toy(1);
    int joint_steps = 15;  // K
    GuidanceConfig guidance{};
    CombineKind combine = CombineKind::average;
    CfgPlacement cfg_placement = CfgPlacement::per_prompt;
    ScheduleSpec schedule{};
    std::uint64_t seed_init = 0;
    std::uint64_t seed_path = 0;
    std::string codec = "identity";  // identity | patch
    std::string backbone = "toy";    // toy | zero
    int frames = 16;
    int height = 32;
    int width = 32;
    int cut_frame = 8;

    int total_steps() const noexcept { return schedule.num_steps; }
    VideoShape pixel_shape() const noexcept { return {frames, 3, height, width}; }
    /// Throws ValidationError naming the field.
    void validate() const;
};

void to_json(nlohmann::json& j, const ForkConfig& c);
void from_json(const nlohmann::json& j, ForkConfig& c);

/// Stable hex digest of a JSON document (FNV-1a over its canonical dump).
std::string json_digest(const nlohmann::json& j);

/// Everything a sampler needs: schedule, backbone and codec, bound together.
struct Pipeline {
    NoiseSchedule schedule;
    std::shared_ptr<const Denoiser> denoiser;
    std::shared_ptr<const LatentCodec> codec;
    VideoShape pixel_shape;
    VideoShape latent_shape;
};

/// Resolves cfg.backbone / cfg.codec against a trained asset directory
/// (see harness train-toy). Loaded weights are cached per path and shared.
Pipeline make_pipeline(const ForkConfig& cfg, const std::filesystem::path& assets_dir);
Pipeline make_pipeline(const ForkConfig& cfg, std::shared_ptr<const Denoiser> denoiser,
                       std::shared_ptr<const LatentCodec> codec);

LatentVideo combine_average(const LatentVideo& e1, const LatentVideo& e2);
/// Decay weight w for 1-based iteration `iter`: 0.5 up to the decay start,
/// then rising linearly to 1.0 at iter = T.
double linear_decay_weight(int iter, int decay_start, int total_steps);
std::pair<LatentVideo, LatentVideo> combine_linear_decay(const LatentVideo& e1, const LatentVideo& e2, int iter,
                                                         int decay_start, int total_steps);

struct TraceRecord {
    int iteration = 0;
    int t = 0;
    Branch branch = Branch::joint;
    LatentVideo z;      // z_t, the step input
    LatentVideo eps;    // combined / guided noise estimate used by the step
    LatentVideo clean;  // clean estimate x0_hat at this step
};

struct GenerationTrace {
    nlohmann::json config;
    TraceLevel level = TraceLevel::fork;
    int total_steps = 0;
    int joint_steps = 0;
    LatentVideo z_init;
    std::vector<TraceRecord> records;  // level full only
    LatentVideo fork_latent;           // z_{T-K}
    LatentVideo fork_clean;            // clean estimate at the fork point
    LatentVideo final_a;
    LatentVideo final_b;

    bool has_fork() const noexcept { return !fork_latent.empty() && !fork_clean.empty(); }

    /// Directory form: trace.json (metadata + record index) and latents.mctc (float64).
    void save(const std::filesystem::path& dir) const;
    static GenerationTrace load(const std::filesystem::path& dir);
};

struct JointResult {
    LatentVideo fork_latent;
    LatentVideo fork_clean;
};

struct MatchPair {
    PixelVideo x_a;
    PixelVideo x_b;
    GenerationTrace trace;
};

/// Seeded Gaussian z_T for the config.
LatentVideo initial_latent(const Pipeline& p, const ForkConfig& cfg);

/// K joint iterations from z_init. Also computes the fork-point clean
/// estimate (at t = T with the joint combination when K = 0).
JointResult joint_phase(const Pipeline& p, const ForkConfig& cfg, const LatentVideo& z_init,
                        GenerationTrace* trace = nullptr);

/// Iterations start_iter + 1 .. T under one prompt. Path noise (stochasticity
/// > 0) is drawn from (seed_path, branch).
LatentVideo disjoint_phase(const Pipeline& p, const LatentVideo& z_start, const PromptSpec& prompt,
                           const ForkConfig& cfg, int start_iter, Branch branch, GenerationTrace* trace = nullptr);

/// Both branches after the fork: independent disjoint phases for combine =
/// average, coupled decaying mixture for linear_decay.
std::pair<LatentVideo, LatentVideo> branch_phase(const Pipeline& p, const LatentVideo& fork_a,
                                                 const LatentVideo& fork_b, const ForkConfig& cfg,
                                                 GenerationTrace* trace = nullptr);

/// Decodes a final latent to a pixel video clamped to [0, 1].
PixelVideo decode_output(const Pipeline& p, const LatentVideo& z0);

MatchPair generate_match_pair(const Pipeline& p, const ForkConfig& cfg, TraceLevel level = TraceLevel::fork);

/// Ordinary single-prompt sampling of all T iterations from z_init.
PixelVideo generate_single(const Pipeline& p, const ForkConfig& cfg, const PromptSpec& prompt,
                           const LatentVideo& z_init, Branch branch = Branch::a);

/// Re-applies the recorded step inputs of a full trace through ddim_step and
/// checks each produces the next recorded latent bit-exactly. Returns the
/// number of verified steps; throws Error on the first mismatch.
int verify_trace_replay(const GenerationTrace& trace, const NoiseSchedule& sched);

}  // namespace matchcut
