#pragma once

// Mid-sampling user interventions.
//
// A transform tau edits the decoded fork-point clean estimate. The edit is
// carried back into the fork latent as a shift along the clean direction:
//
//   z'_{T-K} = z_{T-K} + sqrt(abar_{T-K}) * (E(tau(D(x0))) - E(D(x0)))
//
// so an identity tau leaves the fork latent untouched for any codec, and the
// remaining disjoint iterations refine the edit. renoise = fresh instead
// replaces the fork latent with noise_to_level(E(tau(D(x0))), T-K, n) for
// seeded Gaussian n.
//
// Every kind except identity clamps its output to [0, 1].

#include <array>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>

#include "matchcut/forksampler.hpp"

namespace matchcut {

enum class InterventionKind { identity, color_jitter, histogram_match, gamma, mask_composite };
enum class BranchScope { both, a_only, b_only };
enum class RenoiseMode { shift, fresh };

std::string to_string(InterventionKind k);
std::string to_string(BranchScope s);
std::string to_string(RenoiseMode m);
InterventionKind intervention_kind_from_string(const std::string& s);
BranchScope branch_scope_from_string(const std::string& s);
RenoiseMode renoise_mode_from_string(const std::string& s);

struct ColorJitter {
    double brightness = 0.4;  // factor drawn from [1 - b, 1 + b]
    double contrast = 0.4;
    double saturation = 0.4;
    double hue = 0.1;  // rotation about the grey axis drawn from [-h, h] turns
};

struct InterventionSpec {
    InterventionKind kind = InterventionKind::identity;
    BranchScope branch_scope = BranchScope::both;
    RenoiseMode renoise = RenoiseMode::shift;
    std::uint64_t seed = 0;

    double gamma = 1.0;
    ColorJitter jitter{};

    // histogram_match: reference image file, or a seeded procedural image when empty
    std::filesystem::path reference;
    // mask_composite: grayscale mask; payload is an image file or a flat colour
    std::filesystem::path mask;
    std::filesystem::path payload;
    std::array<double, 3> fill{0.0, 0.0, 0.0};

    // In-memory overrides (not serialized); take precedence over the paths.
    std::optional<PixelVideo> reference_image;
    std::optional<PixelVideo> mask_image;
    std::optional<PixelVideo> payload_image;

    bool applies_to(Branch b) const noexcept;
    /// Throws ValidationError naming the field.
    void validate() const;
};

void to_json(nlohmann::json& j, const InterventionSpec& s);
/// Relative file paths in the JSON are resolved against `base_dir`.
InterventionSpec intervention_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

/// Applies tau frame by frame. Missing reference/mask/payload files raise IoError,
/// a mask whose size differs from the frames raises ValidationError.
PixelVideo apply_tau(const PixelVideo& x, const InterventionSpec& spec);

/// Single-channel CDF matching of `source` onto `reference` (quantile interpolation).
std::vector<double> match_histogram(std::span<const double> source, std::span<const double> reference);

/// Seeded smooth colour field used when histogram_match has no reference image.
PixelVideo procedural_reference(int height, int width, std::uint64_t seed);

/// Edit state between the joint phase and the disjoint phase. Interventions
/// accumulate on the per-branch previews.
struct StagedFork {
    LatentVideo fork_latent;
    LatentVideo base_encoded;  // E(D(x0)) of the untouched estimate
    PixelVideo base_preview;   // D(x0), unclamped
    PixelVideo preview_a;
    PixelVideo preview_b;
    bool edited_a = false;
    bool edited_b = false;
    std::optional<InterventionSpec> fresh_renoise;  // set by a renoise = fresh edit
    int interventions = 0;
};

/// Throws Error when the trace has no fork checkpoint.
StagedFork stage_fork(const Pipeline& p, const GenerationTrace& trace);
void stage_intervention(StagedFork& staged, const InterventionSpec& spec);
/// Fork latents for branch a and b after the staged edits.
std::pair<LatentVideo, LatentVideo> staged_fork_latents(const Pipeline& p, const StagedFork& staged, int joint_steps);

/// Runs the disjoint phase from the staged fork and returns the finished pair
/// with a trace that shares the joint part of `trace`.
MatchPair resume_from_stage(const Pipeline& p, const ForkConfig& cfg, const GenerationTrace& trace,
                            const StagedFork& staged);

MatchPair inject(const Pipeline& p, const GenerationTrace& trace, const InterventionSpec& spec);

}  // namespace matchcut
