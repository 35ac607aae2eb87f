#pragma once

// Noise-prediction networks, latent codecs and classifier-free guidance.
//
// A Denoiser maps (z_t, prompt, t) to a noise estimate of the same shape.
// Implementations declare whether concurrent calls are safe; callers go
// through Denoiser::denoise, which validates inputs and serializes calls on
// backbones that are not.

#include <filesystem>
#include <functional>
#include <json.hpp>
#include <memory>
#include <mutex>
#include <string>

#include "matchcut/schedule.hpp"
#include "matchcut/tensor.hpp"

namespace matchcut {

enum class PromptKind { toy_class, text };

struct PromptSpec {
    PromptKind kind = PromptKind::toy_class;
    int class_id = -1;
    std::string text;
    bool is_null = false;

    static PromptSpec toy(int class_id);
    static PromptSpec from_text(std::string text);
    static PromptSpec null_prompt();

    void validate() const;
    /// Short human-readable form: "class:2", "text:a red car", "null".
    std::string label() const;

    friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

/// JSON forms: {"class_id": 2}, {"text": "..."}, {"null": true}; a bare
/// integer is accepted as a toy class id.
void to_json(nlohmann::json& j, const PromptSpec& p);
void from_json(const nlohmann::json& j, PromptSpec& p);

struct GuidanceConfig {
    double scale = 5.0;

    void validate() const;
    friend bool operator==(const GuidanceConfig&, const GuidanceConfig&) = default;
};

class Denoiser {
public:
    virtual ~Denoiser() = default;

    /// Validated, capability-aware entry point. Throws ValidationError for an
    /// unsupported prompt or t outside [1, T], ShapeError for an undeclared shape.
    LatentVideo denoise(const LatentVideo& z, const PromptSpec& prompt, Timestep t) const;

    virtual std::string name() const = 0;
    virtual bool supports(const PromptSpec& prompt) const = 0;
    /// True when predict() may run concurrently from several threads.
    virtual bool concurrent_safe() const { return true; }
    /// Whether the backbone can run on latents of this shape.
    virtual bool accepts(const VideoShape& shape) const = 0;
    virtual const NoiseSchedule& schedule() const = 0;

protected:
    virtual LatentVideo predict(const LatentVideo& z, const PromptSpec& prompt, Timestep t) const = 0;

private:
    mutable std::mutex serial_;
};

/// eps_null + scale * (eps_cond - eps_null); scale 0 and 1 return the
/// respective input unchanged.
LatentVideo cfg_combine(const LatentVideo& eps_null, const LatentVideo& eps_cond, double scale);
double cfg_combine(double eps_null, double eps_cond, double scale) noexcept;

/// Classifier-free guided estimate. The null prediction may be supplied when
/// the caller already has it (it is then not recomputed).
LatentVideo guided_denoise(const Denoiser& net, const LatentVideo& z, const PromptSpec& prompt, Timestep t,
                           const GuidanceConfig& g, const LatentVideo* eps_null = nullptr);

/// Adapter seam for external backbones: any callable with the denoiser contract.
class CallbackDenoiser final : public Denoiser {
public:
    using Fn = std::function<LatentVideo(const LatentVideo&, const PromptSpec&, Timestep)>;

    CallbackDenoiser(std::string name, Fn fn, NoiseSchedule schedule, VideoShape shape, bool supports_text = true,
                     bool concurrent_safe = false);

    std::string name() const override { return name_; }
    bool supports(const PromptSpec& prompt) const override;
    bool concurrent_safe() const override { return concurrent_safe_; }
    bool accepts(const VideoShape& shape) const override { return shape == shape_; }
    const NoiseSchedule& schedule() const override { return schedule_; }

protected:
    LatentVideo predict(const LatentVideo& z, const PromptSpec& prompt, Timestep t) const override;

private:
    std::string name_;
    Fn fn_;
    NoiseSchedule schedule_;
    VideoShape shape_;
    bool supports_text_;
    bool concurrent_safe_;
};

class LatentCodec {
public:
    virtual ~LatentCodec() = default;

    virtual std::string name() const = 0;
    virtual LatentVideo encode(const PixelVideo& x) const = 0;
    virtual PixelVideo decode(const LatentVideo& z) const = 0;
    virtual int spatial_factor() const = 0;
    virtual int temporal_factor() const = 0;
    virtual int latent_channels() const = 0;
    /// Declared bound on the mean absolute roundtrip error per pixel.
    virtual double tolerance() const = 0;

    VideoShape latent_shape(const VideoShape& pixel) const;
    VideoShape pixel_shape(const VideoShape& latent) const;
};

class IdentityCodec final : public LatentCodec {
public:
    std::string name() const override { return "identity"; }
    LatentVideo encode(const PixelVideo& x) const override;
    PixelVideo decode(const LatentVideo& z) const override;
    int spatial_factor() const override { return 1; }
    int temporal_factor() const override { return 1; }
    int latent_channels() const override { return 3; }
    double tolerance() const override { return 0.0; }
};

/// Learned linear patch autoencoder: each non-overlapping 2x2 RGB patch
/// (12 values) maps to `latent_channels` coefficients on an orthonormal basis
/// (a stride-2 convolution); decoding is the transposed map.
class PatchCodec final : public LatentCodec {
public:
    static constexpr int kPatch = 2;
    static constexpr int kPatchDim = kPatch * kPatch * 3;

    PatchCodec(int latent_channels, std::vector<double> basis, std::vector<double> mean, double tolerance);

    /// Fits the basis as the top principal directions of the patches in `clips`
    /// (the minimizer of the linear autoencoder's squared reconstruction error).
    static PatchCodec train(std::span<const PixelVideo> clips, int latent_channels);

    std::string name() const override { return "patch"; }
    LatentVideo encode(const PixelVideo& x) const override;
    PixelVideo decode(const LatentVideo& z) const override;
    int spatial_factor() const override { return kPatch; }
    int temporal_factor() const override { return 1; }
    int latent_channels() const override { return channels_; }
    double tolerance() const override { return tolerance_; }

    void save(const std::filesystem::path& path) const;
    static PatchCodec load(const std::filesystem::path& path);

    /// Mean absolute roundtrip error over the given clips.
    double roundtrip_error(std::span<const PixelVideo> clips) const;

private:
    int channels_;
    std::vector<double> basis_;  // channels_ x kPatchDim, rows orthonormal
    std::vector<double> mean_;   // kPatchDim
    double tolerance_;
};

}  // namespace matchcut
