#include "matchcut/backbone.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "matchcut/tensor_io.hpp"

namespace matchcut {

PromptSpec PromptSpec::toy(int class_id) {
    PromptSpec p;
    p.class_id = class_id;
    return p;
}

PromptSpec PromptSpec::from_text(std::string text) {
    PromptSpec p;
    p.kind = PromptKind::text;
    p.text = std::move(text);
    return p;
}

PromptSpec PromptSpec::null_prompt() {
    PromptSpec p;
    p.is_null = true;
    return p;
}

void PromptSpec::validate() const {
    if (is_null) {
        if (class_id >= 0 || !text.empty()) throw ValidationError("prompt", "null prompt must not carry a class or text");
        return;
    }
    if (kind == PromptKind::toy_class) {
        if (class_id < 0) throw ValidationError("prompt.class_id", "must be a non-negative class id");
        if (!text.empty()) throw ValidationError("prompt", "toy_class prompt must not carry text");
    } else {
        if (text.empty()) throw ValidationError("prompt.text", "must not be empty");
        if (class_id >= 0) throw ValidationError("prompt", "text prompt must not carry a class id");
    }
}

std::string PromptSpec::label() const {
    if (is_null) return "null";
    if (kind == PromptKind::toy_class) return "class:" + std::to_string(class_id);
    return "text:" + text;
}

void to_json(nlohmann::json& j, const PromptSpec& p) {
    if (p.is_null)
        j = {{"null", true}};
    else if (p.kind == PromptKind::toy_class)
        j = {{"class_id", p.class_id}};
    else
        j = {{"text", p.text}};
}

void from_json(const nlohmann::json& j, PromptSpec& p) {
    p = PromptSpec{};
    if (j.is_number_integer()) {
        p.class_id = j.get<int>();
    } else if (j.is_object()) {
        if (j.value("null", false)) {
            p.is_null = true;
        } else if (j.contains("text")) {
            p.kind = PromptKind::text;
            p.text = j.at("text").get<std::string>();
        } else if (j.contains("class_id")) {
            p.class_id = j.at("class_id").get<int>();
        } else {
            throw ValidationError("prompt", "expected class_id, text or null");
        }
    } else {
        throw ValidationError("prompt", "expected an object or integer");
    }
    p.validate();
}

void GuidanceConfig::validate() const {
    if (!(scale >= 0.0) || !std::isfinite(scale)) throw ValidationError("guidance.scale", "must be finite and >= 0");
}

LatentVideo Denoiser::denoise(const LatentVideo& z, const PromptSpec& prompt, Timestep t) const {
    prompt.validate();
    if (!supports(prompt)) throw ValidationError("prompt", name() + " does not support prompt " + prompt.label());
    if (t.t < 1 || t.t > schedule().num_steps())
        throw ValidationError("t", "must lie in [1, " + std::to_string(schedule().num_steps()) + "]");
    if (!accepts(z.shape())) throw ShapeError(name() + " does not accept latents of shape " + to_string(z.shape()));
    LatentVideo out;
    if (concurrent_safe()) {
        out = predict(z, prompt, t);
    } else {
        std::lock_guard lock(serial_);
        out = predict(z, prompt, t);
    }
    if (out.shape() != z.shape()) throw ShapeError(name() + " returned shape " + to_string(out.shape()));
    return out;
}

double cfg_combine(double eps_null, double eps_cond, double scale) noexcept {
    return eps_null + scale * (eps_cond - eps_null);
}

LatentVideo cfg_combine(const LatentVideo& eps_null, const LatentVideo& eps_cond, double scale) {
    require_same_shape(eps_null, eps_cond, "cfg_combine");
    if (scale == 0.0) return eps_null;
    if (scale == 1.0) return eps_cond;
    LatentVideo out(eps_null.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = cfg_combine(eps_null[i], eps_cond[i], scale);
    return out;
}

LatentVideo guided_denoise(const Denoiser& net, const LatentVideo& z, const PromptSpec& prompt, Timestep t,
                           const GuidanceConfig& g, const LatentVideo* eps_null) {
    g.validate();
    if (g.scale == 1.0) return net.denoise(z, prompt, t);
    const LatentVideo null_est = eps_null ? *eps_null : net.denoise(z, PromptSpec::null_prompt(), t);
    if (g.scale == 0.0) return null_est;
    return cfg_combine(null_est, net.denoise(z, prompt, t), g.scale);
}

CallbackDenoiser::CallbackDenoiser(std::string name, Fn fn, NoiseSchedule schedule, VideoShape shape,
                                   bool supports_text, bool concurrent_safe)
    : name_(std::move(name)),
      fn_(std::move(fn)),
      schedule_(std::move(schedule)),
      shape_(shape),
      supports_text_(supports_text),
      concurrent_safe_(concurrent_safe) {}

bool CallbackDenoiser::supports(const PromptSpec& prompt) const {
    return prompt.is_null || prompt.kind == PromptKind::toy_class || supports_text_;
}

LatentVideo CallbackDenoiser::predict(const LatentVideo& z, const PromptSpec& prompt, Timestep t) const {
    return fn_(z, prompt, t);
}

VideoShape LatentCodec::latent_shape(const VideoShape& pixel) const {
    const int s = spatial_factor();
    const int tf = temporal_factor();
    if (pixel.height % s != 0 || pixel.width % s != 0 || pixel.frames % tf != 0)
        throw ShapeError(name() + " codec: shape " + to_string(pixel) + " not divisible by its factors");
    return {pixel.frames / tf, latent_channels(), pixel.height / s, pixel.width / s};
}

VideoShape LatentCodec::pixel_shape(const VideoShape& latent) const {
    if (latent.channels != latent_channels())
        throw ShapeError(name() + " codec: expected " + std::to_string(latent_channels()) + " latent channels");
    return {latent.frames * temporal_factor(), 3, latent.height * spatial_factor(), latent.width * spatial_factor()};
}

LatentVideo IdentityCodec::encode(const PixelVideo& x) const { return retag<LatentTag>(x); }

PixelVideo IdentityCodec::decode(const LatentVideo& z) const { return retag<PixelTag>(z); }

PatchCodec::PatchCodec(int latent_channels, std::vector<double> basis, std::vector<double> mean, double tolerance)
    : channels_(latent_channels), basis_(std::move(basis)), mean_(std::move(mean)), tolerance_(tolerance) {
    if (channels_ < 1 || channels_ > kPatchDim) throw ValidationError("latent_channels", "must lie in [1, 12]");
    if (basis_.size() != static_cast<std::size_t>(channels_) * kPatchDim || mean_.size() != kPatchDim)
        throw ShapeError("patch codec: basis/mean sizes do not match");
}

namespace {

// Patch element order: (c, dy, dx).
template <class F>
void for_each_patch(const VideoShape& pixel, F&& fn) {
    for (int f = 0; f < pixel.frames; ++f)
        for (int py = 0; py < pixel.height / PatchCodec::kPatch; ++py)
            for (int px = 0; px < pixel.width / PatchCodec::kPatch; ++px) fn(f, py, px);
}

void gather(const PixelVideo& x, int f, int py, int px, double* out) {
    int k = 0;
    for (int c = 0; c < 3; ++c)
        for (int dy = 0; dy < PatchCodec::kPatch; ++dy)
            for (int dx = 0; dx < PatchCodec::kPatch; ++dx)
                out[k++] = x.at(f, c, py * PatchCodec::kPatch + dy, px * PatchCodec::kPatch + dx);
}

}  // namespace

PatchCodec PatchCodec::train(std::span<const PixelVideo> clips, int latent_channels) {
    if (clips.empty()) throw ValidationError("dataset", "must not be empty");
    Eigen::Matrix<double, kPatchDim, 1> mean = Eigen::Matrix<double, kPatchDim, 1>::Zero();
    Eigen::Matrix<double, kPatchDim, kPatchDim> scatter = Eigen::Matrix<double, kPatchDim, kPatchDim>::Zero();
    double count = 0.0;
    Eigen::Matrix<double, kPatchDim, 1> v;
    for (const auto& clip : clips)
        for_each_patch(clip.shape(), [&](int f, int py, int px) {
            gather(clip, f, py, px, v.data());
            mean += v;
            scatter += v * v.transpose();
            count += 1.0;
        });
    mean /= count;
    const Eigen::Matrix<double, kPatchDim, kPatchDim> cov = scatter / count - mean * mean.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, kPatchDim, kPatchDim>> eig(cov);
    std::vector<double> basis;
    for (int k = 0; k < latent_channels; ++k) {
        // Eigenvalues ascend: largest first, sign fixed.
        Eigen::Matrix<double, kPatchDim, 1> dir = eig.eigenvectors().col(kPatchDim - 1 - k);
        int big = 0;
        dir.cwiseAbs().maxCoeff(&big);
        if (dir(big) < 0) dir = -dir;
        for (int i = 0; i < kPatchDim; ++i) basis.push_back(static_cast<float>(dir(i)));
    }
    std::vector<double> mean_vec;
    for (int i = 0; i < kPatchDim; ++i) mean_vec.push_back(static_cast<float>(mean(i)));
    PatchCodec codec(latent_channels, std::move(basis), std::move(mean_vec), 0.0);
    codec.tolerance_ = static_cast<float>(1.5 * codec.roundtrip_error(clips) + 1e-4);
    return codec;
}

LatentVideo PatchCodec::encode(const PixelVideo& x) const {
    if (x.shape().channels != 3) throw ShapeError("patch codec: expected 3 channels");
    LatentVideo z(latent_shape(x.shape()));
    double patch[kPatchDim];
    for_each_patch(x.shape(), [&](int f, int py, int px) {
        gather(x, f, py, px, patch);
        for (int k = 0; k < channels_; ++k) {
            double acc = 0.0;
            for (int i = 0; i < kPatchDim; ++i) acc += basis_[static_cast<std::size_t>(k) * kPatchDim + i] * (patch[i] - mean_[i]);
            z.at(f, k, py, px) = acc;
        }
    });
    return z;
}

PixelVideo PatchCodec::decode(const LatentVideo& z) const {
    PixelVideo x(pixel_shape(z.shape()));
    for_each_patch(x.shape(), [&](int f, int py, int px) {
        int i = 0;
        for (int c = 0; c < 3; ++c)
            for (int dy = 0; dy < kPatch; ++dy)
                for (int dx = 0; dx < kPatch; ++dx, ++i) {
                    double acc = mean_[i];
                    for (int k = 0; k < channels_; ++k)
                        acc += basis_[static_cast<std::size_t>(k) * kPatchDim + i] * z.at(f, k, py, px);
                    x.at(f, c, py * kPatch + dy, px * kPatch + dx) = acc;
                }
    });
    return x;
}

double PatchCodec::roundtrip_error(std::span<const PixelVideo> clips) const {
    double err = 0.0;
    std::size_t n = 0;
    for (const auto& clip : clips) {
        const auto back = decode(encode(clip));
        for (std::size_t i = 0; i < clip.size(); ++i) err += std::abs(back[i] - clip[i]);
        n += clip.size();
    }
    return n ? err / static_cast<double>(n) : 0.0;
}

void PatchCodec::save(const std::filesystem::path& path) const {
    TensorArchive a;
    a.add("basis", {static_cast<std::uint64_t>(channels_), kPatchDim}, basis_);
    a.add("mean", {kPatchDim}, mean_);
    const std::vector<double> tol{tolerance_};
    a.add("tolerance", {1}, tol);
    a.save(path);
}

PatchCodec PatchCodec::load(const std::filesystem::path& path) {
    const auto a = TensorArchive::load(path);
    const auto& basis = a.get("basis");
    if (basis.dims.size() != 2 || basis.dims[1] != kPatchDim) throw IoError("patch codec: bad basis tensor");
    return PatchCodec(static_cast<int>(basis.dims[0]), basis.values, a.get("mean").values,
                      a.get("tolerance").values.at(0));
}

}  // namespace matchcut
