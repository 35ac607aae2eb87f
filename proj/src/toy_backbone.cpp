#include "matchcut/toy_backbone.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fft.hpp"
#include "matchcut/rng.hpp"
#include "matchcut/tensor_io.hpp"

namespace matchcut {

namespace {

using detail::cplx;
using detail::Fft2;

inline cplx mul(cplx a, cplx b) noexcept {
    return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

// a * conj(b)
inline cplx mulc(cplx a, cplx b) noexcept {
    return {a.real() * b.real() + a.imag() * b.imag(), a.imag() * b.real() - a.real() * b.imag()};
}

struct Knot {
    int i = 0;
    double alpha = 0.0;
};

Knot locate(double lambda, double lo, double hi, int n) {
    if (n <= 1) return {0, 0.0};
    double u = (lambda - lo) / (hi - lo) * (n - 1);
    u = std::clamp(u, 0.0, static_cast<double>(n - 1));
    const int i = std::min(static_cast<int>(std::floor(u)), n - 2);
    return {i, u - i};
}

double interp(const std::vector<double>& k, Knot q) {
    if (k.size() == 1) return k[0];
    return (1.0 - q.alpha) * k[static_cast<std::size_t>(q.i)] + q.alpha * k[static_cast<std::size_t>(q.i) + 1];
}

void scatter_knot(std::vector<double>& g, Knot q, double value) {
    if (g.size() == 1) {
        g[0] += value;
        return;
    }
    g[static_cast<std::size_t>(q.i)] += (1.0 - q.alpha) * value;
    g[static_cast<std::size_t>(q.i) + 1] += q.alpha * value;
}

/// Double-precision parameters of the model.
struct Params {
    VideoShape ts;
    int num_classes = 0;
    int per_class = 0;
    double lambda_min = -10.0;
    double lambda_max = 10.0;
    std::vector<double> tmpl, bias, kappa, gain, beta;

    int num_templates() const noexcept { return num_classes * per_class; }

    static Params from(const ToyWeights& w) {
        Params p;
        p.ts = w.template_shape;
        p.num_classes = w.num_classes;
        p.per_class = w.per_class;
        p.lambda_min = w.lambda_min;
        p.lambda_max = w.lambda_max;
        p.tmpl.assign(w.templates.begin(), w.templates.end());
        p.bias.assign(w.bias.begin(), w.bias.end());
        p.kappa.assign(w.kappa.begin(), w.kappa.end());
        p.gain.assign(w.gain.begin(), w.gain.end());
        p.beta.assign(w.beta.begin(), w.beta.end());
        return p;
    }

    ToyWeights to_weights() const {
        ToyWeights w;
        w.template_shape = ts;
        w.num_classes = num_classes;
        w.per_class = per_class;
        w.lambda_min = lambda_min;
        w.lambda_max = lambda_max;
        auto narrow = [](const std::vector<double>& v) { return std::vector<float>(v.begin(), v.end()); };
        w.templates = narrow(tmpl);
        w.bias = narrow(bias);
        w.kappa = narrow(kappa);
        w.gain = narrow(gain);
        w.beta = narrow(beta);
        return w;
    }
};

/// Parameters plus the Fourier spectra of every template plane.
struct Bank {
    const Params& p;
    Fft2 fft;
    int P;
    int HW;
    std::vector<cplx> spec;
    std::vector<double> norm_prefix;  // per template: energy of its first f frames, f = 0..F

    explicit Bank(const Params& params)
        : p(params), fft(params.ts.height, params.ts.width), P(fft.spectrum_size()),
          HW(params.ts.height * params.ts.width) {
        const auto& ts = p.ts;
        const int J = p.num_templates();
        spec.resize(static_cast<std::size_t>(J) * ts.frames * ts.channels * P);
        norm_prefix.assign(static_cast<std::size_t>(J) * (ts.frames + 1), 0.0);
        for (int j = 0; j < J; ++j) {
            double acc = 0.0;
            for (int f = 0; f < ts.frames; ++f) {
                for (int c = 0; c < ts.channels; ++c) {
                    const double* src = plane(j, f, c);
                    for (int i = 0; i < HW; ++i) acc += src[i] * src[i];
                    fft.forward({src, static_cast<std::size_t>(HW)}, {spectrum(j, f, c), static_cast<std::size_t>(P)});
                }
                norm_prefix[static_cast<std::size_t>(j) * (ts.frames + 1) + f + 1] = acc;
            }
        }
    }

    std::size_t plane_index(int j, int f, int c) const {
        return (static_cast<std::size_t>(j) * p.ts.frames + f) * p.ts.channels + c;
    }
    const double* plane(int j, int f, int c) const { return p.tmpl.data() + plane_index(j, f, c) * HW; }
    cplx* spectrum(int j, int f, int c) { return spec.data() + plane_index(j, f, c) * P; }
    const cplx* spectrum(int j, int f, int c) const { return spec.data() + plane_index(j, f, c) * P; }
    double norm(int j, int frames) const { return norm_prefix[static_cast<std::size_t>(j) * (p.ts.frames + 1) + frames]; }
};

std::pair<int, int> template_range(const Params& p, const PromptSpec& prompt) {
    if (prompt.is_null) return {0, p.num_templates()};
    return {prompt.class_id * p.per_class, (prompt.class_id + 1) * p.per_class};
}

struct Grad {
    std::vector<cplx> spec;
    std::vector<double> tmpl, bias, kappa, gain, beta;

    explicit Grad(const Bank& b)
        : spec(b.spec.size()), tmpl(b.p.tmpl.size()), bias(b.p.bias.size()), kappa(b.p.kappa.size()),
          gain(b.p.gain.size()), beta(b.p.beta.size()) {}

    /// Folds the spectral accumulator into the spatial template gradient.
    void finish(const Bank& b) {
        std::vector<double> out(static_cast<std::size_t>(b.HW));
        const std::size_t planes = spec.size() / static_cast<std::size_t>(b.P);
        for (std::size_t q = 0; q < planes; ++q) {
            b.fft.inverse({spec.data() + q * b.P, static_cast<std::size_t>(b.P)}, out);
            for (int i = 0; i < b.HW; ++i) tmpl[q * b.HW + i] += out[static_cast<std::size_t>(i)];
        }
        std::fill(spec.begin(), spec.end(), cplx{});
    }
};

/// One evaluation of the network, keeping what the backward pass needs.
struct Pass {
    int j0 = 0, j1 = 0, F = 0, C = 0;
    double a = 0.0, v = 0.0;
    Knot knot;
    double kappa = 0.0, gain = 0.0, beta = 0.0;
    std::vector<cplx> zh;
    std::vector<double> corr, w;
    std::vector<cplx> wh;
    std::vector<double> mu_z, mu_m;
    LatentVideo x0, eps;

    void forward(const Bank& b, const LatentVideo& z, int jlo, int jhi, double abar) {
        const auto& s = z.shape();
        const auto& p = b.p;
        j0 = jlo;
        j1 = jhi;
        F = s.frames;
        C = s.channels;
        a = std::sqrt(abar);
        v = 1.0 - abar;
        knot = locate(std::log(abar / v), p.lambda_min, p.lambda_max, static_cast<int>(p.kappa.size()));
        kappa = interp(p.kappa, knot);
        gain = interp(p.gain, knot);
        beta = interp(p.beta, knot);
        const int nJ = j1 - j0;
        const std::size_t P = static_cast<std::size_t>(b.P);
        const std::size_t HW = static_cast<std::size_t>(b.HW);

        zh.resize(static_cast<std::size_t>(F) * C * P);
        for (int f = 0; f < F; ++f)
            for (int c = 0; c < C; ++c)
                b.fft.forward(z.plane(f, c), {zh.data() + (static_cast<std::size_t>(f) * C + c) * P, P});

        corr.resize(static_cast<std::size_t>(nJ) * HW);
        w.resize(corr.size());
        std::vector<cplx> acc(P);
        for (int jj = 0; jj < nJ; ++jj) {
            std::fill(acc.begin(), acc.end(), cplx{});
            for (int f = 0; f < F; ++f)
                for (int c = 0; c < C; ++c) {
                    const cplx* ph = b.spectrum(j0 + jj, f, c);
                    const cplx* zz = zh.data() + (static_cast<std::size_t>(f) * C + c) * P;
                    for (std::size_t k = 0; k < P; ++k) acc[k] += mulc(zz[k], ph[k]);
                }
            b.fft.inverse(acc, {corr.data() + jj * HW, HW});
        }

        const double scale = kappa / v;
        double top = -std::numeric_limits<double>::infinity();
        for (int jj = 0; jj < nJ; ++jj) {
            const double off = -0.5 * a * a * b.norm(j0 + jj, F);
            const double bj = p.bias[static_cast<std::size_t>(j0 + jj)];
            for (std::size_t i = 0; i < HW; ++i) {
                const double logit = scale * (a * corr[jj * HW + i] + off) + bj;
                w[jj * HW + i] = logit;
                top = std::max(top, logit);
            }
        }
        double total = 0.0;
        for (double& x : w) {
            x = std::exp(x - top);
            total += x;
        }
        for (double& x : w) x /= total;

        wh.resize(static_cast<std::size_t>(nJ) * P);
        for (int jj = 0; jj < nJ; ++jj) b.fft.forward({w.data() + jj * HW, HW}, {wh.data() + jj * P, P});

        LatentVideo m(s);
        for (int f = 0; f < F; ++f)
            for (int c = 0; c < C; ++c) {
                std::fill(acc.begin(), acc.end(), cplx{});
                for (int jj = 0; jj < nJ; ++jj) {
                    const cplx* ph = b.spectrum(j0 + jj, f, c);
                    const cplx* ww = wh.data() + jj * P;
                    for (std::size_t k = 0; k < P; ++k) acc[k] += mul(ww[k], ph[k]);
                }
                b.fft.inverse(acc, m.plane(f, c));
            }

        const double per_channel = static_cast<double>(F) * HW;
        mu_z.assign(static_cast<std::size_t>(C), 0.0);
        mu_m.assign(static_cast<std::size_t>(C), 0.0);
        for (int f = 0; f < F; ++f)
            for (int c = 0; c < C; ++c) {
                const auto zp = z.plane(f, c);
                const auto mp = m.plane(f, c);
                for (std::size_t i = 0; i < HW; ++i) {
                    mu_z[static_cast<std::size_t>(c)] += zp[i];
                    mu_m[static_cast<std::size_t>(c)] += mp[i];
                }
            }
        for (int c = 0; c < C; ++c) {
            mu_z[static_cast<std::size_t>(c)] /= per_channel * a;
            mu_m[static_cast<std::size_t>(c)] /= per_channel;
        }

        x0 = std::move(m);
        eps = LatentVideo(s);
        const double out_scale = gain / std::sqrt(v);
        for (int f = 0; f < F; ++f)
            for (int c = 0; c < C; ++c) {
                const double shift = beta * (mu_z[static_cast<std::size_t>(c)] - mu_m[static_cast<std::size_t>(c)]);
                auto xp = x0.plane(f, c);
                const auto zp = z.plane(f, c);
                auto ep = eps.plane(f, c);
                for (std::size_t i = 0; i < HW; ++i) {
                    xp[i] += shift;
                    ep[i] = out_scale * (zp[i] - a * xp[i]);
                }
            }
    }

    /// Accumulates weight * d(mean squared error)/d(params) into g; returns the loss.
    double backward(const Bank& b, const LatentVideo& z, const LatentVideo& target, Grad& g, double weight) {
        const auto& p = b.p;
        const std::size_t P = static_cast<std::size_t>(b.P);
        const std::size_t HW = static_cast<std::size_t>(b.HW);
        const std::size_t N = z.size();
        const double sv = std::sqrt(v);
        const int nJ = j1 - j0;

        double loss = 0.0;
        double dgain = 0.0;
        LatentVideo G(z.shape());
        std::vector<double> sG(static_cast<std::size_t>(C), 0.0);
        for (int f = 0; f < F; ++f)
            for (int c = 0; c < C; ++c)
                for (std::size_t i = 0; i < HW; ++i) {
                    const std::size_t idx = z.index(f, c, 0, 0) + i;
                    const double r = eps[idx] - target[idx];
                    loss += r * r;
                    const double R = 2.0 * r / static_cast<double>(N) * weight;
                    dgain += R * (z[idx] - a * x0[idx]) / sv;
                    G[idx] = -gain * a / sv * R;
                    sG[static_cast<std::size_t>(c)] += G[idx];
                }
        loss /= static_cast<double>(N);

        double dbeta = 0.0;
        for (int c = 0; c < C; ++c)
            dbeta += sG[static_cast<std::size_t>(c)] * (mu_z[static_cast<std::size_t>(c)] - mu_m[static_cast<std::size_t>(c)]);
        const double per_channel = static_cast<double>(F) * HW;

        std::vector<cplx> gmh(static_cast<std::size_t>(F) * C * P);
        std::vector<double> gm(HW);
        for (int f = 0; f < F; ++f)
            for (int c = 0; c < C; ++c) {
                const auto gp = G.plane(f, c);
                const double corr_c = beta * sG[static_cast<std::size_t>(c)] / per_channel;
                for (std::size_t i = 0; i < HW; ++i) gm[i] = gp[i] - corr_c;
                b.fft.forward(gm, {gmh.data() + (static_cast<std::size_t>(f) * C + c) * P, P});
            }

        std::vector<double> u(static_cast<std::size_t>(nJ) * HW);
        std::vector<cplx> acc(P);
        for (int jj = 0; jj < nJ; ++jj) {
            std::fill(acc.begin(), acc.end(), cplx{});
            for (int f = 0; f < F; ++f)
                for (int c = 0; c < C; ++c) {
                    const cplx* ph = b.spectrum(j0 + jj, f, c);
                    const cplx* gg = gmh.data() + (static_cast<std::size_t>(f) * C + c) * P;
                    for (std::size_t k = 0; k < P; ++k) acc[k] += mulc(gg[k], ph[k]);
                }
            b.fft.inverse(acc, {u.data() + jj * HW, HW});
        }
        double ubar = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) ubar += w[i] * u[i];

        double dkappa = 0.0;
        std::vector<double> delta(HW);
        std::vector<cplx> dh(P);
        const double zcoef = kappa * a / v;
        for (int jj = 0; jj < nJ; ++jj) {
            const int j = j0 + jj;
            const double off = -0.5 * a * a * b.norm(j, F);
            double dsum = 0.0;
            for (std::size_t i = 0; i < HW; ++i) {
                const double d = w[jj * HW + i] * (u[jj * HW + i] - ubar);
                delta[i] = d;
                dsum += d;
                dkappa += d * (a * corr[jj * HW + i] + off) / v;
            }
            g.bias[static_cast<std::size_t>(j)] += dsum;
            b.fft.forward(delta, dh);
            const cplx* ww = wh.data() + jj * P;
            for (int f = 0; f < F; ++f)
                for (int c = 0; c < C; ++c) {
                    cplx* dst = g.spec.data() + b.plane_index(j, f, c) * P;
                    const cplx* gg = gmh.data() + (static_cast<std::size_t>(f) * C + c) * P;
                    const cplx* zz = zh.data() + (static_cast<std::size_t>(f) * C + c) * P;
                    for (std::size_t k = 0; k < P; ++k) dst[k] += mulc(gg[k], ww[k]) + zcoef * mulc(zz[k], dh[k]);
                    const double ncoef = -kappa * a * a / v * dsum;
                    const double* src = b.plane(j, f, c);
                    double* gt = g.tmpl.data() + b.plane_index(j, f, c) * HW;
                    for (std::size_t i = 0; i < HW; ++i) gt[i] += ncoef * src[i];
                }
        }
        scatter_knot(g.kappa, knot, dkappa);
        scatter_knot(g.gain, knot, dgain);
        scatter_knot(g.beta, knot, dbeta);
        (void)p;
        return loss;
    }
};

void check_prompt_range(const Params& p, const PromptSpec& prompt) {
    if (!prompt.is_null && (prompt.class_id < 0 || prompt.class_id >= p.num_classes))
        throw ValidationError("prompt.class_id", "toy backbone has classes 0.." + std::to_string(p.num_classes - 1));
}

/// Shift-invariant squared distance min_s |x - S_s y|^2 from precomputed spectra.
double shift_distance(const Fft2& fft, const std::vector<cplx>& xh, double xn, const std::vector<cplx>& yh, double yn) {
    const std::size_t P = static_cast<std::size_t>(fft.spectrum_size());
    std::vector<cplx> acc(P);
    for (std::size_t q = 0; q < xh.size() / P; ++q)
        for (std::size_t k = 0; k < P; ++k) acc[k] += mulc(xh[q * P + k], yh[q * P + k]);
    std::vector<double> c(static_cast<std::size_t>(fft.height()) * fft.width());
    fft.inverse(acc, c);
    return xn + yn - 2.0 * *std::max_element(c.begin(), c.end());
}

/// Farthest-point selection of `count` clips under the shift-invariant distance.
std::vector<std::size_t> farthest_points(std::span<const LatentVideo> clips, const std::vector<std::size_t>& pool,
                                         int count) {
    const auto& s = clips[pool.front()].shape();
    Fft2 fft(s.height, s.width);
    const std::size_t P = static_cast<std::size_t>(fft.spectrum_size());
    std::vector<std::vector<cplx>> spectra;
    std::vector<double> norms;
    for (auto idx : pool) {
        const auto& x = clips[idx];
        std::vector<cplx> h(static_cast<std::size_t>(s.frames) * s.channels * P);
        for (int f = 0; f < s.frames; ++f)
            for (int c = 0; c < s.channels; ++c)
                fft.forward(x.plane(f, c), {h.data() + (static_cast<std::size_t>(f) * s.channels + c) * P, P});
        spectra.push_back(std::move(h));
        double n = 0.0;
        for (double vv : x.values()) n += vv * vv;
        norms.push_back(n);
    }
    std::vector<std::size_t> chosen{0};
    std::vector<double> best(pool.size(), std::numeric_limits<double>::infinity());
    while (static_cast<int>(chosen.size()) < count) {
        const std::size_t last = chosen.back();
        for (std::size_t i = 0; i < pool.size(); ++i)
            best[i] = std::min(best[i], shift_distance(fft, spectra[i], norms[i], spectra[last], norms[last]));
        std::size_t pick = 0;
        for (std::size_t i = 1; i < pool.size(); ++i)
            if (best[i] > best[pick]) pick = i;
        if (!(best[pick] > 0.0)) pick = chosen.size() % pool.size();  // pool exhausted: repeat
        chosen.push_back(pick);
    }
    std::vector<std::size_t> out;
    for (auto c : chosen) out.push_back(pool[c]);
    return out;
}

double validation_loss(const ToyDenoiser& net, std::span<const LatentVideo> clips, std::span<const int> labels,
                       int samples, std::uint64_t seed, nlohmann::json& detail) {
    const auto& sched = net.schedule();
    const int T = sched.num_steps();
    double total = 0.0;
    double zero = 0.0;
    double t1 = 0.0;
    int t1_count = 0;
    for (int i = 0; i < samples; ++i) {
        const std::size_t ci = static_cast<std::size_t>(i) % clips.size();
        const int t = 1 + (i * 7) % T;
        const auto& x = clips[ci];
        const auto eps = gaussian_video<LatentTag>(x.shape(), mix_seed(seed, static_cast<std::uint64_t>(i)));
        const auto zt = noise_to_level(x, {t}, sched, eps);
        const auto pred = net.denoise(zt, PromptSpec::toy(labels[ci]), {t});
        double se = 0.0, ze = 0.0;
        for (std::size_t k = 0; k < pred.size(); ++k) {
            se += (pred[k] - eps[k]) * (pred[k] - eps[k]);
            ze += eps[k] * eps[k];
        }
        se /= static_cast<double>(pred.size());
        ze /= static_cast<double>(pred.size());
        total += se;
        zero += ze;
        if (t == 1) {
            t1 += se;
            ++t1_count;
        }
    }
    detail["zero_predictor_loss"] = zero / samples;
    detail["loss_at_t1"] = t1_count ? t1 / t1_count : 0.0;
    return total / samples;
}

}  // namespace

ToyWeights ToyWeights::zeros(VideoShape template_shape, int num_classes, int per_class, int knots) {
    ToyWeights w;
    w.template_shape = template_shape;
    w.num_classes = num_classes;
    w.per_class = per_class;
    w.templates.assign(static_cast<std::size_t>(num_classes) * per_class * template_shape.numel(), 0.0f);
    w.bias.assign(static_cast<std::size_t>(num_classes) * per_class, 0.0f);
    w.kappa.assign(static_cast<std::size_t>(knots), 0.0f);
    w.gain = w.kappa;
    w.beta = w.kappa;
    return w;
}

void ToyWeights::validate() const {
    if (!template_shape.valid()) throw ValidationError("template_shape", "must be positive");
    if (num_classes < 1) throw ValidationError("num_classes", "must be >= 1");
    if (per_class < 1) throw ValidationError("per_class", "must be >= 1");
    if (templates.size() != static_cast<std::size_t>(num_templates()) * template_shape.numel())
        throw ShapeError("toy weights: template tensor size mismatch");
    if (bias.size() != static_cast<std::size_t>(num_templates())) throw ShapeError("toy weights: bias size mismatch");
    if (kappa.empty() || gain.size() != kappa.size() || beta.size() != kappa.size())
        throw ShapeError("toy weights: knot vectors must be nonempty and equally long");
    if (!(lambda_max > lambda_min)) throw ValidationError("lambda_max", "must exceed lambda_min");
}

void ToyWeights::save(const std::filesystem::path& path) const {
    validate();
    TensorArchive a;
    const auto& s = template_shape;
    a.add("templates",
          {static_cast<std::uint64_t>(num_templates()), static_cast<std::uint64_t>(s.frames),
           static_cast<std::uint64_t>(s.channels), static_cast<std::uint64_t>(s.height),
           static_cast<std::uint64_t>(s.width)},
          std::span<const float>(templates));
    a.add("bias", {bias.size()}, std::span<const float>(bias));
    a.add("kappa", {kappa.size()}, std::span<const float>(kappa));
    a.add("gain", {gain.size()}, std::span<const float>(gain));
    a.add("beta", {beta.size()}, std::span<const float>(beta));
    const std::vector<double> meta{static_cast<double>(num_classes), static_cast<double>(per_class), lambda_min,
                                   lambda_max};
    a.add("meta", {meta.size()}, meta, DType::f64);
    a.save(path);
}

ToyWeights ToyWeights::load(const std::filesystem::path& path) {
    const auto a = TensorArchive::load(path);
    ToyWeights w;
    const auto& t = a.get("templates");
    if (t.dims.size() != 5) throw IoError("toy weights: templates must be rank 5");
    w.template_shape = {static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]), static_cast<int>(t.dims[3]),
                        static_cast<int>(t.dims[4])};
    const auto& meta = a.get("meta").values;
    if (meta.size() != 4) throw IoError("toy weights: bad meta tensor");
    w.num_classes = static_cast<int>(meta[0]);
    w.per_class = static_cast<int>(meta[1]);
    w.lambda_min = meta[2];
    w.lambda_max = meta[3];
    auto narrow = [&](const char* name) {
        const auto& v = a.get(name).values;
        return std::vector<float>(v.begin(), v.end());
    };
    w.templates = narrow("templates");
    w.bias = narrow("bias");
    w.kappa = narrow("kappa");
    w.gain = narrow("gain");
    w.beta = narrow("beta");
    w.validate();
    return w;
}

struct ToyDenoiser::Impl {
    Params params;
    Bank bank;

    explicit Impl(const ToyWeights& w) : params(Params::from(w)), bank(params) {}
};

ToyDenoiser::ToyDenoiser(ToyWeights weights, NoiseSchedule schedule)
    : weights_(std::move(weights)), schedule_(std::move(schedule)) {
    weights_.validate();
    impl_ = std::make_unique<Impl>(weights_);
}

ToyDenoiser::~ToyDenoiser() = default;

bool ToyDenoiser::supports(const PromptSpec& prompt) const {
    if (prompt.is_null) return true;
    return prompt.kind == PromptKind::toy_class && prompt.class_id >= 0 && prompt.class_id < weights_.num_classes;
}

bool ToyDenoiser::accepts(const VideoShape& s) const {
    const auto& ts = weights_.template_shape;
    return s.channels == ts.channels && s.height == ts.height && s.width == ts.width && s.frames >= 1 &&
           s.frames <= ts.frames;
}

LatentVideo ToyDenoiser::predict(const LatentVideo& z, const PromptSpec& prompt, Timestep t) const {
    check_prompt_range(impl_->params, prompt);
    const auto [j0, j1] = template_range(impl_->params, prompt);
    Pass pass;
    pass.forward(impl_->bank, z, j0, j1, schedule_.alpha_bar(t.t));
    return std::move(pass.eps);
}

LatentVideo ToyDenoiser::clean_prediction(const LatentVideo& z, const PromptSpec& prompt, Timestep t) const {
    (void)denoise(z, prompt, t);  // validation
    const auto [j0, j1] = template_range(impl_->params, prompt);
    Pass pass;
    pass.forward(impl_->bank, z, j0, j1, schedule_.alpha_bar(t.t));
    return std::move(pass.x0);
}

double toy_loss_and_gradient(const ToyWeights& weights, const NoiseSchedule& sched, const LatentVideo& z,
                             const LatentVideo& eps, const PromptSpec& prompt, Timestep t, std::vector<double>& grad) {
    weights.validate();
    const Params p = Params::from(weights);
    check_prompt_range(p, prompt);
    const Bank bank(p);
    Grad g(bank);
    const auto [j0, j1] = template_range(p, prompt);
    Pass pass;
    pass.forward(bank, z, j0, j1, sched.alpha_bar(t.t));
    const double loss = pass.backward(bank, z, eps, g, 1.0);
    g.finish(bank);
    grad.clear();
    for (const auto* v : {&g.tmpl, &g.bias, &g.kappa, &g.gain, &g.beta}) grad.insert(grad.end(), v->begin(), v->end());
    return loss;
}

void to_json(nlohmann::json& j, const ToyTrainConfig& c) {
    j = {{"templates_per_class", c.templates_per_class},
         {"knots", c.knots},
         {"steps", c.steps},
         {"batch", c.batch},
         {"lr_templates", c.lr_templates},
         {"lr_scalars", c.lr_scalars},
         {"null_prob", c.null_prob},
         {"validation_samples", c.validation_samples},
         {"seed", c.seed},
         {"schedule", c.schedule}};
}

void from_json(const nlohmann::json& j, ToyTrainConfig& c) {
    c = ToyTrainConfig{};
    c.templates_per_class = j.value("templates_per_class", c.templates_per_class);
    c.knots = j.value("knots", c.knots);
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
    c.lr_templates = j.value("lr_templates", c.lr_templates);
    c.lr_scalars = j.value("lr_scalars", c.lr_scalars);
    c.null_prob = j.value("null_prob", c.null_prob);
    c.validation_samples = j.value("validation_samples", c.validation_samples);
    c.seed = j.value("seed", c.seed);
    if (j.contains("schedule")) c.schedule = j.at("schedule").get<ScheduleSpec>();
}

ToyTrainResult train_toy_backbone(std::span<const LatentVideo> clips, std::span<const int> labels,
                                  std::span<const LatentVideo> val_clips, std::span<const int> val_labels,
                                  int num_classes, const ToyTrainConfig& cfg) {
    if (clips.empty()) throw ValidationError("dataset", "must not be empty");
    if (labels.size() != clips.size()) throw ValidationError("labels", "must match the number of clips");
    if (val_labels.size() != val_clips.size()) throw ValidationError("val_labels", "must match the validation clips");
    if (cfg.templates_per_class < 1) throw ValidationError("templates_per_class", "must be >= 1");
    if (cfg.knots < 1) throw ValidationError("knots", "must be >= 1");
    if (cfg.steps < 0) throw ValidationError("steps", "must be >= 0");
    if (cfg.batch < 1) throw ValidationError("batch", "must be >= 1");
    const VideoShape shape = clips.front().shape();
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < clips.size(); ++i) {
        if (clips[i].shape() != shape) throw ShapeError("training clips must share one shape");
        if (labels[i] < 0 || labels[i] >= num_classes) throw ValidationError("labels", "class id out of range");
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    for (int c = 0; c < num_classes; ++c)
        if (by_class[static_cast<std::size_t>(c)].empty())
            throw ValidationError("dataset", "class " + std::to_string(c) + " has no clips");
    const NoiseSchedule sched = build_schedule(cfg.schedule);

    Params p;
    p.ts = shape;
    p.num_classes = num_classes;
    p.per_class = cfg.templates_per_class;
    for (int c = 0; c < num_classes; ++c)
        for (auto idx : farthest_points(clips, by_class[static_cast<std::size_t>(c)], cfg.templates_per_class))
            p.tmpl.insert(p.tmpl.end(), clips[idx].storage().begin(), clips[idx].storage().end());
    p.bias.assign(static_cast<std::size_t>(p.num_templates()), 0.0);
    p.kappa.assign(static_cast<std::size_t>(cfg.knots), 1.0);
    p.gain.assign(static_cast<std::size_t>(cfg.knots), 1.0);
    p.beta.assign(static_cast<std::size_t>(cfg.knots), 0.0);

    struct Adam {
        std::vector<double> m, v;
        double lr;
        void step(std::vector<double>& x, const std::vector<double>& g, int it) {
            if (m.empty()) m.assign(x.size(), 0.0), v.assign(x.size(), 0.0);
            const double c1 = 1.0 - std::pow(0.9, it);
            const double c2 = 1.0 - std::pow(0.999, it);
            for (std::size_t i = 0; i < x.size(); ++i) {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + 1e-8);
            }
        }
    };
    Adam opt_t{{}, {}, cfg.lr_templates}, opt_b{{}, {}, cfg.lr_scalars}, opt_k{{}, {}, cfg.lr_scalars},
        opt_g{{}, {}, cfg.lr_scalars}, opt_be{{}, {}, cfg.lr_scalars};

    Rng rng(mix_seed(cfg.seed, "train"));
    const int T = sched.num_steps();
    std::vector<double> losses;
    for (int step = 1; step <= cfg.steps; ++step) {
        const Bank bank(p);
        Grad g(bank);
        double loss = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            const std::size_t i = static_cast<std::size_t>(rng.below(static_cast<int>(clips.size())));
            const int t = 1 + rng.below(T);
            const auto eps = gaussian_video<LatentTag>(shape, rng.bits());
            const auto zt = noise_to_level(clips[i], {t}, sched, eps);
            const PromptSpec prompt = rng.uniform() < cfg.null_prob ? PromptSpec::null_prompt() : PromptSpec::toy(labels[i]);
            const auto [j0, j1] = template_range(p, prompt);
            Pass pass;
            pass.forward(bank, zt, j0, j1, sched.alpha_bar(t));
            loss += pass.backward(bank, zt, eps, g, 1.0 / cfg.batch) / cfg.batch;
        }
        if (!std::isfinite(loss))
            throw NumericalError(step, "toy training loss diverged (last finite loss " +
                                           (losses.empty() ? std::string("n/a") : std::to_string(losses.back())) + ")");
        g.finish(bank);
        losses.push_back(loss);
        opt_t.step(p.tmpl, g.tmpl, step);
        opt_b.step(p.bias, g.bias, step);
        opt_k.step(p.kappa, g.kappa, step);
        opt_g.step(p.gain, g.gain, step);
        opt_be.step(p.beta, g.beta, step);
    }

    ToyTrainResult result;
    result.weights = p.to_weights();
    nlohmann::json m;
    m["format"] = "matchcut.toy_backbone.v1";
    m["config"] = cfg;
    m["seed"] = cfg.seed;
    m["num_classes"] = num_classes;
    m["template_shape"] = {shape.frames, shape.channels, shape.height, shape.width};
    m["train_clips"] = clips.size();
    m["losses"] = losses;
    m["final_loss"] = losses.empty() ? 0.0 : losses.back();
    const std::size_t tail = std::min<std::size_t>(losses.size(), 20);
    double tail_mean = 0.0;
    for (std::size_t i = losses.size() - tail; i < losses.size(); ++i) tail_mean += losses[i];
    m["final_loss_mean20"] = tail ? tail_mean / static_cast<double>(tail) : 0.0;
    if (!val_clips.empty() && cfg.validation_samples > 0) {
        const ToyDenoiser net(result.weights, sched);
        nlohmann::json detail;
        m["validation_loss"] =
            validation_loss(net, val_clips, val_labels, cfg.validation_samples, mix_seed(cfg.seed, "val"), detail);
        m["zero_predictor_loss"] = detail["zero_predictor_loss"];
        m["validation_loss_t1"] = detail["loss_at_t1"];
    }
    result.manifest = std::move(m);
    return result;
}

}  // namespace matchcut
