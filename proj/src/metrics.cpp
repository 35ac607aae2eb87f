#include "matchcut/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "matchcut/rng.hpp"
#include "matchcut/tensor_io.hpp"

namespace matchcut {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_taps() {
    std::array<double, kWindow> taps{};
    double total = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        taps[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
        total += taps[static_cast<std::size_t>(i)];
    }
    for (double& t : taps) t /= total;
    return taps;
}

// Separable valid-mode filtering of an h x w plane.
std::vector<double> filter_valid(std::span<const double> in, int h, int w, const std::array<double, kWindow>& k) {
    const int oh = h - kWindow + 1;
    const int ow = w - kWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWindow; ++i) acc += k[static_cast<std::size_t>(i)] * in[static_cast<std::size_t>(y) * w + x + i];
            rows[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWindow; ++i) acc += k[static_cast<std::size_t>(i)] * rows[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

double ssim_plane(std::span<const double> a, std::span<const double> b, int h, int w) {
    static const auto taps = gaussian_taps();
    const std::size_t n = a.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto mu_a = filter_valid(a, h, w, taps);
    const auto mu_b = filter_valid(b, h, w, taps);
    const auto m_aa = filter_valid(aa, h, w, taps);
    const auto m_bb = filter_valid(bb, h, w, taps);
    const auto m_ab = filter_valid(ab, h, w, taps);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = m_aa[i] - mu_a[i] * mu_a[i];
        const double vb = m_bb[i] - mu_b[i] * mu_b[i];
        const double cov = m_ab[i] - mu_a[i] * mu_b[i];
        total += ((2.0 * mu_a[i] * mu_b[i] + kC1) * (2.0 * cov + kC2)) /
                 ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (va + vb + kC2));
    }
    return total / static_cast<double>(mu_a.size());
}

std::vector<double> downsample2(const std::vector<double>& in, int h, int w) {
    const int oh = h / 2, ow = w / 2;
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const std::size_t i0 = static_cast<std::size_t>(2 * y) * w + 2 * x;
            out[static_cast<std::size_t>(y) * ow + x] = 0.25 * (in[i0] + in[i0 + 1] + in[i0 + w] + in[i0 + w + 1]);
        }
    return out;
}

double median_of(std::span<const double> v) {
    std::vector<double> s(v.begin(), v.end());
    auto mid = s.begin() + static_cast<std::ptrdiff_t>(s.size() / 2);
    std::nth_element(s.begin(), mid, s.end());
    return *mid;
}

void softmax_inplace(std::vector<double>& z) {
    const double top = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double& v : z) {
        v = std::exp(v - top);
        total += v;
    }
    for (double& v : z) v /= total;
}

}  // namespace

double ssim(const PixelVideo& x, const PixelVideo& y) {
    require_same_shape(x, y, "ssim");
    const auto& s = x.shape();
    if (s.height < kWindow || s.width < kWindow)
        throw ValidationError("shape", "ssim needs frames of at least 11 x 11 pixels");
    double total = 0.0;
    for (int f = 0; f < s.frames; ++f)
        for (int c = 0; c < s.channels; ++c) total += ssim_plane(x.plane(f, c), y.plane(f, c), s.height, s.width);
    return total / (static_cast<double>(s.frames) * s.channels);
}

double motion_consistency(const Tracklet& a, const Tracklet& b) {
    if (a.size() != b.size()) throw ValidationError("tracklets", "must have the same length");
    double total = 0.0;
    int counted = 0;
    bool moving_a = false, moving_b = false;
    for (std::size_t k = 1; k < a.size(); ++k) {
        const double ax = wrap_delta(a.points[k - 1].x, a.points[k].x);
        const double ay = wrap_delta(a.points[k - 1].y, a.points[k].y);
        const double bx = wrap_delta(b.points[k - 1].x, b.points[k].x);
        const double by = wrap_delta(b.points[k - 1].y, b.points[k].y);
        const double na = std::sqrt(ax * ax + ay * ay);
        const double nb = std::sqrt(bx * bx + by * by);
        moving_a = moving_a || na > 0.0;
        moving_b = moving_b || nb > 0.0;
        if (na == 0.0 || nb == 0.0) continue;
        const double cosine = std::clamp((ax * bx + ay * by) / (na * nb), -1.0, 1.0);
        total += (1.0 + cosine) / 2.0;
        ++counted;
    }
    if (counted > 0) return total / counted;
    if (!moving_a && !moving_b) return 1.0;
    return 0.5;
}

double motion_consistency(const PixelVideo& x, const PixelVideo& y, const Tracklet* track_x, const Tracklet* track_y) {
    require_same_shape(x, y, "motion_consistency");
    const Tracklet tx = track_x ? *track_x : track_object(x);
    const Tracklet ty = track_y ? *track_y : track_object(y);
    return motion_consistency(tx, ty);
}

double perceptual_proxy(const PixelVideo& x, const PixelVideo& y) {
    require_same_shape(x, y, "perceptual_distance");
    static constexpr std::array<double, 4> weights{0.4, 0.3, 0.2, 0.1};
    const auto& s = x.shape();
    std::array<double, 4> level_sum{};
    std::array<double, 4> level_count{};
    for (int f = 0; f < s.frames; ++f)
        for (int c = 0; c < s.channels; ++c) {
            std::vector<double> a(x.plane(f, c).begin(), x.plane(f, c).end());
            std::vector<double> b(y.plane(f, c).begin(), y.plane(f, c).end());
            int h = s.height, w = s.width;
            for (std::size_t l = 0; l < weights.size(); ++l) {
                if (l > 0) {
                    if (h < 2 || w < 2) break;
                    a = downsample2(a, h, w);
                    b = downsample2(b, h, w);
                    h /= 2;
                    w /= 2;
                }
                for (std::size_t i = 0; i < a.size(); ++i) level_sum[l] += std::abs(a[i] - b[i]);
                level_count[l] += static_cast<double>(a.size());
            }
        }
    double score = 0.0, used = 0.0;
    for (std::size_t l = 0; l < weights.size(); ++l)
        if (level_count[l] > 0) {
            score += weights[l] * level_sum[l] / level_count[l];
            used += weights[l];
        }
    return used > 0 ? score / used : 0.0;
}

std::array<double, ToyAdherenceProbe::kFeatures> ToyAdherenceProbe::frame_features(const PixelVideo& x, int frame) {
    const auto& s = x.shape();
    if (s.channels != 3) throw ShapeError("adherence probe expects RGB videos");
    const std::size_t n = s.plane_size();
    std::array<double, 3> bg{};
    for (int c = 0; c < 3; ++c) bg[static_cast<std::size_t>(c)] = median_of(x.plane(frame, c));
    std::vector<double> dist(n, 0.0);
    for (int c = 0; c < 3; ++c) {
        const auto p = x.plane(frame, c);
        for (std::size_t i = 0; i < n; ++i) dist[i] += (p[i] - bg[static_cast<std::size_t>(c)]) * (p[i] - bg[static_cast<std::size_t>(c)]);
    }
    for (double& d : dist) d = std::sqrt(d);
    const double top = *std::max_element(dist.begin(), dist.end());
    std::array<double, kFeatures> feat{};
    if (top < 1e-9) return feat;
    double wsum = 0.0;
    std::array<double, 3> obj{};
    std::size_t area = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double wgt = dist[i] * dist[i];
        wsum += wgt;
        for (int c = 0; c < 3; ++c) obj[static_cast<std::size_t>(c)] += wgt * x.plane(frame, c)[i];
        if (dist[i] > 0.5 * top) ++area;
    }
    for (int c = 0; c < 3; ++c)
        feat[static_cast<std::size_t>(c)] = obj[static_cast<std::size_t>(c)] / wsum - bg[static_cast<std::size_t>(c)];
    feat[3] = static_cast<double>(area) / static_cast<double>(n);
    return feat;
}

ToyAdherenceProbe ToyAdherenceProbe::train(const ToyDataset& train_set, const ToyDataset& held_out) {
    return train(train_set, held_out, TrainConfig{});
}

ToyAdherenceProbe ToyAdherenceProbe::train(const ToyDataset& train_set, const ToyDataset& held_out,
                                           const TrainConfig& cfg) {
    const ToyDataset& train = train_set;
    if (train.size() == 0) throw ValidationError("dataset", "must not be empty");
    int classes = 0;
    for (std::size_t i = 0; i < train.size(); ++i) classes = std::max(classes, train.label(i) + 1);
    constexpr int D = kFeatures;
    std::vector<std::array<double, D>> feats;
    std::vector<std::vector<double>> targets;
    for (std::size_t i = 0; i < train.size(); ++i)
        for (int f = 0; f < train.clips[i].shape().frames; ++f) {
            feats.push_back(frame_features(train.clips[i], f));
            std::vector<double> t(static_cast<std::size_t>(classes), 0.0);
            t[static_cast<std::size_t>(train.label(i))] = 1.0;
            targets.push_back(std::move(t));
        }
    const auto& shape = train.clips.front().shape();
    Rng rng(mix_seed(cfg.seed, "probe_noise"));
    for (int k = 0; k < cfg.noise_frames; ++k) {
        PixelVideo noise({1, 3, shape.height, shape.width});
        for (double& v : noise.values()) v = rng.uniform();
        feats.push_back(frame_features(noise, 0));
        targets.emplace_back(static_cast<std::size_t>(classes), 1.0 / classes);
    }

    ToyAdherenceProbe probe;
    probe.num_classes_ = classes;
    probe.mean_.assign(D, 0.0);
    probe.scale_.assign(D, 0.0);
    for (const auto& f : feats)
        for (int d = 0; d < D; ++d) probe.mean_[static_cast<std::size_t>(d)] += f[static_cast<std::size_t>(d)];
    for (double& m : probe.mean_) m /= static_cast<double>(feats.size());
    for (const auto& f : feats)
        for (int d = 0; d < D; ++d) {
            const double diff = f[static_cast<std::size_t>(d)] - probe.mean_[static_cast<std::size_t>(d)];
            probe.scale_[static_cast<std::size_t>(d)] += diff * diff;
        }
    for (double& s : probe.scale_) s = std::sqrt(s / static_cast<double>(feats.size())) + 1e-12;

    const int P = D + 1;
    probe.weights_.assign(static_cast<std::size_t>(classes) * P, 0.0);
    std::vector<double> grad(probe.weights_.size());
    std::vector<double> x(static_cast<std::size_t>(P)), z(static_cast<std::size_t>(classes));
    double loss = 0.0;
    for (int it = 0; it < cfg.iterations; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        loss = 0.0;
        for (std::size_t n = 0; n < feats.size(); ++n) {
            for (int d = 0; d < D; ++d)
                x[static_cast<std::size_t>(d)] =
                    (feats[n][static_cast<std::size_t>(d)] - probe.mean_[static_cast<std::size_t>(d)]) / probe.scale_[static_cast<std::size_t>(d)];
            x[D] = 1.0;
            for (int c = 0; c < classes; ++c) {
                double acc = 0.0;
                for (int d = 0; d < P; ++d) acc += probe.weights_[static_cast<std::size_t>(c * P + d)] * x[static_cast<std::size_t>(d)];
                z[static_cast<std::size_t>(c)] = acc;
            }
            softmax_inplace(z);
            for (int c = 0; c < classes; ++c) {
                const double t = targets[n][static_cast<std::size_t>(c)];
                if (t > 0) loss -= t * std::log(std::max(z[static_cast<std::size_t>(c)], 1e-300));
                const double r = z[static_cast<std::size_t>(c)] - t;
                for (int d = 0; d < P; ++d) grad[static_cast<std::size_t>(c * P + d)] += r * x[static_cast<std::size_t>(d)];
            }
        }
        const double inv = 1.0 / static_cast<double>(feats.size());
        for (std::size_t i = 0; i < grad.size(); ++i)
            probe.weights_[i] -= cfg.learning_rate * (grad[i] * inv + cfg.l2 * probe.weights_[i]);
        loss *= inv;
    }

    double correct = 0.0, frames = 0.0, own = 0.0, other = 0.0, other_n = 0.0;
    for (std::size_t i = 0; i < held_out.size(); ++i) {
        const auto& clip = held_out.clips[i];
        for (int f = 0; f < clip.shape().frames; ++f) {
            const auto p = probe.frame_probabilities(clip, f);
            const auto best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
            correct += best == held_out.label(i) ? 1.0 : 0.0;
            frames += 1.0;
        }
        for (int c = 0; c < classes; ++c) {
            const double s = probe.score(clip, PromptSpec::toy(c));
            if (c == held_out.label(i)) {
                own += s;
            } else {
                other += s;
                other_n += 1.0;
            }
        }
    }
    probe.manifest_ = {{"format", "matchcut.toy_probe.v1"},
                       {"num_classes", classes},
                       {"train_frames", feats.size()},
                       {"final_loss", loss},
                       {"held_out_clips", held_out.size()},
                       {"held_out_frame_accuracy", frames > 0 ? correct / frames : 0.0},
                       {"held_out_mean_score_correct_class", held_out.size() ? own / static_cast<double>(held_out.size()) : 0.0},
                       {"held_out_mean_score_other_class", other_n > 0 ? other / other_n : 0.0},
                       {"seed", cfg.seed}};
    return probe;
}

std::vector<double> ToyAdherenceProbe::frame_probabilities(const PixelVideo& x, int frame) const {
    if (!trained()) throw Error("adherence probe is not trained");
    const auto f = frame_features(x, frame);
    const int P = kFeatures + 1;
    std::vector<double> z(static_cast<std::size_t>(num_classes_));
    for (int c = 0; c < num_classes_; ++c) {
        double acc = weights_[static_cast<std::size_t>(c * P + kFeatures)];
        for (int d = 0; d < kFeatures; ++d)
            acc += weights_[static_cast<std::size_t>(c * P + d)] * (f[static_cast<std::size_t>(d)] - mean_[static_cast<std::size_t>(d)]) /
                   scale_[static_cast<std::size_t>(d)];
        z[static_cast<std::size_t>(c)] = acc;
    }
    softmax_inplace(z);
    return z;
}

double ToyAdherenceProbe::score(const PixelVideo& x, const PromptSpec& prompt) const {
    if (!trained()) throw Error("adherence probe is not trained");
    if (prompt.is_null || prompt.kind != PromptKind::toy_class)
        throw ValidationError("prompt", "toy probe scores toy class prompts only");
    if (prompt.class_id < 0 || prompt.class_id >= num_classes_) throw ValidationError("prompt.class_id", "out of range");
    double total = 0.0;
    for (int f = 0; f < x.shape().frames; ++f)
        total += frame_probabilities(x, f)[static_cast<std::size_t>(prompt.class_id)];
    return total / x.shape().frames;
}

void ToyAdherenceProbe::save(const std::filesystem::path& path) const {
    if (!trained()) throw Error("adherence probe is not trained");
    TensorArchive a;
    a.add("weights", {static_cast<std::uint64_t>(num_classes_), kFeatures + 1}, weights_, DType::f64);
    a.add("mean", {kFeatures}, mean_, DType::f64);
    a.add("scale", {kFeatures}, scale_, DType::f64);
    a.save(path);
    auto manifest_path = path;
    manifest_path.replace_extension(".json");
    write_text_file(manifest_path, manifest_.dump(1));
}

ToyAdherenceProbe ToyAdherenceProbe::load(const std::filesystem::path& path) {
    const auto a = TensorArchive::load(path);
    ToyAdherenceProbe p;
    const auto& w = a.get("weights");
    if (w.dims.size() != 2 || w.dims[1] != kFeatures + 1) throw IoError("probe: bad weights tensor");
    p.num_classes_ = static_cast<int>(w.dims[0]);
    p.weights_ = w.values;
    p.mean_ = a.get("mean").values;
    p.scale_ = a.get("scale").values;
    auto manifest_path = path;
    manifest_path.replace_extension(".json");
    if (std::filesystem::exists(manifest_path)) p.manifest_ = nlohmann::json::parse(read_text_file(manifest_path));
    return p;
}

MetricRow evaluate_pair(const PairInput& pair, const EvalConfig& cfg) {
    if (!cfg.adherence) throw ValidationError("adherence", "an adherence scorer is required");
    MetricRow r;
    r.label = pair.label;
    r.config_hash = pair.config_hash;
    r.adherence_a = cfg.adherence->score(pair.x_a, pair.prompt_a);
    r.adherence_b = cfg.adherence->score(pair.x_b, pair.prompt_b);
    r.adherence_mean = (r.adherence_a + r.adherence_b) / 2.0;
    r.motion_consistency = motion_consistency(pair.x_a, pair.x_b, pair.track_a ? &*pair.track_a : nullptr,
                                              pair.track_b ? &*pair.track_b : nullptr);
    r.perceptual_distance = cfg.perceptual(pair.x_a, pair.x_b);
    r.ssim = ssim(pair.x_a, pair.x_b);
    for (double v : {r.adherence_a, r.adherence_b, r.motion_consistency, r.perceptual_distance, r.ssim})
        if (!std::isfinite(v)) throw NumericalError(0, "metric for pair '" + pair.label + "' is not finite");
    return r;
}

void aggregate_report(MetricReport& report) {
    report.aggregate.clear();
    const std::vector<std::pair<std::string, double MetricRow::*>> fields = {
        {"adherence_a", &MetricRow::adherence_a},
        {"adherence_b", &MetricRow::adherence_b},
        {"adherence_mean", &MetricRow::adherence_mean},
        {"motion_consistency", &MetricRow::motion_consistency},
        {"perceptual_distance", &MetricRow::perceptual_distance},
        {"ssim", &MetricRow::ssim}};
    if (report.rows.empty()) return;
    const double n = static_cast<double>(report.rows.size());
    for (const auto& [name, member] : fields) {
        double mean = 0.0;
        for (const auto& r : report.rows) mean += r.*member;
        mean /= n;
        double var = 0.0;
        for (const auto& r : report.rows) var += (r.*member - mean) * (r.*member - mean);
        report.aggregate[name] = {mean, std::sqrt(var / n)};
    }
    std::map<std::string, std::vector<double>> extras;
    for (const auto& r : report.rows)
        for (const auto& [name, v] : r.extra) extras[name].push_back(v);
    for (const auto& [name, values] : extras) {
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        report.aggregate[name] = {mean, std::sqrt(var / static_cast<double>(values.size()))};
    }
}

MetricReport evaluate_pairs(const std::vector<PairInput>& pairs, const EvalConfig& cfg) {
    if (pairs.empty()) throw ValidationError("pairs", "must not be empty");
    MetricReport report;
    nlohmann::json hashes = nlohmann::json::array();
    for (const auto& p : pairs) {
        report.rows.push_back(evaluate_pair(p, cfg));
        hashes.push_back(p.config_hash);
    }
    aggregate_report(report);
    report.provenance = {{"config_hashes", hashes},
                         {"adherence_scorer", cfg.adherence->name()},
                         {"motion_consistency", "displacement_cosine"},
                         {"ssim", {{"window", kWindow}, {"sigma", kSigma}, {"k1", 0.01}, {"k2", 0.03}}}};
    return report;
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json rows_j = nlohmann::json::array();
    for (const auto& r : rows)
        rows_j.push_back({{"label", r.label},
                          {"adherence_a", r.adherence_a},
                          {"adherence_b", r.adherence_b},
                          {"adherence_mean", r.adherence_mean},
                          {"motion_consistency", r.motion_consistency},
                          {"perceptual_distance", r.perceptual_distance},
                          {"ssim", r.ssim},
                          {"config_hash", r.config_hash},
                          {"extra", r.extra}});
    nlohmann::json agg = nlohmann::json::object();
    for (const auto& [name, s] : aggregate) agg[name] = {{"mean", s.mean}, {"std", s.std}};
    return {{"format", "matchcut.metrics.v1"}, {"rows", rows_j}, {"aggregate", agg}, {"provenance", provenance}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
    MetricReport r;
    for (const auto& row : j.at("rows")) {
        MetricRow m;
        m.label = row.value("label", "");
        m.adherence_a = row.at("adherence_a").get<double>();
        m.adherence_b = row.at("adherence_b").get<double>();
        m.adherence_mean = row.at("adherence_mean").get<double>();
        m.motion_consistency = row.at("motion_consistency").get<double>();
        m.perceptual_distance = row.at("perceptual_distance").get<double>();
        m.ssim = row.at("ssim").get<double>();
        m.config_hash = row.value("config_hash", "");
        if (row.contains("extra")) m.extra = row["extra"].get<std::map<std::string, double>>();
        r.rows.push_back(std::move(m));
    }
    for (const auto& [name, s] : j.at("aggregate").items())
        r.aggregate[name] = {s.at("mean").get<double>(), s.at("std").get<double>()};
    r.provenance = j.value("provenance", nlohmann::json::object());
    return r;
}

std::string MetricReport::to_csv() const {
    std::ostringstream out;
    out.precision(10);
    std::set<std::string> extra_names;
    for (const auto& r : rows)
        for (const auto& [name, v] : r.extra) extra_names.insert(name);
    out << "label,adherence_a,adherence_b,adherence_mean,motion_consistency,perceptual_distance,ssim,config_hash";
    for (const auto& name : extra_names) out << ',' << name;
    out << '\n';
    for (const auto& r : rows) {
        out << r.label << ',' << r.adherence_a << ',' << r.adherence_b << ',' << r.adherence_mean << ','
            << r.motion_consistency << ',' << r.perceptual_distance << ',' << r.ssim << ',' << r.config_hash;
        for (const auto& name : extra_names) {
            out << ',';
            if (auto it = r.extra.find(name); it != r.extra.end()) out << it->second;
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace matchcut
