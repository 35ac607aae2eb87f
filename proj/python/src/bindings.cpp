#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "matchcut/harness.hpp"
#include "matchcut/image_io.hpp"
#include "matchcut/intervene.hpp"
#include "matchcut/metrics.hpp"
#include "matchcut/toydata.hpp"

namespace py = pybind11;
using namespace matchcut;
using nlohmann::json;

namespace {

json to_json_value(const py::handle& obj) {
    return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object from_json_value(const json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

template <class Tag>
Video<Tag> to_video(const Array& a) {
    if (a.ndim() != 4) throw ShapeError("expected a 4-d array (frames, channels, height, width)");
    const VideoShape s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
                       static_cast<int>(a.shape(3))};
    return Video<Tag>(s, std::vector<double>(a.data(), a.data() + a.size()));
}

template <class Tag>
Array to_array(const Video<Tag>& v) {
    const auto& s = v.shape();
    Array out({s.frames, s.channels, s.height, s.width});
    std::copy(v.storage().begin(), v.storage().end(), out.mutable_data());
    return out;
}

ForkConfig fork_config(const py::handle& obj) { return to_json_value(obj).get<ForkConfig>(); }

PromptSpec prompt_of(const py::handle& obj) { return to_json_value(obj).get<PromptSpec>(); }

std::shared_ptr<const AdherenceScorer> probe_or_null(const std::filesystem::path& assets) {
    if (assets.empty() || !std::filesystem::exists(assets / "probe.mctc")) return nullptr;
    return load_probe(assets);
}

/// Interactive fork: joint phase, staged interventions, then the disjoint phase.
class PySession {
public:
    PySession(const py::handle& config, std::filesystem::path assets)
        : cfg_(fork_config(config)), assets_(std::move(assets)), p_(make_pipeline(cfg_, assets_)) {}

    void joint() {
        if (staged_) throw Error("joint phase already ran");
        py::gil_scoped_release release;
        trace_.config = cfg_;
        trace_.total_steps = cfg_.total_steps();
        trace_.joint_steps = cfg_.joint_steps;
        trace_.z_init = initial_latent(p_, cfg_);
        auto j = joint_phase(p_, cfg_, trace_.z_init, &trace_);
        trace_.fork_latent = std::move(j.fork_latent);
        trace_.fork_clean = std::move(j.fork_clean);
        staged_ = stage_fork(p_, trace_);
    }

    Array preview(const std::string& branch) const {
        const auto& s = need_staged();
        if (branch != "a" && branch != "b") throw ValidationError("branch", "must be a or b");
        return to_array(branch == "a" ? s.preview_a : s.preview_b);
    }

    void intervene(const py::handle& spec) {
        auto& s = need_staged();
        stage_intervention(s, intervention_from_json(to_json_value(spec)));
    }

    py::tuple finalize() {
        const auto& s = need_staged();
        MatchPair out;
        {
            py::gil_scoped_release release;
            out = resume_from_stage(p_, cfg_, trace_, s);
        }
        x_a_ = out.x_a;
        x_b_ = out.x_b;
        return py::make_tuple(to_array(out.x_a), to_array(out.x_b));
    }

    void write(const std::filesystem::path& dir) const {
        if (!x_a_) throw Error("finalize() has not run");
        const auto probe = load_probe(assets_);
        write_generation(dir, cfg_, *x_a_, *x_b_, *probe);
    }

private:
    StagedFork& need_staged() const {
        if (!staged_) throw Error("run joint() first");
        return *staged_;
    }

    ForkConfig cfg_;
    std::filesystem::path assets_;
    Pipeline p_;
    GenerationTrace trace_;
    mutable std::optional<StagedFork> staged_;
    std::optional<PixelVideo> x_a_, x_b_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Two-prompt fork sampling for match-cut video generation.";

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    m.def("default_config", [] { return from_json_value(ForkConfig{}); });
    m.def("validate_config", [](const py::dict& c) { fork_config(c).validate(); });

    m.def(
        "schedule_tables",
        [](const py::dict& spec) {
            const auto sched = build_schedule(to_json_value(spec).get<ScheduleSpec>());
            py::dict out;
            out["alpha_bar"] = sched.alpha_bar_table();
            out["gamma"] = sched.gamma_table();
            out["eta"] = sched.eta_table();
            out["sigma"] = sched.sigma_table();
            out["beta"] = sched.beta_table();
            return out;
        },
        py::arg("spec") = py::dict());
    m.def(
        "ddim_step",
        [](const Array& z, const Array& eps, int t, const py::dict& spec, std::optional<Array> noise) {
            const auto sched = build_schedule(to_json_value(spec).get<ScheduleSpec>());
            const auto zv = to_video<LatentTag>(z);
            const auto n = noise ? to_video<LatentTag>(*noise) : LatentVideo(zv.shape());
            return to_array(ddim_step(zv, to_video<LatentTag>(eps), Timestep{t}, sched, n));
        },
        py::arg("z"), py::arg("eps"), py::arg("t"), py::arg("spec") = py::dict(), py::arg("noise") = py::none());

    m.def(
        "generate",
        [](const py::dict& config, const std::filesystem::path& assets) {
            const auto cfg = fork_config(config);
            const auto p = make_pipeline(cfg, assets);
            MatchPair pair;
            {
                py::gil_scoped_release release;
                pair = generate_match_pair(p, cfg);
            }
            return py::make_tuple(to_array(pair.x_a), to_array(pair.x_b));
        },
        py::arg("config"), py::arg("assets") = std::filesystem::path());
    m.def(
        "generate_single",
        [](const py::dict& config, const py::object& prompt, const std::filesystem::path& assets) {
            const auto cfg = fork_config(config);
            const auto p = make_pipeline(cfg, assets);
            return to_array(generate_single(p, cfg, prompt_of(prompt), initial_latent(p, cfg)));
        },
        py::arg("config"), py::arg("prompt"), py::arg("assets") = std::filesystem::path());
    m.def(
        "v2v",
        [](const py::dict& config, int level, const std::filesystem::path& assets) {
            const auto cfg = fork_config(config);
            const auto r = baseline_v2v(make_pipeline(cfg, assets), cfg, level);
            return py::make_tuple(to_array(r.x_a), to_array(r.x_b));
        },
        py::arg("config"), py::arg("level"), py::arg("assets") = std::filesystem::path());
    m.def("assemble_matchcut", [](const Array& a, const Array& b, int cut) {
        return to_array(assemble_matchcut(to_video<PixelTag>(a), to_video<PixelTag>(b), cut));
    });

    py::class_<PySession>(m, "Session")
        .def(py::init<const py::dict&, std::filesystem::path>(), py::arg("config"),
             py::arg("assets") = std::filesystem::path())
        .def("joint", &PySession::joint)
        .def("preview", &PySession::preview, py::arg("branch") = "a")
        .def("intervene", &PySession::intervene, py::arg("spec"))
        .def("finalize", &PySession::finalize)
        .def("write", &PySession::write, py::arg("dir"));

    m.def("apply_tau", [](const Array& x, const py::dict& spec) {
        return to_array(apply_tau(to_video<PixelTag>(x), intervention_from_json(to_json_value(spec))));
    });

    m.def("ssim", [](const Array& x, const Array& y) { return ssim(to_video<PixelTag>(x), to_video<PixelTag>(y)); });
    m.def("perceptual_distance",
          [](const Array& x, const Array& y) { return perceptual_proxy(to_video<PixelTag>(x), to_video<PixelTag>(y)); });
    m.def("motion_consistency",
          [](const Array& x, const Array& y) { return motion_consistency(to_video<PixelTag>(x), to_video<PixelTag>(y)); });
    m.def(
        "evaluate",
        [](const Array& x_a, const Array& x_b, const py::object& prompt_a, const py::object& prompt_b,
           const std::filesystem::path& assets) {
            const auto probe = probe_or_null(assets);
            if (!probe) throw IoError("no probe.mctc in " + assets.string());
            PairInput in;
            in.label = "pair";
            in.x_a = to_video<PixelTag>(x_a);
            in.x_b = to_video<PixelTag>(x_b);
            in.prompt_a = prompt_of(prompt_a);
            in.prompt_b = prompt_of(prompt_b);
            EvalConfig ec;
            ec.adherence = probe.get();
            return from_json_value(evaluate_pairs({in}, ec).to_json());
        },
        py::arg("x_a"), py::arg("x_b"), py::arg("prompt_a"), py::arg("prompt_b"), py::arg("assets"));

    m.def(
        "render_scene",
        [](int class_id, std::uint64_t seed, int frames, int height, int width) {
            return to_array(render_scene(sample_scene(class_id, seed, ToyVideoShape{frames, height, width})));
        },
        py::arg("class_id"), py::arg("seed") = 0, py::arg("frames") = 16, py::arg("height") = 32, py::arg("width") = 32);
    m.def("num_classes", &num_toy_classes);

    m.def(
        "train_toy_assets",
        [](const std::filesystem::path& dir, const py::dict& config) {
            const auto cfg = to_json_value(config).get<ToyAssetsConfig>();
            json manifest;
            {
                py::gil_scoped_release release;
                manifest = train_toy_assets(dir, cfg);
            }
            return from_json_value(manifest);
        },
        py::arg("dir"), py::arg("config") = py::dict());

    m.def("save_video", [](const std::filesystem::path& path, const Array& x) { save_video(path, to_video<PixelTag>(x)); });
    m.def("load_video", [](const std::filesystem::path& path) { return to_array(load_video(path)); });
}
