#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>

#include "matchcut/harness.hpp"
#include "matchcut/image_io.hpp"
#include "matchcut/intervene.hpp"
#include "matchcut/service.hpp"
#include "matchcut/tensor_io.hpp"
#include "matchcut/toydata.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace matchcut;

namespace {

json read_json_arg(const std::string& arg) {
    if (!arg.empty() && (arg.front() == '{' || arg.front() == '[')) return json::parse(arg);
    if (!fs::exists(arg)) throw IoError("config not found: " + arg);
    return json::parse(read_text_file(arg));
}

json prompt_json(const std::string& v) {
    if (!v.empty() && std::all_of(v.begin(), v.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
        return std::stoi(v);
    const auto& classes = toy_classes();
    for (std::size_t i = 0; i < classes.size(); ++i)
        if (classes[i].name == v) return static_cast<int>(i);
    if (v == "null") return json{{"null", true}};
    throw ValidationError("prompt", "unknown toy class '" + v + "'");
}

/// ForkConfig fields as flags; values overlay the --config JSON.
struct ConfigFlags {
    std::string config;
    std::map<std::string, std::string> values;

    void add(CLI::App* app) {
        app->add_option("--config", config, "ForkConfig JSON file or inline JSON");
        for (const char* name : {"prompt_a", "prompt_b", "joint_steps", "total_steps", "guidance", "combine", "cfg_placement",
                                 "seed_init", "seed_path", "codec", "backbone", "frames", "height", "width", "cut_frame",
                                 "stochasticity", "beta_curve", "beta_start", "beta_end"})
            app->add_option(std::string("--") + name, values[name]);
    }

    json merged() const {
        json j = config.empty() ? json::object() : read_json_arg(config);
        for (const auto& [name, v] : values) {
            if (v.empty()) continue;
            if (name == "prompt_a" || name == "prompt_b") {
                j[name] = prompt_json(v);
            } else if (name == "combine" || name == "cfg_placement" || name == "codec" || name == "backbone") {
                j[name] = v;
            } else if (name == "stochasticity" || name == "beta_curve" || name == "beta_start" || name == "beta_end") {
                if (!j.contains("schedule")) j["schedule"] = json::object();
                j["schedule"][name] = name == "beta_curve" ? json(v) : json(std::stod(v));
            } else if (name == "guidance") {
                j[name] = std::stod(v);
            } else if (name == "total_steps") {
                j["total_steps"] = std::stoi(v);
                if (j.contains("schedule")) j["schedule"]["num_steps"] = std::stoi(v);
            } else if (name == "seed_init" || name == "seed_path") {
                j[name] = std::stoull(v);
            } else {
                j[name] = std::stoi(v);
            }
        }
        return j;
    }

    ForkConfig get() const {
        auto c = merged().get<ForkConfig>();
        c.validate();
        return c;
    }
};

void log_line(const std::string& s) { std::cerr << s << '\n'; }

int cmd_generate(const ConfigFlags& flags, const fs::path& assets, const fs::path& out, const std::string& trace_level) {
    const auto cfg = flags.get();
    const auto p = make_pipeline(cfg, assets);
    auto mp = generate_match_pair(p, cfg, trace_level_from_string(trace_level));
    write_generation(out, cfg, mp.x_a, mp.x_b, *load_probe(assets));
    mp.trace.save(out / "trace");
    write_text_file(out / "config.json", json(cfg).dump(1) + "\n");
    std::cout << read_text_file(out / "report.json");
    return 0;
}

int cmd_intervene(const fs::path& trace_dir, const std::string& spec_arg, const fs::path& assets, const fs::path& out) {
    const auto trace = GenerationTrace::load(trace_dir);
    const auto cfg = trace.config.get<ForkConfig>();
    const auto spec_json = read_json_arg(spec_arg);
    const auto base = spec_arg.front() == '{' ? fs::current_path() : fs::path(spec_arg).parent_path();
    const auto spec = intervention_from_json(spec_json, base);
    const auto p = make_pipeline(cfg, assets);
    auto mp = inject(p, trace, spec);
    write_generation(out, cfg, mp.x_a, mp.x_b, *load_probe(assets));
    mp.trace.save(out / "trace");
    write_text_file(out / "intervention.json", json(spec).dump(1) + "\n");
    std::cout << read_text_file(out / "report.json");
    return 0;
}

int cmd_evaluate(const fs::path& a, const fs::path& b, const std::string& pa, const std::string& pb, const fs::path& assets,
                 const fs::path& out, const std::string& ta, const std::string& tb) {
    PairInput in{"pair", load_video(a), load_video(b), json(prompt_json(pa)).get<PromptSpec>(),
                 json(prompt_json(pb)).get<PromptSpec>(), std::nullopt, std::nullopt, ""};
    if (!ta.empty()) in.track_a = tracklet_from_json(json::parse(read_text_file(ta)));
    if (!tb.empty()) in.track_b = tracklet_from_json(json::parse(read_text_file(tb)));
    const auto probe = load_probe(assets);
    auto report = evaluate_pairs({in}, EvalConfig{probe.get(), perceptual_proxy});
    const auto text = report.to_json().dump(1) + "\n";
    if (!out.empty()) {
        write_text_file(out, text);
        auto csv = out;
        csv.replace_extension(".csv");
        write_text_file(csv, report.to_csv());
    }
    std::cout << text;
    return 0;
}

int cmd_sweep(const std::string& spec_arg, const fs::path& out, const fs::path& assets) {
    auto spec = read_json_arg(spec_arg).get<ExperimentSpec>();
    if (!out.empty()) spec.out_dir = out;
    if (!assets.empty()) spec.assets_dir = assets;
    const auto result = run_experiment(spec, log_line);
    for (const auto& pt : result.points) {
        std::cout << pt.label;
        for (const auto& [name, s] : pt.aggregate) std::cout << "  " << name << '=' << s.mean;
        std::cout << '\n';
    }
    std::cout << "computed " << result.computed << " rows, " << result.failures << " failures; report in "
              << spec.out_dir.string() << '\n';
    return result.failures == 0 ? 0 : 3;
}

Service* g_service = nullptr;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"matchcut: fork sampling for match-cut video pairs"};
    app.require_subcommand(1);
    std::string assets = "assets";

    auto* train = app.add_subcommand("train-toy", "Train the toy backbones, codec and adherence probe");
    std::string train_out = "assets", train_config;
    std::optional<int> train_steps, train_clips;
    std::optional<std::uint64_t> train_seed;
    bool no_latent = false;
    train->add_option("--out", train_out, "Asset directory");
    train->add_option("--config", train_config, "ToyAssetsConfig JSON");
    train->add_option("--steps", train_steps, "Training steps per backbone");
    train->add_option("--train_clips", train_clips);
    train->add_option("--seed", train_seed);
    train->add_flag("--no_latent", no_latent, "Skip the latent-space backbone");

    auto* gen = app.add_subcommand("generate", "Generate one match-cut pair");
    ConfigFlags gen_flags;
    gen_flags.add(gen);
    std::string gen_out = "out", gen_trace = "fork";
    gen->add_option("--assets", assets);
    gen->add_option("--out", gen_out);
    gen->add_option("--trace", gen_trace, "fork | full");

    auto* itv = app.add_subcommand("intervene", "Apply an intervention at the fork point of a saved trace");
    std::string itv_trace, itv_spec, itv_out = "out_intervened";
    itv->add_option("--trace", itv_trace, "Trace directory written by generate")->required();
    itv->add_option("--spec", itv_spec, "InterventionSpec JSON file or inline JSON")->required();
    itv->add_option("--assets", assets);
    itv->add_option("--out", itv_out);

    auto* ev = app.add_subcommand("evaluate", "Score a pair of videos");
    std::string ev_a, ev_b, ev_pa, ev_pb, ev_out, ev_ta, ev_tb;
    ev->add_option("--a", ev_a)->required();
    ev->add_option("--b", ev_b)->required();
    ev->add_option("--prompt_a", ev_pa)->required();
    ev->add_option("--prompt_b", ev_pb)->required();
    ev->add_option("--track_a", ev_ta, "Tracklet JSON for a");
    ev->add_option("--track_b", ev_tb, "Tracklet JSON for b");
    ev->add_option("--assets", assets);
    ev->add_option("--out", ev_out, "Report JSON path (CSV written alongside)");

    auto* sw = app.add_subcommand("sweep", "Run an ExperimentSpec");
    std::string sw_spec, sw_out, sw_assets;
    sw->add_option("--config", sw_spec, "ExperimentSpec JSON file or inline JSON")->required();
    sw->add_option("--out", sw_out);
    sw->add_option("--assets", sw_assets);

    auto* as = app.add_subcommand("assemble", "Cut two videos together");
    std::string as_a, as_b, as_out;
    int as_cut = 8;
    as->add_option("--a", as_a)->required();
    as->add_option("--b", as_b)->required();
    as->add_option("--cut_frame", as_cut);
    as->add_option("--out", as_out)->required();

    auto* sv = app.add_subcommand("serve", "Run the HTTP session service");
    std::string sv_host = "127.0.0.1", sv_data = "service_data", sv_static;
    int sv_port = 8080, sv_workers = 2;
    sv->add_option("--host", sv_host);
    sv->add_option("--port", sv_port);
    sv->add_option("--assets", assets);
    sv->add_option("--data", sv_data);
    sv->add_option("--static", sv_static, "UI bundle directory");
    sv->add_option("--workers", sv_workers);

    auto* pl = app.add_subcommand("plot", "Regenerate plots of a sweep run directory");
    std::string pl_run;
    pl->add_option("--run", pl_run)->required();

    auto* rd = app.add_subcommand("render", "Render a toy scene with its ground-truth tracklet");
    int rd_class = 0, rd_mode = 0;
    std::uint64_t rd_seed = 0;
    std::string rd_out;
    rd->add_option("--class_id", rd_class);
    rd->add_option("--mode", rd_mode);
    rd->add_option("--seed", rd_seed);
    rd->add_option("--out", rd_out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            ToyAssetsConfig cfg;
            if (!train_config.empty()) cfg = read_json_arg(train_config).get<ToyAssetsConfig>();
            if (train_steps) cfg.backbone.steps = *train_steps;
            if (train_clips) cfg.train_clips = *train_clips;
            if (train_seed) cfg.seed = *train_seed;
            if (no_latent) cfg.latent_backbone = false;
            auto manifest = train_toy_assets(train_out, cfg, log_line);
            std::cout << "probe held-out score " << manifest["probe"]["held_out_mean_score_correct_class"] << ", pixel validation loss "
                      << manifest["pixel_backbone"]["validation_loss"] << '\n';
            return 0;
        }
        if (*gen) return cmd_generate(gen_flags, assets, gen_out, gen_trace);
        if (*itv) return cmd_intervene(itv_trace, itv_spec, assets, itv_out);
        if (*ev) return cmd_evaluate(ev_a, ev_b, ev_pa, ev_pb, assets, ev_out, ev_ta, ev_tb);
        if (*sw) return cmd_sweep(sw_spec, sw_out, sw_assets);
        if (*as) {
            save_video(as_out, assemble_matchcut(load_video(as_a), load_video(as_b), as_cut));
            return 0;
        }
        if (*sv) {
            Service service({assets, sv_data, sv_static, sv_workers});
            const int port = service.bind(sv_host, sv_port);
            g_service = &service;
            std::signal(SIGINT, [](int) {
                if (g_service) g_service->stop();
            });
            std::signal(SIGTERM, [](int) {
                if (g_service) g_service->stop();
            });
            std::cout << "listening on http://" << sv_host << ':' << port << std::endl;
            service.run();
            g_service = nullptr;
            return 0;
        }
        if (*pl) {
            render_plots(pl_run);
            return 0;
        }
        if (*rd) {
            const auto p = sample_scene(rd_class, rd_mode, rd_seed);
            save_video(rd_out, render_scene(p), json(p));
            fs::path track = rd_out;
            track.replace_extension(".track.json");
            write_text_file(track, to_json(trajectory_of(p)).dump() + "\n");
            return 0;
        }
    } catch (const ValidationError& e) {
        std::cerr << "invalid " << e.field() << ": " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
