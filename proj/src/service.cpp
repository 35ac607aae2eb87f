#include "matchcut/service.hpp"

#include <httplib.h>

#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <regex>
#include <thread>

#include "matchcut/harness.hpp"
#include "matchcut/image_io.hpp"
#include "matchcut/intervene.hpp"
#include "matchcut/tensor_io.hpp"

namespace matchcut {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class Phase { created, joint_done, intervened, finished };

std::string to_string(Phase p) {
    switch (p) {
        case Phase::created: return "created";
        case Phase::joint_done: return "joint_done";
        case Phase::intervened: return "intervened";
        case Phase::finished: return "finished";
    }
    return "created";
}

/// Raised inside handlers; turned into a problem document.
struct Problem {
    int status;
    std::string title;
    std::string detail;
    std::string field;
};

std::string random_token() {
    static std::mutex mu;
    static std::random_device rd;
    static std::mt19937_64 gen(rd());
    std::lock_guard lock(mu);
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(gen()),
                  static_cast<unsigned long long>(gen()));
    return buf;
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_problem(httplib::Response& res, const Problem& p) {
    json body = {{"type", "about:blank"}, {"title", p.title}, {"status", p.status}, {"detail", p.detail}};
    if (!p.field.empty()) body["field"] = p.field;
    res.status = p.status;
    res.set_content(body.dump(), "application/problem+json");
}

Problem problem_from(const std::exception& e) {
    if (auto v = dynamic_cast<const ValidationError*>(&e)) return {422, "invalid input", v->what(), v->field()};
    if (dynamic_cast<const ShapeError*>(&e)) return {422, "invalid input", e.what(), ""};
    if (dynamic_cast<const IoError*>(&e)) return {422, "missing or unreadable file", e.what(), ""};
    return {500, "internal error", e.what(), ""};
}

json parse_body(const httplib::Request& req) {
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        throw Problem{422, "invalid JSON", e.what(), "body"};
    }
}

bool wants_wait(const httplib::Request& req) {
    return req.has_param("wait") && req.get_param_value("wait") != "0";
}

struct Session {
    std::string id;
    ForkConfig cfg;
    fs::path dir;
    std::mutex mu;
    Phase phase = Phase::created;
    bool busy = false;
    std::optional<Pipeline> pipeline;
    GenerationTrace trace;
    std::optional<StagedFork> staged;
    json interventions = json::array();

    json state() const {
        json j = {{"session_id", id}, {"phase", to_string(phase)}, {"busy", busy}, {"config", cfg},
                  {"interventions", interventions}};
        if (phase == Phase::finished) j["artifacts"] = generation_artifacts();
        return j;
    }
};

struct Job {
    std::string id;
    std::string session_id;
    std::string kind;
    std::string status = "queued";
    json result;
    json error;
};

}  // namespace

struct Service::Impl {
    ServiceConfig cfg;
    httplib::Server server;
    std::mutex mu;
    std::map<std::string, std::shared_ptr<Session>> sessions;
    std::map<std::string, std::shared_ptr<Job>> jobs;

    std::mutex queue_mu;
    std::condition_variable queue_cv;
    std::deque<std::function<void()>> queue;
    std::vector<std::thread> workers;
    bool stopping = false;

    explicit Impl(ServiceConfig c) : cfg(std::move(c)) {
        fs::create_directories(cfg.data_dir / "sessions");
        for (int i = 0; i < std::max(1, cfg.workers); ++i) workers.emplace_back([this] { work(); });
        routes();
    }

    ~Impl() {
        {
            std::lock_guard lock(queue_mu);
            stopping = true;
        }
        queue_cv.notify_all();
        for (auto& w : workers) w.join();
    }

    void work() {
        for (;;) {
            std::function<void()> task;
            {
                std::unique_lock lock(queue_mu);
                queue_cv.wait(lock, [this] { return stopping || !queue.empty(); });
                if (queue.empty()) return;
                task = std::move(queue.front());
                queue.pop_front();
            }
            task();
        }
    }

    std::shared_ptr<Session> session(const httplib::Request& req) {
        std::lock_guard lock(mu);
        auto it = sessions.find(req.path_params.at("id"));
        if (it == sessions.end()) throw Problem{404, "unknown session", req.path_params.at("id"), "session_id"};
        return it->second;
    }

    /// Marks the session busy after checking the phase; throws 409 otherwise.
    void claim(Session& s, std::initializer_list<Phase> allowed, const char* op) {
        std::lock_guard lock(s.mu);
        bool ok = !s.busy;
        if (ok) ok = std::find(allowed.begin(), allowed.end(), s.phase) != allowed.end();
        if (!ok)
            throw Problem{409, "wrong phase", std::string(op) + " is not allowed in phase " + to_string(s.phase) + (s.busy ? " (busy)" : ""), "phase"};
        s.busy = true;
    }

    /// Runs `body` inline (wait) or as a queued job; the session is released either way.
    void run_op(httplib::Response& res, const std::shared_ptr<Session>& s, const std::string& kind, bool wait,
                std::function<json()> body) {
        auto release = [s] {
            std::lock_guard lock(s->mu);
            s->busy = false;
        };
        if (wait) {
            try {
                auto out = body();
                release();
                send_json(res, 200, out);
            } catch (...) {
                release();
                throw;
            }
            return;
        }
        auto job = std::make_shared<Job>();
        job->id = random_token();
        job->session_id = s->id;
        job->kind = kind;
        {
            std::lock_guard lock(mu);
            jobs[job->id] = job;
        }
        {
            std::lock_guard lock(queue_mu);
            queue.emplace_back([this, job, body = std::move(body), release] {
                set_job(*job, "running", json(), json());
                try {
                    auto out = body();
                    release();
                    set_job(*job, "done", out, json());
                } catch (const Problem& p) {
                    release();
                    set_job(*job, "failed", json(), {{"title", p.title}, {"detail", p.detail}, {"status", p.status}});
                } catch (const std::exception& e) {
                    release();
                    auto p = problem_from(e);
                    set_job(*job, "failed", json(), {{"title", p.title}, {"detail", p.detail}, {"status", p.status}, {"field", p.field}});
                }
            });
        }
        queue_cv.notify_one();
        send_json(res, 202, job_json(*job));
    }

    void set_job(Job& job, const std::string& status, json result, json error) {
        std::lock_guard lock(mu);
        job.status = status;
        job.result = std::move(result);
        job.error = std::move(error);
    }

    json job_json(const Job& job) {
        json j = {{"job_id", job.id}, {"session_id", job.session_id}, {"kind", job.kind}, {"status", job.status}};
        if (!job.result.is_null()) j["result"] = job.result;
        if (!job.error.is_null()) j["error"] = job.error;
        return j;
    }

    json preview_meta(const Session& s) const {
        return {{"session_id", s.id},
                {"phase", to_string(s.phase)},
                {"frames", s.cfg.frames},
                {"joint_steps", s.cfg.joint_steps},
                {"degenerate", s.cfg.joint_steps == 0},
                {"hybrid", s.cfg.joint_steps == s.cfg.total_steps()},
                {"interventions", s.interventions.size()},
                {"preview", "/sessions/" + s.id + "/preview"}};
    }

    template <class F>
    void handle(const httplib::Request& req, httplib::Response& res, F&& f) {
        try {
            f(req, res);
        } catch (const Problem& p) {
            send_problem(res, p);
        } catch (const std::exception& e) {
            send_problem(res, problem_from(e));
        }
    }

    void routes() {
        auto H = [this](auto f) {
            return [this, f](const httplib::Request& req, httplib::Response& res) { handle(req, res, f); };
        };

        server.Post("/sessions", H([this](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req);
            ForkConfig c;
            try {
                c = body.get<ForkConfig>();
            } catch (const json::exception& e) {
                throw Problem{422, "invalid config", e.what(), "config"};
            }
            c.validate();
            auto s = std::make_shared<Session>();
            s->id = random_token();
            s->cfg = c;
            s->dir = cfg.data_dir / "sessions" / s->id;
            fs::create_directories(s->dir / "uploads");
            write_text_file(s->dir / "config.json", json(c).dump(1) + "\n");
            {
                std::lock_guard lock(mu);
                sessions[s->id] = s;
            }
            send_json(res, 201, {{"session_id", s->id}, {"phase", "created"}});
        }));

        server.Get("/sessions/:id", H([this](const httplib::Request& req, httplib::Response& res) {
            auto s = session(req);
            std::lock_guard lock(s->mu);
            send_json(res, 200, s->state());
        }));

        server.Post("/sessions/:id/joint", H([this](const httplib::Request& req, httplib::Response& res) {
            auto s = session(req);
            claim(*s, {Phase::created}, "joint");
            run_op(res, s, "joint", wants_wait(req), [this, s] {
                auto p = make_pipeline(s->cfg, cfg.assets_dir);
                GenerationTrace tr;
                tr.config = s->cfg;
                tr.level = TraceLevel::fork;
                tr.total_steps = s->cfg.total_steps();
                tr.joint_steps = s->cfg.joint_steps;
                tr.z_init = initial_latent(p, s->cfg);
                auto joint = joint_phase(p, s->cfg, tr.z_init, &tr);
                tr.fork_latent = std::move(joint.fork_latent);
                tr.fork_clean = std::move(joint.fork_clean);
                auto staged = stage_fork(p, tr);
                std::lock_guard lock(s->mu);
                s->pipeline = std::move(p);
                s->trace = std::move(tr);
                s->staged = std::move(staged);
                s->phase = Phase::joint_done;
                return preview_meta(*s);
            });
        }));

        server.Get("/sessions/:id/preview", H([this](const httplib::Request& req, httplib::Response& res) {
            auto s = session(req);
            PixelVideo video;
            {
                std::lock_guard lock(s->mu);
                if (!s->staged) throw Problem{409, "wrong phase", "no preview before the joint phase", "phase"};
                const auto branch = req.has_param("branch") ? req.get_param_value("branch") : "a";
                if (branch != "a" && branch != "b") throw Problem{422, "invalid input", "branch must be a or b", "branch"};
                video = clamp01(branch == "a" ? s->staged->preview_a : s->staged->preview_b);
            }
            std::vector<std::uint8_t> png;
            if (req.has_param("frame")) {
                int f = -1;
                try {
                    f = std::stoi(req.get_param_value("frame"));
                } catch (const std::exception&) {
                }
                if (f < 0 || f >= video.shape().frames) throw Problem{422, "invalid input", "frame out of range", "frame"};
                png = encode_png_frame(video, f);
            } else {
                png = encode_png_frame(contact_sheet(std::span<const PixelVideo>(&video, 1), video.shape().frames), 0);
            }
            res.status = 200;
            res.set_content(std::string(png.begin(), png.end()), "image/png");
        }));

        server.Post("/sessions/:id/uploads/:name", H([this](const httplib::Request& req, httplib::Response& res) {
            auto s = session(req);
            const auto& name = req.path_params.at("name");
            static const std::regex ok(R"([A-Za-z0-9_.-]+\.png)");
            if (!std::regex_match(name, ok) || name.find("..") != std::string::npos)
                throw Problem{422, "invalid input", "upload names are [A-Za-z0-9_.-]+.png", "name"};
            const auto* data = reinterpret_cast<const std::uint8_t*>(req.body.data());
            try {
                decode_png_image(std::span<const std::uint8_t>(data, req.body.size()));
            } catch (const std::exception& e) {
                throw Problem{422, "invalid input", std::string("not a PNG image: ") + e.what(), "body"};
            }
            write_file_bytes(s->dir / "uploads" / name, std::span<const std::uint8_t>(data, req.body.size()));
            send_json(res, 201, {{"name", name}});
        }));

        server.Post("/sessions/:id/intervene", H([this](const httplib::Request& req, httplib::Response& res) {
            auto s = session(req);
            auto body = parse_body(req);
            claim(*s, {Phase::joint_done, Phase::intervened}, "intervene");
            try {
                auto spec = intervention_from_json(body, s->dir / "uploads");
                std::lock_guard lock(s->mu);
                auto staged = *s->staged;
                stage_intervention(staged, spec);
                s->staged = std::move(staged);
                s->interventions.push_back(spec);
                s->phase = Phase::intervened;
                s->busy = false;
                send_json(res, 200, preview_meta(*s));
            } catch (...) {
                std::lock_guard lock(s->mu);
                s->busy = false;
                throw;
            }
        }));

        server.Post("/sessions/:id/finalize", H([this](const httplib::Request& req, httplib::Response& res) {
            auto s = session(req);
            claim(*s, {Phase::joint_done, Phase::intervened}, "finalize");
            run_op(res, s, "finalize", wants_wait(req), [this, s] {
                auto out = resume_from_stage(*s->pipeline, s->cfg, s->trace, *s->staged);
                write_generation(s->dir / "artifacts", s->cfg, out.x_a, out.x_b, *load_probe(cfg.assets_dir));
                std::lock_guard lock(s->mu);
                s->phase = Phase::finished;
                return json{{"session_id", s->id}, {"phase", "finished"}, {"artifacts", generation_artifacts()}};
            });
        }));

        server.Get("/sessions/:id/artifacts", H([this](const httplib::Request& req, httplib::Response& res) {
            auto s = session(req);
            std::lock_guard lock(s->mu);
            send_json(res, 200, {{"artifacts", s->phase == Phase::finished ? json(generation_artifacts()) : json::array()}});
        }));

        server.Get("/sessions/:id/artifacts/:name", H([this](const httplib::Request& req, httplib::Response& res) {
            auto s = session(req);
            const auto& name = req.path_params.at("name");
            {
                std::lock_guard lock(s->mu);
                if (s->phase != Phase::finished) throw Problem{409, "wrong phase", "artifacts exist after finalize", "phase"};
            }
            const auto& names = generation_artifacts();
            if (std::find(names.begin(), names.end(), name) == names.end())
                throw Problem{404, "unknown artifact", name, "name"};
            const auto bytes = read_file_bytes(s->dir / "artifacts" / name);
            res.status = 200;
            res.set_content(std::string(bytes.begin(), bytes.end()),
                            name.ends_with(".json") ? "application/json" : "image/apng");
        }));

        server.Get("/jobs/:id", H([this](const httplib::Request& req, httplib::Response& res) {
            std::lock_guard lock(mu);
            auto it = jobs.find(req.path_params.at("id"));
            if (it == jobs.end()) throw Problem{404, "unknown job", req.path_params.at("id"), "job_id"};
            send_json(res, 200, job_json(*it->second));
        }));

        server.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); });

        if (!cfg.static_dir.empty()) server.set_mount_point("/", cfg.static_dir.string());
    }
};

Service::Service(ServiceConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {}

Service::~Service() { stop(); }

int Service::bind(const std::string& host, int port) {
    if (port == 0) {
        const int p = impl_->server.bind_to_any_port(host);
        if (p < 0) throw IoError("cannot bind " + host);
        return p;
    }
    if (!impl_->server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void Service::run() { impl_->server.listen_after_bind(); }

void Service::stop() {
    if (impl_) impl_->server.stop();
}

void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace matchcut
