#pragma once

// Local HTTP service for interactive fork sessions.
//
//   POST /sessions                         ForkConfig JSON -> 201 {session_id}
//   GET  /sessions/{id}                    session state
//   POST /sessions/{id}/joint              joint phase job (202 {job_id}; ?wait=1 runs inline, 200)
//   GET  /sessions/{id}/preview            PNG strip of the fork-point estimate
//                                          (?branch=a|b, ?frame=n for a single frame)
//   POST /sessions/{id}/uploads/{name}     raw PNG body, referenced by name from interventions
//   POST /sessions/{id}/intervene          InterventionSpec JSON -> preview metadata
//   POST /sessions/{id}/finalize           disjoint phase + artifacts job (?wait=1 as above)
//   GET  /sessions/{id}/artifacts          artifact names
//   GET  /sessions/{id}/artifacts/{name}   x_a.apng, x_b.apng, matchcut.apng, report.json
//   GET  /jobs/{id}                        {status: queued|running|done|failed, result, error}
//
// Errors are problem documents {type, title, status, detail, field}: 422 for
// invalid input, 404 for unknown ids, 409 for calls in the wrong phase.
// Phases: created -> joint_done -> intervened* -> finished.

#include <filesystem>
#include <memory>
#include <string>

namespace matchcut {

struct ServiceConfig {
    std::filesystem::path assets_dir;
    std::filesystem::path data_dir;    // sessions/<id>/ live here
    std::filesystem::path static_dir;  // optional UI bundle served at /
    int workers = 2;
};

class Service {
public:
    explicit Service(ServiceConfig cfg);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds to host:port (port 0 picks a free port) and returns the port.
    int bind(const std::string& host, int port);
    /// Serves until stop(); call after bind().
    void run();
    void stop();
    void wait_until_ready() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace matchcut
