#include <doctest.h>

#include <chrono>
#include <httplib.h>
#include <thread>

#include "../common.hpp"
#include "matchcut/harness.hpp"
#include "matchcut/image_io.hpp"
#include "matchcut/service.hpp"
#include "matchcut/tensor_io.hpp"

using namespace matchcut;
using nlohmann::json;

namespace {

struct Running {
    Service service;
    int port = 0;
    std::thread thread;

    explicit Running(const std::filesystem::path& data)
        : service(ServiceConfig{testing::assets_dir(), data, {}, 2}) {
        port = service.bind("127.0.0.1", 0);
        thread = std::thread([this] { service.run(); });
        service.wait_until_ready();
    }
    ~Running() {
        service.stop();
        thread.join();
    }
    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(300, 0);
        return c;
    }
};

json small_config(int K) {
    ForkConfig c;
    c.prompt_a = PromptSpec::toy(1);
    c.prompt_b = PromptSpec::toy(3);
    c.joint_steps = K;
    c.schedule.num_steps = 20;
    c.frames = 8;
    c.cut_frame = 4;
    c.seed_init = 21;
    c.seed_path = 22;
    return c;
}

std::string create(httplib::Client& c, const json& cfg) {
    auto r = c.Post("/sessions", cfg.dump(), "application/json");
    REQUIRE(r);
    REQUIRE(r->status == 201);
    return json::parse(r->body)["session_id"];
}

json wait_job(httplib::Client& c, const std::string& job) {
    for (int i = 0; i < 3000; ++i) {
        auto r = c.Get("/jobs/" + job);
        REQUIRE(r);
        auto j = json::parse(r->body);
        if (j["status"] == "done" || j["status"] == "failed") return j;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    FAIL("job did not finish");
    return {};
}

}  // namespace

TEST_CASE("session lifecycle, phases and errors") {
    Running srv(testing::scratch_dir("service_lifecycle"));
    auto c = srv.client();
    CHECK(c.Get("/health")->status == 200);

    auto bad = small_config(21);
    auto r = c.Post("/sessions", bad.dump(), "application/json");
    CHECK(r->status == 422);
    CHECK(json::parse(r->body)["field"] == "joint_steps");
    CHECK(c.Post("/sessions", "{not json", "application/json")->status == 422);

    const auto id = create(c, small_config(8));
    CHECK(create(c, small_config(8)) != id);
    CHECK(c.Get("/sessions/nope")->status == 404);
    CHECK(c.Get("/sessions/" + id + "/preview")->status == 409);
    CHECK(c.Post("/sessions/" + id + "/finalize?wait=1", "", "application/json")->status == 409);

    r = c.Post("/sessions/" + id + "/joint?wait=1", "", "application/json");
    REQUIRE(r->status == 200);
    auto meta = json::parse(r->body);
    CHECK(meta["phase"] == "joint_done");
    CHECK(meta["joint_steps"] == 8);
    CHECK(c.Post("/sessions/" + id + "/joint?wait=1", "", "application/json")->status == 409);

    r = c.Get("/sessions/" + id + "/preview?branch=b&frame=3");
    REQUIRE(r->status == 200);
    CHECK(r->get_header_value("Content-Type") == "image/png");
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(r->body.data());
    const auto frame = decode_png_image(std::span<const std::uint8_t>(bytes, r->body.size()));
    CHECK(frame.shape() == VideoShape{1, 3, 32, 32});
    CHECK(c.Get("/sessions/" + id + "/preview?frame=99")->status == 422);
    CHECK(c.Get("/sessions/" + id + "/preview?branch=c")->status == 422);

    r = c.Post("/sessions/" + id + "/intervene", R"({"kind":"mask_composite","mask":"missing.png"})", "application/json");
    CHECK(r->status == 422);
    PixelVideo small_mask({1, 1, 8, 8}, 1.0);
    const auto png = encode_png_frame(small_mask, 0);
    r = c.Post("/sessions/" + id + "/uploads/mask.png", std::string(png.begin(), png.end()), "image/png");
    CHECK(r->status == 201);
    CHECK(c.Post("/sessions/" + id + "/uploads/x.png", "garbage", "image/png")->status == 422);
    r = c.Post("/sessions/" + id + "/intervene", R"({"kind":"mask_composite","mask":"mask.png"})", "application/json");
    CHECK(r->status == 422);
    CHECK(json::parse(r->body)["field"] == "mask");
    CHECK(c.Post("/sessions/" + id + "/intervene", R"({"kind":"gamma","gamma":-1})", "application/json")->status == 422);

    const auto before = c.Get("/sessions/" + id + "/preview?branch=a&frame=0")->body;
    r = c.Post("/sessions/" + id + "/intervene", R"({"kind":"gamma","gamma":2.0,"branch_scope":"a_only"})", "application/json");
    REQUIRE(r->status == 200);
    CHECK(json::parse(r->body)["interventions"] == 1);
    const auto after_a = c.Get("/sessions/" + id + "/preview?branch=a&frame=0")->body;
    const auto x0 = decode_png_image(std::span(reinterpret_cast<const std::uint8_t*>(before.data()), before.size()));
    const auto x1 = decode_png_image(std::span(reinterpret_cast<const std::uint8_t*>(after_a.data()), after_a.size()));
    for (std::size_t i = 0; i < x0.size(); i += 37) CHECK(std::abs(x1[i] - x0[i] * x0[i]) <= 1.0 / 255.0 + 1e-9);

    CHECK(json::parse(c.Get("/sessions/" + id + "/artifacts")->body)["artifacts"].empty());
    CHECK(c.Get("/sessions/" + id + "/artifacts/x_a.apng")->status == 409);
    r = c.Post("/sessions/" + id + "/finalize?wait=1", "", "application/json");
    REQUIRE(r->status == 200);
    const auto listed = json::parse(c.Get("/sessions/" + id + "/artifacts")->body)["artifacts"];
    CHECK(listed == json(generation_artifacts()));
    for (const auto& name : generation_artifacts()) CHECK(c.Get("/sessions/" + id + "/artifacts/" + name)->status == 200);
    CHECK(c.Get("/sessions/" + id + "/artifacts/secret.txt")->status == 404);
    CHECK(c.Post("/sessions/" + id + "/finalize?wait=1", "", "application/json")->status == 409);
    CHECK(c.Post("/sessions/" + id + "/intervene", R"({"kind":"identity"})", "application/json")->status == 409);
    CHECK(json::parse(c.Get("/sessions/" + id)->body)["phase"] == "finished");
}

TEST_CASE("asynchronous jobs and interleaved sessions stay isolated") {
    Running srv(testing::scratch_dir("service_jobs"));
    auto c = srv.client();
    const auto s1 = create(c, small_config(5));
    auto cfg2 = small_config(12);
    cfg2["seed_init"] = 99;
    const auto s2 = create(c, cfg2);

    auto r1 = c.Post("/sessions/" + s1 + "/joint", "", "application/json");
    auto r2 = c.Post("/sessions/" + s2 + "/joint", "", "application/json");
    REQUIRE(r1->status == 202);
    REQUIRE(r2->status == 202);
    CHECK(wait_job(c, json::parse(r1->body)["job_id"])["status"] == "done");
    CHECK(wait_job(c, json::parse(r2->body)["job_id"])["status"] == "done");
    CHECK(c.Get("/jobs/unknown")->status == 404);

    CHECK(c.Post("/sessions/" + s2 + "/intervene", R"({"kind":"gamma","gamma":0.5})", "application/json")->status == 200);
    r1 = c.Post("/sessions/" + s1 + "/finalize", "", "application/json");
    r2 = c.Post("/sessions/" + s2 + "/finalize", "", "application/json");
    CHECK(wait_job(c, json::parse(r1->body)["job_id"])["status"] == "done");
    CHECK(wait_job(c, json::parse(r2->body)["job_id"])["status"] == "done");

    // Each session reproduces its own offline generation.
    const auto a1 = c.Get("/sessions/" + s1 + "/artifacts/x_a.apng")->body;
    const auto cfg1 = small_config(5).get<ForkConfig>();
    const auto p = make_pipeline(cfg1, testing::assets_dir());
    const auto pair = generate_match_pair(p, cfg1);
    const auto want = encode_apng(pair.x_a);
    CHECK(a1 == std::string(want.begin(), want.end()));
    CHECK(json::parse(c.Get("/sessions/" + s2)->body)["interventions"].size() == 1);
}

TEST_CASE("service artifacts match the library byte for byte") {
    const auto data = testing::scratch_dir("service_parity");
    Running srv(data);
    auto c = srv.client();
    const json cfg_json = small_config(6);
    const auto id = create(c, cfg_json);
    REQUIRE(c.Post("/sessions/" + id + "/joint?wait=1", "", "application/json")->status == 200);
    REQUIRE(c.Post("/sessions/" + id + "/intervene", R"({"kind":"color_jitter","seed":4})", "application/json")->status == 200);
    REQUIRE(c.Post("/sessions/" + id + "/finalize?wait=1", "", "application/json")->status == 200);

    const auto cfg = cfg_json.get<ForkConfig>();
    const auto p = make_pipeline(cfg, testing::assets_dir());
    const auto ref = generate_match_pair(p, cfg);
    InterventionSpec spec;
    spec.kind = InterventionKind::color_jitter;
    spec.seed = 4;
    const auto out = inject(p, ref.trace, spec);
    const auto offline = data / "offline";
    write_generation(offline, cfg, out.x_a, out.x_b, *load_probe(testing::assets_dir()));
    for (const auto& name : generation_artifacts()) {
        const auto bytes = read_file_bytes(offline / name);
        CHECK_MESSAGE(c.Get("/sessions/" + id + "/artifacts/" + name)->body == std::string(bytes.begin(), bytes.end()), name);
    }
}
