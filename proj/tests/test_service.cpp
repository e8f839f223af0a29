#include "traplab/image.hpp"
#include "traplab/io.hpp"
#include "traplab/service.hpp"
#include "traplab/synthetic.hpp"

#include "test_util.hpp"

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <thread>

using namespace traplab;
using test::TempDir;
using nlohmann::json;

namespace {

struct Fixture {
  TempDir dir{"service"};
  PoolData data;
  std::atomic<bool> hold{false};

  Fixture() {
    MixtureConfig m;
    m.classes = 3;
    m.dim = 4;
    m.pool_size = 300;
    m.holdout_size = 40;
    m.seed = 2;
    data = make_gaussian_mixture(m);
    write_pool_dir(dir / "pool", data);
    std::filesystem::create_directories(dir / "crops");
    write_png(RgbImage(8, 8, 100), dir / "crops" / "p0.png");
  }

  // Commits read the clock; holding it keeps a commit in the training state.
  ServiceConfig service_config() {
    return {dir / "sessions", dir / "crops", [this] {
              while (hold) std::this_thread::sleep_for(std::chrono::milliseconds(1));
              return 0.0;
            }};
  }

  std::string truth(const std::string& id) const { return data.truth->at(id); }
};

LoopConfig service_loop(Index initial = 100, Index batch = 20, Index budget = 160) {
  LoopConfig cfg;
  cfg.initial_random = initial;
  cfg.batch_size = batch;
  cfg.finetune_interval = 40;
  cfg.finetune_start = 140;
  cfg.budget = budget;
  cfg.seed = 9;
  cfg.architecture = {{8}, 4, Activation::Relu, 1.0};
  cfg.embedding.epochs = 3;
  cfg.classifier.epochs = 5;
  cfg.classifier_hidden = 8;
  return cfg;
}

std::vector<LabelSubmission> answers_for(const Fixture& f, const std::vector<QueueItem>& items, std::size_t from,
                                         std::size_t to) {
  std::vector<LabelSubmission> out;
  for (std::size_t k = from; k < to; ++k) out.push_back({items[k].crop_id, f.truth(items[k].crop_id), "t", {}});
  return out;
}

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("queue shrinks as labels arrive and the last one starts training") {
    Fixture f;
    LabelService service(f.service_config());
    const std::string id = service.create_session(f.dir / "pool", service_loop());
    CHECK(id == "s1");
    auto queue = service.queue(id);
    REQUIRE(queue.size() == 100);
    CHECK(queue[0].image == "/crops/" + queue[0].crop_id + ".png");
    CHECK(queue[0].batch_id == 0);

    auto result = service.submit(id, answers_for(f, queue, 0, 40));
    CHECK(result.accepted == 40);
    CHECK(service.queue(id).size() == 60);
    CHECK(service.progress(id).state == Phase::AwaitingLabels);

    // Resubmitting is a no-op; a different label is a conflict.
    result = service.submit(id, answers_for(f, queue, 0, 1));
    CHECK(result.accepted == 0);
    CHECK(result.items[0].status == ItemStatus::Duplicate);
    const std::string other = f.truth(queue[0].crop_id) == "c0" ? "c1" : "c0";
    result = service.submit(id, {{queue[0].crop_id, other, "t", {}}});
    CHECK(result.items[0].status == ItemStatus::Conflict);
    CHECK(result.has_conflict());

    // Per-item rejections leave the session untouched.
    result = service.submit(id, {{"nope", 0, "t", {}}, {queue[50].crop_id, 7, "t", {}}, {queue[50].crop_id, "lion", "t", {}}});
    CHECK(result.items[0].status == ItemStatus::NotFound);
    CHECK(result.items[1].status == ItemStatus::Invalid);
    CHECK(result.items[2].status == ItemStatus::NotFound);
    std::string outside;
    for (const auto& pid : f.data.pool.ids)
      if (std::none_of(queue.begin(), queue.end(), [&](const QueueItem& q) { return q.crop_id == pid; })) {
        outside = pid;
        break;
      }
    CHECK(service.submit(id, {{outside, 0, "t", {}}}).items[0].status == ItemStatus::NotFound);
    CHECK(service.queue(id).size() == 60);
    CHECK(service.progress(id).labels_acquired == 0);

    f.hold = true;
    result = service.submit(id, answers_for(f, queue, 40, 100));
    CHECK(result.accepted == 60);
    CHECK(service.progress(id).state == Phase::Training);
    CHECK(service.queue(id).empty());
    f.hold = false;
    service.wait_idle(id);
    const auto p = service.progress(id);
    CHECK(p.state == Phase::AwaitingLabels);
    CHECK(p.labels_acquired == 100);
    CHECK(p.curve.size() == 1);
    CHECK(service.queue(id).size() == 20);
    CHECK(service.queue(id)[0].batch_id == 1);

    // A retry for the committed batch is still idempotent.
    auto retry = answers_for(f, queue, 0, 1);
    retry[0].batch_id = 0;
    CHECK(service.submit(id, retry).items[0].status == ItemStatus::Duplicate);
    retry[0].label = other;
    CHECK(service.submit(id, retry).items[0].status == ItemStatus::Conflict);
  }

  TEST_CASE("labels through the service match the simulated oracle") {
    Fixture f;
    LabelService service(f.service_config());
    const LoopConfig cfg = service_loop(40, 20, 120);
    const std::string id = service.create_session(f.dir / "pool", cfg, std::nullopt, std::string("equiv"));
    Session sim = Session::create(make_session_data(f.data), cfg, std::nullopt, [] { return 0.0; });
    SimulatedOracle oracle(*f.data.truth, *f.data.classes);
    while (sim.phase() != Phase::Done) {
      const auto queue = service.queue(id);
      std::vector<std::string> ids;
      for (const auto& q : queue) ids.push_back(q.crop_id);
      REQUIRE(ids == sim.pending_ids());
      // Answer in two out-of-order chunks, as a human might.
      service.submit(id, answers_for(f, queue, queue.size() / 2, queue.size()));
      service.submit(id, answers_for(f, queue, 0, queue.size() / 2));
      service.wait_idle(id);
      sim.step(oracle);
    }
    CHECK(service.progress(id).state == Phase::Done);
    CHECK(service.queue(id).empty());
    CHECK(read_text_file(f.dir / "sessions" / "equiv" / "state.json") == sim.save());
    CHECK(service.curve_csv(id) == format_curve_csv(sim.history()));
  }

  TEST_CASE("sessions reopen from disk") {
    Fixture f;
    std::vector<QueueItem> queue;
    {
      LabelService service(f.service_config());
      const std::string id = service.create_session(f.dir / "pool", service_loop());
      queue = service.queue(id);
      service.submit(id, answers_for(f, queue, 0, 10));
    }
    LabelService reopened(f.service_config());
    CHECK(reopened.open_existing() == std::vector<std::string>{"s1"});
    CHECK(reopened.queue("s1").size() == 90);
    CHECK_THROWS_AS(reopened.queue("s2"), NotFoundError);
    CHECK_THROWS_AS(reopened.create_session(f.dir / "pool", service_loop(), std::nullopt, std::string("s1")),
                    ConflictError);
    CHECK_THROWS_AS(reopened.create_session(f.dir / "pool", service_loop(), std::nullopt, std::string("../x")),
                    ValidationError);
    CHECK(reopened.classes("s1") == std::vector<std::string>{"c0", "c1", "c2"});
  }

  TEST_CASE("crop images are served by validated name") {
    Fixture f;
    LabelService service(f.service_config());
    const auto png = service.crop_png("p0");
    CHECK(decode_png(png) == RgbImage(8, 8, 100));
    CHECK_THROWS_AS(service.crop_png("p1"), NotFoundError);
    CHECK_THROWS_AS(service.crop_png("../pool/classes"), NotFoundError);
  }

  TEST_CASE("submission body parsing") {
    const auto subs = parse_submissions(json::parse(R"({"labels": [{"crop_id": "a", "label": 2, "batch_id": 4},
                                                                   {"crop_id": "b", "label": "zebra", "submitter": "kim"}]})"));
    REQUIRE(subs.size() == 2);
    CHECK(std::get<int>(subs[0].label) == 2);
    CHECK(*subs[0].batch_id == 4);
    CHECK(std::get<std::string>(subs[1].label) == "zebra");
    CHECK(parse_submissions(json::parse(R"([{"crop_id": "a", "label": 0}])")).size() == 1);
    CHECK_THROWS_AS(parse_submissions(json::parse(R"({"labels": [{"crop_id": "a"}]})")), ValidationError);
    CHECK_THROWS_AS(parse_submissions(json::parse(R"({"labels": [{"crop_id": "a", "label": 1.5}]})")),
                    ValidationError);
    CHECK_THROWS_AS(parse_submissions(json::parse(R"({"items": []})")), ValidationError);
  }

  TEST_CASE("HTTP endpoints") {
    Fixture f;
    LabelService service(f.service_config());
    httplib::Server server;
    mount_routes(server, service);
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    httplib::Client client("127.0.0.1", port);

    const json create{{"pool", (f.dir / "pool").string()}, {"config", to_json(service_loop())}, {"id", "web"}};
    auto res = client.Post("/sessions", create.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 201);
    CHECK(json::parse(res->body)["id"] == "web");
    res = client.Post("/sessions", create.dump(), "application/json");
    CHECK(res->status == 409);
    res = client.Post("/sessions", R"({"pool": "x", "config": {"budjet": 5}})", "application/json");
    CHECK(res->status == 400);
    res = client.Post("/sessions", "{not json", "application/json");
    CHECK(res->status == 400);

    res = client.Get("/sessions/web/queue");
    REQUIRE(res->status == 200);
    const json queue = json::parse(res->body)["items"];
    REQUIRE(queue.size() == 100);
    const std::string first = queue[0]["crop_id"];
    CHECK(queue[0]["image"] == "/crops/" + first + ".png");
    CHECK(queue[0]["batch_id"] == 0);

    const json good{{"labels", {{{"crop_id", first}, {"label", f.truth(first)}, {"batch_id", 0}}}}};
    res = client.Post("/sessions/web/labels", good.dump(), "application/json");
    CHECK(res->status == 200);
    CHECK(json::parse(res->body)["accepted"] == 1);
    res = client.Post("/sessions/web/labels", good.dump(), "application/json");
    CHECK(res->status == 200);
    CHECK(json::parse(res->body)["accepted"] == 0);
    CHECK(json::parse(res->body)["results"][0]["status"] == "duplicate");
    const json bad{{"labels", {{{"crop_id", first}, {"label", f.truth(first) == "c0" ? 1 : 0}}}}};
    res = client.Post("/sessions/web/labels", bad.dump(), "application/json");
    CHECK(res->status == 409);
    CHECK(json::parse(res->body)["results"][0]["status"] == "conflict");
    res = client.Post("/sessions/web/labels", R"({"labels": [{"crop_id": "zz", "label": 0}]})", "application/json");
    CHECK(res->status == 200);
    CHECK(json::parse(res->body)["results"][0]["status"] == "not_found");
    res = client.Post("/sessions/web/labels", R"({"labels": 3})", "application/json");
    CHECK(res->status == 400);

    res = client.Get("/sessions/web/progress");
    REQUIRE(res->status == 200);
    const json progress = json::parse(res->body);
    CHECK(progress["state"] == "awaiting_labels");
    CHECK(progress["labels_acquired"] == 0);
    CHECK(progress["budget"] == 160);
    CHECK(progress["curve"].empty());

    res = client.Get("/sessions/web/classes");
    CHECK(json::parse(res->body)["classes"][2] == json{{"index", 2}, {"name", "c2"}});
    res = client.Get("/sessions/web/curve.csv");
    CHECK(res->body == "labels,accuracy,wall_time_s\n");
    CHECK(client.Get("/sessions/nope/queue")->status == 404);
    res = client.Get("/crops/p0.png");
    CHECK(res->status == 200);
    CHECK(res->get_header_value("Content-Type") == "image/png");
    CHECK(client.Get("/crops/p9.png")->status == 404);

    server.stop();
    thread.join();
  }
}
