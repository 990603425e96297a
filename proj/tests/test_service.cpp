#include "doctest.h"

#include <fstream>

#include "support.hpp"
#include "teachrec/error.hpp"
#include "teachrec/service.hpp"

// after Eigen: <resolv.h> defines a _res macro
#include "httplib.h"

using namespace teachrec;
using namespace testing;
using nlohmann::json;

namespace {

struct Harness {
  TempDir dir;
  AppConfig config;
  EntityTable students = table({"gender"}, {{"s1", {"F"}}, {"s2", {"M"}}, {"s3", {"F"}}});
  EntityTable teachers = table(
      {"gender"}, {{"tA", {"F"}}, {"tB", {"M"}}, {"tC", {"F"}}, {"tD", {"M"}}, {"tNew", {"F"}}});
  std::vector<CourseRecord> courses;
  std::vector<OutcomeRecord> outcomes;

  Harness() {
    config.model_path = dir.path / "model.bin";
    config.event_log_path = dir.path / "events.jsonl";
    config.k = 3;
    config.gbdt.n_trees = 10;
    config.gbdt.min_samples_leaf = 1;
    add_courses(courses, "s1", "tA", 5, 0);
    add_courses(courses, "s2", "tB", 1, 0);
    add_courses(courses, "s2", "tC", 6, 3);
    add_courses(courses, "s3", "tD", 2, 0);
    outcomes = {outcome("s1", Outcome::Completed, day(10)),
                outcome("s2", Outcome::Completed, day(12)),
                outcome("s3", Outcome::Dropped, day(4))};
  }

  RecommendationService make() const {
    return RecommendationService(config, students, teachers, courses, outcomes);
  }
};

json course_event(const std::string& id, const std::string& s, const std::string& t,
                  const std::string& when) {
  return {{"event_id", id},   {"type", "course"},  {"student_id", s},
          {"teacher_id", t},  {"timestamp", when}, {"duration_minutes", 45}};
}

json outcome_event(const std::string& id, const std::string& s, const std::string& outcome) {
  return {{"event_id", id},
          {"type", "outcome"},
          {"student_id", s},
          {"outcome", outcome},
          {"decided_at", "2024-03-01T00:00:00Z"}};
}

}  // namespace

TEST_CASE("config from json") {
  const auto c = AppConfig::from_json(R"({
    "data": {"courses": "logs/c.csv"},
    "boost": {"alpha": 0.05, "delta": 50},
    "k": 20,
    "split": {"holdout_pairs": 10},
    "gbdt": {"n_trees": 5},
    "serve": {"cold_start": false}
  })",
                                      "/base");
  CHECK(c.courses_path == std::filesystem::path("/base/logs/c.csv"));
  CHECK(c.outcomes_path == std::filesystem::path("/base/outcomes.csv"));
  CHECK(c.alpha == 0.05);
  CHECK(c.beta == 1.0);
  CHECK(c.delta == 50);
  CHECK(c.k == 20);
  CHECK(c.holdout_pairs == 10);
  CHECK(c.gbdt.n_trees == 5);
  CHECK_FALSE(c.cold_start);
  CHECK(c.resolved_schema_path() == std::filesystem::path("/base/model.bin.schema.json"));

  const auto again = AppConfig::from_json(c.to_json());
  CHECK(again.to_json() == c.to_json());

  CHECK_THROWS_AS(AppConfig::from_json(R"({"boost": {"alpah": 0.1}})"), InvalidArgument);
  CHECK_THROWS_AS(AppConfig::from_json(R"({"kk": 3})"), InvalidArgument);
  CHECK_THROWS_AS(AppConfig::from_json(R"({"k": 0})"), InvalidArgument);
  CHECK_THROWS_AS(AppConfig::from_json(R"({"boost": {"alpha": 0}})"), InvalidArgument);
  CHECK_THROWS_AS(AppConfig::from_json("{not json"), InvalidArgument);

  CHECK(parse_bind_address("0.0.0.0:9000") == std::pair<std::string, int>{"0.0.0.0", 9000});
  CHECK_THROWS_AS(parse_bind_address("localhost"), InvalidArgument);
  CHECK_THROWS_AS(parse_bind_address("localhost:http"), InvalidArgument);
}

TEST_CASE("event parsing and replay") {
  const auto e = parse_event(course_event("e1", "s9", "tA", "2024-02-01T10:00:00Z"));
  CHECK(e.event_id == "e1");
  REQUIRE(e.is_course());
  CHECK(std::get<CourseRecord>(e.payload).teacher == TeacherId("tA"));
  CHECK(parse_event(to_json(e)).event_id == "e1");

  CHECK_THROWS_AS(parse_event(json{{"type", "course"}}), InvalidArgument);
  CHECK_THROWS_AS(parse_event(course_event("e2", "s9", "tA", "tomorrow")), InvalidArgument);
  CHECK_THROWS_AS(parse_event(outcome_event("e3", "s9", "maybe")), InvalidArgument);
  auto wrong_type = course_event("e4", "s9", "tA", "2024-02-01T10:00:00Z");
  wrong_type["type"] = "refund";
  CHECK_THROWS_AS(parse_event(wrong_type), InvalidArgument);

  TempDir dir;
  EventLog log(dir.path / "ev.jsonl");
  CHECK(log.read_all().empty());
  const auto c1 = parse_event(course_event("e1", "s9", "tA", "2024-02-01T10:00:00Z"));
  const auto o1 = parse_event(outcome_event("e2", "s9", "dropped"));
  log.append(c1);
  log.append(o1);
  const auto events = log.read_all();
  REQUIRE(events.size() == 2);

  std::vector<CourseRecord> base;
  add_courses(base, "s1", "tA", 2, 0);
  const auto replayed = replay(base, {}, events);
  auto all = base;
  all.push_back(std::get<CourseRecord>(c1.payload));
  const auto direct = InteractionStore::ingest(all, {std::get<OutcomeRecord>(o1.payload)});
  CHECK(replayed == direct);

  {
    std::ofstream out(dir.path / "ev.jsonl", std::ios::app);
    out << "{broken\n";
  }
  try {
    (void)log.read_all();
    FAIL("expected IngestError");
  } catch (const IngestError& err) {
    CHECK(std::string(err.what()).find("ev.jsonl:3") != std::string::npos);
  }
}

TEST_CASE("no model means 503 with Retry-After") {
  Harness h;
  auto service = h.make();
  service.start();
  const auto r = service.recommend(json{{"student_id", "s1"}});
  CHECK(r.status == 503);
  CHECK(r.body["code"] == "model_not_loaded");
  REQUIRE(r.retry_after_seconds);
  CHECK(*r.retry_after_seconds > 0);
  CHECK(service.health().body["model_loaded"] == false);
  CHECK_THROWS_AS(service.load_model(), Error);  // no files yet
}

TEST_CASE("recommend, ingest and refresh") {
  Harness h;
  auto service = h.make();
  service.start();
  service.train_model();
  CHECK(std::filesystem::exists(h.config.model_path));
  CHECK(std::filesystem::exists(h.config.resolved_schema_path()));

  const auto r = service.recommend(json{{"student_id", "s1"}});
  REQUIRE(r.status == 200);
  CHECK(r.body["student_id"] == "s1");
  CHECK(r.body["cold_student"] == false);
  const auto& entries = r.body["entries"];
  CHECK(entries.size() == 3);  // k from config
  for (const auto& e : entries) {
    CHECK(e["teacher_id"] != "tA");  // already taught s1
    CHECK(e["combined_score"].get<double>() ==
          doctest::Approx(e["model_score"].get<double>() + e["boost"].get<double>()));
  }
  CHECK(service.recommend(json{{"student_id", "s1"}, {"k", 1}}).body["entries"].size() == 1);
  CHECK(service.recommend(json{{"student_id", "s1"}, {"k", 0}}).status == 400);
  CHECK(service.recommend(json{{"student_id", 5}}).status == 400);
  CHECK(service.recommend(json::array()).status == 400);

  // a course posted now shows up in Z only after refresh
  const auto before = service.store()->teacher_total(TeacherId("tB"));
  const auto accepted = service.ingest(course_event("e1", "s1", "tB", "2024-02-01T10:00:00Z"));
  CHECK(accepted.status == 202);
  CHECK(accepted.body["event_id"] == "e1");
  CHECK(service.store()->teacher_total(TeacherId("tB")) == before);
  const auto refreshed = service.refresh(json::object());
  CHECK(refreshed.status == 200);
  CHECK(service.store()->teacher_total(TeacherId("tB")) == before + 1);
  CHECK(refreshed.body["courses"] == h.courses.size() + 1);

  CHECK(service.ingest(course_event("e1", "s1", "tC", "2024-02-02T10:00:00Z")).status == 409);
  const auto dup = service.ingest(course_event("e2", "s1", "tB", "2024-02-01T10:00:00Z"));
  CHECK(dup.status == 409);
  CHECK(dup.body["code"] == "duplicate_course");
  const auto ghost = service.ingest(outcome_event("e3", "ghost", "completed"));
  CHECK(ghost.status == 400);
  CHECK(ghost.body["code"] == "unknown_student");
  CHECK(service.ingest(outcome_event("e4", "s1", "dropped")).status == 409);
  const auto bad = service.ingest(json{{"event_id", "e5"}});
  CHECK(bad.status == 400);
  CHECK(bad.body["code"] == "schema_violation");

  // the event log survives a restart
  auto restarted = h.make();
  restarted.start();
  CHECK(restarted.store()->teacher_total(TeacherId("tB")) == before + 1);
  CHECK(restarted.ingest(course_event("e1", "s2", "tA", "2024-02-03T10:00:00Z")).status == 409);
}

TEST_CASE("serving is deterministic apart from the timestamp") {
  Harness a, b;
  auto first = a.make();
  auto second = b.make();
  first.start();
  second.start();
  first.train_model();
  second.train_model();
  for (const char* s : {"s1", "s2", "s3"}) {
    auto x = first.recommend(json{{"student_id", s}}).body;
    auto y = first.recommend(json{{"student_id", s}}).body;
    auto z = second.recommend(json{{"student_id", s}}).body;
    REQUIRE(x.contains("generated_at"));
    for (auto* body : {&x, &y, &z}) body->erase("generated_at");
    CHECK(x == y);
    CHECK(x == z);
  }
}

TEST_CASE("unknown students and candidate exhaustion") {
  Harness h;
  h.config.cold_start = false;
  auto strict = h.make();
  strict.start();
  strict.train_model();
  const auto r = strict.recommend(json{{"student_id", "nobody"}});
  CHECK(r.status == 404);
  CHECK(r.body["code"] == "unknown_student");

  Harness open;
  auto service = open.make();
  service.start();
  service.train_model();
  const auto cold = service.recommend(json{{"student_id", "nobody"}});
  CHECK(cold.status == 200);
  CHECK(cold.body["cold_student"] == true);

  service.set_candidate_filter(
      [](const StudentId&, const TeacherId& t) { return t == TeacherId("tA"); });
  const auto none = service.recommend(json{{"student_id", "s1"}});
  CHECK(none.status == 409);
  CHECK(none.body["code"] == "no_candidates");
}

TEST_CASE("metrics over served slates") {
  Harness h;
  auto service = h.make();
  service.start();
  service.train_model();
  CHECK(service.metrics().status == 409);
  service.set_candidate_filter([](const StudentId& s, const TeacherId& t) {
    return s == StudentId("s1") ? t == TeacherId("tB") : t == TeacherId("tNew");
  });
  CHECK(service.recommend(json{{"student_id", "s1"}}).status == 200);
  const auto one = service.metrics();
  CHECK(one.status == 409);
  CHECK(one.body["code"] == "insufficient_slates");
  CHECK(service.recommend(json{{"student_id", "s2"}}).status == 200);
  const auto m = service.metrics();
  REQUIRE(m.status == 200);
  CHECK(m.body["diversity"] == 1.0);
  CHECK(m.body["slate_count"] == 2);
  // every teacher here has fewer than delta courses
  CHECK(m.body["new_teacher_ratio"] == 1.0);
}

TEST_CASE("model files round trip") {
  Harness h;
  auto service = h.make();
  service.start();
  const auto a = service.train_model();
  const auto bytes_a = a.model.serialize();
  const auto loaded = load_model_files(h.config.model_path, h.config.resolved_schema_path());
  CHECK(loaded.model.serialize() == bytes_a);
  CHECK(loaded.schema == a.schema);
  CHECK(loaded.version == model_version(a.model));
  CHECK(service.train_model().model.serialize() == bytes_a);  // same data, same bytes

  service.load_model();
  CHECK(service.health().body["model_version"] == loaded.version);
  CHECK(service.refresh(json{{"reload_model", true}}).status == 200);

  // a schema from different tables is refused
  const auto other = build_schema(table({"age"}, {{"x", {"3"}}}), h.teachers, {});
  {
    std::ofstream out(h.config.resolved_schema_path());
    out << other.to_json();
  }
  CHECK_THROWS_AS(load_model_files(h.config.model_path, h.config.resolved_schema_path()),
                  SchemaMismatch);
  const auto failed = service.refresh(json{{"reload_model", true}});
  CHECK(failed.status == 500);
  // the previous model keeps serving
  CHECK(service.recommend(json{{"student_id", "s1"}}).status == 200);
}

TEST_CASE("http front end") {
  Harness h;
  auto service = h.make();
  service.start();
  HttpServer server(service);
  const int port = server.start_background("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client client("127.0.0.1", port);

  auto res = client.Get("/healthz");
  REQUIRE(res);
  CHECK(res->status == 200);

  res = client.Post("/v1/recommendations", R"({"student_id":"s1"})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 503);
  CHECK(res->has_header("Retry-After"));

  res = client.Post("/v1/refresh", R"({"retrain":true})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);

  res = client.Post("/v1/recommendations", R"({"student_id":"s1","k":2})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["entries"].size() == 2);

  res = client.Post("/v1/recommendations", "{oops", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);
  CHECK(json::parse(res->body).contains("code"));

  res = client.Post("/v1/events", course_event("h1", "s3", "tA", "2024-02-01T00:00:00Z").dump(),
                    "application/json");
  REQUIRE(res);
  CHECK(res->status == 202);

  res = client.Get("/v1/metrics");
  REQUIRE(res);
  CHECK(res->status == 409);
  server.stop();
}
