#include "teachrec/service.hpp"

#include <spdlog/spdlog.h>
#include <zlib.h>

#include <cstdio>

#include "httplib.h"
#include "teachrec/error.hpp"
#include "teachrec/io.hpp"
#include "teachrec/pseudo_labels.hpp"

namespace teachrec {

using nlohmann::json;

struct RecommendationService::Snapshot {
  std::shared_ptr<const InteractionStore> store;
  std::shared_ptr<const LoadedModel> model;  // null until a model is loaded
  std::unique_ptr<FeatureExtractor> extractor;
  std::unique_ptr<SlateRanker> ranker;
  std::vector<TeacherId> universe;
};

std::string model_version(const gbdt::GbdtModel& model) {
  const auto bytes = model.serialize();
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()),
                         static_cast<uInt>(bytes.size()));
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return std::string("gbdt-") + buf;
}

LoadedModel load_model_files(const std::filesystem::path& model_path,
                             const std::filesystem::path& schema_path) {
  LoadedModel loaded;
  loaded.model = gbdt::GbdtModel::deserialize(read_file(model_path));
  loaded.schema = FeatureSchema::from_json(read_file(schema_path));
  if (loaded.model.schema_fingerprint() != loaded.schema.fingerprint()) {
    throw SchemaMismatch("model " + model_path.string() + " was trained on schema " +
                         fingerprint_hex(loaded.model.schema_fingerprint()) + " but " +
                         schema_path.string() + " has " +
                         fingerprint_hex(loaded.schema.fingerprint()));
  }
  loaded.version = model_version(loaded.model);
  return loaded;
}

void save_model_files(const TrainedRanker& ranker, const std::filesystem::path& model_path,
                      const std::filesystem::path& schema_path) {
  write_file_atomic(schema_path, ranker.schema.to_json());
  write_file_atomic(model_path, ranker.model.serialize());
}

RecommendationService::RecommendationService(AppConfig config, EntityTable students,
                                             EntityTable teachers,
                                             std::vector<CourseRecord> base_courses,
                                             std::vector<OutcomeRecord> base_outcomes)
    : config_(std::move(config)),
      students_(std::move(students)),
      teachers_(std::move(teachers)),
      base_courses_(std::move(base_courses)),
      base_outcomes_(std::move(base_outcomes)),
      log_(config_.event_log_path) {}

ServiceResponse RecommendationService::error(int status, std::string code, std::string message) {
  return ServiceResponse{status, json{{"code", std::move(code)}, {"message", std::move(message)}},
                         std::nullopt};
}

std::shared_ptr<const RecommendationService::Snapshot> RecommendationService::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return snapshot_;
}

std::shared_ptr<const InteractionStore> RecommendationService::store() const {
  const auto snap = snapshot();
  return snap ? snap->store : nullptr;
}

void RecommendationService::start() {
  std::lock_guard refresh(refresh_mutex_);
  const auto events = log_.read_all();
  {
    std::lock_guard lock(ingest_mutex_);
    for (const auto& e : events) {
      if (!event_ids_.insert(e.event_id).second) {
        throw IngestError(log_.path().string() + ": duplicate event id " + e.event_id);
      }
    }
  }
  rebuild(std::nullopt);
  const auto snap = snapshot();
  std::lock_guard lock(ingest_mutex_);
  for (const auto& c : snap->store->courses()) {
    course_keys_.emplace(c.student, c.teacher, c.timestamp);
    students_with_courses_.insert(c.student);
  }
  for (const auto& o : snap->store->outcome_records()) students_with_outcome_.insert(o.student);
}

void RecommendationService::rebuild(std::optional<LoadedModel> model) {
  auto next = std::make_shared<Snapshot>();
  next->store = std::make_shared<const InteractionStore>(
      replay(base_courses_, base_outcomes_, log_.read_all()));
  if (model) {
    next->model = std::make_shared<const LoadedModel>(std::move(*model));
  } else if (const auto current = snapshot()) {
    next->model = current->model;
  }
  std::set<TeacherId> universe(next->store->teachers().begin(), next->store->teachers().end());
  for (const auto& [id, row] : teachers_.rows) universe.emplace(id);
  next->universe.assign(universe.begin(), universe.end());
  if (next->model) {
    const auto last = next->store->last_timestamp();
    const Timestamp as_of =
        last ? *last + std::chrono::milliseconds{1} : Timestamp{std::chrono::milliseconds{0}};
    next->extractor = std::make_unique<FeatureExtractor>(next->model->schema, students_,
                                                         teachers_, *next->store);
    next->ranker = std::make_unique<SlateRanker>(next->model->model, *next->extractor,
                                                 config_.boost(), as_of);
  }
  std::lock_guard lock(snapshot_mutex_);
  snapshot_ = std::move(next);
}

void RecommendationService::load_model() {
  std::lock_guard refresh(refresh_mutex_);
  reloading_ = true;
  try {
    auto loaded = load_model_files(config_.model_path, config_.resolved_schema_path());
    spdlog::info("loaded model {} from {}", loaded.version, config_.model_path.string());
    rebuild(std::move(loaded));
  } catch (...) {
    reloading_ = false;
    throw;
  }
  reloading_ = false;
}

void RecommendationService::set_model(LoadedModel model) {
  std::lock_guard refresh(refresh_mutex_);
  rebuild(std::move(model));
}

TrainedRanker RecommendationService::train_model() {
  std::lock_guard refresh(refresh_mutex_);
  const auto store = snapshot()->store;
  const auto labels = build_labels(*store);
  auto ranker = train_ranker(*store, students_, teachers_, labels, config_.gbdt);
  save_model_files(ranker, config_.model_path, config_.resolved_schema_path());
  LoadedModel loaded{ranker.schema, ranker.model, model_version(ranker.model)};
  spdlog::info("trained model {} on {} labels", loaded.version, labels.size());
  rebuild(std::move(loaded));
  return ranker;
}

void RecommendationService::set_candidate_filter(CandidateFilter filter) {
  std::lock_guard lock(snapshot_mutex_);
  filter_ = std::move(filter);
}

ServiceResponse RecommendationService::recommend(const json& request) {
  if (!request.is_object() || !request.contains("student_id") ||
      !request["student_id"].is_string() || request["student_id"].get<std::string>().empty()) {
    return error(400, "bad_request", "body must be an object with a non-empty string student_id");
  }
  std::size_t k = config_.k;
  if (request.contains("k")) {
    const auto& jk = request["k"];
    if (!jk.is_number_integer() || jk.get<long long>() < 1) {
      return error(400, "bad_request", "k must be a positive integer");
    }
    k = static_cast<std::size_t>(jk.get<long long>());
  }
  const auto snap = snapshot();
  if (reloading_ || !snap) {
    auto r = error(503, "model_reloading", "model is being reloaded, retry shortly");
    r.retry_after_seconds = 1;
    return r;
  }
  if (!snap->ranker) {
    auto r = error(503, "model_not_loaded", "no model loaded; train or refresh first");
    r.retry_after_seconds = 5;
    return r;
  }
  const StudentId student(request["student_id"].get<std::string>());
  const bool known = students_.find(student.str()) || snap->store->student_index(student);
  if (!known && !config_.cold_start) {
    return error(404, "unknown_student", "unknown student " + student.str());
  }
  CandidateFilter filter;
  {
    std::lock_guard lock(snapshot_mutex_);
    filter = filter_;
  }
  std::vector<TeacherId> candidates;
  candidates.reserve(snap->universe.size());
  for (const auto& t : snap->universe) {
    if (!filter || filter(student, t)) candidates.push_back(t);
  }
  if (candidates.empty()) return error(409, "no_candidates", "no candidate teachers");
  auto result = snap->ranker->rank(student, candidates, k);
  if (result.slate.entries.empty()) {
    return error(409, "no_candidates", "student has already taken every candidate teacher");
  }

  json entries = json::array();
  for (const auto& e : result.slate.entries) {
    entries.push_back({{"teacher_id", e.teacher.str()},
                       {"model_score", e.model_score},
                       {"boost", e.boost},
                       {"combined_score", e.combined_score}});
  }
  const auto now = std::chrono::time_point_cast<std::chrono::milliseconds>(
      std::chrono::system_clock::now());
  json body{{"student_id", student.str()},
            {"generated_at", format_iso8601(now)},
            {"model_version", snap->model->version},
            {"cold_student", !known},
            {"entries", std::move(entries)}};
  {
    std::lock_guard lock(served_mutex_);
    served_.push_back(std::move(result.slate));
    while (served_.size() > config_.metrics_window) served_.pop_front();
  }
  return {200, std::move(body), std::nullopt};
}

ServiceResponse RecommendationService::ingest(const json& body) {
  Event event;
  try {
    event = parse_event(body);
  } catch (const InvalidArgument& e) {
    return error(400, "schema_violation", e.what());
  }
  std::lock_guard lock(ingest_mutex_);
  if (event_ids_.count(event.event_id)) {
    return error(409, "duplicate_event", "event id " + event.event_id + " already ingested");
  }
  if (const auto* c = std::get_if<CourseRecord>(&event.payload)) {
    if (course_keys_.count({c->student, c->teacher, c->timestamp})) {
      return error(409, "duplicate_course",
                   "course (" + c->student.str() + ", " + c->teacher.str() + ", " +
                       format_iso8601(c->timestamp) + ") already recorded");
    }
    log_.append(event);
    course_keys_.emplace(c->student, c->teacher, c->timestamp);
    students_with_courses_.insert(c->student);
  } else {
    const auto& o = std::get<OutcomeRecord>(event.payload);
    if (!students_with_courses_.count(o.student)) {
      return error(400, "unknown_student", "outcome for student " + o.student.str() +
                                               " who has no courses");
    }
    if (students_with_outcome_.count(o.student)) {
      return error(409, "conflicting_outcome",
                   "student " + o.student.str() + " already has an outcome");
    }
    log_.append(event);
    students_with_outcome_.insert(o.student);
  }
  event_ids_.insert(event.event_id);
  return {202, json{{"accepted", true}, {"event_id", event.event_id}}, std::nullopt};
}

ServiceResponse RecommendationService::refresh(const json& request) {
  if (!request.is_null() && !request.is_object()) {
    return error(400, "bad_request", "refresh body must be an object");
  }
  const bool reload = request.is_object() && request.value("reload_model", false);
  const bool retrain = request.is_object() && request.value("retrain", false);
  try {
    if (reload) {
      load_model();
    } else {
      std::lock_guard refresh(refresh_mutex_);
      rebuild(std::nullopt);
    }
    if (retrain) train_model();
  } catch (const Error& e) {
    return error(500, "refresh_failed", e.what());
  }
  const auto snap = snapshot();
  json body{{"status", "ok"},
            {"courses", snap->store->total_courses()},
            {"students", snap->store->student_count()},
            {"teachers", snap->store->teacher_count()},
            {"model_version", snap->model ? json(snap->model->version) : json(nullptr)}};
  return {200, std::move(body), std::nullopt};
}

ServiceResponse RecommendationService::metrics() const {
  std::vector<RecommendationSlate> slates;
  {
    std::lock_guard lock(served_mutex_);
    slates.assign(served_.begin(), served_.end());
  }
  if (slates.size() < 2) {
    return error(409, "insufficient_slates",
                 "need at least 2 served slates, have " + std::to_string(slates.size()));
  }
  const auto snap = snapshot();
  json body{{"diversity", diversity(slates)},
            {"new_teacher_ratio", new_teacher_ratio(slates, *snap->store, config_.boost())},
            {"slate_count", slates.size()}};
  return {200, std::move(body), std::nullopt};
}

ServiceResponse RecommendationService::health() const {
  const auto snap = snapshot();
  json body{{"status", "ok"},
            {"model_loaded", snap && snap->model != nullptr},
            {"model_version", snap && snap->model ? json(snap->model->version) : json(nullptr)}};
  return {200, std::move(body), std::nullopt};
}

namespace {

void reply(httplib::Response& res, const ServiceResponse& r) {
  res.status = r.status;
  if (r.retry_after_seconds) res.set_header("Retry-After", std::to_string(*r.retry_after_seconds));
  res.set_content(r.body.dump(), "application/json");
}

template <class Handler>
void with_json_body(const httplib::Request& req, httplib::Response& res, bool allow_empty,
                    Handler handler) {
  json body;
  if (!req.body.empty() || !allow_empty) {
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error& e) {
      reply(res, {400, json{{"code", "bad_request"}, {"message", e.what()}}, std::nullopt});
      return;
    }
  }
  reply(res, handler(body));
}

}  // namespace

HttpServer::HttpServer(RecommendationService& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  s.Post("/v1/recommendations", [this](const httplib::Request& req, httplib::Response& res) {
    with_json_body(req, res, false, [this](const json& b) { return service_.recommend(b); });
  });
  s.Post("/v1/events", [this](const httplib::Request& req, httplib::Response& res) {
    with_json_body(req, res, false, [this](const json& b) { return service_.ingest(b); });
  });
  s.Post("/v1/refresh", [this](const httplib::Request& req, httplib::Response& res) {
    with_json_body(req, res, true, [this](const json& b) { return service_.refresh(b); });
  });
  s.Get("/v1/metrics", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, service_.metrics());
  });
  s.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, service_.health());
  });
  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    spdlog::error("request failed: {}", message);
    reply(res, {500, json{{"code", "internal"}, {"message", message}}, std::nullopt});
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) {
    throw Error("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::listen() { server_->listen_after_bind(); }

int HttpServer::start_background(const std::string& host, int port) {
  const int bound = bind(host, port);
  thread_ = std::thread([this] { listen(); });
  server_->wait_until_ready();
  return bound;
}

void HttpServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace teachrec
