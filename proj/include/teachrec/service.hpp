#pragma once

#include <atomic>
#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "teachrec/config.hpp"
#include "teachrec/core.hpp"
#include "teachrec/events.hpp"
#include "teachrec/features.hpp"
#include "teachrec/gbdt.hpp"
#include "teachrec/ranking.hpp"

namespace httplib {
class Server;
}

namespace teachrec {

/// HTTP-agnostic reply: status code plus JSON body. Errors carry {code, message}.
struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
  std::optional<int> retry_after_seconds;
};

/// Model file pair as stored on disk.
struct LoadedModel {
  FeatureSchema schema;
  gbdt::GbdtModel model;
  std::string version;  // fingerprint of the serialized model bytes
};

LoadedModel load_model_files(const std::filesystem::path& model_path,
                             const std::filesystem::path& schema_path);
/// Both files are written atomically (temp + rename).
void save_model_files(const TrainedRanker& ranker, const std::filesystem::path& model_path,
                      const std::filesystem::path& schema_path);
std::string model_version(const gbdt::GbdtModel& model);

/// Recommendation endpoint logic without the transport.
///
/// Reads go against an immutable snapshot (store + model) that is replaced
/// wholesale on refresh; ingested events are validated against the pending
/// state, appended to the event log, and become visible only after refresh.
class RecommendationService {
 public:
  /// Keeps the ingested base logs so refresh can rebuild the store from
  /// base + event log.
  RecommendationService(AppConfig config, EntityTable students, EntityTable teachers,
                        std::vector<CourseRecord> base_courses,
                        std::vector<OutcomeRecord> base_outcomes);

  /// Builds the initial snapshot from the base logs and the existing event
  /// log. Does not load a model.
  void start();

  /// Reads model + schema from the configured paths and swaps them in.
  void load_model();
  void set_model(LoadedModel model);
  /// Trains on the current snapshot store, writes the model files and swaps it in.
  TrainedRanker train_model();

  /// Extra candidate filter applied after the already-taught exclusion.
  using CandidateFilter = std::function<bool(const StudentId&, const TeacherId&)>;
  void set_candidate_filter(CandidateFilter filter);

  ServiceResponse recommend(const nlohmann::json& request);
  ServiceResponse ingest(const nlohmann::json& event);
  /// Body may contain {"reload_model": bool, "retrain": bool}.
  ServiceResponse refresh(const nlohmann::json& request);
  ServiceResponse metrics() const;
  ServiceResponse health() const;

  /// Snapshot store (the state recommendations currently see).
  std::shared_ptr<const InteractionStore> store() const;
  const AppConfig& config() const { return config_; }

 private:
  struct Snapshot;

  std::shared_ptr<const Snapshot> snapshot() const;
  void rebuild(std::optional<LoadedModel> model);
  static ServiceResponse error(int status, std::string code, std::string message);

  AppConfig config_;
  EntityTable students_;
  EntityTable teachers_;
  std::vector<CourseRecord> base_courses_;
  std::vector<OutcomeRecord> base_outcomes_;
  EventLog log_;

  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const Snapshot> snapshot_;
  std::atomic<bool> reloading_{false};
  std::mutex refresh_mutex_;  // one refresh or retrain at a time

  // Writer state, guarded by ingest_mutex_.
  std::mutex ingest_mutex_;
  std::set<std::string> event_ids_;
  std::set<std::tuple<StudentId, TeacherId, Timestamp>> course_keys_;
  std::set<StudentId> students_with_courses_;
  std::set<StudentId> students_with_outcome_;

  mutable std::mutex served_mutex_;
  std::deque<RecommendationSlate> served_;
  CandidateFilter filter_;
};

/// cpp-httplib front end for RecommendationService.
class HttpServer {
 public:
  explicit HttpServer(RecommendationService& service);
  ~HttpServer();

  /// Binds (port 0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  /// bind + listen on a background thread.
  int start_background(const std::string& host, int port);
  void stop();

 private:
  RecommendationService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace teachrec
