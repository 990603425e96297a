#pragma once

#include <filesystem>
#include <mutex>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "teachrec/core.hpp"

namespace teachrec {

/// One entry of the append-only event log.
///
///   {"event_id": "e1", "type": "course", "student_id": ..., "teacher_id": ...,
///    "timestamp": ISO-8601, "duration_minutes": 45, "stats": {...}}
///   {"event_id": "e2", "type": "outcome", "student_id": ..., "outcome":
///    "completed"|"dropped", "decided_at": ISO-8601}
struct Event {
  std::string event_id;
  std::variant<CourseRecord, OutcomeRecord> payload;

  bool is_course() const { return std::holds_alternative<CourseRecord>(payload); }
};

/// Throws InvalidArgument describing the first schema violation.
Event parse_event(const nlohmann::json& j);
nlohmann::json to_json(const Event& event);

/// JSON-lines file, one event per line. Appends are flushed before returning.
class EventLog {
 public:
  explicit EventLog(std::filesystem::path path) : path_(std::move(path)) {}

  const std::filesystem::path& path() const { return path_; }
  /// Empty when the file does not exist. Throws IngestError with the line
  /// number on a malformed line.
  std::vector<Event> read_all() const;
  void append(const Event& event);

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
};

/// The store obtained by ingesting the base logs followed by every event.
InteractionStore replay(std::vector<CourseRecord> courses, std::vector<OutcomeRecord> outcomes,
                        const std::vector<Event>& events);

}  // namespace teachrec
