#include "teachrec/events.hpp"

#include <cmath>
#include <fstream>

#include "teachrec/error.hpp"
#include "teachrec/io.hpp"

namespace teachrec {

namespace {

using nlohmann::json;

const json& field(const json& j, const char* key) {
  if (!j.contains(key)) throw InvalidArgument(std::string("missing field '") + key + "'");
  return j.at(key);
}

std::string text_field(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_string() || v.get_ref<const std::string&>().empty()) {
    throw InvalidArgument(std::string("field '") + key + "' must be a non-empty string");
  }
  return v.get<std::string>();
}

Timestamp time_field(const json& j, const char* key) {
  const auto text = text_field(j, key);
  const auto ts = parse_iso8601(text);
  if (!ts) throw InvalidArgument(std::string("field '") + key + "' is not ISO-8601: " + text);
  return *ts;
}

double number_field(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_number()) throw InvalidArgument(std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

}  // namespace

Event parse_event(const json& j) {
  if (!j.is_object()) throw InvalidArgument("event must be a JSON object");
  Event e;
  e.event_id = text_field(j, "event_id");
  const auto type = text_field(j, "type");
  if (type == "course") {
    CourseRecord c;
    c.student = StudentId(text_field(j, "student_id"));
    c.teacher = TeacherId(text_field(j, "teacher_id"));
    c.timestamp = time_field(j, "timestamp");
    c.duration_minutes = number_field(j, "duration_minutes");
    if (!(c.duration_minutes > 0.0) || !std::isfinite(c.duration_minutes)) {
      throw InvalidArgument("duration_minutes must be positive");
    }
    if (j.contains("stats")) {
      const auto& stats = j.at("stats");
      if (!stats.is_object()) throw InvalidArgument("stats must be an object");
      for (const auto& [name, value] : stats.items()) {
        if (!value.is_number() || !(value.get<double>() >= 0.0)) {
          throw InvalidArgument("stat '" + name + "' must be a non-negative number");
        }
        c.stats[name] = value.get<double>();
      }
    }
    e.payload = std::move(c);
  } else if (type == "outcome") {
    OutcomeRecord o;
    o.student = StudentId(text_field(j, "student_id"));
    const auto outcome = parse_outcome(text_field(j, "outcome"));
    if (!outcome) throw InvalidArgument("outcome must be 'completed' or 'dropped'");
    o.outcome = *outcome;
    o.decided_at = time_field(j, "decided_at");
    e.payload = std::move(o);
  } else {
    throw InvalidArgument("unknown event type '" + type + "'");
  }
  return e;
}

json to_json(const Event& event) {
  json j{{"event_id", event.event_id}};
  if (const auto* c = std::get_if<CourseRecord>(&event.payload)) {
    j["type"] = "course";
    j["student_id"] = c->student.str();
    j["teacher_id"] = c->teacher.str();
    j["timestamp"] = format_iso8601(c->timestamp);
    j["duration_minutes"] = c->duration_minutes;
    if (!c->stats.empty()) j["stats"] = c->stats;
  } else {
    const auto& o = std::get<OutcomeRecord>(event.payload);
    j["type"] = "outcome";
    j["student_id"] = o.student.str();
    j["outcome"] = std::string(to_string(o.outcome));
    j["decided_at"] = format_iso8601(o.decided_at);
  }
  return j;
}

std::vector<Event> EventLog::read_all() const {
  std::lock_guard lock(mutex_);
  std::vector<Event> events;
  std::ifstream in(path_);
  if (!in) return events;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      events.push_back(parse_event(json::parse(line)));
      auto& e = events.back();
      if (auto* c = std::get_if<CourseRecord>(&e.payload)) {
        c->source = {path_.string(), n};
      } else {
        std::get<OutcomeRecord>(e.payload).source = {path_.string(), n};
      }
    } catch (const std::exception& e) {
      throw IngestError(path_.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return events;
}

void EventLog::append(const Event& event) {
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::app);
  if (!out) throw Error("cannot open event log " + path_.string());
  out << to_json(event).dump() << '\n';
  out.flush();
  if (!out) throw Error("write to event log " + path_.string() + " failed");
}

InteractionStore replay(std::vector<CourseRecord> courses, std::vector<OutcomeRecord> outcomes,
                        const std::vector<Event>& events) {
  for (const auto& e : events) {
    if (const auto* c = std::get_if<CourseRecord>(&e.payload)) {
      courses.push_back(*c);
    } else {
      outcomes.push_back(std::get<OutcomeRecord>(e.payload));
    }
  }
  return InteractionStore::ingest(std::move(courses), std::move(outcomes));
}

}  // namespace teachrec
