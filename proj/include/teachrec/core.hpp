#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "teachrec/io.hpp"

namespace teachrec {

/// Opaque string identifier, distinct per namespace.
template <class Tag>
class Id {
 public:
  Id() = default;
  explicit Id(std::string value) : value_(std::move(value)) {}

  const std::string& str() const { return value_; }
  bool empty() const { return value_.empty(); }

  friend auto operator<=>(const Id&, const Id&) = default;
  friend bool operator==(const Id&, const Id&) = default;

 private:
  std::string value_;
};

using StudentId = Id<struct StudentTag>;
using TeacherId = Id<struct TeacherTag>;

template <class Tag>
std::ostream& operator<<(std::ostream& os, const Id<Tag>& id) {
  return os << id.str();
}

struct SourceLocation {
  std::string file;
  std::size_t line = 0;

  std::string str() const;
};

struct CourseRecord {
  StudentId student;
  TeacherId teacher;
  Timestamp timestamp;
  double duration_minutes = 0.0;
  std::map<std::string, double> stats;
  SourceLocation source;  // not part of equality

  friend bool operator==(const CourseRecord& a, const CourseRecord& b) {
    return a.student == b.student && a.teacher == b.teacher && a.timestamp == b.timestamp &&
           a.duration_minutes == b.duration_minutes && a.stats == b.stats;
  }
};

enum class Outcome { Completed, Dropped };

std::string_view to_string(Outcome outcome);
std::optional<Outcome> parse_outcome(std::string_view text);

struct OutcomeRecord {
  StudentId student;
  Outcome outcome = Outcome::Completed;
  Timestamp decided_at;
  SourceLocation source;  // not part of equality

  friend bool operator==(const OutcomeRecord& a, const OutcomeRecord& b) {
    return a.student == b.student && a.outcome == b.outcome && a.decided_at == b.decided_at;
  }
};

/// Demographic table (`students.csv` / `teachers.csv`): an id column plus
/// attribute columns. Empty cells are missing values.
struct EntityTable {
  std::vector<std::string> columns;  // attribute columns, id column excluded
  std::map<std::string, std::vector<std::string>> rows;

  bool empty() const { return rows.empty(); }
  const std::vector<std::string>* find(const std::string& id) const;
  std::vector<std::string> ids() const;
};

/// Immutable aggregate of the course and outcome logs.
///
/// Students and teachers are assigned dense indices in lexicographic id order;
/// the index-based accessors are the fast path used by feature extraction and
/// evaluation. Only teachers with at least one course appear here.
class InteractionStore {
 public:
  struct PairEntry {
    std::uint32_t teacher = 0;
    std::size_t count = 0;              // M_i(t_j)
    std::vector<std::uint32_t> courses;  // indices into courses(), time-ordered
  };

  InteractionStore() = default;

  /// Validates and aggregates the logs. Throws IngestError on malformed
  /// records, duplicate (student, teacher, timestamp) triples, more than one
  /// outcome per student, or an outcome for a student without courses.
  static InteractionStore ingest(std::vector<CourseRecord> courses,
                                 std::vector<OutcomeRecord> outcomes);

  std::size_t course_count(const StudentId& student, const TeacherId& teacher) const;
  std::size_t teacher_total(const TeacherId& teacher) const;
  /// p_i, the number of distinct teachers who taught the student.
  std::size_t teacher_count(const StudentId& student) const;
  std::optional<Outcome> outcome(const StudentId& student) const;

  std::size_t total_courses() const { return courses_.size(); }
  std::size_t student_count() const { return students_.size(); }
  std::size_t teacher_count() const { return teachers_.size(); }

  const std::vector<StudentId>& students() const { return students_; }
  const std::vector<TeacherId>& teachers() const { return teachers_; }
  std::optional<std::uint32_t> student_index(const StudentId& id) const;
  std::optional<std::uint32_t> teacher_index(const TeacherId& id) const;

  /// Pairs of one student, sorted by teacher index.
  const std::vector<PairEntry>& pairs_of(std::uint32_t student) const;
  const PairEntry* find_pair(std::uint32_t student, std::uint32_t teacher) const;
  const std::optional<OutcomeRecord>& outcome_of(std::uint32_t student) const;
  std::size_t teacher_total(std::uint32_t teacher) const { return teacher_totals_[teacher]; }
  /// I_j, sorted student indices.
  const std::vector<std::uint32_t>& students_of(std::uint32_t teacher) const;
  /// Course indices of one teacher, time-ordered.
  const std::vector<std::uint32_t>& courses_of(std::uint32_t teacher) const;

  /// All course records ordered by (timestamp, student, teacher).
  const std::vector<CourseRecord>& courses() const { return courses_; }
  /// Outcome records ordered by student.
  std::vector<OutcomeRecord> outcome_records() const;
  /// Union of stat column names across all courses, sorted.
  const std::vector<std::string>& stat_columns() const { return stat_columns_; }
  /// Latest course timestamp, or nullopt for an empty store.
  std::optional<Timestamp> last_timestamp() const;

  friend bool operator==(const InteractionStore& a, const InteractionStore& b);

 private:
  std::vector<CourseRecord> courses_;
  std::vector<StudentId> students_;
  std::vector<TeacherId> teachers_;
  std::vector<std::vector<PairEntry>> student_pairs_;
  std::vector<std::optional<OutcomeRecord>> outcomes_;
  std::vector<std::size_t> teacher_totals_;
  std::vector<std::vector<std::uint32_t>> teacher_students_;
  std::vector<std::vector<std::uint32_t>> teacher_courses_;
  std::vector<std::string> stat_columns_;
};

/// `courses.csv`: student_id, teacher_id, timestamp, duration_minutes, then
/// optional numeric stat columns named in the header.
std::vector<CourseRecord> parse_courses(const csv::Table& table);
std::vector<CourseRecord> read_courses_csv(const std::filesystem::path& path);

/// `outcomes.csv`: student_id, outcome (completed|dropped), decided_at.
std::vector<OutcomeRecord> parse_outcomes(const csv::Table& table);
std::vector<OutcomeRecord> read_outcomes_csv(const std::filesystem::path& path);

EntityTable parse_entity_table(const csv::Table& table);
EntityTable read_entity_csv(const std::filesystem::path& path);

void write_courses_csv(std::ostream& out, std::span<const CourseRecord> courses);
void write_outcomes_csv(std::ostream& out, std::span<const OutcomeRecord> outcomes);
void write_entity_csv(std::ostream& out, const EntityTable& table);

}  // namespace teachrec

template <class Tag>
struct std::hash<teachrec::Id<Tag>> {
  std::size_t operator()(const teachrec::Id<Tag>& id) const noexcept {
    return std::hash<std::string>{}(id.str());
  }
};
