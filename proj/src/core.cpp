#include "teachrec/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <tuple>

#include "teachrec/error.hpp"

namespace teachrec {

namespace {

[[noreturn]] void fail_at(const SourceLocation& loc, const std::string& message) {
  if (loc.file.empty() && loc.line == 0) throw IngestError(message);
  throw IngestError(loc.str() + ": " + message);
}

std::optional<double> parse_number(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  if (text.empty()) return std::nullopt;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

template <class IdT>
std::optional<std::uint32_t> index_in(const std::vector<IdT>& ids, const IdT& id) {
  const auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it == ids.end() || *it != id) return std::nullopt;
  return static_cast<std::uint32_t>(it - ids.begin());
}

void require_header(const csv::Table& table, std::span<const std::string_view> expected) {
  if (table.header.size() < expected.size()) {
    throw IngestError(table.source + ":1: header needs at least " +
                      std::to_string(expected.size()) + " columns");
  }
}

}  // namespace

std::string SourceLocation::str() const {
  return file + ":" + std::to_string(line);
}

std::string_view to_string(Outcome outcome) {
  return outcome == Outcome::Completed ? "completed" : "dropped";
}

std::optional<Outcome> parse_outcome(std::string_view text) {
  if (text == "completed") return Outcome::Completed;
  if (text == "dropped") return Outcome::Dropped;
  return std::nullopt;
}

const std::vector<std::string>* EntityTable::find(const std::string& id) const {
  const auto it = rows.find(id);
  return it == rows.end() ? nullptr : &it->second;
}

std::vector<std::string> EntityTable::ids() const {
  std::vector<std::string> out;
  out.reserve(rows.size());
  for (const auto& [id, _] : rows) out.push_back(id);
  return out;
}

InteractionStore InteractionStore::ingest(std::vector<CourseRecord> courses,
                                          std::vector<OutcomeRecord> outcomes) {
  for (const auto& c : courses) {
    if (c.student.empty()) fail_at(c.source, "empty student id");
    if (c.teacher.empty()) fail_at(c.source, "empty teacher id");
    if (!(c.duration_minutes > 0.0) || !std::isfinite(c.duration_minutes)) {
      fail_at(c.source, "duration_minutes must be positive");
    }
    for (const auto& [name, value] : c.stats) {
      if (!(value >= 0.0) || !std::isfinite(value)) {
        fail_at(c.source, "stat '" + name + "' must be a non-negative number");
      }
    }
  }

  // Duplicate detection: a replayed log shows up as the same triple twice.
  {
    std::vector<std::size_t> order(courses.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto key = [&](std::size_t i) {
      return std::tie(courses[i].student, courses[i].teacher, courses[i].timestamp);
    };
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
    for (std::size_t k = 1; k < order.size(); ++k) {
      if (key(order[k - 1]) == key(order[k])) {
        const auto& a = courses[order[k - 1]];
        const auto& b = courses[order[k]];
        throw IngestError("duplicate course (" + a.student.str() + ", " + a.teacher.str() +
                          ", " + format_iso8601(a.timestamp) + ") at " + a.source.str() +
                          " and " + b.source.str());
      }
    }
  }

  std::sort(courses.begin(), courses.end(), [](const CourseRecord& a, const CourseRecord& b) {
    return std::tie(a.timestamp, a.student, a.teacher) <
           std::tie(b.timestamp, b.student, b.teacher);
  });

  InteractionStore store;
  {
    std::set<StudentId> students;
    std::set<TeacherId> teachers;
    std::set<std::string> stats;
    for (const auto& c : courses) {
      students.insert(c.student);
      teachers.insert(c.teacher);
      for (const auto& [name, _] : c.stats) stats.insert(name);
    }
    store.students_.assign(students.begin(), students.end());
    store.teachers_.assign(teachers.begin(), teachers.end());
    store.stat_columns_.assign(stats.begin(), stats.end());
  }

  const std::size_t n_students = store.students_.size();
  const std::size_t n_teachers = store.teachers_.size();
  store.student_pairs_.resize(n_students);
  store.outcomes_.resize(n_students);
  store.teacher_totals_.assign(n_teachers, 0);
  store.teacher_students_.resize(n_teachers);
  store.teacher_courses_.resize(n_teachers);

  for (std::size_t i = 0; i < courses.size(); ++i) {
    const auto s = *index_in(store.students_, courses[i].student);
    const auto t = *index_in(store.teachers_, courses[i].teacher);
    auto& pairs = store.student_pairs_[s];
    auto it = std::lower_bound(pairs.begin(), pairs.end(), t,
                               [](const PairEntry& p, std::uint32_t v) { return p.teacher < v; });
    if (it == pairs.end() || it->teacher != t) {
      it = pairs.insert(it, PairEntry{t, 0, {}});
      store.teacher_students_[t].push_back(s);
    }
    ++it->count;
    it->courses.push_back(static_cast<std::uint32_t>(i));
    ++store.teacher_totals_[t];
    store.teacher_courses_[t].push_back(static_cast<std::uint32_t>(i));
  }
  for (auto& list : store.teacher_students_) std::sort(list.begin(), list.end());
  store.courses_ = std::move(courses);

  std::sort(outcomes.begin(), outcomes.end(),
            [](const OutcomeRecord& a, const OutcomeRecord& b) { return a.student < b.student; });
  for (std::size_t k = 0; k < outcomes.size(); ++k) {
    const auto& o = outcomes[k];
    if (o.student.empty()) fail_at(o.source, "empty student id");
    if (k > 0 && outcomes[k - 1].student == o.student) {
      const auto& prev = outcomes[k - 1];
      const bool conflict = prev.outcome != o.outcome || prev.decided_at != o.decided_at;
      fail_at(o.source, std::string(conflict ? "conflicting" : "duplicate") +
                            " outcome for student " + o.student.str() + " (first at " +
                            prev.source.str() + ")");
    }
    const auto s = index_in(store.students_, o.student);
    if (!s) fail_at(o.source, "outcome for student " + o.student.str() + " with zero courses");
    store.outcomes_[*s] = o;
  }
  return store;
}

std::optional<std::uint32_t> InteractionStore::student_index(const StudentId& id) const {
  return index_in(students_, id);
}

std::optional<std::uint32_t> InteractionStore::teacher_index(const TeacherId& id) const {
  return index_in(teachers_, id);
}

const std::vector<InteractionStore::PairEntry>& InteractionStore::pairs_of(
    std::uint32_t student) const {
  return student_pairs_[student];
}

const InteractionStore::PairEntry* InteractionStore::find_pair(std::uint32_t student,
                                                               std::uint32_t teacher) const {
  const auto& pairs = student_pairs_[student];
  const auto it =
      std::lower_bound(pairs.begin(), pairs.end(), teacher,
                       [](const PairEntry& p, std::uint32_t v) { return p.teacher < v; });
  return (it != pairs.end() && it->teacher == teacher) ? &*it : nullptr;
}

const std::optional<OutcomeRecord>& InteractionStore::outcome_of(std::uint32_t student) const {
  return outcomes_[student];
}

const std::vector<std::uint32_t>& InteractionStore::students_of(std::uint32_t teacher) const {
  return teacher_students_[teacher];
}

const std::vector<std::uint32_t>& InteractionStore::courses_of(std::uint32_t teacher) const {
  return teacher_courses_[teacher];
}

std::size_t InteractionStore::course_count(const StudentId& student,
                                           const TeacherId& teacher) const {
  const auto s = student_index(student);
  const auto t = teacher_index(teacher);
  if (!s || !t) return 0;
  const auto* pair = find_pair(*s, *t);
  return pair ? pair->count : 0;
}

std::size_t InteractionStore::teacher_total(const TeacherId& teacher) const {
  const auto t = teacher_index(teacher);
  return t ? teacher_totals_[*t] : 0;
}

std::size_t InteractionStore::teacher_count(const StudentId& student) const {
  const auto s = student_index(student);
  return s ? student_pairs_[*s].size() : 0;
}

std::optional<Outcome> InteractionStore::outcome(const StudentId& student) const {
  const auto s = student_index(student);
  if (!s || !outcomes_[*s]) return std::nullopt;
  return outcomes_[*s]->outcome;
}

std::vector<OutcomeRecord> InteractionStore::outcome_records() const {
  std::vector<OutcomeRecord> out;
  for (const auto& o : outcomes_) {
    if (o) out.push_back(*o);
  }
  return out;
}

std::optional<Timestamp> InteractionStore::last_timestamp() const {
  if (courses_.empty()) return std::nullopt;
  return courses_.back().timestamp;
}

bool operator==(const InteractionStore& a, const InteractionStore& b) {
  return a.courses_ == b.courses_ && a.outcomes_ == b.outcomes_;
}

std::vector<CourseRecord> parse_courses(const csv::Table& table) {
  static constexpr std::string_view kFixed[] = {"student_id", "teacher_id", "timestamp",
                                                "duration_minutes"};
  require_header(table, kFixed);
  const std::size_t n_cols = table.header.size();
  std::vector<CourseRecord> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    const SourceLocation loc{table.source, row.line};
    if (row.fields.size() != n_cols) {
      fail_at(loc, "expected " + std::to_string(n_cols) + " fields, got " +
                       std::to_string(row.fields.size()));
    }
    CourseRecord rec;
    rec.student = StudentId(row.fields[0]);
    rec.teacher = TeacherId(row.fields[1]);
    const auto ts = parse_iso8601(row.fields[2]);
    if (!ts) fail_at(loc, "unparseable timestamp '" + row.fields[2] + "'");
    rec.timestamp = *ts;
    const auto duration = parse_number(row.fields[3]);
    if (!duration) fail_at(loc, "unparseable duration '" + row.fields[3] + "'");
    rec.duration_minutes = *duration;
    for (std::size_t c = 4; c < n_cols; ++c) {
      if (row.fields[c].empty()) continue;
      const auto v = parse_number(row.fields[c]);
      if (!v) fail_at(loc, "unparseable value for '" + table.header[c] + "'");
      rec.stats.emplace(table.header[c], *v);
    }
    rec.source = loc;
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<CourseRecord> read_courses_csv(const std::filesystem::path& path) {
  return parse_courses(csv::read_file(path));
}

std::vector<OutcomeRecord> parse_outcomes(const csv::Table& table) {
  static constexpr std::string_view kFixed[] = {"student_id", "outcome", "decided_at"};
  require_header(table, kFixed);
  std::vector<OutcomeRecord> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    const SourceLocation loc{table.source, row.line};
    if (row.fields.size() != table.header.size()) {
      fail_at(loc, "expected " + std::to_string(table.header.size()) + " fields, got " +
                       std::to_string(row.fields.size()));
    }
    OutcomeRecord rec;
    rec.student = StudentId(row.fields[0]);
    const auto outcome = parse_outcome(row.fields[1]);
    if (!outcome) fail_at(loc, "outcome must be 'completed' or 'dropped', got '" +
                                   row.fields[1] + "'");
    rec.outcome = *outcome;
    const auto ts = parse_iso8601(row.fields[2]);
    if (!ts) fail_at(loc, "unparseable timestamp '" + row.fields[2] + "'");
    rec.decided_at = *ts;
    rec.source = loc;
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<OutcomeRecord> read_outcomes_csv(const std::filesystem::path& path) {
  return parse_outcomes(csv::read_file(path));
}

EntityTable parse_entity_table(const csv::Table& table) {
  if (table.header.empty()) throw IngestError(table.source + ":1: empty header");
  EntityTable out;
  out.columns.assign(table.header.begin() + 1, table.header.end());
  for (const auto& row : table.rows) {
    const SourceLocation loc{table.source, row.line};
    if (row.fields.size() != table.header.size()) {
      fail_at(loc, "expected " + std::to_string(table.header.size()) + " fields, got " +
                       std::to_string(row.fields.size()));
    }
    if (row.fields[0].empty()) fail_at(loc, "empty id");
    std::vector<std::string> values(row.fields.begin() + 1, row.fields.end());
    if (!out.rows.emplace(row.fields[0], std::move(values)).second) {
      fail_at(loc, "duplicate id '" + row.fields[0] + "'");
    }
  }
  return out;
}

EntityTable read_entity_csv(const std::filesystem::path& path) {
  return parse_entity_table(csv::read_file(path));
}

void write_courses_csv(std::ostream& out, std::span<const CourseRecord> courses) {
  std::set<std::string> stat_names;
  for (const auto& c : courses) {
    for (const auto& [name, _] : c.stats) stat_names.insert(name);
  }
  std::vector<std::string> header{"student_id", "teacher_id", "timestamp", "duration_minutes"};
  header.insert(header.end(), stat_names.begin(), stat_names.end());
  csv::write_row(out, header);
  for (const auto& c : courses) {
    std::vector<std::string> fields{c.student.str(), c.teacher.str(), format_iso8601(c.timestamp),
                                    format_double(c.duration_minutes)};
    for (const auto& name : stat_names) {
      const auto it = c.stats.find(name);
      fields.push_back(it == c.stats.end() ? "" : format_double(it->second));
    }
    csv::write_row(out, fields);
  }
}

void write_outcomes_csv(std::ostream& out, std::span<const OutcomeRecord> outcomes) {
  csv::write_row(out, {"student_id", "outcome", "decided_at"});
  for (const auto& o : outcomes) {
    csv::write_row(out, {o.student.str(), std::string(to_string(o.outcome)),
                         format_iso8601(o.decided_at)});
  }
}

void write_entity_csv(std::ostream& out, const EntityTable& table) {
  std::vector<std::string> header{"id"};
  header.insert(header.end(), table.columns.begin(), table.columns.end());
  csv::write_row(out, header);
  for (const auto& [id, values] : table.rows) {
    std::vector<std::string> fields{id};
    fields.insert(fields.end(), values.begin(), values.end());
    csv::write_row(out, fields);
  }
}

}  // namespace teachrec
