#include "teachrec/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>

#include "json.hpp"
#include "teachrec/error.hpp"

namespace teachrec {

namespace {

using nlohmann::json;

std::optional<double> to_number(std::string_view text) {
  if (text.empty()) return std::nullopt;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

struct ColumnProfile {
  bool numeric = false;
  std::vector<std::string> vocabulary;
};

ColumnProfile profile_column(const EntityTable& table, std::size_t column,
                             std::size_t max_vocabulary) {
  std::map<std::string, std::size_t> freq;
  bool all_numeric = true;
  bool any_value = false;
  for (const auto& [id, values] : table.rows) {
    const auto& v = values[column];
    if (v.empty()) continue;
    any_value = true;
    ++freq[v];
    if (!to_number(v)) all_numeric = false;
  }
  ColumnProfile profile;
  profile.numeric = any_value && all_numeric;
  if (profile.numeric) return profile;

  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  const bool capped = ranked.size() > max_vocabulary;
  if (capped) {
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    ranked.resize(max_vocabulary);
    std::sort(ranked.begin(), ranked.end());
  }
  for (auto& [value, _] : ranked) profile.vocabulary.push_back(value);
  profile.vocabulary.emplace_back(kMissingToken);
  if (capped) profile.vocabulary.emplace_back(kOtherToken);
  return profile;
}

std::string_view family_name(FeatureFamily f) {
  switch (f) {
    case FeatureFamily::Demographic: return "demographic";
    case FeatureFamily::InClass: return "in_class";
    case FeatureFamily::Historical: return "historical";
  }
  return "";
}

std::string_view kind_name(FeatureKind k) {
  return k == FeatureKind::Numeric ? "numeric" : "one_hot";
}

constexpr std::pair<FeatureBinding, std::string_view> kBindingNames[] = {
    {FeatureBinding::StudentKnown, "student_known"},
    {FeatureBinding::TeacherKnown, "teacher_known"},
    {FeatureBinding::StudentColumn, "student_column"},
    {FeatureBinding::TeacherColumn, "teacher_column"},
    {FeatureBinding::StudentMissing, "student_missing"},
    {FeatureBinding::TeacherMissing, "teacher_missing"},
    {FeatureBinding::PairSame, "pair_same"},
    {FeatureBinding::PairAbsDiff, "pair_abs_diff"},
    {FeatureBinding::InClassMean, "in_class_mean"},
    {FeatureBinding::HistHasHistory, "hist_has_history"},
    {FeatureBinding::HistLogTotalCourses, "hist_log1p_total_courses"},
    {FeatureBinding::HistDistinctStudents, "hist_distinct_students"},
    {FeatureBinding::HistDropoutRate, "hist_dropout_rate"},
    {FeatureBinding::HistMeanPositiveScore, "hist_mean_positive_score"},
};

std::string_view binding_name(FeatureBinding b) {
  for (const auto& [value, name] : kBindingNames) {
    if (value == b) return name;
  }
  return "";
}

FeatureBinding parse_binding(const std::string& text) {
  for (const auto& [value, name] : kBindingNames) {
    if (name == text) return value;
  }
  throw FormatError("unknown feature binding '" + text + "'");
}

FeatureFamily parse_family(const std::string& text) {
  for (auto f : {FeatureFamily::Demographic, FeatureFamily::InClass, FeatureFamily::Historical}) {
    if (family_name(f) == text) return f;
  }
  throw FormatError("unknown feature family '" + text + "'");
}

json schema_document(const std::vector<FeatureSpec>& features) {
  json doc;
  doc["format"] = "teachrec.feature_schema";
  doc["version"] = FeatureSchema::kFormatVersion;
  json list = json::array();
  for (const auto& f : features) {
    json item;
    item["name"] = f.name;
    item["family"] = family_name(f.family);
    item["kind"] = kind_name(f.kind);
    item["binding"] = binding_name(f.binding);
    item["column"] = f.column;
    if (f.kind == FeatureKind::OneHot) item["vocabulary"] = f.vocabulary;
    list.push_back(std::move(item));
  }
  doc["features"] = std::move(list);
  return doc;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

// Index of the first course with timestamp >= as_of; courses are time-ordered.
std::size_t course_cut(const InteractionStore& store, Timestamp as_of) {
  const auto& courses = store.courses();
  const auto it = std::lower_bound(
      courses.begin(), courses.end(), as_of,
      [](const CourseRecord& c, Timestamp t) { return c.timestamp < t; });
  return static_cast<std::size_t>(it - courses.begin());
}

std::size_t count_before(const std::vector<std::uint32_t>& course_indices, std::size_t cut) {
  return static_cast<std::size_t>(
      std::lower_bound(course_indices.begin(), course_indices.end(),
                       static_cast<std::uint32_t>(std::min<std::size_t>(cut, UINT32_MAX))) -
      course_indices.begin());
}

TeacherHistory history_of(const InteractionStore& store, std::uint32_t teacher, Timestamp as_of) {
  TeacherHistory h;
  const std::size_t cut = course_cut(store, as_of);
  const auto& courses = store.courses();
  std::map<std::uint32_t, std::size_t> per_student;
  for (const auto idx : store.courses_of(teacher)) {
    if (idx >= cut) break;
    ++h.total_courses;
    ++per_student[*store.student_index(courses[idx].student)];
  }
  h.distinct_students = per_student.size();
  double positive_sum = 0.0;
  std::size_t completed = 0;
  for (const auto& [s, count] : per_student) {
    const auto& outcome = store.outcome_of(s);
    if (!outcome || !(outcome->decided_at < as_of)) continue;
    ++h.finished_students;
    if (outcome->outcome == Outcome::Dropped) {
      ++h.dropped_students;
      continue;
    }
    std::size_t total = 0;
    for (const auto& pair : store.pairs_of(s)) total += count_before(pair.courses, cut);
    positive_sum += static_cast<double>(count) / static_cast<double>(total);
    ++completed;
  }
  h.mean_positive_score = completed ? positive_sum / static_cast<double>(completed) : 0.0;
  return h;
}

}  // namespace

bool FeatureSpec::capped() const {
  return kind == FeatureKind::OneHot && !vocabulary.empty() && vocabulary.back() == kOtherToken;
}

FeatureSchema::FeatureSchema(std::vector<FeatureSpec> features) : features_(std::move(features)) {
  std::set<std::string> names;
  offsets_.reserve(features_.size());
  for (const auto& f : features_) {
    if (!names.insert(f.name).second) throw InvalidArgument("duplicate feature name " + f.name);
    if (f.kind == FeatureKind::OneHot && f.vocabulary.empty()) {
      throw InvalidArgument("one-hot feature " + f.name + " has no vocabulary");
    }
    offsets_.push_back(width_);
    width_ += f.width();
  }
  fingerprint_ = fnv1a64(schema_document(features_).dump());
}

std::vector<std::string> FeatureSchema::column_names() const {
  std::vector<std::string> names;
  names.reserve(width_);
  for (const auto& f : features_) {
    if (f.kind == FeatureKind::Numeric) {
      names.push_back(f.name);
    } else {
      for (const auto& v : f.vocabulary) names.push_back(f.name + "=" + v);
    }
  }
  return names;
}

std::optional<std::size_t> FeatureSchema::find(std::string_view name) const {
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (features_[i].name == name) return i;
  }
  return std::nullopt;
}

std::string FeatureSchema::to_json() const {
  auto doc = schema_document(features_);
  doc["fingerprint"] = fingerprint_hex(fingerprint_);
  return doc.dump(2);
}

FeatureSchema FeatureSchema::from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("schema is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != "teachrec.feature_schema") {
      throw FormatError("not a feature schema document");
    }
    if (doc.at("version").get<int>() != kFormatVersion) {
      throw FormatError("unsupported schema version " + doc.at("version").dump());
    }
    std::vector<FeatureSpec> features;
    for (const auto& item : doc.at("features")) {
      FeatureSpec f;
      f.name = item.at("name").get<std::string>();
      f.family = parse_family(item.at("family").get<std::string>());
      const auto kind = item.at("kind").get<std::string>();
      if (kind == "numeric") {
        f.kind = FeatureKind::Numeric;
      } else if (kind == "one_hot") {
        f.kind = FeatureKind::OneHot;
        f.vocabulary = item.at("vocabulary").get<std::vector<std::string>>();
      } else {
        throw FormatError("unknown feature kind '" + kind + "'");
      }
      f.binding = parse_binding(item.at("binding").get<std::string>());
      f.column = item.at("column").get<std::string>();
      features.push_back(std::move(f));
    }
    FeatureSchema schema(std::move(features));
    if (doc.contains("fingerprint") &&
        doc["fingerprint"].get<std::string>() != fingerprint_hex(schema.fingerprint())) {
      throw SchemaMismatch("schema fingerprint does not match its contents");
    }
    return schema;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed schema document: ") + e.what());
  }
}

std::string fingerprint_hex(std::uint64_t fingerprint) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fingerprint));
  return buf;
}

FeatureSchema build_schema(const EntityTable& students, const EntityTable& teachers,
                           std::span<const std::string> stat_columns, SchemaOptions options) {
  if (students.empty()) throw InvalidArgument("students table is empty");
  if (teachers.empty()) throw InvalidArgument("teachers table is empty");

  std::vector<FeatureSpec> features;
  std::map<std::string, ColumnProfile> student_profiles;
  std::map<std::string, ColumnProfile> teacher_profiles;

  auto add_entity = [&](const EntityTable& table, const std::string& prefix, bool is_student,
                        std::map<std::string, ColumnProfile>& profiles) {
    features.push_back({prefix + ".known", FeatureFamily::Demographic, FeatureKind::Numeric,
                        is_student ? FeatureBinding::StudentKnown : FeatureBinding::TeacherKnown,
                        "", {}});
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      const auto& column = table.columns[c];
      auto profile = profile_column(table, c, options.max_vocabulary);
      if (profile.numeric) {
        features.push_back({prefix + "." + column, FeatureFamily::Demographic,
                            FeatureKind::Numeric,
                            is_student ? FeatureBinding::StudentColumn
                                       : FeatureBinding::TeacherColumn,
                            column, {}});
        features.push_back({prefix + "." + column + ".missing", FeatureFamily::Demographic,
                            FeatureKind::Numeric,
                            is_student ? FeatureBinding::StudentMissing
                                       : FeatureBinding::TeacherMissing,
                            column, {}});
      } else {
        features.push_back({prefix + "." + column, FeatureFamily::Demographic,
                            FeatureKind::OneHot,
                            is_student ? FeatureBinding::StudentColumn
                                       : FeatureBinding::TeacherColumn,
                            column, profile.vocabulary});
      }
      profiles.emplace(column, std::move(profile));
    }
  };
  add_entity(students, "student", true, student_profiles);
  add_entity(teachers, "teacher", false, teacher_profiles);

  for (const auto& column : students.columns) {
    const auto t = teacher_profiles.find(column);
    if (t == teacher_profiles.end()) continue;
    const bool numeric = student_profiles.at(column).numeric && t->second.numeric;
    features.push_back({numeric ? "pair.absdiff_" + column : "pair.same_" + column,
                        FeatureFamily::Demographic, FeatureKind::Numeric,
                        numeric ? FeatureBinding::PairAbsDiff : FeatureBinding::PairSame, column,
                        {}});
  }

  std::vector<std::string> stats(stat_columns.begin(), stat_columns.end());
  std::sort(stats.begin(), stats.end());
  stats.erase(std::unique(stats.begin(), stats.end()), stats.end());
  for (const auto& stat : stats) {
    features.push_back({"inclass.mean_" + stat, FeatureFamily::InClass, FeatureKind::Numeric,
                        FeatureBinding::InClassMean, stat, {}});
  }

  const std::pair<const char*, FeatureBinding> historical[] = {
      {"hist.has_history", FeatureBinding::HistHasHistory},
      {"hist.log1p_total_courses", FeatureBinding::HistLogTotalCourses},
      {"hist.distinct_students", FeatureBinding::HistDistinctStudents},
      {"hist.dropout_rate", FeatureBinding::HistDropoutRate},
      {"hist.mean_positive_score", FeatureBinding::HistMeanPositiveScore},
  };
  for (const auto& [name, binding] : historical) {
    features.push_back({name, FeatureFamily::Historical, FeatureKind::Numeric, binding, "", {}});
  }
  return FeatureSchema(std::move(features));
}

TeacherHistory teacher_history(const InteractionStore& store, const TeacherId& teacher,
                               Timestamp as_of) {
  const auto t = store.teacher_index(teacher);
  if (!t) return {};
  return history_of(store, *t, as_of);
}

FeatureExtractor::FeatureExtractor(const FeatureSchema& schema, const EntityTable& students,
                                   const EntityTable& teachers, const InteractionStore& store)
    : schema_(schema), store_(store) {
  auto load = [](const EntityTable& table, std::map<std::string, EntityEncoding>& out,
                 std::map<std::string, std::size_t>& columns) {
    for (std::size_t c = 0; c < table.columns.size(); ++c) columns.emplace(table.columns[c], c);
    for (const auto& [id, values] : table.rows) {
      EntityEncoding enc;
      enc.raw = values;
      enc.numeric.reserve(values.size());
      for (const auto& v : values) enc.numeric.push_back(to_number(v));
      out.emplace(id, std::move(enc));
    }
  };
  load(students, students_, student_columns_);
  load(teachers, teachers_, teacher_columns_);

  auto lookup = [](const std::map<std::string, std::size_t>& columns, const std::string& name) {
    const auto it = columns.find(name);
    return it == columns.end() ? std::optional<std::size_t>() : std::optional(it->second);
  };
  for (const auto& f : schema_.features()) {
    student_column_.push_back(lookup(student_columns_, f.column));
    teacher_column_.push_back(lookup(teacher_columns_, f.column));
  }
}

void FeatureExtractor::encode_entity(std::span<double> out, std::size_t feature,
                                     const EntityEncoding* entity, std::size_t column) const {
  const auto& spec = schema_.features()[feature];
  const std::size_t offset = schema_.offset(feature);
  if (!entity) return;  // unknown entity: block stays zero
  const std::string& raw = column < entity->raw.size() ? entity->raw[column] : std::string();
  if (spec.kind == FeatureKind::Numeric) {
    const auto& num = column < entity->numeric.size() ? entity->numeric[column] : std::nullopt;
    out[offset] = num.value_or(0.0);
    return;
  }
  const auto& vocab = spec.vocabulary;
  const std::string_view key = raw.empty() ? kMissingToken : std::string_view(raw);
  const auto end = spec.capped() ? vocab.end() - 2 : vocab.end() - 1;
  const auto it = std::lower_bound(vocab.begin(), end, key);
  if (it != end && *it == key) {
    out[offset + static_cast<std::size_t>(it - vocab.begin())] = 1.0;
  } else if (raw.empty()) {
    out[offset + static_cast<std::size_t>(end - vocab.begin())] = 1.0;
  } else if (spec.capped()) {
    out[offset + vocab.size() - 1] = 1.0;
  }
  // otherwise an out-of-vocabulary value encodes as all zeros
}

FeatureVector FeatureExtractor::extract(const StudentId& student, const TeacherId& teacher,
                                        Timestamp as_of) const {
  FeatureVector v;
  v.values.assign(schema_.width(), 0.0);
  v.schema_fingerprint = schema_.fingerprint();
  extract_into(v.values, student, teacher, as_of);
  return v;
}

void FeatureExtractor::extract_into(std::span<double> out, const StudentId& student,
                                    const TeacherId& teacher, Timestamp as_of,
                                    const TeacherHistory* history) const {
  if (out.size() != schema_.width()) {
    throw InvalidArgument("feature buffer has width " + std::to_string(out.size()) +
                          ", schema needs " + std::to_string(schema_.width()));
  }
  std::fill(out.begin(), out.end(), 0.0);

  const auto s_it = students_.find(student.str());
  const auto t_it = teachers_.find(teacher.str());
  const EntityEncoding* s_enc = s_it == students_.end() ? nullptr : &s_it->second;
  const EntityEncoding* t_enc = t_it == teachers_.end() ? nullptr : &t_it->second;

  const InteractionStore::PairEntry* pair = nullptr;
  bool pair_ready = false;
  auto pair_entry = [&]() {
    if (!pair_ready) {
      const auto s = store_.student_index(student);
      const auto t = store_.teacher_index(teacher);
      pair = (s && t) ? store_.find_pair(*s, *t) : nullptr;
      pair_ready = true;
    }
    return pair;
  };

  TeacherHistory local;
  bool history_ready = history != nullptr;
  auto hist = [&]() -> const TeacherHistory& {
    if (!history_ready) {
      local = teacher_history(store_, teacher, as_of);
      history = &local;
      history_ready = true;
    }
    return *history;
  };

  const auto& features = schema_.features();
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    double& slot = out[schema_.offset(i)];
    switch (f.binding) {
      case FeatureBinding::StudentKnown: slot = s_enc ? 1.0 : 0.0; break;
      case FeatureBinding::TeacherKnown: slot = t_enc ? 1.0 : 0.0; break;
      case FeatureBinding::StudentColumn:
        encode_entity(out, i, student_column_[i] ? s_enc : nullptr, student_column_[i].value_or(0));
        break;
      case FeatureBinding::TeacherColumn:
        encode_entity(out, i, teacher_column_[i] ? t_enc : nullptr, teacher_column_[i].value_or(0));
        break;
      case FeatureBinding::StudentMissing:
        if (s_enc && student_column_[i]) slot = s_enc->numeric[*student_column_[i]] ? 0.0 : 1.0;
        break;
      case FeatureBinding::TeacherMissing:
        if (t_enc && teacher_column_[i]) slot = t_enc->numeric[*teacher_column_[i]] ? 0.0 : 1.0;
        break;
      case FeatureBinding::PairSame:
      case FeatureBinding::PairAbsDiff: {
        const auto sc = student_column_[i];
        const auto tc = teacher_column_[i];
        if (!s_enc || !t_enc || !sc || !tc) break;
        if (f.binding == FeatureBinding::PairSame) {
          const auto& a = s_enc->raw[*sc];
          const auto& b = t_enc->raw[*tc];
          slot = (!a.empty() && a == b) ? 1.0 : 0.0;
        } else {
          const auto& a = s_enc->numeric[*sc];
          const auto& b = t_enc->numeric[*tc];
          slot = (a && b) ? std::abs(*a - *b) : 0.0;
        }
        break;
      }
      case FeatureBinding::InClassMean: {
        const auto* pair = pair_entry();
        if (!pair) break;
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto idx : pair->courses) {
          const auto& course = store_.courses()[idx];
          if (!(course.timestamp < as_of)) break;
          const auto it = course.stats.find(f.column);
          if (it == course.stats.end()) continue;
          sum += it->second;
          ++n;
        }
        slot = n ? sum / static_cast<double>(n) : 0.0;
        break;
      }
      case FeatureBinding::HistHasHistory: slot = hist().has_history() ? 1.0 : 0.0; break;
      case FeatureBinding::HistLogTotalCourses:
        slot = std::log1p(static_cast<double>(hist().total_courses));
        break;
      case FeatureBinding::HistDistinctStudents:
        slot = static_cast<double>(hist().distinct_students);
        break;
      case FeatureBinding::HistDropoutRate: slot = hist().dropout_rate(); break;
      case FeatureBinding::HistMeanPositiveScore: slot = hist().mean_positive_score; break;
    }
  }
}

TrainingSet build_training_set(const FeatureExtractor& extractor,
                               std::span<const LabeledPair> labels) {
  const auto& store = extractor.store();
  TrainingSet set;
  set.rows.reserve(labels.size());
  set.targets.reserve(labels.size());
  for (const auto& label : labels) {
    const auto s = store.student_index(label.student);
    const auto t = store.teacher_index(label.teacher);
    const auto* pair = (s && t) ? store.find_pair(*s, *t) : nullptr;
    if (!pair) {
      throw InvalidArgument("label (" + label.student.str() + ", " + label.teacher.str() +
                            ") has no courses in the store");
    }
    const Timestamp matched_at = store.courses()[pair->courses.front()].timestamp;
    set.rows.push_back(extractor.extract(label.student, label.teacher, matched_at));
    set.targets.push_back(label.score.value);
  }
  return set;
}

}  // namespace teachrec
