#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "teachrec/core.hpp"
#include "teachrec/pseudo_labels.hpp"

namespace teachrec {

enum class FeatureFamily { Demographic, InClass, Historical };
enum class FeatureKind { Numeric, OneHot };

/// What a feature reads. Entity columns refer to the students/teachers tables.
enum class FeatureBinding {
  StudentKnown,
  TeacherKnown,
  StudentColumn,
  TeacherColumn,
  StudentMissing,  // indicator for a missing numeric student attribute
  TeacherMissing,
  PairSame,        // both attributes present and equal
  PairAbsDiff,     // |student - teacher| for a numeric attribute shared by both tables
  InClassMean,     // per-pair mean of a course stat column before as_of
  HistHasHistory,
  HistLogTotalCourses,
  HistDistinctStudents,
  HistDropoutRate,
  HistMeanPositiveScore,
};

inline constexpr std::string_view kMissingToken = "__MISSING__";
inline constexpr std::string_view kOtherToken = "__OTHER__";

struct FeatureSpec {
  std::string name;
  FeatureFamily family = FeatureFamily::Demographic;
  FeatureKind kind = FeatureKind::Numeric;
  FeatureBinding binding = FeatureBinding::StudentKnown;
  std::string column;  // table or stat column, empty when unused
  /// One-hot only: sorted kept values, then the MISSING token, then OTHER
  /// when the vocabulary was capped.
  std::vector<std::string> vocabulary;

  std::size_t width() const { return kind == FeatureKind::OneHot ? vocabulary.size() : 1; }
  bool capped() const;

  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

/// Ordered, published feature layout shared by training and serving.
class FeatureSchema {
 public:
  static constexpr int kFormatVersion = 1;

  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<FeatureSpec> features);

  const std::vector<FeatureSpec>& features() const { return features_; }
  std::size_t width() const { return width_; }
  /// Start column of feature `i` in the encoded vector.
  std::size_t offset(std::size_t i) const { return offsets_[i]; }
  /// FNV-1a 64 of the canonical JSON document.
  std::uint64_t fingerprint() const { return fingerprint_; }
  /// Encoded column names, e.g. `student.gender=F`.
  std::vector<std::string> column_names() const;
  std::optional<std::size_t> find(std::string_view name) const;

  std::string to_json() const;
  static FeatureSchema from_json(std::string_view text);

  friend bool operator==(const FeatureSchema& a, const FeatureSchema& b) {
    return a.features_ == b.features_;
  }

 private:
  std::vector<FeatureSpec> features_;
  std::vector<std::size_t> offsets_;
  std::size_t width_ = 0;
  std::uint64_t fingerprint_ = 0;
};

std::string fingerprint_hex(std::uint64_t fingerprint);

struct SchemaOptions {
  /// Categorical columns with more distinct values keep the most frequent
  /// ones and bucket the rest into OTHER.
  std::size_t max_vocabulary = 24;
};

/// Columns whose non-empty values all parse as numbers become numeric
/// features (plus a missing indicator); the rest become one-hot. Columns with
/// the same name in both tables also get a pair-match feature. Throws
/// InvalidArgument when either table is empty.
FeatureSchema build_schema(const EntityTable& students, const EntityTable& teachers,
                           std::span<const std::string> stat_columns, SchemaOptions options = {});

struct FeatureVector {
  std::vector<double> values;
  std::uint64_t schema_fingerprint = 0;
};

/// Aggregate past performance of one teacher, from records strictly before as_of.
struct TeacherHistory {
  std::size_t total_courses = 0;
  std::size_t distinct_students = 0;
  std::size_t finished_students = 0;  // students whose outcome was decided before as_of
  std::size_t dropped_students = 0;
  double mean_positive_score = 0.0;   // over completed finished students

  bool has_history() const { return finished_students > 0; }
  double dropout_rate() const {
    return finished_students ? static_cast<double>(dropped_students) / finished_students : 0.0;
  }
};

TeacherHistory teacher_history(const InteractionStore& store, const TeacherId& teacher,
                               Timestamp as_of);

/// Encodes (student, teacher) pairs against a schema. Holds references; the
/// schema, tables and store must outlive it. Thread-safe for concurrent reads.
class FeatureExtractor {
 public:
  FeatureExtractor(const FeatureSchema& schema, const EntityTable& students,
                   const EntityTable& teachers, const InteractionStore& store);

  const FeatureSchema& schema() const { return schema_; }
  const InteractionStore& store() const { return store_; }

  FeatureVector extract(const StudentId& student, const TeacherId& teacher,
                        Timestamp as_of) const;

  /// Writes the encoded pair into `out` (length = schema width). `history`
  /// may carry a precomputed teacher_history for the same as_of.
  void extract_into(std::span<double> out, const StudentId& student, const TeacherId& teacher,
                    Timestamp as_of, const TeacherHistory* history = nullptr) const;

 private:
  struct EntityEncoding {
    std::vector<std::string> raw;              // per table column, empty = missing
    std::vector<std::optional<double>> numeric;
  };

  void encode_entity(std::span<double> out, std::size_t feature, const EntityEncoding* entity,
                     std::size_t column) const;

  const FeatureSchema& schema_;
  const InteractionStore& store_;
  std::map<std::string, EntityEncoding> students_;
  std::map<std::string, EntityEncoding> teachers_;
  std::map<std::string, std::size_t> student_columns_;
  std::map<std::string, std::size_t> teacher_columns_;
  // per schema feature: table column it binds to, if present
  std::vector<std::optional<std::size_t>> student_column_;
  std::vector<std::optional<std::size_t>> teacher_column_;
};

/// Dense row-major design matrix with its targets.
struct TrainingSet {
  std::vector<FeatureVector> rows;
  std::vector<double> targets;
};

/// Each label is encoded as of the pair's first course, i.e. the moment the
/// match was made, so neither the pair's own lessons nor its outcome leak in.
/// Throws InvalidArgument for a label whose pair is not in the store.
TrainingSet build_training_set(const FeatureExtractor& extractor,
                               std::span<const LabeledPair> labels);

}  // namespace teachrec
