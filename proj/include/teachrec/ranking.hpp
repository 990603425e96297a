#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "teachrec/core.hpp"
#include "teachrec/features.hpp"
#include "teachrec/gbdt.hpp"

namespace teachrec {

/// Novelty boost hyperparameters; all strictly positive.
class BoostParams {
 public:
  /// Throws InvalidArgument unless alpha > 0, beta > 0 and delta >= 1.
  BoostParams(double alpha = 0.04, double beta = 1.0, std::size_t delta = 100);

  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  /// Course-count threshold: teachers with fewer total courses are boosted.
  std::size_t delta() const { return delta_; }

  bool is_new(std::size_t total_courses) const { return total_courses < delta_; }

 private:
  double alpha_;
  double beta_;
  std::size_t delta_;
};

/// alpha / sqrt(Z + beta) while Z < delta, 0 afterwards.
double novelty_boost(std::size_t total_courses, const BoostParams& params);

struct SlateEntry {
  TeacherId teacher;
  double model_score = 0.0;
  double boost = 0.0;
  double combined_score = 0.0;
};

/// Sorted by combined_score descending, ties by teacher id ascending.
struct RecommendationSlate {
  StudentId student;
  std::vector<SlateEntry> entries;
};

struct RankResult {
  RecommendationSlate slate;
  bool truncated = false;  // fewer eligible candidates than K
};

/// Orders `entries` with the slate tie-break and keeps the first k.
/// Throws InvalidArgument on duplicate teachers or k == 0.
RankResult make_slate(StudentId student, std::vector<SlateEntry> entries, std::size_t k);

/// Scores candidates with the model plus novelty boost, as of one instant.
/// Teacher histories are computed once at construction; read-only afterwards.
class SlateRanker {
 public:
  /// Throws SchemaMismatch when the model was trained on another schema.
  SlateRanker(const gbdt::GbdtModel& model, const FeatureExtractor& extractor,
              BoostParams boost, Timestamp as_of, bool apply_boost = true);

  /// Entries for every candidate, unsorted, no exclusions.
  std::vector<SlateEntry> score(const StudentId& student,
                                std::span<const TeacherId> candidates) const;

  /// Top-k slate over candidates the student has never taken a course with.
  /// Throws InvalidArgument for an empty candidate list or k == 0.
  RankResult rank(const StudentId& student, std::span<const TeacherId> candidates,
                  std::size_t k) const;

  const BoostParams& boost() const { return boost_; }
  Timestamp as_of() const { return as_of_; }

 private:
  const TeacherHistory* history(const TeacherId& teacher) const;

  const gbdt::GbdtModel& model_;
  const FeatureExtractor& extractor_;
  BoostParams boost_;
  Timestamp as_of_;
  bool apply_boost_;
  std::vector<TeacherHistory> histories_;  // by store teacher index
};

RankResult rank(const StudentId& student, std::span<const TeacherId> candidates,
                const gbdt::GbdtModel& model, const FeatureExtractor& extractor,
                const BoostParams& params, std::size_t k, Timestamp as_of);

/// Mean over slates of the fraction of recommended teachers that are new.
/// Throws InvalidArgument for no slates or an empty slate.
double new_teacher_ratio(std::span<const RecommendationSlate> slates,
                         const std::function<bool(const TeacherId&)>& is_new);
/// New means Z_j < delta with Z_j taken from the store.
double new_teacher_ratio(std::span<const RecommendationSlate> slates,
                         const InteractionStore& store, const BoostParams& params);

/// One minus the mean pairwise overlap |A ∩ B| / min(|A|, |B|) over all
/// student pairs. Throws InvalidArgument for fewer than 2 slates or an empty one.
double diversity(std::span<const RecommendationSlate> slates);

/// Model plus the schema it was trained against.
struct TrainedRanker {
  FeatureSchema schema;
  gbdt::GbdtModel model;
  std::size_t positive_labels = 0;
  std::size_t negative_labels = 0;
  double final_training_mse = 0.0;
};

/// Builds the schema from the tables and the store's stat columns, encodes
/// each label at its match time and fits the boosted trees.
TrainedRanker train_ranker(const InteractionStore& store, const EntityTable& students,
                           const EntityTable& teachers, std::span<const LabeledPair> labels,
                           const gbdt::TrainParams& params, SchemaOptions schema_options = {});

/// One JSON object per line: {student_id, entries:[{teacher_id, model_score,
/// boost, combined_score}]}.
void write_slates_jsonl(std::ostream& out, std::span<const RecommendationSlate> slates);

}  // namespace teachrec
