#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "teachrec/baselines.hpp"
#include "teachrec/core.hpp"
#include "teachrec/gbdt.hpp"
#include "teachrec/pseudo_labels.hpp"
#include "teachrec/ranking.hpp"

namespace teachrec::evaluation {

struct HeldOutPair {
  StudentId student;
  TeacherId teacher;
  double score = 0.0;

  friend bool operator==(const HeldOutPair&, const HeldOutPair&) = default;
};

struct TestSplit {
  std::vector<HeldOutPair> held_out;  // ordered by (student, teacher)
  std::vector<LabeledPair> training;  // every other label, original order
  double threshold = 0.5;

  /// Distinct students of the held-out pairs, sorted.
  std::vector<StudentId> test_students() const;
};

/// Samples `sample_size` pairs uniformly without replacement among positive
/// labels with score strictly above `threshold`. Throws InvalidArgument when
/// fewer pairs are eligible.
TestSplit make_split(std::span<const LabeledPair> labels, double threshold,
                     std::size_t sample_size, std::uint64_t seed);

/// Throws Error when a held-out pair also appears among the training labels
/// or falls at or below the threshold.
void check_no_leak(const TestSplit& split);

using SlateMap = std::map<StudentId, RecommendationSlate>;

/// Held-out pairs whose teacher is within the first k entries of the
/// student's slate. Throws InvalidArgument when a test student has no slate.
std::size_t count_hits(const TestSplit& split, const SlateMap& slates, std::size_t k);

/// hits / held-out pairs (0 for an empty split).
double recall_at_k(const TestSplit& split, const SlateMap& slates, std::size_t k);

/// hits / (test students * k).
double precision_at_k(const TestSplit& split, const SlateMap& slates, std::size_t k);

/// Anything that can fill a top-k slate from a candidate list.
class Recommender {
 public:
  virtual ~Recommender() = default;
  virtual std::string name() const = 0;
  /// Matrix-factorisation style models cannot say anything about new teachers.
  virtual bool reports_new_teacher_ratio() const { return false; }
  virtual RecommendationSlate recommend(const StudentId& student,
                                        std::span<const TeacherId> candidates,
                                        std::size_t k) const = 0;
};

class RankerRecommender : public Recommender {
 public:
  RankerRecommender(std::string name, const SlateRanker& ranker)
      : name_(std::move(name)), ranker_(ranker) {}
  std::string name() const override { return name_; }
  bool reports_new_teacher_ratio() const override { return true; }
  RecommendationSlate recommend(const StudentId& student, std::span<const TeacherId> candidates,
                                std::size_t k) const override;

 private:
  std::string name_;
  const SlateRanker& ranker_;
};

class ItemCfRecommender : public Recommender {
 public:
  ItemCfRecommender(const baselines::RatingMatrix& matrix, std::size_t neighbours)
      : model_(matrix, neighbours) {}
  std::string name() const override { return "ItemCF"; }
  RecommendationSlate recommend(const StudentId& student, std::span<const TeacherId> candidates,
                                std::size_t k) const override;

 private:
  baselines::ItemCf model_;
};

class FactorRecommender : public Recommender {
 public:
  FactorRecommender(std::string name, const baselines::RatingMatrix& matrix,
                    baselines::FactorModel model)
      : name_(std::move(name)), matrix_(matrix), model_(std::move(model)) {}
  std::string name() const override { return name_; }
  RecommendationSlate recommend(const StudentId& student, std::span<const TeacherId> candidates,
                                std::size_t k) const override;

 private:
  std::string name_;
  const baselines::RatingMatrix& matrix_;
  baselines::FactorModel model_;
};

/// Scores produced elsewhere, read from a CSV with columns student_id,
/// teacher_id, score. Throws Error when asked for a pair the file lacks.
class ExternalScores : public Recommender {
 public:
  ExternalScores(std::string name, const std::filesystem::path& path,
                 bool reports_new_teacher_ratio = false);
  std::string name() const override { return name_; }
  bool reports_new_teacher_ratio() const override { return reports_ratio_; }
  RecommendationSlate recommend(const StudentId& student, std::span<const TeacherId> candidates,
                                std::size_t k) const override;

 private:
  std::string name_;
  bool reports_ratio_;
  std::map<std::pair<std::string, std::string>, double> scores_;
};

struct EvalRow {
  std::string model;
  double precision = 0.0;
  double recall = 0.0;
  double diversity = 0.0;
  std::optional<double> new_teacher_ratio;  // nullopt prints as N/A
};

struct EvalReport {
  std::size_t k = 0;
  std::size_t held_out_pairs = 0;
  std::size_t test_students = 0;
  std::vector<EvalRow> rows;

  const EvalRow* find(std::string_view model) const;
  std::string to_text() const;
  /// Header: Model,Precision,Recall,Diversity,New Teacher Ratio
  std::string to_csv() const;
};

/// Teachers from `universe` the student has no course with in `store`.
std::vector<TeacherId> candidate_pool(const InteractionStore& store, const StudentId& student,
                                      std::span<const TeacherId> universe);

/// One row per model, each built from the same candidate pools. `store` is
/// the training-side store (held-out pairs removed); new teachers are those
/// with Z < delta in it. Runs check_no_leak first.
EvalReport evaluate_all(const TestSplit& split, std::span<const Recommender* const> models,
                        const InteractionStore& store, std::span<const TeacherId> universe,
                        const BoostParams& boost, std::size_t k);

/// The store without the courses of the given pairs. Outcomes of students
/// left without any course are dropped as well.
InteractionStore mask_pairs(const InteractionStore& store, std::span<const HeldOutPair> pairs);

struct OfflineConfig {
  double threshold = 0.5;
  std::size_t holdout_pairs = 821;
  std::uint64_t split_seed = 0;
  std::size_t k = 200;
  BoostParams boost;
  gbdt::TrainParams gbdt;
  bool baselines = true;
  std::size_t itemcf_neighbours = 50;
  std::size_t latent_rank = 16;
  std::size_t svd_iterations = 30;
  std::size_t nmf_iterations = 200;
  std::uint64_t factor_seed = 0;
};

/// Split and masked store shared by training and evaluation.
struct PreparedData {
  std::vector<LabeledPair> labels;  // from the full store
  TestSplit split;
  InteractionStore train_store;
};

PreparedData prepare(const InteractionStore& full, const OfflineConfig& config);

/// Evaluates a trained ranker (and the baselines when enabled) on prepared
/// data. `external` models are appended as extra rows. Throws SchemaMismatch
/// when the model does not belong to the schema.
EvalReport evaluate_offline(const PreparedData& data, const EntityTable& students,
                            const EntityTable& teachers, const FeatureSchema& schema,
                            const gbdt::GbdtModel& model, const OfflineConfig& config,
                            std::span<const Recommender* const> external = {});

struct OfflineResult {
  PreparedData data;
  TrainedRanker ranker;
  EvalReport report;
};

/// prepare, train on the training side, evaluate.
OfflineResult run_offline(const InteractionStore& full, const EntityTable& students,
                          const EntityTable& teachers, const OfflineConfig& config);

}  // namespace teachrec::evaluation
