#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "teachrec/core.hpp"
#include "teachrec/gbdt.hpp"
#include "teachrec/ranking.hpp"

namespace teachrec::sim {

struct WorldConfig {
  std::size_t n_students = 2000;
  std::size_t n_teachers = 1000;
  std::size_t latent_dim = 4;
  double dropout_steepness = 10.0;
  std::size_t teacher_capacity = 8;
  /// Teachers flagged as joining after the historical period.
  double fraction_new_teachers = 0.1;
  std::uint64_t rng_seed = 1;

  // Planted structure. Affinity is sigmoid(affinity_scale * <u_s, v_t>),
  // where the vectors concatenate demographic embeddings (grade on a half
  // circle, gender sign, school one-hot), a teacher quality term, a bias and
  // free latent factors.
  double affinity_scale = 2.5;
  double grade_weight = 1.0;
  double gender_weight = 0.5;
  double school_weight = 0.7;
  double quality_spread = 0.6;
  double latent_weight = 0.6;
  double bias = -1.0;
  std::size_t n_grades = 12;
  std::size_t n_schools = 20;

  /// Throws InvalidArgument on zero counts, non-positive steepness or a
  /// fraction outside [0, 1].
  void validate() const;
};

struct World {
  WorldConfig config;
  std::vector<StudentId> students;
  std::vector<TeacherId> teachers;
  std::vector<char> teacher_is_new;
  Eigen::MatrixXd student_vectors;  // one row per student
  Eigen::MatrixXd teacher_vectors;  // one row per teacher
  /// When set, replaces the vector model (rows students, cols teachers).
  std::optional<Eigen::MatrixXd> affinity_override;
  EntityTable student_table;
  EntityTable teacher_table;

  double affinity(std::size_t student, std::size_t teacher) const;
  std::size_t student_count() const { return students.size(); }
  std::size_t teacher_count() const { return teachers.size(); }
};

/// Deterministic under config.rng_seed. Ids are S00000.. / T00000.. so index
/// order equals id order.
World generate_world(const WorldConfig& config);

/// World from explicit latent vectors (rows must have equal width).
World world_from_vectors(Eigen::MatrixXd student_vectors, Eigen::MatrixXd teacher_vectors,
                         WorldConfig config);

/// World from an explicit affinity matrix in [0, 1].
World world_from_affinity(Eigen::MatrixXd affinity, WorldConfig config);

/// 1 / (1 + exp(steepness * (affinity - 0.5))).
double dropout_probability(double affinity, double steepness);

/// What a policy sees when a student needs a teacher.
struct MatchRequest {
  const World& world;
  std::size_t student;
  std::span<const char> dropped;    // teachers this student already left
  std::span<const std::size_t> load;
  std::span<const char> available;  // teachers open for matching in this episode
  std::size_t capacity;

  bool feasible(std::size_t teacher) const {
    return available[teacher] && !dropped[teacher] && load[teacher] < capacity;
  }
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  /// Called before every episode with that episode's seed.
  virtual void reset(std::uint64_t /*episode_seed*/) {}
  /// Must return a feasible teacher; at least one exists when called.
  virtual std::size_t choose(const MatchRequest& request) = 0;
};

class UniformRandomPolicy : public Policy {
 public:
  explicit UniformRandomPolicy(std::uint64_t seed = 0) : seed_(seed) {}
  std::string name() const override { return "random"; }
  void reset(std::uint64_t episode_seed) override;
  std::size_t choose(const MatchRequest& request) override;

 private:
  std::uint64_t seed_;
  std::uint64_t state_ = 0;
};

/// Highest true affinity among feasible teachers; ties to the lowest index.
class OracleAffinityPolicy : public Policy {
 public:
  std::string name() const override { return "oracle"; }
  std::size_t choose(const MatchRequest& request) override;
};

/// Greedy on a fixed student x teacher score matrix; ties to the lowest index.
class ScoreMatrixPolicy : public Policy {
 public:
  ScoreMatrixPolicy(std::string name, Eigen::MatrixXd scores)
      : name_(std::move(name)), scores_(std::move(scores)) {}
  std::string name() const override { return name_; }
  std::size_t choose(const MatchRequest& request) override;
  const Eigen::MatrixXd& scores() const { return scores_; }

 private:
  std::string name_;
  Eigen::MatrixXd scores_;
};

/// Scores every (student, teacher) pair of the world with a trained ranker
/// (model score plus novelty boost when `boost` is set).
std::unique_ptr<ScoreMatrixPolicy> make_ranker_policy(std::string name, const World& world,
                                                      const TrainedRanker& ranker,
                                                      const InteractionStore& history,
                                                      const BoostParams& boost, bool apply_boost,
                                                      Timestamp as_of);

struct EpisodeOptions {
  /// Maximum matching attempts per student.
  std::size_t horizon = 10;
  std::size_t blocks_to_complete = 4;
  std::size_t courses_per_block = 8;
  std::uint64_t seed = 0;
  Timestamp start = Timestamp{std::chrono::milliseconds{1577836800000LL}};  // 2020-01-01
  /// Participating students, in matching order; empty means all.
  std::vector<std::size_t> students;
  /// Teachers open for matching; empty means all.
  std::vector<char> teacher_available;
  /// Teachers counted as new in the assignment statistics; empty means world.teacher_is_new.
  std::vector<char> new_teacher_mask;
  bool record_log = true;
};

struct EpisodeStats {
  double mean_matching_attempts = 0.0;
  double completion_rate = 0.0;
  std::vector<std::size_t> attempts;  // per participating student, in matching order
  std::size_t assignments = 0;
  std::size_t new_teacher_assignments = 0;
  std::vector<CourseRecord> courses;
  std::vector<OutcomeRecord> outcomes;

  double new_teacher_assignment_rate() const {
    return assignments ? static_cast<double>(new_teacher_assignments) / assignments : 0.0;
  }
};

/// Round-based matching: each round unmatched students get a teacher from
/// the policy, matched students take one block of courses and then drop with
/// dropout_probability(affinity). A student completes after
/// blocks_to_complete blocks or stops after `horizon` attempts (dropped).
/// Throws InvalidArgument when the policy returns an infeasible teacher or
/// horizon == 0.
EpisodeStats run_episode(const World& world, Policy& policy, const EpisodeOptions& options);

struct PolicySummary {
  std::string policy;
  double mean_attempts = 0.0;
  double stddev_attempts = 0.0;  // over all per-student attempt counts
  double completion_rate = 0.0;
  double new_teacher_assignment_rate = 0.0;
  std::vector<double> episode_means;
};

struct ComparisonTable {
  std::vector<PolicySummary> rows;

  std::string to_text() const;
  std::string to_csv() const;
};

/// Runs every policy over the same `episodes` seeds (options.seed + e).
/// Throws InvalidArgument when episodes == 0 or no policies are given.
ComparisonTable compare_policies(const World& world, std::span<Policy* const> policies,
                                 std::size_t episodes, const EpisodeOptions& options);

/// Historical logs from a uniform-random marketplace over the non-new
/// teachers; new teachers appear in the tables but have no courses.
struct SyntheticLogs {
  World world;
  std::vector<CourseRecord> courses;
  std::vector<OutcomeRecord> outcomes;
};

SyntheticLogs generate_logs(const WorldConfig& config, EpisodeOptions options);

/// The online-style experiment: a historical cohort matched at random trains
/// the ranker; a fresh cohort is then matched by each policy.
struct ExperimentOptions {
  double history_fraction = 0.5;
  std::size_t episodes = 1;
  EpisodeOptions episode;
  gbdt::TrainParams gbdt;
  BoostParams boost;
  bool include_oracle = true;
};

struct ExperimentResult {
  ComparisonTable table;
  std::size_t history_students = 0;
  std::size_t cohort_students = 0;
  std::size_t training_labels = 0;
  EpisodeStats history;  // the random-policy episode the ranker learned from
};

ExperimentResult run_marketplace_experiment(const WorldConfig& config,
                                            const ExperimentOptions& options);

/// Debug trace: one JSON object per course/outcome event.
void write_event_trace(std::ostream& out, const EpisodeStats& stats);

}  // namespace teachrec::sim
