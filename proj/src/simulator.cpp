#include "teachrec/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>

#include "json.hpp"
#include "teachrec/error.hpp"
#include "teachrec/features.hpp"
#include "teachrec/pseudo_labels.hpp"

namespace teachrec::sim {

namespace {

std::string padded_id(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%05zu", prefix, i);
  return buf;
}

std::string school_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "school_%02zu", i);
  return buf;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void fill_ids(World& world, std::size_t n_students, std::size_t n_teachers) {
  world.students.clear();
  world.teachers.clear();
  for (std::size_t s = 0; s < n_students; ++s) world.students.emplace_back(padded_id('S', s));
  for (std::size_t t = 0; t < n_teachers; ++t) world.teachers.emplace_back(padded_id('T', t));
  world.teacher_is_new.assign(n_teachers, 0);
}

}  // namespace

void WorldConfig::validate() const {
  if (n_students < 1 || n_teachers < 1) throw InvalidArgument("world needs students and teachers");
  if (latent_dim < 1) throw InvalidArgument("latent_dim must be >= 1");
  if (!(dropout_steepness > 0.0)) throw InvalidArgument("dropout_steepness must be positive");
  if (teacher_capacity < 1) throw InvalidArgument("teacher_capacity must be >= 1");
  if (!(fraction_new_teachers >= 0.0 && fraction_new_teachers <= 1.0)) {
    throw InvalidArgument("fraction_new_teachers must lie in [0, 1]");
  }
  if (n_grades < 1 || n_schools < 1) throw InvalidArgument("n_grades and n_schools must be >= 1");
  if (!(affinity_scale > 0.0)) throw InvalidArgument("affinity_scale must be positive");
}

double World::affinity(std::size_t student, std::size_t teacher) const {
  if (affinity_override) {
    return (*affinity_override)(static_cast<Eigen::Index>(student),
                                static_cast<Eigen::Index>(teacher));
  }
  return sigmoid(config.affinity_scale *
                 student_vectors.row(static_cast<Eigen::Index>(student))
                     .dot(teacher_vectors.row(static_cast<Eigen::Index>(teacher))));
}

World generate_world(const WorldConfig& config) {
  config.validate();
  World world;
  world.config = config;
  fill_ids(world, config.n_students, config.n_teachers);

  std::mt19937_64 rng(config.rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pick = [&](std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  };

  const auto schools = static_cast<Eigen::Index>(config.n_schools);
  const auto latent = static_cast<Eigen::Index>(config.latent_dim);
  const Eigen::Index dim = 3 + schools + 2 + latent;
  const Eigen::Index quality_col = 3 + schools;
  const Eigen::Index bias_col = quality_col + 1;
  const Eigen::Index latent_col = bias_col + 1;
  const double latent_scale = config.latent_weight / std::pow(static_cast<double>(latent), 0.25);

  auto grade_angle = [&](std::size_t grade) {
    return config.n_grades == 1 ? 0.0
                                : std::numbers::pi * static_cast<double>(grade - 1) /
                                      static_cast<double>(config.n_grades - 1);
  };

  world.student_vectors = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(config.n_students), dim);
  world.student_table.columns = {"gender", "grade", "school"};
  for (std::size_t s = 0; s < config.n_students; ++s) {
    const auto row = static_cast<Eigen::Index>(s);
    const bool female = unit(rng) < 0.5;
    const std::size_t grade = 1 + pick(config.n_grades);
    const std::size_t school = pick(config.n_schools);
    const bool school_missing = unit(rng) < 0.03;
    auto v = world.student_vectors.row(row);
    v(0) = config.grade_weight * std::cos(grade_angle(grade));
    v(1) = config.grade_weight * std::sin(grade_angle(grade));
    v(2) = config.gender_weight * (female ? 1.0 : -1.0);
    if (!school_missing) v(3 + static_cast<Eigen::Index>(school)) = config.school_weight;
    v(quality_col) = 1.0;
    v(bias_col) = 1.0;
    for (Eigen::Index k = 0; k < latent; ++k) v(latent_col + k) = latent_scale * normal(rng);
    world.student_table.rows.emplace(
        world.students[s].str(),
        std::vector<std::string>{female ? "F" : "M", std::to_string(grade),
                                 school_missing ? "" : school_name(school)});
  }

  world.teacher_vectors = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(config.n_teachers), dim);
  world.teacher_table.columns = {"gender", "grade", "school", "tenure_months"};
  const auto n_new = static_cast<std::size_t>(
      std::llround(config.fraction_new_teachers * static_cast<double>(config.n_teachers)));
  for (std::size_t t = 0; t < config.n_teachers; ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    const bool female = unit(rng) < 0.5;
    const std::size_t grade = 1 + pick(config.n_grades);
    const std::size_t school = pick(config.n_schools);
    const double quality = config.quality_spread * normal(rng);
    // new teachers are spread evenly over the id range
    const bool is_new = n_new > 0 && (t * n_new) / config.n_teachers !=
                                         ((t + 1) * n_new) / config.n_teachers;
    world.teacher_is_new[t] = is_new ? 1 : 0;
    auto v = world.teacher_vectors.row(row);
    v(0) = config.grade_weight * std::cos(grade_angle(grade));
    v(1) = config.grade_weight * std::sin(grade_angle(grade));
    v(2) = config.gender_weight * (female ? 1.0 : -1.0);
    v(3 + static_cast<Eigen::Index>(school)) = config.school_weight;
    v(quality_col) = quality;
    v(bias_col) = config.bias;
    for (Eigen::Index k = 0; k < latent; ++k) v(latent_col + k) = latent_scale * normal(rng);
    const double tenure =
        is_new ? static_cast<double>(pick(3))
               : std::max(1.0, std::round(30.0 + 12.0 * quality / std::max(config.quality_spread,
                                                                             1e-9) +
                                          8.0 * normal(rng)));
    world.teacher_table.rows.emplace(
        world.teachers[t].str(),
        std::vector<std::string>{female ? "F" : "M", std::to_string(grade), school_name(school),
                                 std::to_string(static_cast<long long>(tenure))});
  }
  return world;
}

World world_from_vectors(Eigen::MatrixXd student_vectors, Eigen::MatrixXd teacher_vectors,
                         WorldConfig config) {
  if (student_vectors.cols() != teacher_vectors.cols()) {
    throw InvalidArgument("student and teacher vectors must have the same width");
  }
  config.n_students = static_cast<std::size_t>(student_vectors.rows());
  config.n_teachers = static_cast<std::size_t>(teacher_vectors.rows());
  config.latent_dim = static_cast<std::size_t>(std::max<Eigen::Index>(1, student_vectors.cols()));
  config.validate();
  World world;
  world.config = config;
  fill_ids(world, config.n_students, config.n_teachers);
  world.student_vectors = std::move(student_vectors);
  world.teacher_vectors = std::move(teacher_vectors);
  return world;
}

World world_from_affinity(Eigen::MatrixXd affinity, WorldConfig config) {
  if (affinity.size() > 0 && (affinity.minCoeff() < 0.0 || affinity.maxCoeff() > 1.0)) {
    throw InvalidArgument("affinities must lie in [0, 1]");
  }
  config.n_students = static_cast<std::size_t>(affinity.rows());
  config.n_teachers = static_cast<std::size_t>(affinity.cols());
  config.validate();
  World world;
  world.config = config;
  fill_ids(world, config.n_students, config.n_teachers);
  world.affinity_override = std::move(affinity);
  return world;
}

double dropout_probability(double affinity, double steepness) {
  return 1.0 / (1.0 + std::exp(steepness * (affinity - 0.5)));
}

void UniformRandomPolicy::reset(std::uint64_t episode_seed) {
  state_ = seed_ * 0x9E3779B97F4A7C15ULL + episode_seed;
}

std::size_t UniformRandomPolicy::choose(const MatchRequest& request) {
  std::vector<std::size_t> feasible;
  for (std::size_t t = 0; t < request.world.teacher_count(); ++t) {
    if (request.feasible(t)) feasible.push_back(t);
  }
  std::mt19937_64 rng(state_++);
  return feasible[std::uniform_int_distribution<std::size_t>(0, feasible.size() - 1)(rng)];
}

std::size_t OracleAffinityPolicy::choose(const MatchRequest& request) {
  std::size_t best = request.world.teacher_count();
  double best_affinity = -1.0;
  for (std::size_t t = 0; t < request.world.teacher_count(); ++t) {
    if (!request.feasible(t)) continue;
    const double a = request.world.affinity(request.student, t);
    if (a > best_affinity) {
      best_affinity = a;
      best = t;
    }
  }
  return best;
}

std::size_t ScoreMatrixPolicy::choose(const MatchRequest& request) {
  const auto row = scores_.row(static_cast<Eigen::Index>(request.student));
  std::size_t best = request.world.teacher_count();
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < request.world.teacher_count(); ++t) {
    if (!request.feasible(t)) continue;
    const double s = row(static_cast<Eigen::Index>(t));
    if (best == request.world.teacher_count() || s > best_score) {
      best_score = s;
      best = t;
    }
  }
  return best;
}

namespace {

Eigen::MatrixXd ranker_scores(const World& world, const TrainedRanker& ranker,
                              const InteractionStore& history, Timestamp as_of,
                              const BoostParams& boost, std::span<const std::size_t> students) {
  const FeatureExtractor extractor(ranker.schema, world.student_table, world.teacher_table,
                                   history);
  const SlateRanker scorer(ranker.model, extractor, boost, as_of, /*apply_boost=*/false);
  Eigen::MatrixXd scores =
      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(world.student_count()),
                            static_cast<Eigen::Index>(world.teacher_count()));
  auto score_row = [&](std::size_t s) {
    const auto entries = scorer.score(world.students[s], world.teachers);
    for (std::size_t t = 0; t < entries.size(); ++t) {
      scores(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) = entries[t].model_score;
    }
  };
  if (students.empty()) {
    for (std::size_t s = 0; s < world.student_count(); ++s) score_row(s);
  } else {
    for (const auto s : students) score_row(s);
  }
  return scores;
}

Eigen::RowVectorXd boost_row(const World& world, const InteractionStore& history,
                             const BoostParams& boost) {
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(world.teacher_count()));
  for (std::size_t t = 0; t < world.teacher_count(); ++t) {
    row(static_cast<Eigen::Index>(t)) =
        novelty_boost(history.teacher_total(world.teachers[t]), boost);
  }
  return row;
}

}  // namespace

std::unique_ptr<ScoreMatrixPolicy> make_ranker_policy(std::string name, const World& world,
                                                      const TrainedRanker& ranker,
                                                      const InteractionStore& history,
                                                      const BoostParams& boost, bool apply_boost,
                                                      Timestamp as_of) {
  Eigen::MatrixXd scores = ranker_scores(world, ranker, history, as_of, boost, {});
  if (apply_boost) scores.rowwise() += boost_row(world, history, boost);
  return std::make_unique<ScoreMatrixPolicy>(std::move(name), std::move(scores));
}

EpisodeStats run_episode(const World& world, Policy& policy, const EpisodeOptions& options) {
  if (options.horizon == 0) throw InvalidArgument("horizon must be >= 1");
  if (options.blocks_to_complete == 0 || options.courses_per_block == 0) {
    throw InvalidArgument("blocks_to_complete and courses_per_block must be >= 1");
  }
  const std::size_t n_teachers = world.teacher_count();
  std::vector<char> available = options.teacher_available;
  if (available.empty()) available.assign(n_teachers, 1);
  if (available.size() != n_teachers) throw InvalidArgument("teacher_available has wrong size");
  const std::vector<char>& new_mask =
      options.new_teacher_mask.empty() ? world.teacher_is_new : options.new_teacher_mask;
  std::vector<std::size_t> cohort = options.students;
  if (cohort.empty()) {
    cohort.resize(world.student_count());
    for (std::size_t s = 0; s < cohort.size(); ++s) cohort[s] = s;
  }

  struct StudentState {
    std::optional<std::size_t> teacher;
    std::size_t blocks = 0;
    std::size_t attempts = 0;
    bool done = false;
    bool completed = false;
    std::vector<char> dropped;
    Timestamp last_course{};
  };
  std::vector<StudentState> state(cohort.size());
  for (auto& st : state) st.dropped.assign(n_teachers, 0);
  std::vector<std::size_t> load(n_teachers, 0);

  policy.reset(options.seed);
  std::mt19937_64 rng(options.seed);
  std::mt19937_64 stats_rng(options.seed ^ 0xA5A5A5A5DEADBEEFULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  EpisodeStats stats;
  auto finish = [&](std::size_t k, Outcome outcome) {
    auto& st = state[k];
    st.done = true;
    st.completed = outcome == Outcome::Completed;
    if (options.record_log && st.attempts > 0) {
      stats.outcomes.push_back(OutcomeRecord{world.students[cohort[k]], outcome,
                                             st.last_course + std::chrono::hours{1}, {}});
    }
  };

  using std::chrono::days;
  using std::chrono::minutes;
  const auto round_days = static_cast<long>(std::max<std::size_t>(7, options.courses_per_block));
  for (std::size_t round = 0;; ++round) {
    bool any_active = false;
    for (std::size_t k = 0; k < cohort.size(); ++k) {
      auto& st = state[k];
      if (st.done || st.teacher) continue;
      const MatchRequest request{world, cohort[k], st.dropped, load, available,
                                 world.config.teacher_capacity};
      bool feasible = false;
      for (std::size_t t = 0; t < n_teachers && !feasible; ++t) feasible = request.feasible(t);
      if (!feasible) {
        finish(k, Outcome::Dropped);
        continue;
      }
      const std::size_t t = policy.choose(request);
      if (t >= n_teachers || !request.feasible(t)) {
        throw InvalidArgument("policy " + policy.name() + " chose infeasible teacher " +
                              std::to_string(t) + " for student " + std::to_string(cohort[k]));
      }
      ++st.attempts;
      ++stats.assignments;
      if (t < new_mask.size() && new_mask[t]) ++stats.new_teacher_assignments;
      ++load[t];
      st.teacher = t;
      st.blocks = 0;
    }

    for (std::size_t k = 0; k < cohort.size(); ++k) {
      auto& st = state[k];
      if (st.done || !st.teacher) continue;
      any_active = true;
      const std::size_t s = cohort[k];
      const std::size_t t = *st.teacher;
      const double a = world.affinity(s, t);
      const Timestamp block_start = options.start + days{round_days * static_cast<long>(round)} + minutes{k % 1000};
      for (std::size_t c = 0; c < options.courses_per_block; ++c) {
        st.last_course = block_start + days{c};
        if (!options.record_log) continue;
        CourseRecord course;
        course.student = world.students[s];
        course.teacher = world.teachers[t];
        course.timestamp = st.last_course;
        course.duration_minutes = 45.0;
        course.stats = {
            {"teacher_talk_seconds", std::max(0.0, std::round(1200.0 - 200.0 * a +
                                                              150.0 * normal(stats_rng)))},
            {"student_talk_seconds",
             std::max(0.0, std::round(400.0 + 600.0 * a + 120.0 * normal(stats_rng)))},
            {"teacher_sentences", std::max(0.0, std::round(150.0 + 25.0 * normal(stats_rng)))},
            {"student_sentences",
             std::max(0.0, std::round(60.0 + 80.0 * a + 15.0 * normal(stats_rng)))},
        };
        stats.courses.push_back(std::move(course));
      }
      ++st.blocks;
      if (unit(rng) < dropout_probability(a, world.config.dropout_steepness)) {
        --load[t];
        st.dropped[t] = 1;
        st.teacher.reset();
        if (st.attempts >= options.horizon) finish(k, Outcome::Dropped);
      } else if (st.blocks >= options.blocks_to_complete) {
        finish(k, Outcome::Completed);
      }
    }
    if (!any_active) {
      bool pending = false;
      for (const auto& st : state) pending = pending || !st.done;
      if (!pending) break;
    }
  }

  std::size_t total_attempts = 0;
  std::size_t completed = 0;
  stats.attempts.reserve(state.size());
  for (const auto& st : state) {
    stats.attempts.push_back(st.attempts);
    total_attempts += st.attempts;
    completed += st.completed ? 1 : 0;
  }
  if (!state.empty()) {
    stats.mean_matching_attempts =
        static_cast<double>(total_attempts) / static_cast<double>(state.size());
    stats.completion_rate = static_cast<double>(completed) / static_cast<double>(state.size());
  }
  return stats;
}

ComparisonTable compare_policies(const World& world, std::span<Policy* const> policies,
                                 std::size_t episodes, const EpisodeOptions& options) {
  if (episodes == 0) throw InvalidArgument("compare_policies needs at least one episode");
  if (policies.empty()) throw InvalidArgument("compare_policies needs at least one policy");
  ComparisonTable table;
  for (Policy* policy : policies) {
    PolicySummary row;
    row.policy = policy->name();
    std::vector<double> all_attempts;
    double completion = 0.0;
    std::size_t assignments = 0, fresh = 0;
    for (std::size_t e = 0; e < episodes; ++e) {
      EpisodeOptions opts = options;
      opts.seed = options.seed + e;
      opts.record_log = false;
      const auto stats = run_episode(world, *policy, opts);
      row.episode_means.push_back(stats.mean_matching_attempts);
      completion += stats.completion_rate;
      assignments += stats.assignments;
      fresh += stats.new_teacher_assignments;
      for (const auto a : stats.attempts) all_attempts.push_back(static_cast<double>(a));
    }
    double mean = 0.0;
    for (const double a : all_attempts) mean += a;
    mean /= std::max<std::size_t>(1, all_attempts.size());
    double var = 0.0;
    for (const double a : all_attempts) var += (a - mean) * (a - mean);
    var /= std::max<std::size_t>(1, all_attempts.size());
    row.mean_attempts = mean;
    row.stddev_attempts = std::sqrt(var);
    row.completion_rate = completion / static_cast<double>(episodes);
    row.new_teacher_assignment_rate =
        assignments ? static_cast<double>(fresh) / static_cast<double>(assignments) : 0.0;
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string ComparisonTable::to_text() const {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-18s %14s %10s %16s %17s\n", "Policy", "Mean Attempts",
                "Stddev", "Completion Rate", "New Teacher Rate");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-18s %14.4f %10.4f %16.4f %17.4f\n", r.policy.c_str(),
                  r.mean_attempts, r.stddev_attempts, r.completion_rate,
                  r.new_teacher_assignment_rate);
    out << buf;
  }
  return out.str();
}

std::string ComparisonTable::to_csv() const {
  std::ostringstream out;
  csv::write_row(out, {"policy", "mean_attempts", "stddev_attempts", "completion_rate",
                       "new_teacher_assignment_rate"});
  for (const auto& r : rows) {
    csv::write_row(out, {r.policy, format_double(r.mean_attempts, 10),
                         format_double(r.stddev_attempts, 10), format_double(r.completion_rate, 10),
                         format_double(r.new_teacher_assignment_rate, 10)});
  }
  return out.str();
}

SyntheticLogs generate_logs(const WorldConfig& config, EpisodeOptions options) {
  SyntheticLogs logs{generate_world(config), {}, {}};
  options.teacher_available.assign(logs.world.teacher_count(), 1);
  for (std::size_t t = 0; t < logs.world.teacher_count(); ++t) {
    if (logs.world.teacher_is_new[t]) options.teacher_available[t] = 0;
  }
  options.record_log = true;
  UniformRandomPolicy policy(config.rng_seed);
  auto stats = run_episode(logs.world, policy, options);
  logs.courses = std::move(stats.courses);
  logs.outcomes = std::move(stats.outcomes);
  return logs;
}

ExperimentResult run_marketplace_experiment(const WorldConfig& config,
                                            const ExperimentOptions& options) {
  const World world = generate_world(config);
  const auto n_history = static_cast<std::size_t>(
      std::llround(options.history_fraction * static_cast<double>(world.student_count())));
  if (n_history == 0 || n_history >= world.student_count()) {
    throw InvalidArgument("history_fraction must leave students on both sides");
  }
  std::vector<std::size_t> history_students, cohort;
  for (std::size_t s = 0; s < world.student_count(); ++s) {
    (s < n_history ? history_students : cohort).push_back(s);
  }

  EpisodeOptions history_opts = options.episode;
  history_opts.students = history_students;
  history_opts.teacher_available.assign(world.teacher_count(), 1);
  for (std::size_t t = 0; t < world.teacher_count(); ++t) {
    if (world.teacher_is_new[t]) history_opts.teacher_available[t] = 0;
  }
  history_opts.record_log = true;
  UniformRandomPolicy history_policy(config.rng_seed);
  auto history = run_episode(world, history_policy, history_opts);

  const auto store = InteractionStore::ingest(history.courses, history.outcomes);
  const auto labels = build_labels(store);
  const auto ranker =
      train_ranker(store, world.student_table, world.teacher_table, labels, options.gbdt);
  const Timestamp as_of = *store.last_timestamp() + std::chrono::milliseconds{1};

  Eigen::MatrixXd model_scores =
      ranker_scores(world, ranker, store, as_of, options.boost, cohort);
  Eigen::MatrixXd boosted = model_scores;
  boosted.rowwise() += boost_row(world, store, options.boost);

  UniformRandomPolicy random_policy(config.rng_seed + 1);
  OracleAffinityPolicy oracle;
  ScoreMatrixPolicy plain("ranker", std::move(model_scores));
  ScoreMatrixPolicy with_boost("ranker+boost", std::move(boosted));
  std::vector<Policy*> policies{&random_policy};
  if (options.include_oracle) policies.push_back(&oracle);
  policies.push_back(&plain);
  policies.push_back(&with_boost);

  EpisodeOptions cohort_opts = options.episode;
  cohort_opts.students = cohort;
  cohort_opts.teacher_available.clear();
  cohort_opts.start = as_of + std::chrono::days{7};
  cohort_opts.new_teacher_mask.assign(world.teacher_count(), 0);
  for (std::size_t t = 0; t < world.teacher_count(); ++t) {
    cohort_opts.new_teacher_mask[t] =
        options.boost.is_new(store.teacher_total(world.teachers[t])) ? 1 : 0;
  }

  ExperimentResult result;
  result.table = compare_policies(world, policies, options.episodes, cohort_opts);
  result.history_students = history_students.size();
  result.cohort_students = cohort.size();
  result.training_labels = labels.size();
  result.history = std::move(history);
  return result;
}

void write_event_trace(std::ostream& out, const EpisodeStats& stats) {
  for (const auto& c : stats.courses) {
    nlohmann::json event{{"type", "course"},
                         {"student_id", c.student.str()},
                         {"teacher_id", c.teacher.str()},
                         {"timestamp", format_iso8601(c.timestamp)},
                         {"duration_minutes", c.duration_minutes}};
    for (const auto& [name, value] : c.stats) event["stats"][name] = value;
    out << event.dump() << '\n';
  }
  for (const auto& o : stats.outcomes) {
    out << nlohmann::json{{"type", "outcome"},
                          {"student_id", o.student.str()},
                          {"outcome", std::string(to_string(o.outcome))},
                          {"decided_at", format_iso8601(o.decided_at)}}
               .dump()
        << '\n';
  }
}

}  // namespace teachrec::sim
