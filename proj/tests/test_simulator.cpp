#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "teachrec/error.hpp"
#include "teachrec/simulator.hpp"

using namespace teachrec;
using namespace teachrec::sim;

namespace {

WorldConfig small_world(std::uint64_t seed = 1) {
  WorldConfig c;
  c.n_students = 300;
  c.n_teachers = 120;
  c.rng_seed = seed;
  return c;
}

class FixedPolicy : public Policy {
 public:
  explicit FixedPolicy(std::size_t teacher) : teacher_(teacher) {}
  std::string name() const override { return "fixed"; }
  std::size_t choose(const MatchRequest&) override { return teacher_; }

 private:
  std::size_t teacher_;
};

Eigen::MatrixXd unit_rows(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  m.rowwise().normalize();
  return m;
}

}  // namespace

TEST_CASE("world generation is deterministic under the seed") {
  const auto a = generate_world(small_world(5));
  const auto b = generate_world(small_world(5));
  CHECK(a.student_vectors == b.student_vectors);
  CHECK(a.teacher_vectors == b.teacher_vectors);
  CHECK(a.teacher_is_new == b.teacher_is_new);
  CHECK(a.student_table.rows == b.student_table.rows);
  CHECK(a.teacher_table.rows == b.teacher_table.rows);
  const auto c = generate_world(small_world(6));
  CHECK(a.teacher_vectors != c.teacher_vectors);

  CHECK(a.students.front() == StudentId("S00000"));
  CHECK(a.teachers.back() == TeacherId("T00119"));
  CHECK(std::is_sorted(a.teachers.begin(), a.teachers.end()));
  const auto n_new = std::count(a.teacher_is_new.begin(), a.teacher_is_new.end(), 1);
  CHECK(n_new == 12);
  for (std::size_t s = 0; s < a.student_count(); ++s) {
    for (std::size_t t = 0; t < a.teacher_count(); t += 7) {
      CHECK(a.affinity(s, t) > 0.0);
      CHECK(a.affinity(s, t) < 1.0);
    }
  }
}

TEST_CASE("config validation") {
  auto c = small_world();
  c.n_students = 0;
  CHECK_THROWS_AS(generate_world(c), InvalidArgument);
  c = small_world();
  c.dropout_steepness = 0.0;
  CHECK_THROWS_AS(generate_world(c), InvalidArgument);
  c = small_world();
  c.fraction_new_teachers = 1.5;
  CHECK_THROWS_AS(generate_world(c), InvalidArgument);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Constant(2, 2, 0.5);
  bad(0, 0) = 1.2;
  CHECK_THROWS_AS(world_from_affinity(bad, WorldConfig{}), InvalidArgument);
  CHECK_THROWS_AS(world_from_vectors(Eigen::MatrixXd::Zero(2, 3), Eigen::MatrixXd::Zero(2, 2),
                                     WorldConfig{}),
                  InvalidArgument);
}

TEST_CASE("affinity of the vector model") {
  const auto zero = world_from_vectors(Eigen::MatrixXd::Zero(3, 4), Eigen::MatrixXd::Zero(5, 4),
                                       WorldConfig{});
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t t = 0; t < 5; ++t) CHECK(zero.affinity(s, t) == 0.5);
  }

  // among unit vectors, the student's own direction scores highest
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd students = unit_rows(10, 6, rng);
  Eigen::MatrixXd teachers(11, 6);
  teachers.topRows(10) = unit_rows(10, 6, rng);
  teachers.row(10) = students.row(3);
  const auto w = world_from_vectors(students, teachers, WorldConfig{});
  for (std::size_t t = 0; t < 10; ++t) CHECK(w.affinity(3, 10) > w.affinity(3, t));
  CHECK(w.affinity(3, 10) ==
        doctest::Approx(1.0 / (1.0 + std::exp(-WorldConfig{}.affinity_scale))).epsilon(1e-12));
}

TEST_CASE("dropout probability") {
  CHECK(dropout_probability(0.5, 10.0) == 0.5);
  CHECK(dropout_probability(1.0, 10.0) == doctest::Approx(1.0 / (1.0 + std::exp(5.0))));
  double prev = 1.0;
  for (int i = 0; i <= 100; ++i) {
    const double p = dropout_probability(i / 100.0, 10.0);
    CHECK(p < prev);
    CHECK(p > 0.0);
    prev = p;
  }
  // steeper curves separate good and bad matches further
  CHECK(dropout_probability(0.8, 20.0) < dropout_probability(0.8, 10.0));
  CHECK(dropout_probability(0.2, 20.0) > dropout_probability(0.2, 10.0));
}

TEST_CASE("horizon 1 gives exactly one attempt per student") {
  const auto world = generate_world(small_world());
  UniformRandomPolicy random(3);
  EpisodeOptions o;
  o.horizon = 1;
  const auto stats = run_episode(world, random, o);
  CHECK(stats.attempts.size() == world.student_count());
  for (auto a : stats.attempts) CHECK(a == 1);
  CHECK(stats.mean_matching_attempts == 1.0);
  CHECK(stats.outcomes.size() == world.student_count());
  const auto completed = std::count_if(stats.outcomes.begin(), stats.outcomes.end(),
                                       [](const auto& r) { return r.outcome == Outcome::Completed; });
  CHECK(stats.completion_rate ==
        doctest::Approx(static_cast<double>(completed) / world.student_count()));
}

TEST_CASE("episode log invariants") {
  const auto world = generate_world(small_world(2));
  UniformRandomPolicy random(1);
  EpisodeOptions o;
  o.seed = 4;
  const auto stats = run_episode(world, random, o);
  std::size_t sum = 0;
  for (auto a : stats.attempts) {
    CHECK(a >= 1);
    CHECK(a <= o.horizon);
    sum += a;
  }
  CHECK(sum == stats.assignments);
  CHECK(stats.mean_matching_attempts ==
        doctest::Approx(static_cast<double>(sum) / stats.attempts.size()));
  CHECK(stats.courses.size() % o.courses_per_block == 0);

  // every course precedes its student's outcome, and the log ingests cleanly
  std::map<StudentId, Timestamp> decided;
  for (const auto& r : stats.outcomes) decided[r.student] = r.decided_at;
  for (const auto& c : stats.courses) CHECK(c.timestamp < decided.at(c.student));
  const auto store = InteractionStore::ingest(stats.courses, stats.outcomes);
  CHECK(store.student_count() == world.student_count());
  const auto stat_cols = store.stat_columns();
  CHECK(std::find(stat_cols.begin(), stat_cols.end(), "student_talk_seconds") != stat_cols.end());

  std::ostringstream trace;
  write_event_trace(trace, stats);
  const auto text = trace.str();
  const auto lines = std::count(text.begin(), text.end(), '\n');
  CHECK(static_cast<std::size_t>(lines) == stats.courses.size() + stats.outcomes.size());
}

TEST_CASE("oracle needs fewer attempts than random") {
  const auto world = generate_world(small_world(3));
  UniformRandomPolicy random(7);
  OracleAffinityPolicy oracle;
  EpisodeOptions o;
  o.record_log = false;
  const auto r = run_episode(world, random, o);
  const auto best = run_episode(world, oracle, o);
  CHECK(best.mean_matching_attempts < r.mean_matching_attempts);
  CHECK(best.completion_rate >= r.completion_rate);
}

TEST_CASE("infeasible choices are rejected") {
  const auto world = generate_world(small_world());
  EpisodeOptions o;
  o.teacher_available.assign(world.teacher_count(), 1);
  o.teacher_available[0] = 0;
  FixedPolicy zero(0);
  CHECK_THROWS_AS(run_episode(world, zero, o), InvalidArgument);
  FixedPolicy out_of_range(world.teacher_count());
  CHECK_THROWS_AS(run_episode(world, out_of_range, EpisodeOptions{}), InvalidArgument);
  // capacity 8 means the ninth student cannot have teacher 1
  FixedPolicy one(1);
  CHECK_THROWS_AS(run_episode(world, one, EpisodeOptions{}), InvalidArgument);
  EpisodeOptions none;
  none.horizon = 0;
  UniformRandomPolicy random;
  CHECK_THROWS_AS(run_episode(world, random, none), InvalidArgument);
}

TEST_CASE("steep binary affinities mean nobody switches under the oracle") {
  // each student has exactly one perfect teacher, every other pairing is 0
  const std::size_t n = 24, m = 6;
  Eigen::MatrixXd aff = Eigen::MatrixXd::Zero(n, m);
  for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(n); ++s) {
    aff(s, s % static_cast<Eigen::Index>(m)) = 1.0;
  }
  WorldConfig c;
  c.dropout_steepness = 80.0;
  c.teacher_capacity = n / m;
  const auto world = world_from_affinity(aff, c);
  OracleAffinityPolicy oracle;
  const auto stats = run_episode(world, oracle, EpisodeOptions{});
  CHECK(stats.mean_matching_attempts == 1.0);
  CHECK(stats.completion_rate == 1.0);
}

TEST_CASE("comparison table") {
  const auto world = generate_world(small_world(4));
  UniformRandomPolicy a(11), b(11);
  OracleAffinityPolicy oracle;
  std::vector<Policy*> policies{&a, &b, &oracle};
  EpisodeOptions o;
  const auto table = compare_policies(world, policies, 3, o);
  REQUIRE(table.rows.size() == 3);
  CHECK(table.rows[0].mean_attempts == table.rows[1].mean_attempts);
  CHECK(table.rows[0].stddev_attempts == table.rows[1].stddev_attempts);
  CHECK(table.rows[0].episode_means == table.rows[1].episode_means);
  CHECK(table.rows[0].episode_means.size() == 3);
  CHECK(table.rows[2].mean_attempts < table.rows[0].mean_attempts);
  for (const auto& r : table.rows) CHECK(r.stddev_attempts >= 0.0);

  // the mean over episodes of equal size equals the mean of episode means
  double m = 0.0;
  for (double e : table.rows[0].episode_means) m += e / 3.0;
  CHECK(table.rows[0].mean_attempts == doctest::Approx(m).epsilon(1e-12));

  const auto csv = table.to_csv();
  const std::string header =
      "policy,mean_attempts,stddev_attempts,completion_rate,new_teacher_assignment_rate\n";
  CHECK(csv.rfind(header, 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(table.to_text().find("Mean Attempts") != std::string::npos);

  const auto again = compare_policies(world, policies, 3, o);
  CHECK(again.to_csv() == csv);
  CHECK_THROWS_AS(compare_policies(world, policies, 0, o), InvalidArgument);
  CHECK_THROWS_AS(compare_policies(world, {}, 2, o), InvalidArgument);
}

TEST_CASE("historical logs leave new teachers untouched") {
  const auto logs = generate_logs(small_world(8), EpisodeOptions{});
  std::set<TeacherId> used;
  for (const auto& c : logs.courses) used.insert(c.teacher);
  for (std::size_t t = 0; t < logs.world.teacher_count(); ++t) {
    if (logs.world.teacher_is_new[t]) CHECK(used.count(logs.world.teachers[t]) == 0);
  }
  CHECK(logs.world.teacher_table.rows.size() == logs.world.teacher_count());
}
