#include "doctest.h"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include "support.hpp"
#include "teachrec/error.hpp"
#include "teachrec/evaluation.hpp"
#include "teachrec/simulator.hpp"

using namespace teachrec;
using namespace teachrec::evaluation;
using namespace testing;

namespace {

LabeledPair pos(const std::string& s, const std::string& t, double v) {
  return {StudentId(s), TeacherId(t), {v, Polarity::Positive}};
}

LabeledPair neg(const std::string& s, const std::string& t, double v) {
  return {StudentId(s), TeacherId(t), {v, Polarity::Negative}};
}

RecommendationSlate slate_of(const std::string& s, const std::vector<std::string>& teachers) {
  RecommendationSlate out;
  out.student = StudentId(s);
  for (const auto& t : teachers) out.entries.push_back({TeacherId(t), 0.0, 0.0, 0.0});
  return out;
}

std::vector<std::string> filler(int n, int from = 0) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("x" + std::to_string(from + i));
  return out;
}

// Counts hits the slow way: scan the full slate and compare positions.
std::size_t recount(const TestSplit& split, const SlateMap& slates, std::size_t k) {
  std::size_t hits = 0;
  for (const auto& p : split.held_out) {
    const auto& e = slates.at(p.student).entries;
    for (std::size_t i = 0; i < e.size(); ++i) {
      if (e[i].teacher == p.teacher && i < k) ++hits;
    }
  }
  return hits;
}

sim::SyntheticLogs small_logs(std::uint64_t seed) {
  sim::WorldConfig w;
  w.n_students = 240;
  w.n_teachers = 80;
  w.rng_seed = seed;
  return sim::generate_logs(w, sim::EpisodeOptions{});
}

OfflineConfig small_offline() {
  OfflineConfig c;
  c.holdout_pairs = 40;
  c.k = 10;
  c.gbdt.n_trees = 25;
  c.latent_rank = 4;
  c.svd_iterations = 10;
  c.nmf_iterations = 30;
  return c;
}

}  // namespace

TEST_CASE("split eligibility is strictly above the threshold") {
  const std::vector<LabeledPair> labels{pos("a", "t1", 0.5), pos("a", "t2", 0.5000001),
                                        pos("b", "t1", 1.0), neg("c", "t1", -1.0),
                                        pos("d", "t3", 0.2)};
  const auto split = make_split(labels, 0.5, 2, 1);
  REQUIRE(split.held_out.size() == 2);
  CHECK(split.held_out[0] == HeldOutPair{StudentId("a"), TeacherId("t2"), 0.5000001});
  CHECK(split.held_out[1] == HeldOutPair{StudentId("b"), TeacherId("t1"), 1.0});
  CHECK(split.training.size() == 3);
  CHECK(split.test_students() == std::vector<StudentId>{StudentId("a"), StudentId("b")});
  CHECK_NOTHROW(check_no_leak(split));
  CHECK_THROWS_AS(make_split(labels, 0.5, 3, 1), InvalidArgument);
}

TEST_CASE("split sampling is deterministic and uniform over eligible pairs") {
  std::vector<LabeledPair> labels;
  for (int i = 0; i < 60; ++i) labels.push_back(pos("s" + std::to_string(i), "t", 0.6 + i * 0.001));
  for (int i = 0; i < 30; ++i) labels.push_back(pos("s" + std::to_string(i), "u", 0.3));
  const auto a = make_split(labels, 0.5, 20, 9);
  const auto b = make_split(labels, 0.5, 20, 9);
  CHECK(a.held_out == b.held_out);
  CHECK(make_split(labels, 0.5, 20, 10).held_out != a.held_out);
  CHECK(a.training.size() == labels.size() - 20);

  // sample size equal to the eligible count takes all of them
  const auto all = make_split(labels, 0.5, 60, 3);
  for (const auto& p : all.held_out) CHECK(p.teacher == TeacherId("t"));
  CHECK(all.training.size() == 30);

  // every eligible pair gets picked at a similar rate
  std::map<std::string, int> picked;
  for (std::uint64_t seed = 0; seed < 600; ++seed) {
    for (const auto& p : make_split(labels, 0.5, 10, seed).held_out) ++picked[p.student.str()];
  }
  CHECK(picked.size() == 60);
  for (const auto& [s, n] : picked) {
    CHECK(n > 50);   // expectation is 100
    CHECK(n < 150);
  }
}

TEST_CASE("leak check") {
  TestSplit split;
  split.threshold = 0.5;
  split.held_out = {HeldOutPair{StudentId("a"), TeacherId("t"), 0.8}};
  split.training = {pos("a", "u", 0.2)};
  CHECK_NOTHROW(check_no_leak(split));
  split.training.push_back(pos("a", "t", 0.8));
  CHECK_THROWS_AS(check_no_leak(split), Error);
  split.training.pop_back();
  split.held_out.push_back(HeldOutPair{StudentId("b"), TeacherId("t"), 0.5});
  CHECK_THROWS_AS(check_no_leak(split), Error);
}

TEST_CASE("recall and precision worked examples") {
  TestSplit split;
  split.held_out = {{StudentId("a"), TeacherId("t1"), 0.9},
                    {StudentId("a"), TeacherId("t2"), 0.9},
                    {StudentId("b"), TeacherId("t3"), 0.9},
                    {StudentId("b"), TeacherId("t4"), 0.9}};
  auto a = filler(300);
  a[0] = "t1";
  a[250] = "t2";  // beyond K
  auto b = filler(300, 1000);
  SlateMap slates{{StudentId("a"), slate_of("a", a)}, {StudentId("b"), slate_of("b", b)}};
  CHECK(count_hits(split, slates, 200) == 1);
  CHECK(recall_at_k(split, slates, 200) == 0.25);
  CHECK(precision_at_k(split, slates, 200) == 0.0025);

  b[199] = "t3";
  slates[StudentId("b")] = slate_of("b", b);
  CHECK(recall_at_k(split, slates, 200) == 0.5);
  CHECK(precision_at_k(split, slates, 200) == 0.005);
  CHECK(recall_at_k(split, slates, 199) == 0.25);
  CHECK(recall_at_k(split, slates, 300) == 0.75);

  slates.erase(StudentId("b"));
  CHECK_THROWS_AS(recall_at_k(split, slates, 200), InvalidArgument);
}

TEST_CASE("hit counting matches a slow recount") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    TestSplit split;
    SlateMap slates;
    const int students = 2 + static_cast<int>(rng() % 6);
    for (int s = 0; s < students; ++s) {
      const auto sid = "s" + std::to_string(s);
      std::vector<std::string> pool;
      for (int t = 0; t < 40; ++t) pool.push_back("t" + std::to_string(t));
      std::shuffle(pool.begin(), pool.end(), rng);
      const int held = 1 + static_cast<int>(rng() % 4);
      for (int h = 0; h < held; ++h) {
        split.held_out.push_back({StudentId(sid), TeacherId("t" + std::to_string(rng() % 40)), 1.0});
      }
      pool.resize(10 + rng() % 30);
      slates.emplace(StudentId(sid), slate_of(sid, pool));
    }
    std::sort(split.held_out.begin(), split.held_out.end(), [](const auto& x, const auto& y) {
      return std::tie(x.student, x.teacher) < std::tie(y.student, y.teacher);
    });
    split.held_out.erase(std::unique(split.held_out.begin(), split.held_out.end()),
                         split.held_out.end());
    double prev_recall = 0.0;
    for (std::size_t k : {1u, 5u, 20u, 100u}) {
      const auto hits = recount(split, slates, k);
      CHECK(recall_at_k(split, slates, k) >= prev_recall);
      prev_recall = recall_at_k(split, slates, k);
      CHECK(count_hits(split, slates, k) == hits);
      CHECK(recall_at_k(split, slates, k) ==
            doctest::Approx(static_cast<double>(hits) / split.held_out.size()));
      CHECK(recall_at_k(split, slates, k) >= 0.0);
      CHECK(recall_at_k(split, slates, k) <= 1.0);
    }
  }
}

TEST_CASE("masking removes held-out courses and orphaned outcomes") {
  std::vector<CourseRecord> courses;
  add_courses(courses, "a", "t1", 3, 0);
  add_courses(courses, "a", "t2", 2, 5);
  add_courses(courses, "b", "t1", 4, 0);
  const auto store = InteractionStore::ingest(
      courses, {outcome("a", Outcome::Completed, day(20)), outcome("b", Outcome::Completed, day(20))});
  const std::vector<HeldOutPair> held{{StudentId("a"), TeacherId("t1"), 0.6},
                                      {StudentId("b"), TeacherId("t1"), 1.0}};
  const auto masked = mask_pairs(store, held);
  CHECK(masked.total_courses() == 2);
  CHECK(masked.course_count(StudentId("a"), TeacherId("t1")) == 0);
  CHECK(masked.outcome(StudentId("a")) == Outcome::Completed);
  CHECK_FALSE(masked.outcome(StudentId("b")));

  const std::vector<TeacherId> universe{TeacherId("t1"), TeacherId("t2"), TeacherId("t3")};
  CHECK(candidate_pool(masked, StudentId("a"), universe) ==
        std::vector<TeacherId>{TeacherId("t1"), TeacherId("t3")});
  CHECK(candidate_pool(masked, StudentId("b"), universe).size() == 3);
}

TEST_CASE("report text and csv") {
  EvalReport r;
  r.k = 200;
  r.rows = {{"Our", 0.01, 0.5, 0.75, 0.125}, {"SVD", 0.002, 0.25, 0.5, std::nullopt}};
  const auto csv = r.to_csv();
  CHECK(csv.rfind("Model,Precision,Recall,Diversity,New Teacher Ratio\n", 0) == 0);
  CHECK(csv.find("Our,0.01,0.5,0.75,0.125\n") != std::string::npos);
  CHECK(csv.find("SVD,0.002,0.25,0.5,N/A\n") != std::string::npos);
  const auto text = r.to_text();
  CHECK(text.find("N/A") != std::string::npos);
  CHECK(text.find("0.1250") != std::string::npos);
  REQUIRE(r.find("SVD"));
  CHECK_FALSE(r.find("NMF"));
}

TEST_CASE("offline protocol on a small synthetic log") {
  const auto logs = small_logs(3);
  const auto store = InteractionStore::ingest(logs.courses, logs.outcomes);
  const auto config = small_offline();
  const auto a = run_offline(store, logs.world.student_table, logs.world.teacher_table, config);
  const auto b = run_offline(store, logs.world.student_table, logs.world.teacher_table, config);
  CHECK(a.report.to_csv() == b.report.to_csv());
  CHECK(a.report.held_out_pairs == 40);
  REQUIRE(a.report.rows.size() == 4);
  CHECK(a.report.rows[0].model == "Our");
  CHECK(a.report.rows[0].new_teacher_ratio.has_value());
  for (const auto& row : a.report.rows) {
    CHECK(row.recall >= 0.0);
    CHECK(row.recall <= 1.0);
    CHECK(row.diversity >= 0.0);
    CHECK(row.diversity <= 1.0);
    if (row.model != "Our") CHECK_FALSE(row.new_teacher_ratio.has_value());
  }

  // held-out pairs never reach the training store
  for (const auto& p : a.data.split.held_out) {
    CHECK(a.data.train_store.course_count(p.student, p.teacher) == 0);
    CHECK(store.course_count(p.student, p.teacher) > 0);
  }
}

TEST_CASE("external scores join the report") {
  const auto logs = small_logs(4);
  const auto store = InteractionStore::ingest(logs.courses, logs.outcomes);
  const auto config = small_offline();
  const auto data = prepare(store, config);

  TempDir dir;
  const auto path = dir.path / "ext.csv";
  {
    std::ofstream out(path);
    out << "student_id,teacher_id,score\n";
    for (const auto& s : data.split.test_students()) {
      for (std::size_t t = 0; t < logs.world.teacher_count(); ++t) {
        // rank teachers by index, except the held-out ones go first
        double score = -static_cast<double>(t);
        for (const auto& p : data.split.held_out) {
          if (p.student == s && p.teacher == logs.world.teachers[t]) score = 1000.0;
        }
        out << s.str() << ',' << logs.world.teachers[t].str() << ',' << score << '\n';
      }
    }
  }
  const ExternalScores perfect("Perfect", path);
  std::vector<const Recommender*> models{&perfect};
  const auto universe = logs.world.teachers;
  const auto report =
      evaluate_all(data.split, models, data.train_store, universe, config.boost, config.k);
  REQUIRE(report.rows.size() == 1);
  CHECK(report.rows[0].recall == 1.0);
  CHECK_FALSE(report.rows[0].new_teacher_ratio);

  // a file that misses a candidate pair is an error, not a silent zero
  {
    std::ofstream out(dir.path / "short.csv");
    out << "student_id,teacher_id,score\n" << data.split.held_out[0].student.str() << ",T00000,1\n";
  }
  const ExternalScores partial("Partial", dir.path / "short.csv");
  std::vector<const Recommender*> bad{&partial};
  CHECK_THROWS_AS(evaluate_all(data.split, bad, data.train_store, universe, config.boost, config.k),
                  Error);
  {
    std::ofstream out(dir.path / "wrong.csv");
    out << "student,teacher,value\na,b,1\n";
  }
  CHECK_THROWS_AS(ExternalScores("Wrong", dir.path / "wrong.csv"), IngestError);
}
