#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "support.hpp"
#include "teachrec/error.hpp"
#include "teachrec/pseudo_labels.hpp"

using namespace teachrec;
using namespace testing;

namespace {

InteractionStore two_student_store() {
  std::vector<CourseRecord> courses;
  add_courses(courses, "s1", "tA", 3, 0);
  add_courses(courses, "s1", "tB", 1, 10);
  add_courses(courses, "s2", "tA", 1, 20);
  return InteractionStore::ingest(courses, {outcome("s1", Outcome::Completed, day(30)),
                                            outcome("s2", Outcome::Dropped, day(30))});
}

}  // namespace

TEST_CASE("positive scores are course shares") {
  const auto store = two_student_store();
  const auto p = positive_scores(store, StudentId("s1"));
  REQUIRE(p.size() == 2);
  CHECK(p.at(TeacherId("tA")) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(p.at(TeacherId("tB")) == doctest::Approx(0.25).epsilon(1e-15));

  std::vector<CourseRecord> single;
  add_courses(single, "s", "t", 7, 0);
  const auto one = InteractionStore::ingest(single, {outcome("s", Outcome::Completed, day(9))});
  CHECK(positive_scores(one, StudentId("s")).at(TeacherId("t")) == 1.0);

  std::vector<CourseRecord> even;
  add_courses(even, "s", "tA", 2, 0);
  add_courses(even, "s", "tB", 2, 5);
  const auto half = InteractionStore::ingest(even, {outcome("s", Outcome::Completed, day(9))});
  CHECK(positive_scores(half, StudentId("s")).at(TeacherId("tA")) == 0.5);

  CHECK_THROWS_AS(positive_scores(store, StudentId("s2")), InvalidArgument);
  CHECK_THROWS_AS(positive_scores(store, StudentId("nobody")), InvalidArgument);
}

TEST_CASE("negative score follows -exp(1 - M)") {
  CHECK(negative_score(1) == -1.0);
  CHECK(std::abs(negative_score(2) + std::exp(-1.0)) < 1e-9);
  CHECK(std::abs(negative_score(3) + 0.135335283) < 1e-9);
  CHECK_THROWS_AS(negative_score(0), InvalidArgument);
  for (int m = 1; m < 50; ++m) {
    CHECK(negative_score(m) < negative_score(m + 1));
    CHECK(negative_score(m + 1) < 0.0);
  }
}

TEST_CASE("build_labels composes both definitions") {
  const auto labels = build_labels(two_student_store());
  REQUIRE(labels.size() == 3);
  CHECK(labels[0].student == StudentId("s1"));
  CHECK(labels[0].teacher == TeacherId("tA"));
  CHECK(labels[0].score.value == 0.75);
  CHECK(labels[0].score.polarity == Polarity::Positive);
  CHECK(labels[1].teacher == TeacherId("tB"));
  CHECK(labels[1].score.value == 0.25);
  CHECK(labels[2].student == StudentId("s2"));
  CHECK(labels[2].score.value == -1.0);
  CHECK(labels[2].score.polarity == Polarity::Negative);

  std::vector<CourseRecord> courses;
  add_courses(courses, "s", "tA", 1, 0);
  add_courses(courses, "s", "tC", 4, 5);
  const auto dropped =
      build_labels(InteractionStore::ingest(courses, {outcome("s", Outcome::Dropped, day(20))}));
  REQUIRE(dropped.size() == 2);
  CHECK(dropped[0].score.value == -1.0);
  CHECK(std::abs(dropped[1].score.value + 0.049787068) < 1e-9);

  const auto pending = InteractionStore::ingest(courses, {});
  CHECK(build_labels(pending).empty());
}

TEST_CASE("label invariants on random stores") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<CourseRecord> courses;
    std::vector<OutcomeRecord> outcomes;
    for (int s = 0; s < 15; ++s) {
      const auto sid = "s" + std::to_string(s);
      const int teachers = 1 + static_cast<int>(rng() % 4);
      int d = 0;
      for (int t = 0; t < teachers; ++t) {
        add_courses(courses, sid, "t" + std::to_string(rng() % 8) + "_" + std::to_string(t),
                    1 + static_cast<int>(rng() % 9), d);
        d += 20;
      }
      if (rng() % 5 != 0) {
        outcomes.push_back(
            outcome(sid, rng() % 2 ? Outcome::Completed : Outcome::Dropped, day(d + 1)));
      }
    }
    const auto store = InteractionStore::ingest(courses, outcomes);
    for (const auto& l : build_labels(store)) {
      CHECK(l.score.value >= -1.0);
      CHECK(l.score.value <= 1.0);
    }
    for (const auto& o : outcomes) {
      if (o.outcome != Outcome::Completed) continue;
      double sum = 0.0;
      for (const auto& [t, v] : positive_scores(store, o.student)) {
        CHECK(v > 0.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("scaling counts leaves positive scores unchanged") {
  std::vector<CourseRecord> base, scaled;
  add_courses(base, "s", "tA", 2, 0);
  add_courses(base, "s", "tB", 5, 10);
  add_courses(scaled, "s", "tA", 6, 0);
  add_courses(scaled, "s", "tB", 15, 10);
  const auto a = InteractionStore::ingest(base, {outcome("s", Outcome::Completed, day(40))});
  const auto b = InteractionStore::ingest(scaled, {outcome("s", Outcome::Completed, day(40))});
  const auto pa = positive_scores(a, StudentId("s"));
  const auto pb = positive_scores(b, StudentId("s"));
  for (const auto& [t, v] : pa) CHECK(std::abs(v - pb.at(t)) < 1e-15);
}

TEST_CASE("labels csv export") {
  std::ostringstream out;
  write_labels_csv(out, build_labels(two_student_store()));
  CHECK(out.str() ==
        "student_id,teacher_id,score,polarity\n"
        "s1,tA,0.75,positive\n"
        "s1,tB,0.25,positive\n"
        "s2,tA,-1,negative\n");
}
