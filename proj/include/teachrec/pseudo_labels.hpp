#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string_view>
#include <vector>

#include "teachrec/core.hpp"

namespace teachrec {

enum class Polarity { Positive, Negative };

std::string_view to_string(Polarity polarity);

/// Training target in [-1, 1]. Positive scores lie in (0, 1], negative in [-1, 0).
struct PseudoScore {
  double value = 0.0;
  Polarity polarity = Polarity::Positive;
};

struct LabeledPair {
  StudentId student;
  TeacherId teacher;
  PseudoScore score;
};

/// Share of the student's courses taught by each of their teachers:
/// M_i(t_j) / sum_j M_i(t_j). Requires a Completed student with courses.
std::map<TeacherId, double> positive_scores(const InteractionStore& store,
                                            const StudentId& student);

/// -exp(1 - course_count); -1 for a student who quit after the first course.
double negative_score(std::int64_t course_count);

/// One label per (student, teacher) pair of every student with an outcome,
/// ordered by student then teacher. Outcome-less students contribute nothing.
std::vector<LabeledPair> build_labels(const InteractionStore& store);

/// `labels.csv`: student_id, teacher_id, score (12 significant digits), polarity.
void write_labels_csv(std::ostream& out, std::span<const LabeledPair> labels);

}  // namespace teachrec
