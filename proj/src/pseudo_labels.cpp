#include "teachrec/pseudo_labels.hpp"

#include <cmath>

#include "teachrec/error.hpp"

namespace teachrec {

std::string_view to_string(Polarity polarity) {
  return polarity == Polarity::Positive ? "positive" : "negative";
}

std::map<TeacherId, double> positive_scores(const InteractionStore& store,
                                            const StudentId& student) {
  const auto s = store.student_index(student);
  if (!s || store.pairs_of(*s).empty()) {
    throw InvalidArgument("student " + student.str() + " has no courses");
  }
  const auto& outcome = store.outcome_of(*s);
  if (!outcome || outcome->outcome != Outcome::Completed) {
    throw InvalidArgument("student " + student.str() + " has not completed the class");
  }
  std::size_t total = 0;
  for (const auto& pair : store.pairs_of(*s)) total += pair.count;
  std::map<TeacherId, double> scores;
  for (const auto& pair : store.pairs_of(*s)) {
    scores.emplace(store.teachers()[pair.teacher],
                   static_cast<double>(pair.count) / static_cast<double>(total));
  }
  return scores;
}

double negative_score(std::int64_t course_count) {
  if (course_count < 1) {
    throw InvalidArgument("negative_score needs course_count >= 1, got " +
                          std::to_string(course_count));
  }
  return -std::exp(1.0 - static_cast<double>(course_count));
}

std::vector<LabeledPair> build_labels(const InteractionStore& store) {
  std::vector<LabeledPair> labels;
  for (std::uint32_t s = 0; s < store.student_count(); ++s) {
    const auto& outcome = store.outcome_of(s);
    if (!outcome) continue;
    const auto& student = store.students()[s];
    if (outcome->outcome == Outcome::Completed) {
      for (const auto& [teacher, value] : positive_scores(store, student)) {
        labels.push_back({student, teacher, {value, Polarity::Positive}});
      }
    } else {
      for (const auto& pair : store.pairs_of(s)) {
        labels.push_back({student,
                          store.teachers()[pair.teacher],
                          {negative_score(static_cast<std::int64_t>(pair.count)),
                           Polarity::Negative}});
      }
    }
  }
  return labels;
}

void write_labels_csv(std::ostream& out, std::span<const LabeledPair> labels) {
  csv::write_row(out, {"student_id", "teacher_id", "score", "polarity"});
  for (const auto& l : labels) {
    csv::write_row(out, {l.student.str(), l.teacher.str(), format_double(l.score.value, 12),
                         std::string(to_string(l.score.polarity))});
  }
}

}  // namespace teachrec
