#include "teachrec/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"
#include "teachrec/error.hpp"

namespace teachrec {

BoostParams::BoostParams(double alpha, double beta, std::size_t delta)
    : alpha_(alpha), beta_(beta), delta_(delta) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidArgument("alpha must be positive");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw InvalidArgument("beta must be positive");
  if (delta < 1) throw InvalidArgument("delta must be positive");
}

double novelty_boost(std::size_t total_courses, const BoostParams& params) {
  if (!params.is_new(total_courses)) return 0.0;
  return params.alpha() / std::sqrt(static_cast<double>(total_courses) + params.beta());
}

RankResult make_slate(StudentId student, std::vector<SlateEntry> entries, std::size_t k) {
  if (k == 0) throw InvalidArgument("K must be >= 1");
  std::sort(entries.begin(), entries.end(), [](const SlateEntry& a, const SlateEntry& b) {
    if (a.combined_score != b.combined_score) return a.combined_score > b.combined_score;
    return a.teacher < b.teacher;
  });
  {
    std::set<TeacherId> seen;
    for (const auto& e : entries) {
      if (!seen.insert(e.teacher).second) {
        throw InvalidArgument("teacher " + e.teacher.str() + " appears twice in a slate");
      }
    }
  }
  RankResult result;
  result.truncated = entries.size() < k;
  if (entries.size() > k) entries.resize(k);
  result.slate = RecommendationSlate{std::move(student), std::move(entries)};
  return result;
}

SlateRanker::SlateRanker(const gbdt::GbdtModel& model, const FeatureExtractor& extractor,
                         BoostParams boost, Timestamp as_of, bool apply_boost)
    : model_(model), extractor_(extractor), boost_(boost), as_of_(as_of),
      apply_boost_(apply_boost) {
  const auto& schema = extractor.schema();
  if (model.schema_fingerprint() != schema.fingerprint() || model.n_features() != schema.width()) {
    throw SchemaMismatch("model schema " + fingerprint_hex(model.schema_fingerprint()) +
                         " does not match feature schema " + fingerprint_hex(schema.fingerprint()));
  }
  const auto& store = extractor.store();
  histories_.reserve(store.teacher_count());
  for (const auto& t : store.teachers()) histories_.push_back(teacher_history(store, t, as_of));
}

const TeacherHistory* SlateRanker::history(const TeacherId& teacher) const {
  static const TeacherHistory kEmpty{};
  const auto t = extractor_.store().teacher_index(teacher);
  return t ? &histories_[*t] : &kEmpty;
}

std::vector<SlateEntry> SlateRanker::score(const StudentId& student,
                                           std::span<const TeacherId> candidates) const {
  std::vector<double> row(extractor_.schema().width());
  std::vector<SlateEntry> out;
  out.reserve(candidates.size());
  for (const auto& teacher : candidates) {
    const auto* h = history(teacher);
    extractor_.extract_into(row, student, teacher, as_of_, h);
    SlateEntry e;
    e.teacher = teacher;
    e.model_score = model_.predict_raw(row);
    e.boost = apply_boost_ ? novelty_boost(h->total_courses, boost_) : 0.0;
    e.combined_score = e.model_score + e.boost;
    out.push_back(std::move(e));
  }
  return out;
}

RankResult SlateRanker::rank(const StudentId& student, std::span<const TeacherId> candidates,
                             std::size_t k) const {
  if (candidates.empty()) throw InvalidArgument("candidate list is empty");
  if (k == 0) throw InvalidArgument("K must be >= 1");
  const auto& store = extractor_.store();
  std::vector<TeacherId> eligible;
  eligible.reserve(candidates.size());
  const auto s = store.student_index(student);
  std::set<TeacherId> seen;
  for (const auto& t : candidates) {
    if (!seen.insert(t).second) continue;
    if (s) {
      const auto ti = store.teacher_index(t);
      if (ti && store.find_pair(*s, *ti)) continue;  // already taught this student
    }
    eligible.push_back(t);
  }
  return make_slate(student, score(student, eligible), k);
}

RankResult rank(const StudentId& student, std::span<const TeacherId> candidates,
                const gbdt::GbdtModel& model, const FeatureExtractor& extractor,
                const BoostParams& params, std::size_t k, Timestamp as_of) {
  return SlateRanker(model, extractor, params, as_of).rank(student, candidates, k);
}

double new_teacher_ratio(std::span<const RecommendationSlate> slates,
                         const std::function<bool(const TeacherId&)>& is_new) {
  if (slates.empty()) throw InvalidArgument("new_teacher_ratio needs at least one slate");
  double total = 0.0;
  for (const auto& slate : slates) {
    if (slate.entries.empty()) throw InvalidArgument("empty slate for " + slate.student.str());
    std::size_t fresh = 0;
    for (const auto& e : slate.entries) fresh += is_new(e.teacher) ? 1 : 0;
    total += static_cast<double>(fresh) / static_cast<double>(slate.entries.size());
  }
  return total / static_cast<double>(slates.size());
}

double new_teacher_ratio(std::span<const RecommendationSlate> slates,
                         const InteractionStore& store, const BoostParams& params) {
  return new_teacher_ratio(slates, [&](const TeacherId& t) {
    return params.is_new(store.teacher_total(t));
  });
}

double diversity(std::span<const RecommendationSlate> slates) {
  if (slates.size() < 2) throw InvalidArgument("diversity needs at least 2 slates");
  std::map<TeacherId, std::uint32_t> ids;
  std::vector<std::vector<std::uint32_t>> sets;
  sets.reserve(slates.size());
  for (const auto& slate : slates) {
    if (slate.entries.empty()) throw InvalidArgument("empty slate for " + slate.student.str());
    std::vector<std::uint32_t> set;
    set.reserve(slate.entries.size());
    for (const auto& e : slate.entries) {
      const auto [it, _] = ids.emplace(e.teacher, static_cast<std::uint32_t>(ids.size()));
      set.push_back(it->second);
    }
    std::sort(set.begin(), set.end());
    set.erase(std::unique(set.begin(), set.end()), set.end());
    sets.push_back(std::move(set));
  }
  double overlap = 0.0;
  for (std::size_t i = 0; i + 1 < sets.size(); ++i) {
    for (std::size_t j = i + 1; j < sets.size(); ++j) {
      const auto& a = sets[i];
      const auto& b = sets[j];
      std::size_t common = 0;
      for (std::size_t p = 0, q = 0; p < a.size() && q < b.size();) {
        if (a[p] < b[q]) {
          ++p;
        } else if (b[q] < a[p]) {
          ++q;
        } else {
          ++common;
          ++p;
          ++q;
        }
      }
      overlap += static_cast<double>(common) / static_cast<double>(std::min(a.size(), b.size()));
    }
  }
  const double n = static_cast<double>(sets.size());
  return 1.0 - 2.0 / (n * (n - 1.0)) * overlap;
}

TrainedRanker train_ranker(const InteractionStore& store, const EntityTable& students,
                           const EntityTable& teachers, std::span<const LabeledPair> labels,
                           const gbdt::TrainParams& params, SchemaOptions schema_options) {
  TrainedRanker out;
  out.schema = build_schema(students, teachers, store.stat_columns(), schema_options);
  const FeatureExtractor extractor(out.schema, students, teachers, store);
  const auto set = build_training_set(extractor, labels);
  std::vector<double> trace;
  out.model = gbdt::train(set.rows, set.targets, params, &trace);
  out.final_training_mse = trace.back();
  for (const auto& l : labels) {
    (l.score.polarity == Polarity::Positive ? out.positive_labels : out.negative_labels) += 1;
  }
  return out;
}

void write_slates_jsonl(std::ostream& out, std::span<const RecommendationSlate> slates) {
  for (const auto& slate : slates) {
    nlohmann::json doc;
    doc["student_id"] = slate.student.str();
    auto entries = nlohmann::json::array();
    for (const auto& e : slate.entries) {
      entries.push_back({{"teacher_id", e.teacher.str()},
                         {"model_score", e.model_score},
                         {"boost", e.boost},
                         {"combined_score", e.combined_score}});
    }
    doc["entries"] = std::move(entries);
    out << doc.dump() << '\n';
  }
}

}  // namespace teachrec
