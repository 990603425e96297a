#include "teachrec/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>

#include "teachrec/error.hpp"
#include "teachrec/features.hpp"

namespace teachrec::evaluation {

namespace {

RecommendationSlate slate_from_scores(const StudentId& student,
                                      std::span<const TeacherId> candidates,
                                      const std::vector<double>& scores, std::size_t k) {
  std::vector<SlateEntry> entries;
  entries.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    entries.push_back(SlateEntry{candidates[i], scores[i], 0.0, scores[i]});
  }
  return make_slate(student, std::move(entries), k).slate;
}

std::vector<TeacherId> teacher_universe(const InteractionStore& store, const EntityTable& teachers) {
  std::set<TeacherId> all(store.teachers().begin(), store.teachers().end());
  for (const auto& [id, row] : teachers.rows) all.emplace(id);
  return {all.begin(), all.end()};
}

std::vector<StudentId> student_universe(const InteractionStore& store, const EntityTable& students) {
  std::set<StudentId> all(store.students().begin(), store.students().end());
  for (const auto& [id, row] : students.rows) all.emplace(id);
  return {all.begin(), all.end()};
}

std::string metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::vector<StudentId> TestSplit::test_students() const {
  std::set<StudentId> ids;
  for (const auto& p : held_out) ids.insert(p.student);
  return {ids.begin(), ids.end()};
}

TestSplit make_split(std::span<const LabeledPair> labels, double threshold,
                     std::size_t sample_size, std::uint64_t seed) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& s = labels[i].score;
    if (s.polarity == Polarity::Positive && s.value > threshold) eligible.push_back(i);
  }
  if (eligible.size() < sample_size) {
    throw InvalidArgument("only " + std::to_string(eligible.size()) +
                          " positive pairs score above " + format_double(threshold) + ", " +
                          std::to_string(sample_size) + " requested");
  }
  std::vector<std::size_t> chosen;
  chosen.reserve(sample_size);
  std::mt19937_64 rng(seed);
  std::sample(eligible.begin(), eligible.end(), std::back_inserter(chosen), sample_size, rng);
  std::vector<char> held(labels.size(), 0);
  for (const auto i : chosen) held[i] = 1;

  TestSplit split;
  split.threshold = threshold;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (held[i]) {
      split.held_out.push_back(HeldOutPair{labels[i].student, labels[i].teacher,
                                           labels[i].score.value});
    } else {
      split.training.push_back(labels[i]);
    }
  }
  std::sort(split.held_out.begin(), split.held_out.end(), [](const auto& a, const auto& b) {
    return std::tie(a.student, a.teacher) < std::tie(b.student, b.teacher);
  });
  return split;
}

void check_no_leak(const TestSplit& split) {
  std::set<std::pair<StudentId, TeacherId>> held;
  for (const auto& p : split.held_out) {
    if (!(p.score > split.threshold)) {
      throw Error("held-out pair (" + p.student.str() + ", " + p.teacher.str() +
                  ") does not score above the threshold");
    }
    held.emplace(p.student, p.teacher);
  }
  for (const auto& l : split.training) {
    if (held.count({l.student, l.teacher})) {
      throw Error("held-out pair (" + l.student.str() + ", " + l.teacher.str() +
                  ") leaked into the training labels");
    }
  }
}

std::size_t count_hits(const TestSplit& split, const SlateMap& slates, std::size_t k) {
  std::size_t hits = 0;
  for (const auto& p : split.held_out) {
    const auto it = slates.find(p.student);
    if (it == slates.end()) {
      throw InvalidArgument("no slate for test student " + p.student.str());
    }
    const auto& entries = it->second.entries;
    const auto end = entries.begin() + static_cast<std::ptrdiff_t>(std::min(k, entries.size()));
    hits += std::any_of(entries.begin(), end,
                        [&](const SlateEntry& e) { return e.teacher == p.teacher; })
                ? 1
                : 0;
  }
  return hits;
}

double recall_at_k(const TestSplit& split, const SlateMap& slates, std::size_t k) {
  const std::size_t hits = count_hits(split, slates, k);
  if (split.held_out.empty()) return 0.0;
  return static_cast<double>(hits) / static_cast<double>(split.held_out.size());
}

double precision_at_k(const TestSplit& split, const SlateMap& slates, std::size_t k) {
  if (k == 0) throw InvalidArgument("K must be >= 1");
  const std::size_t hits = count_hits(split, slates, k);
  const std::size_t students = split.test_students().size();
  if (students == 0) return 0.0;
  return static_cast<double>(hits) / (static_cast<double>(students) * static_cast<double>(k));
}

RecommendationSlate RankerRecommender::recommend(const StudentId& student,
                                                 std::span<const TeacherId> candidates,
                                                 std::size_t k) const {
  return ranker_.rank(student, candidates, k).slate;
}

RecommendationSlate ItemCfRecommender::recommend(const StudentId& student,
                                                 std::span<const TeacherId> candidates,
                                                 std::size_t k) const {
  std::vector<double> scores(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) scores[i] = model_.score(student, candidates[i]);
  return slate_from_scores(student, candidates, scores, k);
}

RecommendationSlate FactorRecommender::recommend(const StudentId& student,
                                                 std::span<const TeacherId> candidates,
                                                 std::size_t k) const {
  const auto row = matrix_.row(student);
  std::vector<double> scores(candidates.size(), 0.0);
  if (row) {
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (const auto col = matrix_.col(candidates[i])) scores[i] = model_.score(*row, *col);
    }
  }
  return slate_from_scores(student, candidates, scores, k);
}

ExternalScores::ExternalScores(std::string name, const std::filesystem::path& path,
                               bool reports_new_teacher_ratio)
    : name_(std::move(name)), reports_ratio_(reports_new_teacher_ratio) {
  const auto table = csv::read_file(path);
  const auto s = table.column("student_id");
  const auto t = table.column("teacher_id");
  const auto v = table.column("score");
  if (!s || !t || !v) {
    throw IngestError(table.source + ": expected columns student_id, teacher_id, score");
  }
  for (const auto& row : table.rows) {
    const auto where = table.source + ":" + std::to_string(row.line) + ": ";
    if (row.fields.size() != table.header.size()) throw IngestError(where + "wrong field count");
    double value = 0.0;
    try {
      std::size_t used = 0;
      value = std::stod(row.fields[*v], &used);
      if (used != row.fields[*v].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw IngestError(where + "score is not a number: '" + row.fields[*v] + "'");
    }
    if (!scores_.emplace(std::make_pair(row.fields[*s], row.fields[*t]), value).second) {
      throw IngestError(where + "duplicate pair (" + row.fields[*s] + ", " + row.fields[*t] + ")");
    }
  }
}

RecommendationSlate ExternalScores::recommend(const StudentId& student,
                                              std::span<const TeacherId> candidates,
                                              std::size_t k) const {
  std::vector<double> scores(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto it = scores_.find({student.str(), candidates[i].str()});
    if (it == scores_.end()) {
      throw Error(name_ + ": no score for (" + student.str() + ", " + candidates[i].str() + ")");
    }
    scores[i] = it->second;
  }
  return slate_from_scores(student, candidates, scores, k);
}

const EvalRow* EvalReport::find(std::string_view model) const {
  for (const auto& r : rows) {
    if (r.model == model) return &r;
  }
  return nullptr;
}

std::string EvalReport::to_text() const {
  const std::vector<std::string> header{"Model", "Precision", "Recall", "Diversity",
                                        "New Teacher Ratio"};
  std::vector<std::vector<std::string>> cells{header};
  for (const auto& r : rows) {
    cells.push_back({r.model, metric(r.precision), metric(r.recall), metric(r.diversity),
                     r.new_teacher_ratio ? metric(*r.new_teacher_ratio) : "N/A"});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        out << row[c] << std::string(width[c] - row[c].size(), ' ');
      } else {
        out << "  " << std::string(width[c] - row[c].size(), ' ') << row[c];
      }
    }
    out << '\n';
  }
  return out.str();
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  csv::write_row(out, {"Model", "Precision", "Recall", "Diversity", "New Teacher Ratio"});
  for (const auto& r : rows) {
    csv::write_row(out, {r.model, format_double(r.precision), format_double(r.recall),
                         format_double(r.diversity),
                         r.new_teacher_ratio ? format_double(*r.new_teacher_ratio) : "N/A"});
  }
  return out.str();
}

std::vector<TeacherId> candidate_pool(const InteractionStore& store, const StudentId& student,
                                      std::span<const TeacherId> universe) {
  std::vector<TeacherId> out;
  out.reserve(universe.size());
  const auto s = store.student_index(student);
  for (const auto& t : universe) {
    if (s) {
      const auto ti = store.teacher_index(t);
      if (ti && store.find_pair(*s, *ti)) continue;
    }
    out.push_back(t);
  }
  return out;
}

EvalReport evaluate_all(const TestSplit& split, std::span<const Recommender* const> models,
                        const InteractionStore& store, std::span<const TeacherId> universe,
                        const BoostParams& boost, std::size_t k) {
  if (k == 0) throw InvalidArgument("K must be >= 1");
  check_no_leak(split);
  const auto students = split.test_students();
  if (students.size() < 2) {
    throw InvalidArgument("evaluation needs held-out pairs from at least 2 students");
  }
  std::vector<std::vector<TeacherId>> pools;
  pools.reserve(students.size());
  for (const auto& s : students) pools.push_back(candidate_pool(store, s, universe));

  EvalReport report;
  report.k = k;
  report.held_out_pairs = split.held_out.size();
  report.test_students = students.size();
  for (const Recommender* model : models) {
    if (model == nullptr) throw InvalidArgument("untrained model passed to evaluation");
    SlateMap slates;
    std::vector<RecommendationSlate> list;
    list.reserve(students.size());
    for (std::size_t i = 0; i < students.size(); ++i) {
      if (pools[i].empty()) {
        throw InvalidArgument("student " + students[i].str() + " has no candidate teachers");
      }
      auto slate = model->recommend(students[i], pools[i], k);
      list.push_back(slate);
      slates.emplace(students[i], std::move(slate));
    }
    EvalRow row;
    row.model = model->name();
    row.precision = precision_at_k(split, slates, k);
    row.recall = recall_at_k(split, slates, k);
    row.diversity = diversity(list);
    if (model->reports_new_teacher_ratio()) row.new_teacher_ratio = new_teacher_ratio(list, store, boost);
    report.rows.push_back(std::move(row));
  }
  return report;
}

InteractionStore mask_pairs(const InteractionStore& store, std::span<const HeldOutPair> pairs) {
  std::set<std::pair<StudentId, TeacherId>> masked;
  for (const auto& p : pairs) masked.emplace(p.student, p.teacher);
  std::vector<CourseRecord> courses;
  courses.reserve(store.courses().size());
  std::set<StudentId> remaining;
  for (const auto& c : store.courses()) {
    if (masked.count({c.student, c.teacher})) continue;
    courses.push_back(c);
    remaining.insert(c.student);
  }
  std::vector<OutcomeRecord> outcomes;
  for (auto& o : store.outcome_records()) {
    if (remaining.count(o.student)) outcomes.push_back(std::move(o));
  }
  return InteractionStore::ingest(std::move(courses), std::move(outcomes));
}

PreparedData prepare(const InteractionStore& full, const OfflineConfig& config) {
  PreparedData data;
  data.labels = build_labels(full);
  data.split = make_split(data.labels, config.threshold, config.holdout_pairs, config.split_seed);
  check_no_leak(data.split);
  data.train_store = mask_pairs(full, data.split.held_out);
  return data;
}

EvalReport evaluate_offline(const PreparedData& data, const EntityTable& students,
                            const EntityTable& teachers, const FeatureSchema& schema,
                            const gbdt::GbdtModel& model, const OfflineConfig& config,
                            std::span<const Recommender* const> external) {
  const auto& store = data.train_store;
  const auto last = store.last_timestamp();
  if (!last) throw InvalidArgument("training store is empty");
  const Timestamp as_of = *last + std::chrono::milliseconds{1};
  const auto teacher_ids = teacher_universe(store, teachers);

  const FeatureExtractor extractor(schema, students, teachers, store);
  const SlateRanker ranker(model, extractor, config.boost, as_of);
  RankerRecommender ours("Our", ranker);
  std::vector<const Recommender*> models{&ours};

  std::unique_ptr<baselines::RatingMatrix> matrix, shifted;
  std::vector<std::unique_ptr<Recommender>> owned;
  if (config.baselines) {
    const auto student_ids = student_universe(store, students);
    matrix = std::make_unique<baselines::RatingMatrix>(
        baselines::RatingMatrix::from_labels(data.split.training, student_ids, teacher_ids));
    shifted = std::make_unique<baselines::RatingMatrix>(baselines::shift_to_unit_interval(*matrix));
    const auto rank = std::min<std::size_t>(
        config.latent_rank,
        static_cast<std::size_t>(std::min(matrix->values.rows(), matrix->values.cols())));
    owned.push_back(std::make_unique<ItemCfRecommender>(*matrix, config.itemcf_neighbours));
    owned.push_back(std::make_unique<FactorRecommender>(
        "SVD", *matrix,
        baselines::svd_fit(*matrix, rank, config.svd_iterations, config.factor_seed)));
    owned.push_back(std::make_unique<FactorRecommender>(
        "NMF", *shifted,
        baselines::nmf_fit(*shifted, rank, config.nmf_iterations, config.factor_seed)));
    for (const auto& m : owned) models.push_back(m.get());
  }
  for (const Recommender* m : external) models.push_back(m);
  return evaluate_all(data.split, models, store, teacher_ids, config.boost, config.k);
}

OfflineResult run_offline(const InteractionStore& full, const EntityTable& students,
                          const EntityTable& teachers, const OfflineConfig& config) {
  OfflineResult result;
  result.data = prepare(full, config);
  result.ranker = train_ranker(result.data.train_store, students, teachers,
                               result.data.split.training, config.gbdt);
  result.report = evaluate_offline(result.data, students, teachers, result.ranker.schema,
                                   result.ranker.model, config);
  return result;
}

}  // namespace teachrec::evaluation
