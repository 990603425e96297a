#include "teachrec/baselines.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>

#include "teachrec/error.hpp"

namespace teachrec::baselines {

namespace {

template <class IdT>
std::vector<IdT> sorted_unique(std::span<const IdT> ids) {
  std::vector<IdT> out(ids.begin(), ids.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

template <class IdT>
std::optional<std::size_t> position(const std::vector<IdT>& ids, const IdT& id) {
  const auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it == ids.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - ids.begin());
}

Eigen::MatrixXd thin_q(const Eigen::MatrixXd& m) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  return qr.householderQ() * Eigen::MatrixXd::Identity(m.rows(), m.cols());
}

// Similarity-ordered weighted sum over rated columns, excluding `col` itself.
double neighbourhood_sum(const Eigen::MatrixXd& values, std::size_t row, std::size_t col,
                         const std::vector<std::size_t>& rated,
                         const std::function<double(std::size_t)>& similarity,
                         std::size_t top_n) {
  std::vector<std::pair<double, std::size_t>> neighbours;
  neighbours.reserve(rated.size());
  for (const auto r : rated) {
    if (r == col) continue;
    neighbours.emplace_back(similarity(r), r);
  }
  const std::size_t keep = std::min(top_n, neighbours.size());
  std::partial_sort(neighbours.begin(), neighbours.begin() + static_cast<std::ptrdiff_t>(keep),
                    neighbours.end(), [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return a.second < b.second;
                    });
  double sum = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    sum += neighbours[i].first * values(static_cast<Eigen::Index>(row),
                                        static_cast<Eigen::Index>(neighbours[i].second));
  }
  return sum;
}

std::vector<std::size_t> rated_columns(const RatingMatrix& m, std::size_t row) {
  std::vector<std::size_t> out;
  for (Eigen::Index c = 0; c < m.observed.cols(); ++c) {
    if (m.observed(static_cast<Eigen::Index>(row), c)) out.push_back(static_cast<std::size_t>(c));
  }
  return out;
}

}  // namespace

RatingMatrix RatingMatrix::from_labels(std::span<const LabeledPair> labels,
                                       std::span<const StudentId> students,
                                       std::span<const TeacherId> teachers) {
  RatingMatrix m;
  m.students = sorted_unique(students);
  m.teachers = sorted_unique(teachers);
  const auto rows = static_cast<Eigen::Index>(m.students.size());
  const auto cols = static_cast<Eigen::Index>(m.teachers.size());
  m.values = Eigen::MatrixXd::Zero(rows, cols);
  m.observed.setConstant(rows, cols, false);
  for (const auto& l : labels) {
    const auto r = m.row(l.student);
    const auto c = m.col(l.teacher);
    if (!r || !c) continue;
    m.values(static_cast<Eigen::Index>(*r), static_cast<Eigen::Index>(*c)) = l.score.value;
    m.observed(static_cast<Eigen::Index>(*r), static_cast<Eigen::Index>(*c)) = true;
  }
  return m;
}

std::optional<std::size_t> RatingMatrix::row(const StudentId& id) const {
  return position(students, id);
}

std::optional<std::size_t> RatingMatrix::col(const TeacherId& id) const {
  return position(teachers, id);
}

RatingMatrix shift_to_unit_interval(const RatingMatrix& matrix) {
  RatingMatrix out = matrix;
  for (Eigen::Index r = 0; r < out.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.values.cols(); ++c) {
      out.values(r, c) = out.observed(r, c) ? (matrix.values(r, c) + 1.0) / 2.0 : 0.0;
    }
  }
  return out;
}

double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& a,
                         const Eigen::Ref<const Eigen::VectorXd>& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

double itemcf_score(const RatingMatrix& matrix, const StudentId& student, const TeacherId& teacher,
                    std::size_t top_n) {
  const auto row = matrix.row(student);
  const auto col = matrix.col(teacher);
  if (!row || !col) return 0.0;
  const auto rated = rated_columns(matrix, *row);
  const auto& v = matrix.values;
  return neighbourhood_sum(
      v, *row, *col, rated,
      [&](std::size_t r) {
        return cosine_similarity(v.col(static_cast<Eigen::Index>(*col)),
                                 v.col(static_cast<Eigen::Index>(r)));
      },
      top_n);
}

ItemCf::ItemCf(const RatingMatrix& matrix, std::size_t top_n) : matrix_(matrix), top_n_(top_n) {
  const auto& v = matrix.values;
  similarity_ = v.transpose() * v;
  const Eigen::VectorXd norms = similarity_.diagonal().cwiseSqrt();
  for (Eigen::Index i = 0; i < similarity_.rows(); ++i) {
    for (Eigen::Index j = 0; j < similarity_.cols(); ++j) {
      const double d = norms(i) * norms(j);
      similarity_(i, j) = d == 0.0 ? 0.0 : similarity_(i, j) / d;
    }
  }
  rated_.resize(matrix.students.size());
  for (std::size_t r = 0; r < rated_.size(); ++r) rated_[r] = rated_columns(matrix, r);
}

double ItemCf::score(std::size_t row, std::size_t col) const {
  return neighbourhood_sum(
      matrix_.values, row, col, rated_[row],
      [&](std::size_t r) {
        return similarity_(static_cast<Eigen::Index>(col), static_cast<Eigen::Index>(r));
      },
      top_n_);
}

double ItemCf::score(const StudentId& student, const TeacherId& teacher) const {
  const auto row = matrix_.row(student);
  const auto col = matrix_.col(teacher);
  if (!row || !col) return 0.0;
  return score(*row, *col);
}

FactorModel svd_fit(const Eigen::MatrixXd& a, std::size_t k, std::size_t n_power_iterations,
                    std::uint64_t seed) {
  const auto limit = static_cast<std::size_t>(std::min(a.rows(), a.cols()));
  if (k < 1 || k > limit) {
    throw InvalidArgument("SVD rank k=" + std::to_string(k) + " outside [1, " +
                          std::to_string(limit) + "]");
  }
  const auto kk = static_cast<Eigen::Index>(k);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd v(a.cols(), kk);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = normal(rng);
  v = thin_q(v);
  for (std::size_t it = 0; it < n_power_iterations; ++it) {
    const Eigen::MatrixXd w = a * v;
    v = thin_q(a.transpose() * w);
  }
  FactorModel model;
  model.method = FactorMethod::Svd;
  model.u = a * v;
  model.v = std::move(v);
  return model;
}

FactorModel svd_fit(const RatingMatrix& matrix, std::size_t k, std::size_t n_power_iterations,
                    std::uint64_t seed) {
  return svd_fit(matrix.values, k, n_power_iterations, seed);
}

FactorModel nmf_fit(const Eigen::MatrixXd& a, std::size_t k, std::size_t iterations,
                    std::uint64_t seed) {
  if (k < 1) throw InvalidArgument("NMF rank k must be >= 1");
  if (a.size() > 0 && a.minCoeff() < 0.0) {
    throw InvalidArgument("NMF input has negative entries; shift scores to [0, 1] first");
  }
  const auto kk = static_cast<Eigen::Index>(k);
  const double scale = a.size() > 0 ? std::sqrt(std::max(a.mean(), 1e-12) / static_cast<double>(k))
                                    : 1.0;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.1, 1.0);
  Eigen::MatrixXd w(a.rows(), kk);
  Eigen::MatrixXd h(kk, a.cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * uniform(rng);
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = scale * uniform(rng);

  FactorModel model;
  model.method = FactorMethod::Nmf;
  model.objective_history.reserve(iterations + 1);
  model.objective_history.push_back((a - w * h).squaredNorm());
  for (std::size_t it = 0; it < iterations; ++it) {
    {
      const Eigen::MatrixXd num = w.transpose() * a;
      const Eigen::MatrixXd den = (w.transpose() * w) * h;
      for (Eigen::Index i = 0; i < h.size(); ++i) {
        if (den.data()[i] > 0.0) h.data()[i] *= num.data()[i] / den.data()[i];
      }
    }
    {
      const Eigen::MatrixXd num = a * h.transpose();
      const Eigen::MatrixXd den = w * (h * h.transpose());
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        if (den.data()[i] > 0.0) w.data()[i] *= num.data()[i] / den.data()[i];
      }
    }
    model.objective_history.push_back((a - w * h).squaredNorm());
  }
  model.u = std::move(w);
  model.v = h.transpose();
  return model;
}

FactorModel nmf_fit(const RatingMatrix& matrix_shifted, std::size_t k, std::size_t iterations,
                    std::uint64_t seed) {
  return nmf_fit(matrix_shifted.values, k, iterations, seed);
}

}  // namespace teachrec::baselines
