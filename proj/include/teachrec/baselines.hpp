#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "teachrec/core.hpp"
#include "teachrec/pseudo_labels.hpp"

namespace teachrec::baselines {

/// Dense |S| x |T| matrix of pseudo scores; unobserved entries are 0.
struct RatingMatrix {
  std::vector<StudentId> students;
  std::vector<TeacherId> teachers;
  Eigen::MatrixXd values;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> observed;

  /// Rows and columns follow the given id lists (deduplicated, sorted).
  /// Labels whose student or teacher is not listed are ignored.
  static RatingMatrix from_labels(std::span<const LabeledPair> labels,
                                  std::span<const StudentId> students,
                                  std::span<const TeacherId> teachers);

  std::optional<std::size_t> row(const StudentId& id) const;
  std::optional<std::size_t> col(const TeacherId& id) const;
};

/// Observed entries mapped from [-1, 1] to [0, 1] via (x + 1) / 2; the rest stay 0.
RatingMatrix shift_to_unit_interval(const RatingMatrix& matrix);

double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& a,
                         const Eigen::Ref<const Eigen::VectorXd>& b);

/// Sum over the student's other rated teachers r of cos(col t, col r) * rating(s, r),
/// keeping the top_n most similar r. Unknown ids or no ratings score 0.
double itemcf_score(const RatingMatrix& matrix, const StudentId& student, const TeacherId& teacher,
                    std::size_t top_n);

/// Item-based CF with the teacher-teacher cosine matrix computed once.
class ItemCf {
 public:
  explicit ItemCf(const RatingMatrix& matrix, std::size_t top_n = 50);

  double score(const StudentId& student, const TeacherId& teacher) const;
  double score(std::size_t row, std::size_t col) const;
  const Eigen::MatrixXd& similarity() const { return similarity_; }

 private:
  const RatingMatrix& matrix_;
  std::size_t top_n_;
  Eigen::MatrixXd similarity_;
  std::vector<std::vector<std::size_t>> rated_;  // observed columns per row
};

enum class FactorMethod { Svd, Nmf };

/// score(s, t) = dot(U_s, V_t).
struct FactorModel {
  FactorMethod method = FactorMethod::Svd;
  Eigen::MatrixXd u;  // |S| x k
  Eigen::MatrixXd v;  // |T| x k
  /// NMF: objective before the first update, then after every iteration.
  std::vector<double> objective_history;

  double score(std::size_t row, std::size_t col) const { return u.row(row).dot(v.row(col)); }
  Eigen::MatrixXd reconstruct() const { return u * v.transpose(); }
};

/// Rank-k truncated SVD by orthogonal iteration on A^T A with a QR
/// re-orthonormalisation every step. V has orthonormal columns and U = A V,
/// so U V^T is the projection of A onto the recovered right singular subspace.
/// Throws InvalidArgument unless 1 <= k <= min(rows, cols).
FactorModel svd_fit(const Eigen::MatrixXd& matrix, std::size_t k, std::size_t n_power_iterations,
                    std::uint64_t seed);
FactorModel svd_fit(const RatingMatrix& matrix, std::size_t k, std::size_t n_power_iterations,
                    std::uint64_t seed);

/// Lee-Seung multiplicative updates for the Frobenius objective. Throws
/// InvalidArgument on negative input entries or k == 0.
FactorModel nmf_fit(const Eigen::MatrixXd& matrix, std::size_t k, std::size_t iterations,
                    std::uint64_t seed);
FactorModel nmf_fit(const RatingMatrix& matrix_shifted, std::size_t k, std::size_t iterations,
                    std::uint64_t seed);

}  // namespace teachrec::baselines
