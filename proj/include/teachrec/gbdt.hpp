#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "teachrec/features.hpp"

namespace teachrec::gbdt {

struct TrainParams {
  int n_trees = 200;
  int max_depth = 4;
  int min_samples_leaf = 20;
  double learning_rate = 0.1;
  /// Fraction of rows drawn (without replacement) per tree. Below 1 the
  /// per-iteration training loss is no longer guaranteed to be monotone.
  double subsample = 1.0;
  std::uint64_t rng_seed = 0;

  /// Throws InvalidArgument when a field is out of range.
  void validate() const;
};

/// Split or leaf. Splits send `x[feature] <= threshold` to the left child.
struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  double value = 0.0;         // leaf output
  std::int32_t left = -1;
  std::int32_t right = -1;

  bool is_leaf() const { return feature < 0; }
};

/// Nodes stored in pre-order; the root is nodes()[0].
class RegressionTree {
 public:
  RegressionTree() = default;
  explicit RegressionTree(std::vector<TreeNode> nodes);

  double predict(std::span<const double> x) const;
  /// Index of the leaf `x` is routed to.
  std::size_t leaf_index(std::span<const double> x) const;
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  int depth() const;

 private:
  std::vector<TreeNode> nodes_;
};

/// Additive ensemble: base_score + learning_rate * sum of tree outputs.
class GbdtModel {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  GbdtModel() = default;
  GbdtModel(double base_score, double learning_rate, std::uint64_t schema_fingerprint,
            std::size_t n_features, std::vector<RegressionTree> trees);

  /// Throws SchemaMismatch when `x` was encoded by another schema or has the
  /// wrong width.
  double predict(const FeatureVector& x) const;
  std::vector<double> predict_batch(std::span<const FeatureVector> xs) const;
  /// No schema check; `x` must have n_features() entries.
  double predict_raw(std::span<const double> x) const;

  double base_score() const { return base_score_; }
  double learning_rate() const { return learning_rate_; }
  std::uint64_t schema_fingerprint() const { return schema_fingerprint_; }
  std::size_t n_features() const { return n_features_; }
  const std::vector<RegressionTree>& trees() const { return trees_; }

  /// Binary container: header {magic, format_version, schema_fingerprint,
  /// n_features, n_trees, learning_rate, base_score}, pre-order nodes per
  /// tree, then a CRC-32 of everything before it. Doubles keep their exact
  /// bit patterns.
  std::string serialize() const;
  /// Throws FormatError on truncation, checksum failure or version mismatch.
  static GbdtModel deserialize(std::string_view bytes);

 private:
  double base_score_ = 0.0;
  double learning_rate_ = 1.0;
  std::uint64_t schema_fingerprint_ = 0;
  std::size_t n_features_ = 0;
  std::vector<RegressionTree> trees_;
};

/// Squared-error gradient boosting with exact greedy splits. `mse_trace`, when
/// given, receives the training MSE of the base model followed by the MSE
/// after each tree. Throws InvalidArgument on an empty dataset, mismatched
/// lengths, non-finite targets, or rows from different schemas.
GbdtModel train(std::span<const FeatureVector> rows, std::span<const double> targets,
                const TrainParams& params, std::vector<double>* mse_trace = nullptr);

}  // namespace teachrec::gbdt
