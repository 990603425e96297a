#include "teachrec/gbdt.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "teachrec/error.hpp"

namespace teachrec::gbdt {

namespace {

constexpr char kMagic[8] = {'T', 'R', 'E', 'C', 'G', 'B', 'D', 'T'};

using RowList = std::vector<std::uint32_t>;

class TreeBuilder {
 public:
  TreeBuilder(std::span<const double> x, std::size_t n_features, std::span<const double> residual,
              const TrainParams& params)
      : x_(x), n_features_(n_features), residual_(residual), params_(params),
        goes_left_(residual.size(), 0) {}

  RegressionTree build(const RowList& members, const std::vector<RowList>& sorted) {
    nodes_.clear();
    grow(members, sorted, 0);
    return RegressionTree(std::move(nodes_));
  }

 private:
  double at(std::uint32_t row, std::size_t f) const { return x_[row * n_features_ + f]; }

  std::int32_t grow(const RowList& members, const std::vector<RowList>& sorted, int depth) {
    const std::size_t m = members.size();
    double sum = 0.0;
    for (const auto r : members) sum += residual_[r];

    const auto index = static_cast<std::int32_t>(nodes_.size());
    TreeNode leaf;
    leaf.value = sum / static_cast<double>(m);
    nodes_.push_back(leaf);

    const auto min_leaf = static_cast<std::size_t>(params_.min_samples_leaf);
    if (depth >= params_.max_depth || m < 2 * min_leaf) return index;

    // Strict '>' with features and thresholds visited in ascending order
    // breaks gain ties toward the lowest feature, then the lowest threshold.
    const double parent = sum * sum / static_cast<double>(m);
    double best_gain = 0.0;
    std::int32_t best_feature = -1;
    double best_threshold = 0.0;
    for (std::size_t f = 0; f < n_features_; ++f) {
      const RowList& rows = sorted[f];
      double left_sum = 0.0;
      for (std::size_t k = 0; k + 1 < m; ++k) {
        left_sum += residual_[rows[k]];
        const std::size_t n_left = k + 1;
        if (n_left < min_leaf) continue;
        if (m - n_left < min_leaf) break;
        const double a = at(rows[k], f);
        const double b = at(rows[k + 1], f);
        if (a == b) continue;
        const double right_sum = sum - left_sum;
        const double gain = left_sum * left_sum / static_cast<double>(n_left) +
                            right_sum * right_sum / static_cast<double>(m - n_left) - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<std::int32_t>(f);
          double mid = a + (b - a) / 2.0;
          if (!(mid < b)) mid = a;
          best_threshold = mid;
        }
      }
    }
    if (best_feature < 0) return index;

    RowList left_members, right_members;
    for (const auto r : members) {
      const bool left = at(r, static_cast<std::size_t>(best_feature)) <= best_threshold;
      goes_left_[r] = left ? 1 : 0;
      (left ? left_members : right_members).push_back(r);
    }
    std::vector<RowList> left_sorted(n_features_), right_sorted(n_features_);
    for (std::size_t f = 0; f < n_features_; ++f) {
      left_sorted[f].reserve(left_members.size());
      right_sorted[f].reserve(right_members.size());
      for (const auto r : sorted[f]) (goes_left_[r] ? left_sorted[f] : right_sorted[f]).push_back(r);
    }

    nodes_[index].feature = best_feature;
    nodes_[index].threshold = best_threshold;
    nodes_[index].value = 0.0;
    const auto l = grow(left_members, left_sorted, depth + 1);
    left_sorted.clear();
    const auto r = grow(right_members, right_sorted, depth + 1);
    nodes_[index].left = l;
    nodes_[index].right = r;
    return index;
  }

  std::span<const double> x_;
  std::size_t n_features_;
  std::span<const double> residual_;
  const TrainParams& params_;
  std::vector<char> goes_left_;
  std::vector<TreeNode> nodes_;
};

double mean_squared_error(std::span<const double> y, std::span<const double> f) {
  double sse = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - f[i];
    sse += d * d;
  }
  return sse / static_cast<double>(y.size());
}

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    out_.append(static_cast<const char*>(data), n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  bool done() const { return pos_ == in_.size(); }

 private:
  unsigned char byte(std::size_t i) const { return static_cast<unsigned char>(in_[i]); }
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw FormatError("model payload ends early");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

// Rebuilds child links from a pre-order list; returns the index after the subtree.
std::size_t link_preorder(std::vector<TreeNode>& nodes, std::size_t at, int depth) {
  if (at >= nodes.size()) throw FormatError("tree node list is incomplete");
  if (depth > 64) throw FormatError("tree is too deep");
  if (nodes[at].is_leaf()) return at + 1;
  nodes[at].left = static_cast<std::int32_t>(at + 1);
  const std::size_t right = link_preorder(nodes, at + 1, depth + 1);
  nodes[at].right = static_cast<std::int32_t>(right);
  return link_preorder(nodes, right, depth + 1);
}

}  // namespace

void TrainParams::validate() const {
  if (n_trees < 1) throw InvalidArgument("n_trees must be >= 1");
  if (max_depth < 0) throw InvalidArgument("max_depth must be >= 0");
  if (min_samples_leaf < 1) throw InvalidArgument("min_samples_leaf must be >= 1");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
    throw InvalidArgument("learning_rate must be in (0, 1]");
  }
  if (!(subsample > 0.0 && subsample <= 1.0)) throw InvalidArgument("subsample must be in (0, 1]");
}

RegressionTree::RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {
  if (nodes_.empty()) throw InvalidArgument("a tree needs at least one node");
}

std::size_t RegressionTree::leaf_index(std::span<const double> x) const {
  std::size_t i = 0;
  while (!nodes_[i].is_leaf()) {
    const auto& n = nodes_[i];
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left
                                                                                        : n.right);
  }
  return i;
}

double RegressionTree::predict(std::span<const double> x) const {
  return nodes_[leaf_index(x)].value;
}

int RegressionTree::depth() const {
  std::vector<int> d(nodes_.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    deepest = std::max(deepest, d[i]);
    if (!nodes_[i].is_leaf()) {
      d[static_cast<std::size_t>(nodes_[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes_[i].right)] = d[i] + 1;
    }
  }
  return deepest;
}

GbdtModel::GbdtModel(double base_score, double learning_rate, std::uint64_t schema_fingerprint,
                     std::size_t n_features, std::vector<RegressionTree> trees)
    : base_score_(base_score), learning_rate_(learning_rate),
      schema_fingerprint_(schema_fingerprint), n_features_(n_features),
      trees_(std::move(trees)) {}

double GbdtModel::predict_raw(std::span<const double> x) const {
  double sum = 0.0;
  for (const auto& tree : trees_) sum += tree.predict(x);
  return base_score_ + learning_rate_ * sum;
}

double GbdtModel::predict(const FeatureVector& x) const {
  if (x.schema_fingerprint != schema_fingerprint_) {
    throw SchemaMismatch("feature vector schema " + fingerprint_hex(x.schema_fingerprint) +
                         " does not match model schema " + fingerprint_hex(schema_fingerprint_));
  }
  if (x.values.size() != n_features_) {
    throw SchemaMismatch("feature vector has " + std::to_string(x.values.size()) +
                         " values, model expects " + std::to_string(n_features_));
  }
  return predict_raw(x.values);
}

std::vector<double> GbdtModel::predict_batch(std::span<const FeatureVector> xs) const {
  std::vector<double> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(predict(x));
  return out;
}

std::string GbdtModel::serialize() const {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kFormatVersion);
  w.u64(schema_fingerprint_);
  w.u64(n_features_);
  w.u32(static_cast<std::uint32_t>(trees_.size()));
  w.f64(learning_rate_);
  w.f64(base_score_);
  for (const auto& tree : trees_) {
    w.u32(static_cast<std::uint32_t>(tree.nodes().size()));
    for (const auto& node : tree.nodes()) {
      w.i32(node.feature);
      w.f64(node.is_leaf() ? node.value : node.threshold);
    }
  }
  const std::uint32_t crc = crc_of(w.str());
  w.u32(crc);
  return std::move(w.str());
}

GbdtModel GbdtModel::deserialize(std::string_view bytes) {
  constexpr std::size_t kMinSize = sizeof kMagic + 4;
  if (bytes.size() < kMinSize) throw FormatError("checksum failure: model payload truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError("not a teachrec model file");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  Reader tail(bytes.substr(bytes.size() - 4));
  if (tail.u32() != crc_of(body)) throw FormatError("checksum failure: model payload corrupted");

  Reader r(body.substr(sizeof kMagic));
  const auto version = r.u32();
  if (version != kFormatVersion) {
    throw FormatError("model format version " + std::to_string(version) + " is not supported (" +
                      "expected " + std::to_string(kFormatVersion) + ")");
  }
  const auto fingerprint = r.u64();
  const auto n_features = r.u64();
  const auto n_trees = r.u32();
  const double learning_rate = r.f64();
  const double base_score = r.f64();
  std::vector<RegressionTree> trees;
  trees.reserve(n_trees);
  for (std::uint32_t t = 0; t < n_trees; ++t) {
    const auto n_nodes = r.u32();
    if (n_nodes == 0) throw FormatError("empty tree in model payload");
    std::vector<TreeNode> nodes(n_nodes);
    for (auto& node : nodes) {
      node.feature = r.i32();
      const double v = r.f64();
      if (node.feature >= 0 && static_cast<std::uint64_t>(node.feature) >= n_features) {
        throw FormatError("split feature index out of range");
      }
      if (node.is_leaf()) {
        node.value = v;
      } else {
        node.threshold = v;
      }
    }
    if (link_preorder(nodes, 0, 0) != nodes.size()) {
      throw FormatError("tree node list has trailing nodes");
    }
    trees.emplace_back(std::move(nodes));
  }
  if (!r.done()) throw FormatError("trailing bytes in model payload");
  return GbdtModel(base_score, learning_rate, fingerprint, static_cast<std::size_t>(n_features),
                   std::move(trees));
}

GbdtModel train(std::span<const FeatureVector> rows, std::span<const double> targets,
                const TrainParams& params, std::vector<double>* mse_trace) {
  params.validate();
  if (rows.empty()) throw InvalidArgument("cannot train on an empty dataset");
  if (rows.size() != targets.size()) {
    throw InvalidArgument("got " + std::to_string(rows.size()) + " rows but " +
                          std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = rows.size();
  const std::size_t width = rows.front().values.size();
  const std::uint64_t fingerprint = rows.front().schema_fingerprint;
  std::vector<double> x;
  x.reserve(n * width);
  for (const auto& row : rows) {
    if (row.schema_fingerprint != fingerprint || row.values.size() != width) {
      throw InvalidArgument("training rows disagree on schema or width");
    }
    for (const double v : row.values) {
      if (!std::isfinite(v)) throw InvalidArgument("non-finite feature value");
    }
    x.insert(x.end(), row.values.begin(), row.values.end());
  }
  for (const double y : targets) {
    if (!std::isfinite(y)) throw InvalidArgument("non-finite target");
  }

  const double base = std::accumulate(targets.begin(), targets.end(), 0.0) / static_cast<double>(n);
  std::vector<double> prediction(n, base);
  std::vector<double> residual(n);
  if (mse_trace) {
    mse_trace->clear();
    mse_trace->push_back(mean_squared_error(targets, prediction));
  }

  std::vector<RowList> sorted(width);
  for (std::size_t f = 0; f < width; ++f) {
    auto& list = sorted[f];
    list.resize(n);
    std::iota(list.begin(), list.end(), 0u);
    std::stable_sort(list.begin(), list.end(), [&](std::uint32_t a, std::uint32_t b) {
      return x[a * width + f] < x[b * width + f];
    });
  }
  RowList all(n);
  std::iota(all.begin(), all.end(), 0u);

  std::mt19937_64 rng(params.rng_seed);
  const bool subsampling = params.subsample < 1.0;
  const std::size_t sample_size =
      std::max<std::size_t>(1, static_cast<std::size_t>(params.subsample * static_cast<double>(n)));

  std::vector<RegressionTree> trees;
  trees.reserve(static_cast<std::size_t>(params.n_trees));
  for (int m = 0; m < params.n_trees; ++m) {
    for (std::size_t i = 0; i < n; ++i) residual[i] = targets[i] - prediction[i];
    TreeBuilder builder(x, width, residual, params);
    if (subsampling) {
      RowList members;
      members.reserve(sample_size);
      std::sample(all.begin(), all.end(), std::back_inserter(members), sample_size, rng);
      std::vector<char> in(n, 0);
      for (const auto r : members) in[r] = 1;
      std::vector<RowList> sub(width);
      for (std::size_t f = 0; f < width; ++f) {
        sub[f].reserve(sample_size);
        for (const auto r : sorted[f]) {
          if (in[r]) sub[f].push_back(r);
        }
      }
      trees.push_back(builder.build(members, sub));
    } else {
      trees.push_back(builder.build(all, sorted));
    }
    const auto& tree = trees.back();
    for (std::size_t i = 0; i < n; ++i) {
      prediction[i] += params.learning_rate *
                       tree.predict(std::span<const double>(x.data() + i * width, width));
    }
    if (mse_trace) mse_trace->push_back(mean_squared_error(targets, prediction));
  }
  return GbdtModel(base, params.learning_rate, fingerprint, width, std::move(trees));
}

}  // namespace teachrec::gbdt
