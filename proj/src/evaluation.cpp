#include "compress/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "compress/student.hpp"

namespace compress {
namespace {

constexpr Index kScoreBlock = 512;

void check_labels(std::span<const int> labels, Index rows, const char* what) {
  if (static_cast<Index>(labels.size()) != rows)
    throw Error(Errc::LengthMismatch, std::string(what) + " labels do not match embedding rows");
}

}  // namespace

KnnResult knn_classify(const MatrixXr& train_emb, std::span<const int> train_labels, const MatrixXr& test_emb,
                       std::span<const int> test_labels, int k_neighbors) {
  if (train_emb.rows() == 0) throw Error(Errc::EmptyTrainSet, "nearest-neighbor classifier needs train points");
  if (k_neighbors < 1) throw Error(Errc::InvalidConfig, "k_neighbors must be >= 1");
  if (train_emb.cols() != test_emb.cols()) throw Error(Errc::DimensionMismatch, "train and test dims differ");
  check_labels(train_labels, train_emb.rows(), "train");
  if (!test_labels.empty()) check_labels(test_labels, test_emb.rows(), "test");

  const Index n_train = train_emb.rows();
  const Index k = std::min<Index>(k_neighbors, n_train);
  KnnResult result;
  result.predictions.resize(static_cast<std::size_t>(test_emb.rows()));
  std::vector<Index> order(static_cast<std::size_t>(n_train));

  for (Index begin = 0; begin < test_emb.rows(); begin += kScoreBlock) {
    const Index rows = std::min(kScoreBlock, test_emb.rows() - begin);
    const MatrixXr scores = test_emb.middleRows(begin, rows) * train_emb.transpose();
    for (Index r = 0; r < rows; ++r) {
      const auto s = scores.row(r);
      int predicted;
      if (k == 1) {
        Index best = 0;
        for (Index j = 1; j < n_train; ++j)
          if (s[j] > s[best]) best = j;
        predicted = train_labels[static_cast<std::size_t>(best)];
      } else {
        std::iota(order.begin(), order.end(), Index{0});
        auto nearer = [&](Index a, Index b) { return s[a] > s[b] || (s[a] == s[b] && a < b); };
        std::partial_sort(order.begin(), order.begin() + k, order.end(), nearer);
        // Labels in first-seen order already encode the nearer-neighbor tie break.
        std::vector<std::pair<int, int>> votes;  // (label, count)
        for (Index i = 0; i < k; ++i) {
          const int label = train_labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
          auto it = std::find_if(votes.begin(), votes.end(), [label](const auto& v) { return v.first == label; });
          if (it == votes.end())
            votes.emplace_back(label, 1);
          else
            ++it->second;
        }
        auto winner = votes.begin();
        for (auto it = votes.begin(); it != votes.end(); ++it)
          if (it->second > winner->second) winner = it;
        predicted = winner->first;
      }
      result.predictions[static_cast<std::size_t>(begin + r)] = predicted;
    }
  }

  if (!test_labels.empty()) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test_labels.size(); ++i) correct += result.predictions[i] == test_labels[i];
    result.accuracy = static_cast<double>(correct) / static_cast<double>(test_labels.size());
  }
  return result;
}

namespace {

/// Greedy k-means++: each new center is the best of several D^2-weighted draws.
MatrixXr kmeans_plus_plus(const MatrixXr& points, int k, std::mt19937_64& rng) {
  const Index n = points.rows();
  const int trials = 2 + static_cast<int>(std::log(static_cast<double>(k)));
  MatrixXr centroids(k, points.cols());
  std::vector<char> chosen(static_cast<std::size_t>(n), 0);
  std::uniform_int_distribution<Index> first(0, n - 1);
  Index pick = first(rng);
  centroids.row(0) = points.row(pick);
  chosen[static_cast<std::size_t>(pick)] = 1;
  VectorXr d2 = (points.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    if (total > 0.0) {
      double best_potential = std::numeric_limits<double>::infinity();
      VectorXr best_d2;
      for (int t = 0; t < trials; ++t) {
        const double target = unit(rng) * total;
        double acc = 0.0;
        Index cand = -1;
        for (Index i = 0; i < n; ++i) {
          if (d2[i] <= 0.0) continue;
          acc += d2[i];
          cand = i;
          if (acc > target) break;
        }
        VectorXr next = d2.cwiseMin((points.rowwise() - points.row(cand)).rowwise().squaredNorm());
        const double potential = next.sum();
        if (potential < best_potential) {
          best_potential = potential;
          best_d2 = std::move(next);
          pick = cand;
        }
      }
      d2 = std::move(best_d2);
    } else {
      // Every point coincides with a centroid; take the first unused one.
      pick = 0;
      while (chosen[static_cast<std::size_t>(pick)]) ++pick;
    }
    centroids.row(c) = points.row(pick);
    chosen[static_cast<std::size_t>(pick)] = 1;
  }
  return centroids;
}

double squared_distance(const MatrixXr& points, Index i, const MatrixXr& centroids, Index c) {
  return (points.row(i) - centroids.row(c)).squaredNorm();
}

/// Returns true when any assignment changed. Points move only on strict improvement.
bool assign_points(const MatrixXr& points, const MatrixXr& centroids, std::vector<int>& assignment, bool fresh) {
  bool changed = false;
  for (Index i = 0; i < points.rows(); ++i) {
    int best = fresh ? 0 : assignment[static_cast<std::size_t>(i)];
    double best_d = squared_distance(points, i, centroids, best);
    for (Index c = 0; c < centroids.rows(); ++c) {
      const double d = squared_distance(points, i, centroids, c);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    if (fresh || best != assignment[static_cast<std::size_t>(i)]) changed = true;
    assignment[static_cast<std::size_t>(i)] = best;
  }
  return changed;
}

double total_inertia(const MatrixXr& points, const MatrixXr& centroids, const std::vector<int>& assignment) {
  double sum = 0.0;
  for (Index i = 0; i < points.rows(); ++i)
    sum += squared_distance(points, i, centroids, assignment[static_cast<std::size_t>(i)]);
  return sum;
}

void update_centroids(const MatrixXr& points, MatrixXr& centroids, std::vector<int>& assignment) {
  const Index k = centroids.rows();
  MatrixXr sums = MatrixXr::Zero(k, points.cols());
  std::vector<Index> counts(static_cast<std::size_t>(k), 0);
  for (Index i = 0; i < points.rows(); ++i) {
    const int c = assignment[static_cast<std::size_t>(i)];
    sums.row(c) += points.row(i);
    ++counts[static_cast<std::size_t>(c)];
  }
  for (Index c = 0; c < k; ++c)
    if (counts[static_cast<std::size_t>(c)] > 0) centroids.row(c) = sums.row(c) / static_cast<double>(counts[c]);

  for (Index c = 0; c < k; ++c) {
    if (counts[static_cast<std::size_t>(c)] > 0) continue;
    // Re-seed with the point farthest from its centroid whose cluster can spare it.
    Index far = -1;
    double far_d = -1.0;
    for (Index i = 0; i < points.rows(); ++i) {
      const int owner = assignment[static_cast<std::size_t>(i)];
      if (counts[static_cast<std::size_t>(owner)] < 2) continue;
      const double d = squared_distance(points, i, centroids, owner);
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    if (far < 0) break;
    const int donor = assignment[static_cast<std::size_t>(far)];
    assignment[static_cast<std::size_t>(far)] = static_cast<int>(c);
    counts[static_cast<std::size_t>(c)] = 1;
    --counts[static_cast<std::size_t>(donor)];
    sums.row(donor) -= points.row(far);
    sums.row(c) = points.row(far);
    centroids.row(c) = points.row(far);
    centroids.row(donor) = sums.row(donor) / static_cast<double>(counts[static_cast<std::size_t>(donor)]);
  }
}

}  // namespace

ClusterAssignment kmeans(const MatrixXr& points, int k, int max_iters, std::uint64_t seed) {
  if (k < 1) throw Error(Errc::InvalidConfig, "k must be >= 1");
  if (k > points.rows())
    throw Error(Errc::KTooLarge, "k = " + std::to_string(k) + " exceeds " + std::to_string(points.rows()) + " samples");
  if (max_iters < 1) throw Error(Errc::InvalidConfig, "max_iters must be >= 1");

  std::mt19937_64 rng(seed);
  ClusterAssignment out;
  out.centroids = kmeans_plus_plus(points, k, rng);
  out.assignment.assign(static_cast<std::size_t>(points.rows()), 0);

  bool converged = false;
  for (int iter = 0; iter < max_iters; ++iter) {
    const bool changed = assign_points(points, out.centroids, out.assignment, iter == 0);
    out.inertia_trace.push_back(total_inertia(points, out.centroids, out.assignment));
    out.iterations = iter + 1;
    if (!changed) {
      converged = true;
      break;
    }
    update_centroids(points, out.centroids, out.assignment);
  }
  if (!converged) {
    // Centroids were refreshed after the last assignment; report against them.
    out.inertia = total_inertia(points, out.centroids, out.assignment);
  } else {
    out.inertia = out.inertia_trace.back();
  }
  return out;
}

MatrixXr alignment_matrix(std::span<const int> assignment, std::span<const int> labels, int k, int num_classes) {
  if (assignment.size() != labels.size()) throw Error(Errc::LengthMismatch, "assignment and labels differ in length");
  if (k < 1 || num_classes < 1) throw Error(Errc::InvalidConfig, "k and class count must be positive");
  MatrixXr counts = MatrixXr::Zero(k, num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int r = assignment[i];
    const int c = labels[i];
    if (r < 0 || r >= k || c < 0 || c >= num_classes)
      throw Error(Errc::InvalidConfig, "cluster or label index out of range");
    counts(r, c) += 1.0;
  }
  for (Index r = 0; r < k; ++r) {
    const double size = counts.row(r).sum();
    if (size > 0.0) counts.row(r) /= size;
  }
  return counts;
}

Matching hungarian_max(const MatrixXr& weights) {
  const Index rows = weights.rows();
  const Index cols = weights.cols();
  Matching out;
  out.row_to_col.assign(static_cast<std::size_t>(rows), -1);
  if (rows == 0 || cols == 0) return out;
  if (!weights.allFinite()) throw Error(Errc::NonFinite, "assignment weights must be finite");

  // Minimize (top - w) on a square matrix; padded cells carry weight 0.
  const Index n = std::max(rows, cols);
  const double top = std::max(weights.maxCoeff(), 0.0);
  auto cost = [&](Index i, Index j) { return top - ((i < rows && j < cols) ? weights(i, j) : 0.0); };

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> match(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (Index i = 1; i <= n; ++i) {
    match[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Index i0 = match[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  for (Index j = 1; j <= n; ++j) {
    const Index i = match[static_cast<std::size_t>(j)] - 1;
    if (i < rows && j - 1 < cols) out.row_to_col[static_cast<std::size_t>(i)] = static_cast<int>(j - 1);
  }
  for (Index i = 0; i < rows; ++i) {
    const int c = out.row_to_col[static_cast<std::size_t>(i)];
    if (c >= 0) out.total += weights(i, c);
  }
  return out;
}

double cluster_alignment_accuracy(const MatrixXr& train_emb, std::span<const int> train_labels, const MatrixXr& val_emb,
                                  std::span<const int> val_labels, int k, std::uint64_t seed) {
  check_labels(train_labels, train_emb.rows(), "train");
  check_labels(val_labels, val_emb.rows(), "val");
  if (train_emb.cols() != val_emb.cols()) throw Error(Errc::DimensionMismatch, "train and val dims differ");
  if (val_labels.empty()) return 0.0;
  int num_classes = 0;
  for (int y : train_labels) num_classes = std::max(num_classes, y + 1);
  for (int y : val_labels) num_classes = std::max(num_classes, y + 1);

  const ClusterAssignment clusters = kmeans(train_emb, k, kDefaultKmeansIters, seed);
  const Matching mapping = hungarian_max(alignment_matrix(clusters.assignment, train_labels, k, num_classes));

  MatrixXr directions = clusters.centroids;
  for (Index c = 0; c < directions.rows(); ++c) {
    const double norm = directions.row(c).norm();
    if (norm > kZeroNormThreshold) directions.row(c) /= norm;
  }
  const MatrixXr scores = val_emb * directions.transpose();
  std::size_t correct = 0;
  for (Index i = 0; i < scores.rows(); ++i) {
    Index best = 0;
    for (Index c = 1; c < scores.cols(); ++c)
      if (scores(i, c) > scores(i, best)) best = c;
    const int predicted = mapping.row_to_col[static_cast<std::size_t>(best)];
    correct += predicted >= 0 && predicted == val_labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(correct) / static_cast<double>(val_labels.size());
}

Standardizer Standardizer::fit(const MatrixXr& features, double std_floor) {
  Standardizer s;
  if (features.rows() == 0) throw Error(Errc::EmptyTrainSet, "cannot standardize an empty set");
  s.mean = features.colwise().mean();
  const Eigen::RowVectorXd var = (features.rowwise() - s.mean).array().square().colwise().mean();
  s.scale = var.cwiseSqrt().cwiseMax(std_floor).cwiseInverse();
  return s;
}

MatrixXr Standardizer::apply(const MatrixXr& features) const {
  if (features.cols() != mean.size()) throw Error(Errc::DimensionMismatch, "feature dim differs from fitted dim");
  return ((features.rowwise() - mean).array().rowwise() * scale.array()).matrix();
}

double linear_probe(const MatrixXr& train_emb, std::span<const int> train_labels, const MatrixXr& val_emb,
                    std::span<const int> val_labels, const ProbeConfig& config) {
  check_labels(train_labels, train_emb.rows(), "train");
  check_labels(val_labels, val_emb.rows(), "val");
  if (train_emb.rows() == 0) throw Error(Errc::EmptyTrainSet, "linear probe needs train points");
  if (config.batch_size < 1) throw Error(Errc::InvalidConfig, "batch size must be positive");
  int num_classes = 0;
  for (int y : train_labels) num_classes = std::max(num_classes, y + 1);
  for (int y : val_labels) num_classes = std::max(num_classes, y + 1);

  const Standardizer standardizer = Standardizer::fit(l2_normalize_rows(train_emb));
  const MatrixXr train = standardizer.apply(l2_normalize_rows(train_emb));
  const MatrixXr val = standardizer.apply(l2_normalize_rows(val_emb));

  const std::array<Index, 2> dims{train.cols(), num_classes};
  StudentNetwork classifier = StudentNetwork::create(dims, config.seed);
  SgdState sgd(config.lr, config.momentum, config.weight_decay, classifier.parameter_count());
  const LrSchedule schedule(config.lr, config.milestones, config.lr_factor);
  VectorXr params = classifier.parameters();

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Index> order(static_cast<std::size_t>(train.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  std::vector<int> batch_labels;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    sgd.lr = schedule.at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      std::span<const Index> idx(order.data() + begin, end - begin);
      const MatrixXr x = train(idx, Eigen::all);
      batch_labels.clear();
      for (Index i : idx) batch_labels.push_back(train_labels[static_cast<std::size_t>(i)]);
      const ForwardResult fw = forward(classifier, x);
      MatrixXr grad_logits;
      softmax_cross_entropy(fw.output, batch_labels, &grad_logits);
      const VectorXr grads = backward(classifier, fw.cache, grad_logits);
      sgd_step(sgd, params, grads);
      classifier.set_parameters(params);
    }
  }

  if (val_labels.empty()) return 0.0;
  const MatrixXr logits = embed(classifier, val);
  std::size_t correct = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    Index best = 0;
    logits.row(i).maxCoeff(&best);
    correct += best == val_labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(correct) / static_cast<double>(val_labels.size());
}

}  // namespace compress
