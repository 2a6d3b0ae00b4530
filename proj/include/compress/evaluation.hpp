#pragma once

// Representation-quality metrics: nearest-neighbor classification, cluster
// alignment (k-means + maximum-weight matching), and a linear probe on
// standardized features.

#include <cstdint>
#include <span>
#include <vector>

#include "compress/embedding.hpp"

namespace compress {

struct KnnResult {
  std::vector<int> predictions;
  double accuracy = 0.0;
};

/// Cosine k-NN. Neighbors are ranked by score, then by lower train index; the
/// vote goes to the most frequent label, ties to the label whose best-ranked
/// neighbor is nearer. Accuracy is 0 when `test_labels` is empty.
KnnResult knn_classify(const MatrixXr& train_emb, std::span<const int> train_labels, const MatrixXr& test_emb,
                       std::span<const int> test_labels, int k_neighbors = 1);

struct ClusterAssignment {
  MatrixXr centroids;               // k x dim
  std::vector<int> assignment;      // per sample, in [0, k)
  double inertia = 0.0;             // sum of squared distances to assigned centroid
  std::vector<double> inertia_trace;  // inertia after every assignment step
  int iterations = 0;
};

inline constexpr int kDefaultKmeansIters = 300;

/// Greedy k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` is reached. A cluster that goes empty is re-seeded
/// with the point farthest from its own centroid.
ClusterAssignment kmeans(const MatrixXr& points, int k, int max_iters, std::uint64_t seed);

/// entry (r, c) = |cluster r with label c| / |cluster r|; empty clusters give zero rows.
MatrixXr alignment_matrix(std::span<const int> assignment, std::span<const int> labels, int k, int num_classes);

struct Matching {
  std::vector<int> row_to_col;  // -1 when a row is left unmatched
  double total = 0.0;
};

/// Maximum-weight injective row -> column assignment (Kuhn-Munkres on a
/// zero-padded square matrix).
Matching hungarian_max(const MatrixXr& weights);

/// Clusters train embeddings, labels clusters by the best alignment matching,
/// then classifies val points by nearest centroid (cosine).
double cluster_alignment_accuracy(const MatrixXr& train_emb, std::span<const int> train_labels, const MatrixXr& val_emb,
                                  std::span<const int> val_labels, int k, std::uint64_t seed);

/// Per-dimension shift and scale fitted on one set and applied to others.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const MatrixXr& features, double std_floor = 1e-8);
  MatrixXr apply(const MatrixXr& features) const;
};

struct ProbeConfig {
  double lr = 0.01;
  int epochs = 40;
  std::vector<int> milestones{15, 30};
  double lr_factor = 0.1;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  int batch_size = 256;
  std::uint64_t seed = 0;
};

/// L2-normalizes, standardizes with train statistics, then trains a softmax
/// linear classifier with SGD. Returns top-1 accuracy on the val set.
double linear_probe(const MatrixXr& train_emb, std::span<const int> train_labels, const MatrixXr& val_emb,
                    std::span<const int> val_labels, const ProbeConfig& config = {});

}  // namespace compress
