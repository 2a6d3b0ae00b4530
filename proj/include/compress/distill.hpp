#pragma once

// Similarity-distribution distillation of a frozen teacher into a student.
//
// For every query in a minibatch we take the teacher's cosine similarities to
// a queue of anchor embeddings, turn them into a SoftMax at temperature tau,
// and ask the student to reproduce that distribution over its own anchors
// (KL(teacher || student), averaged over the batch). Two anchor layouts:
//
//   Ours1q  the student is scored against the teacher's anchors, so the
//           student's output dimension must equal the teacher's.
//   Ours2q  the student keeps its own queue, filled by an EMA copy of the
//           student (the key encoder).
//
// The regression (Reg, Reg-BN) and cluster-classification (CC) baselines live
// here too so every method shares the data path and optimizer.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "compress/data_io.hpp"
#include "compress/embedding.hpp"
#include "compress/memory_bank.hpp"
#include "compress/student.hpp"

namespace compress {

enum class Method { Ours1q, Ours2q, Reg, RegBn, Cc };

std::string_view method_name(Method method) noexcept;
/// Accepts "ours-1q", "ours-2q", "reg", "reg-bn", "cc" (underscores or no separator also work).
std::optional<Method> parse_method(std::string_view text);
bool is_similarity_method(Method method) noexcept;

/// Learning rate each method uses unless told otherwise.
double default_lr(Method method) noexcept;

struct DistillConfig {
  Method method = Method::Ours2q;
  double tau = kDefaultTemperature;
  Index bank_capacity = kDefaultBankCapacity;
  double momentum_m = kDefaultKeyMomentum;
  int epochs = 30;
  int batch_size = 256;
  std::uint64_t seed = 0;
  int cc_k = 0;  // 0: four clusters per class

  double lr = 0.01;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<int> milestones{21, 28};
  double lr_factor = 0.2;
  double aug_fraction = 0.1;  // noise std as a fraction of each raw column's std

  /// Throws InvalidConfig, BankSmallerThanBatch or DimensionMismatch.
  void validate(Index student_dim, Index teacher_dim) const;
};

struct TrainRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> nn_acc;
  bool degenerate = false;  // CC with a single pseudo-label
};

/// Inputs for the optional per-epoch nearest-neighbor probe.
struct NnProbe {
  const MatrixXr* train_raw = nullptr;
  std::span<const int> train_labels;
  const MatrixXr* val_raw = nullptr;
  std::span<const int> val_labels;
  int k_neighbors = 1;
};

struct TrainOutput {
  StudentNetwork net;
  std::vector<TrainRecord> records;
};

struct QueryDistributions {
  SimilarityDistribution<double> teacher;
  SimilarityDistribution<double> student;
};

QueryDistributions query_distributions(const VectorXr& teacher_q, const VectorXr& student_q,
                                       const MatrixXr& teacher_anchors, const MatrixXr& student_anchors, double tau);

/// Mean over queries of KL(p_t[i] || p_s[i]).
double batch_loss(std::span<const SimilarityDistribution<double>> p_t,
                  std::span<const SimilarityDistribution<double>> p_s);

/// Gradient of KL(p_t || p_s) with respect to the student's query embedding
/// before normalization. Anchors are treated as constants.
VectorXr query_gradient(const SimilarityDistribution<double>& p_t, const SimilarityDistribution<double>& p_s,
                        const MatrixXr& student_anchors, double tau, const VectorXr& student_q_unnormalized);

/// Training state for the similarity-distribution methods.
class Distiller {
 public:
  Distiller(StudentNetwork student, Index teacher_dim, const DistillConfig& config);

  const StudentNetwork& student() const noexcept { return student_; }
  const StudentNetwork& key_encoder() const noexcept { return key_; }
  AnchorQueue& teacher_queue() noexcept { return teacher_queue_; }
  AnchorQueue& student_queue() noexcept { return student_queue_; }
  const DistillConfig& config() const noexcept { return config_; }

  /// Queues hold at least one full batch.
  bool ready() const noexcept;

  void set_lr(double lr) noexcept { sgd_.lr = lr; }

  struct Evaluation {
    double loss = 0.0;
    VectorXr grad;
  };

  /// Batch loss and parameter gradient against the current anchor snapshots.
  Evaluation evaluate(const MatrixXr& student_input, const MatrixXr& teacher_emb) const;

  /// One optimization step followed by the queue and key-encoder updates.
  /// During warm-up only the queues are filled and nullopt is returned.
  std::optional<double> step(const MatrixXr& student_input, const EmbeddingBatch<double>& teacher_batch);

 private:
  DistillConfig config_;
  StudentNetwork student_;
  StudentNetwork key_;
  AnchorQueue teacher_queue_;
  AnchorQueue student_queue_;
  SgdState sgd_;
  VectorXr params_;
  VectorXr key_params_;
};

struct RegressionLoss {
  double loss = 0.0;
  MatrixXr grad;  // with respect to student_emb
};

/// Mean squared error between projected student and teacher embeddings. With
/// `use_bn` both sides are first whitened per dimension with the current
/// batch's mean and (biased) variance, eps = 1e-5.
RegressionLoss reg_loss_and_grad(const MatrixXr& student_emb, const MatrixXr& teacher_emb, bool use_bn);

/// k-means pseudo-labels on the (normalized) teacher cache.
std::vector<int> cc_prepare(const EmbeddingBatch<double>& teacher_cache, int k, std::uint64_t seed);

/// Trains student + linear head to classify pseudo-labels; the head is dropped.
TrainOutput cc_train(const MatrixXr& raw, std::span<const int> pseudo_labels, StudentNetwork net,
                     const DistillConfig& config, const NnProbe* probe = nullptr);

/// Teacher embeddings for the given sample indices. `student_view` is the
/// augmented input the student sees, for teachers that embed on the fly.
using TeacherFn = std::function<EmbeddingBatch<double>(std::span<const Index> indices, const MatrixXr& student_view)>;

TeacherFn cached_teacher(const EmbeddingBatch<double>& cache);

/// Runs the configured method. `num_classes` only sizes the default CC k.
TrainOutput distill(const Dataset& data, StudentNetwork net, const DistillConfig& config,
                    const NnProbe* probe = nullptr, int num_classes = 0);

/// Same, with an arbitrary teacher. CC needs a full table and is rejected here.
TrainOutput distill(const MatrixXr& raw, Index teacher_dim, const TeacherFn& teacher, StudentNetwork net,
                    const DistillConfig& config, const NnProbe* probe = nullptr);

/// Normalized student embeddings of `raw`.
MatrixXr student_embeddings(const StudentNetwork& net, const MatrixXr& raw);

/// Writes "epoch,mean_loss,nn_acc" plus one row per record.
std::string metrics_csv(std::span<const TrainRecord> records);

}  // namespace compress
