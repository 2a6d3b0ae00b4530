#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "compress/embedding.hpp"

namespace compress {

enum class Activation : std::uint8_t { Identity = 0, Relu = 1 };

struct DenseLayer {
  MatrixXr weight;  // out x in
  VectorXr bias;    // out
  Activation activation = Activation::Identity;

  Index in_dim() const noexcept { return weight.cols(); }
  Index out_dim() const noexcept { return weight.rows(); }
  Index parameter_count() const noexcept { return weight.size() + bias.size(); }
};

/// Feedforward encoder. Parameters flatten layer by layer, each layer as its
/// row-major weight followed by its bias. The final layer is always linear.
class StudentNetwork {
 public:
  StudentNetwork() = default;
  explicit StudentNetwork(std::vector<DenseLayer> layers);

  /// Layer sizes `dims` = {input, hidden..., output}; ReLU on every hidden
  /// layer. Weights and biases are uniform in +-1/sqrt(fan_in).
  static StudentNetwork create(std::span<const Index> dims, std::uint64_t seed);

  Index input_dim() const;
  Index output_dim() const;
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  Index parameter_count() const noexcept;

  VectorXr parameters() const;
  void set_parameters(const VectorXr& params);

  /// Changes every time the parameters change; forward caches remember it.
  std::uint64_t version() const noexcept { return version_; }

 private:
  void touch() noexcept;

  std::vector<DenseLayer> layers_;
  std::uint64_t version_ = 0;
};

/// Everything backward needs from a forward pass.
struct ForwardCache {
  std::vector<MatrixXr> inputs;  // input to each layer
  std::vector<MatrixXr> pre;     // pre-activation output of each layer
  std::uint64_t version = 0;
};

struct ForwardResult {
  MatrixXr output;  // unnormalized embeddings, one row per sample
  ForwardCache cache;
};

ForwardResult forward(const StudentNetwork& net, const MatrixXr& batch);

/// Output only, without keeping the activation cache.
MatrixXr embed(const StudentNetwork& net, const MatrixXr& batch);

/// Gradient of sum_{i,k} grad_out(i,k) * output(i,k) with respect to the
/// flattened parameters.
VectorXr backward(const StudentNetwork& net, const ForwardCache& cache, const MatrixXr& grad_out);

/// Like backward, but also returns the gradient with respect to the network input.
VectorXr backward(const StudentNetwork& net, const ForwardCache& cache, const MatrixXr& grad_out,
                  MatrixXr* grad_input);

struct SgdState {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  VectorXr velocity;

  SgdState() = default;
  SgdState(double lr, double momentum, double weight_decay, Index parameter_count);
};

/// g = grads + wd * params; v = momentum * v + g; params -= lr * v.
void sgd_step(SgdState& state, VectorXr& params, const VectorXr& grads);

struct LrSchedule {
  double base_lr = 0.01;
  std::vector<int> milestones;
  double factor = 0.2;

  LrSchedule() = default;
  LrSchedule(double base_lr, std::vector<int> milestones, double factor);

  /// base_lr * factor^(number of milestones <= epoch).
  double at(int epoch) const;
};

inline double lr_at_epoch(const LrSchedule& schedule, int epoch) { return schedule.at(epoch); }

/// Mean softmax cross-entropy of `logits` rows against integer labels, and its
/// gradient with respect to the logits.
double softmax_cross_entropy(const MatrixXr& logits, std::span<const int> labels, MatrixXr* grad_logits);

/// Checkpoint format: "CKPT", u8 version, u32 layer count, then per layer u32
/// in_dim, u32 out_dim, u8 activation; then all parameters as little-endian
/// binary32 in flattening order.
void write_checkpoint(const std::filesystem::path& path, const StudentNetwork& net);
StudentNetwork read_checkpoint(const std::filesystem::path& path);

}  // namespace compress
