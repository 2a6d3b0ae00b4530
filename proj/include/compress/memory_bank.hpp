#pragma once

#include <cstdint>

#include "compress/embedding.hpp"

namespace compress {

inline constexpr Index kImageNetBankCapacity = 128000;
inline constexpr Index kDefaultBankCapacity = 2048;
inline constexpr double kDefaultKeyMomentum = 0.999;

/// Fixed-capacity FIFO of unit-norm anchor embeddings, backed by a ring buffer.
/// Once full, each enqueued row evicts the oldest one.
class AnchorQueue {
 public:
  AnchorQueue(Index capacity, Index dim);

  Index capacity() const noexcept { return storage_.rows(); }
  Index dim() const noexcept { return storage_.cols(); }
  Index size() const noexcept { return size_; }
  bool empty() const noexcept { return size_ == 0; }
  std::uint64_t total_enqueued() const noexcept { return total_; }

  /// Appends the rows of a normalized batch in order.
  void enqueue(const EmbeddingBatch<double>& batch);

  /// Copy of the current entries, oldest first.
  MatrixXr as_matrix() const;

  /// Row `i` counted from the oldest entry.
  auto entry(Index i) const { return storage_.row((head_ + i) % capacity()); }

 private:
  MatrixXr storage_;
  Index head_ = 0;  // position of the oldest entry
  Index size_ = 0;
  std::uint64_t total_ = 0;
};

struct MomentumConfig {
  double m = kDefaultKeyMomentum;

  explicit MomentumConfig(double value = kDefaultKeyMomentum);
};

/// key <- m * key + (1 - m) * student, elementwise.
VectorXr ema_update(const VectorXr& key_params, const VectorXr& student_params, double m);
void ema_update_inplace(VectorXr& key_params, const VectorXr& student_params, double m);

}  // namespace compress
