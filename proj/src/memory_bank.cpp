#include "compress/memory_bank.hpp"

#include <string>

namespace compress {

AnchorQueue::AnchorQueue(Index capacity, Index dim) {
  if (capacity < 1) throw Error(Errc::InvalidCapacity, "capacity must be >= 1, got " + std::to_string(capacity));
  if (dim < 1) throw Error(Errc::InvalidCapacity, "dim must be >= 1, got " + std::to_string(dim));
  storage_.setZero(capacity, dim);
}

void AnchorQueue::enqueue(const EmbeddingBatch<double>& batch) {
  if (batch.size() > 0 && batch.dim() != dim())
    throw Error(Errc::DimensionMismatch,
                "batch dim " + std::to_string(batch.dim()) + " vs queue dim " + std::to_string(dim()));
  if (batch.size() > 0 && !batch.normalized()) throw Error(Errc::UnnormalizedBatch, "anchors must be unit norm");

  const Index cap = capacity();
  const Index n = batch.size();
  // Rows that would be evicted within this same call are never stored.
  const Index skip = n > cap ? n - cap : 0;
  for (Index r = skip; r < n; ++r) {
    const Index tail = (head_ + size_) % cap;
    storage_.row(tail) = batch.row(r);
    if (size_ < cap) {
      ++size_;
    } else {
      head_ = (head_ + 1) % cap;
    }
  }
  total_ += static_cast<std::uint64_t>(n);
}

MatrixXr AnchorQueue::as_matrix() const {
  if (size_ == 0) throw Error(Errc::EmptyQueue, "anchor queue is empty");
  MatrixXr out(size_, dim());
  const Index first = std::min(size_, capacity() - head_);
  out.topRows(first) = storage_.middleRows(head_, first);
  if (first < size_) out.bottomRows(size_ - first) = storage_.topRows(size_ - first);
  return out;
}

MomentumConfig::MomentumConfig(double value) : m(value) {
  if (!(value >= 0.0 && value <= 1.0))
    throw Error(Errc::InvalidConfig, "momentum must lie in [0, 1], got " + std::to_string(value));
}

void ema_update_inplace(VectorXr& key_params, const VectorXr& student_params, double m) {
  if (key_params.size() != student_params.size())
    throw Error(Errc::LengthMismatch, "key has " + std::to_string(key_params.size()) + " params, student has " +
                                          std::to_string(student_params.size()));
  if (!(m >= 0.0 && m <= 1.0)) throw Error(Errc::InvalidConfig, "momentum must lie in [0, 1]");
  key_params = m * key_params + (1.0 - m) * student_params;
}

VectorXr ema_update(const VectorXr& key_params, const VectorXr& student_params, double m) {
  VectorXr out = key_params;
  ema_update_inplace(out, student_params, m);
  return out;
}

}  // namespace compress
