#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "compress/embedding.hpp"

namespace compress {

/// Parameters of the synthetic stand-in for an unlabeled image set plus a
/// frozen teacher. Class prototypes live in a latent space; the student only
/// sees tanh(A * latent), the teacher embeds B * latent directly.
struct SyntheticSpec {
  int num_classes = 10;
  int train_count = 5000;
  int val_count = 1000;
  int latent_dim = 16;
  int raw_dim = 32;
  int teacher_dim = 32;
  double class_spread = 1.0;
  double sample_noise = 0.15;
  double teacher_noise = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  MatrixXr raw;                          // samples x raw_dim
  std::vector<int> labels;               // in [0, num_classes)
  EmbeddingBatch<double> teacher_cache;  // normalized, samples x teacher_dim

  Index size() const noexcept { return raw.rows(); }
};

struct SplitDataset {
  Dataset train;
  Dataset val;
};

SplitDataset generate(const SyntheticSpec& spec);

/// Adds i.i.d. Normal(0, sigma^2) noise to every entry.
MatrixXr augment(const MatrixXr& raw_batch, double sigma, std::mt19937_64& rng);

/// Per-column noise level, sigma[c] for column c.
MatrixXr augment(const MatrixXr& raw_batch, const VectorXr& sigma, std::mt19937_64& rng);

/// Population standard deviation of each column.
VectorXr column_std(const MatrixXr& data);

/// EMB1: "EMB1", u32 count, u32 dim, u8 normalized, count*dim little-endian
/// binary32 values, row-major.
void write_embeddings(const std::filesystem::path& path, const EmbeddingBatch<double>& batch);
EmbeddingBatch<double> read_embeddings(const std::filesystem::path& path);

/// LBL1: "LBL1", u32 count, count little-endian u32 labels.
void write_labels(const std::filesystem::path& path, std::span<const int> labels);
std::vector<int> read_labels(const std::filesystem::path& path);

/// Reads <dir>/<split>_raw.emb, <split>_labels.lbl and <split>_teacher.emb.
Dataset load_split(const std::filesystem::path& dir, const std::string& split);
void save_split(const std::filesystem::path& dir, const std::string& split, const Dataset& data);

}  // namespace compress
