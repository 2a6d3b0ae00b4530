#include "compress/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "compress/binary_io.hpp"

namespace compress {
namespace {

MatrixXr gaussian_matrix(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  MatrixXr m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * dist(rng);
  return m;
}

Dataset take_rows(const MatrixXr& raw, const std::vector<int>& labels, const MatrixXr& teacher, Index begin,
                  Index count) {
  Dataset d;
  d.raw = raw.middleRows(begin, count);
  d.labels.assign(labels.begin() + begin, labels.begin() + begin + count);
  d.teacher_cache = EmbeddingBatch<double>(teacher.middleRows(begin, count), true);
  return d;
}

}  // namespace

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(Errc::InvalidSpec, msg); };
  if (num_classes < 1) fail("num_classes must be positive");
  if (train_count < num_classes || val_count < num_classes) fail("each split needs at least one sample per class");
  if (latent_dim < 1 || raw_dim < 1 || teacher_dim < 1) fail("dimensions must be positive");
  for (double s : {class_spread, sample_noise, teacher_noise})
    if (!std::isfinite(s) || s < 0.0) fail("spreads must be finite and nonnegative");
}

SplitDataset generate(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const Index total = static_cast<Index>(spec.train_count) + spec.val_count;

  const MatrixXr prototypes = gaussian_matrix(spec.num_classes, spec.latent_dim, spec.class_spread, rng);
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
  const MatrixXr raw_map = gaussian_matrix(spec.raw_dim, spec.latent_dim, scale, rng);
  const MatrixXr teacher_map = gaussian_matrix(spec.teacher_dim, spec.latent_dim, scale, rng);

  // Balanced labels in a seeded random order; the split is a prefix cut.
  std::vector<int> labels(static_cast<std::size_t>(total));
  for (Index i = 0; i < total; ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(i % spec.num_classes);
  std::shuffle(labels.begin(), labels.end(), rng);

  MatrixXr latent(total, spec.latent_dim);
  for (Index i = 0; i < total; ++i) latent.row(i) = prototypes.row(labels[static_cast<std::size_t>(i)]);
  latent += gaussian_matrix(total, spec.latent_dim, spec.sample_noise, rng);

  const MatrixXr raw = (latent * raw_map.transpose()).array().tanh().matrix();
  MatrixXr teacher = latent * teacher_map.transpose();
  teacher += gaussian_matrix(total, spec.teacher_dim, spec.teacher_noise, rng);
  teacher = l2_normalize_rows(teacher);

  SplitDataset out;
  out.train = take_rows(raw, labels, teacher, 0, spec.train_count);
  out.val = take_rows(raw, labels, teacher, spec.train_count, spec.val_count);
  return out;
}

MatrixXr augment(const MatrixXr& raw_batch, double sigma, std::mt19937_64& rng) {
  if (!(sigma >= 0.0)) throw Error(Errc::InvalidConfig, "augmentation sigma must be nonnegative");
  if (sigma == 0.0) return raw_batch;
  return raw_batch + gaussian_matrix(raw_batch.rows(), raw_batch.cols(), sigma, rng);
}

MatrixXr augment(const MatrixXr& raw_batch, const VectorXr& sigma, std::mt19937_64& rng) {
  if (sigma.size() != raw_batch.cols()) throw Error(Errc::DimensionMismatch, "one sigma per column required");
  if ((sigma.array() < 0.0).any()) throw Error(Errc::InvalidConfig, "augmentation sigma must be nonnegative");
  MatrixXr noise = gaussian_matrix(raw_batch.rows(), raw_batch.cols(), 1.0, rng);
  noise.array().rowwise() *= sigma.transpose().array();
  return raw_batch + noise;
}

VectorXr column_std(const MatrixXr& data) {
  if (data.rows() == 0) return VectorXr::Zero(data.cols());
  const Eigen::RowVectorXd mean = data.colwise().mean();
  const Eigen::RowVectorXd var = (data.rowwise() - mean).array().square().colwise().mean();
  return var.transpose().cwiseSqrt();
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingBatch<double>& batch) {
  binary::Writer w;
  w.bytes("EMB1");
  w.u32(static_cast<std::uint32_t>(batch.size()));
  w.u32(static_cast<std::uint32_t>(batch.dim()));
  w.u8(batch.normalized() ? 1 : 0);
  const auto& m = batch.data();
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) w.f32(static_cast<float>(m(i, j)));
  w.save(path);
}

EmbeddingBatch<double> read_embeddings(const std::filesystem::path& path) {
  binary::Reader r(path);
  r.expect_magic("EMB1");
  const std::uint64_t count = r.u32();
  const std::uint64_t dim = r.u32();
  const auto flag = r.u8();
  if (flag > 1) throw Error(Errc::SizeMismatch, "normalized flag must be 0 or 1");
  r.require(static_cast<std::size_t>(count * dim * 4));
  MatrixXr m(static_cast<Index>(count), static_cast<Index>(dim));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = r.f32();
  r.expect_end();
  return EmbeddingBatch<double>(std::move(m), flag == 1);
}

void write_labels(const std::filesystem::path& path, std::span<const int> labels) {
  binary::Writer w;
  w.bytes("LBL1");
  w.u32(static_cast<std::uint32_t>(labels.size()));
  for (int v : labels) {
    if (v < 0) throw Error(Errc::InvalidConfig, "labels must be nonnegative");
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.save(path);
}

std::vector<int> read_labels(const std::filesystem::path& path) {
  binary::Reader r(path);
  r.expect_magic("LBL1");
  const std::uint64_t count = r.u32();
  r.require(static_cast<std::size_t>(count * 4));
  std::vector<int> labels(static_cast<std::size_t>(count));
  for (auto& v : labels) {
    const auto u = r.u32();
    if (u > static_cast<std::uint32_t>(std::numeric_limits<int>::max()))
      throw Error(Errc::SizeMismatch, "label value out of range");
    v = static_cast<int>(u);
  }
  r.expect_end();
  return labels;
}

Dataset load_split(const std::filesystem::path& dir, const std::string& split) {
  Dataset d;
  d.raw = read_embeddings(dir / (split + "_raw.emb")).data();
  d.labels = read_labels(dir / (split + "_labels.lbl"));
  d.teacher_cache = read_embeddings(dir / (split + "_teacher.emb"));
  if (!d.teacher_cache.normalized())
    throw Error(Errc::UnnormalizedBatch, split + " teacher cache is not flagged as normalized");
  if (static_cast<Index>(d.labels.size()) != d.raw.rows() || d.teacher_cache.size() != d.raw.rows())
    throw Error(Errc::SizeMismatch, split + " files disagree on sample count");
  return d;
}

void save_split(const std::filesystem::path& dir, const std::string& split, const Dataset& data) {
  write_embeddings(dir / (split + "_raw.emb"), EmbeddingBatch<double>(data.raw, false));
  write_labels(dir / (split + "_labels.lbl"), data.labels);
  write_embeddings(dir / (split + "_teacher.emb"), data.teacher_cache);
}

}  // namespace compress
