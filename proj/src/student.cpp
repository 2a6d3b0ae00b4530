#include "compress/student.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <string>

#include "compress/binary_io.hpp"

namespace compress {
namespace {

std::uint64_t next_version() noexcept {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

void apply_activation(MatrixXr& m, Activation act) {
  if (act == Activation::Relu) m = m.cwiseMax(0.0);
}

}  // namespace

StudentNetwork::StudentNetwork(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw Error(Errc::InvalidConfig, "network needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.weight.rows() < 1 || layer.weight.cols() < 1)
      throw Error(Errc::InvalidConfig, "layer " + std::to_string(l) + " has an empty weight");
    if (layer.bias.size() != layer.out_dim())
      throw Error(Errc::DimensionMismatch, "layer " + std::to_string(l) + " bias size does not match weight rows");
    if (l > 0 && layer.in_dim() != layers_[l - 1].out_dim())
      throw Error(Errc::DimensionMismatch, "layer " + std::to_string(l) + " input does not chain");
  }
  if (layers_.back().activation != Activation::Identity)
    throw Error(Errc::InvalidConfig, "final layer must be linear");
  touch();
}

StudentNetwork StudentNetwork::create(std::span<const Index> dims, std::uint64_t seed) {
  if (dims.size() < 2) throw Error(Errc::InvalidConfig, "need at least input and output sizes");
  std::mt19937_64 rng(seed);
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const Index in = dims[l];
    const Index out = dims[l + 1];
    if (in < 1 || out < 1) throw Error(Errc::InvalidConfig, "layer sizes must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer;
    layer.weight.resize(out, in);
    for (Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = dist(rng);
    layer.bias.resize(out);
    for (Index i = 0; i < out; ++i) layer.bias[i] = dist(rng);
    layer.activation = (l + 2 < dims.size()) ? Activation::Relu : Activation::Identity;
    layers.push_back(std::move(layer));
  }
  return StudentNetwork(std::move(layers));
}

Index StudentNetwork::input_dim() const {
  if (layers_.empty()) throw Error(Errc::InvalidConfig, "empty network");
  return layers_.front().in_dim();
}

Index StudentNetwork::output_dim() const {
  if (layers_.empty()) throw Error(Errc::InvalidConfig, "empty network");
  return layers_.back().out_dim();
}

Index StudentNetwork::parameter_count() const noexcept {
  Index n = 0;
  for (const auto& layer : layers_) n += layer.parameter_count();
  return n;
}

VectorXr StudentNetwork::parameters() const {
  VectorXr out(parameter_count());
  Index offset = 0;
  for (const auto& layer : layers_) {
    out.segment(offset, layer.weight.size()) = layer.weight.reshaped<Eigen::RowMajor>();
    offset += layer.weight.size();
    out.segment(offset, layer.bias.size()) = layer.bias;
    offset += layer.bias.size();
  }
  return out;
}

void StudentNetwork::set_parameters(const VectorXr& params) {
  if (params.size() != parameter_count())
    throw Error(Errc::LengthMismatch, "expected " + std::to_string(parameter_count()) + " parameters, got " +
                                          std::to_string(params.size()));
  Index offset = 0;
  for (auto& layer : layers_) {
    layer.weight.reshaped<Eigen::RowMajor>() = params.segment(offset, layer.weight.size());
    offset += layer.weight.size();
    layer.bias = params.segment(offset, layer.bias.size());
    offset += layer.bias.size();
  }
  touch();
}

void StudentNetwork::touch() noexcept { version_ = next_version(); }

ForwardResult forward(const StudentNetwork& net, const MatrixXr& batch) {
  if (batch.cols() != net.input_dim())
    throw Error(Errc::DimensionMismatch, "input has " + std::to_string(batch.cols()) + " columns, network expects " +
                                             std::to_string(net.input_dim()));
  ForwardResult result;
  auto& cache = result.cache;
  cache.version = net.version();
  cache.inputs.reserve(net.layers().size());
  cache.pre.reserve(net.layers().size());
  MatrixXr x = batch;
  for (const auto& layer : net.layers()) {
    MatrixXr pre = x * layer.weight.transpose();
    pre.rowwise() += layer.bias.transpose();
    cache.inputs.push_back(std::move(x));
    x = pre;
    apply_activation(x, layer.activation);
    cache.pre.push_back(std::move(pre));
  }
  result.output = std::move(x);
  return result;
}

MatrixXr embed(const StudentNetwork& net, const MatrixXr& batch) {
  if (batch.cols() != net.input_dim())
    throw Error(Errc::DimensionMismatch, "input has " + std::to_string(batch.cols()) + " columns, network expects " +
                                             std::to_string(net.input_dim()));
  MatrixXr x = batch;
  for (const auto& layer : net.layers()) {
    MatrixXr pre = x * layer.weight.transpose();
    pre.rowwise() += layer.bias.transpose();
    apply_activation(pre, layer.activation);
    x = std::move(pre);
  }
  return x;
}

VectorXr backward(const StudentNetwork& net, const ForwardCache& cache, const MatrixXr& grad_out) {
  return backward(net, cache, grad_out, nullptr);
}

VectorXr backward(const StudentNetwork& net, const ForwardCache& cache, const MatrixXr& grad_out,
                  MatrixXr* grad_input) {
  const auto& layers = net.layers();
  if (cache.version != net.version() || cache.inputs.size() != layers.size())
    throw Error(Errc::StaleCache, "forward cache does not belong to the current parameters");
  if (grad_out.rows() != cache.pre.back().rows() || grad_out.cols() != net.output_dim())
    throw Error(Errc::DimensionMismatch, "gradient shape does not match network output");

  VectorXr grads(net.parameter_count());
  Index offset = grads.size();
  MatrixXr delta = grad_out;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& layer = layers[l];
    if (layer.activation == Activation::Relu) delta.array() *= (cache.pre[l].array() > 0.0).cast<double>();
    offset -= layer.parameter_count();
    const MatrixXr dW = delta.transpose() * cache.inputs[l];
    grads.segment(offset, layer.weight.size()) = dW.reshaped<Eigen::RowMajor>();
    grads.segment(offset + layer.weight.size(), layer.bias.size()) = delta.colwise().sum().transpose();
    if (l > 0 || grad_input != nullptr) delta = delta * layer.weight;
  }
  if (grad_input != nullptr) *grad_input = std::move(delta);
  return grads;
}

SgdState::SgdState(double lr_, double momentum_, double weight_decay_, Index parameter_count)
    : lr(lr_), momentum(momentum_), weight_decay(weight_decay_), velocity(VectorXr::Zero(parameter_count)) {
  if (!(lr >= 0.0)) throw Error(Errc::InvalidConfig, "learning rate must be nonnegative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(Errc::InvalidConfig, "momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw Error(Errc::InvalidConfig, "weight decay must be nonnegative");
}

void sgd_step(SgdState& state, VectorXr& params, const VectorXr& grads) {
  if (params.size() != grads.size())
    throw Error(Errc::LengthMismatch, "params and grads differ in length");
  if (state.velocity.size() == 0) state.velocity = VectorXr::Zero(params.size());
  if (state.velocity.size() != params.size()) throw Error(Errc::LengthMismatch, "velocity length differs from params");
  state.velocity = state.momentum * state.velocity + (grads + state.weight_decay * params);
  params -= state.lr * state.velocity;
}

LrSchedule::LrSchedule(double base, std::vector<int> steps, double f)
    : base_lr(base), milestones(std::move(steps)), factor(f) {
  if (!(base_lr >= 0.0)) throw Error(Errc::InvalidConfig, "base learning rate must be nonnegative");
  if (!(factor > 0.0)) throw Error(Errc::InvalidConfig, "schedule factor must be positive");
  for (std::size_t i = 1; i < milestones.size(); ++i)
    if (milestones[i] <= milestones[i - 1]) throw Error(Errc::InvalidConfig, "milestones must strictly increase");
}

double LrSchedule::at(int epoch) const {
  const auto passed = std::count_if(milestones.begin(), milestones.end(), [epoch](int m) { return m <= epoch; });
  return base_lr * std::pow(factor, static_cast<double>(passed));
}

double softmax_cross_entropy(const MatrixXr& logits, std::span<const int> labels, MatrixXr* grad_logits) {
  if (static_cast<Index>(labels.size()) != logits.rows())
    throw Error(Errc::LengthMismatch, "labels and logits differ in length");
  const Index n = logits.rows();
  if (n == 0) return 0.0;
  MatrixXr probs = logits;
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols()) throw Error(Errc::InvalidConfig, "label out of range");
    auto row = probs.row(i);
    const double top = row.maxCoeff();
    row = (row.array() - top).exp().matrix();
    const double z = row.sum();
    loss += std::log(z) - (logits(i, y) - top);
    row /= z;
  }
  if (grad_logits != nullptr) {
    for (Index i = 0; i < n; ++i) probs(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
    *grad_logits = probs / static_cast<double>(n);
  }
  return loss / static_cast<double>(n);
}

constexpr std::uint8_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const StudentNetwork& net) {
  binary::Writer w;
  w.bytes("CKPT");
  w.u8(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& layer : net.layers()) {
    w.u32(static_cast<std::uint32_t>(layer.in_dim()));
    w.u32(static_cast<std::uint32_t>(layer.out_dim()));
    w.u8(static_cast<std::uint8_t>(layer.activation));
  }
  const VectorXr params = net.parameters();
  for (Index i = 0; i < params.size(); ++i) w.f32(static_cast<float>(params[i]));
  w.save(path);
}

StudentNetwork read_checkpoint(const std::filesystem::path& path) {
  binary::Reader r(path);
  r.expect_magic("CKPT");
  const auto version = r.u8();
  if (version != kCheckpointVersion)
    throw Error(Errc::BadMagic, "unsupported checkpoint version " + std::to_string(version));
  const auto count = r.u32();
  struct Shape {
    std::uint32_t in, out;
    std::uint8_t act;
  };
  std::vector<Shape> shapes;
  std::uint64_t total = 0;
  for (std::uint32_t l = 0; l < count; ++l) {
    r.require(9);
    Shape s{r.u32(), r.u32(), r.u8()};
    if (s.act > 1) throw Error(Errc::SizeMismatch, "unknown activation tag " + std::to_string(s.act));
    total += static_cast<std::uint64_t>(s.in) * s.out + s.out;
    shapes.push_back(s);
  }
  r.require(static_cast<std::size_t>(total * 4));
  std::vector<DenseLayer> layers;
  for (const auto& s : shapes) {
    DenseLayer layer;
    layer.weight.setZero(s.out, s.in);
    layer.bias.setZero(s.out);
    layer.activation = static_cast<Activation>(s.act);
    layers.push_back(std::move(layer));
  }
  VectorXr params(static_cast<Index>(total));
  for (Index i = 0; i < params.size(); ++i) params[i] = r.f32();
  r.expect_end();
  StudentNetwork net(std::move(layers));
  net.set_parameters(params);
  return net;
}

}  // namespace compress
