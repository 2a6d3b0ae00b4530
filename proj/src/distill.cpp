#include "compress/distill.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "compress/evaluation.hpp"

namespace compress {
namespace {

constexpr double kBnEpsilon = 1e-5;
constexpr double kConsistencyTolerance = 1e-6;

std::string lowercase_compact(std::string_view text) {
  std::string out;
  for (char c : text) {
    if (c == '-' || c == '_') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

/// Gradient of the mean KL for every query of a batch with respect to the
/// unnormalized student embeddings. `probs_s` and `probs_t` are B x n.
MatrixXr distribution_gradient(const MatrixXr& probs_t, const MatrixXr& probs_s, const MatrixXr& student_anchors,
                               double tau, const MatrixXr& student_unit, const VectorXr& student_norms,
                               double scale) {
  // d loss / d scores = (p_s - p_t) / tau, scores = s_hat . anchors.
  const MatrixXr grad_unit = ((probs_s - probs_t) * (scale / tau)) * student_anchors;
  // Through s_hat = s / |s|: (I - s_hat s_hat^T) g / |s|.
  const VectorXr radial = (grad_unit.array() * student_unit.array()).rowwise().sum();
  MatrixXr grad = grad_unit - (student_unit.array().colwise() * radial.array()).matrix();
  grad.array().colwise() /= student_norms.array();
  return grad;
}

VectorXr row_norms(const MatrixXr& m) { return m.rowwise().norm(); }

MatrixXr normalize_with_norms(const MatrixXr& m, const VectorXr& norms) {
  for (Index i = 0; i < norms.size(); ++i)
    if (!(norms[i] >= kZeroNormThreshold)) throw Error(Errc::ZeroNormRow, "student embedding collapsed to zero");
  return (m.array().colwise() / norms.array()).matrix();
}

/// Replaces each row of logits z with softmax(z) and returns log sum exp(z) per row.
VectorXr softmax_rows_with_partition(MatrixXr& z) {
  VectorXr log_partition(z.rows());
  for (Index i = 0; i < z.rows(); ++i) {
    auto row = z.row(i);
    const double top = row.maxCoeff();
    row = (row.array() - top).exp().matrix();
    const double sum = row.sum();
    row /= sum;
    log_partition[i] = top + std::log(sum);
  }
  return log_partition;
}

/// Mean KL(p_t || p_s) from the logits: log p = z - log Z, so per row
/// KL = <p_t, z_t - z_s> - log Z_t + log Z_s.
double mean_row_kl(const MatrixXr& logits_t, const MatrixXr& probs_t, const VectorXr& log_z_t,
                   const MatrixXr& logits_s, const VectorXr& log_z_s) {
  const VectorXr cross = (probs_t.array() * (logits_t - logits_s).array()).rowwise().sum();
  return (cross - log_z_t + log_z_s).mean();
}

std::optional<double> probe_nn(const StudentNetwork& net, const NnProbe* probe) {
  if (probe == nullptr || probe->train_raw == nullptr || probe->val_raw == nullptr) return std::nullopt;
  const MatrixXr train = student_embeddings(net, *probe->train_raw);
  const MatrixXr val = student_embeddings(net, *probe->val_raw);
  return knn_classify(train, probe->train_labels, val, probe->val_labels, probe->k_neighbors).accuracy;
}

/// Shuffled minibatches of sample indices, one epoch at a time.
class BatchPlan {
 public:
  BatchPlan(Index samples, int batch_size) : order_(static_cast<std::size_t>(samples)), batch_(batch_size) {
    std::iota(order_.begin(), order_.end(), Index{0});
  }

  void shuffle(std::mt19937_64& rng) { std::shuffle(order_.begin(), order_.end(), rng); }
  std::size_t count() const noexcept { return (order_.size() + static_cast<std::size_t>(batch_) - 1) / batch_; }
  std::span<const Index> batch(std::size_t b) const {
    const std::size_t begin = b * static_cast<std::size_t>(batch_);
    const std::size_t end = std::min(order_.size(), begin + static_cast<std::size_t>(batch_));
    return {order_.data() + begin, end - begin};
  }

 private:
  std::vector<Index> order_;
  int batch_;
};

MatrixXr gather_rows(const MatrixXr& m, std::span<const Index> idx) { return m(idx, Eigen::all); }

struct Training {
  std::mt19937_64 shuffle_rng;
  std::mt19937_64 noise_rng;
  VectorXr noise_sigma;
  LrSchedule schedule;

  Training(const MatrixXr& raw, const DistillConfig& config)
      : shuffle_rng(config.seed),
        noise_rng(config.seed ^ 0x5851f42d4c957f2dULL),
        noise_sigma(config.aug_fraction * column_std(raw)),
        schedule(config.lr, config.milestones, config.lr_factor) {}

  MatrixXr augmented(const MatrixXr& raw, std::span<const Index> idx) {
    return augment(gather_rows(raw, idx), noise_sigma, noise_rng);
  }
};

TrainRecord finish_epoch(int epoch, double loss_sum, int steps, const StudentNetwork& net, const NnProbe* probe) {
  TrainRecord rec;
  rec.epoch = epoch;
  rec.mean_loss = steps > 0 ? loss_sum / steps : std::numeric_limits<double>::quiet_NaN();
  rec.nn_acc = probe_nn(net, probe);
  return rec;
}

TrainOutput train_similarity(const MatrixXr& raw, Index teacher_dim, const TeacherFn& teacher, StudentNetwork net,
                             const DistillConfig& config, const NnProbe* probe) {
  Training run(raw, config);
  Distiller distiller(std::move(net), teacher_dim, config);
  BatchPlan plan(raw.rows(), config.batch_size);
  TrainOutput out;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    distiller.set_lr(run.schedule.at(epoch));
    plan.shuffle(run.shuffle_rng);
    double loss_sum = 0.0;
    int steps = 0;
    for (std::size_t b = 0; b < plan.count(); ++b) {
      const auto idx = plan.batch(b);
      const MatrixXr x = run.augmented(raw, idx);
      const auto loss = distiller.step(x, teacher(idx, x));
      if (loss) {
        loss_sum += *loss;
        ++steps;
      }
    }
    out.records.push_back(finish_epoch(epoch, loss_sum, steps, distiller.student(), probe));
  }
  out.net = distiller.student();
  return out;
}

TrainOutput train_regression(const MatrixXr& raw, Index teacher_dim, const TeacherFn& teacher, StudentNetwork net,
                             const DistillConfig& config, const NnProbe* probe) {
  const bool use_bn = config.method == Method::RegBn;
  Training run(raw, config);
  const std::array<Index, 2> head_dims{net.output_dim(), teacher_dim};
  StudentNetwork head = StudentNetwork::create(head_dims, config.seed + 1);
  VectorXr params = net.parameters();
  VectorXr head_params = head.parameters();
  SgdState sgd(config.lr, config.sgd_momentum, config.weight_decay, net.parameter_count());
  SgdState head_sgd(config.lr, config.sgd_momentum, config.weight_decay, head.parameter_count());
  BatchPlan plan(raw.rows(), config.batch_size);
  TrainOutput out;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    sgd.lr = head_sgd.lr = run.schedule.at(epoch);
    plan.shuffle(run.shuffle_rng);
    double loss_sum = 0.0;
    int steps = 0;
    for (std::size_t b = 0; b < plan.count(); ++b) {
      const auto idx = plan.batch(b);
      if (use_bn && idx.size() < 2) continue;
      const MatrixXr x = run.augmented(raw, idx);
      const EmbeddingBatch<double> target = teacher(idx, x);
      const ForwardResult body = forward(net, x);
      const ForwardResult proj = forward(head, body.output);
      const RegressionLoss reg = reg_loss_and_grad(proj.output, target.data(), use_bn);
      MatrixXr grad_body;
      const VectorXr head_grad = backward(head, proj.cache, reg.grad, &grad_body);
      const VectorXr body_grad = backward(net, body.cache, grad_body);
      sgd_step(head_sgd, head_params, head_grad);
      sgd_step(sgd, params, body_grad);
      head.set_parameters(head_params);
      net.set_parameters(params);
      loss_sum += reg.loss;
      ++steps;
    }
    out.records.push_back(finish_epoch(epoch, loss_sum, steps, net, probe));
  }
  out.net = std::move(net);
  return out;
}

int default_cc_k(const DistillConfig& config, int num_classes) {
  if (config.cc_k > 0) return config.cc_k;
  return 4 * std::max(1, num_classes);
}

}  // namespace

std::string_view method_name(Method method) noexcept {
  switch (method) {
    case Method::Ours1q: return "ours-1q";
    case Method::Ours2q: return "ours-2q";
    case Method::Reg: return "reg";
    case Method::RegBn: return "reg-bn";
    case Method::Cc: return "cc";
  }
  return "unknown";
}

std::optional<Method> parse_method(std::string_view text) {
  const std::string key = lowercase_compact(text);
  if (key == "ours1q") return Method::Ours1q;
  if (key == "ours2q") return Method::Ours2q;
  if (key == "reg") return Method::Reg;
  if (key == "regbn") return Method::RegBn;
  if (key == "cc") return Method::Cc;
  return std::nullopt;
}

bool is_similarity_method(Method method) noexcept { return method == Method::Ours1q || method == Method::Ours2q; }

double default_lr(Method method) noexcept {
  switch (method) {
    case Method::Reg:
    case Method::RegBn: return 0.1;
    default: return 0.01;
  }
}

void DistillConfig::validate(Index student_dim, Index teacher_dim) const {
  auto fail = [](const std::string& msg) { throw Error(Errc::InvalidConfig, msg); };
  check_temperature(tau);
  if (epochs < 0) fail("epochs must be nonnegative");
  if (batch_size < 1) fail("batch size must be positive");
  if (bank_capacity < 1) throw Error(Errc::InvalidCapacity, "bank capacity must be positive");
  if (!(momentum_m >= 0.0 && momentum_m <= 1.0)) fail("key momentum must lie in [0, 1]");
  if (!(lr >= 0.0)) fail("learning rate must be nonnegative");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) fail("SGD momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight decay must be nonnegative");
  if (!(lr_factor > 0.0)) fail("lr factor must be positive");
  if (!(aug_fraction >= 0.0)) fail("augmentation fraction must be nonnegative");
  if (cc_k < 0) fail("cc_k must be nonnegative");
  if (is_similarity_method(method) && bank_capacity < batch_size)
    throw Error(Errc::BankSmallerThanBatch, "bank capacity " + std::to_string(bank_capacity) +
                                                " is smaller than batch size " + std::to_string(batch_size));
  if (method == Method::Ours1q && student_dim != teacher_dim)
    throw Error(Errc::DimensionMismatch, "ours-1q scores the student against teacher anchors: student dim " +
                                             std::to_string(student_dim) + " must equal teacher dim " +
                                             std::to_string(teacher_dim));
}

QueryDistributions query_distributions(const VectorXr& teacher_q, const VectorXr& student_q,
                                       const MatrixXr& teacher_anchors, const MatrixXr& student_anchors, double tau) {
  if (teacher_anchors.rows() == 0 || student_anchors.rows() == 0)
    throw Error(Errc::EmptyAnchors, "anchor sets must be nonempty");
  if (teacher_anchors.rows() != student_anchors.rows())
    throw Error(Errc::DimensionMismatch, "teacher and student anchor counts differ");
  return {softmax_temperature(cosine_scores(teacher_q, teacher_anchors), tau),
          softmax_temperature(cosine_scores(student_q, student_anchors), tau)};
}

double batch_loss(std::span<const SimilarityDistribution<double>> p_t,
                  std::span<const SimilarityDistribution<double>> p_s) {
  if (p_t.size() != p_s.size()) throw Error(Errc::LengthMismatch, "teacher and student lists differ in length");
  if (p_t.empty()) throw Error(Errc::LengthMismatch, "batch must hold at least one query");
  double total = 0.0;
  for (std::size_t i = 0; i < p_t.size(); ++i) total += kl_divergence(p_t[i], p_s[i]);
  return total / static_cast<double>(p_t.size());
}

VectorXr query_gradient(const SimilarityDistribution<double>& p_t, const SimilarityDistribution<double>& p_s,
                        const MatrixXr& student_anchors, double tau, const VectorXr& student_q_unnormalized) {
  check_temperature(tau);
  const Index n = student_anchors.rows();
  if (p_t.size() != n || p_s.size() != n)
    throw Error(Errc::InconsistentInputs, "distributions must have one entry per anchor");
  if (student_q_unnormalized.size() != student_anchors.cols())
    throw Error(Errc::InconsistentInputs, "query and anchors differ in dimension");
  const double norm = student_q_unnormalized.norm();
  if (!(norm >= kZeroNormThreshold)) throw Error(Errc::ZeroNormRow, "student query has zero norm");
  const VectorXr unit = student_q_unnormalized / norm;
  const auto expected = softmax_temperature(cosine_scores(unit, student_anchors), tau);
  if ((expected.probs - p_s.probs).cwiseAbs().maxCoeff() > kConsistencyTolerance)
    throw Error(Errc::InconsistentInputs, "p_s was not produced by these anchors, query and temperature");

  const MatrixXr grad = distribution_gradient(p_t.probs.transpose(), p_s.probs.transpose(), student_anchors, tau,
                                              unit.transpose(), VectorXr::Constant(1, norm), 1.0);
  return grad.row(0).transpose();
}

Distiller::Distiller(StudentNetwork student, Index teacher_dim, const DistillConfig& config)
    : config_(config),
      student_(std::move(student)),
      key_(student_),
      teacher_queue_(config.bank_capacity, teacher_dim),
      student_queue_(config.bank_capacity, config.method == Method::Ours1q ? teacher_dim : student_.output_dim()) {
  if (!is_similarity_method(config.method))
    throw Error(Errc::InvalidConfig, "Distiller handles ours-1q and ours-2q only");
  config_.validate(student_.output_dim(), teacher_dim);
  params_ = student_.parameters();
  key_params_ = params_;
  sgd_ = SgdState(config.lr, config.sgd_momentum, config.weight_decay, student_.parameter_count());
}

bool Distiller::ready() const noexcept {
  const Index need = config_.batch_size;
  if (teacher_queue_.size() < need) return false;
  return config_.method == Method::Ours1q || student_queue_.size() >= need;
}

Distiller::Evaluation Distiller::evaluate(const MatrixXr& student_input, const MatrixXr& teacher_emb) const {
  if (student_input.rows() != teacher_emb.rows())
    throw Error(Errc::LengthMismatch, "student inputs and teacher embeddings differ in count");
  if (student_input.rows() == 0) throw Error(Errc::LengthMismatch, "empty batch");
  const MatrixXr teacher_anchors = teacher_queue_.as_matrix();
  const MatrixXr student_anchors =
      config_.method == Method::Ours1q ? teacher_anchors : student_queue_.as_matrix();
  if (teacher_anchors.rows() != student_anchors.rows())
    throw Error(Errc::DimensionMismatch, "teacher and student queues hold different anchor counts");

  const ForwardResult fw = forward(student_, student_input);
  const VectorXr norms = row_norms(fw.output);
  const MatrixXr unit = normalize_with_norms(fw.output, norms);

  const double inv_tau = 1.0 / config_.tau;
  const MatrixXr logits_t = cosine_score_matrix(teacher_emb, teacher_anchors) * inv_tau;
  const MatrixXr logits_s = cosine_score_matrix(unit, student_anchors) * inv_tau;
  MatrixXr probs_t = logits_t;
  MatrixXr probs_s = logits_s;
  const VectorXr log_z_t = softmax_rows_with_partition(probs_t);
  const VectorXr log_z_s = softmax_rows_with_partition(probs_s);

  Evaluation out;
  out.loss = mean_row_kl(logits_t, probs_t, log_z_t, logits_s, log_z_s);
  const double scale = 1.0 / static_cast<double>(student_input.rows());
  const MatrixXr grad_out = distribution_gradient(probs_t, probs_s, student_anchors, config_.tau, unit, norms, scale);
  out.grad = backward(student_, fw.cache, grad_out);
  return out;
}

std::optional<double> Distiller::step(const MatrixXr& student_input, const EmbeddingBatch<double>& teacher_batch) {
  if (!teacher_batch.normalized()) throw Error(Errc::UnnormalizedBatch, "teacher embeddings must be normalized");
  std::optional<double> loss;
  if (ready()) {
    const Evaluation eval = evaluate(student_input, teacher_batch.data());
    sgd_step(sgd_, params_, eval.grad);
    student_.set_parameters(params_);
    loss = eval.loss;
  }
  teacher_queue_.enqueue(teacher_batch);
  if (config_.method == Method::Ours2q) {
    student_queue_.enqueue(EmbeddingBatch<double>(l2_normalize_rows(embed(key_, student_input)), true));
    ema_update_inplace(key_params_, params_, config_.momentum_m);
    key_.set_parameters(key_params_);
  }
  return loss;
}

RegressionLoss reg_loss_and_grad(const MatrixXr& student_emb, const MatrixXr& teacher_emb, bool use_bn) {
  if (student_emb.rows() != teacher_emb.rows() || student_emb.cols() != teacher_emb.cols())
    throw Error(Errc::DimensionMismatch, "student and teacher embeddings differ in shape");
  const Index rows = student_emb.rows();
  if (rows == 0) throw Error(Errc::BatchTooSmall, "empty batch");
  if (use_bn && rows < 2) throw Error(Errc::BatchTooSmall, "batch whitening needs at least two rows");
  const double count = static_cast<double>(student_emb.size());

  RegressionLoss out;
  if (!use_bn) {
    const MatrixXr diff = student_emb - teacher_emb;
    out.loss = diff.squaredNorm() / count;
    out.grad = (2.0 / count) * diff;
    return out;
  }

  auto whiten = [&](const MatrixXr& m, Eigen::RowVectorXd& inv_std) {
    const Eigen::RowVectorXd mean = m.colwise().mean();
    MatrixXr centered = m.rowwise() - mean;
    const Eigen::RowVectorXd var = centered.array().square().colwise().mean();
    inv_std = (var.array() + kBnEpsilon).rsqrt();
    centered.array().rowwise() *= inv_std.array();
    return centered;
  };
  Eigen::RowVectorXd inv_std_s, inv_std_t;
  const MatrixXr ys = whiten(student_emb, inv_std_s);
  const MatrixXr yt = whiten(teacher_emb, inv_std_t);
  const MatrixXr diff = ys - yt;
  out.loss = diff.squaredNorm() / count;

  // Batch-norm backward: dx = inv_std * (dy - mean(dy) - y * mean(dy * y)).
  const MatrixXr dy = (2.0 / count) * diff;
  const Eigen::RowVectorXd mean_dy = dy.colwise().mean();
  const Eigen::RowVectorXd mean_dy_y = (dy.array() * ys.array()).colwise().mean();
  MatrixXr dx = dy.rowwise() - mean_dy;
  dx -= (ys.array().rowwise() * mean_dy_y.array()).matrix();
  dx.array().rowwise() *= inv_std_s.array();
  out.grad = std::move(dx);
  return out;
}

std::vector<int> cc_prepare(const EmbeddingBatch<double>& teacher_cache, int k, std::uint64_t seed) {
  if (!teacher_cache.normalized()) throw Error(Errc::UnnormalizedBatch, "teacher cache must be normalized");
  if (k > teacher_cache.size())
    throw Error(Errc::KTooLarge, "k = " + std::to_string(k) + " exceeds " + std::to_string(teacher_cache.size()));
  return kmeans(teacher_cache.data(), k, kDefaultKmeansIters, seed).assignment;
}

TrainOutput cc_train(const MatrixXr& raw, std::span<const int> pseudo_labels, StudentNetwork net,
                     const DistillConfig& config, const NnProbe* probe) {
  if (static_cast<Index>(pseudo_labels.size()) != raw.rows())
    throw Error(Errc::LengthMismatch, "one pseudo-label per sample required");
  if (config.epochs < 0 || config.batch_size < 1) throw Error(Errc::InvalidConfig, "bad epoch or batch settings");
  int k = config.cc_k;
  for (int y : pseudo_labels) {
    if (y < 0) throw Error(Errc::InvalidConfig, "pseudo-labels must be nonnegative");
    k = std::max(k, y + 1);
  }
  const bool degenerate =
      std::adjacent_find(pseudo_labels.begin(), pseudo_labels.end(), std::not_equal_to<>()) == pseudo_labels.end();

  Training run(raw, config);
  const std::array<Index, 2> head_dims{net.output_dim(), std::max(k, 1)};
  StudentNetwork head = StudentNetwork::create(head_dims, config.seed + 1);
  VectorXr params = net.parameters();
  VectorXr head_params = head.parameters();
  SgdState sgd(config.lr, config.sgd_momentum, config.weight_decay, net.parameter_count());
  SgdState head_sgd(config.lr, config.sgd_momentum, config.weight_decay, head.parameter_count());
  BatchPlan plan(raw.rows(), config.batch_size);
  std::vector<int> batch_labels;
  TrainOutput out;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    sgd.lr = head_sgd.lr = run.schedule.at(epoch);
    plan.shuffle(run.shuffle_rng);
    double loss_sum = 0.0;
    int steps = 0;
    for (std::size_t b = 0; b < plan.count(); ++b) {
      const auto idx = plan.batch(b);
      const MatrixXr x = run.augmented(raw, idx);
      batch_labels.clear();
      for (Index i : idx) batch_labels.push_back(pseudo_labels[static_cast<std::size_t>(i)]);
      const ForwardResult body = forward(net, x);
      const ForwardResult logits = forward(head, body.output);
      MatrixXr grad_logits;
      loss_sum += softmax_cross_entropy(logits.output, batch_labels, &grad_logits);
      ++steps;
      MatrixXr grad_body;
      const VectorXr head_grad = backward(head, logits.cache, grad_logits, &grad_body);
      const VectorXr body_grad = backward(net, body.cache, grad_body);
      sgd_step(head_sgd, head_params, head_grad);
      sgd_step(sgd, params, body_grad);
      head.set_parameters(head_params);
      net.set_parameters(params);
    }
    TrainRecord rec = finish_epoch(epoch, loss_sum, steps, net, probe);
    rec.degenerate = degenerate;
    out.records.push_back(rec);
  }
  out.net = std::move(net);
  return out;
}

TeacherFn cached_teacher(const EmbeddingBatch<double>& cache) {
  if (!cache.normalized()) throw Error(Errc::UnnormalizedBatch, "teacher cache must be normalized");
  return [&cache](std::span<const Index> indices, const MatrixXr&) { return cache.gather(indices); };
}

TrainOutput distill(const MatrixXr& raw, Index teacher_dim, const TeacherFn& teacher, StudentNetwork net,
                    const DistillConfig& config, const NnProbe* probe) {
  config.validate(net.output_dim(), teacher_dim);
  if (raw.cols() != net.input_dim()) throw Error(Errc::DimensionMismatch, "raw data does not match student input");
  switch (config.method) {
    case Method::Ours1q:
    case Method::Ours2q: return train_similarity(raw, teacher_dim, teacher, std::move(net), config, probe);
    case Method::Reg:
    case Method::RegBn: return train_regression(raw, teacher_dim, teacher, std::move(net), config, probe);
    case Method::Cc: break;
  }
  throw Error(Errc::InvalidConfig, "cc needs a cached teacher table");
}

TrainOutput distill(const Dataset& data, StudentNetwork net, const DistillConfig& config, const NnProbe* probe,
                    int num_classes) {
  if (data.teacher_cache.size() != data.raw.rows())
    throw Error(Errc::LengthMismatch, "teacher cache and raw data are not aligned");
  if (config.method == Method::Cc) {
    config.validate(net.output_dim(), data.teacher_cache.dim());
    if (num_classes <= 0)
      for (int y : data.labels) num_classes = std::max(num_classes, y + 1);
    DistillConfig cc = config;
    cc.cc_k = default_cc_k(config, num_classes);
    const std::vector<int> pseudo = cc_prepare(data.teacher_cache, cc.cc_k, config.seed);
    return cc_train(data.raw, pseudo, std::move(net), cc, probe);
  }
  return distill(data.raw, data.teacher_cache.dim(), cached_teacher(data.teacher_cache), std::move(net), config,
                 probe);
}

MatrixXr student_embeddings(const StudentNetwork& net, const MatrixXr& raw) {
  return l2_normalize_rows(embed(net, raw));
}

namespace {

void append_number(std::string& out, double value) {
  if (std::isnan(value)) {
    out += "nan";
    return;
  }
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  out.append(buf.data(), res.ptr);
}

}  // namespace

std::string metrics_csv(std::span<const TrainRecord> records) {
  std::string out = "epoch,mean_loss,nn_acc\n";
  for (const auto& rec : records) {
    out += std::to_string(rec.epoch);
    out += ',';
    append_number(out, rec.mean_loss);
    out += ',';
    if (rec.nn_acc) append_number(out, *rec.nn_acc);
    out += '\n';
  }
  return out;
}

}  // namespace compress
