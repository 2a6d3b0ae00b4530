#include <doctest.h>

#include <array>
#include <cmath>
#include <random>
#include <set>

#include "compress/distill.hpp"
#include "compress/evaluation.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace compress;
using test::code_of;

namespace {

StudentNetwork small_net(Index in, Index hidden, Index out, std::uint64_t seed) {
  const std::array<Index, 3> dims{in, hidden, out};
  return StudentNetwork::create(dims, seed);
}

DistillConfig similarity_config(Method method, int batch, Index bank) {
  DistillConfig c;
  c.method = method;
  c.batch_size = batch;
  c.bank_capacity = bank;
  return c;
}

Distiller with_anchors(const StudentNetwork& net, Index teacher_dim, const DistillConfig& config,
                       const MatrixXr& teacher_anchors, const MatrixXr& student_anchors) {
  Distiller d(net, teacher_dim, config);
  d.teacher_queue().enqueue(EmbeddingBatch<double>(teacher_anchors, true));
  if (config.method == Method::Ours2q) d.student_queue().enqueue(EmbeddingBatch<double>(student_anchors, true));
  return d;
}

SplitDataset tiny_task(std::uint64_t seed) {
  SyntheticSpec s;
  s.num_classes = 4;
  s.train_count = 400;
  s.val_count = 100;
  s.latent_dim = 6;
  s.raw_dim = 10;
  s.teacher_dim = 8;
  s.seed = seed;
  return generate(s);
}

}  // namespace

TEST_CASE("method names and defaults") {
  CHECK(parse_method("ours-2q") == Method::Ours2q);
  CHECK(parse_method("OURS_1Q") == Method::Ours1q);
  CHECK(parse_method("reg-bn") == Method::RegBn);
  CHECK(parse_method("regbn") == Method::RegBn);
  CHECK(parse_method("cc") == Method::Cc);
  CHECK(!parse_method("crd"));
  for (Method m : {Method::Ours1q, Method::Ours2q, Method::Reg, Method::RegBn, Method::Cc})
    CHECK(parse_method(method_name(m)) == m);
  const DistillConfig c;
  CHECK(c.tau == 0.04);
  CHECK(c.bank_capacity == 2048);
  CHECK(c.momentum_m == 0.999);
  CHECK(c.epochs == 30);
  CHECK(c.batch_size == 256);
  CHECK(c.lr == 0.01);
  CHECK(c.sgd_momentum == 0.9);
  CHECK(c.weight_decay == 1e-4);
  CHECK(c.lr_factor == 0.2);
  CHECK(default_lr(Method::Ours2q) == 0.01);
  CHECK(default_lr(Method::RegBn) == 0.1);
}

TEST_CASE("config validation") {
  DistillConfig c;
  CHECK_NOTHROW(c.validate(64, 32));
  c.bank_capacity = 128;
  CHECK(code_of([&] { c.validate(64, 32); }) == Errc::BankSmallerThanBatch);
  c.method = Method::Reg;
  CHECK_NOTHROW(c.validate(64, 32));
  c = DistillConfig{};
  c.method = Method::Ours1q;
  CHECK(code_of([&] { c.validate(64, 32); }) == Errc::DimensionMismatch);
  CHECK_NOTHROW(c.validate(32, 32));
  c.tau = 0.0;
  CHECK(code_of([&] { c.validate(32, 32); }) == Errc::NonPositiveTemperature);
  c = DistillConfig{};
  c.momentum_m = 1.2;
  CHECK(code_of([&] { c.validate(64, 32); }) == Errc::InvalidConfig);
}

TEST_CASE("query_distributions examples") {
  MatrixXr anchors = MatrixXr::Identity(4, 4);
  VectorXr q = anchors.row(2).transpose();
  const QueryDistributions d = query_distributions(q, q, anchors, anchors, 0.04);
  const auto ref = oracle::softmax(anchors * q, 0.04L);
  CHECK(d.teacher[2] > 0.999);
  for (Index j = 0; j < 4; ++j) CHECK(std::abs(d.teacher[j] - static_cast<double>(ref[static_cast<std::size_t>(j)])) <= 1e-15);
  CHECK(d.teacher.probs == d.student.probs);

  std::mt19937_64 rng(1);
  const MatrixXr one = oracle::unit_rows(1, 3, rng);
  const MatrixXr one_s = oracle::unit_rows(1, 5, rng);
  const QueryDistributions single =
      query_distributions(oracle::unit_rows(1, 3, rng).row(0).transpose(), oracle::unit_rows(1, 5, rng).row(0).transpose(),
                          one, one_s, 0.04);
  CHECK(single.teacher[0] == 1.0);
  CHECK(single.student[0] == 1.0);

  const MatrixXr empty(0, 4);
  CHECK(code_of([&] { (void)query_distributions(q, q, empty, empty, 0.04); }) == Errc::EmptyAnchors);
  CHECK(code_of([&] { (void)query_distributions(q, q, anchors, anchors.topRows(3), 0.04); }) ==
        Errc::DimensionMismatch);
  const VectorXr short_q = VectorXr::Ones(3) / std::sqrt(3.0);
  CHECK(code_of([&] { (void)query_distributions(q, short_q, anchors, anchors, 0.04); }) == Errc::DimensionMismatch);
}

TEST_CASE("batch_loss examples") {
  SimilarityDistribution<double> a{VectorXr(2)}, b{VectorXr(2)};
  a.probs << 1.0, 0.0;
  b.probs << 0.5, 0.5;
  const std::vector<SimilarityDistribution<double>> pt{a}, ps{b};
  CHECK(batch_loss(pt, ps) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(batch_loss(pt, pt) == 0.0);
  CHECK(code_of([&] { (void)batch_loss(pt, std::vector<SimilarityDistribution<double>>{}); }) == Errc::LengthMismatch);
  CHECK(code_of([&] {
          (void)batch_loss(std::vector<SimilarityDistribution<double>>{}, std::vector<SimilarityDistribution<double>>{});
        }) == Errc::LengthMismatch);

  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    std::vector<SimilarityDistribution<double>> lt, ls;
    long double ref = 0;
    for (int i = 0; i < 8; ++i) {
      lt.push_back(softmax_temperature(oracle::gaussian(10, 1, rng).col(0), 0.5));
      ls.push_back(softmax_temperature(oracle::gaussian(10, 1, rng).col(0), 0.5));
      ref += oracle::kl(lt.back().probs, ls.back().probs);
    }
    const double got = batch_loss(lt, ls);
    CHECK(std::abs(got - static_cast<double>(ref / 8)) <= 1e-13);
    CHECK(got >= 0.0);
  }
}

TEST_CASE("query_gradient examples") {
  std::mt19937_64 rng(3);
  const MatrixXr anchors = oracle::unit_rows(12, 5, rng);
  const VectorXr raw = oracle::gaussian(5, 1, rng, 2.0).col(0);
  const VectorXr unit = raw / raw.norm();
  const auto ps = softmax_temperature(cosine_scores(unit, anchors), 0.1);
  CHECK(query_gradient(ps, ps, anchors, 0.1, raw).isZero());

  const auto pt = softmax_temperature(oracle::gaussian(12, 1, rng).col(0), 0.1);
  const VectorXr g = query_gradient(pt, ps, anchors, 0.1, raw);
  CHECK(std::abs(g.dot(unit)) <= 1e-10);

  auto bad = ps;
  bad.probs[0] += 1e-3;
  bad.probs[1] -= 1e-3;
  CHECK(code_of([&] { (void)query_gradient(pt, bad, anchors, 0.1, raw); }) == Errc::InconsistentInputs);
  CHECK(code_of([&] { (void)query_gradient(pt, ps, anchors, 0.2, raw); }) == Errc::InconsistentInputs);
}

TEST_CASE("query_gradient matches finite differences of the KL") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const double tau = t % 2 == 0 ? 0.04 : 0.5;
    const MatrixXr anchors = oracle::unit_rows(16, 6, rng);
    const VectorXr raw = oracle::gaussian(6, 1, rng, 1.5).col(0);
    const auto pt = softmax_temperature(oracle::gaussian(16, 1, rng).col(0), 0.3);
    const auto ps = softmax_temperature(cosine_scores(VectorXr(raw / raw.norm()), anchors), tau);
    const VectorXr analytic = query_gradient(pt, ps, anchors, tau, raw);
    const VectorXr numeric = oracle::finite_difference(
        [&](const VectorXr& s) {
          const auto p = softmax_temperature(cosine_scores(VectorXr(s / s.norm()), anchors), tau);
          const std::vector<SimilarityDistribution<double>> a{pt}, b{p};
          return batch_loss(a, b);
        },
        raw, 1e-5);
    CHECK(oracle::fraction_within(analytic, numeric, 1e-5) == 1.0);
  }
}

TEST_CASE("full ours-2q gradient through a two-layer student") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 5; ++t) {
    const StudentNetwork net = small_net(6, 9, 5, 50 + static_cast<std::uint64_t>(t));
    DistillConfig cfg = similarity_config(Method::Ours2q, 4, 20);
    cfg.tau = 0.1;
    const MatrixXr ta = oracle::unit_rows(20, 7, rng);
    const MatrixXr sa = oracle::unit_rows(20, 5, rng);
    const MatrixXr x = oracle::gaussian(4, 6, rng);
    const MatrixXr te = oracle::unit_rows(4, 7, rng);
    const Distiller d = with_anchors(net, 7, cfg, ta, sa);
    const Distiller::Evaluation e = d.evaluate(x, te);
    const VectorXr numeric = oracle::finite_difference(
        [&](const VectorXr& p) {
          StudentNetwork probe = net;
          probe.set_parameters(p);
          return with_anchors(probe, 7, cfg, ta, sa).evaluate(x, te).loss;
        },
        net.parameters(), 1e-5);
    CHECK(oracle::fraction_within(e.grad, numeric, 1e-5) >= 0.99);

    const ForwardResult fw = forward(net, x);
    const MatrixXr unit = l2_normalize_rows(fw.output);
    std::vector<SimilarityDistribution<double>> pt, ps;
    for (Index i = 0; i < 4; ++i) {
      const QueryDistributions q =
          query_distributions(te.row(i).transpose(), unit.row(i).transpose(), ta, sa, cfg.tau);
      pt.push_back(q.teacher);
      ps.push_back(q.student);
    }
    CHECK(e.loss == doctest::Approx(batch_loss(pt, ps)).epsilon(1e-10));
    CHECK(e.loss >= -1e-9);
  }
}

TEST_CASE("ours-1q and ours-2q agree on the first step in the degenerate setting") {
  std::mt19937_64 rng(6);
  const StudentNetwork net = small_net(6, 10, 7, 7);
  const MatrixXr anchors = oracle::unit_rows(16, 7, rng);
  const MatrixXr x = oracle::gaussian(8, 6, rng);
  const MatrixXr te = oracle::unit_rows(8, 7, rng);
  const Distiller one = with_anchors(net, 7, similarity_config(Method::Ours1q, 8, 16), anchors, anchors);
  const Distiller two = with_anchors(net, 7, similarity_config(Method::Ours2q, 8, 16), anchors, anchors);
  CHECK(two.key_encoder().parameters() == two.student().parameters());
  const auto e1 = one.evaluate(x, te);
  const auto e2 = two.evaluate(x, te);
  CHECK(e1.loss == e2.loss);
  CHECK(e1.grad == e2.grad);
}

TEST_CASE("step waits for a full queue, then enqueues after the update") {
  std::mt19937_64 rng(7);
  DistillConfig cfg = similarity_config(Method::Ours2q, 4, 8);
  cfg.momentum_m = 0.5;
  Distiller d(small_net(5, 6, 3, 8), 6, cfg);
  CHECK(!d.ready());
  const MatrixXr x0 = oracle::gaussian(4, 5, rng);
  const EmbeddingBatch<double> t0(oracle::unit_rows(4, 6, rng), true);
  const VectorXr before = d.student().parameters();
  CHECK(!d.step(x0, t0));
  CHECK(d.student().parameters() == before);
  CHECK(d.teacher_queue().size() == 4);
  CHECK(d.student_queue().size() == 4);
  CHECK(d.ready());

  const MatrixXr x1 = oracle::gaussian(4, 5, rng);
  const EmbeddingBatch<double> t1(oracle::unit_rows(4, 6, rng), true);
  const double expected = d.evaluate(x1, t1.data()).loss;
  const VectorXr key_before = d.key_encoder().parameters();
  const auto loss = d.step(x1, t1);
  REQUIRE(loss);
  CHECK(*loss == expected);
  CHECK(d.student().parameters() != before);
  CHECK(d.teacher_queue().size() == 8);
  CHECK(d.teacher_queue().as_matrix().bottomRows(4) == t1.data());
  const VectorXr key_expected = 0.5 * key_before + 0.5 * d.student().parameters();
  CHECK((d.key_encoder().parameters() - key_expected).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("momentum zero keeps the key encoder equal to the student") {
  std::mt19937_64 rng(8);
  DistillConfig cfg = similarity_config(Method::Ours2q, 4, 8);
  cfg.momentum_m = 0.0;
  Distiller d(small_net(5, 6, 3, 9), 6, cfg);
  for (int s = 0; s < 6; ++s) {
    d.step(oracle::gaussian(4, 5, rng), EmbeddingBatch<double>(oracle::unit_rows(4, 6, rng), true));
    CHECK(d.key_encoder().parameters() == d.student().parameters());
  }
}

TEST_CASE("distill with zero learning rate leaves the student unchanged") {
  const SplitDataset data = tiny_task(1);
  const StudentNetwork net = small_net(10, 16, 8, 10);
  for (Method m : {Method::Ours1q, Method::Ours2q, Method::Reg, Method::RegBn, Method::Cc}) {
    DistillConfig cfg = similarity_config(m, 32, 64);
    cfg.epochs = 1;
    cfg.lr = 0.0;
    const TrainOutput out = distill(data.train, net, cfg, nullptr, 4);
    CHECK(out.net.parameters() == net.parameters());
    REQUIRE(out.records.size() == 1);
    CHECK(std::isfinite(out.records[0].mean_loss));
  }
}

TEST_CASE("distill is deterministic and KL records are nonnegative") {
  const SplitDataset data = tiny_task(2);
  DistillConfig cfg = similarity_config(Method::Ours2q, 32, 128);
  cfg.epochs = 4;
  const NnProbe probe{&data.train.raw, data.train.labels, &data.val.raw, data.val.labels, 1};
  const TrainOutput a = distill(data.train, small_net(10, 16, 8, 11), cfg, &probe);
  const TrainOutput b = distill(data.train, small_net(10, 16, 8, 11), cfg, &probe);
  CHECK(a.net.parameters() == b.net.parameters());
  CHECK(metrics_csv(a.records) == metrics_csv(b.records));
  REQUIRE(a.records.size() == 4);
  for (const auto& r : a.records) {
    CHECK(r.mean_loss >= -1e-9);
    REQUIRE(r.nn_acc);
    CHECK((*r.nn_acc >= 0.0 && *r.nn_acc <= 1.0));
  }
  cfg.seed = 1;
  CHECK(distill(data.train, small_net(10, 16, 8, 11), cfg).net.parameters() != a.net.parameters());
}

TEST_CASE("distill reduces the loss on a small task") {
  const SplitDataset data = tiny_task(3);
  for (Method m : {Method::Ours1q, Method::Ours2q}) {
    DistillConfig cfg = similarity_config(m, 32, 128);
    cfg.epochs = 15;
    cfg.lr = 0.05;
    const Index out = m == Method::Ours1q ? 8 : 6;
    const TrainOutput r = distill(data.train, small_net(10, 32, out, 12), cfg);
    CHECK(r.records.back().mean_loss < r.records.front().mean_loss);
  }
}

TEST_CASE("distill rejects bad inputs") {
  const SplitDataset data = tiny_task(4);
  DistillConfig cfg = similarity_config(Method::Ours2q, 64, 32);
  CHECK(code_of([&] { (void)distill(data.train, small_net(10, 8, 4, 1), cfg); }) == Errc::BankSmallerThanBatch);
  cfg = similarity_config(Method::Ours1q, 32, 64);
  CHECK(code_of([&] { (void)distill(data.train, small_net(10, 8, 4, 1), cfg); }) == Errc::DimensionMismatch);
  cfg = similarity_config(Method::Ours2q, 32, 64);
  CHECK(code_of([&] { (void)distill(data.train, small_net(9, 8, 4, 1), cfg); }) == Errc::DimensionMismatch);
}

TEST_CASE("metrics csv layout") {
  std::vector<TrainRecord> recs(2);
  recs[0].epoch = 0;
  recs[0].mean_loss = std::nan("");
  recs[1].epoch = 1;
  recs[1].mean_loss = 0.25;
  recs[1].nn_acc = 0.5;
  CHECK(metrics_csv(recs) == "epoch,mean_loss,nn_acc\n0,nan,\n1,0.25,0.5\n");
  CHECK(metrics_csv({}) == "epoch,mean_loss,nn_acc\n");
}

TEST_CASE("reg_loss_and_grad examples") {
  std::mt19937_64 rng(9);
  const MatrixXr t = oracle::gaussian(6, 4, rng);
  const RegressionLoss same = reg_loss_and_grad(t, t, false);
  CHECK(same.loss == 0.0);
  CHECK(same.grad.isZero());

  MatrixXr affine = t;
  for (Index d = 0; d < 4; ++d) affine.col(d) = affine.col(d) * (0.5 + d) + VectorXr::Constant(6, 3.0 - d);
  CHECK(reg_loss_and_grad(affine, t, true).loss <= 1e-9);

  CHECK(code_of([&] { (void)reg_loss_and_grad(t.topRows(1), t.topRows(1), true); }) == Errc::BatchTooSmall);
  CHECK(code_of([&] { (void)reg_loss_and_grad(t, t.leftCols(3), false); }) == Errc::DimensionMismatch);

  const MatrixXr s = oracle::gaussian(6, 4, rng);
  long double ref = 0;
  for (Index i = 0; i < 6; ++i)
    for (Index d = 0; d < 4; ++d) ref += std::pow(static_cast<long double>(s(i, d)) - t(i, d), 2);
  CHECK(reg_loss_and_grad(s, t, false).loss == doctest::Approx(static_cast<double>(ref / 24)).epsilon(1e-14));
}

TEST_CASE("reg_loss_and_grad matches finite differences") {
  std::mt19937_64 rng(10);
  for (bool bn : {false, true}) {
    for (int trial = 0; trial < 20; ++trial) {
      const MatrixXr s = oracle::gaussian(5, 3, rng);
      const MatrixXr t = oracle::gaussian(5, 3, rng);
      const RegressionLoss r = reg_loss_and_grad(s, t, bn);
      const VectorXr numeric = oracle::finite_difference(
          [&](const VectorXr& v) { return reg_loss_and_grad(v.reshaped<Eigen::RowMajor>(5, 3), t, bn).loss; },
          s.reshaped<Eigen::RowMajor>(), 1e-5);
      CHECK(oracle::fraction_within(r.grad.reshaped<Eigen::RowMajor>(), numeric, 1e-5) == 1.0);
    }
  }
}

TEST_CASE("cc_prepare examples") {
  std::mt19937_64 rng(11);
  const EmbeddingBatch<double> cache(oracle::unit_rows(40, 5, rng), true);
  const std::vector<int> all0 = cc_prepare(cache, 1, 0);
  for (int v : all0) CHECK(v == 0);
  CHECK(code_of([&] { (void)cc_prepare(cache, 41, 0); }) == Errc::KTooLarge);

  MatrixXr sep(60, 5);
  std::vector<int> labels;
  std::normal_distribution<double> n(0.0, 0.01);
  for (Index i = 0; i < 60; ++i) {
    for (Index d = 0; d < 5; ++d) sep(i, d) = (d == i % 3 ? 1.0 : 0.0) + n(rng);
    labels.push_back(static_cast<int>(i % 3));
  }
  const std::vector<int> pseudo = cc_prepare(EmbeddingBatch<double>(l2_normalize_rows(sep), true), 3, 1);
  const MatrixXr align = alignment_matrix(pseudo, labels, 3, 3);
  const Matching m = hungarian_max(align);
  CHECK(m.total == 3.0);
}

TEST_CASE("cc_train on identical pseudo-labels is flagged degenerate") {
  const SplitDataset data = tiny_task(5);
  DistillConfig cfg = similarity_config(Method::Cc, 32, 32);
  cfg.epochs = 5;
  cfg.lr = 0.1;
  const std::vector<int> same(static_cast<std::size_t>(data.train.size()), 0);
  const TrainOutput out = cc_train(data.train.raw, same, small_net(10, 8, 4, 13), cfg);
  REQUIRE(!out.records.empty());
  CHECK(out.records.back().degenerate);
  CHECK(out.records.back().mean_loss < 0.01);
}

TEST_CASE("cc_train learns below chance on the synthetic task") {
  const SplitDataset data = tiny_task(6);
  const int k = 16;
  const std::vector<int> pseudo = cc_prepare(data.train.teacher_cache, k, 2);
  DistillConfig cfg = similarity_config(Method::Cc, 32, 32);
  cfg.epochs = 10;
  cfg.lr = 0.1;
  const TrainOutput out = cc_train(data.train.raw, pseudo, small_net(10, 32, 8, 14), cfg);
  CHECK(!out.records.back().degenerate);
  CHECK(out.records.back().mean_loss < std::log(static_cast<double>(k)));

  cfg.lr = 0.0;
  const StudentNetwork net = small_net(10, 32, 8, 15);
  CHECK(cc_train(data.train.raw, pseudo, net, cfg).net.parameters() == net.parameters());
}
