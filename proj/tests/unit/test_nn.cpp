#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "fluxml/fba.hpp"
#include "fluxml/nn.hpp"

using namespace fluxml;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd M(rows, cols);
  for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = rng.normal();
  return M;
}

std::vector<std::size_t> spread_slice(std::size_t total, std::size_t count, Rng& rng) {
  auto p = permutation(total, rng);
  p.resize(std::min(count, total));
  return p;
}

FluxDataset toy3_sweep(std::size_t n) {
  SweepConfig sweep;
  sweep.n_samples = n;
  sweep.seed = 5;
  sweep.ranges = {{"glucose", {-10, -0.5}}};
  return generate_flux_dataset(toy3_model(), sweep);
}

}  // namespace

TEST_CASE("forward pass of a hand-set net") {
  MlpNet net;
  net.layers.push_back({Eigen::MatrixXd{{1, -1}, {2, 0}}, Eigen::VectorXd{{0, -1}}});
  net.layers.push_back({Eigen::MatrixXd{{1, 3}}, Eigen::VectorXd{{0.5}}});
  Eigen::MatrixXd X{{1, 2}, {3, 1}};
  // row 0: hidden relu(-1, 1) = (0, 1) -> 3.5; row 1: relu(2, 5) -> 2 + 15 + 0.5
  const auto out = forward(net, X);
  CHECK(out(0, 0) == 3.5);
  CHECK(out(1, 0) == 17.5);
  CHECK(net.dims() == std::vector<std::size_t>{2, 2, 1});
  CHECK(net.parameter_count() == 9);
  CHECK_THROWS_AS(forward(net, Eigen::MatrixXd::Zero(1, 3)), NnError);
}

TEST_CASE("gradient checks") {
  Rng rng(1);
  SUBCASE("linear net is exact") {
    const auto net = make_mlp({4, 3}, rng);
    const auto X = random_matrix(6, 4, rng);
    const auto T = random_matrix(6, 3, rng);
    std::vector<std::size_t> all(net.parameter_count());
    std::iota(all.begin(), all.end(), std::size_t{0});
    CHECK(gradient_check(net, X, T, all) <= 1e-7);
  }
  SUBCASE("two-layer ReLU net") {
    const auto net = make_mlp({5, 16, 2}, rng, 0.3);
    const auto X = random_matrix(8, 5, rng);
    const auto T = random_matrix(8, 2, rng);
    CHECK(gradient_check(net, X, T, spread_slice(net.parameter_count(), 50, rng)) <= 1e-4);
  }
  SUBCASE("slice limit") {
    const auto net = make_mlp({10, 10}, rng);
    std::vector<std::size_t> big(51, 0);
    CHECK_THROWS_AS(gradient_check(net, Eigen::MatrixXd::Zero(1, 10), Eigen::MatrixXd::Zero(1, 10), big), NnError);
  }
}

TEST_CASE("dropout masks depend only on the seed") {
  Rng init(3);
  const auto net = make_mlp({3, 20, 1}, init, 0.5);
  const auto X = random_matrix(10, 3, init);
  ForwardCache a, b, c;
  Rng r1(9), r2(9);
  const auto o1 = forward_train(net, X, a, &r1);
  const auto o2 = forward_train(net, X, b, &r2);
  CHECK(o1 == o2);
  CHECK(a.masks[0] == b.masks[0]);
  // without an rng the training pass equals inference
  CHECK(forward_train(net, X, c, nullptr) == forward(net, X));
}

TEST_CASE("FFNN learns a linear target") {
  Rng rng(4);
  const auto X = random_matrix(500, 4, rng);
  const Eigen::VectorXd y = X.col(0);
  const auto sp = split(500, 1);
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 32;
  cfg.seed = 2;
  const auto res = train_ffnn(X, y, sp, {}, cfg);
  CHECK(res.test.r2 >= 0.95);
  CHECK(res.train_loss.size() == 60);
  CHECK(res.train_loss.back() < res.train_loss.front());

  // bitwise reproducible
  const auto again = train_ffnn(X, y, sp, {}, cfg);
  CHECK(again.model.net == res.model.net);
  CHECK(again.train_loss == res.train_loss);

  cfg.epochs = 0;
  const auto untrained = train_ffnn(X, y, sp, {}, cfg);
  CHECK(std::isfinite(untrained.test.mse));
  CHECK(untrained.train_loss.empty());
}

TEST_CASE("FFNN divergence names the epoch") {
  Rng rng(5);
  const auto X = random_matrix(40, 2, rng);
  const auto sp = split(40, 1);
  auto Xbad = X;
  // a NaN feature in a training row poisons the loss in the first epoch
  Xbad(static_cast<Eigen::Index>(sp.train[0]), 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    train_ffnn(Xbad, X.col(1), sp, {}, {.epochs = 3});
    FAIL("expected divergence");
  } catch (const NnDivergence& e) {
    CHECK(e.epoch() == 0);
    CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
  }
}

TEST_CASE("KL closed form") {
  CHECK(kl_divergence(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)) == 0.0);
  CHECK(kl_divergence(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1)) == 0.5);
  Rng rng(6);
  for (int k = 0; k < 200; ++k) {
    Eigen::VectorXd mu(3), lv(3);
    for (int j = 0; j < 3; ++j) {
      mu[j] = rng.uniform(-3, 3);
      lv[j] = rng.uniform(-4, 4);
    }
    CHECK(kl_divergence(mu, lv) > 0.0);
  }
}

TEST_CASE("VAE gradients match finite differences") {
  Rng rng(7);
  const auto vae = make_vae(6, 2, rng);
  const auto X = random_matrix(5, 6, rng);
  const auto eps = random_matrix(5, 2, rng);
  const auto total = vae.encoder.parameter_count() + vae.decoder.parameter_count();
  // five encoder and five decoder parameters
  auto slice = spread_slice(vae.encoder.parameter_count(), 5, rng);
  for (auto k : spread_slice(vae.decoder.parameter_count(), 5, rng)) slice.push_back(vae.encoder.parameter_count() + k);
  CHECK(slice.size() == 10);
  CHECK(total > 1000);
  CHECK(vae_gradient_check(vae, X, eps, 1.0, slice) <= 1e-4);
  CHECK(vae_gradient_check(vae, X, eps, 0.3, slice) <= 1e-4);
}

TEST_CASE("VAE training and encoding") {
  Rng rng(8);
  // two-factor data in 8 dimensions
  const auto F = random_matrix(200, 2, rng);
  const auto W = random_matrix(2, 8, rng);
  const Eigen::MatrixXd X = F * W + 0.05 * random_matrix(200, 8, rng);
  VaeConfig cfg;
  cfg.train.epochs = 40;
  cfg.train.batch_size = 32;
  cfg.train.seed = 3;
  const auto res = train_vae(X, 2, cfg);
  REQUIRE(res.trace.size() == 40);
  CHECK(res.trace.back().total < res.trace.front().total);
  CHECK(res.trace.front().beta == doctest::Approx(0.25));
  CHECK(res.trace[3].beta == 1.0);
  for (const auto& e : res.trace) CHECK(e.kl >= 0.0);

  const auto again = train_vae(X, 2, cfg);
  CHECK(again.model.encoder == res.model.encoder);

  Eigen::MatrixXd dup(3, 8);
  dup.row(0) = X.row(4);
  dup.row(1) = X.row(9);
  dup.row(2) = X.row(4);
  const auto Z = encode(res.model, dup);
  CHECK(Z.cols() == 2);
  CHECK(Z.row(0) == Z.row(2));
  CHECK(encode(res.model, Eigen::MatrixXd(0, 8)).rows() == 0);
  CHECK_THROWS_AS(encode(res.model, Eigen::MatrixXd::Zero(1, 7)), NnError);
}

TEST_CASE("reparameterized loss with fixed noise is deterministic") {
  Rng rng(10);
  const auto vae = make_vae(4, 2, rng);
  const auto X = random_matrix(7, 4, rng);
  Rng e1(44), e2(44);
  const auto eps1 = random_matrix(7, 2, e1);
  const auto eps2 = random_matrix(7, 2, e2);
  CHECK(vae_loss(vae, X, eps1, 1.0).total == vae_loss(vae, X, eps2, 1.0).total);
}

TEST_CASE("untrained discriminator is near chance") {
  const auto data = toy3_sweep(1000);
  std::vector<std::size_t> all(1000);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto Z = standardize_fit_apply(data.X, all).second;
  // a single random net can separate two clouds by luck; the average over inits cannot
  double mean = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const double acc = discriminator_accuracy(make_gan(3, 32, rng), Z, rng);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    mean += acc / 20.0;
  }
  CHECK(std::abs(mean - 0.5) <= 0.15);
}

TEST_CASE("GAN adversarial loss falls on toy data") {
  const auto data = toy3_sweep(500);
  std::vector<std::size_t> all(500);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto Z = standardize_fit_apply(data.X, all).second;
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.seed = 1;
  const auto res = train_gan(Z, cfg);
  const auto total = [](const GanEpoch& e) { return e.discriminator_loss + e.generator_loss; };
  CHECK(total(res.trace.back()) < total(res.trace.front()));
  CHECK(train_gan(Z, cfg).model.generator == res.model.generator);
}

TEST_CASE("GAN collapses onto a single repeated row") {
  Eigen::MatrixXd X(64, 5);
  X.rowwise() = Eigen::RowVectorXd{{0.5, -1.0, 0.25, 2.0, 0.0}};
  TrainConfig cfg;
  cfg.epochs = 1000;
  cfg.batch_size = 32;
  cfg.learning_rate = 2e-3;
  cfg.seed = 4;
  const auto res = train_gan(X, cfg);
  CHECK(res.trace.size() == 1000);
  Rng rng(1);
  const auto before = sample_variance_statistic(generate(make_gan(5, 32, rng), 500, rng));
  const auto after = sample_variance_statistic(generate(res.model, 500, rng));
  CHECK(after < 0.01);
  CHECK(after < before);

  const auto batch = generate(res.model, 17, rng);
  CHECK(batch.rows() == 17);
  CHECK(batch.cols() == 5);
}

TEST_CASE("generated toy3 fluxes project onto the feasible set") {
  const auto data = toy3_sweep(300);
  std::vector<std::size_t> all(static_cast<std::size_t>(data.X.rows()));
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto [scaler, Z] = standardize_fit_apply(data.X, all);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 2;
  const auto gan = train_gan(Z, cfg).model;
  const auto model = toy3_model();

  const auto out = generate_and_project(gan, scaler, model, 10, 7);
  REQUIRE(out.report.size() == 10);
  CHECK(out.samples.rows() == 10);
  const auto S = stoichiometric_matrix(model);
  for (Eigen::Index i = 0; i < 10; ++i) {
    const auto& rec = out.report[std::size_t(i)];
    CHECK(rec.residual_after <= 1e-6);
    CHECK(rec.residual_after <= rec.residual_before);
    const Eigen::VectorXd v = out.samples.row(i).transpose();
    const auto r = S.multiply(std::vector<double>(v.data(), v.data() + v.size()));
    for (double e : r) CHECK(std::abs(e) <= 1e-6);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(v[long(j)] >= model.reaction(j).lower_bound);
      CHECK(v[long(j)] <= model.reaction(j).upper_bound);
    }
  }
  CHECK(out.variance_statistic >= 0.0);

  const auto none = generate_and_project(gan, scaler, model, 0, 7);
  CHECK(none.samples.rows() == 0);
  CHECK(none.report.empty());
}

TEST_CASE("projection never increases the residual") {
  const auto model = toy3_model();
  Rng rng(12);
  for (int k = 0; k < 100; ++k) {
    Eigen::VectorXd v(3);
    v << rng.uniform(-15, 5), rng.uniform(-5, 20), rng.uniform(-5, 20);
    const auto rec = project_to_feasible(model, v);
    CHECK(rec.residual_after <= rec.residual_before);
    CHECK(rec.residual_after <= 1e-6);
  }
  Eigen::VectorXd feasible(3);
  feasible << -4, 4, 4;
  const auto rec = project_to_feasible(model, feasible);
  CHECK(rec.status == "already-feasible");
  CHECK(rec.distance == 0.0);

  // L1 nearest: v = (-6, 6, 6) plus an imbalance on R_BIO -> move R_BIO only
  Eigen::VectorXd off(3);
  off << -6, 6, 7;
  const auto moved = project_to_feasible(model, off);
  CHECK(moved.status == "projected");
  CHECK(moved.distance == doctest::Approx(1.0));
}

TEST_CASE("MLP JSON round-trip") {
  Rng rng(13);
  const auto net = make_mlp({3, 7, 2}, rng, 0.1);
  const auto back = mlp_from_json(nlohmann::json::parse(mlp_to_json(net).dump()));
  CHECK(back == net);
  auto doc = nlohmann::json::parse(mlp_to_json(net).dump());
  doc["architecture"] = {3, 2};
  CHECK_THROWS_AS(mlp_from_json(doc), NnError);
}
