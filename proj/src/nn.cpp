#include "fluxml/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fluxml {

using nlohmann::json;
using nlohmann::ordered_json;

NnDivergence::NnDivergence(const std::string& what, std::size_t epoch)
    : NnError(what + " diverged at epoch " + std::to_string(epoch)), epoch_(epoch) {}

// ---- MlpNet ----

std::vector<std::size_t> MlpNet::dims() const {
  std::vector<std::size_t> d;
  if (layers.empty()) return d;
  d.push_back(input_dim());
  for (const auto& l : layers) d.push_back(static_cast<std::size_t>(l.W.rows()));
  return d;
}

std::size_t MlpNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.W.size() + l.b.size());
  return n;
}

double& MlpNet::parameter(std::size_t k) {
  for (auto& l : layers) {
    const auto w = static_cast<std::size_t>(l.W.size());
    if (k < w) return l.W.data()[k];
    k -= w;
    const auto b = static_cast<std::size_t>(l.b.size());
    if (k < b) return l.b[static_cast<Eigen::Index>(k)];
    k -= b;
  }
  throw NnError("parameter index out of range");
}

bool MlpNet::operator==(const MlpNet& o) const {
  if (layers.size() != o.layers.size() || dropout_rate != o.dropout_rate) return false;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].W != o.layers[i].W || layers[i].b != o.layers[i].b) return false;
  return true;
}

MlpNet make_mlp(const std::vector<std::size_t>& dims, Rng& rng, double dropout_rate) {
  if (dims.size() < 2) throw NnError("an MLP needs at least input and output widths");
  for (auto d : dims)
    if (d == 0) throw NnError("layer widths must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw NnError("dropout rate must be in [0, 1)");
  MlpNet net;
  net.dropout_rate = dropout_rate;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(dims[l]);
    const auto out = static_cast<Eigen::Index>(dims[l + 1]);
    const bool last = l + 2 == dims.size();
    const double sd = last ? std::sqrt(2.0 / double(in + out)) : std::sqrt(2.0 / double(in));
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (Eigen::Index i = 0; i < layer.W.size(); ++i) layer.W.data()[i] = sd * rng.normal();
    net.layers.push_back(std::move(layer));
  }
  return net;
}

namespace {

void check_input(const MlpNet& net, const Eigen::MatrixXd& X) {
  if (net.layers.empty()) throw NnError("empty network");
  if (static_cast<std::size_t>(X.cols()) != net.input_dim())
    throw NnError("input width " + std::to_string(X.cols()) + " does not match network input " +
                  std::to_string(net.input_dim()));
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd M(rows, cols);
  // row-major draw order keeps streams stable when only cols change
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) M(i, j) = rng.normal();
  return M;
}

// Row by row so a sample's output does not depend on its position in the batch.
Eigen::MatrixXd affine(const Eigen::MatrixXd& A, const DenseLayer& layer) {
  Eigen::MatrixXd Z(A.rows(), layer.W.rows());
  const Eigen::MatrixXd Wt = layer.W.transpose();
  for (Eigen::Index i = 0; i < A.rows(); ++i) Z.row(i).noalias() = A.row(i) * Wt + layer.b.transpose();
  return Z;
}

double relative_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

double gradient_at(const Gradients& g, std::size_t k) {
  for (std::size_t l = 0; l < g.dW.size(); ++l) {
    const auto w = static_cast<std::size_t>(g.dW[l].size());
    if (k < w) return g.dW[l].data()[k];
    k -= w;
    const auto b = static_cast<std::size_t>(g.db[l].size());
    if (k < b) return g.db[l][static_cast<Eigen::Index>(k)];
    k -= b;
  }
  throw NnError("gradient index out of range");
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  const std::size_t b = std::max<std::size_t>(1, std::min(batch_size, n));
  const auto order = permutation(n, rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += b) out.emplace_back(order.begin() + long(s), order.begin() + long(std::min(n, s + b)));
  return out;
}

void check_config(const TrainConfig& c) {
  if (c.batch_size == 0) throw NnError("batch_size must be positive");
  if (!(c.learning_rate > 0.0)) throw NnError("learning_rate must be positive");
}

}  // namespace

Eigen::MatrixXd forward(const MlpNet& net, const Eigen::MatrixXd& X) {
  check_input(net, X);
  Eigen::MatrixXd A = X;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    Eigen::MatrixXd Z = affine(A, layer);
    A = l + 1 < net.layers.size() ? Eigen::MatrixXd(Z.cwiseMax(0.0)) : std::move(Z);
  }
  return A;
}

Gradients Gradients::zeros_like(const MlpNet& net) {
  Gradients g;
  for (const auto& l : net.layers) {
    g.dW.push_back(Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()));
    g.db.push_back(Eigen::VectorXd::Zero(l.b.size()));
  }
  return g;
}

Eigen::MatrixXd forward_train(const MlpNet& net, const Eigen::MatrixXd& X, ForwardCache& cache, Rng* dropout_rng) {
  check_input(net, X);
  cache.inputs.assign(net.layers.size(), {});
  cache.pre.assign(net.layers.size(), {});
  cache.masks.assign(net.layers.size(), {});
  Eigen::MatrixXd A = X;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    cache.inputs[l] = A;
    cache.pre[l] = affine(A, layer);
    if (l + 1 == net.layers.size()) return cache.pre[l];
    A = cache.pre[l].cwiseMax(0.0);
    if (dropout_rng && net.dropout_rate > 0.0) {
      const double keep = 1.0 - net.dropout_rate;
      Eigen::MatrixXd mask(A.rows(), A.cols());
      for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j) mask(i, j) = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
      A = A.cwiseProduct(mask);
      cache.masks[l] = std::move(mask);
    }
  }
  return A;
}

Eigen::MatrixXd backward(const MlpNet& net, const ForwardCache& cache, const Eigen::MatrixXd& dOut, Gradients* grads) {
  Eigen::MatrixXd dA = dOut;
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    Eigen::MatrixXd dZ = dA;
    if (l + 1 < net.layers.size()) {
      if (cache.masks[l].size()) dZ = dZ.cwiseProduct(cache.masks[l]);
      dZ = (cache.pre[l].array() > 0.0).select(dZ, 0.0);
    }
    if (grads) {
      grads->dW[l].noalias() += dZ.transpose() * cache.inputs[l];
      grads->db[l] += dZ.colwise().sum().transpose();
    }
    dA = dZ * net.layers[l].W;
  }
  return dA;
}

Adam::Adam(const MlpNet& net, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps), m_(Gradients::zeros_like(net)),
      v_(Gradients::zeros_like(net)) {}

void Adam::step(MlpNet& net, const Gradients& g) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, double(t_));
  const double c2 = 1.0 - std::pow(b2_, double(t_));
  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = b1_ * m + (1.0 - b1_) * grad;
    v = b2_ * v + (1.0 - b2_) * grad.cwiseProduct(grad);
    param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    update(net.layers[l].W, g.dW[l], m_.dW[l], v_.dW[l]);
    update(net.layers[l].b, g.db[l], m_.db[l], v_.db[l]);
  }
}

double mse_loss(const Eigen::MatrixXd& out, const Eigen::MatrixXd& target) {
  if (out.rows() != target.rows() || out.cols() != target.cols()) throw NnError("loss shape mismatch");
  if (out.size() == 0) return 0.0;
  return (out - target).squaredNorm() / static_cast<double>(out.size());
}

double gradient_check(const MlpNet& net, const Eigen::MatrixXd& X, const Eigen::MatrixXd& target,
                      const std::vector<std::size_t>& slice) {
  if (slice.size() > 50) throw NnError("gradient check slice is limited to 50 parameters");
  ForwardCache cache;
  const auto out = forward_train(net, X, cache, nullptr);
  auto g = Gradients::zeros_like(net);
  backward(net, cache, 2.0 * (out - target) / static_cast<double>(out.size()), &g);

  constexpr double h = 1e-5;
  double worst = 0.0;
  MlpNet probe = net;
  for (auto k : slice) {
    double& p = probe.parameter(k);
    const double saved = p;
    p = saved + h;
    const double up = mse_loss(forward(probe, X), target);
    p = saved - h;
    const double down = mse_loss(forward(probe, X), target);
    p = saved;
    worst = std::max(worst, relative_error(gradient_at(g, k), (up - down) / (2 * h)));
  }
  return worst;
}

// ---- FFNN ----

Eigen::VectorXd FfnnRegressor::predict(const Eigen::MatrixXd& X) const {
  return (forward(net, X).col(0).array() * y_scale + y_mean).matrix();
}

FfnnResult train_ffnn(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const SplitIndices& split,
                      const FfnnArch& arch, const TrainConfig& config) {
  check_config(config);
  if (X.rows() != y.size()) throw NnError("X and y row counts differ");
  if (split.train.empty() || split.test.empty()) throw NnError("split needs train and test rows");
  const auto Xtr = select_rows(X, split.train);
  const auto ytr = select_rows(y, split.train);
  const auto Xva = select_rows(X, split.validation);
  const auto yva = select_rows(y, split.validation);

  Rng rng(config.seed);
  FfnnResult out;
  auto& model = out.model;
  model.y_mean = ytr.mean();
  const double sd = std::sqrt((ytr.array() - model.y_mean).square().mean());
  model.y_scale = sd > 1e-12 * std::max(1.0, std::abs(model.y_mean)) ? sd : 1.0;

  std::vector<std::size_t> dims{static_cast<std::size_t>(X.cols())};
  dims.insert(dims.end(), arch.hidden.begin(), arch.hidden.end());
  dims.push_back(1);
  model.net = make_mlp(dims, rng, arch.dropout_rate);
  Adam adam(model.net, config.learning_rate);

  const Eigen::MatrixXd ttr = ((ytr.array() - model.y_mean) / model.y_scale).matrix();
  const Eigen::MatrixXd tva = ((yva.array() - model.y_mean) / model.y_scale).matrix();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double acc = 0.0;
    for (const auto& b : batches(static_cast<std::size_t>(Xtr.rows()), config.batch_size, rng)) {
      const auto xb = select_rows(Xtr, b);
      const Eigen::MatrixXd tb = select_rows(Eigen::VectorXd(ttr.col(0)), b);
      ForwardCache cache;
      const auto pred = forward_train(model.net, xb, cache, &rng);
      acc += mse_loss(pred, tb) * double(b.size());
      auto g = Gradients::zeros_like(model.net);
      backward(model.net, cache, 2.0 * (pred - tb) / double(pred.size()), &g);
      adam.step(model.net, g);
    }
    const double train_loss = acc / double(Xtr.rows());
    if (!std::isfinite(train_loss)) throw NnDivergence("FFNN training", epoch);
    out.train_loss.push_back(train_loss);
    out.validation_loss.push_back(Xva.rows() ? mse_loss(forward(model.net, Xva), tva) : 0.0);
  }
  out.test = metrics(select_rows(y, split.test), model.predict(select_rows(X, split.test)));
  if (Xva.rows()) out.validation = metrics(yva, model.predict(Xva));
  return out;
}

// ---- VAE ----

double kl_divergence(const Eigen::Ref<const Eigen::VectorXd>& mu, const Eigen::Ref<const Eigen::VectorXd>& logvar) {
  if (mu.size() != logvar.size()) throw NnError("mu and logvar lengths differ");
  return -0.5 * (1.0 + logvar.array() - mu.array().square() - logvar.array().exp()).sum();
}

VaeModel make_vae(std::size_t input_dim, std::size_t latent_dim, Rng& rng) {
  if (latent_dim == 0) throw NnError("latent_dim must be positive");
  VaeModel vae;
  vae.latent_dim = latent_dim;
  vae.encoder = make_mlp({input_dim, 128, 32, 2 * latent_dim}, rng);
  vae.decoder = make_mlp({latent_dim, 32, 128, input_dim}, rng);
  return vae;
}

VaeLoss vae_loss(const VaeModel& vae, const Eigen::MatrixXd& X, const Eigen::MatrixXd& eps, double beta,
                 Gradients* encoder_grads, Gradients* decoder_grads) {
  const auto L = static_cast<Eigen::Index>(vae.latent_dim);
  if (eps.rows() != X.rows() || eps.cols() != L) throw NnError("reparameterization noise has the wrong shape");
  const double B = static_cast<double>(X.rows());
  ForwardCache ce, cd;
  const auto H = forward_train(vae.encoder, X, ce, nullptr);
  const Eigen::MatrixXd mu = H.leftCols(L);
  const Eigen::MatrixXd logvar = H.rightCols(L);
  const Eigen::MatrixXd sd = (0.5 * logvar.array()).exp().matrix();
  const Eigen::MatrixXd Z = mu + sd.cwiseProduct(eps);
  const auto Xh = forward_train(vae.decoder, Z, cd, nullptr);

  VaeLoss loss;
  loss.reconstruction = mse_loss(Xh, X);
  for (Eigen::Index i = 0; i < X.rows(); ++i) loss.kl += kl_divergence(mu.row(i).transpose(), logvar.row(i).transpose());
  loss.kl /= B;
  loss.total = loss.reconstruction + beta * loss.kl;

  if (encoder_grads && decoder_grads) {
    const Eigen::MatrixXd dXh = 2.0 * (Xh - X) / static_cast<double>(Xh.size());
    const Eigen::MatrixXd dZ = backward(vae.decoder, cd, dXh, decoder_grads);
    Eigen::MatrixXd dH(H.rows(), H.cols());
    dH.leftCols(L) = dZ + beta * mu / B;
    dH.rightCols(L) = (dZ.cwiseProduct(eps).cwiseProduct(sd) * 0.5).array() +
                      beta * 0.5 * (logvar.array().exp() - 1.0) / B;
    backward(vae.encoder, ce, dH, encoder_grads);
  }
  return loss;
}

double vae_gradient_check(const VaeModel& vae, const Eigen::MatrixXd& X, const Eigen::MatrixXd& eps, double beta,
                          const std::vector<std::size_t>& slice) {
  if (slice.size() > 50) throw NnError("gradient check slice is limited to 50 parameters");
  auto ge = Gradients::zeros_like(vae.encoder);
  auto gd = Gradients::zeros_like(vae.decoder);
  vae_loss(vae, X, eps, beta, &ge, &gd);
  const std::size_t pe = vae.encoder.parameter_count();

  constexpr double h = 1e-5;
  double worst = 0.0;
  VaeModel probe = vae;
  for (auto k : slice) {
    double& p = k < pe ? probe.encoder.parameter(k) : probe.decoder.parameter(k - pe);
    const double saved = p;
    p = saved + h;
    const double up = vae_loss(probe, X, eps, beta).total;
    p = saved - h;
    const double down = vae_loss(probe, X, eps, beta).total;
    p = saved;
    const double analytic = k < pe ? gradient_at(ge, k) : gradient_at(gd, k - pe);
    worst = std::max(worst, relative_error(analytic, (up - down) / (2 * h)));
  }
  return worst;
}

VaeResult train_vae(const Eigen::MatrixXd& X, std::size_t latent_dim, const VaeConfig& config) {
  check_config(config.train);
  if (X.rows() < 1) throw NnError("VAE training needs at least one row");
  if (!(config.beta >= 0.0)) throw NnError("beta must be >= 0");
  Rng rng(config.train.seed);
  VaeResult out;
  out.model = make_vae(static_cast<std::size_t>(X.cols()), latent_dim, rng);
  Adam enc_opt(out.model.encoder, config.train.learning_rate);
  Adam dec_opt(out.model.decoder, config.train.learning_rate);

  const auto epochs = config.train.epochs;
  const auto warmup = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(config.warmup_fraction * static_cast<double>(epochs))));
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const double beta =
        config.warmup_fraction > 0.0 ? config.beta * std::min(1.0, double(epoch + 1) / double(warmup)) : config.beta;
    VaeEpoch rec;
    rec.beta = beta;
    for (const auto& b : batches(static_cast<std::size_t>(X.rows()), config.train.batch_size, rng)) {
      const auto xb = select_rows(X, b);
      const auto eps = normal_matrix(xb.rows(), static_cast<Eigen::Index>(latent_dim), rng);
      auto ge = Gradients::zeros_like(out.model.encoder);
      auto gd = Gradients::zeros_like(out.model.decoder);
      const auto loss = vae_loss(out.model, xb, eps, beta, &ge, &gd);
      const double w = double(b.size()) / double(X.rows());
      rec.total += w * loss.total;
      rec.reconstruction += w * loss.reconstruction;
      rec.kl += w * loss.kl;
      enc_opt.step(out.model.encoder, ge);
      dec_opt.step(out.model.decoder, gd);
    }
    if (!std::isfinite(rec.total)) throw NnDivergence("VAE training", epoch);
    out.trace.push_back(rec);
  }
  return out;
}

Eigen::MatrixXd encode(const VaeModel& vae, const Eigen::MatrixXd& X) {
  if (static_cast<std::size_t>(X.cols()) != vae.encoder.input_dim())
    throw NnError("encode: input width does not match the VAE");
  if (X.rows() == 0) return Eigen::MatrixXd(0, static_cast<Eigen::Index>(vae.latent_dim));
  return forward(vae.encoder, X).leftCols(static_cast<Eigen::Index>(vae.latent_dim));
}

Eigen::MatrixXd decode(const VaeModel& vae, const Eigen::MatrixXd& Z) { return forward(vae.decoder, Z); }

// ---- GAN ----

GanModel make_gan(std::size_t output_dim, std::size_t noise_dim, Rng& rng) {
  GanModel gan;
  gan.noise_dim = noise_dim;
  gan.generator = make_mlp({noise_dim, 128, output_dim}, rng);
  gan.discriminator = make_mlp({output_dim, 128, 1}, rng);
  return gan;
}

GanResult train_gan(const Eigen::MatrixXd& X, const TrainConfig& config, std::size_t noise_dim) {
  check_config(config);
  if (X.rows() < 1) throw NnError("GAN training needs at least one row");
  Rng rng(config.seed);
  GanResult out;
  auto& gan = out.model;
  gan = make_gan(static_cast<std::size_t>(X.cols()), noise_dim, rng);
  Adam d_opt(gan.discriminator, config.learning_rate);
  Adam g_opt(gan.generator, config.learning_rate);
  const auto nz = static_cast<Eigen::Index>(noise_dim);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    GanEpoch rec;
    std::size_t steps = 0;
    for (const auto& b : batches(static_cast<std::size_t>(X.rows()), config.batch_size, rng)) {
      const auto real = select_rows(X, b);
      const auto B = real.rows();
      const double inv = 1.0 / double(B);

      // discriminator step
      const auto fake = forward(gan.generator, normal_matrix(B, nz, rng));
      ForwardCache cr, cf;
      const auto lr = forward_train(gan.discriminator, real, cr, nullptr);
      const auto lf = forward_train(gan.discriminator, fake, cf, nullptr);
      Eigen::MatrixXd dr(B, 1), df(B, 1);
      double d_loss = 0.0;
      for (Eigen::Index i = 0; i < B; ++i) {
        d_loss += (softplus(-lr(i, 0)) + softplus(lf(i, 0))) * inv;
        dr(i, 0) = (sigmoid(lr(i, 0)) - 1.0) * inv;
        df(i, 0) = sigmoid(lf(i, 0)) * inv;
      }
      auto gd = Gradients::zeros_like(gan.discriminator);
      backward(gan.discriminator, cr, dr, &gd);
      backward(gan.discriminator, cf, df, &gd);
      d_opt.step(gan.discriminator, gd);

      // generator step, non-saturating
      ForwardCache cg, cd;
      const auto gen = forward_train(gan.generator, normal_matrix(B, nz, rng), cg, nullptr);
      const auto lg = forward_train(gan.discriminator, gen, cd, nullptr);
      Eigen::MatrixXd dg(B, 1);
      double g_loss = 0.0;
      for (Eigen::Index i = 0; i < B; ++i) {
        g_loss += softplus(-lg(i, 0)) * inv;
        dg(i, 0) = (sigmoid(lg(i, 0)) - 1.0) * inv;
      }
      const auto dsample = backward(gan.discriminator, cd, dg, nullptr);
      auto gg = Gradients::zeros_like(gan.generator);
      backward(gan.generator, cg, dsample, &gg);
      g_opt.step(gan.generator, gg);

      rec.discriminator_loss += d_loss;
      rec.generator_loss += g_loss;
      ++steps;
    }
    rec.discriminator_loss /= double(steps);
    rec.generator_loss /= double(steps);
    if (!std::isfinite(rec.discriminator_loss) || !std::isfinite(rec.generator_loss))
      throw NnDivergence("GAN training", epoch);
    out.trace.push_back(rec);
  }
  return out;
}

Eigen::MatrixXd generate(const GanModel& gan, std::size_t n, Rng& rng) {
  if (n == 0) return Eigen::MatrixXd(0, static_cast<Eigen::Index>(gan.generator.output_dim()));
  return forward(gan.generator, normal_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(gan.noise_dim), rng));
}

double discriminator_accuracy(const GanModel& gan, const Eigen::MatrixXd& real, Rng& rng) {
  if (real.rows() == 0) throw NnError("accuracy needs at least one real row");
  const auto fake = generate(gan, static_cast<std::size_t>(real.rows()), rng);
  const auto lr = forward(gan.discriminator, real);
  const auto lf = forward(gan.discriminator, fake);
  const double correct = double((lr.array() > 0.0).count() + (lf.array() <= 0.0).count());
  return correct / double(2 * real.rows());
}

double sample_variance_statistic(const Eigen::MatrixXd& samples) {
  if (samples.rows() == 0 || samples.cols() == 0) return 0.0;
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  return ((samples.rowwise() - mean).array().square().colwise().sum() / double(samples.rows())).mean();
}

ProjectionRecord project_to_feasible(const MetabolicModel& model, Eigen::VectorXd& v, const ToleranceConfig& tol) {
  const auto S = stoichiometric_matrix(model);
  const std::size_t n = S.cols;
  if (static_cast<std::size_t>(v.size()) != n) throw NnError("flux vector length does not match the model");
  const auto lb = model.lower_bounds();
  const auto ub = model.upper_bounds();
  for (std::size_t j = 0; j < n; ++j) v[long(j)] = std::clamp(v[long(j)], lb[j], ub[j]);

  auto residual = [&](const Eigen::VectorXd& x) {
    const auto r = S.multiply(std::vector<double>(x.data(), x.data() + x.size()));
    double worst = 0.0;
    for (double e : r) worst = std::max(worst, std::abs(e));
    return worst;
  };
  ProjectionRecord rec;
  rec.residual_before = residual(v);
  rec.residual_after = rec.residual_before;
  if (rec.residual_before <= tol.feasibility) {
    rec.status = "already-feasible";
    return rec;
  }

  // variables [v, d+, d-]: maximize -sum(d+ + d-) s.t. S v = 0, v - d+ + d- = s
  std::vector<SparseStoichMatrix::Entry> trip = S.entries;
  for (std::size_t j = 0; j < n; ++j) {
    trip.push_back({S.rows + j, j, 1.0});
    trip.push_back({S.rows + j, n + j, -1.0});
    trip.push_back({S.rows + j, 2 * n + j, 1.0});
  }
  LpProblem lp;
  lp.constraints = SparseStoichMatrix::from_triplets(S.rows + n, 3 * n, std::move(trip));
  lp.objective.assign(3 * n, -1.0);
  lp.rhs.assign(S.rows + n, 0.0);
  lp.lower.assign(3 * n, 0.0);
  lp.upper.assign(3 * n, std::numeric_limits<double>::infinity());
  for (std::size_t j = 0; j < n; ++j) {
    lp.objective[j] = 0.0;
    lp.lower[j] = lb[j];
    lp.upper[j] = ub[j];
    lp.rhs[S.rows + j] = v[long(j)];
  }
  try {
    const auto sol = solve_bounded_lp(lp, tol);
    if (sol.status != LpStatus::Optimal) {
      rec.status = "infeasible";
      return rec;
    }
    Eigen::VectorXd w(static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) w[long(j)] = std::clamp(sol.x[j], lb[j], ub[j]);
    const double after = residual(w);
    if (after > rec.residual_before) {
      rec.status = "failed";
      return rec;
    }
    rec.distance = (w - v).lpNorm<1>();
    rec.residual_after = after;
    rec.status = "projected";
    v = std::move(w);
  } catch (const LpError&) {
    rec.status = "failed";
  }
  return rec;
}

GeneratedFluxes generate_and_project(const GanModel& gan, const Standardizer& scaler, const MetabolicModel& model,
                                     std::size_t n, std::uint64_t seed) {
  const auto R = model.reactions().size();
  if (gan.generator.output_dim() != R || scaler.size() != R)
    throw NnError("GAN width " + std::to_string(gan.generator.output_dim()) + " does not match the model's " +
                  std::to_string(R) + " reactions");
  GeneratedFluxes out;
  out.samples = Eigen::MatrixXd(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(R));
  if (n == 0) return out;
  Rng rng(seed);
  Eigen::MatrixXd raw = scaler.inverse(generate(gan, n, rng));
  const auto lb = model.lower_bounds();
  const auto ub = model.upper_bounds();
  for (Eigen::Index i = 0; i < raw.rows(); ++i)
    for (std::size_t j = 0; j < R; ++j) raw(i, long(j)) = std::clamp(raw(i, long(j)), lb[j], ub[j]);
  out.variance_statistic = sample_variance_statistic(raw);
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    Eigen::VectorXd v = raw.row(i).transpose();
    out.report.push_back(project_to_feasible(model, v));
    out.samples.row(i) = v.transpose();
  }
  return out;
}

// ---- Serialization ----

ordered_json mlp_to_json(const MlpNet& net) {
  ordered_json j;
  j["architecture"] = net.dims();
  j["activation"] = "relu-hidden-linear-output";
  j["dropout_rate"] = net.dropout_rate;
  j["layers"] = ordered_json::array();
  for (const auto& l : net.layers) {
    ordered_json layer;
    ordered_json rows = ordered_json::array();
    for (Eigen::Index r = 0; r < l.W.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(l.W.cols()));
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) row[std::size_t(c)] = l.W(r, c);
      rows.push_back(row);
    }
    layer["W"] = std::move(rows);
    layer["b"] = std::vector<double>(l.b.data(), l.b.data() + l.b.size());
    j["layers"].push_back(std::move(layer));
  }
  return j;
}

MlpNet mlp_from_json(const json& doc) {
  const auto dims = doc.at("architecture").get<std::vector<std::size_t>>();
  const auto& layers = doc.at("layers");
  if (dims.size() != layers.size() + 1) throw NnError("architecture header does not match layer count");
  MlpNet net;
  net.dropout_rate = doc.value("dropout_rate", 0.0);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto rows = layers[l].at("W").get<std::vector<std::vector<double>>>();
    const auto b = layers[l].at("b").get<std::vector<double>>();
    if (rows.size() != dims[l + 1] || b.size() != dims[l + 1]) throw NnError("layer width mismatch");
    DenseLayer layer{Eigen::MatrixXd(long(dims[l + 1]), long(dims[l])), Eigen::VectorXd(long(b.size()))};
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != dims[l]) throw NnError("layer input width mismatch");
      for (std::size_t c = 0; c < dims[l]; ++c) layer.W(long(r), long(c)) = rows[r][c];
    }
    for (std::size_t r = 0; r < b.size(); ++r) layer.b[long(r)] = b[r];
    net.layers.push_back(std::move(layer));
  }
  return net;
}

}  // namespace fluxml
