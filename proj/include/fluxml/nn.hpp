#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "fluxml/dataset.hpp"
#include "fluxml/lp.hpp"
#include "fluxml/model.hpp"
#include "fluxml/rng.hpp"
#include "fluxml/tree.hpp"

namespace fluxml {

class NnError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a training loss becomes NaN or infinite.
class NnDivergence : public NnError {
 public:
  NnDivergence(const std::string& what, std::size_t epoch);
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

struct DenseLayer {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;
};

/// ReLU on every hidden layer, linear output. Samples are rows.
struct MlpNet {
  std::vector<DenseLayer> layers;
  /// Inverted dropout on hidden activations, training only.
  double dropout_rate = 0.0;

  std::size_t input_dim() const { return static_cast<std::size_t>(layers.front().W.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(layers.back().W.rows()); }
  std::vector<std::size_t> dims() const;
  std::size_t parameter_count() const;
  /// Flat order: per layer, W column-major then b.
  double& parameter(std::size_t k);
  bool operator==(const MlpNet& o) const;
};

/// He-normal weights on ReLU-fed layers, Glorot-normal on the output layer, zero biases.
MlpNet make_mlp(const std::vector<std::size_t>& dims, Rng& rng, double dropout_rate = 0.0);

Eigen::MatrixXd forward(const MlpNet& net, const Eigen::MatrixXd& X);

struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer
  std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
  std::vector<Eigen::MatrixXd> masks;   // dropout scale per hidden layer, empty if none
};

struct Gradients {
  std::vector<Eigen::MatrixXd> dW;
  std::vector<Eigen::VectorXd> db;

  static Gradients zeros_like(const MlpNet& net);
};

/// Forward pass that records what backward() needs. Dropout is applied
/// only when `dropout_rng` is non-null.
Eigen::MatrixXd forward_train(const MlpNet& net, const Eigen::MatrixXd& X, ForwardCache& cache, Rng* dropout_rng);

/// Accumulates parameter gradients of a loss with output gradient dOut into
/// `grads` and returns the gradient with respect to the input.
Eigen::MatrixXd backward(const MlpNet& net, const ForwardCache& cache, const Eigen::MatrixXd& dOut, Gradients* grads);

class Adam {
 public:
  Adam(const MlpNet& net, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(MlpNet& net, const Gradients& g);

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  Gradients m_, v_;
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

double mse_loss(const Eigen::MatrixXd& out, const Eigen::MatrixXd& target);

/// Max over the slice of |analytic - numeric| / max(|analytic|, |numeric|, 1e-6)
/// for the MSE loss of forward(X) against target, using central differences
/// with step 1e-5. Dropout is disabled for the check. Slice size at most 50.
double gradient_check(const MlpNet& net, const Eigen::MatrixXd& X, const Eigen::MatrixXd& target,
                      const std::vector<std::size_t>& slice);

// ---- FFNN ----

struct FfnnArch {
  std::vector<std::size_t> hidden{128, 64};
  double dropout_rate = 0.1;
};

/// Net trained on targets normalized by the training mean and spread.
struct FfnnRegressor {
  MlpNet net;
  double y_mean = 0.0;
  double y_scale = 1.0;

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
};

struct FfnnResult {
  FfnnRegressor model;
  RegressionMetrics test;
  RegressionMetrics validation;
  std::vector<double> train_loss;       // per epoch, normalized target units
  std::vector<double> validation_loss;  // per epoch, normalized target units
};

/// X is expected to be standardized already. Per epoch the training rows are
/// reshuffled from the seeded stream and dropout masks come from the same stream.
FfnnResult train_ffnn(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const SplitIndices& split,
                      const FfnnArch& arch = {}, const TrainConfig& config = {});

// ---- VAE ----

struct VaeModel {
  MlpNet encoder;  // R -> ... -> 2 * latent_dim (mu, logvar)
  MlpNet decoder;  // latent_dim -> ... -> R
  std::size_t latent_dim = 2;
};

struct VaeConfig {
  TrainConfig train;
  double beta = 1.0;
  /// KL weight ramps linearly from beta/warmup_epochs to beta over this share of epochs.
  double warmup_fraction = 0.1;
};

struct VaeEpoch {
  double total = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  double beta = 0.0;
};

struct VaeResult {
  VaeModel model;
  std::vector<VaeEpoch> trace;
};

/// -1/2 * sum(1 + logvar - mu^2 - exp(logvar))
double kl_divergence(const Eigen::Ref<const Eigen::VectorXd>& mu, const Eigen::Ref<const Eigen::VectorXd>& logvar);

/// Encoder R->128->32->2L, decoder L->32->128->R.
VaeModel make_vae(std::size_t input_dim, std::size_t latent_dim, Rng& rng);

struct VaeLoss {
  double total = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
};

/// Batch loss with fixed reparameterization noise eps (rows x latent_dim):
/// mean squared reconstruction error over entries + beta * mean per-row KL.
/// Gradients are accumulated when both pointers are non-null.
VaeLoss vae_loss(const VaeModel& vae, const Eigen::MatrixXd& X, const Eigen::MatrixXd& eps, double beta,
                 Gradients* encoder_grads = nullptr, Gradients* decoder_grads = nullptr);

/// Same relative error as gradient_check, over a slice of the concatenated
/// encoder then decoder parameters.
double vae_gradient_check(const VaeModel& vae, const Eigen::MatrixXd& X, const Eigen::MatrixXd& eps, double beta,
                          const std::vector<std::size_t>& slice);

VaeResult train_vae(const Eigen::MatrixXd& X, std::size_t latent_dim = 2, const VaeConfig& config = {});

/// Posterior means, no sampling.
Eigen::MatrixXd encode(const VaeModel& vae, const Eigen::MatrixXd& X);
Eigen::MatrixXd decode(const VaeModel& vae, const Eigen::MatrixXd& Z);

// ---- GAN ----

struct GanModel {
  MlpNet generator;      // noise_dim -> 128 -> R
  MlpNet discriminator;  // R -> 128 -> 1, logit output
  std::size_t noise_dim = 32;
};

struct GanEpoch {
  double discriminator_loss = 0.0;
  double generator_loss = 0.0;
};

struct GanResult {
  GanModel model;
  std::vector<GanEpoch> trace;
};

GanModel make_gan(std::size_t output_dim, std::size_t noise_dim, Rng& rng);

/// One discriminator step then one generator step per minibatch. The
/// generator uses the non-saturating loss -log D(G(z)).
GanResult train_gan(const Eigen::MatrixXd& X, const TrainConfig& config = {}, std::size_t noise_dim = 32);

/// n x R samples in the training (standardized) space.
Eigen::MatrixXd generate(const GanModel& gan, std::size_t n, Rng& rng);

/// Share of correctly classified rows over the real rows plus an equal
/// number of generated rows; logit > 0 means real.
double discriminator_accuracy(const GanModel& gan, const Eigen::MatrixXd& real, Rng& rng);

/// Mean over columns of the population variance down each column.
double sample_variance_statistic(const Eigen::MatrixXd& samples);

struct ProjectionRecord {
  double residual_before = 0.0;  // ||S v||_inf after clamping to bounds
  double residual_after = 0.0;
  double distance = 0.0;         // L1 distance moved by the projection
  std::string status;            // projected | already-feasible | infeasible | failed
};

struct GeneratedFluxes {
  Eigen::MatrixXd samples;  // n x R, physical units, after projection
  std::vector<ProjectionRecord> report;
  double variance_statistic = 0.0;  // of the de-standardized, clamped samples
};

/// Nearest point in L1 to `v` with S v = 0 and lb <= v <= ub.
ProjectionRecord project_to_feasible(const MetabolicModel& model, Eigen::VectorXd& v, const ToleranceConfig& tol = {});

/// Samples from the generator, de-standardizes with `scaler`, clamps each
/// vector to the model bounds and projects it. Columns of the GAN must
/// follow the model's reaction order.
GeneratedFluxes generate_and_project(const GanModel& gan, const Standardizer& scaler, const MetabolicModel& model,
                                     std::size_t n, std::uint64_t seed);

// ---- Serialization ----

nlohmann::ordered_json mlp_to_json(const MlpNet& net);
MlpNet mlp_from_json(const nlohmann::json& doc);

}  // namespace fluxml
