#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "detm/corpus.hpp"
#include "detm/embeddings.hpp"
#include "detm/rng.hpp"

namespace detm {

struct ModelConfig {
  int topic_count = 50;
  int window_count = 8;
  int vocab_size = 0;     // filled from the vocabulary
  int embed_dim = 0;      // filled from the embedding matrix
  double delta_alpha = 0.005;  // topic-walk transition variance
  double delta_eta = 0.005;    // mixture-walk transition variance
  int encoder_hidden = 256;
  int rnn_hidden = 64;
  double encoder_dropout = 0.0;

  void validate() const;
  // Realizes a mixture-to-topic delta ratio while keeping the geometric mean
  // of the two variances at the 0.005 anchor.
  void set_delta_ratio(double ratio);
};

// Noise source for reparameterized draws. Evaluation passes zeros; training
// passes Gaussians; gradient checks record one stream and replay it.
class EpsilonSource {
 public:
  virtual ~EpsilonSource() = default;
  virtual Eigen::MatrixXd draw(Eigen::Index rows, Eigen::Index cols) = 0;
};

class ZeroEpsilon final : public EpsilonSource {
 public:
  Eigen::MatrixXd draw(Eigen::Index rows, Eigen::Index cols) override {
    return Eigen::MatrixXd::Zero(rows, cols);
  }
};

class GaussianEpsilon final : public EpsilonSource {
 public:
  explicit GaussianEpsilon(Rng& rng) : rng_(&rng) {}
  Eigen::MatrixXd draw(Eigen::Index rows, Eigen::Index cols) override;

 private:
  Rng* rng_;
};

class RecordingEpsilon final : public EpsilonSource {
 public:
  explicit RecordingEpsilon(EpsilonSource& inner) : inner_(&inner) {}
  Eigen::MatrixXd draw(Eigen::Index rows, Eigen::Index cols) override;
  const std::vector<Eigen::MatrixXd>& recorded() const { return draws_; }

 private:
  EpsilonSource* inner_;
  std::vector<Eigen::MatrixXd> draws_;
};

class ReplayEpsilon final : public EpsilonSource {
 public:
  explicit ReplayEpsilon(std::vector<Eigen::MatrixXd> draws)
      : draws_(std::move(draws)) {}
  Eigen::MatrixXd draw(Eigen::Index rows, Eigen::Index cols) override;
  void rewind() { cursor_ = 0; }

 private:
  std::vector<Eigen::MatrixXd> draws_;
  std::size_t cursor_ = 0;
};

// All model parameters. Variational Gaussians over per-window topic
// embeddings are stored flat: row t * K + k of alpha_* is the (t, k) vector.
struct DETMParameters {
  ModelConfig config;
  EmbeddingMatrix rho;  // fixed, not trained

  Eigen::MatrixXd alpha_mean, alpha_logvar;  // (T*K) x L

  // Gated recurrent cell over window statistics rows.
  Eigen::MatrixXd gru_wx_z, gru_wx_r, gru_wx_h;  // V x H
  Eigen::MatrixXd gru_wh_z, gru_wh_r, gru_wh_h;  // H x H
  Eigen::MatrixXd gru_b_z, gru_b_r, gru_b_h;     // 1 x H

  // Heads mapping [h_t, eta_{t-1}] to the eta Gaussian.
  Eigen::MatrixXd eta_mean_w, eta_logvar_w;  // (H+K) x K
  Eigen::MatrixXd eta_mean_b, eta_logvar_b;  // 1 x K

  // Document encoder: [normalized bow, eta_t] -> theta Gaussian.
  Eigen::MatrixXd enc_w1, enc_b1;  // (V+K) x E, 1 x E
  Eigen::MatrixXd enc_w2, enc_b2;  // E x E, 1 x E
  Eigen::MatrixXd theta_mean_w, theta_mean_b;      // E x K, 1 x K
  Eigen::MatrixXd theta_logvar_w, theta_logvar_b;  // E x K, 1 x K

  // Trainable tensors with stable names, in a fixed order.
  std::vector<std::pair<std::string, Eigen::MatrixXd*>> parameter_groups();
  std::vector<std::pair<std::string, const Eigen::MatrixXd*>> parameter_groups() const;

  Eigen::Block<Eigen::MatrixXd> alpha_mean_at(int t);
  bool all_finite() const;
};

struct LossBreakdown {
  double nll = 0.0;       // reconstruction negative log-likelihood
  double kl_theta = 0.0;
  double kl_eta = 0.0;
  double kl_alpha = 0.0;
  double total = 0.0;
  bool reweighted = false;
};

DETMParameters init_model(const ModelConfig& config, EmbeddingMatrix rho,
                          std::uint64_t seed);

struct EtaResult {
  Eigen::MatrixXd mean, logvar, sample;  // T x K
};
EtaResult infer_eta(const WindowStats& stats, const DETMParameters& params,
                    EpsilonSource& eps);

struct ThetaResult {
  Eigen::VectorXd mean_logits, logvar;  // K
  Eigen::VectorXd theta;                // K-simplex point
};
ThetaResult infer_theta(const BagOfWords& bow, const Eigen::VectorXd& eta_t,
                        const DETMParameters& params, EpsilonSource& eps);

// Encoder pass over many bags at once; row d of each output corresponds to
// batch[d], with eta taken from the bag's window row of eta_by_window (T x K).
struct ThetaBatch {
  Eigen::MatrixXd mean_logits, logvar, theta;  // n x K
};
ThetaBatch infer_theta_batch(std::span<const BagOfWords> batch,
                             const Eigen::MatrixXd& eta_by_window,
                             const DETMParameters& params, EpsilonSource& eps);

// beta_{t,k,v} = softmax over the vocabulary of rho_v . alpha_{t,k}.
Eigen::VectorXd compute_beta(const Eigen::VectorXd& alpha_tk,
                             const EmbeddingMatrix& rho);

// Closed-form KL between diagonal Gaussians, summed over dimensions.
double gaussian_kl(std::span<const double> mu_q, std::span<const double> logvar_q,
                   std::span<const double> mu_p, std::span<const double> logvar_p);

// Single-sample reparameterized ELBO loss over a batch of bags-of-words.
// When reweight is set, nll and kl_theta are scaled by n_train / batch size;
// the walk KLs never are.
LossBreakdown elbo_loss(std::span<const BagOfWords> batch,
                        const DETMParameters& params, const WindowStats& stats,
                        bool reweight, std::int64_t n_train, EpsilonSource& eps);

// Same loss, but also accumulates d(total)/d(parameter) for every trainable
// group, keyed by the parameter_groups names.
using GradientMap = std::vector<std::pair<std::string, Eigen::MatrixXd>>;
LossBreakdown elbo_with_gradients(std::span<const BagOfWords> batch,
                                  const DETMParameters& params,
                                  const WindowStats& stats, bool reweight,
                                  std::int64_t n_train, EpsilonSource& eps,
                                  GradientMap& grads_out,
                                  Rng* dropout_rng = nullptr);

// Throws when stats still contain an all-zero row, the hazard smoothing
// exists to remove.
void require_inference_ready(const WindowStats& stats);

}  // namespace detm
