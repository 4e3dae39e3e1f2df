#include "detm/model.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "detm/autodiff.hpp"

namespace detm {

namespace {
constexpr double kLogvarClamp = 10.0;
constexpr double kDeltaAnchor = 0.005;
constexpr double kAlphaInitScale = 0.1;
}  // namespace

void ModelConfig::validate() const {
  if (topic_count < 2) throw std::runtime_error("topic_count must be >= 2");
  if (window_count < 2) throw std::runtime_error("window_count must be >= 2");
  if (vocab_size < 1 || embed_dim < 1) {
    throw std::runtime_error("vocab_size and embed_dim must be positive");
  }
  if (delta_alpha <= 0.0 || delta_eta <= 0.0) {
    throw std::runtime_error("walk variances must be positive");
  }
  if (encoder_hidden < 1 || rnn_hidden < 1) {
    throw std::runtime_error("hidden sizes must be positive");
  }
  if (encoder_dropout < 0.0 || encoder_dropout >= 1.0) {
    throw std::runtime_error("dropout must lie in [0, 1)");
  }
}

void ModelConfig::set_delta_ratio(double ratio) {
  if (ratio <= 0.0) throw std::runtime_error("delta ratio must be positive");
  const double root = std::sqrt(ratio);
  delta_eta = kDeltaAnchor * root;
  delta_alpha = kDeltaAnchor / root;
}

Eigen::MatrixXd GaussianEpsilon::draw(Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng_->normal();
  }
  return m;
}

Eigen::MatrixXd RecordingEpsilon::draw(Eigen::Index rows, Eigen::Index cols) {
  draws_.push_back(inner_->draw(rows, cols));
  return draws_.back();
}

Eigen::MatrixXd ReplayEpsilon::draw(Eigen::Index rows, Eigen::Index cols) {
  if (cursor_ >= draws_.size()) {
    throw std::runtime_error("replay epsilon exhausted");
  }
  const Eigen::MatrixXd& m = draws_[cursor_++];
  if (m.rows() != rows || m.cols() != cols) {
    throw std::runtime_error("replay epsilon shape mismatch");
  }
  return m;
}

// Single naming point for every trainable tensor; serialization, the
// optimizer, and the graph builder all iterate this list.
template <typename Params, typename Fn>
static void for_each_trainable(Params& p, Fn&& fn) {
  fn("alpha_mean", p.alpha_mean);
  fn("alpha_logvar", p.alpha_logvar);
  fn("gru_wx_z", p.gru_wx_z);
  fn("gru_wx_r", p.gru_wx_r);
  fn("gru_wx_h", p.gru_wx_h);
  fn("gru_wh_z", p.gru_wh_z);
  fn("gru_wh_r", p.gru_wh_r);
  fn("gru_wh_h", p.gru_wh_h);
  fn("gru_b_z", p.gru_b_z);
  fn("gru_b_r", p.gru_b_r);
  fn("gru_b_h", p.gru_b_h);
  fn("eta_mean_w", p.eta_mean_w);
  fn("eta_mean_b", p.eta_mean_b);
  fn("eta_logvar_w", p.eta_logvar_w);
  fn("eta_logvar_b", p.eta_logvar_b);
  fn("enc_w1", p.enc_w1);
  fn("enc_b1", p.enc_b1);
  fn("enc_w2", p.enc_w2);
  fn("enc_b2", p.enc_b2);
  fn("theta_mean_w", p.theta_mean_w);
  fn("theta_mean_b", p.theta_mean_b);
  fn("theta_logvar_w", p.theta_logvar_w);
  fn("theta_logvar_b", p.theta_logvar_b);
}

std::vector<std::pair<std::string, Eigen::MatrixXd*>> DETMParameters::parameter_groups() {
  std::vector<std::pair<std::string, Eigen::MatrixXd*>> out;
  for_each_trainable(*this, [&](const char* name, Eigen::MatrixXd& m) {
    out.emplace_back(name, &m);
  });
  return out;
}

std::vector<std::pair<std::string, const Eigen::MatrixXd*>> DETMParameters::parameter_groups() const {
  std::vector<std::pair<std::string, const Eigen::MatrixXd*>> out;
  for_each_trainable(*this, [&](const char* name, const Eigen::MatrixXd& m) {
    out.emplace_back(name, &m);
  });
  return out;
}

Eigen::Block<Eigen::MatrixXd> DETMParameters::alpha_mean_at(int t) {
  return alpha_mean.middleRows(static_cast<Eigen::Index>(t) * config.topic_count,
                               config.topic_count);
}

bool DETMParameters::all_finite() const {
  bool ok = rho.vectors.allFinite();
  for_each_trainable(*this, [&](const char*, const Eigen::MatrixXd& m) {
    ok = ok && m.allFinite();
  });
  return ok;
}

static Eigen::MatrixXd fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  }
  return m;
}

DETMParameters init_model(const ModelConfig& config, EmbeddingMatrix rho,
                          std::uint64_t seed) {
  config.validate();
  if (rho.vectors.rows() != config.vocab_size ||
      rho.vectors.cols() != config.embed_dim) {
    throw std::runtime_error(
        "embedding matrix is " + std::to_string(rho.vectors.rows()) + "x" +
        std::to_string(rho.vectors.cols()) + " but config expects " +
        std::to_string(config.vocab_size) + "x" + std::to_string(config.embed_dim));
  }
  const int t_w = config.window_count, k = config.topic_count;
  const int v = config.vocab_size, l = config.embed_dim;
  const int h = config.rnn_hidden, e = config.encoder_hidden;

  DETMParameters p;
  p.config = config;
  p.rho = std::move(rho);
  Rng rng(derive_seed(seed, "model-init"));

  p.alpha_mean.resize(static_cast<Eigen::Index>(t_w) * k, l);
  for (Eigen::Index r = 0; r < p.alpha_mean.rows(); ++r) {
    for (int c = 0; c < l; ++c) p.alpha_mean(r, c) = rng.normal(0.0, kAlphaInitScale);
  }
  p.alpha_logvar = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(t_w) * k, l);

  p.gru_wx_z = fan_in_uniform(v, h, rng);
  p.gru_wx_r = fan_in_uniform(v, h, rng);
  p.gru_wx_h = fan_in_uniform(v, h, rng);
  p.gru_wh_z = fan_in_uniform(h, h, rng);
  p.gru_wh_r = fan_in_uniform(h, h, rng);
  p.gru_wh_h = fan_in_uniform(h, h, rng);
  p.gru_b_z = Eigen::MatrixXd::Zero(1, h);
  p.gru_b_r = Eigen::MatrixXd::Zero(1, h);
  p.gru_b_h = Eigen::MatrixXd::Zero(1, h);

  p.eta_mean_w = fan_in_uniform(h + k, k, rng);
  p.eta_logvar_w = fan_in_uniform(h + k, k, rng);
  p.eta_mean_b = Eigen::MatrixXd::Zero(1, k);
  p.eta_logvar_b = Eigen::MatrixXd::Zero(1, k);

  p.enc_w1 = fan_in_uniform(v + k, e, rng);
  p.enc_b1 = Eigen::MatrixXd::Zero(1, e);
  p.enc_w2 = fan_in_uniform(e, e, rng);
  p.enc_b2 = Eigen::MatrixXd::Zero(1, e);
  p.theta_mean_w = fan_in_uniform(e, k, rng);
  p.theta_mean_b = Eigen::MatrixXd::Zero(1, k);
  p.theta_logvar_w = fan_in_uniform(e, k, rng);
  p.theta_logvar_b = Eigen::MatrixXd::Zero(1, k);
  return p;
}

void require_inference_ready(const WindowStats& stats) {
  for (int t = 0; t < stats.window_count(); ++t) {
    const bool masked = stats.empty_mask[static_cast<std::size_t>(t)];
    if (masked && !stats.smoothed) {
      throw std::runtime_error(
          "window statistics contain an empty window at index " + std::to_string(t) +
          "; smooth them first (zero rows are invalid inference-network input)");
    }
    if (stats.matrix.row(t).isZero(0.0)) {
      throw std::runtime_error(
          "window statistics row " + std::to_string(t) +
          " is all zeros; smooth them first (zero rows are invalid inference-network input)");
    }
  }
}

// ---------------------------------------------------------------------------
// Graph construction. The same builders back the public forward ops and the
// training gradients, so there is one set of model equations.

namespace {

using ad::Tape;
using ad::Var;

struct Leaves {
  std::unordered_map<std::string, Var> named;
  Var rho;

  Var operator[](const std::string& name) const {
    auto it = named.find(name);
    if (it == named.end()) throw std::runtime_error("unknown tensor " + name);
    return it->second;
  }
};

Leaves make_leaves(Tape& tape, const DETMParameters& params, bool needs_grad) {
  Leaves leaves;
  for_each_trainable(params, [&](const char* name, const Eigen::MatrixXd& m) {
    leaves.named.emplace(name, tape.leaf(m, needs_grad));
  });
  leaves.rho = tape.constant(params.rho.vectors);
  return leaves;
}

Var linear(Tape& tape, Var x, Var w, Var b) {
  return tape.add_rowvec(tape.matmul(x, w), b);
}

// One gated recurrent step: h' = (1-z) .* h + z .* tanh(x Wxh + (r .* h) Whh + bh)
Var gru_step(Tape& tape, const Leaves& p, Var x, Var h) {
  Var z = tape.sigmoid(tape.add_rowvec(
      tape.add(tape.matmul(x, p["gru_wx_z"]), tape.matmul(h, p["gru_wh_z"])),
      p["gru_b_z"]));
  Var r = tape.sigmoid(tape.add_rowvec(
      tape.add(tape.matmul(x, p["gru_wx_r"]), tape.matmul(h, p["gru_wh_r"])),
      p["gru_b_r"]));
  Var cand = tape.tanh(tape.add_rowvec(
      tape.add(tape.matmul(x, p["gru_wx_h"]),
               tape.matmul(tape.mul(r, h), p["gru_wh_h"])),
      p["gru_b_h"]));
  Var keep = tape.mul(tape.add_const(tape.scale(z, -1.0), 1.0), h);
  return tape.add(keep, tape.mul(z, cand));
}

struct EtaNodes {
  std::vector<Var> mean, logvar, sample;  // 1 x K each, per window
  Var sample_matrix;                      // T x K
};

EtaNodes build_eta(Tape& tape, const Leaves& p, const WindowStats& stats,
                   const ModelConfig& cfg, EpsilonSource& eps) {
  EtaNodes eta;
  const int t_w = cfg.window_count;
  const int k = cfg.topic_count;
  Var h = tape.constant(Eigen::MatrixXd::Zero(1, cfg.rnn_hidden));
  Var prev_sample = tape.constant(Eigen::MatrixXd::Zero(1, k));
  for (int t = 0; t < t_w; ++t) {
    Var x = tape.constant(stats.matrix.row(t));
    h = gru_step(tape, p, x, h);
    Var head_in = tape.concat_cols(h, prev_sample);
    Var mean = linear(tape, head_in, p["eta_mean_w"], p["eta_mean_b"]);
    Var logvar = tape.clamp(
        linear(tape, head_in, p["eta_logvar_w"], p["eta_logvar_b"]),
        -kLogvarClamp, kLogvarClamp);
    Var noise = tape.constant(eps.draw(1, k));
    Var sample = tape.add(mean, tape.mul(tape.exp(tape.scale(logvar, 0.5)), noise));
    eta.mean.push_back(mean);
    eta.logvar.push_back(logvar);
    eta.sample.push_back(sample);
    prev_sample = sample;
  }
  eta.sample_matrix = tape.stack_rows(eta.sample);
  return eta;
}

struct AlphaNodes {
  Var q_logvar;  // clamped (T*K) x L
  Var sample;    // (T*K) x L
};

AlphaNodes build_alpha(Tape& tape, const Leaves& p, const ModelConfig& cfg,
                       EpsilonSource& eps) {
  AlphaNodes alpha;
  Var mean = p["alpha_mean"];
  alpha.q_logvar = tape.clamp(p["alpha_logvar"], -kLogvarClamp, kLogvarClamp);
  Var noise = tape.constant(
      eps.draw(static_cast<Eigen::Index>(cfg.window_count) * cfg.topic_count,
               cfg.embed_dim));
  alpha.sample =
      tape.add(mean, tape.mul(tape.exp(tape.scale(alpha.q_logvar, 0.5)), noise));
  return alpha;
}

// Softmax over the vocabulary of rho . alpha for window t: K x V.
Var build_beta_t(Tape& tape, Var rho_transposed, Var alpha_sample,
                 const ModelConfig& cfg, int t) {
  Var alpha_t = tape.slice_rows(
      alpha_sample, static_cast<Eigen::Index>(t) * cfg.topic_count, cfg.topic_count);
  Var logits = tape.matmul(alpha_t, rho_transposed);  // K x V
  return tape.softmax_rows(logits);
}

struct ThetaNodes {
  Var mean, logvar, theta;  // n x K
};

ThetaNodes build_theta(Tape& tape, const Leaves& p,
                       const Eigen::MatrixXd& bow_normalized, Var eta_rows,
                       EpsilonSource& eps, Rng* dropout_rng, double dropout) {
  Var bow = tape.constant(bow_normalized);
  if (dropout > 0.0 && dropout_rng != nullptr) {
    Eigen::MatrixXd mask(bow_normalized.rows(), bow_normalized.cols());
    const double keep = 1.0 - dropout;
    for (Eigen::Index r = 0; r < mask.rows(); ++r) {
      for (Eigen::Index c = 0; c < mask.cols(); ++c) {
        mask(r, c) = dropout_rng->uniform() < dropout ? 0.0 : 1.0 / keep;
      }
    }
    bow = tape.mul(bow, tape.constant(std::move(mask)));
  }
  Var x = tape.concat_cols(bow, eta_rows);
  Var h1 = tape.softplus(linear(tape, x, p["enc_w1"], p["enc_b1"]));
  Var h2 = tape.softplus(linear(tape, h1, p["enc_w2"], p["enc_b2"]));
  ThetaNodes theta;
  theta.mean = linear(tape, h2, p["theta_mean_w"], p["theta_mean_b"]);
  theta.logvar = tape.clamp(
      linear(tape, h2, p["theta_logvar_w"], p["theta_logvar_b"]),
      -kLogvarClamp, kLogvarClamp);
  Var noise = tape.constant(eps.draw(theta.mean.rows(), theta.mean.cols()));
  Var logits = tape.add(
      theta.mean, tape.mul(tape.exp(tape.scale(theta.logvar, 0.5)), noise));
  theta.theta = tape.softmax_rows(logits);
  return theta;
}

struct ElboGraph {
  Var nll, kl_theta, kl_eta, kl_alpha, total;  // 1 x 1 each
};

ElboGraph build_elbo(Tape& tape, const Leaves& leaves,
                     std::span<const BagOfWords> batch,
                     const DETMParameters& params, const WindowStats& stats,
                     bool reweight, std::int64_t n_train, EpsilonSource& eps,
                     Rng* dropout_rng) {
  const ModelConfig& cfg = params.config;
  if (batch.empty()) throw std::runtime_error("elbo batch is empty");
  require_inference_ready(stats);
  if (stats.window_count() != cfg.window_count ||
      stats.matrix.cols() != cfg.vocab_size) {
    throw std::runtime_error("window statistics shape does not match the model");
  }
  if (reweight && n_train < 1) {
    throw std::runtime_error("reweighting needs the training-set size");
  }
  const auto n = static_cast<Eigen::Index>(batch.size());
  const int k = cfg.topic_count;

  Eigen::MatrixXd bow_norm = Eigen::MatrixXd::Zero(n, cfg.vocab_size);
  std::vector<Eigen::Index> windows(batch.size());
  for (Eigen::Index d = 0; d < n; ++d) {
    const BagOfWords& bow = batch[static_cast<std::size_t>(d)];
    if (bow.empty() || bow.total <= 0.0) {
      throw std::runtime_error("batch contains an empty bag-of-words; drop it first");
    }
    if (bow.window < 0 || bow.window >= cfg.window_count) {
      throw std::runtime_error("bag-of-words window index " +
                               std::to_string(bow.window) + " outside [0, " +
                               std::to_string(cfg.window_count) + ")");
    }
    windows[static_cast<std::size_t>(d)] = bow.window;
    for (std::size_t i = 0; i < bow.ids.size(); ++i) {
      if (bow.ids[i] < 0 || bow.ids[i] >= cfg.vocab_size) {
        throw std::runtime_error("bag-of-words id outside the vocabulary");
      }
      bow_norm(d, bow.ids[i]) = bow.counts[i] / bow.total;
    }
  }

  AlphaNodes alpha = build_alpha(tape, leaves, cfg, eps);
  EtaNodes eta = build_eta(tape, leaves, stats, cfg, eps);

  Var rho_transposed =
      tape.constant(Eigen::MatrixXd(params.rho.vectors.transpose()));
  std::vector<Var> betas;
  betas.reserve(static_cast<std::size_t>(cfg.window_count));
  for (int t = 0; t < cfg.window_count; ++t) {
    betas.push_back(build_beta_t(tape, rho_transposed, alpha.sample, cfg, t));
  }

  Var eta_rows = tape.gather_rows(eta.sample_matrix, windows);
  ThetaNodes theta = build_theta(tape, leaves, bow_norm, eta_rows, eps,
                                 dropout_rng, cfg.encoder_dropout);

  // Reconstruction term, accumulated per document over its distinct tokens.
  Var nll_acc = tape.scalar_constant(0.0);
  for (Eigen::Index d = 0; d < n; ++d) {
    const BagOfWords& bow = batch[static_cast<std::size_t>(d)];
    std::vector<Eigen::Index> ids(bow.ids.begin(), bow.ids.end());
    Var beta_cols = tape.gather_cols(betas[static_cast<std::size_t>(windows[static_cast<std::size_t>(d)])],
                                     std::move(ids));
    Var theta_d = tape.slice_rows(theta.theta, d, 1);
    Var mix = tape.matmul(theta_d, beta_cols);  // 1 x m
    Eigen::MatrixXd counts(1, static_cast<Eigen::Index>(bow.counts.size()));
    for (std::size_t i = 0; i < bow.counts.size(); ++i) {
      counts(0, static_cast<Eigen::Index>(i)) = bow.counts[i];
    }
    Var contrib = tape.sum(tape.mul(tape.log(mix), tape.constant(std::move(counts))));
    nll_acc = tape.add(nll_acc, contrib);
  }
  Var nll = tape.scale(nll_acc, -1.0);

  // KL of the document mixtures against N(eta_t, I).
  Var kl_theta = tape.gaussian_kl(
      theta.mean, theta.logvar, eta_rows,
      tape.constant(Eigen::MatrixXd::Zero(n, k)));

  // Random-walk KLs; the priors center on the previous window's sample.
  Var kl_eta = tape.scalar_constant(0.0);
  const Eigen::MatrixXd zero_row = Eigen::MatrixXd::Zero(1, k);
  const Eigen::MatrixXd log_delta_eta =
      Eigen::MatrixXd::Constant(1, k, std::log(cfg.delta_eta));
  for (int t = 0; t < cfg.window_count; ++t) {
    Var prior_mean = t == 0 ? tape.constant(zero_row) : eta.sample[static_cast<std::size_t>(t - 1)];
    Var prior_logvar =
        t == 0 ? tape.constant(zero_row) : tape.constant(log_delta_eta);
    kl_eta = tape.add(kl_eta,
                      tape.gaussian_kl(eta.mean[static_cast<std::size_t>(t)],
                                       eta.logvar[static_cast<std::size_t>(t)],
                                       prior_mean, prior_logvar));
  }

  Var kl_alpha = tape.scalar_constant(0.0);
  const Eigen::MatrixXd zero_block = Eigen::MatrixXd::Zero(k, cfg.embed_dim);
  const Eigen::MatrixXd log_delta_alpha =
      Eigen::MatrixXd::Constant(k, cfg.embed_dim, std::log(cfg.delta_alpha));
  for (int t = 0; t < cfg.window_count; ++t) {
    Var q_mean = tape.slice_rows(leaves["alpha_mean"],
                                 static_cast<Eigen::Index>(t) * k, k);
    Var q_logvar = tape.slice_rows(alpha.q_logvar,
                                   static_cast<Eigen::Index>(t) * k, k);
    Var prior_mean = t == 0 ? tape.constant(zero_block)
                            : tape.slice_rows(alpha.sample,
                                              static_cast<Eigen::Index>(t - 1) * k, k);
    Var prior_logvar =
        t == 0 ? tape.constant(zero_block) : tape.constant(log_delta_alpha);
    kl_alpha = tape.add(
        kl_alpha, tape.gaussian_kl(q_mean, q_logvar, prior_mean, prior_logvar));
  }

  ElboGraph graph;
  if (reweight) {
    const double ratio =
        static_cast<double>(n_train) / static_cast<double>(batch.size());
    graph.nll = tape.scale(nll, ratio);
    graph.kl_theta = tape.scale(kl_theta, ratio);
  } else {
    graph.nll = nll;
    graph.kl_theta = kl_theta;
  }
  graph.kl_eta = kl_eta;
  graph.kl_alpha = kl_alpha;
  graph.total = tape.add(tape.add(graph.nll, graph.kl_theta),
                         tape.add(graph.kl_eta, graph.kl_alpha));
  return graph;
}

LossBreakdown breakdown_from(const ElboGraph& graph, bool reweighted) {
  LossBreakdown out;
  out.nll = graph.nll.scalar();
  out.kl_theta = graph.kl_theta.scalar();
  out.kl_eta = graph.kl_eta.scalar();
  out.kl_alpha = graph.kl_alpha.scalar();
  out.total = graph.total.scalar();
  out.reweighted = reweighted;
  return out;
}

}  // namespace

EtaResult infer_eta(const WindowStats& stats, const DETMParameters& params,
                    EpsilonSource& eps) {
  require_inference_ready(stats);
  const ModelConfig& cfg = params.config;
  if (stats.window_count() != cfg.window_count ||
      stats.matrix.cols() != cfg.vocab_size) {
    throw std::runtime_error("window statistics shape does not match the model");
  }
  Tape tape;
  Leaves leaves = make_leaves(tape, params, false);
  EtaNodes eta = build_eta(tape, leaves, stats, cfg, eps);
  EtaResult out;
  out.mean.resize(cfg.window_count, cfg.topic_count);
  out.logvar.resize(cfg.window_count, cfg.topic_count);
  out.sample.resize(cfg.window_count, cfg.topic_count);
  for (int t = 0; t < cfg.window_count; ++t) {
    out.mean.row(t) = eta.mean[static_cast<std::size_t>(t)].value().row(0);
    out.logvar.row(t) = eta.logvar[static_cast<std::size_t>(t)].value().row(0);
    out.sample.row(t) = eta.sample[static_cast<std::size_t>(t)].value().row(0);
  }
  return out;
}

ThetaResult infer_theta(const BagOfWords& bow, const Eigen::VectorXd& eta_t,
                        const DETMParameters& params, EpsilonSource& eps) {
  const ModelConfig& cfg = params.config;
  if (bow.empty() || bow.total <= 0.0) {
    throw std::runtime_error("cannot infer theta for an empty bag-of-words");
  }
  if (eta_t.size() != cfg.topic_count) {
    throw std::runtime_error("eta vector length does not match topic count");
  }
  Eigen::MatrixXd bow_norm = Eigen::MatrixXd::Zero(1, cfg.vocab_size);
  for (std::size_t i = 0; i < bow.ids.size(); ++i) {
    bow_norm(0, bow.ids[i]) = bow.counts[i] / bow.total;
  }
  Tape tape;
  Leaves leaves = make_leaves(tape, params, false);
  Var eta_row = tape.constant(Eigen::MatrixXd(eta_t.transpose()));
  ThetaNodes theta = build_theta(tape, leaves, bow_norm, eta_row, eps, nullptr, 0.0);
  ThetaResult out;
  out.mean_logits = theta.mean.value().row(0).transpose();
  out.logvar = theta.logvar.value().row(0).transpose();
  out.theta = theta.theta.value().row(0).transpose();
  return out;
}

ThetaBatch infer_theta_batch(std::span<const BagOfWords> batch,
                             const Eigen::MatrixXd& eta_by_window,
                             const DETMParameters& params, EpsilonSource& eps) {
  const ModelConfig& cfg = params.config;
  if (eta_by_window.rows() != cfg.window_count ||
      eta_by_window.cols() != cfg.topic_count) {
    throw std::runtime_error("eta matrix shape does not match the model");
  }
  const auto n = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd bow_norm = Eigen::MatrixXd::Zero(n, cfg.vocab_size);
  Eigen::MatrixXd eta_rows(n, cfg.topic_count);
  for (Eigen::Index d = 0; d < n; ++d) {
    const BagOfWords& bow = batch[static_cast<std::size_t>(d)];
    if (bow.empty() || bow.total <= 0.0) {
      throw std::runtime_error("cannot infer theta for an empty bag-of-words");
    }
    if (bow.window < 0 || bow.window >= cfg.window_count) {
      throw std::runtime_error("bag-of-words window index outside the model range");
    }
    for (std::size_t i = 0; i < bow.ids.size(); ++i) {
      bow_norm(d, bow.ids[i]) = bow.counts[i] / bow.total;
    }
    eta_rows.row(d) = eta_by_window.row(bow.window);
  }
  Tape tape;
  Leaves leaves = make_leaves(tape, params, false);
  ThetaNodes nodes = build_theta(tape, leaves, bow_norm,
                                 tape.constant(std::move(eta_rows)), eps, nullptr, 0.0);
  return ThetaBatch{nodes.mean.value(), nodes.logvar.value(), nodes.theta.value()};
}

Eigen::VectorXd compute_beta(const Eigen::VectorXd& alpha_tk,
                             const EmbeddingMatrix& rho) {
  if (alpha_tk.size() != rho.vectors.cols()) {
    throw std::runtime_error("alpha dimension does not match the embeddings");
  }
  if (!alpha_tk.allFinite()) {
    throw std::runtime_error("non-finite topic embedding");
  }
  Eigen::VectorXd logits = rho.vectors * alpha_tk;
  const double mx = logits.maxCoeff();
  Eigen::ArrayXd e = (logits.array() - mx).exp();
  return (e / e.sum()).matrix();
}

double gaussian_kl(std::span<const double> mu_q, std::span<const double> logvar_q,
                   std::span<const double> mu_p, std::span<const double> logvar_p) {
  const std::size_t n = mu_q.size();
  if (logvar_q.size() != n || mu_p.size() != n || logvar_p.size() != n) {
    throw std::runtime_error("gaussian_kl: length mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(mu_q[i]) || !std::isfinite(logvar_q[i]) ||
        !std::isfinite(mu_p[i]) || !std::isfinite(logvar_p[i])) {
      throw std::runtime_error("gaussian_kl: non-finite input");
    }
    const double d = mu_p[i] - mu_q[i];
    acc += std::exp(logvar_q[i] - logvar_p[i]) + d * d * std::exp(-logvar_p[i]) -
           1.0 + logvar_p[i] - logvar_q[i];
  }
  return 0.5 * acc;
}

LossBreakdown elbo_loss(std::span<const BagOfWords> batch,
                        const DETMParameters& params, const WindowStats& stats,
                        bool reweight, std::int64_t n_train, EpsilonSource& eps) {
  Tape tape;
  Leaves leaves = make_leaves(tape, params, false);
  ElboGraph graph =
      build_elbo(tape, leaves, batch, params, stats, reweight, n_train, eps, nullptr);
  return breakdown_from(graph, reweight);
}

LossBreakdown elbo_with_gradients(std::span<const BagOfWords> batch,
                                  const DETMParameters& params,
                                  const WindowStats& stats, bool reweight,
                                  std::int64_t n_train, EpsilonSource& eps,
                                  GradientMap& grads_out, Rng* dropout_rng) {
  Tape tape;
  Leaves leaves = make_leaves(tape, params, true);
  ElboGraph graph = build_elbo(tape, leaves, batch, params, stats, reweight,
                               n_train, eps, dropout_rng);
  tape.backward(graph.total);
  grads_out.clear();
  for_each_trainable(params, [&](const char* name, const Eigen::MatrixXd& m) {
    const ad::Var v = leaves[name];
    if (v.grad().size() == 0) {
      grads_out.emplace_back(name, Eigen::MatrixXd::Zero(m.rows(), m.cols()));
    } else {
      grads_out.emplace_back(name, v.grad());
    }
  });
  return breakdown_from(graph, reweight);
}

}  // namespace detm
