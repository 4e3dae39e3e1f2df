#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "detm/model.hpp"
#include "detm/rng.hpp"
#include "support/oracles.hpp"

using namespace detm;

namespace {

EmbeddingMatrix random_rho(int v, int l, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingMatrix m;
  m.dimension = l;
  m.vocab_hash = "test";
  m.vectors.resize(v, l);
  for (int r = 0; r < v; ++r) {
    for (int c = 0; c < l; ++c) m.vectors(r, c) = 0.5 * rng.normal();
  }
  return m;
}

ModelConfig tiny_config(int k = 2, int t = 3, int v = 20, int l = 4) {
  ModelConfig cfg;
  cfg.topic_count = k;
  cfg.window_count = t;
  cfg.vocab_size = v;
  cfg.embed_dim = l;
  cfg.encoder_hidden = 16;
  cfg.rnn_hidden = 8;
  return cfg;
}

WindowStats uniform_stats(int t, int v) {
  WindowStats stats;
  stats.matrix = Eigen::MatrixXd::Constant(t, v, 1.0 / v);
  stats.empty_mask.assign(static_cast<std::size_t>(t), 0);
  stats.smoothed = true;
  return stats;
}

WindowStats random_stats(int t, int v, std::uint64_t seed) {
  Rng rng(seed);
  WindowStats stats;
  stats.matrix.resize(t, v);
  stats.empty_mask.assign(static_cast<std::size_t>(t), 0);
  for (int r = 0; r < t; ++r) {
    double sum = 0.0;
    for (int c = 0; c < v; ++c) {
      stats.matrix(r, c) = rng.uniform() + 0.01;
      sum += stats.matrix(r, c);
    }
    stats.matrix.row(r) /= sum;
  }
  stats.smoothed = true;
  return stats;
}

BagOfWords bow_of(std::vector<int> ids, std::vector<double> counts, int window) {
  BagOfWords bow;
  bow.ids = std::move(ids);
  bow.counts = std::move(counts);
  for (double c : bow.counts) bow.total += c;
  bow.window = window;
  return bow;
}

std::vector<BagOfWords> random_batch(const ModelConfig& cfg, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<BagOfWords> batch;
  for (int d = 0; d < n; ++d) {
    const int window = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.window_count)));
    std::vector<int> ids;
    std::vector<double> counts;
    const int distinct = 2 + static_cast<int>(rng.below(4));
    for (int i = 0; i < distinct; ++i) {
      int id = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab_size)));
      while (std::find(ids.begin(), ids.end(), id) != ids.end()) {
        id = (id + 1) % cfg.vocab_size;
      }
      ids.push_back(id);
      counts.push_back(1.0 + static_cast<double>(rng.below(4)));
    }
    batch.push_back(bow_of(std::move(ids), std::move(counts), window));
  }
  return batch;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("init_model is deterministic and shape-correct") {
  const ModelConfig cfg = tiny_config();
  const DETMParameters a = init_model(cfg, random_rho(20, 4, 1), 42);
  const DETMParameters b = init_model(cfg, random_rho(20, 4, 1), 42);
  // alpha tensors are (T*K) x L = (3*2) x 4
  CHECK(a.alpha_mean.rows() == 6);
  CHECK(a.alpha_mean.cols() == 4);
  CHECK(a.alpha_logvar.isZero(0.0));
  for (std::size_t g = 0; g < a.parameter_groups().size(); ++g) {
    const auto& [name, mat] = a.parameter_groups()[g];
    CHECK((*mat - *b.parameter_groups()[g].second).cwiseAbs().maxCoeff() == 0.0);
  }
  const DETMParameters c = init_model(cfg, random_rho(20, 4, 1), 43);
  CHECK((a.alpha_mean - c.alpha_mean).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("init_model rejects mismatched embeddings") {
  const ModelConfig cfg = tiny_config(2, 3, 20, 4);
  CHECK_THROWS_AS(init_model(cfg, random_rho(19, 4, 1), 1), std::runtime_error);
  CHECK_THROWS_AS(init_model(cfg, random_rho(20, 5, 1), 1), std::runtime_error);
}

TEST_CASE("infer_eta with zero noise returns the mean path") {
  const ModelConfig cfg = tiny_config();
  const DETMParameters p = init_model(cfg, random_rho(20, 4, 2), 7);
  ZeroEpsilon eps;
  const EtaResult eta = infer_eta(random_stats(3, 20, 5), p, eps);
  CHECK((eta.sample - eta.mean).cwiseAbs().maxCoeff() == 0.0);
  CHECK(eta.mean.rows() == 3);
  CHECK(eta.mean.cols() == 2);
}

TEST_CASE("infer_eta handles two identical rows and stays finite") {
  ModelConfig cfg = tiny_config(3, 2, 10, 4);
  const DETMParameters p = init_model(cfg, random_rho(10, 4, 3), 11);
  ZeroEpsilon eps;
  const EtaResult eta = infer_eta(uniform_stats(2, 10), p, eps);
  CHECK(eta.mean.rows() == 2);
  CHECK(eta.mean.cols() == 3);
  CHECK(eta.mean.allFinite());
  CHECK(eta.logvar.allFinite());
}

TEST_CASE("infer_eta is order-sensitive in the window sequence") {
  const ModelConfig cfg = tiny_config(2, 3, 12, 4);
  const DETMParameters p = init_model(cfg, random_rho(12, 4, 4), 13);
  WindowStats stats = random_stats(3, 12, 21);
  WindowStats permuted = stats;
  permuted.matrix.row(0) = stats.matrix.row(2);
  permuted.matrix.row(2) = stats.matrix.row(0);
  ZeroEpsilon eps;
  const EtaResult a = infer_eta(stats, p, eps);
  const EtaResult b = infer_eta(permuted, p, eps);
  CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() > 1e-12);
}

TEST_CASE("infer_eta rejects unsmoothed stats with a zero row") {
  const ModelConfig cfg = tiny_config(2, 3, 10, 4);
  const DETMParameters p = init_model(cfg, random_rho(10, 4, 5), 17);
  WindowStats stats = uniform_stats(3, 10);
  stats.smoothed = false;
  stats.matrix.row(1).setZero();
  stats.empty_mask[1] = 1;
  ZeroEpsilon eps;
  CHECK_THROWS_WITH_AS(infer_eta(stats, p, eps), doctest::Contains("smooth"),
                       std::runtime_error);
}

TEST_CASE("infer_theta returns a simplex point equal to softmax of the mean") {
  const ModelConfig cfg = tiny_config(4, 3, 15, 4);
  const DETMParameters p = init_model(cfg, random_rho(15, 4, 6), 19);
  ZeroEpsilon eps;
  const BagOfWords bow = bow_of({0, 3, 7}, {2, 1, 1}, 0);
  const Eigen::VectorXd eta_t = Eigen::VectorXd::Constant(4, 0.2);
  const ThetaResult theta = infer_theta(bow, eta_t, p, eps);
  CHECK(theta.theta.sum() == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(theta.theta.minCoeff() > 0.0);
  // softmax of the mean logits
  Eigen::ArrayXd e = (theta.mean_logits.array() - theta.mean_logits.maxCoeff()).exp();
  Eigen::VectorXd soft = (e / e.sum()).matrix();
  CHECK((theta.theta - soft).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("softmax is invariant to a constant shift of the logits") {
  Eigen::VectorXd logits(3);
  logits << 0.3, -1.2, 2.0;
  auto softmax = [](const Eigen::VectorXd& x) {
    Eigen::ArrayXd e = (x.array() - x.maxCoeff()).exp();
    return Eigen::VectorXd((e / e.sum()).matrix());
  };
  const Eigen::VectorXd base = softmax(logits);
  const Eigen::VectorXd shifted = softmax(logits.array() + 5.0);
  CHECK((base - shifted).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("infer_theta rejects an all-zero bag") {
  const ModelConfig cfg = tiny_config();
  const DETMParameters p = init_model(cfg, random_rho(20, 4, 7), 23);
  ZeroEpsilon eps;
  BagOfWords empty;
  empty.window = 0;
  CHECK_THROWS_AS(infer_theta(empty, Eigen::VectorXd::Zero(2), p, eps),
                  std::runtime_error);
}

TEST_CASE("compute_beta of a zero alpha is uniform") {
  const EmbeddingMatrix rho = random_rho(50, 6, 8);
  const Eigen::VectorXd beta = compute_beta(Eigen::VectorXd::Zero(6), rho);
  CHECK(beta.size() == 50);
  CHECK((beta.array() - 1.0 / 50).abs().maxCoeff() < 1e-12);
}

TEST_CASE("compute_beta with identical embedding rows is uniform") {
  EmbeddingMatrix rho;
  rho.dimension = 3;
  rho.vectors = Eigen::MatrixXd::Ones(7, 3) * 0.4;
  Eigen::VectorXd alpha(3);
  alpha << 1.0, -2.0, 0.5;
  const Eigen::VectorXd beta = compute_beta(alpha, rho);
  CHECK((beta.array() - 1.0 / 7).abs().maxCoeff() < 1e-12);
}

TEST_CASE("compute_beta matches the hand-computed three-word softmax") {
  EmbeddingMatrix rho;
  rho.dimension = 3;
  rho.vectors = Eigen::MatrixXd::Identity(3, 3);
  Eigen::VectorXd alpha(3);
  alpha << std::log(2.0), 0.0, 0.0;
  const Eigen::VectorXd beta = compute_beta(alpha, rho);
  CHECK(beta(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(beta(1) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(beta(2) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(beta.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("compute_beta rejects non-finite alphas") {
  const EmbeddingMatrix rho = random_rho(5, 2, 9);
  Eigen::VectorXd alpha(2);
  alpha << std::numeric_limits<double>::quiet_NaN(), 0.0;
  CHECK_THROWS_AS(compute_beta(alpha, rho), std::runtime_error);
}

TEST_CASE("gaussian_kl identities") {
  const std::vector<double> mu = {0.3, -1.0}, lv = {0.1, -0.4};
  CHECK(gaussian_kl(mu, lv, mu, lv) == doctest::Approx(0.0).epsilon(1e-15));
  // KL(N(1,1) || N(0,1)) = 0.5
  const std::vector<double> one = {1.0}, zero = {0.0};
  CHECK(gaussian_kl(one, zero, zero, zero) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("gaussian_kl is nonnegative over random draws") {
  Rng rng(41);
  for (int i = 0; i < 1000; ++i) {
    const std::vector<double> mq = {rng.normal()}, lq = {rng.normal(0.0, 0.7)};
    const std::vector<double> mp = {rng.normal()}, lp = {rng.normal(0.0, 0.7)};
    CHECK(gaussian_kl(mq, lq, mp, lp) >= -1e-12);
  }
}

TEST_CASE("larger walk variance tolerates a large step better") {
  // fixed q = N(3, 1) against priors N(0, delta) for growing delta
  const std::vector<double> mq = {3.0}, lq = {0.0}, mp = {0.0};
  const double k1 = gaussian_kl(mq, lq, mp, std::vector<double>{std::log(0.5)});
  const double k2 = gaussian_kl(mq, lq, mp, std::vector<double>{std::log(1.0)});
  const double k3 = gaussian_kl(mq, lq, mp, std::vector<double>{std::log(2.0)});
  CHECK(k1 > k2);
  CHECK(k2 > k3);
}

TEST_CASE("elbo_loss ignores n_train unless reweighting") {
  const ModelConfig cfg = tiny_config();
  const DETMParameters p = init_model(cfg, random_rho(20, 4, 10), 29);
  const WindowStats stats = random_stats(3, 20, 31);
  const auto batch = random_batch(cfg, 4, 33);
  ZeroEpsilon eps;
  const LossBreakdown a = elbo_loss(batch, p, stats, false, 1000, eps);
  const LossBreakdown b = elbo_loss(batch, p, stats, false, 5, eps);
  CHECK(a.total == b.total);
  CHECK_FALSE(a.reweighted);
}

TEST_CASE("reweighting with ratio one is exactly the unweighted loss") {
  const ModelConfig cfg = tiny_config();
  const DETMParameters p = init_model(cfg, random_rho(20, 4, 11), 37);
  const WindowStats stats = random_stats(3, 20, 39);
  const auto batch = random_batch(cfg, 6, 41);
  ZeroEpsilon eps;
  const LossBreakdown a = elbo_loss(batch, p, stats, true,
                                    static_cast<std::int64_t>(batch.size()), eps);
  const LossBreakdown b = elbo_loss(batch, p, stats, false, 1, eps);
  CHECK(a.total == b.total);
  CHECK(a.nll == b.nll);
  CHECK(a.kl_theta == b.kl_theta);
}

TEST_CASE("reweighting scales nll and kl_theta and nothing else") {
  const ModelConfig cfg = tiny_config();
  const DETMParameters p = init_model(cfg, random_rho(20, 4, 12), 43);
  const WindowStats stats = random_stats(3, 20, 45);
  const auto batch = random_batch(cfg, 5, 47);
  ZeroEpsilon eps;
  const std::int64_t n_train = 50;
  const LossBreakdown plain = elbo_loss(batch, p, stats, false, n_train, eps);
  const LossBreakdown scaled = elbo_loss(batch, p, stats, true, n_train, eps);
  const double ratio = static_cast<double>(n_train) / static_cast<double>(batch.size());
  CHECK(scaled.nll == doctest::Approx(plain.nll * ratio).epsilon(1e-12));
  CHECK(scaled.kl_theta == doctest::Approx(plain.kl_theta * ratio).epsilon(1e-12));
  CHECK(scaled.kl_eta == plain.kl_eta);    // bit-identical
  CHECK(scaled.kl_alpha == plain.kl_alpha);
  CHECK(scaled.total ==
        doctest::Approx(scaled.nll + scaled.kl_theta + scaled.kl_eta + scaled.kl_alpha)
            .epsilon(1e-12));
}

TEST_CASE("elbo kl terms stay above the rounding floor") {
  const ModelConfig cfg = tiny_config();
  const DETMParameters p = init_model(cfg, random_rho(20, 4, 13), 53);
  const WindowStats stats = random_stats(3, 20, 55);
  const auto batch = random_batch(cfg, 8, 57);
  Rng rng(59);
  GaussianEpsilon eps(rng);
  const LossBreakdown loss = elbo_loss(batch, p, stats, false, 8, eps);
  CHECK(loss.kl_theta >= -1e-9);
  CHECK(loss.kl_eta >= -1e-9);
  CHECK(loss.kl_alpha >= -1e-9);
}

TEST_CASE("elbo rejects out-of-range window indices") {
  const ModelConfig cfg = tiny_config();
  const DETMParameters p = init_model(cfg, random_rho(20, 4, 14), 61);
  const WindowStats stats = random_stats(3, 20, 63);
  auto batch = random_batch(cfg, 2, 65);
  batch[1].window = 3;  // T_w = 3, valid indices 0..2
  ZeroEpsilon eps;
  CHECK_THROWS_AS(elbo_loss(batch, p, stats, false, 2, eps), std::runtime_error);
}

TEST_CASE("elbo nll term matches the scalar mixture oracle") {
  // K=2, V=3: compare against plain loops over theta and beta from the
  // public forward ops, with all noise pinned to zero.
  ModelConfig cfg = tiny_config(2, 2, 3, 3);
  cfg.encoder_hidden = 8;
  cfg.rnn_hidden = 4;
  const DETMParameters p = init_model(cfg, random_rho(3, 3, 15), 67);
  const WindowStats stats = random_stats(2, 3, 69);
  const std::vector<BagOfWords> batch = {bow_of({0, 2}, {2, 1}, 0),
                                         bow_of({1}, {3}, 1)};
  ZeroEpsilon eps;
  const LossBreakdown loss = elbo_loss(batch, p, stats, false, 2, eps);

  const EtaResult eta = infer_eta(stats, p, eps);
  std::vector<Eigen::MatrixXd> betas;
  for (int t = 0; t < cfg.window_count; ++t) {
    Eigen::MatrixXd beta_t(cfg.topic_count, cfg.vocab_size);
    for (int k = 0; k < cfg.topic_count; ++k) {
      beta_t.row(k) = compute_beta(
          p.alpha_mean.row(t * cfg.topic_count + k).transpose(), p.rho).transpose();
    }
    betas.push_back(beta_t);
  }
  std::vector<Eigen::VectorXd> thetas;
  for (const auto& bow : batch) {
    thetas.push_back(
        infer_theta(bow, eta.sample.row(bow.window).transpose(), p, eps).theta);
  }
  const double expect = oracle::scalar_mixture_nll(batch, thetas, betas);
  CHECK(loss.nll == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("elbo gradients match finite differences on the tiny instance") {
  // Small version of the acceptance gradient check, one group end to end.
  ModelConfig cfg = tiny_config(2, 3, 20, 4);
  cfg.encoder_hidden = 8;
  cfg.rnn_hidden = 4;
  DETMParameters p = init_model(cfg, random_rho(20, 4, 16), 71);
  const WindowStats stats = random_stats(3, 20, 73);
  const auto batch = random_batch(cfg, 5, 75);

  Rng noise_rng(77);
  GaussianEpsilon gaussian(noise_rng);
  RecordingEpsilon recorder(gaussian);
  GradientMap grads;
  elbo_with_gradients(batch, p, stats, false, 5, recorder, grads);
  ReplayEpsilon replay(recorder.recorded());

  const double step = 1e-4;
  for (const auto& target : {std::string("alpha_mean"), std::string("gru_wx_z"),
                             std::string("eta_mean_w"), std::string("enc_w1"),
                             std::string("theta_logvar_w")}) {
    Eigen::MatrixXd* mat = nullptr;
    for (auto& [name, m] : p.parameter_groups()) {
      if (name == target) mat = m;
    }
    REQUIRE(mat != nullptr);
    const Eigen::MatrixXd* analytic = nullptr;
    for (const auto& [name, g] : grads) {
      if (name == target) analytic = &g;
    }
    REQUIRE(analytic != nullptr);

    Eigen::MatrixXd numeric(mat->rows(), mat->cols());
    for (Eigen::Index r = 0; r < mat->rows(); ++r) {
      for (Eigen::Index c = 0; c < mat->cols(); ++c) {
        const double keep = (*mat)(r, c);
        (*mat)(r, c) = keep + step;
        replay.rewind();
        const double hi = elbo_loss(batch, p, stats, false, 5, replay).total;
        (*mat)(r, c) = keep - step;
        replay.rewind();
        const double lo = elbo_loss(batch, p, stats, false, 5, replay).total;
        (*mat)(r, c) = keep;
        numeric(r, c) = (hi - lo) / (2.0 * step);
      }
    }
    CHECK_MESSAGE(oracle::gradient_relative_error(*analytic, numeric) < 1e-3,
                  "group ", target);
  }
}

TEST_SUITE_END();
