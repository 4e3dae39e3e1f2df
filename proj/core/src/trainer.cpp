#include "detm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "detm/evaluator.hpp"
#include "detm/rng.hpp"
#include "serialize.hpp"

namespace detm {

using detail::json;

void TrainingConfig::validate() const {
  if (learning_rate <= 0.0) throw std::runtime_error("learning rate must be positive");
  if (batch_size < 1) throw std::runtime_error("batch size must be >= 1");
  if (epochs < 1) throw std::runtime_error("epochs must be >= 1");
  if (gradient_clip_norm <= 0.0) {
    throw std::runtime_error("gradient clip norm must be positive");
  }
}

RAdamOptimizer::RAdamOptimizer(double learning_rate, double clip_norm,
                               double beta1, double beta2, double epsilon)
    : lr_(learning_rate), clip_(clip_norm), beta1_(beta1), beta2_(beta2),
      eps_(epsilon) {}

void RAdamOptimizer::step(DETMParameters& params, const GradientMap& grads) {
  auto groups = params.parameter_groups();
  if (groups.size() != grads.size()) {
    throw std::runtime_error("gradient map does not match parameter groups");
  }
  if (m_.empty()) {
    m_.reserve(groups.size());
    v_.reserve(groups.size());
    for (const auto& [name, mat] : groups) {
      m_.push_back(Eigen::MatrixXd::Zero(mat->rows(), mat->cols()));
      v_.push_back(Eigen::MatrixXd::Zero(mat->rows(), mat->cols()));
    }
  }

  // Global-norm clipping across every group.
  double sq_norm = 0.0;
  for (const auto& [name, g] : grads) sq_norm += g.squaredNorm();
  const double norm = std::sqrt(sq_norm);
  const double clip_scale = norm > clip_ ? clip_ / norm : 1.0;

  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double beta2_t = std::pow(beta2_, t);
  const double beta1_t = std::pow(beta1_, t);
  const double rho_inf = 2.0 / (1.0 - beta2_) - 1.0;
  const double rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t);

  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i].first != grads[i].first) {
      throw std::runtime_error("gradient order mismatch at " + grads[i].first);
    }
    Eigen::MatrixXd g = grads[i].second * clip_scale;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    const Eigen::MatrixXd m_hat = m_[i] / (1.0 - beta1_t);
    Eigen::MatrixXd& target = *groups[i].second;
    if (rho_t > 4.0) {
      const double rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                                    ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
      const Eigen::MatrixXd v_hat = (v_[i] / (1.0 - beta2_t)).cwiseSqrt();
      target -= lr_ * rect *
                m_hat.cwiseQuotient((v_hat.array() + eps_).matrix());
    } else {
      // Warmup region: variance is untrustworthy, fall back to momentum SGD.
      target -= lr_ * m_hat;
    }
  }
}

TrainResult train(DETMParameters params, std::span<const BagOfWords> train_bows,
                  std::span<const SubDocument> val_subdocs,
                  std::span<const BagOfWords> val_bows, StatsProvider& stats,
                  const TrainingConfig& config) {
  config.validate();
  if (train_bows.empty()) throw std::runtime_error("no training sub-documents");
  const WindowStats& train_stats = stats.training();
  require_inference_ready(train_stats);

  // Statistics for validation scoring: frozen training stats, or rebuilt from
  // the validation split when the recompute switch is on.
  std::optional<WindowStats> val_stats;
  if (config.recompute && !val_subdocs.empty()) {
    val_stats = stats.recomputed(val_subdocs);
  }

  const std::int64_t n_train = static_cast<std::int64_t>(train_bows.size());
  Rng rng(derive_seed(config.seed, "train"));
  GaussianEpsilon eps(rng);
  RAdamOptimizer optimizer(config.learning_rate, config.gradient_clip_norm);

  std::vector<std::size_t> order(train_bows.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result{std::move(params), {}, -1};
  DETMParameters best_params = result.params;
  double best_val = std::numeric_limits<double>::infinity();

  GradientMap grads;
  std::vector<BagOfWords> batch;
  batch.reserve(static_cast<std::size_t>(config.batch_size));

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(order);
    LossBreakdown epoch_mean{};
    int batches = 0;

    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(config.batch_size)) {
      batch.clear();
      const std::size_t stop =
          std::min(order.size(), at + static_cast<std::size_t>(config.batch_size));
      for (std::size_t i = at; i < stop; ++i) {
        batch.push_back(train_bows[order[i]]);
      }
      LossBreakdown loss =
          elbo_with_gradients(batch, result.params, train_stats, config.reweight,
                              n_train, eps, grads,
                              result.params.config.encoder_dropout > 0.0 ? &rng : nullptr);
      if (!std::isfinite(loss.total)) {
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch + 1) +
                               ", batch " + std::to_string(batches + 1));
      }
      optimizer.step(result.params, grads);
      epoch_mean.nll += loss.nll;
      epoch_mean.kl_theta += loss.kl_theta;
      epoch_mean.kl_eta += loss.kl_eta;
      epoch_mean.kl_alpha += loss.kl_alpha;
      epoch_mean.total += loss.total;
      epoch_mean.reweighted = loss.reweighted;
      ++batches;
    }
    epoch_mean.nll /= batches;
    epoch_mean.kl_theta /= batches;
    epoch_mean.kl_eta /= batches;
    epoch_mean.kl_alpha /= batches;
    epoch_mean.total /= batches;

    EpochRecord record;
    record.train_mean = epoch_mean;
    if (!val_bows.empty()) {
      const WindowStats& scoring_stats = val_stats ? *val_stats : stats.training();
      record.validation_nll =
          per_word_nll(result.params, val_bows, scoring_stats).per_word_nll;
      if (config.select_best && record.validation_nll < best_val) {
        best_val = record.validation_nll;
        best_params = result.params;
        result.best_epoch = epoch;
      }
    }
    record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.epochs.push_back(record);
  }

  if (config.select_best && result.best_epoch >= 0) {
    result.params = std::move(best_params);
  }
  return result;
}

namespace {

json training_config_to_json(const TrainingConfig& c) {
  return json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
              {"epochs", c.epochs},               {"reweight", c.reweight},
              {"recompute", c.recompute},         {"seed", c.seed},
              {"gradient_clip_norm", c.gradient_clip_norm},
              {"select_best", c.select_best}};
}

TrainingConfig training_config_from_json(const json& j) {
  TrainingConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.reweight = j.at("reweight").get<bool>();
  c.recompute = j.at("recompute").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.gradient_clip_norm = j.at("gradient_clip_norm").get<double>();
  c.select_best = j.at("select_best").get<bool>();
  return c;
}

json model_config_to_json(const ModelConfig& c) {
  return json{{"topic_count", c.topic_count},
              {"window_count", c.window_count},
              {"vocab_size", c.vocab_size},
              {"embed_dim", c.embed_dim},
              {"delta_alpha", c.delta_alpha},
              {"delta_eta", c.delta_eta},
              {"encoder_hidden", c.encoder_hidden},
              {"rnn_hidden", c.rnn_hidden},
              {"encoder_dropout", c.encoder_dropout}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.topic_count = j.at("topic_count").get<int>();
  c.window_count = j.at("window_count").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.delta_alpha = j.at("delta_alpha").get<double>();
  c.delta_eta = j.at("delta_eta").get<double>();
  c.encoder_hidden = j.at("encoder_hidden").get<int>();
  c.rnn_hidden = j.at("rnn_hidden").get<int>();
  c.encoder_dropout = j.at("encoder_dropout").get<double>();
  return c;
}

json history_to_json(const TrainingHistory& h) {
  json records = json::array();
  for (const auto& r : h.epochs) {
    records.push_back(json{
        {"nll", r.train_mean.nll},
        {"kl_theta", r.train_mean.kl_theta},
        {"kl_eta", r.train_mean.kl_eta},
        {"kl_alpha", r.train_mean.kl_alpha},
        {"total", r.train_mean.total},
        {"reweighted", r.train_mean.reweighted},
        {"validation_nll", r.validation_nll},
        {"seconds", r.seconds}});
  }
  return records;
}

TrainingHistory history_from_json(const json& j) {
  TrainingHistory h;
  for (const auto& r : j) {
    EpochRecord rec;
    rec.train_mean.nll = r.at("nll").get<double>();
    rec.train_mean.kl_theta = r.at("kl_theta").get<double>();
    rec.train_mean.kl_eta = r.at("kl_eta").get<double>();
    rec.train_mean.kl_alpha = r.at("kl_alpha").get<double>();
    rec.train_mean.total = r.at("total").get<double>();
    rec.train_mean.reweighted = r.at("reweighted").get<bool>();
    rec.validation_nll = r.at("validation_nll").get<double>();
    rec.seconds = r.at("seconds").get<double>();
    h.epochs.push_back(rec);
  }
  return h;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  json tensors;
  for (const auto& [name, mat] : ckpt.params.parameter_groups()) {
    tensors[name] = detail::matrix_to_json(*mat);
  }
  tensors["rho"] = detail::matrix_to_json(ckpt.params.rho.vectors);

  json j{{"version", detail::kFormatVersion},
         {"kind", "checkpoint"},
         {"model_config", model_config_to_json(ckpt.params.config)},
         {"training_config", training_config_to_json(ckpt.training)},
         {"history", history_to_json(ckpt.history)},
         {"vocab_hash", ckpt.params.rho.vocab_hash},
         {"vocabulary",
          json{{"tokens", ckpt.vocab.tokens},
               {"counts", ckpt.vocab.counts},
               {"subdoc_fraction", ckpt.vocab.subdoc_fraction}}},
         {"frozen_stats",
          json{{"matrix", detail::matrix_to_rows(ckpt.frozen_stats.matrix)},
               {"empty_mask", ckpt.frozen_stats.empty_mask},
               {"smoothed", ckpt.frozen_stats.smoothed}}},
         {"windows",
          json{{"count", ckpt.windows.count}, {"boundaries", ckpt.windows.boundaries}}},
         {"tensors", std::move(tensors)}};
  detail::write_json_file(path, j);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  json j = detail::parse_json_file(path);
  detail::check_version(j, path);
  if (j.value("kind", "") != std::string("checkpoint")) {
    throw std::runtime_error(path.string() + " is not a checkpoint file");
  }
  Checkpoint ckpt;
  ckpt.params.config = model_config_from_json(j.at("model_config"));
  ckpt.training = training_config_from_json(j.at("training_config"));
  ckpt.history = history_from_json(j.at("history"));

  const json& voc = j.at("vocabulary");
  ckpt.vocab.tokens = voc.at("tokens").get<std::vector<std::string>>();
  ckpt.vocab.counts = voc.at("counts").get<std::vector<std::int64_t>>();
  ckpt.vocab.subdoc_fraction = voc.at("subdoc_fraction").get<std::vector<double>>();

  const json& fs = j.at("frozen_stats");
  ckpt.frozen_stats.matrix = detail::matrix_from_rows(fs.at("matrix"));
  ckpt.frozen_stats.empty_mask = fs.at("empty_mask").get<std::vector<std::uint8_t>>();
  ckpt.frozen_stats.smoothed = fs.at("smoothed").get<bool>();

  ckpt.windows.count = j.at("windows").at("count").get<int>();
  ckpt.windows.boundaries = j.at("windows").at("boundaries").get<std::vector<double>>();

  const json& tensors = j.at("tensors");
  for (auto& [name, mat] : ckpt.params.parameter_groups()) {
    if (!tensors.contains(name)) {
      throw std::runtime_error("checkpoint missing tensor " + name);
    }
    *mat = detail::matrix_from_json(tensors.at(name));
  }
  ckpt.params.rho.vectors = detail::matrix_from_json(tensors.at("rho"));
  ckpt.params.rho.dimension = static_cast<int>(ckpt.params.rho.vectors.cols());
  ckpt.params.rho.vocab_hash = j.at("vocab_hash").get<std::string>();
  if (vocabulary_hash(ckpt.vocab) != ckpt.params.rho.vocab_hash) {
    throw std::runtime_error("checkpoint vocabulary hash mismatch in " + path.string());
  }
  return ckpt;
}

}  // namespace detm
