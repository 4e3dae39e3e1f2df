#include "detm/embeddings.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "detm/rng.hpp"

namespace detm {

namespace {

double stable_sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

// Cumulative table over unigram^(3/4) for negative sampling.
std::vector<double> negative_cdf(const Vocabulary& vocab) {
  std::vector<double> cdf(vocab.size());
  double acc = 0.0;
  for (std::size_t v = 0; v < vocab.size(); ++v) {
    acc += std::pow(static_cast<double>(std::max<std::int64_t>(vocab.counts[v], 1)), 0.75);
    cdf[v] = acc;
  }
  return cdf;
}

int sample_negative(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.uniform() * cdf.back();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) --it;
  return static_cast<int>(it - cdf.begin());
}

std::vector<std::vector<int>> encode_sentences(std::span<const SubDocument> subdocs,
                                               const Vocabulary& vocab) {
  std::vector<std::vector<int>> sentences;
  sentences.reserve(subdocs.size());
  for (const auto& sub : subdocs) {
    std::vector<int> ids;
    ids.reserve(sub.tokens.size());
    for (const auto& tok : sub.tokens) {
      const int v = vocab.index_of(tok);
      if (v >= 0) ids.push_back(v);  // out-of-vocabulary tokens are dropped
    }
    if (ids.size() >= 2) sentences.push_back(std::move(ids));
  }
  return sentences;
}

struct TrainShard {
  Eigen::MatrixXd* input;   // v vectors, updated in place
  Eigen::MatrixXd* output;  // u vectors
  const std::vector<std::vector<int>>* sentences;
  const std::vector<double>* cdf;
  const SgnsConfig* config;
  std::size_t begin = 0, end = 0;
  std::uint64_t seed = 0;
};

void train_shard(TrainShard shard) {
  const SgnsConfig& cfg = *shard.config;
  Rng rng(shard.seed);
  Eigen::MatrixXd& in = *shard.input;
  Eigen::MatrixXd& out = *shard.output;
  Eigen::VectorXd center_delta(cfg.dimension);

  // Linear lr decay over this shard's own schedule of pair updates.
  std::uint64_t shard_pairs = 0;
  for (std::size_t s = shard.begin; s < shard.end; ++s) {
    const auto& sent = (*shard.sentences)[s];
    const int n = static_cast<int>(sent.size());
    for (int i = 0; i < n; ++i) {
      const int lo = std::max(0, i - cfg.context_radius);
      const int hi = std::min(n - 1, i + cfg.context_radius);
      shard_pairs += static_cast<std::uint64_t>(hi - lo);
    }
  }
  shard_pairs *= static_cast<std::uint64_t>(std::max(cfg.epochs, 1));
  std::uint64_t done = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t s = shard.begin; s < shard.end; ++s) {
      const auto& sent = (*shard.sentences)[s];
      const int n = static_cast<int>(sent.size());
      for (int i = 0; i < n; ++i) {
        const int center = sent[i];
        const int lo = std::max(0, i - cfg.context_radius);
        const int hi = std::min(n - 1, i + cfg.context_radius);
        for (int j = lo; j <= hi; ++j) {
          if (j == i) continue;
          const double progress =
              static_cast<double>(done) / static_cast<double>(std::max<std::uint64_t>(shard_pairs, 1));
          const double lr = cfg.learning_rate * std::max(1.0 - progress, 1e-4);
          ++done;

          const int context = sent[j];
          center_delta.setZero();
          // positive pair
          {
            const double score = stable_sigmoid(in.row(center).dot(out.row(context)));
            const double g = (1.0 - score) * lr;
            center_delta += g * out.row(context).transpose();
            out.row(context) += g * in.row(center);
          }
          // negatives
          for (int k = 0; k < cfg.negatives; ++k) {
            const int neg = sample_negative(*shard.cdf, rng);
            if (neg == context) continue;
            const double score = stable_sigmoid(in.row(center).dot(out.row(neg)));
            const double g = -score * lr;
            center_delta += g * out.row(neg).transpose();
            out.row(neg) += g * in.row(center);
          }
          in.row(center) += center_delta;
        }
      }
    }
  }
}

}  // namespace

SgnsPairStep sgns_pair_step(const Eigen::VectorXd& center_in,
                            const Eigen::VectorXd& context_out,
                            std::span<const Eigen::VectorXd> negatives_out) {
  SgnsPairStep step;
  step.d_center = Eigen::VectorXd::Zero(center_in.size());
  const double pos = center_in.dot(context_out);
  step.objective = log_sigmoid(pos);
  const double g_pos = 1.0 - stable_sigmoid(pos);
  step.d_center += g_pos * context_out;
  step.d_context = g_pos * center_in;
  step.d_negatives.reserve(negatives_out.size());
  for (const auto& u : negatives_out) {
    const double s = center_in.dot(u);
    step.objective += log_sigmoid(-s);
    const double g = -stable_sigmoid(s);
    step.d_center += g * u;
    step.d_negatives.push_back(g * center_in);
  }
  return step;
}

EmbeddingMatrix train_skipgram(std::span<const SubDocument> subdocs,
                               const Vocabulary& vocab, const SgnsConfig& config) {
  if (vocab.size() == 0) throw std::runtime_error("empty vocabulary");
  if (config.dimension < 1) throw std::runtime_error("embedding dimension must be >= 1");
  if (config.negatives < 1) throw std::runtime_error("negative count must be >= 1");

  const auto v_count = static_cast<Eigen::Index>(vocab.size());
  Eigen::MatrixXd input(v_count, config.dimension);
  Eigen::MatrixXd output = Eigen::MatrixXd::Zero(v_count, config.dimension);
  {
    Rng init_rng(derive_seed(config.seed, "sgns-init"));
    const double bound = 0.5 / config.dimension;
    for (Eigen::Index r = 0; r < v_count; ++r) {
      for (int c = 0; c < config.dimension; ++c) {
        input(r, c) = init_rng.uniform(-bound, bound);
      }
    }
  }

  const auto sentences = encode_sentences(subdocs, vocab);
  const auto cdf = negative_cdf(vocab);

  if (config.epochs > 0 && !sentences.empty()) {
    const int workers = std::max(1, config.workers);
    if (workers == 1) {
      train_shard({&input, &output, &sentences, &cdf, &config, 0, sentences.size(),
                   derive_seed(config.seed, "sgns-train")});
    } else {
      std::vector<std::thread> pool;
      const std::size_t per = (sentences.size() + workers - 1) / workers;
      std::size_t start = 0;
      for (int w = 0; w < workers && start < sentences.size(); ++w) {
        const std::size_t stop = std::min(sentences.size(), start + per);
        pool.emplace_back(train_shard,
                          TrainShard{&input, &output, &sentences, &cdf, &config,
                                     start, stop,
                                     derive_seed(config.seed, "sgns-train-" + std::to_string(w))});
        start = stop;
      }
      for (auto& t : pool) t.join();
    }
  }

  if (!input.allFinite()) {
    throw std::runtime_error("skip-gram training produced non-finite embeddings");
  }
  EmbeddingMatrix m;
  m.vectors = std::move(input);
  m.dimension = config.dimension;
  m.vocab_hash = vocabulary_hash(vocab);
  return m;
}

namespace {

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void save_embeddings(const EmbeddingMatrix& embeddings, const Vocabulary& vocab,
                     const std::filesystem::path& path) {
  if (static_cast<std::size_t>(embeddings.vectors.rows()) != vocab.size()) {
    throw std::runtime_error("embedding row count does not match vocabulary");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write embeddings: " + path.string());
  out << embeddings.vectors.rows() << ' ' << embeddings.dimension << ' '
      << embeddings.vocab_hash << '\n';
  for (Eigen::Index r = 0; r < embeddings.vectors.rows(); ++r) {
    out << vocab.tokens[static_cast<std::size_t>(r)];
    for (int c = 0; c < embeddings.dimension; ++c) {
      out << ' ' << format_double(embeddings.vectors(r, c));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("short write: " + path.string());
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path,
                                const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embeddings: " + path.string());
  std::string header;
  if (!std::getline(in, header)) {
    throw std::runtime_error("empty embeddings file: " + path.string());
  }
  std::istringstream hs(header);
  std::size_t v_count = 0;
  int dim = 0;
  std::string file_hash;
  hs >> v_count >> dim;
  hs >> file_hash;  // optional third field
  if (v_count == 0 || dim <= 0) {
    throw std::runtime_error("malformed embeddings header in " + path.string());
  }
  const std::string expect_hash = vocabulary_hash(vocab);
  if (!file_hash.empty() && file_hash != expect_hash) {
    throw std::runtime_error("embedding checksum mismatch: file has " + file_hash +
                             ", vocabulary is " + expect_hash);
  }

  EmbeddingMatrix m;
  m.dimension = dim;
  m.vocab_hash = expect_hash;
  m.vectors.resize(static_cast<Eigen::Index>(vocab.size()), dim);
  std::vector<std::uint8_t> filled(vocab.size(), 0);

  std::string line;
  std::size_t rows_read = 0;
  std::vector<std::string> unknown;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    const int idx = vocab.index_of(token);
    if (idx < 0) {
      unknown.push_back(token);
      // still consume the row so later diagnostics stay accurate
      double v;
      int c = 0;
      while (c < dim && (ls >> v)) ++c;
      ++rows_read;
      continue;
    }
    for (int c = 0; c < dim; ++c) {
      double v;
      if (!(ls >> v)) {
        throw std::runtime_error("embedding row for \"" + token + "\" has fewer than " +
                                 std::to_string(dim) + " values");
      }
      m.vectors(idx, c) = v;
    }
    filled[static_cast<std::size_t>(idx)] = 1;
    ++rows_read;
  }
  if (rows_read != v_count) {
    throw std::runtime_error("embeddings header declares " + std::to_string(v_count) +
                             " rows but file has " + std::to_string(rows_read));
  }

  std::vector<std::string> missing;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (!filled[i]) missing.push_back(vocab.tokens[i]);
  }
  if (!missing.empty() || !unknown.empty()) {
    std::string msg = "embedding file does not match vocabulary:";
    if (!missing.empty()) {
      msg += " missing tokens [";
      for (std::size_t i = 0; i < missing.size() && i < 8; ++i) {
        msg += (i ? ", " : "") + missing[i];
      }
      if (missing.size() > 8) msg += ", ...";
      msg += "]";
    }
    if (!unknown.empty()) {
      msg += " unknown tokens [";
      for (std::size_t i = 0; i < unknown.size() && i < 8; ++i) {
        msg += (i ? ", " : "") + unknown[i];
      }
      if (unknown.size() > 8) msg += ", ...";
      msg += "]";
    }
    throw std::runtime_error(msg);
  }
  return m;
}

std::vector<std::string> embedding_file_tokens(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embeddings: " + path.string());
  std::string header;
  std::getline(in, header);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto pos = line.find(' ');
    tokens.push_back(line.substr(0, pos));
  }
  return tokens;
}

}  // namespace detm
