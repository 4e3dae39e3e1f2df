#include "synthetic.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "detm/rng.hpp"

namespace detm::synth {

std::vector<std::string> generator_tokens(int vocab_size) {
  std::vector<std::string> tokens;
  tokens.reserve(static_cast<std::size_t>(vocab_size));
  for (int v = 0; v < vocab_size; ++v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "w%03d", v);
    tokens.emplace_back(buf);
  }
  return tokens;
}

Corpus generate_corpus(const GeneratorSpec& spec) {
  Rng rng(spec.seed);
  const int k_count = spec.topic_count;
  const int t_count = spec.window_count;
  const int v_count = spec.vocab_size;
  const auto tokens = generator_tokens(v_count);

  // True topic-word rows: contiguous blocks that drift one block-width per
  // window, so every (t, k) is a distinct distribution.
  const int block = std::max(1, v_count / (k_count * 2));
  std::vector<Eigen::VectorXd> beta(static_cast<std::size_t>(t_count * k_count));
  for (int t = 0; t < t_count; ++t) {
    for (int k = 0; k < k_count; ++k) {
      Eigen::VectorXd logits = Eigen::VectorXd::Zero(v_count);
      const int start = ((k * v_count) / k_count + t * block) % v_count;
      for (int o = 0; o < block * 2; ++o) {
        logits((start + o) % v_count) = spec.topic_sharpness;
      }
      Eigen::ArrayXd e = (logits.array() - logits.maxCoeff()).exp();
      beta[static_cast<std::size_t>(t * k_count + k)] = (e / e.sum()).matrix();
    }
  }

  // Mixture-prior walk over windows.
  std::vector<Eigen::VectorXd> eta(static_cast<std::size_t>(t_count));
  Eigen::VectorXd walk = Eigen::VectorXd::Zero(k_count);
  for (int t = 0; t < t_count; ++t) {
    for (int k = 0; k < k_count; ++k) walk(k) += rng.normal(0.0, 0.4);
    eta[static_cast<std::size_t>(t)] = walk;
  }

  const int years_per_window = (spec.year_max - spec.year_min + 1) / t_count;
  Corpus corpus;
  corpus.docs.reserve(static_cast<std::size_t>(spec.documents));
  for (int d = 0; d < spec.documents; ++d) {
    const int window = static_cast<int>(rng.below(static_cast<std::uint64_t>(t_count)));
    const int year = spec.year_min + window * years_per_window +
                     static_cast<int>(rng.below(static_cast<std::uint64_t>(years_per_window)));

    Eigen::VectorXd theta_logits(k_count);
    for (int k = 0; k < k_count; ++k) {
      theta_logits(k) = spec.theta_concentration *
                        (eta[static_cast<std::size_t>(window)](k) + rng.normal());
    }
    Eigen::ArrayXd e = (theta_logits.array() - theta_logits.maxCoeff()).exp();
    const Eigen::VectorXd theta = (e / e.sum()).matrix();

    Eigen::VectorXd mixture = Eigen::VectorXd::Zero(v_count);
    for (int k = 0; k < k_count; ++k) {
      mixture += theta(k) * beta[static_cast<std::size_t>(window * k_count + k)];
    }

    const int len = spec.min_tokens +
                    static_cast<int>(rng.below(static_cast<std::uint64_t>(
                        spec.max_tokens - spec.min_tokens + 1)));
    Document doc;
    doc.id = "doc" + std::to_string(d);
    doc.time = year;
    doc.tokens.reserve(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i) {
      double u = rng.uniform();
      int v = 0;
      double acc = mixture(0);
      while (v + 1 < v_count && u > acc) {
        ++v;
        acc += mixture(v);
      }
      doc.tokens.push_back(tokens[static_cast<std::size_t>(v)]);
    }
    corpus.docs.push_back(std::move(doc));
  }
  return corpus;
}

}  // namespace detm::synth
