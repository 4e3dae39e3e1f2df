#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "detm/corpus.hpp"

namespace detm {

// Fixed word embedding matrix rho, one row per vocabulary entry.
struct EmbeddingMatrix {
  Eigen::MatrixXd vectors;  // V x L
  int dimension = 0;
  std::string vocab_hash;
};

struct SgnsConfig {
  int dimension = 300;
  int context_radius = 5;
  int negatives = 5;
  int epochs = 5;
  double learning_rate = 0.025;  // decays linearly over all pair updates
  std::uint64_t seed = 1;
  int workers = 1;  // >1 shards sentences hogwild-style; deterministic only at 1
};

// Skip-gram with negative sampling over the sub-documents (typically the
// combined training and validation splits). Negatives are drawn from the
// unigram distribution raised to 3/4.
EmbeddingMatrix train_skipgram(std::span<const SubDocument> subdocs,
                               const Vocabulary& vocab, const SgnsConfig& config);

// Objective and gradients for a single (center, context, negatives) step:
//   log sigma(u_o . v_c) + sum_k log sigma(-u_k . v_c)
// The trainer ascends these gradients; tests difference them numerically.
struct SgnsPairStep {
  double objective = 0.0;
  Eigen::VectorXd d_center;
  Eigen::VectorXd d_context;
  std::vector<Eigen::VectorXd> d_negatives;
};
SgnsPairStep sgns_pair_step(const Eigen::VectorXd& center_in,
                            const Eigen::VectorXd& context_out,
                            std::span<const Eigen::VectorXd> negatives_out);

// Text format: header "V L <vocab_hash>", then V lines of "token f1 ... fL"
// with shortest round-trip float formatting.
void save_embeddings(const EmbeddingMatrix& embeddings, const Vocabulary& vocab,
                     const std::filesystem::path& path);
EmbeddingMatrix load_embeddings(const std::filesystem::path& path,
                                const Vocabulary& vocab);

// Token list in file order, without requiring a Vocabulary to check against.
std::vector<std::string> embedding_file_tokens(const std::filesystem::path& path);

}  // namespace detm
