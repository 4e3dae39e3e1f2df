#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "detm/corpus.hpp"
#include "detm/model.hpp"

namespace detm {

struct EvaluationReport {
  double per_word_nll = 0.0;              // nats per in-vocabulary token
  std::optional<double> npmi;             // in [-1, 1] when computed
  std::int64_t word_count = 0;
  std::string fingerprint;                // configuration content hash
  double seconds = 0.0;
};

struct SignificanceEstimate {
  int n_runs = 0;
  double two_sigma = 0.0;  // 2 x Bessel-corrected sample standard deviation
};

// Mean negated log mixture likelihood per in-vocabulary token. With
// deterministic=true every reparameterization noise is zero, so means are
// used throughout. Empty bags are dropped; if none remain this throws.
EvaluationReport per_word_nll(const DETMParameters& params,
                              std::span<const BagOfWords> eval_bows,
                              const WindowStats& stats,
                              bool deterministic = true, Rng* rng = nullptr);

// The reconstruction sum the report is built from, exposed so oracles can
// feed hand-set mixtures: -sum_d sum_i counts_i * log(theta_d . beta[:, id_i]).
double mixture_log_loss(const BagOfWords& bow, const Eigen::VectorXd& theta,
                        const Eigen::MatrixXd& beta_t);

// Average NPMI over the top-n words of every (window, topic) list, estimated
// from sliding context windows over the evaluation sub-documents.
double npmi_coherence(const DETMParameters& params,
                      std::span<const SubDocument> eval_subdocs,
                      const Vocabulary& vocab, int top_n = 20, int context = 10);

// Per row: Spearman correlation between NPMI ranks and inverse-NLL ranks
// (lower NLL ranks better). Returns the mean over rows; constant rows
// contribute zero.
double nll_npmi_rank_correlation(
    std::span<const std::pair<std::vector<double>, std::vector<double>>> rows);

SignificanceEstimate seed_variance(std::span<const double> scores);

// Index of the smallest row entry iff it beats the runner-up by more than
// two_sigma; ties and insignificant gaps return nothing.
std::optional<std::size_t> mark_best(std::span<const double> row, double two_sigma);

// Transcribed result tables: corpus row labels, condition columns.
struct FixtureTable {
  std::vector<std::string> columns;
  std::vector<std::pair<std::string, std::vector<double>>> rows;
};
FixtureTable load_fixture_csv(const std::filesystem::path& path);

std::string fingerprint_json_text(const std::string& canonical_json);

void save_report(const EvaluationReport& report, const std::filesystem::path& path);
EvaluationReport load_report(const std::filesystem::path& path);

}  // namespace detm
