#include "detm/evaluator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "serialize.hpp"

namespace detm {

using detail::json;

double mixture_log_loss(const BagOfWords& bow, const Eigen::VectorXd& theta,
                        const Eigen::MatrixXd& beta_t) {
  double acc = 0.0;
  for (std::size_t i = 0; i < bow.ids.size(); ++i) {
    const double mix = theta.dot(beta_t.col(bow.ids[i]));
    acc += bow.counts[i] * std::log(mix);
  }
  return -acc;
}

EvaluationReport per_word_nll(const DETMParameters& params,
                              std::span<const BagOfWords> eval_bows,
                              const WindowStats& stats, bool deterministic,
                              Rng* rng) {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig& cfg = params.config;
  require_inference_ready(stats);

  std::vector<BagOfWords> bags;
  bags.reserve(eval_bows.size());
  std::int64_t total_words = 0;
  for (const auto& bow : eval_bows) {
    if (bow.empty()) continue;  // nothing in vocabulary: not an observation
    bags.push_back(bow);
    total_words += static_cast<std::int64_t>(bow.total);
  }
  if (bags.empty() || total_words == 0) {
    throw std::runtime_error(
        "evaluation set has zero in-vocabulary tokens after dropping empty bags");
  }

  if (!deterministic && rng == nullptr) {
    throw std::runtime_error("stochastic evaluation needs a random source");
  }
  ZeroEpsilon zero;
  std::optional<GaussianEpsilon> gaussian;
  if (!deterministic) gaussian.emplace(*rng);
  EpsilonSource& eps =
      deterministic ? static_cast<EpsilonSource&>(zero)
                    : static_cast<EpsilonSource&>(*gaussian);

  const EtaResult eta = infer_eta(stats, params, eps);

  // Topic-word distributions per window from the (mean or sampled) alphas.
  std::vector<Eigen::MatrixXd> betas(static_cast<std::size_t>(cfg.window_count));
  for (int t = 0; t < cfg.window_count; ++t) {
    Eigen::MatrixXd beta_t(cfg.topic_count, cfg.vocab_size);
    for (int k = 0; k < cfg.topic_count; ++k) {
      const Eigen::Index row = static_cast<Eigen::Index>(t) * cfg.topic_count + k;
      Eigen::VectorXd alpha_tk = params.alpha_mean.row(row).transpose();
      if (!deterministic) {
        for (int l = 0; l < cfg.embed_dim; ++l) {
          const double lv = std::clamp(params.alpha_logvar(row, l), -10.0, 10.0);
          alpha_tk(l) += std::exp(0.5 * lv) * rng->normal();
        }
      }
      beta_t.row(k) = compute_beta(alpha_tk, params.rho).transpose();
    }
    betas[static_cast<std::size_t>(t)] = std::move(beta_t);
  }

  double loss = 0.0;
  constexpr std::size_t kChunk = 2048;
  for (std::size_t at = 0; at < bags.size(); at += kChunk) {
    const std::size_t stop = std::min(bags.size(), at + kChunk);
    std::span<const BagOfWords> chunk(bags.data() + at, stop - at);
    const ThetaBatch thetas = infer_theta_batch(chunk, eta.sample, params, eps);
    for (std::size_t d = 0; d < chunk.size(); ++d) {
      const Eigen::VectorXd theta =
          thetas.theta.row(static_cast<Eigen::Index>(d)).transpose();
      loss += mixture_log_loss(chunk[d], theta,
                               betas[static_cast<std::size_t>(chunk[d].window)]);
    }
  }

  EvaluationReport report;
  report.per_word_nll = loss / static_cast<double>(total_words);
  report.word_count = total_words;
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

namespace {

// Top-n vocabulary indices of a topic distribution, ties toward lower index.
std::vector<int> top_indices(const Eigen::VectorXd& beta, int n) {
  std::vector<int> idx(static_cast<std::size_t>(beta.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const int keep = std::min<int>(n, static_cast<int>(beta.size()));
  std::partial_sort(idx.begin(), idx.begin() + keep, idx.end(),
                    [&](int a, int b) {
                      if (beta(a) != beta(b)) return beta(a) > beta(b);
                      return a < b;
                    });
  idx.resize(static_cast<std::size_t>(keep));
  return idx;
}

struct PairKey {
  int a, b;
  bool operator==(const PairKey&) const = default;
};
struct PairKeyHash {
  std::size_t operator()(const PairKey& k) const {
    return std::hash<std::uint64_t>()(
        (static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.a)) << 32) |
        static_cast<std::uint32_t>(k.b));
  }
};

}  // namespace

double npmi_coherence(const DETMParameters& params,
                      std::span<const SubDocument> eval_subdocs,
                      const Vocabulary& vocab, int top_n, int context) {
  if (eval_subdocs.empty()) {
    throw std::runtime_error("NPMI needs a nonempty evaluation corpus");
  }
  if (top_n < 2 || context < 1) {
    throw std::runtime_error("NPMI needs top_n >= 2 and context >= 1");
  }
  const ModelConfig& cfg = params.config;

  // Word lists per (window, topic), from the mean topic embeddings.
  std::vector<std::vector<int>> lists;
  lists.reserve(static_cast<std::size_t>(cfg.window_count) * cfg.topic_count);
  std::unordered_set<int> candidates;
  for (int t = 0; t < cfg.window_count; ++t) {
    for (int k = 0; k < cfg.topic_count; ++k) {
      const Eigen::Index row = static_cast<Eigen::Index>(t) * cfg.topic_count + k;
      const Eigen::VectorXd beta =
          compute_beta(params.alpha_mean.row(row).transpose(), params.rho);
      lists.push_back(top_indices(beta, top_n));
      for (int w : lists.back()) candidates.insert(w);
    }
  }

  // Sliding windows of `context` tokens, stride 1, within sub-documents.
  // Shorter sub-documents contribute a single truncated window.
  std::int64_t window_total = 0;
  std::unordered_map<int, std::int64_t> df;
  std::unordered_map<PairKey, std::int64_t, PairKeyHash> joint;
  std::vector<int> present;
  for (const auto& sub : eval_subdocs) {
    std::vector<int> ids(sub.tokens.size());
    for (std::size_t i = 0; i < sub.tokens.size(); ++i) {
      const int v = vocab.index_of(sub.tokens[i]);
      ids[i] = (v >= 0 && candidates.count(v)) ? v : -1;
    }
    const std::size_t len = ids.size();
    if (len == 0) continue;
    const std::size_t win = std::min<std::size_t>(static_cast<std::size_t>(context), len);
    const std::size_t n_windows = len - win + 1;
    for (std::size_t start = 0; start < n_windows; ++start) {
      ++window_total;
      present.clear();
      for (std::size_t i = start; i < start + win; ++i) {
        if (ids[i] >= 0 &&
            std::find(present.begin(), present.end(), ids[i]) == present.end()) {
          present.push_back(ids[i]);
        }
      }
      for (int w : present) ++df[w];
      for (std::size_t i = 0; i < present.size(); ++i) {
        for (std::size_t j = i + 1; j < present.size(); ++j) {
          PairKey key{std::min(present[i], present[j]),
                      std::max(present[i], present[j])};
          ++joint[key];
        }
      }
    }
  }
  if (window_total == 0) {
    throw std::runtime_error("evaluation corpus produced no context windows");
  }

  constexpr double kEps = 1e-12;
  const double n_windows = static_cast<double>(window_total);
  double window_acc = 0.0;
  for (int t = 0; t < cfg.window_count; ++t) {
    double topic_acc = 0.0;
    for (int k = 0; k < cfg.topic_count; ++k) {
      const auto& list =
          lists[static_cast<std::size_t>(t) * cfg.topic_count + static_cast<std::size_t>(k)];
      double pair_acc = 0.0;
      std::int64_t pair_count = 0;
      for (std::size_t i = 0; i < list.size(); ++i) {
        for (std::size_t j = i + 1; j < list.size(); ++j) {
          ++pair_count;
          PairKey key{std::min(list[i], list[j]), std::max(list[i], list[j])};
          auto it = joint.find(key);
          const std::int64_t joint_count = it == joint.end() ? 0 : it->second;
          if (joint_count == 0) {
            pair_acc += -1.0;
            continue;
          }
          const double p_ij = static_cast<double>(joint_count) / n_windows;
          const double p_i = static_cast<double>(df[list[i]]) / n_windows;
          const double p_j = static_cast<double>(df[list[j]]) / n_windows;
          const double num = std::log(p_ij + kEps) - std::log(p_i * p_j + kEps);
          const double den = -std::log(p_ij) + kEps;
          pair_acc += std::clamp(num / den, -1.0, 1.0);
        }
      }
      topic_acc += pair_count > 0 ? pair_acc / static_cast<double>(pair_count) : 0.0;
    }
    window_acc += topic_acc / static_cast<double>(cfg.topic_count);
  }
  return window_acc / static_cast<double>(cfg.window_count);
}

namespace {

// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace

double nll_npmi_rank_correlation(
    std::span<const std::pair<std::vector<double>, std::vector<double>>> rows) {
  if (rows.empty()) throw std::runtime_error("rank correlation needs rows");
  double acc = 0.0;
  for (const auto& [nll, npmi] : rows) {
    if (nll.size() != npmi.size() || nll.size() < 2) {
      throw std::runtime_error("each row needs >= 2 paired entries");
    }
    std::vector<double> inverse_nll(nll.size());
    for (std::size_t i = 0; i < nll.size(); ++i) inverse_nll[i] = -nll[i];
    const auto r_npmi = average_ranks(npmi);
    const auto r_inll = average_ranks(inverse_nll);
    acc += pearson(r_npmi, r_inll);  // constant rows fall out as zero
  }
  return acc / static_cast<double>(rows.size());
}

SignificanceEstimate seed_variance(std::span<const double> scores) {
  if (scores.size() < 2) {
    throw std::runtime_error("seed variance needs at least 2 runs");
  }
  const double n = static_cast<double>(scores.size());
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= n;
  double ss = 0.0;
  for (double s : scores) ss += (s - mean) * (s - mean);
  SignificanceEstimate est;
  est.n_runs = static_cast<int>(scores.size());
  est.two_sigma = 2.0 * std::sqrt(ss / (n - 1.0));
  return est;
}

std::optional<std::size_t> mark_best(std::span<const double> row, double two_sigma) {
  if (row.empty()) throw std::runtime_error("mark_best on an empty row");
  if (two_sigma < 0.0) throw std::runtime_error("two_sigma must be >= 0");
  if (row.size() == 1) return std::nullopt;  // no competitor
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] < row[best]) best = i;
  }
  double runner_up = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i != best) runner_up = std::min(runner_up, row[i]);
  }
  if (runner_up - row[best] > two_sigma) return best;
  return std::nullopt;
}

FixtureTable load_fixture_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open fixture: " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  FixtureTable table;
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("empty fixture: " + path.string());
  }
  auto header = split(line);
  if (header.size() < 2) {
    throw std::runtime_error("fixture header needs condition columns: " + path.string());
  }
  table.columns.assign(header.begin() + 1, header.end());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error("ragged fixture row in " + path.string());
    }
    std::vector<double> values;
    for (std::size_t i = 1; i < cells.size(); ++i) values.push_back(std::stod(cells[i]));
    table.rows.emplace_back(cells[0], std::move(values));
  }
  return table;
}

std::string fingerprint_json_text(const std::string& canonical_json) {
  return hash_hex(fnv1a(canonical_json));
}

void save_report(const EvaluationReport& report, const std::filesystem::path& path) {
  json j{{"version", detail::kFormatVersion},
         {"kind", "evaluation_report"},
         {"fingerprint", report.fingerprint},
         {"per_word_nll", report.per_word_nll},
         {"word_count", report.word_count},
         {"seconds", report.seconds}};
  if (report.npmi) {
    j["npmi"] = *report.npmi;
  } else {
    j["npmi"] = nullptr;
  }
  detail::write_json_file(path, j);
}

EvaluationReport load_report(const std::filesystem::path& path) {
  json j = detail::parse_json_file(path);
  detail::check_version(j, path);
  EvaluationReport r;
  r.fingerprint = j.at("fingerprint").get<std::string>();
  r.per_word_nll = j.at("per_word_nll").get<double>();
  r.word_count = j.at("word_count").get<std::int64_t>();
  r.seconds = j.value("seconds", 0.0);
  if (j.contains("npmi") && !j.at("npmi").is_null()) {
    r.npmi = j.at("npmi").get<double>();
  }
  return r;
}

}  // namespace detm
