#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "detm/evaluator.hpp"
#include "detm/rng.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace detm;

namespace {

Vocabulary manual_vocab(const std::vector<std::string>& tokens) {
  Vocabulary v;
  v.tokens = tokens;
  v.counts.assign(tokens.size(), 1);
  v.subdoc_fraction.assign(tokens.size(), 0.1);
  return v;
}

EmbeddingMatrix identity_rho(int v) {
  EmbeddingMatrix m;
  m.dimension = v;
  m.vocab_hash = "test";
  m.vectors = Eigen::MatrixXd::Identity(v, v);
  return m;
}

// Model whose every (window, topic) list starts with the given top tokens.
DETMParameters pinned_topic_model(int v, const std::vector<int>& favorite_ids) {
  ModelConfig cfg;
  cfg.topic_count = 2;
  cfg.window_count = 2;
  cfg.vocab_size = v;
  cfg.embed_dim = v;
  cfg.encoder_hidden = 8;
  cfg.rnn_hidden = 4;
  DETMParameters p = init_model(cfg, identity_rho(v), 1);
  p.alpha_mean.setZero();
  for (Eigen::Index row = 0; row < p.alpha_mean.rows(); ++row) {
    double height = 6.0;
    for (int id : favorite_ids) {
      p.alpha_mean(row, id) = height;
      height -= 1.0;  // strictly decreasing so the list order is fixed
    }
  }
  return p;
}

WindowStats flat_stats(int t, int v) {
  WindowStats stats;
  stats.matrix = Eigen::MatrixXd::Constant(t, v, 1.0 / v);
  stats.empty_mask.assign(static_cast<std::size_t>(t), 0);
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

SubDocument subdoc_of(const std::vector<std::string>& tokens) {
  SubDocument s;
  s.tokens = tokens;
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("evaluator");

TEST_CASE("uniform topics give per-word NLL of ln V") {
  const int v = 10;
  ModelConfig cfg;
  cfg.topic_count = 2;
  cfg.window_count = 2;
  cfg.vocab_size = v;
  cfg.embed_dim = 3;
  cfg.encoder_hidden = 8;
  cfg.rnn_hidden = 4;
  EmbeddingMatrix rho;
  rho.dimension = 3;
  rho.vocab_hash = "test";
  rho.vectors = Eigen::MatrixXd::Random(v, 3);
  DETMParameters p = init_model(cfg, std::move(rho), 3);
  p.alpha_mean.setZero();  // every beta row becomes exactly uniform

  const std::vector<BagOfWords> bows = {bow_of({0, 4}, {2, 1}, 0),
                                        bow_of({9}, {5}, 1)};
  const EvaluationReport report = per_word_nll(p, bows, flat_stats(2, v));
  CHECK(report.per_word_nll == doctest::Approx(std::log(10.0)).epsilon(1e-9));
  CHECK(report.word_count == 8);
}

TEST_CASE("mixture_log_loss matches the hand-computed V=3 case") {
  // theta = (0.5, 0.5); beta rows (0.5, 0.25, 0.25) and (0.25, 0.5, 0.25);
  // one token of word 0: mixture = 0.375
  Eigen::VectorXd theta(2);
  theta << 0.5, 0.5;
  Eigen::MatrixXd beta(2, 3);
  beta << 0.5, 0.25, 0.25, 0.25, 0.5, 0.25;
  const BagOfWords bow = bow_of({0}, {1}, 0);
  CHECK(mixture_log_loss(bow, theta, beta) ==
        doctest::Approx(-std::log(0.375)).epsilon(1e-12));
}

TEST_CASE("per-word NLL is invariant to duplication and reordering") {
  const DETMParameters p = pinned_topic_model(5, {0, 1});
  const WindowStats stats = flat_stats(2, 5);
  std::vector<BagOfWords> bows = {bow_of({0, 2}, {1, 2}, 0), bow_of({3}, {4}, 1),
                                  bow_of({1, 4}, {2, 2}, 0)};
  const double base = per_word_nll(p, bows, stats).per_word_nll;

  std::vector<BagOfWords> doubled = bows;
  doubled.insert(doubled.end(), bows.begin(), bows.end());
  CHECK(per_word_nll(p, doubled, stats).per_word_nll ==
        doctest::Approx(base).epsilon(1e-12));

  std::vector<BagOfWords> reversed(bows.rbegin(), bows.rend());
  CHECK(per_word_nll(p, reversed, stats).per_word_nll ==
        doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("per-word NLL drops empty bags and rejects an all-empty set") {
  const DETMParameters p = pinned_topic_model(5, {0, 1});
  const WindowStats stats = flat_stats(2, 5);
  BagOfWords empty;
  empty.window = 0;
  std::vector<BagOfWords> with_empty = {bow_of({0}, {1}, 0), empty};
  std::vector<BagOfWords> only = {bow_of({0}, {1}, 0)};
  CHECK(per_word_nll(p, with_empty, stats).per_word_nll ==
        per_word_nll(p, only, stats).per_word_nll);
  std::vector<BagOfWords> all_empty = {empty};
  CHECK_THROWS_AS(per_word_nll(p, all_empty, stats), std::runtime_error);
}

TEST_CASE("NPMI is one for a perfectly associated pair") {
  const Vocabulary vocab = manual_vocab({"a", "b", "x", "y"});
  const DETMParameters p = pinned_topic_model(4, {0, 1});
  // a and b co-occur in their only window; other windows lack both.
  std::vector<SubDocument> subs = {subdoc_of({"a", "b"}), subdoc_of({"x", "y"}),
                                   subdoc_of({"y", "x"})};
  const double score = npmi_coherence(p, subs, vocab, 2, 10);
  CHECK(score == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("NPMI is zero at exact independence") {
  const Vocabulary vocab = manual_vocab({"a", "b", "q", "r"});
  const DETMParameters p = pinned_topic_model(4, {0, 1});
  // Four windows: {a,b}, {a}, {b}, {} so p_ab = p_a * p_b = 1/4.
  std::vector<SubDocument> subs = {subdoc_of({"a", "b"}), subdoc_of({"a", "q"}),
                                   subdoc_of({"b", "q"}), subdoc_of({"q", "r"})};
  const double score = npmi_coherence(p, subs, vocab, 2, 10);
  CHECK(score == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("NPMI matches the hand-counted six-token example") {
  // One sub-document "a b b d a d" with 3-token contexts gives windows
  // [a b b] [b b d] [b d a] [d a d]: p_a = 3/4, p_b = 3/4, p_ab = 1/2,
  // so NPMI = ln((1/2)/(9/16)) / -ln(1/2) = ln(8/9)/ln 2 = -0.169925001...
  const Vocabulary vocab = manual_vocab({"a", "b", "d"});
  const DETMParameters p = pinned_topic_model(3, {0, 1});
  std::vector<SubDocument> subs = {subdoc_of({"a", "b", "b", "d", "a", "d"})};
  const double score = npmi_coherence(p, subs, vocab, 2, 3);
  CHECK(score == doctest::Approx(-0.16992500144231237).epsilon(1e-9));
}

TEST_CASE("a pair that never co-occurs contributes minus one") {
  const Vocabulary vocab = manual_vocab({"a", "b", "z"});
  const DETMParameters p = pinned_topic_model(3, {0, 1});
  std::vector<SubDocument> subs = {subdoc_of({"a", "z"}), subdoc_of({"b", "z"})};
  CHECK(npmi_coherence(p, subs, vocab, 2, 10) == doctest::Approx(-1.0));
}

TEST_CASE("every pair NPMI lies inside the unit interval on random corpora") {
  Rng rng(77);
  const Vocabulary vocab = manual_vocab({"a", "b", "c", "d", "e", "f"});
  const DETMParameters p = pinned_topic_model(6, {0, 1, 2});
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<SubDocument> subs;
    const int n = 3 + static_cast<int>(rng.below(12));
    for (int s = 0; s < n; ++s) {
      std::vector<std::string> toks;
      const int len = 2 + static_cast<int>(rng.below(14));
      for (int i = 0; i < len; ++i) {
        toks.push_back(vocab.tokens[rng.below(vocab.size())]);
      }
      subs.push_back(subdoc_of(toks));
    }
    const double score = npmi_coherence(p, subs, vocab, 3, 4);
    CHECK(score >= -1.0 - 1e-12);
    CHECK(score <= 1.0 + 1e-12);
  }
}

TEST_CASE("rank correlation hits plus and minus one on mirrored rows") {
  using Row = std::pair<std::vector<double>, std::vector<double>>;
  // npmi exactly mirrors inverse nll order
  const std::vector<Row> agree = {{{7.3, 7.1, 7.2}, {0.1, 0.5, 0.3}}};
  CHECK(nll_npmi_rank_correlation(agree) == doctest::Approx(1.0));
  // npmi order equals nll order
  const std::vector<Row> disagree = {{{7.1, 7.2, 7.3}, {0.1, 0.2, 0.3}}};
  CHECK(nll_npmi_rank_correlation(disagree) == doctest::Approx(-1.0));
  // constant row contributes zero
  const std::vector<Row> constant = {{{7.1, 7.2}, {0.4, 0.4}},
                                     {{7.3, 7.1}, {0.0, 0.2}}};
  CHECK(nll_npmi_rank_correlation(constant) == doctest::Approx(0.5));
}

TEST_CASE("transcribed paper tables correlate at 0.23 within 0.02") {
  const std::filesystem::path dir(DETM_FIXTURE_DIR);
  const std::vector<std::string> axes = {"recompute",    "reweight",
                                         "delta_ratio",  "topic_count",
                                         "window_count", "vocab_size"};
  std::vector<std::pair<std::vector<double>, std::vector<double>>> rows;
  for (const auto& axis : axes) {
    const FixtureTable nll = load_fixture_csv(dir / ("nll_" + axis + ".csv"));
    const FixtureTable npmi = load_fixture_csv(dir / ("npmi_" + axis + ".csv"));
    REQUIRE(nll.rows.size() == npmi.rows.size());
    for (std::size_t r = 0; r < nll.rows.size(); ++r) {
      REQUIRE(nll.rows[r].first == npmi.rows[r].first);
      rows.emplace_back(nll.rows[r].second, npmi.rows[r].second);
    }
  }
  REQUIRE(rows.size() == 30);
  const double corr = nll_npmi_rank_correlation(rows);
  CHECK(corr == doctest::Approx(0.23).epsilon(0.1));
  CHECK(std::abs(corr - 0.23) <= 0.02);
}

TEST_CASE("seed variance closed-form cases") {
  const std::vector<double> constant = {7.0, 7.0, 7.0};
  CHECK(seed_variance(constant).two_sigma == doctest::Approx(0.0));
  const std::vector<double> pair = {7.00, 7.02};
  CHECK(seed_variance(pair).two_sigma ==
        doctest::Approx(2.0 * std::sqrt(0.0002)).epsilon(1e-12));
  CHECK(seed_variance(pair).n_runs == 2);
  const std::vector<double> single = {7.0};
  CHECK_THROWS_AS(seed_variance(single), std::runtime_error);
}

TEST_CASE("seed variance matches the two-pass oracle on simulated runs") {
  Rng rng(91);
  std::vector<double> scores;
  for (int i = 0; i < 20; ++i) scores.push_back(7.0 + 0.02 * rng.normal());
  CHECK(seed_variance(scores).two_sigma ==
        doctest::Approx(oracle::two_pass_two_sigma(scores)).epsilon(1e-12));
}

TEST_CASE("seed variance scales with the absolute scale factor") {
  Rng rng(92);
  std::vector<double> scores;
  for (int i = 0; i < 8; ++i) scores.push_back(rng.normal());
  std::vector<double> scaled;
  for (double s : scores) scaled.push_back(-2.5 * s);
  CHECK(seed_variance(scaled).two_sigma ==
        doctest::Approx(2.5 * seed_variance(scores).two_sigma).epsilon(1e-12));
}

TEST_CASE("mark_best honors the significance threshold") {
  const std::vector<double> close = {7.05, 7.04};
  CHECK_FALSE(mark_best(close, 0.03).has_value());  // gap 0.01
  const std::vector<double> clear = {7.06, 7.10};
  REQUIRE(mark_best(clear, 0.03).has_value());
  CHECK(*mark_best(clear, 0.03) == 0);
  const std::vector<double> tied = {5.0, 5.0};
  CHECK_FALSE(mark_best(tied, 0.0).has_value());
  CHECK_FALSE(mark_best(tied, 10.0).has_value());
}

TEST_CASE("mark_best is shift and permutation invariant") {
  Rng rng(93);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> row;
    const int n = 2 + static_cast<int>(rng.below(6));
    for (int i = 0; i < n; ++i) row.push_back(rng.uniform(6.5, 7.5));
    const double sigma = rng.uniform(0.0, 0.2);
    const auto base = mark_best(row, sigma);

    std::vector<double> shifted;
    for (double x : row) shifted.push_back(x + 3.7);
    CHECK(mark_best(shifted, sigma) == base);

    std::vector<double> rotated(row.begin() + 1, row.end());
    rotated.push_back(row.front());
    const auto rot = mark_best(rotated, sigma);
    if (base.has_value()) {
      REQUIRE(rot.has_value());
      CHECK(rotated[*rot] == row[*base]);
    } else {
      CHECK_FALSE(rot.has_value());
    }
  }
}

TEST_CASE("evaluation reports round-trip through JSON") {
  EvaluationReport r;
  r.per_word_nll = 7.042;
  r.npmi = -0.013;
  r.word_count = 12345;
  r.fingerprint = "deadbeef";
  r.seconds = 1.25;
  const auto path = std::filesystem::temp_directory_path() / "report_rt.json";
  save_report(r, path);
  const EvaluationReport loaded = load_report(path);
  CHECK(loaded.per_word_nll == r.per_word_nll);
  CHECK(loaded.npmi == r.npmi);
  CHECK(loaded.word_count == r.word_count);
  CHECK(loaded.fingerprint == r.fingerprint);
}

TEST_SUITE_END();
