#include "detm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "detm/rng.hpp"
#include "serialize.hpp"

namespace detm {

using detail::json;

std::pair<int, int> Corpus::date_range() const {
  if (docs.empty()) {
    throw std::runtime_error("date_range on empty corpus");
  }
  int lo = docs.front().time, hi = docs.front().time;
  for (const auto& d : docs) {
    lo = std::min(lo, d.time);
    hi = std::max(hi, d.time);
  }
  return {lo, hi};
}

int Vocabulary::index_of(const std::string& token) const {
  if (index_.empty() && !tokens.empty()) rebuild_index();
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

void Vocabulary::rebuild_index() const {
  index_.clear();
  index_.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    index_.emplace(tokens[i], static_cast<int>(i));
  }
}

static std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
    } else {
      if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
      current += static_cast<char>(c);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open corpus file: " + path.string());
  }
  Corpus corpus;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("id") ||
        !j.contains("text") || !j.contains("time") || !j["id"].is_string() ||
        !j["text"].is_string() || !j["time"].is_number_integer()) {
      throw std::runtime_error("malformed corpus record at line " +
                               std::to_string(line_no) + " of " + path.string());
    }
    Document doc;
    doc.id = j["id"].get<std::string>();
    if (doc.id.empty()) {
      throw std::runtime_error("empty document id at line " + std::to_string(line_no));
    }
    if (!seen_ids.insert(doc.id).second) {
      throw std::runtime_error("duplicate document id \"" + doc.id +
                               "\" at line " + std::to_string(line_no));
    }
    doc.tokens = tokenize(j["text"].get<std::string>());
    doc.time = j["time"].get<int>();
    corpus.docs.push_back(std::move(doc));
  }
  return corpus;
}

std::array<Corpus, 3> split_corpus(const Corpus& corpus, SplitRatios ratios,
                                   std::uint64_t seed) {
  const double sum = ratios.train + ratios.validation + ratios.test;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::runtime_error("split ratios must sum to 1, got " + std::to_string(sum));
  }
  if (corpus.empty()) {
    throw std::runtime_error("cannot split an empty corpus");
  }
  const std::size_t n = corpus.size();
  std::size_t n_val = static_cast<std::size_t>(std::llround(ratios.validation * static_cast<double>(n)));
  std::size_t n_test = static_cast<std::size_t>(std::llround(ratios.test * static_cast<double>(n)));
  n_val = std::min(n_val, n);
  n_test = std::min(n_test, n - n_val);
  const std::size_t n_train = n - n_val - n_test;  // remainder goes to train

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order);

  // Keep original document order within each split.
  std::vector<int> assignment(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    assignment[order[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
  }
  std::array<Corpus, 3> out;
  for (std::size_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(assignment[i])].docs.push_back(corpus.docs[i]);
  }
  return out;
}

std::vector<SubDocument> make_subdocuments(const Document& doc, int max_tokens) {
  if (max_tokens < 1) {
    throw std::runtime_error("max_tokens must be >= 1");
  }
  std::vector<SubDocument> out;
  const std::size_t n = doc.tokens.size();
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(max_tokens)) {
    SubDocument sub;
    sub.parent_id = doc.id;
    sub.index = static_cast<int>(out.size());
    sub.time = doc.time;
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(max_tokens));
    sub.tokens.assign(doc.tokens.begin() + static_cast<std::ptrdiff_t>(start),
                      doc.tokens.begin() + static_cast<std::ptrdiff_t>(end));
    out.push_back(std::move(sub));
  }
  return out;
}

std::vector<SubDocument> make_subdocuments(const Corpus& corpus, int max_tokens) {
  std::vector<SubDocument> out;
  for (const auto& doc : corpus.docs) {
    auto subs = make_subdocuments(doc, max_tokens);
    out.insert(out.end(), std::make_move_iterator(subs.begin()),
               std::make_move_iterator(subs.end()));
  }
  return out;
}

Vocabulary build_vocabulary(std::span<const SubDocument> train_subdocs,
                            int max_size, double max_word_sub_occurrence) {
  if (max_size < 1) {
    throw std::runtime_error("max vocabulary size must be >= 1");
  }
  if (train_subdocs.empty()) {
    throw std::runtime_error("cannot build a vocabulary from zero sub-documents");
  }
  struct Tally {
    std::int64_t freq = 0;
    std::int64_t subdocs = 0;
  };
  std::unordered_map<std::string, Tally> tally;
  std::unordered_set<std::string> in_current;
  for (const auto& sub : train_subdocs) {
    in_current.clear();
    for (const auto& tok : sub.tokens) {
      auto& t = tally[tok];
      t.freq += 1;
      if (in_current.insert(tok).second) t.subdocs += 1;
    }
  }
  const double n_subdocs = static_cast<double>(train_subdocs.size());

  struct Entry {
    const std::string* token;
    std::int64_t freq;
    double fraction;
  };
  std::vector<Entry> entries;
  entries.reserve(tally.size());
  for (const auto& [token, t] : tally) {
    const double fraction = static_cast<double>(t.subdocs) / n_subdocs;
    if (fraction > max_word_sub_occurrence) continue;  // document-frequency cap first
    entries.push_back({&token, t.freq, fraction});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.freq != b.freq) return a.freq > b.freq;
    return *a.token < *b.token;
  });
  if (entries.size() > static_cast<std::size_t>(max_size)) {
    entries.resize(static_cast<std::size_t>(max_size));
  }

  Vocabulary vocab;
  vocab.tokens.reserve(entries.size());
  vocab.counts.reserve(entries.size());
  vocab.subdoc_fraction.reserve(entries.size());
  for (const auto& e : entries) {
    vocab.tokens.push_back(*e.token);
    vocab.counts.push_back(e.freq);
    vocab.subdoc_fraction.push_back(e.fraction);
  }
  vocab.rebuild_index();
  return vocab;
}

int WindowSpec::window_of(double date) const {
  const double lo = boundaries.front();
  const double hi = boundaries.back();
  if (date < lo || date > hi) {
    throw std::runtime_error("date " + std::to_string(date) +
                             " outside the window range");
  }
  const int w = static_cast<int>(std::floor((date - lo) * count / (hi - lo)));
  return std::min(w, count - 1);
}

WindowSpec assign_windows(const Corpus& corpus, int window_count) {
  if (window_count < 2) {
    throw std::runtime_error("window count must be >= 2");
  }
  const auto [lo, hi] = corpus.date_range();
  if (lo == hi) {
    throw std::runtime_error(
        "all documents share one date; window assignment needs a nonzero range");
  }
  WindowSpec spec;
  spec.count = window_count;
  spec.boundaries.resize(static_cast<std::size_t>(window_count) + 1);
  const double width = static_cast<double>(hi - lo) / window_count;
  for (int i = 0; i <= window_count; ++i) {
    spec.boundaries[static_cast<std::size_t>(i)] = lo + width * i;
  }
  spec.boundaries.front() = lo;
  spec.boundaries.back() = hi;
  return spec;
}

void apply_windows(const WindowSpec& spec, std::span<SubDocument> subdocs) {
  for (auto& sub : subdocs) {
    sub.window = spec.window_of(static_cast<double>(sub.time));
  }
}

WindowStats window_word_stats(std::span<const SubDocument> subdocs,
                              const Vocabulary& vocab, const WindowSpec& spec) {
  WindowStats stats;
  stats.matrix = Eigen::MatrixXd::Zero(spec.count, static_cast<Eigen::Index>(vocab.size()));
  stats.empty_mask.assign(static_cast<std::size_t>(spec.count), 0);
  stats.smoothed = false;
  for (const auto& sub : subdocs) {
    if (sub.window < 0 || sub.window >= spec.count) {
      throw std::runtime_error("sub-document without a valid window index");
    }
    for (const auto& tok : sub.tokens) {
      const int v = vocab.index_of(tok);
      if (v >= 0) stats.matrix(sub.window, v) += 1.0;
    }
  }
  for (int t = 0; t < spec.count; ++t) {
    const double row_sum = stats.matrix.row(t).sum();
    if (row_sum > 0.0) {
      stats.matrix.row(t) /= row_sum;
    } else {
      stats.empty_mask[static_cast<std::size_t>(t)] = 1;
    }
  }
  return stats;
}

WindowStats smooth_window_stats(const WindowStats& stats) {
  const int t_count = stats.window_count();
  bool any_nonempty = false;
  for (int t = 0; t < t_count; ++t) {
    if (!stats.empty_mask[static_cast<std::size_t>(t)]) any_nonempty = true;
  }
  if (!any_nonempty) {
    throw std::runtime_error("cannot smooth window statistics: every window is empty");
  }
  WindowStats out = stats;
  out.smoothed = true;
  for (int t = 0; t < t_count; ++t) {
    if (!stats.empty_mask[static_cast<std::size_t>(t)]) continue;
    int left = -1, right = -1;
    for (int i = t - 1; i >= 0; --i) {
      if (!stats.empty_mask[static_cast<std::size_t>(i)]) { left = i; break; }
    }
    for (int i = t + 1; i < t_count; ++i) {
      if (!stats.empty_mask[static_cast<std::size_t>(i)]) { right = i; break; }
    }
    if (left >= 0 && right >= 0) {
      out.matrix.row(t) = (stats.matrix.row(left) + stats.matrix.row(right)) / 2.0;
    } else if (left >= 0) {
      out.matrix.row(t) = stats.matrix.row(left);
    } else {
      out.matrix.row(t) = stats.matrix.row(right);
    }
  }
  return out;
}

BagOfWords to_bag_of_words(const SubDocument& subdoc, const Vocabulary& vocab) {
  std::unordered_map<int, double> counts;
  for (const auto& tok : subdoc.tokens) {
    const int v = vocab.index_of(tok);
    if (v >= 0) counts[v] += 1.0;
  }
  BagOfWords bow;
  bow.window = subdoc.window;
  bow.ids.reserve(counts.size());
  for (const auto& [id, c] : counts) bow.ids.push_back(id);
  std::sort(bow.ids.begin(), bow.ids.end());
  bow.counts.reserve(bow.ids.size());
  for (int id : bow.ids) {
    bow.counts.push_back(counts[id]);
    bow.total += counts[id];
  }
  return bow;
}

std::vector<BagOfWords> to_bags_of_words(std::span<const SubDocument> subdocs,
                                         const Vocabulary& vocab) {
  std::vector<BagOfWords> out;
  out.reserve(subdocs.size());
  for (const auto& sub : subdocs) out.push_back(to_bag_of_words(sub, vocab));
  return out;
}

std::string vocabulary_hash(const Vocabulary& vocab) {
  std::uint64_t h = fnv1a("detm-vocab");
  for (const auto& tok : vocab.tokens) {
    h = fnv1a_extend(h, tok);
    h = fnv1a_extend(h, std::string_view("\x1f", 1));
  }
  return hash_hex(h);
}

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  json j{{"version", detail::kFormatVersion},
         {"kind", "vocabulary"},
         {"tokens", vocab.tokens},
         {"counts", vocab.counts},
         {"subdoc_fraction", vocab.subdoc_fraction}};
  detail::write_json_file(path, j);
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  json j = detail::parse_json_file(path);
  detail::check_version(j, path);
  Vocabulary vocab;
  vocab.tokens = j.at("tokens").get<std::vector<std::string>>();
  vocab.counts = j.at("counts").get<std::vector<std::int64_t>>();
  vocab.subdoc_fraction = j.at("subdoc_fraction").get<std::vector<double>>();
  if (vocab.counts.size() != vocab.tokens.size() ||
      vocab.subdoc_fraction.size() != vocab.tokens.size()) {
    throw std::runtime_error("inconsistent vocabulary fields in " + path.string());
  }
  vocab.rebuild_index();
  return vocab;
}

void save_window_stats(const WindowStats& stats, const std::filesystem::path& path) {
  json j{{"version", detail::kFormatVersion},
         {"kind", "window_stats"},
         {"matrix", detail::matrix_to_rows(stats.matrix)},
         {"empty_mask", stats.empty_mask},
         {"smoothed", stats.smoothed}};
  detail::write_json_file(path, j);
}

WindowStats load_window_stats(const std::filesystem::path& path) {
  json j = detail::parse_json_file(path);
  detail::check_version(j, path);
  WindowStats stats;
  stats.matrix = detail::matrix_from_rows(j.at("matrix"));
  stats.empty_mask = j.at("empty_mask").get<std::vector<std::uint8_t>>();
  stats.smoothed = j.at("smoothed").get<bool>();
  if (stats.empty_mask.size() != static_cast<std::size_t>(stats.matrix.rows())) {
    throw std::runtime_error("inconsistent window statistics in " + path.string());
  }
  return stats;
}

}  // namespace detm
