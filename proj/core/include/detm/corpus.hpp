#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace detm {

// A dated document. `time` is an integer year, negative for BCE.
struct Document {
  std::string id;
  std::vector<std::string> tokens;
  int time = 0;
};

struct Corpus {
  std::vector<Document> docs;

  bool empty() const { return docs.empty(); }
  std::size_t size() const { return docs.size(); }
  // Inclusive date range over all documents.
  std::pair<int, int> date_range() const;
};

// A contiguous shard of a parent document, the model's observation unit.
// Concatenating a parent's sub-documents in `index` order reproduces the
// parent's token sequence.
struct SubDocument {
  std::string parent_id;
  int index = 0;
  std::vector<std::string> tokens;
  int time = 0;
  int window = -1;  // assigned by apply_windows
};

struct Vocabulary {
  std::vector<std::string> tokens;          // descending frequency, ties lexicographic
  std::vector<std::int64_t> counts;         // training-set frequency per token
  std::vector<double> subdoc_fraction;      // fraction of training sub-documents containing it

  int index_of(const std::string& token) const;
  std::size_t size() const { return tokens.size(); }

 private:
  friend Vocabulary build_vocabulary(std::span<const SubDocument>, int, double);
  friend Vocabulary load_vocabulary(const std::filesystem::path&);
  mutable std::unordered_map<std::string, int> index_;
  void rebuild_index() const;
};

// Equal-width time windows spanning the corpus date range.
struct WindowSpec {
  int count = 0;
  std::vector<double> boundaries;  // count + 1 strictly increasing cut points

  // floor((date - min) * count / (max - min)), clamped to count-1 at the max.
  int window_of(double date) const;
};

// Per-window normalized word-count vectors, the mixture-prior network input.
struct WindowStats {
  Eigen::MatrixXd matrix;            // count x V, non-empty rows sum to 1
  std::vector<std::uint8_t> empty_mask;  // 1 = window had zero in-vocabulary tokens
  bool smoothed = false;

  int window_count() const { return static_cast<int>(matrix.rows()); }
};

// A sub-document reduced to in-vocabulary counts, ready for the model.
struct BagOfWords {
  std::vector<int> ids;        // distinct vocabulary indices
  std::vector<double> counts;  // parallel to ids
  double total = 0.0;          // sum of counts
  int window = -1;

  bool empty() const { return ids.empty(); }
};

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

// Reads a UTF-8 JSON-lines corpus: one {"id","text","time"} object per line.
// Tokenization is ASCII lowercasing followed by whitespace splitting.
// Throws on malformed records (naming the line) and duplicate ids.
Corpus load_corpus(const std::filesystem::path& path);

// Whole-document split. Sizes are the rounded targets for validation and
// test; the remainder goes to train. Identical seed, identical partition.
std::array<Corpus, 3> split_corpus(const Corpus& corpus, SplitRatios ratios,
                                   std::uint64_t seed);

// Greedy left-to-right chunking into shards of at most max_tokens tokens.
std::vector<SubDocument> make_subdocuments(const Document& doc, int max_tokens = 100);
std::vector<SubDocument> make_subdocuments(const Corpus& corpus, int max_tokens = 100);

// Drops tokens present in more than max_word_sub_occurrence of the training
// sub-documents, then keeps the max_size most frequent of the rest.
Vocabulary build_vocabulary(std::span<const SubDocument> train_subdocs,
                            int max_size, double max_word_sub_occurrence = 0.5);

// Equal-width windows over the corpus date range. Throws when the range has
// zero width or window_count < 2.
WindowSpec assign_windows(const Corpus& corpus, int window_count);
void apply_windows(const WindowSpec& spec, std::span<SubDocument> subdocs);

WindowStats window_word_stats(std::span<const SubDocument> subdocs,
                              const Vocabulary& vocab, const WindowSpec& spec);

// Replaces each empty row by the even mixture of the nearest non-empty rows
// to its left and right, or a copy of its sole neighbor at the edges.
WindowStats smooth_window_stats(const WindowStats& stats);

BagOfWords to_bag_of_words(const SubDocument& subdoc, const Vocabulary& vocab);
std::vector<BagOfWords> to_bags_of_words(std::span<const SubDocument> subdocs,
                                         const Vocabulary& vocab);

// Binds embedding matrices and checkpoints to the vocabulary that built them.
std::string vocabulary_hash(const Vocabulary& vocab);

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocabulary(const std::filesystem::path& path);
void save_window_stats(const WindowStats& stats, const std::filesystem::path& path);
WindowStats load_window_stats(const std::filesystem::path& path);

}  // namespace detm
