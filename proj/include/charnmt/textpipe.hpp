#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace charnmt {

enum class Unit { subword, character };

Unit parse_unit(std::string_view text);
std::string unit_name(Unit unit);

// Splits UTF-8 text into Unicode scalar values, each returned as its own
// UTF-8 string. Malformed bytes come back as single-byte pieces.
std::vector<std::string> utf8_chars(std::string_view text);

// Whitespace plus punctuation splitter; only meant for fixtures.
std::vector<std::string> simple_tokenize(std::string_view line);

class Vocabulary {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kPad = 3;
  static constexpr int kReserved = 4;
  static const std::vector<std::string>& reserved_symbols();

  // Reserved symbols only.
  explicit Vocabulary(Unit unit = Unit::subword);
  // `symbols` must start with the reserved symbols in order and be unique.
  Vocabulary(Unit unit, std::vector<std::string> symbols);

  Unit unit() const { return unit_; }
  int size() const { return static_cast<int>(symbols_.size()); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  const std::string& symbol(int index) const;
  bool contains(std::string_view symbol) const;
  // UNK for unknown symbols.
  int index(std::string_view symbol) const;

  std::vector<int> encode(std::span<const std::string> symbols) const;
  std::vector<std::string> decode(std::span<const int> indices) const;

  // Splits a line into this vocabulary's units: whitespace tokens for
  // subwords, scalar values for characters with whitespace runs collapsed
  // to single spaces.
  std::vector<std::string> split(std::string_view line) const;

  std::uint64_t fingerprint() const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path, Unit unit);

 private:
  Unit unit_;
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

class MergeTable {
 public:
  using Rule = std::pair<std::string, std::string>;
  static constexpr std::string_view kDefaultMarker = "@@";
  static constexpr std::string_view kVersionLine = "#version: 0.2";

  MergeTable() = default;
  explicit MergeTable(std::vector<Rule> rules, std::string marker = std::string(kDefaultMarker));

  const std::vector<Rule>& rules() const { return rules_; }
  const std::string& marker() const { return marker_; }
  std::size_t size() const { return rules_.size(); }
  bool empty() const { return rules_.empty(); }
  // Learning-order rank of a pair, or -1.
  int rank(const std::string& left, const std::string& right) const;

  std::uint64_t fingerprint() const;
  void save(const std::filesystem::path& path) const;
  static MergeTable load(const std::filesystem::path& path);

 private:
  std::vector<Rule> rules_;
  std::string marker_ = std::string(kDefaultMarker);
  std::unordered_map<std::string, int> rank_;
};

// Greedy pair-merge learning over the word-frequency table of a
// whitespace-tokenized corpus. Stops after num_merges rules or when no
// adjacent pair occurs at least twice. Ties go to the lexicographically
// smallest pair.
MergeTable learn_bpe(std::span<const std::string> lines, int num_merges);

// Segments one word; every piece but the last carries the marker.
std::vector<std::string> apply_bpe_word(std::string_view word, const MergeTable& merges);

// Segments a token sequence. Tokens ending in the continuation marker are
// first joined with their successor, so already-segmented input round-trips
// to the same segmentation.
std::vector<std::string> apply_bpe(std::span<const std::string> tokens, const MergeTable& merges);

// Inverse of apply_bpe: drops markers and joins pieces into words.
std::vector<std::string> strip_bpe(std::span<const std::string> pieces, std::string_view marker);

Vocabulary build_vocab(std::span<const std::string> lines, Unit unit, int max_size);

struct LengthLimits {
  int source = 50;
  int target = 500;
  static LengthLimits defaults(Unit target_unit);
};

struct ParallelCorpus {
  std::vector<std::vector<std::string>> source;
  std::vector<std::vector<std::string>> target;
  std::size_t size() const { return source.size(); }
};

// Reads two line-aligned files.
std::pair<std::vector<std::string>, std::vector<std::string>> read_parallel(
    const std::filesystem::path& source, const std::filesystem::path& target);

// Index matrices are row-major, padded with PAD. Source rows end with EOS;
// target rows are BOS y_1 .. y_n EOS.
struct Batch {
  int size = 0;
  int source_len = 0;
  int target_len = 0;
  std::vector<int> source;
  std::vector<int> target;
  std::vector<int> source_lengths;
  std::vector<int> target_lengths;
  std::vector<unsigned char> target_mask;
  std::vector<std::size_t> example_ids;

  int source_at(int b, int t) const { return source[static_cast<std::size_t>(b) * source_len + t]; }
  int target_at(int b, int t) const { return target[static_cast<std::size_t>(b) * target_len + t]; }
  // Number of predicted (unmasked) target tokens.
  int prediction_count() const;
};

struct BatchOptions {
  LengthLimits limits;
  int batch_size = 128;
  std::uint64_t seed = 1;
  bool shuffle = true;
};

// Drops pairs longer than the limits (counted before EOS/BOS), shuffles
// deterministically under the seed and pads each batch to its own maximum.
std::vector<Batch> make_batches(const ParallelCorpus& corpus, const Vocabulary& source_vocab,
                                const Vocabulary& target_vocab, const BatchOptions& options);

// Builds one batch from already-indexed sequences (no EOS/BOS added).
Batch batch_from_sequences(std::span<const std::vector<int>> sources,
                           std::span<const std::vector<int>> targets);

}  // namespace charnmt
