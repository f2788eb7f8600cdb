#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "charnmt/model.hpp"
#include "charnmt/pipeline.hpp"

namespace charnmt {

struct BleuReport {
  double bleu = 0.0;  // in [0, 1]
  std::array<double, 4> precisions{};
  std::array<long, 4> matches{};
  std::array<long, 4> totals{};
  double brevity_penalty = 0.0;
  long hyp_len = 0;
  long ref_len = 0;

  double ratio() const { return ref_len ? static_cast<double>(hyp_len) / ref_len : 0.0; }
  // BLEU = 25.31, 60.0/32.1/18.2/10.0 (BP=1.000, ratio=1.020, hyp_len=51, ref_len=50)
  std::string line() const;
};

// Corpus BLEU over whitespace tokens: clipped n-gram precision up to n = 4,
// brevity penalty, no smoothing.
BleuReport bleu(std::span<const std::string> hypotheses, std::span<const std::string> references);

// Inclusive ranges of token counts; hi < 0 means unbounded.
struct Bucket {
  long lo = 0;
  long hi = -1;
  bool contains(long n) const { return n >= lo && (hi < 0 || n <= hi); }
  std::string label() const;
};

// "1-10,11-20,21-" style list.
std::vector<Bucket> parse_buckets(std::string_view spec);

struct BucketBleu {
  Bucket bucket;
  long count = 0;
  BleuReport report;
};

// Sentences partitioned by source token count; empty buckets are omitted.
std::vector<BucketBleu> bleu_by_source_length(std::span<const std::string> hypotheses,
                                              std::span<const std::string> references,
                                              std::span<const std::string> sources,
                                              std::span<const Bucket> buckets);

// Per reference word negative log-probability under teacher forcing. Subword
// targets sum the word's pieces; character targets sum the word's characters
// plus the following space, or EOS for the last word.
template <typename T>
std::vector<std::vector<double>> word_nll(const ParameterStore<T>& params,
                                          const ModelConfig& config, const TextPipeline& pipeline,
                                          std::span<const std::string> sources,
                                          std::span<const std::string> targets);

std::map<std::string, long> word_frequencies(std::span<const std::string> lines);

// Power-of-two buckets on training counts: 0, 1, 2-3, 4-7, ...
Bucket frequency_bucket(long count);

struct FrequencyDiff {
  Bucket bucket;
  long count = 0;
  double mean_diff = 0.0;
};

// Mean of nll_a - nll_b per frequency bucket of the reference words. With no
// buckets given, power-of-two buckets are used; otherwise each word goes to the
// first bucket containing its count and words outside every bucket are skipped.
std::vector<FrequencyDiff> word_nll_by_frequency(const std::vector<std::vector<double>>& nll_a,
                                                 const std::vector<std::vector<double>>& nll_b,
                                                 std::span<const std::string> targets,
                                                 const std::map<std::string, long>& frequencies,
                                                 std::span<const Bucket> buckets = {});

// bucket<TAB>count<TAB>value lines.
std::string bucket_tsv(const std::vector<BucketBleu>& rows);
std::string bucket_tsv(const std::vector<FrequencyDiff>& rows);

}  // namespace charnmt
