#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "charnmt/model.hpp"
#include "charnmt/pipeline.hpp"

namespace charnmt {

// One trained model plus the fingerprints of the vocabularies it was trained
// with (0 when unknown).
template <typename T>
struct ModelHandle {
  ParameterStore<T> params;
  ModelConfig config;
  std::uint64_t source_vocab_fingerprint = 0;
  std::uint64_t target_vocab_fingerprint = 0;
};

// Models whose output probabilities are averaged. Members must share the
// target vocabulary size; decoders and dimensions may differ.
template <typename T>
class Ensemble {
 public:
  Ensemble() = default;
  explicit Ensemble(std::vector<ModelHandle<T>> members);

  std::size_t size() const { return members_.size(); }
  const ModelHandle<T>& member(std::size_t i) const { return members_.at(i); }
  int target_vocab() const { return members_.front().config.target_vocab; }
  int source_vocab() const { return members_.front().config.source_vocab; }

  // ConsistencyError when a member was trained with different vocabularies.
  void check_pipeline(const TextPipeline& pipeline) const;

 private:
  std::vector<ModelHandle<T>> members_;
};

// log of the arithmetic mean of the members' probabilities, row by row.
// A single member is returned unchanged.
template <typename T>
Tensor<T> ensemble_log_probs(std::span<const Tensor<T>> member_log_probs);

struct Hypothesis {
  std::vector<int> tokens;  // emitted symbols, EOS included when finished
  double log_prob = 0.0;
  std::vector<std::vector<double>> alignment;  // one row per emitted symbol
  bool finished = false;                       // last token is EOS
  bool forced = false;                         // cut off at the length bound
};

struct SearchOptions {
  int width = 1;
  int max_len = 0;  // translate_lines replaces 0 with the default for the target unit
  bool length_normalize = false;
};

// Default output bound for a source of `source_symbols` symbols (EOS excluded).
int default_max_len(Unit target_unit, int source_symbols);

template <typename T>
Hypothesis greedy_decode(const Ensemble<T>& models, std::span<const int> source, int max_len);

// Completed hypotheses, best first, at most `width` of them. Hypotheses still
// live at max_len join the pool flagged as forced.
template <typename T>
std::vector<Hypothesis> beam_search(const Ensemble<T>& models, std::span<const int> source,
                                    const SearchOptions& options);

struct Translation {
  std::string text;
  std::vector<std::string> source_symbols;  // EOS symbol included
  Hypothesis best;
};

template <typename T>
std::vector<Translation> translate_lines(const Ensemble<T>& models, const TextPipeline& pipeline,
                                         std::span<const std::string> lines,
                                         const SearchOptions& options);

// One TSV block: a header row of source symbols, then one row of weights per
// emitted symbol. Blocks are separated by a blank line when concatenated.
std::string alignment_tsv(std::span<const std::string> source_symbols,
                          const std::vector<std::vector<double>>& weights);

}  // namespace charnmt
