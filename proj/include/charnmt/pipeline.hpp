#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "charnmt/textpipe.hpp"

namespace charnmt {

// Turns raw lines into model symbols and back. The source side is always
// whitespace tokens, optionally BPE-segmented; the target side follows the
// target vocabulary's unit.
struct TextPipeline {
  Vocabulary source_vocab{Unit::subword};
  Vocabulary target_vocab{Unit::character};
  std::optional<MergeTable> source_merges;
  std::optional<MergeTable> target_merges;

  std::vector<std::string> source_symbols(std::string_view line) const;
  std::vector<std::string> target_symbols(std::string_view line) const;
  // Source indices with EOS appended.
  std::vector<int> source_indices(std::string_view line) const;
  // Target indices y_1 .. y_n EOS (no BOS).
  std::vector<int> target_indices(std::string_view line) const;
  // Inverse of target_symbols for emitted indices (EOS and BOS dropped).
  std::string detokenize(const std::vector<int>& indices) const;

  ParallelCorpus corpus(const std::vector<std::string>& source_lines,
                        const std::vector<std::string>& target_lines) const;
};

}  // namespace charnmt
