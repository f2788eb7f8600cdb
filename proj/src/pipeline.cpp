#include "charnmt/pipeline.hpp"

#include "charnmt/errors.hpp"
#include "charnmt/io.hpp"

namespace charnmt {

std::vector<std::string> TextPipeline::source_symbols(std::string_view line) const {
  auto tokens = split_whitespace(line);
  if (source_merges) return apply_bpe(tokens, *source_merges);
  return tokens;
}

std::vector<std::string> TextPipeline::target_symbols(std::string_view line) const {
  if (target_vocab.unit() == Unit::character) return target_vocab.split(line);
  auto tokens = split_whitespace(line);
  if (target_merges) return apply_bpe(tokens, *target_merges);
  return tokens;
}

std::vector<int> TextPipeline::source_indices(std::string_view line) const {
  auto ids = source_vocab.encode(source_symbols(line));
  ids.push_back(Vocabulary::kEos);
  return ids;
}

std::vector<int> TextPipeline::target_indices(std::string_view line) const {
  auto ids = target_vocab.encode(target_symbols(line));
  ids.push_back(Vocabulary::kEos);
  return ids;
}

std::string TextPipeline::detokenize(const std::vector<int>& indices) const {
  std::vector<std::string> symbols;
  for (int i : indices) {
    if (i == Vocabulary::kEos || i == Vocabulary::kBos || i == Vocabulary::kPad) continue;
    symbols.push_back(target_vocab.symbol(i));
  }
  if (target_vocab.unit() == Unit::character) return join(symbols, "");
  const std::string marker =
      target_merges ? target_merges->marker() : std::string(MergeTable::kDefaultMarker);
  return join(strip_bpe(symbols, marker), " ");
}

ParallelCorpus TextPipeline::corpus(const std::vector<std::string>& source_lines,
                                    const std::vector<std::string>& target_lines) const {
  if (source_lines.size() != target_lines.size()) {
    throw CorpusAlignmentError("source has " + std::to_string(source_lines.size()) +
                               " lines, target has " + std::to_string(target_lines.size()));
  }
  ParallelCorpus out;
  for (std::size_t i = 0; i < source_lines.size(); ++i) {
    out.source.push_back(source_symbols(source_lines[i]));
    out.target.push_back(target_symbols(target_lines[i]));
  }
  return out;
}

}  // namespace charnmt
