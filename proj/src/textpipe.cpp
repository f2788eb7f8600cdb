#include "charnmt/textpipe.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <numeric>
#include <random>

#include "charnmt/errors.hpp"
#include "charnmt/io.hpp"

namespace charnmt {
namespace {

std::string pair_key(const std::string& left, const std::string& right) {
  std::string key = left;
  key.push_back('\0');
  key += right;
  return key;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

Unit parse_unit(std::string_view text) {
  if (text == "subword") return Unit::subword;
  if (text == "char" || text == "character") return Unit::character;
  throw ConfigError("unknown unit '" + std::string(text) + "' (expected subword or char)");
}

std::string unit_name(Unit unit) { return unit == Unit::subword ? "subword" : "char"; }

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xF0 && lead < 0xF8) {
      len = 4;
    } else if (lead >= 0xE0) {
      len = 3;
    } else if (lead >= 0xC0) {
      len = 2;
    }
    if (lead >= 0xF8 || (lead >= 0x80 && lead < 0xC0) || i + len > text.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<std::string> simple_tokenize(std::string_view line) {
  std::vector<std::string> out;
  for (const auto& word : split_whitespace(line)) {
    std::string current;
    for (char c : word) {
      if (std::ispunct(static_cast<unsigned char>(c)) && c != '\'' && c != '-') {
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
        out.emplace_back(1, c);
      } else {
        current.push_back(c);
      }
    }
    if (!current.empty()) out.push_back(std::move(current));
  }
  return out;
}

// ---------------------------------------------------------------- Vocabulary

const std::vector<std::string>& Vocabulary::reserved_symbols() {
  static const std::vector<std::string> reserved = {"<s>", "</s>", "<unk>", "<pad>"};
  return reserved;
}

Vocabulary::Vocabulary(Unit unit) : Vocabulary(unit, reserved_symbols()) {}

Vocabulary::Vocabulary(Unit unit, std::vector<std::string> symbols)
    : unit_(unit), symbols_(std::move(symbols)) {
  const auto& reserved = reserved_symbols();
  if (symbols_.size() < reserved.size() ||
      !std::equal(reserved.begin(), reserved.end(), symbols_.begin())) {
    throw VocabularyError("vocabulary must start with <s> </s> <unk> <pad>");
  }
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (!index_.emplace(symbols_[i], static_cast<int>(i)).second) {
      throw VocabularyError("duplicate vocabulary symbol '" + symbols_[i] + "'");
    }
  }
}

const std::string& Vocabulary::symbol(int index) const {
  if (index < 0 || index >= size()) {
    throw VocabularyError("index " + std::to_string(index) + " outside vocabulary of " +
                          std::to_string(size()));
  }
  return symbols_[index];
}

bool Vocabulary::contains(std::string_view symbol) const {
  return index_.find(std::string(symbol)) != index_.end();
}

int Vocabulary::index(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(std::span<const std::string> symbols) const {
  std::vector<int> out;
  out.reserve(symbols.size());
  for (const auto& s : symbols) out.push_back(index(s));
  return out;
}

std::vector<std::string> Vocabulary::decode(std::span<const int> indices) const {
  std::vector<std::string> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(symbol(i));
  return out;
}

std::vector<std::string> Vocabulary::split(std::string_view line) const {
  auto tokens = split_whitespace(line);
  if (unit_ == Unit::subword) return tokens;
  return utf8_chars(join(tokens, " "));
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = fnv1a(unit_name(unit_));
  for (const auto& s : symbols_) h = fnv1a(s + '\n', h);
  return h;
}

void Vocabulary::save(const std::filesystem::path& path) const { write_lines_atomic(path, symbols_); }

Vocabulary Vocabulary::load(const std::filesystem::path& path, Unit unit) {
  return Vocabulary(unit, read_lines(path));
}

// ---------------------------------------------------------------- MergeTable

MergeTable::MergeTable(std::vector<Rule> rules, std::string marker)
    : rules_(std::move(rules)), marker_(std::move(marker)) {
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    if (!rank_.emplace(pair_key(rules_[i].first, rules_[i].second), static_cast<int>(i)).second) {
      throw DomainError("duplicate merge rule '" + rules_[i].first + " " + rules_[i].second + "'");
    }
  }
}

int MergeTable::rank(const std::string& left, const std::string& right) const {
  auto it = rank_.find(pair_key(left, right));
  return it == rank_.end() ? -1 : it->second;
}

std::uint64_t MergeTable::fingerprint() const {
  std::uint64_t h = fnv1a(marker_);
  for (const auto& [l, r] : rules_) h = fnv1a(l + ' ' + r + '\n', h);
  return h;
}

void MergeTable::save(const std::filesystem::path& path) const {
  std::vector<std::string> lines;
  lines.reserve(rules_.size() + 1);
  lines.emplace_back(kVersionLine);
  for (const auto& [l, r] : rules_) lines.push_back(l + " " + r);
  write_lines_atomic(path, lines);
}

MergeTable MergeTable::load(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  std::vector<Rule> rules;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i == 0 && lines[i].rfind("#version", 0) == 0) continue;
    if (lines[i].empty()) continue;
    auto parts = split_whitespace(lines[i]);
    if (parts.size() != 2) {
      throw DomainError(path.string() + ":" + std::to_string(i + 1) +
                        ": merge rule needs exactly two symbols");
    }
    rules.emplace_back(parts[0], parts[1]);
  }
  return MergeTable(std::move(rules));
}

// ---------------------------------------------------------------- BPE

MergeTable learn_bpe(std::span<const std::string> lines, int num_merges) {
  if (num_merges < 0) throw ConfigError("number of merges must be nonnegative");
  std::map<std::string, long> word_counts;
  for (const auto& line : lines) {
    for (auto& w : split_whitespace(line)) ++word_counts[w];
  }
  if (word_counts.empty()) throw DomainError("learn_bpe: corpus has no tokens");

  struct Word {
    std::vector<std::string> symbols;
    long count;
  };
  std::vector<Word> words;
  words.reserve(word_counts.size());
  for (const auto& [w, c] : word_counts) words.push_back({utf8_chars(w), c});

  std::vector<MergeTable::Rule> rules;
  while (static_cast<int>(rules.size()) < num_merges) {
    std::map<std::pair<std::string, std::string>, long> pair_counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        pair_counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;
      }
    }
    const std::pair<std::string, std::string>* best = nullptr;
    long best_count = 1;
    // std::map iterates in lexicographic order, so strict > keeps the smallest pair on ties.
    for (const auto& [p, c] : pair_counts) {
      if (c > best_count) {
        best = &p;
        best_count = c;
      }
    }
    if (!best) break;
    const auto rule = *best;
    const std::string merged = rule.first + rule.second;
    for (auto& w : words) {
      std::vector<std::string> out;
      out.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == rule.first &&
            w.symbols[i + 1] == rule.second) {
          out.push_back(merged);
          ++i;
        } else {
          out.push_back(std::move(w.symbols[i]));
        }
      }
      w.symbols = std::move(out);
    }
    rules.push_back(rule);
  }
  return MergeTable(std::move(rules));
}

std::vector<std::string> apply_bpe_word(std::string_view word, const MergeTable& merges) {
  std::vector<std::string> pieces = utf8_chars(word);
  if (pieces.empty()) return pieces;
  while (pieces.size() > 1) {
    int best_rank = -1;
    for (std::size_t i = 0; i + 1 < pieces.size(); ++i) {
      const int r = merges.rank(pieces[i], pieces[i + 1]);
      if (r >= 0 && (best_rank < 0 || r < best_rank)) best_rank = r;
    }
    if (best_rank < 0) break;
    const auto& [left, right] = merges.rules()[best_rank];
    std::vector<std::string> out;
    out.reserve(pieces.size());
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      if (i + 1 < pieces.size() && pieces[i] == left && pieces[i + 1] == right) {
        out.push_back(left + right);
        ++i;
      } else {
        out.push_back(std::move(pieces[i]));
      }
    }
    pieces = std::move(out);
  }
  for (std::size_t i = 0; i + 1 < pieces.size(); ++i) pieces[i] += merges.marker();
  return pieces;
}

std::vector<std::string> apply_bpe(std::span<const std::string> tokens, const MergeTable& merges) {
  std::vector<std::string> out;
  for (const auto& word : strip_bpe(tokens, merges.marker())) {
    auto pieces = apply_bpe_word(word, merges);
    out.insert(out.end(), std::make_move_iterator(pieces.begin()),
               std::make_move_iterator(pieces.end()));
  }
  return out;
}

std::vector<std::string> strip_bpe(std::span<const std::string> pieces, std::string_view marker) {
  std::vector<std::string> words;
  std::string current;
  bool open = false;
  for (const auto& p : pieces) {
    if (!marker.empty() && ends_with(p, marker) && p.size() > marker.size()) {
      current.append(p, 0, p.size() - marker.size());
      open = true;
    } else {
      current += p;
      words.push_back(std::move(current));
      current.clear();
      open = false;
    }
  }
  if (open) words.push_back(std::move(current));
  return words;
}

// ---------------------------------------------------------------- vocabulary building

Vocabulary build_vocab(std::span<const std::string> lines, Unit unit, int max_size) {
  if (max_size < Vocabulary::kReserved + 1) {
    throw ConfigError("vocabulary max size must be at least 5, got " + std::to_string(max_size));
  }
  if (lines.empty()) throw DomainError("build_vocab: empty corpus");
  const Vocabulary splitter(unit);
  std::map<std::string, long> counts;
  for (const auto& line : lines) {
    for (auto& s : splitter.split(line)) ++counts[s];
  }
  for (const auto& r : Vocabulary::reserved_symbols()) counts.erase(r);
  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> symbols = Vocabulary::reserved_symbols();
  for (const auto& [s, c] : ranked) {
    if (static_cast<int>(symbols.size()) >= max_size) break;
    symbols.push_back(s);
  }
  return Vocabulary(unit, std::move(symbols));
}

// ---------------------------------------------------------------- batching

LengthLimits LengthLimits::defaults(Unit target_unit) {
  return LengthLimits{50, target_unit == Unit::character ? 500 : 100};
}

std::pair<std::vector<std::string>, std::vector<std::string>> read_parallel(
    const std::filesystem::path& source, const std::filesystem::path& target) {
  auto src = read_lines(source);
  auto tgt = read_lines(target);
  if (src.size() != tgt.size()) {
    const auto& offender = src.size() > tgt.size() ? source : target;
    throw CorpusAlignmentError(offender.string() + " has " +
                               std::to_string(std::max(src.size(), tgt.size())) +
                               " lines but its counterpart has " +
                               std::to_string(std::min(src.size(), tgt.size())));
  }
  return {std::move(src), std::move(tgt)};
}

int Batch::prediction_count() const {
  int n = 0;
  for (int b = 0; b < size; ++b) {
    for (int t = 1; t < target_len; ++t) n += target_mask[static_cast<std::size_t>(b) * target_len + t];
  }
  return n;
}

Batch batch_from_sequences(std::span<const std::vector<int>> sources,
                           std::span<const std::vector<int>> targets) {
  if (sources.size() != targets.size() || sources.empty()) {
    throw CorpusAlignmentError("batch needs equally many (and at least one) sources and targets");
  }
  Batch batch;
  batch.size = static_cast<int>(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (sources[i].empty() || targets[i].size() < 2) {
      throw ContractError("batch sequences too short");
    }
    batch.source_len = std::max(batch.source_len, static_cast<int>(sources[i].size()));
    batch.target_len = std::max(batch.target_len, static_cast<int>(targets[i].size()));
  }
  batch.source.assign(static_cast<std::size_t>(batch.size) * batch.source_len, Vocabulary::kPad);
  batch.target.assign(static_cast<std::size_t>(batch.size) * batch.target_len, Vocabulary::kPad);
  batch.target_mask.assign(batch.target.size(), 0);
  for (int b = 0; b < batch.size; ++b) {
    const auto& s = sources[b];
    const auto& t = targets[b];
    std::copy(s.begin(), s.end(), batch.source.begin() + static_cast<std::ptrdiff_t>(b) * batch.source_len);
    std::copy(t.begin(), t.end(), batch.target.begin() + static_cast<std::ptrdiff_t>(b) * batch.target_len);
    std::fill_n(batch.target_mask.begin() + static_cast<std::ptrdiff_t>(b) * batch.target_len, t.size(), 1);
    batch.source_lengths.push_back(static_cast<int>(s.size()));
    batch.target_lengths.push_back(static_cast<int>(t.size()));
    batch.example_ids.push_back(static_cast<std::size_t>(b));
  }
  return batch;
}

std::vector<Batch> make_batches(const ParallelCorpus& corpus, const Vocabulary& source_vocab,
                                const Vocabulary& target_vocab, const BatchOptions& options) {
  if (corpus.source.size() != corpus.target.size()) {
    throw CorpusAlignmentError("parallel corpus has " + std::to_string(corpus.source.size()) +
                               " source and " + std::to_string(corpus.target.size()) +
                               " target sentences");
  }
  if (options.batch_size < 1) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (static_cast<int>(corpus.source[i].size()) <= options.limits.source &&
        static_cast<int>(corpus.target[i].size()) <= options.limits.target) {
      kept.push_back(i);
    }
  }
  if (options.shuffle) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(kept.begin(), kept.end(), rng);
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < kept.size(); start += options.batch_size) {
    const std::size_t end = std::min(kept.size(), start + options.batch_size);
    std::vector<std::vector<int>> src, tgt;
    for (std::size_t k = start; k < end; ++k) {
      const std::size_t id = kept[k];
      auto s = source_vocab.encode(corpus.source[id]);
      s.push_back(Vocabulary::kEos);
      std::vector<int> t{Vocabulary::kBos};
      auto body = target_vocab.encode(corpus.target[id]);
      t.insert(t.end(), body.begin(), body.end());
      t.push_back(Vocabulary::kEos);
      src.push_back(std::move(s));
      tgt.push_back(std::move(t));
    }
    Batch batch = batch_from_sequences(src, tgt);
    batch.example_ids.assign(kept.begin() + static_cast<std::ptrdiff_t>(start),
                             kept.begin() + static_cast<std::ptrdiff_t>(end));
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace charnmt
