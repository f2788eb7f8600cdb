#include <doctest.h>

#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "charnmt/errors.hpp"
#include "charnmt/io.hpp"
#include "charnmt/textpipe.hpp"

using namespace charnmt;

namespace {

std::vector<std::string> expand(const std::vector<std::pair<std::string, int>>& counts) {
  std::vector<std::string> lines;
  for (const auto& [word, n] : counts) {
    for (int i = 0; i < n; ++i) lines.push_back(word);
  }
  return lines;
}

// Naive learner: recount every adjacent pair over the whole frequency table
// after each merge, pick the largest count, smallest pair on ties.
std::vector<MergeTable::Rule> brute_force_bpe(const std::vector<std::string>& lines, int merges) {
  std::map<std::vector<std::string>, int> table;
  for (const auto& line : lines) {
    for (const auto& w : split_whitespace(line)) table[utf8_chars(w)] += 1;
  }
  std::vector<MergeTable::Rule> rules;
  for (int m = 0; m < merges; ++m) {
    std::map<MergeTable::Rule, int> pairs;
    for (const auto& [word, n] : table) {
      for (std::size_t i = 0; i + 1 < word.size(); ++i) pairs[{word[i], word[i + 1]}] += n;
    }
    MergeTable::Rule best;
    int best_count = 0;
    for (const auto& [p, n] : pairs) {
      if (n > best_count) {
        best = p;
        best_count = n;
      }
    }
    if (best_count < 2) break;
    rules.push_back(best);
    std::map<std::vector<std::string>, int> next;
    for (const auto& [word, n] : table) {
      std::vector<std::string> out;
      for (std::size_t i = 0; i < word.size(); ++i) {
        if (i + 1 < word.size() && word[i] == best.first && word[i + 1] == best.second) {
          out.push_back(word[i] + word[i + 1]);
          ++i;
        } else {
          out.push_back(word[i]);
        }
      }
      next[out] += n;
    }
    table = std::move(next);
  }
  return rules;
}

std::string join_stripped(const std::vector<std::string>& pieces) {
  return join(strip_bpe(pieces, "@@"), " ");
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "charnmt_textpipe_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("learn_bpe: classic corpus merges e,s first") {
  const auto lines = expand({{"low", 5}, {"lower", 2}, {"newest", 6}, {"widest", 3}});
  const auto table = learn_bpe(lines, 1);
  REQUIRE(table.size() == 1);
  CHECK(table.rules()[0] == MergeTable::Rule{"e", "s"});
  const auto oracle = brute_force_bpe(lines, 1);
  CHECK(table.rules() == oracle);
}

TEST_CASE("learn_bpe: agrees with the brute-force learner on random corpora") {
  std::mt19937_64 rng(3);
  const std::string alphabet = "abcde";
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::string> lines;
    for (int l = 0; l < 15; ++l) {
      std::string line;
      for (int w = 0; w < 4; ++w) {
        const int len = 1 + static_cast<int>(rng() % 6);
        for (int c = 0; c < len; ++c) line += alphabet[rng() % alphabet.size()];
        line += ' ';
      }
      lines.push_back(line);
    }
    CHECK(learn_bpe(lines, 30).rules() == brute_force_bpe(lines, 30));
  }
}

TEST_CASE("learn_bpe: degenerate inputs") {
  const auto lines = expand({{"low", 5}, {"newest", 6}});
  CHECK(learn_bpe(lines, 0).empty());
  const std::vector<std::string> single{"a", "a", "a"};
  CHECK(learn_bpe(single, 10).empty());
  const std::vector<std::string> none;
  CHECK_THROWS_AS(learn_bpe(none, 3), DomainError);
  const std::vector<std::string> blank{"", "   "};
  CHECK_THROWS_AS(learn_bpe(blank, 3), DomainError);
}

TEST_CASE("apply_bpe: examples") {
  const std::vector<std::string> ab{"ab"};
  CHECK(apply_bpe(ab, MergeTable()) == std::vector<std::string>{"a@@", "b"});
  CHECK(apply_bpe(ab, MergeTable(std::vector<MergeTable::Rule>{{"a", "b"}})) == std::vector<std::string>{"ab"});
  // Unknown characters pass through.
  const std::vector<std::string> other{"xyz"};
  CHECK(apply_bpe(other, MergeTable(std::vector<MergeTable::Rule>{{"a", "b"}})) ==
        std::vector<std::string>{"x@@", "y@@", "z"});
  // Rank order, not left-to-right order, decides.
  const MergeTable table(std::vector<MergeTable::Rule>{{"b", "c"}, {"a", "b"}});
  CHECK(apply_bpe_word("abc", table) == std::vector<std::string>{"a@@", "bc"});
}

TEST_CASE("apply_bpe: round trip and idempotence on 1000 random words") {
  std::mt19937_64 rng(17);
  const std::vector<std::string> alphabet{"a", "b", "c", "d", "é", "ж", "中"};
  std::vector<std::string> corpus;
  for (int i = 0; i < 400; ++i) {
    std::string w;
    const int len = 1 + static_cast<int>(rng() % 8);
    for (int c = 0; c < len; ++c) w += alphabet[rng() % alphabet.size()];
    corpus.push_back(w);
  }
  const auto table = learn_bpe(corpus, 40);
  REQUIRE(table.size() > 10);
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::string> words;
    const int n = 1 + static_cast<int>(rng() % 4);
    for (int k = 0; k < n; ++k) {
      std::string w;
      const int len = 1 + static_cast<int>(rng() % 10);
      for (int c = 0; c < len; ++c) w += alphabet[rng() % alphabet.size()];
      words.push_back(w);
    }
    const auto pieces = apply_bpe(words, table);
    CHECK(join_stripped(pieces) == join(words, " "));
    CHECK(apply_bpe(pieces, table) == pieces);
    for (std::size_t p = 0; p < pieces.size(); ++p) {
      CHECK(!pieces[p].empty());
    }
  }
}

TEST_CASE("merge table: save and load") {
  const auto table = learn_bpe(expand({{"low", 5}, {"lower", 2}, {"newest", 6}, {"widest", 3}}), 5);
  const auto path = scratch("merges.txt");
  table.save(path);
  const auto lines = read_lines(path);
  REQUIRE(!lines.empty());
  CHECK(lines.front() == MergeTable::kVersionLine);
  CHECK(lines.size() == table.size() + 1);
  const auto loaded = MergeTable::load(path);
  CHECK(loaded.rules() == table.rules());
  CHECK(loaded.fingerprint() == table.fingerprint());
}

TEST_CASE("build_vocab: character example") {
  const std::vector<std::string> lines{"a a b"};
  const auto v = build_vocab(lines, Unit::character, 100);
  CHECK(v.size() == 7);
  for (const auto& s : {"<s>", "</s>", "<unk>", "<pad>", "a", "b", " "}) CHECK(v.contains(s));
  CHECK(v.index("<s>") == Vocabulary::kBos);
  CHECK(v.index("</s>") == Vocabulary::kEos);
  CHECK(v.index("<unk>") == Vocabulary::kUnk);
  CHECK(v.index("<pad>") == Vocabulary::kPad);
  CHECK(v.index("q") == Vocabulary::kUnk);
  CHECK_THROWS_AS(build_vocab(lines, Unit::character, 4), ConfigError);
}

TEST_CASE("build_vocab: frequency ranking and truncation") {
  const std::vector<std::string> lines{"c c c b b a", "d"};
  const auto v = build_vocab(lines, Unit::subword, 6);
  CHECK(v.size() == 6);
  CHECK(v.symbol(4) == "c");
  CHECK(v.symbol(5) == "b");
  CHECK(v.index("a") == Vocabulary::kUnk);
}

TEST_CASE("vocabulary: round trip, inverse maps and persistence") {
  const std::vector<std::string> lines{"the cat sat", "on the mat"};
  const auto v = build_vocab(lines, Unit::character, 100);
  for (int i = 0; i < v.size(); ++i) CHECK(v.index(v.symbol(i)) == i);
  const auto units = v.split("the mat");
  CHECK(join(v.decode(v.encode(units)), "") == "the mat");
  const auto unknown = v.split("zap");
  const auto ids = v.encode(unknown);
  CHECK(ids[0] == Vocabulary::kUnk);
  CHECK(ids[1] == v.index("a"));

  const auto path = scratch("vocab.txt");
  v.save(path);
  const auto loaded = Vocabulary::load(path, Unit::character);
  CHECK(loaded.symbols() == v.symbols());
  CHECK(loaded.fingerprint() == v.fingerprint());
  CHECK_THROWS_AS(v.symbol(v.size()), VocabularyError);
  CHECK_THROWS_AS(Vocabulary(Unit::subword, {"a", "b"}), VocabularyError);
}

TEST_CASE("utf8 characters are scalar values") {
  CHECK(utf8_chars("aé中") == std::vector<std::string>{"a", "é", "中"});
  CHECK(utf8_chars("").empty());
}

namespace {

ParallelCorpus toy_corpus(int n, int max_len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParallelCorpus corpus;
  for (int i = 0; i < n; ++i) {
    std::vector<std::string> s, t;
    const int ls = 1 + static_cast<int>(rng() % max_len);
    const int lt = 1 + static_cast<int>(rng() % max_len);
    for (int k = 0; k < ls; ++k) s.push_back(std::string(1, static_cast<char>('a' + rng() % 5)));
    for (int k = 0; k < lt; ++k) t.push_back(std::string(1, static_cast<char>('a' + rng() % 5)));
    corpus.source.push_back(s);
    corpus.target.push_back(t);
  }
  return corpus;
}

Vocabulary letters() {
  auto symbols = Vocabulary::reserved_symbols();
  for (char c = 'a'; c <= 'e'; ++c) symbols.push_back(std::string(1, c));
  return Vocabulary(Unit::character, symbols);
}

}  // namespace

TEST_CASE("make_batches: default source limit drops 51 subwords") {
  ParallelCorpus corpus;
  corpus.source.push_back(std::vector<std::string>(50, "a"));
  corpus.target.push_back({"b"});
  corpus.source.push_back(std::vector<std::string>(51, "a"));
  corpus.target.push_back({"b"});
  BatchOptions options;
  options.limits = LengthLimits::defaults(Unit::character);
  CHECK(options.limits.source == 50);
  CHECK(options.limits.target == 500);
  CHECK(LengthLimits::defaults(Unit::subword).target == 100);
  const auto v = letters();
  const auto batches = make_batches(corpus, v, v, options);
  REQUIRE(batches.size() == 1);
  CHECK(batches[0].size == 1);
  CHECK(batches[0].example_ids[0] == 0);
  CHECK(batches[0].source_len == 51);
  CHECK(batches[0].source_at(0, 50) == Vocabulary::kEos);
}

TEST_CASE("make_batches: batch size one is pad free; EOS and BOS placement") {
  const auto corpus = toy_corpus(12, 6, 1);
  const auto v = letters();
  BatchOptions options;
  options.batch_size = 1;
  const auto batches = make_batches(corpus, v, v, options);
  CHECK(batches.size() == 12);
  for (const auto& b : batches) {
    for (int s : b.source) CHECK(s != Vocabulary::kPad);
    for (int t : b.target) CHECK(t != Vocabulary::kPad);
    CHECK(b.target_at(0, 0) == Vocabulary::kBos);
    CHECK(b.target_at(0, b.target_len - 1) == Vocabulary::kEos);
    CHECK(b.source_at(0, b.source_len - 1) == Vocabulary::kEos);
    CHECK(b.source_len == static_cast<int>(corpus.source[b.example_ids[0]].size()) + 1);
  }
}

TEST_CASE("make_batches: invariants, determinism and monotone filtering") {
  const auto corpus = toy_corpus(200, 12, 2);
  const auto v = letters();
  BatchOptions options;
  options.batch_size = 16;
  options.seed = 42;
  options.limits = {8, 9};
  const auto first = make_batches(corpus, v, v, options);
  const auto second = make_batches(corpus, v, v, options);
  REQUIRE(first.size() == second.size());
  std::set<std::size_t> kept;
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(first[i].example_ids == second[i].example_ids);
    CHECK(first[i].source == second[i].source);
    const auto& b = first[i];
    for (int r = 0; r < b.size; ++r) {
      kept.insert(b.example_ids[r]);
      CHECK(b.source_lengths[r] <= options.limits.source + 1);
      CHECK(b.target_lengths[r] <= options.limits.target + 2);
      for (int t = 0; t < b.source_len; ++t) {
        CHECK(b.source_at(r, t) < v.size());
        CHECK((b.source_at(r, t) == Vocabulary::kPad) == (t >= b.source_lengths[r]));
      }
      for (int t = 0; t < b.target_len; ++t) {
        CHECK((b.target_at(r, t) == Vocabulary::kPad) == (t >= b.target_lengths[r]));
        CHECK(static_cast<bool>(b.target_mask[r * b.target_len + t]) == (t < b.target_lengths[r]));
      }
    }
  }
  options.seed = 43;
  const auto reshuffled = make_batches(corpus, v, v, options);
  CHECK(reshuffled[0].example_ids != first[0].example_ids);

  for (int extra = 1; extra <= 4; ++extra) {
    BatchOptions wider = options;
    wider.limits = {8 + extra, 9 + extra};
    std::set<std::size_t> wider_kept;
    for (const auto& b : make_batches(corpus, v, v, wider)) {
      wider_kept.insert(b.example_ids.begin(), b.example_ids.end());
    }
    for (auto id : kept) CHECK(wider_kept.count(id) == 1);
  }
}

TEST_CASE("read_parallel: line-count mismatch names the longer file") {
  const auto src = scratch("a.src");
  const auto tgt = scratch("a.tgt");
  const std::vector<std::string> three{"x", "y", "z"}, two{"x", "y"};
  write_lines_atomic(src, three);
  write_lines_atomic(tgt, two);
  try {
    read_parallel(src, tgt);
    FAIL("expected an alignment error");
  } catch (const CorpusAlignmentError& e) {
    CHECK(std::string(e.what()).find(src.string()) != std::string::npos);
  }
  CHECK_THROWS_AS(read_parallel(scratch("missing.src"), tgt), PathError);
}
