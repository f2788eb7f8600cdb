#pragma once

// Small on-disk tasks shared by the trainer, decode and CLI tests.

#include <algorithm>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "charnmt/config.hpp"
#include "charnmt/io.hpp"
#include "charnmt/pipeline.hpp"
#include "charnmt/textpipe.hpp"

namespace fixture {

namespace fs = std::filesystem;

inline fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("charnmt_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Source words map to targets by a fixed letter substitution; word order is
// reversed on the target side.
struct Task {
  std::vector<std::string> sources;
  std::vector<std::string> targets;
};

inline std::string substitute(const std::string& word) {
  std::string out = word;
  for (char& c : out) c = static_cast<char>('a' + (c - 'a' + 7) % 26);
  return out;
}

inline Task cipher_task(std::size_t pairs, std::size_t lexicon_size, int min_words, int max_words,
                        std::uint64_t seed, int min_letters = 2, int max_letters = 6) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> lexicon;
  std::uniform_int_distribution<int> letter(0, 25), len(min_letters, max_letters);
  while (lexicon.size() < lexicon_size) {
    std::string w;
    for (int i = len(rng); i > 0; --i) w += static_cast<char>('a' + letter(rng));
    if (std::find(lexicon.begin(), lexicon.end(), w) == lexicon.end()) lexicon.push_back(w);
  }
  std::uniform_int_distribution<std::size_t> pick(0, lexicon.size() - 1);
  std::uniform_int_distribution<int> words(min_words, max_words);
  Task t;
  for (std::size_t i = 0; i < pairs; ++i) {
    std::vector<std::string> src;
    for (int k = words(rng); k > 0; --k) src.push_back(lexicon[pick(rng)]);
    std::vector<std::string> tgt;
    for (auto it = src.rbegin(); it != src.rend(); ++it) tgt.push_back(substitute(*it));
    t.sources.push_back(charnmt::join(src, " "));
    t.targets.push_back(charnmt::join(tgt, " "));
  }
  return t;
}

inline charnmt::TextPipeline pipeline_for(const Task& t) {
  charnmt::TextPipeline p;
  p.source_vocab = charnmt::build_vocab(t.sources, charnmt::Unit::subword, 100000);
  p.target_vocab = charnmt::build_vocab(t.targets, charnmt::Unit::character, 100000);
  return p;
}

// Writes corpora and vocabularies under dir and returns a config that names
// them, with small model dimensions.
inline charnmt::RunConfig write_task(const fs::path& dir, const Task& train, const Task& dev) {
  const auto p = pipeline_for(train);
  charnmt::write_lines_atomic(dir / "train.src", train.sources);
  charnmt::write_lines_atomic(dir / "train.tgt", train.targets);
  charnmt::write_lines_atomic(dir / "dev.src", dev.sources);
  charnmt::write_lines_atomic(dir / "dev.tgt", dev.targets);
  p.source_vocab.save(dir / "src.vocab");
  p.target_vocab.save(dir / "tgt.vocab");
  charnmt::RunConfig c;
  c.set("train_source", (dir / "train.src").string());
  c.set("train_target", (dir / "train.tgt").string());
  c.set("dev_source", (dir / "dev.src").string());
  c.set("dev_target", (dir / "dev.tgt").string());
  c.set("source_vocab", (dir / "src.vocab").string());
  c.set("target_vocab", (dir / "tgt.vocab").string());
  c.set("output_dir", (dir / "run").string());
  c.set("embed_dim", "6");
  c.set("encoder_dim", "7");
  c.set("decoder_dim", "8");
  c.set("batch_size", "4");
  c.set("max_steps", "4");
  c.set("valid_interval", "2");
  return c;
}

}  // namespace fixture
