#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "charnmt/errors.hpp"
#include "charnmt/io.hpp"
#include "charnmt/metrics.hpp"
#include "fixture.hpp"
#include "model_checks.hpp"

using namespace charnmt;

namespace {

BleuReport score(std::vector<std::string> hyps, std::vector<std::string> refs) {
  return bleu(hyps, refs);
}

std::vector<std::string> random_corpus(std::mt19937_64& rng, int lines) {
  std::uniform_int_distribution<int> len(0, 12), word(0, 9);
  std::vector<std::string> out;
  for (int i = 0; i < lines; ++i) {
    std::string line;
    for (int k = len(rng); k > 0; --k) line += (line.empty() ? "" : " ") + std::string(1, 'a' + word(rng));
    out.push_back(line);
  }
  return out;
}

}  // namespace

TEST_CASE("BLEU hand-computed cases") {
  SUBCASE("identical corpus") {
    const auto r = score({"the cat sat", "on the mat today"}, {"the cat sat", "on the mat today"});
    CHECK(r.bleu == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.brevity_penalty == 1.0);
  }
  SUBCASE("no higher-order matches and no smoothing") {
    const auto r = score({"a b"}, {"a b c d"});
    CHECK(r.bleu == 0.0);
    CHECK(r.precisions[0] == 1.0);
    CHECK(r.precisions[2] == 0.0);
  }
  SUBCASE("brevity penalty only") {
    const auto r = score({"a b c d"}, {"a b c d e"});
    CHECK(std::abs(r.bleu - std::exp(-0.25)) < 1e-6);
    CHECK(std::abs(r.bleu - 0.7788) < 1e-4);
    for (double p : r.precisions) CHECK(p == 1.0);
  }
  SUBCASE("clipped counts") {
    // a a b c d e vs a b c d e f: 5/6, 4/5, 3/4, 2/3
    const auto r = score({"a a b c d e"}, {"a b c d e f"});
    CHECK(r.matches == std::array<long, 4>{5, 4, 3, 2});
    CHECK(r.totals == std::array<long, 4>{6, 5, 4, 3});
    CHECK(std::abs(r.bleu - std::pow(1.0 / 3.0, 0.25)) < 1e-6);
  }
  SUBCASE("statistics pool over the corpus") {
    // 7/8, 4/6, 2/4, 1/2
    const auto r = score({"a b c d", "e f g h"}, {"a b c d", "e f x h"});
    CHECK(std::abs(r.bleu - std::pow(7.0 / 48.0, 0.25)) < 1e-6);
  }
  SUBCASE("empty hypotheses") {
    const auto r = score({"", ""}, {"a b", "c"});
    CHECK(r.bleu == 0.0);
    CHECK(r.brevity_penalty == 0.0);
    CHECK(r.hyp_len == 0);
    CHECK(r.ref_len == 3);
  }
  SUBCASE("too short for 4-grams") { CHECK(score({"a b c"}, {"a b c"}).bleu == 0.0); }
  SUBCASE("line count mismatch") { CHECK_THROWS_AS(score({"a"}, {"a", "b"}), AlignmentError); }
}

TEST_CASE("BLEU matches the reference implementation on a fixture corpus") {
  const std::string dir = CHARNMT_TEST_DATA;
  const auto hyps = read_lines(dir + "/bleu_hyp.txt");
  const auto refs = read_lines(dir + "/bleu_ref.txt");
  REQUIRE(hyps.size() == 100);
  const auto expected = nlohmann::json::parse(read_file(dir + "/bleu_expected.json"));
  const auto r = bleu(hyps, refs);
  CHECK(std::abs(r.bleu - expected["bleu"].get<double>()) < 5e-5);
  for (int n = 0; n < 4; ++n) {
    CHECK(std::abs(r.precisions[n] - expected["precisions"][n].get<double>()) < 5e-5);
  }
  CHECK(std::abs(r.brevity_penalty - expected["brevity_penalty"].get<double>()) < 5e-5);
  CHECK(r.hyp_len == expected["hyp_len"].get<long>());
  CHECK(r.ref_len == expected["ref_len"].get<long>());
  CHECK(r.line() ==
        "BLEU = 70.05, 92.7/75.7/66.0/57.8 (BP=0.974, ratio=0.974, hyp_len=1236, ref_len=1269)");
}

TEST_CASE("BLEU properties on random corpora") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const auto refs = random_corpus(rng, 1 + trial % 7);
    const auto hyps = random_corpus(rng, static_cast<int>(refs.size()));
    const auto r = bleu(hyps, refs);
    CHECK(r.bleu >= 0.0);
    CHECK(r.bleu <= 1.0);
    CHECK(r.brevity_penalty <= 1.0);

    std::vector<std::size_t> perm(refs.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::string> h2, r2;
    for (auto i : perm) {
      h2.push_back(hyps[i]);
      r2.push_back(refs[i]);
    }
    CHECK(bleu(h2, r2).bleu == r.bleu);

    // self-BLEU is 1 once every n-gram order occurs; otherwise p4 is 0/0 and scores 0
    bool has_4gram = false;
    for (const auto& l : refs) has_4gram |= split_whitespace(l).size() >= 4;
    if (has_4gram) CHECK(bleu(refs, refs).bleu == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("bucket specifications") {
  const auto b = parse_buckets("1-10,11-20,21-");
  REQUIRE(b.size() == 3);
  CHECK(b[0].contains(1));
  CHECK(b[0].contains(10));
  CHECK_FALSE(b[0].contains(11));
  CHECK(b[2].contains(1000));
  CHECK(b[2].label() == "21-");
  CHECK(parse_buckets("7")[0].label() == "7");
  for (const char* bad : {"", "1-,", "a-3", "5-2", "1-2-3", "-4", "3x"}) {
    CHECK_THROWS_AS(parse_buckets(bad), UsageError);
  }
}

TEST_CASE("BLEU by source length") {
  const std::vector<std::string> src{"w w w w w", "w w w w w w w w w w w w w w w"};
  const std::vector<std::string> hyp{"a b c d", "e f g h i"};
  const std::vector<std::string> ref{"a b c d e", "e f g h i"};
  const auto all = bleu_by_source_length(hyp, ref, src, parse_buckets("0-"));
  REQUIRE(all.size() == 1);
  CHECK(all[0].report.bleu == bleu(hyp, ref).bleu);
  CHECK(all[0].count == 2);

  const auto split = bleu_by_source_length(hyp, ref, src, parse_buckets("1-10,11-20,21-30"));
  REQUIRE(split.size() == 2);
  CHECK(std::abs(split[0].report.bleu - std::exp(-0.25)) < 1e-12);
  CHECK(split[1].report.bleu == doctest::Approx(1.0));
  CHECK(bucket_tsv(split) == "1-10\t1\t0.778801\n11-20\t1\t1.000000\n");

  const std::vector<std::string> src_r{src[1], src[0]}, hyp_r{hyp[1], hyp[0]}, ref_r{ref[1], ref[0]};
  const auto swapped = bleu_by_source_length(hyp_r, ref_r, src_r, parse_buckets("1-10,11-20"));
  CHECK(swapped[0].report.bleu == split[0].report.bleu);
  CHECK(swapped[1].report.bleu == split[1].report.bleu);
  CHECK_THROWS_AS(bleu_by_source_length(hyp, ref, std::vector<std::string>{"x"}, parse_buckets("0-")),
                  AlignmentError);
}

TEST_CASE("frequency buckets are powers of two") {
  CHECK(frequency_bucket(0).label() == "0");
  CHECK(frequency_bucket(1).label() == "1");
  CHECK(frequency_bucket(2).label() == "2-3");
  CHECK(frequency_bucket(3).label() == "2-3");
  CHECK(frequency_bucket(4).label() == "4-7");
  CHECK(frequency_bucket(1000).label() == "512-1023");
  const auto f = word_frequencies(std::vector<std::string>{"a b a", "c a"});
  CHECK(f.at("a") == 3);
  CHECK(f.at("c") == 1);
}

namespace {

struct WordModels {
  TextPipeline pipeline;
  ModelConfig config;
  ParameterStore<double> a, b;
};

WordModels word_models() {
  WordModels m;
  const auto task = fixture::cipher_task(10, 6, 1, 4, 8);
  m.pipeline = fixture::pipeline_for(task);
  m.config.source_vocab = m.pipeline.source_vocab.size();
  m.config.target_vocab = m.pipeline.target_vocab.size();
  m.config.embed_dim = 4;
  m.config.encoder_dim = 5;
  m.config.decoder_dim = 6;
  m.a = oracle::random_parameters(m.config, 1, 0.5);
  m.b = oracle::random_parameters(m.config, 2, 0.5);
  return m;
}

}  // namespace

TEST_CASE("word NLL under a character decoder") {
  const auto m = word_models();
  const std::vector<std::string> src{"ab cd", "ef"};
  const std::vector<std::string> tgt{"hi jk lm", "no"};
  const auto words = word_nll(m.a, m.config, m.pipeline, src, tgt);
  REQUIRE(words.size() == 2);
  CHECK(words[0].size() == 3);
  CHECK(words[1].size() == 1);
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto s = sequence_log_prob(m.a, m.config, m.pipeline.source_indices(src[i]),
                                     m.pipeline.target_indices(tgt[i]));
    double sum = 0;
    for (double w : words[i]) {
      CHECK(w > 0);
      sum += w;
    }
    CHECK(sum == doctest::Approx(-s.total).epsilon(1e-12));
  }
  // first word: "h", "i" and the following space
  const auto s = sequence_log_prob(m.a, m.config, m.pipeline.source_indices(src[0]),
                                   m.pipeline.target_indices(tgt[0]));
  CHECK(words[0][0] == doctest::Approx(-(s.per_position[0] + s.per_position[1] + s.per_position[2])));

  // stray whitespace is normalized away before scoring
  const std::vector<std::string> one{"ab"}, clean{"hi jk"};
  const auto expected = word_nll(m.a, m.config, m.pipeline, one, clean);
  for (const char* messy : {" hi jk", "hi  jk", "hi jk ", "\thi jk"}) {
    const std::vector<std::string> t{messy};
    CHECK(word_nll(m.a, m.config, m.pipeline, one, t) == expected);
  }
}

TEST_CASE("word NLL under a subword decoder") {
  TextPipeline p;
  p.source_vocab = Vocabulary(Unit::subword, {"<s>", "</s>", "<unk>", "<pad>", "x", "y"});
  p.target_vocab = Vocabulary(Unit::subword, {"<s>", "</s>", "<unk>", "<pad>", "ab@@", "c", "de", "f@@", "g"});
  p.target_merges = MergeTable(std::vector<MergeTable::Rule>{{"a", "b"}, {"d", "e"}});
  ModelConfig c;
  c.source_vocab = p.source_vocab.size();
  c.target_vocab = p.target_vocab.size();
  c.embed_dim = 3;
  c.encoder_dim = 3;
  c.decoder_dim = 4;
  const auto params = oracle::random_parameters(c, 4, 0.5);
  const std::vector<std::string> src{"x y"};
  const std::vector<std::string> tgt{"abc de"};
  const auto syms = p.target_symbols(tgt[0]);
  REQUIRE(syms == std::vector<std::string>{"ab@@", "c", "de"});
  const auto words = word_nll(params, c, p, src, tgt);
  const auto s = sequence_log_prob(params, c, p.source_indices(src[0]), p.target_indices(tgt[0]));
  REQUIRE(words[0].size() == 2);
  CHECK(words[0][0] == doctest::Approx(-(s.per_position[0] + s.per_position[1])));
  CHECK(words[0][1] == doctest::Approx(-s.per_position[2]));
}

TEST_CASE("word NLL differences by frequency") {
  const auto m = word_models();
  const std::vector<std::string> src{"ab cd", "ef", "gh ij kl"};
  const std::vector<std::string> tgt{"hi jk lm", "no", "hi no pq"};
  const auto freq = word_frequencies(std::vector<std::string>{"hi hi no", "jk lm lm lm"});
  const auto a = word_nll(m.a, m.config, m.pipeline, src, tgt);
  const auto b = word_nll(m.b, m.config, m.pipeline, src, tgt);

  for (const auto& row : word_nll_by_frequency(a, a, tgt, freq)) CHECK(row.mean_diff == 0.0);

  const auto ab = word_nll_by_frequency(a, b, tgt, freq);
  const auto ba = word_nll_by_frequency(b, a, tgt, freq);
  REQUIRE(ab.size() == ba.size());
  long words = 0;
  for (std::size_t i = 0; i < ab.size(); ++i) {
    CHECK(ab[i].bucket.label() == ba[i].bucket.label());
    CHECK(ab[i].mean_diff == -ba[i].mean_diff);
    words += ab[i].count;
  }
  CHECK(words == 7);
  // pq unseen; jk, no once; hi twice, lm three times
  REQUIRE(ab.size() == 3);
  CHECK(ab[0].bucket.label() == "0");
  CHECK(ab[0].count == 1);
  CHECK(ab[1].count == 3);
  CHECK(ab[2].bucket.label() == "2-3");
  CHECK(ab[2].count == 3);

  // One sentence, one bucket: the mean is the summed per-position difference over the words.
  const std::vector<std::string> s1{src[0]}, t1{tgt[0]};
  const auto one = word_nll_by_frequency(word_nll(m.a, m.config, m.pipeline, s1, t1),
                                         word_nll(m.b, m.config, m.pipeline, s1, t1), t1, freq,
                                         parse_buckets("0-"));
  REQUIRE(one.size() == 1);
  const auto sa = sequence_log_prob(m.a, m.config, m.pipeline.source_indices(s1[0]),
                                    m.pipeline.target_indices(t1[0]));
  const auto sb = sequence_log_prob(m.b, m.config, m.pipeline.source_indices(s1[0]),
                                    m.pipeline.target_indices(t1[0]));
  double hand = 0;
  for (std::size_t k = 0; k < sa.per_position.size(); ++k) hand += -sa.per_position[k] + sb.per_position[k];
  CHECK(one[0].mean_diff == doctest::Approx(hand / 3).epsilon(1e-12));
  CHECK(one[0].count == 3);

  const auto picked = word_nll_by_frequency(a, b, tgt, freq, parse_buckets("1-2"));
  REQUIRE(picked.size() == 1);
  CHECK(picked[0].count == 5);  // hi jk / no / hi no

  std::vector<std::vector<double>> short_a = a;
  short_a[0].pop_back();
  CHECK_THROWS_AS(word_nll_by_frequency(short_a, b, tgt, freq), AlignmentError);
}
