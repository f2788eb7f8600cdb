#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "charnmt/decode.hpp"
#include "charnmt/errors.hpp"
#include "fixture.hpp"
#include "model_checks.hpp"

using namespace charnmt;

namespace {

ModelHandle<double> random_handle(DecoderKind kind, std::uint64_t seed, double scale = 1.0) {
  const auto config = checks::toy_config(kind, ModelConfig::default_query(kind));
  return {oracle::random_parameters(config, seed, scale), config, 0, 0};
}

std::vector<int> random_source(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(1, 6), tok(4, 8);
  std::vector<int> s;
  for (int i = len(rng); i > 0; --i) s.push_back(tok(rng));
  s.push_back(Vocabulary::kEos);
  return s;
}

// Output bias that makes one target symbol overwhelmingly likely.
ModelHandle<double> biased_handle(int token) {
  auto h = random_handle(DecoderKind::biscale, 11, 0.3);
  auto& b = h.params.at("out.b");
  b.fill(0.0);
  if (token != Vocabulary::kEos) b[Vocabulary::kEos] = -60.0;
  b[token] = 60.0;
  return h;
}

double row_sum(const std::vector<double>& row) {
  double s = 0;
  for (double v : row) s += v;
  return s;
}

}  // namespace

TEST_CASE("ensemble combination averages probabilities") {
  const double ninf = -std::numeric_limits<double>::infinity();
  const std::vector<Tensor<double>> two{Tensor<double>::vector({0.0, ninf}),
                                        Tensor<double>::vector({ninf, 0.0})};
  const auto mixed = ensemble_log_probs<double>(two);
  CHECK(std::exp(mixed[0]) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::exp(mixed[1]) == doctest::Approx(0.5).epsilon(1e-15));

  const std::vector<Tensor<double>> dead{Tensor<double>::vector({ninf, 0.0}),
                                         Tensor<double>::vector({ninf, 0.0})};
  CHECK(ensemble_log_probs<double>(dead)[0] == ninf);

  const std::vector<Tensor<double>> bad{Tensor<double>::vector({0.0}),
                                        Tensor<double>::vector({0.0, 0.0})};
  CHECK_THROWS_AS(ensemble_log_probs<double>(bad), EnsembleError);
  CHECK_THROWS_AS(ensemble_log_probs<double>(std::span<const Tensor<double>>()), EnsembleError);
}

TEST_CASE("ensemble combination is a normalized, order-free mean") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor<double>> members;
    for (int m = 0; m < 3; ++m) {
      auto t = softmax(oracle::random_tensor({2, 6}, rng, 4.0));
      for (double& v : t.values()) v = std::log(v);
      members.push_back(std::move(t));
    }
    const auto combined = ensemble_log_probs<double>(members);
    for (int r = 0; r < 2; ++r) {
      double total = 0;
      for (int k = 0; k < 6; ++k) {
        double mean = 0;
        for (const auto& m : members) mean += std::exp(m.at(r, k)) / 3;
        CHECK(std::exp(combined.at(r, k)) == doctest::Approx(mean).epsilon(1e-12));
        total += std::exp(combined.at(r, k));
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
    std::vector<Tensor<double>> shuffled{members[2], members[0], members[1]};
    const auto again = ensemble_log_probs<double>(shuffled);
    for (std::size_t i = 0; i < combined.size(); ++i) CHECK(std::abs(again[i] - combined[i]) < 1e-12);

    const std::vector<Tensor<double>> twins{members[0], members[0]};
    const auto same = ensemble_log_probs<double>(twins);
    for (std::size_t i = 0; i < same.size(); ++i) CHECK(std::abs(same[i] - members[0][i]) < 1e-12);
  }
}

TEST_CASE("ensemble construction checks its members") {
  CHECK_THROWS_AS(Ensemble<double>(std::vector<ModelHandle<double>>{}), EnsembleError);
  auto a = random_handle(DecoderKind::base, 1);
  auto b = random_handle(DecoderKind::biscale, 2);
  CHECK_NOTHROW(Ensemble<double>({a, b}));
  auto c = b;
  c.config.target_vocab = 9;
  c.params = oracle::random_parameters(c.config, 3);
  CHECK_THROWS_AS(Ensemble<double>({a, c}), EnsembleError);
  auto d = b;
  a.target_vocab_fingerprint = 1;
  d.target_vocab_fingerprint = 2;
  CHECK_THROWS_AS(Ensemble<double>({a, d}), EnsembleError);
}

TEST_CASE("width one beam search is greedy decoding") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const auto kind = trial % 2 ? DecoderKind::base : DecoderKind::biscale;
    const Ensemble<double> models({random_handle(kind, 100 + trial)});
    const auto src = random_source(rng);
    const auto greedy = greedy_decode(models, src, 25);
    SearchOptions o;
    o.width = 1;
    o.max_len = 25;
    const auto beam = beam_search(models, src, o);
    REQUIRE(beam.size() == 1);
    CHECK(beam[0].tokens == greedy.tokens);
    CHECK(beam[0].log_prob == greedy.log_prob);
    CHECK(beam[0].finished == greedy.finished);
    CHECK(beam[0].forced == greedy.forced);
  }
}

TEST_CASE("wider beams never score below greedy") {
  std::mt19937_64 rng(6);
  int finished = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto kind = trial % 2 ? DecoderKind::base : DecoderKind::biscale;
    auto h = random_handle(kind, 300 + trial);
    h.params.at("out.b")[Vocabulary::kEos] += 1.5;
    const Ensemble<double> models({h});
    const auto src = random_source(rng);
    const auto greedy = greedy_decode(models, src, 40);
    finished += greedy.finished;
    double previous = greedy.log_prob;
    for (int width : {5, 8}) {
      SearchOptions o;
      o.width = width;
      o.max_len = 40;
      const auto beam = beam_search(models, src, o);
      REQUIRE_FALSE(beam.empty());
      CHECK(beam.size() <= static_cast<std::size_t>(width));
      // batched rows may differ from the single-row greedy pass in the last bits
      CHECK(beam[0].log_prob >= previous - 1e-9);
      previous = beam[0].log_prob;
    }
  }
  CHECK(finished > 60);
}
TEST_CASE("beam scores agree with teacher-forced rescoring") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto kind = trial % 2 ? DecoderKind::base : DecoderKind::biscale;
    const auto h = random_handle(kind, 500 + trial);
    const auto src = random_source(rng);
    SearchOptions o;
    o.width = 4;
    o.max_len = 30;
    for (const auto& hyp : beam_search(Ensemble<double>({h}), src, o)) {
      if (!hyp.finished) continue;
      const auto score = sequence_log_prob(h.params, h.config, src, hyp.tokens);
      CHECK(hyp.log_prob == doctest::Approx(score.total).epsilon(1e-5));
      REQUIRE(hyp.alignment.size() == score.alignment.size());
      for (std::size_t t = 0; t < hyp.alignment.size(); ++t) {
        for (std::size_t j = 0; j < src.size(); ++j) {
          CHECK(std::abs(hyp.alignment[t][j] - score.alignment[t][j]) < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("a duplicated model decodes like the single model") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto h = random_handle(trial % 2 ? DecoderKind::base : DecoderKind::biscale, 700 + trial);
    const auto src = random_source(rng);
    SearchOptions o;
    o.width = 3;
    o.max_len = 30;
    const auto one = beam_search(Ensemble<double>({h}), src, o);
    const auto two = beam_search(Ensemble<double>({h, h}), src, o);
    REQUIRE(one.size() == two.size());
    for (std::size_t i = 0; i < one.size(); ++i) {
      CHECK(one[i].tokens == two[i].tokens);
      CHECK(std::abs(one[i].log_prob - two[i].log_prob) < 1e-9);
    }
  }
}

TEST_CASE("alignment rows are distributions") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const Ensemble<double> models(
        {random_handle(DecoderKind::biscale, 900 + trial), random_handle(DecoderKind::base, 950 + trial)});
    const auto src = random_source(rng);
    for (const auto& row : greedy_decode(models, src, 20).alignment) {
      CHECK(row.size() == src.size());
      CHECK(row_sum(row) == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("immediate end of sentence gives an empty translation") {
  const Ensemble<double> models({biased_handle(Vocabulary::kEos)});
  const std::vector<int> src{4, 5, 1};
  const auto g = greedy_decode(models, src, 10);
  CHECK(g.tokens == std::vector<int>{Vocabulary::kEos});
  CHECK(g.finished);
  SearchOptions o;
  o.width = 4;
  o.max_len = 10;
  const auto b = beam_search(models, src, o);
  CHECK(b[0].tokens == std::vector<int>{Vocabulary::kEos});

  TextPipeline p;
  p.source_vocab = Vocabulary(Unit::subword, {"<s>", "</s>", "<unk>", "<pad>", "a", "b", "c", "d", "e"});
  p.target_vocab = Vocabulary(Unit::character, {"<s>", "</s>", "<unk>", "<pad>", "x", "y", " ", "z"});
  const std::vector<std::string> lines{"a b", ""};
  for (const auto& tr : translate_lines(models, p, lines, o)) CHECK(tr.text.empty());
}

TEST_CASE("hypotheses are cut off at the length bound") {
  const Ensemble<double> models({biased_handle(4)});
  const std::vector<int> src{4, 1};
  const auto g = greedy_decode(models, src, 7);
  CHECK(g.forced);
  CHECK_FALSE(g.finished);
  CHECK(g.tokens == std::vector<int>(7, 4));
  SearchOptions o;
  o.width = 3;
  o.max_len = 7;
  const auto b = beam_search(models, src, o);
  CHECK(b[0].forced);
  CHECK(b[0].tokens.size() == 7);
}

TEST_CASE("the pool is ranked by log-probability") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    const Ensemble<double> models({random_handle(DecoderKind::biscale, 1100 + trial, 2.0)});
    SearchOptions o;
    o.width = 4;
    o.max_len = 3;
    const auto b = beam_search(models, random_source(rng), o);
    for (std::size_t i = 0; i < b.size(); ++i) {
      CHECK(b[i].finished != b[i].forced);
      CHECK(b[i].finished == (b[i].tokens.back() == Vocabulary::kEos));
      if (i) CHECK(b[i].log_prob <= b[i - 1].log_prob);
    }
  }
}

TEST_CASE("length normalization orders by mean log-probability") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const Ensemble<double> models({random_handle(DecoderKind::base, 1300 + trial)});
    SearchOptions o;
    o.width = 5;
    o.max_len = 30;
    o.length_normalize = true;
    const auto b = beam_search(models, random_source(rng), o);
    for (std::size_t i = 1; i < b.size(); ++i) {
      CHECK(b[i].log_prob / b[i].tokens.size() <= b[i - 1].log_prob / b[i - 1].tokens.size() + 1e-12);
    }
  }
}

TEST_CASE("search arguments are validated") {
  const Ensemble<double> models({random_handle(DecoderKind::base, 1)});
  const std::vector<int> src{4, 1};
  SearchOptions o;
  o.width = 0;
  o.max_len = 5;
  CHECK_THROWS_AS(beam_search(models, src, o), ConfigError);
  o.width = 2;
  o.max_len = 0;
  CHECK_THROWS_AS(beam_search(models, src, o), ConfigError);
  CHECK_THROWS_AS(greedy_decode(models, std::vector<int>{}, 5), ContractError);
}

TEST_CASE("default output bound") {
  CHECK(default_max_len(Unit::character, 10) == 150);
  CHECK(default_max_len(Unit::subword, 10) == 30);
  CHECK(default_max_len(Unit::character, 0) == 50);
}

TEST_CASE("pipelines must match the models") {
  const auto task = fixture::cipher_task(6, 5, 1, 2, 1);
  auto p = fixture::pipeline_for(task);
  ModelConfig c;
  c.source_vocab = p.source_vocab.size();
  c.target_vocab = p.target_vocab.size();
  c.embed_dim = 3;
  c.encoder_dim = 3;
  c.decoder_dim = 4;
  ModelHandle<float> h{init_parameters<float>(c, 1), c, p.source_vocab.fingerprint(),
                       p.target_vocab.fingerprint()};
  const Ensemble<float> models({h});
  CHECK_NOTHROW(models.check_pipeline(p));
  const std::vector<std::string> lines{task.sources[0]};
  SearchOptions o;
  const auto tr = translate_lines(models, p, lines, o);
  CHECK(tr[0].source_symbols.back() == "</s>");
  CHECK(tr[0].best.alignment.size() == tr[0].best.tokens.size());

  auto other = fixture::pipeline_for(fixture::cipher_task(6, 5, 1, 2, 99));
  CHECK_THROWS_AS(models.check_pipeline(other), ConsistencyError);
  auto same_size = p;
  same_size.target_vocab = Vocabulary(Unit::character, [&] {
    auto s = p.target_vocab.symbols();
    std::swap(s[4], s[5]);
    return s;
  }());
  CHECK_THROWS_AS(translate_lines(models, same_size, lines, o), ConsistencyError);
}

TEST_CASE("alignment export") {
  const std::vector<std::string> src{"ab", "c@@", "</s>"};
  const std::string tsv = alignment_tsv(src, {{0.5, 0.25, 0.25}, {1, 0, 0}});
  CHECK(tsv == "ab\tc@@\t</s>\n0.5\t0.25\t0.25\n1\t0\t0\n");
  CHECK_THROWS_AS(alignment_tsv(src, {{0.5, 0.5}}), DimensionError);
}
