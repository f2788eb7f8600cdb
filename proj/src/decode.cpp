#include "charnmt/decode.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "charnmt/errors.hpp"

namespace charnmt {

template <typename T>
Ensemble<T>::Ensemble(std::vector<ModelHandle<T>> members) : members_(std::move(members)) {
  if (members_.empty()) throw EnsembleError("an ensemble needs at least one model");
  for (const auto& m : members_) {
    m.config.validate();
    if (m.config.target_vocab != members_.front().config.target_vocab) {
      throw EnsembleError("ensemble members disagree on target vocabulary size (" +
                          std::to_string(m.config.target_vocab) + " vs " +
                          std::to_string(members_.front().config.target_vocab) + ")");
    }
    if (m.config.source_vocab != members_.front().config.source_vocab) {
      throw EnsembleError("ensemble members disagree on source vocabulary size");
    }
    if (m.target_vocab_fingerprint && members_.front().target_vocab_fingerprint &&
        m.target_vocab_fingerprint != members_.front().target_vocab_fingerprint) {
      throw EnsembleError("ensemble members were trained with different target vocabularies");
    }
  }
}

template <typename T>
void Ensemble<T>::check_pipeline(const TextPipeline& pipeline) const {
  for (std::size_t i = 0; i < members_.size(); ++i) {
    const auto& m = members_[i];
    const std::string who = "model " + std::to_string(i + 1);
    if (m.config.source_vocab != pipeline.source_vocab.size() ||
        m.config.target_vocab != pipeline.target_vocab.size()) {
      throw ConsistencyError(who + " expects vocabularies of " +
                             std::to_string(m.config.source_vocab) + "/" +
                             std::to_string(m.config.target_vocab) + " symbols, got " +
                             std::to_string(pipeline.source_vocab.size()) + "/" +
                             std::to_string(pipeline.target_vocab.size()));
    }
    if ((m.source_vocab_fingerprint &&
         m.source_vocab_fingerprint != pipeline.source_vocab.fingerprint()) ||
        (m.target_vocab_fingerprint &&
         m.target_vocab_fingerprint != pipeline.target_vocab.fingerprint())) {
      throw ConsistencyError(who + " was trained with different vocabulary files");
    }
  }
}

template <typename T>
Tensor<T> ensemble_log_probs(std::span<const Tensor<T>> member_log_probs) {
  if (member_log_probs.empty()) throw EnsembleError("no member outputs to combine");
  const Tensor<T>& first = member_log_probs.front();
  for (const auto& t : member_log_probs) {
    if (t.shape() != first.shape()) {
      throw EnsembleError("member outputs have shapes " + shape_string(first.shape()) + " and " +
                          shape_string(t.shape()));
    }
  }
  if (member_log_probs.size() == 1) return first;
  const double log_m = std::log(static_cast<double>(member_log_probs.size()));
  Tensor<T> out(first.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& t : member_log_probs) hi = std::max(hi, static_cast<double>(t[i]));
    if (hi == -std::numeric_limits<double>::infinity()) {
      out[i] = static_cast<T>(hi);
      continue;
    }
    double total = 0;
    for (const auto& t : member_log_probs) total += std::exp(static_cast<double>(t[i]) - hi);
    out[i] = static_cast<T>(hi + std::log(total) - log_m);
  }
  return out;
}

int default_max_len(Unit target_unit, int source_symbols) {
  return target_unit == Unit::character ? 10 * source_symbols + 50 : 2 * source_symbols + 10;
}

namespace {

// Runs every ensemble member one step for a set of rows.
template <typename T>
class EnsembleStepper {
 public:
  EnsembleStepper(const Ensemble<T>& models, std::span<const int> source) {
    for (std::size_t i = 0; i < models.size(); ++i) {
      decoders_.emplace_back(models.member(i).params, models.member(i).config, source);
      states_.push_back(decoders_.back().initial_state());
    }
  }

  // Combined log-probabilities and mean alignment for each current row.
  void step(std::span<const int> previous) {
    std::vector<Tensor<T>> lps;
    alignment_ = Tensor<double>();
    next_.clear();
    for (std::size_t m = 0; m < decoders_.size(); ++m) {
      auto r = decoders_[m].step(previous, states_[m]);
      lps.push_back(std::move(r.log_probs));
      Tensor<double> a = r.alignment.template cast<double>();
      if (m == 0) {
        alignment_ = std::move(a);
      } else {
        for (std::size_t i = 0; i < a.size(); ++i) alignment_[i] += a[i];
      }
      next_.push_back(std::move(r.state));
    }
    if (decoders_.size() > 1) {
      for (double& v : alignment_.values()) v /= static_cast<double>(decoders_.size());
    }
    log_probs_ = ensemble_log_probs<T>(lps);
  }

  void keep(std::span<const int> rows) {
    for (std::size_t m = 0; m < decoders_.size(); ++m) states_[m] = next_[m].select(rows);
  }

  const Tensor<T>& log_probs() const { return log_probs_; }
  const Tensor<double>& alignment() const { return alignment_; }

 private:
  std::vector<IncrementalDecoder<T>> decoders_;
  std::vector<PackedState<T>> states_;
  std::vector<PackedState<T>> next_;
  Tensor<T> log_probs_;
  Tensor<double> alignment_;
};

std::vector<double> row_of(const Tensor<double>& t, int r) {
  const auto row = t.row(r);
  return {row.begin(), row.end()};
}

void check_search_args(std::span<const int> source, int width, int max_len) {
  if (width < 1) throw ConfigError("beam width must be at least 1, got " + std::to_string(width));
  if (max_len < 1) throw ConfigError("max length must be at least 1, got " + std::to_string(max_len));
  if (source.empty()) throw ContractError("cannot decode an empty source");
}

}  // namespace

template <typename T>
Hypothesis greedy_decode(const Ensemble<T>& models, std::span<const int> source, int max_len) {
  check_search_args(source, 1, max_len);
  EnsembleStepper<T> stepper(models, source);
  Hypothesis hyp;
  int previous = Vocabulary::kBos;
  const std::vector<int> only{0};
  for (int t = 0; t < max_len; ++t) {
    stepper.step(std::span<const int>(&previous, 1));
    const auto row = stepper.log_probs().row(0);
    int best = 0;
    for (int k = 1; k < static_cast<int>(row.size()); ++k) {
      if (row[k] > row[best]) best = k;
    }
    hyp.tokens.push_back(best);
    hyp.log_prob += static_cast<double>(row[best]);
    hyp.alignment.push_back(row_of(stepper.alignment(), 0));
    if (best == Vocabulary::kEos) {
      hyp.finished = true;
      return hyp;
    }
    stepper.keep(only);
    previous = best;
  }
  hyp.forced = true;
  return hyp;
}

template <typename T>
std::vector<Hypothesis> beam_search(const Ensemble<T>& models, std::span<const int> source,
                                    const SearchOptions& options) {
  check_search_args(source, options.width, options.max_len);
  struct Node {
    int token;
    int parent;
    double score;
    std::vector<double> alignment;
  };
  struct Candidate {
    double score;
    int token;
    int row;
  };
  std::vector<Node> nodes;
  std::vector<int> live{-1};
  std::vector<double> live_scores{0.0};
  std::vector<std::pair<int, bool>> pool;  // node, forced
  std::vector<int> previous{Vocabulary::kBos};

  auto normalized = [&](int node) {
    if (!options.length_normalize) return nodes[node].score;
    int len = 0;
    for (int n = node; n >= 0; n = nodes[n].parent) ++len;
    return nodes[node].score / len;
  };

  EnsembleStepper<T> stepper(models, source);
  bool bounded = true;
  for (int t = 0; t < options.max_len; ++t) {
    stepper.step(previous);
    const Tensor<T>& lp = stepper.log_probs();
    const int vocab = lp.cols();
    std::vector<Candidate> cands;
    cands.reserve(live.size() * static_cast<std::size_t>(vocab));
    for (std::size_t r = 0; r < live.size(); ++r) {
      const auto row = lp.row(static_cast<int>(r));
      for (int k = 0; k < vocab; ++k) {
        cands.push_back({live_scores[r] + static_cast<double>(row[k]), k, static_cast<int>(r)});
      }
    }
    const std::size_t keep = std::min(cands.size(), static_cast<std::size_t>(options.width));
    auto better = [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.token != b.token) return a.token < b.token;
      return a.row < b.row;
    };
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      better);

    std::vector<int> next_live, rows, tokens;
    std::vector<double> next_scores;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = cands[i];
      nodes.push_back({c.token, live[c.row], c.score, row_of(stepper.alignment(), c.row)});
      const int id = static_cast<int>(nodes.size()) - 1;
      if (c.token == Vocabulary::kEos) {
        pool.emplace_back(id, false);
      } else {
        next_live.push_back(id);
        next_scores.push_back(c.score);
        rows.push_back(c.row);
        tokens.push_back(c.token);
      }
    }
    live = std::move(next_live);
    live_scores = std::move(next_scores);
    if (live.empty() || pool.size() >= static_cast<std::size_t>(options.width)) {
      bounded = false;
      break;
    }
    if (!options.length_normalize && !pool.empty()) {
      double best_pool = -std::numeric_limits<double>::infinity();
      for (const auto& [id, forced] : pool) best_pool = std::max(best_pool, nodes[id].score);
      if (*std::max_element(live_scores.begin(), live_scores.end()) < best_pool) {
        bounded = false;
        break;
      }
    }
    stepper.keep(rows);
    previous = std::move(tokens);
  }
  if (bounded) {
    for (int id : live) pool.emplace_back(id, true);
  }

  std::vector<Hypothesis> out;
  std::vector<double> keys;
  for (const auto& [id, forced] : pool) {
    Hypothesis h;
    for (int n = id; n >= 0; n = nodes[n].parent) {
      h.tokens.push_back(nodes[n].token);
      h.alignment.push_back(nodes[n].alignment);
    }
    std::reverse(h.tokens.begin(), h.tokens.end());
    std::reverse(h.alignment.begin(), h.alignment.end());
    h.log_prob = nodes[id].score;
    h.finished = !forced;
    h.forced = forced;
    out.push_back(std::move(h));
  }
  std::vector<std::size_t> order(out.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> rank(out.size());
  for (std::size_t i = 0; i < pool.size(); ++i) rank[i] = normalized(pool[i].first);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rank[a] > rank[b]; });
  if (order.size() > static_cast<std::size_t>(options.width)) order.resize(options.width);
  std::vector<Hypothesis> sorted;
  for (std::size_t i : order) sorted.push_back(std::move(out[i]));
  return sorted;
}

template <typename T>
std::vector<Translation> translate_lines(const Ensemble<T>& models, const TextPipeline& pipeline,
                                         std::span<const std::string> lines,
                                         const SearchOptions& options) {
  models.check_pipeline(pipeline);
  std::vector<Translation> out;
  out.reserve(lines.size());
  for (const auto& line : lines) {
    Translation tr;
    tr.source_symbols = pipeline.source_symbols(line);
    const auto ids = pipeline.source_indices(line);
    SearchOptions opts = options;
    if (opts.max_len <= 0) {
      opts.max_len = default_max_len(pipeline.target_vocab.unit(),
                                     static_cast<int>(tr.source_symbols.size()));
    }
    tr.source_symbols.push_back(Vocabulary::reserved_symbols()[Vocabulary::kEos]);
    if (opts.width == 1) {
      tr.best = greedy_decode(models, ids, opts.max_len);
    } else {
      tr.best = beam_search(models, ids, opts).front();
    }
    tr.text = pipeline.detokenize(tr.best.tokens);
    out.push_back(std::move(tr));
  }
  return out;
}

std::string alignment_tsv(std::span<const std::string> source_symbols,
                          const std::vector<std::vector<double>>& weights) {
  std::string out;
  for (std::size_t i = 0; i < source_symbols.size(); ++i) {
    if (i) out += '\t';
    out += source_symbols[i];
  }
  out += '\n';
  char buf[32];
  for (const auto& row : weights) {
    if (row.size() != source_symbols.size()) {
      throw DimensionError("alignment row has " + std::to_string(row.size()) + " weights for " +
                           std::to_string(source_symbols.size()) + " source symbols");
    }
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.10g", row[i]);
      if (i) out += '\t';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

#define CHARNMT_INSTANTIATE(T)                                                                  \
  template class Ensemble<T>;                                                                   \
  template Tensor<T> ensemble_log_probs<T>(std::span<const Tensor<T>>);                         \
  template Hypothesis greedy_decode<T>(const Ensemble<T>&, std::span<const int>, int);          \
  template std::vector<Hypothesis> beam_search<T>(const Ensemble<T>&, std::span<const int>,     \
                                                  const SearchOptions&);                        \
  template std::vector<Translation> translate_lines<T>(const Ensemble<T>&, const TextPipeline&, \
                                                       std::span<const std::string>,           \
                                                       const SearchOptions&);

CHARNMT_INSTANTIATE(float)
CHARNMT_INSTANTIATE(double)

#undef CHARNMT_INSTANTIATE

}  // namespace charnmt
