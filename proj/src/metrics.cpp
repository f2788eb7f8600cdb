#include "charnmt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "charnmt/errors.hpp"
#include "charnmt/io.hpp"

namespace charnmt {
namespace {

struct NgramStats {
  std::array<long, 4> matches{};
  std::array<long, 4> totals{};
  long hyp_len = 0;
  long ref_len = 0;
};

void accumulate(NgramStats& s, const std::vector<std::string>& hyp,
                const std::vector<std::string>& ref) {
  s.hyp_len += static_cast<long>(hyp.size());
  s.ref_len += static_cast<long>(ref.size());
  for (int n = 1; n <= 4; ++n) {
    std::map<std::vector<std::string>, long> ref_counts;
    for (std::size_t i = 0; i + n <= ref.size(); ++i) {
      ++ref_counts[std::vector<std::string>(ref.begin() + i, ref.begin() + i + n)];
    }
    std::map<std::vector<std::string>, long> hyp_counts;
    for (std::size_t i = 0; i + n <= hyp.size(); ++i) {
      ++hyp_counts[std::vector<std::string>(hyp.begin() + i, hyp.begin() + i + n)];
    }
    for (const auto& [gram, c] : hyp_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) s.matches[n - 1] += std::min(c, it->second);
      s.totals[n - 1] += c;
    }
  }
}

BleuReport finish(const NgramStats& s) {
  BleuReport r;
  r.matches = s.matches;
  r.totals = s.totals;
  r.hyp_len = s.hyp_len;
  r.ref_len = s.ref_len;
  bool any_zero = false;
  double log_sum = 0;
  for (int n = 0; n < 4; ++n) {
    r.precisions[n] = s.totals[n] ? static_cast<double>(s.matches[n]) / s.totals[n] : 0.0;
    if (r.precisions[n] <= 0) {
      any_zero = true;
    } else {
      log_sum += std::log(r.precisions[n]);
    }
  }
  if (s.hyp_len == 0) {
    r.brevity_penalty = 0.0;
  } else if (s.hyp_len < s.ref_len) {
    r.brevity_penalty = std::exp(1.0 - static_cast<double>(s.ref_len) / s.hyp_len);
  } else {
    r.brevity_penalty = 1.0;
  }
  r.bleu = any_zero ? 0.0 : r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

void require_aligned(std::size_t hyps, std::size_t refs, const char* what) {
  if (hyps != refs) {
    throw AlignmentError(std::string(what) + ": " + std::to_string(hyps) + " hypotheses vs " +
                         std::to_string(refs) + " references");
  }
}

}  // namespace

std::string BleuReport::line() const {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "BLEU = %.2f, %.1f/%.1f/%.1f/%.1f (BP=%.3f, ratio=%.3f, hyp_len=%ld, ref_len=%ld)",
                100 * bleu, 100 * precisions[0], 100 * precisions[1], 100 * precisions[2],
                100 * precisions[3], brevity_penalty, ratio(), hyp_len, ref_len);
  return buf;
}

BleuReport bleu(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  require_aligned(hypotheses.size(), references.size(), "bleu");
  NgramStats s;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    accumulate(s, split_whitespace(hypotheses[i]), split_whitespace(references[i]));
  }
  return finish(s);
}

std::string Bucket::label() const {
  if (hi < 0) return std::to_string(lo) + "-";
  if (hi == lo) return std::to_string(lo);
  return std::to_string(lo) + "-" + std::to_string(hi);
}

std::vector<Bucket> parse_buckets(std::string_view spec) {
  std::vector<Bucket> out;
  std::size_t start = 0;
  while (start <= spec.size()) {
    auto end = spec.find(',', start);
    if (end == std::string_view::npos) end = spec.size();
    const std::string item(spec.substr(start, end - start));
    start = end + 1;
    if (item.empty()) throw UsageError("empty bucket in '" + std::string(spec) + "'");
    Bucket b;
    try {
      const auto dash = item.find('-');
      std::size_t used = 0;
      if (dash == std::string::npos) {
        b.lo = b.hi = std::stol(item, &used);
        if (used != item.size()) throw std::invalid_argument(item);
      } else {
        b.lo = std::stol(item.substr(0, dash), &used);
        if (used != dash) throw std::invalid_argument(item);
        const std::string rest = item.substr(dash + 1);
        if (!rest.empty()) {
          b.hi = std::stol(rest, &used);
          if (used != rest.size()) throw std::invalid_argument(item);
        }
      }
    } catch (const std::exception&) {
      throw UsageError("bad bucket '" + item + "' (expected lo-hi, n or lo-)");
    }
    if (b.lo < 0 || (b.hi >= 0 && b.hi < b.lo)) throw UsageError("bad bucket range '" + item + "'");
    out.push_back(b);
  }
  return out;
}

std::vector<BucketBleu> bleu_by_source_length(std::span<const std::string> hypotheses,
                                              std::span<const std::string> references,
                                              std::span<const std::string> sources,
                                              std::span<const Bucket> buckets) {
  require_aligned(hypotheses.size(), references.size(), "bleu_by_source_length");
  require_aligned(hypotheses.size(), sources.size(), "bleu_by_source_length sources");
  std::vector<BucketBleu> out;
  for (const Bucket& b : buckets) {
    NgramStats s;
    long count = 0;
    for (std::size_t i = 0; i < sources.size(); ++i) {
      if (!b.contains(static_cast<long>(split_whitespace(sources[i]).size()))) continue;
      accumulate(s, split_whitespace(hypotheses[i]), split_whitespace(references[i]));
      ++count;
    }
    if (count) out.push_back({b, count, finish(s)});
  }
  return out;
}

template <typename T>
std::vector<std::vector<double>> word_nll(const ParameterStore<T>& params,
                                          const ModelConfig& config, const TextPipeline& pipeline,
                                          std::span<const std::string> sources,
                                          std::span<const std::string> targets) {
  require_aligned(sources.size(), targets.size(), "word_nll");
  const bool chars = pipeline.target_vocab.unit() == Unit::character;
  const std::string marker = pipeline.target_merges ? pipeline.target_merges->marker()
                                                    : std::string(MergeTable::kDefaultMarker);
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto symbols = pipeline.target_symbols(targets[i]);
    const auto score = sequence_log_prob(params, config, pipeline.source_indices(sources[i]),
                                         pipeline.target_indices(targets[i]));
    const auto& lp = score.per_position;  // symbols then EOS
    std::vector<double> words;
    double current = 0;
    bool open = false;
    auto fail = [&](const std::string& why) {
      throw AlignmentError("cannot split line " + std::to_string(i + 1) + " into words (" + why +
                           "): " + targets[i]);
    };
    for (std::size_t k = 0; k < symbols.size(); ++k) {
      const std::string& s = symbols[k];
      if (chars) {
        if (s == " ") {
          if (!open) fail("empty word");
          words.push_back(current - lp[k]);
          current = 0;
          open = false;
        } else {
          current -= lp[k];
          open = true;
        }
      } else {
        current -= lp[k];
        open = true;
        const bool continues = s.size() > marker.size() &&
                               s.compare(s.size() - marker.size(), marker.size(), marker) == 0;
        if (!continues) {
          words.push_back(current);
          current = 0;
          open = false;
        }
      }
    }
    if (chars) {
      if (!open && !symbols.empty()) fail("trailing space");
      if (open) words.push_back(current - lp[symbols.size()]);
    } else if (open) {
      fail("dangling continuation marker");
    }
    if (words.size() != split_whitespace(targets[i]).size()) fail("word count mismatch");
    out.push_back(std::move(words));
  }
  return out;
}

std::map<std::string, long> word_frequencies(std::span<const std::string> lines) {
  std::map<std::string, long> counts;
  for (const auto& line : lines) {
    for (const auto& w : split_whitespace(line)) ++counts[w];
  }
  return counts;
}

Bucket frequency_bucket(long count) {
  if (count <= 0) return {0, 0};
  long lo = 1;
  while (lo * 2 <= count) lo *= 2;
  return {lo, 2 * lo - 1};
}

std::vector<FrequencyDiff> word_nll_by_frequency(const std::vector<std::vector<double>>& nll_a,
                                                 const std::vector<std::vector<double>>& nll_b,
                                                 std::span<const std::string> targets,
                                                 const std::map<std::string, long>& frequencies,
                                                 std::span<const Bucket> buckets_given) {
  require_aligned(nll_a.size(), nll_b.size(), "word_nll_by_frequency");
  require_aligned(nll_a.size(), targets.size(), "word_nll_by_frequency targets");
  std::map<long, FrequencyDiff> buckets;  // keyed by bucket order
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto words = split_whitespace(targets[i]);
    if (nll_a[i].size() != words.size() || nll_b[i].size() != words.size()) {
      throw AlignmentError("line " + std::to_string(i + 1) + ": word scores do not match " +
                           std::to_string(words.size()) + " reference words");
    }
    for (std::size_t w = 0; w < words.size(); ++w) {
      auto it = frequencies.find(words[w]);
      const long count = it == frequencies.end() ? 0 : it->second;
      Bucket b = frequency_bucket(count);
      long key = b.lo;
      if (!buckets_given.empty()) {
        auto hit = std::find_if(buckets_given.begin(), buckets_given.end(),
                                [&](const Bucket& g) { return g.contains(count); });
        if (hit == buckets_given.end()) continue;
        b = *hit;
        key = hit - buckets_given.begin();
      }
      FrequencyDiff& d = buckets[key];
      d.bucket = b;
      d.count += 1;
      d.mean_diff += nll_a[i][w] - nll_b[i][w];
    }
  }
  std::vector<FrequencyDiff> out;
  for (auto& [lo, d] : buckets) {
    d.mean_diff /= static_cast<double>(d.count);
    out.push_back(d);
  }
  return out;
}

std::string bucket_tsv(const std::vector<BucketBleu>& rows) {
  std::string out;
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f", r.report.bleu);
    out += r.bucket.label() + "\t" + std::to_string(r.count) + "\t" + buf + "\n";
  }
  return out;
}

std::string bucket_tsv(const std::vector<FrequencyDiff>& rows) {
  std::string out;
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f", r.mean_diff);
    out += r.bucket.label() + "\t" + std::to_string(r.count) + "\t" + buf + "\n";
  }
  return out;
}

template std::vector<std::vector<double>> word_nll<float>(const ParameterStore<float>&,
                                                          const ModelConfig&, const TextPipeline&,
                                                          std::span<const std::string>,
                                                          std::span<const std::string>);
template std::vector<std::vector<double>> word_nll<double>(const ParameterStore<double>&,
                                                           const ModelConfig&, const TextPipeline&,
                                                           std::span<const std::string>,
                                                           std::span<const std::string>);

}  // namespace charnmt
