// charnmt command-line driver.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "charnmt/config.hpp"
#include "charnmt/decode.hpp"
#include "charnmt/errors.hpp"
#include "charnmt/io.hpp"
#include "charnmt/metrics.hpp"
#include "charnmt/pipeline.hpp"
#include "charnmt/textpipe.hpp"
#include "charnmt/trainer.hpp"

namespace fs = std::filesystem;
using namespace charnmt;

namespace {

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw PathError(std::string(what) + " not found: " + path);
}

// ---------------------------------------------------------------- learn-bpe / build-vocab

struct LearnBpeArgs {
  std::string input, output;
  int merges = 0;
};

int learn_bpe_cmd(const LearnBpeArgs& a) {
  require_file(a.input, "input");
  const auto table = learn_bpe(read_lines(a.input), a.merges);
  table.save(a.output);
  std::printf("learned %zu merges -> %s\n", table.size(), a.output.c_str());
  return 0;
}

struct BuildVocabArgs {
  std::string input, output, unit = "subword", merges;
  int max_size = 0;
};

int build_vocab_cmd(const BuildVocabArgs& a) {
  require_file(a.input, "input");
  const Unit unit = parse_unit(a.unit);
  auto lines = read_lines(a.input);
  if (!a.merges.empty()) {
    if (unit != Unit::subword) throw UsageError("--merges applies to subword vocabularies only");
    require_file(a.merges, "merges");
    const auto table = MergeTable::load(a.merges);
    for (auto& line : lines) line = join(apply_bpe(split_whitespace(line), table), " ");
  }
  const auto vocab = build_vocab(lines, unit, a.max_size);
  vocab.save(a.output);
  std::printf("%d symbols (%s) -> %s\n", vocab.size(), unit_name(unit).c_str(), a.output.c_str());
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  bool resume = false;
};

int train_cmd(const TrainArgs& a) {
  require_file(a.config, "config");
  RunConfig rc = RunConfig::load(a.config);
  rc.apply_overrides(a.overrides);
  const auto summary = run_training(rc, a.resume, [](const std::string& line) {
    std::fputs(line.c_str(), stdout);
    std::fflush(stdout);
  });
  std::printf("trained to step %ld, last loss %.6f", summary.steps, summary.last_loss);
  if (summary.progress.best_step >= 0) {
    std::printf(", best dev BLEU %.4f at step %ld", summary.progress.best_bleu,
                summary.progress.best_step);
  }
  std::printf("\n");
  return 0;
}

// ---------------------------------------------------------------- translate / align

struct TranslateArgs {
  std::string model, input, output, dump_align, decoder;
  std::vector<std::string> ensemble;
  int beam = 1;
  int max_len = 0;
  bool normalize = false;
};

template <typename T>
Ensemble<T> load_ensemble(const std::vector<std::string>& paths, const std::string& decoder) {
  std::vector<ModelHandle<T>> members;
  for (const auto& p : paths) {
    auto handle = load_model<T>(p);
    if (!decoder.empty() && parse_decoder(decoder) != handle.config.decoder) {
      throw ConfigError("conflict: checkpoint " + p + " holds a " + decoder_name(handle.config.decoder) +
                        " decoder, --decoder asks for " + decoder);
    }
    members.push_back(std::move(handle));
  }
  return Ensemble<T>(std::move(members));
}

std::string blocks(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += '\n';
    out += parts[i];
  }
  return out;
}

template <typename T>
int translate_with(const TranslateArgs& a, const std::vector<std::string>& paths) {
  const auto models = load_ensemble<T>(paths, a.decoder);
  const TextPipeline pipeline = load_checkpoint_pipeline(paths.front());
  SearchOptions opts;
  opts.width = a.beam;
  opts.max_len = a.max_len;
  opts.length_normalize = a.normalize;
  const auto lines = read_lines(a.input);
  const auto out = translate_lines(models, pipeline, lines, opts);
  std::vector<std::string> texts;
  std::vector<std::string> aligns;
  long forced = 0;
  for (const auto& tr : out) {
    texts.push_back(tr.text);
    forced += tr.best.forced;
    if (!a.dump_align.empty()) aligns.push_back(alignment_tsv(tr.source_symbols, tr.best.alignment));
  }
  write_lines_atomic(a.output, texts);
  if (!a.dump_align.empty()) write_file_atomic(a.dump_align, blocks(aligns));
  std::printf("translated %zu lines with %zu model(s), beam %d", out.size(), models.size(), a.beam);
  if (forced) std::printf(", %ld cut off at the length bound", forced);
  std::printf("\n");
  return 0;
}

int translate_cmd(const TranslateArgs& a) {
  std::vector<std::string> paths{a.model};
  paths.insert(paths.end(), a.ensemble.begin(), a.ensemble.end());
  for (const auto& p : paths) require_file(p, "checkpoint");
  require_file(a.input, "input");
  if (a.beam < 1) throw UsageError("--beam must be at least 1");
  if (checkpoint_precision(paths.front()) == Precision::wide) return translate_with<double>(a, paths);
  return translate_with<float>(a, paths);
}

struct AlignArgs {
  std::string model, src, tgt, output;
};

template <typename T>
int align_with(const AlignArgs& a) {
  const auto handle = load_model<T>(a.model);
  const TextPipeline pipeline = load_checkpoint_pipeline(a.model);
  auto [src, tgt] = read_parallel(a.src, a.tgt);
  std::vector<std::string> parts;
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto symbols = pipeline.source_symbols(src[i]);
    symbols.push_back(Vocabulary::reserved_symbols()[Vocabulary::kEos]);
    const auto score = sequence_log_prob(handle.params, handle.config, pipeline.source_indices(src[i]),
                                         pipeline.target_indices(tgt[i]));
    parts.push_back(alignment_tsv(symbols, score.alignment));
  }
  write_file_atomic(a.output, blocks(parts));
  std::printf("wrote %zu alignment matrices -> %s\n", parts.size(), a.output.c_str());
  return 0;
}

int align_cmd(const AlignArgs& a) {
  require_file(a.model, "checkpoint");
  require_file(a.src, "source");
  require_file(a.tgt, "target");
  if (checkpoint_precision(a.model) == Precision::wide) return align_with<double>(a);
  return align_with<float>(a);
}

// ---------------------------------------------------------------- evaluate / word-nll

struct EvaluateArgs {
  std::string hyp, ref, src, buckets = "1-10,11-20,21-30,31-40,41-50,51-", output;
};

int evaluate_cmd(const EvaluateArgs& a) {
  require_file(a.hyp, "hypotheses");
  require_file(a.ref, "references");
  const auto hyps = read_lines(a.hyp);
  const auto refs = read_lines(a.ref);
  std::printf("%s\n", bleu(hyps, refs).line().c_str());
  if (a.src.empty()) return 0;
  require_file(a.src, "sources");
  const auto buckets = parse_buckets(a.buckets);
  const auto rows = bleu_by_source_length(hyps, refs, read_lines(a.src), buckets);
  const std::string tsv = bucket_tsv(rows);
  if (a.output.empty()) {
    std::fputs(tsv.c_str(), stdout);
  } else {
    write_file_atomic(a.output, tsv);
  }
  return 0;
}

struct WordNllArgs {
  std::string model_a, model_b, src, tgt, train_tgt, buckets, output;
};

template <typename T>
std::vector<std::vector<double>> word_scores(const std::string& model, const std::vector<std::string>& src,
                                             const std::vector<std::string>& tgt, std::uint64_t& source_fp) {
  const auto handle = load_model<T>(model);
  const TextPipeline pipeline = load_checkpoint_pipeline(model);
  source_fp = pipeline.source_vocab.fingerprint();
  return word_nll(handle.params, handle.config, pipeline, src, tgt);
}

std::vector<std::vector<double>> word_scores_any(const std::string& model, const std::vector<std::string>& src,
                                                 const std::vector<std::string>& tgt, std::uint64_t& source_fp) {
  if (checkpoint_precision(model) == Precision::wide) return word_scores<double>(model, src, tgt, source_fp);
  return word_scores<float>(model, src, tgt, source_fp);
}

int word_nll_cmd(const WordNllArgs& a) {
  require_file(a.model_a, "checkpoint");
  require_file(a.model_b, "checkpoint");
  require_file(a.src, "source");
  require_file(a.tgt, "target");
  require_file(a.train_tgt, "training target");
  auto [src, tgt] = read_parallel(a.src, a.tgt);
  std::uint64_t fp_a = 0, fp_b = 0;
  const auto nll_a = word_scores_any(a.model_a, src, tgt, fp_a);
  const auto nll_b = word_scores_any(a.model_b, src, tgt, fp_b);
  if (fp_a != fp_b) throw ConsistencyError("the two models use different source vocabularies");
  const auto freq = word_frequencies(read_lines(a.train_tgt));
  const auto buckets = a.buckets.empty() ? std::vector<Bucket>{} : parse_buckets(a.buckets);
  const std::string tsv = bucket_tsv(word_nll_by_frequency(nll_a, nll_b, tgt, freq, buckets));
  if (a.output.empty()) {
    std::fputs(tsv.c_str(), stdout);
  } else {
    write_file_atomic(a.output, tsv);
  }
  return 0;
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UsageError*>(&e)) return 2;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Character-level neural machine translation toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  LearnBpeArgs bpe;
  auto* c_bpe = app.add_subcommand("learn-bpe", "Learn byte-pair merges from a text file");
  c_bpe->add_option("--input", bpe.input, "Training text")->required();
  c_bpe->add_option("--merges", bpe.merges, "Number of merges")->required()->check(CLI::NonNegativeNumber);
  c_bpe->add_option("--output", bpe.output, "Merge table to write")->required();

  BuildVocabArgs voc;
  auto* c_voc = app.add_subcommand("build-vocab", "Build a symbol vocabulary");
  c_voc->add_option("--input", voc.input, "Text to count")->required();
  c_voc->add_option("--unit", voc.unit, "subword or char")->check(CLI::IsMember({"subword", "char"}));
  c_voc->add_option("--max-size", voc.max_size, "Vocabulary size including reserved symbols")->required();
  c_voc->add_option("--merges", voc.merges, "Segment the input with this merge table first");
  c_voc->add_option("--output", voc.output, "Vocabulary to write")->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a model");
  c_train->add_option("--config", tr.config, "key = value configuration file")->required();
  c_train->add_flag("--resume", tr.resume, "Continue from <output_dir>/latest");
  c_train->add_option("overrides", tr.overrides, "key=value overrides");

  TranslateArgs tl;
  auto* c_tl = app.add_subcommand("translate", "Translate a file");
  c_tl->add_option("--model", tl.model, "Checkpoint directory")->required();
  c_tl->add_option("--ensemble", tl.ensemble, "Additional checkpoints to average with");
  c_tl->add_option("--input", tl.input, "Source lines")->required();
  c_tl->add_option("--output", tl.output, "Translations to write")->required();
  c_tl->add_option("--beam", tl.beam, "Beam width (1 = greedy)");
  c_tl->add_option("--max-len", tl.max_len, "Output length bound (default from source length)");
  c_tl->add_flag("--normalize", tl.normalize, "Rank hypotheses by per-symbol log-probability");
  c_tl->add_option("--dump-align", tl.dump_align, "Write attention matrices as TSV blocks");
  c_tl->add_option("--decoder", tl.decoder, "Require this decoder kind")->check(CLI::IsMember({"base", "biscale"}));

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Score translations with BLEU");
  c_ev->add_option("--hyp", ev.hyp, "Hypotheses")->required();
  c_ev->add_option("--ref", ev.ref, "References")->required();
  c_ev->add_option("--src", ev.src, "Sources, for BLEU by source length");
  c_ev->add_option("--buckets", ev.buckets, "Source length buckets, e.g. 1-10,11-20,21-");
  c_ev->add_option("--output", ev.output, "Write the bucket table here instead of stdout");

  AlignArgs al;
  auto* c_al = app.add_subcommand("align", "Export teacher-forced attention matrices");
  c_al->add_option("--model", al.model, "Checkpoint directory")->required();
  c_al->add_option("--src", al.src, "Source lines")->required();
  c_al->add_option("--tgt", al.tgt, "Target lines")->required();
  c_al->add_option("--output", al.output, "TSV blocks to write")->required();

  WordNllArgs wn;
  auto* c_wn = app.add_subcommand("word-nll", "Per-word NLL difference of two models by training frequency");
  c_wn->add_option("--model-a", wn.model_a, "First checkpoint")->required();
  c_wn->add_option("--model-b", wn.model_b, "Second checkpoint")->required();
  c_wn->add_option("--src", wn.src, "Test sources")->required();
  c_wn->add_option("--tgt", wn.tgt, "Test references")->required();
  c_wn->add_option("--train-tgt", wn.train_tgt, "Training targets for word counts")->required();
  c_wn->add_option("--buckets", wn.buckets, "Frequency buckets (default powers of two)");
  c_wn->add_option("--output", wn.output, "Write the table here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const auto parsed = app.get_subcommands();
    const std::string where = parsed.empty() ? "" : " " + parsed.back()->get_name();
    std::cerr << "charnmt: error: " << e.what() << " (see charnmt" << where << " --help)\n";
    return 2;
  }

  try {
    if (*c_bpe) return learn_bpe_cmd(bpe);
    if (*c_voc) return build_vocab_cmd(voc);
    if (*c_train) return train_cmd(tr);
    if (*c_tl) return translate_cmd(tl);
    if (*c_ev) return evaluate_cmd(ev);
    if (*c_al) return align_cmd(al);
    if (*c_wn) return word_nll_cmd(wn);
  } catch (const Error& e) {
    std::cerr << "charnmt: error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "charnmt: error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
