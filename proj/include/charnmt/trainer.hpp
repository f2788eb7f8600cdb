#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "charnmt/config.hpp"
#include "charnmt/decode.hpp"
#include "charnmt/model.hpp"
#include "charnmt/pipeline.hpp"

namespace charnmt {

struct AdamConfig {
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  ModelConfig model;
  Unit target_unit = Unit::character;
  Precision precision = Precision::narrow;
  int batch_size = 128;
  double clip = 1.0;
  AdamConfig adam;
  long max_steps = 10000;
  long valid_interval = 1000;  // 0 disables validation
  long valid_sentences = 0;    // 0 means the whole dev set
  std::uint64_t seed = 1;
  LengthLimits limits;

  void validate() const;
  // Vocabulary sizes come from the vocabularies, everything else from the config.
  static TrainConfig from_run_config(const RunConfig& config, int source_vocab, int target_vocab);
};

template <typename T>
struct OptimizerState {
  ParameterStore<T> first;
  ParameterStore<T> second;
  long step = 0;

  static OptimizerState zeros_like(const ParameterStore<T>& params);
  bool operator==(const OptimizerState&) const = default;
};

// Mean negative log-likelihood per predicted (non-PAD) target token.
template <typename T>
double batch_nll(const ParameterStore<T>& params, const ModelConfig& config, const Batch& batch);

template <typename T>
struct LossAndGradients {
  double loss = 0.0;
  int tokens = 0;
  GradientMap<T> gradients;
};

template <typename T>
LossAndGradients<T> batch_nll_gradients(const ParameterStore<T>& params, const ModelConfig& config,
                                        const Batch& batch);

template <typename T>
double global_norm(const GradientMap<T>& gradients);

// Rescales to the threshold when the global L2 norm exceeds it; returns the
// norm before clipping.
template <typename T>
double clip_gradients(GradientMap<T>& gradients, double threshold);

template <typename T>
void adam_step(ParameterStore<T>& params, const GradientMap<T>& gradients, OptimizerState<T>& state,
               const AdamConfig& config);

struct TrainingProgress {
  long step = 0;
  long epoch = 0;
  long batch_in_epoch = 0;  // next batch to consume
  double best_bleu = -1.0;
  double best_nll = std::numeric_limits<double>::infinity();
  long best_step = -1;
  bool operator==(const TrainingProgress&) const = default;
};

template <typename T>
struct Checkpoint {
  RunConfig config;
  ModelConfig model;
  Unit target_unit = Unit::character;
  ParameterStore<T> params;
  std::optional<OptimizerState<T>> optimizer;
  TrainingProgress progress;
};

// Directory layout: manifest.json, tensors.bin and copies of the vocabulary
// and merge files referenced from the manifest. The directory is replaced
// atomically.
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint<T>& checkpoint,
                     const TextPipeline& pipeline);

// Tensors stored in the other precision are converted on load.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir);

Precision checkpoint_precision(const std::filesystem::path& dir);
TextPipeline load_checkpoint_pipeline(const std::filesystem::path& dir);

template <typename T>
ModelHandle<T> load_model(const std::filesystem::path& dir);

struct StepStats {
  double loss = 0.0;
  double grad_norm = 0.0;
  int tokens = 0;
};

struct Validation {
  double nll = 0.0;
  double bleu = 0.0;
};

template <typename T>
class Trainer {
 public:
  Trainer(TrainConfig config, TextPipeline pipeline, ParallelCorpus train,
          std::vector<std::string> dev_sources = {}, std::vector<std::string> dev_targets = {});

  // One update on the next batch.
  StepStats step();
  // Dev NLL per token and greedy-decoding BLEU on a parameter snapshot.
  Validation validate() const;

  const ParameterStore<T>& params() const { return params_; }
  ParameterStore<T>& mutable_params() { return params_; }
  const OptimizerState<T>& optimizer() const { return optimizer_; }
  const TrainingProgress& progress() const { return progress_; }
  TrainingProgress& mutable_progress() { return progress_; }
  const TrainConfig& config() const { return config_; }
  const TextPipeline& pipeline() const { return pipeline_; }

  Checkpoint<T> snapshot(const RunConfig& run_config) const;
  void restore(const Checkpoint<T>& checkpoint);

 private:
  const Batch& next_batch();
  void load_epoch(long epoch);

  TrainConfig config_;
  TextPipeline pipeline_;
  ParallelCorpus train_;
  std::vector<std::string> dev_sources_;
  std::vector<std::string> dev_targets_;
  ParameterStore<T> params_;
  OptimizerState<T> optimizer_;
  TrainingProgress progress_;
  long loaded_epoch_ = -1;
  std::vector<Batch> batches_;
};

struct TrainSummary {
  long steps = 0;
  double last_loss = 0.0;
  TrainingProgress progress;
};

// File-level driver: reads corpora and vocabularies named in the config,
// writes <output_dir>/latest, <output_dir>/best and <output_dir>/train.log.
// Resumes from <output_dir>/latest when `resume` is set.
TrainSummary run_training(const RunConfig& config, bool resume = false,
                          const std::function<void(const std::string&)>& report = {});

}  // namespace charnmt
