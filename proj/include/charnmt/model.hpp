#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "charnmt/graph.hpp"
#include "charnmt/tensor.hpp"
#include "charnmt/textpipe.hpp"

namespace charnmt {

enum class DecoderKind { base, biscale };

// Which decoder layer(s) feed the alignment scorer. For the base decoder the
// slower layer is the top GRU and the faster layer the bottom one.
enum class AttentionQuery { slower, faster, concat };

DecoderKind parse_decoder(std::string_view text);
std::string decoder_name(DecoderKind kind);
AttentionQuery parse_query(std::string_view text);
std::string query_name(AttentionQuery query);

struct ModelConfig {
  DecoderKind decoder = DecoderKind::biscale;
  AttentionQuery query = AttentionQuery::slower;
  int source_vocab = 0;
  int target_vocab = 0;
  int embed_dim = 64;
  int encoder_dim = 64;
  int decoder_dim = 128;
  // Hidden width of the alignment scorer; 0 means decoder_dim.
  int attention_dim = 0;

  // Bi-scale decoders align on the slower layer, base decoders on both layers.
  static AttentionQuery default_query(DecoderKind kind) {
    return kind == DecoderKind::biscale ? AttentionQuery::slower : AttentionQuery::concat;
  }

  void validate() const;
  int context_dim() const { return 2 * encoder_dim; }
  int attention_width() const { return attention_dim > 0 ? attention_dim : decoder_dim; }
  int query_dim() const { return query == AttentionQuery::concat ? 2 * decoder_dim : decoder_dim; }
  int output_state_dim() const {
    return decoder == DecoderKind::biscale ? 2 * decoder_dim : decoder_dim;
  }
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
class ParameterStore {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  void add(const std::string& name, Tensor<T> value);
  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  const Tensor<T>& at(const std::string& name) const;
  Tensor<T>& at(const std::string& name);
  std::size_t size() const { return tensors_.size(); }
  std::size_t value_count() const;
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& [name, t] : tensors_) out.add(name, t.template cast<U>());
    return out;
  }

  bool operator==(const ParameterStore& other) const { return tensors_ == other.tensors_; }

 private:
  Map tensors_;
};

// Name and shape of every parameter the configuration needs.
std::map<std::string, Shape> parameter_shapes(const ModelConfig& config);

// Orthogonal square recurrent blocks, Glorot-uniform elsewhere, zero biases.
template <typename T>
ParameterStore<T> init_parameters(const ModelConfig& config, std::uint64_t seed);

template <typename T>
ParameterStore<T> zero_parameters(const ModelConfig& config);

// Checks names, shapes and finiteness against the configuration.
template <typename T>
void validate_parameters(const ParameterStore<T>& params, const ModelConfig& config);

// Binds every parameter of a store into a graph.
template <typename T>
class ModelGraph {
 public:
  ModelGraph(Graph<T>& graph, const ParameterStore<T>& params, const ModelConfig& config);

  Graph<T>& graph() { return graph_; }
  const ModelConfig& config() const { return config_; }
  Var param(const std::string& name) const;
  Var zeros(int rows, int cols);

 private:
  Graph<T>& graph_;
  const ModelConfig& config_;
  std::map<std::string, Var> vars_;
};

// Encoder annotations for a padded batch, position-major: row t * batch + b
// holds z_t = [forward; backward] of example b.
struct ContextSet {
  Var states;
  Var keys;            // states projected by the alignment scorer
  Var first_backward;  // backward state at the first source position
  int positions = 0;
  int batch = 0;
  std::vector<int> lengths;
};

struct AttentionOutput {
  Var context;  // batch x 2*encoder_dim
  Var weights;  // batch x positions
};

struct BaseDecoderState {
  Var lower;  // h(1)
  Var upper;  // h(2)
};

struct BiScaleState {
  Var faster;            // h1
  Var slower;            // h2
  Var faster_carry;      // (1 - g1) * h1
  Var slower_exposed;    // g1 * h2
  Var slower_carry;      // (1 - g2) * h2
  Var fast_gate;         // g1; invalid for the initial state
  Var slow_gate;         // g2; invalid for the initial state
  Var slower_candidate;  // candidate h2; invalid for the initial state
};

using DecoderState = std::variant<BaseDecoderState, BiScaleState>;

// source: batch x positions row-major with PAD after each length.
template <typename T>
ContextSet encode(ModelGraph<T>& mg, std::span<const int> source, int batch,
                  std::span<const int> lengths);

template <typename T>
Var gru_cell(ModelGraph<T>& mg, Var input, Var previous, const std::string& prefix);

template <typename T>
Var embed_target(ModelGraph<T>& mg, std::span<const int> tokens);

template <typename T>
AttentionOutput attend(ModelGraph<T>& mg, Var previous_embedding, Var query_state,
                       const ContextSet& context);

template <typename T>
DecoderState initial_state(ModelGraph<T>& mg, const ContextSet& context);

template <typename T>
Var attention_query(ModelGraph<T>& mg, const DecoderState& state);

// [h1; h2] for the bi-scale decoder, the top layer for the base decoder.
template <typename T>
Var decoder_output(ModelGraph<T>& mg, const DecoderState& state);

template <typename T>
BaseDecoderState base_step(ModelGraph<T>& mg, Var previous_embedding,
                           const BaseDecoderState& state, Var context);

template <typename T>
BiScaleState biscale_step(ModelGraph<T>& mg, Var previous_embedding, const BiScaleState& state,
                          Var context);

template <typename T>
DecoderState decoder_step(ModelGraph<T>& mg, Var previous_embedding, const DecoderState& state,
                          Var context);

// Log-probabilities over the target vocabulary, batch x |V_y|.
template <typename T>
Var output_distribution(ModelGraph<T>& mg, Var previous_embedding, Var decoder_out, Var context);

struct TeacherForced {
  Var log_likelihood;  // scalar, summed over unmasked predictions
  int predictions = 0;
  std::vector<Var> step_log_probs;  // per decoding step, batch x |V_y|
  std::vector<Var> alignments;      // per decoding step, batch x positions
};

template <typename T>
TeacherForced teacher_forced(ModelGraph<T>& mg, const Batch& batch);

struct SequenceScore {
  double total = 0.0;
  std::vector<double> per_position;
  std::vector<std::vector<double>> alignment;  // target positions x source positions
};

// source ends with EOS; target is y_1 .. y_n (EOS-terminated, no BOS).
template <typename T>
SequenceScore sequence_log_prob(const ParameterStore<T>& params, const ModelConfig& config,
                                std::span<const int> source, std::span<const int> target);

// Decoder state of several hypotheses, one row each.
template <typename T>
struct PackedState {
  std::vector<Tensor<T>> parts;
  int rows() const { return parts.empty() ? 0 : parts.front().rows(); }
  PackedState select(std::span<const int> rows) const;
};

// Step-by-step inference for one source sentence; the encoder runs once.
template <typename T>
class IncrementalDecoder {
 public:
  IncrementalDecoder(const ParameterStore<T>& params, const ModelConfig& config,
                     std::span<const int> source);

  struct StepResult {
    Tensor<T> log_probs;  // rows x |V_y|
    Tensor<T> alignment;  // rows x positions
    PackedState<T> state;
  };

  PackedState<T> initial_state() const { return initial_; }
  StepResult step(std::span<const int> previous_tokens, const PackedState<T>& state) const;
  int source_length() const { return positions_; }
  const ModelConfig& config() const { return config_; }

 private:
  const ParameterStore<T>& params_;
  ModelConfig config_;
  int positions_ = 0;
  Tensor<T> states_;
  Tensor<T> keys_;
  PackedState<T> initial_;
};

}  // namespace charnmt
