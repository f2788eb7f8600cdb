#include "charnmt/model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "charnmt/errors.hpp"

namespace charnmt {

DecoderKind parse_decoder(std::string_view text) {
  if (text == "base") return DecoderKind::base;
  if (text == "biscale" || text == "bi-scale") return DecoderKind::biscale;
  throw ConfigError("unknown decoder '" + std::string(text) + "' (expected base or biscale)");
}

std::string decoder_name(DecoderKind kind) {
  return kind == DecoderKind::base ? "base" : "biscale";
}

AttentionQuery parse_query(std::string_view text) {
  if (text == "slower") return AttentionQuery::slower;
  if (text == "faster") return AttentionQuery::faster;
  if (text == "concat") return AttentionQuery::concat;
  throw ConfigError("unknown attention query '" + std::string(text) +
                    "' (expected slower, faster or concat)");
}

std::string query_name(AttentionQuery query) {
  switch (query) {
    case AttentionQuery::slower: return "slower";
    case AttentionQuery::faster: return "faster";
    case AttentionQuery::concat: return "concat";
  }
  return "slower";
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be positive, got " + std::to_string(v));
  };
  positive(source_vocab, "source vocabulary size");
  positive(target_vocab, "target vocabulary size");
  positive(embed_dim, "embedding dimension");
  positive(encoder_dim, "encoder dimension");
  positive(decoder_dim, "decoder dimension");
  if (attention_dim < 0) throw ConfigError("attention dimension must be nonnegative");
}

// ---------------------------------------------------------------- parameters

template <typename T>
void ParameterStore<T>::add(const std::string& name, Tensor<T> value) {
  if (!tensors_.emplace(name, std::move(value)).second) {
    throw ContractError("parameter '" + name + "' already present");
  }
}

template <typename T>
const Tensor<T>& ParameterStore<T>::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw IntegrityError("missing parameter '" + name + "'");
  return it->second;
}

template <typename T>
Tensor<T>& ParameterStore<T>::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw IntegrityError("missing parameter '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t ParameterStore<T>::value_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.size();
  return n;
}

namespace {

void add_gru_shapes(std::map<std::string, Shape>& shapes, const std::string& prefix, int input,
                    int hidden) {
  shapes[prefix + ".W_rz"] = {input, 2 * hidden};
  shapes[prefix + ".U_rz"] = {hidden, 2 * hidden};
  shapes[prefix + ".b_rz"] = {2 * hidden};
  shapes[prefix + ".W_h"] = {input, hidden};
  shapes[prefix + ".U_h"] = {hidden, hidden};
  shapes[prefix + ".b_h"] = {hidden};
}

bool is_bias(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot != std::string::npos && name[dot + 1] == 'b';
}

bool is_recurrent(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot != std::string::npos && name.compare(dot + 1, 2, "U_") == 0;
}

template <typename T>
void fill_orthogonal_blocks(Tensor<T>& t, std::mt19937_64& rng) {
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
  const int n = t.rows();
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int block = 0; block < t.cols() / n; ++block) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) m(i, j) = normal(rng);
    }
    Eigen::HouseholderQR<Matrix> qr(m);
    Matrix q = qr.householderQ();
    // Sign fix keeps the distribution uniform over orthogonal matrices.
    Matrix r = qr.matrixQR().template triangularView<Eigen::Upper>();
    for (int j = 0; j < n; ++j) {
      if (r(j, j) < 0) q.col(j) *= -1.0;
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) t.at(i, block * n + j) = static_cast<T>(q(i, j));
    }
  }
}

}  // namespace

std::map<std::string, Shape> parameter_shapes(const ModelConfig& c) {
  c.validate();
  const int E = c.embed_dim;
  const int H = c.encoder_dim;
  const int D = c.decoder_dim;
  const int C = c.context_dim();
  const int A = c.attention_width();
  std::map<std::string, Shape> shapes;
  shapes["src_embed"] = {c.source_vocab, E};
  shapes["tgt_embed"] = {c.target_vocab, E};
  add_gru_shapes(shapes, "enc_fwd", E, H);
  add_gru_shapes(shapes, "enc_bwd", E, H);
  shapes["att.W_key"] = {C, A};
  shapes["att.W_query"] = {E + c.query_dim(), A};
  shapes["att.b"] = {A};
  shapes["att.v"] = {A, 1};
  shapes["init.W"] = {H, D};
  shapes["init.b"] = {D};
  if (c.decoder == DecoderKind::base) {
    add_gru_shapes(shapes, "dec1", E + C, D);
    add_gru_shapes(shapes, "dec2", D, D);
  } else {
    shapes["bs.W_h1"] = {E + 2 * D + C, D};
    shapes["bs.b_h1"] = {D};
    shapes["bs.W_g1"] = {E + 2 * D + C, D};
    shapes["bs.b_g1"] = {D};
    shapes["bs.W_h2"] = {2 * D + C, D};
    shapes["bs.b_h2"] = {D};
    shapes["bs.W_g2"] = {2 * D + C, D};
    shapes["bs.b_g2"] = {D};
  }
  shapes["out.W_hid"] = {E + c.output_state_dim() + C, D};
  shapes["out.b_hid"] = {D};
  shapes["out.W"] = {D, c.target_vocab};
  shapes["out.b"] = {c.target_vocab};
  return shapes;
}

template <typename T>
ParameterStore<T> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterStore<T> store;
  for (const auto& [name, shape] : parameter_shapes(config)) {
    Tensor<T> t(shape);
    if (is_recurrent(name)) {
      fill_orthogonal_blocks(t, rng);
    } else if (!is_bias(name)) {
      const double limit = std::sqrt(6.0 / (t.rows() + t.cols()));
      std::uniform_real_distribution<double> uniform(-limit, limit);
      for (T& v : t.values()) v = static_cast<T>(uniform(rng));
    }
    store.add(name, std::move(t));
  }
  return store;
}

template <typename T>
ParameterStore<T> zero_parameters(const ModelConfig& config) {
  ParameterStore<T> store;
  for (const auto& [name, shape] : parameter_shapes(config)) store.add(name, Tensor<T>(shape));
  return store;
}

template <typename T>
void validate_parameters(const ParameterStore<T>& params, const ModelConfig& config) {
  const auto shapes = parameter_shapes(config);
  for (const auto& [name, shape] : shapes) {
    const Tensor<T>& t = params.at(name);
    if (t.shape() != shape) {
      throw IntegrityError("parameter '" + name + "' has shape " + shape_string(t.shape()) +
                           ", configuration needs " + shape_string(shape));
    }
    if (!t.all_finite()) throw IntegrityError("parameter '" + name + "' is not finite");
  }
  for (const auto& [name, t] : params) {
    if (!shapes.count(name)) throw IntegrityError("unexpected parameter '" + name + "'");
  }
}

// ---------------------------------------------------------------- graph binding

template <typename T>
ModelGraph<T>::ModelGraph(Graph<T>& graph, const ParameterStore<T>& params,
                          const ModelConfig& config)
    : graph_(graph), config_(config) {
  for (const auto& [name, shape] : parameter_shapes(config)) {
    vars_[name] = graph_.parameter(name, params.at(name));
  }
}

template <typename T>
Var ModelGraph<T>::param(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("no parameter '" + name + "' in this model");
  return it->second;
}

template <typename T>
Var ModelGraph<T>::zeros(int rows, int cols) {
  return graph_.constant(Tensor<T>({rows, cols}));
}

// ---------------------------------------------------------------- encoder

template <typename T>
Var gru_cell(ModelGraph<T>& mg, Var input, Var previous, const std::string& prefix) {
  Graph<T>& g = mg.graph();
  const int hidden = g.value(previous).cols();
  if (g.value(mg.param(prefix + ".U_h")).rows() != hidden ||
      g.value(input).cols() != g.value(mg.param(prefix + ".W_h")).rows() ||
      g.value(input).rows() != g.value(previous).rows()) {
    throw DimensionError("gru_cell " + prefix + ": input " + shape_string(g.value(input).shape()) +
                         " and state " + shape_string(g.value(previous).shape()) +
                         " do not match the cell weights");
  }
  Var gates = g.sigmoid(g.add(g.affine(input, mg.param(prefix + ".W_rz"), mg.param(prefix + ".b_rz")),
                              g.matmul(previous, mg.param(prefix + ".U_rz"))));
  Var reset = g.slice_cols(gates, 0, hidden);
  Var update = g.slice_cols(gates, hidden, hidden);
  Var candidate =
      g.tanh(g.add(g.affine(input, mg.param(prefix + ".W_h"), mg.param(prefix + ".b_h")),
                   g.matmul(g.mul(reset, previous), mg.param(prefix + ".U_h"))));
  return g.add(g.mul(g.one_minus(update), previous), g.mul(update, candidate));
}

template <typename T>
ContextSet encode(ModelGraph<T>& mg, std::span<const int> source, int batch,
                  std::span<const int> lengths) {
  Graph<T>& g = mg.graph();
  const ModelConfig& c = mg.config();
  if (batch < 1 || source.empty() || source.size() % batch != 0 ||
      static_cast<int>(lengths.size()) != batch) {
    throw DimensionError("encode: source of " + std::to_string(source.size()) +
                         " indices does not form " + std::to_string(batch) + " rows");
  }
  const int positions = static_cast<int>(source.size()) / batch;
  for (int len : lengths) {
    if (len < 1 || len > positions) {
      throw ContractError("encode: source length " + std::to_string(len) + " outside [1, " +
                          std::to_string(positions) + "]");
    }
  }
  for (int idx : source) {
    if (idx < 0 || idx >= c.source_vocab) {
      throw VocabularyError("source index " + std::to_string(idx) + " outside vocabulary of " +
                            std::to_string(c.source_vocab));
    }
  }

  std::vector<Var> inputs(positions);
  std::vector<std::vector<unsigned char>> masks(positions, std::vector<unsigned char>(batch));
  std::vector<bool> all_real(positions, true);
  std::vector<int> column(batch);
  for (int t = 0; t < positions; ++t) {
    for (int b = 0; b < batch; ++b) {
      column[b] = source[static_cast<std::size_t>(b) * positions + t];
      masks[t][b] = t < lengths[b];
      all_real[t] = all_real[t] && masks[t][b];
    }
    inputs[t] = g.gather_rows(mg.param("src_embed"), column);
  }

  // Padded positions keep the previous state, so the backward pass starts
  // from zero at each example's last real symbol.
  auto run = [&](const std::string& prefix, bool reverse) {
    std::vector<Var> states(positions);
    Var h = mg.zeros(batch, c.encoder_dim);
    for (int k = 0; k < positions; ++k) {
      const int t = reverse ? positions - 1 - k : k;
      Var next = gru_cell(mg, inputs[t], h, prefix);
      h = all_real[t] ? next : g.blend_rows(next, h, masks[t]);
      states[t] = h;
    }
    return states;
  };
  const auto forward = run("enc_fwd", false);
  const auto backward = run("enc_bwd", true);

  std::vector<Var> rows(positions);
  for (int t = 0; t < positions; ++t) rows[t] = g.concat_cols({forward[t], backward[t]});
  ContextSet ctx;
  ctx.states = g.stack_rows(rows);
  ctx.keys = g.matmul(ctx.states, mg.param("att.W_key"));
  ctx.first_backward = backward[0];
  ctx.positions = positions;
  ctx.batch = batch;
  ctx.lengths.assign(lengths.begin(), lengths.end());
  return ctx;
}

// ---------------------------------------------------------------- decoder

template <typename T>
Var embed_target(ModelGraph<T>& mg, std::span<const int> tokens) {
  return mg.graph().gather_rows(mg.param("tgt_embed"), tokens);
}

template <typename T>
AttentionOutput attend(ModelGraph<T>& mg, Var previous_embedding, Var query_state,
                       const ContextSet& context) {
  if (context.positions < 1) throw ContractError("attend: empty context set");
  Graph<T>& g = mg.graph();
  Var query = g.affine(g.concat_cols({previous_embedding, query_state}), mg.param("att.W_query"),
                       mg.param("att.b"));
  Var scores = g.additive_scores(context.keys, query, mg.param("att.v"), context.positions);
  Var weights = g.masked_softmax(scores, context.lengths);
  return {g.weighted_sum(weights, context.states), weights};
}

template <typename T>
DecoderState initial_state(ModelGraph<T>& mg, const ContextSet& context) {
  Graph<T>& g = mg.graph();
  const int D = mg.config().decoder_dim;
  Var start = g.tanh(g.affine(context.first_backward, mg.param("init.W"), mg.param("init.b")));
  if (mg.config().decoder == DecoderKind::base) {
    return BaseDecoderState{start, mg.zeros(context.batch, D)};
  }
  Var zero = mg.zeros(context.batch, D);
  BiScaleState s;
  s.faster = zero;
  s.faster_carry = zero;
  s.slower = start;
  s.slower_exposed = start;
  s.slower_carry = start;
  return s;
}

template <typename T>
Var attention_query(ModelGraph<T>& mg, const DecoderState& state) {
  Graph<T>& g = mg.graph();
  const AttentionQuery q = mg.config().query;
  if (const auto* base = std::get_if<BaseDecoderState>(&state)) {
    if (q == AttentionQuery::slower) return base->upper;
    if (q == AttentionQuery::faster) return base->lower;
    return g.concat_cols({base->lower, base->upper});
  }
  const auto& bs = std::get<BiScaleState>(state);
  if (q == AttentionQuery::slower) return bs.slower;
  if (q == AttentionQuery::faster) return bs.faster;
  return g.concat_cols({bs.faster, bs.slower});
}

template <typename T>
Var decoder_output(ModelGraph<T>& mg, const DecoderState& state) {
  if (const auto* base = std::get_if<BaseDecoderState>(&state)) return base->upper;
  const auto& bs = std::get<BiScaleState>(state);
  return mg.graph().concat_cols({bs.faster, bs.slower});
}

template <typename T>
BaseDecoderState base_step(ModelGraph<T>& mg, Var previous_embedding,
                           const BaseDecoderState& state, Var context) {
  Graph<T>& g = mg.graph();
  Var lower = gru_cell(mg, g.concat_cols({previous_embedding, context}), state.lower, "dec1");
  Var upper = gru_cell(mg, lower, state.upper, "dec2");
  return {lower, upper};
}

template <typename T>
BiScaleState biscale_step(ModelGraph<T>& mg, Var previous_embedding, const BiScaleState& state,
                          Var context) {
  Graph<T>& g = mg.graph();
  Var fast_in =
      g.concat_cols({previous_embedding, state.faster_carry, state.slower_exposed, context});
  BiScaleState next;
  next.faster = g.tanh(g.affine(fast_in, mg.param("bs.W_h1"), mg.param("bs.b_h1")));
  next.fast_gate = g.sigmoid(g.affine(fast_in, mg.param("bs.W_g1"), mg.param("bs.b_g1")));
  Var keep = g.one_minus(next.fast_gate);
  next.faster_carry = g.mul(keep, next.faster);

  Var slow_in = g.concat_cols({g.mul(next.fast_gate, next.faster), state.slower_carry, context});
  next.slower_candidate = g.tanh(g.affine(slow_in, mg.param("bs.W_h2"), mg.param("bs.b_h2")));
  next.slower =
      g.add(g.mul(keep, state.slower), g.mul(next.fast_gate, next.slower_candidate));
  next.slower_exposed = g.mul(next.fast_gate, next.slower);
  next.slow_gate = g.sigmoid(g.affine(slow_in, mg.param("bs.W_g2"), mg.param("bs.b_g2")));
  next.slower_carry = g.mul(g.one_minus(next.slow_gate), next.slower);
  return next;
}

template <typename T>
DecoderState decoder_step(ModelGraph<T>& mg, Var previous_embedding, const DecoderState& state,
                          Var context) {
  if (const auto* base = std::get_if<BaseDecoderState>(&state)) {
    return base_step(mg, previous_embedding, *base, context);
  }
  return biscale_step(mg, previous_embedding, std::get<BiScaleState>(state), context);
}

template <typename T>
Var output_distribution(ModelGraph<T>& mg, Var previous_embedding, Var decoder_out, Var context) {
  Graph<T>& g = mg.graph();
  Var hidden = g.tanh(g.affine(g.concat_cols({previous_embedding, decoder_out, context}),
                               mg.param("out.W_hid"), mg.param("out.b_hid")));
  return g.log_softmax(g.affine(hidden, mg.param("out.W"), mg.param("out.b")));
}

template <typename T>
TeacherForced teacher_forced(ModelGraph<T>& mg, const Batch& batch) {
  Graph<T>& g = mg.graph();
  if (batch.size < 1 || batch.target_len < 2) throw ContractError("teacher_forced: empty batch");
  for (int idx : batch.target) {
    if (idx < 0 || idx >= mg.config().target_vocab) {
      throw VocabularyError("target index " + std::to_string(idx) + " outside vocabulary of " +
                            std::to_string(mg.config().target_vocab));
    }
  }
  ContextSet ctx = encode(mg, std::span<const int>(batch.source), batch.size,
                          std::span<const int>(batch.source_lengths));
  DecoderState state = initial_state(mg, ctx);

  TeacherForced out;
  std::vector<Var> picked;
  std::vector<int> previous(batch.size), next(batch.size);
  std::vector<T> weights(batch.size);
  for (int t = 0; t + 1 < batch.target_len; ++t) {
    int active = 0;
    for (int b = 0; b < batch.size; ++b) {
      previous[b] = batch.target_at(b, t);
      next[b] = batch.target_at(b, t + 1);
      weights[b] = batch.target_mask[static_cast<std::size_t>(b) * batch.target_len + t + 1];
      active += weights[b] != T(0);
    }
    if (active == 0) break;
    Var embedded = embed_target(mg, previous);
    AttentionOutput att = attend(mg, embedded, attention_query(mg, state), ctx);
    state = decoder_step(mg, embedded, state, att.context);
    Var log_probs = output_distribution(mg, embedded, decoder_output(mg, state), att.context);
    picked.push_back(g.pick_sum(log_probs, next, weights));
    out.step_log_probs.push_back(log_probs);
    out.alignments.push_back(att.weights);
    out.predictions += active;
  }
  if (out.predictions == 0) throw ContractError("teacher_forced: batch has no target tokens");
  out.log_likelihood = g.sum(g.stack_rows(picked));
  return out;
}

template <typename T>
SequenceScore sequence_log_prob(const ParameterStore<T>& params, const ModelConfig& config,
                                std::span<const int> source, std::span<const int> target) {
  if (source.empty() || target.empty()) {
    throw ContractError("sequence_log_prob: source and target must be nonempty");
  }
  std::vector<int> src(source.begin(), source.end());
  std::vector<int> tgt{Vocabulary::kBos};
  tgt.insert(tgt.end(), target.begin(), target.end());
  const Batch batch = batch_from_sequences(std::span<const std::vector<int>>(&src, 1),
                                           std::span<const std::vector<int>>(&tgt, 1));
  Graph<T> g(kCheckFiniteDefault, false);
  ModelGraph<T> mg(g, params, config);
  const TeacherForced tf = teacher_forced(mg, batch);
  SequenceScore score;
  for (std::size_t t = 0; t < tf.step_log_probs.size(); ++t) {
    const double lp = g.value(tf.step_log_probs[t]).at(0, target[t]);
    score.per_position.push_back(lp);
    score.total += lp;
    const auto row = g.value(tf.alignments[t]).row(0);
    score.alignment.emplace_back(row.begin(), row.end());
  }
  return score;
}

// ---------------------------------------------------------------- incremental decoding

template <typename T>
PackedState<T> PackedState<T>::select(std::span<const int> rows) const {
  PackedState out;
  for (const Tensor<T>& part : parts) {
    Tensor<T> t({static_cast<int>(rows.size()), part.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto src = part.row(rows[i]);
      std::copy(src.begin(), src.end(), t.row(static_cast<int>(i)).begin());
    }
    out.parts.push_back(std::move(t));
  }
  return out;
}

namespace {

template <typename T>
std::vector<Var> state_parts(const DecoderState& state) {
  if (const auto* base = std::get_if<BaseDecoderState>(&state)) return {base->lower, base->upper};
  const auto& bs = std::get<BiScaleState>(state);
  return {bs.faster, bs.slower, bs.faster_carry, bs.slower_exposed, bs.slower_carry};
}

template <typename T>
DecoderState unpack_state(Graph<T>& g, DecoderKind kind, const PackedState<T>& packed) {
  std::vector<Var> v;
  for (const auto& part : packed.parts) v.push_back(g.constant(part));
  if (kind == DecoderKind::base) return BaseDecoderState{v.at(0), v.at(1)};
  BiScaleState s;
  s.faster = v.at(0);
  s.slower = v.at(1);
  s.faster_carry = v.at(2);
  s.slower_exposed = v.at(3);
  s.slower_carry = v.at(4);
  return s;
}

template <typename T>
Tensor<T> as_matrix_tensor(const Tensor<T>& t) {
  return Tensor<T>({t.rows(), t.cols()}, t.storage());
}

}  // namespace

template <typename T>
IncrementalDecoder<T>::IncrementalDecoder(const ParameterStore<T>& params,
                                          const ModelConfig& config, std::span<const int> source)
    : params_(params), config_(config) {
  if (source.empty()) throw ContractError("cannot decode an empty source");
  Graph<T> g(kCheckFiniteDefault, false);
  ModelGraph<T> mg(g, params_, config_);
  const int len = static_cast<int>(source.size());
  ContextSet ctx = encode(mg, source, 1, std::span<const int>(&len, 1));
  positions_ = ctx.positions;
  states_ = g.value(ctx.states);
  keys_ = g.value(ctx.keys);
  for (Var v : state_parts<T>(charnmt::initial_state(mg, ctx))) {
    initial_.parts.push_back(as_matrix_tensor(g.value(v)));
  }
}

template <typename T>
typename IncrementalDecoder<T>::StepResult IncrementalDecoder<T>::step(
    std::span<const int> previous_tokens, const PackedState<T>& state) const {
  const int rows = state.rows();
  if (static_cast<int>(previous_tokens.size()) != rows) {
    throw DimensionError("step: " + std::to_string(previous_tokens.size()) + " tokens for " +
                         std::to_string(rows) + " state rows");
  }
  Graph<T> g(kCheckFiniteDefault, false);
  ModelGraph<T> mg(g, params_, config_);

  // Replicate the single-sentence context for every hypothesis row.
  auto replicate = [&](const Tensor<T>& src) {
    Tensor<T> out({positions_ * rows, src.cols()});
    for (int t = 0; t < positions_; ++t) {
      for (int r = 0; r < rows; ++r) {
        std::copy(src.row(t).begin(), src.row(t).end(), out.row(t * rows + r).begin());
      }
    }
    return out;
  };
  ContextSet ctx;
  ctx.states = g.constant(replicate(states_));
  ctx.keys = g.constant(replicate(keys_));
  ctx.positions = positions_;
  ctx.batch = rows;
  ctx.lengths.assign(rows, positions_);

  DecoderState current = unpack_state(g, config_.decoder, state);
  Var embedded = embed_target(mg, previous_tokens);
  AttentionOutput att = attend(mg, embedded, attention_query(mg, current), ctx);
  DecoderState next = decoder_step(mg, embedded, current, att.context);
  Var log_probs = output_distribution(mg, embedded, decoder_output(mg, next), att.context);

  StepResult result;
  result.log_probs = as_matrix_tensor(g.value(log_probs));
  result.alignment = as_matrix_tensor(g.value(att.weights));
  for (Var v : state_parts<T>(next)) result.state.parts.push_back(as_matrix_tensor(g.value(v)));
  return result;
}

#define CHARNMT_INSTANTIATE(T)                                                                  \
  template class ParameterStore<T>;                                                             \
  template ParameterStore<T> init_parameters<T>(const ModelConfig&, std::uint64_t);             \
  template ParameterStore<T> zero_parameters<T>(const ModelConfig&);                            \
  template void validate_parameters<T>(const ParameterStore<T>&, const ModelConfig&);           \
  template class ModelGraph<T>;                                                                 \
  template ContextSet encode<T>(ModelGraph<T>&, std::span<const int>, int, std::span<const int>); \
  template Var gru_cell<T>(ModelGraph<T>&, Var, Var, const std::string&);                       \
  template Var embed_target<T>(ModelGraph<T>&, std::span<const int>);                           \
  template AttentionOutput attend<T>(ModelGraph<T>&, Var, Var, const ContextSet&);              \
  template DecoderState initial_state<T>(ModelGraph<T>&, const ContextSet&);                    \
  template Var attention_query<T>(ModelGraph<T>&, const DecoderState&);                         \
  template Var decoder_output<T>(ModelGraph<T>&, const DecoderState&);                          \
  template BaseDecoderState base_step<T>(ModelGraph<T>&, Var, const BaseDecoderState&, Var);    \
  template BiScaleState biscale_step<T>(ModelGraph<T>&, Var, const BiScaleState&, Var);         \
  template DecoderState decoder_step<T>(ModelGraph<T>&, Var, const DecoderState&, Var);         \
  template Var output_distribution<T>(ModelGraph<T>&, Var, Var, Var);                           \
  template TeacherForced teacher_forced<T>(ModelGraph<T>&, const Batch&);                       \
  template SequenceScore sequence_log_prob<T>(const ParameterStore<T>&, const ModelConfig&,     \
                                              std::span<const int>, std::span<const int>);      \
  template struct PackedState<T>;                                                               \
  template class IncrementalDecoder<T>;

CHARNMT_INSTANTIATE(float)
CHARNMT_INSTANTIATE(double)

#undef CHARNMT_INSTANTIATE

}  // namespace charnmt
