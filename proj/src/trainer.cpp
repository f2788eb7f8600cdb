#include "charnmt/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "charnmt/errors.hpp"
#include "charnmt/io.hpp"
#include "charnmt/metrics.hpp"

namespace charnmt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written in host byte order");

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------- configuration

void TrainConfig::validate() const {
  model.validate();
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(clip > 0)) throw ConfigError("clip must be positive");
  if (!(adam.step_size > 0)) throw ConfigError("learning_rate must be positive");
  if (!(adam.beta1 > 0 && adam.beta1 < 1)) throw ConfigError("beta1 must lie in (0, 1)");
  if (!(adam.beta2 > 0 && adam.beta2 < 1)) throw ConfigError("beta2 must lie in (0, 1)");
  if (!(adam.epsilon > 0)) throw ConfigError("epsilon must be positive");
  if (max_steps < 0) throw ConfigError("max_steps must be nonnegative");
  if (valid_interval < 0) throw ConfigError("valid_interval must be nonnegative");
  if (valid_sentences < 0) throw ConfigError("valid_sentences must be nonnegative");
  if (limits.source < 1 || limits.target < 1) throw ConfigError("length limits must be positive");
}

namespace {

Precision parse_precision(const std::string& text) {
  if (text == "narrow") return Precision::narrow;
  if (text == "wide") return Precision::wide;
  throw ConfigError("unknown precision '" + text + "' (expected narrow or wide)");
}

int positive_int(const RunConfig& c, const std::string& key) {
  const long v = c.get_int(key);
  if (v < 0 || v > 1'000'000'000) throw ConfigError(key + " out of range: " + std::to_string(v));
  return static_cast<int>(v);
}

}  // namespace

TrainConfig TrainConfig::from_run_config(const RunConfig& c, int source_vocab, int target_vocab) {
  TrainConfig t;
  t.model.decoder = parse_decoder(c.get("decoder"));
  t.model.query = c.has("attention_query") ? parse_query(c.get("attention_query"))
                                           : ModelConfig::default_query(t.model.decoder);
  t.model.source_vocab = source_vocab;
  t.model.target_vocab = target_vocab;
  t.model.embed_dim = positive_int(c, "embed_dim");
  t.model.encoder_dim = positive_int(c, "encoder_dim");
  t.model.decoder_dim = positive_int(c, "decoder_dim");
  t.model.attention_dim = positive_int(c, "attention_dim");
  t.target_unit = parse_unit(c.get("target_unit"));
  t.precision = parse_precision(c.get("precision"));
  t.batch_size = positive_int(c, "batch_size");
  t.clip = c.get_double("clip");
  t.adam.step_size = c.get_double("learning_rate");
  t.adam.beta1 = c.get_double("beta1");
  t.adam.beta2 = c.get_double("beta2");
  t.adam.epsilon = c.get_double("epsilon");
  t.max_steps = c.get_int("max_steps");
  t.valid_interval = c.get_int("valid_interval");
  t.valid_sentences = c.get_int("valid_sentences");
  t.seed = static_cast<std::uint64_t>(c.get_int("seed"));
  t.limits = LengthLimits::defaults(t.target_unit);
  t.limits.source = positive_int(c, "max_source_len");
  if (c.has("max_target_len")) t.limits.target = positive_int(c, "max_target_len");
  t.validate();
  return t;
}

// ---------------------------------------------------------------- loss and updates

template <typename T>
OptimizerState<T> OptimizerState<T>::zeros_like(const ParameterStore<T>& params) {
  OptimizerState s;
  for (const auto& [name, t] : params) {
    s.first.add(name, Tensor<T>(t.shape()));
    s.second.add(name, Tensor<T>(t.shape()));
  }
  return s;
}

template <typename T>
double batch_nll(const ParameterStore<T>& params, const ModelConfig& config, const Batch& batch) {
  Graph<T> g(kCheckFiniteDefault, false);
  ModelGraph<T> mg(g, params, config);
  const TeacherForced tf = teacher_forced(mg, batch);
  return -static_cast<double>(g.value(tf.log_likelihood)[0]) / tf.predictions;
}

template <typename T>
LossAndGradients<T> batch_nll_gradients(const ParameterStore<T>& params, const ModelConfig& config,
                                        const Batch& batch) {
  Graph<T> g(kCheckFiniteDefault, true);
  ModelGraph<T> mg(g, params, config);
  const TeacherForced tf = teacher_forced(mg, batch);
  Var loss = g.scale(tf.log_likelihood, static_cast<T>(-1.0 / tf.predictions));
  LossAndGradients<T> out;
  out.loss = static_cast<double>(g.value(loss)[0]);
  out.tokens = tf.predictions;
  out.gradients = g.backward(loss);
  return out;
}

template <typename T>
double global_norm(const GradientMap<T>& gradients) {
  double total = 0;
  for (const auto& [name, t] : gradients) {
    for (T v : t.values()) total += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(total);
}

template <typename T>
double clip_gradients(GradientMap<T>& gradients, double threshold) {
  if (!(threshold > 0)) throw ConfigError("clip threshold must be positive");
  const double norm = global_norm(gradients);
  if (norm > threshold) {
    const double factor = threshold / norm;
    for (auto& [name, t] : gradients) {
      for (T& v : t.values()) v = static_cast<T>(v * factor);
    }
  }
  return norm;
}

template <typename T>
void adam_step(ParameterStore<T>& params, const GradientMap<T>& gradients, OptimizerState<T>& state,
               const AdamConfig& config) {
  const long t = state.step + 1;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (auto& [name, p] : params) {
    auto it = gradients.find(name);
    if (it == gradients.end()) throw ContractError("no gradient for parameter '" + name + "'");
    const Tensor<T>& g = it->second;
    Tensor<T>& m = state.first.at(name);
    Tensor<T>& v = state.second.at(name);
    if (g.shape() != p.shape() || m.shape() != p.shape() || v.shape() != p.shape()) {
      throw DimensionError("adam: shapes disagree for '" + name + "'");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = config.beta1 * m[i] + (1 - config.beta1) * gi;
      const double vi = config.beta2 * v[i] + (1 - config.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = config.step_size * (mi / c1) / (std::sqrt(vi / c2) + config.epsilon);
      p[i] = static_cast<T>(p[i] - update);
    }
  }
  state.step = t;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr const char* kFormat = "charnmt-checkpoint";
constexpr int kVersion = 1;

json model_json(const ModelConfig& m) {
  return {{"decoder", decoder_name(m.decoder)},     {"attention_query", query_name(m.query)},
          {"source_vocab", m.source_vocab},         {"target_vocab", m.target_vocab},
          {"embed_dim", m.embed_dim},               {"encoder_dim", m.encoder_dim},
          {"decoder_dim", m.decoder_dim},           {"attention_dim", m.attention_dim}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  m.decoder = parse_decoder(j.at("decoder").get<std::string>());
  m.query = parse_query(j.at("attention_query").get<std::string>());
  m.source_vocab = j.at("source_vocab").get<int>();
  m.target_vocab = j.at("target_vocab").get<int>();
  m.embed_dim = j.at("embed_dim").get<int>();
  m.encoder_dim = j.at("encoder_dim").get<int>();
  m.decoder_dim = j.at("decoder_dim").get<int>();
  m.attention_dim = j.at("attention_dim").get<int>();
  return m;
}

json progress_json(const TrainingProgress& p) {
  json j = {{"step", p.step},           {"epoch", p.epoch},        {"batch_in_epoch", p.batch_in_epoch},
            {"best_bleu", p.best_bleu}, {"best_step", p.best_step}};
  j["best_nll"] = std::isfinite(p.best_nll) ? json(p.best_nll) : json(nullptr);
  return j;
}

TrainingProgress progress_from_json(const json& j) {
  TrainingProgress p;
  p.step = j.at("step").get<long>();
  p.epoch = j.at("epoch").get<long>();
  p.batch_in_epoch = j.at("batch_in_epoch").get<long>();
  p.best_bleu = j.at("best_bleu").get<double>();
  p.best_step = j.at("best_step").get<long>();
  p.best_nll = j.at("best_nll").is_null() ? std::numeric_limits<double>::infinity()
                                          : j.at("best_nll").get<double>();
  return p;
}

template <typename T>
void append_tensor(std::string& blob, json& entries, const std::string& name, const Tensor<T>& t) {
  const std::size_t bytes = t.size() * sizeof(T);
  entries.push_back({{"name", name},
                     {"dtype", dtype_name<T>()},
                     {"shape", t.shape()},
                     {"offset", blob.size()},
                     {"bytes", bytes}});
  blob.append(reinterpret_cast<const char*>(t.data()), bytes);
}

void copy_artifact(const std::string& contents, const fs::path& dir, const std::string& name,
                   std::uint64_t fingerprint, json& files, const std::string& key) {
  write_file_atomic(dir / name, contents);
  files[key] = {{"path", name}, {"fingerprint", hex64(fingerprint)}};
}

std::string vocab_text(const Vocabulary& v) {
  std::string out;
  for (const auto& s : v.symbols()) out += s + "\n";
  return out;
}

std::string merges_text(const MergeTable& m) {
  std::string out = std::string(MergeTable::kVersionLine) + "\n";
  for (const auto& [l, r] : m.rules()) out += l + " " + r + "\n";
  return out;
}

json read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) throw PathError("checkpoint manifest not found: " + path.string());
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IntegrityError("checkpoint manifest " + path.string() + " does not parse: " + e.what());
  }
  if (j.value("format", "") != kFormat || j.value("version", 0) != kVersion) {
    throw IntegrityError(path.string() + " is not a version " + std::to_string(kVersion) +
                         " checkpoint manifest");
  }
  return j;
}

template <typename T>
Tensor<T> read_tensor(const std::string& blob, const json& entry) {
  const std::string name = entry.at("name").get<std::string>();
  const std::string dtype = entry.at("dtype").get<std::string>();
  const Shape shape = entry.at("shape").get<Shape>();
  const std::size_t offset = entry.at("offset").get<std::size_t>();
  const std::size_t bytes = entry.at("bytes").get<std::size_t>();
  std::size_t count = 1;
  for (int e : shape) {
    if (e < 1) throw IntegrityError("tensor '" + name + "' has a non-positive extent");
    count *= static_cast<std::size_t>(e);
  }
  const std::size_t width = dtype == "f64" ? 8 : dtype == "f32" ? 4 : 0;
  if (!width) throw IntegrityError("tensor '" + name + "' has unknown dtype '" + dtype + "'");
  if (bytes != count * width || offset > blob.size() || blob.size() - offset < bytes) {
    throw IntegrityError("tensor '" + name + "' does not fit the blob (offset " +
                         std::to_string(offset) + ", " + std::to_string(bytes) + " bytes)");
  }
  Tensor<T> t(shape);
  if (width == 8) {
    std::vector<double> tmp(count);
    std::memcpy(tmp.data(), blob.data() + offset, bytes);
    for (std::size_t i = 0; i < count; ++i) t[i] = static_cast<T>(tmp[i]);
  } else {
    std::vector<float> tmp(count);
    std::memcpy(tmp.data(), blob.data() + offset, bytes);
    for (std::size_t i = 0; i < count; ++i) t[i] = static_cast<T>(tmp[i]);
  }
  if (!t.all_finite()) throw IntegrityError("tensor '" + name + "' holds non-finite values");
  return t;
}

fs::path artifact_path(const fs::path& dir, const json& files, const std::string& key) {
  const fs::path p = dir / files.at(key).at("path").get<std::string>();
  if (!fs::exists(p)) throw PathError("checkpoint references missing file " + p.string());
  return p;
}

template <typename T>
Checkpoint<T> load_impl(const fs::path& dir, bool with_optimizer) {
  const json manifest = read_manifest(dir);
  try {
    Checkpoint<T> ck;
    ck.config = RunConfig::parse(manifest.at("config").get<std::string>(), "checkpoint config");
    ck.model = model_from_json(manifest.at("model"));
    ck.model.validate();
    ck.target_unit = parse_unit(manifest.at("target_unit").get<std::string>());
    ck.progress = progress_from_json(manifest.at("progress"));

    const json& blob_info = manifest.at("blob");
    const fs::path blob_path = dir / blob_info.at("file").get<std::string>();
    if (!fs::exists(blob_path)) throw PathError("checkpoint blob not found: " + blob_path.string());
    const std::string blob = read_file(blob_path);
    const std::size_t declared = blob_info.at("bytes").get<std::size_t>();
    if (blob.size() != declared) {
      throw IntegrityError("checkpoint blob " + blob_path.string() + " holds " +
                           std::to_string(blob.size()) + " bytes, manifest declares " +
                           std::to_string(declared));
    }
    if (hex64(fnv1a(blob)) != blob_info.at("fnv1a").get<std::string>()) {
      throw IntegrityError("checkpoint blob " + blob_path.string() + " fails its checksum");
    }

    const bool has_opt = !manifest.at("optimizer").is_null();
    if (has_opt && with_optimizer) {
      ck.optimizer = OptimizerState<T>();
      ck.optimizer->step = manifest.at("optimizer").at("step").get<long>();
    }
    for (const json& entry : manifest.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      const auto slash = name.find('/');
      const std::string group = name.substr(0, slash);
      const std::string param = slash == std::string::npos ? "" : name.substr(slash + 1);
      if (group == "param") {
        ck.params.add(param, read_tensor<T>(blob, entry));
      } else if (group == "adam.m" || group == "adam.v") {
        if (!ck.optimizer) continue;
        auto& store = group == "adam.m" ? ck.optimizer->first : ck.optimizer->second;
        store.add(param, read_tensor<T>(blob, entry));
      } else {
        throw IntegrityError("unexpected tensor '" + name + "' in checkpoint");
      }
    }
    validate_parameters(ck.params, ck.model);
    if (ck.optimizer) {
      validate_parameters(ck.optimizer->first, ck.model);
      validate_parameters(ck.optimizer->second, ck.model);
    }
    return ck;
  } catch (const json::exception& e) {
    throw IntegrityError("checkpoint manifest in " + dir.string() + " is malformed: " + e.what());
  } catch (const ContractError& e) {
    throw IntegrityError(std::string("checkpoint in ") + dir.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw IntegrityError(std::string("checkpoint in ") + dir.string() + ": " + e.what());
  }
}

}  // namespace

template <typename T>
void save_checkpoint(const fs::path& dir, const Checkpoint<T>& ck, const TextPipeline& pipeline) {
  validate_parameters(ck.params, ck.model);
  if (ck.model.source_vocab != pipeline.source_vocab.size() ||
      ck.model.target_vocab != pipeline.target_vocab.size()) {
    throw ConsistencyError("checkpoint model and vocabularies disagree on sizes");
  }
  fs::path target = dir;
  if (target.filename().empty()) target = target.parent_path();
  const fs::path staging = target.string() + ".tmp";
  const fs::path retired = target.string() + ".old";
  fs::remove_all(staging);
  fs::create_directories(staging);

  std::string blob;
  json tensors = json::array();
  for (const auto& [name, t] : ck.params) append_tensor(blob, tensors, "param/" + name, t);
  json optimizer = nullptr;
  if (ck.optimizer) {
    for (const auto& [name, t] : ck.optimizer->first) append_tensor(blob, tensors, "adam.m/" + name, t);
    for (const auto& [name, t] : ck.optimizer->second) append_tensor(blob, tensors, "adam.v/" + name, t);
    optimizer = {{"step", ck.optimizer->step}};
  }
  write_file_atomic(staging / "tensors.bin", blob);

  json files = json::object();
  copy_artifact(vocab_text(pipeline.source_vocab), staging, "source.vocab",
                pipeline.source_vocab.fingerprint(), files, "source_vocab");
  copy_artifact(vocab_text(pipeline.target_vocab), staging, "target.vocab",
                pipeline.target_vocab.fingerprint(), files, "target_vocab");
  if (pipeline.source_merges) {
    copy_artifact(merges_text(*pipeline.source_merges), staging, "source.merges",
                  pipeline.source_merges->fingerprint(), files, "source_merges");
  }
  if (pipeline.target_merges) {
    copy_artifact(merges_text(*pipeline.target_merges), staging, "target.merges",
                  pipeline.target_merges->fingerprint(), files, "target_merges");
  }

  json manifest = {{"format", kFormat},
                   {"version", kVersion},
                   {"dtype", dtype_name<T>()},
                   {"config", ck.config.text()},
                   {"model", model_json(ck.model)},
                   {"target_unit", unit_name(ck.target_unit)},
                   {"progress", progress_json(ck.progress)},
                   {"optimizer", optimizer},
                   {"files", files},
                   {"tensors", tensors},
                   {"blob", {{"file", "tensors.bin"}, {"bytes", blob.size()}, {"fnv1a", hex64(fnv1a(blob))}}}};
  write_file_atomic(staging / "manifest.json", manifest.dump(1) + "\n");

  fs::remove_all(retired);
  if (fs::exists(target)) fs::rename(target, retired);
  fs::rename(staging, target);
  fs::remove_all(retired);
}

template <typename T>
Checkpoint<T> load_checkpoint(const fs::path& dir) {
  return load_impl<T>(dir, true);
}

Precision checkpoint_precision(const fs::path& dir) {
  const json manifest = read_manifest(dir);
  const std::string dtype = manifest.value("dtype", "");
  if (dtype == "f32") return Precision::narrow;
  if (dtype == "f64") return Precision::wide;
  throw IntegrityError("checkpoint in " + dir.string() + " declares unknown dtype '" + dtype + "'");
}

TextPipeline load_checkpoint_pipeline(const fs::path& dir) {
  const json manifest = read_manifest(dir);
  try {
    const json& files = manifest.at("files");
    const Unit unit = parse_unit(manifest.at("target_unit").get<std::string>());
    TextPipeline p;
    p.source_vocab = Vocabulary::load(artifact_path(dir, files, "source_vocab"), Unit::subword);
    p.target_vocab = Vocabulary::load(artifact_path(dir, files, "target_vocab"), unit);
    if (files.contains("source_merges")) {
      p.source_merges = MergeTable::load(artifact_path(dir, files, "source_merges"));
    }
    if (files.contains("target_merges")) {
      p.target_merges = MergeTable::load(artifact_path(dir, files, "target_merges"));
    }
    auto check = [&](const std::string& key, std::uint64_t fp) {
      if (files.at(key).at("fingerprint").get<std::string>() != hex64(fp)) {
        throw IntegrityError("checkpoint file for " + key + " in " + dir.string() +
                             " does not match its recorded fingerprint");
      }
    };
    check("source_vocab", p.source_vocab.fingerprint());
    check("target_vocab", p.target_vocab.fingerprint());
    if (p.source_merges) check("source_merges", p.source_merges->fingerprint());
    if (p.target_merges) check("target_merges", p.target_merges->fingerprint());
    return p;
  } catch (const json::exception& e) {
    throw IntegrityError("checkpoint manifest in " + dir.string() + " is malformed: " + e.what());
  }
}

template <typename T>
ModelHandle<T> load_model(const fs::path& dir) {
  Checkpoint<T> ck = load_impl<T>(dir, false);
  const TextPipeline p = load_checkpoint_pipeline(dir);
  ModelHandle<T> h;
  h.params = std::move(ck.params);
  h.config = ck.model;
  h.source_vocab_fingerprint = p.source_vocab.fingerprint();
  h.target_vocab_fingerprint = p.target_vocab.fingerprint();
  return h;
}

// ---------------------------------------------------------------- trainer

template <typename T>
Trainer<T>::Trainer(TrainConfig config, TextPipeline pipeline, ParallelCorpus train,
                    std::vector<std::string> dev_sources, std::vector<std::string> dev_targets)
    : config_(std::move(config)),
      pipeline_(std::move(pipeline)),
      train_(std::move(train)),
      dev_sources_(std::move(dev_sources)),
      dev_targets_(std::move(dev_targets)) {
  config_.validate();
  if (config_.model.source_vocab != pipeline_.source_vocab.size() ||
      config_.model.target_vocab != pipeline_.target_vocab.size()) {
    throw ConsistencyError("model vocabulary sizes do not match the vocabularies");
  }
  if (dev_sources_.size() != dev_targets_.size()) {
    throw CorpusAlignmentError("dev source and target line counts differ");
  }
  params_ = init_parameters<T>(config_.model, config_.seed);
  optimizer_ = OptimizerState<T>::zeros_like(params_);
}

template <typename T>
void Trainer<T>::load_epoch(long epoch) {
  BatchOptions opts;
  opts.limits = config_.limits;
  opts.batch_size = config_.batch_size;
  opts.seed = config_.seed + static_cast<std::uint64_t>(epoch);
  batches_ = make_batches(train_, pipeline_.source_vocab, pipeline_.target_vocab, opts);
  if (batches_.empty()) throw ConfigError("no training pair fits the length limits");
  loaded_epoch_ = epoch;
}

template <typename T>
const Batch& Trainer<T>::next_batch() {
  if (loaded_epoch_ != progress_.epoch) load_epoch(progress_.epoch);
  if (progress_.batch_in_epoch >= static_cast<long>(batches_.size())) {
    ++progress_.epoch;
    progress_.batch_in_epoch = 0;
    load_epoch(progress_.epoch);
  }
  return batches_[static_cast<std::size_t>(progress_.batch_in_epoch)];
}

template <typename T>
StepStats Trainer<T>::step() {
  const Batch& batch = next_batch();
  auto lg = batch_nll_gradients(params_, config_.model, batch);
  StepStats stats;
  stats.loss = lg.loss;
  stats.tokens = lg.tokens;
  stats.grad_norm = clip_gradients(lg.gradients, config_.clip);
  if (!std::isfinite(stats.loss) || !std::isfinite(stats.grad_norm)) {
    throw NonFiniteError("non-finite " + std::string(std::isfinite(stats.loss) ? "gradient" : "loss") +
                         " at step " + std::to_string(progress_.step + 1) + " (epoch " +
                         std::to_string(progress_.epoch) + ", batch " +
                         std::to_string(progress_.batch_in_epoch) + ")");
  }
  adam_step(params_, lg.gradients, optimizer_, config_.adam);
  ++progress_.step;
  ++progress_.batch_in_epoch;
  return stats;
}

template <typename T>
Validation Trainer<T>::validate() const {
  Validation v;
  if (dev_sources_.empty()) return v;
  std::size_t n = dev_sources_.size();
  if (config_.valid_sentences > 0) n = std::min<std::size_t>(n, config_.valid_sentences);
  const std::vector<std::string> src(dev_sources_.begin(), dev_sources_.begin() + n);
  const std::vector<std::string> ref(dev_targets_.begin(), dev_targets_.begin() + n);

  const ParallelCorpus dev = pipeline_.corpus(src, ref);
  BatchOptions opts;
  opts.limits = {std::numeric_limits<int>::max(), std::numeric_limits<int>::max()};
  opts.batch_size = config_.batch_size;
  opts.shuffle = false;
  double total = 0;
  long tokens = 0;
  for (const Batch& b : make_batches(dev, pipeline_.source_vocab, pipeline_.target_vocab, opts)) {
    const double mean = batch_nll(params_, config_.model, b);
    total += mean * b.prediction_count();
    tokens += b.prediction_count();
  }
  v.nll = tokens ? total / tokens : 0.0;

  ModelHandle<T> handle{params_, config_.model, 0, 0};
  const Ensemble<T> single({std::move(handle)});
  SearchOptions search;
  search.width = 1;
  std::vector<std::string> hyps;
  for (const auto& tr : translate_lines(single, pipeline_, src, search)) hyps.push_back(tr.text);
  v.bleu = bleu(hyps, ref).bleu;
  return v;
}

template <typename T>
Checkpoint<T> Trainer<T>::snapshot(const RunConfig& run_config) const {
  Checkpoint<T> ck;
  ck.config = run_config;
  ck.model = config_.model;
  ck.target_unit = config_.target_unit;
  ck.params = params_;
  ck.optimizer = optimizer_;
  ck.progress = progress_;
  return ck;
}

template <typename T>
void Trainer<T>::restore(const Checkpoint<T>& ck) {
  if (!(ck.model == config_.model)) {
    throw ConfigError("checkpoint model (" + decoder_name(ck.model.decoder) + ", query " +
                      query_name(ck.model.query) + ") conflicts with the configured model (" +
                      decoder_name(config_.model.decoder) + ", query " +
                      query_name(config_.model.query) + ")");
  }
  validate_parameters(ck.params, config_.model);
  params_ = ck.params;
  optimizer_ = ck.optimizer ? *ck.optimizer : OptimizerState<T>::zeros_like(params_);
  progress_ = ck.progress;
  loaded_epoch_ = -1;
}

// ---------------------------------------------------------------- driver

namespace {

std::string format_log(long step, const StepStats& s, const std::optional<Validation>& v) {
  char buf[160];
  if (v) {
    std::snprintf(buf, sizeof buf, "%ld\t%.6f\t%.6f\t%.6f\t%.6f\n", step, s.loss, s.grad_norm,
                  v->nll, v->bleu);
  } else {
    std::snprintf(buf, sizeof buf, "%ld\t%.6f\t%.6f\t-\t-\n", step, s.loss, s.grad_norm);
  }
  return buf;
}

template <typename T>
TrainSummary drive(const RunConfig& run, const TrainConfig& tc, TextPipeline pipeline,
                   ParallelCorpus corpus, std::vector<std::string> dev_src,
                   std::vector<std::string> dev_tgt, bool resume,
                   const std::function<void(const std::string&)>& report) {
  const fs::path out = run.get("output_dir");
  fs::create_directories(out);
  Trainer<T> trainer(tc, pipeline, std::move(corpus), std::move(dev_src), std::move(dev_tgt));
  const fs::path latest = out / "latest";
  const fs::path best = out / "best";
  const fs::path log_path = out / "train.log";
  if (resume) {
    trainer.restore(load_checkpoint<T>(latest));
  } else {
    std::ofstream(log_path, std::ios::trunc);
    save_checkpoint(latest, trainer.snapshot(run), pipeline);
  }
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw PathError("cannot open training log " + log_path.string());

  TrainSummary summary;
  while (trainer.progress().step < tc.max_steps) {
    const StepStats s = trainer.step();
    const long step = trainer.progress().step;
    summary.last_loss = s.loss;
    std::optional<Validation> v;
    if (tc.valid_interval > 0 && step % tc.valid_interval == 0) {
      v = trainer.validate();
      TrainingProgress& p = trainer.mutable_progress();
      if (v->bleu > p.best_bleu || (v->bleu == p.best_bleu && v->nll < p.best_nll)) {
        p.best_bleu = v->bleu;
        p.best_nll = v->nll;
        p.best_step = step;
        save_checkpoint(best, trainer.snapshot(run), pipeline);
      }
      save_checkpoint(latest, trainer.snapshot(run), pipeline);
    }
    const std::string line = format_log(step, s, v);
    log << line << std::flush;
    if (report && (v || step == tc.max_steps)) report(line);
  }
  save_checkpoint(latest, trainer.snapshot(run), pipeline);
  summary.steps = trainer.progress().step;
  summary.progress = trainer.progress();
  return summary;
}

}  // namespace

TrainSummary run_training(const RunConfig& run, bool resume,
                          const std::function<void(const std::string&)>& report) {
  // Validate every path before any work starts.
  for (const char* key : {"train_source", "train_target", "source_vocab", "target_vocab"}) {
    const fs::path p = run.get(key);
    if (!fs::exists(p)) throw PathError(std::string(key) + " not found: " + p.string());
  }
  for (const char* key : {"dev_source", "dev_target", "source_merges", "target_merges"}) {
    if (auto p = run.maybe(key); p && !fs::exists(*p)) {
      throw PathError(std::string(key) + " not found: " + *p);
    }
  }
  if (run.has("dev_source") != run.has("dev_target")) {
    throw ConfigError("dev_source and dev_target must be given together");
  }
  run.get("output_dir");

  TextPipeline pipeline;
  pipeline.source_vocab = Vocabulary::load(run.get("source_vocab"), Unit::subword);
  const Unit unit = parse_unit(run.get("target_unit"));
  pipeline.target_vocab = Vocabulary::load(run.get("target_vocab"), unit);
  if (auto p = run.maybe("source_merges")) pipeline.source_merges = MergeTable::load(*p);
  if (auto p = run.maybe("target_merges")) pipeline.target_merges = MergeTable::load(*p);
  const TrainConfig tc =
      TrainConfig::from_run_config(run, pipeline.source_vocab.size(), pipeline.target_vocab.size());

  auto [src, tgt] = read_parallel(run.get("train_source"), run.get("train_target"));
  ParallelCorpus corpus = pipeline.corpus(src, tgt);
  std::vector<std::string> dev_src, dev_tgt;
  if (run.has("dev_source")) std::tie(dev_src, dev_tgt) = read_parallel(run.get("dev_source"), run.get("dev_target"));

  if (tc.precision == Precision::wide) {
    return drive<double>(run, tc, pipeline, std::move(corpus), dev_src, dev_tgt, resume, report);
  }
  return drive<float>(run, tc, pipeline, std::move(corpus), dev_src, dev_tgt, resume, report);
}

#define CHARNMT_INSTANTIATE(T)                                                                    \
  template struct OptimizerState<T>;                                                              \
  template double batch_nll<T>(const ParameterStore<T>&, const ModelConfig&, const Batch&);       \
  template LossAndGradients<T> batch_nll_gradients<T>(const ParameterStore<T>&, const ModelConfig&, \
                                                      const Batch&);                              \
  template double global_norm<T>(const GradientMap<T>&);                                          \
  template double clip_gradients<T>(GradientMap<T>&, double);                                     \
  template void adam_step<T>(ParameterStore<T>&, const GradientMap<T>&, OptimizerState<T>&,       \
                             const AdamConfig&);                                                  \
  template void save_checkpoint<T>(const fs::path&, const Checkpoint<T>&, const TextPipeline&);   \
  template Checkpoint<T> load_checkpoint<T>(const fs::path&);                                     \
  template ModelHandle<T> load_model<T>(const fs::path&);                                         \
  template class Trainer<T>;

CHARNMT_INSTANTIATE(float)
CHARNMT_INSTANTIATE(double)

#undef CHARNMT_INSTANTIATE

}  // namespace charnmt
