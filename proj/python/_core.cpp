#include <pybind11/pybind11.h>
#include <pybind11/functional.h>
#include <pybind11/stl.h>

#include "charnmt/config.hpp"
#include "charnmt/decode.hpp"
#include "charnmt/errors.hpp"
#include "charnmt/io.hpp"
#include "charnmt/metrics.hpp"
#include "charnmt/trainer.hpp"

namespace py = pybind11;
using namespace charnmt;

namespace {

// Checkpoints are decoded at double precision whatever they were saved in.
class Translator {
 public:
  explicit Translator(const std::vector<std::string>& paths) {
    if (paths.empty()) throw UsageError("at least one checkpoint is needed");
    std::vector<ModelHandle<double>> members;
    for (const auto& p : paths) members.push_back(load_model<double>(p));
    models_ = Ensemble<double>(std::move(members));
    pipeline_ = load_checkpoint_pipeline(paths.front());
    models_.check_pipeline(pipeline_);
  }

  std::vector<py::dict> translate(const std::vector<std::string>& lines, int beam, int max_len,
                                  bool normalize) const {
    SearchOptions o;
    o.width = beam;
    o.max_len = max_len;
    o.length_normalize = normalize;
    std::vector<Translation> out;
    {
      py::gil_scoped_release release;
      out = translate_lines(models_, pipeline_, lines, o);
    }
    std::vector<py::dict> result;
    for (const auto& t : out) {
      py::dict d;
      d["text"] = t.text;
      d["log_prob"] = t.best.log_prob;
      d["finished"] = t.best.finished;
      d["forced"] = t.best.forced;
      d["source_symbols"] = t.source_symbols;
      d["alignment"] = t.best.alignment;
      result.push_back(std::move(d));
    }
    return result;
  }

  std::size_t size() const { return models_.size(); }
  const TextPipeline& pipeline() const { return pipeline_; }

 private:
  Ensemble<double> models_;
  TextPipeline pipeline_;
};

py::dict bleu_dict(const BleuReport& r) {
  py::dict d;
  d["bleu"] = r.bleu;
  d["precisions"] = r.precisions;
  d["brevity_penalty"] = r.brevity_penalty;
  d["hyp_len"] = r.hyp_len;
  d["ref_len"] = r.ref_len;
  d["line"] = r.line();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Character-level attention-based translation";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base);
  py::register_exception<DomainError>(m, "DomainError", base);
  py::register_exception<ContractError>(m, "ContractError", base);
  py::register_exception<NonFiniteError>(m, "NonFiniteError", base);
  py::register_exception<VocabularyError>(m, "VocabularyError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<UsageError>(m, "UsageError", base);
  py::register_exception<CorpusAlignmentError>(m, "CorpusAlignmentError", base);
  py::register_exception<IntegrityError>(m, "IntegrityError", base);
  py::register_exception<PathError>(m, "PathError", base);
  py::register_exception<ConsistencyError>(m, "ConsistencyError", base);
  py::register_exception<EnsembleError>(m, "EnsembleError", base);
  py::register_exception<AlignmentError>(m, "AlignmentError", base);

  py::enum_<Unit>(m, "Unit").value("subword", Unit::subword).value("character", Unit::character);

  py::class_<MergeTable>(m, "MergeTable")
      .def_static("load", [](const std::string& p) { return MergeTable::load(p); })
      .def("save", [](const MergeTable& t, const std::string& p) { t.save(p); })
      .def_property_readonly("rules", &MergeTable::rules)
      .def_property_readonly("marker", &MergeTable::marker)
      .def_property_readonly("fingerprint", &MergeTable::fingerprint)
      .def("__len__", &MergeTable::size)
      .def("segment", [](const MergeTable& t, const std::string& line) {
        return apply_bpe(split_whitespace(line), t);
      });

  py::class_<Vocabulary>(m, "Vocabulary")
      .def_static("load", [](const std::string& p, Unit u) { return Vocabulary::load(p, u); })
      .def("save", [](const Vocabulary& v, const std::string& p) { v.save(p); })
      .def_property_readonly("unit", &Vocabulary::unit)
      .def_property_readonly("symbols", &Vocabulary::symbols)
      .def_property_readonly("fingerprint", &Vocabulary::fingerprint)
      .def("__len__", &Vocabulary::size)
      .def("index", [](const Vocabulary& v, const std::string& s) { return v.index(s); })
      .def("split", [](const Vocabulary& v, const std::string& line) { return v.split(line); })
      .def("encode", [](const Vocabulary& v, const std::string& line) {
        return v.encode(v.split(line));
      });

  m.def("learn_bpe", [](const std::vector<std::string>& lines, int merges) {
    return learn_bpe(lines, merges);
  }, py::arg("lines"), py::arg("num_merges"));
  m.def("build_vocab", [](const std::vector<std::string>& lines, Unit unit, int max_size) {
    return build_vocab(lines, unit, max_size);
  }, py::arg("lines"), py::arg("unit"), py::arg("max_size") = 100000);

  m.def("bleu", [](const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
    return bleu_dict(bleu(hyps, refs));
  }, py::arg("hypotheses"), py::arg("references"));

  m.def("train", [](const std::string& config_path, const std::vector<std::string>& overrides,
                    bool resume, std::function<void(const std::string&)> report) {
    RunConfig c = RunConfig::load(config_path);
    c.apply_overrides(overrides);
    TrainSummary s;
    {
      py::gil_scoped_release release;
      std::function<void(const std::string&)> relay;
      if (report) {
        relay = [&](const std::string& line) {
          py::gil_scoped_acquire acquire;
          report(line);
        };
      }
      s = run_training(c, resume, relay);
    }
    py::dict d;
    d["steps"] = s.steps;
    d["last_loss"] = s.last_loss;
    d["best_bleu"] = s.progress.best_bleu;
    d["best_nll"] = s.progress.best_nll;
    d["best_step"] = s.progress.best_step;
    return d;
  }, py::arg("config"), py::arg("overrides") = std::vector<std::string>{},
     py::arg("resume") = false, py::arg("report") = nullptr);

  m.def("checkpoint_precision", [](const std::string& dir) {
    return checkpoint_precision(dir) == Precision::wide ? "wide" : "narrow";
  });

  py::class_<Translator>(m, "Translator")
      .def(py::init<const std::vector<std::string>&>(), py::arg("checkpoints"))
      .def("translate", &Translator::translate, py::arg("lines"), py::arg("beam") = 1,
           py::arg("max_len") = 0, py::arg("normalize") = false)
      .def("__len__", &Translator::size)
      .def_property_readonly("source_vocab", [](const Translator& t) { return t.pipeline().source_vocab; })
      .def_property_readonly("target_vocab", [](const Translator& t) { return t.pipeline().target_vocab; });

  m.attr("__version__") = "0.1.0";
}
