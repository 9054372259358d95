// Copyright 2026 The ctcslu Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ctcslu/corpus.hpp"
#include "ctcslu/ctc.hpp"
#include "ctcslu/decode.hpp"
#include "ctcslu/error.hpp"
#include "ctcslu/experiment.hpp"
#include "ctcslu/lm.hpp"
#include "ctcslu/metrics.hpp"
#include "ctcslu/model.hpp"
#include "ctcslu/synthcorpus.hpp"
#include "ctcslu/tagcodec.hpp"
#include "ctcslu/train.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace ctcslu;

namespace {

py::object to_python(const nlohmann::ordered_json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

tagcodec::BioTranscript make_bio(const std::vector<std::string>& words,
                                 const std::vector<std::string>& labels) {
  if (words.size() != labels.size()) {
    throw Error(ErrorKind::kUsage, "words and labels differ in length");
  }
  tagcodec::BioTranscript bio;
  for (std::size_t i = 0; i < words.size(); ++i) {
    bio.push_back(tagcodec::make_bio_token(words[i], labels[i]));
  }
  return bio;
}

py::tuple ctc_result(const ctc::CtcResult& r) { return py::make_tuple(r.loss, r.grad); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "CTC slot filling: tag codec, CTC loss, BLSTM model, LM, decoding and metrics";

  static PyObject* error_type =
      py::exception<Error>(m, "Error", PyExc_RuntimeError).release().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object instance = py::reinterpret_borrow<py::object>(error_type)(e.what());
      instance.attr("kind") = error_kind_name(e.kind());
      instance.attr("exit_code") = e.exit_code();
      PyErr_SetObject(error_type, instance.ptr());
    }
  });

  // tag codec
  py::class_<tagcodec::TagInventory>(m, "TagInventory")
      .def(py::init<std::vector<std::string>>(), py::arg("tags"))
      .def_static("read", &tagcodec::TagInventory::read, py::arg("path"))
      .def("write", &tagcodec::TagInventory::write, py::arg("path"))
      .def_property_readonly("tags", &tagcodec::TagInventory::tags)
      .def_property_readonly("closing_symbol",
                             [](const tagcodec::TagInventory& t) {
                               return std::u32string(1, t.closing_symbol());
                             })
      .def("opening_symbol",
           [](const tagcodec::TagInventory& t, const std::string& tag) {
             return std::u32string(1, t.opening_symbol(tag));
           },
           py::arg("tag"))
      .def("__len__", &tagcodec::TagInventory::size)
      .def("__contains__", &tagcodec::TagInventory::contains)
      .def("__eq__", [](const tagcodec::TagInventory& a, const tagcodec::TagInventory& b) {
        return a == b;
      })
      .def("__repr__", [](const tagcodec::TagInventory& t) {
        return "TagInventory(" + std::to_string(t.size()) + " tags)";
      });

  py::class_<tagcodec::Vocabulary>(m, "Vocabulary")
      .def_static(
          "build",
          [](const std::u32string& graphemes, const tagcodec::TagInventory& tags, bool star) {
            return tagcodec::Vocabulary::build(graphemes, tags, star);
          },
          py::arg("graphemes"), py::arg("tags") = tagcodec::TagInventory(),
          py::arg("star") = false)
      .def_static("read", &tagcodec::Vocabulary::read_file, py::arg("path"))
      .def("write", &tagcodec::Vocabulary::write_file, py::arg("path"))
      .def("__len__", &tagcodec::Vocabulary::size)
      .def_property_readonly("has_star", &tagcodec::Vocabulary::has_star)
      .def_property_readonly("has_tags", &tagcodec::Vocabulary::has_tags)
      .def_property_readonly("star", &tagcodec::Vocabulary::star)
      .def_property_readonly("graphemes", &tagcodec::Vocabulary::base_graphemes)
      .def_property_readonly("tag_inventory", &tagcodec::Vocabulary::tag_inventory)
      .def("with_star", &tagcodec::Vocabulary::with_star)
      .def("without_star", &tagcodec::Vocabulary::without_star)
      .def("symbol",
           [](const tagcodec::Vocabulary& v, int id) {
             return std::u32string(1, v.unit(id).symbol);
           },
           py::arg("id"))
      .def("encode",
           [](const tagcodec::Vocabulary& v, const std::u32string& text) {
             return tagcodec::encode(std::u32string_view(text), v);
           },
           py::arg("text"))
      .def("render",
           [](const tagcodec::Vocabulary& v, const std::vector<int>& ids) { return v.render(ids); },
           py::arg("ids"))
      .def("__eq__", [](const tagcodec::Vocabulary& a, const tagcodec::Vocabulary& b) {
        return a == b;
      })
      .def("__repr__", [](const tagcodec::Vocabulary& v) {
        return "Vocabulary(" + std::to_string(v.size()) + " units" +
               (v.has_star() ? ", star)" : ")");
      });

  m.def("bio_to_chunk",
        [](const std::vector<std::string>& words, const std::vector<std::string>& labels,
           const tagcodec::TagInventory& inventory) {
          return tagcodec::bio_to_chunk(make_bio(words, labels), inventory).text;
        },
        py::arg("words"), py::arg("labels"), py::arg("inventory"),
        "Chunked transcript of a BIO-labelled word sequence");
  m.def("chunk_to_bio",
        [](const std::u32string& text, const tagcodec::TagInventory& inventory) {
          std::vector<std::pair<std::string, std::string>> out;
          for (const auto& t : tagcodec::chunk_to_bio({text}, inventory)) {
            out.emplace_back(t.word, t.label());
          }
          return out;
        },
        py::arg("text"), py::arg("inventory"), "(word, label) pairs of a chunked transcript");
  m.def("strip_tags",
        [](const std::u32string& text, const tagcodec::TagInventory& inventory) {
          return tagcodec::strip_tags(text, inventory);
        },
        py::arg("text"), py::arg("inventory"));
  m.def("star_map",
        [](const std::vector<int>& labels, const tagcodec::Vocabulary& vocab) {
          return tagcodec::star_map(labels, vocab);
        },
        py::arg("labels"), py::arg("vocab"));
  m.def("parse_chunks",
        [](const std::u32string& text, const tagcodec::TagInventory& inventory) {
          std::vector<std::pair<std::string, std::string>> out;
          for (const auto& c : tagcodec::parse_chunks(text, inventory)) {
            out.emplace_back(c.tag, c.value);
          }
          return out;
        },
        py::arg("text"), py::arg("inventory"), "(tag, value) pairs, repairing malformed input");

  // CTC
  m.def("log_softmax", &ctc::log_softmax_rows, py::arg("logits"));
  m.def("ctc_loss",
        [](const ctc::LogProbMatrix& p, const std::vector<int>& labels) {
          return ctc_result(ctc::ctc_loss(p, labels));
        },
        py::arg("log_probs"), py::arg("labels"),
        "(loss, gradient with respect to the logits) for a T x V log-probability matrix");
  m.def("ctc_star_loss",
        [](const ctc::LogProbMatrix& p, const std::vector<int>& labels,
           const tagcodec::Vocabulary& vocab) {
          return ctc_result(ctc::ctc_star_loss(p, labels, vocab));
        },
        py::arg("log_probs"), py::arg("labels"), py::arg("vocab"));
  m.def("brute_force_ctc",
        [](const ctc::LogProbMatrix& p, const std::vector<int>& labels) {
          return ctc::brute_force_ctc(p, labels);
        },
        py::arg("log_probs"), py::arg("labels"));

  // model
  py::class_<model::Checkpoint>(m, "Checkpoint")
      .def_static("load", &model::load_checkpoint, py::arg("path"))
      .def_static(
          "initialize",
          [](const py::object& network, const tagcodec::Vocabulary& vocab, std::uint64_t seed) {
            auto config = from_python(network).get<model::NetworkConfig>();
            config.output_units = static_cast<int>(vocab.size());
            return model::initialize(config, vocab, seed);
          },
          py::arg("network"), py::arg("vocab"), py::arg("seed") = 1)
      .def("save", [](const model::Checkpoint& c, const fs::path& p) { model::save_checkpoint(c, p); },
           py::arg("path"))
      .def_readonly("vocabulary", &model::Checkpoint::vocabulary)
      .def_property_readonly("network",
                             [](const model::Checkpoint& c) {
                               nlohmann::json j = c.config;
                               return to_python(j);
                             })
      .def_property_readonly("parameter_count",
                             [](const model::Checkpoint& c) {
                               std::size_t n = 0;
                               for (const auto& t : c.parameters.tensors()) {
                                 n += static_cast<std::size_t>(t.value.size());
                               }
                               return n;
                             })
      .def(
          "forward",
          [](const model::Checkpoint& c, const Eigen::MatrixXd& features,
             const std::optional<Eigen::VectorXd>& speaker) {
            py::gil_scoped_release release;
            return model::forward(c, {features, speaker});
          },
          py::arg("features"), py::arg("speaker_vector") = std::nullopt,
          "Log posteriors (frames x units) for a frames x input_dim feature matrix");

  // language model
  py::class_<lm::NgramModel>(m, "NgramModel")
      .def_static(
          "estimate",
          [](const std::vector<std::u32string>& sentences, int order) {
            std::vector<lm::Sentence> corpus;
            for (const auto& s : sentences) corpus.push_back(lm::tokenize(s));
            return lm::NgramModel::estimate(corpus, order);
          },
          py::arg("sentences"), py::arg("order"))
      .def_static("read",
                  [](const fs::path& p) { return lm::NgramModel::read_arpa(p); }, py::arg("path"))
      .def("write", [](const lm::NgramModel& lm, const fs::path& p) { lm.write_arpa(p); },
           py::arg("path"))
      .def_property_readonly("order", &lm::NgramModel::order)
      .def("ngram_count", &lm::NgramModel::ngram_count, py::arg("n"))
      .def(
          "sentence_log_prob",
          [](const lm::NgramModel& lm, const std::u32string& text) {
            return lm.sentence_log_prob(lm::tokenize(text));
          },
          py::arg("text"), "Natural-log probability including the end of sentence");

  // decoding
  m.def("greedy_decode", &decode::greedy_decode, py::arg("log_probs"), py::arg("vocab"));
  m.def(
      "beam_decode",
      [](const ctc::LogProbMatrix& p, const tagcodec::Vocabulary& vocab, const lm::NgramModel* lm,
         int width, double alpha, double beta, bool monotone) {
        decode::BeamConfig bc;
        bc.width = width;
        bc.lm_weight = alpha;
        bc.insertion_bonus = beta;
        bc.monotone = monotone;
        if (lm) decode::check_lm_compatibility(vocab, *lm);
        decode::DecodeResult r;
        {
          py::gil_scoped_release release;
          r = decode::beam_decode(p, vocab, lm, bc);
        }
        return py::make_tuple(r.text, r.score, r.labels);
      },
      py::arg("log_probs"), py::arg("vocab"), py::arg("lm") = nullptr, py::arg("width") = 8,
      py::arg("alpha") = 0.0, py::arg("beta") = 0.0, py::arg("monotone") = true,
      "(text, score, labels) of the best prefix");

  // metrics
  m.def("edit_distance",
        [](const std::u32string& a, const std::u32string& b) { return metrics::edit_distance(a, b); },
        py::arg("a"), py::arg("b"));
  m.def(
      "evaluate",
      [](const std::vector<std::u32string>& refs, const std::vector<std::u32string>& hyps,
         const tagcodec::TagInventory& inventory, const std::string& prf_mode) {
        if (refs.size() != hyps.size()) {
          throw Error(ErrorKind::kUsage, "references and hypotheses differ in count");
        }
        if (prf_mode != "tag" && prf_mode != "tag-value") {
          throw Error(ErrorKind::kUsage, "prf_mode must be 'tag' or 'tag-value'");
        }
        metrics::Evaluator ev(inventory, prf_mode == "tag" ? metrics::MatchMode::kTag
                                                           : metrics::MatchMode::kTagValue);
        for (std::size_t i = 0; i < refs.size(); ++i) ev.add(refs[i], hyps[i]);
        return to_python(metrics::to_json(ev.report()));
      },
      py::arg("references"), py::arg("hypotheses"), py::arg("inventory"),
      py::arg("prf_mode") = "tag-value", "Corpus-level metrics report as a dict");

  // corpora and training
  m.def(
      "generate_corpus",
      [](const fs::path& out, const std::optional<fs::path>& spec_path, int train, int dev,
         int test, std::optional<std::uint64_t> seed) {
        auto spec = spec_path ? synth::GeneratorSpec::read(*spec_path)
                              : synth::GeneratorSpec::desk_default();
        if (seed) spec.seed = *seed;
        synth::write_corpus(out, spec, synth::generate(spec, {train, dev, test}));
      },
      py::arg("out"), py::arg("spec") = std::nullopt, py::arg("train") = 2000,
      py::arg("dev") = 200, py::arg("test") = 200, py::arg("seed") = std::nullopt,
      "Writes a synthetic corpus directory");
  m.def(
      "read_split",
      [](const fs::path& path) {
        py::list out;
        for (const auto& u : corpus::read_split(path)) {
          py::dict d;
          d["id"] = u.id;
          d["speaker"] = u.speaker;
          d["transcript"] = u.transcript;
          py::list bio;
          for (const auto& t : u.bio) bio.append(py::make_tuple(t.word, t.label()));
          d["bio"] = bio;
          d["features"] = u.features;
          out.append(d);
        }
        return out;
      },
      py::arg("path"), "Utterances of a JSONL split as dicts");
  m.def(
      "run_experiment",
      [](const fs::path& config_path, std::optional<std::uint64_t> seed, std::optional<int> jobs,
         const std::function<void(py::dict)>& on_epoch) {
        auto cfg = experiment::ExperimentConfig::read(config_path);
        if (seed) cfg.override_seed(*seed);
        if (jobs) cfg.override_jobs(*jobs);
        cfg.validate();
        train::ChainSpec spec = experiment::load_chain(cfg);
        if (cfg.init_checkpoint) spec.init = model::load_checkpoint(cfg.resolve(*cfg.init_checkpoint));
        const fs::path out = cfg.resolve(cfg.output_dir);
        train::ChainResult result;
        {
          py::gil_scoped_release release;
          result = train::run_chain(spec, out, [&](const train::EpochRecord& r) {
            if (!on_epoch) return;
            py::gil_scoped_acquire acquire;
            on_epoch(to_python(train::to_json(r)).cast<py::dict>());
          });
        }
        cfg.write(out / "config.json");
        py::list stages;
        for (std::size_t i = 0; i < result.stages.size(); ++i) {
          const auto& s = result.stages[i];
          py::dict d;
          d["name"] = spec.stages[i].name;
          d["checkpoint"] = out / (std::to_string(i) + "_" + spec.stages[i].name + ".ckpt");
          d["best_epoch"] = s.best_epoch;
          d["skipped"] = s.skipped;
          py::list history;
          for (const auto& r : s.history) history.append(to_python(train::to_json(r)));
          d["history"] = history;
          stages.append(d);
        }
        return stages;
      },
      py::arg("config"), py::arg("seed") = std::nullopt, py::arg("jobs") = std::nullopt,
      py::arg("on_epoch") = nullptr,
      "Trains every stage of an experiment config and returns per-stage summaries");
}
