// SPDX-License-Identifier: Apache-2.0
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "lcl/config.hpp"
#include "lcl/error.hpp"
#include "lcl/eval.hpp"
#include "lcl/neighbors.hpp"
#include "lcl/pipeline.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace lcl;

namespace {

RunConfig config_or_snapshot(const fs::path& run_dir, const RunConfig* cfg) {
  if (cfg) return *cfg;
  return RunConfig::load(RunPaths{run_dir}.config());
}

ModelRef model_for(const fs::path& run_dir, const std::string& stage, const std::string& checkpoint,
                   const std::string& label) {
  if (checkpoint.empty()) return stage_model(RunPaths{run_dir}, stage);
  return ModelRef{label.empty() ? fs::path(checkpoint).stem().string() : label, checkpoint};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Link-context learning on synthetic class embeddings";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DependencyError>(m, "DependencyError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  py::class_<Rng>(m, "Rng")
      .def(py::init<std::uint64_t, std::uint64_t>(), py::arg("seed"), py::arg("stream") = 0)
      .def("split", py::overload_cast<std::uint64_t>(&Rng::split, py::const_), py::arg("id"))
      .def("split_named", py::overload_cast<std::string_view>(&Rng::split, py::const_), py::arg("name"))
      .def("next_u64", &Rng::next_u64)
      .def("uniform", &Rng::uniform)
      .def("normal", &Rng::normal)
      .def("below", &Rng::below, py::arg("n"));

  py::class_<UniverseConfig>(m, "UniverseConfig")
      .def(py::init<>())
      .def_readwrite("seed", &UniverseConfig::seed)
      .def_readwrite("n_train", &UniverseConfig::n_train)
      .def_readwrite("n_holdout", &UniverseConfig::n_holdout)
      .def_readwrite("dim", &UniverseConfig::dim)
      .def_readwrite("sigma_img", &UniverseConfig::sigma_img)
      .def_readwrite("sigma_txt", &UniverseConfig::sigma_txt);

  py::class_<ClassUniverse>(m, "ClassUniverse")
      .def_property_readonly("n_classes", &ClassUniverse::n_classes)
      .def_property_readonly("n_train", &ClassUniverse::n_train)
      .def_property_readonly("n_holdout", &ClassUniverse::n_holdout)
      .def_property_readonly("dim", &ClassUniverse::dim)
      .def("proto_img", [](const ClassUniverse& u, ClassId c) { return u.spec(c).proto_img; })
      .def("proto_txt", [](const ClassUniverse& u, ClassId c) { return u.spec(c).proto_txt; });
  m.def("create_universe", &create_universe, py::arg("config"));

  m.def("hard_negative_probability", &hard_negative_probability, py::arg("n"), py::arg("rank"));
  m.def("sample_hard_negative_rank", &sample_hard_negative_rank, py::arg("n"), py::arg("rng"));
  m.def(
      "shot_probabilities",
      [](int lo, int hi) { return ShotStrategy::weighted(lo, hi).probabilities(); },
      py::arg("lo") = 2, py::arg("hi") = 16, "Weighted shot-count law over lo..hi.");

  py::class_<RunConfig>(m, "RunConfig")
      .def_static("defaults", &RunConfig::defaults)
      .def_static("parse", &RunConfig::parse, py::arg("json_text"))
      .def_static("load", [](const fs::path& p) { return RunConfig::load(p); }, py::arg("path"))
      .def("set", &RunConfig::apply_override, py::arg("assignment"))
      .def("to_json", &RunConfig::to_json)
      .def("hash", &RunConfig::hash)
      .def("validate", &RunConfig::validate);

  m.def(
      "gen", [](const fs::path& run_dir, const RunConfig& cfg, bool force) { cmd_gen(cfg, run_dir, force); },
      py::arg("run_dir"), py::arg("config"), py::arg("force") = false);
  m.def(
      "train",
      [](const fs::path& run_dir, const std::string& stage, const RunConfig* cfg) {
        cmd_train(config_or_snapshot(run_dir, cfg), run_dir, stage);
      },
      py::arg("run_dir"), py::arg("stage"), py::arg("config") = nullptr);
  m.def(
      "evaluate",
      [](const fs::path& run_dir, const std::string& stage, const std::string& checkpoint,
         const std::string& label, const std::vector<std::string>& protocols, const RunConfig* cfg) {
        return cmd_eval(config_or_snapshot(run_dir, cfg), run_dir,
                        model_for(run_dir, stage, checkpoint, label), protocols);
      },
      py::arg("run_dir"), py::arg("stage") = "2way", py::arg("checkpoint") = "", py::arg("label") = "",
      py::arg("protocols") = std::vector<std::string>{}, py::arg("config") = nullptr);
  m.def(
      "ablate",
      [](const fs::path& run_dir, const std::string& which, const std::string& stage,
         const RunConfig* cfg) {
        return cmd_ablate(config_or_snapshot(run_dir, cfg), run_dir,
                          model_for(run_dir, stage, "", ""), which);
      },
      py::arg("run_dir"), py::arg("which"), py::arg("stage") = "2way", py::arg("config") = nullptr);
  m.def("report", &cmd_report, py::arg("run_dir"));

  m.def(
      "read_report",
      [](const fs::path& path) {
        py::list rows;
        for (const auto& r : read_report_csv(path).rows) {
          py::dict d;
          d["protocol"] = r.protocol;
          d["shots"] = r.shots;
          d["condition"] = r.condition;
          d["accuracy"] = r.accuracy;
          d["stderr"] = r.stderr_;
          d["n"] = r.n;
          rows.append(d);
        }
        return rows;
      },
      py::arg("path"), "Rows of a report CSV as dicts.");
  m.def(
      "load_checkpoint_info",
      [](const fs::path& path) {
        Checkpoint ck = load_checkpoint(path);
        py::dict d;
        d["d_model"] = ck.cfg.d_model;
        d["n_layers"] = ck.cfg.n_layers;
        d["n_heads"] = ck.cfg.n_heads;
        d["vocab"] = ck.cfg.vocab;
        d["max_seq"] = ck.cfg.max_seq;
        d["parameters"] = ck.params.parameter_count();
        d["optimizer_step"] = ck.has_optimizer ? ck.optimizer.step : 0;
        return d;
      },
      py::arg("path"));
}
