/*
 * Copyright 2026 The StarPrompt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "starprompt/errors.hpp"
#include "starprompt/experiment.hpp"
#include "starprompt/gmm.hpp"
#include "starprompt/metrics.hpp"
#include "starprompt/trainer.hpp"
#include "starprompt/verification.hpp"

namespace py = pybind11;
using namespace starprompt;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() == 1) {
    return Tensor::from_data(1, static_cast<std::size_t>(a.shape(0)), std::vector<double>(a.data(), a.data() + a.size()));
  }
  if (a.ndim() != 2) throw ShapeError("expected a 1-d or 2-d array, got " + std::to_string(a.ndim()) + " dims");
  return Tensor::from_data(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                           std::vector<double>(a.data(), a.data() + a.size()));
}

AccuracyMatrix to_matrix(const std::vector<std::vector<std::optional<double>>>& rows) {
  AccuracyMatrix m(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t j = 0; j < rows[t].size() && j <= t; ++j)
      if (rows[t][j]) m.set(t, j, *rows[t][j]);
  return m;
}

py::object optional_value(const std::optional<double>& v) {
  return v ? py::object(py::float_(*v)) : py::object(py::none());
}

py::dict summary_dict(const Summary& s) {
  py::dict d;
  d["mean"] = s.mean;
  d["std"] = s.std;
  return d;
}

py::dict report_dict(const RunReport& r) {
  py::list seeds;
  for (const SeedResult& s : r.seeds) {
    py::list acc;
    for (std::size_t t = 0; t < s.accuracy.tasks(); ++t) {
      py::list row;
      for (std::size_t j = 0; j < s.accuracy.tasks(); ++j)
        row.append(s.accuracy.has(t, j) ? py::object(py::float_(s.accuracy.at(t, j))) : py::object(py::none()));
      acc.append(row);
    }
    py::dict e;
    e["seed"] = s.seed;
    e["faa"] = s.faa;
    e["final_forgetting"] = optional_value(s.final_forgetting);
    e["accuracy"] = acc;
    e["confusion"] = s.final_confusion.matrix;
    e["first_task_precision"] = s.first_task_precision;
    e["stage2_train_accuracy"] = s.stage2_train_accuracy;
    seeds.append(e);
  }
  py::dict d;
  d["variant"] = r.variant;
  d["faa"] = summary_dict(r.faa);
  d["final_forgetting"] = r.final_forgetting ? py::object(summary_dict(*r.final_forgetting)) : py::object(py::none());
  d["seeds"] = seeds;
  return d;
}

ConfigEntries entries(const std::map<std::string, std::string>& overrides) {
  return ConfigEntries(overrides.begin(), overrides.end());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-level prompt continual learning on frozen encoders";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<StateError>(m, "StateError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<LabelError>(m, "LabelError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  py::class_<EncoderConfig>(m, "EncoderConfig")
      .def(py::init<>())
      .def_readwrite("d", &EncoderConfig::d)
      .def_readwrite("d_prime", &EncoderConfig::d_prime)
      .def_readwrite("layers", &EncoderConfig::layers)
      .def_readwrite("heads", &EncoderConfig::heads)
      .def_readwrite("seq_len", &EncoderConfig::seq_len)
      .def_readwrite("patch_dim", &EncoderConfig::patch_dim)
      .def_readwrite("mlp_ratio", &EncoderConfig::mlp_ratio)
      .def_readwrite("tau", &EncoderConfig::tau)
      .def_property_readonly("input_dim", &EncoderConfig::input_dim)
      .def("validate", &EncoderConfig::validate);

  py::class_<Hyperparams>(m, "Hyperparams")
      .def(py::init<>())
      .def_readwrite("epochs_main", &Hyperparams::epochs_main)
      .def_readwrite("epochs_replay", &Hyperparams::epochs_replay)
      .def_readwrite("lambda_stage1", &Hyperparams::lambda_stage1)
      .def_readwrite("lambda_stage2", &Hyperparams::lambda_stage2)
      .def_readwrite("lr_stage1", &Hyperparams::lr_stage1)
      .def_readwrite("lr_stage2", &Hyperparams::lr_stage2)
      .def_readwrite("components", &Hyperparams::components)
      .def_readwrite("n_replay", &Hyperparams::n_replay)
      .def_readwrite("batch_size", &Hyperparams::batch_size)
      .def("validate", &Hyperparams::validate);

  m.def("preset", [](const std::string& name) { return preset(name); }, py::arg("name"));
  m.def("preset_names", &preset_names);
  m.def("variant_names", &VariantFlags::all_names);

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def_readwrite("hyperparams", &ExperimentConfig::hyperparams)
      .def_readwrite("encoder", &ExperimentConfig::encoder)
      .def_readwrite("seeds", &ExperimentConfig::seeds)
      .def_readwrite("out", &ExperimentConfig::out)
      .def_property_readonly("variant", [](const ExperimentConfig& c) { return c.variant.name(); })
      .def("set", [](ExperimentConfig& c, const std::string& key, const std::string& value) {
        apply_config_key(c, key, value);
      });

  m.def("config_keys", &config_keys);
  m.def("parse_config",
        [](const std::string& text, const std::map<std::string, std::string>& overrides) {
          return parse_config(text, entries(overrides));
        },
        py::arg("text"), py::arg("overrides") = std::map<std::string, std::string>{});
  m.def("load_config",
        [](const std::filesystem::path& path, const std::map<std::string, std::string>& overrides) {
          return load_config(path, entries(overrides));
        },
        py::arg("path"), py::arg("overrides") = std::map<std::string, std::string>{});

  m.def("run", [](const ExperimentConfig& c) {
    RunReport r;
    {
      py::gil_scoped_release release;
      r = run(c);
    }
    return report_dict(r);
  });
  m.def("ablate", [](const ExperimentConfig& c) {
    std::vector<RunReport> reports;
    {
      py::gil_scoped_release release;
      reports = ablate(c);
    }
    py::list out;
    for (const auto& r : reports) out.append(report_dict(r));
    return out;
  });

  m.def("gradcheck",
        [](std::uint64_t seed, std::size_t trials) {
          const GradSuiteReport r = run_gradcheck_suite(seed, trials);
          py::dict d;
          d["trials"] = r.trials;
          d["composite_failures"] = r.composite_failures;
          d["redrawn"] = r.redrawn;
          d["composite_max_rel_error"] = r.composite_max_rel_error;
          d["stage2_max_rel_error"] = r.stage2_max_rel_error;
          d["passed"] = r.passed;
          return d;
        },
        py::arg("seed") = 1993, py::arg("trials") = 100);

  m.def("faa", [](const std::vector<std::vector<std::optional<double>>>& a) { return faa(to_matrix(a)); });
  m.def("final_forgetting",
        [](const std::vector<std::vector<std::optional<double>>>& a) { return final_forgetting(to_matrix(a)); });

  m.def("fit_em",
        [](const Array& x, std::size_t components, std::uint64_t seed, const std::string& covariance,
           std::size_t max_iters, double tolerance) {
          EmConfig cfg;
          cfg.components = components;
          cfg.seed = seed;
          cfg.covariance = parse_covariance(covariance);
          cfg.max_iters = max_iters;
          cfg.tolerance = tolerance;
          const EmResult r = fit_em(to_tensor(x), cfg);
          py::dict d;
          d["weights"] = r.model.weights;
          d["means"] = r.model.means;
          d["covariances"] = r.model.covariances;
          d["log_likelihood"] = r.log_likelihood;
          d["converged"] = r.converged;
          return d;
        },
        py::arg("x"), py::arg("components") = 5, py::arg("seed") = 0, py::arg("covariance") = "diagonal",
        py::arg("max_iters") = 100, py::arg("tolerance") = 1e-4);

  py::class_<Trainer>(m, "Trainer")
      .def_static("load", &Trainer::load, py::arg("directory"))
      .def_property_readonly("tasks_trained", &Trainer::tasks_trained)
      .def_property_readonly("classes", [](const Trainer& t) { return t.codebooks().classes(); })
      .def("predict", [](const Trainer& t, const Array& x) {
        const Tensor xs = to_tensor(x);
        py::list out;
        for (const Prediction& p : t.predict_all(xs)) {
          py::dict d;
          d["class_id"] = p.class_id;
          d["selected_class"] = p.selected_class;
          d["logits"] = p.logits;
          out.append(d);
        }
        return out;
      });
}
