// Python bindings: metrics, the synthetic generator, and the train / eval /
// predict paths of the command-line tool. Arrays are float64 numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fathom/checkpoint.hpp"
#include "fathom/config.hpp"
#include "fathom/errors.hpp"
#include "fathom/federated.hpp"
#include "fathom/metrics.hpp"
#include "json.hpp"

namespace py = pybind11;
using namespace fathom;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  std::vector<std::size_t> dims(a.shape(), a.shape() + a.ndim());
  return Tensor(Shape(dims), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> dims;
  for (std::size_t i = 0; i < t.shape().rank(); ++i) dims.push_back(static_cast<py::ssize_t>(t.shape()[i]));
  Array out(dims);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Array to_array(const std::vector<double>& v, std::vector<py::ssize_t> dims) {
  Array out(dims);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::dict report_dict(const ClassificationReport& r) {
  py::dict d;
  d["precision"] = r.precision;
  d["recall"] = r.recall;
  d["f1"] = r.f1;
  d["balanced_accuracy"] = r.balanced_accuracy;
  py::list labels;
  for (const auto& l : r.per_label) {
    py::dict m;
    m["precision"] = l.precision;
    m["recall"] = l.recall;
    m["f1"] = l.f1;
    m["balanced_accuracy"] = l.balanced_accuracy;
    m["tp"] = l.counts.tp;
    m["fp"] = l.counts.fp;
    m["tn"] = l.counts.tn;
    m["fn"] = l.counts.fn;
    labels.append(m);
  }
  d["per_label"] = labels;
  return d;
}

py::object json_to_py(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

std::string py_to_json(const py::object& obj) {
  if (py::isinstance<py::str>(obj)) return obj.cast<std::string>();
  return py::module_::import("json").attr("dumps")(obj).cast<std::string>();
}

// Same steps as `fathom train`, without touching the file system.
py::dict py_train(const py::object& config, std::size_t workers) {
  const auto run = parse_run_config(py_to_json(config));
  std::string report, checkpoint;
  {
    py::gil_scoped_release release;
    auto data = load_run_data(run);
    const auto model = data.model;
    const auto echo = run_config_json(run);
    Federation fed(model, std::move(data.tasks), train_config(run, workers));
    report = report_json(fed.fit(), echo);
    checkpoint = checkpoint_json({model, fed.params(), echo});
  }
  py::dict out;
  out["report"] = json_to_py(report);
  out["checkpoint"] = checkpoint;
  return out;
}

std::unique_ptr<Federation> federation_for(const Checkpoint& ck, const RunConfig& run, std::size_t workers) {
  auto data = load_run_data(run);
  if (data.model.tasks.size() != ck.model.tasks.size()) throw DimensionError("task count differs from the checkpoint");
  return std::make_unique<Federation>(ck.model, std::move(data.tasks), train_config(run, workers), ck.params);
}

py::dict py_evaluate(const std::string& checkpoint, const py::object& config, std::size_t workers) {
  const auto ck = checkpoint_from_json(checkpoint);
  const auto run = parse_run_config(config.is_none() ? ck.run_config : py_to_json(config));
  TrainingReport report;
  {
    py::gil_scoped_release release;
    auto fed = federation_for(ck, run, workers);
    report.variant = std::string(to_string(ck.model.variant));
    report.tasks = task_metrics(fed->evaluate(2), ck.model.tasks);
    summarize(report);
  }
  auto j = json_to_py(report_json(report)).cast<py::dict>();
  py::dict out;
  out["variant"] = j["variant"];
  out["tasks"] = j["tasks"];
  out["macro"] = j["macro"];
  return out;
}

// Single-graph forward pass on caller-supplied windows, one array per task.
py::dict py_predict(const std::string& checkpoint, const std::vector<Array>& inputs) {
  const auto ck = checkpoint_from_json(checkpoint);
  if (inputs.size() != ck.model.tasks.size()) {
    throw DimensionError("expected " + std::to_string(ck.model.tasks.size()) + " input arrays, found " +
                         std::to_string(inputs.size()));
  }
  std::vector<Tensor> xs;
  for (const auto& a : inputs) xs.push_back(to_tensor(a));
  ForwardResult out;
  {
    NoGradGuard guard;
    out = forward(ck.model, ck.params, xs, Mode::eval);
  }
  py::dict d;
  py::list preds, sensor;
  for (const auto& p : out.predictions) preds.append(to_array(p));
  for (const auto& s : out.sensor_attention) sensor.append(s.defined() ? py::object(to_array(s)) : py::none());
  d["predictions"] = preds;
  d["sensor_attention"] = sensor;
  d["time_attention"] = out.time_attention.defined() ? py::object(to_array(out.time_attention)) : py::none();
  return d;
}

py::dict py_synth(std::size_t tasks, std::size_t windows, std::size_t window, std::size_t features, std::size_t labels,
               std::uint64_t seed, const std::string& kind, double noise, double marker, double pulse_fraction,
               double absent_fraction) {
  SynthConfig c;
  c.tasks = tasks;
  c.windows = windows;
  c.window = window;
  c.features = features;
  c.labels = labels;
  c.seed = seed;
  c.kind = parse_task_kind(kind);
  c.noise = noise;
  c.marker = marker;
  c.pulse_fraction = pulse_fraction;
  c.absent_fraction = absent_fraction;
  c.validate();
  const auto data = synth_generate(c);
  py::list xs, ys;
  const auto n = static_cast<py::ssize_t>(windows);
  for (const auto& t : data.tasks) {
    xs.append(to_array(t.x, {n, static_cast<py::ssize_t>(window), static_cast<py::ssize_t>(features)}));
    ys.append(to_array(t.y, {n, static_cast<py::ssize_t>(labels)}));
  }
  py::dict out;
  out["x"] = xs;
  out["y"] = ys;
  out["manifest"] = json_to_py(manifest_to_json(data.manifest));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Federated multi-task hierarchical attention for sensor time series";

  // Translators run newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("variants", [] {
    std::vector<std::string> names;
    for (auto v : {ModelVariant::fathom, ModelVariant::fathom_sa, ModelVariant::fathom_ca, ModelVariant::s_lstm,
                   ModelVariant::m_lstm, ModelVariant::lr, ModelVariant::mlp_16_16}) {
      names.emplace_back(to_string(v));
    }
    return names;
  });

  m.def(
      "classification_metrics",
      [](const Array& predicted, const Array& labels, double threshold) {
        return report_dict(classification_metrics(to_tensor(predicted), to_tensor(labels), threshold));
      },
      py::arg("predicted"), py::arg("labels"), py::arg("threshold") = 0.5,
      "Per-label and label-macro precision, recall, F1 and balanced accuracy of [N, M] arrays.");
  m.def(
      "smape", [](const Array& predicted, const Array& labels) { return smape(to_tensor(predicted), to_tensor(labels)); },
      py::arg("predicted"), py::arg("labels"));

  m.def("synth", &py_synth, py::arg("tasks") = 3, py::arg("windows") = 600, py::arg("window") = 10,
        py::arg("features") = 8, py::arg("labels") = 2, py::arg("seed") = 1, py::arg("kind") = "classification",
        py::arg("noise") = 0.1, py::arg("marker") = 0.4, py::arg("pulse_fraction") = 0.25,
        py::arg("absent_fraction") = 0.1,
        "Synthetic benchmark: per-task window arrays x [N, T, D], y [N, M] and the ground-truth manifest.");

  m.def("train", &py_train, py::arg("config"), py::arg("workers") = 0,
        "Train from a run config (JSON text or dict). Returns the report dict and the checkpoint JSON text.");
  m.def("evaluate", &py_evaluate, py::arg("checkpoint"), py::arg("config") = py::none(), py::arg("workers") = 0,
        "Test-split metrics of a checkpoint, on its own run config unless one is given.");
  m.def("predict", &py_predict, py::arg("checkpoint"), py::arg("inputs"),
        "Predictions and attention weights for one [N, T, D_k] array per task.");
}
