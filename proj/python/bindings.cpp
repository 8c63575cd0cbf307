#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>

#include "noisyforge/checkpoint.hpp"
#include "noisyforge/config.hpp"
#include "noisyforge/data.hpp"
#include "noisyforge/error.hpp"
#include "noisyforge/eval.hpp"
#include "noisyforge/model.hpp"
#include "noisyforge/noise.hpp"
#include "noisyforge/report.hpp"
#include "noisyforge/scan.hpp"
#include "noisyforge/train.hpp"

namespace py = pybind11;
using namespace noisyforge;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

FloatArray to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FloatArray out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

Dataset make_dataset(const FloatArray& images, std::vector<int> labels, std::size_t num_classes) {
  Dataset ds;
  ds.images = from_numpy(images);
  ds.labels = std::move(labels);
  ds.num_classes = num_classes;
  ds.source = "python";
  if (ds.images.rank() < 2 || ds.images.dim(0) != ds.labels.size()) {
    throw DimensionError("dataset: images must be [N x ...] with one label per row");
  }
  for (int l : ds.labels)
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) throw InputError("dataset: label out of range");
  return ds;
}

TrainConfig make_train_config(std::size_t epochs, std::size_t batch_size, double lr0, std::uint64_t seed,
                              const NoiseSchedule& schedule, bool log_clean_accuracy) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = batch_size;
  cfg.lr0 = lr0;
  cfg.seed = seed;
  cfg.schedule = schedule;
  cfg.log_clean_accuracy = log_clean_accuracy;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Noisy training and variance-aware noisy training at desk scale";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<FormatError>(m, "FormatError", error.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", error.ptr());
  py::register_exception<MissingPrerequisiteError>(m, "MissingPrerequisiteError", error.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", error.ptr());
  py::register_exception<UsageError>(m, "UsageError", error.ptr());
  py::register_exception<InputError>(m, "InputError", error.ptr());

  // noise

  py::enum_<SigmaRectify>(m, "SigmaRectify")
      .value("CLAMP", SigmaRectify::kClamp)
      .value("ABS", SigmaRectify::kAbs)
      .value("RESAMPLE", SigmaRectify::kResample);

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def_static("none", &NoiseSchedule::none)
      .def_static("fixed", &NoiseSchedule::fixed, py::arg("sigma_train"))
      .def_static("variance_aware", &NoiseSchedule::variance_aware, py::arg("sigma_train"), py::arg("alpha"),
                  py::arg("theta"), py::arg("rectify") = SigmaRectify::kClamp)
      .def("describe", &NoiseSchedule::describe)
      .def("__repr__", &NoiseSchedule::describe)
      .def(py::self == py::self);

  m.def(
      "sample_sigma_var",
      [](const NoiseSchedule& s, std::size_t n, std::uint64_t seed) {
        const RngStream base(seed, {Purpose::kSigmaVar, 0, 0, 0, 0});
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = sample_sigma_var(s, base.with_sample(i));
        return out;
      },
      py::arg("schedule"), py::arg("n"), py::arg("seed") = 0, "Per-image noise levels for n images.");

  m.def(
      "sample_activation_noise",
      [](std::vector<std::size_t> shape, double sigma, std::uint64_t seed) {
        return to_numpy(sample_activation_noise(Shape(shape.begin(), shape.end()), sigma,
                                                RngStream(seed, {Purpose::kEvalNoise, 0, 0, 0, 0})));
      },
      py::arg("shape"), py::arg("sigma"), py::arg("seed") = 0);

  // data

  py::class_<Dataset>(m, "Dataset")
      .def(py::init(&make_dataset), py::arg("images"), py::arg("labels"), py::arg("num_classes"))
      .def_property_readonly("images", [](const Dataset& d) { return to_numpy(d.images); })
      .def_readonly("labels", &Dataset::labels)
      .def_readonly("num_classes", &Dataset::num_classes)
      .def_readonly("source", &Dataset::source)
      .def_property_readonly("sample_shape", [](const Dataset& d) { return d.sample_shape(); })
      .def("__len__", &Dataset::size);

  m.def("synthetic_blobs", &synthetic_blobs, py::arg("num_classes"), py::arg("n_per_class"), py::arg("dim"),
        py::arg("separation"), py::arg("seed"), "Returns (train, test).");
  m.def("synthetic_images", &synthetic_images, py::arg("num_classes"), py::arg("n_per_class"), py::arg("channels"),
        py::arg("height"), py::arg("width"), py::arg("pixel_noise"), py::arg("seed"), "Returns (train, test).");
  m.def("load_cifar10", &load_cifar10_binary, py::arg("dir"), py::call_guard<py::gil_scoped_release>());
  m.def(
      "load_idx",
      [](const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t num_classes) {
        return load_idx(images, labels, num_classes);
      },
      py::arg("images"), py::arg("labels"), py::arg("num_classes") = 10);
  m.def("subsample", &subsample, py::arg("dataset"), py::arg("n"), py::arg("seed"));

  // model

  py::class_<ModelGraph>(m, "Model")
      .def_property_readonly("input_shape", &ModelGraph::input_shape)
      .def_property_readonly("num_classes", &ModelGraph::num_classes)
      .def_property_readonly("injection_points", &ModelGraph::injection_points)
      .def_property_readonly("parameter_count", &ModelGraph::parameter_count)
      .def("parameters", [](const ModelGraph& g) {
        py::list out;
        for (const auto& p : g.parameters()) out.append(to_numpy(p));
        return out;
      })
      .def("clone", &ModelGraph::clone)
      .def("forward",
           [](const ModelGraph& g, const FloatArray& batch) { return to_numpy(forward(g, from_numpy(batch))); },
           py::arg("batch"), "Clean logits for a batch.")
      .def("predict", [](const ModelGraph& g, const FloatArray& batch) {
        return predict_labels(forward(g, from_numpy(batch)));
      });

  m.def(
      "build_model",
      [](const std::string& preset, std::vector<std::size_t> input_shape, std::size_t num_classes,
         std::uint64_t seed, bool logit_noise, bool inject_after_pool) {
        return build_preset(preset, Shape(input_shape.begin(), input_shape.end()), num_classes, seed,
                            {true, inject_after_pool, logit_noise});
      },
      py::arg("preset"), py::arg("input_shape"), py::arg("num_classes"), py::arg("seed") = 0,
      py::arg("logit_noise") = true, py::arg("inject_after_pool") = false);
  m.def("save_checkpoint", &save_checkpoint, py::arg("model"), py::arg("path"));
  m.def(
      "load_checkpoint", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"));

  // train

  py::class_<EpochRecord>(m, "EpochRecord")
      .def_readonly("epoch", &EpochRecord::epoch)
      .def_readonly("loss", &EpochRecord::loss)
      .def_readonly("clean_accuracy", &EpochRecord::clean_accuracy)
      .def_readonly("lr", &EpochRecord::lr);

  m.def(
      "train",
      [](const ModelGraph& model, const Dataset& data, std::size_t epochs, std::size_t batch_size, double lr0,
         std::uint64_t seed, const NoiseSchedule& schedule, bool log_clean_accuracy) {
        const TrainConfig cfg = make_train_config(epochs, batch_size, lr0, seed, schedule, log_clean_accuracy);
        TrainResult r = [&] {
          py::gil_scoped_release release;
          return train(model, data, cfg);
        }();
        return py::make_tuple(std::move(r.model), std::move(r.log));
      },
      py::arg("model"), py::arg("data"), py::arg("epochs") = 60, py::arg("batch_size") = 128,
      py::arg("lr0") = 0.001, py::arg("seed") = 0, py::arg("schedule") = NoiseSchedule::none(),
      py::arg("log_clean_accuracy") = true, "Returns (trained_model, log). The input model is not modified.");

  // eval

  py::class_<RobustnessCurve>(m, "RobustnessCurve")
      .def(py::init([](std::vector<double> sigmas, std::vector<double> mean, std::vector<double> stddev,
                       std::size_t repeats, double clean) {
             RobustnessCurve c;
             c.sigmas = std::move(sigmas);
             c.mean_accuracy = std::move(mean);
             c.std_accuracy = stddev.empty() ? std::vector<double>(c.sigmas.size(), 0.0) : std::move(stddev);
             c.repeats = repeats;
             c.clean_accuracy = clean;
             c.validate();
             return c;
           }),
           py::arg("sigmas"), py::arg("mean_accuracy"), py::arg("std_accuracy") = std::vector<double>{},
           py::arg("repeats") = 1, py::arg("clean_accuracy") = 0.0)
      .def_readonly("sigmas", &RobustnessCurve::sigmas)
      .def_readonly("mean_accuracy", &RobustnessCurve::mean_accuracy)
      .def_readonly("std_accuracy", &RobustnessCurve::std_accuracy)
      .def_readonly("repeats", &RobustnessCurve::repeats)
      .def_readonly("clean_accuracy", &RobustnessCurve::clean_accuracy)
      .def("to_csv", &curve_csv);

  py::class_<UpperBoundCurve>(m, "UpperBoundCurve")
      .def(py::init([](const RobustnessCurve& c, std::vector<std::string> provenance) {
             return UpperBoundCurve{c, std::move(provenance)};
           }),
           py::arg("curve"), py::arg("provenance"))
      .def_readonly("curve", &UpperBoundCurve::curve)
      .def_readonly("provenance", &UpperBoundCurve::provenance)
      .def("to_csv", &upper_bound_csv);

  m.def("sigma_grid", &sigma_grid, py::arg("min") = 0.1, py::arg("max") = 3.0, py::arg("step") = 0.1);
  m.def(
      "noise_sweep",
      [](const ModelGraph& model, const Dataset& data, std::vector<double> sigmas, std::size_t repeats,
         std::uint64_t seed, std::size_t workers) {
        return noise_sweep(model, data, sigmas, repeats, seed, {500, workers});
      },
      py::arg("model"), py::arg("data"), py::arg("sigmas") = default_sigma_grid(), py::arg("repeats") = 5,
      py::arg("seed") = 0, py::arg("workers") = 1, py::call_guard<py::gil_scoped_release>());
  m.def(
      "build_upper_bound",
      [](const ModelGraph& init, const Dataset& train_data, const Dataset& test_data, std::vector<double> train_sigmas,
         std::vector<double> eval_sigmas, std::size_t repeats, std::size_t epochs, std::size_t batch_size,
         double lr0, std::uint64_t seed, std::size_t workers) {
        const TrainConfig cfg = make_train_config(epochs, batch_size, lr0, seed, NoiseSchedule::none(), false);
        const UpperBoundPlan plan{std::move(train_sigmas), std::move(eval_sigmas), repeats, seed};
        return build_upper_bound([&] { return init.clone(); }, train_data, test_data, plan, cfg, {500, workers});
      },
      py::arg("model"), py::arg("train_data"), py::arg("test_data"),
      py::arg("train_sigmas") = default_upper_bound_sigmas(), py::arg("eval_sigmas") = default_sigma_grid(),
      py::arg("repeats") = 5, py::arg("epochs") = 60, py::arg("batch_size") = 128, py::arg("lr0") = 0.001,
      py::arg("seed") = 0, py::arg("workers") = 1, py::call_guard<py::gil_scoped_release>());
  m.def("auc", &auc_trapezoid, py::arg("curve"));
  m.def("rauc", &compute_rauc, py::arg("curve"), py::arg("upper"));
  m.def("accuracy_at", &accuracy_at, py::arg("curve"), py::arg("sigma"));
  m.def("preserved_accuracy", &preserved_accuracy, py::arg("vant"), py::arg("nt"), py::arg("sigma_train"));

  // scan

  py::enum_<CellStatus>(m, "CellStatus").value("OK", CellStatus::kOk).value("FAILED", CellStatus::kFailed);
  py::class_<ScanCell>(m, "ScanCell")
      .def(py::init([](double alpha, double theta, double rauc, double pa, CellStatus status) {
             ScanCell c;
             c.alpha = alpha;
             c.theta = theta;
             c.rauc_percent = rauc;
             c.preserved_acc_pp = pa;
             c.status = status;
             return c;
           }),
           py::arg("alpha"), py::arg("theta"), py::arg("rauc_percent"), py::arg("preserved_acc_pp"),
           py::arg("status") = CellStatus::kOk)
      .def_readonly("alpha", &ScanCell::alpha)
      .def_readonly("theta", &ScanCell::theta)
      .def_readonly("rauc_percent", &ScanCell::rauc_percent)
      .def_readonly("preserved_acc_pp", &ScanCell::preserved_acc_pp)
      .def_readonly("status", &ScanCell::status)
      .def_readonly("error", &ScanCell::error);

  py::class_<ScanGrid>(m, "ScanGrid")
      .def_readonly("alphas", &ScanGrid::alphas)
      .def_readonly("thetas", &ScanGrid::thetas)
      .def_readonly("sigma_train", &ScanGrid::sigma_train);
  m.def("default_scan_grid", &default_scan_grid, py::arg("sigma_train"));
  m.def("theta_heuristic", &theta_heuristic, py::arg("sigma_train"));
  m.def(
      "select_optimal",
      [](const std::vector<ScanCell>& cells) {
        const Selection s = select_optimal(cells);
        return py::make_tuple(s.cell, s.relaxed);
      },
      py::arg("cells"), "Returns (cell, relaxed).");

  // config

  m.def(
      "resolve_config", [](const std::string& text) { return resolved_config_json(parse_experiment_config(text)); },
      py::arg("json_text"), "Validates a JSON experiment config and returns it with every default filled in.");
}
