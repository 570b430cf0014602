#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "capslstm/capsule.hpp"
#include "capslstm/cli.hpp"
#include "capslstm/config.hpp"
#include "capslstm/error.hpp"
#include "capslstm/explain.hpp"
#include "capslstm/model.hpp"
#include "capslstm/training.hpp"
#include "capslstm/weights.hpp"

namespace py = pybind11;
using namespace capslstm;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const Array<T>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<T>(std::move(shape), std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
Array<T> to_array(const Tensor<T>& t) {
  Array<T> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::list summary_rows(const Model<float>& m) {
  py::list rows;
  for (const auto& r : m.summary()) {
    rows.append(py::dict(py::arg("name") = r.name, py::arg("output_shape") = py::tuple(py::cast(r.output_shape)),
                         py::arg("params") = r.parameters));
  }
  return rows;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "CapsuleNet + LSTM deepfake detector";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def_static("preset", [](const std::string& name) { return architecture_preset(name); }, py::arg("name"))
      .def_readwrite("frames", &ModelConfig::frames)
      .def_readwrite("height", &ModelConfig::height)
      .def_readwrite("width", &ModelConfig::width)
      .def_readwrite("channels", &ModelConfig::channels)
      .def_readwrite("dense_units", &ModelConfig::dense_units)
      .def("validate", &ModelConfig::validate);

  py::class_<Model<float>>(m, "Model")
      .def(py::init<ModelConfig>(), py::arg("config"))
      .def("initialize", &Model<float>::initialize, py::arg("seed"))
      .def_property_readonly("config", &Model<float>::config)
      .def("parameter_count", &Model<float>::parameter_count)
      .def("summary", &summary_rows)
      .def("render_summary", [](const Model<float>& self) { return render_summary(self.summary()); })
      .def(
          "predict", [](const Model<float>& self, const Array<float>& clips) { return to_array(self.forward(to_tensor(clips))); },
          py::arg("clips"), "FAKE/REAL probabilities [N,2] for clips [N,F,H,W,C] in [0,1]")
      .def(
          "gradcam",
          [](const Model<float>& self, const Array<float>& clip, std::size_t target_class, const std::string& layer) {
            const Heatmap hm = gradcam(self, to_tensor(clip), target_class, layer);
            return py::make_tuple(to_array(hm.values), to_array(hm.upsampled));
          },
          py::arg("clip"), py::arg("target_class"), py::arg("layer") = std::string(kConv1Name))
      .def("save", [](const Model<float>& self, const std::filesystem::path& p) { save_weights(self, p); })
      .def_static("load", &load_weights, py::arg("path"), py::arg("config"));

  m.def(
      "squash", [](const Array<double>& s) { return to_array(squash(to_tensor(s))); }, py::arg("s"));
  m.def(
      "routing",
      [](const Array<double>& u_hat, std::size_t iterations) {
        const auto res = routing_by_agreement(to_tensor(u_hat), iterations);
        py::list couplings;
        for (const auto& c : res.state.couplings) couplings.append(to_array(c));
        return py::make_tuple(to_array(res.output), couplings);
      },
      py::arg("u_hat"), py::arg("iterations") = 3);
  m.def(
      "gradcam_map",
      [](const Array<double>& a, const Array<double>& g) { return to_array(gradcam_map(to_tensor(a), to_tensor(g))); },
      py::arg("activations"), py::arg("gradients"));
  m.def(
      "roc_auc",
      [](const std::vector<double>& scores, const std::vector<int>& labels) {
        std::vector<Label> l;
        for (int v : labels) l.push_back(v ? Label::Fake : Label::Real);
        return roc_auc(scores, l);
      },
      py::arg("scores"), py::arg("labels"), "labels: 1 = FAKE, 0 = REAL; None when one class is absent");
  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "capslstm");
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "runs the command line in-process; returns (exit_code, stdout, stderr)");
}
