#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "edgeseg/edgex.hpp"
#include "edgeseg/encode.hpp"
#include "edgeseg/error.hpp"
#include "edgeseg/harness.hpp"
#include "edgeseg/lossmetrics.hpp"
#include "edgeseg/nnseg.hpp"
#include "edgeseg/synth.hpp"

namespace py = pybind11;
using namespace edgeseg;

namespace {

using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;

void need_dims(const py::buffer_info& b, int dims, const char* what) {
  if (b.ndim != dims) throw Error(ErrorKind::ShapeMismatch, std::string(what) + " must be " + std::to_string(dims) + "-D");
}

BinaryPlane to_plane(const U8& a) {
  const auto b = a.request();
  need_dims(b, 2, "plane");
  const auto* p = static_cast<const std::uint8_t*>(b.ptr);
  std::vector<std::uint8_t> v(p, p + b.size);
  for (auto& x : v) x = x ? 1 : 0;
  return BinaryPlane(static_cast<int>(b.shape[0]), static_cast<int>(b.shape[1]), std::move(v));
}

U8 from_plane(const BinaryPlane& p) {
  U8 out({p.height, p.width});
  std::copy(p.data.begin(), p.data.end(), out.mutable_data());
  return out;
}

LabelMask to_mask(const U8& a) {
  const auto b = a.request();
  need_dims(b, 2, "mask");
  const auto* p = static_cast<const std::uint8_t*>(b.ptr);
  return LabelMask(static_cast<int>(b.shape[0]), static_cast<int>(b.shape[1]), std::vector<std::uint8_t>(p, p + b.size));
}

U8 from_mask(const LabelMask& m) {
  U8 out({m.height(), m.width()});
  std::copy(m.labels().begin(), m.labels().end(), out.mutable_data());
  return out;
}

F32 from_stack(const ChannelStack& s) {
  F32 out({s.height(), s.width(), s.channels()});
  std::copy(s.data().begin(), s.data().end(), out.mutable_data());
  return out;
}

std::vector<ChannelRole> roles_for(const std::string& mode) {
  return parse_mode(mode) == TargetMode::Edges ? edge_roles() : region_roles();
}

ChannelStack to_stack(const F32& a, const std::string& mode) {
  const auto b = a.request();
  need_dims(b, 3, "stack");
  auto roles = roles_for(mode);
  if (b.shape[2] != static_cast<py::ssize_t>(roles.size()))
    throw Error(ErrorKind::ShapeMismatch, "stack has " + std::to_string(b.shape[2]) + " channels, mode " + mode +
                                              " needs " + std::to_string(roles.size()));
  const auto* p = static_cast<const float*>(b.ptr);
  return ChannelStack(static_cast<int>(b.shape[0]), static_cast<int>(b.shape[1]), std::move(roles),
                      std::vector<float>(p, p + b.size));
}

Image2D to_image(const F32& a) {
  const auto b = a.request();
  if (b.ndim == 2) {
    const auto* p = static_cast<const float*>(b.ptr);
    return Image2D(static_cast<int>(b.shape[0]), static_cast<int>(b.shape[1]), 1, std::vector<float>(p, p + b.size));
  }
  need_dims(b, 3, "image");
  const auto* p = static_cast<const float*>(b.ptr);
  return Image2D(static_cast<int>(b.shape[0]), static_cast<int>(b.shape[1]), static_cast<int>(b.shape[2]),
                 std::vector<float>(p, p + b.size));
}

F32 from_image(const Image2D& img) {
  F32 out({img.height(), img.width(), img.channels()});
  std::copy(img.data().begin(), img.data().end(), out.mutable_data());
  return out;
}

struct Model {
  UNetConfig network;
  ModelParams<float> params;

  F32 predict(const F32& image) const {
    auto img = to_image(image);
    if (img.channels() == 1) {
      std::vector<float> rgb;
      for (float v : img.data()) rgb.insert(rgb.end(), 3, v);
      img = Image2D(img.height(), img.width(), 3, std::move(rgb));
    }
    return from_stack(edgeseg::predict(params, network, img));
  }
};

}  // namespace

PYBIND11_MODULE(_edgeseg, m) {
  m.doc() = "Optic disc/cup segmentation with edge-integrated targets";

  py::register_exception<Error>(m, "Error", PyExc_ValueError);

  m.def(
      "synth_sample",
      [](std::uint64_t index, std::uint64_t seed, int size) {
        SynthConfig cfg;
        cfg.seed = seed;
        cfg.size = size;
        const auto s = generate_sample(cfg, index);
        return py::make_tuple(from_image(s.image), from_mask(s.mask));
      },
      py::arg("index"), py::arg("seed") = 1, py::arg("size") = 128,
      "(image HxWx3 float32, mask HxW uint8 with 0 background, 1 disc, 2 cup)");

  m.def("extract_edges", [](const U8& plane) { return from_plane(extract_edges(to_plane(plane))); },
        "Foreground pixels with a background 8-neighbour.");

  m.def(
      "build_target",
      [](const U8& mask, const std::string& mode) {
        return from_stack(make_target(to_mask(mask), parse_mode(mode)));
      },
      py::arg("mask"), py::arg("mode") = "edges");

  m.def("roles", [](const std::string& mode) {
    std::vector<std::string> out;
    for (auto r : roles_for(mode)) out.emplace_back(role_name(r));
    return out;
  });

  m.def(
      "decode",
      [](const F32& pred, const std::string& mode) {
        const auto d = decode_prediction(to_stack(pred, mode));
        return py::make_tuple(from_plane(d.disc), from_plane(d.cup));
      },
      py::arg("pred"), py::arg("mode") = "edges", "(disc plane, cup plane)");

  m.def("dice", [](const U8& a, const U8& b) { return dice_score(to_plane(a), to_plane(b)); });
  m.def(
      "hausdorff",
      [](const U8& a, const U8& b, bool boundary) {
        return hausdorff(to_plane(a), to_plane(b), boundary ? HausdorffMode::Boundary : HausdorffMode::Region);
      },
      py::arg("a"), py::arg("b"), py::arg("boundary") = false);
  m.def("cdr", [](const U8& disc, const U8& cup) { return compute_cdr(to_plane(disc), to_plane(cup)); });

  m.def(
      "focal_loss",
      [](const F32& pred, const F32& target, const std::string& mode, double gamma) {
        auto cfg = FocalConfig::defaults();
        cfg.gamma = gamma;
        return edgeseg::focal_loss(to_stack(pred, mode), to_stack(target, mode), cfg);
      },
      py::arg("pred"), py::arg("target"), py::arg("mode") = "edges", py::arg("gamma") = 2.0);

  py::class_<ExperimentConfig>(m, "Config")
      .def(py::init<>())
      .def_static("parse", &ExperimentConfig::parse)
      .def_static("load", &ExperimentConfig::load)
      .def("apply", &ExperimentConfig::apply)
      .def("validate", &ExperimentConfig::validate)
      .def("to_text", &ExperimentConfig::to_text)
      .def("hash", &ExperimentConfig::hash)
      .def_property_readonly("mode", [](const ExperimentConfig& c) { return std::string(mode_name(c.mode)); })
      .def_readwrite("epochs", &ExperimentConfig::epochs)
      .def_readwrite("seed", &ExperimentConfig::seed)
      .def("__repr__", [](const ExperimentConfig& c) { return "<Config hash=" + hex64(c.hash()) + ">"; });

  m.def(
      "split",
      [](const std::vector<std::string>& ids, std::array<double, 3> fractions, std::uint64_t seed) {
        const auto s = edgeseg::split(ids, fractions, seed);
        return py::make_tuple(s.train, s.val, s.test);
      },
      py::arg("ids"), py::arg("fractions") = std::array<double, 3>{0.7, 0.1, 0.2}, py::arg("seed") = 1);
  m.def(
      "make_folds", [](const std::vector<std::string>& ids, int k, std::uint64_t seed) {
        return make_folds(ids, k, seed).folds;
      },
      py::arg("ids"), py::arg("k") = 5, py::arg("seed") = 1);

  py::class_<Model>(m, "Model")
      .def_static("load",
                  [](const std::filesystem::path& path) {
                    auto [net, params] = load_checkpoint(path);
                    return Model{net, std::move(params)};
                  })
      .def_property_readonly("out_channels", [](const Model& md) { return md.network.out_channels; })
      .def_property_readonly("depth", [](const Model& md) { return md.network.depth; })
      .def("predict", &Model::predict, "Per-pixel softmax probabilities, HxWxC.");
}
