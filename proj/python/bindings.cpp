#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "usbrain/atlas.hpp"
#include "usbrain/error.hpp"
#include "usbrain/harness.hpp"
#include "usbrain/metrics.hpp"
#include "usbrain/network.hpp"
#include "usbrain/volume.hpp"

namespace py = pybind11;
using namespace usbrain;

namespace {

using Spacing = std::array<float, 3>;
using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Geometry geometry_of(const py::buffer_info& b, Spacing spacing, Spacing origin) {
  if (b.ndim != 3) throw Error(Errc::ShapeMismatch, "expected a 3-D array (d, h, w)");
  Geometry g;
  g.dims = Dims{std::uint32_t(b.shape[0]), std::uint32_t(b.shape[1]), std::uint32_t(b.shape[2])};
  g.spacing = spacing;
  g.origin = origin;
  g.validate();
  return g;
}

Volume to_volume(F32 a, Spacing spacing, Spacing origin = {0.f, 0.f, 0.f}) {
  const auto b = a.request();
  Volume v(geometry_of(b, spacing, origin));
  std::memcpy(v.data.data(), b.ptr, v.data.size() * sizeof(float));
  return v;
}

Mask to_mask(U8 a, Spacing spacing, Spacing origin = {0.f, 0.f, 0.f}) {
  const auto b = a.request();
  Mask m(geometry_of(b, spacing, origin));
  const auto* p = static_cast<const std::uint8_t*>(b.ptr);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = p[i] ? 1 : 0;
  return m;
}

std::vector<py::ssize_t> shape_of(const Geometry& g) { return {g.dims.d, g.dims.h, g.dims.w}; }

F32 array_of(const Volume& v) {
  F32 a(shape_of(v.geom));
  std::memcpy(a.mutable_data(), v.data.data(), v.data.size() * sizeof(float));
  return a;
}

U8 array_of(const Mask& m) {
  U8 a(shape_of(m.geom));
  std::memcpy(a.mutable_data(), m.data.data(), m.data.size());
  return a;
}

Spacing unit() { return {1.f, 1.f, 1.f}; }

}  // namespace

PYBIND11_MODULE(_usbrain, m) {
  m.doc() = "Synthetic fetal-brain ultrasound segmentation: volumes, metrics, networks";
  py::register_exception<Error>(m, "Error", PyExc_ValueError);

  // Volumes come back as (array, spacing, origin); arrays are (d, h, w).
  m.def("load_volume", [](const fs::path& p) {
    const Volume v = load_volume(p);
    return py::make_tuple(array_of(v), v.geom.spacing, v.geom.origin);
  }, py::arg("path"));
  m.def("save_volume", [](const fs::path& p, F32 a, Spacing spacing, Spacing origin) {
    save_volume(to_volume(a, spacing, origin), p);
  }, py::arg("path"), py::arg("array"), py::arg("spacing") = unit(), py::arg("origin") = Spacing{0, 0, 0});
  m.def("load_mask", [](const fs::path& p) {
    const Mask v = load_mask(p);
    return py::make_tuple(array_of(v), v.geom.spacing, v.geom.origin);
  }, py::arg("path"));
  m.def("save_mask", [](const fs::path& p, U8 a, Spacing spacing, Spacing origin) {
    save_mask(to_mask(a, spacing, origin), p);
  }, py::arg("path"), py::arg("array"), py::arg("spacing") = unit(), py::arg("origin") = Spacing{0, 0, 0});

  m.def("threshold", [](F32 prob, double t) { return array_of(threshold_mask(to_volume(prob, unit()), t)); },
        py::arg("prob"), py::arg("t") = 0.5);
  m.def("dsc", [](U8 a, U8 b) { return dsc(to_mask(a, unit()), to_mask(b, unit())); });
  m.def("hausdorff", [](U8 a, U8 b, Spacing s) { return hausdorff(to_mask(a, s), to_mask(b, s)); },
        py::arg("a"), py::arg("b"), py::arg("spacing") = unit());
  m.def("centroid_ed", [](U8 a, U8 b, Spacing s) { return centroid_ed(to_mask(a, s), to_mask(b, s)); },
        py::arg("a"), py::arg("b"), py::arg("spacing") = unit());
  m.def("pearson_r", [](std::vector<double> x, std::vector<double> y) { return pearson_r(x, y); });
  m.def("welch_t", [](std::vector<double> x, std::vector<double> y) {
    const auto r = welch_t(x, y);
    return py::make_tuple(r.t, r.df, r.p);
  });

  m.def("param_count", [](std::uint32_t n, std::uint32_t l, std::uint32_t k, std::uint32_t f) {
    return param_count(NetworkSpec{n, l, k, f});
  }, py::arg("n"), py::arg("l"), py::arg("k"), py::arg("f"));
  m.def("table1_specs", [] {
    py::list out;
    for (const auto& s : table1_specs())
      out.append(py::dict(py::arg("label") = std::string(1, s.label), py::arg("n") = s.spec.n,
                          py::arg("l") = s.spec.l, py::arg("k") = s.spec.k, py::arg("f") = s.spec.f,
                          py::arg("published_params") = s.published_params));
    return out;
  });

  m.def("atlas_mask", [](double ga) { return array_of(make_atlas_mask(ga, desk_grid())); }, py::arg("ga_weeks"));
  m.def("phantom", [](double ga, std::array<double, 3> euler, double noise, double occlusion, std::uint64_t seed) {
    PhantomSpec s;
    s.ga_weeks = ga;
    s.pose = SimilarityTransform(EulerAngles{euler[0], euler[1], euler[2]}, 1.0, Vec3::Zero());
    s.noise_level = noise;
    s.occlusion_strength = occlusion;
    s.seed = seed;
    const Phantom p = generate_phantom(s, desk_grid());
    return py::make_tuple(array_of(p.volume), array_of(p.truth));
  }, py::arg("ga_weeks"), py::arg("euler") = std::array<double, 3>{0, 0, 0}, py::arg("noise") = 0.3,
     py::arg("occlusion") = 0.5, py::arg("seed") = 0);

  py::class_<Network>(m, "Network")
      .def_static("build", [](std::uint32_t n, std::uint32_t l, std::uint32_t k, std::uint32_t f, std::uint64_t seed) {
        return Network::build(NetworkSpec{n, l, k, f}, seed);
      }, py::arg("n"), py::arg("l"), py::arg("k"), py::arg("f"), py::arg("seed") = 0)
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("save", [](Network& net, const fs::path& p) { save_checkpoint(net, p); })
      .def_property_readonly("spec", [](const Network& net) {
        const auto& s = net.spec();
        return py::make_tuple(s.n, s.l, s.k, s.f);
      })
      .def_property_readonly("parameter_count", &Network::trainable_count)
      // Probability map on the volume's own grid.
      .def("predict", [](const Network& net, F32 volume) {
        const Volume v = to_volume(volume, unit());
        Tensor<float> p;
        {
          py::gil_scoped_release release;
          p = net.predict(preprocess_volume(v, net.spec().n));
        }
        return array_of(postprocess_probability(p, v.geom));
      }, py::arg("volume"));

  m.def("verify_tables", [](const fs::path& dir) {
    py::list out;
    for (const auto& i : verify_tables(dir)) out.append(py::make_tuple(i.table, i.row, i.message));
    return out;
  }, py::arg("dir"));
}
