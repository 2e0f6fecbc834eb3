#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "gwnet/evaluation.hpp"
#include "gwnet/gradsuite.hpp"
#include "gwnet/losses.hpp"
#include "gwnet/norm.hpp"
#include "gwnet/toy_glyphs.hpp"
#include "gwnet/trainer.hpp"

namespace py = pybind11;
using namespace gwnet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor from_numpy(const Array& a) {
  if (a.ndim() != 4) throw std::invalid_argument("expected a 4-d (N, C, H, W) array");
  Shape s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
          static_cast<int>(a.shape(3))};
  return Tensor(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_numpy(const Tensor& t) {
  const Shape& s = t.shape();
  Array out({s.n, s.c, s.h, s.w});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Array glyph_array(const GlyphImage& g) { return to_numpy(g.tensor()); }

GlyphImage glyph_from(const Array& a) {
  Tensor t = from_numpy(a);
  if (t.shape().n != 1 || t.shape().c != 1 || t.shape().h != t.shape().w)
    throw std::invalid_argument("reference glyph must be (1, 1, S, S)");
  GlyphImage g;
  g.size = t.shape().h;
  g.pixels.assign(t.data().begin(), t.data().end());
  return g;
}

std::map<std::string, std::string> stringify(const py::dict& d) {
  std::map<std::string, std::string> kv;
  for (auto [k, v] : d) {
    std::string value = py::str(v);
    if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
      value.clear();
      for (auto item : v) value += (value.empty() ? "" : ",") + std::string(py::str(item));
    }
    kv[py::str(k)] = value;
  }
  return kv;
}

py::dict kv_dict(const std::vector<std::pair<std::string, std::string>>& kv) {
  py::dict d;
  for (const auto& [k, v] : kv) d[py::str(k)] = v;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Generalized W-Net glyph synthesis (double precision, CPU)";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("adain", [](const Array& c, const Array& s, double eps) { return to_numpy(adain(from_numpy(c), from_numpy(s), eps)); },
        py::arg("content"), py::arg("style"), py::arg("eps") = kNormEps);
  m.def("von_neumann_raw", [](const Array& a, const Array& b) { return von_neumann_raw(from_numpy(a), from_numpy(b)).item(); },
        "Mean raw divergence of (N,1,C,C) SPD batches.");
  m.def("von_neumann_div", [](const Array& a, const Array& b) { return von_neumann_div(from_numpy(a), from_numpy(b)).item(); },
        "Ridged, trace-normalized divergence.");

  py::class_<GlyphPack>(m, "GlyphPack")
      .def_property_readonly("I", [](const GlyphPack& p) { return p.manifest().I; })
      .def_property_readonly("J", [](const GlyphPack& p) { return p.manifest().J; })
      .def_property_readonly("M", &GlyphPack::M)
      .def_property_readonly("size", &GlyphPack::size)
      .def_property_readonly("prototype_styles", [](const GlyphPack& p) { return p.manifest().prototype_styles; })
      .def_property_readonly("holdout_styles", [](const GlyphPack& p) { return p.manifest().holdout_styles; })
      .def("__len__", &GlyphPack::image_count)
      .def("has", &GlyphPack::has)
      .def("glyph", [](const GlyphPack& p, int style, int content) { return glyph_array(p.at(style, content)); })
      .def("save", [](const GlyphPack& p, const std::filesystem::path& dir) { export_pack(p, dir); });
  m.def("make_toy_pack",
        [](std::uint64_t seed, int I, int J, int M, int holdout, int size) {
          return make_toy_pack(seed, I, J, ToyOptions{M, holdout, size});
        },
        py::arg("seed"), py::arg("I"), py::arg("J"), py::arg("M") = 3, py::arg("holdout") = 1, py::arg("size") = 64);
  m.def("load_pack", &load_pack);

  py::class_<Generator, std::unique_ptr<Generator>>(m, "Generator")
      .def(py::init([](const py::dict& config, std::uint64_t seed) {
             return std::make_unique<Generator>(TrainConfig::from_kv(stringify(config)).net, seed);
           }),
           py::arg("config") = py::dict(), py::arg("seed") = 1,
           "config takes the training keys (size, M, I, variant, width_divisor, ...).")
      .def_property_readonly("config", [](const Generator& g) { return kv_dict(g.config().to_kv()); })
      .def("generate",
           [](Generator& g, const Array& prototypes, const Array& references, int L) {
             NoGradGuard no_grad;
             return to_numpy(g.generate(from_numpy(prototypes), from_numpy(references), L, false));
           },
           py::arg("prototypes"), py::arg("references"), py::arg("L"))
      .def("style_features",
           [](Generator& g, const Array& references, int L) {
             NoGradGuard no_grad;
             py::list out;
             for (const Tensor& t : g.encode_style(from_numpy(references), L, false).layers) out.append(to_numpy(t));
             return out;
           },
           py::arg("references"), py::arg("L"))
      .def("content_features", [](Generator& g, const Array& prototypes) {
        NoGradGuard no_grad;
        py::list out;
        for (const Tensor& t : g.encode_content(from_numpy(prototypes), false).layers) out.append(to_numpy(t));
        return out;
      });
  m.def("load_generator", [](const std::filesystem::path& path) { return std::move(load_generator(path).G); });

  m.def("synthesize",
        [](Generator& g, const GlyphPack& pack, const std::vector<int>& contents, const std::vector<Array>& refs) {
          std::vector<GlyphImage> owned;
          for (const Array& a : refs) owned.push_back(glyph_from(a));
          std::vector<const GlyphImage*> ptrs;
          for (const GlyphImage& r : owned) ptrs.push_back(&r);
          py::list out;
          for (const Tensor& t : synthesize(g, pack, contents, ptrs)) out.append(to_numpy(t));
          return out;
        },
        py::arg("generator"), py::arg("pack"), py::arg("contents"), py::arg("refs"));

  m.def("train",
        [](const GlyphPack& pack, const std::filesystem::path& out_dir, const py::dict& config, bool resume) {
          std::map<std::string, std::string> kv = stringify(config);
          kv.try_emplace("size", std::to_string(pack.size()));
          kv.try_emplace("M", std::to_string(pack.M()));
          kv.try_emplace("I", std::to_string(pack.manifest().I));
          TrainConfig cfg = TrainConfig::from_kv(kv);
          py::gil_scoped_release release;
          auto tr = fit(cfg, pack, Perceptors{}, FitOptions{out_dir, resume});
          return tr->step();
        },
        py::arg("pack"), py::arg("out_dir"), py::arg("config") = py::dict(), py::arg("resume") = false,
        "Runs training without perceptual classifiers; returns the final step.");

  m.def("grad_suite",
        [](const std::string& filter, bool broken_fixture) {
          py::list out;
          for (const GradCaseResult& r : run_grad_suite(GradSuiteOptions{filter, broken_fixture})) {
            py::dict d;
            d["name"] = r.name;
            d["tolerance"] = r.tolerance;
            d["max_rel_error"] = r.max_rel_error;
            d["passed"] = r.passed;
            out.append(d);
          }
          return out;
        },
        py::arg("filter") = "", py::arg("broken_fixture") = false);
}
