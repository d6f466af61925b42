#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "tfk/cli.hpp"
#include "tfk/error.hpp"
#include "tfk/growth.hpp"
#include "tfk/io.hpp"
#include "tfk/metrics.hpp"
#include "tfk/phantom.hpp"

namespace py = pybind11;
using namespace tfk;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using Spacing = std::array<double, 3>;

// Arrays are indexed [z, y, x], matching the x-fastest storage order.
GridSpec spec_of(const py::buffer_info& b, const Spacing& spacing) {
  if (b.ndim != 3) throw py::value_error("expected a 3-D array indexed [z, y, x]");
  GridSpec s{static_cast<std::size_t>(b.shape[2]), static_cast<std::size_t>(b.shape[1]),
             static_cast<std::size_t>(b.shape[0]), spacing[0], spacing[1], spacing[2]};
  s.validate();
  return s;
}

ScalarField3D to_field(const F64& a, const Spacing& spacing) {
  const auto b = a.request();
  const GridSpec s = spec_of(b, spacing);
  const double* p = static_cast<const double*>(b.ptr);
  return ScalarField3D(s, std::vector<double>(p, p + s.voxel_count()));
}

TissueMap to_tissue(const U8& a, const Spacing& spacing) {
  const auto b = a.request();
  const GridSpec s = spec_of(b, spacing);
  const auto* p = static_cast<const std::uint8_t*>(b.ptr);
  TissueMap t = TissueMap::filled(s, TissueLabel::Background);
  for (std::size_t i = 0; i < s.voxel_count(); ++i) {
    if (p[i] > 3) throw py::value_error("tissue labels must be 0..3");
    t.labels[i] = static_cast<TissueLabel>(p[i]);
  }
  return t;
}

VoxelRegion to_region(const U8& a) {
  const auto b = a.request();
  const GridSpec s = spec_of(b, {1, 1, 1});
  const auto* p = static_cast<const std::uint8_t*>(b.ptr);
  VoxelRegion r{s, std::vector<std::uint8_t>(s.voxel_count())};
  for (std::size_t i = 0; i < r.inside.size(); ++i) r.inside[i] = p[i] != 0;
  return r;
}

py::array_t<double> from_field(const ScalarField3D& f) {
  const GridSpec& s = f.spec();
  py::array_t<double> out({s.nz, s.ny, s.nx});
  std::copy(f.values().begin(), f.values().end(), out.mutable_data());
  return out;
}

py::array_t<std::uint8_t> from_tissue(const TissueMap& t) {
  py::array_t<std::uint8_t> out({t.spec.nz, t.spec.ny, t.spec.nx});
  auto* p = out.mutable_data();
  for (std::size_t i = 0; i < t.labels.size(); ++i) p[i] = static_cast<std::uint8_t>(t.labels[i]);
  return out;
}

py::array_t<std::uint8_t> from_mask(const LabelMask& m) {
  py::array_t<std::uint8_t> out({m.spec.nz, m.spec.ny, m.spec.nx});
  auto* p = out.mutable_data();
  for (std::size_t i = 0; i < m.labels.size(); ++i) p[i] = static_cast<std::uint8_t>(m.labels[i]);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Tumor growth simulation, toy phantoms and evaluation metrics";
  m.attr("__version__") = kToolVersion;

  // Raised with args (message, code name). Kept alive for the process lifetime.
  static PyObject* error = PyErr_NewException("tfk._core.TfkError", PyExc_RuntimeError, nullptr);
  m.attr("TfkError") = py::handle(error);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetObject(error, py::make_tuple(e.what(), std::string(to_string(e.code()))).ptr());
    }
  });

  m.def(
      "make_phantom",
      [](std::size_t n, std::uint64_t seed, double jitter) { return from_tissue(make_phantom(GridSpec::cube(n), seed, jitter)); },
      py::arg("n"), py::arg("seed") = 0, py::arg("jitter") = 0.0);

  m.def(
      "simulate",
      [](const U8& tissue, double rho, double d_white, Spacing seed_center, double seed_sigma, double seed_amplitude,
         double gray_ratio, double t_end, double dt, double snapshot_every, Spacing spacing) {
        GrowthParams p;
        p.rho = rho;
        p.d_white = d_white;
        p.gray_ratio = gray_ratio;
        p.seed_center = seed_center;
        p.seed_sigma = seed_sigma;
        p.seed_amplitude = seed_amplitude;
        const TissueMap t = to_tissue(tissue, spacing);
        std::vector<Snapshot> snaps;
        {
          py::gil_scoped_release release;
          snaps = simulate(t, p, SimClock{dt, t_end, snapshot_every});
        }
        py::list out;
        for (const auto& s : snaps) out.append(py::make_tuple(s.t_days, from_field(s.concentration)));
        return out;
      },
      py::arg("tissue"), py::arg("rho") = 0.03, py::arg("d_white") = 0.28, py::arg("seed_center"),
      py::arg("seed_sigma") = 2.0, py::arg("seed_amplitude") = 1.0, py::arg("gray_ratio") = 0.1,
      py::arg("t_end") = 100.0, py::arg("dt") = 0.25, py::arg("snapshot_every") = 10.0,
      py::arg("spacing") = Spacing{1, 1, 1},
      "List of (t_days, concentration) snapshots; arrays are indexed [z, y, x].");

  m.def(
      "fk_step",
      [](const F64& c, const F64& dmap, const U8& tissue, double rho, double dt, Spacing spacing) {
        return from_field(fk_step(to_field(c, spacing), to_field(dmap, spacing), to_tissue(tissue, spacing), rho, dt));
      },
      py::arg("c"), py::arg("dmap"), py::arg("tissue"), py::arg("rho"), py::arg("dt"),
      py::arg("spacing") = Spacing{1, 1, 1});

  m.def(
      "concentration_to_mask", [](const F64& c) { return from_mask(concentration_to_mask(to_field(c, {1, 1, 1}))); },
      py::arg("c"), "Labels 0 background, 1 edema (0.2 <= c < 0.6), 2 enhancing (c >= 0.6).");

  m.def(
      "dice", [](const U8& a, const U8& b) { return dice(to_region(a), to_region(b)); }, py::arg("a"), py::arg("b"),
      "Dice overlap of two binary masks (non-zero is inside).");

  m.def(
      "psnr",
      [](const F64& a, const F64& b, std::optional<U8> mask, double data_max) {
        const ScalarField3D fa = to_field(a, {1, 1, 1}), fb = to_field(b, {1, 1, 1});
        return psnr(fa, fb, mask ? to_region(*mask) : full_region(fa.spec()), data_max);
      },
      py::arg("a"), py::arg("b"), py::arg("mask") = py::none(), py::arg("data_max") = 1.0);

  m.def(
      "ms_ssim",
      [](const F64& a, const F64& b, int levels, int window) {
        MsSsimOptions o;
        o.levels = levels;
        o.window = window;
        return ms_ssim(to_field(a, {1, 1, 1}), to_field(b, {1, 1, 1}), o);
      },
      py::arg("a"), py::arg("b"), py::arg("levels") = 3, py::arg("window") = 7);

  m.def(
      "read_volume", [](const std::filesystem::path& p) { return from_field(read_field(p)); }, py::arg("path"),
      "Raw volume with a JSON sidecar, as float64 indexed [z, y, x].");

  m.def(
      "write_volume",
      [](const std::filesystem::path& p, const F64& a, Spacing spacing) {
        write_field(p, to_field(a, spacing), VolumeIntent::Image);
      },
      py::arg("path"), py::arg("array"), py::arg("spacing") = Spacing{1, 1, 1});

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "tfk");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return run_cli(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs the command-line tool in-process and returns its exit code.");
}
