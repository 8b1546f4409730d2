#include "kinr/checkpoint.hpp"
#include "kinr/config.hpp"
#include "kinr/datasets.hpp"
#include "kinr/error.hpp"
#include "kinr/metrics.hpp"
#include "kinr/sampling.hpp"
#include "kinr/training.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <complex>
#include <optional>
#include <string>

namespace py = pybind11;
using namespace kinr;

namespace {

using CArray = py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>;
using RArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using MArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

void require_2d(py::buffer_info const &b, char const *what)
{
  if (b.ndim != 2) {
    throw ShapeError(std::string(what) + " must be a 2-D array");
  }
}

template <typename G>
G grid_from(CArray const &a)
{
  auto b = a.request();
  require_2d(b, "complex input");
  int const h = static_cast<int>(b.shape[0]);
  int const w = static_cast<int>(b.shape[1]);
  G g(h, w);
  auto const *src = static_cast<std::complex<double> const *>(b.ptr);
  for (std::size_t i = 0; i < g.plane_size(); ++i) {
    g.real()[i] = src[i].real();
    g.imag()[i] = src[i].imag();
  }
  return g;
}

CArray to_array(ComplexGrid const &g)
{
  CArray out({g.height(), g.width()});
  auto *dst = out.mutable_data();
  for (std::size_t i = 0; i < g.plane_size(); ++i) {
    dst[i] = {g.real()[i], g.imag()[i]};
  }
  return out;
}

RealImage real_from(RArray const &a)
{
  auto b = a.request();
  require_2d(b, "real input");
  auto const *src = static_cast<double const *>(b.ptr);
  auto const n = static_cast<std::size_t>(b.shape[0] * b.shape[1]);
  return RealImage(static_cast<int>(b.shape[0]), static_cast<int>(b.shape[1]), std::vector<double>(src, src + n));
}

RArray to_array(RealImage const &img)
{
  RArray out({img.height(), img.width()});
  std::copy(img.data().begin(), img.data().end(), out.mutable_data());
  return out;
}

MArray to_array(SamplingMask const &m)
{
  MArray out({m.height(), m.width()});
  std::copy(m.grid().begin(), m.grid().end(), out.mutable_data());
  return out;
}

SamplingMask mask_from(MArray const &a)
{
  auto b = a.request();
  require_2d(b, "mask");
  auto const *src = static_cast<std::uint8_t const *>(b.ptr);
  int const h = static_cast<int>(b.shape[0]);
  int const w = static_cast<int>(b.shape[1]);
  std::vector<std::uint8_t> grid(src, src + static_cast<std::size_t>(h) * w);
  for (auto &v : grid) {
    v = v != 0;
  }
  return SamplingMask(h, w, std::move(grid), MaskFamily::random2d, 0.0, 0.0, 0);
}

ExperimentConfig config_from(py::object const &source)
{
  if (py::isinstance<py::dict>(source)) {
    auto const text = py::module_::import("json").attr("dumps")(source).cast<std::string>();
    auto cfg = config_from_json(nlohmann::json::parse(text));
    apply_environment(cfg);
    return cfg;
  }
  auto cfg = load_config(source.cast<std::filesystem::path>());
  apply_environment(cfg);
  return cfg;
}

py::dict record_dict(EpochRecord const &r)
{
  return py::module_::import("json").attr("loads")(r.to_json().dump());
}

// A trained network loaded from a checkpoint directory.
class Model
{
public:
  explicit Model(std::filesystem::path const &dir)
    : ckpt_{load_checkpoint(dir)}
    , net_{network_from_checkpoint(ckpt_)}
  {
  }

  py::dict reconstruct(CArray const &kspace, MArray const &mask, int stage) const
  {
    auto const sample = make_sample(grid_from<KSpace>(kspace), "input");
    auto const ex = build_example(sample, mask_from(mask));
    Reconstruction r;
    {
      py::gil_scoped_release release;
      r = kinr::reconstruct(net_, ex, stage);
    }
    py::dict out;
    out["kspace"] = to_array(r.kspace);
    out["image"] = to_array(r.image);
    out["magnitude"] = to_array(r.magnitude);
    out["reference"] = to_array(r.reference);
    out["zero_filled"] = to_array(r.zero_filled);
    if (r.lr_upsampled) {
      out["lr_upsampled"] = to_array(*r.lr_upsampled);
    }
    return out;
  }

  std::int64_t epoch() const { return ckpt_.epoch; }
  std::string model_json() const { return model_to_json(checkpoint_model(ckpt_)).dump(); }

private:
  Checkpoint ckpt_;
  Network<float> net_;
};

} // namespace

PYBIND11_MODULE(_core, m)
{
  m.doc() = "Image-guided continuous k-space recovery";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<FormatVersionError>(m, "FormatVersionError", base.ptr());
  py::register_exception<IncompatibleCheckpoint>(m, "IncompatibleCheckpoint", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  m.def("fft2c", [](CArray const &img) { return to_array(fft2c(grid_from<ComplexImage>(img))); }, py::arg("image"),
        "Centered orthonormal 2-D DFT.");
  m.def("ifft2c", [](CArray const &k) { return to_array(ifft2c(grid_from<KSpace>(k))); }, py::arg("kspace"));
  m.def("magnitude", [](CArray const &g) { return to_array(magnitude(grid_from<ComplexImage>(g))); }, py::arg("grid"));

  m.def(
    "make_mask",
    [](std::string const &family, int height, int width, double ratio, std::optional<double> acs, std::int64_t seed) {
      auto const f = parse_mask_family(family);
      return to_array(make_mask(f, height, width, ratio, acs ? *acs : default_acs_fraction(f), seed));
    },
    py::arg("family"), py::arg("height"), py::arg("width"), py::arg("ratio"), py::arg("acs") = py::none(),
    py::arg("seed") = 0);
  m.def(
    "apply_mask",
    [](CArray const &k, MArray const &mask) {
      auto const parts = apply_mask(grid_from<KSpace>(k), mask_from(mask));
      return py::make_tuple(to_array(parts.sampled), to_array(parts.unsampled));
    },
    py::arg("kspace"), py::arg("mask"), "Split k-space into its sampled and unsampled parts.");

  m.def(
    "synth_phantom",
    [](int size, std::int64_t seed) {
      auto const s = synth_phantom(size, seed);
      py::dict out;
      out["kspace"] = to_array(s.k_full);
      out["image"] = to_array(s.image_full);
      out["id"] = s.id;
      return out;
    },
    py::arg("size"), py::arg("seed"));
  m.def(
    "load_sample",
    [](std::filesystem::path const &path) {
      auto const s = load_sample(path);
      py::dict out;
      out["kspace"] = to_array(s.k_full);
      out["image"] = to_array(s.image_full);
      out["id"] = s.id;
      return out;
    },
    py::arg("path"));
  m.def(
    "save_sample",
    [](CArray const &k, std::string const &id, std::filesystem::path const &dir) {
      save_sample(make_sample(grid_from<KSpace>(k), id), dir);
    },
    py::arg("kspace"), py::arg("id"), py::arg("dir"));

  m.def("psnr", [](RArray const &x, RArray const &ref) { return psnr(real_from(x), real_from(ref)).db; }, py::arg("x"),
        py::arg("ref"));
  m.def(
    "ssim",
    [](RArray const &x, RArray const &ref, std::optional<double> range) { return ssim(real_from(x), real_from(ref), range); },
    py::arg("x"), py::arg("ref"), py::arg("data_range") = py::none());
  m.def("nmse", [](RArray const &x, RArray const &ref) { return nmse(real_from(x), real_from(ref)); }, py::arg("x"),
        py::arg("ref"));

  m.def(
    "stage_for_epoch",
    [](int epoch, std::array<int, 5> bounds) {
      StageSchedule s{bounds};
      s.validate();
      return stage_for_epoch(epoch, s);
    },
    py::arg("epoch"), py::arg("bounds") = std::array<int, 5>{0, 20, 60, 100, 200});

  m.def("load_config", [](py::object const &source) { return config_to_json(config_from(source)).dump(); },
        py::arg("source"), "Validated configuration (path or dict) as a JSON string, defaults filled in.");
  m.def(
    "train",
    [](py::object const &source, std::optional<std::filesystem::path> resume, py::object on_epoch) {
      auto const cfg = config_from(source);
      std::function<void(EpochRecord const &)> cb;
      if (!on_epoch.is_none()) {
        cb = [&](EpochRecord const &r) {
          py::gil_scoped_acquire gil;
          on_epoch(record_dict(r));
        };
      }
      TrainSummary s;
      {
        py::gil_scoped_release release;
        s = run_training(cfg, resume, cb);
      }
      py::dict out;
      out["epochs_run"] = s.epochs_run;
      out["final_checkpoint"] = s.final_checkpoint;
      out["output_dir"] = output_dir(cfg);
      out["last"] = s.last ? py::object(record_dict(*s.last)) : py::none();
      return out;
    },
    py::arg("config"), py::arg("resume") = py::none(), py::arg("on_epoch") = py::none());

  py::class_<Model>(m, "Model")
    .def(py::init<std::filesystem::path const &>(), py::arg("checkpoint"))
    .def("reconstruct", &Model::reconstruct, py::arg("kspace"), py::arg("mask"), py::arg("stage") = 4,
         "Reconstruct from fully sampled k-space undersampled by `mask`; also returns the reference.")
    .def_property_readonly("epoch", &Model::epoch)
    .def_property_readonly("model_json", &Model::model_json);
}
