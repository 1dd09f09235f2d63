#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "s2fuse/config.hpp"
#include "s2fuse/degradation.hpp"
#include "s2fuse/diffusion.hpp"
#include "s2fuse/errors.hpp"
#include "s2fuse/fusion.hpp"
#include "s2fuse/metrics.hpp"
#include "s2fuse/pansharpen.hpp"
#include "s2fuse/pipeline.hpp"
#include "s2fuse/raster_io.hpp"
#include "s2fuse/resample.hpp"
#include "s2fuse/scene.hpp"

namespace py = pybind11;
using namespace s2fuse;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (C, H, W) or (H, W) array -> Raster. gnyq/gsd default to the BandSpec values.
Raster to_raster(const Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw DimensionError("expected a (bands, height, width) or (height, width) array");
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(0)) : 1;
  const int h = static_cast<int>(a.shape(a.ndim() - 2));
  const int w = static_cast<int>(a.shape(a.ndim() - 1));
  Raster r(c, h, w);
  std::memcpy(r.data().data(), a.data(), r.size() * sizeof(double));
  return r;
}

Array to_array(const Raster& r) {
  Array a({r.bands(), r.height(), r.width()});
  std::memcpy(a.mutable_data(), r.data().data(), r.size() * sizeof(double));
  return a;
}

py::dict report_dict(const MetricsReport& rep) {
  py::dict d;
  py::list bands;
  for (const BandMetrics& b : rep.per_band) {
    py::dict e;
    e["name"] = b.name;
    e["mse"] = b.mse;
    e["psnr"] = b.psnr;
    e["ssim"] = b.ssim;
    e["r2"] = b.r2;
    e["ncc"] = b.ncc;
    bands.append(e);
  }
  d["bands"] = bands;
  d["ergas"] = rep.ergas;
  d["sad_mean"] = rep.sad_mean;
  d["reflectance_l1"] = rep.reflectance_l1 ? py::cast(*rep.reflectance_l1) : py::none();
  d["shift"] = py::make_tuple(rep.spatial_shift.dy, rep.spatial_shift.dx);
  return d;
}

}  // namespace

PYBIND11_MODULE(_s2fuse, m) {
  m.doc() = "Sentinel-2 style degradation, guided fusion and evaluation";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<ParameterError>(m, "ParameterError", base.ptr());
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def("read_raster", [](const std::filesystem::path& p) { return to_array(read_raster(p)); });
  m.def("write_raster", [](const std::filesystem::path& p, const Array& a) { write_raster(p, to_raster(a)); });

  m.def("upsample_bicubic", [](const Array& a, int r) { return to_array(resample_bicubic(to_raster(a), Scale::up(r))); },
        py::arg("img"), py::arg("ratio"));
  m.def("downsample_bicubic",
        [](const Array& a, int r) { return to_array(resample_bicubic(to_raster(a), Scale::down(r))); }, py::arg("img"),
        py::arg("ratio"));
  m.def("boxcar_downsample", [](const Array& a, int r) { return to_array(boxcar_downsample(to_raster(a), r)); });
  m.def("pixel_fold", [](const Array& a, int r) { return to_array(pixel_fold(to_raster(a), r)); });
  m.def("pixel_unfold", [](const Array& a, int r) { return to_array(pixel_unfold(to_raster(a), r)); });

  m.def(
      "gen_scene",
      [](int size, int bands, std::uint64_t seed, const std::string& content, double texture) {
        SceneSpec s;
        s.height = s.width = size;
        s.bands = bands;
        s.seed = seed;
        s.content = parse_scene_content(content);
        s.texture_sigma = texture;
        return to_array(gen_scene(s));
      },
      py::arg("size"), py::arg("bands"), py::arg("seed"), py::arg("content") = "mixture", py::arg("texture") = 2.0);

  m.def("harmonize", [](const Array& a, const std::vector<double>& g, double k) { return to_array(harmonize(to_raster(a), g, k)); },
        py::arg("img"), py::arg("gammas"), py::arg("k") = 255.0);
  m.def(
      "degrade",
      [](const Array& a, std::uint64_t seed, int scale, const std::string& blur, double noise,
         std::optional<std::vector<double>> gammas) {
        DegradationSpec spec;
        spec.scale = scale;
        spec.noise_sigma = noise;
        spec.harmonize = gammas.has_value();
        spec.gammas = std::move(gammas);
        SeededRng rng(seed);
        if (blur != "none") spec.blur = sample_blur(rng, BlurMode::parse(blur));
        return to_array(degrade(to_raster(a), spec, rng));
      },
      py::arg("img"), py::arg("seed"), py::arg("scale") = 4, py::arg("blur") = "train", py::arg("noise") = 0.0,
      py::arg("gammas") = py::none());

  m.def("mtf_sigma", &mtf_sigma, py::arg("gnyq"), py::arg("ratio"));
  m.def("cosine_alpha_bars", [](int T, double s) { return cosine_schedule(T, s).alpha_bars; }, py::arg("T") = 1000,
        py::arg("s") = 0.008);
  m.def("timestep_embedding", &timestep_embedding, py::arg("t"), py::arg("dim"));

  m.def(
      "pansharpen",
      [](const std::string& method, const Array& ms, const Array& pan, int ratio, std::vector<double> gnyq) {
        if (gnyq.empty()) gnyq = {0.3};
        return to_array(pansharpen(parse_pan_method(method), to_raster(ms), to_raster(pan), ratio, gnyq));
      },
      py::arg("method"), py::arg("ms"), py::arg("pan"), py::arg("ratio"), py::arg("gnyq") = std::vector<double>{});

  m.def(
      "fuse",
      [](const Array& ms_lr, const Array& guide, std::optional<std::filesystem::path> checkpoint, int ratio,
         double gnyq) {
        Raster ms = to_raster(ms_lr);
        FusionParams params;
        if (checkpoint) {
          params = FusionParams::load(*checkpoint);
        } else {
          FusionConfig c;
          c.bands = ms.bands();
          c.ratio = ratio;
          const double q[] = {gnyq};
          params = FusionParams(c, q);
          SeededRng rng(0);
          params.init(rng);
        }
        return to_array(fuse(ms, to_raster(guide), params));
      },
      py::arg("ms_lr"), py::arg("guide"), py::arg("checkpoint") = py::none(), py::arg("ratio") = 4,
      py::arg("gnyq") = 0.3, "Fuse with a trained checkpoint, or with identity weights (unit-gain MTF-GLP) when none is given.");

  m.def("mse", [](const Array& a, const Array& b) { return mse(to_raster(a), to_raster(b)); });
  m.def("psnr", [](const Array& a, const Array& b, double peak) { return psnr(to_raster(a), to_raster(b), peak); },
        py::arg("a"), py::arg("b"), py::arg("peak") = 255.0);
  m.def("ssim", [](const Array& a, const Array& b, double peak) { return ssim(to_raster(a), to_raster(b), peak); },
        py::arg("a"), py::arg("b"), py::arg("peak") = 255.0);
  m.def("ergas", [](const Array& r, const Array& p, double ratio) { return ergas(to_raster(r), to_raster(p), ratio); });
  m.def("sad", [](const Array& a, const Array& b) { return sad(to_raster(a), to_raster(b)); });
  m.def("phase_correlation_shift", [](const Array& a, const Array& b) {
    const Shift s = phase_correlation_shift(to_raster(a), to_raster(b));
    return py::make_tuple(s.dy, s.dx);
  });
  m.def(
      "evaluate",
      [](const Array& ref, const Array& pred, double ratio, double peak, std::optional<Array> lr) {
        std::optional<Raster> l;
        if (lr) l = to_raster(*lr);
        return report_dict(evaluate(to_raster(ref), to_raster(pred), ratio, peak, l ? &*l : nullptr));
      },
      py::arg("ref"), py::arg("pred"), py::arg("ratio"), py::arg("peak") = 255.0, py::arg("lr") = py::none());

  m.def(
      "run_pipeline",
      [](const std::string& config_text) {
        PipelineResult r = run_pipeline(PipelineConfig::from_config(Config::parse(config_text)));
        py::dict d;
        std::vector<std::string> written;
        for (const auto& p : r.written) written.push_back(p.string());
        d["written"] = written;
        d["report"] = r.report ? py::object(report_dict(*r.report)) : py::none();
        return d;
      },
      py::arg("config_text"));
}
