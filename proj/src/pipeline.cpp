#include "s2fuse/pipeline.hpp"

#include <algorithm>
#include <set>

#include "s2fuse/degradation.hpp"
#include "s2fuse/diffusion.hpp"
#include "s2fuse/errors.hpp"
#include "s2fuse/fusion.hpp"
#include "s2fuse/pansharpen.hpp"
#include "s2fuse/raster_io.hpp"
#include "s2fuse/resample.hpp"
#include "s2fuse/rng.hpp"
#include "s2fuse/scene.hpp"

namespace s2fuse {

namespace {

const std::vector<std::string> kStageOrder{"degrade", "sr_guide", "fuse", "eval"};
const std::vector<std::string> kArtifacts{"ms", "guide", "ms_lr", "guide_lr", "guide_sr", "fused"};

std::vector<std::string> stage_needs(const std::string& stage) {
  if (stage == "degrade") return {"ms", "guide"};
  if (stage == "sr_guide") return {"guide_lr"};
  if (stage == "fuse") return {"ms_lr"};
  return {"ms", "fused"};
}

std::vector<std::string> stage_makes(const std::string& stage) {
  if (stage == "degrade") return {"ms_lr", "guide_lr"};
  if (stage == "sr_guide") return {"guide_sr"};
  if (stage == "fuse") return {"fused"};
  return {};
}

template <class F>
void run_stage(const std::string& name, F&& body) {
  const std::string prefix = "stage '" + name + "' failed: ";
  try {
    body();
  } catch (const DegenerateInputError& e) {
    throw DegenerateInputError(prefix + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(prefix + e.what());
  } catch (const DomainError& e) {
    throw DomainError(prefix + e.what());
  } catch (const ParameterError& e) {
    throw ParameterError(prefix + e.what());
  } catch (const IoError& e) {
    throw IoError(prefix + e.what());
  } catch (const Error& e) {
    throw Error(prefix + e.what());
  }
}

}  // namespace

PipelineConfig PipelineConfig::from_config(const Config& cfg) {
  std::set<std::string> known{"pipeline.stages",   "pipeline.out_dir",     "pipeline.seed",
                              "pipeline.png",      "scene.synthetic",      "scene.size",
                              "scene.ms_bands",    "scene.seed",           "degrade.ratio",
                              "degrade.mtf_blur",  "degrade.guide_scale",  "degrade.guide_blur",
                              "degrade.guide_noise", "degrade.harmonize",  "degrade.gamma_file",
                              "sr.method",         "sr.checkpoint",        "fuse.method",
                              "fuse.checkpoint",   "fuse.gnyq",            "eval.peak"};
  for (const std::string& a : kArtifacts) known.insert("input." + a);
  cfg.reject_unknown(known);

  PipelineConfig p;
  p.stages = cfg.get_list("pipeline.stages");
  if (p.stages.empty()) throw ParameterError("config: pipeline.stages lists no stages");
  std::size_t last = 0;
  for (std::size_t i = 0; i < p.stages.size(); ++i) {
    const auto it = std::find(kStageOrder.begin(), kStageOrder.end(), p.stages[i]);
    if (it == kStageOrder.end()) throw ParameterError("config: unknown stage '" + p.stages[i] + "'");
    const auto pos = static_cast<std::size_t>(it - kStageOrder.begin()) + 1;
    if (pos <= last) throw ParameterError("config: stages must be distinct and in the order degrade, sr_guide, fuse, eval");
    last = pos;
  }
  p.out_dir = cfg.require("pipeline.out_dir");
  const long long seed = cfg.get_int("pipeline.seed", -1);
  if (seed < 0) throw ParameterError("config: pipeline.seed is required and must be non-negative");
  p.seed = static_cast<std::uint64_t>(seed);
  p.png = cfg.get_bool("pipeline.png", false);

  for (const std::string& a : kArtifacts)
    if (cfg.has("input." + a)) p.inputs[a] = cfg.get("input." + a, "");

  p.synthetic = cfg.get_bool("scene.synthetic", false);
  p.scene_size = static_cast<int>(cfg.get_int("scene.size", p.scene_size));
  p.scene_ms_bands = static_cast<int>(cfg.get_int("scene.ms_bands", p.scene_ms_bands));
  p.scene_seed = static_cast<std::uint64_t>(cfg.get_int("scene.seed", static_cast<long long>(p.seed)));

  p.ratio = static_cast<int>(cfg.get_int("degrade.ratio", p.ratio));
  p.mtf_blur = cfg.get_bool("degrade.mtf_blur", p.mtf_blur);
  p.guide_scale = static_cast<int>(cfg.get_int("degrade.guide_scale", p.guide_scale));
  p.guide_blur = cfg.get("degrade.guide_blur", p.guide_blur);
  p.guide_noise = cfg.get_double("degrade.guide_noise", p.guide_noise);
  p.harmonize = cfg.get_bool("degrade.harmonize", p.harmonize);
  p.gamma_file = cfg.get("degrade.gamma_file", "");
  p.sr_method = cfg.get("sr.method", p.sr_method);
  p.sr_checkpoint = cfg.get("sr.checkpoint", "");
  p.fuse_method = cfg.get("fuse.method", p.fuse_method);
  p.fuse_checkpoint = cfg.get("fuse.checkpoint", "");
  if (cfg.has("fuse.gnyq")) p.gnyq = cfg.get_double("fuse.gnyq", 0.3);
  p.peak = cfg.get_double("eval.peak", p.peak);

  if (p.ratio < 1 || p.guide_scale < 1) throw ParameterError("config: ratios must be >= 1");
  if (p.scene_size < 1 || p.scene_ms_bands < 1) throw ParameterError("config: bad scene size or band count");
  if (p.guide_noise < 0.0) throw ParameterError("config: degrade.guide_noise must be non-negative");
  if (p.guide_blur != "none") BlurMode::parse(p.guide_blur);
  if (p.sr_method != "bicubic" && p.sr_method != "toy") throw ParameterError("config: sr.method must be bicubic or toy");
  if (p.sr_method == "toy" && p.sr_checkpoint.empty()) throw ParameterError("config: sr.method toy needs sr.checkpoint");
  if (p.fuse_method != "glpnn" && p.fuse_method != "bicubic") parse_pan_method(p.fuse_method);
  if (p.gnyq) mtf_sigma(*p.gnyq, p.ratio);
  if (p.harmonize && p.gamma_file.empty()) throw ParameterError("config: degrade.harmonize needs degrade.gamma_file");

  // Every stage input must come from an earlier stage or an input file.
  std::set<std::string> available;
  if (p.synthetic) available = {"ms", "guide"};
  for (const auto& [name, path] : p.inputs) available.insert(name);
  for (const std::string& st : p.stages) {
    for (const std::string& need : stage_needs(st))
      if (!available.count(need))
        throw ParameterError("config: stage '" + st + "' needs '" + need + "' but no earlier stage makes it and input." +
                             need + " is not set");
    if (st == "fuse" && !available.count("guide_sr") && !available.count("guide"))
      throw ParameterError("config: stage 'fuse' needs a guide (input.guide or input.guide_sr)");
    for (const std::string& made : stage_makes(st)) available.insert(made);
  }
  std::vector<std::filesystem::path> files;
  for (const auto& [name, path] : p.inputs) files.push_back(path);
  if (!p.gamma_file.empty()) files.push_back(p.gamma_file);
  if (!p.sr_checkpoint.empty()) files.push_back(p.sr_checkpoint);
  if (!p.fuse_checkpoint.empty()) files.push_back(p.fuse_checkpoint);
  for (const auto& f : files)
    if (!std::filesystem::exists(f)) throw IoError("config: file not found: " + f.string());
  return p;
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  PipelineResult result;
  std::map<std::string, Raster> art;
  std::filesystem::create_directories(cfg.out_dir);
  auto emit = [&](const std::string& name, Raster img) {
    const auto path = cfg.out_dir / (name + ".raw");
    write_raster(path, img);
    result.written.push_back(path);
    if (cfg.png) {
      const auto png = cfg.out_dir / (name + ".png");
      write_png(png, img);
      result.written.push_back(png);
    }
    art[name] = std::move(img);
  };
  auto get = [&](const std::string& name) -> const Raster& {
    auto it = art.find(name);
    if (it == art.end()) {
      const auto in = cfg.inputs.find(name);
      if (in == cfg.inputs.end()) throw ParameterError("no raster available for '" + name + "'");
      it = art.emplace(name, read_raster(in->second)).first;
    }
    return it->second;
  };
  auto have = [&](const std::string& name) { return art.count(name) || cfg.inputs.count(name); };

  if (cfg.synthetic) {
    run_stage("scene", [&] {
      SceneSpec spec;
      spec.height = spec.width = cfg.scene_size;
      spec.bands = 3 + cfg.scene_ms_bands;
      spec.seed = cfg.scene_seed;
      Raster scene = gen_scene(spec);
      const std::vector<int> rgb{0, 1, 2};
      std::vector<int> ms_idx;
      for (int b = 0; b < cfg.scene_ms_bands; ++b) ms_idx.push_back(3 + b);
      Raster guide = scene.select_bands(rgb);
      Raster ms = scene.select_bands(ms_idx);
      const char* rgb_names[] = {"B04", "B03", "B02"};
      for (int b = 0; b < 3; ++b) guide.meta(b).name = rgb_names[b];
      for (int b = 0; b < ms.bands(); ++b) ms.meta(b).name = "MS" + std::to_string(b + 1);
      emit("ms", std::move(ms));
      emit("guide", std::move(guide));
    });
  }

  SeededRng rng(cfg.seed);
  for (const std::string& stage : cfg.stages) {
    info("pipeline: running stage " + stage);
    run_stage(stage, [&] {
      if (stage == "degrade") {
        const Raster& ms = get("ms");
        const Raster& guide = get("guide");
        emit("ms_lr", make_wald_sample(ms, guide, cfg.ratio, cfg.mtf_blur).ms_lr);
        DegradationSpec spec;
        spec.scale = cfg.guide_scale;
        spec.noise_sigma = cfg.guide_noise;
        spec.harmonize = cfg.harmonize;
        if (cfg.harmonize) spec.gammas = read_gamma_file(cfg.gamma_file);
        SeededRng drng = rng.derive(1);
        if (cfg.guide_blur != "none") spec.blur = sample_blur(drng, BlurMode::parse(cfg.guide_blur));
        emit("guide_lr", degrade(guide, spec, drng));
      } else if (stage == "sr_guide") {
        const Raster& lr = get("guide_lr");
        if (cfg.sr_method == "toy") {
          int T = 0;
          ToyDiffusionModel model = load_toy_model(cfg.sr_checkpoint, &T);
          if (model.config.scale != cfg.guide_scale)
            throw ParameterError("toy model scale " + std::to_string(model.config.scale) +
                                 " differs from degrade.guide_scale " + std::to_string(cfg.guide_scale));
          SeededRng srng = rng.derive(2);
          emit("guide_sr", toy_super_resolve(model, lr, cosine_schedule(T), srng));
        } else {
          emit("guide_sr", cfg.guide_scale == 1 ? lr : resample_bicubic(lr, Scale::up(cfg.guide_scale)));
        }
      } else if (stage == "fuse") {
        const Raster& ms_lr = get("ms_lr");
        const Raster& guide = have("guide_sr") ? get("guide_sr") : get("guide");
        std::vector<double> gnyq;
        for (int b = 0; b < ms_lr.bands(); ++b) gnyq.push_back(cfg.gnyq ? *cfg.gnyq : ms_lr.meta(b).gnyq);
        Raster fused;
        if (cfg.fuse_method == "bicubic") {
          fused = resample_bicubic(ms_lr, Scale::up(cfg.ratio));
        } else if (cfg.fuse_method == "glpnn") {
          FusionParams params;
          if (!cfg.fuse_checkpoint.empty()) {
            params = FusionParams::load(cfg.fuse_checkpoint);
            if (params.config.ratio != cfg.ratio)
              throw ParameterError("fusion checkpoint ratio " + std::to_string(params.config.ratio) +
                                   " differs from degrade.ratio " + std::to_string(cfg.ratio));
          } else {
            warn("no fusion checkpoint given; using identity-initialized networks");
            FusionConfig fc;
            fc.bands = ms_lr.bands();
            fc.ratio = cfg.ratio;
            params = FusionParams(fc, gnyq);
            SeededRng irng = rng.derive(3);
            params.init(irng);
          }
          fused = fuse(ms_lr, guide, params);
        } else {
          const std::vector<double> equal(3, 0.0);
          fused = pansharpen(parse_pan_method(cfg.fuse_method), ms_lr, mix_pan(guide, equal), cfg.ratio, gnyq);
        }
        fused.meta() = ms_lr.meta();
        emit("fused", std::move(fused));
      } else {
        const Raster& ms = get("ms");
        const Raster& fused = get("fused");
        const Raster* lr = have("ms_lr") ? &get("ms_lr") : nullptr;
        MetricsReport rep = evaluate(ms, fused, cfg.ratio, cfg.peak, lr);
        const auto path = cfg.out_dir / "report.txt";
        write_file_atomic(path, rep.table() + "\n" + rep.key_values());
        result.written.push_back(path);
        result.report = std::move(rep);
      }
    });
  }
  return result;
}

}  // namespace s2fuse
