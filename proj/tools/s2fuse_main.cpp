#include <CLI11.hpp>
#include <Eigen/Core>

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

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
#include "s2fuse/rng.hpp"
#include "s2fuse/scene.hpp"

using namespace s2fuse;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDegenerate = 3;

struct Globals {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  bool verbose = false;
};

std::uint64_t need_seed(const Globals& g, const std::string& cmd) {
  if (!g.seed) throw CLI::ValidationError("--seed", cmd + " generates random data and needs an explicit --seed");
  return *g.seed;
}

// Synthetic 3-band guide + MS scene split used by train-fusion.
std::pair<Raster, Raster> synthetic_pair(int size, int ms_bands, std::uint64_t seed) {
  SceneSpec spec;
  spec.height = spec.width = size;
  spec.bands = 3 + ms_bands;
  spec.seed = seed;
  Raster scene = gen_scene(spec);
  std::vector<int> ms_idx;
  for (int b = 0; b < ms_bands; ++b) ms_idx.push_back(3 + b);
  const std::vector<int> rgb{0, 1, 2};
  return {scene.select_bands(ms_idx), scene.select_bands(rgb)};
}

std::string join(const std::vector<double>& v) {
  std::ostringstream s;
  s.precision(10);
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
  return s.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"s2fuse: multispectral degradation, fusion and evaluation toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random draw");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--verbose", g.verbose, "Progress output on stderr");

  // degrade
  auto* degrade_cmd = app.add_subcommand("degrade", "Harmonize, blur, downsample and add noise");
  std::string d_in, d_out, d_blur = "none", d_gamma;
  int d_scale = 1;
  double d_noise = 0.0;
  bool d_no_harm = false;
  degrade_cmd->add_option("--in", d_in, "Input raster")->required();
  degrade_cmd->add_option("--out", d_out, "Output raster")->required();
  degrade_cmd->add_option("--scale", d_scale, "Downsampling factor")->check(CLI::PositiveNumber);
  degrade_cmd->add_option("--blur", d_blur, "none | train | validation | fixed:<sigma>");
  degrade_cmd->add_option("--noise", d_noise, "Noise sigma on the 0-255 scale");
  degrade_cmd->add_option("--gamma-file", d_gamma, "Per-band gamma file");
  degrade_cmd->add_flag("--no-harmonize", d_no_harm, "Skip harmonization even with a gamma file");

  // harmonize
  auto* harm_cmd = app.add_subcommand("harmonize", "Per-band power-law harmonization");
  std::string h_in, h_out, h_gamma;
  double h_k = 255.0;
  harm_cmd->add_option("--in", h_in)->required();
  harm_cmd->add_option("--out", h_out)->required();
  harm_cmd->add_option("--gamma-file", h_gamma)->required();
  harm_cmd->add_option("--k", h_k, "Dynamic range constant");

  // make-wald
  auto* wald_cmd = app.add_subcommand("make-wald", "Reduced-resolution training pair");
  std::string w_ms, w_guide, w_out_lr, w_out_guide;
  int w_ratio = 4;
  bool w_no_mtf = false;
  wald_cmd->add_option("--ms", w_ms, "Native MS raster (becomes the target)")->required();
  wald_cmd->add_option("--guide", w_guide, "RGB guide on the MS grid or finer")->required();
  wald_cmd->add_option("--ratio", w_ratio)->check(CLI::PositiveNumber);
  wald_cmd->add_option("--out-lr", w_out_lr)->required();
  wald_cmd->add_option("--out-guide", w_out_guide)->required();
  wald_cmd->add_flag("--no-mtf", w_no_mtf, "Plain boxcar reduction without the MTF blur");

  // train-fusion
  auto* train_cmd = app.add_subcommand("train-fusion", "Train a fusion branch on Wald pairs");
  std::vector<std::string> t_ms, t_guide;
  std::string t_out, t_group;
  int t_ratio = 4, t_steps = 2000, t_tile = 32, t_synthetic = 0, t_size = 64, t_bands = 4, t_eval = 100;
  double t_lr = 1e-4, t_val = 0.25, t_gnyq = 0.3;
  train_cmd->add_option("--ms", t_ms, "Native MS rasters");
  train_cmd->add_option("--guide", t_guide, "Matching RGB guides");
  train_cmd->add_option("--synthetic", t_synthetic, "Generate this many synthetic scenes instead");
  train_cmd->add_option("--size", t_size, "Synthetic scene edge");
  train_cmd->add_option("--bands", t_bands, "Synthetic MS band count");
  train_cmd->add_option("--group", t_group, "10m | 20m | 60m (sets the ratio)");
  train_cmd->add_option("--ratio", t_ratio)->check(CLI::PositiveNumber);
  train_cmd->add_option("--steps", t_steps)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--tile", t_tile)->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", t_lr);
  train_cmd->add_option("--eval-every", t_eval)->check(CLI::PositiveNumber);
  train_cmd->add_option("--val-fraction", t_val)->check(CLI::Range(0.0, 0.9));
  train_cmd->add_option("--gnyq", t_gnyq, "MTF gain at Nyquist for every band");
  train_cmd->add_option("--out", t_out, "Checkpoint path")->required();

  // fuse
  auto* fuse_cmd = app.add_subcommand("fuse", "Fuse MS bands with an RGB guide");
  std::string f_ms, f_guide, f_ckpt, f_out;
  int f_ratio = 4;
  fuse_cmd->add_option("--ms", f_ms, "Low-resolution MS raster")->required();
  fuse_cmd->add_option("--guide", f_guide, "RGB guide on the fine grid")->required();
  fuse_cmd->add_option("--checkpoint", f_ckpt, "Trained parameters (identity networks when omitted)");
  fuse_cmd->add_option("--ratio", f_ratio, "Ratio for identity networks")->check(CLI::PositiveNumber);
  fuse_cmd->add_option("--out", f_out)->required();

  // pansharpen
  auto* pan_cmd = app.add_subcommand("pansharpen", "Classical pansharpening baselines");
  std::string p_method, p_ms, p_pan, p_out;
  int p_ratio = 4;
  std::vector<double> p_gnyq;
  pan_cmd->add_option("--method", p_method, "gs | ihs | pca | glp")->required();
  pan_cmd->add_option("--ms", p_ms)->required();
  pan_cmd->add_option("--pan", p_pan)->required();
  pan_cmd->add_option("--ratio", p_ratio)->required()->check(CLI::PositiveNumber);
  pan_cmd->add_option("--gnyq", p_gnyq, "GLP MTF gains (default: band metadata)");
  pan_cmd->add_option("--out", p_out)->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Quality metrics report");
  std::string e_ref, e_pred, e_lr, e_out;
  double e_ratio = 4.0, e_peak = 255.0;
  eval_cmd->add_option("--ref", e_ref)->required();
  eval_cmd->add_option("--pred", e_pred)->required();
  eval_cmd->add_option("--lr", e_lr, "LR input for reflectance consistency");
  eval_cmd->add_option("--ratio", e_ratio);
  eval_cmd->add_option("--peak", e_peak);
  eval_cmd->add_option("--out", e_out, "Report file")->required();

  // diffuse-toy
  auto* toy_cmd = app.add_subcommand("diffuse-toy", "Toy-scale conditional diffusion SR");
  toy_cmd->require_subcommand(1);
  auto* toy_train = toy_cmd->add_subcommand("train", "Train the toy model on synthetic scenes");
  auto* toy_sample = toy_cmd->add_subcommand("sample", "Super-resolve an LR raster");
  ToyTrainConfig tc;
  nn::ToyDenoiserConfig dc;
  std::string tt_out, tt_blur = "train";
  toy_train->add_option("--out", tt_out, "Checkpoint path")->required();
  toy_train->add_option("--steps", tc.steps)->check(CLI::NonNegativeNumber);
  toy_train->add_option("--T", tc.T)->check(CLI::PositiveNumber);
  toy_train->add_option("--patch", tc.patch)->check(CLI::PositiveNumber);
  toy_train->add_option("--scenes", tc.scenes)->check(CLI::PositiveNumber);
  toy_train->add_option("--lr", tc.lr);
  toy_train->add_option("--blur", tt_blur, "train | validation | fixed:<sigma>");
  toy_train->add_option("--scale", dc.scale)->check(CLI::PositiveNumber);
  toy_train->add_option("--features", dc.features)->check(CLI::PositiveNumber);
  toy_train->add_option("--blocks", dc.blocks)->check(CLI::PositiveNumber);
  std::string ts_ckpt, ts_lr, ts_out;
  toy_sample->add_option("--checkpoint", ts_ckpt)->required();
  toy_sample->add_option("--lr", ts_lr)->required();
  toy_sample->add_option("--out", ts_out)->required();

  // gen-scene
  auto* scene_cmd = app.add_subcommand("gen-scene", "Synthetic multi-band scene");
  std::string s_out, s_content = "mixture";
  int s_size = 64, s_bands = 3;
  double s_texture = 2.0;
  bool s_png = false;
  scene_cmd->add_option("--out", s_out)->required();
  scene_cmd->add_option("--size", s_size)->check(CLI::PositiveNumber);
  scene_cmd->add_option("--bands", s_bands)->check(CLI::PositiveNumber);
  scene_cmd->add_option("--content", s_content, "gradients | blobs | rectangles | checkerboard | mixture");
  scene_cmd->add_option("--texture", s_texture, "Independent texture std");
  scene_cmd->add_flag("--png", s_png, "Also write a PNG preview");

  // run
  auto* run_cmd = app.add_subcommand("run", "Run a configured pipeline");
  std::string r_config;
  run_cmd->add_option("--config", r_config)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  set_verbose(g.verbose);
  Eigen::setNbThreads(g.threads);

  try {
    if (*degrade_cmd) {
      const std::uint64_t seed = need_seed(g, "degrade");
      Raster img = read_raster(d_in);
      DegradationSpec spec;
      spec.scale = d_scale;
      spec.noise_sigma = d_noise;
      spec.harmonize = !d_no_harm && !d_gamma.empty();
      if (!d_gamma.empty()) spec.gammas = read_gamma_file(d_gamma);
      SeededRng rng(seed);
      if (d_blur != "none") spec.blur = sample_blur(rng, BlurMode::parse(d_blur));
      write_raster(d_out, degrade(img, spec, rng));
    } else if (*harm_cmd) {
      write_raster(h_out, harmonize(read_raster(h_in), read_gamma_file(h_gamma), h_k));
    } else if (*wald_cmd) {
      FusionSample s = make_wald_sample(read_raster(w_ms), read_raster(w_guide), w_ratio, !w_no_mtf);
      write_raster(w_out_lr, s.ms_lr);
      write_raster(w_out_guide, s.guide);
    } else if (*train_cmd) {
      const std::uint64_t seed = need_seed(g, "train-fusion");
      if (!t_group.empty()) t_ratio = group_info(parse_group(t_group)).ratio;
      std::vector<FusionSample> samples;
      if (t_synthetic > 0) {
        for (int i = 0; i < t_synthetic; ++i) {
          auto [ms, guide] = synthetic_pair(t_size, t_bands, seed + 7919ULL * static_cast<std::uint64_t>(i + 1));
          for (auto& m : ms.meta()) m.gnyq = t_gnyq;
          samples.push_back(make_wald_sample(ms, guide, t_ratio));
        }
      } else {
        if (t_ms.empty() || t_ms.size() != t_guide.size())
          throw CLI::ValidationError("--ms/--guide", "give matching --ms and --guide lists or --synthetic N");
        for (std::size_t i = 0; i < t_ms.size(); ++i)
          samples.push_back(make_wald_sample(read_raster(t_ms[i]), read_raster(t_guide[i]), t_ratio));
      }
      const auto n_val = static_cast<std::size_t>(t_val * static_cast<double>(samples.size()));
      std::vector<FusionSample> val(samples.end() - static_cast<std::ptrdiff_t>(n_val), samples.end());
      samples.resize(samples.size() - n_val);
      FusionConfig fc;
      fc.bands = samples.front().ms_lr.bands();
      fc.ratio = t_ratio;
      std::vector<double> gnyq;
      for (int b = 0; b < fc.bands; ++b) gnyq.push_back(samples.front().target->meta(b).gnyq);
      FusionParams params(fc, gnyq);
      SeededRng init_rng(seed);
      params.init(init_rng);
      FusionTrainConfig cfg;
      cfg.steps = t_steps;
      cfg.tile = t_tile;
      cfg.lr = t_lr;
      cfg.eval_every = t_eval;
      cfg.seed = seed + 1;
      FusionTrainResult res = train_fusion(samples, val, params, cfg);
      params.save(t_out);
      std::cout << "parameters " << params.parameter_count() << "\ninitial_val_ergas " << res.val_ergas.front()
                << "\nbest_val_ergas " << res.best_val_ergas << "\nbest_step " << res.best_step << '\n';
    } else if (*fuse_cmd) {
      Raster ms = read_raster(f_ms);
      Raster guide = read_raster(f_guide);
      FusionParams params;
      if (!f_ckpt.empty()) {
        params = FusionParams::load(f_ckpt);
      } else {
        FusionConfig fc;
        fc.bands = ms.bands();
        fc.ratio = f_ratio;
        std::vector<double> gnyq;
        for (int b = 0; b < ms.bands(); ++b) gnyq.push_back(ms.meta(b).gnyq);
        params = FusionParams(fc, gnyq);
        SeededRng rng(g.seed.value_or(0));
        params.init(rng);
      }
      Raster out = fuse(ms, guide, params);
      out.meta() = ms.meta();
      write_raster(f_out, out);
    } else if (*pan_cmd) {
      const PanMethod m = parse_pan_method(p_method);
      Raster out = pansharpen(m, read_raster(p_ms), read_raster(p_pan), p_ratio, p_gnyq);
      write_raster(p_out, out);
    } else if (*eval_cmd) {
      Raster ref = read_raster(e_ref);
      Raster pred = read_raster(e_pred);
      std::optional<Raster> lr;
      if (!e_lr.empty()) lr = read_raster(e_lr);
      MetricsReport rep = evaluate(ref, pred, e_ratio, e_peak, lr ? &*lr : nullptr);
      const std::string text = rep.table() + "\n" + rep.key_values();
      write_file_atomic(e_out, text);
      std::cout << rep.table();
    } else if (*toy_cmd) {
      if (*toy_train) {
        tc.seed = need_seed(g, "diffuse-toy train");
        tc.blur = BlurMode::parse(tt_blur);
        ToyDiffusionModel model(dc);
        SeededRng rng(tc.seed);
        model.init(rng);
        ToyTrainResult res = train_toy_diffusion(model, tc);
        save_toy_model(tt_out, model, tc.T);
        if (!res.losses.empty()) std::cout << "final_loss " << res.losses.back() << '\n';
      } else {
        const std::uint64_t seed = need_seed(g, "diffuse-toy sample");
        int T = 0;
        ToyDiffusionModel model = load_toy_model(ts_ckpt, &T);
        SeededRng rng(seed);
        write_raster(ts_out, toy_super_resolve(model, read_raster(ts_lr), cosine_schedule(T), rng));
      }
    } else if (*scene_cmd) {
      SceneSpec spec;
      spec.height = spec.width = s_size;
      spec.bands = s_bands;
      spec.content = parse_scene_content(s_content);
      spec.seed = need_seed(g, "gen-scene");
      spec.texture_sigma = s_texture;
      Raster img = gen_scene(spec);
      write_raster(s_out, img);
      if (s_png) write_png(s_out + ".png", img);
      info("mixing " + join(scene_mixing(spec)));
    } else if (*run_cmd) {
      PipelineConfig cfg = PipelineConfig::from_config(Config::load(r_config));
      if (g.seed) cfg.seed = *g.seed;
      PipelineResult res = run_pipeline(cfg);
      for (const auto& p : res.written) std::cout << p.string() << '\n';
      if (res.report) std::cout << res.report->table();
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DegenerateInputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDegenerate;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
