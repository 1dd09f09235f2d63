#include "s2fuse/nn/optim.hpp"

#include <cmath>
#include <sstream>

#include "s2fuse/errors.hpp"
#include "s2fuse/raster_io.hpp"

namespace s2fuse::nn {

Adam::Adam(ParamList params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const ParamTensor* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void Adam::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ParamTensor& p = *params_[k];
    if (!p.requires_grad) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (ParamTensor* p : params_) p->zero_grad();
}

Ema::Ema(const ParamList& live, double decay, bool zero_start) : decay_(decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw ParameterError("EMA decay must lie in [0, 1)");
  for (const ParamTensor* p : live)
    shadow_.push_back(zero_start ? std::vector<double>(p->value.size(), 0.0) : p->value);
}

void Ema::update(const ParamList& live) {
  if (live.size() != shadow_.size()) throw DimensionError("EMA parameter count changed");
  for (std::size_t k = 0; k < live.size(); ++k) {
    auto& s = shadow_[k];
    const auto& v = live[k]->value;
    if (v.size() != s.size()) throw DimensionError("EMA shape mismatch for " + live[k]->name);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = decay_ * s[i] + (1.0 - decay_) * v[i];
  }
  ++updates_;
}

void Ema::copy_to(const ParamList& target) const {
  if (target.size() != shadow_.size()) throw DimensionError("EMA parameter count mismatch");
  for (std::size_t k = 0; k < target.size(); ++k) {
    if (target[k]->value.size() != shadow_[k].size()) throw DimensionError("EMA shape mismatch");
    target[k]->value = shadow_[k];
  }
}

void Ema::copy_debiased_to(const ParamList& target) const {
  if (updates_ == 0) throw ParameterError("EMA has no updates to debias");
  copy_to(target);
  const double corr = 1.0 / (1.0 - std::pow(decay_, static_cast<double>(updates_)));
  for (ParamTensor* p : target)
    for (double& v : p->value) v *= corr;
}

namespace {

std::filesystem::path manifest_path(const std::filesystem::path& p) {
  std::filesystem::path m = p;
  m += ".manifest";
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamList& params, const CheckpointMeta& meta) {
  std::vector<double> flat;
  std::ostringstream man;
  for (const ParamTensor* p : params) {
    man << p->name << ' ' << p->shape.n << ',' << p->shape.c << ',' << p->shape.h << ',' << p->shape.w << ' '
        << flat.size() << '\n';
    flat.insert(flat.end(), p->value.begin(), p->value.end());
  }
  for (const auto& [k, v] : meta) {
    if (k.find_first_of(" \t\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw ParameterError("checkpoint meta keys must be single words");
    man << "meta " << k << ' ' << v << '\n';
  }
  write_file_atomic(path, encode_f32le(flat));
  write_file_atomic(manifest_path(path), man.str());
}

CheckpointMeta load_checkpoint(const std::filesystem::path& path, const ParamList& params) {
  const std::vector<double> flat = decode_f32le(read_file(path));
  std::istringstream man(read_file(manifest_path(path)));
  struct Entry {
    Shape shape;
    std::size_t offset;
  };
  std::map<std::string, Entry> entries;
  CheckpointMeta meta;
  std::string line;
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    if (name == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls >> std::ws, value);
      meta[key] = value;
      continue;
    }
    std::string dims;
    std::size_t offset = 0;
    Shape s;
    char c1, c2, c3;
    ls >> dims >> offset;
    std::istringstream ds(dims);
    if (!(ds >> s.n >> c1 >> s.c >> c2 >> s.h >> c3 >> s.w) || !ls)
      throw IoError(path.string() + ".manifest: bad line '" + line + "'");
    entries[name] = Entry{s, offset};
  }
  for (ParamTensor* p : params) {
    auto it = entries.find(p->name);
    if (it == entries.end()) throw IoError("checkpoint has no tensor '" + p->name + "'");
    if (!(it->second.shape == p->shape))
      throw DimensionError("checkpoint tensor '" + p->name + "' has shape " + it->second.shape.str() +
                           ", expected " + p->shape.str());
    if (it->second.offset + p->value.size() > flat.size()) throw IoError("checkpoint blob is truncated");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(it->second.offset), p->value.size(), p->value.begin());
  }
  return meta;
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) { return load_checkpoint(path, {}); }

GradCheckResult gradcheck(const std::function<Var(Graph&)>& f, const ParamList& wrt, SeededRng& rng, int probes,
                          double h) {
  std::vector<double> proj;
  auto objective = [&](bool run_backward) {
    Graph g;
    Var out = f(g);
    if (proj.empty()) {
      proj.resize(out.shape().size());
      for (double& r : proj) r = rng.uniform(-1.0, 1.0);
    }
    Var loss = sum_all(mul(out, g.input(out.shape(), proj)));
    if (run_backward) g.backward(loss);
    return loss.item();
  };
  for (ParamTensor* p : wrt) p->zero_grad();
  objective(true);
  std::vector<std::vector<double>> analytic;
  for (ParamTensor* p : wrt) analytic.push_back(p->grad);

  GradCheckResult result;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    ParamTensor& p = *wrt[k];
    for (int probe = 0; probe < probes; ++probe) {
      const std::size_t i = static_cast<std::size_t>(rng.below(p.value.size()));
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double up = objective(false);
      p.value[i] = orig - h;
      const double down = objective(false);
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.probes;
    }
  }
  for (ParamTensor* p : wrt) p->zero_grad();
  return result;
}

}  // namespace s2fuse::nn
