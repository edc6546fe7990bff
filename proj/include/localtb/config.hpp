#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "localtb/dyadic.hpp"
#include "localtb/error.hpp"
#include "localtb/kernels.hpp"

namespace localtb {

/// Pipeline stages in execution order.
inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"kernel",     "systems", "preparatory", "decompose",
                                              "stopping",   "suppress", "martingale", "bilinear",
                                              "wbp",        "baby_tb", "final"};
  return names;
}

inline bool is_stage(const std::string& s) {
  const auto& n = stage_names();
  return std::find(n.begin(), n.end(), s) != n.end();
}

/// Stages up to and including `last`.
inline std::vector<std::string> stages_through(const std::string& last) {
  if (!is_stage(last)) throw ConfigError("unknown stage: " + last);
  std::vector<std::string> out;
  for (const auto& s : stage_names()) {
    out.push_back(s);
    if (s == last) break;
  }
  return out;
}

struct KernelSpec {
  std::string name = "hilbert";
  double alpha = 0.4;
  int j = 1;
  double lipschitz = 1.0;
  bool imaginary = false;

  KernelParams params() const { return KernelParams{alpha, j, lipschitz, imaginary}; }
};

struct StoppingSpec {
  double delta = 0.125;
  double C = 16.0;
  double eps = 1e-7;
  double eta = 0.5;
  double c_sigma = 1e6;
  std::vector<double> lambdas{10.0, 100.0, 1000.0};
  bool use_offdiag = true;
};

struct RunConfig {
  int dim = 1;
  int depth = 8;
  KernelSpec kernel;
  ExponentConfig exponents;
  StoppingSpec stopping;
  /// "rough" or "indicator".
  std::string system = "rough";
  double roughness = 4.0;
  /// Suppression power m.
  int m = 1;
  std::uint64_t seed = 1;
  /// Random inputs per sampled verifier.
  int samples = 64;
  /// Relative band for depth stability.
  double band = 0.25;
  std::vector<std::string> stages = stage_names();
  std::string out_dir = "runs";

  bool wants(const std::string& stage) const { return std::find(stages.begin(), stages.end(), stage) != stages.end(); }

  void validate() const {
    if (dim != 1 && dim != 2) throw ConfigError("dim must be 1 or 2");
    const int max_depth = dim == 1 ? 11 : 5;
    if (depth < 3 || depth > max_depth)
      throw ConfigError("depth must lie in [3, " + std::to_string(max_depth) + "] for dim " + std::to_string(dim));
    exponents.validate();
    if (!exponents.baby_tb_admissible()) throw ConfigError("exponents need s' > max(t', 2)");
    const auto& st = stopping;
    if (!(st.delta > 0.0 && st.delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
    if (!(st.C > 0.0) || std::isinf(st.C)) throw ConfigError("C must be positive and finite");
    if (!(st.eps > 0.0 && st.eps < 1.0)) throw ConfigError("eps must lie in (0, 1)");
    if (!(st.eta > 0.0 && st.eta <= 1.0)) throw ConfigError("eta must lie in (0, 1]");
    if (!(st.c_sigma > 0.0) || std::isinf(st.c_sigma)) throw ConfigError("c_sigma must be positive and finite");
    if (st.lambdas.empty()) throw ConfigError("at least one lambda is required");
    for (double l : st.lambdas)
      if (!(l > 0.0) || std::isinf(l)) throw ConfigError("lambdas must be positive and finite");
    if (system != "rough" && system != "indicator") throw ConfigError("system must be rough or indicator");
    if (!(roughness >= 1.0) || std::isinf(roughness)) throw ConfigError("roughness must be at least 1");
    if (2 * m < dim || m > 8) throw ConfigError("suppression power m must satisfy d/2 <= m <= 8");
    if (samples < 1 || samples > 100000) throw ConfigError("samples must lie in [1, 100000]");
    if (!(band > 0.0 && band < 1.0)) throw ConfigError("band must lie in (0, 1)");
    if (stages.empty()) throw ConfigError("no stages selected");
    for (const auto& s : stages)
      if (!is_stage(s)) throw ConfigError("unknown stage: " + s);
    if (out_dir.empty()) throw ConfigError("output directory must not be empty");
    const bool anti = dim == 1 ? make_kernel<1>(kernel.name, depth, kernel.params()).antisymmetric
                               : make_kernel<2>(kernel.name, depth, kernel.params()).antisymmetric;
    if (!st.use_offdiag && !anti) throw ConfigError("off-diagonal stopping may only be disabled for antisymmetric kernels");
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; }))
      throw ConfigError("unknown key " + where + "." + it.key());
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json config_to_json(const RunConfig& c) {
  const auto& e = c.exponents;
  const auto& s = c.stopping;
  return {
      {"dim", c.dim},
      {"depth", c.depth},
      {"kernel",
       {{"name", c.kernel.name},
        {"alpha", c.kernel.alpha},
        {"j", c.kernel.j},
        {"lipschitz", c.kernel.lipschitz},
        {"imaginary", c.kernel.imaginary}}},
      {"exponents", {{"p", e.p}, {"q", e.q}, {"u", e.u}, {"v", e.v}, {"s", e.s}, {"t", e.t}, {"r", e.r}}},
      {"stopping",
       {{"delta", s.delta},
        {"C", s.C},
        {"eps", s.eps},
        {"eta", s.eta},
        {"c_sigma", s.c_sigma},
        {"lambdas", s.lambdas},
        {"use_offdiag", s.use_offdiag}}},
      {"system", c.system},
      {"roughness", c.roughness},
      {"m", c.m},
      {"seed", c.seed},
      {"samples", c.samples},
      {"band", c.band},
      {"stages", c.stages},
      {"out_dir", c.out_dir},
  };
}

/// Missing keys keep their defaults; unknown keys and wrong types are errors.
inline RunConfig config_from_json(const nlohmann::json& j) {
  using detail::read;
  RunConfig c;
  try {
    detail::reject_unknown(j,
                           {"dim", "depth", "kernel", "exponents", "stopping", "system", "roughness", "m", "seed",
                            "samples", "band", "stages", "out_dir"},
                           "config");
    read(j, "dim", c.dim);
    read(j, "depth", c.depth);
    if (j.contains("kernel")) {
      const auto& k = j.at("kernel");
      detail::reject_unknown(k, {"name", "alpha", "j", "lipschitz", "imaginary"}, "kernel");
      read(k, "name", c.kernel.name);
      read(k, "alpha", c.kernel.alpha);
      read(k, "j", c.kernel.j);
      read(k, "lipschitz", c.kernel.lipschitz);
      read(k, "imaginary", c.kernel.imaginary);
    }
    if (j.contains("exponents")) {
      const auto& e = j.at("exponents");
      detail::reject_unknown(e, {"p", "q", "u", "v", "s", "t", "r"}, "exponents");
      read(e, "p", c.exponents.p);
      read(e, "q", c.exponents.q);
      read(e, "u", c.exponents.u);
      read(e, "v", c.exponents.v);
      read(e, "s", c.exponents.s);
      read(e, "t", c.exponents.t);
      read(e, "r", c.exponents.r);
    }
    if (j.contains("stopping")) {
      const auto& s = j.at("stopping");
      detail::reject_unknown(s, {"delta", "C", "eps", "eta", "c_sigma", "lambdas", "use_offdiag"}, "stopping");
      read(s, "delta", c.stopping.delta);
      read(s, "C", c.stopping.C);
      read(s, "eps", c.stopping.eps);
      read(s, "eta", c.stopping.eta);
      read(s, "c_sigma", c.stopping.c_sigma);
      read(s, "lambdas", c.stopping.lambdas);
      read(s, "use_offdiag", c.stopping.use_offdiag);
    }
    read(j, "system", c.system);
    read(j, "roughness", c.roughness);
    read(j, "m", c.m);
    read(j, "seed", c.seed);
    read(j, "samples", c.samples);
    read(j, "band", c.band);
    read(j, "stages", c.stages);
    read(j, "out_dir", c.out_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    // Comments are allowed so the file stays human-editable.
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << config_to_json(c).dump(2) << '\n';
}

}  // namespace localtb
