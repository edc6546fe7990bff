#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "localtb/accretive.hpp"
#include "localtb/dyadic.hpp"
#include "localtb/kernels.hpp"
#include "localtb/maximal.hpp"
#include "localtb/operators.hpp"

namespace localtb {

/// Raised when the stopping parameters leave no room for sparseness.
class NoSparsenessMargin : public Error {
 public:
  using Error::Error;
};

/// Maximal cubes below `top` (top included) for which `fires` holds, found by
/// a top-down scan that does not descend into selected cubes.
template <int D>
std::vector<Cube<D>> maximal_cubes(const Cube<D>& top, int depth, const std::function<bool(const Cube<D>&)>& fires) {
  std::vector<Cube<D>> out, queue{top};
  for (std::size_t i = 0; i < queue.size(); ++i) {
    const auto& q = queue[i];
    if (fires(q)) {
      out.push_back(q);
    } else if (q.level < depth) {
      for (const auto& c : children(q, depth)) queue.push_back(c);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

template <int D>
double total_volume(const std::vector<Cube<D>>& cubes) {
  double s = 0.0;
  for (const auto& q : cubes) s += q.volume();
  return s;
}

/// φ_Q(x) = (ℓ(Q) / (ℓ(Q) + |x − c_Q|))^{D+α}.
template <int D>
double envelope_bump(const Cube<D>& q, const Point<D>& x, double alpha) {
  const double l = q.side();
  return std::pow(l / (l + distance<D>(x, q.center())), D + alpha);
}

/// Calderón–Zygmund decomposition of b on Q₀ at level `threshold` for the
/// averages of |b|^p: b = b̃ + Σ d_Q over the maximal cubes with ⨍_Q |b|^p ≥
/// threshold, with d_Q = (b − ⟨b⟩_Q) 1_Q.
template <int D>
struct CZDecomposition {
  Cube<D> top;
  double p = 1.5;
  double threshold = 1.0;
  double alpha = 0.4;
  GridFunction<D> original;
  GridFunction<D> good;
  std::vector<Cube<D>> bad;
  /// Q₀ itself exceeds the threshold; b̃ is then ⟨b⟩_{Q₀} 1_{Q₀}.
  bool vacuous = false;
  /// A selected cube is a finest cell, so the decomposition cannot refine it.
  bool degenerate = false;
  /// (1/threshold) ∫_{Q₀} |b|^p, which bounds the total bad measure.
  double chebyshev_bound = 0.0;

  double bad_measure() const { return total_volume(bad); }
  /// Guaranteed bound on ‖b̃‖_∞: threshold^{1/p} 2^{D/p}.
  double sup_bound() const { return std::pow(threshold, 1.0 / p) * std::pow(2.0, D / p); }

  GridFunction<D> bad_part(const Cube<D>& q) const {
    auto d = original.restricted(q);
    const double m = original.average(q);
    const auto box = q.cells(original.depth());
    for (std::size_t i = 0; i < box.size(); ++i) d[linear_cell<D>(box.cell(i), original.depth())] -= m;
    return d;
  }

  /// e(x) = Σ_{Q bad} φ_Q(x) at the cell centers of `box` (possibly padded).
  std::vector<double> envelope_on(const Box<D>& box) const {
    std::vector<double> e(box.size(), 0.0);
    const int n = original.depth();
    for (std::size_t i = 0; i < box.size(); ++i) {
      const auto x = cell_center<D>(box.cell(i), n);
      for (const auto& q : bad) e[i] += envelope_bump<D>(q, x, alpha);
    }
    return e;
  }

  GridFunction<D> envelope() const {
    const auto dom = domain_box<D>(original.depth());
    return GridFunction<D>(original.depth(), envelope_on(dom));
  }
};

template <int D>
CZDecomposition<D> cz_decompose(const GridFunction<D>& b, const Cube<D>& top, double p, double threshold,
                                double alpha) {
  if (!(threshold > 0.0)) throw Error("threshold must be positive");
  if (!b.supported_in(top)) throw Error("function not supported in the top cube");
  const int n = b.depth();
  CZDecomposition<D> dec;
  dec.top = top;
  dec.p = p;
  dec.threshold = threshold;
  dec.alpha = alpha;
  dec.original = b;
  GridFunction<D> bp(n);
  for (std::size_t i = 0; i < b.size(); ++i) bp[i] = std::pow(std::abs(b[i]), p);
  const CubeSums<D> sums(bp);
  dec.chebyshev_bound = sums.sum(top) * b.cell_volume() / threshold;
  dec.bad = maximal_cubes<D>(top, n, [&](const Cube<D>& q) { return sums.average(q) >= threshold; });
  dec.vacuous = !dec.bad.empty() && dec.bad.front() == top;
  dec.good = b;
  for (const auto& q : dec.bad) {
    if (q.level == n) dec.degenerate = true;
    const double m = b.average(q);
    const auto box = q.cells(n);
    for (std::size_t i = 0; i < box.size(); ++i) dec.good[linear_cell<D>(box.cell(i), n)] = m;
  }
  return dec;
}

struct EnvelopeNorm {
  double norm = 0.0;
  /// norm / |Q₀|^{1/u}.
  double ratio = 0.0;
};

/// ‖Σ φ_Q‖_{L^u} summed over the padded box 3Q⁰.
template <int D>
EnvelopeNorm error_envelope_norm(const CZDecomposition<D>& dec, double u) {
  if (!(u >= 1.0) || std::isinf(u)) throw Error("envelope exponent must lie in [1, inf)");
  EnvelopeNorm r;
  if (dec.bad.empty()) return r;
  const int n = dec.original.depth();
  const auto e = dec.envelope_on(padded_box<D>(n));
  double s = 0.0;
  for (double v : e) s += std::pow(v, u);
  r.norm = std::pow(s * std::ldexp(1.0, -D * n), 1.0 / u);
  r.ratio = r.norm / std::pow(dec.top.volume(), 1.0 / u);
  return r;
}

// ---------------------------------------------------------------------------

struct TbStoppingParams {
  double p = 1.5;
  double eps = 1e-3;
  double c_sigma = 10.0;
  double eta = 0.5;
  bool use_offdiag = true;
};

/// Precomputed data of one forest cube Q₀ on the grid.
template <int D>
struct TbStoppingInputs {
  GridFunction<D> b;
  GridFunction<D> good;
  GridFunction<D> envelope;
  GridFunction<D> tsharp;
  GridFunction<D> mb;
  /// ⨍_Q T_#(1_{(3Q)^c} b); required when the off-diagonal condition is used.
  std::function<double(const Cube<D>&)> offdiag_average;
};

template <int D>
struct TbStoppingResult {
  std::vector<Cube<D>> cubes;
  double selected_fraction = 0.0;
  /// Measures (relative to |Q₀|) of the maximal cubes of each condition.
  double tb_fraction = 0.0;
  double offdiag_fraction = 0.0;
  double degen_fraction = 0.0;
  /// A = ⨍_{Q₀} [T_# b + Mb + e]^p.
  double testing_average = 0.0;
  /// C_b = (⨍_{Q₀} |b|^p)^{1/p}.
  double size_const = 0.0;
  /// τ from the measure chain: ((1−η)/C_b)^{p′} − ε·A − σ.
  double tau_cert = 0.0;
  double tau_measured = 0.0;
  bool depth_truncated = false;
};

/// Maximal cubes Q ⊆ Q₀ with ⨍_Q [T_# b + Mb + e]^p > 1/ε, or (if enabled)
/// ⨍_Q T_#(1_{(3Q)^c} b) > C_σ, or |⨍_Q b̃| ≤ η. Throws NoSparsenessMargin
/// when the certified fraction τ is not positive.
template <int D>
TbStoppingResult<D> tb_stopping_cubes(const Cube<D>& q0, const TbStoppingInputs<D>& in, const TbStoppingParams& par) {
  if (par.use_offdiag && !in.offdiag_average) throw Error("off-diagonal stopping needs off-diagonal averages");
  const int n = in.b.depth();
  GridFunction<D> f(n), bp(n);
  for (std::size_t i = 0; i < f.size(); ++i) {
    f[i] = std::pow(in.tsharp[i] + in.mb[i] + in.envelope[i], par.p);
    bp[i] = std::pow(std::abs(in.b[i]), par.p);
  }
  const CubeSums<D> fs(f), gs(in.good);
  TbStoppingResult<D> r;
  r.testing_average = fs.average(q0);
  r.size_const = std::pow(CubeSums<D>(bp).average(q0), 1.0 / par.p);

  std::map<Cube<D>, double> offdiag_cache;
  const auto offdiag = [&](const Cube<D>& q) {
    const auto it = offdiag_cache.find(q);
    if (it != offdiag_cache.end()) return it->second;
    return offdiag_cache[q] = in.offdiag_average(q);
  };
  const auto tb = [&](const Cube<D>& q) { return fs.average(q) > 1.0 / par.eps; };
  const auto od = [&](const Cube<D>& q) { return par.use_offdiag && offdiag(q) > par.c_sigma; };
  const auto dg = [&](const Cube<D>& q) { return std::abs(gs.average(q)) <= par.eta; };

  const double vol = q0.volume();
  r.tb_fraction = total_volume(maximal_cubes<D>(q0, n, tb)) / vol;
  r.offdiag_fraction = par.use_offdiag ? total_volume(maximal_cubes<D>(q0, n, od)) / vol : 0.0;
  r.degen_fraction = total_volume(maximal_cubes<D>(q0, n, dg)) / vol;
  r.cubes = maximal_cubes<D>(q0, n, [&](const Cube<D>& q) { return tb(q) || od(q) || dg(q); });
  r.selected_fraction = total_volume(r.cubes) / vol;
  for (const auto& c : r.cubes)
    if (c.level == n) r.depth_truncated = true;
  const double margin = std::pow((1.0 - par.eta) / r.size_const, conjugate(par.p));
  r.tau_cert = margin - par.eps * r.testing_average - r.offdiag_fraction;
  r.tau_measured = 1.0 - r.selected_fraction;
  if (!(r.tau_cert > 0.0) || (!r.cubes.empty() && r.cubes.front() == q0))
    throw NoSparsenessMargin("no sparseness margin at " + q0.str());
  return r;
}

// ---------------------------------------------------------------------------

struct ForestParams {
  double p = 1.5;
  double delta = 0.125;
  double C = 16.0;
  double eps = 1e-3;
  double c_sigma = 10.0;
  double eta = 0.5;
  bool use_offdiag = true;
  /// Stop after this many generations even if cubes remain.
  int max_generations = 64;

  double threshold() const { return C / delta; }
};

template <int D>
struct ForestCubeRecord {
  Cube<D> cube;
  int generation = 0;
  std::size_t bad_cubes = 0;
  double bad_fraction = 0.0;
  double chebyshev_fraction = 0.0;
  double good_sup = 0.0;
  double envelope_ratio = 0.0;
  TbStoppingResult<D> stop;
};

/// The iterated families 𝒯_k (Tb-stopping) and ℬ_k (b-stopping) below a top
/// cube, with the good parts b̃_Q for every Q ∈ 𝒯 = ∪𝒯_k.
template <int D>
struct StoppingForest {
  ForestParams params;
  Cube<D> top;
  std::vector<std::vector<Cube<D>>> tb;
  std::vector<std::vector<Cube<D>>> bad;
  std::vector<ForestCubeRecord<D>> records;
  AccretiveSystem<D> good_system;
  /// min over forest cubes of the certified τ, and of the measured one.
  double tau = 1.0;
  double tau_measured = 1.0;
  bool depth_truncated = false;
  bool exhausted = true;

  StoppingForest(int depth, double p) : good_system(depth, std::numeric_limits<double>::infinity(), p, "good") {}

  std::vector<Cube<D>> all_bad() const {
    std::vector<Cube<D>> out;
    for (const auto& g : bad) out.insert(out.end(), g.begin(), g.end());
    return out;
  }
  std::vector<Cube<D>> all_tb() const {
    std::vector<Cube<D>> out;
    for (const auto& g : tb) out.insert(out.end(), g.begin(), g.end());
    return out;
  }
  double generation_measure(const std::vector<Cube<D>>& g) const { return total_volume(g) / top.volume(); }
  double total_bad_fraction() const { return total_volume(all_bad()) / top.volume(); }
};

/// T_#(1_{(3Q)^c} b) averaged over Q.
template <int D>
double offdiag_tsharp_average(const DiscreteOperator<D>& op, const GridFunction<D>& b, const Cube<D>& q) {
  const int n = b.depth();
  auto masked = b;
  const auto tri = q.triple(n).intersect(domain_box<D>(n));
  for (std::size_t i = 0; i < tri.size(); ++i) masked[linear_cell<D>(tri.cell(i), n)] = 0.0;
  const auto t = op.maximal_truncation(masked, q.cells(n));
  return t.average(q);
}

/// Runs the b-stopping / Tb-stopping iteration for the system `sys` and the
/// operator `op` (whose maximal truncation enters the stopping conditions).
template <int D>
StoppingForest<D> iterate_forest(const AccretiveSystem<D>& sys, const DiscreteOperator<D>& op, const ForestParams& par,
                                 const Cube<D>& top) {
  if (!par.use_offdiag && !op.kernel().antisymmetric)
    throw Error("off-diagonal stopping may only be disabled for antisymmetric kernels");
  if (!(par.delta > 0.0 && par.delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (!(par.eta > 0.0)) throw ConfigError("eta must be positive");
  const int n = sys.depth();
  StoppingForest<D> forest(n, sys.p());
  forest.params = par;
  forest.top = top;
  forest.tb.push_back({top});
  forest.bad.push_back({});
  TbStoppingParams sp{par.p, par.eps, par.c_sigma, par.eta, par.use_offdiag};

  for (int k = 0; !forest.tb[k].empty(); ++k) {
    if (k >= par.max_generations) {
      forest.exhausted = false;
      break;
    }
    std::vector<Cube<D>> next_tb, next_bad;
    for (const auto& q : forest.tb[k]) {
      const auto b = sys.function(q);
      auto dec = cz_decompose(b, q, par.p, par.threshold(), op.kernel().alpha);
      ForestCubeRecord<D> rec;
      rec.cube = q;
      rec.generation = k;
      rec.bad_cubes = dec.bad.size();
      rec.bad_fraction = dec.bad_measure() / q.volume();
      rec.chebyshev_fraction = dec.chebyshev_bound / q.volume();
      rec.good_sup = dec.good.max_abs();
      rec.envelope_ratio = error_envelope_norm(dec, par.p).ratio;
      forest.good_system.set(q, dec.good);

      TbStoppingInputs<D> in;
      in.b = b;
      in.good = dec.good;
      in.envelope = dec.envelope();
      in.tsharp = op.maximal_truncation(b, q.cells(n));
      in.mb = maximal_function(b, 1.0);
      if (par.use_offdiag) in.offdiag_average = [&op, &b](const Cube<D>& c) { return offdiag_tsharp_average(op, b, c); };
      rec.stop = tb_stopping_cubes(q, in, sp);

      forest.tau = std::min(forest.tau, rec.stop.tau_cert);
      forest.tau_measured = std::min(forest.tau_measured, rec.stop.tau_measured);
      forest.depth_truncated = forest.depth_truncated || rec.stop.depth_truncated || dec.degenerate;
      next_bad.insert(next_bad.end(), dec.bad.begin(), dec.bad.end());
      next_tb.insert(next_tb.end(), rec.stop.cubes.begin(), rec.stop.cubes.end());
      forest.records.push_back(std::move(rec));
    }
    std::sort(next_tb.begin(), next_tb.end());
    std::sort(next_bad.begin(), next_bad.end());
    forest.tb.push_back(std::move(next_tb));
    forest.bad.push_back(std::move(next_bad));
  }
  while (!forest.tb.empty() && forest.tb.back().empty()) forest.tb.pop_back();
  forest.good_system.mark_sparse(forest.tau, par.eta);
  return forest;
}

struct ForestCertificates {
  /// max_k Σ_{𝒯_k}|Q| / ((1−τ)^k |Q₀|); at most 1 when the decay holds.
  double tb_decay = 0.0;
  /// max_k Σ_{ℬ_k}|Q| / (δ Σ_{𝒯_{k−1}}|Q|).
  double bad_per_generation = 0.0;
  /// Σ_k Σ_{ℬ_k}|Q| / ((δ/τ)|Q₀|).
  double bad_total = 0.0;
  /// max over forest cubes of Σ_{ℬ₁(Q)}|Q′| / (δ|Q|).
  double bad_first = 0.0;
  bool pass = false;
};

template <int D>
ForestCertificates certify_forest(const StoppingForest<D>& f) {
  ForestCertificates c;
  const double top = f.top.volume();
  const double tau = f.tau;
  const double delta = f.params.delta;
  for (std::size_t k = 0; k < f.tb.size(); ++k)
    c.tb_decay = std::max(c.tb_decay, total_volume(f.tb[k]) / (std::pow(1.0 - tau, static_cast<double>(k)) * top));
  for (std::size_t k = 1; k < f.bad.size() && k <= f.tb.size(); ++k) {
    const double prev = total_volume(f.tb[k - 1]);
    if (prev > 0.0) c.bad_per_generation = std::max(c.bad_per_generation, total_volume(f.bad[k]) / (delta * prev));
  }
  c.bad_total = total_volume(f.all_bad()) / ((delta / tau) * top);
  for (const auto& r : f.records) c.bad_first = std::max(c.bad_first, r.bad_fraction / delta);
  const double slack = 1.0 + 1e-12;
  c.pass = c.tb_decay <= slack && c.bad_per_generation <= slack && c.bad_total <= slack && c.bad_first <= slack;
  return c;
}

/// Φ(x) = sup dist(x, (3Q)^c) over the b-stopping cubes of all given forests.
template <int D>
SuppressionProfile<D> forest_profile(const std::vector<const StoppingForest<D>*>& forests, int depth, int m) {
  std::vector<Cube<D>> cubes;
  for (const auto* f : forests) {
    const auto b = f->all_bad();
    cubes.insert(cubes.end(), b.begin(), b.end());
  }
  std::sort(cubes.begin(), cubes.end());
  cubes.erase(std::unique(cubes.begin(), cubes.end()), cubes.end());
  return SuppressionProfile<D>::from_cubes(depth, std::move(cubes), m);
}

struct ProfileCertificate {
  /// |{Φ > 0}| on the padded grid, relative to |Q₀|.
  double positive_fraction = 0.0;
  /// 3^D (δ/τ), multiplied by the number of merged systems.
  double bound = 0.0;
  /// |{Φ>0}| ≤ 3^D Σ|Q| over the bad cubes (grid-exact union bound).
  double union_bound = 0.0;
  /// Φ ≥ dist(·,(3Q)^c) for every bad cube, checked at cell centers.
  bool dominates = true;
  double lipschitz = 0.0;
  bool pass = false;
};

template <int D>
ProfileCertificate certify_profile(const SuppressionProfile<D>& phi, const std::vector<const StoppingForest<D>*>& forests,
                                   const Cube<D>& top) {
  ProfileCertificate c;
  const int n = phi.depth();
  c.positive_fraction = phi.positive_measure(padded_box<D>(n)) / top.volume();
  double bound = 0.0;
  for (const auto* f : forests) bound = std::max(bound, std::pow(3.0, D) * f->params.delta / f->tau);
  c.bound = bound * static_cast<double>(forests.size());
  c.union_bound = std::pow(3.0, D) * total_volume(phi.cubes()) / top.volume();
  c.lipschitz = phi.validate();
  for (const auto& q : phi.cubes()) {
    const auto box = q.triple(n).intersect(domain_box<D>(n));
    const auto ctr = q.center();
    Point<D> lo{}, hi{};
    for (int k = 0; k < D; ++k) {
      lo[k] = ctr[k] - 1.5 * q.side();
      hi[k] = ctr[k] + 1.5 * q.side();
    }
    for (std::size_t i = 0; i < box.size(); ++i) {
      const auto x = cell_center<D>(box.cell(i), n);
      if (phi(x) < distance_to_complement<D>(x, lo, hi)) c.dominates = false;
    }
  }
  c.pass = c.dominates && c.positive_fraction <= c.bound * (1.0 + 1e-12) &&
           c.positive_fraction <= c.union_bound * (1.0 + 1e-12);
  return c;
}

// ---------------------------------------------------------------------------

struct OffdiagReport {
  double lambda = 0.0;
  double violator_fraction = 0.0;
  /// C = ⨍_Q [M_p b + M_{q′}(Tb)], so that Σ|violators| ≤ C|Q|/λ.
  double chebyshev_constant = 0.0;
  double ample_fraction = 1.0;
  double worst_average = 0.0;
  std::size_t admissible = 0;
  bool certificate = false;
};

/// Maximal Q′ ⊆ Q with ⨍_{Q′} [M_p b + M_{q′}(Tb)] > λ are the violators; on
/// every other subcube the off-diagonal average of T_# is measured.
template <int D>
OffdiagReport offdiag_verify(const GridFunction<D>& b, const DiscreteOperator<D>& op, const Cube<D>& q, double lambda,
                             double p, double q_exp) {
  if (!(lambda > 0.0)) throw Error("lambda must be positive");
  const int n = b.depth();
  const auto tb = op.apply(b);
  const auto mp = maximal_function(b, p);
  const auto mq = maximal_function(tb, conjugate(q_exp));
  const CubeSums<D> fs(mp + mq);
  OffdiagReport r;
  r.lambda = lambda;
  r.chebyshev_constant = fs.average(q);
  const auto viol = maximal_cubes<D>(q, n, [&](const Cube<D>& c) { return fs.average(c) > lambda; });
  r.violator_fraction = total_volume(viol) / q.volume();
  r.ample_fraction = 1.0 - r.violator_fraction;
  r.certificate = r.violator_fraction <= r.chebyshev_constant / lambda * (1.0 + 1e-12);
  std::vector<Cube<D>> queue{q};
  for (std::size_t i = 0; i < queue.size(); ++i) {
    const auto c = queue[i];
    if (fs.average(c) > lambda) continue;
    ++r.admissible;
    r.worst_average = std::max(r.worst_average, offdiag_tsharp_average(op, b, c));
    if (c.level < n)
      for (const auto& ch : children(c, n)) queue.push_back(ch);
  }
  return r;
}

struct SuppressedReport {
  /// Sparse-system constants of b̃ for T_Φ over admissible subcubes.
  AccretiveReport system;
  /// max over Q ∈ 𝒯 and cells of Q of |T_Φ b̃_Q| / (T_# b_Q + M b_Q + e_Q).
  double pointwise_domination = 0.0;
  /// max over Q ∈ 𝒯 of ‖b̃_Q‖_∞ / (threshold^{1/p} 2^{D/p}).
  double sup_ratio = 0.0;
  /// max ℓ(Q)^D |K_Φ(x,y)| over x ∈ 2Q, y ∈ Q, Q bad.
  double local_kernel = 0.0;
};

/// Checks that the good parts b̃_Q form an (∞,p) system for T_Φ on the sparse
/// family 𝒯, together with the intermediate pointwise bound.
template <int D>
SuppressedReport suppressed_testfn_verify(const StoppingForest<D>& forest, const AccretiveSystem<D>& original,
                                          const DiscreteOperator<D>& op, const DiscreteOperator<D>& op_phi,
                                          bool offdiag) {
  const int n = original.depth();
  SuppressedReport r;
  auto sys = forest.good_system;
  sys.mark_sparse(forest.tau, forest.params.eta);
  ValidateOptions vo;
  vo.buffered = false;
  vo.offdiag = offdiag;
  vo.p = forest.params.p;
  vo.u = forest.params.p;
  r.system = validate(sys, op_phi, vo);
  const double bound = std::pow(forest.params.threshold(), 1.0 / forest.params.p) * std::pow(2.0, D / forest.params.p);
  for (const auto& rec : forest.records) {
    const auto& q = rec.cube;
    const auto b = original.function(q);
    const auto dec = cz_decompose(b, q, forest.params.p, forest.params.threshold(), op.kernel().alpha);
    r.sup_ratio = std::max(r.sup_ratio, dec.good.max_abs() / bound);
    const auto box = q.cells(n);
    const auto tphi = op_phi.apply_box(dec.good, box, box);
    const auto ts = op.maximal_truncation(b, box);
    const auto mb = maximal_function(b, 1.0);
    const auto e = dec.envelope_on(box);
    for (std::size_t i = 0; i < box.size(); ++i) {
      const auto j = linear_cell<D>(box.cell(i), n);
      const double den = ts[j] + mb[j] + e[i];
      if (den > 0.0) r.pointwise_domination = std::max(r.pointwise_domination, std::abs(tphi[i]) / den);
    }
    for (const auto& bq : dec.bad)
      r.local_kernel = std::max(r.local_kernel, local_kernel_bound(op_phi.kernel(), bq, 256, 7));
  }
  return r;
}

}  // namespace localtb
