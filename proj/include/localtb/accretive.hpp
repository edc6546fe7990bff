#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "localtb/dyadic.hpp"
#include "localtb/operators.hpp"

namespace localtb {

/// Test functions b_Q indexed by dyadic cubes, either for every cube down to
/// the finest depth or for a sparse family. Each b_Q is stored on the cells
/// of Q only, which enforces supp b_Q ⊆ Q.
template <int D>
class AccretiveSystem {
 public:
  AccretiveSystem(int depth, double p, double u, std::string name = "system")
      : name_(std::move(name)), depth_(depth), p_(p), u_(u), tree_(depth) {}

  const std::string& name() const { return name_; }
  int depth() const { return depth_; }
  double p() const { return p_; }
  double u() const { return u_; }
  bool buffered() const { return buffered_; }
  void set_buffered(bool b) { buffered_ = b; }
  const CubeTree<D>& tree() const { return tree_; }

  /// Stores b_Q; a function with mass outside Q is rejected.
  void set(const Cube<D>& q, const GridFunction<D>& b) {
    if (b.depth() != depth_) throw Error("test function depth does not match system depth");
    if (!b.supported_in(q)) throw Error("test function for " + q.str() + " is not supported in the cube");
    const auto box = q.cells(depth_);
    std::vector<double> local(box.size());
    for (std::size_t i = 0; i < box.size(); ++i) local[i] = b.at(box.cell(i));
    entries_[tree_.id(q)] = std::move(local);
  }

  bool has(const Cube<D>& q) const { return entries_.count(tree_.id(q)) != 0; }

  GridFunction<D> function(const Cube<D>& q) const {
    const auto it = entries_.find(tree_.id(q));
    if (it == entries_.end()) throw Error("no test function for " + q.str());
    GridFunction<D> b(depth_);
    const auto box = q.cells(depth_);
    for (std::size_t i = 0; i < box.size(); ++i) b[linear_cell<D>(box.cell(i), depth_)] = it->second[i];
    return b;
  }

  /// Cubes carrying a test function, coarse to fine.
  std::vector<Cube<D>> cubes() const {
    std::vector<Cube<D>> out;
    out.reserve(entries_.size());
    for (const auto& [id, v] : entries_) out.push_back(tree_.cube(id));
    return out;
  }
  std::size_t size() const { return entries_.size(); }

  bool sparse() const { return sparse_; }
  double tau() const { return tau_; }
  double c0() const { return c0_; }

  /// Marks the assignment as a sparse family with parameters τ and c₀.
  void mark_sparse(double tau, double c0) {
    sparse_ = true;
    tau_ = tau;
    c0_ = c0;
  }

  /// The minimal cube of the assignment containing q (q itself when every
  /// cube carries a function).
  Cube<D> ancestor(const Cube<D>& q) const {
    Cube<D> a = q;
    while (!has(a)) {
      if (a.level == 0) throw Error("no family member contains " + q.str());
      a = a.parent();
    }
    return a;
  }

  /// Subcubes Q′ ⊆ Q not contained in any strictly smaller member.
  std::vector<Cube<D>> admissible(const Cube<D>& q) const {
    std::vector<Cube<D>> out{q};
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (out[i].level >= depth_) continue;
      for (const auto& c : children(out[i], depth_))
        if (!has(c)) out.push_back(c);
    }
    return out;
  }

 private:
  std::string name_;
  int depth_;
  double p_, u_;
  bool buffered_ = false;
  bool sparse_ = false;
  double tau_ = 0.0;
  double c0_ = 1.0;
  CubeTree<D> tree_;
  std::map<std::size_t, std::vector<double>> entries_;
};

template <int D>
AccretiveSystem<D> make_indicator_system(int depth, double p = 2.0, double u = 2.0) {
  AccretiveSystem<D> sys(depth, p, u, "indicator");
  const CubeTree<D> tree(depth);
  for (std::size_t id = 0; id < tree.size(); ++id) {
    const auto q = tree.cube(id);
    sys.set(q, GridFunction<D>::indicator(depth, q));
  }
  sys.set_buffered(true);
  return sys;
}

/// Seed for the per-cube random choices, independent of the finest depth so
/// that systems built at depths N and N+1 agree on every common cube.
template <int D>
std::uint64_t cube_seed(std::uint64_t seed, const Cube<D>& q) {
  std::uint64_t h = seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(q.level) + 1;
  for (int k = 0; k < D; ++k) h = (h ^ static_cast<std::uint64_t>(q.index[k])) * 0xBF58476D1CE4E5B9ULL + 0x94D049BB133111EBULL;
  return h;
}

/// b_Q = 1_Q + λ(1_E − (|E|/|Q∖E|) 1_{Q∖E}) with E a random dyadic subcube of
/// Q of relative measure ρ = 2^{-Dk}, k = ⌈p′ log₂R / D⌉ (reduced near the
/// finest depth), and λ = s(R ρ^{-1/p} − 1) with s uniform in [1/2, 1].
/// Every b_Q has mean exactly 1 and, when k is not reduced,
/// ‖b_Q‖_∞ ≥ R^{p′}/2. With a `resolution` below the depth, k is reduced
/// against that level instead, so a finer grid carries the same functions.
template <int D>
AccretiveSystem<D> make_rough_system(int depth, double p, double roughness, std::uint64_t seed,
                                     int resolution = -1) {
  if (!(roughness >= 1.0)) throw ConfigError("roughness must be >= 1");
  if (!(p > 1.0) || std::isinf(p)) throw ConfigError("rough system exponent must lie in (1, inf)");
  AccretiveSystem<D> sys(depth, p, p, "rough");
  const CubeTree<D> tree(depth);
  const double pc = conjugate(p);
  const int k_full = roughness == 1.0 ? 0 : static_cast<int>(std::ceil(pc * std::log2(roughness) / D - 1e-12));
  const int res = resolution < 0 ? depth : std::min(resolution, depth);
  for (std::size_t id = 0; id < tree.size(); ++id) {
    const auto q = tree.cube(id);
    const int k = std::min(k_full, res - q.level);
    auto b = GridFunction<D>::indicator(depth, q);
    if (k > 0) {
      std::mt19937_64 rng(cube_seed(seed, q));
      Cube<D> e{q.level + k, {}};
      for (int a = 0; a < D; ++a) {
        std::uniform_int_distribution<int> pick(0, (1 << k) - 1);
        e.index[a] = (q.index[a] << k) + pick(rng);
      }
      std::uniform_real_distribution<double> scale(0.5, 1.0);
      const double rho = std::ldexp(1.0, -D * k);
      const double lambda = scale(rng) * (roughness * std::pow(rho, -1.0 / p) - 1.0);
      const double outside = -lambda * rho / (1.0 - rho);
      const auto qb = q.cells(depth);
      const auto eb = e.cells(depth);
      for (std::size_t i = 0; i < qb.size(); ++i) {
        const auto c = qb.cell(i);
        b[linear_cell<D>(c, depth)] += eb.contains(c) ? lambda : outside;
      }
    }
    sys.set(q, b);
  }
  return sys;
}

/// Keeps only the members of `family`, after checking that every member has
/// its strictly smaller members covering at most (1−τ) of it.
template <int D>
AccretiveSystem<D> restrict_to_sparse(const AccretiveSystem<D>& sys, const std::vector<Cube<D>>& family, double tau,
                                      double c0) {
  if (!(tau > 0.0 && tau <= 1.0)) throw Error("sparseness parameter must lie in (0, 1]");
  AccretiveSystem<D> out(sys.depth(), sys.p(), sys.u(), sys.name() + "_sparse");
  out.set_buffered(sys.buffered());
  const Cube<D> top = *std::min_element(family.begin(), family.end());
  for (const auto& q : family) {
    if (!top.contains(q)) throw Error("family member " + q.str() + " lies outside the top cube");
    out.set(q, sys.function(q));
  }
  out.mark_sparse(tau, c0);
  for (const auto& q : family) {
    double covered = 0.0;
    const auto adm = out.admissible(q);
    for (const auto& a : adm)
      if (a.level < sys.depth())
        for (const auto& c : children(a, sys.depth()))
          if (out.has(c)) covered += c.volume();
    if (covered > (1.0 - tau) * q.volume() * (1.0 + 1e-12))
      throw Error("sparseness violated at " + q.str());
  }
  return out;
}

struct AccretiveReport {
  /// Smallest |⨍ b| over the checked (cube, subcube) pairs.
  double worst_nondeg = std::numeric_limits<double>::infinity();
  double worst_size = 0.0;
  double worst_testing = 0.0;
  double worst_buffered = 0.0;
  double worst_sup = 0.0;
  /// Largest ⨍_{Q′} |T(1_{(3Q′)^c} b_Q)| (special off-diagonal estimate).
  double worst_offdiag = 0.0;
  std::size_t cubes_checked = 0;
  std::size_t subcubes_checked = 0;
};

struct ValidateOptions {
  bool buffered = true;
  bool offdiag = false;
  /// Overrides of the system's exponents (0 keeps the system's own).
  double p = 0.0;
  double u = 0.0;
};

/// Measures nondegeneracy, size, testing, buffered testing (on 2Q, which may
/// extend beyond [0,1)^D) and optionally the special off-diagonal quantity.
/// For sparse systems the first three and the off-diagonal quantity are taken
/// over every admissible subcube of each member; otherwise over Q itself.
template <int D>
AccretiveReport validate(const AccretiveSystem<D>& sys, const DiscreteOperator<D>& op, ValidateOptions opt = {}) {
  if (sys.size() == 0) throw Error("empty accretive system");
  if (op.depth() != sys.depth()) throw Error("operator and system depths differ");
  const int n = sys.depth();
  const double p = opt.p > 0.0 ? opt.p : sys.p();
  const double u = opt.u > 0.0 ? opt.u : sys.u();
  AccretiveReport rep;
  for (const auto& q : sys.cubes()) {
    ++rep.cubes_checked;
    const auto b = sys.function(q);
    const auto qb = q.cells(n);
    const auto tb_local = op.apply_box(b, qb, qb);
    GridFunction<D> tb(n);
    for (std::size_t i = 0; i < qb.size(); ++i) tb[linear_cell<D>(qb.cell(i), n)] = tb_local[i];
    rep.worst_sup = std::max(rep.worst_sup, b.max_abs());

    GridFunction<D> bp(n), tbu(n);
    for (std::size_t i = 0; i < b.size(); ++i) {
      bp[i] = std::pow(std::abs(b[i]), p);
      tbu[i] = std::pow(std::abs(tb[i]), u);
    }
    const std::vector<Cube<D>> subs = sys.sparse() ? sys.admissible(q) : std::vector<Cube<D>>{q};
    for (const auto& s : subs) {
      ++rep.subcubes_checked;
      rep.worst_nondeg = std::min(rep.worst_nondeg, std::abs(b.average(s)));
      rep.worst_size = std::max(rep.worst_size, std::pow(bp.average(s), 1.0 / p));
      rep.worst_testing = std::max(rep.worst_testing, std::pow(tbu.average(s), 1.0 / u));
      if (opt.offdiag) {
        const auto sb = s.cells(n);
        const auto near = op.apply_box(b, s.triple(n), sb);
        double avg = 0.0;
        for (std::size_t i = 0; i < sb.size(); ++i) avg += std::abs(tb.at(sb.cell(i)) - near[i]);
        rep.worst_offdiag = std::max(rep.worst_offdiag, avg / static_cast<double>(sb.size()));
      }
    }
    if (opt.buffered && q.level < n) {
      const auto box2 = q.dilate(2, n);
      const auto v = op.apply_box(b, qb, box2);
      double s = 0.0;
      for (double x : v) s += std::pow(std::abs(x), u);
      rep.worst_buffered = std::max(rep.worst_buffered, std::pow(s / static_cast<double>(v.size()), 1.0 / u));
    }
  }
  return rep;
}

}  // namespace localtb
