#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "localtb/accretive.hpp"
#include "localtb/dyadic.hpp"
#include "localtb/operators.hpp"

namespace localtb {

/// Values of a function on the cells of a cube, in the row-major order of
/// q.cells(depth).
using LocalValues = std::vector<double>;

template <int D>
GridFunction<D> to_grid(const Cube<D>& q, const LocalValues& v, int depth) {
  GridFunction<D> g(depth);
  const auto box = q.cells(depth);
  for (std::size_t i = 0; i < box.size(); ++i) g[linear_cell<D>(box.cell(i), depth)] = v[i];
  return g;
}

template <int D>
LocalValues to_local(const Cube<D>& q, const GridFunction<D>& g) {
  const auto box = q.cells(g.depth());
  LocalValues v(box.size());
  for (std::size_t i = 0; i < box.size(); ++i) v[i] = g.at(box.cell(i));
  return v;
}

/// Adapted martingale differences for an accretive system on a sparse family
/// below [0,1)^D. For every cube Q, Q^a is the minimal family member
/// containing Q and
///   𝔼_Q^b f = 1_Q b_{Q^a} ⟨f⟩_Q / ⟨b_{Q^a}⟩_Q,
///   𝔻_Q^b f = Σ_i 𝔼_{Q_i}^b f − 𝔼_Q^b f = Σ_i φ_{Q,i} ⟨f⟩_{Q_i},
/// and ω_Q collects the correction from stopping children.
template <int D>
class AdaptedSystem {
 public:
  static constexpr int kChildren = 1 << D;

  explicit AdaptedSystem(const AccretiveSystem<D>& sys) : sys_(sys), depth_(sys.depth()), tree_(sys.depth()) {
    if (!sys.has(root_cube<D>())) throw Error("adapted system needs a test function on the top cube");
    const int n = depth_;
    ancestor_.resize(tree_.size());
    mean_.resize(tree_.size());
    std::map<std::size_t, CubeSums<D>> sums;
    for (const auto& p : sys.cubes()) sums.emplace(tree_.id(p), CubeSums<D>(sys.function(p)));
    for (std::size_t id = 0; id < tree_.size(); ++id) {
      const auto q = tree_.cube(id);
      const auto a = id == 0 ? q : (sys.has(q) ? q : tree_.cube(ancestor_[tree_.id(q.parent())]));
      ancestor_[id] = tree_.id(a);
      mean_[id] = sums.at(ancestor_[id]).average(q);
      const double c0 = sys.sparse() ? sys.c0() : 1.0;
      if (!(std::abs(mean_[id]) >= 0.5 * c0)) throw Error("degenerate denominator at " + q.str());
    }
    phi_.resize(tree_.size());
    stopping_child_.assign(tree_.size(), false);
    for (int l = 0; l < n; ++l)
      for (std::size_t id = tree_.level_begin(l); id < tree_.level_end(l); ++id) build(id, sums);
  }

  const AccretiveSystem<D>& system() const { return sys_; }
  int depth() const { return depth_; }
  const CubeTree<D>& tree() const { return tree_; }

  Cube<D> ancestor(const Cube<D>& q) const { return tree_.cube(ancestor_[tree_.id(q)]); }
  /// ⟨b_{Q^a}⟩_Q.
  double denominator(const Cube<D>& q) const { return mean_[tree_.id(q)]; }
  bool has_stopping_child(const Cube<D>& q) const { return stopping_child_[tree_.id(q)]; }

  /// φ_{Q,i} for i = 1..2^D (child i−1 in children() order) and φ_{Q,0} = ω_Q,
  /// as values on the cells of Q.
  const LocalValues& phi(const Cube<D>& q, int i) const {
    require(q.level < depth_, "leaf cubes carry no coefficient functions");
    return phi_[tree_.id(q)][static_cast<std::size_t>(i)];
  }
  const LocalValues& omega(const Cube<D>& q) const { return phi(q, 0); }

  /// Index (0..2^D−1) of the child of Q containing each cell of Q.
  std::vector<int> child_of_cell(const Cube<D>& q) const {
    const auto box = q.cells(depth_);
    const int shift = depth_ - q.level - 1;
    std::vector<int> out(box.size());
    for (std::size_t c = 0; c < box.size(); ++c) {
      const auto cc = box.cell(c);
      int s = 0;
      for (int k = 0; k < D; ++k) s = (s << 1) | static_cast<int>((cc[k] >> shift) & 1);
      out[c] = s;
    }
    return out;
  }

  /// ⟨f⟩_{Q_i} for the children, in children() order.
  std::vector<double> child_averages(const Cube<D>& q, const GridFunction<D>& f) const {
    std::vector<double> a;
    for (const auto& c : children(q, depth_)) a.push_back(f.average(c));
    return a;
  }

  /// 𝔼_Q^b f on the cells of Q.
  LocalValues expectation(const Cube<D>& q, const GridFunction<D>& f) const {
    const auto b = sys_.function(ancestor(q));
    const double s = f.average(q) / denominator(q);
    auto v = to_local(q, b);
    for (double& x : v) x *= s;
    return v;
  }

  /// 𝔻_Q^b f on the cells of Q (zero for leaves).
  LocalValues difference(const Cube<D>& q, const GridFunction<D>& f) const {
    const auto box = q.cells(depth_);
    LocalValues v(box.size(), 0.0);
    if (q.level >= depth_) return v;
    const auto avg = child_averages(q, f);
    for (int i = 1; i <= kChildren; ++i) {
      const auto& p = phi(q, i);
      for (std::size_t c = 0; c < v.size(); ++c) v[c] += p[c] * avg[static_cast<std::size_t>(i - 1)];
    }
    return v;
  }

  /// (𝔻_Q^b)* h on the cells of Q: the transpose of the finite linear map,
  /// Σ_i 1_{Q_i} ⟨φ_{Q,i}, h⟩ / |Q_i|.
  LocalValues difference_adjoint(const Cube<D>& q, const GridFunction<D>& h) const {
    const auto box = q.cells(depth_);
    LocalValues v(box.size(), 0.0);
    if (q.level >= depth_) return v;
    const auto hl = to_local(q, h);
    const auto slot = child_of_cell(q);
    const double child_cells = static_cast<double>(box.size() / kChildren);
    std::vector<double> w(kChildren, 0.0);
    for (int i = 1; i <= kChildren; ++i) {
      const auto& p = phi(q, i);
      double s = 0.0;
      for (std::size_t c = 0; c < v.size(); ++c) s += p[c] * hl[c];
      w[static_cast<std::size_t>(i - 1)] = s / child_cells;
    }
    for (std::size_t c = 0; c < v.size(); ++c) v[c] = w[static_cast<std::size_t>(slot[c])];
    return v;
  }

  /// 𝔻_{Q,i}^b f: 𝔻_Q^b f for i ≥ 1; for i = 0, 1_Q⟨f⟩_Q when Q has a
  /// stopping child and zero otherwise.
  LocalValues piece(const Cube<D>& q, int i, const GridFunction<D>& f) const {
    if (i > 0) return difference(q, f);
    LocalValues v(q.cells(depth_).size(), 0.0);
    if (q.level < depth_ && has_stopping_child(q)) std::fill(v.begin(), v.end(), f.average(q));
    return v;
  }

  /// (𝔻_{Q,i}^b)* h; the i = 0 piece is self-adjoint.
  LocalValues piece_adjoint(const Cube<D>& q, int i, const GridFunction<D>& h) const {
    return i > 0 ? difference_adjoint(q, h) : piece(q, 0, h);
  }

  /// ⟨𝔻_{Q,i}^b f⟩_{Q_i}, with Q_0 := Q.
  double coefficient(const Cube<D>& q, int i, const GridFunction<D>& f) const {
    if (i == 0) return (q.level < depth_ && has_stopping_child(q)) ? f.average(q) : 0.0;
    const auto d = difference(q, f);
    const auto slot = child_of_cell(q);
    double s = 0.0;
    std::size_t cnt = 0;
    for (std::size_t c = 0; c < d.size(); ++c)
      if (slot[c] == i - 1) {
        s += d[c];
        ++cnt;
      }
    return s / static_cast<double>(cnt);
  }

 private:
  void build(std::size_t id, const std::map<std::size_t, CubeSums<D>>& sums) {
    const auto q = tree_.cube(id);
    const auto box = q.cells(depth_);
    const auto ch = children(q, depth_);
    const auto slot = child_of_cell(q);
    const auto bq = to_local(q, sys_.function(tree_.cube(ancestor_[id])));
    const double mq = mean_[id];
    auto& out = phi_[id];
    out.assign(kChildren + 1, LocalValues(box.size(), 0.0));
    std::vector<LocalValues> bc;
    for (const auto& c : ch) bc.push_back(to_local(q, sys_.function(tree_.cube(ancestor_[tree_.id(c)]))));
    for (std::size_t c = 0; c < box.size(); ++c) {
      const auto s = static_cast<std::size_t>(slot[c]);
      const std::size_t cid = tree_.id(ch[s]);
      for (int i = 0; i < kChildren; ++i) {
        double v = -bq[c] / (kChildren * mq);
        if (static_cast<std::size_t>(i) == s) v += bc[s][c] / mean_[cid];
        out[static_cast<std::size_t>(i + 1)][c] = v;
      }
      if (ancestor_[cid] != ancestor_[id]) {
        stopping_child_[id] = true;
        const double ratio = sums.at(ancestor_[id]).average(ch[s]) / mean_[cid];
        out[0][c] = (ratio * bc[s][c] - bq[c]) / mq;
      }
    }
  }

  AccretiveSystem<D> sys_;
  int depth_;
  CubeTree<D> tree_;
  std::vector<std::size_t> ancestor_;
  std::vector<double> mean_;
  std::vector<std::vector<LocalValues>> phi_;
  std::vector<bool> stopping_child_;
};

/// All martingale differences of f, with 𝔼_{Q⁰}^b f kept separately.
template <int D>
struct AdaptedDecomposition {
  GridFunction<D> top;
  /// 𝔻_Q^b f by cube id (leaves included as zero).
  std::vector<LocalValues> pieces;

  GridFunction<D> reconstruct(const CubeTree<D>& tree) const {
    auto s = top;
    const int n = top.depth();
    for (std::size_t id = 0; id < pieces.size(); ++id) s += to_grid(tree.cube(id), pieces[id], n);
    return s;
  }
};

template <int D>
AdaptedDecomposition<D> decompose(const AdaptedSystem<D>& ad, const GridFunction<D>& f) {
  AdaptedDecomposition<D> dec;
  const auto& tree = ad.tree();
  dec.top = to_grid(root_cube<D>(), ad.expectation(root_cube<D>(), f), ad.depth());
  dec.pieces.resize(tree.size());
  for (std::size_t id = 0; id < tree.size(); ++id) dec.pieces[id] = ad.difference(tree.cube(id), f);
  return dec;
}

/// max over non-leaf Q of ‖(𝔻_Q^b)² f − 𝔻_Q^b f + ω_Q⟨f⟩_Q‖_∞.
template <int D>
double square_identity_defect(const AdaptedSystem<D>& ad, const GridFunction<D>& f) {
  double worst = 0.0;
  const int n = ad.depth();
  for (int l = 0; l < n; ++l)
    for (std::size_t id = ad.tree().level_begin(l); id < ad.tree().level_end(l); ++id) {
      const auto q = ad.tree().cube(id);
      const auto d = ad.difference(q, f);
      const auto dd = ad.difference(q, to_grid(q, d, n));
      const auto& w = ad.omega(q);
      const double m = f.average(q);
      for (std::size_t c = 0; c < d.size(); ++c) worst = std::max(worst, std::abs(dd[c] - d[c] + w[c] * m));
    }
  return worst;
}

enum class SquareVariant { direct, adjoint };

/// ‖(Σ_Q |𝔻_{Q,i}^b f|²)^{1/2}‖_{L^r}, or the same with (𝔻_{Q,i}^b)* f.
template <int D>
double square_function_norm(const AdaptedSystem<D>& ad, const GridFunction<D>& f, double r, SquareVariant variant,
                            int i) {
  if (!(r > 1.0) || std::isinf(r)) throw Error("square function exponent must lie in (1, inf)");
  if (i < 0 || i > AdaptedSystem<D>::kChildren) throw Error("piece index out of range");
  const int n = ad.depth();
  GridFunction<D> s2(n);
  for (int l = 0; l < n; ++l)
    for (std::size_t id = ad.tree().level_begin(l); id < ad.tree().level_end(l); ++id) {
      const auto q = ad.tree().cube(id);
      const auto v = variant == SquareVariant::direct ? ad.piece(q, i, f) : ad.piece_adjoint(q, i, f);
      const auto box = q.cells(n);
      for (std::size_t c = 0; c < box.size(); ++c) s2[linear_cell<D>(box.cell(c), n)] += v[c] * v[c];
    }
  double acc = 0.0;
  for (std::size_t c = 0; c < s2.size(); ++c) acc += std::pow(s2[c], r / 2.0);
  return std::pow(acc * s2.cell_volume(), 1.0 / r);
}

struct LpRatio {
  double r = 2.0;
  double direct = 0.0;
  double adjoint = 0.0;
};

/// Worst ratios ‖S_i f‖_r / ‖f‖_r over the given inputs and all pieces i.
template <int D>
LpRatio lp_ratio(const AdaptedSystem<D>& ad, const std::vector<GridFunction<D>>& inputs, double r) {
  LpRatio out;
  out.r = r;
  for (const auto& f : inputs) {
    const double nf = f.lp_norm(r);
    if (nf == 0.0) continue;
    for (int i : {0, 1}) {
      out.direct = std::max(out.direct, square_function_norm(ad, f, r, SquareVariant::direct, i) / nf);
      out.adjoint = std::max(out.adjoint, square_function_norm(ad, f, r, SquareVariant::adjoint, i) / nf);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

struct CarlesonReport {
  double lhs = 0.0;
  double carleson_norm = 0.0;
  double g_norm = 0.0;
  /// lhs / (‖g‖_s · carleson_norm); zero when either side vanishes.
  double ratio = 0.0;
};

/// Pointwise tails Σ_{R ∋ x, level(R) ≥ l} |θ_R(x)|² for l = 0..N, which make
/// every Carleson box sum a lookup.
template <int D>
class CarlesonTails {
 public:
  CarlesonTails(int depth, const std::map<Cube<D>, LocalValues>& theta)
      : depth_(depth), tail_(cell_count<D>(depth) * static_cast<std::size_t>(depth + 2), 0.0) {
    for (const auto& [r, v] : theta) {
      const auto box = r.cells(depth);
      if (v.size() != box.size()) throw Error("coefficient function does not match its cube " + r.str());
      for (std::size_t c = 0; c < box.size(); ++c)
        at(linear_cell<D>(box.cell(c), depth), r.level) += v[c] * v[c];
    }
    for (std::size_t x = 0; x < cell_count<D>(depth); ++x)
      for (int l = depth - 1; l >= 0; --l) at(x, l) += at(x, l + 1);
  }

  /// ‖(Σ_{R⊆S} |θ_R|²)^{1/2}‖_{L^s}.
  double box_norm(const Cube<D>& s_cube, double s) const {
    const auto box = s_cube.cells(depth_);
    double acc = 0.0;
    for (std::size_t c = 0; c < box.size(); ++c)
      acc += std::pow(at(linear_cell<D>(box.cell(c), depth_), s_cube.level), s / 2.0);
    return std::pow(acc * std::ldexp(1.0, -D * depth_), 1.0 / s);
  }

  /// sup_S |S|^{-1/s} ‖(Σ_{R⊆S} |θ_R|²)^{1/2}‖_{L^s} over every dyadic S.
  double carleson_norm(double s) const {
    const CubeTree<D> tree(depth_);
    double best = 0.0;
    for (std::size_t id = 0; id < tree.size(); ++id) {
      const auto q = tree.cube(id);
      best = std::max(best, box_norm(q, s) / std::pow(q.volume(), 1.0 / s));
    }
    return best;
  }

 private:
  double& at(std::size_t x, int l) { return tail_[x * static_cast<std::size_t>(depth_ + 2) + static_cast<std::size_t>(l)]; }
  double at(std::size_t x, int l) const {
    return tail_[x * static_cast<std::size_t>(depth_ + 2) + static_cast<std::size_t>(l)];
  }

  int depth_;
  std::vector<double> tail_;
};

/// Both sides of the L^s Carleson embedding for coefficients θ_R supported
/// in R.
template <int D>
CarlesonReport carleson_embedding_check(const std::map<Cube<D>, LocalValues>& theta, const GridFunction<D>& g, double s) {
  if (!(s > 1.0 && s <= 2.0)) throw Error("Carleson exponent must lie in (1, 2]");
  const int n = g.depth();
  CarlesonReport r;
  GridFunction<D> lhs2(n);
  for (const auto& [q, v] : theta) {
    const double a = g.average(q);
    const auto box = q.cells(n);
    for (std::size_t c = 0; c < box.size(); ++c) lhs2[linear_cell<D>(box.cell(c), n)] += v[c] * v[c] * a * a;
  }
  double acc = 0.0;
  for (std::size_t c = 0; c < lhs2.size(); ++c) acc += std::pow(lhs2[c], s / 2.0);
  r.lhs = std::pow(acc * lhs2.cell_volume(), 1.0 / s);
  r.carleson_norm = CarlesonTails<D>(n, theta).carleson_norm(s);
  r.g_norm = g.lp_norm(s);
  if (r.lhs > 0.0 && r.carleson_norm > 0.0 && r.g_norm > 0.0) r.ratio = r.lhs / (r.g_norm * r.carleson_norm);
  return r;
}

struct GenerationContribution {
  int generation = 0;
  /// Σ_{P ∈ 𝒫^k(S)} |P| / |S|.
  double measure = 0.0;
  /// (Σ_P ‖(Σ_{R⊆P, R^{a,2}=P^{a,2}} |θ_R|²)^{1/2}‖_s^s)^{1/s} / |S|^{1/s}.
  double contribution = 0.0;
};

struct ParaproductReport {
  /// sup_S |S|^{-1/s} ‖(Σ_{R⊆S} |(𝔻_R^{b₁})* T* b²_{R^{a,2}}|²)^{1/2}‖_s.
  double norm_a = 0.0;
  /// The same with ω_R¹ T* b²_{R^{a,2}}.
  double norm_b = 0.0;
  std::vector<GenerationContribution> generations_a;
  std::vector<GenerationContribution> generations_b;
};

/// Coefficients of the two paraproduct Carleson sums, keyed by R.
template <int D>
struct ParaproductCoefficients {
  std::map<Cube<D>, LocalValues> a;
  std::map<Cube<D>, LocalValues> b;
};

template <int D>
ParaproductCoefficients<D> paraproduct_coefficients(const AdaptedSystem<D>& ad1, const AdaptedSystem<D>& ad2,
                                                     const DiscreteOperator<D>& op_adjoint) {
  const int n = ad1.depth();
  std::map<Cube<D>, GridFunction<D>> tstar;
  for (const auto& p : ad2.system().cubes()) tstar.emplace(p, op_adjoint.apply(ad2.system().function(p)));
  ParaproductCoefficients<D> out;
  for (int l = 0; l < n; ++l)
    for (std::size_t id = ad1.tree().level_begin(l); id < ad1.tree().level_end(l); ++id) {
      const auto r = ad1.tree().cube(id);
      const auto& h = tstar.at(ad2.ancestor(r));
      out.a[r] = ad1.difference_adjoint(r, h);
      auto w = ad1.omega(r);
      const auto hl = to_local(r, h);
      for (std::size_t c = 0; c < w.size(); ++c) w[c] *= hl[c];
      out.b[r] = std::move(w);
    }
  return out;
}

/// The stopping-generation split of Σ_{R⊆S} by the family of system 2.
template <int D>
std::vector<GenerationContribution> generation_split(const std::map<Cube<D>, LocalValues>& theta,
                                                     const AdaptedSystem<D>& ad2, const Cube<D>& s_cube, double s) {
  const int n = ad2.depth();
  std::vector<GenerationContribution> out;
  std::vector<Cube<D>> gen{s_cube};
  for (int k = 0; !gen.empty(); ++k) {
    GenerationContribution gc;
    gc.generation = k;
    double acc = 0.0;
    std::vector<Cube<D>> next;
    for (const auto& p : gen) {
      gc.measure += p.volume();
      const auto pa = ad2.ancestor(p);
      std::map<Cube<D>, LocalValues> part;
      std::vector<Cube<D>> queue{p};
      for (std::size_t i = 0; i < queue.size(); ++i) {
        const auto r = queue[i];
        if (r != p && ad2.system().has(r)) {
          next.push_back(r);
          continue;
        }
        if (ad2.ancestor(r) == pa) {
          const auto it = theta.find(r);
          if (it != theta.end()) part.emplace(r, it->second);
        }
        if (r.level < n)
          for (const auto& c : children(r, n)) queue.push_back(c);
      }
      if (!part.empty()) acc += std::pow(CarlesonTails<D>(n, part).box_norm(p, s), s);
    }
    gc.measure /= s_cube.volume();
    gc.contribution = std::pow(acc, 1.0 / s) / std::pow(s_cube.volume(), 1.0 / s);
    out.push_back(gc);
    gen = std::move(next);
  }
  return out;
}

template <int D>
ParaproductReport paraproduct_carleson_norms(const AdaptedSystem<D>& ad1, const AdaptedSystem<D>& ad2,
                                             const DiscreteOperator<D>& op_adjoint, double s) {
  if (!(s > 1.0 && s <= 2.0)) throw Error("Carleson exponent must lie in (1, 2]");
  const auto co = paraproduct_coefficients(ad1, ad2, op_adjoint);
  const int n = ad1.depth();
  ParaproductReport r;
  r.norm_a = CarlesonTails<D>(n, co.a).carleson_norm(s);
  r.norm_b = CarlesonTails<D>(n, co.b).carleson_norm(s);
  r.generations_a = generation_split(co.a, ad2, root_cube<D>(), s);
  r.generations_b = generation_split(co.b, ad2, root_cube<D>(), s);
  return r;
}

}  // namespace localtb
