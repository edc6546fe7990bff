#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "localtb/martingale.hpp"

namespace localtb {

template <int D>
using Offset = std::array<int, D>;

template <int D>
using ScaleShift = std::pair<int, Offset<D>>;

/// (k, m) with Q ⊆ R + ℓ(R)m and ℓ(Q) = 2^{-k}ℓ(R); requires ℓ(Q) ≤ ℓ(R).
template <int D>
ScaleShift<D> relative_position(const Cube<D>& small, const Cube<D>& large) {
  require(small.level >= large.level, "relative position needs the first cube to be the smaller one");
  const int k = small.level - large.level;
  Offset<D> m{};
  for (int a = 0; a < D; ++a) m[a] = (small.index[a] >> k) - large.index[a];
  return {k, m};
}

template <int D>
bool is_zero(const Offset<D>& m) {
  for (int a = 0; a < D; ++a)
    if (m[a] != 0) return false;
  return true;
}

template <int D>
double euclidean(const Offset<D>& m) {
  double s = 0.0;
  for (int a = 0; a < D; ++a) s += static_cast<double>(m[a]) * m[a];
  return std::sqrt(s);
}

/// Every m ≠ 0 with |m|_∞ ≤ m_max.
template <int D>
std::vector<Offset<D>> offsets(int m_max) {
  std::vector<Offset<D>> out;
  const int w = 2 * m_max + 1;
  int total = 1;
  for (int a = 0; a < D; ++a) total *= w;
  for (int t = 0; t < total; ++t) {
    Offset<D> m{};
    int r = t;
    for (int a = D - 1; a >= 0; --a) {
      m[a] = r % w - m_max;
      r /= w;
    }
    if (!is_zero<D>(m)) out.push_back(m);
  }
  return out;
}

/// R + ℓ(R)m, when it is still a subcube of [0,1)^D.
template <int D>
std::optional<Cube<D>> translate(const Cube<D>& r, const Offset<D>& m) {
  Cube<D> s = r;
  const int side = 1 << r.level;
  for (int a = 0; a < D; ++a) {
    s.index[a] = r.index[a] + m[a];
    if (s.index[a] < 0 || s.index[a] >= side) return std::nullopt;
  }
  return s;
}

/// Subcubes of q at the given finer level, row-major.
template <int D>
std::vector<Cube<D>> descendants(const Cube<D>& q, int level) {
  require(level >= q.level, "descendant level above the cube");
  const int k = level - q.level;
  const int w = 1 << k;
  std::vector<Cube<D>> out;
  std::size_t total = std::size_t{1} << (D * k);
  out.reserve(total);
  for (std::size_t t = 0; t < total; ++t) {
    Cube<D> c{level, {}};
    std::size_t r = t;
    for (int a = D - 1; a >= 0; --a) {
      c.index[a] = q.index[a] * w + static_cast<int>(r % static_cast<std::size_t>(w));
      r /= static_cast<std::size_t>(w);
    }
    out.push_back(c);
  }
  return out;
}

/// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "slope fit needs at least two points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  require(sxx > 0.0, "slope fit needs distinct abscissae");
  return sxy / sxx;
}

namespace detail {

template <int D>
std::vector<std::vector<std::size_t>> cell_lists(const CubeTree<D>& tree, std::size_t count) {
  const int n = tree.depth();
  std::vector<std::vector<std::size_t>> out(count);
  for (std::size_t id = 0; id < count; ++id) {
    const auto box = tree.cube(id).cells(n);
    out[id].resize(box.size());
    for (std::size_t c = 0; c < box.size(); ++c) out[id][c] = linear_cell<D>(box.cell(c), n);
  }
  return out;
}

inline bool all_zero(const LocalValues& v) {
  for (double x : v)
    if (x != 0.0) return false;
  return true;
}

/// 𝔻_Q f for every non-leaf Q, with 𝔼_{Q⁰} f folded into the top piece.
template <int D>
std::vector<LocalValues> redefined_pieces(const AdaptedSystem<D>& ad, const GridFunction<D>& f) {
  const int n = ad.depth();
  const std::size_t inner = ad.tree().level_begin(n);
  std::vector<LocalValues> out(inner);
  for (std::size_t id = 0; id < inner; ++id) out[id] = ad.difference(ad.tree().cube(id), f);
  const auto top = ad.expectation(root_cube<D>(), f);
  for (std::size_t c = 0; c < top.size(); ++c) out[0][c] += top[c];
  return out;
}

/// T applied to each piece, on all of [0,1)^D (empty for zero pieces).
template <int D>
std::vector<std::vector<double>> images(const DiscreteOperator<D>& op, const CubeTree<D>& tree,
                                        const std::vector<LocalValues>& pieces) {
  const int n = op.depth();
  const auto dom = domain_box<D>(n);
  std::vector<std::vector<double>> h(pieces.size());
  for (std::size_t id = 0; id < pieces.size(); ++id) {
    if (all_zero(pieces[id])) continue;
    const auto q = tree.cube(id);
    h[id] = op.apply_box(to_grid(q, pieces[id], n), q.cells(n), dom);
  }
  return h;
}

template <int D>
struct HalfPairing {
  double diagonal = 0.0;
  double nested = 0.0;
  double disjoint = 0.0;
  double abs_sum = 0.0;
  std::map<ScaleShift<D>, double> by_km;
};

/// Σ ⟨T A_Q, B_R⟩ over non-leaf Q, R with ℓ(Q) ≤ 2^{-kmin}ℓ(R), split by (k, m).
template <int D>
HalfPairing<D> half_pairing(const DiscreteOperator<D>& op, const CubeTree<D>& tree, const std::vector<LocalValues>& a,
                            const std::vector<LocalValues>& b, int kmin) {
  const int n = op.depth();
  const double vol = std::ldexp(1.0, -D * n);
  const auto h = images(op, tree, a);
  const auto cells = cell_lists(tree, b.size());
  HalfPairing<D> out;
  for (std::size_t qa = 0; qa < a.size(); ++qa) {
    if (h[qa].empty()) continue;
    const auto q = tree.cube(qa);
    for (int lr = 0; lr + kmin <= q.level; ++lr)
      for (std::size_t rb = tree.level_begin(lr); rb < tree.level_end(lr); ++rb) {
        const auto& bv = b[rb];
        double s = 0.0;
        for (std::size_t c = 0; c < bv.size(); ++c) s += h[qa][cells[rb][c]] * bv[c];
        s *= vol;
        if (s == 0.0) continue;
        out.abs_sum += std::abs(s);
        const auto km = relative_position(q, tree.cube(rb));
        if (!is_zero<D>(km.second)) {
          out.disjoint += s;
          out.by_km[km] += s;
        } else if (km.first == 0) {
          out.diagonal += s;
        } else {
          out.nested += s;
        }
      }
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// ψ_{R,j;S} for a child S of R, on all of [0,1)^D (supported in R^a).
template <int D>
GridFunction<D> psi_function(const AdaptedSystem<D>& ad, const Cube<D>& r, int j, const Cube<D>& s) {
  const int n = ad.depth();
  require(s.level == r.level + 1 && r.contains(s), "ψ needs a child of R");
  auto psi = to_grid(r, ad.phi(r, j), n);
  if (j == 0) {
    const auto br = ad.system().function(ad.ancestor(r));
    const auto bs = ad.system().function(ad.ancestor(s));
    const double ratio = br.average(s) / ad.denominator(s);
    const double mr = ad.denominator(r);
    for (std::size_t c = 0; c < psi.size(); ++c) psi[c] -= (ratio * bs[c] - br[c]) / mr;
  } else if (children(r, n)[static_cast<std::size_t>(j - 1)] == s) {
    const auto bs = ad.system().function(ad.ancestor(s));
    const double ms = ad.denominator(s);
    for (std::size_t c = 0; c < psi.size(); ++c) psi[c] -= bs[c] / ms;
  }
  return psi;
}

struct NestedSplit {
  /// Σ_R Σ_{Q⊊R} ⟨T𝔻_Q f, 𝔻_R g⟩ summed pair by pair.
  double direct = 0.0;
  /// Σ_{Q≠Q⁰} ⟨T𝔻_Q f, b²_{Q^a}⟩⟨g⟩_Q/⟨b²_{Q^a}⟩_Q.
  double paraproduct = 0.0;
  double remainder = 0.0;
  /// Remainder split by k = level(Q) − level(S).
  std::vector<double> remainder_by_k;
  /// max ‖ψ_{R,j;S}‖_∞ over all R, j, S.
  double psi_sup = 0.0;

  double defect() const { return std::abs(direct - paraproduct - remainder); }
};

template <int D>
NestedSplit nested_split(const DiscreteOperator<D>& op, const GridFunction<D>& f, const GridFunction<D>& g,
                         const AdaptedSystem<D>& ad1, const AdaptedSystem<D>& ad2) {
  const int n = op.depth();
  const auto& tree = ad1.tree();
  const std::size_t inner = tree.level_begin(n);
  const double vol = std::ldexp(1.0, -D * n);
  std::vector<LocalValues> pieces(inner);
  for (std::size_t id = 1; id < inner; ++id) pieces[id] = ad1.difference(tree.cube(id), f);
  pieces[0] = LocalValues(cell_count<D>(n), 0.0);
  const auto h = detail::images(op, tree, pieces);
  const auto gp = detail::redefined_pieces(ad2, g);
  const auto cells = detail::cell_lists(tree, inner);
  const auto dot = [&](const std::vector<double>& a, const GridFunction<D>& b) {
    double s = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) s += a[c] * b[c];
    return s * vol;
  };

  NestedSplit out;
  out.remainder_by_k.assign(static_cast<std::size_t>(std::max(n - 1, 1)), 0.0);
  for (std::size_t rid = 0; rid < inner; ++rid) {
    const auto r = tree.cube(rid);
    for (int l = r.level + 1; l < n; ++l)
      for (const auto& q : descendants(r, l)) {
        const auto qid = tree.id(q);
        if (h[qid].empty()) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < gp[rid].size(); ++c) s += h[qid][cells[rid][c]] * gp[rid][c];
        out.direct += s * vol;
      }
  }

  std::map<Cube<D>, GridFunction<D>> bfun;
  const auto b2 = [&](const Cube<D>& a) -> const GridFunction<D>& {
    auto it = bfun.find(a);
    if (it == bfun.end()) it = bfun.emplace(a, ad2.system().function(a)).first;
    return it->second;
  };
  for (std::size_t qid = 1; qid < inner; ++qid) {
    if (h[qid].empty()) continue;
    const auto q = tree.cube(qid);
    const double coef = g.average(q) / ad2.denominator(q);
    out.paraproduct += coef * dot(h[qid], b2(ad2.ancestor(q)));
  }

  constexpr int kids = AdaptedSystem<D>::kChildren;
  for (std::size_t rid = 0; rid < inner; ++rid) {
    const auto r = tree.cube(rid);
    std::vector<double> coef(kids + 1);
    for (int j = 0; j <= kids; ++j) coef[static_cast<std::size_t>(j)] = ad2.coefficient(r, j, g);
    for (const auto& s : children(r, n)) {
      GridFunction<D> gs(n);
      for (int j = 0; j <= kids; ++j) {
        const auto psi = psi_function(ad2, r, j, s);
        out.psi_sup = std::max(out.psi_sup, psi.max_abs());
        for (std::size_t c = 0; c < gs.size(); ++c) gs[c] += psi[c] * coef[static_cast<std::size_t>(j)];
      }
      if (s.level >= n) continue;
      const auto sbox = s.cells(n);
      for (std::size_t c = 0; c < sbox.size(); ++c) gs[linear_cell<D>(sbox.cell(c), n)] = 0.0;
      for (int l = s.level; l < n; ++l)
        for (const auto& q : descendants(s, l)) {
          const auto qid = tree.id(q);
          if (h[qid].empty()) continue;
          const double v = dot(h[qid], gs);
          out.remainder += v;
          out.remainder_by_k[static_cast<std::size_t>(l - s.level)] += v;
        }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

template <int D>
struct PairingDecomposition {
  double total = 0.0;
  /// Half with ℓ(Q) ≤ ℓ(R).
  double disjoint = 0.0;
  double diagonal = 0.0;
  double nested = 0.0;
  double nested_paraproduct = 0.0;
  double nested_remainder = 0.0;
  /// Half with ℓ(Q) > ℓ(R), computed as the first half of (T*, g, f).
  double transposed_disjoint = 0.0;
  double transposed_nested = 0.0;
  double transposed_paraproduct = 0.0;
  double transposed_remainder = 0.0;
  /// Disjoint contributions by (k, m), m ≠ 0. In the transposed half the
  /// roles are swapped: the g-cube is the small one.
  std::map<ScaleShift<D>, double> by_km;
  std::map<ScaleShift<D>, double> transposed_by_km;
  double psi_sup = 0.0;
  /// ‖Tf‖₂‖g‖₂, the floor of the relative defect.
  double scale = 0.0;

  double resummed() const {
    return disjoint + diagonal + nested_paraproduct + nested_remainder + transposed_disjoint +
           transposed_paraproduct + transposed_remainder;
  }
  double relative_defect() const {
    const double err = std::abs(resummed() - total);
    if (err == 0.0) return 0.0;
    return err / std::max(std::abs(total), 1e-3 * scale);
  }
};

template <int D>
PairingDecomposition<D> decompose_pairing(const DiscreteOperator<D>& op, const GridFunction<D>& f,
                                          const GridFunction<D>& g, const AdaptedSystem<D>& ad1,
                                          const AdaptedSystem<D>& ad2) {
  require(f.depth() == op.depth() && g.depth() == op.depth(), "pairing inputs must match the operator depth");
  const auto op_adj = adjoint_operator(op);
  const auto fp = detail::redefined_pieces(ad1, f);
  const auto gp = detail::redefined_pieces(ad2, g);
  PairingDecomposition<D> out;
  const auto tf = op.apply(f);
  out.total = inner(tf, g);
  out.scale = tf.lp_norm(2.0) * g.lp_norm(2.0);

  const auto a = detail::half_pairing(op, ad1.tree(), fp, gp, 0);
  out.disjoint = a.disjoint;
  out.diagonal = a.diagonal;
  out.nested = a.nested;
  out.by_km = a.by_km;
  const auto b = detail::half_pairing(op_adj, ad2.tree(), gp, fp, 1);
  out.transposed_disjoint = b.disjoint;
  out.transposed_nested = b.nested;
  out.transposed_by_km = b.by_km;

  const auto ns = nested_split(op, f, g, ad1, ad2);
  out.nested_paraproduct = ns.paraproduct;
  out.nested_remainder = ns.remainder;
  const auto nt = nested_split(op_adj, g, f, ad2, ad1);
  out.transposed_paraproduct = nt.paraproduct;
  out.transposed_remainder = nt.remainder;
  out.psi_sup = std::max(ns.psi_sup, nt.psi_sup);
  return out;
}

// ---------------------------------------------------------------------------

template <int D>
struct KernelNorm {
  int k = 0;
  Offset<D> m{};
  /// max over R, i, j of ‖K^{i,j;k}_{R,R+ℓ(R)m}‖_{L²}.
  double norm = 0.0;
};

template <int D>
struct CoefficientKernelReport {
  std::vector<KernelNorm<D>> entries;
  /// max over R, S, i, j of ‖K̃^{i,j;k}_{R,S}‖_{L²}, by k.
  std::vector<double> tilde;
  /// Decay exponents: mean over m of the fitted k-slope, mean over k of the
  /// fitted log|m|-slope, and the k-slope of the K̃ maxima.
  double k_slope = 0.0;
  double m_slope = 0.0;
  double tilde_k_slope = 0.0;

  double norm(int k, const Offset<D>& m) const {
    for (const auto& e : entries)
      if (e.k == k && e.m == m) return e.norm;
    return 0.0;
  }
};

/// ‖K‖²_{L²} of a kernel Σ_Q c_Q 1_{Q_i}(y)/|Q_i| 1_{R_j}(x)/|R_j| is
/// Σ_Q c_Q²/(|Q_i||R_j|): the blocks Q_i × R_j are disjoint.
template <int D>
CoefficientKernelReport<D> coefficient_kernel_norms(const DiscreteOperator<D>& op, const AdaptedSystem<D>& ad1,
                                                    const AdaptedSystem<D>& ad2, int k_max, int m_max) {
  const int n = op.depth();
  require(k_max >= 0 && k_max <= n, "k_max must lie in [0, N]");
  require(m_max >= 1, "m_max must be positive");
  constexpr int kids = AdaptedSystem<D>::kChildren;
  const auto op_adj = adjoint_operator(op);
  const auto& tree = ad1.tree();
  const std::size_t inner = tree.level_begin(n);
  const auto cells = detail::cell_lists(tree, inner);
  const auto dom = domain_box<D>(n);
  const double vol = std::ldexp(1.0, -D * n);
  const auto part = [](const Cube<D>& q, int i) { return i == 0 ? q.volume() : q.volume() / kids; };
  // Σ_{Q ⊆ S, level(Q)=l} ⟨φ¹_{Q,i}, w⟩² / |Q_i|
  const auto block = [&](const Cube<D>& s, int l, int i, const std::vector<double>& w) {
    double acc = 0.0;
    for (const auto& q : descendants(s, l)) {
      const auto qid = tree.id(q);
      const auto& phi = ad1.phi(q, i);
      double c = 0.0;
      for (std::size_t x = 0; x < phi.size(); ++x) c += phi[x] * w[cells[qid][x]];
      c *= vol;
      acc += c * c / part(q, i);
    }
    return acc;
  };

  CoefficientKernelReport<D> rep;
  const auto ms = offsets<D>(m_max);
  std::map<ScaleShift<D>, double> best;
  for (std::size_t rid = 0; rid < inner; ++rid) {
    const auto r = tree.cube(rid);
    for (int j = 0; j <= kids; ++j) {
      const auto& phi2 = ad2.phi(r, j);
      if (detail::all_zero(phi2)) continue;
      const auto w = op_adj.apply_box(to_grid(r, phi2, n), r.cells(n), dom);
      for (const auto& m : ms) {
        const auto s = translate<D>(r, m);
        if (!s) continue;
        for (int k = 0; k <= k_max && r.level + k < n; ++k)
          for (int i = 0; i <= kids; ++i) {
            const double v = std::sqrt(block(*s, r.level + k, i, w) / part(r, j));
            auto& b = best[{k, m}];
            b = std::max(b, v);
          }
      }
    }
  }
  for (const auto& [km, v] : best) rep.entries.push_back({km.first, km.second, v});

  rep.tilde.assign(static_cast<std::size_t>(k_max + 1), 0.0);
  for (std::size_t rid = 0; rid < inner; ++rid) {
    const auto r = tree.cube(rid);
    if (r.level + 1 >= n) continue;
    const auto ra = ad2.ancestor(r);
    for (const auto& s : children(r, n)) {
      const auto sbox = s.cells(n);
      for (int j = 0; j <= kids; ++j) {
        auto psi = psi_function(ad2, r, j, s);
        for (std::size_t c = 0; c < sbox.size(); ++c) psi[linear_cell<D>(sbox.cell(c), n)] = 0.0;
        if (psi.max_abs() == 0.0) continue;
        const auto vs = op_adj.apply_box(psi, ra.cells(n), sbox);
        std::vector<double> w(cell_count<D>(n), 0.0);
        for (std::size_t c = 0; c < sbox.size(); ++c) w[linear_cell<D>(sbox.cell(c), n)] = vs[c];
        for (int k = 0; k <= k_max && s.level + k < n; ++k)
          for (int i = 0; i <= kids; ++i) {
            const double v = std::sqrt(block(s, s.level + k, i, w) / part(r, j));
            auto& t = rep.tilde[static_cast<std::size_t>(k)];
            t = std::max(t, v);
          }
      }
    }
  }

  // Slopes are fitted to log₂ of the norms; non-positive norms are skipped.
  std::map<Offset<D>, std::pair<std::vector<double>, std::vector<double>>> by_m;
  std::map<int, std::map<double, double>> by_k;
  for (const auto& e : rep.entries) {
    if (!(e.norm > 0.0)) continue;
    by_m[e.m].first.push_back(e.k);
    by_m[e.m].second.push_back(std::log2(e.norm));
    auto& slot = by_k[e.k][euclidean<D>(e.m)];
    slot = std::max(slot, e.norm);
  }
  double acc = 0.0;
  int cnt = 0;
  for (const auto& [m, xy] : by_m)
    if (xy.first.size() >= 2) {
      acc += -fit_slope(xy.first, xy.second);
      ++cnt;
    }
  rep.k_slope = cnt ? acc / cnt : std::numeric_limits<double>::quiet_NaN();
  acc = 0.0;
  cnt = 0;
  for (const auto& [k, pts] : by_k) {
    if (pts.size() < 2) continue;
    std::vector<double> x, y;
    for (const auto& [rad, v] : pts) {
      x.push_back(std::log2(rad));
      y.push_back(std::log2(v));
    }
    acc += -fit_slope(x, y);
    ++cnt;
  }
  rep.m_slope = cnt ? acc / cnt : std::numeric_limits<double>::quiet_NaN();
  std::vector<double> kx, ky;
  for (std::size_t k = 0; k < rep.tilde.size(); ++k)
    if (rep.tilde[k] > 0.0) {
      kx.push_back(static_cast<double>(k));
      ky.push_back(std::log2(rep.tilde[k]));
    }
  rep.tilde_k_slope = kx.size() >= 2 ? -fit_slope(kx, ky) : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

// ---------------------------------------------------------------------------

enum class WbpMode { antisymmetric, special_offdiag, all_cubes };

inline const char* to_string(WbpMode m) {
  switch (m) {
    case WbpMode::antisymmetric: return "antisymmetric";
    case WbpMode::special_offdiag: return "special_offdiag";
    case WbpMode::all_cubes: return "all_cubes";
  }
  return "?";
}

struct WbpReport {
  WbpMode mode = WbpMode::antisymmetric;
  std::size_t cubes = 0;
  /// max over Q of |⟨T(1_Q b¹_{Q^{a,1}}), 1_Q b²_{Q^{a,2}}⟩| / |Q|.
  double worst_ratio = 0.0;
  /// The same pairing over Σ_{x,y∈Q} |T_{xy}||φ¹(y)||φ²(x)|.
  double worst_relative = 0.0;

  /// Terms of the three-way split over Q, 3Q∖Q and (3Q)^c, each over |Q|.
  double testing_term = 0.0;
  double hardy_term = 0.0;
  /// |⟨T(1_{3Q∖Q}b¹), 1_Q b²⟩| / (‖1_{3Q∖Q}b¹‖₂‖1_Q b²‖₂).
  double hardy_constant = 0.0;
  double offdiag_term = 0.0;
  /// max over Q of |pairing| / (sum of the three bounds); at most 1.
  double chain_ratio = 0.0;
  /// Exactness of the split (and, with all cubes, of the averaging identity).
  double identity_defect = 0.0;

  /// With test functions on all cubes: sup_Q ‖1_Q T(1_{(3Q)^c} b¹)‖_∞ and
  /// the pieces it is bounded by.
  double offdiag_sup = 0.0;
  double smoothness = 0.0;
  double testing_pairing = 0.0;
  double hardy_pairing = 0.0;
  double adjoint_testing = 0.0;
};

template <int D>
bool same_system(const AccretiveSystem<D>& a, const AccretiveSystem<D>& b) {
  if (a.depth() != b.depth() || a.cubes() != b.cubes()) return false;
  for (const auto& q : a.cubes()) {
    const auto fa = a.function(q), fb = b.function(q);
    for (std::size_t i = 0; i < fa.size(); ++i)
      if (fa[i] != fb[i]) return false;
  }
  return true;
}

/// Weak boundedness over every dyadic Q ⊆ [0,1)^D. `all2` is the system for
/// T* on all cubes that the all_cubes mode averages against.
template <int D>
WbpReport wbp_check(const DiscreteOperator<D>& op, const AccretiveSystem<D>& sys1, const AccretiveSystem<D>& sys2,
                    WbpMode mode, const AccretiveSystem<D>* all2 = nullptr) {
  const int n = op.depth();
  const CubeTree<D> tree(n);
  if (mode == WbpMode::antisymmetric) {
    if (!op.kernel().antisymmetric) throw Error("antisymmetric weak boundedness needs an antisymmetric kernel");
    if (!same_system(sys1, sys2)) throw Error("antisymmetric weak boundedness needs identical systems");
  }
  if (mode == WbpMode::all_cubes) {
    if (all2 == nullptr || all2->size() != tree.size())
      throw Error("all_cubes weak boundedness needs a system on every dyadic cube");
  }
  std::optional<DiscreteOperator<D>> op_adj;
  if (mode == WbpMode::all_cubes) op_adj.emplace(adjoint_operator(op));
  const double vol = std::ldexp(1.0, -D * n);
  std::map<Cube<D>, GridFunction<D>> c1, c2;
  const auto fetch = [](std::map<Cube<D>, GridFunction<D>>& cache, const AccretiveSystem<D>& s,
                        const Cube<D>& a) -> const GridFunction<D>& {
    auto it = cache.find(a);
    if (it == cache.end()) it = cache.emplace(a, s.function(a)).first;
    return it->second;
  };

  WbpReport rep;
  rep.mode = mode;
  for (std::size_t id = 0; id < tree.size(); ++id) {
    const auto q = tree.cube(id);
    const double vq = q.volume();
    const auto qbox = q.cells(n);
    const auto a1 = sys1.ancestor(q);
    const auto& b1 = fetch(c1, sys1, a1);
    const auto& b2 = fetch(c2, sys2, sys2.ancestor(q));
    std::vector<std::size_t> idx(qbox.size());
    for (std::size_t c = 0; c < qbox.size(); ++c) idx[c] = linear_cell<D>(qbox.cell(c), n);

    const auto tq = op.apply_box(b1, qbox, qbox);
    double lhs = 0.0, b2sup = 0.0;
    for (std::size_t c = 0; c < qbox.size(); ++c) {
      lhs += tq[c] * b2[idx[c]];
      b2sup = std::max(b2sup, std::abs(b2[idx[c]]));
    }
    lhs *= vol;
    ++rep.cubes;
    rep.worst_ratio = std::max(rep.worst_ratio, std::abs(lhs) / vq);

    if (mode == WbpMode::antisymmetric) {
      double norm = 0.0;
      for (std::size_t x = 0; x < idx.size(); ++x)
        for (std::size_t y = 0; y < idx.size(); ++y)
          norm += std::abs(op.entry(idx[x], idx[y]) * b1[idx[y]] * b2[idx[x]]);
      norm *= vol;
      if (norm > 0.0) rep.worst_relative = std::max(rep.worst_relative, std::abs(lhs) / norm);
      continue;
    }

    const auto t3 = op.apply_box(b1, q.triple(n), qbox);
    const auto tfull = op.apply_box(b1, a1.cells(n), qbox);
    double testing = 0.0, hardy = 0.0, offd = 0.0, whole = 0.0, farpair = 0.0;
    std::vector<double> far(qbox.size()), near(qbox.size());
    for (std::size_t c = 0; c < qbox.size(); ++c) {
      near[c] = t3[c] - tq[c];
      far[c] = tfull[c] - t3[c];
      testing += std::abs(tfull[c]);
      offd += std::abs(far[c]);
      hardy += near[c] * b2[idx[c]];
      whole += tfull[c] * b2[idx[c]];
      farpair += far[c] * b2[idx[c]];
    }
    testing *= vol * b2sup;
    offd *= vol * b2sup;
    hardy *= vol;
    whole *= vol;
    farpair *= vol;
    const auto ring = q.triple(n).intersect(domain_box<D>(n));
    double n1 = 0.0, n2 = 0.0;
    for (std::size_t c = 0; c < ring.size(); ++c) {
      const auto cc = ring.cell(c);
      if (!qbox.contains(cc)) n1 += b1.at(cc) * b1.at(cc);
    }
    for (std::size_t c = 0; c < qbox.size(); ++c) n2 += b2[idx[c]] * b2[idx[c]];
    const double hn = std::sqrt(n1 * vol) * std::sqrt(n2 * vol);
    rep.testing_term = std::max(rep.testing_term, testing / vq);
    rep.hardy_term = std::max(rep.hardy_term, hn / vq);
    if (hn > 0.0) rep.hardy_constant = std::max(rep.hardy_constant, std::abs(hardy) / hn);
    rep.offdiag_term = std::max(rep.offdiag_term, offd / vq);
    const double bound = testing + std::abs(hardy) + offd;
    if (bound > 0.0) rep.chain_ratio = std::max(rep.chain_ratio, std::abs(lhs) / bound);
    const double scale = testing + std::abs(hardy) + offd + std::abs(lhs);
    if (scale > 0.0)
      rep.identity_defect = std::max(rep.identity_defect, std::abs(lhs - (whole - hardy - farpair)) / scale);

    if (mode != WbpMode::all_cubes) continue;
    const auto bq = all2->function(q);
    const auto ts = op_adj->apply_box(bq, qbox, qbox);
    double mean_b = 0.0, gb = 0.0, p1 = 0.0, p2 = 0.0, p3 = 0.0, mag = 0.0;
    for (std::size_t c = 0; c < qbox.size(); ++c) {
      const double bv = bq[idx[c]];
      mean_b += bv;
      gb += far[c] * bv;
      p1 += tfull[c] * bv;
      p2 += near[c] * bv;
      p3 += b1[idx[c]] * ts[c];
      mag += std::abs(tfull[c] * bv) + std::abs(near[c] * bv) + std::abs(b1[idx[c]] * ts[c]);
    }
    mag *= vol / vq;
    const double cnt = static_cast<double>(qbox.size());
    mean_b /= cnt;
    gb /= cnt;
    p1 *= vol;
    p2 *= vol;
    p3 *= vol;
    const double rest = (p1 - p2 - p3) / vq;
    for (std::size_t c = 0; c < qbox.size(); ++c) {
      const double smooth = far[c] * mean_b - gb;
      rep.offdiag_sup = std::max(rep.offdiag_sup, std::abs(far[c]));
      rep.smoothness = std::max(rep.smoothness, std::abs(smooth));
      const double sc = std::abs(far[c] * mean_b) + std::abs(smooth) + mag;
      if (sc > 0.0)
        rep.identity_defect = std::max(rep.identity_defect, std::abs(far[c] * mean_b - smooth - rest) / sc);
    }
    rep.testing_pairing = std::max(rep.testing_pairing, std::abs(p1) / vq);
    rep.hardy_pairing = std::max(rep.hardy_pairing, std::abs(p2) / vq);
    rep.adjoint_testing = std::max(rep.adjoint_testing, std::abs(p3) / vq);
  }
  return rep;
}

// ---------------------------------------------------------------------------

/// Mean-zero Gaussian noise, constant on the dyadic cubes of the given level.
template <int D>
GridFunction<D> coarse_noise(int depth, int level, std::mt19937_64& rng) {
  require(level >= 0 && level <= depth, "noise level out of range");
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(cell_count<D>(level));
  for (double& x : v) x = nd(rng);
  GridFunction<D> f(depth);
  const int shift = depth - level;
  for (std::size_t i = 0; i < f.size(); ++i) {
    auto c = cell_coord<D>(i, depth);
    for (int k = 0; k < D; ++k) c[k] >>= shift;
    f[i] = v[linear_cell<D>(c, level)];
  }
  return f - GridFunction<D>(depth, f.integral());
}

/// Σ_{j=1}^{6} a_j cos(2π 2^j x_e + θ_j) along a random axis e, mean removed.
template <int D>
GridFunction<D> lacunary_comb(int depth, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ph(0.0, 2.0 * std::numbers::pi);
  std::uniform_int_distribution<int> axis(0, D - 1);
  const int e = axis(rng);
  std::array<double, 6> amp{}, phase{};
  for (int j = 0; j < 6; ++j) {
    amp[static_cast<std::size_t>(j)] = nd(rng);
    phase[static_cast<std::size_t>(j)] = ph(rng);
  }
  auto f = GridFunction<D>::sample(depth, [&](const Point<D>& x) {
    double s = 0.0;
    for (int j = 0; j < 6; ++j)
      s += amp[static_cast<std::size_t>(j)] *
           std::cos(2.0 * std::numbers::pi * std::ldexp(1.0, j + 1) * x[e] + phase[static_cast<std::size_t>(j)]);
    return s;
  });
  return f - GridFunction<D>(depth, f.integral());
}

struct BabyTbReport {
  double s_prime = 0.0;
  std::size_t samples = 0;
  /// max over samples of |⟨Tf,g⟩| / (‖f‖_{s′}‖g‖_{s′}|Q⁰|^{1−2/s′}).
  double worst_normalized_pairing = 0.0;
  double worst_noise = 0.0;
  double worst_comb = 0.0;
  /// f = b¹_{Q⁰}, g = b²_{Q⁰}: the normalized pairing and its Hölder bound
  /// ‖1_{Q⁰}Tb¹‖_s‖b²‖_{s′} over the same normalization, s = (s′)′.
  double b_route_pairing = 0.0;
  double b_route_holder = 0.0;
};

/// Samples are drawn from a seed per index, so the same continuous inputs are
/// used at every depth. Noise levels run over 2..5 (capped below the depth).
template <int D>
BabyTbReport baby_tb_bound(const DiscreteOperator<D>& op, const AccretiveSystem<D>& sys1,
                           const AccretiveSystem<D>& sys2, double s_prime, std::size_t samples = 64,
                           std::uint64_t seed = 1, double t = std::numeric_limits<double>::infinity()) {
  const double tp = std::isinf(t) ? 1.0 : conjugate(t);
  if (!(s_prime > std::max(tp, 2.0)) || std::isinf(s_prime)) throw Error("baby Tb exponent s' must exceed max(t', 2)");
  const int n = op.depth();
  BabyTbReport rep;
  rep.s_prime = s_prime;
  rep.samples = samples;
  const auto normalized = [&](const GridFunction<D>& f, const GridFunction<D>& g) {
    const double den = f.lp_norm(s_prime) * g.lp_norm(s_prime);
    return den > 0.0 ? std::abs(inner(op.apply(f), g)) / den : 0.0;
  };
  const int lo = std::min(2, n), hi = std::max(lo, std::min(5, n - 1));
  for (std::size_t s = 0; s < samples; ++s) {
    std::mt19937_64 rng(seed * 1000003u + s);
    std::uniform_int_distribution<int> lev(lo, hi);
    const int l1 = lev(rng), l2 = lev(rng);
    const auto f = coarse_noise<D>(n, l1, rng);
    const auto g = coarse_noise<D>(n, l2, rng);
    rep.worst_noise = std::max(rep.worst_noise, normalized(f, g));
    const auto fc = lacunary_comb<D>(n, rng);
    const auto gc = lacunary_comb<D>(n, rng);
    rep.worst_comb = std::max(rep.worst_comb, normalized(fc, gc));
  }
  rep.worst_normalized_pairing = std::max(rep.worst_noise, rep.worst_comb);
  const auto b1 = sys1.function(root_cube<D>());
  const auto b2 = sys2.function(root_cube<D>());
  const double den = b1.lp_norm(s_prime) * b2.lp_norm(s_prime);
  if (den > 0.0) {
    const auto tb = op.apply(b1);
    rep.b_route_pairing = std::abs(inner(tb, b2)) / den;
    rep.b_route_holder = tb.lp_norm(conjugate(s_prime)) * b2.lp_norm(s_prime) / den;
  }
  return rep;
}

}  // namespace localtb
