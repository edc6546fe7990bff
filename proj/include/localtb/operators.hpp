#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "localtb/dyadic.hpp"
#include "localtb/kernels.hpp"
#include "localtb/maximal.hpp"

namespace localtb {

/// Midpoint-rule discretization of f ↦ ∫ K(x,y) f(y) dy on the finest cells
/// of [0,1)^D. The self-interaction of a cell is set to zero (principal value).
/// The kernel matrix is cached densely.
template <int D>
class DiscreteOperator {
 public:
  DiscreteOperator(Kernel<D> kernel, int depth) : kernel_(std::move(kernel)), depth_(depth), n_(cell_count<D>(depth)) {
    phi_.assign(n_, 0.0);
    centers_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      centers_[i] = cell_center<D>(cell_coord<D>(i, depth), depth);
      if (kernel_.suppression) phi_[i] = (*kernel_.suppression)(centers_[i]);
    }
    const double vol = std::ldexp(1.0, -D * depth);
    matrix_.assign(n_ * n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j)
        if (i != j) matrix_[i * n_ + j] = kernel_.eval(centers_[i], centers_[j], phi_[i], phi_[j]) * vol;
    build_offsets();
  }

  const Kernel<D>& kernel() const { return kernel_; }
  int depth() const { return depth_; }
  std::size_t cells() const { return n_; }
  double entry(std::size_t i, std::size_t j) const { return matrix_[i * n_ + j]; }

  GridFunction<D> apply(const GridFunction<D>& f) const {
    check(f);
    GridFunction<D> out(depth_);
    for (std::size_t i = 0; i < n_; ++i) {
      const double* row = &matrix_[i * n_];
      double s = 0.0;
      for (std::size_t j = 0; j < n_; ++j) s += row[j] * f[j];
      out[i] = s;
    }
    return out;
  }

  /// T(1_E f) for E given as a cell mask.
  GridFunction<D> apply(const GridFunction<D>& f, const Region<D>& mask) const { return apply(mask.apply(f)); }

  /// Tf at the cells of an arbitrary box, which may extend beyond [0,1)^D.
  std::vector<double> evaluate_on(const GridFunction<D>& f, const Box<D>& out) const {
    return apply_box(f, domain_box<D>(depth_), out);
  }

  /// T(1_src f) at the cells of `out`; `src` is clipped to [0,1)^D and `out`
  /// may extend beyond it. Cost is proportional to |src|·|out|.
  std::vector<double> apply_box(const GridFunction<D>& f, const Box<D>& src0, const Box<D>& out) const {
    check(f);
    const Box<D> src = src0.intersect(domain_box<D>(depth_));
    std::vector<std::size_t> cols;
    cols.reserve(src.size());
    for (std::size_t b = 0; b < src.size(); ++b) {
      const auto j = linear_cell<D>(src.cell(b), depth_);
      if (f[j] != 0.0) cols.push_back(j);
    }
    const double vol = std::ldexp(1.0, -D * depth_);
    std::vector<double> res(out.size(), 0.0);
    for (std::size_t a = 0; a < out.size(); ++a) {
      const auto c = out.cell(a);
      double s = 0.0;
      if (in_domain<D>(c, depth_)) {
        const double* row = &matrix_[linear_cell<D>(c, depth_) * n_];
        for (std::size_t j : cols) s += row[j] * f[j];
      } else {
        const auto x = cell_center<D>(c, depth_);
        const double px = kernel_.suppression ? (*kernel_.suppression)(x) : 0.0;
        for (std::size_t j : cols) s += kernel_.eval(x, centers_[j], px, phi_[j]) * f[j];
        s *= vol;
      }
      res[a] = s;
    }
    return res;
  }

  /// T_ε f: only pairs with center distance strictly greater than ε.
  GridFunction<D> truncated(const GridFunction<D>& f, double eps) const {
    if (!(eps > 0.0)) throw Error("truncation radius must be positive");
    check(f);
    GridFunction<D> out(depth_);
    for (std::size_t i = 0; i < n_; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n_; ++j)
        if (distance<D>(centers_[i], centers_[j]) > eps) s += matrix_[i * n_ + j] * f[j];
      out[i] = s;
    }
    return out;
  }

  /// T_# f = sup_ε |T_ε f| evaluated exactly: the truncated sum only changes
  /// when ε crosses an inter-center distance, so each output cell accumulates
  /// contributions from the farthest distance shell inwards and records the
  /// largest partial sum at every shell boundary.
  GridFunction<D> maximal_truncation(const GridFunction<D>& f) const {
    return maximal_truncation(f, domain_box<D>(depth_));
  }

  /// T_# f on the cells of `out` (inside [0,1)^D); zero elsewhere.
  GridFunction<D> maximal_truncation(const GridFunction<D>& f, const Box<D>& out) const {
    check(f);
    GridFunction<D> res(depth_);
    const Box<D> dom = domain_box<D>(depth_);
    const Box<D> b = out.intersect(dom);
    for (std::size_t a = 0; a < b.size(); ++a) {
      const auto c = b.cell(a);
      const std::size_t i = linear_cell<D>(c, depth_);
      const double* row = &matrix_[i * n_];
      double partial = 0.0, best = 0.0;
      std::size_t g = 0;
      for (std::size_t o = 0; o < offsets_.size(); ++o) {
        CellCoord<D> t = c;
        bool inside = true;
        for (int k = 0; k < D; ++k) {
          t[k] += offsets_[o][k];
          if (t[k] < 0 || t[k] >= dom.hi[k]) inside = false;
        }
        if (inside) {
          const std::size_t j = linear_cell<D>(t, depth_);
          if (f[j] != 0.0) partial += row[j] * f[j];
        }
        if (o + 1 == group_end_[g]) {
          best = std::max(best, std::abs(partial));
          ++g;
        }
      }
      res[i] = best;
    }
    return res;
  }

  /// Distinct squared inter-center distances, in units of the cell side.
  std::vector<long> squared_distance_set() const {
    std::vector<long> d;
    for (std::size_t g = 0; g < group_end_.size(); ++g) d.push_back(norm2(offsets_[group_end_[g] - 1]));
    return d;
  }

 private:
  static long norm2(const CellCoord<D>& o) {
    long s = 0;
    for (int k = 0; k < D; ++k) s += o[k] * o[k];
    return s;
  }

  void check(const GridFunction<D>& f) const {
    if (f.depth() != depth_) throw Error("grid function depth does not match operator depth");
  }

  void build_offsets() {
    const long n = side_cells(depth_);
    Box<D> all;
    all.lo.fill(-(n - 1));
    all.hi.fill(n);
    for (std::size_t a = 0; a < all.size(); ++a) {
      const auto o = all.cell(a);
      if (norm2(o) > 0) offsets_.push_back(o);
    }
    std::stable_sort(offsets_.begin(), offsets_.end(),
                     [](const CellCoord<D>& x, const CellCoord<D>& y) { return norm2(x) > norm2(y); });
    for (std::size_t o = 0; o < offsets_.size(); ++o)
      if (o + 1 == offsets_.size() || norm2(offsets_[o + 1]) != norm2(offsets_[o])) group_end_.push_back(o + 1);
  }

  Kernel<D> kernel_;
  int depth_;
  std::size_t n_;
  std::vector<double> matrix_;
  std::vector<double> phi_;
  std::vector<Point<D>> centers_;
  std::vector<CellCoord<D>> offsets_;
  std::vector<std::size_t> group_end_;
};

/// Operator for the adjoint kernel, assembled independently of the original.
template <int D>
DiscreteOperator<D> adjoint_operator(const DiscreteOperator<D>& op) {
  return DiscreteOperator<D>(adjoint(op.kernel()), op.depth());
}

struct CotlarReport {
  /// max over cells of T_# f / (Mf + M_{q'}(Tf) + M_{v'} f).
  double ratio = 0.0;
};

/// Pointwise Cotlar-type domination ratio of T_# f by maximal functions of f
/// and Tf. The buffered system for T* that the domination rests on enters only
/// through its nondegeneracy, which the caller must have validated.
template <int D>
CotlarReport cotlar_check(const DiscreteOperator<D>& op, const GridFunction<D>& f, double q, double v,
                          double adjoint_nondegeneracy = 1.0) {
  if (!(adjoint_nondegeneracy > 0.0)) throw Error("degenerate accretive system for the adjoint");
  CotlarReport rep;
  if (f.max_abs() == 0.0) return rep;
  const auto tsharp = op.maximal_truncation(f);
  const auto tf = op.apply(f);
  const auto m1 = maximal_function(f, 1.0);
  const auto mq = maximal_function(tf, conjugate(q));
  const auto mv = maximal_function(f, conjugate(v));
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double den = m1[i] + mq[i] + mv[i];
    if (den > 0.0) rep.ratio = std::max(rep.ratio, tsharp[i] / den);
  }
  return rep;
}

/// max over cells of |T_Φ f| / (T_# f + M f).
template <int D>
double suppressed_domination_ratio(const DiscreteOperator<D>& op_phi, const DiscreteOperator<D>& op,
                                   const GridFunction<D>& f) {
  const auto tphi = op_phi.apply(f);
  const auto tsharp = op.maximal_truncation(f);
  const auto m1 = maximal_function(f, 1.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double den = tsharp[i] + m1[i];
    if (den > 0.0) worst = std::max(worst, std::abs(tphi[i]) / den);
  }
  return worst;
}

}  // namespace localtb
