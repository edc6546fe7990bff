#pragma once

#include <cmath>
#include <vector>

#include "localtb/dyadic.hpp"

namespace localtb {

namespace detail {

/// Inclusive prefix sums over a D-dimensional row-major array of extent n^D,
/// with a zero border so that box sums need no branches.
template <int D>
class PrefixSums {
 public:
  PrefixSums(std::span<const double> v, long n) : n_(n), m_(n + 1) {
    std::size_t total = 1;
    for (int k = 0; k < D; ++k) total *= static_cast<std::size_t>(m_);
    s_.assign(total, 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::size_t r = i;
      std::array<long, D> c{};
      for (int k = D - 1; k >= 0; --k) {
        c[k] = static_cast<long>(r % static_cast<std::size_t>(n)) + 1;
        r /= static_cast<std::size_t>(n);
      }
      s_[idx(c)] = v[i];
    }
    for (int k = 0; k < D; ++k) {
      const std::size_t stride = stride_of(k);
      for (std::size_t i = 0; i < s_.size(); ++i)
        if ((i / stride) % static_cast<std::size_t>(m_) != 0) s_[i] += s_[i - stride];
    }
  }

  /// Sum over the cell box [lo, hi) clipped to [0, n)^D.
  double box_sum(std::array<long, D> lo, std::array<long, D> hi) const {
    for (int k = 0; k < D; ++k) {
      lo[k] = std::clamp(lo[k], 0L, n_);
      hi[k] = std::clamp(hi[k], 0L, n_);
      if (hi[k] <= lo[k]) return 0.0;
    }
    double total = 0.0;
    for (int mask = 0; mask < (1 << D); ++mask) {
      std::array<long, D> c{};
      int sign = 1;
      for (int k = 0; k < D; ++k) {
        if ((mask >> k) & 1) {
          c[k] = lo[k];
          sign = -sign;
        } else {
          c[k] = hi[k];
        }
      }
      total += sign * s_[idx(c)];
    }
    return total;
  }

 private:
  std::size_t stride_of(int axis) const {
    std::size_t s = 1;
    for (int k = D - 1; k > axis; --k) s *= static_cast<std::size_t>(m_);
    return s;
  }
  std::size_t idx(const std::array<long, D>& c) const {
    std::size_t i = 0;
    for (int k = 0; k < D; ++k) i = i * static_cast<std::size_t>(m_) + static_cast<std::size_t>(c[k]);
    return i;
  }

  long n_, m_;
  std::vector<double> s_;
};

inline long floor_div(long a, long b) {
  long q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace detail

/// M_p f(x) = sup of (⨍_Q |f|^p)^{1/p} over cubes Q containing x. The cubes
/// are the dyadic cubes of every level together with copies of each level's
/// grid translated by ±⌊w/3⌋ cells per axis (w the level's side in cells).
/// Translated cubes may stick out of [0,1)^D, where f vanishes.
template <int D>
GridFunction<D> maximal_function(const GridFunction<D>& f, double exponent = 1.0) {
  if (!(exponent >= 1.0)) throw Error("maximal function exponent must be >= 1");
  const int n = f.depth();
  const long side = side_cells(n);
  std::vector<double> powered(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) powered[i] = std::pow(std::abs(f[i]), exponent);
  const detail::PrefixSums<D> ps(powered, side);

  GridFunction<D> out(n);
  for (int level = 0; level <= n; ++level) {
    const long w = side_cells(n - level);
    const long t = w / 3;
    const double vol = std::pow(static_cast<double>(w), D);
    const int shifts = (t > 0) ? 3 : 1;
    int combos = 1;
    for (int k = 0; k < D; ++k) combos *= shifts;
    for (int s = 0; s < combos; ++s) {
      std::array<long, D> shift{};
      int r = s;
      for (int k = 0; k < D; ++k) {
        shift[k] = (t > 0) ? (r % 3 - 1) * t : 0;
        r /= (t > 0) ? 3 : 1;
      }
      for (std::size_t i = 0; i < f.size(); ++i) {
        const auto c = cell_coord<D>(i, n);
        std::array<long, D> lo{}, hi{};
        for (int k = 0; k < D; ++k) {
          lo[k] = detail::floor_div(c[k] - shift[k], w) * w + shift[k];
          hi[k] = lo[k] + w;
        }
        const double avg = ps.box_sum(lo, hi) / vol;
        out[i] = std::max(out[i], avg);
      }
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(out[i], 1.0 / exponent);
  return out;
}

struct HardyReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double ratio = 0.0;
};

/// Compares ∫_{3Q∖Q} (∫_Q |f(y)| |x−y|^{-D} dy)^u dx with ‖1_Q f‖_u^u by
/// midpoint summation over finest cells.
template <int D>
HardyReport hardy_check(const GridFunction<D>& f, const Cube<D>& q, double u) {
  if (!(u > 1.0) || std::isinf(u)) throw Error("hardy exponent must lie in (1, inf)");
  if (!f.supported_in(q)) throw Error("function not supported in the cube");
  const int n = f.depth();
  const double h = std::ldexp(1.0, -n);
  const double cell = f.cell_volume();
  const Box<D> inner = q.cells(n);
  const Box<D> outer = q.triple(n);

  std::vector<CellCoord<D>> src;
  std::vector<double> w;
  for (std::size_t j = 0; j < inner.size(); ++j) {
    const auto c = inner.cell(j);
    const double v = std::abs(f.at(c));
    if (v != 0.0) {
      src.push_back(c);
      w.push_back(v * cell);
    }
  }

  HardyReport rep;
  for (std::size_t i = 0; i < outer.size(); ++i) {
    const auto x = outer.cell(i);
    if (inner.contains(x)) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < src.size(); ++j) {
      double r2 = 0.0;
      for (int k = 0; k < D; ++k) {
        const double dx = static_cast<double>(x[k] - src[j][k]) * h;
        r2 += dx * dx;
      }
      s += w[j] / std::pow(r2, 0.5 * D);
    }
    rep.lhs += std::pow(s, u) * cell;
  }
  for (std::size_t j = 0; j < inner.size(); ++j) rep.rhs += std::pow(std::abs(f.at(inner.cell(j))), u) * cell;
  rep.ratio = rep.rhs > 0.0 ? rep.lhs / rep.rhs : 0.0;
  return rep;
}

}  // namespace localtb
