#pragma once

// Dyadic geometry over the reference cube [0,1)^D and piecewise-constant
// function calculus at a fixed finest depth N.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "localtb/error.hpp"

namespace localtb {

template <int D>
using Point = std::array<double, D>;

template <int D>
using CellCoord = std::array<long, D>;

template <int D>
inline double distance(const Point<D>& x, const Point<D>& y) {
  double s = 0.0;
  for (int k = 0; k < D; ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
  return std::sqrt(s);
}

inline constexpr long side_cells(int depth) { return 1L << depth; }

template <int D>
inline constexpr std::size_t cell_count(int depth) {
  return std::size_t{1} << (D * depth);
}

/// Axis-aligned box of finest cells, half-open [lo, hi) per axis. Coordinates
/// may fall outside the reference cube (padded domain).
template <int D>
struct Box {
  CellCoord<D> lo{};
  CellCoord<D> hi{};

  std::size_t size() const {
    std::size_t s = 1;
    for (int k = 0; k < D; ++k) s *= static_cast<std::size_t>(std::max(0L, hi[k] - lo[k]));
    return s;
  }
  bool contains(const CellCoord<D>& c) const {
    for (int k = 0; k < D; ++k)
      if (c[k] < lo[k] || c[k] >= hi[k]) return false;
    return true;
  }
  Box intersect(const Box& o) const {
    Box r;
    for (int k = 0; k < D; ++k) {
      r.lo[k] = std::max(lo[k], o.lo[k]);
      r.hi[k] = std::max(r.lo[k], std::min(hi[k], o.hi[k]));
    }
    return r;
  }
  /// Row-major enumeration of the cells of the box.
  CellCoord<D> cell(std::size_t i) const {
    CellCoord<D> c{};
    for (int k = D - 1; k >= 0; --k) {
      const auto w = static_cast<std::size_t>(hi[k] - lo[k]);
      c[k] = lo[k] + static_cast<long>(i % w);
      i /= w;
    }
    return c;
  }
  friend bool operator==(const Box&, const Box&) = default;
};

template <int D>
inline Box<D> domain_box(int depth) {
  Box<D> b;
  b.lo.fill(0);
  b.hi.fill(side_cells(depth));
  return b;
}

/// The box 3Q^0 = [-1, 2)^D on which complements of cubes are integrated.
template <int D>
inline Box<D> padded_box(int depth) {
  Box<D> b;
  b.lo.fill(-side_cells(depth));
  b.hi.fill(2 * side_cells(depth));
  return b;
}

template <int D>
inline std::size_t linear_cell(const CellCoord<D>& c, int depth) {
  const long n = side_cells(depth);
  std::size_t idx = 0;
  for (int k = 0; k < D; ++k) idx = idx * static_cast<std::size_t>(n) + static_cast<std::size_t>(c[k]);
  return idx;
}

template <int D>
inline CellCoord<D> cell_coord(std::size_t idx, int depth) {
  const auto n = static_cast<std::size_t>(side_cells(depth));
  CellCoord<D> c{};
  for (int k = D - 1; k >= 0; --k) {
    c[k] = static_cast<long>(idx % n);
    idx /= n;
  }
  return c;
}

template <int D>
inline Point<D> cell_center(const CellCoord<D>& c, int depth) {
  const double h = std::ldexp(1.0, -depth);
  Point<D> x{};
  for (int k = 0; k < D; ++k) x[k] = (static_cast<double>(c[k]) + 0.5) * h;
  return x;
}

template <int D>
inline bool in_domain(const CellCoord<D>& c, int depth) {
  const long n = side_cells(depth);
  for (int k = 0; k < D; ++k)
    if (c[k] < 0 || c[k] >= n) return false;
  return true;
}

// ---------------------------------------------------------------------------

/// A dyadic subcube of [0,1)^D: side 2^-level, lower corner index * 2^-level.
template <int D>
struct Cube {
  int level = 0;
  std::array<int, D> index{};

  double side() const { return std::ldexp(1.0, -level); }
  double volume() const { return std::ldexp(1.0, -D * level); }

  Point<D> center() const {
    Point<D> c{};
    for (int k = 0; k < D; ++k) c[k] = (index[k] + 0.5) * side();
    return c;
  }

  /// True when `other` is a (not necessarily strict) subcube of *this.
  bool contains(const Cube& other) const {
    if (other.level < level) return false;
    const int shift = other.level - level;
    for (int k = 0; k < D; ++k)
      if ((other.index[k] >> shift) != index[k]) return false;
    return true;
  }

  Cube parent() const {
    require(level > 0, "root cube has no parent");
    Cube p{level - 1, {}};
    for (int k = 0; k < D; ++k) p.index[k] = index[k] >> 1;
    return p;
  }

  Cube ancestor(int at_level) const {
    require(at_level >= 0 && at_level <= level, "ancestor level out of range");
    Cube a{at_level, {}};
    for (int k = 0; k < D; ++k) a.index[k] = index[k] >> (level - at_level);
    return a;
  }

  /// Cells of the cube at finest depth N.
  Box<D> cells(int depth) const {
    const long w = side_cells(depth - level);
    Box<D> b;
    for (int k = 0; k < D; ++k) {
      b.lo[k] = index[k] * w;
      b.hi[k] = b.lo[k] + w;
    }
    return b;
  }

  /// Concentric dilate by an odd or even integer factor, as a box of cells.
  /// The factor-2 dilate needs half-cube offsets, so depth must exceed level.
  Box<D> dilate(int factor, int depth) const {
    const long w = side_cells(depth - level);
    require(factor % 2 == 1 || w % 2 == 0, "dilate by even factor needs a non-leaf cube");
    const long grow = (factor - 1) * w / 2;
    Box<D> b = cells(depth);
    for (int k = 0; k < D; ++k) {
      b.lo[k] -= grow;
      b.hi[k] += grow;
    }
    return b;
  }
  Box<D> triple(int depth) const { return dilate(3, depth); }

  std::string str() const {
    std::string s = "L" + std::to_string(level) + "[";
    for (int k = 0; k < D; ++k) s += (k ? "," : "") + std::to_string(index[k]);
    return s + "]";
  }

  auto operator<=>(const Cube&) const = default;
};

template <int D>
inline Cube<D> root_cube() {
  return Cube<D>{0, {}};
}

/// The 2^D dyadic children of Q.
template <int D>
std::vector<Cube<D>> children(const Cube<D>& q, int depth) {
  if (q.level >= depth) throw Error("leaf cube");
  std::vector<Cube<D>> out;
  out.reserve(std::size_t{1} << D);
  for (int mask = 0; mask < (1 << D); ++mask) {
    Cube<D> c{q.level + 1, {}};
    for (int k = 0; k < D; ++k) c.index[k] = 2 * q.index[k] + ((mask >> (D - 1 - k)) & 1);
    out.push_back(c);
  }
  return out;
}

/// Which child of its parent a cube is, matching the order of children().
template <int D>
int child_slot(const Cube<D>& q) {
  int s = 0;
  for (int k = 0; k < D; ++k) s = (s << 1) | (q.index[k] & 1);
  return s;
}

/// Distance from x to the complement of a box given in continuum coordinates.
template <int D>
double distance_to_complement(const Point<D>& x, const Point<D>& lo, const Point<D>& hi) {
  double d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < D; ++k) {
    if (x[k] <= lo[k] || x[k] >= hi[k]) return 0.0;
    d = std::min({d, x[k] - lo[k], hi[k] - x[k]});
  }
  return d;
}

/// Dense numbering of all dyadic cubes of levels 0..N, level-major.
template <int D>
class CubeTree {
 public:
  explicit CubeTree(int depth) : depth_(depth) {
    require(depth >= 0 && depth <= 14, "depth out of supported range");
    offsets_.resize(depth + 2);
    offsets_[0] = 0;
    for (int l = 0; l <= depth; ++l) offsets_[l + 1] = offsets_[l] + (std::size_t{1} << (D * l));
  }

  int depth() const { return depth_; }
  std::size_t size() const { return offsets_.back(); }
  std::size_t level_begin(int l) const { return offsets_[l]; }
  std::size_t level_end(int l) const { return offsets_[l + 1]; }

  std::size_t id(const Cube<D>& q) const {
    const auto n = static_cast<std::size_t>(1) << q.level;
    std::size_t idx = 0;
    for (int k = 0; k < D; ++k) idx = idx * n + static_cast<std::size_t>(q.index[k]);
    return offsets_[q.level] + idx;
  }

  Cube<D> cube(std::size_t id) const {
    int l = 0;
    while (id >= offsets_[l + 1]) ++l;
    std::size_t r = id - offsets_[l];
    const auto n = static_cast<std::size_t>(1) << l;
    Cube<D> q{l, {}};
    for (int k = D - 1; k >= 0; --k) {
      q.index[k] = static_cast<int>(r % n);
      r /= n;
    }
    return q;
  }

  /// Every cube contained in `top` (top included), coarse to fine.
  std::vector<Cube<D>> subcubes(const Cube<D>& top) const {
    std::vector<Cube<D>> out{top};
    for (std::size_t i = 0; i < out.size(); ++i)
      if (out[i].level < depth_)
        for (const auto& c : children(out[i], depth_)) out.push_back(c);
    return out;
  }

 private:
  int depth_;
  std::vector<std::size_t> offsets_;
};

// ---------------------------------------------------------------------------

/// Piecewise-constant function on the finest cells of [0,1)^D.
template <int D>
class GridFunction {
 public:
  GridFunction() = default;
  explicit GridFunction(int depth, double fill = 0.0) : depth_(depth), values_(cell_count<D>(depth), fill) {}
  GridFunction(int depth, std::vector<double> values) : depth_(depth), values_(std::move(values)) {
    require(values_.size() == cell_count<D>(depth), "grid function size does not match depth");
  }

  /// Samples f at cell centers.
  static GridFunction sample(int depth, const std::function<double(const Point<D>&)>& f) {
    GridFunction g(depth);
    for (std::size_t i = 0; i < g.size(); ++i) g.values_[i] = f(cell_center<D>(cell_coord<D>(i, depth), depth));
    return g;
  }

  static GridFunction indicator(int depth, const Cube<D>& q) {
    GridFunction g(depth);
    const auto b = q.cells(depth);
    for (std::size_t i = 0; i < b.size(); ++i) g.values_[linear_cell<D>(b.cell(i), depth)] = 1.0;
    return g;
  }

  int depth() const { return depth_; }
  std::size_t size() const { return values_.size(); }
  double cell_volume() const { return std::ldexp(1.0, -D * depth_); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double at(const CellCoord<D>& c) const { return values_[linear_cell<D>(c, depth_)]; }
  /// Value at a cell that may lie outside the reference cube (zero there).
  double at_padded(const CellCoord<D>& c) const { return in_domain<D>(c, depth_) ? at(c) : 0.0; }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  double integral() const {
    return std::accumulate(values_.begin(), values_.end(), 0.0) * cell_volume();
  }

  double average(const Cube<D>& q) const {
    const auto b = q.cells(depth_);
    double s = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) s += at(b.cell(i));
    return s / static_cast<double>(b.size());
  }

  /// (∫ |f|^p)^{1/p}; p = infinity gives the sup norm.
  double lp_norm(double p) const {
    if (std::isinf(p)) return max_abs();
    double s = 0.0;
    for (double v : values_) s += std::pow(std::abs(v), p);
    return std::pow(s * cell_volume(), 1.0 / p);
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
  }

  GridFunction& operator+=(const GridFunction& o) {
    for (std::size_t i = 0; i < size(); ++i) values_[i] += o.values_[i];
    return *this;
  }
  GridFunction& operator-=(const GridFunction& o) {
    for (std::size_t i = 0; i < size(); ++i) values_[i] -= o.values_[i];
    return *this;
  }
  GridFunction& operator*=(double c) {
    for (double& v : values_) v *= c;
    return *this;
  }
  friend GridFunction operator+(GridFunction a, const GridFunction& b) { return a += b; }
  friend GridFunction operator-(GridFunction a, const GridFunction& b) { return a -= b; }
  friend GridFunction operator*(double c, GridFunction a) { return a *= c; }

  /// Pointwise product.
  friend GridFunction operator*(GridFunction a, const GridFunction& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a.values_[i] *= b.values_[i];
    return a;
  }

  GridFunction restricted(const Cube<D>& q) const {
    GridFunction g(depth_);
    const auto b = q.cells(depth_);
    for (std::size_t i = 0; i < b.size(); ++i) {
      const auto j = linear_cell<D>(b.cell(i), depth_);
      g.values_[j] = values_[j];
    }
    return g;
  }

  /// Support is contained in Q.
  bool supported_in(const Cube<D>& q) const {
    const auto b = q.cells(depth_);
    for (std::size_t i = 0; i < size(); ++i)
      if (values_[i] != 0.0 && !b.contains(cell_coord<D>(i, depth_))) return false;
    return true;
  }

 private:
  int depth_ = 0;
  std::vector<double> values_;
};

template <int D>
double inner(const GridFunction<D>& f, const GridFunction<D>& g) {
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += f[i] * g[i];
  return s * f.cell_volume();
}

/// Sums of a grid function over every dyadic cube, built bottom-up. Makes
/// averages over all cubes O(1) after an O(#cells) build.
template <int D>
class CubeSums {
 public:
  CubeSums(const GridFunction<D>& f) : tree_(f.depth()), sums_(tree_.size(), 0.0) {
    const int n = f.depth();
    for (std::size_t i = 0; i < f.size(); ++i) {
      const auto c = cell_coord<D>(i, n);
      Cube<D> q{n, {}};
      for (int k = 0; k < D; ++k) q.index[k] = static_cast<int>(c[k]);
      sums_[tree_.id(q)] = f[i];
    }
    for (int l = n - 1; l >= 0; --l)
      for (std::size_t id = tree_.level_begin(l); id < tree_.level_end(l); ++id) {
        double s = 0.0;
        for (const auto& c : children(tree_.cube(id), n)) s += sums_[tree_.id(c)];
        sums_[id] = s;
      }
  }

  double sum(const Cube<D>& q) const { return sums_[tree_.id(q)]; }
  double average(const Cube<D>& q) const {
    return sum(q) / static_cast<double>(std::size_t{1} << (D * (tree_.depth() - q.level)));
  }
  const CubeTree<D>& tree() const { return tree_; }

 private:
  CubeTree<D> tree_;
  std::vector<double> sums_;
};

/// Indicator of a set of finest cells in [0,1)^D.
template <int D>
class Region {
 public:
  Region(int depth, bool fill) : depth_(depth), mask_(cell_count<D>(depth), fill ? 1 : 0) {}

  static Region everything(int depth) { return Region(depth, true); }
  static Region nothing(int depth) { return Region(depth, false); }

  /// Cells of [0,1)^D inside any of the given boxes.
  static Region from_boxes(int depth, std::span<const Box<D>> boxes) {
    Region r(depth, false);
    for (const auto& b0 : boxes) {
      const auto b = b0.intersect(domain_box<D>(depth));
      for (std::size_t i = 0; i < b.size(); ++i) r.mask_[linear_cell<D>(b.cell(i), depth)] = 1;
    }
    return r;
  }
  static Region from_cubes(int depth, std::span<const Cube<D>> cubes) {
    std::vector<Box<D>> boxes;
    for (const auto& q : cubes) boxes.push_back(q.cells(depth));
    return from_boxes(depth, boxes);
  }

  Region complement() const {
    Region r = *this;
    for (auto& m : r.mask_) m = m ? 0 : 1;
    return r;
  }

  int depth() const { return depth_; }
  bool operator[](std::size_t i) const { return mask_[i] != 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), 1)); }

  template <typename F>
  F apply(F f) const {
    for (std::size_t i = 0; i < mask_.size(); ++i)
      if (!mask_[i]) f[i] = 0.0;
    return f;
  }

 private:
  int depth_;
  std::vector<std::uint8_t> mask_;
};

// ---------------------------------------------------------------------------

inline double conjugate(double p) {
  if (std::isinf(p)) return 1.0;
  if (p == 1.0) return std::numeric_limits<double>::infinity();
  return p / (p - 1.0);
}

/// Integrability exponents of a run. All lie in (1, ∞); conjugates derived.
struct ExponentConfig {
  double p = 1.5;
  double q = 1.5;
  double u = 1.5;
  double v = 1.5;
  double s = 4.0 / 3.0;
  double t = 1.5;
  double r = 1.25;

  double p_conj() const { return conjugate(p); }
  double q_conj() const { return conjugate(q); }
  double u_conj() const { return conjugate(u); }
  double v_conj() const { return conjugate(v); }
  double s_conj() const { return conjugate(s); }
  double t_conj() const { return conjugate(t); }
  double r_conj() const { return conjugate(r); }

  void validate() const {
    for (double e : {p, q, u, v, s, t, r})
      if (!(e > 1.0) || std::isinf(e)) throw ConfigError("exponents must lie in (1, inf)");
  }

  /// Exponent s' admissible for the sparse-family boundedness conclusion.
  bool baby_tb_admissible() const { return s_conj() > std::max(t_conj(), 2.0); }
};

}  // namespace localtb
