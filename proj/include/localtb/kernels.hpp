#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "localtb/dyadic.hpp"

namespace localtb {

/// A nonnegative 1-Lipschitz damping profile Φ used to suppress a kernel.
/// Profiles built from cubes are evaluated exactly at any point as the largest
/// distance to the complement of a tripled cube; profiles built from grid
/// values are piecewise constant and vanish outside [0,1)^D.
template <int D>
class SuppressionProfile {
 public:
  static SuppressionProfile from_cubes(int depth, std::vector<Cube<D>> cubes, int m) {
    SuppressionProfile s;
    s.m_ = m;
    s.depth_ = depth;
    s.cubes_ = std::move(cubes);
    s.analytic_ = true;
    s.values_ = GridFunction<D>::sample(depth, [&s](const Point<D>& x) { return s(x); });
    return s;
  }

  static SuppressionProfile from_values(GridFunction<D> values, int m, double lipschitz = 1.0) {
    SuppressionProfile s;
    s.m_ = m;
    s.depth_ = values.depth();
    s.values_ = std::move(values);
    s.lipschitz_ = lipschitz;
    return s;
  }

  static SuppressionProfile zero(int depth, int m) { return from_cubes(depth, {}, m); }

  double operator()(const Point<D>& x) const {
    if (analytic_) {
      double best = 0.0;
      for (const auto& q : cubes_) {
        Point<D> lo{}, hi{};
        const auto c = q.center();
        for (int k = 0; k < D; ++k) {
          lo[k] = c[k] - 1.5 * q.side();
          hi[k] = c[k] + 1.5 * q.side();
        }
        best = std::max(best, distance_to_complement<D>(x, lo, hi));
      }
      return best;
    }
    const double h = std::ldexp(1.0, -depth_);
    CellCoord<D> c{};
    for (int k = 0; k < D; ++k) c[k] = static_cast<long>(std::floor(x[k] / h));
    return values_.at_padded(c);
  }

  int m() const { return m_; }
  int depth() const { return depth_; }
  double lipschitz() const { return lipschitz_; }
  const GridFunction<D>& values() const { return values_; }
  const std::vector<Cube<D>>& cubes() const { return cubes_; }
  bool identically_zero() const { return values_.max_abs() == 0.0 && (!analytic_ || cubes_.empty()); }

  /// Measure of {Φ > 0} inside the box of cells `region`, at the profile's depth.
  double positive_measure(const Box<D>& region) const {
    const double cell = std::ldexp(1.0, -D * depth_);
    double total = 0.0;
    for (std::size_t i = 0; i < region.size(); ++i)
      if ((*this)(cell_center<D>(region.cell(i), depth_)) > 0.0) total += cell;
    return total;
  }

  /// Checks nonnegativity, m ≥ D/2, and the Lipschitz bound between
  /// axis-adjacent cell centers. Returns the worst observed slope.
  double validate() const {
    if (2 * m_ < D) throw Error("suppression power m must satisfy m >= d/2");
    if (lipschitz_ > 1.0) throw Error("suppression profile Lipschitz constant exceeds 1");
    const double h = std::ldexp(1.0, -depth_);
    double worst = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (values_[i] < 0.0) throw Error("suppression profile is negative");
      const auto c = cell_coord<D>(i, depth_);
      for (int k = 0; k < D; ++k) {
        auto nb = c;
        ++nb[k];
        if (!in_domain<D>(nb, depth_)) continue;
        worst = std::max(worst, std::abs(values_.at(nb) - values_[i]) / h);
      }
    }
    if (worst > lipschitz_ * (1.0 + 1e-12)) throw Error("suppression profile violates its Lipschitz bound");
    return worst;
  }

 private:
  int m_ = D;
  int depth_ = 0;
  double lipschitz_ = 1.0;
  bool analytic_ = false;
  std::vector<Cube<D>> cubes_;
  GridFunction<D> values_;
};

/// Calderón–Zygmund kernel with declared constants. Evaluation returns 0 for
/// |x−y| ≤ cap, so the operator is globally defined; distinct cell centers
/// are always farther apart than the cap.
template <int D>
struct Kernel {
  std::string name;
  std::function<double(const Point<D>&, const Point<D>&)> raw;
  double alpha = 0.4;
  double size_const = 1.0;
  double holder_const = 1.0;
  bool antisymmetric = false;
  double cap = 0.0;
  std::shared_ptr<const SuppressionProfile<D>> suppression;

  bool suppressed() const { return suppression != nullptr; }

  /// Suppression factor given Φ(x), Φ(y) and r = |x−y|.
  double damping(double r, double phix, double phiy) const {
    if (!suppression) return 1.0;
    const int m = suppression->m();
    const double r2m = std::pow(r, 2 * m);
    const double pp = std::pow(phix, m) * std::pow(phiy, m);
    return r2m / (r2m + pp);
  }

  /// K(x,y) with Φ(x), Φ(y) supplied by the caller (ignored if unsuppressed).
  double eval(const Point<D>& x, const Point<D>& y, double phix, double phiy) const {
    const double r = distance<D>(x, y);
    if (r <= cap) return 0.0;
    const double k = raw(x, y);
    return suppression ? k * damping(r, phix, phiy) : k;
  }

  double operator()(const Point<D>& x, const Point<D>& y) const {
    if (!suppression) return eval(x, y, 0.0, 0.0);
    return eval(x, y, (*suppression)(x), (*suppression)(y));
  }
};

struct KernelParams {
  double alpha = 0.4;
  /// Coordinate direction for the Riesz kernels (1-based).
  int j = 1;
  /// Lipschitz constant of the graph for the Cauchy kernel.
  double lipschitz = 1.0;
  /// Real (false) or imaginary (true) part of the Cauchy kernel.
  bool imaginary = false;
};

/// Builds one of the concrete kernels: "hilbert" (D=1), "riesz" or
/// "riesz_1"/"riesz_2" (D=2), "cauchy_lipschitz" (D=1), "zero" (any D).
template <int D>
Kernel<D> make_kernel(const std::string& name, int depth, KernelParams params = {}) {
  if (!(params.alpha > 0.0 && params.alpha <= 1.0)) throw ConfigError("kernel alpha must lie in (0, 1]");
  Kernel<D> k;
  k.name = name;
  k.alpha = params.alpha;
  k.cap = 0.5 * std::ldexp(1.0, -depth);
  const double a = params.alpha;
  if (name == "hilbert") {
    if (D != 1) throw ConfigError("hilbert kernel requires d=1");
    k.raw = [](const Point<D>& x, const Point<D>& y) { return 1.0 / (x[0] - y[0]); };
    k.size_const = 1.0;
    k.holder_const = std::pow(2.0, a);
    k.antisymmetric = true;
  } else if (name == "riesz" || name == "riesz_1" || name == "riesz_2") {
    if (D != 2) throw ConfigError("riesz kernels require d=2");
    int j = params.j;
    if (name == "riesz_1") j = 1;
    if (name == "riesz_2") j = 2;
    if (j != 1 && j != 2) throw ConfigError("riesz index must be 1 or 2");
    k.name = "riesz_" + std::to_string(j);
    const int jj = j - 1;
    k.raw = [jj](const Point<D>& x, const Point<D>& y) {
      const double r = distance<D>(x, y);
      return (x[jj] - y[jj]) / (r * r * r);
    };
    k.size_const = 1.0;
    k.holder_const = std::pow(2.0, 3.0 + a);
    k.antisymmetric = true;
  } else if (name == "cauchy_lipschitz") {
    if (D != 1) throw ConfigError("cauchy_lipschitz kernel requires d=1");
    const double L = params.lipschitz;
    if (!(L >= 0.0)) throw ConfigError("graph Lipschitz constant must be nonnegative");
    const auto graph = [L](double x) { return L / (2.0 * std::numbers::pi) * std::sin(2.0 * std::numbers::pi * x); };
    const bool im = params.imaginary;
    k.name = im ? "cauchy_lipschitz_im" : "cauchy_lipschitz_re";
    k.raw = [graph, im](const Point<D>& x, const Point<D>& y) {
      const double re = x[0] - y[0];
      const double ig = graph(x[0]) - graph(y[0]);
      const double den = re * re + ig * ig;
      return im ? -ig / den : re / den;
    };
    k.size_const = 1.0;
    k.holder_const = std::pow(2.0, 1.0 + a) * std::sqrt(1.0 + L * L);
    k.antisymmetric = true;
  } else if (name == "zero") {
    k.raw = [](const Point<D>&, const Point<D>&) { return 0.0; };
    k.size_const = 0.0;
    k.holder_const = 0.0;
    k.antisymmetric = true;
  } else {
    throw ConfigError("unknown kernel: " + name);
  }
  return k;
}

/// Kernel of the adjoint operator, K*(x,y) = K(y,x).
template <int D>
Kernel<D> adjoint(const Kernel<D>& k) {
  Kernel<D> a = k;
  a.name = k.name + "*";
  auto raw = k.raw;
  a.raw = [raw](const Point<D>& x, const Point<D>& y) { return raw(y, x); };
  return a;
}

/// K_Φ(x,y) = |x−y|^{2m} K(x,y) / (|x−y|^{2m} + Φ(x)^m Φ(y)^m).
template <int D>
Kernel<D> suppress(const Kernel<D>& k, SuppressionProfile<D> phi) {
  if (k.suppressed()) throw Error("kernel is already suppressed");
  phi.validate();
  Kernel<D> s = k;
  s.name = k.name + "_phi";
  s.suppression = std::make_shared<const SuppressionProfile<D>>(std::move(phi));
  // The Hölder constant of K_Φ depends on m and d and is measured, not declared.
  s.holder_const = std::numeric_limits<double>::quiet_NaN();
  return s;
}

struct CZReport {
  double max_size_ratio = 0.0;
  double max_holder_ratio = 0.0;
  double max_antisymmetry_defect = 0.0;
  std::size_t samples = 0;
};

/// Samples admissible quadruples with |x−x′| + |y−y′| < |x−y|/2 and records
/// |x−y|^D |K(x,y)| and |x−y|^{D+α} |K(x,y) − K(x′,y)| / |x−x′|^α (and the
/// same in the second variable).
template <int D>
CZReport verify_cz_estimates(const Kernel<D>& k, std::size_t samples, std::uint64_t seed) {
  if (samples == 0) throw Error("samples must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double min_sep = 4.0 * k.cap;
  CZReport rep;
  rep.samples = samples;
  auto direction = [&]() {
    Point<D> v{};
    double nrm = 0.0;
    while (nrm == 0.0) {
      for (int i = 0; i < D; ++i) v[i] = gauss(rng);
      nrm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    }
    for (auto& c : v) c /= nrm;
    return v;
  };
  for (std::size_t s = 0; s < samples; ++s) {
    Point<D> x{}, y{};
    double r = 0.0;
    do {
      for (int i = 0; i < D; ++i) {
        x[i] = unit(rng);
        y[i] = unit(rng);
      }
      r = distance<D>(x, y);
    } while (r < min_sep);
    const double kxy = k(x, y);
    rep.max_size_ratio = std::max(rep.max_size_ratio, std::pow(r, D) * std::abs(kxy));
    rep.max_antisymmetry_defect = std::max(rep.max_antisymmetry_defect, std::abs(kxy + k(y, x)) * std::pow(r, D));

    const double budget = 0.5 * r * unit(rng);
    const double share = unit(rng);
    const double dx = budget * share;
    const double dy = budget * (1.0 - share);
    Point<D> xp = x, yp = y;
    const auto ux = direction();
    const auto uy = direction();
    for (int i = 0; i < D; ++i) {
      xp[i] += dx * ux[i];
      yp[i] += dy * uy[i];
    }
    const double scale = std::pow(r, D + k.alpha);
    if (dx > 0.0) rep.max_holder_ratio = std::max(rep.max_holder_ratio, scale * std::abs(kxy - k(xp, y)) / std::pow(dx, k.alpha));
    if (dy > 0.0) rep.max_holder_ratio = std::max(rep.max_holder_ratio, scale * std::abs(kxy - k(x, yp)) / std::pow(dy, k.alpha));
  }
  return rep;
}

/// Largest ℓ(Q)^D |K(x,y)| over sampled x ∈ 2Q, y ∈ Q (x ≠ y beyond the cap).
/// For a suppressed kernel whose profile dominates dist(·,(3Q)^c) this stays
/// bounded independently of how close x and y are.
template <int D>
double local_kernel_bound(const Kernel<D>& k, const Cube<D>& q, std::size_t samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto c = q.center();
  const double l = q.side();
  double worst = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    Point<D> x{}, y{};
    for (int i = 0; i < D; ++i) {
      x[i] = c[i] + l * (2.0 * unit(rng) - 1.0);
      y[i] = c[i] + l * (unit(rng) - 0.5);
    }
    if (distance<D>(x, y) <= k.cap) continue;
    worst = std::max(worst, std::pow(l, D) * std::abs(k(x, y)));
  }
  return worst;
}

}  // namespace localtb
