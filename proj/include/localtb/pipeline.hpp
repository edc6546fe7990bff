#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "localtb/accretive.hpp"
#include "localtb/bilinear.hpp"
#include "localtb/config.hpp"
#include "localtb/kernels.hpp"
#include "localtb/martingale.hpp"
#include "localtb/maximal.hpp"
#include "localtb/operators.hpp"
#include "localtb/report.hpp"
#include "localtb/stopping.hpp"

namespace localtb {

/// An error raised inside a pipeline stage, tagged with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage " + stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Everything measured at one depth.
struct DepthRun {
  int depth = 0;
  std::vector<Measurement> measurements;
  std::vector<StageProvenance> provenance;
  std::vector<PartRow> parts;
  std::vector<double> phi;
};

namespace detail {

/// Depth-consistent inputs: sample i is the same continuous function at every
/// depth (coarse noise on a fixed level, or a lacunary comb).
template <int D>
std::vector<GridFunction<D>> sample_inputs(int n, std::size_t count, std::uint64_t seed, bool combs) {
  std::vector<GridFunction<D>> out;
  const int lo = std::min(2, n), hi = std::max(lo, std::min(5, n - 1));
  for (std::size_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(seed * 7919u + i);
    if (combs && i % 2 == 1) {
      out.push_back(lacunary_comb<D>(n, rng));
    } else {
      const int level = lo + static_cast<int>(i % static_cast<std::size_t>(hi - lo + 1));
      out.push_back(coarse_noise<D>(n, level, rng));
    }
  }
  return out;
}

template <int D>
double lp_average(const std::vector<double>& v, double r) {
  double s = 0.0;
  for (double x : v) s += std::pow(std::abs(x), r);
  return std::pow(s / static_cast<double>(v.size()), 1.0 / r);
}

/// b_Q = |Q|/|Q∩{Φ=0}| 1_{Q∩{Φ=0}}, with {Φ=0} read at cell centers.
template <int D>
GridFunction<D> zero_set_function(const SuppressionProfile<D>& phi, const Cube<D>& q, int n) {
  GridFunction<D> b(n);
  const auto box = q.cells(n);
  std::size_t zero = 0;
  for (std::size_t i = 0; i < box.size(); ++i) {
    const auto c = box.cell(i);
    if (phi(cell_center<D>(c, n)) == 0.0) {
      b[linear_cell<D>(c, n)] = 1.0;
      ++zero;
    }
  }
  if (zero == 0) throw Error("the suppression profile covers all of " + q.str());
  return (static_cast<double>(box.size()) / static_cast<double>(zero)) * b;
}

/// Members of a sparse family for a system on all cubes: starting from the
/// top, the maximal subcubes on which the current member's function has
/// average below eta start new members. Returns the family and its τ.
template <int D>
std::pair<std::vector<Cube<D>>, double> nondegeneracy_family(const AccretiveSystem<D>& full, double eta) {
  const int n = full.depth();
  std::vector<Cube<D>> family{root_cube<D>()};
  double tau = 1.0;
  for (std::size_t i = 0; i < family.size(); ++i) {
    const auto q = family[i];
    const CubeSums<D> sums(full.function(q));
    const auto stop =
        maximal_cubes<D>(q, n, [&](const Cube<D>& c) { return c != q && std::abs(sums.average(c)) < eta; });
    tau = std::min(tau, 1.0 - total_volume(stop) / q.volume());
    family.insert(family.end(), stop.begin(), stop.end());
  }
  return {family, tau};
}

}  // namespace detail

/// Runs the selected stages at one depth. Stages needed by a selected stage
/// run silently.
template <int D>
DepthRun run_depth(const RunConfig& cfg, int n) {
  DepthRun run;
  run.depth = n;
  const auto& ex = cfg.exponents;
  const auto& st = cfg.stopping;
  const auto samples = static_cast<std::size_t>(cfg.samples);
  std::string stage;
  bool emit = false;
  const auto rec = [&](const std::string& name, const std::string& anchor, Check check, double tol, double value) {
    if (emit) run.measurements.push_back(Measurement{stage, name, anchor, check, tol, value});
  };
  const auto enter = [&](const std::string& s, std::vector<std::string> in, std::vector<std::string> out) {
    stage = s;
    emit = cfg.wants(s);
    if (emit) run.provenance.push_back(StageProvenance{s, std::move(in), std::move(out), false});
  };
  const auto after = [&](const std::string& s) {
    const auto& names = stage_names();
    const auto pos = std::find(names.begin(), names.end(), s);
    for (auto it = pos; it != names.end(); ++it)
      if (cfg.wants(*it)) return true;
    return false;
  };
  const bool need_forests = after("stopping");
  const bool need_adapted = cfg.wants("martingale") || cfg.wants("bilinear");

  try {
    // kernel --------------------------------------------------------------
    enter("kernel", {"config.kernel"}, {"K", "T", "T*"});
    const auto kernel = make_kernel<D>(cfg.kernel.name, n, cfg.kernel.params());
    const DiscreteOperator<D> op(kernel, n);
    const auto op_adj = adjoint_operator(op);
    if (emit) {
      const auto cz = verify_cz_estimates(kernel, 2000, cfg.seed);
      const double sz = kernel.size_const > 0.0 ? cz.max_size_ratio / kernel.size_const : cz.max_size_ratio;
      const double ho = kernel.holder_const > 0.0 ? cz.max_holder_ratio / kernel.holder_const : cz.max_holder_ratio;
      rec("cz_size_ratio", "kernel size bound |K(x,y)| <= C|x-y|^-d", Check::at_most, 1.0 + 1e-9, sz);
      rec("cz_holder_ratio", "kernel Holder smoothness of order alpha", Check::at_most, 1.0 + 1e-9, ho);
      rec("cz_antisymmetry_defect", "kernel antisymmetry K(x,y) = -K(y,x)", Check::info, 0.0,
          cz.max_antisymmetry_defect);
      double adj = 0.0;
      const auto in = detail::sample_inputs<D>(n, 8, cfg.seed + 11, false);
      for (std::size_t i = 0; i + 1 < in.size(); i += 2) {
        const auto tf = op.apply(in[i]);
        const double a = inner(tf, in[i + 1]), b = inner(in[i], op_adj.apply(in[i + 1]));
        const double scale = tf.lp_norm(2.0) * in[i + 1].lp_norm(2.0);
        if (scale > 0.0) adj = std::max(adj, std::abs(a - b) / scale);
      }
      rec("adjoint_identity_defect", "adjoint identity <Tf,g> = <f,T*g>", Check::at_most, 1e-10, adj);
    }

    // systems -------------------------------------------------------------
    enter("systems", {"config.system", "config.seed"}, {"b1 (for T)", "b2 (for T*)"});
    const bool rough = cfg.system == "rough";
    // Both depths carry the functions of the configured depth.
    const auto sys1 = rough ? make_rough_system<D>(n, ex.p, cfg.roughness, cfg.seed, cfg.depth)
                            : make_indicator_system<D>(n, ex.p, ex.q);
    const auto sys2 = rough ? make_rough_system<D>(n, ex.p, cfg.roughness, cfg.seed + 1, cfg.depth)
                            : make_indicator_system<D>(n, ex.p, ex.q);
    ValidateOptions vo;
    vo.buffered = false;
    vo.p = ex.p;
    vo.u = ex.q;
    const auto v1 = validate(sys1, op, vo);
    const auto v2 = validate(sys2, op_adj, vo);
    rec("test_function_sup", "rough (p,q) system with unbounded test functions", rough ? Check::at_least : Check::info,
        rough ? 8.0 : 0.0, std::max(v1.worst_sup, v2.worst_sup));
    rec("nondegeneracy", "accretive system nondegeneracy |<b_Q>_Q|", Check::at_least, 1.0 - 1e-9,
        std::min(v1.worst_nondeg, v2.worst_nondeg));
    rec("size", "accretive system size (avg |b_Q|^p)^(1/p)", Check::info, 0.0, std::max(v1.worst_size, v2.worst_size));
    rec("testing", "accretive system testing (avg |T b_Q|^q)^(1/q)", Check::info, 0.0,
        std::max(v1.worst_testing, v2.worst_testing));

    const auto root = root_cube<D>();
    const auto b_root = sys1.function(root);

    // preparatory ---------------------------------------------------------
    if (cfg.wants("preparatory")) {
      enter("preparatory", {"T", "b1", "b2"}, {"Cotlar constant", "Hardy constant", "off-diagonal certificates"});
      auto in = detail::sample_inputs<D>(n, 6, cfg.seed + 21, true);
      in.push_back(b_root);
      double cot = 0.0;
      for (const auto& f : in) cot = std::max(cot, cotlar_check(op, f, ex.q, ex.v, v2.worst_nondeg).ratio);
      rec("cotlar", "Cotlar-type domination of the maximal truncation", Check::stability, 0.0, cot);
      double hardy = 0.0;
      const CubeTree<D> tree(n);
      for (std::size_t id = tree.level_begin(2); id < tree.level_end(2); ++id) {
        const auto q = tree.cube(id);
        hardy = std::max(hardy, hardy_check(in[0] * GridFunction<D>::indicator(n, q), q, ex.u).ratio);
      }
      rec("hardy", "Hardy inequality on the collar 3Q minus Q", Check::stability, 0.0, hardy);
      for (double lambda : st.lambdas) {
        const auto r = offdiag_verify(b_root, op, root, lambda, ex.p, ex.q);
        const std::string tag = std::to_string(static_cast<long long>(std::llround(lambda)));
        const double cheb = r.chebyshev_constant > 0.0 ? r.violator_fraction * lambda / r.chebyshev_constant : 0.0;
        rec("offdiag_chebyshev_lambda_" + tag, "Chebyshev bound on off-diagonal violators", Check::at_most,
            1.0 + 1e-12, cheb);
        rec("offdiag_average_lambda_" + tag, "off-diagonal maximal truncation average", Check::info, 0.0,
            r.worst_average);
      }
    }

    // decompose -----------------------------------------------------------
    const ForestParams fp{ex.p, st.delta, st.C, st.eps, st.c_sigma, st.eta, st.use_offdiag};
    if (cfg.wants("decompose")) {
      enter("decompose", {"b1"}, {"good part", "bad cubes", "error envelope"});
      const auto dec = cz_decompose(b_root, root, ex.p, fp.threshold(), kernel.alpha);
      auto rest = b_root - dec.good;
      for (const auto& q : dec.bad) {
        const double m = b_root.average(q);
        const auto box = q.cells(n);
        for (std::size_t i = 0; i < box.size(); ++i) {
          const auto j = linear_cell<D>(box.cell(i), n);
          rest[j] -= b_root[j] - m;
        }
      }
      rec("reconstruction_defect", "Calderon-Zygmund decomposition b = good + sum of bad parts", Check::at_most, 1e-10,
          rest.max_abs() / std::max(b_root.max_abs(), 1e-300));
      rec("bad_measure", "bad cubes cover at most delta of the top cube", Check::at_most, 1.0 + 1e-12,
          total_volume(dec.bad) / (st.delta * root.volume()));
      rec("good_sup", "good part bounded by (C/delta)^(1/p) 2^(d/p)", Check::at_most, 1.0 + 1e-12,
          dec.good.max_abs() / (std::pow(fp.threshold(), 1.0 / ex.p) * std::pow(2.0, D / ex.p)));
      rec("error_envelope", "error envelope of the bad parts in L^u", Check::stability, 0.0,
          error_envelope_norm(dec, ex.u).ratio);
    }

    if (!need_forests) return run;

    // stopping ------------------------------------------------------------
    enter("stopping", {"b1", "b2", "T", "T*"}, {"forest for T", "forest for T*", "Phi"});
    const auto forest1 = iterate_forest(sys1, op, fp, root);
    const auto forest2 = iterate_forest(sys2, op_adj, fp, root);
    const std::vector<const StoppingForest<D>*> forests{&forest1, &forest2};
    const auto phi = forest_profile<D>(forests, n, cfg.m);
    for (const auto& [f, tag] : {std::pair{&forest1, "T"}, std::pair{&forest2, "T*"}}) {
      const auto c = certify_forest(*f);
      const std::string s = std::string("_") + tag;
      rec("tb_decay" + s, "stopping generations decay like (1-tau)^k", Check::at_most, 1.0 + 1e-12, c.tb_decay);
      rec("bad_per_generation" + s, "b-stopping cubes per generation at most delta", Check::at_most, 1.0 + 1e-12,
          c.bad_per_generation);
      rec("bad_total" + s, "total b-stopping measure at most delta/tau", Check::at_most, 1.0 + 1e-12, c.bad_total);
      rec("bad_first" + s, "first b-stopping generation at most delta", Check::at_most, 1.0 + 1e-12, c.bad_first);
      double env = 0.0;
      for (const auto& r : f->records) env = std::max(env, r.envelope_ratio);
      rec("error_envelope" + s, "error envelope of the bad parts in L^u", Check::stability, 0.0, env);
      rec("tau_certified" + s, "certified sparseness parameter tau", Check::info, 0.0, f->tau);
      rec("tau_measured" + s, "measured sparseness of the stopping family", Check::info, 0.0, f->tau_measured);
      rec("generations" + s, "number of stopping generations", Check::info, 0.0, static_cast<double>(f->tb.size()));
      rec("depth_truncated" + s, "stopping reached the finest level", Check::info, 0.0, f->depth_truncated ? 1.0 : 0.0);
    }
    const auto pc = certify_profile(phi, forests, root);
    rec("profile_measure", "|{Phi>0}| at most 3^d delta/tau per merged system", Check::at_most, 1.0 + 1e-12,
        pc.positive_fraction / pc.bound);
    rec("profile_union_bound", "|{Phi>0}| at most 3^d times the bad measure", Check::at_most, 1.0 + 1e-12,
        pc.union_bound > 0.0 ? pc.positive_fraction / pc.union_bound : 0.0);
    rec("profile_dominates", "Phi dominates the distance to the complement of 3Q", Check::at_least, 1.0,
        pc.dominates ? 1.0 : 0.0);
    rec("profile_positive_fraction", "|{Phi>0}|/|Q0|", Check::info, 0.0, pc.positive_fraction);
    if (emit && st.use_offdiag && kernel.antisymmetric) {
      auto off = fp;
      off.use_offdiag = false;
      const auto g1 = iterate_forest(sys1, op, off, root);
      const auto g2 = iterate_forest(sys2, op_adj, off, root);
      const auto phi_off = forest_profile<D>({&g1, &g2}, n, cfg.m);
      rec("profile_positive_fraction_without_offdiag", "|{Phi>0}|/|Q0| without the off-diagonal stopping condition",
          Check::info, 0.0, phi_off.positive_measure(padded_box<D>(n)) / root.volume());
    }
    if (emit) run.phi.assign(phi.values().values().begin(), phi.values().values().end());

    // suppress ------------------------------------------------------------
    const bool trivial = phi.cubes().empty();
    enter("suppress", {"Phi", "K", "forest for T", "forest for T*"}, {"T_Phi", "good systems"});
    if (emit) run.provenance.back().shortcut = trivial;
    // Φ ≡ 0: T_Φ = T and the good parts are the original functions.
    const DiscreteOperator<D> op_phi = trivial ? op : DiscreteOperator<D>(suppress(kernel, phi), n);
    const auto op_phi_adj = trivial ? op_adj : adjoint_operator(op_phi);
    auto good1 = forest1.good_system, good2 = forest2.good_system;
    good1.mark_sparse(forest1.tau, st.eta);
    good2.mark_sparse(forest2.tau, st.eta);
    rec("phi_trivial", "no b-stopping cubes, so T_Phi = T", Check::info, 0.0, trivial ? 1.0 : 0.0);
    if (emit) {
      const auto s1 = suppressed_testfn_verify(forest1, sys1, op, op_phi, st.use_offdiag);
      const auto s2 = suppressed_testfn_verify(forest2, sys2, op_adj, op_phi_adj, st.use_offdiag);
      rec("good_sup", "good test functions bounded by (C/delta)^(1/p) 2^(d/p)", Check::at_most, 1.0 + 1e-12,
          std::max(s1.sup_ratio, s2.sup_ratio));
      rec("suppressed_nondegeneracy", "suppressed system nondegeneracy on admissible subcubes", Check::info, 0.0,
          std::min(s1.system.worst_nondeg, s2.system.worst_nondeg));
      rec("suppressed_size", "suppressed system size on admissible subcubes", Check::stability, 0.0,
          std::max(s1.system.worst_size, s2.system.worst_size));
      rec("suppressed_testing", "suppressed system testing on admissible subcubes", Check::stability, 0.0,
          std::max(s1.system.worst_testing, s2.system.worst_testing));
      if (st.use_offdiag)
        rec("suppressed_offdiag", "suppressed system special off-diagonal estimate", Check::stability, 0.0,
            std::max(s1.system.worst_offdiag, s2.system.worst_offdiag));
      rec("pointwise_domination", "|T_Phi good| dominated by T_# b + Mb + envelope", Check::stability, 0.0,
          std::max(s1.pointwise_domination, s2.pointwise_domination));
      rec("local_kernel", "suppressed kernel size near bad cubes", Check::info, 0.0,
          std::max(s1.local_kernel, s2.local_kernel));
      const auto in = detail::sample_inputs<D>(n, 6, cfg.seed + 31, true);
      double agree = 0.0, dom = 0.0;
      for (const auto& f0 : in) {
        auto f = f0;
        for (std::size_t i = 0; i < f.size(); ++i)
          if (phi(cell_center<D>(cell_coord<D>(i, n), n)) != 0.0) f[i] = 0.0;
        const auto tf = op.apply(f);
        const double scale = tf.max_abs();
        if (scale > 0.0) agree = std::max(agree, (op_phi.apply(f) - tf).max_abs() / scale);
        dom = std::max(dom, suppressed_domination_ratio(op_phi, op, f0));
      }
      rec("agreement_on_zero_set", "T_Phi f = T f when f vanishes on {Phi>0}", Check::at_most, 1e-10, agree);
      rec("suppressed_domination", "|T_Phi f| dominated by T_# f + Mf", Check::stability, 0.0, dom);
    }

    // martingale ----------------------------------------------------------
    std::optional<AdaptedSystem<D>> ad1, ad2;
    if (need_adapted) {
      ad1.emplace(good1);
      ad2.emplace(good2);
    }
    if (cfg.wants("martingale")) {
      enter("martingale", {"good systems", "T_Phi"}, {"adapted differences", "square functions", "Carleson norms"});
      const auto in = detail::sample_inputs<D>(n, 8, cfg.seed + 41, true);
      double recon = 0.0, square = 0.0;
      for (const auto* ad : {&*ad1, &*ad2})
        for (const auto& f : in) {
          const double fm = f.max_abs();
          recon = std::max(recon, (decompose(*ad, f).reconstruct(ad->tree()) - f).max_abs() / fm);
          square = std::max(square, square_identity_defect(*ad, f) / fm);
        }
      rec("reconstruction_defect", "martingale reconstruction f = E f + sum of differences", Check::at_most, 1e-10,
          recon);
      rec("square_identity_defect", "D_Q D_Q f = D_Q f - omega_Q <f>_Q", Check::at_most, 1e-10, square);
      for (double r : {1.5, 2.0, 3.0}) {
        const auto a = lp_ratio(*ad1, in, r), b = lp_ratio(*ad2, in, r);
        const std::string tag = r == 1.5 ? "1.5" : (r == 2.0 ? "2" : "3");
        rec("lp_direct_r" + tag, "square function bound for adapted differences", Check::stability, 0.0,
            std::max(a.direct, b.direct));
        rec("lp_adjoint_r" + tag, "square function bound for adjoint adapted differences", Check::stability, 0.0,
            std::max(a.adjoint, b.adjoint));
      }
      const double s = 1.5;
      const auto pr = paraproduct_carleson_norms(*ad1, *ad2, op_phi_adj, s);
      rec("paraproduct_carleson_a", "Carleson norm of the difference paraproduct coefficients", Check::stability, 0.0,
          pr.norm_a);
      rec("paraproduct_carleson_b", "Carleson norm of the omega paraproduct coefficients", Check::stability, 0.0,
          pr.norm_b);
      const auto co = paraproduct_coefficients(*ad1, *ad2, op_phi_adj);
      double emb = 0.0;
      for (const auto& g : in) emb = std::max(emb, carleson_embedding_check(co.a, g, s).ratio);
      rec("carleson_embedding", "Carleson embedding ratio for the paraproduct coefficients", Check::stability, 0.0, emb);
    }

    // bilinear ------------------------------------------------------------
    if (cfg.wants("bilinear")) {
      enter("bilinear", {"good systems", "T_Phi", "T"}, {"pairing decomposition", "coefficient kernels"});
      const auto in = detail::sample_inputs<D>(n, 8, cfg.seed + 51, true);
      double defect = 0.0, psi = 0.0;
      for (std::size_t i = 0; i + 1 < in.size(); i += 2) {
        const auto pd = decompose_pairing(op_phi, in[i], in[i + 1], *ad1, *ad2);
        defect = std::max(defect, pd.relative_defect());
        psi = std::max(psi, pd.psi_sup);
        if (i == 0) {
          const auto mstr = [](const auto& m) {
            std::string s;
            for (std::size_t k = 0; k < m.size(); ++k) s += (k ? " " : "") + std::to_string(m[k]);
            return s;
          };
          run.parts.push_back({"total", 0, "", pd.total});
          run.parts.push_back({"diagonal", 0, "", pd.diagonal});
          run.parts.push_back({"nested_paraproduct", 0, "", pd.nested_paraproduct});
          run.parts.push_back({"nested_remainder", 0, "", pd.nested_remainder});
          run.parts.push_back({"transposed_paraproduct", 0, "", pd.transposed_paraproduct});
          run.parts.push_back({"transposed_remainder", 0, "", pd.transposed_remainder});
          for (const auto& [km, v] : pd.by_km) run.parts.push_back({"disjoint", km.first, mstr(km.second), v});
          for (const auto& [km, v] : pd.transposed_by_km)
            run.parts.push_back({"transposed_disjoint", km.first, mstr(km.second), v});
        }
      }
      rec("pairing_resum_defect", "pairing decomposition re-sums to <Tf,g>", Check::at_most, 1e-8, defect);
      rec("psi_sup", "sup norm of the nested-part functions psi", Check::stability, 0.0, psi);
      const int kmax = std::min(5, n - 1);
      const auto haar = make_indicator_system<D>(n);
      const AdaptedSystem<D> adh(haar);
      const auto kh = coefficient_kernel_norms(op, adh, adh, kmax, 4);
      const double a = kernel.alpha;
      rec("haar_k_slope", "coefficient kernel decay 2^(-k alpha) for separated cubes", Check::at_least, a - 0.1,
          kh.k_slope);
      rec("haar_k_slope_upper", "coefficient kernel decay 2^(-k alpha) for separated cubes", Check::at_most, 1.1,
          kh.k_slope);
      rec("haar_m_slope", "coefficient kernel decay |m|^(-d-alpha) in the separation", Check::at_least,
          D + a - 0.2, kh.m_slope);
      rec("haar_tilde_k_slope", "decay of the nested remainder kernels", Check::info, 0.0, kh.tilde_k_slope);
      const auto kg = coefficient_kernel_norms(op_phi, *ad1, *ad2, kmax, 4);
      rec("good_k_slope", "coefficient kernel decay for the good systems", Check::info, 0.0, kg.k_slope);
      rec("good_m_slope", "coefficient kernel separation decay for the good systems", Check::info, 0.0, kg.m_slope);
    }

    // wbp -----------------------------------------------------------------
    if (cfg.wants("wbp")) {
      enter("wbp", {"good systems", "T_Phi"}, {"weak boundedness constants"});
      const auto w = wbp_check(op_phi, good1, good2, WbpMode::special_offdiag);
      // Identical systems under an antisymmetric kernel pair to zero, so the
      // ratio is rounding noise there.
      const bool cancels = kernel.antisymmetric && same_system(good1, good2);
      rec("special_offdiag_ratio", "weak boundedness from special off-diagonal estimates",
          cancels ? Check::info : Check::stability, 0.0, w.worst_ratio);
      rec("special_offdiag_identity", "weak boundedness split into testing, Hardy and off-diagonal terms",
          Check::at_most, 1e-8, w.identity_defect);
      rec("special_offdiag_chain", "each weak boundedness pairing below its three bounds", Check::at_most, 1.0 + 1e-9,
          w.chain_ratio);
      rec("hardy_constant", "Hardy inequality constant in the weak boundedness chain", Check::stability, 0.0,
          w.hardy_constant);
      if (kernel.antisymmetric) {
        const auto wa = wbp_check(op_phi, good1, good1, WbpMode::antisymmetric);
        rec("antisymmetric_cancellation", "antisymmetric cancellation <T phi, phi> = 0", Check::at_most, 1e-10,
            wa.worst_relative);
      }
    }

    // baby_tb -------------------------------------------------------------
    if (cfg.wants("baby_tb")) {
      enter("baby_tb", {"good systems", "T_Phi"}, {"baby Tb constant"});
      const auto bt = baby_tb_bound(op_phi, good1, good2, ex.s_conj(), samples, cfg.seed, ex.t);
      rec("normalized_pairing", "boundedness of T_Phi from a sparse (inf,t) system", Check::stability, 0.0,
          bt.worst_normalized_pairing);
      rec("noise_pairing", "normalized pairing on mean-zero noise", Check::info, 0.0, bt.worst_noise);
      rec("comb_pairing", "normalized pairing on lacunary combs", Check::info, 0.0, bt.worst_comb);
      rec("b_route_holder", "pairing of the top test functions within its Holder bound", Check::at_most, 1.0 + 1e-9,
          bt.b_route_holder > 0.0 ? bt.b_route_pairing / bt.b_route_holder : 0.0);
    }

    // final ---------------------------------------------------------------
    if (cfg.wants("final")) {
      enter("final", {"Phi", "b1", "b2", "T", "T*"},
            {"bounded system on all cubes", "sparse restriction", "indicator testing"});
      const auto b0 = detail::zero_set_function(phi, root, n);
      rec("top_sup", "bounded top test function |Q0|/|Q0 and {Phi=0}|", Check::info, 0.0, b0.max_abs());
      const auto box0 = root.cells(n);
      rec("top_testing", "testing of the bounded top function (avg |T b|^s)^(1/s)", Check::stability, 0.0,
          detail::lp_average<D>(op.apply_box(b0, box0, box0), ex.s));
      // A bounded function per cube from that cube's own forests.
      AccretiveSystem<D> full(n, std::numeric_limits<double>::infinity(), ex.s, "bounded");
      const CubeTree<D> tree(n);
      double testing = 0.0, testing_adj = 0.0, sup = 0.0;
      for (std::size_t id = 0; id < tree.size(); ++id) {
        const auto q = tree.cube(id);
        const auto fq1 = iterate_forest(sys1, op, fp, q);
        const auto fq2 = iterate_forest(sys2, op_adj, fp, q);
        const auto phq = forest_profile<D>({&fq1, &fq2}, n, cfg.m);
        const auto bq = detail::zero_set_function(phq, q, n);
        full.set(q, bq);
        const auto box = q.cells(n);
        testing = std::max(testing, detail::lp_average<D>(op.apply_box(bq, box, box), ex.s));
        testing_adj = std::max(testing_adj, detail::lp_average<D>(op_adj.apply_box(bq, box, box), ex.s));
        sup = std::max(sup, bq.max_abs());
      }
      rec("all_cubes_sup", "bounded test functions on every cube", Check::info, 0.0, sup);
      rec("all_cubes_testing", "testing of the bounded system for T", Check::stability, 0.0, testing);
      rec("all_cubes_testing_adjoint", "testing of the bounded system for T*", Check::stability, 0.0, testing_adj);
      const auto [family, tau] = detail::nondegeneracy_family(full, 0.5);
      rec("sparse_tau", "sparseness of the nondegeneracy stopping family", Check::at_least, 1e-12, tau);
      rec("sparse_members", "members of the nondegeneracy stopping family", Check::info, 0.0,
          static_cast<double>(family.size()));
      const auto sparse = restrict_to_sparse(full, family, tau, 0.5);
      // One bounded system serves T and T*, so for an antisymmetric kernel the
      // pairings vanish and the ratio is rounding noise.
      const auto w = wbp_check(op, sparse, sparse, WbpMode::all_cubes, &full);
      rec("all_cubes_wbp_ratio", "weak boundedness for restrictions of systems on all cubes",
          kernel.antisymmetric ? Check::info : Check::stability, 0.0, w.worst_ratio);
      rec("all_cubes_wbp_identity", "averaging identity behind weak boundedness on all cubes", Check::at_most, 1e-8,
          w.identity_defect);
      if (kernel.antisymmetric) {
        const auto wa = wbp_check(op, sparse, sparse, WbpMode::antisymmetric);
        rec("all_cubes_antisymmetric_cancellation", "antisymmetric cancellation <T phi, phi> = 0", Check::at_most,
            1e-10, wa.worst_relative);
      }
      const double sp = std::max(ex.s_conj(), 2.0) + 1.0;
      const auto bt = baby_tb_bound(op, sparse, sparse, sp, samples, cfg.seed, ex.s);
      rec("baby_tb", "boundedness of T from the sparse bounded system", Check::stability, 0.0,
          bt.worst_normalized_pairing);
      double ind = 0.0, ind_adj = 0.0;
      for (std::size_t id = 0; id < tree.size(); ++id) {
        const auto q = tree.cube(id);
        const auto one = GridFunction<D>::indicator(n, q);
        const auto box = q.cells(n);
        ind = std::max(ind, detail::lp_average<D>(op.apply_box(one, box, box), ex.r));
        ind_adj = std::max(ind_adj, detail::lp_average<D>(op_adj.apply_box(one, box, box), ex.r));
      }
      rec("indicator_testing", "indicator testing (avg |T 1_Q|^r)^(1/r)", Check::stability, 0.0, ind);
      rec("indicator_testing_adjoint", "indicator testing (avg |T* 1_Q|^r)^(1/r)", Check::stability, 0.0, ind_adj);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
  return run;
}

/// Pairs up the measurements of the two depths.
inline VerificationReport assemble_report(const RunConfig& cfg, const DepthRun& a, const DepthRun& b) {
  if (a.measurements.size() != b.measurements.size()) throw Error("the two depths produced different records");
  VerificationReport rep;
  rep.config = cfg;
  rep.depth_n = a.depth;
  rep.depth_n1 = b.depth;
  for (std::size_t i = 0; i < a.measurements.size(); ++i)
    rep.records.push_back(combine(a.measurements[i], b.measurements[i], cfg.band));
  rep.provenance = a.provenance;
  rep.parts = a.parts;
  rep.phi = a.phi;
  return rep;
}

/// Runs the configured stages at depths N and N+1 concurrently and judges
/// every constant. The config is validated before any computation.
inline VerificationReport run_pipeline(const RunConfig& cfg) {
  cfg.validate();
  const auto go = [&cfg](int n) { return cfg.dim == 1 ? run_depth<1>(cfg, n) : run_depth<2>(cfg, n); };
  auto hi = std::async(std::launch::async, go, cfg.depth + 1);
  const auto lo = go(cfg.depth);
  return assemble_report(cfg, lo, hi.get());
}

/// Writes report.json, parts.csv and phi.csv into the output directory.
inline void write_outputs(const VerificationReport& rep, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir + ": " + ec.message());
  const std::filesystem::path base(dir);
  std::ofstream out(base / "report.json");
  if (!out) throw Error("cannot write report in " + dir);
  out << report_to_json(rep).dump(2) << '\n';
  if (!rep.parts.empty()) write_parts_csv(rep.parts, (base / "parts.csv").string());
  if (!rep.phi.empty()) write_grid_csv(rep.phi, (base / "phi.csv").string());
}

}  // namespace localtb
