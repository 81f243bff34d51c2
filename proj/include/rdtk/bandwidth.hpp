#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rdtk/data.hpp"
#include "rdtk/error.hpp"
#include "rdtk/kernels.hpp"
#include "rdtk/local_poly.hpp"
#include "rdtk/mathutil.hpp"
#include "rdtk/variance.hpp"

namespace rdtk {

enum class BwSelector {
    mserd, msetwo, msesum, msecomb1, msecomb2,
    cerrd, certwo, cersum, cercomb1, cercomb2,
    manual
};

inline const char* selector_name(BwSelector s) {
    switch (s) {
        case BwSelector::mserd: return "mserd";
        case BwSelector::msetwo: return "msetwo";
        case BwSelector::msesum: return "msesum";
        case BwSelector::msecomb1: return "msecomb1";
        case BwSelector::msecomb2: return "msecomb2";
        case BwSelector::cerrd: return "cerrd";
        case BwSelector::certwo: return "certwo";
        case BwSelector::cersum: return "cersum";
        case BwSelector::cercomb1: return "cercomb1";
        case BwSelector::cercomb2: return "cercomb2";
        case BwSelector::manual: return "manual";
    }
    return "?";
}

inline BwSelector selector_from_name(const std::string& s) {
    static const std::pair<const char*, BwSelector> table[] = {
        {"mserd", BwSelector::mserd},       {"msetwo", BwSelector::msetwo},
        {"msesum", BwSelector::msesum},     {"msecomb1", BwSelector::msecomb1},
        {"msecomb2", BwSelector::msecomb2}, {"cerrd", BwSelector::cerrd},
        {"certwo", BwSelector::certwo},     {"cersum", BwSelector::cersum},
        {"cercomb1", BwSelector::cercomb1}, {"cercomb2", BwSelector::cercomb2},
        {"manual", BwSelector::manual}};
    for (const auto& [name, sel] : table)
        if (s == name) return sel;
    throw_usage("unknown bandwidth selector '" + s + "'");
}

// Estimated unknowns of the MSE expansion. var_*/bias_*/regularization are in
// the units of the closed-form bandwidth formula (scaled against the total
// sample size), so they can be fed straight back into
// mse_bandwidth_from_components.
struct PluginQuantities {
    double sigma2_left = 0.0;  // conditional outcome variance at the cutoff
    double sigma2_right = 0.0;
    double density_at_cutoff = 0.0;
    double curvature_left = 0.0; // mu^(p+1) estimates
    double curvature_right = 0.0;
    double bias_left = 0.0;
    double bias_right = 0.0;
    double var_left = 0.0;
    double var_right = 0.0;
    double regularization = 0.0; // pooled, 0 when disabled
    struct Pilots {
        double initial = 0.0; // rule-of-thumb pilot (variance window)
        double d_left = 0.0;  // windows for the curvature-of-curvature step
        double d_right = 0.0;
        double b_left = 0.0; // bias windows feeding the final step
        double b_right = 0.0;
    } pilots;
};

struct BandwidthResult {
    BwSelector selector = BwSelector::mserd;
    double h_left = 0.0;
    double h_right = 0.0;
    double b_left = 0.0;
    double b_right = 0.0;
    std::optional<double> cer_factor; // set for cer* selectors
    PluginQuantities plugin;

    double rho_left() const { return h_left / b_left; }
    double rho_right() const { return h_right / b_right; }
};

// h = ( V / (2(p+1)B^2 + R) )^(1/(2p+3)) * n^(-1/(2p+3)): the minimizer of
// the approximate MSE h^(2(p+1)) B^2 + V/(nh), with regularization R >= 0
// guarding against near-zero bias.
inline double mse_bandwidth_from_components(double v, double b, double r, int p, std::size_t n) {
    if (!(v > 0.0)) throw_numeric("mse bandwidth: variance component must be positive");
    if (r < 0.0) throw_usage("mse bandwidth: regularization must be >= 0");
    const double den = 2.0 * (p + 1) * b * b + r;
    if (!(den > 0.0)) throw_numeric("mse bandwidth: bias degenerate; enable regularization");
    const double ex = 1.0 / (2.0 * p + 3.0);
    return std::pow(v / den, ex) * std::pow(static_cast<double>(n), -ex);
}

namespace detail {

// Generalized form for the nu-th coefficient of an order-o fit: minimizes
// h^(2(o+1-nu)) B^2 + V/(n h^(2nu+1)). b2r carries B^2 plus any
// regularization in the same units.
inline double mse_bandwidth_general(double v, double b2r, int nu, int o, double n) {
    if (!(v > 0.0) || !(b2r > 0.0) || !(n > 0.0))
        return std::numeric_limits<double>::quiet_NaN();
    const double num = (2.0 * nu + 1.0) * v;
    const double den = 2.0 * (o + 1 - nu) * b2r * n;
    return std::pow(num / den, 1.0 / (2.0 * o + 3.0));
}

inline double rule_of_thumb_pilot(std::span<const double> x) {
    std::vector<double> xs(x.begin(), x.end());
    const double sd = sample_sd(xs);
    std::sort(xs.begin(), xs.end());
    const double iqr = quantile_sorted(xs, 0.75) - quantile_sorted(xs, 0.25);
    double spread = std::min(sd, iqr / 1.349);
    if (!(spread > 0.0)) spread = sd > 0.0 ? sd : 1.0;
    return 2.576 * spread * std::pow(static_cast<double>(x.size()), -0.2);
}

struct BwFrame {
    std::span<const double> x;
    std::span<const double> y;
    double c = 0.0;
    Kernel kernel = Kernel::triangular;
    VceSpec vce;
    std::span<const std::int64_t> clusters;
    std::vector<double> nn_sig;    // per-row, populated when vce is nn
    std::vector<double> dist_left; // sorted |x - c| per side
    std::vector<double> dist_right;
    bool prepared = false;

    std::size_t n() const { return x.size(); }

    void prepare() {
        dist_left.clear();
        dist_right.clear();
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (x[i] >= c) dist_right.push_back(x[i] - c);
            else dist_left.push_back(c - x[i]);
        }
        std::sort(dist_left.begin(), dist_left.end());
        std::sort(dist_right.begin(), dist_right.end());
        if (vce.kind == VceKind::nn) nn_sig = nn_sigma2_all(x, y, c, vce.nn_matches);
        prepared = true;
    }

    const std::vector<double>& dist(Side s) const {
        return s == Side::left ? dist_left : dist_right;
    }

    // Smallest bandwidth giving `count` observations with positive weight.
    double min_h_for(Side s, std::size_t count) const {
        const auto& d = dist(s);
        if (d.size() < count)
            throw_numeric("bandwidth: insufficient observations on the " +
                          std::string(side_name(s)) + " side");
        const double base = std::max(d[count - 1], d.back() * 1e-9);
        return base * (1.0 + 1e-6) + 1e-300;
    }

    double range(Side s) const {
        const auto& d = dist(s);
        return d.empty() ? 0.0 : d.back() * (1.0 + 1e-6);
    }

    SideFit fit(Side s, int order, double h) const {
        return wls_fit(x, y, c, s, order, h, kernel);
    }

    double coeff_variance(const SideFit& f, int nu) const {
        const RowFunctional fun = RowFunctional::from_fit(f, nu);
        if (vce.kind == VceKind::cluster) {
            RowValues resid(n());
            resid.scatter(f, f.residuals);
            return cluster_variance(fun, resid, clusters, f.order + 1);
        }
        RowValues sig(n());
        if (vce.kind == VceKind::nn) sig.fill_all(nn_sig);
        else sig.scatter(f, hc_sigma2(f, vce.kind));
        return hetero_variance(fun, sig);
    }
};

struct StageSide {
    double var_pre = 0.0;   // finite-sample variance of the target coefficient at h_v
    double bias_pre = 0.0;  // design factor times next-order coefficient
    double reg_pre = 0.0;   // 3 * design factor^2 * var(next-order coefficient)
    double coef_next = 0.0; // next-order polynomial coefficient (original units)
    double h_v = 0.0;
    double h_b = 0.0;
};

// One plug-in stage on one side: the ingredients for an MSE-optimal bandwidth
// targeting the nu-th coefficient of an order-o fit. Variance and the design
// factor are measured at pilot h_v, the next-order coefficient at pilot h_b.
inline StageSide stage_side(const BwFrame& fr, Side s, int nu, int o, double h_v, double h_b) {
    StageSide st;
    st.h_v = std::max(h_v, fr.min_h_for(s, static_cast<std::size_t>(o) + 2));
    st.h_b = std::max(h_b, fr.min_h_for(s, static_cast<std::size_t>(o) + 3));
    const SideFit fit_v = fr.fit(s, o, st.h_v);
    st.var_pre = fr.coeff_variance(fit_v, nu);
    const double c_bias = fit_v.bias_ingredient(nu);
    const SideFit fit_b = fr.fit(s, o + 1, st.h_b);
    st.coef_next = fit_b.coefficients[static_cast<std::size_t>(o) + 1];
    const double var_next = fr.coeff_variance(fit_b, o + 1);
    st.bias_pre = c_bias * st.coef_next;
    st.reg_pre = 3.0 * c_bias * c_bias * var_next;
    return st;
}

// Stage ingredients converted to pilot-free asymptotic units (the finite
// sample quantities follow var ~ V/(n h^(2nu+1)) and bias ~ B h^(o+1-nu) at
// the pilot, so dividing the rates back out makes sides comparable even when
// their pilots were widened differently). reg is reported in squared-bias
// units.
struct StageAsym {
    double v = 0.0;
    double b = 0.0;
    double reg = 0.0;
};

inline StageAsym stage_asym(const StageSide& st, int nu, int o, double n, double scale) {
    StageAsym a;
    a.v = st.var_pre * n * std::pow(st.h_v, 2 * nu + 1);
    a.b = st.bias_pre / std::pow(st.h_v, o + 1 - nu);
    a.reg = scale * st.reg_pre / std::pow(st.h_v, 2 * (o + 1 - nu));
    return a;
}

inline double cer_scale(int p, double n) {
    return std::pow(n, -static_cast<double>(p) / ((3.0 + p) * (2.0 * p + 3.0)));
}

// Full plug-in pipeline shared by all data-driven selectors. The recipe,
// pinned here in one place:
//   0. initial pilot: 2.576 * min(sd, iqr/1.349) * n^(-1/5), widened where
//      needed for minimal coverage;
//   1. per side, a window d for the order-(q+1) coefficient, with the whole
//      side support as pilot (a global polynomial pre-fit);
//   2. bias windows b for the order-(p+1) coefficient from order-q fits:
//      variance measured at the initial pilot, curvature at d;
//   3. main bandwidths h for the level from order-p fits, curvature at b.
// When enabled, regularization adds 3x the variance of the curvature
// estimate to the squared-bias denominator in steps 2 and 3.
struct PipelineResult {
    StageSide h_stage_left, h_stage_right;
    double pilot_initial = 0.0;
    double d_left = 0.0, d_right = 0.0;
    double b_rd = 0.0, b_sum = 0.0, b_two_left = 0.0, b_two_right = 0.0;
    double h_rd = 0.0, h_sum = 0.0, h_two_left = 0.0, h_two_right = 0.0;
};

inline PipelineResult run_pipeline(BwFrame& fr, int p, int q, double scale_regul) {
    if (!fr.prepared) fr.prepare();
    const double n = static_cast<double>(fr.n());
    const std::size_t min_side = static_cast<std::size_t>(std::max(p, q + 1)) + 3;
    if (fr.dist_left.size() < min_side || fr.dist_right.size() < min_side)
        throw_numeric("bandwidth selection: needs at least " + std::to_string(min_side) +
                      " observations on each side");

    PipelineResult out;
    out.pilot_initial = rule_of_thumb_pilot(fr.x);

    auto run_d = [&](Side s) {
        const double range = fr.range(s);
        const StageSide st = stage_side(fr, s, q + 1, q + 1, range, range);
        const StageAsym a = stage_asym(st, q + 1, q + 1, n, 0.0);
        double d = mse_bandwidth_general(a.v, a.b * a.b, q + 1, q + 1, n);
        if (!std::isfinite(d) || !(d > 0.0)) d = range;
        return d;
    };
    out.d_left = run_d(Side::left);
    out.d_right = run_d(Side::right);

    const StageSide bl = stage_side(fr, Side::left, p + 1, q, out.pilot_initial, out.d_left);
    const StageSide br = stage_side(fr, Side::right, p + 1, q, out.pilot_initial, out.d_right);
    const StageAsym bla = stage_asym(bl, p + 1, q, n, scale_regul);
    const StageAsym bra = stage_asym(br, p + 1, q, n, scale_regul);
    auto sq = [](double z) { return z * z; };
    out.b_rd = mse_bandwidth_general(bla.v + bra.v, sq(bra.b - bla.b) + bla.reg + bra.reg,
                                     p + 1, q, n);
    out.b_sum = mse_bandwidth_general(bla.v + bra.v, sq(bra.b + bla.b) + bla.reg + bra.reg,
                                      p + 1, q, n);
    out.b_two_left = mse_bandwidth_general(bla.v, sq(bla.b) + bla.reg, p + 1, q, n);
    out.b_two_right = mse_bandwidth_general(bra.v, sq(bra.b) + bra.reg, p + 1, q, n);
    for (double* b : {&out.b_rd, &out.b_sum, &out.b_two_left, &out.b_two_right})
        if (!std::isfinite(*b) || !(*b > 0.0))
            throw_numeric("bandwidth selection: bias degenerate; enable regularization");

    out.h_stage_left = stage_side(fr, Side::left, 0, p, out.pilot_initial, out.b_rd);
    out.h_stage_right = stage_side(fr, Side::right, 0, p, out.pilot_initial, out.b_rd);
    const StageAsym hla = stage_asym(out.h_stage_left, 0, p, n, scale_regul);
    const StageAsym hra = stage_asym(out.h_stage_right, 0, p, n, scale_regul);

    const double two_p1 = 2.0 * (p + 1);
    const std::size_t n_sz = fr.n();
    out.h_rd = mse_bandwidth_from_components(hla.v + hra.v, hra.b - hla.b,
                                             two_p1 * (hla.reg + hra.reg), p, n_sz);
    out.h_sum = mse_bandwidth_from_components(hla.v + hra.v, hra.b + hla.b,
                                              two_p1 * (hla.reg + hra.reg), p, n_sz);
    out.h_two_left = mse_bandwidth_from_components(hla.v, hla.b, two_p1 * hla.reg, p, n_sz);
    out.h_two_right = mse_bandwidth_from_components(hra.v, hra.b, two_p1 * hra.reg, p, n_sz);
    return out;
}

inline PluginQuantities make_plugin(const BwFrame& fr, const PipelineResult& pr, int p,
                                    double scale_regul) {
    PluginQuantities pq;
    const double n = static_cast<double>(fr.n());
    const StageSide& hl = pr.h_stage_left;
    const StageSide& hr = pr.h_stage_right;
    const StageAsym al = stage_asym(hl, 0, p, n, scale_regul);
    const StageAsym ar = stage_asym(hr, 0, p, n, scale_regul);
    pq.var_left = al.v;
    pq.var_right = ar.v;
    pq.bias_left = al.b;
    pq.bias_right = ar.b;
    pq.regularization = 2.0 * (p + 1) * (al.reg + ar.reg);
    pq.curvature_left = factorial(p + 1) * hl.coef_next;
    pq.curvature_right = factorial(p + 1) * hr.coef_next;
    pq.pilots.initial = pr.pilot_initial;
    pq.pilots.d_left = pr.d_left;
    pq.pilots.d_right = pr.d_right;
    pq.pilots.b_left = hl.h_b;
    pq.pilots.b_right = hr.h_b;

    // Descriptive quantities at the cutoff within the initial pilot window: a
    // uniform pilot density and kernel-weighted nearest-neighbor variances.
    const double h0 = pr.pilot_initial;
    std::size_t c_left = 0, c_right = 0;
    double sw_l = 0.0, swsig_l = 0.0, sw_r = 0.0, swsig_r = 0.0;
    const std::vector<double>& nn =
        !fr.nn_sig.empty() ? fr.nn_sig : nn_sigma2_all(fr.x, fr.y, fr.c, 3);
    for (std::size_t i = 0; i < fr.n(); ++i) {
        const double d = std::abs(fr.x[i] - fr.c);
        if (d > h0) continue;
        const double w = kernel_weight(fr.kernel, d / h0);
        if (fr.x[i] >= fr.c) {
            ++c_right;
            sw_r += w;
            swsig_r += w * nn[i];
        } else {
            ++c_left;
            sw_l += w;
            swsig_l += w * nn[i];
        }
    }
    if (c_left + c_right == 0) throw_numeric("plugin: degenerate pilot window (no data)");
    pq.density_at_cutoff = static_cast<double>(c_left + c_right) / (2.0 * n * h0);
    if (!(pq.density_at_cutoff > 0.0)) throw_numeric("plugin: estimated density at cutoff is zero");
    pq.sigma2_left = sw_l > 0.0 ? swsig_l / sw_l : 0.0;
    pq.sigma2_right = sw_r > 0.0 ? swsig_r / sw_r : 0.0;
    return pq;
}

inline BandwidthResult select_on_frame(BwFrame& fr, int p, int q, BwSelector sel,
                                       double scale_regul) {
    if (sel == BwSelector::manual) throw_usage("select: manual selector needs explicit bandwidths");
    PipelineResult pr = run_pipeline(fr, p, q, scale_regul);

    BandwidthResult r;
    r.selector = sel;
    r.plugin = make_plugin(fr, pr, p, scale_regul);

    const double n = static_cast<double>(fr.n());
    const double n_l = static_cast<double>(fr.dist_left.size());
    const double n_r = static_cast<double>(fr.dist_right.size());

    auto assign = [&](double h_l, double h_r, double b_l, double b_r) {
        r.h_left = h_l;
        r.h_right = h_r;
        r.b_left = b_l;
        r.b_right = b_r;
    };
    switch (sel) {
        case BwSelector::mserd:
        case BwSelector::cerrd:
            assign(pr.h_rd, pr.h_rd, pr.b_rd, pr.b_rd);
            break;
        case BwSelector::msetwo:
        case BwSelector::certwo:
            assign(pr.h_two_left, pr.h_two_right, pr.b_two_left, pr.b_two_right);
            break;
        case BwSelector::msesum:
        case BwSelector::cersum:
            assign(pr.h_sum, pr.h_sum, pr.b_sum, pr.b_sum);
            break;
        case BwSelector::msecomb1:
        case BwSelector::cercomb1:
            assign(std::min(pr.h_rd, pr.h_sum), std::min(pr.h_rd, pr.h_sum),
                   std::min(pr.b_rd, pr.b_sum), std::min(pr.b_rd, pr.b_sum));
            break;
        case BwSelector::msecomb2:
        case BwSelector::cercomb2:
            assign(median_of_three(pr.h_two_left, pr.h_rd, pr.h_sum),
                   median_of_three(pr.h_two_right, pr.h_rd, pr.h_sum),
                   median_of_three(pr.b_two_left, pr.b_rd, pr.b_sum),
                   median_of_three(pr.b_two_right, pr.b_rd, pr.b_sum));
            break;
        case BwSelector::manual:
            break;
    }

    const bool cer = sel == BwSelector::cerrd || sel == BwSelector::certwo ||
                     sel == BwSelector::cersum || sel == BwSelector::cercomb1 ||
                     sel == BwSelector::cercomb2;
    if (cer) {
        if (sel == BwSelector::certwo) {
            r.h_left *= cer_scale(p, n_l);
            r.h_right *= cer_scale(p, n_r);
            r.cer_factor = cer_scale(p, n);
        } else {
            const double f = cer_scale(p, n);
            r.h_left *= f;
            r.h_right *= f;
            r.cer_factor = f;
        }
    }
    return r;
}

} // namespace detail

// Estimates the plug-in unknowns of the MSE expansion on the raw data.
inline PluginQuantities estimate_plugin(const RdData& data, int p, Kernel kernel,
                                        bool use_regularization,
                                        const VceSpec& vce = VceSpec{}) {
    detail::BwFrame fr;
    fr.x = data.scores;
    fr.y = data.outcomes;
    fr.c = data.cutoff;
    fr.kernel = kernel;
    fr.vce = vce;
    if (vce.kind == VceKind::cluster) {
        if (!data.clusters) throw_usage("plugin: cluster vce requires cluster labels");
        fr.clusters = *data.clusters;
    }
    const double scale = use_regularization ? 1.0 : 0.0;
    detail::PipelineResult pr = detail::run_pipeline(fr, p, p + 1, scale);
    return detail::make_plugin(fr, pr, p, scale);
}

// Runs the full plug-in pipeline and applies the requested selector.
inline BandwidthResult select_bandwidths(const RdData& data, int p, int q, Kernel kernel,
                                         BwSelector sel, double scale_regul,
                                         const VceSpec& vce = VceSpec{}) {
    detail::BwFrame fr;
    fr.x = data.scores;
    fr.y = data.outcomes;
    fr.c = data.cutoff;
    fr.kernel = kernel;
    fr.vce = vce;
    if (vce.kind == VceKind::cluster) {
        if (!data.clusters) throw_usage("select: cluster vce requires cluster labels");
        fr.clusters = *data.clusters;
    }
    return detail::select_on_frame(fr, p, q, sel, scale_regul);
}

} // namespace rdtk
