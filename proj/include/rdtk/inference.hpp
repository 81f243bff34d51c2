#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "rdtk/bandwidth.hpp"
#include "rdtk/data.hpp"
#include "rdtk/error.hpp"
#include "rdtk/kernels.hpp"
#include "rdtk/local_poly.hpp"
#include "rdtk/mathutil.hpp"
#include "rdtk/variance.hpp"

namespace rdtk {

struct BandwidthSpec {
    BwSelector selector = BwSelector::mserd;
    std::optional<double> h_left, h_right; // manual main bandwidths
    std::optional<double> b_left, b_right; // manual bias bandwidths
    std::optional<double> rho;             // when set, forces b = h / rho
};

struct EstimationConfig {
    int p = 1;
    int q = 2; // order for the bias estimation step, must be >= p+1
    Kernel kernel = Kernel::triangular;
    VceSpec vce;
    BandwidthSpec bandwidth;
    double scale_regul = 1.0; // 0 disables the regularization term
    double level = 95.0;      // confidence level in percent
    bool with_covariates = false;
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double x) const { return lo <= x && x <= hi; }
    double mid() const { return 0.5 * (lo + hi); }
    double length() const { return hi - lo; }
};

struct RdEstimate {
    double tau_hat = 0.0;  // mu_right - mu_left, exactly
    double bias_hat = 0.0; // estimated smoothing bias of tau_hat
    double tau_bc = 0.0;   // tau_hat - bias_hat
    double se_conventional = 0.0;
    double se_robust = 0.0;
    Interval ci_conventional;  // centered at tau_hat
    Interval ci_biascorrected; // centered at tau_bc, conventional scale
    Interval ci_robust;        // centered at tau_bc, robust scale
    double p_conventional = 1.0;
    double p_robust = 1.0;
    double mu_left = 0.0; // with covariates these are intercepts of the adjusted outcome
    double mu_right = 0.0;
    double bias_left = 0.0;
    double bias_right = 0.0;
    BandwidthResult bandwidths;
    std::size_t n_left = 0, n_right = 0;
    std::size_t effective_n_left = 0, effective_n_right = 0;
    std::string vce_descriptor;
    double level = 95.0;
    std::vector<std::pair<std::string, double>> covariate_gamma; // kept columns only
    std::vector<std::string> warnings;
};

inline Interval robust_ci(double tau_hat, double bias_hat, double se_robust, double level) {
    if (se_robust < 0.0) throw_usage("robust_ci: standard error must be >= 0");
    const double z = normal_quantile(1.0 - (1.0 - level / 100.0) / 2.0);
    const double centre = tau_hat - bias_hat;
    return Interval{centre - z * se_robust, centre + z * se_robust};
}

// Per-side components of the smoothing-bias estimate.
struct BiasEstimate {
    double total = 0.0; // right minus left
    double left = 0.0;
    double right = 0.0;
    double design_left = 0.0; // design factors multiplying the curvature coefficients
    double design_right = 0.0;
    double curv_left = 0.0; // order-(p+1) coefficients from the order-q fits
    double curv_right = 0.0;
};

namespace detail {

inline BiasEstimate bias_from_fits(const SideFit& h_left, const SideFit& h_right,
                                   const SideFit& b_left, const SideFit& b_right) {
    BiasEstimate be;
    be.design_left = h_left.bias_ingredient(0);
    be.design_right = h_right.bias_ingredient(0);
    be.curv_left = b_left.coefficients[static_cast<std::size_t>(h_left.order) + 1];
    be.curv_right = b_right.coefficients[static_cast<std::size_t>(h_right.order) + 1];
    be.left = be.design_left * be.curv_left;
    be.right = be.design_right * be.curv_right;
    be.total = be.right - be.left;
    return be;
}

// Shared evaluation context: raw arrays plus the sigma/residual sources each
// variance kind needs.
struct InferenceFrame {
    std::span<const double> x;
    std::span<const double> y;
    double c = 0.0;
    Kernel kernel = Kernel::triangular;
    VceSpec vce;
    std::span<const std::int64_t> clusters;
    std::vector<double> nn_sig;

    void prepare() {
        if (vce.kind == VceKind::nn) nn_sig = nn_sigma2_all(x, y, c, vce.nn_matches);
    }

    double functional_variance(const RowFunctional& fun, const SideFit& primary,
                               const SideFit* secondary) const {
        const std::size_t n = x.size();
        if (vce.kind == VceKind::cluster) {
            RowValues resid(n);
            resid.scatter(primary, primary.residuals);
            if (secondary) resid.scatter(*secondary, secondary->residuals);
            return cluster_variance(fun, resid, clusters, primary.order + 1);
        }
        RowValues sig(n);
        if (vce.kind == VceKind::nn) {
            sig.fill_all(nn_sig);
        } else {
            sig.scatter(primary, hc_sigma2(primary, vce.kind));
            if (secondary) sig.scatter(*secondary, hc_sigma2(*secondary, vce.kind));
        }
        return hetero_variance(fun, sig);
    }
};

// Variance of the intercept difference across two independent side fits.
inline double conventional_variance_impl(const InferenceFrame& fr, const SideFit& left,
                                         const SideFit& right) {
    const RowFunctional fl = RowFunctional::from_fit(left, 0);
    const RowFunctional fr_ = RowFunctional::from_fit(right, 0);
    return fr.functional_variance(fl, left, nullptr) + fr.functional_variance(fr_, right, nullptr);
}

// Variance of the bias-corrected difference: the influence of each side is
// the level influence of the main fit minus the design factor times the
// curvature influence of the bias fit. Residual-based estimators draw on the
// bias fit where the windows overlap.
inline double robust_variance_impl(const InferenceFrame& fr, const SideFit& h_left,
                                   const SideFit& h_right, const SideFit& b_left,
                                   const SideFit& b_right, const BiasEstimate& be) {
    RowFunctional fl = RowFunctional::from_fit(h_left, 0);
    fl.add_fit(b_left, h_left.order + 1, -be.design_left);
    RowFunctional fr_ = RowFunctional::from_fit(h_right, 0);
    fr_.add_fit(b_right, h_right.order + 1, -be.design_right);
    return fr.functional_variance(fl, h_left, &b_left) +
           fr.functional_variance(fr_, h_right, &b_right);
}

inline BandwidthResult resolve_bandwidths(BwFrame& frame, const EstimationConfig& cfg) {
    const BandwidthSpec& spec = cfg.bandwidth;
    if (spec.selector == BwSelector::manual || spec.h_left || spec.h_right) {
        if (!spec.h_left && !spec.h_right)
            throw_usage("manual bandwidth selector requires h");
        BandwidthResult r;
        r.selector = BwSelector::manual;
        r.h_left = spec.h_left ? *spec.h_left : *spec.h_right;
        r.h_right = spec.h_right ? *spec.h_right : *spec.h_left;
        if (!(r.h_left > 0.0) || !(r.h_right > 0.0))
            throw_usage("manual bandwidths must be positive");
        if (spec.b_left || spec.b_right) {
            r.b_left = spec.b_left ? *spec.b_left : *spec.b_right;
            r.b_right = spec.b_right ? *spec.b_right : *spec.b_left;
        } else if (spec.rho) {
            r.b_left = r.h_left / *spec.rho;
            r.b_right = r.h_right / *spec.rho;
        } else {
            r.b_left = r.h_left;
            r.b_right = r.h_right;
        }
        if (!(r.b_left > 0.0) || !(r.b_right > 0.0))
            throw_usage("manual bias bandwidths must be positive");
        return r;
    }
    BandwidthResult r = select_on_frame(frame, cfg.p, cfg.q, spec.selector, cfg.scale_regul);
    if (spec.rho) {
        r.b_left = r.h_left / *spec.rho;
        r.b_right = r.h_right / *spec.rho;
    }
    return r;
}

inline std::string vce_descriptor(const EstimationConfig& cfg, const RdData& data) {
    std::string d = vce_name(cfg.vce.kind);
    if (cfg.vce.kind == VceKind::nn) d += "(" + std::to_string(cfg.vce.nn_matches) + ")";
    if (cfg.vce.kind == VceKind::cluster && data.clusters) {
        std::set<std::int64_t> ids(data.clusters->begin(), data.clusters->end());
        d += "(" + std::to_string(ids.size()) + " clusters)";
    }
    return d;
}

inline RdEstimate analyze_on_frame(const RdData& data, std::span<const double> y_adj,
                                   const EstimationConfig& cfg, BandwidthResult bw,
                                   std::vector<std::pair<std::string, double>> gamma,
                                   std::vector<std::string> warnings) {
    InferenceFrame fr;
    fr.x = data.scores;
    fr.y = y_adj;
    fr.c = data.cutoff;
    fr.kernel = cfg.kernel;
    fr.vce = cfg.vce;
    if (cfg.vce.kind == VceKind::cluster) fr.clusters = *data.clusters;
    fr.prepare();

    const SideFit h_left = wls_fit(fr.x, fr.y, fr.c, Side::left, cfg.p, bw.h_left, cfg.kernel);
    const SideFit h_right = wls_fit(fr.x, fr.y, fr.c, Side::right, cfg.p, bw.h_right, cfg.kernel);
    const SideFit b_left = wls_fit(fr.x, fr.y, fr.c, Side::left, cfg.q, bw.b_left, cfg.kernel);
    const SideFit b_right = wls_fit(fr.x, fr.y, fr.c, Side::right, cfg.q, bw.b_right, cfg.kernel);

    const BiasEstimate be = bias_from_fits(h_left, h_right, b_left, b_right);

    RdEstimate est;
    est.mu_left = h_left.intercept();
    est.mu_right = h_right.intercept();
    est.tau_hat = est.mu_right - est.mu_left;
    est.bias_hat = be.total;
    est.bias_left = be.left;
    est.bias_right = be.right;
    est.tau_bc = est.tau_hat - est.bias_hat;
    est.se_conventional = std::sqrt(std::max(0.0, conventional_variance_impl(fr, h_left, h_right)));
    est.se_robust = std::sqrt(
        std::max(0.0, robust_variance_impl(fr, h_left, h_right, b_left, b_right, be)));

    const double z = normal_quantile(1.0 - (1.0 - cfg.level / 100.0) / 2.0);
    est.ci_conventional = {est.tau_hat - z * est.se_conventional,
                           est.tau_hat + z * est.se_conventional};
    est.ci_biascorrected = {est.tau_bc - z * est.se_conventional,
                            est.tau_bc + z * est.se_conventional};
    est.ci_robust = robust_ci(est.tau_hat, est.bias_hat, est.se_robust, cfg.level);

    auto pvalue = [](double stat, double se) {
        if (se > 0.0) return two_sided_p(stat / se);
        return stat == 0.0 ? 1.0 : 0.0;
    };
    est.p_conventional = pvalue(est.tau_hat, est.se_conventional);
    est.p_robust = pvalue(est.tau_bc, est.se_robust);

    const SampleSplit ss = split(data);
    est.n_left = ss.n_left;
    est.n_right = ss.n_right;
    est.effective_n_left = h_left.effective_n;
    est.effective_n_right = h_right.effective_n;
    est.bandwidths = std::move(bw);
    est.level = cfg.level;
    est.vce_descriptor = vce_descriptor(cfg, data);
    est.covariate_gamma = std::move(gamma);
    est.warnings = std::move(warnings);
    return est;
}

} // namespace detail

// Sandwich variance of the intercept difference for two side fits.
inline double conventional_variance(const RdData& data, const SideFit& left, const SideFit& right,
                                    const VceSpec& vce) {
    detail::InferenceFrame fr;
    fr.x = data.scores;
    fr.y = data.outcomes;
    fr.c = data.cutoff;
    fr.vce = vce;
    if (vce.kind == VceKind::cluster) {
        if (!data.clusters) throw_usage("conventional_variance: cluster labels required");
        fr.clusters = *data.clusters;
    }
    fr.prepare();
    return detail::conventional_variance_impl(fr, left, right);
}

// Pre-asymptotic smoothing-bias estimate for the RD effect at main
// bandwidths (h_left, h_right), using order-q fits at (b_left, b_right).
inline BiasEstimate bias_estimate(const RdData& data, int p, int q, double h_left, double h_right,
                                  double b_left, double b_right, Kernel kernel) {
    if (q < p + 1) throw_usage("bias_estimate: q must be >= p+1");
    const SideFit hl = fit_side(data, Side::left, p, h_left, kernel);
    const SideFit hr = fit_side(data, Side::right, p, h_right, kernel);
    const SideFit bl = fit_side(data, Side::left, q, b_left, kernel);
    const SideFit br = fit_side(data, Side::right, q, b_right, kernel);
    return detail::bias_from_fits(hl, hr, bl, br);
}

inline RdEstimate analyze_with_covariates(const RdData& data, const EstimationConfig& cfg);

// Full estimation and inference pass: bandwidths (manual or data-driven),
// point estimate, bias correction, conventional/robust variances, and the
// three confidence intervals.
inline RdEstimate analyze(const RdData& data, const EstimationConfig& cfg) {
    data.validate();
    if (cfg.q < cfg.p + 1) throw_usage("analyze: q must be >= p+1");
    if (!(cfg.level > 0.0 && cfg.level < 100.0)) throw_usage("analyze: level must be in (0,100)");
    if (cfg.scale_regul < 0.0) throw_usage("analyze: scaleregul must be >= 0");
    if (cfg.vce.kind == VceKind::cluster && !data.clusters)
        throw_usage("analyze: cluster vce requires cluster labels");
    if (cfg.with_covariates) return analyze_with_covariates(data, cfg);

    detail::BwFrame bwf;
    bwf.x = data.scores;
    bwf.y = data.outcomes;
    bwf.c = data.cutoff;
    bwf.kernel = cfg.kernel;
    bwf.vce = cfg.vce;
    if (cfg.vce.kind == VceKind::cluster) bwf.clusters = *data.clusters;
    BandwidthResult bw = detail::resolve_bandwidths(bwf, cfg);
    return detail::analyze_on_frame(data, data.outcomes, cfg, std::move(bw), {}, {});
}

// Covariate-adjusted estimation: the treatment coefficient of a single
// weighted fit of the outcome on the interacted polynomial plus covariates.
// Equivalently (and implemented as) the plain estimator applied to the
// covariate-adjusted outcome y - Z*gamma, which also carries the bandwidth
// pipeline: gamma is pre-estimated at the initial pilot for selection and
// re-estimated at the selected h for the final fits.
inline RdEstimate analyze_with_covariates(const RdData& data, const EstimationConfig& cfg) {
    if (!data.covariates || data.covariates->cols() == 0)
        throw_usage("analyze_with_covariates: covariates required");
    if (cfg.vce.kind == VceKind::cluster && !data.clusters)
        throw_usage("analyze: cluster vce requires cluster labels");

    auto adjusted = [&](const JointFit& jf) {
        std::vector<double> y(data.outcomes);
        const Eigen::MatrixXd& z = *data.covariates;
        for (std::size_t i = 0; i < y.size(); ++i)
            y[i] -= z.row(static_cast<Eigen::Index>(i)).dot(jf.gamma_full);
        return y;
    };

    detail::BwFrame probe;
    probe.x = data.scores;
    probe.y = data.outcomes;
    probe.c = data.cutoff;
    probe.kernel = cfg.kernel;
    probe.vce = cfg.vce;
    if (cfg.vce.kind == VceKind::cluster) probe.clusters = *data.clusters;

    BandwidthResult bw;
    JointFit joint;
    const bool manual = cfg.bandwidth.selector == BwSelector::manual || cfg.bandwidth.h_left ||
                        cfg.bandwidth.h_right;
    if (manual) {
        bw = detail::resolve_bandwidths(probe, cfg);
        joint = fit_joint(data, cfg.p, bw.h_left, bw.h_right, cfg.kernel, true);
    } else {
        probe.prepare();
        const double pilot =
            std::max({detail::rule_of_thumb_pilot(data.scores),
                      probe.min_h_for(Side::left, static_cast<std::size_t>(cfg.p) + 3),
                      probe.min_h_for(Side::right, static_cast<std::size_t>(cfg.p) + 3)});
        const JointFit pilot_fit = fit_joint(data, cfg.p, pilot, pilot, cfg.kernel, true);
        const std::vector<double> y_pilot = adjusted(pilot_fit);
        detail::BwFrame bwf;
        bwf.x = data.scores;
        bwf.y = y_pilot;
        bwf.c = data.cutoff;
        bwf.kernel = cfg.kernel;
        bwf.vce = cfg.vce;
        if (cfg.vce.kind == VceKind::cluster) bwf.clusters = *data.clusters;
        bw = detail::resolve_bandwidths(bwf, cfg);
        joint = fit_joint(data, cfg.p, bw.h_left, bw.h_right, cfg.kernel, true);
    }

    const std::vector<double> y_adj = adjusted(joint);
    std::vector<std::pair<std::string, double>> gamma;
    for (std::size_t j = 0; j < joint.kept_covariates.size(); ++j) {
        const std::size_t col = joint.kept_covariates[j];
        const std::string name = col < data.covariate_names.size()
                                     ? data.covariate_names[col]
                                     : "z" + std::to_string(col);
        gamma.emplace_back(name, joint.gamma[static_cast<Eigen::Index>(j)]);
    }
    return detail::analyze_on_frame(data, y_adj, cfg, std::move(bw), std::move(gamma),
                                    joint.warnings);
}

// Cluster-aware run: cluster-robust variances drive both the bandwidth
// pipeline and the final standard errors.
inline RdEstimate analyze_clustered(const RdData& data, EstimationConfig cfg) {
    if (!data.clusters) throw_usage("analyze_clustered: cluster labels required");
    cfg.vce.kind = VceKind::cluster;
    return analyze(data, cfg);
}

} // namespace rdtk
