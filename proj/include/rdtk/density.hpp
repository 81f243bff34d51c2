#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rdtk/bandwidth.hpp"
#include "rdtk/data.hpp"
#include "rdtk/error.hpp"
#include "rdtk/kernels.hpp"
#include "rdtk/local_poly.hpp"
#include "rdtk/mathutil.hpp"

namespace rdtk {

// Continuity test for the score density at the cutoff. Each one-sided
// boundary density is the slope of a local quadratic fit of the empirical
// distribution function (no pre-binning); the variance of the estimated
// discontinuity comes from the sampling covariance of the EDF itself,
// Cov(F(s), F(t)) = (F(min) - F(s) F(t)) / n, pushed through the fit weights
// of both sides jointly.
struct DensityTestResult {
    double statistic = 0.0; // positive when the right density exceeds the left
    double p_value = 1.0;
    double f_left = 0.0;
    double f_right = 0.0;
    double se_diff = 0.0;
    double h_left = 0.0;
    double h_right = 0.0;
    std::size_t n_left = 0, n_right = 0;
    struct CurvePoint {
        double x = 0.0;
        double f = 0.0;
        double lo = 0.0;
        double hi = 0.0;
    };
    std::vector<CurvePoint> curve; // filled when requested
};

namespace detail {

// EDF values at each observation: rank/n with tie groups sharing the count
// of values <= x.
inline std::vector<double> edf_values(std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> f(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double val = static_cast<double>(j + 1) / static_cast<double>(n);
        for (std::size_t k = i; k <= j; ++k) f[idx[k]] = val;
        i = j + 1;
    }
    return f;
}

// Covariance quadratic form for a functional of the EDF: sum_ij u_i u_j
// (F(min(x_i,x_j)) - F(x_i)F(x_j)) / n, evaluated with the plug-in EDF.
inline double edf_functional_variance(const RowFunctional& fun, std::span<const double> x,
                                      std::span<const double> f, std::size_t n_total) {
    const std::size_t m = fun.rows.size();
    std::vector<std::size_t> ord(m);
    std::iota(ord.begin(), ord.end(), 0);
    std::stable_sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) {
        return x[fun.rows[a]] < x[fun.rows[b]];
    });
    // With entries sorted by x, F(min(x_i, x_j)) = F(x of the earlier entry),
    // so the double sum collapses to a single pass over suffix sums.
    //   sum_ij u_i u_j F(min) = sum_i u_i F_i * (u_i + 2 * sum_{j>i} u_j)
    double total = 0.0;
    double suffix = 0.0;
    for (std::size_t k = 0; k < m; ++k) suffix += fun.weights[ord[k]];
    double linear = 0.0; // sum_i u_i F_i
    for (std::size_t k = 0; k < m; ++k) {
        const double u = fun.weights[ord[k]];
        const double fi = f[fun.rows[ord[k]]];
        suffix -= u;
        total += u * fi * (u + 2.0 * suffix);
        linear += u * fi;
    }
    total -= linear * linear;
    return total / static_cast<double>(n_total);
}

struct DensitySideFit {
    SideFit fit;
    double f_hat = 0.0;
    double h = 0.0;
};

// Plug-in bandwidth for the EDF slope: variance at the rule-of-thumb pilot,
// curvature from an order-3 EDF fit, with the variance-of-curvature guard in
// the denominator. Targets the MSE of the first derivative of an order-2 fit.
inline double density_bandwidth(std::span<const double> x, std::span<const double> f, double c,
                                Side side, Kernel kernel, double pilot,
                                const std::vector<double>& dist) {
    auto min_h = [&](std::size_t count) {
        if (dist.size() < count) throw_numeric("density: insufficient observations");
        return dist[count - 1] * (1.0 + 1e-6) + 1e-300;
    };
    const double h0 = std::max(pilot, min_h(6));
    const SideFit fit_v = wls_fit(x, f, c, side, 2, h0, kernel);
    const RowFunctional fun_v = RowFunctional::from_fit(fit_v, 1);
    const double var_pre = edf_functional_variance(fun_v, x, f, x.size());
    const double c_bias = fit_v.bias_ingredient(1);

    const double h1 = std::max(h0, min_h(7));
    const SideFit fit_b = wls_fit(x, f, c, side, 3, h1, kernel);
    const double coef3 = fit_b.coefficients[3];
    const RowFunctional fun_b = RowFunctional::from_fit(fit_b, 3);
    const double var3 = edf_functional_variance(fun_b, x, f, x.size());

    const double bias2 = c_bias * coef3 * c_bias * coef3 + 3.0 * c_bias * c_bias * var3;
    // nu = 1, o = 2: h = h0 * (3 V / (4 B^2))^(1/7)
    double h = h0 * std::pow(3.0 * var_pre / (4.0 * bias2), 1.0 / 7.0);
    if (!std::isfinite(h) || !(h > 0.0)) h = h0;
    return std::max(h, min_h(6));
}

inline DensitySideFit density_side(std::span<const double> x, std::span<const double> f, double c,
                                   Side side, Kernel kernel, double h) {
    DensitySideFit out;
    out.h = h;
    out.fit = wls_fit(x, f, c, side, 2, h, kernel);
    out.f_hat = out.fit.coefficients[1];
    return out;
}

} // namespace detail

struct DensityTestOptions {
    Kernel kernel = Kernel::triangular;
    std::optional<double> h_left, h_right; // manual bandwidths
    bool with_curve = false;
    std::size_t curve_points = 30; // per side
};

inline DensityTestResult density_test(const RdData& data, DensityTestOptions opt = {}) {
    const std::size_t n = data.size();
    std::span<const double> x = data.scores;
    const double c = data.cutoff;

    std::vector<double> dist_l, dist_r;
    for (double xi : x) {
        if (xi >= c) dist_r.push_back(xi - c);
        else dist_l.push_back(c - xi);
    }
    if (dist_l.size() < 10 || dist_r.size() < 10)
        throw_numeric("density_test: needs at least 10 observations per side");
    std::sort(dist_l.begin(), dist_l.end());
    std::sort(dist_r.begin(), dist_r.end());

    const std::vector<double> f = detail::edf_values(x);
    const double pilot = detail::rule_of_thumb_pilot(x);

    DensityTestResult res;
    res.n_left = dist_l.size();
    res.n_right = dist_r.size();
    res.h_left = opt.h_left ? *opt.h_left
                            : detail::density_bandwidth(x, f, c, Side::left, opt.kernel, pilot, dist_l);
    res.h_right = opt.h_right
                      ? *opt.h_right
                      : detail::density_bandwidth(x, f, c, Side::right, opt.kernel, pilot, dist_r);

    const detail::DensitySideFit left = detail::density_side(x, f, c, Side::left, opt.kernel, res.h_left);
    const detail::DensitySideFit right =
        detail::density_side(x, f, c, Side::right, opt.kernel, res.h_right);
    res.f_left = left.f_hat;
    res.f_right = right.f_hat;

    RowFunctional diff = RowFunctional::from_fit(right.fit, 1);
    diff.add_fit(left.fit, 1, -1.0);
    const double var = detail::edf_functional_variance(diff, x, f, n);
    res.se_diff = std::sqrt(std::max(0.0, var));
    if (res.se_diff > 0.0) {
        res.statistic = (res.f_right - res.f_left) / res.se_diff;
        res.p_value = two_sided_p(res.statistic);
    } else {
        res.statistic = 0.0;
        res.p_value = 1.0;
    }

    if (opt.with_curve) {
        auto side_curve = [&](Side s, double h, double from, double to) {
            const std::size_t m = opt.curve_points;
            for (std::size_t i = 0; i < m; ++i) {
                const double g =
                    from + (to - from) * static_cast<double>(i) / static_cast<double>(m - 1);
                // One-sided local quadratic of the EDF centered at the grid
                // point, restricted to the g-side sample of the cutoff.
                std::vector<double> xs, fs;
                for (std::size_t r = 0; r < n; ++r) {
                    if ((x[r] >= c) != (s == Side::right)) continue;
                    if (std::abs(x[r] - g) > h) continue;
                    xs.push_back(x[r]);
                    fs.push_back(f[r]);
                }
                if (xs.size() < 6) continue;
                // Two-sided weighted quadratic around the grid point (still
                // restricted to the cutoff side).
                const std::size_t m2 = xs.size();
                Eigen::MatrixXd a(m2, 3);
                Eigen::VectorXd b(m2);
                for (std::size_t r = 0; r < m2; ++r) {
                    const double u = (xs[r] - g) / h;
                    const double w = std::sqrt(kernel_weight(opt.kernel, u));
                    a(static_cast<Eigen::Index>(r), 0) = w;
                    a(static_cast<Eigen::Index>(r), 1) = w * u;
                    a(static_cast<Eigen::Index>(r), 2) = w * u * u;
                    b(static_cast<Eigen::Index>(r)) = w * fs[r];
                }
                const Eigen::VectorXd beta = a.colPivHouseholderQr().solve(b);
                const double fg = beta[1] / h;
                // Pointwise band from the EDF covariance of the slope weights.
                Eigen::MatrixXd gram = a.transpose() * a;
                Eigen::MatrixXd ginv = gram.inverse();
                RowFunctional fun;
                for (std::size_t r = 0; r < n; ++r) {
                    if ((x[r] >= c) != (s == Side::right)) continue;
                    if (std::abs(x[r] - g) > h) continue;
                    const double u = (x[r] - g) / h;
                    const double w = kernel_weight(opt.kernel, u);
                    Eigen::Vector3d row(1.0, u, u * u);
                    fun.rows.push_back(r);
                    fun.weights.push_back(ginv.row(1).dot(row) * w / h);
                }
                const double v = detail::edf_functional_variance(fun, x, f, n);
                const double se = std::sqrt(std::max(0.0, v));
                res.curve.push_back({g, fg, fg - 1.96 * se, fg + 1.96 * se});
            }
        };
        const double lo = c - std::min(2.0 * res.h_left, dist_l.back());
        const double hi = c + std::min(2.0 * res.h_right, dist_r.back());
        side_curve(Side::left, res.h_left, lo, c);
        side_curve(Side::right, res.h_right, c, hi);
    }
    return res;
}

} // namespace rdtk
