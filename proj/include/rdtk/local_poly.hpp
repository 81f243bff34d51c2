#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rdtk/data.hpp"
#include "rdtk/error.hpp"
#include "rdtk/kernels.hpp"
#include "rdtk/mathutil.hpp"

namespace rdtk {

// One-sided kernel-weighted polynomial fit. Internally the design is centered
// at the cutoff and scaled by the bandwidth; coefficients are reported in
// original score units. The scaled Gram matrix and design rows are retained
// for variance assembly.
struct SideFit {
    Side side = Side::left;
    int order = 1;
    double bandwidth = 0.0;
    Kernel kernel = Kernel::triangular;
    double cutoff = 0.0;

    std::vector<double> coefficients; // beta_j on (x - c)^j
    std::size_t effective_n = 0;      // observations with positive kernel weight

    std::vector<std::size_t> rows; // indices into the vectors passed to the fit
    Eigen::VectorXd u;             // (x - c) / h for the effective subsample
    Eigen::VectorXd w;             // kernel weights, aligned with rows
    Eigen::VectorXd fitted;
    Eigen::VectorXd residuals;
    Eigen::MatrixXd design;   // m x (order+1) powers of u
    Eigen::MatrixXd gram;     // design' W design (bandwidth-scaled coordinates)
    Eigen::MatrixXd gram_inv;
    double gram_rcond = 0.0;

    double intercept() const { return coefficients[0]; }

    // Weights such that beta_hat[nu] (original units) = sum_i influence(nu)[i] * y_i.
    Eigen::VectorXd influence(int nu) const {
        Eigen::VectorXd l = (design * gram_inv.col(nu)).cwiseProduct(w);
        l /= std::pow(bandwidth, nu);
        return l;
    }

    // e_nu' G^{-1} sum_i w_i r_i u_i^(o+1), rescaled to original units; this is
    // the design-dependent factor multiplying the (order+1)-th polynomial
    // coefficient in the smoothing bias of beta_hat[nu].
    double bias_ingredient(int nu) const {
        Eigen::VectorXd v = design.transpose() *
                            (w.array() * u.array().pow(order + 1)).matrix();
        const double c_scaled = gram_inv.col(nu).dot(v);
        return c_scaled * std::pow(bandwidth, order + 1 - nu);
    }

    // Hat-matrix diagonal, used by the HC2/HC3 residual weightings.
    Eigen::VectorXd leverage() const {
        Eigen::VectorXd lev(design.rows());
        for (Eigen::Index i = 0; i < design.rows(); ++i) {
            const Eigen::VectorXd r = design.row(i);
            lev[i] = w[i] * r.dot(gram_inv * r);
        }
        return lev;
    }
};

namespace detail {

constexpr double gram_rcond_floor = 1e-12;

// Core weighted least squares on pre-extracted one-sided arrays.
inline SideFit wls_fit(std::span<const double> xs, std::span<const double> ys, double cutoff,
                       Side side, int p, double h, Kernel kernel) {
    if (!(h > 0.0)) throw_usage("fit: bandwidth must be positive");
    if (p < 0 || p > 4) throw_usage("fit: polynomial order must be in 0..4");

    SideFit fit;
    fit.side = side;
    fit.order = p;
    fit.bandwidth = h;
    fit.kernel = kernel;
    fit.cutoff = cutoff;

    std::vector<double> u_keep, w_keep, y_keep;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const bool on_side = (side == Side::right) ? (xs[i] >= cutoff) : (xs[i] < cutoff);
        if (!on_side) continue;
        const double u = (xs[i] - cutoff) / h;
        const double w = kernel_weight(kernel, u);
        if (w <= 0.0) continue;
        fit.rows.push_back(i);
        u_keep.push_back(u);
        w_keep.push_back(w);
        y_keep.push_back(ys[i]);
    }
    const std::size_t m = fit.rows.size();
    fit.effective_n = m;
    const std::size_t k = static_cast<std::size_t>(p) + 1;
    if (m < k)
        throw_numeric(std::string("fit: insufficient observations on the ") + side_name(side) +
                      " side within bandwidth (" + std::to_string(m) + " < " + std::to_string(k) + ")");
    {
        std::set<double> distinct(u_keep.begin(), u_keep.end());
        if (distinct.size() < k)
            throw_numeric(std::string("fit: rank-deficient design on the ") + side_name(side) +
                          " side (fewer than " + std::to_string(k) + " distinct scores in window)");
    }

    fit.u = Eigen::Map<Eigen::VectorXd>(u_keep.data(), static_cast<Eigen::Index>(m));
    fit.w = Eigen::Map<Eigen::VectorXd>(w_keep.data(), static_cast<Eigen::Index>(m));
    Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(y_keep.data(), static_cast<Eigen::Index>(m));

    fit.design.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < m; ++i) {
        double pw = 1.0;
        for (std::size_t j = 0; j < k; ++j) {
            fit.design(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pw;
            pw *= fit.u[static_cast<Eigen::Index>(i)];
        }
    }

    const Eigen::VectorXd sw = fit.w.array().sqrt();
    const Eigen::MatrixXd a = sw.asDiagonal() * fit.design;
    fit.gram = a.transpose() * a;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(fit.gram);
    const double lam_min = eig.eigenvalues().minCoeff();
    const double lam_max = eig.eigenvalues().maxCoeff();
    fit.gram_rcond = (lam_max > 0.0) ? lam_min / lam_max : 0.0;
    if (!(fit.gram_rcond >= gram_rcond_floor))
        throw_numeric(std::string("fit: ill-conditioned weighted Gram on the ") + side_name(side) +
                      " side (rcond " + std::to_string(fit.gram_rcond) + ")");
    fit.gram_inv = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
                   eig.eigenvectors().transpose();

    const Eigen::VectorXd beta_scaled = a.colPivHouseholderQr().solve(sw.cwiseProduct(y));
    fit.fitted = fit.design * beta_scaled;
    fit.residuals = y - fit.fitted;

    fit.coefficients.resize(k);
    for (std::size_t j = 0; j < k; ++j)
        fit.coefficients[j] = beta_scaled[static_cast<Eigen::Index>(j)] / std::pow(h, static_cast<double>(j));
    return fit;
}

} // namespace detail

inline SideFit fit_side(const RdData& data, Side side, int p, double h, Kernel kernel) {
    return detail::wls_fit(data.scores, data.outcomes, data.cutoff, side, p, h, kernel);
}

struct RdPointEstimate {
    double mu_left = 0.0;
    double mu_right = 0.0;
    double tau = 0.0;
};

inline RdPointEstimate estimate_rd(const RdData& data, int p, double h_left, double h_right,
                                   Kernel kernel) {
    const SideFit left = fit_side(data, Side::left, p, h_left, kernel);
    const SideFit right = fit_side(data, Side::right, p, h_right, kernel);
    return RdPointEstimate{left.intercept(), right.intercept(),
                           right.intercept() - left.intercept()};
}

// Derivative of the fitted polynomial at the cutoff: order! * coefficient.
inline double estimate_derivative(const SideFit& fit, int order) {
    if (order < 0 || order > fit.order)
        throw_usage("estimate_derivative: order out of range for this fit");
    return factorial(order) * fit.coefficients[static_cast<std::size_t>(order)];
}

// Single interacted fit of y on {1, T, u..u^p, T u..T u^p, Z} with kernel
// weights; algebraically equivalent to two separate side fits when Z is
// empty. Powers are bandwidth-scaled per side. Covariate columns that are
// constant within the window are dropped with a warning; columns collinear
// with the remaining design are an error.
struct JointFit {
    double intercept_left = 0.0; // level at the cutoff from the control side
    double tau = 0.0;            // treatment coefficient
    Eigen::VectorXd gamma;       // coefficients of the kept covariates
    Eigen::VectorXd gamma_full;  // per input column, zero where dropped
    std::vector<std::size_t> kept_covariates;
    std::vector<std::string> warnings;
    Eigen::VectorXd beta; // full coefficient vector, scaled coordinates
    std::vector<std::size_t> rows;
    Eigen::VectorXd w;
    Eigen::VectorXd residuals;
};

inline JointFit fit_joint(const RdData& data, int p, double h_left, double h_right, Kernel kernel,
                          bool with_covariates) {
    if (!(h_left > 0.0) || !(h_right > 0.0)) throw_usage("fit: bandwidth must be positive");
    const Eigen::Index ncov =
        (with_covariates && data.covariates) ? data.covariates->cols() : 0;
    if (with_covariates && ncov == 0) throw_usage("fit_joint: no covariates present");

    JointFit out;
    std::vector<double> u_keep, w_keep, y_keep, t_keep;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const bool treated = data.treated(i);
        const double h = treated ? h_right : h_left;
        const double u = (data.scores[i] - data.cutoff) / h;
        const double w = kernel_weight(kernel, u);
        if (w <= 0.0) continue;
        out.rows.push_back(i);
        u_keep.push_back(u);
        w_keep.push_back(w);
        y_keep.push_back(data.outcomes[i]);
        t_keep.push_back(treated ? 1.0 : 0.0);
    }
    const Eigen::Index m = static_cast<Eigen::Index>(out.rows.size());
    const Eigen::Index kbase = 2 * (p + 1);
    if (m < kbase + 1) throw_numeric("fit_joint: insufficient observations within bandwidth");

    Eigen::MatrixXd base(m, kbase);
    Eigen::VectorXd y(m);
    out.w.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const double u = u_keep[static_cast<std::size_t>(i)];
        const double t = t_keep[static_cast<std::size_t>(i)];
        base(i, 0) = 1.0;
        base(i, 1) = t;
        double pw = u;
        for (int j = 1; j <= p; ++j) {
            base(i, 2 * j) = pw;
            base(i, 2 * j + 1) = t * pw;
            pw *= u;
        }
        y[i] = y_keep[static_cast<std::size_t>(i)];
        out.w[i] = w_keep[static_cast<std::size_t>(i)];
    }
    const Eigen::VectorXd sw = out.w.array().sqrt();

    // Select usable covariate columns by orthogonalizing against the design
    // built so far.
    Eigen::MatrixXd qbasis = sw.asDiagonal() * base;
    {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(qbasis);
        qbasis = qr.householderQ() * Eigen::MatrixXd::Identity(m, kbase);
    }
    std::vector<Eigen::VectorXd> zcols;
    for (Eigen::Index zc = 0; zc < ncov; ++zc) {
        const std::string name = static_cast<std::size_t>(zc) < data.covariate_names.size()
                                     ? data.covariate_names[static_cast<std::size_t>(zc)]
                                     : "z" + std::to_string(zc);
        Eigen::VectorXd raw(m);
        for (Eigen::Index i = 0; i < m; ++i)
            raw[i] = (*data.covariates)(
                static_cast<Eigen::Index>(out.rows[static_cast<std::size_t>(i)]), zc);
        const double span_z = raw.maxCoeff() - raw.minCoeff();
        const double scale_z = std::max(raw.cwiseAbs().maxCoeff(), 1.0);
        if (span_z <= 1e-12 * scale_z) {
            out.warnings.push_back("covariate '" + name + "' is constant in the window; dropped");
            continue;
        }
        Eigen::VectorXd v = sw.cwiseProduct(raw);
        const double norm0 = v.norm();
        Eigen::VectorXd resid = v - qbasis * (qbasis.transpose() * v);
        resid -= qbasis * (qbasis.transpose() * resid); // second pass for stability
        if (resid.norm() <= 1e-9 * std::max(norm0, 1.0))
            throw_numeric("fit_joint: covariate '" + name + "' is collinear with the design");
        qbasis.conservativeResize(Eigen::NoChange, qbasis.cols() + 1);
        qbasis.col(qbasis.cols() - 1) = resid / resid.norm();
        zcols.push_back(std::move(raw));
        out.kept_covariates.push_back(static_cast<std::size_t>(zc));
    }

    const Eigen::Index kz = static_cast<Eigen::Index>(zcols.size());
    const Eigen::Index k = kbase + kz;
    if (m < k) throw_numeric("fit_joint: insufficient observations within bandwidth");
    Eigen::MatrixXd design(m, k);
    design.leftCols(kbase) = base;
    for (Eigen::Index j = 0; j < kz; ++j) design.col(kbase + j) = zcols[static_cast<std::size_t>(j)];

    const Eigen::MatrixXd a = sw.asDiagonal() * design;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < k) throw_numeric("fit_joint: collinear design (check covariates)");
    out.beta = qr.solve(sw.cwiseProduct(y));
    out.residuals = y - design * out.beta;
    out.intercept_left = out.beta[0];
    out.tau = out.beta[1];
    out.gamma = out.beta.tail(kz);
    out.gamma_full = Eigen::VectorXd::Zero(ncov);
    for (Eigen::Index j = 0; j < kz; ++j)
        out.gamma_full[static_cast<Eigen::Index>(out.kept_covariates[static_cast<std::size_t>(j)])] =
            out.gamma[j];
    return out;
}

} // namespace rdtk
