#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rdtk/error.hpp"
#include "rdtk/local_poly.hpp"

namespace rdtk {

enum class VceKind { nn, hc0, hc1, hc2, hc3, cluster };

struct VceSpec {
    VceKind kind = VceKind::nn;
    int nn_matches = 3;
};

inline const char* vce_name(VceKind k) {
    switch (k) {
        case VceKind::nn: return "nn";
        case VceKind::hc0: return "hc0";
        case VceKind::hc1: return "hc1";
        case VceKind::hc2: return "hc2";
        case VceKind::hc3: return "hc3";
        case VceKind::cluster: return "cluster";
    }
    return "?";
}

inline VceKind vce_from_name(const std::string& s) {
    if (s == "nn") return VceKind::nn;
    if (s == "hc0") return VceKind::hc0;
    if (s == "hc1") return VceKind::hc1;
    if (s == "hc2") return VceKind::hc2;
    if (s == "hc3") return VceKind::hc3;
    if (s == "cluster") return VceKind::cluster;
    throw_usage("unknown vce '" + s + "' (expected nn|hc0|hc1|hc2|hc3|cluster)");
}

// Nearest-neighbor residual variance estimates, computed per side over the
// full side sample: sigma2_i = k/(k+1) * (y_i - mean of k nearest outcomes)^2.
// Neighbors are matched on the score within the same side; distance ties
// resolve toward the left neighbor, so results are order-independent.
inline std::vector<double> nn_sigma2_all(std::span<const double> xs, std::span<const double> ys,
                                         double cutoff, int k) {
    if (k < 1) throw_usage("nn variance: k must be >= 1");
    const std::size_t n = xs.size();
    std::vector<double> out(n, 0.0);
    for (int pass = 0; pass < 2; ++pass) {
        const bool right = pass == 1;
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < n; ++i)
            if ((xs[i] >= cutoff) == right) idx.push_back(i);
        if (idx.empty()) continue;
        if (idx.size() <= static_cast<std::size_t>(k))
            throw_numeric("nn variance: k=" + std::to_string(k) + " neighbors exceed the " +
                          (right ? "right" : "left") + " side sample of " + std::to_string(idx.size()));
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
        const std::size_t m = idx.size();
        for (std::size_t i = 0; i < m; ++i) {
            std::ptrdiff_t lo = static_cast<std::ptrdiff_t>(i) - 1;
            std::size_t hi = i + 1;
            double acc = 0.0;
            for (int taken = 0; taken < k; ++taken) {
                const bool lo_ok = lo >= 0;
                const bool hi_ok = hi < m;
                bool take_lo;
                if (lo_ok && hi_ok) {
                    const double dl = xs[idx[i]] - xs[idx[static_cast<std::size_t>(lo)]];
                    const double dr = xs[idx[hi]] - xs[idx[i]];
                    take_lo = dl <= dr;
                } else {
                    take_lo = lo_ok;
                }
                if (take_lo) acc += ys[idx[static_cast<std::size_t>(lo--)]];
                else acc += ys[idx[hi++]];
            }
            const double diff = ys[idx[i]] - acc / k;
            out[idx[i]] = (static_cast<double>(k) / (k + 1.0)) * diff * diff;
        }
    }
    return out;
}

// Residual-based sigma estimates aligned to fit.rows.
inline Eigen::VectorXd hc_sigma2(const SideFit& fit, VceKind kind) {
    const Eigen::Index m = fit.residuals.size();
    const double kparams = static_cast<double>(fit.order + 1);
    Eigen::VectorXd s2 = fit.residuals.array().square();
    switch (kind) {
        case VceKind::hc0:
            break;
        case VceKind::hc1: {
            const double dof = static_cast<double>(m) - kparams;
            if (dof <= 0.0) throw_numeric("hc1 variance: no residual degrees of freedom");
            s2 *= static_cast<double>(m) / dof;
            break;
        }
        case VceKind::hc2:
        case VceKind::hc3: {
            const Eigen::VectorXd lev = fit.leverage();
            for (Eigen::Index i = 0; i < m; ++i) {
                const double d = std::max(1.0 - lev[i], 1e-12);
                s2[i] /= (kind == VceKind::hc2) ? d : d * d;
            }
            break;
        }
        default:
            throw_usage("hc_sigma2: not a residual-based vce");
    }
    return s2;
}

// Sparse weights over data rows representing a statistic that is linear in
// the outcomes. Combines the influence vectors of one or more side fits.
struct RowFunctional {
    std::vector<std::size_t> rows;
    std::vector<double> weights;

    static RowFunctional from_fit(const SideFit& fit, int nu, double scale = 1.0) {
        RowFunctional f;
        const Eigen::VectorXd l = fit.influence(nu);
        f.rows = fit.rows;
        f.weights.resize(fit.rows.size());
        for (std::size_t i = 0; i < fit.rows.size(); ++i)
            f.weights[i] = scale * l[static_cast<Eigen::Index>(i)];
        return f;
    }

    void add_fit(const SideFit& fit, int nu, double scale) {
        std::map<std::size_t, double> acc;
        for (std::size_t i = 0; i < rows.size(); ++i) acc[rows[i]] += weights[i];
        const Eigen::VectorXd l = fit.influence(nu);
        for (std::size_t i = 0; i < fit.rows.size(); ++i)
            acc[fit.rows[i]] += scale * l[static_cast<Eigen::Index>(i)];
        rows.clear();
        weights.clear();
        for (const auto& [r, w] : acc) {
            rows.push_back(r);
            weights.push_back(w);
        }
    }
};

// Per-row sigma (or residual) values with coverage tracking, so a combined
// functional can draw on more than one fit.
struct RowValues {
    std::vector<double> value;
    std::vector<char> covered;

    explicit RowValues(std::size_t n) : value(n, 0.0), covered(n, 0) {}

    void scatter(const SideFit& fit, const Eigen::VectorXd& vals) {
        for (std::size_t i = 0; i < fit.rows.size(); ++i) {
            value[fit.rows[i]] = vals[static_cast<Eigen::Index>(i)];
            covered[fit.rows[i]] = 1;
        }
    }

    void fill_all(std::span<const double> vals) {
        for (std::size_t i = 0; i < value.size(); ++i) {
            value[i] = vals[i];
            covered[i] = 1;
        }
    }
};

inline double hetero_variance(const RowFunctional& f, const RowValues& sigma2) {
    double v = 0.0;
    for (std::size_t i = 0; i < f.rows.size(); ++i) {
        if (!sigma2.covered[f.rows[i]])
            throw_numeric("variance: sigma estimate missing for a weighted observation");
        v += f.weights[i] * f.weights[i] * sigma2.value[f.rows[i]];
    }
    return v;
}

// Cluster-robust variance of a linear functional: score contributions are
// summed within clusters before the outer product. A CRV1-style small-sample
// factor (G/(G-1)) * ((m-1)/(m-k)) is applied.
inline double cluster_variance(const RowFunctional& f, const RowValues& resid,
                               std::span<const std::int64_t> clusters, int n_params) {
    std::map<std::int64_t, double> score;
    for (std::size_t i = 0; i < f.rows.size(); ++i) {
        if (!resid.covered[f.rows[i]])
            throw_numeric("variance: residual missing for a weighted observation");
        score[clusters[f.rows[i]]] += f.weights[i] * resid.value[f.rows[i]];
    }
    const double g = static_cast<double>(score.size());
    if (g < 2.0) throw_numeric("cluster variance: fewer than 2 clusters in the effective sample");
    const double m = static_cast<double>(f.rows.size());
    double meat = 0.0;
    for (const auto& [cid, s] : score) meat += s * s;
    double adj = (g / (g - 1.0));
    if (m > n_params) adj *= (m - 1.0) / (m - n_params);
    return adj * meat;
}

} // namespace rdtk
