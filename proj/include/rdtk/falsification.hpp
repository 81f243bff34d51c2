#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rdtk/data.hpp"
#include "rdtk/density.hpp"
#include "rdtk/error.hpp"
#include "rdtk/inference.hpp"
#include "rdtk/parallel.hpp"

namespace rdtk {

enum class FalsificationKind { covariate_balance, density, binomial, placebo, donut, sensitivity };

inline const char* falsification_name(FalsificationKind k) {
    switch (k) {
        case FalsificationKind::covariate_balance: return "covariate_balance";
        case FalsificationKind::density: return "density";
        case FalsificationKind::binomial: return "binomial";
        case FalsificationKind::placebo: return "placebo";
        case FalsificationKind::donut: return "donut";
        case FalsificationKind::sensitivity: return "sensitivity";
    }
    return "?";
}

// One case of a falsification battery. Failures are isolated per row so a
// batch continues past a degenerate case.
struct FalsificationRow {
    std::string label;
    bool ok = false;
    std::string error;
    std::optional<RdEstimate> estimate;
};

// Reports carry evidence only: free-text notes, never an automatic verdict.
struct FalsificationReport {
    FalsificationKind kind = FalsificationKind::covariate_balance;
    std::vector<FalsificationRow> rows;
    std::string verdict_notes;
};

namespace detail {

// Subsample with a single treatment status (used by placebo cutoffs).
inline RdData restrict_side(const RdData& data, Side side) {
    RdData out;
    out.cutoff = data.cutoff;
    out.covariate_names = data.covariate_names;
    out.cluster_labels = data.cluster_labels;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (data.treated(i) == (side == Side::right)) keep.push_back(i);
    for (std::size_t i : keep) {
        out.scores.push_back(data.scores[i]);
        out.outcomes.push_back(data.outcomes[i]);
    }
    if (data.clusters) {
        std::vector<std::int64_t> cl;
        for (std::size_t i : keep) cl.push_back((*data.clusters)[i]);
        out.clusters = std::move(cl);
    }
    if (data.covariates) {
        Eigen::MatrixXd z(static_cast<Eigen::Index>(keep.size()), data.covariates->cols());
        for (std::size_t r = 0; r < keep.size(); ++r)
            z.row(static_cast<Eigen::Index>(r)) =
                data.covariates->row(static_cast<Eigen::Index>(keep[r]));
        out.covariates = std::move(z);
    }
    return out;
}

template <typename MakeRow>
FalsificationReport run_rows(FalsificationKind kind, std::size_t count, MakeRow&& make,
                             std::string notes) {
    FalsificationReport rep;
    rep.kind = kind;
    rep.verdict_notes = std::move(notes);
    rep.rows.resize(count);
    parallel_for(count, [&](std::size_t i) {
        FalsificationRow& row = rep.rows[i];
        try {
            make(i, row);
            row.ok = true;
        } catch (const Error& e) {
            row.ok = false;
            row.error = e.what();
        }
    });
    return rep;
}

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

} // namespace detail

// Runs the outcome pipeline once per covariate, each with its own selected
// bandwidth. A valid design shows no effect on any predetermined covariate.
inline FalsificationReport covariate_balance(const RdData& data,
                                             const std::vector<std::string>& covariate_columns,
                                             const EstimationConfig& config) {
    if (!data.covariates || data.covariates->cols() == 0)
        throw_usage("covariate_balance: data has no covariates");
    std::vector<std::size_t> cols;
    if (covariate_columns.empty()) {
        for (std::size_t j = 0; j < data.covariate_names.size(); ++j) cols.push_back(j);
    } else {
        for (const auto& name : covariate_columns) {
            bool found = false;
            for (std::size_t j = 0; j < data.covariate_names.size(); ++j)
                if (data.covariate_names[j] == name) {
                    cols.push_back(j);
                    found = true;
                    break;
                }
            if (!found) throw_usage("covariate_balance: unknown covariate '" + name + "'");
        }
    }
    EstimationConfig cfg = config;
    cfg.with_covariates = false;
    return detail::run_rows(
        FalsificationKind::covariate_balance, cols.size(),
        [&](std::size_t i, FalsificationRow& row) {
            const std::size_t j = cols[i];
            row.label = data.covariate_names[j];
            RdData probe;
            probe.cutoff = data.cutoff;
            probe.scores = data.scores;
            probe.outcomes.resize(data.size());
            for (std::size_t r = 0; r < data.size(); ++r)
                probe.outcomes[r] = (*data.covariates)(static_cast<Eigen::Index>(r),
                                                       static_cast<Eigen::Index>(j));
            probe.clusters = data.clusters;
            probe.cluster_labels = data.cluster_labels;
            row.estimate = analyze(probe, cfg);
        },
        "null effects on predetermined covariates support the design");
}

struct BinomialResult {
    std::size_t n_left = 0;
    std::size_t n_right = 0;
    double p_value = 1.0;
};

namespace detail {

// Exact two-sided binomial p-value: the total probability of all outcomes no
// more likely than the observed one (with a small relative slack so exact
// probability ties are kept together).
inline double binomial_two_sided_p(std::size_t successes, std::size_t trials, double prob) {
    const std::size_t n = trials;
    std::vector<long double> pmf(n + 1);
    // C(n,k) p^k q^(n-k) via the multiplicative recurrence in long double.
    const long double p = prob;
    const long double q = 1.0L - p;
    pmf[0] = std::pow(q, static_cast<long double>(n));
    if (pmf[0] == 0.0L) {
        // underflow guard for large n: log-space fallback
        std::vector<long double> logpmf(n + 1);
        const long double lp = std::log(p), lq = std::log(q);
        long double lchoose = 0.0L;
        logpmf[0] = n * lq;
        for (std::size_t k = 1; k <= n; ++k) {
            lchoose += std::log(static_cast<long double>(n - k + 1)) -
                       std::log(static_cast<long double>(k));
            logpmf[k] = lchoose + k * lp + (n - k) * lq;
        }
        const long double lobs = logpmf[successes] + std::log(1.0L + 1e-9L);
        long double total = 0.0L;
        for (std::size_t k = 0; k <= n; ++k)
            if (logpmf[k] <= lobs) total += std::exp(logpmf[k]);
        return static_cast<double>(std::min(1.0L, total));
    }
    for (std::size_t k = 1; k <= n; ++k)
        pmf[k] = pmf[k - 1] * (static_cast<long double>(n - k + 1) / k) * (p / q);
    const long double obs = pmf[successes] * (1.0L + 1e-9L);
    long double total = 0.0L;
    for (std::size_t k = 0; k <= n; ++k)
        if (pmf[k] <= obs) total += pmf[k];
    return static_cast<double>(std::min(1.0L, total));
}

} // namespace detail

// Counts within |X - c| <= half_width and tests whether the treated share is
// compatible with Bernoulli(prob) assignment.
inline BinomialResult binomial_window(const RdData& data, double half_width, double prob = 0.5) {
    if (!(half_width >= 0.0)) throw_usage("binomial_window: half_width must be >= 0");
    if (!(prob > 0.0 && prob < 1.0)) throw_usage("binomial_window: prob must be in (0,1)");
    BinomialResult res;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double d = data.scores[i] - data.cutoff;
        if (std::abs(d) > half_width) continue;
        if (data.treated(i)) ++res.n_right;
        else ++res.n_left;
    }
    const std::size_t trials = res.n_left + res.n_right;
    if (trials == 0) throw_numeric("binomial_window: empty window");
    res.p_value = detail::binomial_two_sided_p(res.n_right, trials, prob);
    return res;
}

// Estimation at artificial cutoffs, restricted to one treatment status so the
// true effect is zero by construction. The genuine cutoff (when listed) runs
// unrestricted as a benchmark.
inline FalsificationReport placebo_cutoffs(const RdData& data, const std::vector<double>& cutoffs,
                                           const EstimationConfig& config) {
    return detail::run_rows(
        FalsificationKind::placebo, cutoffs.size(),
        [&](std::size_t i, FalsificationRow& row) {
            const double c_art = cutoffs[i];
            row.label = "c=" + detail::fmt_double(c_art);
            RdData probe;
            if (c_art > data.cutoff) probe = detail::restrict_side(data, Side::right);
            else if (c_art < data.cutoff) probe = detail::restrict_side(data, Side::left);
            else probe = data; // benchmark row at the true cutoff
            probe.cutoff = c_art;
            if (probe.size() == 0) throw_numeric("placebo: no observations retained");
            const SampleSplit ps = split(probe);
            if (c_art != data.cutoff && (ps.n_left == 0 || ps.n_right == 0))
                throw_numeric("placebo: artificial cutoff not interior to the retained support");
            row.estimate = analyze(probe, config);
        },
        "effects at artificial cutoffs should be indistinguishable from zero");
}

// Re-estimation after excluding |X - c| < radius; a fresh bandwidth is
// selected for every radius.
inline FalsificationReport donut(const RdData& data, const std::vector<double>& radii,
                                 const EstimationConfig& config) {
    const SampleSplit ss = split(data);
    return detail::run_rows(
        FalsificationKind::donut, radii.size(),
        [&](std::size_t i, FalsificationRow& row) {
            const double r = radii[i];
            if (r < 0.0) throw_usage("donut: radius must be >= 0");
            row.label = "r=" + detail::fmt_double(r);
            const RdData probe = window(data, ss.support_min, ss.support_max, r);
            if (probe.size() == 0) throw_numeric("donut: no observations retained");
            row.estimate = analyze(probe, config);
        },
        "stability under excluding observations closest to the cutoff");
}

// Fixed-bandwidth re-estimation across a grid; b is scaled to preserve the
// baseline run's rho. The default grid is {h_cer, h_mse, 2 h_cer, 2 h_mse}.
inline FalsificationReport bandwidth_sensitivity(const RdData& data,
                                                 std::vector<double> bandwidths,
                                                 const EstimationConfig& config) {
    EstimationConfig base_cfg = config;
    if (base_cfg.bandwidth.selector == BwSelector::manual)
        base_cfg.bandwidth = BandwidthSpec{}; // grid requires a data-driven baseline
    const RdEstimate base = analyze(data, base_cfg);
    const double rho_l = base.bandwidths.rho_left();
    const double rho_r = base.bandwidths.rho_right();

    if (bandwidths.empty()) {
        EstimationConfig cer_cfg = base_cfg;
        cer_cfg.bandwidth.selector = BwSelector::cerrd;
        const RdEstimate cer = analyze(data, cer_cfg);
        bandwidths = {cer.bandwidths.h_left, base.bandwidths.h_left,
                      2.0 * cer.bandwidths.h_left, 2.0 * base.bandwidths.h_left};
    }
    for (double h : bandwidths)
        if (!(h > 0.0)) throw_usage("bandwidth_sensitivity: bandwidths must be positive");

    return detail::run_rows(
        FalsificationKind::sensitivity, bandwidths.size(),
        [&](std::size_t i, FalsificationRow& row) {
            const double h = bandwidths[i];
            row.label = "h=" + detail::fmt_double(h);
            EstimationConfig cfg = config;
            cfg.bandwidth = BandwidthSpec{};
            cfg.bandwidth.selector = BwSelector::manual;
            cfg.bandwidth.h_left = h;
            cfg.bandwidth.h_right = h;
            cfg.bandwidth.b_left = h / rho_l;
            cfg.bandwidth.b_right = h / rho_r;
            row.estimate = analyze(data, cfg);
        },
        "conclusions should be stable across bandwidths near the optimal choices");
}

} // namespace rdtk
