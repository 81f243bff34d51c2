#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rdtk/data.hpp"
#include "rdtk/error.hpp"
#include "rdtk/kernels.hpp"
#include "rdtk/local_poly.hpp"
#include "rdtk/mathutil.hpp"

namespace rdtk {

enum class BinScheme { es, qs };
enum class BinCriterion { manual, imse, mv };

inline const char* scheme_name(BinScheme s) { return s == BinScheme::es ? "es" : "qs"; }
inline const char* criterion_name(BinCriterion c) {
    switch (c) {
        case BinCriterion::manual: return "manual";
        case BinCriterion::imse: return "imse";
        case BinCriterion::mv: return "mv";
    }
    return "?";
}

// Disjoint partition of the observed support, built separately on each side
// of the cutoff. Bins are half-open [lo, hi) except the last one per side,
// which is closed. Quantile-spaced bins assign membership by rank (ties in
// stable sort order), so per-side counts differ by at most one.
struct BinPartition {
    BinScheme scheme = BinScheme::es;
    BinCriterion selector = BinCriterion::manual;
    std::size_t j_left = 0, j_right = 0;
    std::vector<double> edges_left;  // size j_left + 1, spanning [x_l, c]
    std::vector<double> edges_right; // size j_right + 1, spanning [c, x_u]
    std::vector<std::optional<double>> means_left, means_right; // absent for empty bins
    std::vector<std::size_t> counts_left, counts_right;
    std::vector<double> midpoints_left, midpoints_right;
    struct ImpliedWeights {
        double bias = 0.5;
        double variance = 0.5;
    };
    std::optional<ImpliedWeights> implied_weights_left, implied_weights_right;
};

struct BinSelection {
    std::size_t j_left = 0, j_right = 0;
    BinPartition::ImpliedWeights weights_left, weights_right;
};

namespace detail {

struct SideSample {
    std::vector<double> x; // sorted
    std::vector<double> y; // aligned with x
};

inline SideSample side_sample(const RdData& data, Side s) {
    SideSample out;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.size(); ++i)
        if ((data.scores[i] >= data.cutoff) == (s == Side::right)) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return data.scores[a] < data.scores[b]; });
    for (std::size_t i : idx) {
        out.x.push_back(data.scores[i]);
        out.y.push_back(data.outcomes[i]);
    }
    return out;
}

inline void partition_side(const SideSample& s, Side side, double inner, BinScheme scheme,
                           std::size_t j, std::vector<double>& edges,
                           std::vector<std::optional<double>>& means,
                           std::vector<std::size_t>& counts, std::vector<double>& mids) {
    if (j < 1) throw_usage("partition: bin count must be >= 1");
    if (s.x.empty()) throw_numeric(std::string("partition: no observations on the ") +
                                   side_name(side) + " side");
    if (scheme == BinScheme::qs && j > s.x.size())
        throw_usage("partition: quantile-spaced bin count exceeds the " +
                    std::string(side_name(side)) + " side sample size");
    const std::size_t n = s.x.size();
    const double outer = side == Side::left ? s.x.front() : s.x.back();
    const double lo = side == Side::left ? outer : inner;
    const double hi = side == Side::left ? inner : outer;

    edges.assign(j + 1, 0.0);
    means.assign(j, std::nullopt);
    counts.assign(j, 0);
    mids.assign(j, 0.0);
    std::vector<double> sums(j, 0.0);

    if (scheme == BinScheme::es) {
        for (std::size_t k = 0; k <= j; ++k)
            edges[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(j);
        edges.front() = lo;
        edges.back() = hi;
        for (std::size_t i = 0; i < n; ++i) {
            auto it = std::upper_bound(edges.begin(), edges.end(), s.x[i]);
            std::size_t bin = it == edges.begin()
                                  ? 0
                                  : static_cast<std::size_t>(it - edges.begin()) - 1;
            if (bin >= j) bin = j - 1; // closes the outermost bin
            ++counts[bin];
            sums[bin] += s.y[i];
        }
    } else {
        // Rank-based quantile bins: group k takes sorted positions
        // [floor(k n / j), floor((k+1) n / j)).
        edges.front() = lo;
        edges.back() = hi;
        for (std::size_t k = 1; k < j; ++k) {
            const std::size_t pos = (k * n) / j; // order statistic X_(pos), 1-indexed
            edges[k] = s.x[pos == 0 ? 0 : pos - 1];
        }
        for (std::size_t k = 0; k < j; ++k) {
            const std::size_t a = (k * n) / j;
            const std::size_t b = ((k + 1) * n) / j;
            for (std::size_t i = a; i < b; ++i) {
                ++counts[k];
                sums[k] += s.y[i];
            }
        }
    }
    for (std::size_t k = 0; k < j; ++k) {
        if (counts[k] > 0) means[k] = sums[k] / static_cast<double>(counts[k]);
        mids[k] = 0.5 * (edges[k] + edges[k + 1]);
    }
}

struct SideSelectorInputs {
    double a_es = 0.0, b_es = 0.0; // IMSE(J) = A/J^2 + B*J
    double a_qs = 0.0, b_qs = 0.0;
    double mv_c_es = 0.0, mv_c_qs = 0.0; // J_mv = C * n_side / log(n_side)^2
    std::size_t n = 0;
};

// Sample analogs feeding the bin-number selectors: a global quartic pre-fit
// provides the derivative and residual-variance fields; support integrals are
// Riemann sums over the sorted sample.
inline SideSelectorInputs selector_inputs(const SideSample& s, double cutoff) {
    SideSelectorInputs si;
    const std::size_t n = s.x.size();
    si.n = n;
    if (n < 10) throw_numeric("bin selection: needs at least 10 observations per side");
    const double span = s.x.back() - s.x.front();
    if (!(span > 0.0)) throw_numeric("bin selection: degenerate side support");

    const Side side = s.x.front() >= cutoff ? Side::right : Side::left;
    const double range = std::max(std::abs(s.x.front() - cutoff), std::abs(s.x.back() - cutoff));
    const int order = n > 12 ? 4 : 2;
    const SideFit fit =
        wls_fit(s.x, s.y, cutoff, side, order, range * (1.0 + 1e-9) + 1e-12, Kernel::uniform);

    std::vector<double> deriv2(n, 0.0), sig2(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double xc = s.x[i] - cutoff;
        double d = 0.0, pw = 1.0;
        for (int j = 1; j <= order; ++j) {
            d += j * fit.coefficients[static_cast<std::size_t>(j)] * pw;
            pw *= xc;
        }
        deriv2[i] = d * d;
    }
    for (std::size_t i = 0; i < fit.rows.size(); ++i)
        sig2[fit.rows[i]] = fit.residuals[static_cast<Eigen::Index>(i)] *
                            fit.residuals[static_cast<Eigen::Index>(i)];

    double integ_sig = 0.0;   // integral of sigma^2(x) dx over the side support
    double sum_d2_sp2 = 0.0;  // sum of m'(x)^2 * spacing^2
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double gap = s.x[i + 1] - s.x[i];
        integ_sig += 0.5 * (sig2[i] + sig2[i + 1]) * gap;
        sum_d2_sp2 += deriv2[i] * gap * gap;
    }
    const double mean_d2 = mean(deriv2);
    const double mean_sig = mean(sig2);
    const double var_y = sample_variance(s.y);
    const double nn = static_cast<double>(n);

    si.a_es = span * span * mean_d2 / 12.0;
    si.b_es = integ_sig / (nn * span);
    si.a_qs = nn * sum_d2_sp2 / 12.0;
    si.b_qs = mean_sig / nn;
    si.mv_c_es = integ_sig > 0.0 ? var_y * span / integ_sig : 0.0;
    si.mv_c_qs = mean_sig > 0.0 ? var_y / mean_sig : 0.0;
    return si;
}

inline std::size_t imse_j(double a, double b) {
    if (!(a > 0.0) || !(b > 0.0)) return 1;
    return static_cast<std::size_t>(std::max(1.0, std::ceil(std::cbrt(2.0 * a / b))));
}

inline std::size_t mv_j(double c, std::size_t n) {
    const double ln = std::log(static_cast<double>(n));
    const double j = c * static_cast<double>(n) / (ln * ln);
    return static_cast<std::size_t>(std::max(1.0, std::ceil(j)));
}

inline BinPartition::ImpliedWeights implied_weights(double a, double b, std::size_t j) {
    BinPartition::ImpliedWeights w;
    if (!(a > 0.0) || !(b > 0.0)) return w;
    const double jj = static_cast<double>(j);
    const double r = jj * jj * jj * b / (2.0 * a);
    w.bias = r / (1.0 + r);
    w.variance = 1.0 / (1.0 + r);
    return w;
}

} // namespace detail

// Bin counts chosen either to minimize the approximate integrated MSE of the
// binned means (imse) or to mimic the variability of the raw scatter (mv).
// The mv criterion also reports the bias/variance weights that would make the
// IMSE objective deliver the same count.
inline BinSelection select_bins(const RdData& data, BinScheme scheme, BinCriterion crit) {
    if (crit == BinCriterion::manual) throw_usage("select_bins: criterion must be imse or mv");
    const detail::SideSample left = detail::side_sample(data, Side::left);
    const detail::SideSample right = detail::side_sample(data, Side::right);
    const detail::SideSelectorInputs sl = detail::selector_inputs(left, data.cutoff);
    const detail::SideSelectorInputs sr = detail::selector_inputs(right, data.cutoff);

    BinSelection out;
    auto pick = [&](const detail::SideSelectorInputs& si, std::size_t& j,
                    BinPartition::ImpliedWeights& w) {
        const double a = scheme == BinScheme::es ? si.a_es : si.a_qs;
        const double b = scheme == BinScheme::es ? si.b_es : si.b_qs;
        if (crit == BinCriterion::imse) {
            j = detail::imse_j(a, b);
            w = BinPartition::ImpliedWeights{0.5, 0.5};
        } else {
            j = detail::mv_j(scheme == BinScheme::es ? si.mv_c_es : si.mv_c_qs, si.n);
            w = detail::implied_weights(a, b, j);
        }
        j = std::min(j, si.n); // quantile bins cannot exceed the sample
        if (j < 1) j = 1;
    };
    pick(sl, out.j_left, out.weights_left);
    pick(sr, out.j_right, out.weights_right);
    return out;
}

inline BinPartition partition(const RdData& data, BinScheme scheme, std::size_t j_left,
                              std::size_t j_right) {
    BinPartition part;
    part.scheme = scheme;
    part.selector = BinCriterion::manual;
    part.j_left = j_left;
    part.j_right = j_right;
    const detail::SideSample left = detail::side_sample(data, Side::left);
    const detail::SideSample right = detail::side_sample(data, Side::right);
    detail::partition_side(left, Side::left, data.cutoff, scheme, j_left, part.edges_left,
                           part.means_left, part.counts_left, part.midpoints_left);
    detail::partition_side(right, Side::right, data.cutoff, scheme, j_right, part.edges_right,
                           part.means_right, part.counts_right, part.midpoints_right);
    return part;
}

struct PlotOptions {
    BinScheme scheme = BinScheme::es;
    BinCriterion criterion = BinCriterion::mv; // default data-driven choice
    std::optional<std::size_t> nbins_left, nbins_right; // manual bin counts
    double scale = 1.0; // multiplier on selected bin counts; ignored for manual counts
    int global_order = 4;
    Kernel fit_kernel = Kernel::uniform;
    std::optional<double> fit_h_left, fit_h_right; // window for the overlay fits
    std::size_t curve_samples = 101;               // per side
};

struct RdPlotData {
    BinPartition partition;
    double cutoff = 0.0;
    int global_order = 4;
    Kernel fit_kernel = Kernel::uniform;
    double fit_h_left = 0.0, fit_h_right = 0.0;
    std::vector<double> coef_left, coef_right; // on (x - c)^j
    std::size_t n_left = 0, n_right = 0;
    std::vector<std::pair<double, double>> curve_left, curve_right;

    double curve_gap_at_cutoff() const {
        return (coef_right.empty() ? 0.0 : coef_right[0]) -
               (coef_left.empty() ? 0.0 : coef_left[0]);
    }
};

// Assembles the plot ingredients: the bin partition plus per-side polynomial
// overlays fitted on the raw observations (never the binned means). With a
// window, order and kernel mirroring an estimation run, the curve gap at the
// cutoff reproduces that run's point estimate.
inline RdPlotData build_plot(const RdData& data, const PlotOptions& opt) {
    RdPlotData out;
    std::size_t j_left, j_right;
    BinCriterion used = opt.criterion;
    BinSelection sel;
    if (opt.nbins_left || opt.nbins_right) {
        j_left = opt.nbins_left ? *opt.nbins_left : *opt.nbins_right;
        j_right = opt.nbins_right ? *opt.nbins_right : *opt.nbins_left;
        used = BinCriterion::manual;
    } else {
        sel = select_bins(data, opt.scheme, opt.criterion);
        j_left = sel.j_left;
        j_right = sel.j_right;
        if (opt.scale != 1.0) {
            if (!(opt.scale > 0.0)) throw_usage("plot: scale must be positive");
            j_left = static_cast<std::size_t>(std::max(1.0, std::ceil(j_left * opt.scale)));
            j_right = static_cast<std::size_t>(std::max(1.0, std::ceil(j_right * opt.scale)));
        }
    }
    out.partition = partition(data, opt.scheme, j_left, j_right);
    out.partition.selector = used;
    if (used == BinCriterion::mv) {
        out.partition.implied_weights_left = sel.weights_left;
        out.partition.implied_weights_right = sel.weights_right;
    }

    const SampleSplit ss = split(data);
    out.cutoff = data.cutoff;
    out.n_left = ss.n_left;
    out.n_right = ss.n_right;
    out.global_order = opt.global_order;
    out.fit_kernel = opt.fit_kernel;

    const double range_l = (data.cutoff - ss.support_min) * (1.0 + 1e-9) + 1e-12;
    const double range_r = (ss.support_max - data.cutoff) * (1.0 + 1e-9) + 1e-12;
    out.fit_h_left = opt.fit_h_left ? *opt.fit_h_left : range_l;
    out.fit_h_right = opt.fit_h_right ? *opt.fit_h_right : range_r;

    const SideFit fl = fit_side(data, Side::left, opt.global_order, out.fit_h_left, opt.fit_kernel);
    const SideFit fr = fit_side(data, Side::right, opt.global_order, out.fit_h_right, opt.fit_kernel);
    out.coef_left = fl.coefficients;
    out.coef_right = fr.coefficients;

    auto sample_curve = [&](const std::vector<double>& coef, double from, double to,
                            std::vector<std::pair<double, double>>& curve) {
        const std::size_t m = std::max<std::size_t>(2, opt.curve_samples);
        for (std::size_t i = 0; i < m; ++i) {
            const double x = from + (to - from) * static_cast<double>(i) / static_cast<double>(m - 1);
            double v = 0.0, pw = 1.0;
            for (double cj : coef) {
                v += cj * pw;
                pw *= (x - data.cutoff);
            }
            curve.emplace_back(x, v);
        }
    };
    sample_curve(out.coef_left, std::max(ss.support_min, data.cutoff - out.fit_h_left),
                 data.cutoff, out.curve_left);
    sample_curve(out.coef_right, data.cutoff,
                 std::min(ss.support_max, data.cutoff + out.fit_h_right), out.curve_right);
    return out;
}

enum class PlotFormat { json, csv, svg };

inline PlotFormat plot_format_from_name(const std::string& s) {
    if (s == "json") return PlotFormat::json;
    if (s == "csv") return PlotFormat::csv;
    if (s == "svg") return PlotFormat::svg;
    throw_usage("unknown plot format '" + s + "' (expected json|csv|svg)");
}

namespace detail {

inline std::string csv_plot(const RdPlotData& pd) {
    std::ostringstream os;
    os.precision(17);
    os << "type,side,lo,hi,midpoint,count,value\n";
    auto bins = [&](Side s) {
        const auto& edges = s == Side::left ? pd.partition.edges_left : pd.partition.edges_right;
        const auto& means = s == Side::left ? pd.partition.means_left : pd.partition.means_right;
        const auto& counts = s == Side::left ? pd.partition.counts_left : pd.partition.counts_right;
        const auto& mids = s == Side::left ? pd.partition.midpoints_left : pd.partition.midpoints_right;
        for (std::size_t k = 0; k < counts.size(); ++k) {
            os << "bin," << side_name(s) << ',' << edges[k] << ',' << edges[k + 1] << ','
               << mids[k] << ',' << counts[k] << ',';
            if (means[k]) os << *means[k];
            else os << "NA";
            os << '\n';
        }
    };
    auto curve = [&](Side s) {
        const auto& c = s == Side::left ? pd.curve_left : pd.curve_right;
        for (const auto& [x, y] : c)
            os << "curve," << side_name(s) << ",,," << x << ",," << y << '\n';
    };
    bins(Side::left);
    bins(Side::right);
    curve(Side::left);
    curve(Side::right);
    return os.str();
}

inline std::string svg_plot(const RdPlotData& pd) {
    const double cutoff = pd.cutoff;
    double xmin = pd.partition.edges_left.front(), xmax = pd.partition.edges_right.back();
    double ymin = 1e300, ymax = -1e300;
    auto seen = [&](double v) {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
    };
    for (const auto& m : pd.partition.means_left)
        if (m) seen(*m);
    for (const auto& m : pd.partition.means_right)
        if (m) seen(*m);
    for (const auto& [x, y] : pd.curve_left) seen(y);
    for (const auto& [x, y] : pd.curve_right) seen(y);
    if (ymin > ymax) { ymin = 0.0; ymax = 1.0; }
    if (ymax == ymin) { ymax += 1.0; ymin -= 1.0; }
    const double w = 720, h = 480, ml = 50, mr = 15, mt = 15, mb = 35;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
    auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

    std::ostringstream os;
    os.precision(8);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
       << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n";
    os << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
       << h - mb << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << px(cutoff) << "\" y1=\"" << mt << "\" x2=\"" << px(cutoff)
       << "\" y2=\"" << h - mb << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
    auto dots = [&](const std::vector<double>& mids, const std::vector<std::optional<double>>& means,
                    const char* color) {
        for (std::size_t k = 0; k < mids.size(); ++k)
            if (means[k])
                os << "<circle cx=\"" << px(mids[k]) << "\" cy=\"" << py(*means[k])
                   << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    };
    auto line = [&](const std::vector<std::pair<double, double>>& curve, const char* color) {
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : curve) os << px(x) << ',' << py(y) << ' ';
        os << "\"/>\n";
    };
    dots(pd.partition.midpoints_left, pd.partition.means_left, "steelblue");
    dots(pd.partition.midpoints_right, pd.partition.means_right, "firebrick");
    line(pd.curve_left, "steelblue");
    line(pd.curve_right, "firebrick");
    os << "</svg>\n";
    return os.str();
}

} // namespace detail

} // namespace rdtk
