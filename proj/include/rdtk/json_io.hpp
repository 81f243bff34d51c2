#pragma once

#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "rdtk/bandwidth.hpp"
#include "rdtk/density.hpp"
#include "rdtk/error.hpp"
#include "rdtk/falsification.hpp"
#include "rdtk/inference.hpp"
#include "rdtk/rdplot.hpp"
#include "rdtk/simlab.hpp"
#include "rdtk/version.hpp"

namespace rdtk {

// Serialization uses ordered maps throughout so equal inputs yield
// byte-identical documents.
using Json = nlohmann::ordered_json;

inline Json to_json(const Interval& iv) { return Json{iv.lo, iv.hi}; }

inline Json to_json(const PluginQuantities& pq) {
    Json j;
    j["sigma2_left"] = pq.sigma2_left;
    j["sigma2_right"] = pq.sigma2_right;
    j["density_at_cutoff"] = pq.density_at_cutoff;
    j["curvature_left"] = pq.curvature_left;
    j["curvature_right"] = pq.curvature_right;
    j["bias_left"] = pq.bias_left;
    j["bias_right"] = pq.bias_right;
    j["var_left"] = pq.var_left;
    j["var_right"] = pq.var_right;
    j["regularization"] = pq.regularization;
    j["pilots"] = Json{{"initial", pq.pilots.initial},
                       {"d_left", pq.pilots.d_left},
                       {"d_right", pq.pilots.d_right},
                       {"b_left", pq.pilots.b_left},
                       {"b_right", pq.pilots.b_right}};
    return j;
}

inline Json to_json(const BandwidthResult& bw, bool with_plugin = true) {
    Json j;
    j["selector"] = selector_name(bw.selector);
    j["h_left"] = bw.h_left;
    j["h_right"] = bw.h_right;
    j["b_left"] = bw.b_left;
    j["b_right"] = bw.b_right;
    j["rho_left"] = bw.rho_left();
    j["rho_right"] = bw.rho_right();
    if (bw.cer_factor) j["cer_factor"] = *bw.cer_factor;
    if (with_plugin && bw.selector != BwSelector::manual) j["plugin"] = to_json(bw.plugin);
    return j;
}

inline Json to_json(const RdEstimate& e) {
    Json j;
    j["tau_hat"] = e.tau_hat;
    j["bias_hat"] = e.bias_hat;
    j["tau_bc"] = e.tau_bc;
    j["se_conventional"] = e.se_conventional;
    j["se_robust"] = e.se_robust;
    j["ci_conventional"] = to_json(e.ci_conventional);
    j["ci_biascorrected"] = to_json(e.ci_biascorrected);
    j["ci_robust"] = to_json(e.ci_robust);
    j["p_conventional"] = e.p_conventional;
    j["p_robust"] = e.p_robust;
    j["mu_left"] = e.mu_left;
    j["mu_right"] = e.mu_right;
    j["bias_left"] = e.bias_left;
    j["bias_right"] = e.bias_right;
    j["bandwidths"] = to_json(e.bandwidths);
    j["n_left"] = e.n_left;
    j["n_right"] = e.n_right;
    j["effective_n_left"] = e.effective_n_left;
    j["effective_n_right"] = e.effective_n_right;
    j["vce"] = e.vce_descriptor;
    j["level"] = e.level;
    if (!e.covariate_gamma.empty()) {
        Json g = Json::object();
        for (const auto& [name, value] : e.covariate_gamma) g[name] = value;
        j["covariate_gamma"] = g;
    } else {
        j["covariate_gamma"] = nullptr;
    }
    if (!e.warnings.empty()) j["warnings"] = e.warnings;
    return j;
}

inline Json to_json(const BinPartition& p) {
    Json j;
    j["scheme"] = scheme_name(p.scheme);
    j["selector"] = criterion_name(p.selector);
    j["j_left"] = p.j_left;
    j["j_right"] = p.j_right;
    j["edges_left"] = p.edges_left;
    j["edges_right"] = p.edges_right;
    auto means = [](const std::vector<std::optional<double>>& v) {
        Json a = Json::array();
        for (const auto& m : v) {
            if (m) a.push_back(*m);
            else a.push_back(nullptr);
        }
        return a;
    };
    j["means_left"] = means(p.means_left);
    j["means_right"] = means(p.means_right);
    j["counts_left"] = p.counts_left;
    j["counts_right"] = p.counts_right;
    j["midpoints_left"] = p.midpoints_left;
    j["midpoints_right"] = p.midpoints_right;
    auto weights = [](const std::optional<BinPartition::ImpliedWeights>& w) -> Json {
        if (!w) return nullptr;
        return Json{{"bias", w->bias}, {"variance", w->variance}};
    };
    j["implied_weights_left"] = weights(p.implied_weights_left);
    j["implied_weights_right"] = weights(p.implied_weights_right);
    return j;
}

inline Json to_json(const RdPlotData& pd) {
    Json j;
    j["schema"] = "rdtk/plot/1";
    j["cutoff"] = pd.cutoff;
    j["partition"] = to_json(pd.partition);
    j["global_order"] = pd.global_order;
    j["fit_kernel"] = kernel_name(pd.fit_kernel);
    j["fit_h_left"] = pd.fit_h_left;
    j["fit_h_right"] = pd.fit_h_right;
    j["coef_left"] = pd.coef_left;
    j["coef_right"] = pd.coef_right;
    j["n_left"] = pd.n_left;
    j["n_right"] = pd.n_right;
    auto curve = [](const std::vector<std::pair<double, double>>& c) {
        Json a = Json::array();
        for (const auto& [x, y] : c) a.push_back(Json{x, y});
        return a;
    };
    j["curve_left"] = curve(pd.curve_left);
    j["curve_right"] = curve(pd.curve_right);
    return j;
}

inline RdPlotData plot_from_json(const Json& j) {
    RdPlotData pd;
    pd.cutoff = j.at("cutoff").get<double>();
    const Json& p = j.at("partition");
    pd.partition.scheme = p.at("scheme").get<std::string>() == "es" ? BinScheme::es : BinScheme::qs;
    const std::string crit = p.at("selector").get<std::string>();
    pd.partition.selector = crit == "manual" ? BinCriterion::manual
                            : crit == "imse" ? BinCriterion::imse
                                             : BinCriterion::mv;
    pd.partition.j_left = p.at("j_left").get<std::size_t>();
    pd.partition.j_right = p.at("j_right").get<std::size_t>();
    pd.partition.edges_left = p.at("edges_left").get<std::vector<double>>();
    pd.partition.edges_right = p.at("edges_right").get<std::vector<double>>();
    auto means = [](const Json& a) {
        std::vector<std::optional<double>> v;
        for (const auto& m : a) {
            if (m.is_null()) v.push_back(std::nullopt);
            else v.push_back(m.get<double>());
        }
        return v;
    };
    pd.partition.means_left = means(p.at("means_left"));
    pd.partition.means_right = means(p.at("means_right"));
    pd.partition.counts_left = p.at("counts_left").get<std::vector<std::size_t>>();
    pd.partition.counts_right = p.at("counts_right").get<std::vector<std::size_t>>();
    pd.partition.midpoints_left = p.at("midpoints_left").get<std::vector<double>>();
    pd.partition.midpoints_right = p.at("midpoints_right").get<std::vector<double>>();
    auto weights = [](const Json& w) -> std::optional<BinPartition::ImpliedWeights> {
        if (w.is_null()) return std::nullopt;
        return BinPartition::ImpliedWeights{w.at("bias").get<double>(),
                                            w.at("variance").get<double>()};
    };
    pd.partition.implied_weights_left = weights(p.at("implied_weights_left"));
    pd.partition.implied_weights_right = weights(p.at("implied_weights_right"));
    pd.global_order = j.at("global_order").get<int>();
    pd.fit_kernel = kernel_from_name(j.at("fit_kernel").get<std::string>());
    pd.fit_h_left = j.at("fit_h_left").get<double>();
    pd.fit_h_right = j.at("fit_h_right").get<double>();
    pd.coef_left = j.at("coef_left").get<std::vector<double>>();
    pd.coef_right = j.at("coef_right").get<std::vector<double>>();
    pd.n_left = j.at("n_left").get<std::size_t>();
    pd.n_right = j.at("n_right").get<std::size_t>();
    auto curve = [](const Json& a) {
        std::vector<std::pair<double, double>> c;
        for (const auto& pt : a) c.emplace_back(pt.at(0).get<double>(), pt.at(1).get<double>());
        return c;
    };
    pd.curve_left = curve(j.at("curve_left"));
    pd.curve_right = curve(j.at("curve_right"));
    return pd;
}

inline Json to_json(const DensityTestResult& r) {
    Json j;
    j["statistic"] = r.statistic;
    j["p_value"] = r.p_value;
    j["f_left"] = r.f_left;
    j["f_right"] = r.f_right;
    j["se_diff"] = r.se_diff;
    j["h_left"] = r.h_left;
    j["h_right"] = r.h_right;
    j["n_left"] = r.n_left;
    j["n_right"] = r.n_right;
    if (!r.curve.empty()) {
        Json a = Json::array();
        for (const auto& pt : r.curve)
            a.push_back(Json{{"x", pt.x}, {"f", pt.f}, {"lo", pt.lo}, {"hi", pt.hi}});
        j["curve"] = a;
    }
    return j;
}

inline Json to_json(const BinomialResult& r) {
    return Json{{"n_left", r.n_left}, {"n_right", r.n_right}, {"p_value", r.p_value}};
}

inline Json to_json(const FalsificationReport& rep) {
    Json j;
    j["kind"] = falsification_name(rep.kind);
    j["verdict_notes"] = rep.verdict_notes;
    Json rows = Json::array();
    for (const auto& row : rep.rows) {
        Json r;
        r["label"] = row.label;
        r["ok"] = row.ok;
        if (!row.ok) r["error"] = row.error;
        if (row.estimate) r["estimate"] = to_json(*row.estimate);
        rows.push_back(r);
    }
    j["rows"] = rows;
    return j;
}

inline Json to_json(const ExperimentSummary& s) {
    Json j;
    j["replications"] = s.replications;
    j["failures"] = s.failures;
    j["true_tau"] = s.true_tau;
    j["mean_tau"] = s.mean_tau;
    j["bias"] = s.bias;
    j["sd"] = s.sd;
    j["rmse"] = s.rmse;
    j["coverage_conventional"] = s.coverage_conventional;
    j["coverage_biascorrected"] = s.coverage_biascorrected;
    j["coverage_robust"] = s.coverage_robust;
    j["mean_h_left"] = s.mean_h_left;
    j["mean_h_right"] = s.mean_h_right;
    j["mean_ci_length_conventional"] = s.mean_ci_length_conventional;
    j["mean_ci_length_robust"] = s.mean_ci_length_robust;
    return j;
}

inline Json to_json(const DgpSpec& s) {
    Json j;
    j["name"] = s.name;
    j["score_dist"] = s.score_dist == DgpSpec::ScoreDist::uniform ? "uniform" : "beta24";
    j["score_lo"] = s.score_lo;
    j["score_hi"] = s.score_hi;
    j["cutoff"] = s.cutoff;
    j["mu_left"] = s.mu_left;
    j["mu_right"] = s.mu_right;
    j["tau"] = s.tau;
    j["sigma"] = s.sigma;
    j["sigma_slope"] = s.sigma_slope;
    j["n_clusters"] = s.n_clusters;
    j["icc"] = s.icc;
    j["manip_mass"] = s.manip_mass;
    j["manip_width"] = s.manip_width;
    j["seed"] = s.seed;
    j["rng"] = CounterRng::name;
    return j;
}

// Writes a plot in the requested format; json round-trips through
// plot_from_json bit-identically.
inline void export_plot(const RdPlotData& pd, PlotFormat format, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw_data("cannot write file: " + path);
    switch (format) {
        case PlotFormat::json:
            out << to_json(pd).dump(2) << '\n';
            break;
        case PlotFormat::csv:
            out << detail::csv_plot(pd);
            break;
        case PlotFormat::svg:
            out << detail::svg_plot(pd);
            break;
    }
    if (!out) throw_data("failed while writing: " + path);
}

} // namespace rdtk
