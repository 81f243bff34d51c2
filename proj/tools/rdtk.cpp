// Command-line front end: estimate | bwselect | plot | density | falsify |
// simulate. Every run emits a JSON document with a manifest (resolved
// configuration, input digest, version); tables printed to stdout are
// projections of the JSON, never separately computed.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rdtk/rdtk.hpp"

namespace {

using rdtk::Json;

struct DataArgs {
    std::string path;
    std::string score_col;
    std::string outcome_col;
    std::vector<std::string> covariate_cols;
    std::string cluster_col;
    double cutoff = 0.0;
};

struct EstArgs {
    int p = 1;
    int q = -1; // resolved to p+1 when unset
    std::string kernel = "triangular";
    std::string bwselect = "mserd";
    std::vector<double> h, b;
    double rho = 0.0;
    double scaleregul = 1.0;
    std::string vce = "nn";
    int nnmatch = 3;
    double level = 95.0;
    bool use_covariates = false;
};

struct OutArgs {
    std::string out;
    bool quiet = false;
    bool all = false;
};

std::string default_out_dir() {
    if (const char* env = std::getenv("RDTK_OUT_DIR")) return env;
    return ".";
}

std::string out_path(const OutArgs& oa, const std::string& stem, const std::string& ext) {
    if (!oa.out.empty()) return oa.out;
    return (std::filesystem::path(default_out_dir()) / (stem + ext)).string();
}

std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) rdtk::throw_data("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    return "fnv1a64:" + rdtk::hex64(rdtk::fnv1a64(bytes));
}

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

void add_data_options(CLI::App* cmd, DataArgs& da) {
    cmd->add_option("--data", da.path, "input CSV file")->required();
    cmd->add_option("--score", da.score_col, "score (running variable) column")->required();
    cmd->add_option("--outcome", da.outcome_col, "outcome column");
    cmd->add_option("--covs", da.covariate_cols, "covariate columns")->delimiter(',');
    cmd->add_option("--cluster", da.cluster_col, "cluster label column");
    cmd->add_option("--cutoff,-c", da.cutoff, "cutoff value")->capture_default_str();
}

void add_estimation_options(CLI::App* cmd, EstArgs& ea, bool with_bw = true) {
    cmd->add_option("--p", ea.p, "polynomial order for the point estimate")
        ->capture_default_str()
        ->check(CLI::Range(0, 4));
    cmd->add_option("--q", ea.q, "polynomial order for bias estimation (default p+1)");
    cmd->add_option("--kernel", ea.kernel, "triangular|uniform|epanechnikov")
        ->capture_default_str();
    if (with_bw) {
        cmd->add_option("--bwselect", ea.bwselect,
                        "bandwidth selector (mserd|msetwo|msesum|msecomb1|msecomb2|cerrd|certwo|"
                        "cersum|cercomb1|cercomb2)")
            ->capture_default_str();
        cmd->add_option("--h", ea.h, "manual main bandwidth (one value, or left right)")
            ->expected(1, 2);
        cmd->add_option("--b", ea.b, "manual bias bandwidth (one value, or left right)")
            ->expected(1, 2);
        cmd->add_option("--rho", ea.rho, "force b = h/rho");
    }
    cmd->add_option("--scaleregul", ea.scaleregul, "regularization scale (0 disables)")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--vce", ea.vce, "variance estimator: nn|hc0|hc1|hc2|hc3|cluster")
        ->capture_default_str();
    cmd->add_option("--nnmatch", ea.nnmatch, "neighbors for the nn variance estimator")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--level", ea.level, "confidence level in percent")->capture_default_str();
}

rdtk::LoadReport load_data(const DataArgs& da, bool need_outcome = true) {
    if (need_outcome && da.outcome_col.empty())
        rdtk::throw_usage("--outcome is required for this subcommand");
    rdtk::ColumnMap map;
    map.score = da.score_col;
    map.outcome = da.outcome_col.empty() ? da.score_col : da.outcome_col;
    map.covariates = da.covariate_cols;
    if (!da.cluster_col.empty()) map.cluster = da.cluster_col;
    return rdtk::load_csv(da.path, map, da.cutoff);
}

rdtk::EstimationConfig make_config(const EstArgs& ea, const DataArgs& da) {
    rdtk::EstimationConfig cfg;
    cfg.p = ea.p;
    cfg.q = ea.q >= 0 ? ea.q : ea.p + 1;
    cfg.kernel = rdtk::kernel_from_name(ea.kernel);
    cfg.vce.kind = rdtk::vce_from_name(ea.vce);
    cfg.vce.nn_matches = ea.nnmatch;
    if (!da.cluster_col.empty() && cfg.vce.kind == rdtk::VceKind::nn)
        cfg.vce.kind = rdtk::VceKind::cluster;
    cfg.scale_regul = ea.scaleregul;
    cfg.level = ea.level;
    cfg.with_covariates = ea.use_covariates && !da.covariate_cols.empty();

    if (!ea.h.empty()) {
        if (ea.bwselect != "mserd")
            rdtk::throw_usage("conflicting bandwidth specification: --h with --bwselect");
        cfg.bandwidth.selector = rdtk::BwSelector::manual;
        cfg.bandwidth.h_left = ea.h.front();
        cfg.bandwidth.h_right = ea.h.back();
        if (!ea.b.empty()) {
            cfg.bandwidth.b_left = ea.b.front();
            cfg.bandwidth.b_right = ea.b.back();
        }
    } else {
        if (!ea.b.empty()) rdtk::throw_usage("--b requires --h");
        cfg.bandwidth.selector = rdtk::selector_from_name(ea.bwselect);
    }
    if (ea.rho > 0.0) cfg.bandwidth.rho = ea.rho;
    return cfg;
}

Json config_json(const rdtk::EstimationConfig& cfg) {
    Json j;
    j["p"] = cfg.p;
    j["q"] = cfg.q;
    j["kernel"] = rdtk::kernel_name(cfg.kernel);
    j["vce"] = rdtk::vce_name(cfg.vce.kind);
    j["nnmatch"] = cfg.vce.nn_matches;
    j["bwselect"] = rdtk::selector_name(cfg.bandwidth.selector);
    j["h_left"] = cfg.bandwidth.h_left ? Json(*cfg.bandwidth.h_left) : Json(nullptr);
    j["h_right"] = cfg.bandwidth.h_right ? Json(*cfg.bandwidth.h_right) : Json(nullptr);
    j["b_left"] = cfg.bandwidth.b_left ? Json(*cfg.bandwidth.b_left) : Json(nullptr);
    j["b_right"] = cfg.bandwidth.b_right ? Json(*cfg.bandwidth.b_right) : Json(nullptr);
    j["rho"] = cfg.bandwidth.rho ? Json(*cfg.bandwidth.rho) : Json(nullptr);
    j["scaleregul"] = cfg.scale_regul;
    j["level"] = cfg.level;
    j["with_covariates"] = cfg.with_covariates;
    return j;
}

Json make_manifest(const std::string& subcommand, const DataArgs* da, const Json& config,
                   std::optional<std::uint64_t> seed = std::nullopt) {
    Json m;
    m["tool"] = "rdtk";
    m["version"] = rdtk::version;
    m["subcommand"] = subcommand;
    if (da) {
        Json in;
        in["path"] = da->path;
        in["digest"] = file_digest(da->path);
        in["score"] = da->score_col;
        in["outcome"] = da->outcome_col;
        in["covariates"] = da->covariate_cols;
        in["cluster"] = da->cluster_col.empty() ? Json(nullptr) : Json(da->cluster_col);
        in["cutoff"] = da->cutoff;
        m["input"] = in;
    }
    m["config"] = config;
    if (seed) m["seed"] = *seed;
    m["timestamp"] = timestamp_utc();
    return m;
}

void write_doc(const Json& doc, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) rdtk::throw_data("cannot write file: " + path);
    out << doc.dump(2) << '\n';
    if (!out) rdtk::throw_data("failed while writing: " + path);
}

std::string fmt3(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << v;
    return os.str();
}

std::string fmt4(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << v;
    return os.str();
}

// All table values are read back out of the JSON document.
void print_estimate_table(std::ostream& os, const Json& doc, bool all) {
    const Json& e = doc.at("estimate");
    const Json& bw = e.at("bandwidths");
    os << "Sharp RD estimate (cutoff " << doc.at("manifest").at("input").at("cutoff") << ")\n";
    os << "  n = " << (e.at("n_left").get<std::size_t>() + e.at("n_right").get<std::size_t>())
       << " (left " << e.at("n_left").get<std::size_t>() << ", right "
       << e.at("n_right").get<std::size_t>() << ")"
       << "   effective " << e.at("effective_n_left").get<std::size_t>() << " / "
       << e.at("effective_n_right").get<std::size_t>() << "\n";
    os << "  kernel = " << doc.at("manifest").at("config").at("kernel").get<std::string>()
       << "   vce = " << e.at("vce").get<std::string>()
       << "   p = " << doc.at("manifest").at("config").at("p").get<int>()
       << "   q = " << doc.at("manifest").at("config").at("q").get<int>() << "\n";
    os << "  bandwidth h = [" << fmt3(bw.at("h_left").get<double>()) << ", "
       << fmt3(bw.at("h_right").get<double>()) << "]   b = ["
       << fmt3(bw.at("b_left").get<double>()) << ", " << fmt3(bw.at("b_right").get<double>())
       << "]   (" << bw.at("selector").get<std::string>() << ")\n";
    os << "  mu(left) = " << fmt3(e.at("mu_left").get<double>())
       << "   mu(right) = " << fmt3(e.at("mu_right").get<double>()) << "\n\n";

    const double level = e.at("level").get<double>();
    os << "  Method            Coef.        SE         P>|z|     [" << level << "% CI]\n";
    auto row = [&](const char* name, double coef, double se, double p, const Json& ci) {
        os << "  " << std::left << std::setw(16) << name << "  " << std::setw(9)
           << fmt3(coef) << "  " << std::setw(9) << fmt3(se) << "  " << std::setw(8) << fmt4(p)
           << "  [" << fmt3(ci.at(0).get<double>()) << ", " << fmt3(ci.at(1).get<double>())
           << "]\n";
    };
    row("Conventional", e.at("tau_hat").get<double>(), e.at("se_conventional").get<double>(),
        e.at("p_conventional").get<double>(), e.at("ci_conventional"));
    if (all)
        row("Bias-Corrected", e.at("tau_bc").get<double>(), e.at("se_conventional").get<double>(),
            e.at("p_conventional").get<double>(), e.at("ci_biascorrected"));
    row("Robust", e.at("tau_bc").get<double>(), e.at("se_robust").get<double>(),
        e.at("p_robust").get<double>(), e.at("ci_robust"));
    if (e.contains("warnings"))
        for (const auto& w : e.at("warnings")) os << "  note: " << w.get<std::string>() << "\n";
}

int cmd_estimate(const DataArgs& da, const EstArgs& ea, const OutArgs& oa) {
    const rdtk::LoadReport rep = load_data(da);
    const rdtk::EstimationConfig cfg = make_config(ea, da);
    const rdtk::RdEstimate est = rdtk::analyze(rep.data, cfg);

    Json doc;
    doc["schema"] = rdtk::result_schema;
    doc["manifest"] = make_manifest("estimate", &da, config_json(cfg));
    doc["load"] = Json{{"rows_read", rep.rows_read}, {"rows_dropped", rep.rows_dropped}};
    doc["estimate"] = rdtk::to_json(est);
    const std::string path = out_path(oa, "estimate", ".json");
    write_doc(doc, path);
    if (!oa.quiet) {
        print_estimate_table(std::cout, doc, oa.all);
        std::cout << "\nresult written to " << path << "\n";
    }
    return 0;
}

int cmd_bwselect(const DataArgs& da, const EstArgs& ea, const OutArgs& oa, bool all_selectors) {
    const rdtk::LoadReport rep = load_data(da);
    rdtk::EstimationConfig cfg = make_config(ea, da);
    if (cfg.bandwidth.selector == rdtk::BwSelector::manual)
        rdtk::throw_usage("bwselect: manual bandwidths make no sense here");

    Json doc;
    doc["schema"] = rdtk::result_schema;
    doc["manifest"] = make_manifest("bwselect", &da, config_json(cfg));
    doc["load"] = Json{{"rows_read", rep.rows_read}, {"rows_dropped", rep.rows_dropped}};

    std::vector<rdtk::BwSelector> sels;
    if (all_selectors) {
        sels = {rdtk::BwSelector::mserd,    rdtk::BwSelector::msetwo,
                rdtk::BwSelector::msesum,   rdtk::BwSelector::msecomb1,
                rdtk::BwSelector::msecomb2, rdtk::BwSelector::cerrd,
                rdtk::BwSelector::certwo,   rdtk::BwSelector::cersum,
                rdtk::BwSelector::cercomb1, rdtk::BwSelector::cercomb2};
    } else {
        sels = {cfg.bandwidth.selector};
    }
    Json rows = Json::array();
    for (rdtk::BwSelector s : sels) {
        const rdtk::BandwidthResult bw = rdtk::select_bandwidths(
            rep.data, cfg.p, cfg.q, cfg.kernel, s, cfg.scale_regul, cfg.vce);
        rows.push_back(rdtk::to_json(bw, s == sels.front()));
    }
    doc["bandwidths"] = rows;
    const std::string path = out_path(oa, "bwselect", ".json");
    write_doc(doc, path);
    if (!oa.quiet) {
        std::cout << "Bandwidth selectors (p = " << cfg.p << ", q = " << cfg.q << ", kernel "
                  << rdtk::kernel_name(cfg.kernel) << ")\n\n";
        std::cout << "  Selector     h(left)    h(right)   b(left)    b(right)\n";
        for (const auto& r : rows) {
            std::cout << "  " << std::left << std::setw(11) << r.at("selector").get<std::string>()
                      << "  " << std::setw(9) << fmt3(r.at("h_left").get<double>()) << "  "
                      << std::setw(9) << fmt3(r.at("h_right").get<double>()) << "  "
                      << std::setw(9) << fmt3(r.at("b_left").get<double>()) << "  "
                      << std::setw(9) << fmt3(r.at("b_right").get<double>()) << "\n";
        }
        std::cout << "\nresult written to " << path << "\n";
    }
    return 0;
}

int cmd_plot(const DataArgs& da, const EstArgs& ea, const OutArgs& oa,
             const std::string& binselect, std::vector<std::size_t> nbins, int plot_order,
             double scale, const std::string& format_name) {
    const rdtk::LoadReport rep = load_data(da);
    rdtk::PlotOptions opt;
    if (binselect == "es") {
        opt.scheme = rdtk::BinScheme::es;
        opt.criterion = rdtk::BinCriterion::imse;
    } else if (binselect == "qs") {
        opt.scheme = rdtk::BinScheme::qs;
        opt.criterion = rdtk::BinCriterion::imse;
    } else if (binselect == "esmv") {
        opt.scheme = rdtk::BinScheme::es;
        opt.criterion = rdtk::BinCriterion::mv;
    } else if (binselect == "qsmv") {
        opt.scheme = rdtk::BinScheme::qs;
        opt.criterion = rdtk::BinCriterion::mv;
    } else {
        rdtk::throw_usage("unknown --binselect '" + binselect + "' (es|qs|esmv|qsmv)");
    }
    if (!nbins.empty()) {
        opt.nbins_left = nbins.front();
        opt.nbins_right = nbins.back();
    }
    opt.scale = scale;
    opt.global_order = plot_order;
    opt.fit_kernel = rdtk::kernel_from_name(ea.kernel);
    if (!ea.h.empty()) {
        opt.fit_h_left = ea.h.front();
        opt.fit_h_right = ea.h.back();
        if (opt.global_order == 4 && ea.p != 1) opt.global_order = ea.p;
    }
    const rdtk::RdPlotData pd = rdtk::build_plot(rep.data, opt);

    Json cfg;
    cfg["binselect"] = binselect;
    cfg["nbins"] = nbins;
    cfg["plot_order"] = opt.global_order;
    cfg["scale"] = scale;
    cfg["kernel"] = rdtk::kernel_name(opt.fit_kernel);
    cfg["h_left"] = opt.fit_h_left ? Json(*opt.fit_h_left) : Json(nullptr);
    cfg["h_right"] = opt.fit_h_right ? Json(*opt.fit_h_right) : Json(nullptr);
    cfg["format"] = format_name;

    Json doc;
    doc["schema"] = rdtk::result_schema;
    doc["manifest"] = make_manifest("plot", &da, cfg);
    doc["load"] = Json{{"rows_read", rep.rows_read}, {"rows_dropped", rep.rows_dropped}};
    doc["plot"] = rdtk::to_json(pd);
    const std::string json_path = out_path(oa, "plot", ".json");
    write_doc(doc, json_path);

    const rdtk::PlotFormat format = rdtk::plot_format_from_name(format_name);
    std::string extra_path;
    if (format != rdtk::PlotFormat::json) {
        const std::string ext = format == rdtk::PlotFormat::csv ? ".csv" : ".svg";
        extra_path = oa.out.empty()
                         ? out_path(oa, "plot", ext)
                         : std::filesystem::path(oa.out).replace_extension(ext).string();
        rdtk::export_plot(pd, format, extra_path);
    }
    if (!oa.quiet) {
        std::cout << "RD plot: scheme " << rdtk::scheme_name(pd.partition.scheme) << ", bins ("
                  << pd.partition.j_left << ", " << pd.partition.j_right << "), selector "
                  << rdtk::criterion_name(pd.partition.selector) << "\n";
        std::cout << "  overlay order " << pd.global_order << ", curve gap at cutoff = "
                  << fmt3(pd.curve_gap_at_cutoff()) << "\n";
        std::cout << "result written to " << json_path;
        if (!extra_path.empty()) std::cout << " and " << extra_path;
        std::cout << "\n";
    }
    return 0;
}

int cmd_density(const DataArgs& da, const EstArgs& ea, const OutArgs& oa, bool with_curve) {
    DataArgs da2 = da;
    const rdtk::LoadReport rep = load_data(da2, /*need_outcome=*/false);
    rdtk::DensityTestOptions opt;
    opt.kernel = rdtk::kernel_from_name(ea.kernel);
    if (!ea.h.empty()) {
        opt.h_left = ea.h.front();
        opt.h_right = ea.h.back();
    }
    opt.with_curve = with_curve;
    const rdtk::DensityTestResult res = rdtk::density_test(rep.data, opt);

    Json cfg;
    cfg["kernel"] = rdtk::kernel_name(opt.kernel);
    cfg["h_left"] = opt.h_left ? Json(*opt.h_left) : Json(nullptr);
    cfg["h_right"] = opt.h_right ? Json(*opt.h_right) : Json(nullptr);
    cfg["curve"] = with_curve;

    Json doc;
    doc["schema"] = rdtk::result_schema;
    doc["manifest"] = make_manifest("density", &da, cfg);
    doc["load"] = Json{{"rows_read", rep.rows_read}, {"rows_dropped", rep.rows_dropped}};
    doc["density"] = rdtk::to_json(res);
    const std::string path = out_path(oa, "density", ".json");
    write_doc(doc, path);
    if (!oa.quiet) {
        std::cout << "Density continuity test\n";
        std::cout << "  f(left) = " << fmt4(res.f_left) << "   f(right) = " << fmt4(res.f_right)
                  << "   h = [" << fmt3(res.h_left) << ", " << fmt3(res.h_right) << "]\n";
        std::cout << "  T = " << fmt4(res.statistic) << "   p = " << fmt4(res.p_value) << "\n";
        std::cout << "result written to " << path << "\n";
    }
    return 0;
}

void print_report_table(std::ostream& os, const Json& rep) {
    os << "  [" << rep.at("kind").get<std::string>() << "]\n";
    os << "  Case                 h        Coef.      Robust p   [95% CI]          eff n\n";
    for (const auto& row : rep.at("rows")) {
        os << "  " << std::left << std::setw(18) << row.at("label").get<std::string>() << "  ";
        if (!row.at("ok").get<bool>()) {
            os << "error: " << row.at("error").get<std::string>() << "\n";
            continue;
        }
        const Json& e = row.at("estimate");
        const Json& ci = e.at("ci_robust");
        os << std::setw(7) << fmt3(e.at("bandwidths").at("h_left").get<double>()) << "  "
           << std::setw(9) << fmt3(e.at("tau_hat").get<double>()) << "  " << std::setw(9)
           << fmt4(e.at("p_robust").get<double>()) << "  [" << fmt3(ci.at(0).get<double>()) << ", "
           << fmt3(ci.at(1).get<double>()) << "]   "
           << e.at("effective_n_left").get<std::size_t>() << "+"
           << e.at("effective_n_right").get<std::size_t>() << "\n";
    }
    os << "  note: " << rep.at("verdict_notes").get<std::string>() << "\n";
}

int cmd_falsify(const DataArgs& da, const EstArgs& ea, const OutArgs& oa, const std::string& mode,
                std::vector<double> placebo_list, std::vector<double> donut_list,
                std::vector<double> grid, double window_halfwidth, double prob) {
    const rdtk::LoadReport rep = load_data(da);
    const rdtk::RdData& data = rep.data;
    rdtk::EstimationConfig cfg = make_config(ea, da);
    cfg.with_covariates = false;

    Json cfgj = config_json(cfg);
    cfgj["mode"] = mode;
    Json doc;
    doc["schema"] = rdtk::result_schema;
    doc["manifest"] = make_manifest("falsify", &da, cfgj);
    doc["load"] = Json{{"rows_read", rep.rows_read}, {"rows_dropped", rep.rows_dropped}};
    Json reports = Json::object();

    // Data-scaled defaults for the case lists.
    std::vector<double> absdist;
    for (double x : data.scores) absdist.push_back(std::abs(x - data.cutoff));
    std::sort(absdist.begin(), absdist.end());
    auto dist_q = [&](double q) { return rdtk::quantile_sorted(absdist, q); };

    const bool all = mode == "all";
    if ((all && data.covariates) || mode == "balance") {
        const auto bal = rdtk::covariate_balance(data, {}, cfg);
        reports["covariate_balance"] = rdtk::to_json(bal);
    }
    if (all || mode == "density") {
        Json d = rdtk::to_json(rdtk::density_test(data));
        reports["density"] = d;
    }
    if (all || mode == "binomial") {
        const double hw = window_halfwidth > 0.0 ? window_halfwidth : dist_q(0.05);
        Json arr = Json::array();
        for (double f : {0.5, 1.0, 2.0}) {
            const auto bn = rdtk::binomial_window(data, hw * f, prob);
            Json b = rdtk::to_json(bn);
            b["half_width"] = hw * f;
            arr.push_back(b);
        }
        reports["binomial"] = arr;
    }
    if (all || mode == "placebo") {
        std::vector<double> cuts = placebo_list;
        if (cuts.empty()) {
            const double step = dist_q(0.10);
            cuts = {data.cutoff - 2.0 * step, data.cutoff - step, data.cutoff,
                    data.cutoff + step, data.cutoff + 2.0 * step};
        }
        reports["placebo"] = rdtk::to_json(rdtk::placebo_cutoffs(data, cuts, cfg));
    }
    if (all || mode == "donut") {
        std::vector<double> radii = donut_list;
        if (radii.empty()) radii = {0.0, dist_q(0.0025), dist_q(0.005), dist_q(0.01)};
        reports["donut"] = rdtk::to_json(rdtk::donut(data, radii, cfg));
    }
    if (all || mode == "sensitivity") {
        reports["sensitivity"] = rdtk::to_json(rdtk::bandwidth_sensitivity(data, grid, cfg));
    }
    if (reports.empty()) rdtk::throw_usage("falsify: unknown --mode '" + mode + "'");

    doc["falsification"] = reports;
    const std::string path = out_path(oa, "falsify", ".json");
    write_doc(doc, path);
    if (!oa.quiet) {
        std::cout << "Falsification battery (" << mode << ")\n\n";
        for (const auto& [key, repj] : reports.items()) {
            if (key == "density") {
                std::cout << "  [density]  T = " << fmt4(repj.at("statistic").get<double>())
                          << "  p = " << fmt4(repj.at("p_value").get<double>()) << "\n\n";
            } else if (key == "binomial") {
                std::cout << "  [binomial]\n";
                for (const auto& b : repj)
                    std::cout << "    |X-c| <= " << fmt3(b.at("half_width").get<double>()) << " : ("
                              << b.at("n_left").get<std::size_t>() << ", "
                              << b.at("n_right").get<std::size_t>() << ")  p = "
                              << fmt4(b.at("p_value").get<double>()) << "\n";
                std::cout << "\n";
            } else {
                print_report_table(std::cout, repj);
                std::cout << "\n";
            }
        }
        std::cout << "result written to " << path << "\n";
    }
    return 0;
}

int cmd_simulate(const EstArgs& ea, const OutArgs& oa, const std::string& preset,
                 const std::string& spec_file, std::size_t n, std::size_t reps,
                 std::uint64_t seed, const std::string& write_data) {
    rdtk::DgpSpec spec = rdtk::dgp_preset(preset);
    if (!spec_file.empty()) {
        std::ifstream in(spec_file);
        if (!in) rdtk::throw_data("cannot open spec file: " + spec_file);
        Json j = Json::parse(in, nullptr, true, true);
        if (j.contains("name")) spec = rdtk::dgp_preset(j.at("name").get<std::string>());
        if (j.contains("score_dist"))
            spec.score_dist = j.at("score_dist").get<std::string>() == "uniform"
                                  ? rdtk::DgpSpec::ScoreDist::uniform
                                  : rdtk::DgpSpec::ScoreDist::beta24;
        if (j.contains("score_lo")) spec.score_lo = j.at("score_lo").get<double>();
        if (j.contains("score_hi")) spec.score_hi = j.at("score_hi").get<double>();
        if (j.contains("cutoff")) spec.cutoff = j.at("cutoff").get<double>();
        if (j.contains("mu_left")) spec.mu_left = j.at("mu_left").get<std::vector<double>>();
        if (j.contains("mu_right")) spec.mu_right = j.at("mu_right").get<std::vector<double>>();
        if (j.contains("tau")) spec.tau = j.at("tau").get<double>();
        if (j.contains("sigma")) spec.sigma = j.at("sigma").get<double>();
        if (j.contains("sigma_slope")) spec.sigma_slope = j.at("sigma_slope").get<double>();
        if (j.contains("n_clusters")) spec.n_clusters = j.at("n_clusters").get<std::size_t>();
        if (j.contains("icc")) spec.icc = j.at("icc").get<double>();
        if (j.contains("manip_mass")) spec.manip_mass = j.at("manip_mass").get<double>();
        if (j.contains("manip_width")) spec.manip_width = j.at("manip_width").get<double>();
    }
    spec.seed = seed;

    const rdtk::EstimationConfig cfg = make_config(ea, DataArgs{});

    Json cfgj = config_json(cfg);
    cfgj["preset"] = preset;
    cfgj["n"] = n;
    cfgj["replications"] = reps;
    cfgj["dgp"] = rdtk::to_json(spec);

    Json doc;
    doc["schema"] = rdtk::result_schema;
    doc["manifest"] = make_manifest("simulate", nullptr, cfgj, seed);

    if (!write_data.empty()) {
        const rdtk::RdData d = rdtk::generate(spec, n, 0);
        std::ofstream out(write_data, std::ios::binary);
        if (!out) rdtk::throw_data("cannot write file: " + write_data);
        out.precision(17);
        out << "X,Y" << (d.clusters ? ",G" : "") << "\n";
        for (std::size_t i = 0; i < d.size(); ++i) {
            out << d.scores[i] << ',' << d.outcomes[i];
            if (d.clusters) out << ',' << (*d.clusters)[i];
            out << "\n";
        }
        doc["data_written"] = write_data;
    }

    const rdtk::ExperimentSummary summary = rdtk::run_experiment(spec, n, reps, cfg);
    doc["summary"] = rdtk::to_json(summary);
    const std::string path = out_path(oa, "simulate", ".json");
    write_doc(doc, path);
    if (!oa.quiet) {
        std::cout << "Monte Carlo: preset " << preset << ", n = " << n << ", reps = " << reps
                  << " (failures " << summary.failures << ")\n";
        std::cout << "  true tau = " << fmt4(summary.true_tau)
                  << "   mean estimate = " << fmt4(summary.mean_tau)
                  << "   bias = " << fmt4(summary.bias) << "   sd = " << fmt4(summary.sd) << "\n";
        std::cout << "  coverage: conventional " << fmt4(summary.coverage_conventional)
                  << "  bias-corrected " << fmt4(summary.coverage_biascorrected) << "  robust "
                  << fmt4(summary.coverage_robust) << "\n";
        std::cout << "  mean h = [" << fmt3(summary.mean_h_left) << ", "
                  << fmt3(summary.mean_h_right) << "]\n";
        std::cout << "result written to " << path << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"continuity-based sharp regression discontinuity toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read options from a key=value file");
    app.fallthrough();

    DataArgs da;
    EstArgs ea;
    OutArgs oa;

    app.add_option("--out,-o", oa.out, "output file path");
    app.add_flag("--quiet", oa.quiet, "suppress the text table");

    auto* est = app.add_subcommand("estimate", "point estimate and inference");
    add_data_options(est, da);
    add_estimation_options(est, ea);
    est->add_flag("--use-covs", ea.use_covariates, "covariate-adjusted estimation with --covs");
    est->add_flag("--all", oa.all, "also print the bias-corrected row");

    bool bw_all = false;
    auto* bws = app.add_subcommand("bwselect", "data-driven bandwidth selection");
    add_data_options(bws, da);
    add_estimation_options(bws, ea);
    bws->add_flag("--all", bw_all, "report every selector");

    std::string binselect = "esmv";
    std::vector<std::size_t> nbins;
    int plot_order = 4;
    double plot_scale = 1.0;
    std::string plot_format = "json";
    auto* plot = app.add_subcommand("plot", "binned means with polynomial overlays");
    add_data_options(plot, da);
    add_estimation_options(plot, ea, /*with_bw=*/false);
    plot->add_option("--h", ea.h, "restrict the overlay fits to a window")->expected(1, 2);
    plot->add_option("--binselect", binselect, "es|qs|esmv|qsmv")->capture_default_str();
    plot->add_option("--nbins", nbins, "manual bin counts (left right)")->expected(1, 2);
    plot->add_option("--plot-order", plot_order, "overlay polynomial order")
        ->capture_default_str()
        ->check(CLI::Range(0, 4));
    plot->add_option("--scale", plot_scale, "multiplier on the selected bin counts")
        ->capture_default_str();
    plot->add_option("--format", plot_format, "json|csv|svg")->capture_default_str();

    bool density_curve = false;
    auto* dens = app.add_subcommand("density", "score density continuity test");
    add_data_options(dens, da);
    add_estimation_options(dens, ea, /*with_bw=*/false);
    dens->add_option("--h", ea.h, "manual density bandwidths")->expected(1, 2);
    dens->add_flag("--curve", density_curve, "also emit density curves with bands");

    std::string fals_mode = "all";
    std::vector<double> placebo_list, donut_list, grid;
    double window_halfwidth = 0.0, prob = 0.5;
    auto* fals = app.add_subcommand("falsify", "validation battery");
    add_data_options(fals, da);
    add_estimation_options(fals, ea);
    fals->add_option("--mode", fals_mode, "balance|density|binomial|placebo|donut|sensitivity|all")
        ->capture_default_str();
    fals->add_option("--placebo-cutoffs", placebo_list, "artificial cutoffs")->delimiter(',');
    fals->add_option("--donut-radii", donut_list, "exclusion radii")->delimiter(',');
    fals->add_option("--grid", grid, "bandwidth grid for sensitivity")->delimiter(',');
    fals->add_option("--window", window_halfwidth, "binomial window half-width");
    fals->add_option("--prob", prob, "binomial success probability")->capture_default_str();

    std::string preset = "curved", spec_file, write_data;
    std::size_t sim_n = 1000, sim_reps = 100;
    std::uint64_t seed = 1;
    auto* sim = app.add_subcommand("simulate", "Monte Carlo experiments");
    add_estimation_options(sim, ea);
    sim->add_option("--preset", preset, "linear|curved|manipulated")->capture_default_str();
    sim->add_option("--spec", spec_file, "DGP spec overrides (JSON)");
    sim->add_option("--n", sim_n, "observations per replication")->capture_default_str();
    sim->add_option("--reps", sim_reps, "replications")->capture_default_str();
    sim->add_option("--seed", seed, "master seed")->capture_default_str();
    sim->add_option("--write-data", write_data, "also write one generated dataset as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 2;
    }

    try {
        if (est->parsed()) return cmd_estimate(da, ea, oa);
        if (bws->parsed()) return cmd_bwselect(da, ea, oa, bw_all);
        if (plot->parsed())
            return cmd_plot(da, ea, oa, binselect, nbins, plot_order, plot_scale, plot_format);
        if (dens->parsed()) return cmd_density(da, ea, oa, density_curve);
        if (fals->parsed())
            return cmd_falsify(da, ea, oa, fals_mode, placebo_list, donut_list, grid,
                               window_halfwidth, prob);
        if (sim->parsed())
            return cmd_simulate(ea, oa, preset, spec_file, sim_n, sim_reps, seed, write_data);
    } catch (const rdtk::Error& e) {
        Json err;
        err["error"] = Json{{"kind", e.kind_name()}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return e.kind() == rdtk::ErrorKind::usage ? 2 : 1;
    } catch (const std::exception& e) {
        Json err;
        err["error"] = Json{{"kind", "internal"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 2;
}
