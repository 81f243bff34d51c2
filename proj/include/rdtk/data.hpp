#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rdtk/error.hpp"

namespace rdtk {

enum class Side { left, right };

inline const char* side_name(Side s) { return s == Side::left ? "left" : "right"; }

// Aligned score/outcome vectors with optional covariates and cluster labels.
// Immutable after construction; the treatment indicator is always derived as
// score >= cutoff and never stored.
struct RdData {
    std::vector<double> scores;
    std::vector<double> outcomes;
    std::optional<Eigen::MatrixXd> covariates; // rows aligned with scores
    std::vector<std::string> covariate_names;
    std::optional<std::vector<std::int64_t>> clusters; // label codes aligned with scores
    std::vector<std::string> cluster_labels;           // code -> original label
    double cutoff = 0.0;

    std::size_t size() const { return scores.size(); }
    bool treated(std::size_t i) const { return scores[i] >= cutoff; }

    void validate() const {
        const std::size_t n = scores.size();
        if (n == 0) throw_data("RdData: zero usable rows");
        if (outcomes.size() != n) throw_data("RdData: scores/outcomes length mismatch");
        if (covariates && static_cast<std::size_t>(covariates->rows()) != n)
            throw_data("RdData: covariate rows misaligned");
        if (clusters && clusters->size() != n) throw_data("RdData: cluster labels misaligned");
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(scores[i]) || !std::isfinite(outcomes[i]))
                throw_data("RdData: non-finite value in scores or outcomes");
        }
    }
};

struct SampleSplit {
    std::size_t n_left = 0;  // observations with X < c
    std::size_t n_right = 0; // observations with X >= c (score == cutoff is treated)
    double support_min = std::numeric_limits<double>::quiet_NaN();
    double support_max = std::numeric_limits<double>::quiet_NaN();
};

inline SampleSplit split(const RdData& data) {
    SampleSplit s;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.treated(i)) ++s.n_right; else ++s.n_left;
        lo = std::min(lo, data.scores[i]);
        hi = std::max(hi, data.scores[i]);
    }
    if (data.size() > 0) {
        s.support_min = lo;
        s.support_max = hi;
    }
    return s;
}

// Restrict to lo <= X <= hi, optionally dropping |X - c| < exclude_radius
// (the donut variant). Covariate/cluster alignment is preserved.
inline RdData window(const RdData& data, double lo, double hi,
                     std::optional<double> exclude_radius = std::nullopt) {
    if (lo > hi) throw_usage("window: lo must be <= hi");
    RdData out;
    out.cutoff = data.cutoff;
    out.covariate_names = data.covariate_names;
    out.cluster_labels = data.cluster_labels;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double x = data.scores[i];
        if (x < lo || x > hi) continue;
        if (exclude_radius && std::abs(x - data.cutoff) < *exclude_radius) continue;
        keep.push_back(i);
    }
    out.scores.reserve(keep.size());
    out.outcomes.reserve(keep.size());
    for (std::size_t i : keep) {
        out.scores.push_back(data.scores[i]);
        out.outcomes.push_back(data.outcomes[i]);
    }
    if (data.covariates) {
        Eigen::MatrixXd z(static_cast<Eigen::Index>(keep.size()), data.covariates->cols());
        for (std::size_t r = 0; r < keep.size(); ++r)
            z.row(static_cast<Eigen::Index>(r)) = data.covariates->row(static_cast<Eigen::Index>(keep[r]));
        out.covariates = std::move(z);
    }
    if (data.clusters) {
        std::vector<std::int64_t> cl;
        cl.reserve(keep.size());
        for (std::size_t i : keep) cl.push_back((*data.clusters)[i]);
        out.clusters = std::move(cl);
    }
    return out;
}

struct ColumnMap {
    std::string score;
    std::string outcome;
    std::vector<std::string> covariates;
    std::optional<std::string> cluster;
};

struct LoadReport {
    RdData data;
    std::size_t rows_read = 0;    // data rows in the file (excluding header)
    std::size_t rows_dropped = 0; // rows with a missing mapped field
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') { cur += '"'; ++i; }
                else quoted = false;
            } else cur += c;
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline bool is_missing_token(const std::string& t) {
    if (t.empty()) return true;
    return t == "NA" || t == "na" || t == "NaN" || t == "nan" || t == "." || t == "NULL";
}

// Parses a numeric cell; empty/NA-style tokens count as missing, anything
// else non-numeric is a hard error.
inline std::optional<double> parse_cell(const std::string& raw, const std::string& column,
                                        std::size_t row) {
    const std::string t = trim(raw);
    if (is_missing_token(t)) return std::nullopt;
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(t, &pos);
    } catch (const std::exception&) {
        throw_data("non-numeric cell '" + t + "' in column '" + column + "' at data row " +
                   std::to_string(row));
    }
    if (pos != t.size())
        throw_data("non-numeric cell '" + t + "' in column '" + column + "' at data row " +
                   std::to_string(row));
    if (!std::isfinite(v)) return std::nullopt;
    return v;
}

} // namespace detail

// Loads a header-ful comma-separated file, applying listwise deletion over
// the mapped columns only. Rows missing any mapped field are dropped and
// counted in the report.
inline LoadReport load_csv(const std::string& path, const ColumnMap& map, double cutoff) {
    std::ifstream in(path);
    if (!in) throw_data("cannot open file: " + path);

    std::string header_line;
    if (!std::getline(in, header_line)) throw_data("zero usable rows in " + path);
    // Strip a UTF-8 BOM if present.
    if (header_line.size() >= 3 && header_line.compare(0, 3, "\xEF\xBB\xBF") == 0)
        header_line.erase(0, 3);
    const std::vector<std::string> header = detail::split_csv_line(header_line);

    auto column_index = [&](const std::string& name) -> std::size_t {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (detail::trim(header[i]) == name) return i;
        throw_data("missing column '" + name + "' in " + path);
    };

    const std::size_t score_col = column_index(map.score);
    const std::size_t outcome_col = column_index(map.outcome);
    std::vector<std::size_t> cov_cols;
    for (const auto& c : map.covariates) cov_cols.push_back(column_index(c));
    std::optional<std::size_t> cluster_col;
    if (map.cluster) cluster_col = column_index(*map.cluster);

    LoadReport rep;
    rep.data.cutoff = cutoff;
    rep.data.covariate_names = map.covariates;
    std::vector<std::vector<double>> cov_values(cov_cols.size());
    std::vector<std::int64_t> cluster_codes;
    std::map<std::string, std::int64_t> cluster_code_of;

    std::string line;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        ++rep.rows_read;
        const std::vector<std::string> f = detail::split_csv_line(line);
        auto cell = [&](std::size_t col) -> std::string {
            return col < f.size() ? f[col] : std::string();
        };

        const auto x = detail::parse_cell(cell(score_col), map.score, rep.rows_read);
        const auto y = detail::parse_cell(cell(outcome_col), map.outcome, rep.rows_read);
        std::vector<double> zrow(cov_cols.size());
        bool missing = !x || !y;
        for (std::size_t j = 0; j < cov_cols.size() && !missing; ++j) {
            const auto z = detail::parse_cell(cell(cov_cols[j]), map.covariates[j], rep.rows_read);
            if (!z) missing = true;
            else zrow[j] = *z;
        }
        std::string cluster_label;
        if (cluster_col && !missing) {
            cluster_label = detail::trim(cell(*cluster_col));
            if (detail::is_missing_token(cluster_label)) missing = true;
        }
        if (missing) {
            ++rep.rows_dropped;
            continue;
        }

        rep.data.scores.push_back(*x);
        rep.data.outcomes.push_back(*y);
        for (std::size_t j = 0; j < cov_cols.size(); ++j) cov_values[j].push_back(zrow[j]);
        if (cluster_col) {
            auto [it, inserted] = cluster_code_of.try_emplace(
                cluster_label, static_cast<std::int64_t>(cluster_code_of.size()));
            if (inserted) rep.data.cluster_labels.push_back(cluster_label);
            cluster_codes.push_back(it->second);
        }
    }

    if (rep.data.scores.empty()) throw_data("zero usable rows in " + path);
    if (!cov_cols.empty()) {
        Eigen::MatrixXd z(static_cast<Eigen::Index>(rep.data.scores.size()),
                          static_cast<Eigen::Index>(cov_cols.size()));
        for (std::size_t j = 0; j < cov_cols.size(); ++j)
            for (std::size_t i = 0; i < cov_values[j].size(); ++i)
                z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cov_values[j][i];
        rep.data.covariates = std::move(z);
    }
    if (cluster_col) rep.data.clusters = std::move(cluster_codes);
    rep.data.validate();
    return rep;
}

} // namespace rdtk
