#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rdtk/data.hpp"
#include "rdtk/error.hpp"
#include "rdtk/inference.hpp"
#include "rdtk/mathutil.hpp"
#include "rdtk/parallel.hpp"

namespace rdtk {

// Counter-based generator ("splitmix64-ctr/v1"): every draw is a pure
// function of (key, counter), so parallel replications with per-replication
// keys are order-independent and scheduling cannot change results.
class CounterRng {
public:
    static constexpr const char* name = "splitmix64-ctr/v1";

    explicit CounterRng(std::uint64_t key) : key_(key) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static CounterRng for_replication(std::uint64_t master_seed, std::uint64_t rep) {
        return CounterRng(mix(mix(master_seed) ^ mix(rep + 0x51ed2701a9e3ull)));
    }

    std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * (++counter_)); }

    // Uniform on (0, 1), 53-bit resolution, endpoints excluded.
    double uniform01() {
        const std::uint64_t bits = next_u64() >> 11;
        return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    double normal(double mean_ = 0.0, double sd = 1.0) {
        return mean_ + sd * normal_quantile(uniform01());
    }

    // Beta(k, m+1-k) via the k-th smallest of m uniforms (fixed draw count).
    double beta_order_stat(int k, int m) {
        std::vector<double> u(static_cast<std::size_t>(m));
        for (auto& v : u) v = uniform01();
        std::nth_element(u.begin(), u.begin() + (k - 1), u.end());
        return u[static_cast<std::size_t>(k - 1)];
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

// Data-generating process for Monte Carlo experiments. The jump at the
// cutoff equals tau exactly by construction: the right-side polynomial is
// shifted so that mu_right(c) - mu_left(c) = tau regardless of coefficients.
struct DgpSpec {
    std::string name = "custom";
    enum class ScoreDist { uniform, beta24 } score_dist = ScoreDist::beta24;
    double score_lo = -1.0;
    double score_hi = 1.0;
    double cutoff = 0.0;
    std::vector<double> mu_left{0.0};  // polynomial in x on the control side
    std::vector<double> mu_right{0.0}; // polynomial in x on the treated side
    double tau = 0.0;
    double sigma = 0.1;       // noise sd at the cutoff
    double sigma_slope = 0.0; // sd grows as sigma * (1 + slope * |x - c|)
    std::size_t n_clusters = 0;
    double icc = 0.0; // intra-cluster correlation of the noise
    // Manipulation: mass in (c - width, c) reflected across the cutoff with
    // the given probability.
    double manip_mass = 0.0;
    double manip_width = 0.2;
    std::uint64_t seed = 1;
};

inline DgpSpec dgp_linear() {
    DgpSpec s;
    s.name = "linear";
    s.score_dist = DgpSpec::ScoreDist::uniform;
    s.mu_left = {0.5, 0.8};
    s.mu_right = {0.5, 0.6};
    s.tau = 1.0;
    s.sigma = 0.5;
    return s;
}

inline DgpSpec dgp_curved() {
    DgpSpec s;
    s.name = "curved";
    s.score_dist = DgpSpec::ScoreDist::beta24;
    s.mu_left = {0.48, 1.27, 7.18, 20.21, 21.54};
    s.mu_right = {0.48, 0.84, -3.00, 7.99, -9.01};
    s.tau = 0.04;
    s.sigma = 0.1295;
    return s;
}

inline DgpSpec dgp_manipulated() {
    DgpSpec s;
    s.name = "manipulated";
    s.score_dist = DgpSpec::ScoreDist::uniform;
    s.mu_left = {0.0};
    s.mu_right = {0.0};
    s.tau = 0.0;
    s.sigma = 0.5;
    s.manip_mass = 0.2;
    s.manip_width = 0.2;
    return s;
}

inline DgpSpec dgp_preset(const std::string& name) {
    if (name == "linear") return dgp_linear();
    if (name == "curved") return dgp_curved();
    if (name == "manipulated") return dgp_manipulated();
    throw_usage("unknown DGP preset '" + name + "' (expected linear|curved|manipulated)");
}

namespace detail {

inline double polyval(const std::vector<double>& coef, double x) {
    double v = 0.0;
    for (std::size_t j = coef.size(); j-- > 0;) v = v * x + coef[j];
    return v;
}

} // namespace detail

// True conditional means implied by the spec (after the jump normalization).
inline double dgp_mean(const DgpSpec& spec, double x) {
    const double jump_raw =
        detail::polyval(spec.mu_right, spec.cutoff) - detail::polyval(spec.mu_left, spec.cutoff);
    if (x >= spec.cutoff) return detail::polyval(spec.mu_right, x) + (spec.tau - jump_raw);
    return detail::polyval(spec.mu_left, x);
}

inline RdData generate(const DgpSpec& spec, std::size_t n, std::uint64_t replication = 0) {
    if (n < 1) throw_usage("generate: n must be >= 1");
    if (!(spec.score_hi > spec.score_lo)) throw_usage("generate: empty score support");
    if (spec.manip_mass < 0.0 || spec.manip_mass > 1.0)
        throw_usage("generate: manipulation mass must be in [0,1]");
    if (spec.icc < 0.0 || spec.icc >= 1.0) throw_usage("generate: icc must be in [0,1)");

    CounterRng rng = CounterRng::for_replication(spec.seed, replication);
    RdData data;
    data.cutoff = spec.cutoff;
    data.scores.resize(n);
    data.outcomes.resize(n);

    std::vector<double> cluster_effect;
    if (spec.n_clusters > 1) {
        const double sd_b = spec.sigma * std::sqrt(spec.icc / (1.0 - spec.icc));
        cluster_effect.resize(spec.n_clusters);
        for (auto& b : cluster_effect) b = rng.normal(0.0, sd_b);
        data.clusters = std::vector<std::int64_t>(n);
    }

    for (std::size_t i = 0; i < n; ++i) {
        double x;
        if (spec.score_dist == DgpSpec::ScoreDist::uniform) {
            x = rng.uniform(spec.score_lo, spec.score_hi);
        } else {
            const double b = rng.beta_order_stat(2, 5); // Beta(2,4)
            x = spec.score_lo + (spec.score_hi - spec.score_lo) * b;
        }
        if (spec.manip_mass > 0.0 && x < spec.cutoff && x > spec.cutoff - spec.manip_width) {
            if (rng.uniform01() < spec.manip_mass) x = 2.0 * spec.cutoff - x;
        }
        const double sd = spec.sigma * (1.0 + spec.sigma_slope * std::abs(x - spec.cutoff));
        double y = dgp_mean(spec, x) + (spec.sigma > 0.0 ? rng.normal(0.0, sd) : 0.0);
        if (spec.n_clusters > 1) {
            const std::int64_t g = static_cast<std::int64_t>(rng.next_u64() % spec.n_clusters);
            (*data.clusters)[i] = g;
            y += cluster_effect[static_cast<std::size_t>(g)];
        }
        data.scores[i] = x;
        data.outcomes[i] = y;
    }
    return data;
}

struct ExperimentSummary {
    std::size_t replications = 0;
    std::size_t failures = 0;
    double true_tau = 0.0;
    double mean_tau = 0.0;
    double bias = 0.0;
    double sd = 0.0;
    double rmse = 0.0;
    double coverage_conventional = 0.0;
    double coverage_biascorrected = 0.0;
    double coverage_robust = 0.0;
    double mean_h_left = 0.0;
    double mean_h_right = 0.0;
    double mean_ci_length_conventional = 0.0;
    double mean_ci_length_robust = 0.0;
};

// Replications draw per-replication keys from the master seed and run the
// full pipeline; summaries are reduced in index order, so results do not
// depend on thread count.
inline ExperimentSummary run_experiment(const DgpSpec& spec, std::size_t n,
                                        std::size_t replications,
                                        const EstimationConfig& config) {
    if (replications < 1) throw_usage("run_experiment: replications must be >= 1");
    struct Rep {
        bool ok = false;
        double tau = 0.0, h_l = 0.0, h_r = 0.0;
        bool cov_us = false, cov_bc = false, cov_rbc = false;
        double len_us = 0.0, len_rbc = 0.0;
    };
    std::vector<Rep> reps(replications);
    parallel_for(replications, [&](std::size_t r) {
        try {
            const RdData data = generate(spec, n, r);
            const RdEstimate est = analyze(data, config);
            Rep& out = reps[r];
            out.tau = est.tau_hat;
            out.h_l = est.bandwidths.h_left;
            out.h_r = est.bandwidths.h_right;
            out.cov_us = est.ci_conventional.contains(spec.tau);
            out.cov_bc = est.ci_biascorrected.contains(spec.tau);
            out.cov_rbc = est.ci_robust.contains(spec.tau);
            out.len_us = est.ci_conventional.length();
            out.len_rbc = est.ci_robust.length();
            out.ok = true;
        } catch (const Error&) {
            reps[r].ok = false;
        }
    });

    ExperimentSummary s;
    s.replications = replications;
    s.true_tau = spec.tau;
    std::vector<double> taus;
    for (const Rep& r : reps) {
        if (!r.ok) {
            ++s.failures;
            continue;
        }
        taus.push_back(r.tau);
        s.coverage_conventional += r.cov_us ? 1.0 : 0.0;
        s.coverage_biascorrected += r.cov_bc ? 1.0 : 0.0;
        s.coverage_robust += r.cov_rbc ? 1.0 : 0.0;
        s.mean_h_left += r.h_l;
        s.mean_h_right += r.h_r;
        s.mean_ci_length_conventional += r.len_us;
        s.mean_ci_length_robust += r.len_rbc;
    }
    const double ok = static_cast<double>(taus.size());
    if (ok == 0.0) throw_numeric("run_experiment: every replication failed");
    s.mean_tau = mean(taus);
    s.bias = s.mean_tau - spec.tau;
    s.sd = sample_sd(taus);
    double mse = 0.0;
    for (double t : taus) mse += (t - spec.tau) * (t - spec.tau);
    s.rmse = std::sqrt(mse / ok);
    s.coverage_conventional /= ok;
    s.coverage_biascorrected /= ok;
    s.coverage_robust /= ok;
    s.mean_h_left /= ok;
    s.mean_h_right /= ok;
    s.mean_ci_length_conventional /= ok;
    s.mean_ci_length_robust /= ok;
    return s;
}

} // namespace rdtk
