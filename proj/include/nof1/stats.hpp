#ifndef NOF1_STATS_HPP
#define NOF1_STATS_HPP

#include <Eigen/Dense>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "nof1/common.hpp"
#include "nof1/rng.hpp"
#include "nof1/trial.hpp"

namespace nof1 {

enum class Alternative { two_sided, less, greater };

inline const char* to_string(Alternative a) {
    switch (a) {
        case Alternative::two_sided: return "two-sided";
        case Alternative::less: return "less";
        case Alternative::greater: return "greater";
    }
    return "?";
}

inline Alternative alternative_from_string(const std::string& s) {
    if (s == "two-sided" || s == "two_sided") return Alternative::two_sided;
    if (s == "less") return Alternative::less;
    if (s == "greater") return Alternative::greater;
    throw ConfigError("unknown alternative '" + s + "' (want two-sided|less|greater)");
}

/// Univariate outcome series with phase labels and design-block structure.
/// block_index groups observations into design blocks; when data are
/// complete it equals position / block_length, and the constructor fills it
/// that way when it is left empty.
struct PhaseSeries {
    std::vector<double> values;
    std::vector<bool> intervention;
    int block_length = 1;  // observations per design block when complete
    std::vector<double> timestamps;
    std::vector<int> block_index;

    std::size_t size() const { return values.size(); }

    int block_count() const {
        int b = 0;
        for (int i : block_index) b = std::max(b, i + 1);
        return b;
    }

    void finalize() {
        const std::size_t n = values.size();
        if (intervention.size() != n)
            throw UsageError("PhaseSeries: values and intervention lengths differ");
        if (block_length < 1) throw UsageError("PhaseSeries: block_length must be >= 1");
        if (timestamps.empty()) {
            timestamps.resize(n);
            for (std::size_t i = 0; i < n; ++i) timestamps[i] = static_cast<double>(i);
        }
        if (timestamps.size() != n) throw UsageError("PhaseSeries: timestamps length differs");
        for (std::size_t i = 1; i < n; ++i)
            if (!(timestamps[i] > timestamps[i - 1]))
                throw UsageError("PhaseSeries: timestamps must strictly increase");
        if (block_index.empty()) {
            block_index.resize(n);
            for (std::size_t i = 0; i < n; ++i) block_index[i] = static_cast<int>(i) / block_length;
        }
        if (block_index.size() != n) throw UsageError("PhaseSeries: block_index length differs");
        // intervention constant within each design block
        std::map<int, bool> flag;
        for (std::size_t i = 0; i < n; ++i) {
            auto [it, fresh] = flag.try_emplace(block_index[i], intervention[i]);
            if (!fresh && it->second != intervention[i])
                throw UsageError("PhaseSeries: intervention changes inside block " +
                                 std::to_string(block_index[i]));
        }
        if (!all_finite(values)) throw NumericError("PhaseSeries: non-finite values");
    }
};

inline PhaseSeries make_series(std::vector<double> values, std::vector<bool> intervention, int block_length) {
    PhaseSeries s;
    s.values = std::move(values);
    s.intervention = std::move(intervention);
    s.block_length = block_length;
    s.finalize();
    return s;
}

/// Outcome of one hypothesis test.
struct TestResult {
    std::string test_name;
    double statistic = 0.0;
    double p_value = 1.0;
    std::string alternative;
    std::map<std::string, double> params;  // df, M, n_randomizations, rho, ...
    std::string notes;
};

/// Support of admissible intervention sequences for randomization tests.
/// observation_permutation (label shuffling that ignores blocks, mirroring
/// generic crossover permutation tests) is Monte-Carlo only: its support is
/// too large to enumerate.
struct AssignmentScheme {
    enum class Kind { block_permutation, restricted_alternation, systematic_alternation, observation_permutation };
    Kind kind = Kind::block_permutation;
    int block_count = 8;
    int max_run_length = 2;  // restricted_alternation only
};

inline AssignmentScheme::Kind scheme_kind_from_string(const std::string& s) {
    if (s == "block_permutation") return AssignmentScheme::Kind::block_permutation;
    if (s == "restricted_alternation") return AssignmentScheme::Kind::restricted_alternation;
    if (s == "systematic_alternation") return AssignmentScheme::Kind::systematic_alternation;
    if (s == "observation_permutation") return AssignmentScheme::Kind::observation_permutation;
    throw ConfigError("unknown assignment scheme '" + s + "'");
}

// ---------------------------------------------------------------------------
// Student-t distribution
// ---------------------------------------------------------------------------

namespace detail {

/// Continued fraction for the regularized incomplete beta (Lentz's method).
inline double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 500;
    constexpr double kEps = 3e-16;
    constexpr double kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    throw NumericError("betacf: continued fraction did not converge");
}

/// Regularized incomplete beta I_x(a, b).
inline double betai(double a, double b, double x) {
    if (x < 0.0 || x > 1.0) throw UsageError("betai: x outside [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

/// P(T <= x) for Student-t with df degrees of freedom (df may be
/// non-integer, as Welch's test needs). Absolute error below 1e-10.
inline double t_cdf(double x, double df) {
    if (!(df >= 1.0)) throw UsageError("t_cdf: df must be >= 1, got " + std::to_string(df));
    if (x == 0.0) return 0.5;
    const double z = df / (df + x * x);
    const double half_tail = 0.5 * detail::betai(0.5 * df, 0.5, z);
    return x > 0.0 ? 1.0 - half_tail : half_tail;
}

namespace detail {

inline double directional_p_from_t(double t, double df, Alternative alt) {
    const double cdf = t_cdf(t, df);
    switch (alt) {
        case Alternative::less: return cdf;
        case Alternative::greater: return 1.0 - cdf;
        case Alternative::two_sided: return std::min(1.0, 2.0 * std::min(cdf, 1.0 - cdf));
    }
    return 1.0;
}

struct PhaseSplit {
    std::vector<double> treated;  // chronological order
    std::vector<double> control;
};

inline PhaseSplit split_phases(const PhaseSeries& s) {
    PhaseSplit out;
    for (std::size_t i = 0; i < s.size(); ++i)
        (s.intervention[i] ? out.treated : out.control).push_back(s.values[i]);
    return out;
}

inline std::vector<double> block_means(const PhaseSeries& s, bool treated) {
    std::map<int, std::pair<double, int>> acc;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.intervention[i] != treated) continue;
        auto& [sum, n] = acc[s.block_index[i]];
        sum += s.values[i];
        n += 1;
    }
    std::vector<double> out;
    out.reserve(acc.size());
    for (const auto& [blk, sn] : acc) out.push_back(sn.first / sn.second);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Paired and two-sample t-tests
// ---------------------------------------------------------------------------

enum class Pairing { chronological, block_means };

/// Paired t-test on D_j = treated_j - control_j. Pairs are matched j-th to
/// j-th in chronological order (or j-th block mean to j-th block mean);
/// unequal phase counts are truncated to the shorter side with a note.
inline TestResult paired_t_test(const PhaseSeries& series, Alternative alternative,
                                Pairing pairing = Pairing::chronological) {
    std::vector<double> treated, control;
    if (pairing == Pairing::chronological) {
        auto split = detail::split_phases(series);
        treated = std::move(split.treated);
        control = std::move(split.control);
    } else {
        treated = detail::block_means(series, true);
        control = detail::block_means(series, false);
    }
    TestResult res;
    res.test_name = "paired_t";
    res.alternative = to_string(alternative);
    const std::size_t n = std::min(treated.size(), control.size());
    if (treated.size() != control.size())
        res.notes = "unequal phase counts (" + std::to_string(treated.size()) + " treated, " +
                    std::to_string(control.size()) + " control); truncated to " + std::to_string(n) + " pairs";
    if (n < 2) throw UsageError("paired_t_test: need at least 2 pairs, got " + std::to_string(n));

    double sum_d = 0.0, sum_d2 = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double d = treated[j] - control[j];
        sum_d += d;
        sum_d2 += d * d;
    }
    const double nn = static_cast<double>(n);
    const double denom_sq = (nn * sum_d2 - sum_d * sum_d) / (nn - 1.0);
    if (denom_sq <= 0.0)
        throw NumericError("paired_t_test: zero-variance differences, statistic undefined");
    const double t = sum_d / std::sqrt(denom_sq);
    res.statistic = t;
    res.params["df"] = nn - 1.0;
    res.params["n_pairs"] = nn;
    res.p_value = detail::directional_p_from_t(t, nn - 1.0, alternative);
    return res;
}

/// Welch two-sample t-test (unequal variances); statistic is
/// mean(treated) - mean(control) studentized, df by Welch-Satterthwaite.
inline TestResult welch_t_test(const PhaseSeries& series, Alternative alternative) {
    auto split = detail::split_phases(series);
    const std::size_t n1 = split.treated.size(), n0 = split.control.size();
    if (n1 < 2 || n0 < 2) throw UsageError("welch_t_test: need at least 2 observations per phase");
    auto mean_var = [](const std::vector<double>& v) {
        double m = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double s2 = 0;
        for (double x : v) s2 += (x - m) * (x - m);
        s2 /= static_cast<double>(v.size() - 1);
        return std::pair<double, double>{m, s2};
    };
    const auto [m1, v1] = mean_var(split.treated);
    const auto [m0, v0] = mean_var(split.control);
    const double se2 = v1 / n1 + v0 / n0;
    if (se2 <= 0.0) throw NumericError("welch_t_test: zero variance in both phases");
    const double t = (m1 - m0) / std::sqrt(se2);
    const double df = se2 * se2 /
                      (v1 * v1 / (static_cast<double>(n1) * n1 * (n1 - 1.0)) +
                       v0 * v0 / (static_cast<double>(n0) * n0 * (n0 - 1.0)));
    TestResult res;
    res.test_name = "welch_t";
    res.alternative = to_string(alternative);
    res.statistic = t;
    res.params["df"] = df;
    res.p_value = detail::directional_p_from_t(t, df, alternative);
    return res;
}

// ---------------------------------------------------------------------------
// Linear model with AR(1) errors, GLS estimation with profiled rho
// ---------------------------------------------------------------------------

struct Ar1Options {
    bool reml = true;                    // REML criterion (default), ML by flag
    std::optional<double> fix_rho;       // skip profiling, use this rho
    Alternative alternative = Alternative::two_sided;
};

namespace detail {

struct GlsFit {
    Eigen::VectorXd beta;
    Eigen::MatrixXd cov_unscaled;  // (X' R^-1 X)^-1
    double rss_r = 0.0;            // residual' R^-1 residual
    double logdet_xrx = 0.0;       // log |X' R^-1 X|
};

/// GLS through the AR(1) whitening transform: first row scaled by
/// sqrt(1-rho^2), then row_t - rho * row_{t-1}.
inline GlsFit gls_ar1(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, double rho) {
    const Eigen::Index n = y.size(), p = X.cols();
    Eigen::VectorXd yt(n);
    Eigen::MatrixXd Xt(n, p);
    const double s0 = std::sqrt(1.0 - rho * rho);
    yt(0) = s0 * y(0);
    Xt.row(0) = s0 * X.row(0);
    for (Eigen::Index t = 1; t < n; ++t) {
        yt(t) = y(t) - rho * y(t - 1);
        Xt.row(t) = X.row(t) - rho * X.row(t - 1);
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xt);
    if (qr.rank() < p) throw UsageError("lm_ar1: design matrix is rank deficient");
    GlsFit fit;
    fit.beta = qr.solve(yt);
    const Eigen::VectorXd resid = yt - Xt * fit.beta;
    const double one_m_r2 = 1.0 - rho * rho;
    fit.rss_r = resid.squaredNorm() / one_m_r2;
    const Eigen::MatrixXd xtx = Xt.transpose() * Xt;
    fit.cov_unscaled = xtx.inverse() * one_m_r2;  // (X' R^-1 X)^-1 = (Xt'Xt / (1-rho^2))^-1
    fit.logdet_xrx = std::log(xtx.determinant()) - p * std::log(one_m_r2);
    return fit;
}

/// Profile criterion to minimize over rho (negative restricted/profile
/// log-likelihood up to constants).
inline double ar1_criterion(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, double rho, bool reml) {
    const double n = static_cast<double>(y.size());
    const double p = static_cast<double>(X.cols());
    const GlsFit fit = gls_ar1(y, X, rho);
    const double logdet_r = (n - 1.0) * std::log1p(-rho * rho);
    if (fit.rss_r <= 0) return std::numeric_limits<double>::infinity();
    if (reml) return (n - p) * std::log(fit.rss_r) + logdet_r + fit.logdet_xrx;
    return n * std::log(fit.rss_r) + logdet_r;
}

}  // namespace detail

/// Fits outcome_t = beta0 + beta1 * I_t (+ covariates) with AR(1) errors and
/// reports the Wald test on beta1. rho is profiled over (-0.999, 0.999) by a
/// grid scan plus golden-section refinement of the REML (or ML) criterion.
inline TestResult lm_ar1(const PhaseSeries& series,
                         const std::vector<std::vector<double>>& covariates = {},
                         const Ar1Options& options = {}) {
    const std::size_t n = series.size();
    if (n < 4) throw UsageError("lm_ar1: need at least 4 observations, got " + std::to_string(n));
    const std::size_t p = 2 + covariates.size();
    if (n <= p) throw UsageError("lm_ar1: more parameters than observations");
    for (const auto& c : covariates)
        if (c.size() != n) throw UsageError("lm_ar1: covariate length mismatch");

    Eigen::VectorXd y(n);
    Eigen::MatrixXd X(n, p);
    for (std::size_t i = 0; i < n; ++i) {
        y(static_cast<Eigen::Index>(i)) = series.values[i];
        X(static_cast<Eigen::Index>(i), 0) = 1.0;
        X(static_cast<Eigen::Index>(i), 1) = series.intervention[i] ? 1.0 : 0.0;
        for (std::size_t c = 0; c < covariates.size(); ++c)
            X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(2 + c)) = covariates[c][i];
    }

    constexpr double kRhoBound = 0.999;
    double rho = 0.0;
    std::string notes;
    if (options.fix_rho.has_value()) {
        rho = *options.fix_rho;
        if (std::fabs(rho) >= 1.0) throw UsageError("lm_ar1: |fix_rho| must be < 1");
    } else {
        // coarse scan keeps the refinement off local dips
        double best = std::numeric_limits<double>::infinity();
        double best_rho = 0.0;
        const int grid = 81;
        for (int i = 0; i < grid; ++i) {
            const double r = -kRhoBound + 2.0 * kRhoBound * i / (grid - 1);
            const double f = detail::ar1_criterion(y, X, r, options.reml);
            if (f < best) {
                best = f;
                best_rho = r;
            }
        }
        double lo = std::max(-kRhoBound, best_rho - 2.0 * kRhoBound / (grid - 1));
        double hi = std::min(kRhoBound, best_rho + 2.0 * kRhoBound / (grid - 1));
        const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
        double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
        double f1 = detail::ar1_criterion(y, X, x1, options.reml);
        double f2 = detail::ar1_criterion(y, X, x2, options.reml);
        for (int iter = 0; iter < 80 && (hi - lo) > 1e-9; ++iter) {
            if (f1 <= f2) {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = detail::ar1_criterion(y, X, x1, options.reml);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = detail::ar1_criterion(y, X, x2, options.reml);
            }
        }
        rho = 0.5 * (lo + hi);
        if (!std::isfinite(rho)) {
            notes = "rho search failed to converge; fell back to rho = 0";
            rho = 0.0;
        } else if (std::fabs(rho) > kRhoBound - 1e-6) {
            notes = "rho estimate at the boundary of (-0.999, 0.999)";
        }
    }

    const detail::GlsFit fit = detail::gls_ar1(y, X, rho);
    const double df = static_cast<double>(n) - static_cast<double>(p);
    const double sigma2 = fit.rss_r / (options.reml ? df : static_cast<double>(n));
    const double se = std::sqrt(sigma2 * fit.cov_unscaled(1, 1));
    if (!(se > 0.0)) throw NumericError("lm_ar1: degenerate standard error");
    const double t = fit.beta(1) / se;

    TestResult res;
    res.test_name = "lm_ar1";
    res.alternative = to_string(options.alternative);
    res.statistic = t;
    res.p_value = detail::directional_p_from_t(t, df, options.alternative);
    res.params["beta0"] = fit.beta(0);
    res.params["beta1"] = fit.beta(1);
    res.params["se_beta1"] = se;
    res.params["rho"] = rho;
    res.params["df"] = df;
    res.params["sigma2"] = sigma2;
    res.notes = notes;
    return res;
}

// ---------------------------------------------------------------------------
// Randomization tests
// ---------------------------------------------------------------------------

namespace detail {

/// All balanced B-block labelings (true = intervention), lexicographic.
inline std::vector<std::vector<bool>> balanced_labelings(int blocks) {
    if (blocks % 2 != 0) throw UsageError("assignment enumeration: block count must be even, got " +
                                          std::to_string(blocks));
    std::vector<std::vector<bool>> out;
    std::vector<int> comb(blocks / 2);
    for (int i = 0; i < blocks / 2; ++i) comb[i] = i;
    while (true) {
        std::vector<bool> lab(blocks, false);
        for (int i : comb) lab[i] = true;
        out.push_back(std::move(lab));
        // next combination
        int i = blocks / 2 - 1;
        while (i >= 0 && comb[i] == blocks - (blocks / 2 - i)) --i;
        if (i < 0) break;
        ++comb[i];
        for (int j = i + 1; j < blocks / 2; ++j) comb[j] = comb[j - 1] + 1;
    }
    return out;
}

inline int longest_run(const std::vector<bool>& lab) {
    int best = 0, cur = 0;
    for (std::size_t i = 0; i < lab.size(); ++i) {
        cur = (i > 0 && lab[i] == lab[i - 1]) ? cur + 1 : 1;
        best = std::max(best, cur);
    }
    return best;
}

}  // namespace detail

/// Block-level labelings admitted by the scheme (true = intervention).
inline std::vector<std::vector<bool>> enumerate_block_labelings(const AssignmentScheme& scheme) {
    switch (scheme.kind) {
        case AssignmentScheme::Kind::block_permutation:
            return detail::balanced_labelings(scheme.block_count);
        case AssignmentScheme::Kind::restricted_alternation: {
            auto all = detail::balanced_labelings(scheme.block_count);
            std::erase_if(all, [&](const std::vector<bool>& lab) {
                return detail::longest_run(lab) > scheme.max_run_length;
            });
            return all;
        }
        case AssignmentScheme::Kind::systematic_alternation: {
            if (scheme.block_count % 2 != 0)
                throw UsageError("systematic_alternation: block count must be even");
            std::vector<bool> abab(scheme.block_count), baba(scheme.block_count);
            for (int i = 0; i < scheme.block_count; ++i) {
                abab[i] = (i % 2 == 1);  // A first: intervention on odd blocks
                baba[i] = (i % 2 == 0);
            }
            return {abab, baba};
        }
        case AssignmentScheme::Kind::observation_permutation:
            throw UsageError("observation_permutation has no enumerable block support; use the Monte Carlo test");
    }
    throw UsageError("enumerate_block_labelings: bad scheme kind");
}

/// Observation-level intervention vectors for a complete design (each block
/// label repeated observations_per_block times).
inline std::vector<std::vector<bool>> enumerate_assignments(const TrialDesign& design,
                                                            const AssignmentScheme& scheme) {
    design.validate();
    AssignmentScheme s = scheme;
    s.block_count = design.block_count();
    const auto labelings = enumerate_block_labelings(s);
    const int per_block = design.observations_per_block();
    std::vector<std::vector<bool>> out;
    out.reserve(labelings.size());
    for (const auto& lab : labelings) {
        std::vector<bool> v;
        v.reserve(lab.size() * per_block);
        for (bool b : lab)
            for (int i = 0; i < per_block; ++i) v.push_back(b);
        out.push_back(std::move(v));
    }
    return out;
}

namespace detail {

/// Difference of pooled phase means for a given block labeling.
inline double phase_mean_diff(const PhaseSeries& s, const std::vector<bool>& block_labels) {
    double sum_t = 0, sum_c = 0;
    int n_t = 0, n_c = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (block_labels[static_cast<std::size_t>(s.block_index[i])]) {
            sum_t += s.values[i];
            ++n_t;
        } else {
            sum_c += s.values[i];
            ++n_c;
        }
    }
    if (n_t == 0 || n_c == 0) return std::numeric_limits<double>::quiet_NaN();
    return sum_t / n_t - sum_c / n_c;
}

inline std::vector<bool> observed_block_labels(const PhaseSeries& s) {
    const int B = s.block_count();
    std::vector<bool> lab(static_cast<std::size_t>(B), false);
    std::vector<bool> seen(static_cast<std::size_t>(B), false);
    for (std::size_t i = 0; i < s.size(); ++i) {
        lab[static_cast<std::size_t>(s.block_index[i])] = s.intervention[i];
        seen[static_cast<std::size_t>(s.block_index[i])] = true;
    }
    for (bool b : seen)
        if (!b) throw UsageError("randomization test: a design block has no observations");
    return lab;
}

inline bool at_least_as_extreme(double s_i, double s_star, Alternative alt) {
    switch (alt) {
        case Alternative::less: return s_i <= s_star;
        case Alternative::greater: return s_i >= s_star;
        case Alternative::two_sided: return std::fabs(s_i) >= std::fabs(s_star);
    }
    return false;
}

}  // namespace detail

/// Exact single-case randomization test: the observed phase-mean difference
/// s* = mean(treated) - mean(control) is ranked within the statistic's values
/// over every admissible assignment; the count includes the observed
/// assignment itself, so p >= 1/N.
inline TestResult scrt_exact(const PhaseSeries& series, const AssignmentScheme& scheme,
                             Alternative alternative) {
    AssignmentScheme s = scheme;
    s.block_count = series.block_count();
    const auto support = enumerate_block_labelings(s);
    const auto observed = detail::observed_block_labels(series);
    if (std::find(support.begin(), support.end(), observed) == support.end())
        throw UsageError("scrt_exact: observed assignment is not in the scheme's support");

    const double s_star = detail::phase_mean_diff(series, observed);
    std::size_t count = 0;
    for (const auto& lab : support)
        if (detail::at_least_as_extreme(detail::phase_mean_diff(series, lab), s_star, alternative)) ++count;

    TestResult res;
    res.test_name = "scrt";
    res.alternative = to_string(alternative);
    res.statistic = s_star;
    res.p_value = static_cast<double>(count) / static_cast<double>(support.size());
    res.params["n_randomizations"] = static_cast<double>(support.size());
    return res;
}

/// Monte Carlo randomization test: M assignments sampled uniformly with
/// replacement from the scheme's support (or, for observation_permutation,
/// uniform permutations of the observed labels); p = (1 + #extreme) / (M+1).
inline TestResult randomization_test_mc(const PhaseSeries& series, const AssignmentScheme& scheme,
                                        Alternative alternative, int M, std::uint64_t seed) {
    if (M < 1) throw UsageError("randomization_test_mc: M must be >= 1");
    Rng rng(seed);
    const double s_star =
        detail::phase_mean_diff(series, detail::observed_block_labels(series));

    std::size_t extreme = 0;
    if (scheme.kind == AssignmentScheme::Kind::observation_permutation) {
        // permute labels across observations, ignoring block structure
        std::vector<std::size_t> perm(series.size());
        std::iota(perm.begin(), perm.end(), 0);
        for (int m = 0; m < M; ++m) {
            rng.shuffle(perm);
            double sum_t = 0, sum_c = 0;
            int n_t = 0, n_c = 0;
            for (std::size_t i = 0; i < series.size(); ++i) {
                if (series.intervention[perm[i]]) {
                    sum_t += series.values[i];
                    ++n_t;
                } else {
                    sum_c += series.values[i];
                    ++n_c;
                }
            }
            const double s_i = sum_t / n_t - sum_c / n_c;
            if (detail::at_least_as_extreme(s_i, s_star, alternative)) ++extreme;
        }
    } else {
        AssignmentScheme s = scheme;
        s.block_count = series.block_count();
        const auto support = enumerate_block_labelings(s);
        for (int m = 0; m < M; ++m) {
            const auto& lab = support[rng.below(support.size())];
            if (detail::at_least_as_extreme(detail::phase_mean_diff(series, lab), s_star, alternative)) ++extreme;
        }
    }

    TestResult res;
    res.test_name = "mc_rt";
    res.alternative = to_string(alternative);
    res.statistic = s_star;
    res.p_value = (1.0 + static_cast<double>(extreme)) / (static_cast<double>(M) + 1.0);
    res.params["M"] = static_cast<double>(M);
    return res;
}

}  // namespace nof1

#endif
