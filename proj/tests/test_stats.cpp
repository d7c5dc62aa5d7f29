#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <set>

#include "nof1/stats.hpp"
#include "test_support.hpp"

using namespace nof1;

namespace {

PhaseSeries alternating_series(std::vector<double> values, int block_length) {
    const std::size_t n = values.size();
    std::vector<bool> flags(n);
    for (std::size_t i = 0; i < n; ++i) flags[i] = ((static_cast<int>(i) / block_length) % 2) == 1;
    return make_series(std::move(values), std::move(flags), block_length);
}

PhaseSeries gaussian_abab_series(int blocks, int per_block, Rng& rng, double treat_shift = 0.0) {
    std::vector<double> v;
    std::vector<bool> f;
    for (int b = 0; b < blocks; ++b) {
        const bool treat = (b % 2 == 1);
        for (int i = 0; i < per_block; ++i) {
            v.push_back(rng.normal() + (treat ? treat_shift : 0.0));
            f.push_back(treat);
        }
    }
    return make_series(std::move(v), std::move(f), per_block);
}

}  // namespace

TEST_CASE("PhaseSeries invariants") {
    CHECK_THROWS_AS(make_series({1, 2, 3}, {true, false}, 1), UsageError);
    // intervention must be constant within a block
    CHECK_THROWS_AS(make_series({1, 2, 3, 4}, {false, true, true, true}, 2), UsageError);
    PhaseSeries ok = make_series({1, 2, 3, 4}, {false, false, true, true}, 2);
    CHECK(ok.block_count() == 2);
    CHECK(ok.timestamps == std::vector<double>{0, 1, 2, 3});
}

TEST_CASE("t_cdf against closed forms and the quadrature oracle") {
    CHECK(t_cdf(0.0, 1) == 0.5);
    CHECK(t_cdf(0.0, 7) == 0.5);
    CHECK(t_cdf(1.0, 1) == Catch::Approx(0.75).margin(1e-12));   // Cauchy arctan closed form
    CHECK(t_cdf(2.0, 10) == Catch::Approx(0.963305982615).margin(1e-10));
    for (double df : {1.0, 2.0, 3.0, 5.0, 10.0, 30.0, 100.0}) {
        for (double x : {-3.0, -2.0, -0.5, 0.3, 1.0, 2.5, 4.0}) {
            CHECK(t_cdf(x, df) == Catch::Approx(testsup::t_cdf_oracle(x, df)).margin(1e-10));
        }
    }
    CHECK_THROWS_AS(t_cdf(1.0, 0.5), UsageError);
}

TEST_CASE("paired t-test") {
    SECTION("hand example D = (1,2,3)") {
        // control obs are 0, treated obs 1,2,3 -> chronological pairing gives D=(1,2,3)
        PhaseSeries s = make_series({0, 1, 0, 2, 0, 3}, {false, true, false, true, false, true}, 1);
        TestResult r = paired_t_test(s, Alternative::greater);
        CHECK(r.statistic == Catch::Approx(3.4641).margin(1e-3));
        CHECK(r.params.at("df") == 2.0);
        CHECK(r.p_value == Catch::Approx(0.0371).margin(5e-4));
    }
    SECTION("symmetric differences give t = 0, two-sided p = 1") {
        PhaseSeries s = make_series({0, 1, 0, -1}, {false, true, false, true}, 1);
        TestResult r = paired_t_test(s, Alternative::two_sided);
        CHECK(r.statistic == 0.0);
        CHECK(r.p_value == 1.0);
    }
    SECTION("zero-variance differences are an error") {
        PhaseSeries s = make_series({0, 1, 0, 1}, {false, true, false, true}, 1);
        CHECK_THROWS_AS(paired_t_test(s, Alternative::two_sided), NumericError);
    }
    SECTION("fewer than 2 pairs is a usage error") {
        PhaseSeries s = make_series({0, 1}, {false, true}, 1);
        CHECK_THROWS_AS(paired_t_test(s, Alternative::two_sided), UsageError);
    }
    SECTION("unequal phase counts truncate with a note") {
        PhaseSeries s = make_series({0, 1, 0, 2, 0}, {false, true, false, true, false}, 1);
        TestResult r = paired_t_test(s, Alternative::greater);
        CHECK(r.params.at("n_pairs") == 2.0);
        CHECK(r.notes.find("truncated") != std::string::npos);
    }
    SECTION("two-sided equals twice the smaller one-sided tail") {
        Rng rng(88);
        for (int rep = 0; rep < 20; ++rep) {
            PhaseSeries s = gaussian_abab_series(8, 3, rng, 0.3);
            const double p_less = paired_t_test(s, Alternative::less).p_value;
            const double p_greater = paired_t_test(s, Alternative::greater).p_value;
            const double p_two = paired_t_test(s, Alternative::two_sided).p_value;
            CHECK(p_two == Catch::Approx(2.0 * std::min(p_less, p_greater)).margin(1e-12));
        }
    }
    SECTION("block-means pairing uses one difference per block pair") {
        Rng rng(5);
        PhaseSeries s = gaussian_abab_series(8, 6, rng);
        TestResult r = paired_t_test(s, Alternative::two_sided, Pairing::block_means);
        CHECK(r.params.at("n_pairs") == 4.0);
    }
}

TEST_CASE("welch t-test against a frozen reference") {
    // treated {1.2,2.1,3.3,4.0}, control {2.0,4.1,6.2,8.0,10.1}
    PhaseSeries s;
    s.values = {1.2, 2.1, 3.3, 4.0, 2.0, 4.1, 6.2, 8.0, 10.1};
    s.intervention = {true, true, true, true, false, false, false, false, false};
    s.block_index = {0, 0, 0, 0, 1, 1, 1, 1, 1};
    s.block_length = 4;
    s.finalize();
    TestResult r = welch_t_test(s, Alternative::two_sided);
    CHECK(r.statistic == Catch::Approx(-2.209961634209).margin(1e-9));
    CHECK(r.params.at("df") == Catch::Approx(5.415248435708).margin(1e-9));
    CHECK(r.p_value == Catch::Approx(0.073976655995).margin(1e-9));
}

TEST_CASE("lm_ar1") {
    SECTION("rho fixed at 0 reproduces OLS within 1e-8") {
        Rng rng(17);
        PhaseSeries s = gaussian_abab_series(8, 6, rng, -0.6);
        Ar1Options opt;
        opt.fix_rho = 0.0;
        TestResult r = lm_ar1(s, {}, opt);

        // independent OLS: plain QR fit with classic standard errors
        const std::size_t n = s.size();
        Eigen::MatrixXd X(n, 2);
        Eigen::VectorXd y(n);
        for (std::size_t i = 0; i < n; ++i) {
            X(i, 0) = 1.0;
            X(i, 1) = s.intervention[i] ? 1.0 : 0.0;
            y(i) = s.values[i];
        }
        const Eigen::VectorXd beta = (X.transpose() * X).ldlt().solve(X.transpose() * y);
        const double rss = (y - X * beta).squaredNorm();
        const double sigma2 = rss / (n - 2.0);
        const Eigen::MatrixXd cov = sigma2 * (X.transpose() * X).inverse();

        CHECK(r.params.at("beta1") == Catch::Approx(beta(1)).margin(1e-8));
        CHECK(r.params.at("se_beta1") == Catch::Approx(std::sqrt(cov(1, 1))).margin(1e-8));
        CHECK(r.params.at("rho") == 0.0);
    }
    SECTION("recovers rho = 0.5 on simulated AR(1) data") {
        double rho_sum = 0.0;
        const int reps = 100;
        Rng rng(2024);
        for (int rep = 0; rep < reps; ++rep) {
            const std::size_t n = 200;
            auto noise = testsup::ar1_noise(n, 0.5, 1.0, rng);
            std::vector<double> v(n);
            std::vector<bool> f(n);
            for (std::size_t i = 0; i < n; ++i) {
                f[i] = ((i / 5) % 2) == 1;
                v[i] = 1.0 + 0.5 * (f[i] ? 1.0 : 0.0) + noise[i];
            }
            TestResult r = lm_ar1(make_series(std::move(v), std::move(f), 5));
            rho_sum += r.params.at("rho");
        }
        CHECK(rho_sum / reps == Catch::Approx(0.5).margin(0.1));
    }
    SECTION("null p-values are uniform (KS) and match OLS closely when rho = 0") {
        const int reps = 200;
        std::vector<double> pvals;
        double mean_prof = 0.0, mean_ols = 0.0;
        Rng rng(555);
        for (int rep = 0; rep < reps; ++rep) {
            const std::size_t n = 200;
            std::vector<double> v(n);
            std::vector<bool> f(n);
            for (std::size_t i = 0; i < n; ++i) {
                f[i] = ((i / 5) % 2) == 1;
                v[i] = rng.normal();  // beta1 = 0, iid errors
            }
            PhaseSeries s = make_series(std::move(v), std::move(f), 5);
            const double p_profiled = lm_ar1(s).p_value;
            Ar1Options ols;
            ols.fix_rho = 0.0;
            const double p_ols = lm_ar1(s, {}, ols).p_value;
            pvals.push_back(p_profiled);
            mean_prof += p_profiled;
            mean_ols += p_ols;
        }
        CHECK(testsup::ks_uniform_pvalue(pvals) > 0.01);
        // profiling rho must not bias the p-value on average
        CHECK(std::fabs(mean_prof - mean_ols) / reps < 0.005);
    }
    SECTION("covariates enter the design matrix") {
        Rng rng(31);
        PhaseSeries s = gaussian_abab_series(8, 6, rng, -0.5);
        std::vector<double> temp(s.size());
        for (std::size_t i = 0; i < temp.size(); ++i) temp[i] = 20.0 + rng.normal();
        TestResult r = lm_ar1(s, {temp});
        CHECK(r.params.at("df") == static_cast<double>(s.size()) - 3.0);
    }
    SECTION("rank-deficient design is rejected") {
        Rng rng(32);
        PhaseSeries s = gaussian_abab_series(4, 3, rng);
        std::vector<double> dup(s.size());
        for (std::size_t i = 0; i < dup.size(); ++i) dup[i] = s.intervention[i] ? 1.0 : 0.0;
        CHECK_THROWS_AS(lm_ar1(s, {dup}), UsageError);
    }
    SECTION("series shorter than 4 is rejected") {
        CHECK_THROWS_AS(lm_ar1(make_series({1, 2, 3}, {false, true, false}, 1)), UsageError);
    }
}

TEST_CASE("assignment enumeration") {
    SECTION("binomial counts") {
        AssignmentScheme s;
        s.block_count = 4;
        CHECK(enumerate_block_labelings(s).size() == 6);
        s.block_count = 8;
        CHECK(enumerate_block_labelings(s).size() == 70);  // C(8,4), the published design
    }
    SECTION("labelings are balanced and unique") {
        AssignmentScheme s;
        s.block_count = 8;
        const auto labs = enumerate_block_labelings(s);
        std::set<std::vector<bool>> uniq(labs.begin(), labs.end());
        CHECK(uniq.size() == labs.size());
        for (const auto& lab : labs)
            CHECK(std::count(lab.begin(), lab.end(), true) == 4);
    }
    SECTION("systematic alternation is exactly {ABAB, BABA}") {
        AssignmentScheme s;
        s.kind = AssignmentScheme::Kind::systematic_alternation;
        s.block_count = 4;
        const auto labs = enumerate_block_labelings(s);
        REQUIRE(labs.size() == 2);
        CHECK(labs[0] == std::vector<bool>{false, true, false, true});
        CHECK(labs[1] == std::vector<bool>{true, false, true, false});
    }
    SECTION("restricted alternation filters long runs (vs brute force)") {
        AssignmentScheme s;
        s.kind = AssignmentScheme::Kind::restricted_alternation;
        s.block_count = 6;
        s.max_run_length = 2;
        const auto got = enumerate_block_labelings(s);

        // independent oracle: permutations of TTTFFF with a manual run check
        std::vector<bool> base{false, false, false, true, true, true};
        std::set<std::vector<bool>> want;
        std::sort(base.begin(), base.end());
        do {
            int run = 1, worst = 1;
            for (std::size_t i = 1; i < base.size(); ++i) {
                run = (base[i] == base[i - 1]) ? run + 1 : 1;
                worst = std::max(worst, run);
            }
            if (worst <= 2) want.insert(base);
        } while (std::next_permutation(base.begin(), base.end()));

        std::set<std::vector<bool>> got_set(got.begin(), got.end());
        CHECK(got_set == want);
    }
    SECTION("odd block count is rejected") {
        AssignmentScheme s;
        s.block_count = 5;
        CHECK_THROWS_AS(enumerate_block_labelings(s), UsageError);
    }
    SECTION("observation-level expansion follows the design") {
        TrialDesign d;
        d.n_days = 8;
        d.block_length_days = 2;
        d.measurements_per_day = 3;
        AssignmentScheme s;
        const auto vecs = enumerate_assignments(d, s);
        CHECK(vecs.size() == 6);  // C(4,2)
        for (const auto& v : vecs) {
            CHECK(v.size() == 24);
            for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == v[(i / 6) * 6]);
        }
    }
}

TEST_CASE("exact single-case randomization test") {
    SECTION("hand-enumerated B = 4 toy gives p = 1/6") {
        // blocks of one observation, values (10, 0, 10, 0), treated blocks 1 and 3.
        // s* = mean{0,0} - mean{10,10} = -10. The six balanced labelings give
        // s in {0, -10, 0, 0, +10, 0}; only the observed one is <= -10.
        PhaseSeries s = make_series({10, 0, 10, 0}, {false, true, false, true}, 1);
        AssignmentScheme scheme;
        TestResult r = scrt_exact(s, scheme, Alternative::less);
        CHECK(r.statistic == -10.0);
        CHECK(r.p_value == Catch::Approx(1.0 / 6.0).margin(1e-15));
        CHECK(r.params.at("n_randomizations") == 6.0);
    }
    SECTION("all-equal values give p = 1") {
        PhaseSeries s = make_series({1, 1, 1, 1}, {false, true, false, true}, 1);
        AssignmentScheme scheme;
        for (Alternative alt : {Alternative::less, Alternative::greater, Alternative::two_sided})
            CHECK(scrt_exact(s, scheme, alt).p_value == 1.0);
    }
    SECTION("p always includes the observed assignment") {
        Rng rng(3);
        for (int rep = 0; rep < 10; ++rep) {
            PhaseSeries s = gaussian_abab_series(8, 6, rng, -2.0);
            const double p = scrt_exact(s, AssignmentScheme{}, Alternative::less).p_value;
            CHECK(p >= 1.0 / 70.0 - 1e-15);
            CHECK(p <= 1.0);
        }
    }
    SECTION("invariant under shifting and positive scaling") {
        Rng rng(4);
        PhaseSeries s = gaussian_abab_series(8, 6, rng, -0.7);
        const double p0 = scrt_exact(s, AssignmentScheme{}, Alternative::less).p_value;
        PhaseSeries shifted = s;
        for (double& v : shifted.values) v += 123.25;
        PhaseSeries scaled = s;
        for (double& v : scaled.values) v *= 7.5;
        CHECK(scrt_exact(shifted, AssignmentScheme{}, Alternative::less).p_value == p0);
        CHECK(scrt_exact(scaled, AssignmentScheme{}, Alternative::less).p_value == p0);
    }
    SECTION("negating the series mirrors the one-sided p-value") {
        Rng rng(5);
        PhaseSeries s = gaussian_abab_series(8, 6, rng, -0.7);
        PhaseSeries neg = s;
        for (double& v : neg.values) v = -v;
        CHECK(scrt_exact(s, AssignmentScheme{}, Alternative::less).p_value ==
              scrt_exact(neg, AssignmentScheme{}, Alternative::greater).p_value);
    }
    SECTION("observed assignment outside the support is rejected") {
        // three treated blocks out of four: not a balanced labeling
        PhaseSeries s = make_series({1, 2, 3, 4}, {true, true, false, true}, 1);
        CHECK_THROWS_AS(scrt_exact(s, AssignmentScheme{}, Alternative::less), UsageError);
    }
}

TEST_CASE("Monte Carlo randomization test") {
    SECTION("p floor is 1/(M+1) when no resample is as extreme") {
        // observed labeling (3 treated of 4) is outside the balanced support,
        // and s* = -10 is strictly below every balanced labeling's statistic
        PhaseSeries s = make_series({0, 10, 10, 10}, {true, false, false, false}, 1);
        TestResult r = randomization_test_mc(s, AssignmentScheme{}, Alternative::less, 999, 7);
        CHECK(r.p_value == Catch::Approx(1.0 / 1000.0).margin(1e-15));
    }
    SECTION("all-equal values give p = 1") {
        PhaseSeries s = make_series({2, 2, 2, 2}, {false, true, false, true}, 1);
        TestResult r = randomization_test_mc(s, AssignmentScheme{}, Alternative::less, 500, 11);
        CHECK(r.p_value == 1.0);
    }
    SECTION("agrees with exact enumeration within the binomial bound") {
        Rng rng(6);
        PhaseSeries s = gaussian_abab_series(8, 6, rng, -0.5);
        const int M = 10000;
        const double p_exact = scrt_exact(s, AssignmentScheme{}, Alternative::less).p_value;
        const double p_hat = randomization_test_mc(s, AssignmentScheme{}, Alternative::less, M, 99).p_value;
        const double bound = 3.0 * std::sqrt(p_exact * (1.0 - p_exact) / M);
        CHECK(std::fabs(p_hat - p_exact) <= bound + 2.0 / M);
    }
    SECTION("seeded determinism") {
        Rng rng(7);
        PhaseSeries s = gaussian_abab_series(8, 6, rng);
        const double a = randomization_test_mc(s, AssignmentScheme{}, Alternative::two_sided, 2000, 42).p_value;
        const double b = randomization_test_mc(s, AssignmentScheme{}, Alternative::two_sided, 2000, 42).p_value;
        CHECK(a == b);
    }
    SECTION("observation-level permutation variant") {
        Rng rng(8);
        PhaseSeries s = gaussian_abab_series(8, 6, rng, -1.0);
        AssignmentScheme scheme;
        scheme.kind = AssignmentScheme::Kind::observation_permutation;
        TestResult r = randomization_test_mc(s, scheme, Alternative::less, 5000, 13);
        CHECK(r.p_value > 0.0);
        CHECK(r.p_value <= 1.0);
        // strong effect: a generic permutation test should also see it
        CHECK(r.p_value < 0.05);
        CHECK_THROWS_AS(enumerate_block_labelings(scheme), UsageError);
    }
}

TEST_CASE("null calibration at the published design geometry (light version)") {
    // 8 blocks x 6 observations, iid gaussian: one-sided rejection rates near
    // 0.05 for the t-test and near 3/70 for the exact randomization test
    const int reps = 200;
    int t_hits = 0, scrt_hits = 0;
    Rng rng(909);
    for (int rep = 0; rep < reps; ++rep) {
        PhaseSeries s = gaussian_abab_series(8, 6, rng);
        if (paired_t_test(s, Alternative::less).p_value < 0.05) ++t_hits;
        if (scrt_exact(s, AssignmentScheme{}, Alternative::less).p_value < 0.05) ++scrt_hits;
    }
    const double t_rate = static_cast<double>(t_hits) / reps;
    const double scrt_rate = static_cast<double>(scrt_hits) / reps;
    CHECK(t_rate >= 0.01);
    CHECK(t_rate <= 0.10);
    CHECK(scrt_rate >= 0.01);
    CHECK(scrt_rate <= 0.10);
}
