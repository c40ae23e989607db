#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "afcavi/evaluate.hpp"
#include "afcavi/mathx.hpp"
#include "afcavi/simulate.hpp"

using namespace afcavi;

TEST_CASE("confusion metrics: perfect, empty-positive and enumerated cases") {
    Eigen::MatrixXd truth(2, 2);
    truth << 1, 0, 0, 0;

    ScorePanel perfect = confusion_metrics(truth, truth, 0.5);
    CHECK(perfect.precision.value() == 1.0);
    CHECK(perfect.recall.value() == 1.0);
    CHECK(perfect.fpr.value() == 0.0);

    const Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(2, 2);
    ScorePanel empty = confusion_metrics(zeros, truth, 0.5);
    CHECK(empty.recall.value() == 0.0);
    CHECK(empty.fpr.value() == 0.0);
    CHECK_FALSE(empty.precision.has_value()); // 0/0 stays a marker

    Eigen::MatrixXd scores(2, 2);
    scores << 0.9, 0.1, 0.6, 0.2;
    ScorePanel panel = confusion_metrics(scores, truth, 0.5);
    CHECK(panel.precision.value() == doctest::Approx(0.5));
    CHECK(panel.recall.value() == doctest::Approx(1.0));
    CHECK(panel.fpr.value() == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("recall is non-increasing as the threshold sweeps up") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unif;
    Eigen::MatrixXd scores(20, 5), truth(20, 5);
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        scores(i) = unif(rng);
        truth(i) = unif(rng) < 0.3 ? 1.0 : 0.0;
    }
    double prev = 2.0;
    for (double thr = 0.0; thr <= 1.0; thr += 0.05) {
        const double recall = confusion_metrics(scores, truth, thr).recall.value();
        CHECK(recall <= prev + 1e-15);
        prev = recall;
    }
}

TEST_CASE("roc/pr: separation, anti-separation and the Monte-Carlo null") {
    Eigen::VectorXd scores(6);
    scores << 0.9, 0.8, 0.7, 0.3, 0.2, 0.1;
    const std::vector<bool> truth = {true, true, true, false, false, false};
    const RocPr sep = roc_pr_curves(scores, truth);
    CHECK(sep.auroc == doctest::Approx(1.0));
    CHECK(sep.auprc == doctest::Approx(1.0));

    const std::vector<bool> rev = {false, false, false, true, true, true};
    CHECK(roc_pr_curves(scores, rev).auroc == doctest::Approx(0.0));

    CHECK_THROWS_AS(roc_pr_curves(scores, std::vector<bool>(6, true)), ValidationError);

    const long n = 100000;
    Eigen::VectorXd s(n);
    std::vector<bool> t(n);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> unif;
    for (long i = 0; i < n; ++i) {
        s(i) = unif(rng);
        t[static_cast<std::size_t>(i)] = unif(rng) < 0.4;
    }
    CHECK(roc_pr_curves(s, t).auroc == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("auroc is invariant under strictly monotone transforms and handles ties") {
    Eigen::VectorXd scores(8);
    scores << 0.1, 0.4, 0.4, 0.7, 0.2, 0.9, 0.6, 0.3;
    const std::vector<bool> truth = {false, true, false, true, false, true, false, true};
    const double base = roc_pr_curves(scores, truth).auroc;
    Eigen::VectorXd warped = scores;
    for (Eigen::Index i = 0; i < warped.size(); ++i) {
        warped(i) = std::exp(3.0 * warped(i)) + 1.0;
    }
    CHECK(roc_pr_curves(warped, truth).auroc == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("relative change") {
    CHECK(relative_change(50.0, 100.0) == doctest::Approx(-50.0));
    CHECK(relative_change(100.0, 100.0) == 0.0);
    CHECK(relative_change(120.0, 100.0) == doctest::Approx(20.0));
    CHECK(relative_change(7.3, 7.3) == 0.0);
    CHECK_THROWS_AS(relative_change(1.0, 0.0), ValidationError);
}

TEST_CASE("oracle: p = 1 symmetric case against a direct two-term sum") {
    // X^T y = 0 by construction, so the data cannot favor inclusion through fit
    Eigen::MatrixXd X(4, 1);
    X << 1, -1, 1, -1;
    Eigen::VectorXd y(4);
    y << 0.5, 0.5, -0.5, -0.5;
    REQUIRE(std::abs((X.transpose() * y)(0, 0)) < 1e-15);

    FrozenGlobals fixed;
    fixed.tau = 1.7;
    fixed.sigma2 = 0.9;
    fixed.prior_inclusion = Eigen::VectorXd::Constant(1, 0.35);
    const OracleResult oracle = exact_posterior_oracle(X, y, fixed);

    const double yty = y.squaredNorm();
    const double xtx = 4.0;
    const double ll0 = -2.0 * (kLog2Pi - std::log(fixed.tau)) - 0.5 * fixed.tau * yty;
    const double ll1 = -2.0 * (kLog2Pi - std::log(fixed.tau)) -
                       0.5 * std::log1p(fixed.sigma2 * xtx) - 0.5 * fixed.tau * yty;
    const double w1 = 0.35 * std::exp(ll1);
    const double w0 = 0.65 * std::exp(ll0);
    CHECK(oracle.ppi(0) == doctest::Approx(w1 / (w0 + w1)).epsilon(1e-12));
    CHECK(oracle.log_evidence == doctest::Approx(std::log(w0 + w1)).epsilon(1e-12));
    CHECK(oracle.slab_mean(0) == doctest::Approx(0.0).scale(1).epsilon(1e-14));
}

TEST_CASE("oracle log evidence matches quadrature over beta at p = 1") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd X(30, 1);
    Eigen::VectorXd y(30);
    for (int i = 0; i < 30; ++i) {
        X(i, 0) = normal(rng);
        y(i) = 0.4 * X(i, 0) + normal(rng);
    }
    FrozenGlobals fixed;
    fixed.tau = 1.3;
    fixed.sigma2 = 0.7;
    fixed.prior_inclusion = Eigen::VectorXd::Constant(1, 0.25);
    const OracleResult oracle = exact_posterior_oracle(X, y, fixed);

    // numeric integration of the slab branch over beta
    const double sd = std::sqrt(fixed.sigma2 / fixed.tau);
    const double yty = y.squaredNorm();
    const double xty = (X.transpose() * y)(0, 0);
    const double xtx = (X.transpose() * X)(0, 0);
    const long grid = 400000;
    const double lo = -10.0 * sd, hi = 10.0 * sd;
    const double h = (hi - lo) / static_cast<double>(grid);
    double acc = 0.0;
    for (long i = 0; i <= grid; ++i) {
        const double b = lo + h * static_cast<double>(i);
        const double log_prior_b =
            -0.5 * kLog2Pi - std::log(sd) - 0.5 * b * b / (sd * sd);
        const double rss = yty - 2.0 * b * xty + b * b * xtx;
        const double log_lik =
            -15.0 * (kLog2Pi - std::log(fixed.tau)) - 0.5 * fixed.tau * rss;
        const double w = (i == 0 || i == grid) ? 0.5 : 1.0;
        acc += w * std::exp(log_prior_b + log_lik);
    }
    const double slab_branch = acc * h;
    const double spike_branch =
        std::exp(-15.0 * (kLog2Pi - std::log(fixed.tau)) - 0.5 * fixed.tau * yty);
    const double evidence = std::log(0.25 * slab_branch + 0.75 * spike_branch);
    CHECK(oracle.log_evidence == doctest::Approx(evidence).epsilon(1e-8));
}

TEST_CASE("oracle input validation") {
    Eigen::MatrixXd X(4, 13);
    X.setRandom();
    Eigen::VectorXd y(4);
    y.setRandom();
    FrozenGlobals fixed;
    fixed.tau = 1.0;
    fixed.sigma2 = 1.0;
    fixed.prior_inclusion = Eigen::VectorXd::Constant(13, 0.5);
    CHECK_THROWS_AS(exact_posterior_oracle(X, y, fixed), ValidationError);
}

TEST_CASE("benchmark: vanilla self-comparison and degenerate RF") {
    SimulationSpec spec;
    spec.n = 120;
    spec.p = 20;
    spec.q = 15;
    spec.a_p = 0.1;
    spec.a_q = 0.4;
    spec.h2m = 0.3;
    Hyperparameters hyper;
    hyper.warmup_iters = 12;
    hyper.anneal_grid = 10;
    hyper.max_iters = 300;
    hyper.tol = 1e-3;

    auto gen = [&](int rep) {
        SimulationSpec s = spec;
        s.seed = 1000 + static_cast<std::uint64_t>(rep);
        const SimResult sim = simulate_scenario(s);
        Replicate out;
        out.dataset = standardize(sim.X_raw, sim.Y, synthetic_snp_meta(sim.maf),
                                  synthetic_trait_meta(s.q));
        out.gamma_true = sim.truth.gamma_true;
        return out;
    };

    FitConfig vanilla;
    vanilla.scheme = Scheme::vanilla;
    vanilla.seed = 4;
    const auto self_rows = benchmark_fit(gen, hyper, {vanilla}, 3);
    REQUIRE(self_rows.size() == 1);
    CHECK(self_rows[0].d_iterations_pct == 0.0);
    CHECK(self_rows[0].d_local_updates_pct == 0.0);
    CHECK(self_rows[0].d_runtime_total_pct == 0.0);

    FitConfig rf = vanilla;
    rf.scheme = Scheme::rf;
    rf.rf_fraction = 1.0;
    const auto rows = benchmark_fit(gen, hyper, {vanilla, rf}, 3);
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].d_local_updates_pct == 0.0); // same iterations, all traits each time
    CHECK(rows[1].recall_mean == doctest::Approx(rows[0].recall_mean).epsilon(1e-12));

    write_comparison("/tmp/afcavi_comparison_test.tsv", rows);
    std::ifstream in("/tmp/afcavi_comparison_test.tsv");
    std::string header;
    std::getline(in, header);
    CHECK(header.find("d_iterations_pct") != std::string::npos);
}
