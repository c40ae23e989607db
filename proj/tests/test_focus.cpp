#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "afcavi/focus.hpp"
#include "afcavi/mathx.hpp"

using namespace afcavi;

namespace {

LocalFactor factor_with_g(std::initializer_list<double> g) {
    LocalFactor f;
    f.g = Eigen::VectorXd(static_cast<Eigen::Index>(g.size()));
    Eigen::Index i = 0;
    for (const double v : g) f.g(i++) = v;
    return f;
}

} // namespace

TEST_CASE("activity_score") {
    CHECK(activity_score(factor_with_g({0.0, 0.0, 0.0})) == 0.0);
    CHECK(activity_score(factor_with_g({0.2, 1.0, 0.0})) == 1.0);
    CHECK(activity_score(factor_with_g({0.5, 0.5})) == doctest::Approx(0.75).epsilon(1e-14));
    // tiny probabilities stay meaningful in log space
    CHECK(activity_score(factor_with_g({1e-12, 1e-12})) ==
          doctest::Approx(2e-12).epsilon(1e-6));
}

TEST_CASE("perturbation_afe schedule") {
    CHECK(perturbation_afe(1.0) == 0.5);
    CHECK(perturbation_afe(0.01) == doctest::Approx(0.01 / 1.01).epsilon(1e-14));
    CHECK(perturbation_afe(1e9) > 0.999999);
    CHECK(perturbation_afe(-3.0) == doctest::Approx(1e-12).epsilon(1e-6)); // clamped floor
    CHECK(perturbation_afe(2.0) > perturbation_afe(1.0)); // increasing in delta
}

TEST_CASE("perturbation_afi schedule") {
    CHECK(perturbation_afi(1, 0.95) == 1.0);
    CHECK(perturbation_afi(2, 0.95) == 0.95);
    CHECK(perturbation_afi(15, 0.95) == doctest::Approx(std::pow(0.95, 14)).epsilon(1e-15));
    double prev = 2.0;
    for (long i = 1; i <= 30; ++i) {
        const double eps = perturbation_afi(i, 0.95);
        CHECK(eps < prev); // strictly decreasing
        prev = eps;
    }
}

TEST_CASE("selection_probabilities: default and literal forms") {
    Eigen::VectorXd a(3);
    a << 0.3, 0.4, 1.0;
    const Eigen::VectorXd all_on = selection_probabilities(a, 1.0);
    CHECK(all_on.isOnes());
    const Eigen::VectorXd focused = selection_probabilities(a, 0.0);
    CHECK(focused(0) == doctest::Approx(0.3));
    const Eigen::VectorXd mid = selection_probabilities(a, 0.5);
    CHECK(mid(1) == doctest::Approx(0.7).epsilon(1e-14)); // 0.5*0.4 + 0.5

    const Eigen::VectorXd lit1 = selection_probabilities(a, 1.0, true);
    CHECK(lit1(0) == doctest::Approx(0.3)); // literal form collapses to a at eps = 1
    const Eigen::VectorXd lit0 = selection_probabilities(a, 0.0, true);
    CHECK(lit0.isOnes());
}

TEST_CASE("selection probabilities bracket and are monotone (default form)") {
    for (double a = 0.0; a <= 1.0; a += 0.1) {
        double prev = -1.0;
        for (double eps = 0.0; eps <= 1.0001; eps += 0.05) {
            Eigen::VectorXd score(1);
            score << a;
            const double w = selection_probabilities(score, std::min(eps, 1.0))(0);
            CHECK(w >= a - 1e-12);
            CHECK(w <= 1.0 + 1e-12);
            CHECK(w >= prev - 1e-12); // non-decreasing in eps
            prev = w;
        }
    }
}

TEST_CASE("draw_focus_set limits and force rule") {
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(6);
    const auto all = draw_focus_set(ones, {1, 1});
    CHECK(std::count(all.begin(), all.end(), true) == 6);

    const Eigen::VectorXd zeros = Eigen::VectorXd::Zero(6);
    const auto forced = draw_focus_set(zeros, {1, 1});
    CHECK(std::count(forced.begin(), forced.end(), true) == 1);
    CHECK(forced[0]); // argmax with lowest-index tie-break

    Eigen::VectorXd skew = Eigen::VectorXd::Zero(4);
    skew(2) = 1e-300; // still numerically zero chance, but the largest omega
    const auto forced2 = draw_focus_set(skew, {9, 5});
    CHECK(std::count(forced2.begin(), forced2.end(), true) == 1);
    CHECK(forced2[2]);
}

TEST_CASE("draw_focus_set Bernoulli marginals") {
    const Eigen::VectorXd omega = Eigen::VectorXd::Constant(10, 0.3);
    long hits = 0;
    const long draws = 100000;
    for (long i = 0; i < draws; ++i) {
        const auto z = draw_focus_set(omega, {77, static_cast<std::uint64_t>(i + 1)});
        hits += z[3] ? 1 : 0;
    }
    CHECK(static_cast<double>(hits) / static_cast<double>(draws) ==
          doctest::Approx(0.3).epsilon(0.017));
}

TEST_CASE("expected work identity E|T| = sum omega") {
    Eigen::VectorXd omega(5);
    omega << 0.1, 0.9, 0.5, 0.25, 0.7;
    const double expected = omega.sum();
    double var = 0.0;
    for (Eigen::Index t = 0; t < omega.size(); ++t) {
        var += omega(t) * (1.0 - omega(t));
    }
    const long draws = 20000;
    double total = 0.0;
    for (long i = 0; i < draws; ++i) {
        const auto z = draw_focus_set(omega, {5, static_cast<std::uint64_t>(i + 1)});
        total += static_cast<double>(std::count(z.begin(), z.end(), true));
    }
    const double se = std::sqrt(var / static_cast<double>(draws));
    CHECK(std::abs(total / static_cast<double>(draws) - expected) <= 3.0 * se);
}

TEST_CASE("rf_focus_set size and uniformity") {
    const auto all = rf_focus_set(7, 1.0, {1, 1});
    CHECK(std::count(all.begin(), all.end(), true) == 7);
    const auto half = rf_focus_set(10, 0.5, {1, 1});
    CHECK(std::count(half.begin(), half.end(), true) == 5);
    const auto odd = rf_focus_set(5, 0.5, {1, 2});
    CHECK(std::count(odd.begin(), odd.end(), true) == 3); // round-half-up of 2.5

    std::vector<long> freq(10, 0);
    const long draws = 10000;
    for (long i = 0; i < draws; ++i) {
        const auto z = rf_focus_set(10, 0.5, {31, static_cast<std::uint64_t>(i + 1)});
        for (int t = 0; t < 10; ++t) freq[static_cast<std::size_t>(t)] += z[static_cast<std::size_t>(t)];
    }
    for (const long f : freq) {
        CHECK(static_cast<double>(f) / static_cast<double>(draws) ==
              doctest::Approx(0.5).epsilon(0.03));
    }
}

TEST_CASE("deterministic draws are independent of evaluation order") {
    const Eigen::VectorXd omega = Eigen::VectorXd::Constant(20, 0.4);
    const auto a = draw_focus_set(omega, {123, 9});
    const auto b = draw_focus_set(omega, {123, 9});
    CHECK(a == b);
    const auto c = rf_focus_set(20, 0.3, {123, 9});
    const auto d = rf_focus_set(20, 0.3, {123, 9});
    CHECK(c == d);
}

TEST_CASE("afio evaluation policy and gap halving") {
    FocusState state;
    state.elbo_eval_gap = 16;
    state.af_iteration = 16;
    CHECK(afio_should_eval_elbo(state));
    state.af_iteration = 17;
    CHECK_FALSE(afio_should_eval_elbo(state));
    state.elbo_eval_gap = 1;
    for (long i = 1; i <= 5; ++i) {
        state.af_iteration = i;
        CHECK(afio_should_eval_elbo(state));
    }

    state.elbo_eval_gap = 16;
    afio_update_gap(state, 5.0, 0.01); // improvement above 100*tol: unchanged
    CHECK(state.elbo_eval_gap == 16);
    afio_update_gap(state, 0.5, 0.01); // below 1.0: halve
    CHECK(state.elbo_eval_gap == 8);
    for (int i = 0; i < 10; ++i) {
        afio_update_gap(state, 0.0, 0.01);
    }
    CHECK(state.elbo_eval_gap == 1); // floor, never below
}
