#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "afcavi/model.hpp"

// Adaptive-focus machinery: activity scores, perturbation schedules,
// selection probabilities, subset draws and the intermittent-ELBO policy.

namespace afcavi {

struct FocusRng {
    std::uint64_t seed = 0;
    std::uint64_t iteration = 0;
};

struct FocusState {
    Eigen::VectorXd scores;        // a_t, in [0, 1]
    double epsilon = 1.0;          // perturbation parameter
    Eigen::VectorXd omega;         // selection probabilities
    std::vector<bool> selected;    // drawn subset indicator
    long af_iteration = 0;         // iterations elapsed since warm-up end
    int elbo_eval_gap = 16;        // AFIO: iterations between ELBO evaluations
    std::uint64_t rng_seed = 0;
};

// Variational probability that the trait has at least one association,
// 1 - prod_s (1 - g_s), evaluated in log space.
double activity_score(const LocalFactor& local);

// AFE schedule: logistic of log(delta ELBO), which simplifies to d/(1+d).
double perturbation_afe(double delta_elbo);

// AFI schedule: decay^(i-1).
double perturbation_afi(long af_iteration, double decay);

// Default (prose-consistent) form omega = (1-eps)*a + eps; the literal
// printed form omega = (1-eps) + a*eps behind the flag.
Eigen::VectorXd selection_probabilities(const Eigen::VectorXd& scores, double epsilon,
                                        bool literal = false);

// Independent Bernoulli(omega_t) draws from the per-trait deterministic
// stream; an all-false draw force-selects the argmax-omega trait.
std::vector<bool> draw_focus_set(const Eigen::VectorXd& omega, const FocusRng& rng);

// Uniform subset of exact size round(fraction * q).
std::vector<bool> rf_focus_set(Eigen::Index q, double fraction, const FocusRng& rng);

// AFIO policy: evaluate when af_iteration is a multiple of the current gap.
bool afio_should_eval_elbo(const FocusState& state);

// Halve the gap (floor 1) once the per-iteration improvement at the latest
// evaluation drops below 100 * tol; the gap never increases.
void afio_update_gap(FocusState& state, double per_iter_improvement, double tol);

} // namespace afcavi
