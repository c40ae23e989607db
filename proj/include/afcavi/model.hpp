#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "afcavi/data.hpp"

// The hierarchical model: hyperparameters, prior solving and the variational
// state the engine updates. Half-Cauchy scales are carried through their
// inverse-Gamma scale-mixture representation so that every coordinate update
// stays closed form; the probit link on the inclusion indicators is handled
// through latent-Gaussian moments recomputed on the fly.

namespace afcavi {

struct Hyperparameters {
    // Prior expected number / variance of active predictors per response,
    // moment-matched into the N(n0, t0^2) prior on the per-trait propensity.
    double e_active = 1.0;
    double v_active = 4.0;
    // Set to use (n0, t0) below directly instead of moment matching.
    bool zeta_prior_literal = false;
    double n0_literal = 1.0;
    double t0_literal = 4.0;

    double tau_shape0 = 0.01;
    double tau_rate0 = 0.01;
    double sig_shape0 = 0.01;
    double sig_rate0 = 0.01;

    double anneal_T0 = 2.0;
    int anneal_grid = 10;
    double tol = 0.01;
    int warmup_iters = 50;
    int max_iters = 5000;

    void validate() const;
};

Hyperparameters load_hyperparameters(const std::string& path);
void save_hyperparameters(const std::string& path, const Hyperparameters& hyper);

struct ZetaPrior {
    double n0 = 0.0;
    double t0 = 1.0;
};

// Finds (n0, t0) such that, with zeta ~ N(n0, t0^2) and a Binomial(p,
// Phi(zeta)) count of associated predictors, the count has mean e_active and
// variance v_active. Gauss-Hermite quadrature plus nested bisection.
ZetaPrior solve_zeta_prior(const Hyperparameters& hyper, Eigen::Index p);

// One per trait: joint spike-and-slab factors over all predictors, the noise
// precision factor and the trait propensity factor.
struct LocalFactor {
    Eigen::VectorXd mu;       // slab means of q(beta | gamma = 1)
    Eigen::VectorXd s2;       // slab variances
    Eigen::VectorXd g;        // q(gamma = 1), the PPIs
    double tau_shape = 1.0;   // q(tau_t) Gamma
    double tau_rate = 1.0;
    double zeta_mean = 0.0;   // q(zeta_t) Gaussian
    double zeta_var = 1.0;
    Eigen::VectorXd xr_cache; // X^T (y_t - X E[gamma.*beta]), maintained incrementally
};

struct GlobalFactor {
    Eigen::VectorXd theta_mean; // q(theta_s) Gaussian
    Eigen::VectorXd theta_var;
    double sig_shape = 1.0;     // q(sigma^-2) Gamma
    double sig_rate = 1.0;
    Eigen::VectorXd lam_shape;  // q(lambda_s^-2) Gamma
    Eigen::VectorXd lam_rate;
    Eigen::VectorXd lam_aux_rate; // q(1/a_s) = Gamma(1, .)
    double sig0_shape = 1.0;    // q(sigma0^-2) Gamma
    double sig0_rate = 1.0;
    double sig0_aux_rate = 1.0; // q(1/b) = Gamma(1, .)
};

struct VariationalState {
    std::vector<LocalFactor> locals;
    GlobalFactor global;
    ZetaPrior zeta_prior;
    double elbo = -std::numeric_limits<double>::infinity();
    long iteration = 0;
};

VariationalState init_state(const Dataset& dataset, const Hyperparameters& hyper,
                            std::uint64_t seed);

// Exact round-trip checkpoint (raw little-endian doubles).
void save_state(const std::string& path, const VariationalState& state);
VariationalState load_state(const std::string& path);

} // namespace afcavi
