#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "afcavi/data.hpp"

// Synthetic-data generation: association-pattern assignment, block-wise
// equicorrelated noise, heritability-calibrated effect sizes, and
// Hardy-Weinberg genotypes for desk-scale experiments.

namespace afcavi {

struct SimulationSpec {
    Eigen::Index n = 0;
    Eigen::Index p = 0;
    Eigen::Index q = 0;
    double a_p = 0.0; // fraction of active SNPs
    double a_q = 0.0; // fraction of active traits
    double h2m = 0.1; // average total heritability of active traits
    int noise_block_size = 10;
    double noise_rho_max = 0.5;
    double propensity_a = 1.0, propensity_b = 5.0; // Beta for hotspot propensity
    double persnp_a = 2.0, persnp_b = 5.0;         // Beta for raw per-SNP h2 shares
    double maf_lo = 0.05, maf_hi = 0.5;
    bool rademacher_signs = false;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SimTruth {
    Eigen::MatrixXd gamma_true; // p x q, entries 0/1
    Eigen::MatrixXd beta_true;  // p x q, supp == supp(gamma_true)
    Eigen::VectorXd h2_t;       // per-trait total heritability
    Eigen::MatrixXd h2_st;      // per-link heritability shares
    std::vector<double> eta_b;  // per-noise-block equicorrelation
};

using SimRng = std::mt19937_64;

double beta_draw(double a, double b, SimRng& rng);

// Step 1: active sets, Beta-distributed hotspot propensities, repair pass
// guaranteeing every active SNP and every active trait keeps >= 1 link.
Eigen::MatrixXd assign_association_pattern(const SimulationSpec& spec, SimRng& rng);

// Step 2: unit-variance noise, equicorrelated within consecutive trait
// blocks with eta_b ~ Unif(0, noise_rho_max), independent across blocks.
std::pair<Eigen::MatrixXd, std::vector<double>> simulate_correlated_noise(
    const SimulationSpec& spec, SimRng& rng);

// Step 3: per-trait total heritability and per-link shares, converted to
// effect sizes beta = sqrt(h2_st / (1 - h2_t) * var_eps / (2 f (1 - f))).
void simulate_effect_sizes(const Eigen::MatrixXd& gamma_true, const SimulationSpec& spec,
                           const Eigen::VectorXd& maf, const Eigen::VectorXd& noise_var,
                           SimRng& rng, Eigen::MatrixXd& beta_true, Eigen::VectorXd& h2_t,
                           Eigen::MatrixXd& h2_st);

Eigen::MatrixXd simulate_responses(const Eigen::MatrixXd& X_raw,
                                   const Eigen::MatrixXd& beta_true, const Eigen::MatrixXd& E);

// Hardy-Weinberg Binomial(2, f) genotypes with f ~ Unif(maf_lo, maf_hi);
// monomorphic columns are redrawn.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> simulate_genotypes(Eigen::Index n, Eigen::Index p,
                                                               double maf_lo, double maf_hi,
                                                               SimRng& rng);

struct SimResult {
    Eigen::MatrixXd X_raw; // n x p genotypes on the 0-2 scale
    Eigen::MatrixXd Y;     // n x q responses
    Eigen::VectorXd maf;
    SimTruth truth;
};

// End-to-end scenario: genotypes, pattern, noise, effects, responses.
SimResult simulate_scenario(const SimulationSpec& spec);

SimulationSpec load_scenario(const std::string& path);
void save_scenario(const std::string& path, const SimulationSpec& spec);

// gamma_true.tsv, beta_true.tsv, h2.tsv under dir.
void write_truth(const std::string& dir, const SimTruth& truth);

// Evenly spaced synthetic metadata for desk-scale runs.
std::vector<SnpMeta> synthetic_snp_meta(const Eigen::VectorXd& maf, long bp_start = 100000,
                                        long bp_step = 5000);
std::vector<TraitMeta> synthetic_trait_meta(Eigen::Index q);

} // namespace afcavi
