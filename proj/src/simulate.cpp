#include "afcavi/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>

namespace afcavi {

namespace {

long round_half_up(double x) {
    return static_cast<long>(std::floor(x + 0.5));
}

// Uniform subset of size k as sorted indices.
std::vector<Eigen::Index> uniform_subset(Eigen::Index total, long k, SimRng& rng) {
    std::vector<Eigen::Index> all(static_cast<std::size_t>(total));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(static_cast<std::size_t>(k));
    std::sort(all.begin(), all.end());
    return all;
}

} // namespace

void SimulationSpec::validate() const {
    if (n < 1 || p < 1 || q < 1) {
        throw ValidationError("simulation spec: n, p, q must be positive");
    }
    if (a_p < 0.0 || a_p > 1.0 || a_q < 0.0 || a_q > 1.0) {
        throw ValidationError("simulation spec: a_p and a_q must lie in [0, 1]");
    }
    if (!(h2m > 0.0 && h2m < 1.0)) {
        throw ValidationError("simulation spec: h2m must lie in (0, 1)");
    }
    if (noise_block_size < 1) {
        throw ValidationError("simulation spec: noise_block_size must be >= 1");
    }
    if (noise_rho_max < 0.0 || noise_rho_max >= 1.0) {
        throw ValidationError("simulation spec: noise_rho_max must lie in [0, 1)");
    }
    if (!(maf_lo > 0.0 && maf_lo <= maf_hi && maf_hi <= 0.5)) {
        throw ValidationError("simulation spec: need 0 < maf_lo <= maf_hi <= 0.5");
    }
    if (a_q > 0.0 && a_p * static_cast<double>(p) < 1.0) {
        throw ValidationError("simulation spec: a_q > 0 requires a_p * p >= 1");
    }
}

double beta_draw(double a, double b, SimRng& rng) {
    std::gamma_distribution<double> ga(a, 1.0);
    std::gamma_distribution<double> gb(b, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    return x / (x + y);
}

Eigen::MatrixXd assign_association_pattern(const SimulationSpec& spec, SimRng& rng) {
    spec.validate();
    Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(spec.p, spec.q);
    if (spec.a_p <= 0.0 && spec.a_q <= 0.0) {
        return gamma;
    }
    if (spec.a_q > 0.0 && spec.a_p <= 0.0) {
        throw ValidationError("assign_association_pattern: active traits need active SNPs");
    }
    const long n_snp = std::max<long>(1, round_half_up(spec.a_p * static_cast<double>(spec.p)));
    const long n_trait =
        spec.a_q > 0.0 ? std::max<long>(1, round_half_up(spec.a_q * static_cast<double>(spec.q)))
                       : 0;
    if (n_trait == 0) {
        return gamma;
    }
    const auto active_snps = uniform_subset(spec.p, n_snp, rng);
    const auto active_traits = uniform_subset(spec.q, n_trait, rng);

    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (const Eigen::Index s : active_snps) {
        const double omega = beta_draw(spec.propensity_a, spec.propensity_b, rng);
        for (const Eigen::Index t : active_traits) {
            if (unif(rng) < omega) {
                gamma(s, t) = 1.0;
            }
        }
    }

    // Repair: every active SNP keeps >= 1 link, then every active trait.
    std::uniform_int_distribution<std::size_t> pick_trait(0, active_traits.size() - 1);
    for (const Eigen::Index s : active_snps) {
        if (gamma.row(s).sum() == 0.0) {
            gamma(s, active_traits[pick_trait(rng)]) = 1.0;
        }
    }
    std::uniform_int_distribution<std::size_t> pick_snp(0, active_snps.size() - 1);
    for (const Eigen::Index t : active_traits) {
        if (gamma.col(t).sum() == 0.0) {
            gamma(active_snps[pick_snp(rng)], t) = 1.0;
        }
    }
    return gamma;
}

std::pair<Eigen::MatrixXd, std::vector<double>> simulate_correlated_noise(
    const SimulationSpec& spec, SimRng& rng) {
    spec.validate();
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif_eta(0.0, spec.noise_rho_max);

    Eigen::MatrixXd E(spec.n, spec.q);
    std::vector<double> eta;
    for (Eigen::Index start = 0; start < spec.q; start += spec.noise_block_size) {
        const Eigen::Index width = std::min<Eigen::Index>(spec.noise_block_size, spec.q - start);
        const double eta_b = spec.noise_rho_max > 0.0 ? unif_eta(rng) : 0.0;
        eta.push_back(eta_b);
        Eigen::MatrixXd Z(spec.n, width);
        for (Eigen::Index j = 0; j < width; ++j) {
            for (Eigen::Index i = 0; i < spec.n; ++i) {
                Z(i, j) = normal(rng);
            }
        }
        Eigen::MatrixXd cov = Eigen::MatrixXd::Constant(width, width, eta_b);
        cov.diagonal().setOnes();
        const Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success) {
            throw NumericalError("equicorrelation matrix not positive definite");
        }
        E.middleCols(start, width) = Z * llt.matrixL().transpose();
    }
    return {E, eta};
}

void simulate_effect_sizes(const Eigen::MatrixXd& gamma_true, const SimulationSpec& spec,
                           const Eigen::VectorXd& maf, const Eigen::VectorXd& noise_var,
                           SimRng& rng, Eigen::MatrixXd& beta_true, Eigen::VectorXd& h2_t,
                           Eigen::MatrixXd& h2_st) {
    const Eigen::Index p = gamma_true.rows();
    const Eigen::Index q = gamma_true.cols();
    if (maf.size() != p || noise_var.size() != q) {
        throw ValidationError("simulate_effect_sizes: dimension mismatch");
    }
    for (Eigen::Index s = 0; s < p; ++s) {
        if (!(maf(s) > 0.0 && maf(s) <= 0.5)) {
            throw ValidationError("simulate_effect_sizes: maf must lie in (0, 0.5]");
        }
    }
    beta_true = Eigen::MatrixXd::Zero(p, q);
    h2_st = Eigen::MatrixXd::Zero(p, q);
    h2_t = Eigen::VectorXd::Zero(q);

    const double h2t_b = (1.0 - spec.h2m) / spec.h2m;
    std::uniform_int_distribution<int> sign_draw(0, 1);
    for (Eigen::Index t = 0; t < q; ++t) {
        if (gamma_true.col(t).sum() == 0.0) {
            continue;
        }
        double total = 1.0;
        int attempts = 0;
        do {
            if (++attempts > 100) {
                throw NumericalError("degenerate heritability draw for trait " +
                                     std::to_string(t));
            }
            total = beta_draw(1.0, h2t_b, rng);
        } while (total >= 1.0 - 1e-9);
        h2_t(t) = total;

        double raw_sum = 0.0;
        for (Eigen::Index s = 0; s < p; ++s) {
            if (gamma_true(s, t) != 0.0) {
                h2_st(s, t) = beta_draw(spec.persnp_a, spec.persnp_b, rng);
                raw_sum += h2_st(s, t);
            }
        }
        for (Eigen::Index s = 0; s < p; ++s) {
            if (gamma_true(s, t) == 0.0) continue;
            h2_st(s, t) *= total / raw_sum;
            const double f = maf(s);
            double beta = std::sqrt(h2_st(s, t) / (1.0 - total) * noise_var(t) /
                                    (2.0 * f * (1.0 - f)));
            if (spec.rademacher_signs && sign_draw(rng) == 1) {
                beta = -beta;
            }
            beta_true(s, t) = beta;
        }
    }
}

Eigen::MatrixXd simulate_responses(const Eigen::MatrixXd& X_raw,
                                   const Eigen::MatrixXd& beta_true,
                                   const Eigen::MatrixXd& E) {
    if (X_raw.cols() != beta_true.rows() || X_raw.rows() != E.rows() ||
        beta_true.cols() != E.cols()) {
        throw ValidationError("simulate_responses: dimension mismatch");
    }
    return X_raw * beta_true + E;
}

std::pair<Eigen::MatrixXd, Eigen::VectorXd> simulate_genotypes(Eigen::Index n, Eigen::Index p,
                                                               double maf_lo, double maf_hi,
                                                               SimRng& rng) {
    if (!(maf_lo > 0.0 && maf_lo <= maf_hi && maf_hi <= 0.5)) {
        throw ValidationError("simulate_genotypes: need 0 < maf_lo <= maf_hi <= 0.5");
    }
    std::uniform_real_distribution<double> unif_f(maf_lo, maf_hi);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd maf(p);
    for (Eigen::Index s = 0; s < p; ++s) {
        for (int attempt = 0;; ++attempt) {
            if (attempt > 1000) {
                throw NumericalError("simulate_genotypes: persistent monomorphic column");
            }
            const double f = unif_f(rng);
            for (Eigen::Index i = 0; i < n; ++i) {
                X(i, s) = (unif(rng) < f ? 1.0 : 0.0) + (unif(rng) < f ? 1.0 : 0.0);
            }
            if (n > 1 && X.col(s).minCoeff() == X.col(s).maxCoeff()) {
                continue; // monomorphic; redraw
            }
            maf(s) = f;
            break;
        }
    }
    return {X, maf};
}

SimResult simulate_scenario(const SimulationSpec& spec) {
    spec.validate();
    SimRng rng(spec.seed);
    SimResult out;
    std::tie(out.X_raw, out.maf) = simulate_genotypes(spec.n, spec.p, spec.maf_lo, spec.maf_hi, rng);
    out.truth.gamma_true = assign_association_pattern(spec, rng);
    Eigen::MatrixXd E;
    std::tie(E, out.truth.eta_b) = simulate_correlated_noise(spec, rng);
    const Eigen::VectorXd noise_var = Eigen::VectorXd::Ones(spec.q);
    simulate_effect_sizes(out.truth.gamma_true, spec, out.maf, noise_var, rng,
                          out.truth.beta_true, out.truth.h2_t, out.truth.h2_st);
    out.Y = simulate_responses(out.X_raw, out.truth.beta_true, E);
    return out;
}

SimulationSpec load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open scenario: " + path);
    }
    SimulationSpec s;
    std::map<std::string, std::function<void(const std::string&)>> setters = {
        {"n", [&](const std::string& v) { s.n = std::stol(v); }},
        {"p", [&](const std::string& v) { s.p = std::stol(v); }},
        {"q", [&](const std::string& v) { s.q = std::stol(v); }},
        {"a_p", [&](const std::string& v) { s.a_p = std::stod(v); }},
        {"a_q", [&](const std::string& v) { s.a_q = std::stod(v); }},
        {"h2m", [&](const std::string& v) { s.h2m = std::stod(v); }},
        {"noise_block_size", [&](const std::string& v) { s.noise_block_size = std::stoi(v); }},
        {"noise_rho_max", [&](const std::string& v) { s.noise_rho_max = std::stod(v); }},
        {"propensity_a", [&](const std::string& v) { s.propensity_a = std::stod(v); }},
        {"propensity_b", [&](const std::string& v) { s.propensity_b = std::stod(v); }},
        {"persnp_a", [&](const std::string& v) { s.persnp_a = std::stod(v); }},
        {"persnp_b", [&](const std::string& v) { s.persnp_b = std::stod(v); }},
        {"maf_lo", [&](const std::string& v) { s.maf_lo = std::stod(v); }},
        {"maf_hi", [&](const std::string& v) { s.maf_hi = std::stod(v); }},
        {"rademacher_signs", [&](const std::string& v) { s.rademacher_signs = std::stoi(v) != 0; }},
        {"seed", [&](const std::string& v) { s.seed = std::stoull(v); }},
    };
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        const std::string key = line.substr(0, eq);
        const auto it = setters.find(key);
        if (it == setters.end()) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        it->second(line.substr(eq + 1));
    }
    s.validate();
    return s;
}

void save_scenario(const std::string& path, const SimulationSpec& spec) {
    std::ofstream out(path, std::ios::binary);
    char buf[64];
    auto put = [&](const char* key, double v) {
        std::snprintf(buf, sizeof(buf), "%s=%.17g\n", key, v);
        out << buf;
    };
    out << "n=" << spec.n << "\np=" << spec.p << "\nq=" << spec.q << "\n";
    put("a_p", spec.a_p);
    put("a_q", spec.a_q);
    put("h2m", spec.h2m);
    out << "noise_block_size=" << spec.noise_block_size << "\n";
    put("noise_rho_max", spec.noise_rho_max);
    put("propensity_a", spec.propensity_a);
    put("propensity_b", spec.propensity_b);
    put("persnp_a", spec.persnp_a);
    put("persnp_b", spec.persnp_b);
    put("maf_lo", spec.maf_lo);
    put("maf_hi", spec.maf_hi);
    out << "rademacher_signs=" << (spec.rademacher_signs ? 1 : 0) << "\n";
    out << "seed=" << spec.seed << "\n";
}

void write_truth(const std::string& dir, const SimTruth& truth) {
    std::filesystem::create_directories(dir);
    const Eigen::Index q = truth.gamma_true.cols();
    std::vector<std::string> trait_ids;
    for (Eigen::Index t = 0; t < q; ++t) {
        trait_ids.push_back("trait" + std::to_string(t + 1));
    }
    write_matrix(dir + "/gamma_true.tsv", truth.gamma_true, trait_ids);
    write_matrix(dir + "/beta_true.tsv", truth.beta_true, trait_ids);
    std::ofstream out(dir + "/h2.tsv", std::ios::binary);
    out << "trait_id\th2_t\n";
    char buf[64];
    for (Eigen::Index t = 0; t < q; ++t) {
        std::snprintf(buf, sizeof(buf), "%s\t%.17g\n", trait_ids[static_cast<std::size_t>(t)].c_str(),
                      truth.h2_t(t));
        out << buf;
    }
}

std::vector<SnpMeta> synthetic_snp_meta(const Eigen::VectorXd& maf, long bp_start, long bp_step) {
    std::vector<SnpMeta> meta;
    for (Eigen::Index s = 0; s < maf.size(); ++s) {
        meta.push_back({"snp" + std::to_string(s + 1), bp_start + bp_step * static_cast<long>(s),
                        maf(s)});
    }
    return meta;
}

std::vector<TraitMeta> synthetic_trait_meta(Eigen::Index q) {
    std::vector<TraitMeta> meta;
    for (Eigen::Index t = 0; t < q; ++t) {
        meta.push_back({"trait" + std::to_string(t + 1), std::nullopt});
    }
    return meta;
}

} // namespace afcavi
