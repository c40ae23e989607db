#include "afcavi/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "afcavi/mathx.hpp"

namespace afcavi {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// Raising a Gamma factor to power 1/T and renormalizing.
void temper_gamma(double shape, double rate, double temperature, double& out_shape,
                  double& out_rate) {
    out_shape = (shape - 1.0) / temperature + 1.0;
    out_rate = rate / temperature;
}

// Joint block optimum for an intercept-like Gaussian factor paired with its
// latent probit variables: the stationarity condition is
//   prior_prec * (x - prior_mean) = sum_corr(x),
// where sum_corr aggregates truncated-normal mean shifts and is decreasing
// in x. Alternating one-step refreshes approach this root with contraction
// count/(count + prior_prec), which is painfully slow for large counts, so
// solve it directly with a bracketed Newton iteration. SumFn must fill the
// derivative of sum_corr into its second argument.
template <class SumFn>
double solve_probit_mean(double x0, double prior_prec, double prior_mean, SumFn&& sum_corr) {
    auto f = [&](double x, double& df) {
        double dsum = 0.0;
        const double sum = sum_corr(x, dsum);
        df = prior_prec - dsum; // dsum <= 0, so df >= prior_prec > 0
        return prior_prec * (x - prior_mean) - sum;
    };
    double x = x0;
    double df = 0.0;
    double fx = f(x, df);
    // f is strictly increasing, so signs seen so far bracket the root; the
    // bracket is built on the fly rather than up front because the common
    // case is a start point already at (or within one Newton step of) the
    // root, where the solve should cost one or two evaluations.
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    double step = 1.0;
    for (int it = 0; it < 200; ++it) {
        if (fx > 0.0) {
            hi = x;
        } else {
            lo = x;
        }
        // the pending Newton step |fx| / df is the displacement still to go
        if (std::abs(fx) <= df * 1e-12 * (1.0 + std::abs(x))) {
            break;
        }
        double next = x - fx / df;
        if (!(next > lo && next < hi)) {
            if (std::isfinite(lo) && std::isfinite(hi)) {
                next = 0.5 * (lo + hi);
            } else {
                next = x - std::copysign(step, fx);
                step *= 2.0;
            }
        }
        const double moved = std::abs(next - x);
        x = next;
        fx = f(x, df);
        if (moved < 1e-12 * (1.0 + std::abs(x))) {
            break;
        }
    }
    return x;
}

} // namespace

Scheme scheme_from_string(const std::string& name) {
    if (name == "vanilla") return Scheme::vanilla;
    if (name == "rf") return Scheme::rf;
    if (name == "afe") return Scheme::afe;
    if (name == "afi") return Scheme::afi;
    if (name == "afio") return Scheme::afio;
    throw ValidationError("unknown scheme: " + name);
}

std::string scheme_name(Scheme scheme) {
    switch (scheme) {
        case Scheme::vanilla: return "vanilla";
        case Scheme::rf: return "rf";
        case Scheme::afe: return "afe";
        case Scheme::afi: return "afi";
        case Scheme::afio: return "afio";
    }
    return "?";
}

void FitConfig::validate() const {
    if (!(rf_fraction > 0.0 && rf_fraction <= 1.0)) {
        throw ValidationError("rf_fraction must be in (0, 1]");
    }
    if (!(afi_decay > 0.0 && afi_decay < 1.0)) {
        throw ValidationError("afi_decay must be in (0, 1)");
    }
    if (afio_gap_start < 1) {
        throw ValidationError("afio_gap_start must be >= 1");
    }
    if (n_threads < 1) {
        throw ValidationError("n_threads must be >= 1");
    }
}

double annealing_temperature(long iteration, const Hyperparameters& hyper) {
    if (hyper.anneal_grid <= 1 || iteration >= hyper.anneal_grid) {
        return 1.0;
    }
    const double k = static_cast<double>(iteration);
    const double grid = static_cast<double>(hyper.anneal_grid);
    return std::pow(hyper.anneal_T0, 1.0 - (k - 1.0) / (grid - 1.0));
}

Engine::Engine(const Dataset& dataset, const Hyperparameters& hyper)
    : dataset_(dataset), hyper_(hyper) {
    hyper_.validate();
    gram_.noalias() = dataset.X.transpose() * dataset.X;
    xty_.noalias() = dataset.X.transpose() * dataset.Y;
    xnorm2_ = gram_.diagonal();
    yty_ = dataset.Y.colwise().squaredNorm();
}

VariationalState Engine::init(std::uint64_t seed) const {
    return init_state(dataset_, hyper_, seed);
}

Eigen::VectorXd Engine::rebuild_xr_cache(const VariationalState& state, Eigen::Index t) const {
    const LocalFactor& f = state.locals[static_cast<std::size_t>(t)];
    const Eigen::VectorXd b = f.g.cwiseProduct(f.mu);
    return xty_.col(t) - gram_ * b;
}

void Engine::update_local_factor(VariationalState& state, Eigen::Index t,
                                 double temperature, int cycles) const {
    LocalFactor& f = state.locals[static_cast<std::size_t>(t)];
    const GlobalFactor& gl = state.global;
    const Eigen::Index p = dataset_.p();
    const double n = static_cast<double>(dataset_.n());
    const double inv_t = 1.0 / temperature;

    const double e_siginv2 = gl.sig_shape / gl.sig_rate;
    const double elog_siginv2 = gamma_elog(gl.sig_shape, gl.sig_rate);
    const double t0 = state.zeta_prior.t0;
    const double zeta_prec = 1.0 / (t0 * t0);

    // Cycle the trait's own blocks (spike-and-slab sweep, tau, zeta) up to
    // `cycles` times. Each sub-update is an exact coordinate step, so extra
    // cycles preserve the ascent property; the caller grants one cycle per
    // iteration the trait sat out, letting a rarely-visited trait absorb its
    // pending improvement in a single visit instead of dribbling it across
    // many.
    for (int cycle = 0; cycle < cycles; ++cycle) {
        const double e_tau = f.tau_shape / f.tau_rate;
        const double elog_tau = gamma_elog(f.tau_shape, f.tau_rate);
        const double zeta = f.zeta_mean;

        // Spike-and-slab sweep in fixed ascending order.
        double max_move = 0.0;
        for (Eigen::Index s = 0; s < p; ++s) {
            const double b_old = f.g(s) * f.mu(s);
            const double c = f.xr_cache(s) + xnorm2_(s) * b_old;
            const double prec = e_tau * (xnorm2_(s) + e_siginv2);
            const double mu = e_tau * c / prec;
            const double m = gl.theta_mean(s) + zeta;
            const double logit = norm_logcdf_diff(m) +
                                 0.5 * (elog_tau + elog_siginv2 - std::log(prec)) +
                                 0.5 * e_tau * e_tau * c * c / prec;
            const double g = logistic(logit * inv_t);
            f.mu(s) = mu;
            f.s2(s) = temperature / prec;
            f.g(s) = g;
            const double delta = g * mu - b_old;
            if (delta != 0.0) {
                max_move = std::max(max_move, std::abs(delta));
                f.xr_cache.noalias() -= delta * gram_.col(s);
            }
        }
        if (!f.mu.allFinite() || !f.g.allFinite() || !f.xr_cache.allFinite()) {
            throw NumericalError("non-finite local factor for trait " + std::to_string(t) +
                                 " at iteration " + std::to_string(state.iteration));
        }

        // tau_t refresh.
        const Eigen::VectorXd b = f.g.cwiseProduct(f.mu);
        const double sg = f.g.sum();
        const double sgb2 = f.g.dot((f.mu.array().square() + f.s2.array()).matrix());
        const double quad = std::max(
            0.0, yty_(t) - b.dot(xty_.col(t)) - b.dot(f.xr_cache) +
                     xnorm2_.dot((f.g.array() * (f.mu.array().square() + f.s2.array()) -
                                  b.array().square())
                                     .matrix()));
        temper_gamma(hyper_.tau_shape0 + 0.5 * n + 0.5 * sg,
                     hyper_.tau_rate0 + 0.5 * quad + 0.5 * e_siginv2 * sgb2, temperature,
                     f.tau_shape, f.tau_rate);

        // zeta_t refresh: block optimum with the latent probit variables.
        f.zeta_mean = solve_probit_mean(
            zeta, zeta_prec, state.zeta_prior.n0, [&](double z, double& dsum) {
                double sum = 0.0;
                for (Eigen::Index s = 0; s < p; ++s) {
                    const double m = gl.theta_mean(s) + z;
                    const double g = f.g(s);
                    double hp, hn;
                    gauss_hazard_pair(m, hp, hn);
                    sum += g * hp - (1.0 - g) * hn;
                    dsum += -g * hp * (m + hp) - (1.0 - g) * hn * (-m + hn);
                }
                return sum;
            });
        if (max_move < 1e-10 && std::abs(f.zeta_mean - zeta) < 1e-10) {
            break;
        }
    }
    f.zeta_var = temperature / (static_cast<double>(p) + zeta_prec);
    if (!std::isfinite(f.tau_rate) || !std::isfinite(f.zeta_mean)) {
        throw NumericalError("non-finite tau/zeta factor for trait " + std::to_string(t) +
                             " at iteration " + std::to_string(state.iteration));
    }
}

void Engine::update_global_factors(VariationalState& state, double temperature) const {
    GlobalFactor& gl = state.global;
    const Eigen::Index p = dataset_.p();
    const Eigen::Index q = dataset_.q();
    const double qd = static_cast<double>(q);

    // sigma^-2: aggregates E[gamma beta^2 tau] over the whole grid; it sees
    // the locals only, so it sits outside the horseshoe loop below.
    double sg_all = 0.0;
    double slab_mass = 0.0;
    for (const auto& f : state.locals) {
        sg_all += f.g.sum();
        slab_mass += (f.tau_shape / f.tau_rate) *
                     f.g.dot((f.mu.array().square() + f.s2.array()).matrix());
    }
    temper_gamma(hyper_.sig_shape0 + 0.5 * sg_all, hyper_.sig_rate0 + 0.5 * slab_mass,
                 temperature, gl.sig_shape, gl.sig_rate);

    // theta_s: block optimum with the latent probit variables, per predictor.
    const double e_sig0inv = gl.sig0_shape / gl.sig0_rate;
    for (Eigen::Index s = 0; s < p; ++s) {
        const double e_laminv = gl.lam_shape(s) / gl.lam_rate(s);
        const double prior_prec = e_laminv * e_sig0inv;
        gl.theta_mean(s) = solve_probit_mean(
            gl.theta_mean(s), prior_prec, 0.0, [&](double th, double& dsum) {
                double sum = 0.0;
                for (Eigen::Index t = 0; t < q; ++t) {
                    const LocalFactor& f = state.locals[static_cast<std::size_t>(t)];
                    const double m = th + f.zeta_mean;
                    const double g = f.g(s);
                    double hp, hn;
                    gauss_hazard_pair(m, hp, hn);
                    sum += g * hp - (1.0 - g) * hn;
                    dsum += -g * hp * (m + hp) - (1.0 - g) * hn * (-m + hn);
                }
                return sum;
            });
        gl.theta_var(s) = temperature / (qd + prior_prec);
    }

    // lambda_s^-2 jointly with its auxiliary. One-step alternation of the
    // pair contracts at ~(1 - 2 sqrt(c)) for small c, so solve the pair's
    // mutual fixed point in closed form: with x = E[lambda^-2],
    // x = T / (T / (1 + x) + c) gives c x^2 + c x - T = 0, taken at the
    // stable positive root.
    const double T = temperature;
    for (Eigen::Index s = 0; s < p; ++s) {
        const double theta2 = gl.theta_mean(s) * gl.theta_mean(s) + gl.theta_var(s);
        const double c = 0.5 * e_sig0inv * theta2;
        const double x = 2.0 * T / (c * (1.0 + std::sqrt(1.0 + 4.0 * T / c)));
        gl.lam_shape(s) = 1.0;
        gl.lam_rate(s) = 1.0 / x;
        gl.lam_aux_rate(s) = (1.0 + x) / T;
    }

    // sigma0^-2 jointly with its auxiliary (half-Cauchy scale q^-1/2), same
    // closed-form pair solve: with y = E[sigma0^-2] and tempered shape S,
    // M y^2 + (T + M q - S T) y - S T q = 0.
    double theta_mass = 0.0;
    for (Eigen::Index s = 0; s < p; ++s) {
        theta_mass += (gl.lam_shape(s) / gl.lam_rate(s)) *
                      (gl.theta_mean(s) * gl.theta_mean(s) + gl.theta_var(s));
    }
    const double M = 0.5 * theta_mass;
    const double S = (0.5 + 0.5 * static_cast<double>(p) - 1.0) / T + 1.0;
    const double b = T + M * qd - S * T;
    const double d = S * T * qd;
    const double y = b < 0.0 ? (-b + std::sqrt(b * b + 4.0 * M * d)) / (2.0 * M)
                             : 2.0 * d / (b + std::sqrt(b * b + 4.0 * M * d));
    gl.sig0_shape = S;
    gl.sig0_rate = S / y;
    gl.sig0_aux_rate = (qd + y) / T;

    if (!gl.theta_mean.allFinite() || !std::isfinite(gl.sig_rate) ||
        !gl.lam_rate.allFinite() || !std::isfinite(gl.sig0_rate)) {
        throw NumericalError("non-finite global factor at iteration " +
                             std::to_string(state.iteration));
    }
}

double Engine::resid_quad(const VariationalState& state, Eigen::Index t,
                          bool from_scratch) const {
    const LocalFactor& f = state.locals[static_cast<std::size_t>(t)];
    const Eigen::VectorXd b = f.g.cwiseProduct(f.mu);
    const double correction =
        xnorm2_.dot((f.g.array() * (f.mu.array().square() + f.s2.array()) -
                     b.array().square())
                        .matrix());
    if (from_scratch) {
        const Eigen::VectorXd r = dataset_.Y.col(t) - dataset_.X * b;
        return r.squaredNorm() + correction;
    }
    return yty_(t) - b.dot(xty_.col(t)) - b.dot(f.xr_cache) + correction;
}

Engine::TraitTerms Engine::trait_elbo_terms(const VariationalState& state, Eigen::Index t,
                                            bool from_scratch) const {
    const LocalFactor& f = state.locals[static_cast<std::size_t>(t)];
    const GlobalFactor& gl = state.global;
    const Eigen::Index p = dataset_.p();
    const double n = static_cast<double>(dataset_.n());

    const double e_tau = f.tau_shape / f.tau_rate;
    const double elog_tau = gamma_elog(f.tau_shape, f.tau_rate);
    const double e_siginv2 = gl.sig_shape / gl.sig_rate;
    const double elog_siginv2 = gamma_elog(gl.sig_shape, gl.sig_rate);

    const double quad = resid_quad(state, t, from_scratch);
    const double sg = f.g.sum();
    const double sgb2 = f.g.dot((f.mu.array().square() + f.s2.array()).matrix());

    TraitTerms out;
    // Likelihood and slab prior.
    out.energy += 0.5 * n * (elog_tau - kLog2Pi) - 0.5 * e_tau * quad;
    out.energy += 0.5 * sg * (elog_tau + elog_siginv2 - kLog2Pi) -
                  0.5 * e_siginv2 * e_tau * sgb2;

    // Probit block and spike-and-slab / latent-Gaussian entropies.
    double probit_energy = 0.0;
    double w_entropy = 0.0;
    double ss_entropy = 0.0;
    for (Eigen::Index s = 0; s < p; ++s) {
        const double g = f.g(s);
        const double m = gl.theta_mean(s) + f.zeta_mean;
        double haz_pos, haz_neg;
        gauss_hazard_pair(m, haz_pos, haz_neg);
        const double w2c = g * (1.0 - m * haz_pos) + (1.0 - g) * (1.0 + m * haz_neg);
        probit_energy += -0.5 * kLog2Pi - 0.5 * (w2c + gl.theta_var(s) + f.zeta_var);
        w_entropy += 0.5 * kLog2Pi + 0.5 * w2c + g * norm_logcdf(m) +
                     (1.0 - g) * norm_logcdf(-m);
        ss_entropy += -xlogx(g) - xlogx(1.0 - g) +
                      g * 0.5 * (kLog2Pi + 1.0 + std::log(f.s2(s)));
    }
    out.energy += probit_energy;
    out.entropy += w_entropy + ss_entropy;

    // tau_t prior and entropy.
    out.energy += hyper_.tau_shape0 * std::log(hyper_.tau_rate0) -
                  std::lgamma(hyper_.tau_shape0) + (hyper_.tau_shape0 - 1.0) * elog_tau -
                  hyper_.tau_rate0 * e_tau;
    out.entropy += gamma_entropy(f.tau_shape, f.tau_rate);

    // zeta_t prior and entropy.
    const double t0 = state.zeta_prior.t0;
    const double dz = f.zeta_mean - state.zeta_prior.n0;
    out.energy += -0.5 * (kLog2Pi + 2.0 * std::log(t0)) -
                  (dz * dz + f.zeta_var) / (2.0 * t0 * t0);
    out.entropy += 0.5 * (kLog2Pi + 1.0 + std::log(f.zeta_var));
    return out;
}

Engine::TraitTerms Engine::global_elbo_terms(const VariationalState& state) const {
    const GlobalFactor& gl = state.global;
    const Eigen::Index p = dataset_.p();
    const double qd = static_cast<double>(dataset_.q());
    const double lgamma_half = std::lgamma(0.5);
    const double psi1 = digamma(1.0);

    TraitTerms out;
    // sigma^-2 prior and entropy.
    const double e_siginv2 = gl.sig_shape / gl.sig_rate;
    const double elog_siginv2 = gamma_elog(gl.sig_shape, gl.sig_rate);
    out.energy += hyper_.sig_shape0 * std::log(hyper_.sig_rate0) -
                  std::lgamma(hyper_.sig_shape0) + (hyper_.sig_shape0 - 1.0) * elog_siginv2 -
                  hyper_.sig_rate0 * e_siginv2;
    out.entropy += gamma_entropy(gl.sig_shape, gl.sig_rate);

    const double e_sig0inv = gl.sig0_shape / gl.sig0_rate;
    const double elog_sig0inv = gamma_elog(gl.sig0_shape, gl.sig0_rate);

    for (Eigen::Index s = 0; s < p; ++s) {
        const double e_laminv = gl.lam_shape(s) / gl.lam_rate(s);
        const double elog_laminv = gamma_elog(gl.lam_shape(s), gl.lam_rate(s));
        const double theta2 = gl.theta_mean(s) * gl.theta_mean(s) + gl.theta_var(s);

        // theta_s | lambda_s, sigma0.
        out.energy += 0.5 * (elog_laminv + elog_sig0inv) - 0.5 * kLog2Pi -
                      0.5 * e_laminv * e_sig0inv * theta2;
        out.entropy += 0.5 * (kLog2Pi + 1.0 + std::log(gl.theta_var(s)));

        // lambda_s^-2 | a_s (Gamma(1/2, 1/a_s)) and the a_s auxiliary,
        // both expressed in the 1/a parametrization.
        const double rate_a = gl.lam_aux_rate(s);
        const double elog_ua = psi1 - std::log(rate_a);
        const double e_ua = 1.0 / rate_a;
        out.energy += 0.5 * elog_ua - lgamma_half - 0.5 * elog_laminv - e_laminv * e_ua;
        out.entropy += gamma_entropy(gl.lam_shape(s), gl.lam_rate(s));
        out.energy += -lgamma_half - 0.5 * elog_ua - e_ua;
        out.entropy += gamma_entropy(1.0, rate_a);
    }

    // sigma0^-2 | b and the b auxiliary with half-Cauchy scale q^-1/2.
    const double rate_b = gl.sig0_aux_rate;
    const double elog_ub = psi1 - std::log(rate_b);
    const double e_ub = 1.0 / rate_b;
    out.energy += 0.5 * elog_ub - lgamma_half - 0.5 * elog_sig0inv - e_sig0inv * e_ub;
    out.entropy += gamma_entropy(gl.sig0_shape, gl.sig0_rate);
    out.energy += 0.5 * std::log(qd) - lgamma_half - 0.5 * elog_ub - qd * e_ub;
    out.entropy += gamma_entropy(1.0, rate_b);
    return out;
}

std::pair<double, double> Engine::elbo_parts(const VariationalState& state,
                                             bool from_scratch) const {
    TraitTerms total = global_elbo_terms(state);
    for (Eigen::Index t = 0; t < dataset_.q(); ++t) {
        const TraitTerms terms = trait_elbo_terms(state, t, from_scratch);
        total.energy += terms.energy;
        total.entropy += terms.entropy;
    }
    return {total.energy, total.entropy};
}

double Engine::compute_elbo(const VariationalState& state, double temperature,
                            bool from_scratch) const {
    const auto [energy, entropy] = elbo_parts(state, from_scratch);
    return energy + temperature * entropy;
}

FitReport Engine::run(const FitConfig& config) const {
    return run(config, init(config.seed));
}

FitReport Engine::run(const FitConfig& config, VariationalState state) const {
    config.validate();
    const auto t_start = Clock::now();
    const Eigen::Index p = dataset_.p();
    const Eigen::Index q = dataset_.q();

    FitReport report;
    FocusState fstate;
    fstate.elbo_eval_gap = config.afio_gap_start;
    fstate.rng_seed = config.seed;
    fstate.scores = Eigen::VectorXd::Zero(q);
    fstate.omega = Eigen::VectorXd::Ones(q);

    std::ofstream focus_trace;
    if (!config.focus_trace_path.empty()) {
        focus_trace.open(config.focus_trace_path, std::ios::binary);
        focus_trace << "iteration\tepsilon\tn_selected\tmean_omega\telbo_evaluated\n";
    }

    std::vector<TracePoint> evals; // every ELBO evaluation, any temperature
    // One catch-up cycle per iteration a trait sat out (see update_local_factor).
    constexpr long kMaxCatchUpCycles = 16;
    std::vector<long> last_visit(static_cast<std::size_t>(q), 0);
    bool have_prev_t1 = false;
    long prev_t1_iter = 0;
    double prev_t1_elbo = 0.0;
    bool converged = false;

    for (long iter = 1; iter <= hyper_.max_iters; ++iter) {
        state.iteration = iter;
        const double temperature = annealing_temperature(iter, hyper_);
        const bool in_warmup = iter <= hyper_.warmup_iters;

        // Focus set for this iteration.
        std::vector<bool> selected(static_cast<std::size_t>(q), true);
        if (!in_warmup && config.scheme != Scheme::vanilla) {
            fstate.af_iteration = iter - hyper_.warmup_iters;
            const FocusRng rng{config.seed, static_cast<std::uint64_t>(iter)};
            if (config.scheme == Scheme::rf) {
                selected = rf_focus_set(q, config.rf_fraction, rng);
            } else {
                for (Eigen::Index t = 0; t < q; ++t) {
                    fstate.scores(t) = activity_score(state.locals[static_cast<std::size_t>(t)]);
                }
                if (config.scheme == Scheme::afe) {
                    if (evals.size() >= 2) {
                        const auto& last = evals[evals.size() - 1];
                        const auto& prev = evals[evals.size() - 2];
                        const long gap = std::max<long>(1, last.iteration - prev.iteration);
                        const double delta = (last.elbo - prev.elbo) /
                                             (gap > 1 ? static_cast<double>(gap) : 1.0);
                        fstate.epsilon = perturbation_afe(delta);
                    } else {
                        fstate.epsilon = 1.0;
                    }
                } else {
                    fstate.epsilon = perturbation_afi(fstate.af_iteration, config.afi_decay);
                }
                fstate.omega = selection_probabilities(fstate.scores, fstate.epsilon,
                                                       config.elbo_formula_literal);
                selected = draw_focus_set(fstate.omega, rng);
            }
            fstate.selected = selected;
        }

        std::vector<Eigen::Index> active;
        active.reserve(static_cast<std::size_t>(q));
        for (Eigen::Index t = 0; t < q; ++t) {
            if (selected[static_cast<std::size_t>(t)]) {
                active.push_back(t);
            }
        }

        // Local phase; traits touch only their own factor plus a frozen
        // snapshot of the globals, so chunks can run in parallel.
        const auto t_local = Clock::now();
        auto catch_up = [&](Eigen::Index t) {
            const long gap = iter - last_visit[static_cast<std::size_t>(t)];
            return static_cast<int>(std::min(kMaxCatchUpCycles, std::max<long>(1, gap)));
        };
        if (config.n_threads > 1 && active.size() > 1) {
            const int n_threads =
                std::min<int>(config.n_threads, static_cast<int>(active.size()));
            std::vector<std::thread> workers;
            std::exception_ptr error;
            std::mutex error_mutex;
            for (int w = 0; w < n_threads; ++w) {
                workers.emplace_back([&, w]() {
                    try {
                        for (std::size_t i = static_cast<std::size_t>(w); i < active.size();
                             i += static_cast<std::size_t>(n_threads)) {
                            update_local_factor(state, active[i], temperature,
                                                catch_up(active[i]));
                        }
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(error_mutex);
                        if (!error) error = std::current_exception();
                    }
                });
            }
            for (auto& worker : workers) worker.join();
            if (error) std::rethrow_exception(error);
        } else {
            for (const Eigen::Index t : active) {
                update_local_factor(state, t, temperature, catch_up(t));
            }
        }
        for (const Eigen::Index t : active) {
            last_visit[static_cast<std::size_t>(t)] = iter;
        }
        report.local_update_count += static_cast<long>(active.size());
        report.wall_time_local += seconds_since(t_local);

        // Global phase.
        const auto t_global = Clock::now();
        update_global_factors(state, temperature);
        report.wall_time_global += seconds_since(t_global);

        // Bound the drift of the incrementally maintained projections.
        if (iter % 100 == 0) {
            for (Eigen::Index t = 0; t < q; ++t) {
                state.locals[static_cast<std::size_t>(t)].xr_cache = rebuild_xr_cache(state, t);
            }
        }

        // ELBO evaluation per the scheme's policy.
        bool do_eval = true;
        if (config.scheme == Scheme::afio) {
            do_eval = !in_warmup && afio_should_eval_elbo(fstate);
        }
        if (do_eval) {
            const auto t_elbo = Clock::now();
            const double elbo = compute_elbo(state, temperature);
            report.wall_time_elbo += seconds_since(t_elbo);
            state.elbo = elbo;
            evals.push_back({iter, elbo, static_cast<long>(active.size()), temperature});
            if (temperature == 1.0) {
                if (have_prev_t1) {
                    const double per_iter =
                        (elbo - prev_t1_elbo) / static_cast<double>(iter - prev_t1_iter);
                    if (config.scheme == Scheme::afio) {
                        afio_update_gap(fstate, per_iter, hyper_.tol);
                    }
                    if (!in_warmup && std::abs(per_iter) < hyper_.tol) {
                        converged = true;
                    }
                }
                have_prev_t1 = true;
                prev_t1_iter = iter;
                prev_t1_elbo = elbo;
            }
        }

        if (config.monitor_full_elbo) {
            report.full_elbo_trace.push_back(compute_elbo(state, 1.0, true));
        }
        if (focus_trace.is_open()) {
            const long n_sel = static_cast<long>(active.size());
            focus_trace << iter << '\t' << fstate.epsilon << '\t' << n_sel << '\t'
                        << fstate.omega.mean() << '\t' << (do_eval ? 1 : 0) << '\n';
        }

        report.iterations = iter;
        if (converged) {
            break;
        }
    }

    report.converged = converged;
    report.elbo = state.elbo;
    if (config.record_trace) {
        report.elbo_trace = std::move(evals);
    }
    report.ppi.resize(p, q);
    report.beta_mean.resize(p, q);
    for (Eigen::Index t = 0; t < q; ++t) {
        const LocalFactor& f = state.locals[static_cast<std::size_t>(t)];
        report.ppi.col(t) = f.g;
        report.beta_mean.col(t) = f.g.cwiseProduct(f.mu);
    }
    if (!config.checkpoint_path.empty()) {
        save_state(config.checkpoint_path, state);
    }
    report.wall_time_total = seconds_since(t_start);
    return report;
}

FitReport run_cavi(const Dataset& dataset, const Hyperparameters& hyper,
                   const FitConfig& config) {
    return Engine(dataset, hyper).run(config);
}

void write_fit_report(const std::string& dir, const FitReport& report, const Dataset& dataset,
                      const FitConfig& config) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<std::string> trait_ids;
    for (const auto& m : dataset.trait_meta) trait_ids.push_back(m.id);

    auto write_scored = [&](const std::string& path, const Eigen::MatrixXd& values) {
        std::ofstream out(path, std::ios::binary);
        out << "snp_id";
        for (const auto& id : trait_ids) out << '\t' << id;
        out << '\n';
        char buf[40];
        for (Eigen::Index s = 0; s < values.rows(); ++s) {
            out << dataset.snp_meta[static_cast<std::size_t>(s)].id;
            for (Eigen::Index t = 0; t < values.cols(); ++t) {
                std::snprintf(buf, sizeof(buf), "\t%.17g", values(s, t));
                out << buf;
            }
            out << '\n';
        }
    };
    write_scored(dir + "/ppi.tsv", report.ppi);
    write_scored(dir + "/beta.tsv", report.beta_mean);

    {
        std::ofstream out(dir + "/trace.tsv", std::ios::binary);
        out << "iteration\telbo\tn_updated\ttemperature\n";
        char buf[96];
        for (const auto& pt : report.elbo_trace) {
            std::snprintf(buf, sizeof(buf), "%ld\t%.17g\t%ld\t%.17g\n", pt.iteration, pt.elbo,
                          pt.n_updated, pt.temperature);
            out << buf;
        }
    }
    {
        std::ofstream out(dir + "/report.tsv", std::ios::binary);
        out << "key\tvalue\n";
        out << "scheme\t" << scheme_name(config.scheme) << '\n';
        out << "seed\t" << config.seed << '\n';
        out << "n\t" << dataset.n() << '\n';
        out << "p\t" << dataset.p() << '\n';
        out << "q\t" << dataset.q() << '\n';
        out << "iterations\t" << report.iterations << '\n';
        out << "converged\t" << (report.converged ? 1 : 0) << '\n';
        out << "local_update_count\t" << report.local_update_count << '\n';
        out << "elbo\t" << report.elbo << '\n';
        out << "wall_time_total\t" << report.wall_time_total << '\n';
        out << "wall_time_local\t" << report.wall_time_local << '\n';
        out << "wall_time_global\t" << report.wall_time_global << '\n';
        out << "wall_time_elbo\t" << report.wall_time_elbo << '\n';
    }
}

FrozenFit fit_frozen_globals(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const FrozenGlobals& fixed, int max_sweeps, double tol) {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    if (fixed.prior_inclusion.size() != p) {
        throw ValidationError("fit_frozen_globals: prior_inclusion size mismatch");
    }
    if (!(fixed.tau > 0.0) || !(fixed.sigma2 > 0.0)) {
        throw ValidationError("fit_frozen_globals: tau and sigma2 must be positive");
    }
    const double tau = fixed.tau;
    const double siginv2 = 1.0 / fixed.sigma2;
    const Eigen::MatrixXd gram = X.transpose() * X;
    const Eigen::VectorXd xty = X.transpose() * y;
    const double yty = y.squaredNorm();

    FrozenFit fit;
    fit.mu = Eigen::VectorXd::Zero(p);
    fit.s2 = Eigen::VectorXd::Ones(p);
    fit.g = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd xr = xty;

    auto elbo = [&]() {
        const Eigen::VectorXd b = fit.g.cwiseProduct(fit.mu);
        const double correction =
            gram.diagonal().dot((fit.g.array() * (fit.mu.array().square() + fit.s2.array()) -
                                 b.array().square())
                                    .matrix());
        const double quad = yty - b.dot(xty) - b.dot(xr) + correction;
        double value = 0.5 * static_cast<double>(n) * (std::log(tau) - kLog2Pi) -
                       0.5 * tau * quad;
        for (Eigen::Index s = 0; s < p; ++s) {
            const double g = fit.g(s);
            const double pi = fixed.prior_inclusion(s);
            value += g * (0.5 * (std::log(tau) + std::log(siginv2) - kLog2Pi) -
                          0.5 * tau * siginv2 * (fit.mu(s) * fit.mu(s) + fit.s2(s)));
            if (g > 0.0) value += g * std::log(pi);
            if (g < 1.0) value += (1.0 - g) * std::log1p(-pi);
            value += -xlogx(g) - xlogx(1.0 - g) +
                     g * 0.5 * (kLog2Pi + 1.0 + std::log(fit.s2(s)));
        }
        return value;
    };

    double last = -std::numeric_limits<double>::infinity();
    for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
        for (Eigen::Index s = 0; s < p; ++s) {
            const double b_old = fit.g(s) * fit.mu(s);
            const double c = xr(s) + gram(s, s) * b_old;
            const double prec = tau * (gram(s, s) + siginv2);
            fit.s2(s) = 1.0 / prec;
            fit.mu(s) = tau * c / prec;
            const double pi = fixed.prior_inclusion(s);
            if (pi <= 0.0) {
                fit.g(s) = 0.0;
            } else if (pi >= 1.0) {
                fit.g(s) = 1.0;
            } else {
                const double logit = std::log(pi) - std::log1p(-pi) +
                                     0.5 * (std::log(tau) + std::log(siginv2) - std::log(prec)) +
                                     0.5 * tau * tau * c * c / prec;
                fit.g(s) = logistic(logit);
            }
            const double delta = fit.g(s) * fit.mu(s) - b_old;
            if (delta != 0.0) {
                xr.noalias() -= delta * gram.col(s);
            }
        }
        fit.sweeps = sweep;
        const double value = elbo();
        if (std::abs(value - last) < tol) {
            fit.elbo = value;
            return fit;
        }
        last = value;
    }
    fit.elbo = last;
    return fit;
}

} // namespace afcavi
