#include "afcavi/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>

#include "afcavi/mathx.hpp"

namespace afcavi {

void Hyperparameters::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0)) {
            throw ValidationError(std::string("hyperparameter ") + name + " must be positive");
        }
    };
    positive(e_active, "e_active");
    positive(v_active, "v_active");
    positive(tau_shape0, "tau_shape0");
    positive(tau_rate0, "tau_rate0");
    positive(sig_shape0, "sig_shape0");
    positive(sig_rate0, "sig_rate0");
    positive(tol, "tol");
    if (anneal_T0 < 1.0) {
        throw ValidationError("anneal_T0 must be >= 1");
    }
    if (anneal_grid < 1) {
        throw ValidationError("anneal_grid must be >= 1");
    }
    if (warmup_iters < 0 || max_iters < 1) {
        throw ValidationError("warmup_iters must be >= 0 and max_iters >= 1");
    }
    if (anneal_grid > warmup_iters && anneal_grid > 1) {
        throw ValidationError("anneal_grid must not exceed warmup_iters");
    }
    if (zeta_prior_literal && !(t0_literal > 0.0)) {
        throw ValidationError("t0_literal must be positive");
    }
}

Hyperparameters load_hyperparameters(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open config: " + path);
    }
    Hyperparameters h;
    std::map<std::string, std::function<void(const std::string&)>> setters = {
        {"e_active", [&](const std::string& v) { h.e_active = std::stod(v); }},
        {"v_active", [&](const std::string& v) { h.v_active = std::stod(v); }},
        {"zeta_prior_literal", [&](const std::string& v) { h.zeta_prior_literal = std::stoi(v) != 0; }},
        {"n0_literal", [&](const std::string& v) { h.n0_literal = std::stod(v); }},
        {"t0_literal", [&](const std::string& v) { h.t0_literal = std::stod(v); }},
        {"tau_shape0", [&](const std::string& v) { h.tau_shape0 = std::stod(v); }},
        {"tau_rate0", [&](const std::string& v) { h.tau_rate0 = std::stod(v); }},
        {"sig_shape0", [&](const std::string& v) { h.sig_shape0 = std::stod(v); }},
        {"sig_rate0", [&](const std::string& v) { h.sig_rate0 = std::stod(v); }},
        {"anneal_T0", [&](const std::string& v) { h.anneal_T0 = std::stod(v); }},
        {"anneal_grid", [&](const std::string& v) { h.anneal_grid = std::stoi(v); }},
        {"tol", [&](const std::string& v) { h.tol = std::stod(v); }},
        {"warmup_iters", [&](const std::string& v) { h.warmup_iters = std::stoi(v); }},
        {"max_iters", [&](const std::string& v) { h.max_iters = std::stoi(v); }},
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
    h.validate();
    return h;
}

void save_hyperparameters(const std::string& path, const Hyperparameters& h) {
    std::ofstream out(path, std::ios::binary);
    char buf[64];
    auto put = [&](const char* key, double v) {
        std::snprintf(buf, sizeof(buf), "%s=%.17g\n", key, v);
        out << buf;
    };
    put("e_active", h.e_active);
    put("v_active", h.v_active);
    out << "zeta_prior_literal=" << (h.zeta_prior_literal ? 1 : 0) << "\n";
    put("n0_literal", h.n0_literal);
    put("t0_literal", h.t0_literal);
    put("tau_shape0", h.tau_shape0);
    put("tau_rate0", h.tau_rate0);
    put("sig_shape0", h.sig_shape0);
    put("sig_rate0", h.sig_rate0);
    put("anneal_T0", h.anneal_T0);
    out << "anneal_grid=" << h.anneal_grid << "\n";
    put("tol", h.tol);
    out << "warmup_iters=" << h.warmup_iters << "\n";
    out << "max_iters=" << h.max_iters << "\n";
}

namespace {

struct CountMoments {
    double mean;
    double var;
};

// Mean and variance of the Binomial(p, Phi(zeta)) count mixed over
// zeta ~ N(n0, t0^2).
CountMoments count_moments(double n0, double t0, double p, const QuadratureRule& rule) {
    double e_phi = 0.0;
    double e_phi2 = 0.0;
    const double inv_sqrt_pi = 1.0 / std::sqrt(M_PI);
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        const double zeta = n0 + t0 * kSqrt2 * rule.nodes[i];
        const double phi = norm_cdf(zeta);
        e_phi += rule.weights[i] * phi;
        e_phi2 += rule.weights[i] * phi * phi;
    }
    e_phi *= inv_sqrt_pi;
    e_phi2 *= inv_sqrt_pi;
    CountMoments m;
    m.mean = p * e_phi;
    m.var = p * (e_phi - e_phi2) + p * p * (e_phi2 - e_phi * e_phi);
    return m;
}

} // namespace

ZetaPrior solve_zeta_prior(const Hyperparameters& hyper, Eigen::Index p) {
    hyper.validate();
    const double pd = static_cast<double>(p);
    if (!(hyper.e_active > 0.0) || hyper.e_active >= pd) {
        throw ValidationError("infeasible zeta prior: need 0 < e_active < p");
    }
    const QuadratureRule rule = gauss_hermite(64);

    auto mean_at = [&](double n0, double t0) { return count_moments(n0, t0, pd, rule).mean; };

    // For a fixed t0 the mean is increasing in n0; match it by bisection. The
    // box has to widen with t0: a diffuse zeta pushes the mixed mean away
    // from the Phi(n0) limit.
    auto solve_n0 = [&](double t0) {
        const double n0_lo = -10.0 * (1.0 + t0), n0_hi = 10.0 * (1.0 + t0);
        if (mean_at(n0_lo, t0) > hyper.e_active || mean_at(n0_hi, t0) < hyper.e_active) {
            throw ValidationError("infeasible zeta prior: mean target outside the n0 search box");
        }
        double lo = n0_lo, hi = n0_hi;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (mean_at(mid, t0) < hyper.e_active) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return 0.5 * (lo + hi);
    };

    // With the mean pinned, the count variance is increasing in t0.
    auto var_at = [&](double t0) {
        const double n0 = solve_n0(t0);
        return count_moments(n0, t0, pd, rule).var;
    };

    const double t0_lo = 1e-4, t0_hi = 10.0;
    if (var_at(t0_lo) > hyper.v_active || var_at(t0_hi) < hyper.v_active) {
        throw ValidationError("infeasible zeta prior: variance target outside the t0 search box");
    }
    double lo = t0_lo, hi = t0_hi;
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (var_at(mid) < hyper.v_active) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    ZetaPrior out;
    out.t0 = 0.5 * (lo + hi);
    out.n0 = solve_n0(out.t0);
    return out;
}

VariationalState init_state(const Dataset& dataset, const Hyperparameters& hyper,
                            std::uint64_t /*seed*/) {
    hyper.validate();
    const Eigen::Index p = dataset.p();
    const Eigen::Index q = dataset.q();

    VariationalState state;
    if (hyper.zeta_prior_literal) {
        state.zeta_prior = ZetaPrior{hyper.n0_literal, hyper.t0_literal};
    } else {
        state.zeta_prior = solve_zeta_prior(hyper, p);
    }

    const double g0 = hyper.e_active / static_cast<double>(p);
    state.locals.resize(static_cast<std::size_t>(q));
    for (Eigen::Index t = 0; t < q; ++t) {
        LocalFactor& f = state.locals[static_cast<std::size_t>(t)];
        f.mu = Eigen::VectorXd::Zero(p);
        f.s2 = Eigen::VectorXd::Ones(p);
        f.g = Eigen::VectorXd::Constant(p, g0);
        f.tau_shape = hyper.tau_shape0;
        f.tau_rate = hyper.tau_rate0;
        f.zeta_mean = state.zeta_prior.n0;
        f.zeta_var = state.zeta_prior.t0 * state.zeta_prior.t0;
        f.xr_cache = dataset.X.transpose() * dataset.Y.col(t);
    }

    GlobalFactor& g = state.global;
    g.theta_mean = Eigen::VectorXd::Zero(p);
    g.theta_var = Eigen::VectorXd::Ones(p);
    g.sig_shape = hyper.sig_shape0;
    g.sig_rate = hyper.sig_rate0;
    g.lam_shape = Eigen::VectorXd::Constant(p, 0.5);
    g.lam_rate = Eigen::VectorXd::Ones(p);
    g.lam_aux_rate = Eigen::VectorXd::Constant(p, 2.0);
    g.sig0_shape = 0.5;
    g.sig0_rate = 1.0;
    g.sig0_aux_rate = 2.0;
    return state;
}

namespace {

void put_vec(std::ofstream& out, const Eigen::VectorXd& v) {
    const std::int64_t n = v.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * 8));
}

Eigen::VectorXd get_vec(std::ifstream& in) {
    std::int64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    Eigen::VectorXd v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
    return v;
}

void put_scalar(std::ofstream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

double get_scalar(std::ifstream& in) {
    double v = 0.0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

constexpr char kStateMagic[8] = {'A', 'F', 'C', 'A', 'V', 'I', '0', '1'};

} // namespace

void save_state(const std::string& path, const VariationalState& state) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot open checkpoint for writing: " + path);
    }
    out.write(kStateMagic, sizeof(kStateMagic));
    const std::int64_t q = static_cast<std::int64_t>(state.locals.size());
    out.write(reinterpret_cast<const char*>(&q), sizeof(q));
    const std::int64_t iter = state.iteration;
    out.write(reinterpret_cast<const char*>(&iter), sizeof(iter));
    put_scalar(out, state.elbo);
    put_scalar(out, state.zeta_prior.n0);
    put_scalar(out, state.zeta_prior.t0);
    for (const auto& f : state.locals) {
        put_vec(out, f.mu);
        put_vec(out, f.s2);
        put_vec(out, f.g);
        put_scalar(out, f.tau_shape);
        put_scalar(out, f.tau_rate);
        put_scalar(out, f.zeta_mean);
        put_scalar(out, f.zeta_var);
        put_vec(out, f.xr_cache);
    }
    const auto& g = state.global;
    put_vec(out, g.theta_mean);
    put_vec(out, g.theta_var);
    put_scalar(out, g.sig_shape);
    put_scalar(out, g.sig_rate);
    put_vec(out, g.lam_shape);
    put_vec(out, g.lam_rate);
    put_vec(out, g.lam_aux_rate);
    put_scalar(out, g.sig0_shape);
    put_scalar(out, g.sig0_rate);
    put_scalar(out, g.sig0_aux_rate);
}

VariationalState load_state(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open checkpoint: " + path);
    }
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kStateMagic, sizeof(magic)) != 0) {
        throw ParseError(path + ": not an afcavi checkpoint");
    }
    VariationalState state;
    std::int64_t q = 0;
    in.read(reinterpret_cast<char*>(&q), sizeof(q));
    std::int64_t iter = 0;
    in.read(reinterpret_cast<char*>(&iter), sizeof(iter));
    state.iteration = iter;
    state.elbo = get_scalar(in);
    state.zeta_prior.n0 = get_scalar(in);
    state.zeta_prior.t0 = get_scalar(in);
    state.locals.resize(static_cast<std::size_t>(q));
    for (auto& f : state.locals) {
        f.mu = get_vec(in);
        f.s2 = get_vec(in);
        f.g = get_vec(in);
        f.tau_shape = get_scalar(in);
        f.tau_rate = get_scalar(in);
        f.zeta_mean = get_scalar(in);
        f.zeta_var = get_scalar(in);
        f.xr_cache = get_vec(in);
    }
    auto& g = state.global;
    g.theta_mean = get_vec(in);
    g.theta_var = get_vec(in);
    g.sig_shape = get_scalar(in);
    g.sig_rate = get_scalar(in);
    g.lam_shape = get_vec(in);
    g.lam_rate = get_vec(in);
    g.lam_aux_rate = get_vec(in);
    g.sig0_shape = get_scalar(in);
    g.sig0_rate = get_scalar(in);
    g.sig0_aux_rate = get_scalar(in);
    if (!in) {
        throw ParseError(path + ": truncated checkpoint");
    }
    return state;
}

} // namespace afcavi
