#include "afcavi/focus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "afcavi/mathx.hpp"

namespace afcavi {

double activity_score(const LocalFactor& local) {
    double log_none = 0.0;
    for (Eigen::Index s = 0; s < local.g.size(); ++s) {
        const double g = local.g(s);
        if (g >= 1.0) {
            return 1.0;
        }
        log_none += std::log1p(-g);
    }
    return -std::expm1(log_none);
}

double perturbation_afe(double delta_elbo) {
    const double d = std::max(delta_elbo, 1e-12);
    return d / (1.0 + d);
}

double perturbation_afi(long af_iteration, double decay) {
    return std::pow(decay, static_cast<double>(af_iteration - 1));
}

Eigen::VectorXd selection_probabilities(const Eigen::VectorXd& scores, double epsilon,
                                        bool literal) {
    if (literal) {
        return ((1.0 - epsilon) + scores.array() * epsilon).matrix();
    }
    return ((1.0 - epsilon) * scores.array() + epsilon).matrix();
}

std::vector<bool> draw_focus_set(const Eigen::VectorXd& omega, const FocusRng& rng) {
    const Eigen::Index q = omega.size();
    std::vector<bool> z(static_cast<std::size_t>(q), false);
    bool any = false;
    for (Eigen::Index t = 0; t < q; ++t) {
        const double u = stream_uniform(rng.seed, rng.iteration, static_cast<std::uint64_t>(t));
        if (u < omega(t)) {
            z[static_cast<std::size_t>(t)] = true;
            any = true;
        }
    }
    if (!any && q > 0) {
        Eigen::Index best = 0;
        omega.maxCoeff(&best);
        z[static_cast<std::size_t>(best)] = true;
    }
    return z;
}

std::vector<bool> rf_focus_set(Eigen::Index q, double fraction, const FocusRng& rng) {
    const long k = std::max<long>(
        1, std::lround(std::floor(fraction * static_cast<double>(q) + 0.5)));
    std::vector<bool> z(static_cast<std::size_t>(q), false);
    if (k >= q) {
        std::fill(z.begin(), z.end(), true);
        return z;
    }
    // Select the k traits with the smallest stream keys: a uniform subset,
    // independent of evaluation order.
    std::vector<std::pair<double, Eigen::Index>> keys;
    keys.reserve(static_cast<std::size_t>(q));
    for (Eigen::Index t = 0; t < q; ++t) {
        keys.emplace_back(stream_uniform(rng.seed, rng.iteration, static_cast<std::uint64_t>(t)),
                          t);
    }
    std::nth_element(keys.begin(), keys.begin() + (k - 1), keys.end());
    for (long i = 0; i < k; ++i) {
        z[static_cast<std::size_t>(keys[static_cast<std::size_t>(i)].second)] = true;
    }
    return z;
}

bool afio_should_eval_elbo(const FocusState& state) {
    return state.af_iteration % state.elbo_eval_gap == 0;
}

void afio_update_gap(FocusState& state, double per_iter_improvement, double tol) {
    if (per_iter_improvement < 100.0 * tol && state.elbo_eval_gap > 1) {
        state.elbo_eval_gap = std::max(1, state.elbo_eval_gap / 2);
    }
}

} // namespace afcavi
