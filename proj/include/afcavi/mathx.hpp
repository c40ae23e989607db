#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

// Numeric helpers shared across modules: stable Gaussian cdf tails,
// Gamma-distribution moments, Gauss-Hermite rules and the counter-based
// uniform streams used for reproducible subset draws.

namespace afcavi {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;
inline constexpr double kSqrt2 = 1.4142135623730950488016887242097;

inline double logistic(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double norm_pdf(double x) {
    return std::exp(-0.5 * x * x - 0.5 * kLog2Pi);
}

inline double norm_cdf(double x) {
    return 0.5 * std::erfc(-x / kSqrt2);
}

// Upper-tail Mills ratio r(x) = (1 - Phi(x)) / phi(x) via the Laplace
// continued fraction; accurate for x >= 4 or so.
double mills_upper(double x);

// log Phi(x), stable far into the lower tail.
double norm_logcdf(double x);

// phi(x) / Phi(x); ~ -x for very negative x.
double gauss_hazard(double x);

// (gauss_hazard(x), gauss_hazard(-x)) sharing one pdf and one cdf
// evaluation; the hot probit sums call this O(p q) times per iteration.
// 1 - Phi(x) is safe in the central band (|x| <= 5 keeps the relative
// cancellation error below ~1e-9); the tails fall back to the stable forms.
inline void gauss_hazard_pair(double x, double& h_pos, double& h_neg) {
    if (x > 5.0 || x < -5.0) {
        h_pos = gauss_hazard(x);
        h_neg = gauss_hazard(-x);
        return;
    }
    const double pdf = norm_pdf(x);
    const double cdf = norm_cdf(x);
    h_pos = pdf / cdf;
    h_neg = pdf / (1.0 - cdf);
}

// log(Phi(x) / Phi(-x)), the probit log odds, with one cdf evaluation in the
// central band.
double norm_logcdf_diff(double x);

inline double xlogx(double x) {
    return x > 0.0 ? x * std::log(x) : 0.0;
}

double digamma(double x);

// Moments and entropy of Gamma(shape, rate).
inline double gamma_elog(double shape, double rate) {
    return digamma(shape) - std::log(rate);
}
double gamma_entropy(double shape, double rate);

// Physicists' Gauss-Hermite rule: integral f(x) exp(-x^2) dx ~ sum w_i f(x_i).
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};
QuadratureRule gauss_hermite(int n);

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Deterministic per-(iteration, unit) uniform in [0, 1); independent of the
// order the units are visited in and of the thread count.
inline double stream_uniform(std::uint64_t seed, std::uint64_t iteration, std::uint64_t unit) {
    const std::uint64_t h =
        splitmix64(seed ^ splitmix64(iteration ^ splitmix64(unit + 0x632BE59BD9B4E019ULL)));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

} // namespace afcavi
