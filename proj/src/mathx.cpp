#include "afcavi/mathx.hpp"

#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>

namespace afcavi {

double mills_upper(double x) {
    // Laplace continued fraction, evaluated backwards.
    double r = 0.0;
    for (int k = 64; k >= 1; --k) {
        r = static_cast<double>(k) / (x + r);
    }
    return 1.0 / (x + r);
}

double norm_logcdf(double x) {
    if (x > -6.0) {
        return std::log(norm_cdf(x));
    }
    return -0.5 * x * x - 0.5 * kLog2Pi + std::log(mills_upper(-x));
}

double gauss_hazard(double x) {
    if (x > -6.0) {
        return norm_pdf(x) / norm_cdf(x);
    }
    return 1.0 / mills_upper(-x);
}

double norm_logcdf_diff(double x) {
    if (x > 5.0 || x < -5.0) {
        return norm_logcdf(x) - norm_logcdf(-x);
    }
    const double cdf = norm_cdf(x);
    return std::log(cdf) - std::log1p(-cdf);
}

double digamma(double x) {
    return boost::math::digamma(x);
}

double gamma_entropy(double shape, double rate) {
    return shape - std::log(rate) + std::lgamma(shape) + (1.0 - shape) * digamma(shape);
}

QuadratureRule gauss_hermite(int n) {
    // Golub-Welsch on the Jacobi matrix of the Hermite recurrence.
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        const double b = std::sqrt(0.5 * k);
        jacobi(k, k - 1) = b;
        jacobi(k - 1, k) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
    QuadratureRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    const double sqrt_pi = std::sqrt(M_PI);
    for (int i = 0; i < n; ++i) {
        rule.nodes[i] = solver.eigenvalues()(i);
        const double v0 = solver.eigenvectors()(0, i);
        rule.weights[i] = sqrt_pi * v0 * v0;
    }
    return rule;
}

} // namespace afcavi
