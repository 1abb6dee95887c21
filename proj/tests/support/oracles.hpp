#pragma once

// Reference computations for tests. Nothing here calls into the library's
// numerical routines: quadrature comes from Boost, derivative-free
// optimization from GSL, and the densities are written out longhand.

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <Eigen/Dense>

namespace oracle {

inline double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

inline double log_phi(double x) { return -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi); }

/// Adaptive Gauss-Kronrod integral of f over [a, b]; infinite limits allowed.
inline double integrate(const std::function<double(double)>& f, double a, double b) {
    double error = 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 15, 1e-13, &error);
}

struct TruncMoments {
    double mass, mean, variance, entropy;
};

/// Moments of N(mu, 1) restricted to [0, inf) (plus) or (-inf, 0) (minus), by quadrature.
/// The integrals are taken around the mode so the narrow lower-tail densities are resolved.
inline TruncMoments truncated_normal(double mu, bool plus) {
    const double inf = std::numeric_limits<double>::infinity();
    const double lo = plus ? 0.0 : -inf;
    const double hi = plus ? inf : 0.0;
    auto moment = [&](auto g) {
        // Split at the edge of the bulk to help the adaptive rule.
        const double edge = plus ? std::max(0.0, mu) : std::min(0.0, mu);
        if (edge == 0.0) return integrate(g, lo, hi);
        return plus ? integrate(g, 0.0, edge) + integrate(g, edge, inf)
                    : integrate(g, -inf, edge) + integrate(g, edge, 0.0);
    };
    const double mass = moment([&](double x) { return phi(x - mu); });
    const double m1 = moment([&](double x) { return x * phi(x - mu); }) / mass;
    const double m2 = moment([&](double x) { return (x - m1) * (x - m1) * phi(x - mu); }) / mass;
    const double cross = moment([&](double x) { return -log_phi(x - mu) * phi(x - mu); }) / mass;
    return {mass, m1, m2, cross + std::log(mass)};
}

/// Standard normal cdf by quadrature of the density.
inline double normal_cdf(double x) {
    const double inf = std::numeric_limits<double>::infinity();
    if (x <= 0.0) return integrate(phi, -inf, x);
    return 1.0 - integrate(phi, x, inf);
}

/// Minimizes f from x0 with the GSL Nelder-Mead simplex; returns the argmin.
inline Eigen::VectorXd nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x0, double step = 0.5,
                                   double size_tol = 1e-10, int max_iter = 200000) {
    const auto n = static_cast<std::size_t>(x0.size());
    struct Ctx {
        const std::function<double(const Eigen::VectorXd&)>* f;
        std::size_t n;
    } ctx{&f, n};
    gsl_multimin_function fn;
    fn.n = n;
    fn.params = &ctx;
    fn.f = [](const gsl_vector* v, void* p) -> double {
        auto* c = static_cast<Ctx*>(p);
        Eigen::VectorXd x(static_cast<Eigen::Index>(c->n));
        for (std::size_t i = 0; i < c->n; ++i) x(static_cast<Eigen::Index>(i)) = gsl_vector_get(v, i);
        return (*c->f)(x);
    };
    gsl_vector* x = gsl_vector_alloc(n);
    gsl_vector* ss = gsl_vector_alloc(n);
    for (std::size_t i = 0; i < n; ++i) {
        gsl_vector_set(x, i, x0(static_cast<Eigen::Index>(i)));
        gsl_vector_set(ss, i, step);
    }
    gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
    gsl_multimin_fminimizer_set(s, &fn, x, ss);
    for (int it = 0; it < max_iter; ++it) {
        if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
        if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), size_tol) == GSL_SUCCESS) break;
    }
    Eigen::VectorXd out(x0.size());
    for (std::size_t i = 0; i < n; ++i) out(static_cast<Eigen::Index>(i)) = gsl_vector_get(s->x, i);
    gsl_multimin_fminimizer_free(s);
    gsl_vector_free(ss);
    gsl_vector_free(x);
    return out;
}

/// Random SPD matrix A A^T + eps I.
inline Eigen::MatrixXd random_spd(std::mt19937_64& rng, int d, double eps = 0.1) {
    std::normal_distribution<double> n01;
    Eigen::MatrixXd a(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) a(i, j) = n01(rng);
    return a * a.transpose() + eps * Eigen::MatrixXd::Identity(d, d);
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                                     double sd = 1.0) {
    std::normal_distribution<double> n01(0.0, sd);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n01(rng);
    return m;
}

inline std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n, int K) {
    std::uniform_int_distribution<int> u(1, K);
    std::vector<int> y(n);
    for (auto& v : y) v = u(rng);
    // Every category appears at least once when n allows it.
    for (int k = 1; k <= K && static_cast<std::size_t>(k) <= n; ++k) y[static_cast<std::size_t>(k - 1)] = k;
    return y;
}

}  // namespace oracle
