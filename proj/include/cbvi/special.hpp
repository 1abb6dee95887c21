#pragma once

// Scalar distribution primitives shared by the inference engines: standard
// normal and logistic cdfs in linear and log space, truncated-normal moments
// for the probit augmentation, the Polya-Gamma mean for the logit
// augmentation, and Gaussian entropy / KL through one SPD factorization.

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "cbvi/errors.hpp"

namespace cbvi {

/// Truncation of a unit-variance normal to [0, inf) (Plus) or (-inf, 0) (Minus).
/// Plus pairs with an observed bit of 1, Minus with a bit of 0.
enum class TruncSide { Plus, Minus };

inline TruncSide side_for_bit(bool bit) { return bit ? TruncSide::Plus : TruncSide::Minus; }

struct NormalPoint {
    double pdf;
    double cdf;
};

struct TruncMoments {
    double mean;
    double variance;
    double entropy;
};

namespace detail {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;
// Below this location the Mills ratio switches to the continued fraction.
inline constexpr double kMillsSwitch = -6.0;

inline void require_finite(double x, const char* what) {
    if (!std::isfinite(x)) {
        throw InvalidData(std::string(what) + ": non-finite argument");
    }
}

// phi(mu) / Phi(mu) for mu <= kMillsSwitch, via the continued fraction of the
// upper-tail Mills ratio R(x) = (1 - Phi(x)) / phi(x) at x = -mu:
//   1 / R(x) = x + 1/(x + 2/(x + 3/(x + ...)))
// evaluated with the modified Lentz recurrence.
inline double inverse_mills_lower_tail(double mu) {
    const double x = -mu;
    constexpr double tiny = 1e-300;
    double f = x;
    double c = f;
    double d = 0.0;
    for (int n = 1; n < 500; ++n) {
        const double a = static_cast<double>(n);
        d = x + a * d;
        if (std::abs(d) < tiny) d = tiny;
        d = 1.0 / d;
        c = x + a / c;
        if (std::abs(c) < tiny) c = tiny;
        const double delta = c * d;
        f *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return f;
}

}  // namespace detail

inline double normal_pdf(double x) { return detail::kInvSqrt2Pi * std::exp(-0.5 * x * x); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * detail::kInvSqrt2); }

/// Standard normal pdf and cdf at a finite point.
inline NormalPoint std_normal(double x) {
    detail::require_finite(x, "std_normal");
    return {normal_pdf(x), normal_cdf(x)};
}

/// phi(mu) / Phi(mu), the perturbation of the parent mean under Plus truncation.
/// Finite for every finite mu; tends to |mu| as mu -> -inf and to 0 as mu -> +inf.
inline double inverse_mills(double mu) {
    if (mu > detail::kMillsSwitch) return normal_pdf(mu) / normal_cdf(mu);
    return detail::inverse_mills_lower_tail(mu);
}

/// log Phi(x), accurate in both tails.
inline double log_normal_cdf(double x) {
    if (x > 0.0) return std::log1p(-0.5 * std::erfc(x * detail::kInvSqrt2));
    if (x > detail::kMillsSwitch) return std::log(normal_cdf(x));
    return -0.5 * x * x - detail::kLogSqrt2Pi - std::log(detail::inverse_mills_lower_tail(x));
}

/// Perturbation delta_side(mu) such that E[T] = mu + delta for T ~ N_side(mu, 1).
inline double trunc_shift(double mu, TruncSide side) {
    return side == TruncSide::Plus ? inverse_mills(mu) : -inverse_mills(-mu);
}

/// Mean, variance and differential entropy of N(mu, 1) truncated to one half-line.
inline TruncMoments truncnorm_unit(double mu, TruncSide side) {
    detail::require_finite(mu, "truncnorm_unit");
    const double delta = trunc_shift(mu, side);
    const double mean = mu + delta;
    const double log_mass = side == TruncSide::Plus ? log_normal_cdf(mu) : log_normal_cdf(-mu);
    return {
        mean,
        1.0 - delta * mean,
        0.5 + detail::kLogSqrt2Pi + log_mass - 0.5 * mu * delta,
    };
}

inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double logistic_cdf(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double log_logistic_cdf(double x) { return -softplus(-x); }

/// E[omega] for omega ~ PG(b, c): (b / 2c) tanh(c / 2), with a series near c = 0.
inline double pg_mean(double b, double c) {
    if (!(b > 0.0)) throw InvalidData("pg_mean: shape b must be positive");
    const double a = std::abs(c);
    if (a < 1e-4) return b * (0.25 - a * a / 48.0);
    return b / (2.0 * a) * std::tanh(0.5 * a);
}

/// Inverse standard normal cdf: rational approximation refined by one Halley step.
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw InvalidData("normal_quantile: p must lie in (0, 1)");
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00, 2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double e = normal_cdf(x) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

inline double logit(double p) {
    if (!(p > 0.0 && p < 1.0)) throw InvalidData("logit: p must lie in (0, 1)");
    return std::log(p) - std::log1p(-p);
}

/// Lower Cholesky factor of an SPD matrix. Every SPD solve, inverse and
/// log-determinant in the library goes through this type.
class SpdFactor {
public:
    SpdFactor() = default;

    explicit SpdFactor(const Eigen::MatrixXd& a) {
        if (a.rows() != a.cols() || a.rows() == 0) {
            throw InvalidCovariance("SPD factor: matrix must be square and non-empty");
        }
        if (!a.allFinite()) throw InvalidCovariance("SPD factor: non-finite entries");
        llt_.compute(a);
        if (llt_.info() != Eigen::Success) {
            throw InvalidCovariance("SPD factor: matrix is not positive definite");
        }
        const Eigen::VectorXd diag = llt_.matrixLLT().diagonal();
        if ((diag.array() <= 0.0).any() || !diag.allFinite()) {
            throw InvalidCovariance("SPD factor: matrix is not positive definite");
        }
        log_det_ = 2.0 * diag.array().log().sum();
    }

    Eigen::Index dim() const { return llt_.matrixLLT().rows(); }
    double log_det() const { return log_det_; }

    template <class Rhs>
    Eigen::MatrixXd solve(const Eigen::MatrixBase<Rhs>& rhs) const {
        return llt_.solve(rhs);
    }

    /// L^{-1} rhs.
    template <class Rhs>
    Eigen::MatrixXd whiten(const Eigen::MatrixBase<Rhs>& rhs) const {
        return llt_.matrixL().solve(rhs);
    }

    Eigen::MatrixXd lower() const { return llt_.matrixL().toDenseMatrix(); }

    /// L z, used to draw correlated normals.
    Eigen::VectorXd color(const Eigen::VectorXd& z) const { return llt_.matrixL() * z; }

    Eigen::MatrixXd inverse() const {
        const Eigen::MatrixXd inv = llt_.solve(Eigen::MatrixXd::Identity(dim(), dim()));
        return 0.5 * (inv + inv.transpose());
    }

private:
    Eigen::LLT<Eigen::MatrixXd> llt_;
    double log_det_ = 0.0;
};

/// Differential entropy of N(., sigma): 0.5 log((2 pi e)^d |sigma|).
inline double gaussian_entropy(const SpdFactor& sigma) {
    const double d = static_cast<double>(sigma.dim());
    return 0.5 * (d * (1.0 + 2.0 * detail::kLogSqrt2Pi) + sigma.log_det());
}

inline double gaussian_entropy(const Eigen::MatrixXd& sigma) {
    return gaussian_entropy(SpdFactor(sigma));
}

/// KL(N(mu_q, sigma_q) || N(mu_p, sigma_p)).
inline double gaussian_kl(const Eigen::VectorXd& mu_q, const SpdFactor& sigma_q,
                          const Eigen::VectorXd& mu_p, const SpdFactor& sigma_p) {
    const Eigen::Index d = mu_q.size();
    if (mu_p.size() != d || sigma_q.dim() != d || sigma_p.dim() != d) {
        throw ShapeMismatch("gaussian_kl: dimensions disagree");
    }
    // tr(P^{-1} Q) = ||L_p^{-1} L_q||_F^2 with Q = L_q L_q^T.
    const double trace = sigma_p.whiten(sigma_q.lower()).squaredNorm();
    const double quad = sigma_p.whiten(mu_q - mu_p).squaredNorm();
    return 0.5 * (sigma_p.log_det() - sigma_q.log_det() - static_cast<double>(d) + quad + trace);
}

inline double gaussian_kl(const Eigen::VectorXd& mu_q, const Eigen::MatrixXd& sigma_q,
                          const Eigen::VectorXd& mu_p, const Eigen::MatrixXd& sigma_p) {
    return gaussian_kl(mu_q, SpdFactor(sigma_q), mu_p, SpdFactor(sigma_p));
}

}  // namespace cbvi
