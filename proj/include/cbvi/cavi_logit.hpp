#pragma once

// Coordinate ascent VI for CB-Logit models on the independent-binary
// surrogate, with Polya-Gamma auxiliary variables.

#include <chrono>
#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cbvi/cavi_probit.hpp"
#include "cbvi/design.hpp"
#include "cbvi/errors.hpp"
#include "cbvi/fit_types.hpp"
#include "cbvi/model.hpp"
#include "cbvi/parallel.hpp"
#include "cbvi/special.hpp"

namespace cbvi {

struct LogitState {
    Eigen::MatrixXd mu_tilde;                  // M x K
    std::vector<Eigen::MatrixXd> Sigma_tilde;  // K covariances, M x M each
    Eigen::MatrixXd c_tilde;                   // N x K tilts, nonnegative
    Eigen::MatrixXd kappa;                     // N x K, ybar - 1/2
    std::vector<double> elbo_trace;
};

/// Sigma_tilde_k = Sigma0, mu_tilde = 0, c_tilde = 0.
template <DesignMatrix Design>
LogitState logit_init(const BasicDataset<Design>& data, const GaussianPrior& prior) {
    detail::check_prior(data, prior);
    LogitState state;
    state.mu_tilde = Eigen::MatrixXd::Zero(data.covariates(), data.K);
    state.Sigma_tilde.assign(static_cast<std::size_t>(data.K), prior.cov());
    state.c_tilde = Eigen::MatrixXd::Zero(data.size(), data.K);
    state.kappa = one_hot(data.y, data.K).array() - 0.5;
    return state;
}

/// c_ik = sqrt(x_i^T Sigma_k x_i + (x_i^T mu_k)^2), written into the state and returned.
template <DesignMatrix Design>
const Eigen::MatrixXd& logit_update_c(LogitState& state, const BasicDataset<Design>& data,
                                      int workers = 1) {
    parallel_for(static_cast<std::size_t>(data.K), workers, [&](std::size_t k) {
        const auto kk = static_cast<Eigen::Index>(k);
        const Eigen::VectorXd s = design::row_quadratic_forms(data.X, state.Sigma_tilde[k]);
        const Eigen::VectorXd a = data.X * state.mu_tilde.col(kk);
        for (Eigen::Index i = 0; i < s.size(); ++i) {
            const double radicand = s(i) + a(i) * a(i);
            if (!(radicand >= 0.0)) throw NumericalFailure("logit_update_c: negative quadratic form");
            state.c_tilde(i, kk) = std::sqrt(radicand);
        }
    });
    return state.c_tilde;
}

/// Sigma_k = (X^T W_k X + Sigma0^{-1})^{-1}, mu_k = Sigma_k (X^T kappa_k + Sigma0^{-1} mu0),
/// with W_k = diag(E[omega_ik]) at the current c_tilde.
template <DesignMatrix Design>
void logit_update_beta(LogitState& state, const BasicDataset<Design>& data,
                       const GaussianPrior& prior, int workers = 1, double ridge = 0.0) {
    parallel_for(static_cast<std::size_t>(data.K), workers, [&](std::size_t k) {
        const auto kk = static_cast<Eigen::Index>(k);
        Eigen::VectorXd w(data.size());
        for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = pg_mean(1.0, state.c_tilde(i, kk));
        const SpdFactor precision = detail::factor_precision(
            prior.precision() + design::weighted_gram(data.X, w), ridge, "logit_update_beta");
        const Eigen::VectorXd rhs =
            data.X.transpose() * state.kappa.col(kk) + prior.precision_mean();
        state.Sigma_tilde[k] = precision.inverse();
        state.mu_tilde.col(kk) = precision.solve(rhs);
    });
}

/// ELBO of the augmented IB-Logit model. Valid for any c_tilde; it reduces
/// to the usual closed form when c_tilde is optimal for (mu_tilde, Sigma_tilde).
template <DesignMatrix Design>
double logit_elbo(const LogitState& state, const BasicDataset<Design>& data,
                  const GaussianPrior& prior, int workers = 1) {
    const Eigen::Index N = data.size();
    std::vector<double> per_k(static_cast<std::size_t>(data.K));
    parallel_for(static_cast<std::size_t>(data.K), workers, [&](std::size_t k) {
        const auto kk = static_cast<Eigen::Index>(k);
        const Eigen::VectorXd s = design::row_quadratic_forms(data.X, state.Sigma_tilde[k]);
        const Eigen::VectorXd a = data.X * state.mu_tilde.col(kk);
        std::vector<double> terms(static_cast<std::size_t>(N));
        for (Eigen::Index i = 0; i < N; ++i) {
            const double c = state.c_tilde(i, kk);
            terms[static_cast<std::size_t>(i)] = state.kappa(i, kk) * a(i) - 0.5 * c - softplus(-c) -
                                                 0.5 * pg_mean(1.0, c) * (s(i) + a(i) * a(i) - c * c);
        }
        const Eigen::VectorXd mu = state.mu_tilde.col(kk);
        SpdFactor sigma;
        try {
            sigma = SpdFactor(state.Sigma_tilde[k]);
        } catch (const InvalidCovariance&) {
            throw NumericalFailure("logit_elbo: posterior covariance is not positive definite");
        }
        per_k[k] = pairwise_sum(terms) - gaussian_kl(mu, sigma, prior.mean(), prior.factor());
    });
    return pairwise_sum(per_k);
}

template <DesignMatrix Design>
std::pair<LogitState, FitReport> logit_fit(const BasicDataset<Design>& data,
                                           const GaussianPrior& prior, const FitOptions& opts = {}) {
    opts.validate();
    data.validate();
    using Clock = std::chrono::steady_clock;
    LogitState state = logit_init(data, prior);
    FitReport report;
    const double scale = static_cast<double>(data.size()) * static_cast<double>(data.K);
    double previous = 0.0;
    if (opts.compute_elbo) {
        previous = logit_elbo(state, data, prior, opts.workers);
        report.elbo_trace.push_back(previous);
    }
    for (int it = 1; it <= opts.max_iters; ++it) {
        const auto start = Clock::now();
        logit_update_c(state, data, opts.workers);
        if (opts.track_half_sweeps) {
            report.half_sweep_trace.push_back(logit_elbo(state, data, prior, opts.workers));
        }
        logit_update_beta(state, data, prior, opts.workers, opts.ridge);
        report.iterations = it;
        double elbo = 0.0;
        if (opts.compute_elbo) {
            elbo = logit_elbo(state, data, prior, opts.workers);
            report.elbo_trace.push_back(elbo);
            if (opts.track_half_sweeps) report.half_sweep_trace.push_back(elbo);
        }
        report.seconds_per_iteration.push_back(
            std::chrono::duration<double>(Clock::now() - start).count());
        if (opts.compute_elbo) {
            if ((elbo - previous) / scale < opts.elbo_drop_tol) {
                report.converged = true;
                break;
            }
            previous = elbo;
        }
    }
    state.elbo_trace = report.elbo_trace;
    return {std::move(state), std::move(report)};
}

}  // namespace cbvi
