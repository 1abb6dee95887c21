#pragma once

// Coordinate ascent VI for CB-Probit models on the independent-binary
// surrogate, with truncated-normal auxiliary variables.

#include <chrono>
#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "cbvi/design.hpp"
#include "cbvi/errors.hpp"
#include "cbvi/fit_types.hpp"
#include "cbvi/model.hpp"
#include "cbvi/parallel.hpp"
#include "cbvi/special.hpp"

namespace cbvi {

struct ProbitState {
    Eigen::MatrixXd mu_tilde;     // M x K
    Eigen::MatrixXd Sigma_tilde;  // M x M, shared by every category
    Eigen::MatrixXd eta_tilde;    // N x K truncated-normal locations
    std::vector<double> elbo_trace;

    // Cached from Sigma_tilde at init.
    SpdFactor sigma_factor;
    Eigen::VectorXd row_quad;  // x_i^T Sigma_tilde x_i
    double kl_shared = 0.0;    // KL(q_k || prior) minus its mean-dependent part
};

namespace detail {

inline TruncSide probit_side(const std::vector<int>& y, Eigen::Index i, Eigen::Index k) {
    return side_for_bit(y[static_cast<std::size_t>(i)] == k + 1);
}

template <DesignMatrix Design>
void check_prior(const BasicDataset<Design>& data, const GaussianPrior& prior) {
    if (prior.dim() != data.covariates()) {
        throw ShapeMismatch("prior dimension " + std::to_string(prior.dim()) + " but data has " +
                            std::to_string(data.covariates()) + " covariates");
    }
}

// Factor an SPD posterior precision, retrying once with a ridge if allowed.
inline SpdFactor factor_precision(Eigen::MatrixXd precision, double ridge, const char* who) {
    try {
        return SpdFactor(precision);
    } catch (const InvalidCovariance&) {
        if (ridge <= 0.0) {
            throw NumericalFailure(std::string(who) + ": posterior precision is not positive definite");
        }
    }
    precision.diagonal().array() += ridge;
    try {
        return SpdFactor(precision);
    } catch (const InvalidCovariance&) {
        throw NumericalFailure(std::string(who) + ": posterior precision is not positive definite " +
                               "even after the ridge");
    }
}

}  // namespace detail

/// Sigma_tilde = (Sigma0^{-1} + X^T X)^{-1}, mu_tilde = 0, eta_tilde = 0.
template <DesignMatrix Design>
ProbitState probit_init(const BasicDataset<Design>& data, const GaussianPrior& prior,
                        double ridge = 0.0) {
    detail::check_prior(data, prior);
    const Eigen::Index M = data.covariates();
    const Eigen::Index N = data.size();
    const SpdFactor precision =
        detail::factor_precision(prior.precision() + design::gram(data.X), ridge, "probit_init");

    ProbitState state;
    state.Sigma_tilde = precision.inverse();
    state.mu_tilde = Eigen::MatrixXd::Zero(M, data.K);
    state.eta_tilde = Eigen::MatrixXd::Zero(N, data.K);
    try {
        state.sigma_factor = SpdFactor(state.Sigma_tilde);
    } catch (const InvalidCovariance&) {
        throw NumericalFailure("probit_init: posterior covariance is not positive definite");
    }
    state.row_quad = design::row_quadratic_forms(data.X, state.Sigma_tilde);
    const double trace = prior.factor().whiten(state.sigma_factor.lower()).squaredNorm();
    state.kl_shared = 0.5 * (prior.factor().log_det() - state.sigma_factor.log_det() -
                             static_cast<double>(M) + trace);
    return state;
}

/// eta_tilde <- X mu_tilde, one category per task.
template <DesignMatrix Design>
void probit_refresh_eta(ProbitState& state, const BasicDataset<Design>& data, int workers = 1) {
    parallel_for(static_cast<std::size_t>(data.K), workers, [&](std::size_t k) {
        const auto kk = static_cast<Eigen::Index>(k);
        state.eta_tilde.col(kk) = data.X * state.mu_tilde.col(kk);
    });
}

/// E_q[z_ik] = eta_ik + delta(eta_ik) at the current eta_tilde, Plus side where y_i = k.
template <DesignMatrix Design>
Eigen::MatrixXd probit_expected_z(const ProbitState& state, const BasicDataset<Design>& data,
                                  int workers = 1) {
    Eigen::MatrixXd ez(state.eta_tilde.rows(), state.eta_tilde.cols());
    parallel_for(static_cast<std::size_t>(data.K), workers, [&](std::size_t k) {
        const auto kk = static_cast<Eigen::Index>(k);
        for (Eigen::Index i = 0; i < ez.rows(); ++i) {
            const double eta = state.eta_tilde(i, kk);
            ez(i, kk) = eta + trunc_shift(eta, detail::probit_side(data.y, i, kk));
        }
    });
    return ez;
}

/// The z half of a sweep: refresh eta_tilde from mu_tilde, then return E_q[Z].
template <DesignMatrix Design>
Eigen::MatrixXd probit_update_z(ProbitState& state, const BasicDataset<Design>& data,
                                int workers = 1) {
    probit_refresh_eta(state, data, workers);
    return probit_expected_z(state, data, workers);
}

/// mu_tilde_k = Sigma_tilde (Sigma0^{-1} mu0 + xt_ez_k), given xt_ez = X^T E[Z].
inline void probit_update_beta_projected(ProbitState& state, const GaussianPrior& prior,
                                         const Eigen::MatrixXd& xt_ez, int workers = 1) {
    parallel_for(static_cast<std::size_t>(xt_ez.cols()), workers, [&](std::size_t k) {
        const auto kk = static_cast<Eigen::Index>(k);
        state.mu_tilde.col(kk) =
            state.Sigma_tilde * (prior.precision_mean() + xt_ez.col(kk));
    });
}

/// The beta half of a sweep. Only mu_tilde changes; eta_tilde is refreshed
/// by the next z update, which keeps each half a proper coordinate step.
template <DesignMatrix Design>
void probit_update_beta(ProbitState& state, const BasicDataset<Design>& data,
                        const GaussianPrior& prior, const Eigen::MatrixXd& ez, int workers = 1) {
    if (ez.rows() != data.size() || ez.cols() != data.K) {
        throw ShapeMismatch("probit_update_beta: E[Z] must be N x K");
    }
    Eigen::MatrixXd xt_ez(data.covariates(), data.K);
    parallel_for(static_cast<std::size_t>(data.K), workers, [&](std::size_t k) {
        const auto kk = static_cast<Eigen::Index>(k);
        xt_ez.col(kk) = data.X.transpose() * ez.col(kk);
    });
    probit_update_beta_projected(state, prior, xt_ez, workers);
}

/// ELBO of the augmented IB-Probit model at (mu_tilde, Sigma_tilde, eta_tilde).
/// Valid for any eta_tilde, not only eta_tilde = X mu_tilde, so it can be
/// evaluated between the two halves of a sweep.
template <DesignMatrix Design>
double probit_elbo(const ProbitState& state, const BasicDataset<Design>& data,
                   const GaussianPrior& prior, int workers = 1) {
    const Eigen::Index N = data.size();
    std::vector<double> per_k(static_cast<std::size_t>(data.K));
    parallel_for(static_cast<std::size_t>(data.K), workers, [&](std::size_t k) {
        const auto kk = static_cast<Eigen::Index>(k);
        const Eigen::VectorXd a = data.X * state.mu_tilde.col(kk);
        std::vector<double> terms(static_cast<std::size_t>(N));
        for (Eigen::Index i = 0; i < N; ++i) {
            const double eta = state.eta_tilde(i, kk);
            const TruncSide side = detail::probit_side(data.y, i, kk);
            const double log_mass = side == TruncSide::Plus ? log_normal_cdf(eta) : log_normal_cdf(-eta);
            const double gap = a(i) - eta;
            terms[static_cast<std::size_t>(i)] =
                log_mass - 0.5 * gap * gap + trunc_shift(eta, side) * gap - 0.5 * state.row_quad(i);
        }
        const double quad = prior.factor().whiten(state.mu_tilde.col(kk) - prior.mean()).squaredNorm();
        per_k[k] = pairwise_sum(terms) - (state.kl_shared + 0.5 * quad);
    });
    return pairwise_sum(per_k);
}

/// E_q[Z] split by whether eta_tilde_ik is zero, for sparse designs where
/// whole rows of eta_tilde vanish. At a zero location E[z] is +-2 phi(0), so
///   E[Z] = star + 2 phi(0) (2 dagger - J + nz)
/// with star holding E[z] at nonzero locations, dagger the label bits at zero
/// locations, nz the nonzero pattern and J the all-ones matrix.
struct SparseExpectedZ {
    SparseDesign star;
    SparseDesign dagger;
    SparseDesign nz;

    Eigen::Index rows() const { return star.rows(); }
    Eigen::Index cols() const { return star.cols(); }

    static double two_phi0() { return 2.0 * normal_pdf(0.0); }

    Eigen::MatrixXd to_dense() const {
        Eigen::MatrixXd out = Eigen::MatrixXd(star) +
                              two_phi0() * (2.0 * Eigen::MatrixXd(dagger) -
                                            Eigen::MatrixXd::Ones(rows(), cols()) + Eigen::MatrixXd(nz));
        return out;
    }

    /// X^T E[Z] without forming the dense N x K matrix.
    template <DesignMatrix Design>
    Eigen::MatrixXd transpose_times(const Design& X) const {
        if (X.rows() != rows()) throw ShapeMismatch("SparseExpectedZ: row count mismatch");
        const Eigen::VectorXd colsum = design::column_sums(X);
        Eigen::MatrixXd out = X.transpose() * star;
        const Eigen::MatrixXd correction =
            2.0 * Eigen::MatrixXd(X.transpose() * dagger) + Eigen::MatrixXd(X.transpose() * nz);
        out += two_phi0() * (correction - colsum * Eigen::RowVectorXd::Ones(cols()));
        return out;
    }
};

template <DesignMatrix Design>
SparseExpectedZ probit_expected_z_sparse(const ProbitState& state, const BasicDataset<Design>& data) {
    using Triplet = Eigen::Triplet<double>;
    std::vector<Triplet> star, dagger, nz;
    const Eigen::Index N = state.eta_tilde.rows();
    const Eigen::Index K = state.eta_tilde.cols();
    for (Eigen::Index k = 0; k < K; ++k) {
        for (Eigen::Index i = 0; i < N; ++i) {
            const double eta = state.eta_tilde(i, k);
            const TruncSide side = detail::probit_side(data.y, i, k);
            if (eta != 0.0) {
                star.emplace_back(i, k, eta + trunc_shift(eta, side));
                nz.emplace_back(i, k, 1.0);
            } else if (side == TruncSide::Plus) {
                dagger.emplace_back(i, k, 1.0);
            }
        }
    }
    SparseExpectedZ out{SparseDesign(N, K), SparseDesign(N, K), SparseDesign(N, K)};
    out.star.setFromTriplets(star.begin(), star.end());
    out.dagger.setFromTriplets(dagger.begin(), dagger.end());
    out.nz.setFromTriplets(nz.begin(), nz.end());
    return out;
}

/// Runs the probit CAVI sweeps until the normalized ELBO gain drops below
/// opts.elbo_drop_tol. Sparse designs take the sparse expectation path.
template <DesignMatrix Design>
std::pair<ProbitState, FitReport> probit_fit(const BasicDataset<Design>& data,
                                             const GaussianPrior& prior, const FitOptions& opts = {}) {
    opts.validate();
    data.validate();
    using Clock = std::chrono::steady_clock;
    ProbitState state = probit_init(data, prior, opts.ridge);
    FitReport report;
    const double scale = static_cast<double>(data.size()) * static_cast<double>(data.K);
    double previous = 0.0;
    if (opts.compute_elbo) {
        previous = probit_elbo(state, data, prior, opts.workers);
        report.elbo_trace.push_back(previous);
    }
    for (int it = 1; it <= opts.max_iters; ++it) {
        const auto start = Clock::now();
        if constexpr (is_sparse_design_v<Design>) {
            probit_refresh_eta(state, data, opts.workers);
            if (opts.track_half_sweeps) {
                report.half_sweep_trace.push_back(probit_elbo(state, data, prior, opts.workers));
            }
            const SparseExpectedZ ez = probit_expected_z_sparse(state, data);
            probit_update_beta_projected(state, prior, ez.transpose_times(data.X), opts.workers);
        } else {
            const Eigen::MatrixXd ez = probit_update_z(state, data, opts.workers);
            if (opts.track_half_sweeps) {
                report.half_sweep_trace.push_back(probit_elbo(state, data, prior, opts.workers));
            }
            probit_update_beta(state, data, prior, ez, opts.workers);
        }
        report.iterations = it;
        double elbo = 0.0;
        if (opts.compute_elbo) {
            elbo = probit_elbo(state, data, prior, opts.workers);
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
    // Leave the returned state consistent: eta_tilde = X mu_tilde.
    probit_refresh_eta(state, data, opts.workers);
    state.elbo_trace = report.elbo_trace;
    return {std::move(state), std::move(report)};
}

}  // namespace cbvi
