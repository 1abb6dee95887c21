#pragma once

// Posterior predictive distributions, Monte Carlo evidence estimates and
// Bayesian model averaging over the CBM and CBC constructions.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cbvi/cavi_logit.hpp"
#include "cbvi/cavi_probit.hpp"
#include "cbvi/design.hpp"
#include "cbvi/errors.hpp"
#include "cbvi/model.hpp"
#include "cbvi/parallel.hpp"
#include "cbvi/rng.hpp"
#include "cbvi/special.hpp"

namespace cbvi {

/// q(B) = prod_k N(mean_k, cov_k). Probit fits share one covariance across
/// categories; logit fits carry one per category.
class PosteriorGaussian {
public:
    PosteriorGaussian(Eigen::MatrixXd means, std::vector<Eigen::MatrixXd> covs)
        : means_(std::move(means)), covs_(std::move(covs)) {
        const auto K = static_cast<std::size_t>(means_.cols());
        if (covs_.size() != 1 && covs_.size() != K) {
            throw ShapeMismatch("posterior: need one shared covariance or one per category");
        }
        if (!means_.allFinite()) throw InvalidData("posterior: non-finite mean");
        factors_.reserve(covs_.size());
        for (const auto& c : covs_) {
            if (c.rows() != means_.rows() || c.cols() != means_.rows()) {
                throw ShapeMismatch("posterior: covariance dimension disagrees with the mean");
            }
            factors_.emplace_back(c);
        }
    }

    static PosteriorGaussian from(const ProbitState& s) { return {s.mu_tilde, {s.Sigma_tilde}}; }
    static PosteriorGaussian from(const LogitState& s) { return {s.mu_tilde, s.Sigma_tilde}; }

    Eigen::Index dim() const { return means_.rows(); }
    Eigen::Index categories() const { return means_.cols(); }
    bool shared() const { return covs_.size() == 1; }
    const Eigen::MatrixXd& means() const { return means_; }
    const std::vector<Eigen::MatrixXd>& covs() const { return covs_; }
    const Eigen::MatrixXd& cov(Eigen::Index k) const { return covs_[shared() ? 0 : static_cast<std::size_t>(k)]; }
    const SpdFactor& factor(Eigen::Index k) const {
        return factors_[shared() ? 0 : static_cast<std::size_t>(k)];
    }

    /// One draw of B (M x K); each column independently, normals consumed column by column.
    Eigen::MatrixXd sample(RandomStream& rng) const {
        Eigen::MatrixXd b(dim(), categories());
        Eigen::VectorXd z(dim());
        for (Eigen::Index k = 0; k < categories(); ++k) {
            for (Eigen::Index m = 0; m < dim(); ++m) z(m) = rng.normal();
            b.col(k) = means_.col(k) + factor(k).color(z);
        }
        return b;
    }

    /// sum_k KL(q_k || prior).
    double kl_to(const GaussianPrior& prior) const {
        if (prior.dim() != dim()) throw ShapeMismatch("posterior/prior dimension mismatch");
        std::vector<double> parts(static_cast<std::size_t>(categories()));
        for (Eigen::Index k = 0; k < categories(); ++k) {
            parts[static_cast<std::size_t>(k)] =
                gaussian_kl(Eigen::VectorXd(means_.col(k)), factor(k), prior.mean(), prior.factor());
        }
        return pairwise_sum(parts);
    }

private:
    Eigen::MatrixXd means_;
    std::vector<Eigen::MatrixXd> covs_;
    std::vector<SpdFactor> factors_;
};

/// Monte Carlo estimate of E_q[log p_CB(y | B)] - KL(q || prior) from S draws.
/// Draw s uses stream (seed, s), so both constructions see the same draws
/// for the same seed, and the result does not depend on the worker count.
template <DesignMatrix Design>
double estimate_log_evidence(const PosteriorGaussian& q, const BasicDataset<Design>& data,
                             const GaussianPrior& prior, Link link, Construction construction,
                             int S = 100, std::uint64_t seed = 0, int workers = 1) {
    if (S < 1) throw InvalidSpec("estimate_log_evidence: need at least one sample");
    if (q.dim() != data.covariates() || q.categories() != data.K) {
        throw ShapeMismatch("estimate_log_evidence: posterior does not match the data");
    }
    std::vector<double> ll(static_cast<std::size_t>(S));
    parallel_for(ll.size(), workers, [&](std::size_t s) {
        RandomStream rng(seed, streams::kEvidence + s);
        ll[s] = cb_log_likelihood(q.sample(rng), data.X, data.y, link, construction);
    });
    return pairwise_sum(ll) / static_cast<double>(S) - q.kl_to(prior);
}

struct BmaWeights {
    double w_cbm = 0.5;
    double w_cbc = 0.5;
    double prior_pi_cbm = 0.5;
    double prior_pi_cbc = 0.5;
};

/// Posterior model probabilities: softmax of log evidence + log prior.
inline BmaWeights bma_weights(double log_ev_cbm, double log_ev_cbc, double prior_pi_cbm = 0.5) {
    if (!std::isfinite(log_ev_cbm) || !std::isfinite(log_ev_cbc)) {
        throw InvalidData("bma_weights: log evidences must be finite");
    }
    if (!(prior_pi_cbm >= 0.0 && prior_pi_cbm <= 1.0)) {
        throw InvalidSpec("bma_weights: prior probability must lie in [0, 1]");
    }
    const double pi_cbc = 1.0 - prior_pi_cbm;
    const double a = log_ev_cbm + std::log(prior_pi_cbm);
    const double b = log_ev_cbc + std::log(pi_cbc);
    const double top = std::max(a, b);
    const double ea = std::exp(a - top);
    const double eb = std::exp(b - top);
    return {ea / (ea + eb), eb / (ea + eb), prior_pi_cbm, pi_cbc};
}

enum class PredictiveMode { PlugInMean, MonteCarlo };

struct PredictTarget {
    enum class Kind { CBM, CBC, BMA };
    Kind kind = Kind::BMA;
    BmaWeights weights;

    static PredictTarget cbm() { return {Kind::CBM, {1.0, 0.0, 0.5, 0.5}}; }
    static PredictTarget cbc() { return {Kind::CBC, {0.0, 1.0, 0.5, 0.5}}; }
    static PredictTarget bma(BmaWeights w) { return {Kind::BMA, w}; }
};

struct PredictiveOptions {
    PredictiveMode mode = PredictiveMode::PlugInMean;
    int samples = 100;
    std::uint64_t seed = 0;
    int workers = 1;
};

struct PredictiveDistribution {
    Eigen::MatrixXd probs;  // N* x K, rows sum to one
    PredictiveMode mode = PredictiveMode::PlugInMean;
    int samples = 0;
};

namespace detail {

// Adds weight * category_probs(eta_i) to acc row i for every row, row-parallel.
inline void accumulate_probs(const Eigen::MatrixXd& eta, Link link, const PredictTarget& target,
                             double weight, Eigen::MatrixXd& acc, int workers) {
    parallel_for(static_cast<std::size_t>(eta.rows()), workers, [&](std::size_t r) {
        const auto i = static_cast<Eigen::Index>(r);
        const Eigen::VectorXd row = eta.row(i).transpose();
        Eigen::VectorXd p = Eigen::VectorXd::Zero(eta.cols());
        if (target.weights.w_cbm > 0.0) {
            p += target.weights.w_cbm * category_probs(row, link, Construction::CBM);
        }
        if (target.weights.w_cbc > 0.0) {
            p += target.weights.w_cbc * category_probs(row, link, Construction::CBC);
        }
        acc.row(i) += weight * p.transpose();
    });
}

}  // namespace detail

/// Predictive category probabilities at the rows of x_star. PlugInMean
/// substitutes the posterior mean; MonteCarlo averages over draws t using
/// stream (seed, t). BMA mixes the two constructions with the target weights.
template <DesignMatrix Design>
PredictiveDistribution posterior_predictive(const PosteriorGaussian& q, const Design& x_star,
                                            Link link, const PredictTarget& target,
                                            const PredictiveOptions& opts = {}) {
    if (x_star.cols() != q.dim()) {
        throw ShapeMismatch("posterior_predictive: X has " + std::to_string(x_star.cols()) +
                            " columns but the posterior has dimension " + std::to_string(q.dim()));
    }
    const double total = target.weights.w_cbm + target.weights.w_cbc;
    if (!(target.weights.w_cbm >= 0.0 && target.weights.w_cbc >= 0.0) || std::abs(total - 1.0) > 1e-12) {
        throw InvalidSpec("posterior_predictive: construction weights must be a convex combination");
    }
    PredictiveDistribution out;
    out.mode = opts.mode;
    out.probs = Eigen::MatrixXd::Zero(x_star.rows(), q.categories());
    if (opts.mode == PredictiveMode::PlugInMean) {
        detail::accumulate_probs(linear_predictor(q.means(), x_star), link, target, 1.0, out.probs,
                                 opts.workers);
        return out;
    }
    if (opts.samples < 1) throw InvalidSpec("posterior_predictive: need at least one sample");
    out.samples = opts.samples;
    const double w = 1.0 / static_cast<double>(opts.samples);
    for (int t = 0; t < opts.samples; ++t) {
        RandomStream rng(opts.seed, streams::kPredictive + static_cast<std::uint64_t>(t));
        detail::accumulate_probs(linear_predictor(q.sample(rng), x_star), link, target, w, out.probs,
                                 opts.workers);
    }
    // Remove the rounding drift of T additions.
    for (Eigen::Index i = 0; i < out.probs.rows(); ++i) out.probs.row(i) /= out.probs.row(i).sum();
    return out;
}

struct LabelPrediction {
    /// Tied argmax labels per row (1-based), ascending.
    std::vector<std::vector<int>> labels;
    /// 1 / (number of tied labels) per row.
    std::vector<double> credit;

    int label(std::size_t row) const { return labels[row].front(); }
};

/// Entries within this relative distance of the row maximum count as tied.
inline constexpr double kTieTolerance = 1e-12;

inline std::vector<int> argmax_labels(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    const double top = row.maxCoeff();
    std::vector<int> tied;
    for (Eigen::Index k = 0; k < row.size(); ++k) {
        if (row(k) >= top - kTieTolerance * std::abs(top)) tied.push_back(static_cast<int>(k) + 1);
    }
    return tied;
}

inline LabelPrediction predict_labels(const Eigen::MatrixXd& probs) {
    LabelPrediction out;
    out.labels.reserve(static_cast<std::size_t>(probs.rows()));
    out.credit.reserve(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        out.labels.push_back(argmax_labels(probs.row(i)));
        out.credit.push_back(1.0 / static_cast<double>(out.labels.back().size()));
    }
    return out;
}

inline LabelPrediction predict_labels(const PredictiveDistribution& pred) {
    return predict_labels(pred.probs);
}

}  // namespace cbvi
