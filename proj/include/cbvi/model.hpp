#pragma once

// Data model and exact likelihoods for independent-binary (IB) and
// categorical-from-binary (CB) regressions.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cbvi/design.hpp"
#include "cbvi/errors.hpp"
#include "cbvi/special.hpp"

namespace cbvi {

/// Inverse link H: probit uses the standard normal cdf, logit the standard
/// logistic cdf. Both are symmetric, so 1 - H(x) = H(-x).
enum class Link { Probit, Logit };

/// How category probabilities are formed from the K success probabilities:
/// CBM normalizes H(eta_k), CBC normalizes the odds H / (1 - H).
enum class Construction { CBM, CBC };

inline std::string_view to_string(Link link) { return link == Link::Probit ? "probit" : "logit"; }

inline std::string_view to_string(Construction c) { return c == Construction::CBM ? "cbm" : "cbc"; }

inline Link parse_link(std::string_view s) {
    if (s == "probit") return Link::Probit;
    if (s == "logit") return Link::Logit;
    throw InvalidSpec("unknown link '" + std::string(s) + "' (expected probit or logit)");
}

inline Construction parse_construction(std::string_view s) {
    if (s == "cbm") return Construction::CBM;
    if (s == "cbc") return Construction::CBC;
    throw InvalidSpec("unknown construction '" + std::string(s) + "' (expected cbm or cbc)");
}

inline double link_cdf(Link link, double x) {
    return link == Link::Probit ? normal_cdf(x) : logistic_cdf(x);
}

/// log H(x); log(1 - H(x)) is log_link_cdf(link, -x).
inline double log_link_cdf(Link link, double x) {
    return link == Link::Probit ? log_normal_cdf(x) : log_logistic_cdf(x);
}

/// H^{-1}(p).
inline double link_quantile(Link link, double p) {
    return link == Link::Probit ? normal_quantile(p) : logit(p);
}

/// Covariates X (N x M), labels y in 1..K, and the category count K.
/// No intercept column is added here; that is the caller's decision.
template <DesignMatrix Design = Eigen::MatrixXd>
struct BasicDataset {
    Design X;
    std::vector<int> y;
    int K = 0;

    BasicDataset() = default;

    BasicDataset(Design covariates, std::vector<int> labels, int categories)
        : X(std::move(covariates)), y(std::move(labels)), K(categories) {
        validate();
    }

    Eigen::Index size() const { return X.rows(); }
    Eigen::Index covariates() const { return X.cols(); }

    void validate() const {
        if (K < 2) throw InvalidData("dataset: need at least two categories");
        if (X.rows() < 1) throw InvalidData("dataset: need at least one observation");
        if (static_cast<Eigen::Index>(y.size()) != X.rows()) {
            throw ShapeMismatch("dataset: " + std::to_string(y.size()) + " labels for " +
                                std::to_string(X.rows()) + " covariate rows");
        }
        for (int label : y) {
            if (label < 1 || label > K) {
                throw InvalidLabel("dataset: label " + std::to_string(label) + " outside 1.." +
                                   std::to_string(K));
            }
        }
        if (!design::all_finite(X)) throw InvalidData("dataset: non-finite covariate");
    }
};

using Dataset = BasicDataset<Eigen::MatrixXd>;
using SparseDataset = BasicDataset<SparseDesign>;

/// N x K indicator matrix whose row i is the one-hot vector e_{y_i}.
inline Eigen::MatrixXd one_hot(std::span<const int> y, int K) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(y.size()), K);
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] < 1 || y[i] > K) {
            throw InvalidLabel("one_hot: label " + std::to_string(y[i]) + " outside 1.." +
                               std::to_string(K));
        }
        out(static_cast<Eigen::Index>(i), y[i] - 1) = 1.0;
    }
    return out;
}

/// eta = X B, one row of K linear predictors per observation.
template <DesignMatrix Design>
Eigen::MatrixXd linear_predictor(const Eigen::MatrixXd& B, const Design& X) {
    if (X.cols() != B.rows()) {
        throw ShapeMismatch("linear_predictor: X has " + std::to_string(X.cols()) +
                            " columns but B has " + std::to_string(B.rows()) + " rows");
    }
    return X * B;
}

namespace detail {

// Unnormalized log category weights: log H(eta_k) for CBM and the log odds
// log H(eta_k) - log H(-eta_k) for CBC.
inline void category_log_weights(const Eigen::Ref<const Eigen::VectorXd>& eta, Link link,
                                 Construction construction, Eigen::VectorXd& out) {
    out.resize(eta.size());
    for (Eigen::Index k = 0; k < eta.size(); ++k) {
        const double log_h = log_link_cdf(link, eta(k));
        out(k) = construction == Construction::CBM ? log_h : log_h - log_link_cdf(link, -eta(k));
    }
}

inline double log_sum_exp(const Eigen::VectorXd& v) {
    const double top = v.maxCoeff();
    return top + std::log((v.array() - top).exp().sum());
}

}  // namespace detail

/// Category probabilities for one row of linear predictors. Evaluated in log
/// space with max-subtraction, so extreme predictors never produce NaN.
inline Eigen::VectorXd category_probs(const Eigen::Ref<const Eigen::VectorXd>& eta, Link link,
                                      Construction construction) {
    if (!eta.allFinite()) throw InvalidData("category_probs: non-finite linear predictor");
    Eigen::VectorXd w;
    detail::category_log_weights(eta, link, construction, w);
    const double top = w.maxCoeff();
    Eigen::VectorXd p = (w.array() - top).exp();
    return p / p.sum();
}

/// log p_CB(y | eta) for one observation, y in 1..K.
inline double category_log_prob(const Eigen::Ref<const Eigen::VectorXd>& eta, int y, Link link,
                                Construction construction) {
    Eigen::VectorXd w;
    detail::category_log_weights(eta, link, construction, w);
    return w(y - 1) - detail::log_sum_exp(w);
}

/// log p_IB(e_y | eta) for one observation.
inline double ib_log_prob(const Eigen::Ref<const Eigen::VectorXd>& eta, int y, Link link) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < eta.size(); ++k) {
        s += (k == y - 1) ? log_link_cdf(link, eta(k)) : log_link_cdf(link, -eta(k));
    }
    return s;
}

/// Sum over (i, k) of ybar log H(eta) + (1 - ybar) log(1 - H(eta)).
template <DesignMatrix Design>
double ib_log_likelihood(const Eigen::MatrixXd& B, const Design& X, const Eigen::MatrixXd& ybar,
                         Link link) {
    const Eigen::MatrixXd eta = linear_predictor(B, X);
    if (ybar.rows() != eta.rows() || ybar.cols() != eta.cols()) {
        throw ShapeMismatch("ib_log_likelihood: indicator matrix shape mismatch");
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < eta.rows(); ++i) {
        for (Eigen::Index k = 0; k < eta.cols(); ++k) {
            const double yk = ybar(i, k);
            total += yk * log_link_cdf(link, eta(i, k)) + (1.0 - yk) * log_link_cdf(link, -eta(i, k));
        }
    }
    return total;
}

/// Sum over observations of log p_CB(y_i | B).
template <DesignMatrix Design>
double cb_log_likelihood(const Eigen::MatrixXd& B, const Design& X, std::span<const int> y,
                         Link link, Construction construction) {
    const Eigen::MatrixXd eta = linear_predictor(B, X);
    if (static_cast<Eigen::Index>(y.size()) != eta.rows()) {
        throw ShapeMismatch("cb_log_likelihood: label count mismatch");
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < eta.rows(); ++i) {
        const int label = y[static_cast<std::size_t>(i)];
        if (label < 1 || label > eta.cols()) throw InvalidLabel("cb_log_likelihood: label out of range");
        total += category_log_prob(eta.row(i).transpose(), label, link, construction);
    }
    return total;
}

/// Gaussian prior N(mu0, Sigma0) shared by every category's weight vector.
/// The factorization and the derived precision terms are computed once.
class GaussianPrior {
public:
    GaussianPrior(Eigen::VectorXd mean, Eigen::MatrixXd cov)
        : mean_(std::move(mean)), cov_(std::move(cov)) {
        if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size()) {
            throw ShapeMismatch("prior: mean and covariance dimensions disagree");
        }
        if (!mean_.allFinite()) throw InvalidData("prior: non-finite mean");
        factor_ = SpdFactor(cov_);
        precision_ = factor_.inverse();
        precision_mean_ = factor_.solve(mean_);
    }

    /// N(mean * 1, variance * I) in dimension M.
    static GaussianPrior isotropic(Eigen::Index M, double mean = 0.0, double variance = 1.0) {
        if (!(variance > 0.0)) throw InvalidCovariance("prior: variance must be positive");
        return GaussianPrior(Eigen::VectorXd::Constant(M, mean),
                             variance * Eigen::MatrixXd::Identity(M, M));
    }

    Eigen::Index dim() const { return mean_.size(); }
    const Eigen::VectorXd& mean() const { return mean_; }
    const Eigen::MatrixXd& cov() const { return cov_; }
    const SpdFactor& factor() const { return factor_; }
    const Eigen::MatrixXd& precision() const { return precision_; }
    /// Sigma0^{-1} mu0.
    const Eigen::VectorXd& precision_mean() const { return precision_mean_; }

private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd cov_;
    SpdFactor factor_;
    Eigen::MatrixXd precision_;
    Eigen::VectorXd precision_mean_;
};

}  // namespace cbvi
