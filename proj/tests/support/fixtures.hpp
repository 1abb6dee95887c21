#pragma once

#include <random>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "cbvi/model.hpp"
#include "support/oracles.hpp"

namespace fixture {

/// Gaussian covariates with an intercept column and labels drawn from
/// CB-Probit (CBM) probabilities under a random weight matrix.
inline cbvi::Dataset random_dataset(std::mt19937_64& rng, int N, int M, int K, double weight_sd = 1.0) {
    Eigen::MatrixXd X = oracle::random_matrix(rng, N, M);
    X.col(0).setOnes();
    const Eigen::MatrixXd B = oracle::random_matrix(rng, M, K, weight_sd);
    const Eigen::MatrixXd eta = X * B;
    std::vector<int> y(static_cast<std::size_t>(N));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < N; ++i) {
        const Eigen::VectorXd p =
            cbvi::category_probs(eta.row(i).transpose(), cbvi::Link::Probit, cbvi::Construction::CBM);
        double draw = u(rng);
        int k = 0;
        while (k < K - 1 && draw > p(k)) draw -= p(k++);
        y[static_cast<std::size_t>(i)] = k + 1;
    }
    for (int k = 1; k <= K && k <= N; ++k) y[static_cast<std::size_t>(k - 1)] = k;
    return cbvi::Dataset(std::move(X), std::move(y), K);
}

/// Covariate matrix where each entry is zero with probability `sparsity`.
inline Eigen::MatrixXd sparse_covariates(std::mt19937_64& rng, int N, int M, double sparsity) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd X = oracle::random_matrix(rng, N, M);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < M; ++j)
            if (u(rng) < sparsity) X(i, j) = 0.0;
    return X;
}

inline std::vector<int> permute_labels(const std::vector<int>& y, const std::vector<int>& perm) {
    std::vector<int> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = perm[static_cast<std::size_t>(y[i] - 1)] + 1;
    return out;
}

}  // namespace fixture
