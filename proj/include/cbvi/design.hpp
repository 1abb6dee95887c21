#pragma once

// Design-matrix operations used by the engines, specialised for dense and
// column-major sparse covariates.

#include <cmath>
#include <concepts>
#include <type_traits>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace cbvi {

using SparseDesign = Eigen::SparseMatrix<double>;

template <class T>
concept DesignMatrix = std::same_as<T, Eigen::MatrixXd> || std::same_as<T, SparseDesign>;

template <class Design>
inline constexpr bool is_sparse_design_v = std::is_same_v<Design, SparseDesign>;

namespace design {

/// X^T X.
inline Eigen::MatrixXd gram(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(x.cols(), x.cols());
    g.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
    return g.selfadjointView<Eigen::Lower>();
}

inline Eigen::MatrixXd gram(const SparseDesign& x) {
    const SparseDesign g = x.transpose() * x;
    return Eigen::MatrixXd(g);
}

/// X^T diag(w) X.
inline Eigen::MatrixXd weighted_gram(const Eigen::MatrixXd& x, const Eigen::VectorXd& w) {
    const Eigen::MatrixXd scaled = w.cwiseSqrt().asDiagonal() * x;
    return gram(scaled);
}

inline Eigen::MatrixXd weighted_gram(const SparseDesign& x, const Eigen::VectorXd& w) {
    const SparseDesign scaled = w.cwiseSqrt().asDiagonal() * x;
    return gram(scaled);
}

/// Row-wise quadratic forms x_i^T S x_i.
inline Eigen::VectorXd row_quadratic_forms(const Eigen::MatrixXd& x, const Eigen::MatrixXd& s) {
    return (x * s).cwiseProduct(x).rowwise().sum();
}

inline Eigen::VectorXd row_quadratic_forms(const SparseDesign& x, const Eigen::MatrixXd& s) {
    const Eigen::SparseMatrix<double, Eigen::RowMajor> rows = x;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(x.rows());
    for (Eigen::Index i = 0; i < rows.outerSize(); ++i) {
        double q = 0.0;
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator a(rows, i); a; ++a) {
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator b(rows, i); b; ++b) {
                q += a.value() * b.value() * s(a.col(), b.col());
            }
        }
        out(i) = q;
    }
    return out;
}

inline Eigen::VectorXd column_sums(const Eigen::MatrixXd& x) { return x.colwise().sum().transpose(); }

inline Eigen::VectorXd column_sums(const SparseDesign& x) {
    return x.transpose() * Eigen::VectorXd::Ones(x.rows());
}

inline bool all_finite(const Eigen::MatrixXd& x) { return x.allFinite(); }

inline bool all_finite(const SparseDesign& x) {
    for (Eigen::Index k = 0; k < x.outerSize(); ++k) {
        for (SparseDesign::InnerIterator it(x, k); it; ++it) {
            if (!std::isfinite(it.value())) return false;
        }
    }
    return true;
}

}  // namespace design
}  // namespace cbvi
