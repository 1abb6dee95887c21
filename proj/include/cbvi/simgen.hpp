#pragma once

// Simulated softmax data, evaluation metrics, reference predictors (softmax
// MLE and base rates), train/test splits and the event-sequence featurizer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "cbvi/design.hpp"
#include "cbvi/errors.hpp"
#include "cbvi/model.hpp"
#include "cbvi/parallel.hpp"
#include "cbvi/predict.hpp"
#include "cbvi/rng.hpp"

namespace cbvi {

/// Simulation settings. The sigma_* fields are variances, not standard deviations.
struct SimSpec {
    int N = 100;
    int K = 3;
    int M = 6;
    double sigma_high = 2.0;
    double sigma_low = 0.001;
    double sigma_int = 0.25;
    std::uint64_t seed = 0;

    void validate() const {
        if (N < 1) throw InvalidSpec("simulate: N must be at least 1");
        if (K < 2) throw InvalidSpec("simulate: K must be at least 2");
        if (M < 1) throw InvalidSpec("simulate: M must be at least 1");
        if (M < K) {
            throw InvalidSpec("simulate: M must be at least K so every category owns a covariate block");
        }
        if (!(sigma_low > 0.0 && sigma_int > 0.0)) throw InvalidSpec("simulate: variances must be positive");
        if (!(sigma_high > sigma_low)) throw InvalidSpec("simulate: sigma_high must exceed sigma_low");
    }
};

struct SimOutput {
    Dataset data;             // X carries a leading ones column
    Eigen::MatrixXd B_true;   // (M+1) x K, intercept row first
    Eigen::MatrixXd probs;    // N x K true category probabilities
};

/// Row-wise softmax of a matrix of logits.
inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const Eigen::RowVectorXd e = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
        p.row(i) = e / e.sum();
    }
    return p;
}

/// Prior variances of the non-intercept weights (M x K): covariate m (1-based)
/// has variance sigma_high in column ceil(m / S), S = floor(M / K), and
/// sigma_low elsewhere.
inline Eigen::MatrixXd variance_mask(const SimSpec& spec) {
    spec.validate();
    const int block = spec.M / spec.K;
    Eigen::MatrixXd v = Eigen::MatrixXd::Constant(spec.M, spec.K, spec.sigma_low);
    for (int m = 1; m <= spec.M; ++m) {
        const int k = (m + block - 1) / block;
        if (k <= spec.K) v(m - 1, k - 1) = spec.sigma_high;
    }
    return v;
}

inline Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out(x.rows(), x.cols() + 1);
    out.col(0).setOnes();
    out.rightCols(x.cols()) = x;
    return out;
}

/// Draws covariates, weights and labels from the softmax generative model.
/// Each ingredient has its own random stream, so the output is a pure function of spec.
inline SimOutput simulate(const SimSpec& spec) {
    spec.validate();
    RandomStream cov_rng(spec.seed, streams::kSimCovariates);
    Eigen::MatrixXd x(spec.N, spec.M);
    for (int i = 0; i < spec.N; ++i) {
        for (int m = 0; m < spec.M; ++m) x(i, m) = cov_rng.normal();
    }

    RandomStream weight_rng(spec.seed, streams::kSimWeights);
    const Eigen::MatrixXd var = variance_mask(spec);
    Eigen::MatrixXd b(spec.M + 1, spec.K);
    for (int k = 0; k < spec.K; ++k) {
        b(0, k) = weight_rng.normal(0.0, std::sqrt(spec.sigma_int));
        for (int m = 0; m < spec.M; ++m) b(m + 1, k) = weight_rng.normal(0.0, std::sqrt(var(m, k)));
    }

    Eigen::MatrixXd xd = with_intercept(x);
    Eigen::MatrixXd probs = softmax_rows(xd * b);

    RandomStream label_rng(spec.seed, streams::kSimLabels);
    std::vector<int> y(static_cast<std::size_t>(spec.N));
    for (int i = 0; i < spec.N; ++i) {
        const double u = label_rng.uniform();
        double cum = 0.0;
        int label = spec.K;
        for (int k = 0; k < spec.K; ++k) {
            cum += probs(i, k);
            if (u < cum) {
                label = k + 1;
                break;
            }
        }
        y[static_cast<std::size_t>(i)] = label;
    }
    return {Dataset(std::move(xd), std::move(y), spec.K), std::move(b), std::move(probs)};
}

// ---- metrics ---------------------------------------------------------------

/// Predicted probabilities below this are floored for the MLE and base-rate predictors.
inline constexpr double kProbabilityFloor = 1e-10;

inline void require_row_count(Eigen::Index rows, std::size_t labels, const char* who) {
    if (static_cast<std::size_t>(rows) != labels) {
        throw ShapeMismatch(std::string(who) + ": " + std::to_string(rows) + " prediction rows but " +
                            std::to_string(labels) + " labels");
    }
}

/// -(1/N) sum_i sum_k p_ik log p_ik, with 0 log 0 = 0.
inline double mean_conditional_entropy(const Eigen::MatrixXd& probs) {
    if (probs.rows() == 0) throw InvalidData("mean_conditional_entropy: empty input");
    std::vector<double> rows(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        double h = 0.0;
        for (Eigen::Index k = 0; k < probs.cols(); ++k) {
            const double p = probs(i, k);
            if (p < 0.0) throw InvalidData("mean_conditional_entropy: negative probability");
            if (p > 0.0) h -= p * std::log(p);
        }
        rows[static_cast<std::size_t>(i)] = h;
    }
    return pairwise_sum(rows) / static_cast<double>(probs.rows());
}

/// Floors every entry at `floor` and renormalizes each row.
inline Eigen::MatrixXd floor_probabilities(const Eigen::MatrixXd& probs, double floor = kProbabilityFloor) {
    Eigen::MatrixXd out = probs.cwiseMax(floor);
    for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) /= out.row(i).sum();
    return out;
}

/// (1/N) sum_i log p_i[y_i]. A positive floor (for predictors that can emit
/// zeros) is applied with renormalization first; 0 leaves the rows as given.
inline double holdout_log_likelihood(const Eigen::MatrixXd& probs, std::span<const int> y,
                                     double floor = 0.0) {
    require_row_count(probs.rows(), y.size(), "holdout_log_likelihood");
    if (y.empty()) throw InvalidData("holdout_log_likelihood: empty test set");
    if (floor < 0.0) throw InvalidSpec("holdout_log_likelihood: floor must be non-negative");
    const Eigen::MatrixXd p = floor > 0.0 ? floor_probabilities(probs, floor) : probs;
    std::vector<double> terms(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] < 1 || y[i] > p.cols()) throw InvalidLabel("holdout_log_likelihood: label out of range");
        terms[i] = std::log(p(static_cast<Eigen::Index>(i), y[i] - 1));
    }
    return pairwise_sum(terms) / static_cast<double>(y.size());
}

/// Mean accuracy where a C-way tie containing the true label earns 1/C.
inline double accuracy(const Eigen::MatrixXd& probs, std::span<const int> y) {
    require_row_count(probs.rows(), y.size(), "accuracy");
    if (y.empty()) throw InvalidData("accuracy: empty test set");
    const LabelPrediction pred = predict_labels(probs);
    std::vector<double> credit(y.size(), 0.0);
    for (std::size_t i = 0; i < y.size(); ++i) {
        const auto& tied = pred.labels[i];
        if (std::find(tied.begin(), tied.end(), y[i]) != tied.end()) credit[i] = pred.credit[i];
    }
    return pairwise_sum(credit) / static_cast<double>(y.size());
}

/// KL(p_true_i || p_model_i) for every row.
inline Eigen::VectorXd row_kl(const Eigen::MatrixXd& p_true, const Eigen::MatrixXd& p_model) {
    if (p_true.rows() != p_model.rows() || p_true.cols() != p_model.cols()) {
        throw ShapeMismatch("row_kl: probability matrices differ in shape");
    }
    Eigen::VectorXd out(p_true.rows());
    for (Eigen::Index i = 0; i < p_true.rows(); ++i) {
        double d = 0.0;
        for (Eigen::Index k = 0; k < p_true.cols(); ++k) {
            const double p = p_true(i, k);
            if (p > 0.0) d += p * (std::log(p) - std::log(p_model(i, k)));
        }
        out(i) = d;
    }
    return out;
}

inline double mean_kl(const Eigen::MatrixXd& p_true, const Eigen::MatrixXd& p_model) {
    const Eigen::VectorXd d = row_kl(p_true, p_model);
    return pairwise_sum(std::span<const double>(d.data(), static_cast<std::size_t>(d.size()))) /
           static_cast<double>(d.size());
}

// ---- reference predictors ----------------------------------------------------

struct SoftmaxMleOptions {
    int max_iters = 5000;
    double grad_tol = 1e-6;
};

struct SoftmaxMleFit {
    Eigen::MatrixXd B;  // M x K
    double log_likelihood = 0.0;
    int iterations = 0;
    bool converged = false;
};

namespace detail {

template <DesignMatrix Design>
double softmax_log_likelihood(const Eigen::MatrixXd& B, const BasicDataset<Design>& data,
                              Eigen::MatrixXd* gradient) {
    const Eigen::MatrixXd eta = data.X * B;
    std::vector<double> terms(static_cast<std::size_t>(eta.rows()));
    Eigen::MatrixXd resid(eta.rows(), eta.cols());
    for (Eigen::Index i = 0; i < eta.rows(); ++i) {
        const double top = eta.row(i).maxCoeff();
        const Eigen::RowVectorXd e = (eta.row(i).array() - top).exp();
        const double z = e.sum();
        const int y = data.y[static_cast<std::size_t>(i)] - 1;
        terms[static_cast<std::size_t>(i)] = eta(i, y) - top - std::log(z);
        resid.row(i) = -e / z;
        resid(i, y) += 1.0;
    }
    if (gradient) *gradient = data.X.transpose() * resid;
    return pairwise_sum(terms);
}

}  // namespace detail

/// Maximum likelihood softmax regression by gradient ascent from B = 0,
/// with Barzilai-Borwein trial steps and Armijo backtracking. On
/// separable data the maximizer does not exist and the gradient decays
/// only as the weights grow; unless grad_tol stops it first, the iteration
/// cap ends the run and converged stays false.
template <DesignMatrix Design>
SoftmaxMleFit softmax_mle(const BasicDataset<Design>& data, const SoftmaxMleOptions& opts = {}) {
    data.validate();
    SoftmaxMleFit fit;
    fit.B = Eigen::MatrixXd::Zero(data.covariates(), data.K);
    Eigen::MatrixXd grad;
    double f = detail::softmax_log_likelihood(fit.B, data, &grad);
    double step = 1.0 / static_cast<double>(data.size());
    Eigen::MatrixXd prev_B, prev_grad;
    for (int it = 1; it <= opts.max_iters; ++it) {
        if (grad.cwiseAbs().maxCoeff() < opts.grad_tol) {
            fit.converged = true;
            break;
        }
        if (it > 1) {
            const Eigen::MatrixXd s = fit.B - prev_B;
            const double sy = (s.array() * (grad - prev_grad).array()).sum();
            if (sy < 0.0) step = s.squaredNorm() / -sy;
        }
        const double g2 = grad.squaredNorm();
        Eigen::MatrixXd trial_grad;
        Eigen::MatrixXd trial;
        double trial_f = f;
        bool accepted = false;
        for (int halving = 0; halving < 60; ++halving) {
            trial = fit.B + step * grad;
            trial_f = detail::softmax_log_likelihood(trial, data, &trial_grad);
            if (std::isfinite(trial_f) && trial_f >= f + 1e-4 * step * g2) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        fit.iterations = it;
        if (!accepted) break;
        prev_B = std::move(fit.B);
        prev_grad = std::move(grad);
        fit.B = std::move(trial);
        grad = std::move(trial_grad);
        f = trial_f;
    }
    if (!fit.converged && grad.cwiseAbs().maxCoeff() < opts.grad_tol) fit.converged = true;
    fit.log_likelihood = f;
    return fit;
}

/// Softmax category probabilities at the rows of x.
template <DesignMatrix Design>
Eigen::MatrixXd softmax_predict(const Eigen::MatrixXd& B, const Design& x) {
    return softmax_rows(linear_predictor(B, x));
}

/// Training-set category frequencies, floored and renormalized.
struct BaseratePredictor {
    Eigen::RowVectorXd probs;

    Eigen::MatrixXd predict(Eigen::Index rows) const { return probs.replicate(rows, 1); }
};

inline BaseratePredictor baserate_predictor(std::span<const int> y_train, int K,
                                            double floor = kProbabilityFloor) {
    if (y_train.empty()) throw InvalidData("baserate_predictor: no training labels");
    Eigen::RowVectorXd counts = Eigen::RowVectorXd::Zero(K);
    for (int label : y_train) {
        if (label < 1 || label > K) throw InvalidLabel("baserate_predictor: label out of range");
        counts(label - 1) += 1.0;
    }
    Eigen::RowVectorXd p = (counts / static_cast<double>(y_train.size())).cwiseMax(floor);
    return {p / p.sum()};
}

// ---- splits ----------------------------------------------------------------

struct Split {
    std::vector<Eigen::Index> train;
    std::vector<Eigen::Index> test;
};

inline Eigen::Index train_count(Eigen::Index n, double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw InvalidSpec("split: train fraction must lie in (0, 1)");
    }
    const auto count = static_cast<Eigen::Index>(std::floor(train_fraction * static_cast<double>(n)));
    if (count < 1 || count >= n) throw InvalidSpec("split: both sides need at least one row");
    return count;
}

/// Seeded uniform split; both index lists are returned in ascending order.
inline Split random_split(Eigen::Index n, double train_fraction, std::uint64_t seed) {
    const Eigen::Index count = train_count(n, train_fraction);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    RandomStream rng(seed, streams::kSplit);
    // Fisher-Yates with an explicit draw so the permutation is library independent.
    for (std::size_t i = idx.size() - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng.bits() % (i + 1));
        std::swap(idx[i], idx[j]);
    }
    Split s{{idx.begin(), idx.begin() + count}, {idx.begin() + count, idx.end()}};
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

/// The first train_fraction of rows train, the rest test.
inline Split chronological_split(Eigen::Index n, double train_fraction) {
    const Eigen::Index count = train_count(n, train_fraction);
    Split s;
    for (Eigen::Index i = 0; i < n; ++i) (i < count ? s.train : s.test).push_back(i);
    return s;
}

inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
    return out;
}

inline SparseDesign take_rows(const SparseDesign& x, const std::vector<Eigen::Index>& rows) {
    SparseDesign select(static_cast<Eigen::Index>(rows.size()), x.rows());
    std::vector<Eigen::Triplet<double>> t;
    for (std::size_t r = 0; r < rows.size(); ++r) t.emplace_back(static_cast<Eigen::Index>(r), rows[r], 1.0);
    select.setFromTriplets(t.begin(), t.end());
    return select * x;
}

template <DesignMatrix Design>
BasicDataset<Design> take_rows(const BasicDataset<Design>& data, const std::vector<Eigen::Index>& rows) {
    std::vector<int> y;
    y.reserve(rows.size());
    for (Eigen::Index r : rows) y.push_back(data.y[static_cast<std::size_t>(r)]);
    return BasicDataset<Design>(take_rows(data.X, rows), std::move(y), data.K);
}

// ---- event sequences ---------------------------------------------------------

struct Event {
    std::int64_t timestamp = 0;
    int process = 0;  // 0-based vocabulary index
};

struct EventLog {
    std::vector<Event> events;
    std::vector<std::string> users;      // per event
    std::vector<std::string> vocabulary; // process names by first appearance
};

/// Parses "timestamp,user,process" lines. Blank lines and lines starting
/// with '#' are skipped, as is a first line whose timestamp is not an integer.
/// The vocabulary covers the whole file, so per-user subsets share columns.
inline EventLog parse_event_log(std::istream& in, char delimiter = ',') {
    EventLog log;
    std::unordered_map<std::string, int> index;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, delimiter)) fields.push_back(field);
        if (fields.size() != 3) {
            throw InvalidData("event log line " + std::to_string(line_no) + ": expected 3 fields");
        }
        std::int64_t ts = 0;
        std::size_t used = 0;
        try {
            ts = std::stoll(fields[0], &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != fields[0].size()) {
            if (log.events.empty() && index.empty()) continue;  // header
            throw InvalidData("event log line " + std::to_string(line_no) + ": bad timestamp");
        }
        auto [it, inserted] = index.try_emplace(fields[2], static_cast<int>(log.vocabulary.size()));
        if (inserted) log.vocabulary.push_back(fields[2]);
        log.events.push_back({ts, it->second});
        log.users.push_back(fields[1]);
    }
    return log;
}

/// Events of one user, in file order.
inline std::vector<Event> events_for_user(const EventLog& log, const std::string& user) {
    std::vector<Event> out;
    for (std::size_t i = 0; i < log.events.size(); ++i) {
        if (log.users[i] == user) out.push_back(log.events[i]);
    }
    return out;
}

/// One row per event: each of the W preceding events adds exp(-dt / tau) to
/// its process column (repeats sum); the label is the event's own process.
/// Early events use whatever history exists.
inline SparseDataset featurize_sequence(const std::vector<Event>& events, int K, int W, double tau) {
    if (W < 1) throw InvalidSpec("featurize_sequence: W must be at least 1");
    if (!(tau > 0.0)) throw InvalidSpec("featurize_sequence: tau must be positive");
    if (events.empty()) throw InvalidData("featurize_sequence: no events");
    std::vector<Eigen::Triplet<double>> t;
    std::vector<int> y;
    y.reserve(events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
        const Event& e = events[i];
        if (e.process < 0 || e.process >= K) throw InvalidLabel("featurize_sequence: process out of range");
        if (i > 0 && e.timestamp < events[i - 1].timestamp) {
            throw InvalidData("featurize_sequence: timestamps must be nondecreasing");
        }
        const std::size_t first = i > static_cast<std::size_t>(W) ? i - static_cast<std::size_t>(W) : 0;
        for (std::size_t j = first; j < i; ++j) {
            const double dt = static_cast<double>(e.timestamp - events[j].timestamp);
            t.emplace_back(static_cast<Eigen::Index>(i), events[j].process, std::exp(-dt / tau));
        }
        y.push_back(e.process + 1);
    }
    SparseDesign x(static_cast<Eigen::Index>(events.size()), K);
    x.setFromTriplets(t.begin(), t.end());  // duplicates are summed
    return SparseDataset(std::move(x), std::move(y), K);
}

}  // namespace cbvi
