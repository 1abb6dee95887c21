#pragma once

// Command-line front end: simulate, fit, predict, evaluate, featurize and
// bma-weights. run() is the whole program minus argv handling, so tests can
// drive it in-process.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "CLI11.hpp"
#include "cbvi/cbvi.hpp"
#include "cbvi/io.hpp"
#include "json.hpp"

namespace cbvi::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum ExitCode : int {
    kOk = 0,
    kUnexpected = 1,
    kConfigError = 2,
    kDataError = 3,
    kNumericalError = 4,
    kIoError = 5,
};

inline constexpr const char* kPosteriorFormat = "cbvi-posterior";
inline constexpr const char* kTruthFormat = "cbvi-truth";
inline constexpr int kFormatVersion = 1;

/// Column transform learned on training covariates: optional z-scoring, then
/// an optional leading ones column. Constant columns are left unscaled.
struct Transform {
    bool intercept = false;
    bool zscore = false;
    Eigen::VectorXd center;
    Eigen::VectorXd scale;

    static Transform fit(const Eigen::MatrixXd& raw, bool intercept, bool zscore) {
        Transform t{intercept, zscore, {}, {}};
        if (!zscore) return t;
        const Eigen::Index n = raw.rows();
        t.center = raw.colwise().mean().transpose();
        t.scale = Eigen::VectorXd::Ones(raw.cols());
        for (Eigen::Index j = 0; j < raw.cols(); ++j) {
            const double ss = (raw.col(j).array() - t.center(j)).square().sum();
            const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
            if (sd > 0.0) {
                t.scale(j) = sd;
            } else {
                t.center(j) = 0.0;
            }
        }
        return t;
    }

    Eigen::Index raw_columns() const { return center.size(); }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& raw) const {
        Eigen::MatrixXd x = raw;
        if (zscore) {
            if (raw.cols() != center.size()) {
                throw ShapeMismatch("covariates have " + std::to_string(raw.cols()) +
                                    " columns but the stored z-score transform expects " +
                                    std::to_string(center.size()));
            }
            x = (raw.rowwise() - center.transpose()).array().rowwise() / scale.transpose().array();
        }
        return intercept ? with_intercept(x) : x;
    }

    json to_json() const {
        json j{{"intercept", intercept}, {"zscore", zscore}};
        if (zscore) {
            j["center"] = io::to_json(center);
            j["scale"] = io::to_json(scale);
        }
        return j;
    }

    static Transform from_json(const json& j) {
        Transform t;
        t.intercept = j.at("intercept").get<bool>();
        t.zscore = j.at("zscore").get<bool>();
        if (t.zscore) {
            t.center = io::vector_from_json(j.at("center"), "transform.center");
            t.scale = io::vector_from_json(j.at("scale"), "transform.scale");
            if (t.center.size() != t.scale.size()) throw ShapeMismatch("transform: center/scale sizes differ");
        }
        return t;
    }
};

/// Everything a fit leaves behind. Contains no timings, so refits with the
/// same inputs and settings serialize identically.
struct PosteriorFile {
    Link link = Link::Probit;
    Eigen::Index N = 0;
    Eigen::Index M = 0;
    int K = 0;
    Eigen::MatrixXd mean;              // M x K
    std::vector<Eigen::MatrixXd> cov;  // one shared (probit) or K (logit)
    Eigen::VectorXd prior_mean;
    Eigen::MatrixXd prior_cov;
    std::vector<double> elbo_trace;
    int iterations = 0;
    bool converged = false;
    Transform transform;
    std::string train_x;
    std::string train_y;
    json config = json::object();

    PosteriorGaussian posterior() const { return {mean, cov}; }
    GaussianPrior prior() const { return {prior_mean, prior_cov}; }

    json to_json() const {
        json covs = json::array();
        for (const auto& c : cov) covs.push_back(io::to_json(c));
        return json{
            {"format", kPosteriorFormat},
            {"version", kFormatVersion},
            {"link", std::string(to_string(link))},
            {"N", N},
            {"M", M},
            {"K", K},
            {"mean", io::to_json(mean)},
            {"cov", covs},
            {"prior", {{"mean", io::to_json(prior_mean)}, {"cov", io::to_json(prior_cov)}}},
            {"elbo_trace", elbo_trace},
            {"iterations", iterations},
            {"converged", converged},
            {"transform", transform.to_json()},
            {"training", {{"X", train_x}, {"y", train_y}}},
            {"config", config},
        };
    }

    static PosteriorFile from_json(const json& j) {
        try {
            if (j.at("format").get<std::string>() != kPosteriorFormat) {
                throw InvalidData("not a posterior file");
            }
            if (j.at("version").get<int>() != kFormatVersion) {
                throw InvalidData("unsupported posterior file version " + j.at("version").dump());
            }
            PosteriorFile p;
            p.link = parse_link(j.at("link").get<std::string>());
            p.N = j.at("N").get<Eigen::Index>();
            p.M = j.at("M").get<Eigen::Index>();
            p.K = j.at("K").get<int>();
            p.mean = io::matrix_from_json(j.at("mean"), "mean");
            for (const auto& c : j.at("cov")) p.cov.push_back(io::matrix_from_json(c, "cov"));
            p.prior_mean = io::vector_from_json(j.at("prior").at("mean"), "prior.mean");
            p.prior_cov = io::matrix_from_json(j.at("prior").at("cov"), "prior.cov");
            p.elbo_trace = j.at("elbo_trace").get<std::vector<double>>();
            p.iterations = j.at("iterations").get<int>();
            p.converged = j.at("converged").get<bool>();
            p.transform = Transform::from_json(j.at("transform"));
            p.train_x = j.at("training").at("X").get<std::string>();
            p.train_y = j.at("training").at("y").get<std::string>();
            p.config = j.at("config");
            p.check_dimensions();
            return p;
        } catch (const json::exception& e) {
            throw InvalidData(std::string("posterior file: ") + e.what());
        }
    }

    void check_dimensions() const {
        auto fail = [](const std::string& what) { throw ShapeMismatch("posterior file: " + what); };
        if (K < 2 || M < 1 || N < 1) fail("invalid N, M or K");
        if (mean.rows() != M || mean.cols() != K) fail("mean is not M x K");
        const std::size_t expected = link == Link::Probit ? 1 : static_cast<std::size_t>(K);
        if (cov.size() != expected) fail("wrong number of covariance matrices for the link");
        for (const auto& c : cov) {
            if (c.rows() != M || c.cols() != M) fail("covariance is not M x M");
        }
        if (prior_mean.size() != M || prior_cov.rows() != M || prior_cov.cols() != M) {
            fail("prior does not have dimension M");
        }
        const Eigen::Index base = transform.intercept ? M - 1 : M;
        if (transform.zscore && transform.raw_columns() != base) fail("transform does not match M");
    }
};

inline PosteriorFile load_posterior(const fs::path& path) {
    return PosteriorFile::from_json(io::read_json(path));
}

namespace detail {

inline std::string absolute_string(const std::string& p) {
    return p.empty() ? p : fs::absolute(fs::path(p)).lexically_normal().string();
}

inline std::vector<int> load_labels(const std::string& path) {
    if (path.empty()) throw InvalidSpec("a label file is required");
    return io::read_labels_csv(path);
}

inline Eigen::MatrixXd load_matrix(const std::string& path) {
    if (path.empty()) throw InvalidSpec("a covariate file is required");
    return io::read_matrix_csv(path);
}

inline int infer_categories(const std::vector<int>& y, int requested) {
    const int top = *std::max_element(y.begin(), y.end());
    return requested > 0 ? requested : std::max(top, 2);
}

inline GaussianPrior build_prior(Eigen::Index M, const std::vector<double>& mean, double var,
                                 const std::string& cov_path) {
    Eigen::VectorXd mu;
    if (mean.size() == 1) {
        mu = Eigen::VectorXd::Constant(M, mean.front());
    } else if (static_cast<Eigen::Index>(mean.size()) == M) {
        mu = Eigen::Map<const Eigen::VectorXd>(mean.data(), M);
    } else {
        throw InvalidSpec("prior_mean needs 1 or " + std::to_string(M) + " values");
    }
    Eigen::MatrixXd cov;
    if (!cov_path.empty()) {
        cov = io::read_matrix_csv(cov_path);
        if (cov.rows() != M || cov.cols() != M) {
            throw InvalidSpec("prior_cov must be " + std::to_string(M) + " x " + std::to_string(M));
        }
    } else {
        if (!(var > 0.0)) throw InvalidSpec("prior_var must be positive");
        cov = var * Eigen::MatrixXd::Identity(M, M);
    }
    try {
        return GaussianPrior(mu, cov);
    } catch (const InvalidCovariance& e) {
        throw InvalidSpec(std::string("prior covariance: ") + e.what());
    }
}

inline std::string write_predictions_csv(const Eigen::MatrixXd& probs, const std::string& header) {
    const LabelPrediction labels = predict_labels(probs);
    std::string out = "# " + header + '\n';
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        for (Eigen::Index k = 0; k < probs.cols(); ++k) out += io::format_double(probs(i, k)) + ',';
        const auto r = static_cast<std::size_t>(i);
        out += std::to_string(labels.label(r)) + ',' + io::format_double(labels.credit[r]) + '\n';
    }
    return out;
}

/// Reads the probability columns of a predictions file (drops label and credit).
inline Eigen::MatrixXd read_prediction_probs(const std::string& path) {
    const Eigen::MatrixXd all = io::read_matrix_csv(path);
    if (all.cols() < 4) throw InvalidData(path + ": expected K >= 2 probability columns plus label and credit");
    return all.leftCols(all.cols() - 2);
}

inline Eigen::MatrixXd read_truth_probs(const std::string& path) {
    const json j = io::read_json(path);
    try {
        if (j.at("format").get<std::string>() != kTruthFormat) throw InvalidData(path + ": not a truth file");
        Eigen::MatrixXd p = io::matrix_from_json(j.at("probs"), "probs");
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            if ((p.row(i).array() < 0.0).any() || std::abs(p.row(i).sum() - 1.0) > 1e-9) {
                throw InvalidData(path + ": row " + std::to_string(i + 1) + " is not a distribution");
            }
        }
        return p;
    } catch (const json::exception& e) {
        throw InvalidData(path + ": " + e.what());
    }
}

inline json truth_json(const SimSpec& spec, const Eigen::MatrixXd& B, const Eigen::MatrixXd& probs) {
    return json{
        {"format", kTruthFormat},
        {"version", kFormatVersion},
        {"spec",
         {{"N", spec.N},
          {"K", spec.K},
          {"M", spec.M},
          {"sigma_high", spec.sigma_high},
          {"sigma_low", spec.sigma_low},
          {"sigma_int", spec.sigma_int},
          {"seed", spec.seed}}},
        {"B_true", io::to_json(B)},
        {"probs", io::to_json(probs)},
    };
}

struct Evidence {
    double cbm = 0.0;
    double cbc = 0.0;
};

inline Evidence evidences(const PosteriorFile& post, const Dataset& train, int S, std::uint64_t seed,
                          int workers) {
    const PosteriorGaussian q = post.posterior();
    const GaussianPrior prior = post.prior();
    return {estimate_log_evidence(q, train, prior, post.link, Construction::CBM, S, seed, workers),
            estimate_log_evidence(q, train, prior, post.link, Construction::CBC, S, seed, workers)};
}

inline Dataset training_data(const PosteriorFile& post, const std::string& x_override,
                             const std::string& y_override) {
    const std::string xp = x_override.empty() ? post.train_x : x_override;
    const std::string yp = y_override.empty() ? post.train_y : y_override;
    Eigen::MatrixXd x = post.transform.apply(load_matrix(xp));
    if (x.cols() != post.M) throw ShapeMismatch("training covariates do not match the posterior dimension");
    return Dataset(std::move(x), load_labels(yp), post.K);
}

// Expands "--config FILE" (flat key=value) into ordinary arguments for the
// options it names. Arguments given on the command line win.
inline std::vector<std::string> expand_config(CLI::App& sub, std::vector<std::string> args) {
    std::string path;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw InvalidSpec("--config needs a file");
            path = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (path.empty()) return args;
    if (!fs::exists(path)) throw IoError("cannot read config file " + path);
    const std::vector<CLI::ConfigItem> items = CLI::ConfigINI().from_file(path);
    auto given = [&](const std::string& name) {
        const std::string flag = "--" + name;
        return std::any_of(rest.begin(), rest.end(), [&](const std::string& a) {
            return a == flag || a.rfind(flag + "=", 0) == 0;
        });
    };
    std::vector<std::string> injected;
    for (const auto& item : items) {
        if (item.name.empty() || item.name == "++" || item.name == "--") continue;
        const std::string name = item.fullname();
        CLI::Option* opt = sub.get_option_no_throw("--" + name);
        if (opt == nullptr || !opt->get_configurable()) {
            throw InvalidSpec("config file " + path + ": unknown key '" + name + "'");
        }
        if (given(name)) continue;
        std::vector<std::string> values = item.inputs;
        // A quoted list such as "[0,1]" arrives as one string.
        if (values.size() == 1 && values.front().size() >= 2 && values.front().front() == '[' &&
            values.front().back() == ']') {
            const std::string inner = values.front().substr(1, values.front().size() - 2);
            values.clear();
            std::stringstream ss(inner);
            std::string v;
            while (std::getline(ss, v, ',')) values.push_back(v);
        }
        values.erase(std::remove(values.begin(), values.end(), std::string()), values.end());
        if (values.empty() && opt->get_expected_min() > 0) continue;
        if (opt->get_expected_min() == 0) {
            injected.push_back("--" + name + "=" + (values.empty() ? "true" : values.front()));
        } else if (values.size() == 1) {
            injected.push_back("--" + name + "=" + values.front());
        } else {
            injected.push_back("--" + name);
            injected.insert(injected.end(), values.begin(), values.end());
        }
    }
    // Keep the subcommand name first.
    std::vector<std::string> out;
    out.push_back(rest.front());
    out.insert(out.end(), injected.begin(), injected.end());
    out.insert(out.end(), rest.begin() + 1, rest.end());
    return out;
}

}  // namespace detail

/// Settings shared by the subcommands; each field is a flag and a config key
/// of the same name.
struct RunConfig {
    // data
    std::string X, y, X_test, y_test, truth, predictions, posterior, events, user;
    std::string out, report, prior_cov, train_X, train_y;
    int K = 0;
    bool intercept = false;
    bool zscore = false;
    // model and inference
    std::string link = "probit";
    std::vector<double> prior_mean{0.0};
    double prior_var = 1.0;
    int max_iters = 100;
    double elbo_drop_tol = 0.1;
    double ridge = 0.0;
    bool no_elbo = false;
    int workers = 1;
    // prediction
    std::string target = "bma";
    std::string mode = "plugin";
    int samples = 100;
    int evidence_samples = 100;
    std::uint64_t seed = 0;
    double prior_pi_cbm = 0.5;
    // evaluation
    double floor = 0.0;
    // simulation
    SimSpec sim;
    double holdout = 0.0;
    // featurization
    int W = 10;
    double tau = 60.0;
    double train_fraction = 0.0;
    // bma-weights
    double log_ev_cbm = 0.0;
    double log_ev_cbc = 0.0;
};

class Program {
public:
    Program(std::ostream& out, std::ostream& err) : out_(out), err_(err) { build(); }

    int run(const std::vector<std::string>& args) {
        try {
            return dispatch(args);
        } catch (const CLI::CallForHelp&) {
            out_ << active_help();
            return kOk;
        } catch (const CLI::ParseError& e) {
            err_ << "error: " << e.what() << '\n';
            return kConfigError;
        } catch (const InvalidSpec& e) {
            err_ << "config error: " << e.what() << '\n';
            return kConfigError;
        } catch (const InvalidCovariance& e) {
            err_ << "config error: " << e.what() << '\n';
            return kConfigError;
        } catch (const NumericalFailure& e) {
            err_ << "numerical failure: " << e.what() << '\n';
            return kNumericalError;
        } catch (const IoError& e) {
            err_ << "io error: " << e.what() << '\n';
            return kIoError;
        } catch (const Error& e) {
            err_ << "data error: " << e.what() << '\n';
            return kDataError;
        } catch (const std::exception& e) {
            err_ << "error: " << e.what() << '\n';
            return kUnexpected;
        }
    }

private:
    std::ostream& out_;
    std::ostream& err_;
    CLI::App app_{"Categorical-from-binary regression with coordinate ascent variational inference",
                  "cbvi"};
    RunConfig cfg_;
    std::string save_config_;
    CLI::App* active_ = nullptr;
    CLI::Option* log_ev_cbm_opt_ = nullptr;
    CLI::Option* log_ev_cbc_opt_ = nullptr;

    std::string active_help() const { return (active_ ? active_ : &app_)->help(); }

    int dispatch(std::vector<std::string> args) {
        if (args.empty()) {
            out_ << app_.help();
            return kConfigError;
        }
        CLI::App* sub = app_.get_subcommand_no_throw(args.front());
        if (sub != nullptr) {
            active_ = sub;
            args = detail::expand_config(*sub, std::move(args));
        }
        std::reverse(args.begin(), args.end());
        app_.parse(args);
        if (!save_config_.empty()) {
            io::write_text_atomic(save_config_, active_->config_to_str(true, false));
        }
        const std::string name = active_ ? active_->get_name() : "";
        if (name == "simulate") return cmd_simulate();
        if (name == "fit") return cmd_fit();
        if (name == "predict") return cmd_predict();
        if (name == "evaluate") return cmd_evaluate();
        if (name == "featurize") return cmd_featurize();
        if (name == "bma-weights") return cmd_bma_weights();
        out_ << app_.help();
        return kConfigError;
    }

    static void add_common(CLI::App* sub, std::string& save_config) {
        sub->add_option("--config", "Read flat key=value settings from this file")->configurable(false);
        sub->add_option("--save-config", save_config, "Write the effective settings to this file")
            ->configurable(false);
    }

    void add_inference(CLI::App* sub) {
        sub->add_option("--link", cfg_.link, "probit or logit")->check(CLI::IsMember({"probit", "logit"}));
        sub->add_option("--prior_mean", cfg_.prior_mean, "Prior mean: one value or one per column");
        sub->add_option("--prior_var", cfg_.prior_var, "Prior variance (isotropic)");
        sub->add_option("--prior_cov", cfg_.prior_cov, "CSV with a full prior covariance");
        sub->add_option("--max_iters", cfg_.max_iters, "Maximum number of sweeps");
        sub->add_option("--elbo_drop_tol", cfg_.elbo_drop_tol, "Stop when the ELBO / (N K) gains less");
        sub->add_option("--ridge", cfg_.ridge, "Diagonal added after a failed factorization");
        sub->add_flag("--no_elbo", cfg_.no_elbo, "Skip ELBO evaluation and run max_iters sweeps");
        sub->add_flag("--intercept", cfg_.intercept, "Prepend a ones column");
        sub->add_flag("--zscore", cfg_.zscore, "Standardize covariates with training statistics");
        sub->add_option("--K", cfg_.K, "Number of categories (default: largest label)");
    }

    void build() {
        app_.require_subcommand(0, 1);
        app_.option_defaults()->always_capture_default();

        auto* sim = app_.add_subcommand("simulate", "Draw a synthetic softmax dataset");
        add_common(sim, save_config_);
        sim->add_option("--N", cfg_.sim.N, "Number of rows");
        sim->add_option("--K", cfg_.sim.K, "Number of categories");
        sim->add_option("--M", cfg_.sim.M, "Number of covariates (without intercept)");
        sim->add_option("--sigma_high", cfg_.sim.sigma_high, "Variance of a category's own covariates");
        sim->add_option("--sigma_low", cfg_.sim.sigma_low, "Variance of the other covariates");
        sim->add_option("--sigma_int", cfg_.sim.sigma_int, "Variance of the intercepts");
        sim->add_option("--seed", cfg_.sim.seed, "Random seed");
        sim->add_option("--holdout", cfg_.holdout, "Also write a random train/test split with this test fraction");
        sim->add_option("--out", cfg_.out, "Output directory")->required();

        auto* fit = app_.add_subcommand("fit", "Fit a CB model by coordinate ascent VI");
        add_common(fit, save_config_);
        fit->add_option("--X", cfg_.X, "Training covariates (CSV)")->required();
        fit->add_option("--y", cfg_.y, "Training labels, 1..K")->required();
        fit->add_option("--out", cfg_.out, "Posterior file (JSON)")->required();
        fit->add_option("--report", cfg_.report, "Fit report with timings (JSON)");
        fit->add_option("--workers", cfg_.workers, "Worker threads")->check(CLI::PositiveNumber);
        add_inference(fit);

        auto* pred = app_.add_subcommand("predict", "Posterior predictive category probabilities");
        add_common(pred, save_config_);
        pred->add_option("--posterior", cfg_.posterior, "Posterior file from fit")->required();
        pred->add_option("--X", cfg_.X, "Covariates to predict (CSV)")->required();
        pred->add_option("--out", cfg_.out, "Predictions (CSV)")->required();
        pred->add_option("--target", cfg_.target, "cbm, cbc or bma")->check(CLI::IsMember({"cbm", "cbc", "bma"}));
        pred->add_option("--mode", cfg_.mode, "plugin or mc")->check(CLI::IsMember({"plugin", "mc"}));
        pred->add_option("--samples", cfg_.samples, "Posterior draws for mc mode");
        pred->add_option("--evidence_samples", cfg_.evidence_samples, "Posterior draws per evidence estimate");
        pred->add_option("--seed", cfg_.seed, "Random seed");
        pred->add_option("--prior_pi_cbm", cfg_.prior_pi_cbm, "Prior probability of the CBM construction");
        pred->add_option("--train_X", cfg_.train_X, "Override the training covariates recorded in the posterior");
        pred->add_option("--train_y", cfg_.train_y, "Override the training labels recorded in the posterior");
        pred->add_option("--workers", cfg_.workers, "Worker threads")->check(CLI::PositiveNumber);

        auto* eval = app_.add_subcommand("evaluate", "Score predictions against held-out labels");
        add_common(eval, save_config_);
        eval->add_option("--predictions", cfg_.predictions, "Predictions CSV from predict")->required();
        eval->add_option("--y", cfg_.y, "Held-out labels")->required();
        eval->add_option("--truth", cfg_.truth, "Truth file with true category probabilities");
        eval->add_option("--floor", cfg_.floor, "Floor predicted probabilities at this value (0: off)");
        eval->add_option("--out", cfg_.out, "Metrics (JSON)")->required();

        auto* feat = app_.add_subcommand("featurize", "Turn an event log into a sequence dataset");
        add_common(feat, save_config_);
        feat->add_option("--events", cfg_.events, "CSV of timestamp,user,process")->required();
        feat->add_option("--user", cfg_.user, "Keep only this user's events");
        feat->add_option("--W", cfg_.W, "Number of preceding events per row");
        feat->add_option("--tau", cfg_.tau, "Decay time scale in seconds");
        feat->add_option("--train_fraction", cfg_.train_fraction,
                         "Also write a chronological split with this training fraction");
        feat->add_option("--out", cfg_.out, "Output directory")->required();

        auto* bw = app_.add_subcommand("bma-weights", "Posterior probabilities of CBM and CBC");
        add_common(bw, save_config_);
        log_ev_cbm_opt_ = bw->add_option("--log_ev_cbm", cfg_.log_ev_cbm, "Log evidence of CBM");
        log_ev_cbc_opt_ = bw->add_option("--log_ev_cbc", cfg_.log_ev_cbc, "Log evidence of CBC");
        bw->add_option("--posterior", cfg_.posterior, "Estimate the evidences from this posterior instead");
        bw->add_option("--train_X", cfg_.train_X, "Override the training covariates recorded in the posterior");
        bw->add_option("--train_y", cfg_.train_y, "Override the training labels recorded in the posterior");
        bw->add_option("--evidence_samples", cfg_.evidence_samples, "Posterior draws per evidence estimate");
        bw->add_option("--seed", cfg_.seed, "Random seed");
        bw->add_option("--prior_pi_cbm", cfg_.prior_pi_cbm, "Prior probability of the CBM construction");
        bw->add_option("--workers", cfg_.workers, "Worker threads")->check(CLI::PositiveNumber);
        bw->add_option("--out", cfg_.out, "Weights (JSON); printed when omitted");
    }

    int cmd_simulate() {
        const SimOutput sim = simulate(cfg_.sim);
        const fs::path dir(cfg_.out);
        fs::create_directories(dir);
        io::write_matrix_csv(dir / "X.csv", sim.data.X);
        io::write_labels_csv(dir / "y.csv", sim.data.y);
        io::write_json(dir / "truth.json", detail::truth_json(cfg_.sim, sim.B_true, sim.probs));
        if (cfg_.holdout > 0.0) {
            const Split s = random_split(sim.data.size(), 1.0 - cfg_.holdout, cfg_.sim.seed);
            const Dataset train = take_rows(sim.data, s.train);
            const Dataset test = take_rows(sim.data, s.test);
            io::write_matrix_csv(dir / "X_train.csv", train.X);
            io::write_labels_csv(dir / "y_train.csv", train.y);
            io::write_matrix_csv(dir / "X_test.csv", test.X);
            io::write_labels_csv(dir / "y_test.csv", test.y);
            io::write_json(dir / "truth_test.json",
                           detail::truth_json(cfg_.sim, sim.B_true, take_rows(sim.probs, s.test)));
        }
        out_ << "wrote " << sim.data.size() << " rows x " << sim.data.covariates() << " columns to "
             << dir.string() << '\n';
        return kOk;
    }

    json config_echo() const {
        return json{
            {"link", cfg_.link},
            {"prior_mean", cfg_.prior_mean},
            {"prior_var", cfg_.prior_var},
            {"prior_cov", detail::absolute_string(cfg_.prior_cov)},
            {"max_iters", cfg_.max_iters},
            {"elbo_drop_tol", cfg_.elbo_drop_tol},
            {"ridge", cfg_.ridge},
            {"no_elbo", cfg_.no_elbo},
            {"intercept", cfg_.intercept},
            {"zscore", cfg_.zscore},
            {"K", cfg_.K},
        };
    }

    int cmd_fit() {
        const Eigen::MatrixXd raw = detail::load_matrix(cfg_.X);
        std::vector<int> y = detail::load_labels(cfg_.y);
        const int K = detail::infer_categories(y, cfg_.K);
        const Transform transform = Transform::fit(raw, cfg_.intercept, cfg_.zscore);
        const Dataset data(transform.apply(raw), std::move(y), K);
        const GaussianPrior prior =
            detail::build_prior(data.covariates(), cfg_.prior_mean, cfg_.prior_var, cfg_.prior_cov);

        FitOptions opts;
        opts.max_iters = cfg_.max_iters;
        opts.elbo_drop_tol = cfg_.elbo_drop_tol;
        opts.workers = cfg_.workers;
        opts.ridge = cfg_.ridge;
        opts.compute_elbo = !cfg_.no_elbo;
        opts.validate();

        PosteriorFile post;
        post.link = parse_link(cfg_.link);
        post.N = data.size();
        post.M = data.covariates();
        post.K = K;
        post.prior_mean = prior.mean();
        post.prior_cov = prior.cov();
        post.transform = transform;
        post.train_x = detail::absolute_string(cfg_.X);
        post.train_y = detail::absolute_string(cfg_.y);
        post.config = config_echo();

        const auto start = std::chrono::steady_clock::now();
        FitReport report;
        if (post.link == Link::Probit) {
            auto [state, rep] = probit_fit(data, prior, opts);
            post.mean = state.mu_tilde;
            post.cov = {state.Sigma_tilde};
            report = std::move(rep);
        } else {
            auto [state, rep] = logit_fit(data, prior, opts);
            post.mean = state.mu_tilde;
            post.cov = state.Sigma_tilde;
            report = std::move(rep);
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        post.elbo_trace = report.elbo_trace;
        post.iterations = report.iterations;
        post.converged = report.converged;
        io::write_json(cfg_.out, post.to_json());

        const double scale = static_cast<double>(post.N) * static_cast<double>(K);
        const std::optional<double> final_elbo =
            report.elbo_trace.empty() ? std::nullopt : std::optional(report.elbo_trace.back() / scale);
        if (!cfg_.report.empty()) {
            io::write_json(cfg_.report, json{{"iterations", report.iterations},
                                             {"converged", report.converged},
                                             {"final_normalized_elbo", final_elbo ? json(*final_elbo) : json()},
                                             {"elbo_trace", report.elbo_trace},
                                             {"seconds_per_iteration", report.seconds_per_iteration},
                                             {"seconds_total", seconds},
                                             {"workers", cfg_.workers}});
        }
        out_ << "link " << cfg_.link << ", N " << post.N << ", M " << post.M << ", K " << K << '\n'
             << "iterations " << report.iterations << (report.converged ? " (converged)" : " (not converged)")
             << '\n';
        if (final_elbo) out_ << "final ELBO / (N K) " << *final_elbo << '\n';
        out_ << "wall time " << seconds << " s\n";
        return kOk;
    }

    int cmd_predict() {
        const PosteriorFile post = load_posterior(cfg_.posterior);
        const Eigen::MatrixXd x = post.transform.apply(detail::load_matrix(cfg_.X));
        if (x.cols() != post.M) {
            throw ShapeMismatch("covariates have " + std::to_string(x.cols()) +
                                " columns after the stored transform but the posterior expects " +
                                std::to_string(post.M));
        }
        PredictTarget target = PredictTarget::cbm();
        std::string header = "target=" + cfg_.target + " mode=" + cfg_.mode;
        if (cfg_.target == "cbc") target = PredictTarget::cbc();
        if (cfg_.target == "bma") {
            const Dataset train = detail::training_data(post, cfg_.train_X, cfg_.train_y);
            const auto ev = detail::evidences(post, train, cfg_.evidence_samples, cfg_.seed, cfg_.workers);
            target = PredictTarget::bma(bma_weights(ev.cbm, ev.cbc, cfg_.prior_pi_cbm));
            header += " log_ev_cbm=" + io::format_double(ev.cbm) + " log_ev_cbc=" + io::format_double(ev.cbc);
        }
        header += " w_cbm=" + io::format_double(target.weights.w_cbm) +
                  " w_cbc=" + io::format_double(target.weights.w_cbc);
        PredictiveOptions opts;
        opts.mode = cfg_.mode == "mc" ? PredictiveMode::MonteCarlo : PredictiveMode::PlugInMean;
        opts.samples = cfg_.samples;
        opts.seed = cfg_.seed;
        opts.workers = cfg_.workers;
        const PredictiveDistribution pred = posterior_predictive(post.posterior(), x, post.link, target, opts);
        io::write_text_atomic(cfg_.out, detail::write_predictions_csv(pred.probs, header));
        out_ << header << '\n' << "wrote " << pred.probs.rows() << " predictions to " << cfg_.out << '\n';
        return kOk;
    }

    int cmd_evaluate() {
        const Eigen::MatrixXd probs = detail::read_prediction_probs(cfg_.predictions);
        const std::vector<int> y = detail::load_labels(cfg_.y);
        if (static_cast<std::size_t>(probs.rows()) != y.size()) {
            throw ShapeMismatch(std::to_string(probs.rows()) + " predictions but " + std::to_string(y.size()) +
                                " labels");
        }
        const double floor = cfg_.floor;
        json metrics{{"n", probs.rows()},
                     {"K", probs.cols()},
                     {"mean_holdout_log_likelihood", holdout_log_likelihood(probs, y, floor)},
                     {"accuracy", accuracy(probs, y)}};
        if (!cfg_.truth.empty()) {
            const Eigen::MatrixXd truth = detail::read_truth_probs(cfg_.truth);
            if (truth.rows() != probs.rows() || truth.cols() != probs.cols()) {
                throw ShapeMismatch("truth probabilities do not align with the predictions");
            }
            metrics["mean_kl_to_truth"] = mean_kl(truth, probs);
        }
        io::write_json(cfg_.out, metrics);
        out_ << metrics.dump(2) << '\n';
        return kOk;
    }

    int cmd_featurize() {
        std::ifstream in(cfg_.events);
        if (!in) throw IoError("cannot read " + cfg_.events);
        const EventLog log = parse_event_log(in);
        const std::vector<Event> events = cfg_.user.empty() ? log.events : events_for_user(log, cfg_.user);
        const int K = static_cast<int>(log.vocabulary.size());
        const SparseDataset data = featurize_sequence(events, K, cfg_.W, cfg_.tau);
        const fs::path dir(cfg_.out);
        fs::create_directories(dir);
        const Eigen::MatrixXd dense(data.X);
        io::write_matrix_csv(dir / "X.csv", dense);
        io::write_labels_csv(dir / "y.csv", data.y);
        std::string vocab;
        for (const auto& v : log.vocabulary) vocab += v + '\n';
        io::write_text_atomic(dir / "vocabulary.txt", vocab);
        if (cfg_.train_fraction > 0.0) {
            const Split s = chronological_split(data.size(), cfg_.train_fraction);
            const SparseDataset train = take_rows(data, s.train);
            const SparseDataset test = take_rows(data, s.test);
            io::write_matrix_csv(dir / "X_train.csv", Eigen::MatrixXd(train.X));
            io::write_labels_csv(dir / "y_train.csv", train.y);
            io::write_matrix_csv(dir / "X_test.csv", Eigen::MatrixXd(test.X));
            io::write_labels_csv(dir / "y_test.csv", test.y);
        }
        out_ << "wrote " << data.size() << " rows over " << K << " processes to " << dir.string() << '\n';
        return kOk;
    }

    int cmd_bma_weights() {
        double cbm = 0.0;
        double cbc = 0.0;
        if (!cfg_.posterior.empty()) {
            const PosteriorFile post = load_posterior(cfg_.posterior);
            const Dataset train = detail::training_data(post, cfg_.train_X, cfg_.train_y);
            const auto ev = detail::evidences(post, train, cfg_.evidence_samples, cfg_.seed, cfg_.workers);
            cbm = ev.cbm;
            cbc = ev.cbc;
        } else if (log_ev_cbm_opt_->count() > 0 && log_ev_cbc_opt_->count() > 0) {
            cbm = cfg_.log_ev_cbm;
            cbc = cfg_.log_ev_cbc;
        } else {
            throw InvalidSpec("bma-weights needs --posterior or both --log_ev_cbm and --log_ev_cbc");
        }
        const BmaWeights w = bma_weights(cbm, cbc, cfg_.prior_pi_cbm);
        const json j{{"log_ev_cbm", cbm},       {"log_ev_cbc", cbc},       {"w_cbm", w.w_cbm},
                     {"w_cbc", w.w_cbc},        {"prior_pi_cbm", w.prior_pi_cbm}, {"prior_pi_cbc", w.prior_pi_cbc}};
        if (!cfg_.out.empty()) io::write_json(cfg_.out, j);
        out_ << j.dump(2) << '\n';
        return kOk;
    }
};

/// Runs one command line (without the program name) and returns the exit code.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
    Program program(out, err);
    return program.run(args);
}

}  // namespace cbvi::cli
