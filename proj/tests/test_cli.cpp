#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "cbvi/cli.hpp"

namespace fs = std::filesystem;
using namespace cbvi;
using cbvi::cli::json;

namespace {

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / "cbvi_cli_tests" / info->name();
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    int run(std::vector<std::string> args) {
        out_.str("");
        err_.str("");
        return cli::run(args, out_, err_);
    }

    static std::string slurp(const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    static void spit(const std::string& p, const std::string& text) {
        std::ofstream out(p, std::ios::binary);
        out << text;
    }

    void simulate(const std::string& sub, int N = 200, std::uint64_t seed = 3) {
        ASSERT_EQ(run({"simulate", "--N", std::to_string(N), "--K", "3", "--M", "6", "--seed",
                       std::to_string(seed), "--holdout", "0.2", "--out", path(sub)}),
                  0)
            << err_.str();
    }

    fs::path dir_;
    std::ostringstream out_, err_;
};

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) out.push_back(line);
    return out;
}

// Label column (second to last field) of every data row of a predictions file.
std::vector<std::string> label_column(const std::string& text) {
    std::vector<std::string> labels;
    for (const auto& line : lines_of(text)) {
        if (line.empty() || line[0] == '#') continue;
        const auto last = line.rfind(',');
        const auto prev = line.rfind(',', last - 1);
        labels.push_back(line.substr(prev + 1, last - prev - 1));
    }
    return labels;
}

double header_value(const std::string& text, const std::string& key) {
    const auto pos = text.find(key + "=");
    if (pos == std::string::npos) return std::nan("");
    return std::stod(text.substr(pos + key.size() + 1));
}

int tool_exit_code(const std::string& args) {
    const std::string cmd = std::string(CBVI_TOOL_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_F(CliTest, SimulateShapeContract) {
    ASSERT_EQ(run({"simulate", "--N", "100", "--K", "3", "--M", "6", "--seed", "1", "--out", path("sim")}), 0);
    const Eigen::MatrixXd X = io::read_matrix_csv(path("sim/X.csv"));
    EXPECT_EQ(X.rows(), 100);
    EXPECT_EQ(X.cols(), 7);
    EXPECT_TRUE((X.col(0).array() == 1.0).all());
    EXPECT_EQ(io::read_labels_csv(path("sim/y.csv")).size(), 100u);
    const Eigen::MatrixXd truth = cli::detail::read_truth_probs(path("sim/truth.json"));
    EXPECT_EQ(truth.rows(), 100);
    EXPECT_EQ(truth.cols(), 3);
}

TEST_F(CliTest, SimulateIsByteIdenticalForSeed) {
    simulate("a", 150, 9);
    simulate("b", 150, 9);
    simulate("c", 150, 10);
    for (const char* f : {"X.csv", "y.csv", "truth.json", "X_train.csv", "y_test.csv", "truth_test.json"}) {
        EXPECT_EQ(slurp(path(std::string("a/") + f)), slurp(path(std::string("b/") + f))) << f;
    }
    EXPECT_NE(slurp(path("a/X.csv")), slurp(path("c/X.csv")));
}

TEST_F(CliTest, SimulateRejectsBadSpec) {
    EXPECT_EQ(run({"simulate", "--K", "4", "--M", "2", "--out", path("bad")}), cli::kConfigError);
}

TEST_F(CliTest, PipelineDeterministicAcrossWorkers) {
    simulate("sim");
    std::vector<std::string> metrics, posteriors, predictions;
    for (const char* workers : {"1", "2", "8"}) {
        const std::string w(workers);
        ASSERT_EQ(run({"fit", "--X", path("sim/X_train.csv"), "--y", path("sim/y_train.csv"), "--out",
                       path("post" + w + ".json"), "--report", path("report" + w + ".json"), "--workers", w}),
                  0)
            << err_.str();
        ASSERT_EQ(run({"predict", "--posterior", path("post" + w + ".json"), "--X", path("sim/X_test.csv"), "--out",
                       path("pred" + w + ".csv"), "--target", "bma", "--mode", "mc", "--samples", "40",
                       "--seed", "5", "--workers", w}),
                  0)
            << err_.str();
        ASSERT_EQ(run({"evaluate", "--predictions", path("pred" + w + ".csv"), "--y", path("sim/y_test.csv"),
                       "--truth", path("sim/truth_test.json"), "--out", path("metrics" + w + ".json")}),
                  0)
            << err_.str();
        posteriors.push_back(slurp(path("post" + w + ".json")));
        predictions.push_back(slurp(path("pred" + w + ".csv")));
        metrics.push_back(slurp(path("metrics" + w + ".json")));
    }
    for (std::size_t i = 1; i < 3; ++i) {
        EXPECT_EQ(posteriors[i], posteriors[0]);
        EXPECT_EQ(predictions[i], predictions[0]);
        EXPECT_EQ(metrics[i], metrics[0]);
    }
    const json m = json::parse(metrics[0]);
    EXPECT_EQ(m.at("n").get<int>(), 40);
    EXPECT_LT(m.at("mean_holdout_log_likelihood").get<double>(), 0.0);
    EXPECT_GE(m.at("mean_kl_to_truth").get<double>(), 0.0);

    const json report = io::read_json(path("report1.json"));
    const auto trace = report.at("elbo_trace").get<std::vector<double>>();
    ASSERT_GE(trace.size(), 2u);
    for (std::size_t t = 1; t < trace.size(); ++t) EXPECT_GE(trace[t], trace[t - 1] - 1e-8 * std::abs(trace[t - 1]));
    EXPECT_EQ(report.at("seconds_per_iteration").size(), trace.size() - 1);
}

TEST_F(CliTest, LogitPipelineRuns) {
    simulate("sim");
    ASSERT_EQ(run({"fit", "--X", path("sim/X_train.csv"), "--y", path("sim/y_train.csv"), "--out", path("post.json"),
                   "--link", "logit", "--prior_var", "2"}),
              0)
        << err_.str();
    const cli::PosteriorFile post = cli::load_posterior(path("post.json"));
    EXPECT_EQ(post.link, Link::Logit);
    EXPECT_EQ(post.cov.size(), 3u);
    EXPECT_DOUBLE_EQ(post.prior_cov(0, 0), 2.0);
    ASSERT_EQ(run({"predict", "--posterior", path("post.json"), "--X", path("sim/X_test.csv"), "--out",
                   path("pred.csv"), "--target", "cbc"}),
              0)
        << err_.str();
}

TEST_F(CliTest, RefitFromSavedConfigIsByteIdentical) {
    simulate("sim");
    ASSERT_EQ(run({"fit", "--X", path("sim/X_train.csv"), "--y", path("sim/y_train.csv"), "--out",
                   path("first.json"), "--link", "logit", "--max_iters", "7", "--elbo_drop_tol", "0.001",
                   "--prior_var", "3", "--save-config", path("fit.ini")}),
              0)
        << err_.str();
    ASSERT_EQ(run({"fit", "--config", path("fit.ini"), "--out", path("second.json"), "--workers", "4"}), 0)
        << err_.str();
    EXPECT_EQ(slurp(path("first.json")), slurp(path("second.json")));
    const cli::PosteriorFile post = cli::load_posterior(path("second.json"));
    EXPECT_EQ(post.link, Link::Logit);
    EXPECT_LE(post.iterations, 7);
}

TEST_F(CliTest, ConfigFileRejectsUnknownKeys) {
    spit(path("bad.ini"), "not_a_key=3\n");
    EXPECT_EQ(run({"fit", "--config", path("bad.ini"), "--X", "a", "--y", "b", "--out", "c"}), cli::kConfigError);
}

TEST_F(CliTest, ZScoreAndInterceptTravelWithPosterior) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(5.0, 3.0);
    Eigen::MatrixXd X(60, 2);
    std::vector<int> y(60);
    for (int i = 0; i < 60; ++i) {
        X(i, 0) = n(rng);
        X(i, 1) = n(rng);
        y[static_cast<std::size_t>(i)] = 1 + i % 3;
    }
    io::write_matrix_csv(path("X.csv"), X);
    io::write_labels_csv(path("y.csv"), y);
    ASSERT_EQ(run({"fit", "--X", path("X.csv"), "--y", path("y.csv"), "--out", path("post.json"), "--intercept",
                   "--zscore"}),
              0)
        << err_.str();
    const cli::PosteriorFile post = cli::load_posterior(path("post.json"));
    EXPECT_EQ(post.M, 3);
    const Eigen::MatrixXd t = post.transform.apply(X);
    EXPECT_TRUE((t.col(0).array() == 1.0).all());
    EXPECT_NEAR(t.col(1).mean(), 0.0, 1e-12);
    EXPECT_NEAR(t.col(2).squaredNorm() / 59.0, 1.0, 0.05);
    // Raw two-column inputs are accepted by predict because the transform is reapplied.
    EXPECT_EQ(run({"predict", "--posterior", path("post.json"), "--X", path("X.csv"), "--out", path("p.csv"),
                   "--target", "cbm"}),
              0)
        << err_.str();
}

TEST_F(CliTest, ZeroPosteriorGivesUniformRows) {
    cli::PosteriorFile post;
    post.N = 10;
    post.M = 2;
    post.K = 4;
    post.mean = Eigen::MatrixXd::Zero(2, 4);
    post.cov = {Eigen::MatrixXd::Identity(2, 2)};
    post.prior_mean = Eigen::VectorXd::Zero(2);
    post.prior_cov = Eigen::MatrixXd::Identity(2, 2);
    io::write_json(path("zero.json"), post.to_json());
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    Eigen::MatrixXd X(5, 2);
    for (Eigen::Index i = 0; i < 5; ++i) X.row(i) << n(rng), n(rng);
    io::write_matrix_csv(path("X.csv"), X);
    for (const char* target : {"cbm", "cbc"}) {
        ASSERT_EQ(run({"predict", "--posterior", path("zero.json"), "--X", path("X.csv"), "--out", path("p.csv"),
                       "--target", target}),
                  0)
            << err_.str();
        const Eigen::MatrixXd p = cli::detail::read_prediction_probs(path("p.csv"));
        EXPECT_TRUE(p.isApprox(Eigen::MatrixXd::Constant(5, 4, 0.25), 1e-15));
        const Eigen::MatrixXd all = io::read_matrix_csv(path("p.csv"));
        EXPECT_TRUE((all.col(5).array() == 0.25).all());
    }
}

TEST_F(CliTest, ConstructionsShareLabelsAndWeightsSumToOne) {
    simulate("sim");
    ASSERT_EQ(run({"fit", "--X", path("sim/X_train.csv"), "--y", path("sim/y_train.csv"), "--out", path("post.json")}),
              0);
    for (const char* target : {"cbm", "cbc", "bma"}) {
        ASSERT_EQ(run({"predict", "--posterior", path("post.json"), "--X", path("sim/X_test.csv"), "--out",
                       path(std::string(target) + ".csv"), "--target", target}),
                  0)
            << err_.str();
    }
    EXPECT_EQ(label_column(slurp(path("cbm.csv"))), label_column(slurp(path("cbc.csv"))));
    const std::string bma = slurp(path("bma.csv"));
    const double w_cbm = header_value(bma, "w_cbm");
    const double w_cbc = header_value(bma, "w_cbc");
    EXPECT_NEAR(w_cbm + w_cbc, 1.0, 1e-15);
    EXPECT_TRUE(std::isfinite(header_value(bma, "log_ev_cbm")));
}

TEST_F(CliTest, EvaluateHandCases) {
    Eigen::MatrixXd p(2, 3);
    p << 0.5, 0.25, 0.25, 0.1, 0.1, 0.8;
    spit(path("pred.csv"), cli::detail::write_predictions_csv(p, "hand"));
    io::write_labels_csv(path("y.csv"), {1, 2});
    Eigen::MatrixXd truth(2, 3);
    truth << 1.0, 0.0, 0.0, 0.2, 0.4, 0.4;
    io::write_json(path("truth.json"), cli::detail::truth_json(SimSpec{}, Eigen::MatrixXd::Zero(1, 3), truth));
    ASSERT_EQ(run({"evaluate", "--predictions", path("pred.csv"), "--y", path("y.csv"), "--truth", path("truth.json"),
                   "--out", path("m.json")}),
              0)
        << err_.str();
    const json m = io::read_json(path("m.json"));
    EXPECT_NEAR(m.at("mean_holdout_log_likelihood").get<double>(), 0.5 * (std::log(0.5) + std::log(0.1)), 1e-15);
    EXPECT_DOUBLE_EQ(m.at("accuracy").get<double>(), 0.5);
    const double kl0 = std::log(1.0 / 0.5);
    const double kl1 = 0.2 * std::log(0.2 / 0.1) + 0.4 * std::log(0.4 / 0.1) + 0.4 * std::log(0.4 / 0.8);
    EXPECT_NEAR(m.at("mean_kl_to_truth").get<double>(), 0.5 * (kl0 + kl1), 1e-15);
}

TEST_F(CliTest, EvaluateTruthAndUniform) {
    simulate("sim");
    const Eigen::MatrixXd truth = cli::detail::read_truth_probs(path("sim/truth_test.json"));
    spit(path("exact.csv"), cli::detail::write_predictions_csv(truth, "truth"));
    ASSERT_EQ(run({"evaluate", "--predictions", path("exact.csv"), "--y", path("sim/y_test.csv"), "--truth",
                   path("sim/truth_test.json"), "--out", path("m.json")}),
              0);
    EXPECT_EQ(io::read_json(path("m.json")).at("mean_kl_to_truth").get<double>(), 0.0);

    spit(path("uniform.csv"),
         cli::detail::write_predictions_csv(Eigen::MatrixXd::Constant(truth.rows(), 3, 1.0 / 3.0), "uniform"));
    ASSERT_EQ(run({"evaluate", "--predictions", path("uniform.csv"), "--y", path("sim/y_test.csv"), "--out",
                   path("u.json")}),
              0);
    EXPECT_NEAR(io::read_json(path("u.json")).at("mean_holdout_log_likelihood").get<double>(), std::log(1.0 / 3.0),
                1e-15);
}

TEST_F(CliTest, EvaluateRejectsMisalignedLabels) {
    spit(path("pred.csv"), cli::detail::write_predictions_csv(Eigen::MatrixXd::Constant(3, 2, 0.5), "x"));
    io::write_labels_csv(path("y.csv"), {1, 2});
    EXPECT_EQ(run({"evaluate", "--predictions", path("pred.csv"), "--y", path("y.csv"), "--out", path("m.json")}),
              cli::kDataError);
}

TEST_F(CliTest, PosteriorRoundTripsByteForByte) {
    simulate("sim");
    ASSERT_EQ(run({"fit", "--X", path("sim/X_train.csv"), "--y", path("sim/y_train.csv"), "--out", path("post.json"),
                   "--link", "logit"}),
              0);
    const cli::PosteriorFile post = cli::load_posterior(path("post.json"));
    io::write_json(path("again.json"), post.to_json());
    EXPECT_EQ(slurp(path("post.json")), slurp(path("again.json")));
}

TEST_F(CliTest, PosteriorDimensionsCheckedOnLoad) {
    simulate("sim");
    ASSERT_EQ(run({"fit", "--X", path("sim/X_train.csv"), "--y", path("sim/y_train.csv"), "--out", path("post.json")}),
              0);
    json j = io::read_json(path("post.json"));
    j["M"] = 9;
    io::write_json(path("broken.json"), j);
    EXPECT_THROW(cli::load_posterior(path("broken.json")), ShapeMismatch);
    EXPECT_EQ(run({"predict", "--posterior", path("broken.json"), "--X", path("sim/X_test.csv"), "--out",
                   path("p.csv")}),
              cli::kDataError);
    EXPECT_NE(err_.str().find("posterior file"), std::string::npos);

    // Covariates with the wrong width are rejected as well.
    io::write_matrix_csv(path("narrow.csv"), Eigen::MatrixXd::Ones(3, 4));
    EXPECT_EQ(run({"predict", "--posterior", path("post.json"), "--X", path("narrow.csv"), "--out", path("p.csv")}),
              cli::kDataError);
}

TEST_F(CliTest, BmaWeightsCommand) {
    ASSERT_EQ(run({"bma-weights", "--log_ev_cbm", "-20", "--log_ev_cbc", std::to_string(-20.0 + std::log(9.0)), "--out",
                   path("w.json")}),
              0);
    const json w = io::read_json(path("w.json"));
    EXPECT_NEAR(w.at("w_cbc").get<double>(), 0.9, 1e-6);
    EXPECT_EQ(run({"bma-weights", "--log_ev_cbm", "-20"}), cli::kConfigError);
    EXPECT_EQ(run({"bma-weights", "--log_ev_cbm", "0", "--log_ev_cbc", "5", "--prior_pi_cbm", "1", "--out",
                   path("w1.json")}),
              0);
    EXPECT_EQ(io::read_json(path("w1.json")).at("w_cbm").get<double>(), 1.0);
}

TEST_F(CliTest, FeaturizeCommand) {
    spit(path("events.csv"), "timestamp,user,process\n"
                             "0,u1,a\n"
                             "60,u1,b\n"
                             "60,u2,c\n"
                             "120,u1,a\n"
                             "180,u1,a\n");
    ASSERT_EQ(run({"featurize", "--events", path("events.csv"), "--user", "u1", "--W", "2", "--tau", "60",
                   "--train_fraction", "0.5", "--out", path("feat")}),
              0)
        << err_.str();
    const Eigen::MatrixXd X = io::read_matrix_csv(path("feat/X.csv"));
    EXPECT_EQ(X.rows(), 4);
    EXPECT_EQ(X.cols(), 3);
    EXPECT_NEAR(X(3, 0), std::exp(-1.0), 1e-15);
    EXPECT_NEAR(X(3, 1), std::exp(-2.0), 1e-15);
    EXPECT_EQ(io::read_labels_csv(path("feat/y.csv")), (std::vector<int>{1, 2, 1, 1}));
    EXPECT_EQ(slurp(path("feat/vocabulary.txt")), "a\nb\nc\n");
    EXPECT_EQ(io::read_labels_csv(path("feat/y_test.csv")).size(), 2u);
}

TEST_F(CliTest, ToolExitCodes) {
    simulate("sim");
    const std::string X = path("sim/X_train.csv");
    const std::string y = path("sim/y_train.csv");
    EXPECT_EQ(tool_exit_code("fit --X " + X + " --y " + y + " --out " + path("ok.json")), 0);
    EXPECT_EQ(tool_exit_code("fit --X " + X + " --y " + y + " --out " + path("p.json") + " --bogus"), 2);
    EXPECT_EQ(tool_exit_code("fit --X " + X + " --y " + y + " --out " + path("p.json") + " --link cauchit"), 2);
    EXPECT_EQ(tool_exit_code("fit --X " + path("missing.csv") + " --y " + y + " --out " + path("p.json")), 5);
    EXPECT_EQ(tool_exit_code("fit --X " + X + " --y " + path("sim/y_test.csv") + " --out " + path("p.json")), 3);

    spit(path("labels_bad.csv"), "1\nx\n");
    io::write_matrix_csv(path("two.csv"), Eigen::MatrixXd::Ones(2, 1));
    EXPECT_EQ(tool_exit_code("fit --X " + path("two.csv") + " --y " + path("labels_bad.csv") + " --out " + path("p.json")), 3);

    Eigen::MatrixXd dup(3, 2);
    dup << 1, 1, 2, 2, 3, 3;
    io::write_matrix_csv(path("dup.csv"), dup);
    io::write_labels_csv(path("dup_y.csv"), {1, 2, 1});
    EXPECT_EQ(tool_exit_code("fit --X " + path("dup.csv") + " --y " + path("dup_y.csv") + " --out " + path("p.json") +
                             " --prior_var 1e300"),
              4);
    EXPECT_EQ(tool_exit_code("predict --posterior " + path("missing.json") + " --X " + X + " --out " + path("q.csv")), 5);
    EXPECT_EQ(tool_exit_code(""), 2);
}
