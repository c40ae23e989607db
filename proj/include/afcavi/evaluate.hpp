#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "afcavi/engine.hpp"

// Scoring: confusion metrics, ROC/PR curves, relative-change reporting, the
// exact enumeration oracle for small instances, and the scheme benchmark
// harness.

namespace afcavi {

// Ratios with empty denominators stay unset rather than defaulting to 0.
struct ScorePanel {
    std::optional<double> fpr;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> auroc;
    std::optional<double> auprc;
    double threshold = 0.5;
};

ScorePanel confusion_metrics(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& truth,
                             double threshold = 0.5);

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
    double precision = 0.0;
};

struct RocPr {
    double auroc = 0.0;
    double auprc = 0.0;
    std::vector<RocPoint> points;
};

// Threshold sweep over distinct scores; AUROC by trapezoid, AUPRC by
// step-interpolated precision. Requires both classes present.
RocPr roc_pr_curves(const Eigen::VectorXd& scores, const std::vector<bool>& truth);

// (method - vanilla) / vanilla * 100.
double relative_change(double metric_method, double metric_vanilla);

struct OracleResult {
    Eigen::VectorXd ppi;
    Eigen::VectorXd slab_mean; // E[beta_s | gamma_s = 1, y]
    Eigen::VectorXd slab_var;
    double log_evidence = 0.0;
};

// Exhaustive 2^p enumeration of inclusion configurations under frozen
// globals; exact marginal likelihoods via the matrix determinant lemma.
OracleResult exact_posterior_oracle(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                    const FrozenGlobals& fixed);

struct BenchmarkRow {
    std::string scheme;
    int replicates = 0;
    double fpr_mean = 0.0, fpr_se = 0.0;
    double precision_mean = 0.0, precision_se = 0.0;
    double recall_mean = 0.0, recall_se = 0.0;
    double iterations_mean = 0.0;
    double runtime_total_mean = 0.0;
    double runtime_local_mean = 0.0;
    double local_updates_mean = 0.0;
    // Percent changes of the means against the vanilla baseline.
    double d_iterations_pct = 0.0;
    double d_runtime_total_pct = 0.0;
    double d_runtime_local_pct = 0.0;
    double d_local_updates_pct = 0.0;
};

struct Replicate {
    Dataset dataset;
    Eigen::MatrixXd gamma_true;
};

using ReplicateGen = std::function<Replicate(int)>;

// Fits every config on every replicate; means +- standard errors (n-1
// sample variance) and relative changes with vanilla as baseline.
std::vector<BenchmarkRow> benchmark_fit(const ReplicateGen& make_replicate,
                                        const Hyperparameters& hyper,
                                        const std::vector<FitConfig>& configs, int replicates,
                                        double threshold = 0.5);

void write_comparison(const std::string& path, const std::vector<BenchmarkRow>& rows);

} // namespace afcavi
