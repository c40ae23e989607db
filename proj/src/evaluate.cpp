#include "afcavi/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "afcavi/mathx.hpp"

namespace afcavi {

namespace {

double logsumexp2(double a, double b) {
    const double m = std::max(a, b);
    if (m == -std::numeric_limits<double>::infinity()) return m;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

} // namespace

ScorePanel confusion_metrics(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& truth,
                             double threshold) {
    if (scores.rows() != truth.rows() || scores.cols() != truth.cols()) {
        throw ValidationError("confusion_metrics: shape mismatch");
    }
    long tp = 0, fp = 0, tn = 0, fn = 0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
        for (Eigen::Index i = 0; i < scores.rows(); ++i) {
            const bool hit = scores(i, j) > threshold;
            const bool pos = truth(i, j) != 0.0;
            if (hit && pos) ++tp;
            else if (hit) ++fp;
            else if (pos) ++fn;
            else ++tn;
        }
    }
    ScorePanel panel;
    panel.threshold = threshold;
    if (fp + tn > 0) panel.fpr = static_cast<double>(fp) / static_cast<double>(fp + tn);
    if (tp + fp > 0) panel.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn > 0) panel.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return panel;
}

RocPr roc_pr_curves(const Eigen::VectorXd& scores, const std::vector<bool>& truth) {
    const Eigen::Index n = scores.size();
    if (static_cast<Eigen::Index>(truth.size()) != n) {
        throw ValidationError("roc_pr_curves: length mismatch");
    }
    long n_pos = 0;
    for (const bool b : truth) n_pos += b ? 1 : 0;
    const long n_neg = static_cast<long>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw ValidationError("roc_pr_curves: truth must contain both classes");
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(),
              [&](Eigen::Index a, Eigen::Index b) { return scores(a) > scores(b); });

    RocPr out;
    long tp = 0, fp = 0;
    double prev_fpr = 0.0, prev_tpr = 0.0, prev_recall = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double thr = scores(order[i]);
        // All tied scores cross the threshold together.
        while (i < order.size() && scores(order[i]) == thr) {
            if (truth[static_cast<std::size_t>(order[i])]) ++tp;
            else ++fp;
            ++i;
        }
        const double fpr = static_cast<double>(fp) / static_cast<double>(n_neg);
        const double tpr = static_cast<double>(tp) / static_cast<double>(n_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        out.auroc += 0.5 * (fpr - prev_fpr) * (tpr + prev_tpr);
        out.auprc += (tpr - prev_recall) * precision; // step interpolation
        out.points.push_back({thr, fpr, tpr, precision});
        prev_fpr = fpr;
        prev_tpr = tpr;
        prev_recall = tpr;
    }
    return out;
}

double relative_change(double metric_method, double metric_vanilla) {
    if (metric_vanilla == 0.0) {
        throw ValidationError("relative_change: zero baseline");
    }
    return (metric_method - metric_vanilla) / metric_vanilla * 100.0;
}

OracleResult exact_posterior_oracle(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                    const FrozenGlobals& fixed) {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    if (p > 12) {
        throw ValidationError("exact_posterior_oracle: p must be <= 12");
    }
    if (fixed.prior_inclusion.size() != p || y.size() != n) {
        throw ValidationError("exact_posterior_oracle: dimension mismatch");
    }
    if (!(fixed.tau > 0.0) || !(fixed.sigma2 > 0.0)) {
        throw ValidationError("exact_posterior_oracle: tau and sigma2 must be positive");
    }
    const double tau = fixed.tau;
    const double sigma2 = fixed.sigma2;
    const Eigen::MatrixXd gram = X.transpose() * X;
    const Eigen::VectorXd xty = X.transpose() * y;
    const double yty = y.squaredNorm();
    const double neg_inf = -std::numeric_limits<double>::infinity();

    double log_evidence = neg_inf;
    Eigen::VectorXd ppi_acc = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd m1_acc = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd m2_acc = Eigen::VectorXd::Zero(p);
    std::vector<double> log_joint(static_cast<std::size_t>(1) << p, neg_inf);
    std::vector<Eigen::VectorXd> cond_mean(log_joint.size());
    std::vector<Eigen::VectorXd> cond_var(log_joint.size());
    std::vector<std::vector<Eigen::Index>> members(log_joint.size());

    for (std::size_t mask = 0; mask < log_joint.size(); ++mask) {
        double log_prior = 0.0;
        std::vector<Eigen::Index> in;
        for (Eigen::Index s = 0; s < p; ++s) {
            const double pi = fixed.prior_inclusion(s);
            if (mask & (std::size_t{1} << s)) {
                if (pi <= 0.0) { log_prior = neg_inf; break; }
                log_prior += std::log(pi);
                in.push_back(s);
            } else {
                if (pi >= 1.0) { log_prior = neg_inf; break; }
                log_prior += std::log1p(-pi);
            }
        }
        if (log_prior == neg_inf) continue;

        const Eigen::Index k = static_cast<Eigen::Index>(in.size());
        double log_lik;
        if (k == 0) {
            log_lik = -0.5 * static_cast<double>(n) * (kLog2Pi - std::log(tau)) -
                      0.5 * tau * yty;
        } else {
            Eigen::MatrixXd inner(k, k);
            Eigen::VectorXd u(k);
            for (Eigen::Index a = 0; a < k; ++a) {
                u(a) = xty(in[static_cast<std::size_t>(a)]);
                for (Eigen::Index b = 0; b < k; ++b) {
                    inner(a, b) =
                        sigma2 * gram(in[static_cast<std::size_t>(a)], in[static_cast<std::size_t>(b)]);
                }
                inner(a, a) += 1.0;
            }
            const Eigen::LLT<Eigen::MatrixXd> llt(inner);
            if (llt.info() != Eigen::Success) {
                throw NumericalError("exact_posterior_oracle: indefinite inner matrix");
            }
            const double logdet_inner =
                2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
            const Eigen::VectorXd v = llt.solve(u);
            const double quad = tau * (yty - sigma2 * u.dot(v));
            log_lik = -0.5 * static_cast<double>(n) * (kLog2Pi - std::log(tau)) -
                      0.5 * logdet_inner - 0.5 * quad;

            // Conditional posterior of the included coefficients.
            Eigen::MatrixXd prec(k, k);
            for (Eigen::Index a = 0; a < k; ++a) {
                for (Eigen::Index b = 0; b < k; ++b) {
                    prec(a, b) =
                        tau * gram(in[static_cast<std::size_t>(a)], in[static_cast<std::size_t>(b)]);
                }
                prec(a, a) += tau / sigma2;
            }
            const Eigen::MatrixXd cov = prec.inverse();
            cond_mean[mask] = cov * (tau * u);
            cond_var[mask] = cov.diagonal();
        }
        members[mask] = std::move(in);
        log_joint[mask] = log_prior + log_lik;
        log_evidence = logsumexp2(log_evidence, log_joint[mask]);
    }

    for (std::size_t mask = 0; mask < log_joint.size(); ++mask) {
        if (log_joint[mask] == neg_inf) continue;
        const double w = std::exp(log_joint[mask] - log_evidence);
        for (std::size_t a = 0; a < members[mask].size(); ++a) {
            const Eigen::Index s = members[mask][a];
            ppi_acc(s) += w;
            m1_acc(s) += w * cond_mean[mask](static_cast<Eigen::Index>(a));
            m2_acc(s) += w * (cond_var[mask](static_cast<Eigen::Index>(a)) +
                              cond_mean[mask](static_cast<Eigen::Index>(a)) *
                                  cond_mean[mask](static_cast<Eigen::Index>(a)));
        }
    }

    OracleResult out;
    out.log_evidence = log_evidence;
    out.ppi = ppi_acc;
    out.slab_mean = Eigen::VectorXd::Zero(p);
    out.slab_var = Eigen::VectorXd::Zero(p);
    for (Eigen::Index s = 0; s < p; ++s) {
        if (ppi_acc(s) > 0.0) {
            out.slab_mean(s) = m1_acc(s) / ppi_acc(s);
            out.slab_var(s) = m2_acc(s) / ppi_acc(s) - out.slab_mean(s) * out.slab_mean(s);
        }
    }
    return out;
}

std::vector<BenchmarkRow> benchmark_fit(const ReplicateGen& make_replicate,
                                        const Hyperparameters& hyper,
                                        const std::vector<FitConfig>& configs, int replicates,
                                        double threshold) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<Replicate> reps;
    reps.reserve(static_cast<std::size_t>(replicates));
    for (int r = 0; r < replicates; ++r) {
        reps.push_back(make_replicate(r));
    }

    struct Accum {
        std::vector<double> fpr, precision, recall;
        double iterations = 0.0, runtime_total = 0.0, runtime_local = 0.0, local_updates = 0.0;
    };
    std::vector<Accum> accums(configs.size());
    for (std::size_t c = 0; c < configs.size(); ++c) {
        for (int r = 0; r < replicates; ++r) {
            Engine engine(reps[static_cast<std::size_t>(r)].dataset, hyper);
            FitConfig cfg = configs[c];
            cfg.record_trace = false;
            cfg.seed = splitmix64(configs[c].seed ^ static_cast<std::uint64_t>(r));
            const FitReport report = engine.run(cfg);
            const ScorePanel panel = confusion_metrics(
                report.ppi, reps[static_cast<std::size_t>(r)].gamma_true, threshold);
            if (panel.fpr) accums[c].fpr.push_back(*panel.fpr);
            if (panel.precision) accums[c].precision.push_back(*panel.precision);
            if (panel.recall) accums[c].recall.push_back(*panel.recall);
            accums[c].iterations += static_cast<double>(report.iterations);
            accums[c].runtime_total += report.wall_time_total;
            accums[c].runtime_local += report.wall_time_local;
            accums[c].local_updates += static_cast<double>(report.local_update_count);
        }
    }

    auto mean_se = [&](const std::vector<double>& xs, double& mean, double& se) {
        if (xs.empty()) {
            mean = nan;
            se = nan;
            return;
        }
        mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
        if (xs.size() < 2) {
            se = 0.0;
            return;
        }
        double ss = 0.0;
        for (const double x : xs) ss += (x - mean) * (x - mean);
        se = std::sqrt(ss / static_cast<double>(xs.size() - 1) /
                       static_cast<double>(xs.size()));
    };

    std::size_t baseline = 0;
    for (std::size_t c = 0; c < configs.size(); ++c) {
        if (configs[c].scheme == Scheme::vanilla) {
            baseline = c;
            break;
        }
    }

    std::vector<BenchmarkRow> rows;
    const double nrep = static_cast<double>(replicates);
    for (std::size_t c = 0; c < configs.size(); ++c) {
        BenchmarkRow row;
        row.scheme = scheme_name(configs[c].scheme);
        row.replicates = replicates;
        mean_se(accums[c].fpr, row.fpr_mean, row.fpr_se);
        mean_se(accums[c].precision, row.precision_mean, row.precision_se);
        mean_se(accums[c].recall, row.recall_mean, row.recall_se);
        row.iterations_mean = accums[c].iterations / nrep;
        row.runtime_total_mean = accums[c].runtime_total / nrep;
        row.runtime_local_mean = accums[c].runtime_local / nrep;
        row.local_updates_mean = accums[c].local_updates / nrep;
        const Accum& base = accums[baseline];
        row.d_iterations_pct = relative_change(accums[c].iterations, base.iterations);
        row.d_runtime_total_pct = relative_change(accums[c].runtime_total, base.runtime_total);
        row.d_runtime_local_pct = relative_change(accums[c].runtime_local, base.runtime_local);
        row.d_local_updates_pct = relative_change(accums[c].local_updates, base.local_updates);
        rows.push_back(row);
    }
    return rows;
}

void write_comparison(const std::string& path, const std::vector<BenchmarkRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    out << "scheme\treplicates\td_iterations_pct\tneg_d_runtime_total_pct\t"
           "neg_d_runtime_local_pct\td_local_updates_pct\tfpr_mean\tfpr_se\t"
           "precision_mean\tprecision_se\trecall_mean\trecall_se\n";
    auto cell = [&](double v) {
        if (std::isnan(v)) {
            out << "\tNA";
        } else {
            char buf[40];
            std::snprintf(buf, sizeof(buf), "\t%.10g", v);
            out << buf;
        }
    };
    for (const auto& row : rows) {
        out << row.scheme << '\t' << row.replicates;
        cell(row.d_iterations_pct);
        cell(-row.d_runtime_total_pct);
        cell(-row.d_runtime_local_pct);
        cell(row.d_local_updates_pct);
        cell(row.fpr_mean);
        cell(row.fpr_se);
        cell(row.precision_mean);
        cell(row.precision_se);
        cell(row.recall_mean);
        cell(row.recall_se);
        out << '\n';
    }
}

} // namespace afcavi
