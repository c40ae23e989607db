#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "afcavi/evaluate.hpp"
#include "afcavi/pipeline.hpp"
#include "afcavi/simulate.hpp"

namespace {

using namespace afcavi;

int cmd_simulate(const std::string& config, std::uint64_t seed, bool seed_set,
                 const std::string& out) {
    SimulationSpec spec = load_scenario(config);
    if (seed_set) {
        spec.seed = seed;
    }
    const SimResult sim = simulate_scenario(spec);
    std::filesystem::create_directories(out);

    std::vector<std::string> snp_ids, trait_ids;
    const auto snp_meta = synthetic_snp_meta(sim.maf);
    const auto trait_meta = synthetic_trait_meta(spec.q);
    for (const auto& m : snp_meta) snp_ids.push_back(m.id);
    for (const auto& m : trait_meta) trait_ids.push_back(m.id);

    write_matrix(out + "/genotype.tsv", sim.X_raw, snp_ids);
    write_matrix(out + "/response.tsv", sim.Y, trait_ids);
    write_snp_meta(out + "/snp_meta.tsv", snp_meta);
    write_trait_meta(out + "/trait_meta.tsv", trait_meta);
    write_truth(out, sim.truth);
    save_scenario(out + "/scenario.txt", spec);
    std::cout << "simulated n=" << spec.n << " p=" << spec.p << " q=" << spec.q << " -> " << out
              << "\n";
    return 0;
}

int cmd_fit(const std::string& genotype, const std::string& response,
            const std::string& snp_meta_path, const std::string& trait_meta_path,
            const std::string& config, const std::string& scheme, std::uint64_t seed,
            int threads, const std::string& out) {
    const RawMatrix X = load_matrix(genotype);
    const RawMatrix Y = load_matrix(response);
    const auto snp_meta = load_snp_meta(snp_meta_path);
    const auto trait_meta = load_trait_meta(trait_meta_path);
    Hyperparameters hyper;
    if (!config.empty()) {
        hyper = load_hyperparameters(config);
    }
    const Dataset dataset = standardize(X.values, Y.values, snp_meta, trait_meta);

    FitConfig fit;
    fit.scheme = scheme_from_string(scheme);
    fit.seed = seed;
    fit.n_threads = threads;
    const FitReport report = Engine(dataset, hyper).run(fit);
    write_fit_report(out, report, dataset, fit);
    std::cout << "fit " << scheme << ": " << report.iterations << " iterations, elbo "
              << report.elbo << (report.converged ? " (converged)" : " (max_iters)") << " -> "
              << out << "\n";
    return 0;
}

Eigen::MatrixXd load_scored_matrix(const std::string& path);

// Accepts both the plain numeric layout and the fit layout with a leading
// snp_id column.
Eigen::MatrixXd load_any_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::string header;
    std::getline(in, header);
    if (header.rfind("snp_id\t", 0) == 0) {
        return load_scored_matrix(path);
    }
    return load_matrix(path).values;
}

int cmd_evaluate(const std::string& scores_path, const std::string& truth_path,
                 double threshold, const std::string& out) {
    const Eigen::MatrixXd scores = load_any_matrix(scores_path);
    const Eigen::MatrixXd truth = load_any_matrix(truth_path);
    const ScorePanel panel = confusion_metrics(scores, truth, threshold);
    std::filesystem::create_directories(out);
    std::ofstream file(out + "/metrics.tsv", std::ios::binary);
    file << "metric\tvalue\n";
    auto put = [&](const char* name, const std::optional<double>& v) {
        file << name << '\t';
        if (v) {
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.10g", *v);
            file << buf;
        } else {
            file << "NA";
        }
        file << '\n';
    };
    file << "threshold\t" << threshold << '\n';
    put("fpr", panel.fpr);
    put("precision", panel.precision);
    put("recall", panel.recall);
    std::cout << "metrics -> " << out << "/metrics.tsv\n";
    return 0;
}

int cmd_oracle(const std::string& genotype, const std::string& response, double tau,
               double sigma2, double prior, const std::string& out) {
    const RawMatrix X = load_matrix(genotype);
    const RawMatrix Y = load_matrix(response);
    if (Y.values.cols() != 1) {
        throw ValidationError("oracle: response must have exactly one column");
    }
    FrozenGlobals fixed;
    fixed.tau = tau;
    fixed.sigma2 = sigma2;
    fixed.prior_inclusion = Eigen::VectorXd::Constant(X.values.cols(), prior);
    const OracleResult result = exact_posterior_oracle(X.values, Y.values.col(0), fixed);
    std::filesystem::create_directories(out);
    std::ofstream file(out + "/oracle.tsv", std::ios::binary);
    file << "snp_id\tppi\tslab_mean\tslab_var\n";
    char buf[128];
    for (Eigen::Index s = 0; s < result.ppi.size(); ++s) {
        std::snprintf(buf, sizeof(buf), "%s\t%.17g\t%.17g\t%.17g\n",
                      X.col_ids[static_cast<std::size_t>(s)].c_str(), result.ppi(s),
                      result.slab_mean(s), result.slab_var(s));
        file << buf;
    }
    std::snprintf(buf, sizeof(buf), "log_evidence\t%.17g\n", result.log_evidence);
    file << buf;
    std::cout << "oracle log evidence " << result.log_evidence << " -> " << out
              << "/oracle.tsv\n";
    return 0;
}

int cmd_pipeline(const std::string& config, std::uint64_t seed, bool seed_set,
                 const std::string& out) {
    PipelineConfig c = load_pipeline_config(config);
    if (seed_set) {
        c.seed = seed;
    }
    if (!out.empty()) {
        c.out_dir = out;
    }
    const auto loci = run_pipeline(c);
    std::cout << "pipeline: " << loci.size() << " loci -> " << c.out_dir << "/loci.tsv\n";
    return 0;
}

// ppi.tsv / beta.tsv from a fit: snp_id first column, one trait per column.
Eigen::MatrixXd load_scored_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open file: " + path);
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError(path + ": missing header row");
    }
    const std::size_t q = static_cast<std::size_t>(std::count(line.begin(), line.end(), '\t'));
    std::vector<std::vector<double>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        std::size_t start = line.find('\t'); // skip the id cell
        while (start != std::string::npos) {
            const std::size_t end = line.find('\t', start + 1);
            const std::string cell = line.substr(
                start + 1, end == std::string::npos ? std::string::npos : end - start - 1);
            char* stop = nullptr;
            const double v = std::strtod(cell.c_str(), &stop);
            if (stop == cell.c_str() || *stop != '\0') {
                throw ParseError(path + ":" + std::to_string(lineno) + ": bad cell '" + cell +
                                 "'");
            }
            row.push_back(v);
            start = end;
        }
        if (row.size() != q) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": ragged row");
        }
        rows.push_back(std::move(row));
    }
    Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(q));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < q; ++c) {
            values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
    }
    return values;
}

int cmd_report(const std::string& ppi_path, const std::string& beta_path,
               const std::string& snp_meta_path, const std::string& trait_meta_path,
               double threshold, long window, bool chained, const std::string& out) {
    const Eigen::MatrixXd ppi = load_scored_matrix(ppi_path);
    const Eigen::MatrixXd beta = load_scored_matrix(beta_path);
    const auto snp_meta = load_snp_meta(snp_meta_path);
    const auto trait_meta = load_trait_meta(trait_meta_path);
    const auto loci =
        summarize_loci(ppi, beta, snp_meta, trait_meta, threshold, window, chained);
    std::filesystem::create_directories(out);
    write_loci(out + "/loci.tsv", loci);
    std::cout << "report: " << loci.size() << " loci -> " << out << "/loci.tsv\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive-focus variational inference for sparse multi-trait regression"};
    app.require_subcommand(1);

    std::string config, out = "afcavi_out", scheme = "vanilla";
    std::uint64_t seed = 0;
    int threads = 1;
    std::string genotype, response, snp_meta, trait_meta, scores, truth, ppi, beta;
    double threshold = 0.5, tau = 1.0, sigma2 = 1.0, prior = 0.5;
    long window = 500000;
    bool chained = false;

    auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset");
    sim->add_option("--config", config, "Scenario file (key=value)")->required();
    auto* sim_seed = sim->add_option("--seed", seed, "Override the scenario seed");
    sim->add_option("--out", out, "Output directory");

    auto* fit = app.add_subcommand("fit", "Fit the model to a dataset");
    fit->add_option("--genotype", genotype, "Genotype TSV")->required();
    fit->add_option("--response", response, "Response TSV")->required();
    fit->add_option("--snp-meta", snp_meta, "SNP metadata TSV")->required();
    fit->add_option("--trait-meta", trait_meta, "Trait metadata TSV")->required();
    fit->add_option("--config", config, "Hyperparameter file (key=value)");
    fit->add_option("--scheme", scheme, "vanilla|rf|afe|afi|afio");
    fit->add_option("--seed", seed, "Fit seed");
    fit->add_option("--threads", threads, "Local-update threads");
    fit->add_option("--out", out, "Output directory");

    auto* eval = app.add_subcommand("evaluate", "Score a fit against truth");
    eval->add_option("--scores", scores, "Score matrix TSV (e.g. ppi.tsv values)")->required();
    eval->add_option("--truth", truth, "Binary truth matrix TSV")->required();
    eval->add_option("--threshold", threshold, "Signal threshold");
    eval->add_option("--config", config, "Unused; accepted for uniformity");
    eval->add_option("--seed", seed, "Unused; accepted for uniformity");
    eval->add_option("--out", out, "Output directory");

    auto* oracle = app.add_subcommand("oracle", "Exact small-instance posterior");
    oracle->add_option("--genotype", genotype, "Genotype TSV, p <= 12 columns")->required();
    oracle->add_option("--response", response, "Single-column response TSV")->required();
    oracle->add_option("--tau", tau, "Fixed noise precision");
    oracle->add_option("--sigma2", sigma2, "Fixed slab variance multiplier");
    oracle->add_option("--prior", prior, "Prior inclusion probability");
    oracle->add_option("--config", config, "Unused; accepted for uniformity");
    oracle->add_option("--seed", seed, "Unused; accepted for uniformity");
    oracle->add_option("--out", out, "Output directory");

    auto* pipe = app.add_subcommand("pipeline", "Block-parallel fit and locus report");
    pipe->add_option("--config", config, "Pipeline config (key=value)")->required();
    auto* pipe_seed = pipe->add_option("--seed", seed, "Override the config seed");
    pipe->add_option("--out", out, "Override the output directory");

    auto* rep = app.add_subcommand("report", "Summarize loci from fit outputs");
    rep->add_option("--ppi", ppi, "ppi.tsv from a fit")->required();
    rep->add_option("--beta", beta, "beta.tsv from a fit")->required();
    rep->add_option("--snp-meta", snp_meta, "SNP metadata TSV")->required();
    rep->add_option("--trait-meta", trait_meta, "Trait metadata TSV")->required();
    rep->add_option("--threshold", threshold, "Signal threshold");
    rep->add_option("--window", window, "Merge window in bp");
    rep->add_flag("--chained", chained, "Transitive merge variant");
    rep->add_option("--config", config, "Unused; accepted for uniformity");
    rep->add_option("--seed", seed, "Unused; accepted for uniformity");
    rep->add_option("--out", out, "Output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) {
            return cmd_simulate(config, seed, sim_seed->count() > 0, out);
        }
        if (fit->parsed()) {
            return cmd_fit(genotype, response, snp_meta, trait_meta, config, scheme, seed,
                           threads, out);
        }
        if (eval->parsed()) {
            return cmd_evaluate(scores, truth, threshold, out);
        }
        if (oracle->parsed()) {
            return cmd_oracle(genotype, response, tau, sigma2, prior, out);
        }
        if (pipe->parsed()) {
            return cmd_pipeline(config, seed, pipe_seed->count() > 0, out);
        }
        if (rep->parsed()) {
            return cmd_report(ppi, beta, snp_meta, trait_meta, threshold, window, chained, out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
