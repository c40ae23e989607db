#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "afcavi/pipeline.hpp"
#include "afcavi/simulate.hpp"

using namespace afcavi;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("afcavi_pipe_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& name) const { return (path / name).string(); }
};

std::vector<SnpMeta> meta_at(std::initializer_list<long> bps) {
    std::vector<SnpMeta> out;
    long i = 0;
    for (const long bp : bps) {
        out.push_back({"snp" + std::to_string(++i), bp, 0.3});
    }
    return out;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("label_cis_trans") {
    CHECK(label_cis_trans(100, 200, std::nullopt) == CisTrans::unknown);
    CHECK(label_cis_trans(100, 200, 150) == CisTrans::cis);   // inside the span
    CHECK(label_cis_trans(100, 200, 200) == CisTrans::cis);   // on the boundary
    CHECK(label_cis_trans(100, 200, 1000200) == CisTrans::cis);
    CHECK(label_cis_trans(100, 200, 1000201) == CisTrans::trans);
    CHECK(label_cis_trans(2000000, 2000000, 900000) == CisTrans::trans);
    CHECK(label_cis_trans(2000000, 2000000, 1000000) == CisTrans::cis);
}

TEST_CASE("summarize_loci: singleton, merge inside and outside the window") {
    std::vector<TraitMeta> traits = {{"trait1", 150000L}, {"trait2", std::nullopt}};

    // Two signal SNPs 0.4 Mb apart merge into one locus.
    {
        const auto snps = meta_at({100000, 500000, 5000000});
        Eigen::MatrixXd ppi(3, 2);
        ppi << 0.9, 0.1, 0.8, 0.1, 0.2, 0.3;
        Eigen::MatrixXd beta(3, 2);
        beta << 1.5, 0.0, -0.7, 0.0, 0.0, 0.0;
        const auto loci = summarize_loci(ppi, beta, snps, traits);
        REQUIRE(loci.size() == 1);
        CHECK(loci[0].locus_id == 1);
        CHECK(loci[0].start_bp == 100000);
        CHECK(loci[0].end_bp == 500000);
        CHECK(loci[0].lead_snp == "snp1");
        REQUIRE(loci[0].associations.size() == 1);
        CHECK(loci[0].associations[0].trait_id == "trait1");
        CHECK(loci[0].associations[0].max_ppi == doctest::Approx(0.9));
        CHECK(loci[0].associations[0].beta_at_max == doctest::Approx(1.5));
        CHECK(loci[0].associations[0].label == CisTrans::cis);
    }

    // 0.6 Mb apart: two loci, renumbered along the chromosome.
    {
        const auto snps = meta_at({100000, 700000});
        Eigen::MatrixXd ppi(2, 2);
        ppi << 0.6, 0.1, 0.9, 0.9;
        Eigen::MatrixXd beta(2, 2);
        beta << 0.4, 0.0, 0.2, -0.3;
        const auto loci = summarize_loci(ppi, beta, snps, traits);
        REQUIRE(loci.size() == 2);
        CHECK(loci[0].locus_id == 1);
        CHECK(loci[0].start_bp == 100000);
        CHECK(loci[0].lead_snp == "snp1");
        CHECK(loci[1].locus_id == 2);
        CHECK(loci[1].start_bp == 700000);
        CHECK(loci[1].lead_snp == "snp2");
        REQUIRE(loci[1].associations.size() == 2);
        CHECK(loci[1].associations[1].label == CisTrans::unknown); // trait2 has no gene bp
    }

    // Equal trait counts: lead goes to the smaller bp.
    {
        const auto snps = meta_at({100000, 200000});
        Eigen::MatrixXd ppi(2, 2);
        ppi << 0.8, 0.1, 0.8, 0.1;
        Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(2, 2);
        const auto loci = summarize_loci(ppi, beta, snps, traits);
        REQUIRE(loci.size() == 1);
        CHECK(loci[0].lead_snp == "snp1");
    }

    // No signal anywhere: no loci.
    {
        const auto snps = meta_at({100000});
        const Eigen::MatrixXd low = Eigen::MatrixXd::Constant(1, 2, 0.2);
        CHECK(summarize_loci(low, Eigen::MatrixXd::Zero(1, 2), snps, traits).empty());
    }
}

TEST_CASE("chained merge can absorb what lead-anchored merging splits") {
    // 3 signal SNPs at 0, 0.4, 0.8 Mb; the middle one has the most traits.
    std::vector<TraitMeta> traits = {{"trait1", std::nullopt}, {"trait2", std::nullopt}};
    const auto snps = meta_at({100000, 500000, 900000});
    Eigen::MatrixXd ppi(3, 2);
    ppi << 0.9, 0.1, 0.9, 0.9, 0.9, 0.1;
    Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(3, 2);
    const auto anchored = summarize_loci(ppi, beta, snps, traits);
    CHECK(anchored.size() == 1); // lead snp2 reaches both neighbors (0.4 Mb each)

    // Push the flanks to 0.45 Mb beyond each other so only chaining connects all.
    const auto snps2 = meta_at({100000, 550000, 1000000});
    const auto anchored2 = summarize_loci(ppi, beta, snps2, traits);
    CHECK(anchored2.size() == 1); // still within 0.45 Mb of the lead
    const auto snps3 = meta_at({100000, 700000, 1150000});
    const auto split = summarize_loci(ppi, beta, snps3, traits);
    CHECK(split.size() == 2); // 0.6/0.45 Mb from the lead: snp1 falls off
    const auto chained = summarize_loci(ppi, beta, snps3, traits, 0.5, 500000, true);
    CHECK(chained.size() == 2); // 0.6 Mb gap stays a gap even chained
    const auto snps4 = meta_at({100000, 550000, 1000000});
    Eigen::MatrixXd ppi4(3, 2);
    ppi4 << 0.9, 0.9, 0.9, 0.1, 0.9, 0.1; // lead is now the *first* snp
    const auto split4 = summarize_loci(ppi4, beta, snps4, traits);
    CHECK(split4.size() == 2); // snp3 is 0.9 Mb from the lead
    const auto chained4 = summarize_loci(ppi4, beta, snps4, traits, 0.5, 500000, true);
    CHECK(chained4.size() == 1); // transitive 0.45 Mb hops connect all three
}

TEST_CASE("loci partition the signal SNPs and ignore trait order") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> unif;
    const int p = 40, q = 6;
    std::vector<SnpMeta> snps;
    for (int s = 0; s < p; ++s) {
        snps.push_back({"snp" + std::to_string(s + 1), 100000L + 120000L * s, 0.3});
    }
    std::vector<TraitMeta> traits;
    for (int t = 0; t < q; ++t) {
        traits.push_back({"trait" + std::to_string(t + 1), std::nullopt});
    }
    Eigen::MatrixXd ppi(p, q), beta(p, q);
    for (Eigen::Index i = 0; i < ppi.size(); ++i) {
        ppi(i) = unif(rng);
        beta(i) = unif(rng) - 0.5;
    }
    const auto loci = summarize_loci(ppi, beta, snps, traits);

    long signal = 0;
    for (int s = 0; s < p; ++s) {
        signal += (ppi.row(s).maxCoeff() > 0.5) ? 1 : 0;
    }
    REQUIRE_FALSE(loci.empty());
    CHECK(static_cast<long>(loci.size()) <= signal); // each locus needs a signal SNP
    long prev_end = -1;
    for (const Locus& locus : loci) {
        CHECK(locus.start_bp > prev_end); // disjoint and ordered
        prev_end = locus.end_bp;
    }

    // Reversing the trait order relabels trait ids but keeps the geometry.
    Eigen::MatrixXd ppi_r = ppi.rowwise().reverse();
    Eigen::MatrixXd beta_r = beta.rowwise().reverse();
    std::vector<TraitMeta> traits_r(traits.rbegin(), traits.rend());
    const auto loci_r = summarize_loci(ppi_r, beta_r, snps, traits_r);
    REQUIRE(loci_r.size() == loci.size());
    for (std::size_t k = 0; k < loci.size(); ++k) {
        CHECK(loci_r[k].start_bp == loci[k].start_bp);
        CHECK(loci_r[k].end_bp == loci[k].end_bp);
        CHECK(loci_r[k].lead_snp == loci[k].lead_snp);
        CHECK(loci_r[k].associations.size() == loci[k].associations.size());
    }
}

TEST_CASE("summarize_loci input validation") {
    std::vector<TraitMeta> traits = {{"trait1", std::nullopt}};
    const auto snps = meta_at({100000, 200000});
    const Eigen::MatrixXd good = Eigen::MatrixXd::Constant(2, 1, 0.9);
    CHECK_THROWS_AS(summarize_loci(good, Eigen::MatrixXd::Zero(3, 1), snps, traits),
                    ValidationError);
    CHECK_THROWS_AS(
        summarize_loci(Eigen::MatrixXd::Constant(1, 1, 0.9), Eigen::MatrixXd::Zero(1, 1), snps,
                       traits),
        ValidationError);
    auto unsorted = snps;
    std::swap(unsorted[0], unsorted[1]);
    CHECK_THROWS_AS(summarize_loci(good, Eigen::MatrixXd::Zero(2, 1), unsorted, traits),
                    ValidationError);
}

namespace {

// A two-block scenario with effects planted in both blocks.
struct PipelineFixture {
    TempDir dir;
    PipelineConfig config;

    explicit PipelineFixture(int n_workers, Scheme scheme = Scheme::vanilla) {
        SimulationSpec spec;
        spec.n = 150;
        spec.p = 24;
        spec.q = 6;
        spec.a_p = 0.25;
        spec.a_q = 0.8;
        spec.h2m = 0.4;
        spec.seed = 99;
        const SimResult sim = simulate_scenario(spec);

        std::vector<std::string> snp_ids, trait_ids;
        const auto snp_meta = synthetic_snp_meta(sim.maf); // bp 100000 + 5000*s
        for (const auto& m : snp_meta) snp_ids.push_back(m.id);
        for (int t = 0; t < spec.q; ++t) trait_ids.push_back("trait" + std::to_string(t + 1));

        write_matrix(dir.str("X.tsv"), sim.X_raw, snp_ids);
        write_matrix(dir.str("Y.tsv"), sim.Y, trait_ids);
        write_snp_meta(dir.str("snps.tsv"), snp_meta);
        write_trait_meta(dir.str("traits.tsv"), synthetic_trait_meta(spec.q));
        {
            std::ofstream blocks(dir.str("blocks.tsv"));
            blocks << "block_id\tstart_bp\tend_bp\n";
            blocks << "1\t100000\t155000\n";  // first 12 SNPs
            blocks << "2\t160000\t215000\n";  // remaining 12
        }
        Hyperparameters hyper;
        hyper.warmup_iters = 12;
        hyper.anneal_grid = 10;
        hyper.max_iters = 300;
        hyper.tol = 1e-4;
        save_hyperparameters(dir.str("hyper.txt"), hyper);

        config.genotype_path = dir.str("X.tsv");
        config.response_path = dir.str("Y.tsv");
        config.snp_meta_path = dir.str("snps.tsv");
        config.trait_meta_path = dir.str("traits.tsv");
        config.blocks_path = dir.str("blocks.tsv");
        config.hyper_path = dir.str("hyper.txt");
        config.out_dir = dir.str("out");
        config.scheme = scheme;
        config.seed = 7;
        config.n_workers = n_workers;
        config.merge_window_bp = 20000; // scaled to the 5 kb synthetic spacing
        config.cis_window_bp = 50000;
    }
};

} // namespace

TEST_CASE("pipeline runs, matches the single-process composition and is worker-invariant") {
    PipelineFixture serial(1);
    const auto loci1 = run_pipeline(serial.config);
    CHECK(fs::exists(serial.dir.str("out") + "/loci.tsv"));
    CHECK(fs::exists(serial.dir.str("out") + "/manifest.txt"));
    CHECK(fs::exists(serial.dir.str("out") + "/block_1/ppi.tsv"));
    CHECK(fs::exists(serial.dir.str("out") + "/block_2/ppi.tsv"));
    CHECK_FALSE(fs::exists(serial.dir.str("out") + "/FAILED"));

    PipelineFixture parallel(4);
    const auto loci4 = run_pipeline(parallel.config);
    CHECK(slurp(serial.dir.str("out") + "/loci.tsv") ==
          slurp(parallel.dir.str("out") + "/loci.tsv"));
    CHECK(slurp(serial.dir.str("out") + "/block_1/ppi.tsv") ==
          slurp(parallel.dir.str("out") + "/block_1/ppi.tsv"));
    CHECK(slurp(serial.dir.str("out") + "/block_2/beta.tsv") ==
          slurp(parallel.dir.str("out") + "/block_2/beta.tsv"));
    REQUIRE(loci1.size() == loci4.size());

    const std::string manifest = slurp(serial.dir.str("out") + "/manifest.txt");
    CHECK(manifest.find("n_blocks=2") != std::string::npos);
    CHECK(manifest.find("scheme=vanilla") != std::string::npos);
    CHECK(manifest.find("config_hash=") != std::string::npos);

    // The same inputs through the config-file entry point give the same loci.
    {
        std::ofstream cfg(serial.dir.str("pipeline.txt"));
        cfg << "genotype=" << serial.config.genotype_path << "\n"
            << "response=" << serial.config.response_path << "\n"
            << "snp_meta=" << serial.config.snp_meta_path << "\n"
            << "trait_meta=" << serial.config.trait_meta_path << "\n"
            << "blocks=" << serial.config.blocks_path << "\n"
            << "hyper=" << serial.config.hyper_path << "\n"
            << "out=" << serial.dir.str("out_cfg") << "\n"
            << "scheme=vanilla\nseed=7\nn_workers=2\n"
            << "merge_window_bp=20000\ncis_window_bp=50000\n";
    }
    const auto loci_cfg = run_pipeline(serial.dir.str("pipeline.txt"));
    REQUIRE(loci_cfg.size() == loci1.size());
    for (std::size_t k = 0; k < loci1.size(); ++k) {
        CHECK(loci_cfg[k].start_bp == loci1[k].start_bp);
        CHECK(loci_cfg[k].lead_snp == loci1[k].lead_snp);
    }
}

TEST_CASE("pipeline failure leaves a FAILED marker naming the block") {
    PipelineFixture broken(2);
    {
        // Append a block whose slice contains no SNPs; slicing rejects it.
        std::ofstream blocks(broken.config.blocks_path, std::ios::app);
        blocks << "3\t900000\t950000\n";
    }
    CHECK_THROWS_AS(run_pipeline(broken.config), Error);
    CHECK(fs::exists(broken.dir.str("out") + "/FAILED"));
    const std::string marker = slurp(broken.dir.str("out") + "/FAILED");
    CHECK(marker.find('3') != std::string::npos);
}

TEST_CASE("pipeline config validation and loader errors") {
    PipelineConfig c;
    CHECK_THROWS_AS(c.validate(), ValidationError); // empty paths
    PipelineFixture fx(1);
    PipelineConfig bad = fx.config;
    bad.n_workers = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = fx.config;
    bad.threshold = 1.5;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = fx.config;
    bad.merge_window_bp = -1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    std::ofstream junk(fx.dir.str("junk.txt"));
    junk << "no_such_key=1\n";
    junk.close();
    CHECK_THROWS_AS(load_pipeline_config(fx.dir.str("junk.txt")), ParseError);
}

TEST_CASE("write_loci emits one row per association") {
    TempDir dir;
    Locus locus;
    locus.locus_id = 1;
    locus.start_bp = 100;
    locus.end_bp = 200;
    locus.lead_snp = "snp1";
    locus.associations.push_back({"trait1", 0.9, 1.25, CisTrans::cis});
    locus.associations.push_back({"trait2", 0.6, -0.5, CisTrans::trans});
    write_loci(dir.str("loci.tsv"), {locus});
    std::ifstream in(dir.str("loci.tsv"));
    std::string line;
    std::getline(in, line);
    CHECK(line.find("locus_id") != std::string::npos);
    CHECK(line.find("cis_trans") != std::string::npos);
    int rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 2);
}
