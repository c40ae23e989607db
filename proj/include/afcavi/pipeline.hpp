#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "afcavi/engine.hpp"

// End-to-end flow: block-wise fits, locus-wise summarization with cis/trans
// labeling, and deterministic report emission.

namespace afcavi {

enum class CisTrans { cis, trans, unknown };

std::string cis_trans_name(CisTrans label);

struct LocusAssociation {
    std::string trait_id;
    double max_ppi = 0.0;
    double beta_at_max = 0.0;
    CisTrans label = CisTrans::unknown;
};

struct Locus {
    long locus_id = 0;
    long start_bp = 0;
    long end_bp = 0;
    std::string lead_snp;
    std::vector<LocusAssociation> associations;
};

// Greedy lead-anchored merging: repeatedly take the unassigned signal SNP
// with the most associated traits (ties: smaller bp) and absorb unassigned
// signal SNPs within window_bp of it. `chained` grows loci transitively
// (within window_bp of any member) instead.
std::vector<Locus> summarize_loci(const Eigen::MatrixXd& ppi, const Eigen::MatrixXd& beta,
                                  const std::vector<SnpMeta>& snp_meta,
                                  const std::vector<TraitMeta>& trait_meta,
                                  double threshold = 0.5, long window_bp = 500000,
                                  bool chained = false);

CisTrans label_cis_trans(long start_bp, long end_bp, std::optional<long> gene_bp,
                         long window_bp = 1000000);

void write_loci(const std::string& path, const std::vector<Locus>& loci);

struct PipelineConfig {
    std::string genotype_path;
    std::string response_path;
    std::string snp_meta_path;
    std::string trait_meta_path;
    std::string blocks_path;
    std::string hyper_path; // optional; defaults when empty
    std::string out_dir;
    Scheme scheme = Scheme::vanilla;
    std::uint64_t seed = 0;
    int n_workers = 1;
    double threshold = 0.5;
    long merge_window_bp = 500000;
    long cis_window_bp = 1000000;
    bool chained_merge = false;

    void validate() const;
};

PipelineConfig load_pipeline_config(const std::string& path);

// Slices each block, fits them concurrently (per-block seeds derived from
// the run seed and block id), merges loci chromosome-wide, writes per-block
// artifacts, loci.tsv and a manifest. A block failure leaves a FAILED
// marker and rethrows with the block id.
std::vector<Locus> run_pipeline(const PipelineConfig& config);
std::vector<Locus> run_pipeline(const std::string& config_path);

} // namespace afcavi
