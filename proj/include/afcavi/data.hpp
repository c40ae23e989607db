#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "afcavi/common.hpp"

// Ingestion, validation and standardization of genotype/response matrices,
// block-boundary files and dosage triplets. All TSV files carry a header row,
// tab separators, LF line endings and '.' decimal radix.

namespace afcavi {

struct SnpMeta {
    std::string id;
    long bp = 0;
    double maf = 0.0;
};

struct TraitMeta {
    std::string id;
    std::optional<long> gene_bp;
};

struct RawMatrix {
    Eigen::MatrixXd values;
    std::vector<std::string> col_ids;
};

// Column-standardized genotypes (mean 0, sample sd 1 with the n-1
// denominator) and column-centered responses. Immutable after construction;
// safe to share across concurrent block fits.
struct Dataset {
    Eigen::MatrixXd X;
    Eigen::MatrixXd Y;
    std::vector<SnpMeta> snp_meta;
    std::vector<TraitMeta> trait_meta;

    // Original column moments, kept for back-transformation of coefficients.
    Eigen::VectorXd x_mean;
    Eigen::VectorXd x_sd;
    Eigen::VectorXd y_mean;

    Eigen::Index n() const { return X.rows(); }
    Eigen::Index p() const { return X.cols(); }
    Eigen::Index q() const { return Y.cols(); }
};

struct Block {
    long id = 0;
    long start_bp = 0;
    long end_bp = 0;
};

using BlockTable = std::vector<Block>;

RawMatrix load_matrix(const std::string& path, bool rows_are_samples = true);
void write_matrix(const std::string& path, const Eigen::MatrixXd& values,
                  const std::vector<std::string>& col_ids);

std::vector<SnpMeta> load_snp_meta(const std::string& path);
void write_snp_meta(const std::string& path, const std::vector<SnpMeta>& meta);
std::vector<TraitMeta> load_trait_meta(const std::string& path);
void write_trait_meta(const std::string& path, const std::vector<TraitMeta>& meta);

Dataset standardize(const Eigen::MatrixXd& X_raw, const Eigen::MatrixXd& Y_raw,
                    std::vector<SnpMeta> snp_meta, std::vector<TraitMeta> trait_meta);

// Expected genotype on the 0-2 additive scale from a dosage triplet.
double dosage_to_genotype(double p0, double p1, double p2);

BlockTable load_blocks(const std::string& path);
void validate_blocks(const BlockTable& blocks);

// Restriction to SNPs with start_bp <= bp <= end_bp; traits unchanged.
Dataset slice_block(const Dataset& dataset, const Block& block);

} // namespace afcavi
