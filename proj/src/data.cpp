#include "afcavi/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace afcavi {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open file: " + path);
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        lines.push_back(line);
    }
    // trailing blank line from a final LF is not a record
    while (!lines.empty() && lines.back().empty()) {
        lines.pop_back();
    }
    return lines;
}

double parse_double(const std::string& cell, const std::string& path, std::size_t row,
                    std::size_t col) {
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str() || *end != '\0') {
        throw ParseError(path + ": row " + std::to_string(row) + ", column " +
                         std::to_string(col + 1) + ": cannot parse '" + cell + "' as a number");
    }
    if (!std::isfinite(v)) {
        throw ValidationError(path + ": non-finite value at row " + std::to_string(row) +
                              ", column " + std::to_string(col + 1));
    }
    return v;
}

long parse_long(const std::string& cell, const std::string& path, std::size_t row) {
    char* end = nullptr;
    const long v = std::strtol(cell.c_str(), &end, 10);
    if (end == cell.c_str() || *end != '\0') {
        throw ParseError(path + ": row " + std::to_string(row) + ": cannot parse '" + cell +
                         "' as an integer");
    }
    return v;
}

void format_cell(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
}

} // namespace

RawMatrix load_matrix(const std::string& path, bool rows_are_samples) {
    const auto lines = read_lines(path);
    if (lines.empty()) {
        throw ParseError(path + ": missing header row");
    }
    const auto header = split_tabs(lines[0]);
    const std::size_t ncol = header.size();
    const std::size_t nrow = lines.size() - 1;

    Eigen::MatrixXd values(static_cast<Eigen::Index>(nrow), static_cast<Eigen::Index>(ncol));
    for (std::size_t r = 0; r < nrow; ++r) {
        const auto cells = split_tabs(lines[r + 1]);
        if (cells.size() != ncol) {
            throw ParseError(path + ": row " + std::to_string(r + 1) + " has " +
                             std::to_string(cells.size()) + " cells, expected " +
                             std::to_string(ncol));
        }
        for (std::size_t c = 0; c < ncol; ++c) {
            values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                parse_double(cells[c], path, r + 1, c);
        }
    }

    RawMatrix out;
    out.col_ids = header;
    out.values = rows_are_samples ? values : Eigen::MatrixXd(values.transpose());
    return out;
}

void write_matrix(const std::string& path, const Eigen::MatrixXd& values,
                  const std::vector<std::string>& col_ids) {
    if (static_cast<Eigen::Index>(col_ids.size()) != values.cols()) {
        throw ValidationError("write_matrix: " + std::to_string(col_ids.size()) +
                              " column ids for " + std::to_string(values.cols()) + " columns");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot open for writing: " + path);
    }
    std::string buf;
    for (std::size_t c = 0; c < col_ids.size(); ++c) {
        if (c) buf += '\t';
        buf += col_ids[c];
    }
    buf += '\n';
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        for (Eigen::Index c = 0; c < values.cols(); ++c) {
            if (c) buf += '\t';
            format_cell(buf, values(r, c));
        }
        buf += '\n';
        if (buf.size() > (1u << 20)) {
            out << buf;
            buf.clear();
        }
    }
    out << buf;
}

std::vector<SnpMeta> load_snp_meta(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.empty() || split_tabs(lines[0]) != std::vector<std::string>{"id", "bp", "maf"}) {
        throw ParseError(path + ": expected header 'id\\tbp\\tmaf'");
    }
    std::vector<SnpMeta> meta;
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const auto cells = split_tabs(lines[r]);
        if (cells.size() != 3) {
            throw ParseError(path + ": row " + std::to_string(r) + " has " +
                             std::to_string(cells.size()) + " cells, expected 3");
        }
        SnpMeta m;
        m.id = cells[0];
        m.bp = parse_long(cells[1], path, r);
        m.maf = parse_double(cells[2], path, r, 2);
        meta.push_back(std::move(m));
    }
    return meta;
}

void write_snp_meta(const std::string& path, const std::vector<SnpMeta>& meta) {
    std::ofstream out(path, std::ios::binary);
    out << "id\tbp\tmaf\n";
    std::string buf;
    for (const auto& m : meta) {
        buf += m.id;
        buf += '\t';
        buf += std::to_string(m.bp);
        buf += '\t';
        format_cell(buf, m.maf);
        buf += '\n';
    }
    out << buf;
}

std::vector<TraitMeta> load_trait_meta(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) {
        throw ParseError(path + ": missing header row");
    }
    const auto header = split_tabs(lines[0]);
    const bool has_gene_bp = header.size() == 2 && header[1] == "gene_bp";
    if (header.empty() || header[0] != "id" || (header.size() != 1 && !has_gene_bp)) {
        throw ParseError(path + ": expected header 'id' or 'id\\tgene_bp'");
    }
    std::vector<TraitMeta> meta;
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const auto cells = split_tabs(lines[r]);
        if (cells.size() != header.size()) {
            throw ParseError(path + ": row " + std::to_string(r) + " has " +
                             std::to_string(cells.size()) + " cells, expected " +
                             std::to_string(header.size()));
        }
        TraitMeta m;
        m.id = cells[0];
        if (has_gene_bp && !cells[1].empty()) {
            m.gene_bp = parse_long(cells[1], path, r);
        }
        meta.push_back(std::move(m));
    }
    return meta;
}

void write_trait_meta(const std::string& path, const std::vector<TraitMeta>& meta) {
    std::ofstream out(path, std::ios::binary);
    out << "id\tgene_bp\n";
    for (const auto& m : meta) {
        out << m.id << '\t';
        if (m.gene_bp) out << *m.gene_bp;
        out << '\n';
    }
}

Dataset standardize(const Eigen::MatrixXd& X_raw, const Eigen::MatrixXd& Y_raw,
                    std::vector<SnpMeta> snp_meta, std::vector<TraitMeta> trait_meta) {
    const Eigen::Index n = X_raw.rows();
    const Eigen::Index p = X_raw.cols();
    const Eigen::Index q = Y_raw.cols();
    if (Y_raw.rows() != n) {
        throw ValidationError("standardize: X has " + std::to_string(n) + " rows but Y has " +
                              std::to_string(Y_raw.rows()));
    }
    if (n < 2) {
        throw ValidationError("standardize: need at least 2 samples");
    }
    if (static_cast<Eigen::Index>(snp_meta.size()) != p) {
        throw ValidationError("standardize: snp_meta size " + std::to_string(snp_meta.size()) +
                              " does not match p = " + std::to_string(p));
    }
    if (static_cast<Eigen::Index>(trait_meta.size()) != q) {
        throw ValidationError("standardize: trait_meta size " + std::to_string(trait_meta.size()) +
                              " does not match q = " + std::to_string(q));
    }
    if (!X_raw.allFinite() || !Y_raw.allFinite()) {
        throw ValidationError("standardize: non-finite entries; missing values are rejected");
    }
    for (std::size_t s = 0; s < snp_meta.size(); ++s) {
        if (snp_meta[s].bp <= 0) {
            throw ValidationError("standardize: non-positive bp for SNP " + snp_meta[s].id);
        }
        if (s > 0 && snp_meta[s].bp < snp_meta[s - 1].bp) {
            throw ValidationError("standardize: snp_meta not sorted by bp at " + snp_meta[s].id);
        }
    }

    Dataset d;
    d.snp_meta = std::move(snp_meta);
    d.trait_meta = std::move(trait_meta);
    d.x_mean = X_raw.colwise().mean();
    d.y_mean = Y_raw.colwise().mean();
    d.x_sd.resize(p);
    d.X.resize(n, p);
    for (Eigen::Index s = 0; s < p; ++s) {
        Eigen::VectorXd col = X_raw.col(s).array() - d.x_mean(s);
        const double ss = col.squaredNorm();
        if (ss <= 0.0) {
            throw ValidationError("constant predictor column: " + d.snp_meta[s].id);
        }
        d.x_sd(s) = std::sqrt(ss / static_cast<double>(n - 1));
        d.X.col(s) = col / d.x_sd(s);
    }
    d.Y = Y_raw.rowwise() - d.y_mean.transpose();
    return d;
}

double dosage_to_genotype(double p0, double p1, double p2) {
    if (p0 < 0.0 || p1 < 0.0 || p2 < 0.0 || std::abs(p0 + p1 + p2 - 1.0) > 1e-6) {
        throw ValidationError("dosage triplet outside probability simplex");
    }
    return p1 + 2.0 * p2;
}

void validate_blocks(const BlockTable& blocks) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        if (b.start_bp >= b.end_bp) {
            throw ValidationError("block " + std::to_string(b.id) + ": start_bp >= end_bp");
        }
        if (i > 0) {
            const auto& prev = blocks[i - 1];
            if (b.start_bp < prev.start_bp) {
                throw ValidationError("blocks not sorted by start_bp at block " +
                                      std::to_string(b.id));
            }
            if (b.start_bp <= prev.end_bp) {
                throw ValidationError("blocks " + std::to_string(prev.id) + " and " +
                                      std::to_string(b.id) + " overlap");
            }
        }
    }
}

BlockTable load_blocks(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.empty() ||
        split_tabs(lines[0]) != std::vector<std::string>{"block_id", "start_bp", "end_bp"}) {
        throw ParseError(path + ": expected header 'block_id\\tstart_bp\\tend_bp'");
    }
    BlockTable blocks;
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const auto cells = split_tabs(lines[r]);
        if (cells.size() != 3) {
            throw ParseError(path + ": row " + std::to_string(r) + " has " +
                             std::to_string(cells.size()) + " cells, expected 3");
        }
        Block b;
        b.id = parse_long(cells[0], path, r);
        b.start_bp = parse_long(cells[1], path, r);
        b.end_bp = parse_long(cells[2], path, r);
        blocks.push_back(b);
    }
    validate_blocks(blocks);
    return blocks;
}

Dataset slice_block(const Dataset& dataset, const Block& block) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index s = 0; s < dataset.p(); ++s) {
        const long bp = dataset.snp_meta[static_cast<std::size_t>(s)].bp;
        if (bp >= block.start_bp && bp <= block.end_bp) {
            keep.push_back(s);
        }
    }
    if (keep.empty()) {
        throw ValidationError("block " + std::to_string(block.id) + " contains no SNPs");
    }

    Dataset out;
    out.Y = dataset.Y;
    out.y_mean = dataset.y_mean;
    out.trait_meta = dataset.trait_meta;
    out.X.resize(dataset.n(), static_cast<Eigen::Index>(keep.size()));
    out.x_mean.resize(static_cast<Eigen::Index>(keep.size()));
    out.x_sd.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) {
        const Eigen::Index s = keep[i];
        out.X.col(static_cast<Eigen::Index>(i)) = dataset.X.col(s);
        out.x_mean(static_cast<Eigen::Index>(i)) = dataset.x_mean(s);
        out.x_sd(static_cast<Eigen::Index>(i)) = dataset.x_sd(s);
        out.snp_meta.push_back(dataset.snp_meta[static_cast<std::size_t>(s)]);
    }
    return out;
}

} // namespace afcavi
