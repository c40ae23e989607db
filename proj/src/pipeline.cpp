#include "afcavi/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "afcavi/mathx.hpp"

namespace afcavi {

namespace fs = std::filesystem;

std::string cis_trans_name(CisTrans label) {
    switch (label) {
        case CisTrans::cis: return "cis";
        case CisTrans::trans: return "trans";
        case CisTrans::unknown: return "unknown";
    }
    return "?";
}

CisTrans label_cis_trans(long start_bp, long end_bp, std::optional<long> gene_bp,
                         long window_bp) {
    if (!gene_bp) {
        return CisTrans::unknown;
    }
    long dist = 0;
    if (*gene_bp < start_bp) {
        dist = start_bp - *gene_bp;
    } else if (*gene_bp > end_bp) {
        dist = *gene_bp - end_bp;
    }
    return dist <= window_bp ? CisTrans::cis : CisTrans::trans;
}

std::vector<Locus> summarize_loci(const Eigen::MatrixXd& ppi, const Eigen::MatrixXd& beta,
                                  const std::vector<SnpMeta>& snp_meta,
                                  const std::vector<TraitMeta>& trait_meta, double threshold,
                                  long window_bp, bool chained) {
    const Eigen::Index p = ppi.rows();
    const Eigen::Index q = ppi.cols();
    if (beta.rows() != p || beta.cols() != q ||
        snp_meta.size() != static_cast<std::size_t>(p) ||
        trait_meta.size() != static_cast<std::size_t>(q)) {
        throw ValidationError("summarize_loci: shape mismatch");
    }
    for (std::size_t s = 1; s < snp_meta.size(); ++s) {
        if (snp_meta[s].bp < snp_meta[s - 1].bp) {
            throw ValidationError("summarize_loci: snp_meta must be sorted by bp");
        }
    }

    std::vector<long> trait_count(static_cast<std::size_t>(p), 0);
    for (Eigen::Index s = 0; s < p; ++s) {
        for (Eigen::Index t = 0; t < q; ++t) {
            if (ppi(s, t) > threshold) {
                ++trait_count[static_cast<std::size_t>(s)];
            }
        }
    }

    std::vector<bool> assigned(static_cast<std::size_t>(p), false);
    std::vector<Locus> loci;
    for (;;) {
        // Most associated traits, ties broken by smaller bp (= smaller index).
        Eigen::Index lead = -1;
        for (Eigen::Index s = 0; s < p; ++s) {
            if (assigned[static_cast<std::size_t>(s)] ||
                trait_count[static_cast<std::size_t>(s)] == 0) {
                continue;
            }
            if (lead < 0 ||
                trait_count[static_cast<std::size_t>(s)] >
                    trait_count[static_cast<std::size_t>(lead)]) {
                lead = s;
            }
        }
        if (lead < 0) {
            break;
        }

        std::vector<Eigen::Index> member_list;
        auto in_window = [&](Eigen::Index s, long anchor_bp) {
            return std::labs(snp_meta[static_cast<std::size_t>(s)].bp - anchor_bp) <= window_bp;
        };
        assigned[static_cast<std::size_t>(lead)] = true;
        member_list.push_back(lead);
        if (!chained) {
            const long lead_bp = snp_meta[static_cast<std::size_t>(lead)].bp;
            for (Eigen::Index s = 0; s < p; ++s) {
                if (!assigned[static_cast<std::size_t>(s)] &&
                    trait_count[static_cast<std::size_t>(s)] > 0 && in_window(s, lead_bp)) {
                    assigned[static_cast<std::size_t>(s)] = true;
                    member_list.push_back(s);
                }
            }
        } else {
            for (std::size_t head = 0; head < member_list.size(); ++head) {
                const long anchor = snp_meta[static_cast<std::size_t>(member_list[head])].bp;
                for (Eigen::Index s = 0; s < p; ++s) {
                    if (!assigned[static_cast<std::size_t>(s)] &&
                        trait_count[static_cast<std::size_t>(s)] > 0 && in_window(s, anchor)) {
                        assigned[static_cast<std::size_t>(s)] = true;
                        member_list.push_back(s);
                    }
                }
            }
        }
        std::sort(member_list.begin(), member_list.end());

        Locus locus;
        locus.lead_snp = snp_meta[static_cast<std::size_t>(lead)].id;
        locus.start_bp = snp_meta[static_cast<std::size_t>(member_list.front())].bp;
        locus.end_bp = snp_meta[static_cast<std::size_t>(member_list.back())].bp;
        for (Eigen::Index t = 0; t < q; ++t) {
            double best = -1.0;
            Eigen::Index best_s = -1;
            for (const Eigen::Index s : member_list) {
                if (ppi(s, t) > best) {
                    best = ppi(s, t);
                    best_s = s;
                }
            }
            if (best > threshold) {
                LocusAssociation assoc;
                assoc.trait_id = trait_meta[static_cast<std::size_t>(t)].id;
                assoc.max_ppi = best;
                assoc.beta_at_max = beta(best_s, t);
                assoc.label = label_cis_trans(locus.start_bp, locus.end_bp,
                                              trait_meta[static_cast<std::size_t>(t)].gene_bp);
                locus.associations.push_back(assoc);
            }
        }
        loci.push_back(std::move(locus));
    }

    std::sort(loci.begin(), loci.end(),
              [](const Locus& a, const Locus& b) { return a.start_bp < b.start_bp; });
    for (std::size_t i = 0; i < loci.size(); ++i) {
        loci[i].locus_id = static_cast<long>(i + 1);
    }
    return loci;
}

void write_loci(const std::string& path, const std::vector<Locus>& loci) {
    std::ofstream out(path, std::ios::binary);
    out << "locus_id\tstart_bp\tend_bp\tlead_snp\ttrait_id\tmax_ppi\tbeta_at_max\tcis_trans\n";
    char buf[64];
    for (const auto& locus : loci) {
        for (const auto& assoc : locus.associations) {
            out << locus.locus_id << '\t' << locus.start_bp << '\t' << locus.end_bp << '\t'
                << locus.lead_snp << '\t' << assoc.trait_id;
            std::snprintf(buf, sizeof(buf), "\t%.17g\t%.17g\t", assoc.max_ppi,
                          assoc.beta_at_max);
            out << buf << cis_trans_name(assoc.label) << '\n';
        }
    }
}

void PipelineConfig::validate() const {
    if (genotype_path.empty() || response_path.empty() || snp_meta_path.empty() ||
        trait_meta_path.empty() || blocks_path.empty() || out_dir.empty()) {
        throw ValidationError("pipeline config: input and output paths are required");
    }
    if (n_workers < 1) {
        throw ValidationError("pipeline config: n_workers must be >= 1");
    }
    if (!(threshold >= 0.0 && threshold <= 1.0)) {
        throw ValidationError("pipeline config: threshold must lie in [0, 1]");
    }
    if (merge_window_bp < 0 || cis_window_bp < 0) {
        throw ValidationError("pipeline config: windows must be non-negative");
    }
}

PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open pipeline config: " + path);
    }
    PipelineConfig c;
    std::map<std::string, std::function<void(const std::string&)>> setters = {
        {"genotype", [&](const std::string& v) { c.genotype_path = v; }},
        {"response", [&](const std::string& v) { c.response_path = v; }},
        {"snp_meta", [&](const std::string& v) { c.snp_meta_path = v; }},
        {"trait_meta", [&](const std::string& v) { c.trait_meta_path = v; }},
        {"blocks", [&](const std::string& v) { c.blocks_path = v; }},
        {"hyper", [&](const std::string& v) { c.hyper_path = v; }},
        {"out", [&](const std::string& v) { c.out_dir = v; }},
        {"scheme", [&](const std::string& v) { c.scheme = scheme_from_string(v); }},
        {"seed", [&](const std::string& v) { c.seed = std::stoull(v); }},
        {"n_workers", [&](const std::string& v) { c.n_workers = std::stoi(v); }},
        {"threshold", [&](const std::string& v) { c.threshold = std::stod(v); }},
        {"merge_window_bp", [&](const std::string& v) { c.merge_window_bp = std::stol(v); }},
        {"cis_window_bp", [&](const std::string& v) { c.cis_window_bp = std::stol(v); }},
        {"chained_merge", [&](const std::string& v) { c.chained_merge = std::stoi(v) != 0; }},
    };
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        const std::string key = line.substr(0, eq);
        const auto it = setters.find(key);
        if (it == setters.end()) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        it->second(line.substr(eq + 1));
    }
    c.validate();
    return c;
}

namespace {

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t hash = 0xCBF29CE484222325ULL;
    for (const char ch : bytes) {
        hash ^= static_cast<unsigned char>(ch);
        hash *= 0x100000001B3ULL;
    }
    return hash;
}

std::string config_digest(const PipelineConfig& c) {
    std::ostringstream os;
    os << c.genotype_path << '\n'
       << c.response_path << '\n'
       << c.snp_meta_path << '\n'
       << c.trait_meta_path << '\n'
       << c.blocks_path << '\n'
       << c.hyper_path << '\n'
       << scheme_name(c.scheme) << '\n'
       << c.seed << '\n'
       << c.threshold << '\n'
       << c.merge_window_bp << '\n'
       << c.cis_window_bp << '\n'
       << c.chained_merge << '\n';
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a(os.str())));
    return buf;
}

} // namespace

std::vector<Locus> run_pipeline(const PipelineConfig& config) {
    config.validate();
    const auto t_start = std::chrono::steady_clock::now();
    fs::create_directories(config.out_dir);

    const RawMatrix genotype = load_matrix(config.genotype_path);
    const RawMatrix response = load_matrix(config.response_path);
    auto snp_meta = load_snp_meta(config.snp_meta_path);
    auto trait_meta = load_trait_meta(config.trait_meta_path);
    BlockTable blocks = load_blocks(config.blocks_path);
    validate_blocks(blocks);
    std::sort(blocks.begin(), blocks.end(),
              [](const Block& a, const Block& b) { return a.start_bp < b.start_bp; });
    Hyperparameters hyper;
    if (!config.hyper_path.empty()) {
        hyper = load_hyperparameters(config.hyper_path);
    }
    const Dataset dataset = standardize(genotype.values, response.values, snp_meta, trait_meta);

    struct BlockResult {
        Dataset data;
        FitReport report;
    };
    std::vector<BlockResult> results(blocks.size());
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    long failed_block = -1;

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= blocks.size()) {
                return;
            }
            try {
                results[i].data = slice_block(dataset, blocks[i]);
                Engine engine(results[i].data, hyper);
                FitConfig fit;
                fit.scheme = config.scheme;
                fit.seed = splitmix64(config.seed ^ static_cast<std::uint64_t>(blocks[i].id));
                results[i].report = engine.run(fit);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) {
                    error = std::current_exception();
                    failed_block = blocks[i].id;
                }
            }
        }
    };
    if (config.n_workers > 1 && blocks.size() > 1) {
        std::vector<std::thread> pool;
        const int k = std::min<int>(config.n_workers, static_cast<int>(blocks.size()));
        for (int w = 0; w < k; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    } else {
        worker();
    }
    if (error) {
        std::ofstream marker(config.out_dir + "/FAILED", std::ios::binary);
        marker << "block " << failed_block << "\n";
        try {
            std::rethrow_exception(error);
        } catch (const std::exception& e) {
            throw Error("pipeline failed at block " + std::to_string(failed_block) + ": " +
                        e.what());
        }
    }

    // Per-block artifacts and the chromosome-wide assembly.
    Eigen::Index total_p = 0;
    for (const auto& r : results) total_p += r.data.p();
    Eigen::MatrixXd all_ppi(total_p, dataset.q());
    Eigen::MatrixXd all_beta(total_p, dataset.q());
    std::vector<SnpMeta> all_meta;
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        FitConfig fit;
        fit.scheme = config.scheme;
        fit.seed = splitmix64(config.seed ^ static_cast<std::uint64_t>(blocks[i].id));
        write_fit_report(config.out_dir + "/block_" + std::to_string(blocks[i].id),
                         results[i].report, results[i].data, fit);
        all_ppi.middleRows(row, results[i].data.p()) = results[i].report.ppi;
        all_beta.middleRows(row, results[i].data.p()) = results[i].report.beta_mean;
        all_meta.insert(all_meta.end(), results[i].data.snp_meta.begin(),
                        results[i].data.snp_meta.end());
        row += results[i].data.p();
    }

    std::vector<Locus> loci =
        summarize_loci(all_ppi, all_beta, all_meta, trait_meta, config.threshold,
                       config.merge_window_bp, config.chained_merge);
    for (auto& locus : loci) {
        for (auto& assoc : locus.associations) {
            // Re-label with the configured cis window.
            for (const auto& tm : trait_meta) {
                if (tm.id == assoc.trait_id) {
                    assoc.label = label_cis_trans(locus.start_bp, locus.end_bp, tm.gene_bp,
                                                  config.cis_window_bp);
                    break;
                }
            }
        }
    }
    write_loci(config.out_dir + "/loci.tsv", loci);

    {
        std::ofstream manifest(config.out_dir + "/manifest.txt", std::ios::binary);
        manifest << "version=afcavi 1.0\n";
        manifest << "seed=" << config.seed << "\n";
        manifest << "scheme=" << scheme_name(config.scheme) << "\n";
        manifest << "config_hash=" << config_digest(config) << "\n";
        manifest << "n_blocks=" << blocks.size() << "\n";
        manifest << "n_workers=" << config.n_workers << "\n";
        manifest << "n_loci=" << loci.size() << "\n";
        manifest << "wall_time_total="
                 << std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
                        .count()
                 << "\n";
    }
    return loci;
}

std::vector<Locus> run_pipeline(const std::string& config_path) {
    return run_pipeline(load_pipeline_config(config_path));
}

} // namespace afcavi
