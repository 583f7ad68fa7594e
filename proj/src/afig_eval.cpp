#include "polyfold/afig_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "polyfold/alignment.hpp"
#include "polyfold/errors.hpp"
#include "polyfold/geometry.hpp"
#include "polyfold/parallel.hpp"

namespace polyfold {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::pair<int, int>> aligned_mapping(const BackboneChain& a, const BackboneChain& b) {
    return residue_map(align_pair(a.sequence, b.sequence)).pairs;
}

} // namespace

double afig_rmsd(const BackboneChain& pred, const BackboneChain& target, bool superpose) {
    const auto mapping = aligned_mapping(pred, target);
    if (mapping.size() < 3)
        fail("AlignmentTooSparse", "only " + std::to_string(mapping.size())
                                       + " aligned residues between prediction and target");
    std::vector<Vec3> p, q;
    p.reserve(mapping.size());
    q.reserve(mapping.size());
    const auto pca = pred.ca();
    const auto tca = target.ca();
    for (const auto& [ip, it] : mapping) {
        p.push_back(pca.at(std::size_t(ip)));
        q.push_back(tca.at(std::size_t(it)));
    }
    return rmsd(p, q, superpose);
}

double max_pairwise_rmsd(const std::vector<BackboneChain>& targets) {
    if (targets.size() < 2) fail("ZeroDenominator", "need at least 2 target conformations");
    double best = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i)
        for (std::size_t j = i + 1; j < targets.size(); ++j)
            best = std::max(best, afig_rmsd(targets[i], targets[j], true));
    return best;
}

double struct_norm(double afig, const std::vector<BackboneChain>& targets) {
    const double denom = max_pairwise_rmsd(targets);
    if (denom <= 0.0) fail("ZeroDenominator", "identical target conformations");
    return afig / denom;
}

double decoy_norm(double afig_target, double afig_decoy) {
    if (afig_decoy <= 0.0) fail("ZeroDenominator", "decoy AFIG RMSD is zero");
    return afig_target / afig_decoy;
}

ChainRef select_decoy(const BackboneChain& target,
                      const std::vector<std::pair<ChainRef, BackboneChain>>& pool,
                      double tm_max) {
    if (pool.empty()) fail("NoValidDecoy", "empty decoy pool");
    const auto tca = target.ca();
    const double lo = 0.8 * double(target.size());
    const double hi = 1.2 * double(target.size());

    bool found = false;
    double best_tm = -1.0;
    ChainRef best_ref;
    for (const auto& [ref, chain] : pool) {
        const double len = double(chain.size());
        if (len < lo || len > hi) continue;
        double tm = 0.0;
        try {
            const auto mapping = aligned_mapping(chain, target);
            tm = tm_score(chain.ca(), tca, mapping);
        } catch (const Error&) {
            tm = 0.0; // no usable correspondence reads as fully dissimilar
        }
        if (tm >= tm_max) continue;
        if (tm > best_tm || (tm == best_tm && found && ref.str() < best_ref.str())) {
            best_tm = tm;
            best_ref = ref;
            found = true;
        }
    }
    if (!found) fail("NoValidDecoy", "no pool member below TM " + std::to_string(tm_max)
                                         + " within the length window");
    return best_ref;
}

AggregateRow aggregate(const std::string& protein_id, const std::vector<EvalRecord>& records,
                       double max_inter_target_rmsd, int n_seq, int n_states) {
    // split the grid cells from the decoy controls
    std::map<std::pair<int, std::string>, const EvalRecord*> cells;
    std::map<std::pair<int, std::string>, const EvalRecord*> decoys;
    std::set<std::string> state_labels;
    for (const auto& r : records) {
        if (r.state_label.rfind("decoy", 0) == 0)
            decoys[{r.sequence_index, r.state_label}] = &r;
        else {
            cells[{r.sequence_index, r.state_label}] = &r;
            state_labels.insert(r.state_label);
        }
    }
    if (int(state_labels.size()) != n_states)
        fail("IncompleteGrid", protein_id + ": found " + std::to_string(state_labels.size())
                                   + " states, expected " + std::to_string(n_states));
    for (int s = 0; s < n_seq; ++s)
        for (const auto& label : state_labels)
            if (!cells.count({s, label}))
                fail("IncompleteGrid", protein_id + ": missing sequence " + std::to_string(s)
                                           + " state " + label);

    AggregateRow row;
    row.protein_id = protein_id;
    double best_paired_rmsd = kNaN, best_paired_plddt = kNaN;
    int best_paired_seq = -1;
    double best_single_rmsd = kNaN, best_single_plddt = kNaN;
    double sum_rmsd = 0.0, sum_plddt = 0.0;
    int count = 0;

    for (int s = 0; s < n_seq; ++s) {
        double paired_rmsd = 0.0, paired_plddt = 0.0;
        for (const auto& label : state_labels) {
            const EvalRecord& r = *cells.at({s, label});
            paired_rmsd += r.afig_rmsd / double(n_states);
            paired_plddt += r.mean_plddt / double(n_states);
            sum_rmsd += r.afig_rmsd;
            sum_plddt += r.mean_plddt;
            ++count;
            if (std::isnan(best_single_rmsd) || r.afig_rmsd < best_single_rmsd)
                best_single_rmsd = r.afig_rmsd;
            if (std::isnan(best_single_plddt) || r.mean_plddt > best_single_plddt)
                best_single_plddt = r.mean_plddt;
        }
        if (std::isnan(best_paired_rmsd) || paired_rmsd < best_paired_rmsd) {
            best_paired_rmsd = paired_rmsd;
            best_paired_seq = s;
        }
        if (std::isnan(best_paired_plddt) || paired_plddt > best_paired_plddt)
            best_paired_plddt = paired_plddt;
    }

    row.best_paired_rmsd = best_paired_rmsd;
    row.best_paired_plddt = best_paired_plddt;
    row.best_single_rmsd = best_single_rmsd;
    row.best_single_plddt = best_single_plddt;
    row.all_avg_rmsd = sum_rmsd / double(count);
    row.all_avg_plddt = sum_plddt / double(count);

    // ordering sanity on every aggregation: a single cell can never lose to
    // the mean it participates in
    if (row.best_single_rmsd > row.best_paired_rmsd + 1e-12
        || row.best_single_plddt < row.best_paired_plddt - 1e-12
        || row.best_paired_rmsd > row.all_avg_rmsd + 1e-12)
        fail("InternalError", protein_id + ": aggregate ordering invariant violated");

    if (max_inter_target_rmsd > 0.0)
        row.best_paired_struct_norm = best_paired_rmsd / max_inter_target_rmsd;
    else
        fail("ZeroDenominator", protein_id + ": identical target conformations");

    // Eq. 3 on the winning sequence: its decoy AFIG values averaged
    if (!decoys.empty()) {
        double dsum = 0.0;
        int dcount = 0;
        for (const auto& [key, rec] : decoys)
            if (key.first == best_paired_seq) {
                dsum += rec->afig_rmsd;
                ++dcount;
            }
        if (dcount == 0)
            fail("IncompleteGrid", protein_id + ": no decoy records for sequence "
                                       + std::to_string(best_paired_seq));
        row.best_paired_decoy_norm = decoy_norm(best_paired_rmsd, dsum / double(dcount));
    } else {
        row.best_paired_decoy_norm = kNaN;
    }
    return row;
}

namespace {

const char* kMetricNames[] = {
    "best_paired_rmsd",       "best_paired_struct_norm", "best_paired_decoy_norm",
    "best_single_rmsd",       "all_avg_rmsd",            "best_paired_plddt",
    "best_single_plddt",      "all_avg_plddt",
};

double metric_value(const AggregateRow& r, const std::string& name) {
    if (name == "best_paired_rmsd") return r.best_paired_rmsd;
    if (name == "best_paired_struct_norm") return r.best_paired_struct_norm;
    if (name == "best_paired_decoy_norm") return r.best_paired_decoy_norm;
    if (name == "best_single_rmsd") return r.best_single_rmsd;
    if (name == "all_avg_rmsd") return r.all_avg_rmsd;
    if (name == "best_paired_plddt") return r.best_paired_plddt;
    if (name == "best_single_plddt") return r.best_single_plddt;
    if (name == "all_avg_plddt") return r.all_avg_plddt;
    fail("UnknownMetric", name);
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

} // namespace

void emit_report(const std::vector<AggregateRow>& rows, const std::vector<StatsLine>& stats,
                 const std::string& out_dir) {
    if (rows.empty()) fail("IoFailure", "no aggregate rows to report");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    std::vector<AggregateRow> sorted = rows;
    std::sort(sorted.begin(), sorted.end(),
              [](const AggregateRow& a, const AggregateRow& b) {
                  return a.protein_id < b.protein_id;
              });

    {
        std::ofstream out(fs::path(out_dir) / "report.csv");
        if (!out) fail("IoFailure", "cannot write report.csv under " + out_dir);
        out << "protein,model";
        for (const char* m : kMetricNames) out << "," << m;
        out << "\n";
        AggregateRow mean;
        mean.protein_id = "MEAN";
        for (const auto& r : sorted) {
            out << r.protein_id << "," << r.model;
            for (const char* m : kMetricNames) out << "," << fmt(metric_value(r, m));
            out << "\n";
            mean.best_paired_rmsd += r.best_paired_rmsd / double(sorted.size());
            mean.best_paired_struct_norm += r.best_paired_struct_norm / double(sorted.size());
            mean.best_paired_decoy_norm += r.best_paired_decoy_norm / double(sorted.size());
            mean.best_single_rmsd += r.best_single_rmsd / double(sorted.size());
            mean.all_avg_rmsd += r.all_avg_rmsd / double(sorted.size());
            mean.best_paired_plddt += r.best_paired_plddt / double(sorted.size());
            mean.best_single_plddt += r.best_single_plddt / double(sorted.size());
            mean.all_avg_plddt += r.all_avg_plddt / double(sorted.size());
        }
        mean.model = sorted.front().model;
        out << mean.protein_id << "," << mean.model;
        for (const char* m : kMetricNames) out << "," << fmt(metric_value(mean, m));
        out << "\n";
    }

    for (const char* metric : kMetricNames) {
        std::ofstream out(fs::path(out_dir) / ("plot_" + std::string(metric) + ".csv"));
        if (!out) fail("IoFailure", "cannot write plot files under " + out_dir);
        out << "protein,model,metric,value\n";
        for (const auto& r : sorted)
            out << r.protein_id << "," << r.model << "," << metric << ","
                << fmt(metric_value(r, metric)) << "\n";
    }

    if (!stats.empty()) write_stats(stats, (fs::path(out_dir) / "stats.csv").string());
}

void write_stats(const std::vector<StatsLine>& stats, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail("IoFailure", "cannot write " + path);
    out << "test,statistic,p,n\n";
    for (const auto& s : stats) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6f,%.9g", s.statistic, s.p_value);
        out << s.test_name << "," << buf << "," << s.n << "\n";
    }
}

std::vector<AggregateRow> read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("IoFailure", "cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) fail("IoFailure", "empty report " + path);

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) header.push_back(tok);
    }
    std::vector<AggregateRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> tok;
        std::stringstream ss(line);
        std::string t;
        while (std::getline(ss, t, ',')) tok.push_back(t);
        if (tok.size() != header.size())
            fail("IoFailure", "ragged row in " + path);
        AggregateRow r;
        for (std::size_t i = 0; i < header.size(); ++i) {
            const std::string& h = header[i];
            if (h == "protein")
                r.protein_id = tok[i];
            else if (h == "model")
                r.model = tok[i];
            else {
                const double v = tok[i] == "nan" ? kNaN : std::stod(tok[i]);
                if (h == "best_paired_rmsd") r.best_paired_rmsd = v;
                else if (h == "best_paired_struct_norm") r.best_paired_struct_norm = v;
                else if (h == "best_paired_decoy_norm") r.best_paired_decoy_norm = v;
                else if (h == "best_single_rmsd") r.best_single_rmsd = v;
                else if (h == "all_avg_rmsd") r.all_avg_rmsd = v;
                else if (h == "best_paired_plddt") r.best_paired_plddt = v;
                else if (h == "best_single_plddt") r.best_single_plddt = v;
                else if (h == "all_avg_plddt") r.all_avg_plddt = v;
            }
        }
        if (r.protein_id != "MEAN") rows.push_back(std::move(r));
    }
    return rows;
}

EvalOutput run_eval(const Manifest& manifest, const StructureResolver& structures,
                    const std::string& predictions_dir, const StructureResolver* decoys,
                    const EvalPipelineOptions& opt) {
    namespace fs = std::filesystem;
    std::vector<const ConformerPair*> test_pairs;
    for (const auto& p : manifest.pairs)
        if (p.split == Split::Test) test_pairs.push_back(&p);
    if (test_pairs.empty()) fail("IncompleteGrid", "manifest has no test pairs");

    std::vector<std::pair<ChainRef, BackboneChain>> decoy_pool;
    if (decoys) {
        for (const auto& sid : decoys->structure_ids()) {
            const Structure& s = decoys->structure(sid);
            for (const auto& chain : s.chains) {
                try {
                    decoy_pool.emplace_back(ChainRef{sid, chain.chain_id},
                                            decoys->backbone({sid, chain.chain_id}));
                } catch (const Error&) {
                    // chains without complete backbones cannot serve as decoys
                }
            }
        }
    }

    struct PerProtein {
        std::vector<EvalRecord> records;
        AggregateRow row;
    };
    std::vector<PerProtein> results(test_pairs.size());

    parallel_for(test_pairs.size(), opt.threads, [&](std::size_t idx) {
        const ConformerPair& pair = *test_pairs[idx];
        const std::string& protein = pair.pair_id;
        const BackboneChain target_a = structures.backbone(pair.state_a);
        const BackboneChain target_b = structures.backbone(pair.state_b);
        const double max_inter = max_pairwise_rmsd({target_a, target_b});

        std::map<std::string, BackboneChain> target_of;
        target_of["A"] = target_a;
        target_of["B"] = target_b;
        if (decoys) {
            const ChainRef da = select_decoy(target_a, decoy_pool, opt.tm_max);
            const ChainRef db = select_decoy(target_b, decoy_pool, opt.tm_max);
            target_of["decoyA"] = decoys->backbone(da);
            target_of["decoyB"] = decoys->backbone(db);
        }

        PerProtein& out = results[idx];
        for (int s = 0; s < opt.n_seq; ++s) {
            for (const auto& [label, target] : target_of) {
                const fs::path file = fs::path(predictions_dir)
                                      / (protein + "_" + std::to_string(s) + "_" + label + ".pdb");
                if (!fs::exists(file))
                    fail("IncompleteGrid", protein + ": missing prediction " + file.string());
                const Structure pred = parse_structure(file.string());
                const BackboneChain chain =
                    extract_backbone(pred, pred.chains.front().chain_id).chain;
                EvalRecord rec;
                rec.protein_id = protein;
                rec.sequence_index = s;
                rec.state_label = label;
                rec.afig_rmsd = afig_rmsd(chain, target, opt.superpose);
                rec.mean_plddt = chain.confidence ? read_confidence(chain) : 0.0;
                out.records.push_back(std::move(rec));
            }
        }

        // per-record Eq. 2 / Eq. 3 values for the plot data
        std::map<std::pair<int, std::string>, double> decoy_rmsd;
        for (const auto& r : out.records)
            if (r.state_label.rfind("decoy", 0) == 0)
                decoy_rmsd[{r.sequence_index, r.state_label.substr(5)}] = r.afig_rmsd;
        for (auto& r : out.records) {
            if (r.state_label.rfind("decoy", 0) == 0) {
                r.struct_norm = std::numeric_limits<double>::quiet_NaN();
                r.decoy_norm = std::numeric_limits<double>::quiet_NaN();
                continue;
            }
            r.struct_norm = max_inter > 0 ? r.afig_rmsd / max_inter
                                          : std::numeric_limits<double>::quiet_NaN();
            auto it = decoy_rmsd.find({r.sequence_index, r.state_label});
            r.decoy_norm = it != decoy_rmsd.end() && it->second > 0
                               ? r.afig_rmsd / it->second
                               : std::numeric_limits<double>::quiet_NaN();
        }

        out.row = aggregate(protein, out.records, max_inter, opt.n_seq, 2);
        out.row.model = opt.model_label;
    });

    EvalOutput out;
    for (auto& r : results) {
        out.rows.push_back(std::move(r.row));
        for (auto& rec : r.records) out.records.push_back(std::move(rec));
    }
    return out;
}

} // namespace polyfold
