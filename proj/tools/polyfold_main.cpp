#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "polyfold/afig_eval.hpp"
#include "polyfold/alignment.hpp"
#include "polyfold/dataset.hpp"
#include "polyfold/errors.hpp"
#include "polyfold/featurizer.hpp"
#include "polyfold/geometry.hpp"
#include "polyfold/gvpnn.hpp"
#include "polyfold/parallel.hpp"
#include "polyfold/rng.hpp"
#include "polyfold/version.hpp"

namespace fs = std::filesystem;
using namespace polyfold;
using ordered_json = nlohmann::ordered_json;

namespace {

// Every primary output is accompanied by a sidecar echoing the exact
// configuration and seed that produced it; no timestamps, so reruns are
// byte-identical.
void write_run_sidecar(const std::string& out_path, const std::string& command,
                       const ordered_json& config) {
    ordered_json j{
        {"tool", "polyfold"},
        {"version", kVersion},
        {"command", command},
        {"config", config},
    };
    std::ofstream out(out_path + ".run.json");
    out << j.dump(2) << "\n";
}

std::vector<ChainRecord> collect_chains(const StructureResolver& resolver) {
    std::vector<ChainRecord> out;
    for (const auto& sid : resolver.structure_ids()) {
        const Structure& s = resolver.structure(sid);
        for (const auto& chain : s.chains) {
            try {
                const BackboneChain bb = resolver.backbone({sid, chain.chain_id});
                out.push_back({ChainRef{sid, chain.chain_id}, bb.sequence, bb.ca()});
            } catch (const Error&) {
                // chains without complete protein backbones are not usable
            }
        }
    }
    return out;
}

ChainRef parse_chain_ref(const std::string& token) {
    const auto colon = token.find_last_of(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 >= token.size())
        fail("UsageError", "chain reference '" + token + "' is not structure_id:chain");
    return {token.substr(0, colon), token.substr(colon + 1)};
}

int cmd_dataset_build(const std::string& structures_dir, const std::string& benchmark_file,
                      std::size_t test_n, std::size_t val_n, double identity_threshold,
                      double tm_max, const std::string& out_path, unsigned threads) {
    const StructureResolver resolver(structures_dir);
    const std::vector<ChainRecord> chains = collect_chains(resolver);
    if (chains.empty()) fail("NoProteinChains", "no usable chains under " + structures_dir);

    std::map<std::string, const ChainRecord*> by_ref;
    std::vector<std::pair<ChainRef, std::string>> named;
    for (const auto& c : chains) {
        by_ref[c.ref.str()] = &c;
        named.emplace_back(c.ref, c.sequence);
    }

    auto clusters = cluster_chains(named, identity_threshold);
    std::vector<ConformerPair> pairs;
    for (auto& cluster : clusters) {
        if (cluster.members.size() < 2) continue;
        fill_pairwise_rmsd(cluster,
                           [&](const ChainRef& r) -> const ChainRecord& {
                               return *by_ref.at(r.str());
                           },
                           threads);
        auto pair = select_max_rmsd_pair(cluster);
        if (!pair) continue;
        pair->environment_a = resolver.environment_of(pair->state_a);
        pair->environment_b = resolver.environment_of(pair->state_b);
        pairs.push_back(std::move(*pair));
    }

    // benchmark file: two structure_id:chain tokens per line, order-free
    std::vector<std::string> benchmark_ids;
    {
        std::ifstream in(benchmark_file);
        if (!in) fail("IoFailure", "cannot open benchmark file " + benchmark_file);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::stringstream ss(line);
            std::string ta, tb;
            if (!(ss >> ta >> tb))
                fail("UsageError", "benchmark line needs two chain references: " + line);
            ChainRef a = parse_chain_ref(ta), b = parse_chain_ref(tb);
            if (b < a) std::swap(a, b);
            benchmark_ids.push_back(a.safe() + "__" + b.safe());
        }
    }

    const auto tm = [&](const ChainRef& cand, const ChainRef& held) {
        const ChainRecord& c = *by_ref.at(cand.str());
        const ChainRecord& h = *by_ref.at(held.str());
        const auto mapping = residue_map(align_pair(c.sequence, h.sequence)).pairs;
        if (mapping.size() < 5) return 0.0; // no usable correspondence
        return tm_score(c.ca, h.ca, mapping);
    };

    SplitOptions opt;
    opt.test_n = test_n;
    opt.val_n = val_n;
    opt.tm_threshold = tm_max;
    opt.threads = threads;
    Manifest manifest = split_dataset(std::move(pairs), benchmark_ids, tm, opt);
    char prov[256];
    std::snprintf(prov, sizeof prov,
                  "polyfold dataset build identity=%.4f tm_max=%.4f test_n=%zu val_n=%zu",
                  identity_threshold, tm_max, test_n, val_n);
    manifest.provenance = prov;
    write_manifest(manifest, out_path);

    std::size_t n_test = 0, n_val = 0, n_train = 0, n_excl = 0;
    for (const auto& p : manifest.pairs) {
        if (p.split == Split::Test) ++n_test;
        else if (p.split == Split::Val) ++n_val;
        else if (p.split == Split::Train) ++n_train;
        else ++n_excl;
    }
    std::cerr << "dataset: " << manifest.pairs.size() << " pairs (" << n_test << " test, " << n_val
              << " val, " << n_train << " train, " << n_excl << " excluded)\n";
    return 0;
}

std::vector<const ConformerPair*> pairs_of_split(const Manifest& m, const std::string& split) {
    std::vector<const ConformerPair*> out;
    for (const auto& p : m.pairs) {
        if (split == "all" || split_name(p.split) == split) out.push_back(&p);
    }
    if (out.empty()) fail("UsageError", "no pairs in split '" + split + "'");
    return out;
}

int cmd_featurize(const std::string& manifest_path, const std::string& structures_dir,
                  const std::string& out_dir, const std::string& split, double noise,
                  std::uint64_t seed, unsigned threads) {
    const Manifest manifest = read_manifest(manifest_path);
    const StructureResolver resolver(structures_dir);
    const auto pairs = pairs_of_split(manifest, split);
    fs::create_directories(out_dir);
    parallel_for(pairs.size(), threads, [&](std::size_t i) {
        const MultiGraph mg = build_multigraph(*pairs[i], resolver, noise, seed);
        write_feature_dump(mg, (fs::path(out_dir) / (pairs[i]->pair_id + ".feat")).string());
    });
    std::cerr << "featurized " << pairs.size() << " pairs\n";
    return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& structures_dir,
              const std::string& out_path, int epochs, double lr, double noise,
              std::uint64_t seed, int scalar_dim, int vector_dim, double dropout, int batch) {
    const Manifest manifest = read_manifest(manifest_path);
    const StructureResolver resolver(structures_dir);

    ModelConfig cfg;
    cfg.scalar_dim = scalar_dim;
    cfg.vector_dim = vector_dim;
    cfg.dropout = dropout;
    ModelWeights w = ModelWeights::init(cfg, seed);

    std::vector<const ConformerPair*> train_pairs, val_pairs;
    for (const auto& p : manifest.pairs) {
        if (p.split == Split::Train) train_pairs.push_back(&p);
        if (p.split == Split::Val) val_pairs.push_back(&p);
    }
    if (epochs > 0 && train_pairs.empty()) fail("UsageError", "no training pairs in manifest");

    std::ofstream log(out_path + ".trainlog.csv");
    log << "epoch,train_loss,val_loss,selected\n";

    Adam opt{AdamOptions{.lr = lr}};
    double best_val = std::numeric_limits<double>::infinity();
    ModelWeights best = w;
    bool have_best = false;

    for (int epoch = 1; epoch <= epochs; ++epoch) {
        // fresh noise draw each epoch, derived from (seed, epoch)
        std::vector<MultiGraph> graphs;
        graphs.reserve(train_pairs.size());
        for (const auto* p : train_pairs)
            graphs.push_back(build_multigraph(*p, resolver, noise,
                                              seed ^ fnv1a("epoch" + std::to_string(epoch))));
        double loss_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t i = 0; i < graphs.size(); i += std::size_t(batch)) {
            std::vector<const MultiGraph*> b;
            for (std::size_t j = i; j < std::min(graphs.size(), i + std::size_t(batch)); ++j)
                b.push_back(&graphs[j]);
            loss_sum += train_step(w, opt, b, seed ^ fnv1a("step" + std::to_string(epoch) + "/"
                                                           + std::to_string(i)));
            ++steps;
        }
        const double train_loss = loss_sum / double(std::max<std::size_t>(1, steps));

        // checkpoint selection every third epoch on the validation metric
        double val_loss = std::numeric_limits<double>::quiet_NaN();
        bool selected = false;
        if (epoch % 3 == 0 && !val_pairs.empty()) {
            double sum = 0.0;
            for (const auto* p : val_pairs)
                sum += teacher_forced_loss(w, build_multigraph(*p, resolver, 0.0, seed));
            val_loss = sum / double(val_pairs.size());
            if (val_loss < best_val) {
                best_val = val_loss;
                best = w;
                have_best = true;
                selected = true;
            }
        }
        char row[128];
        std::snprintf(row, sizeof row, "%d,%.6f,%.6f,%d\n", epoch, train_loss, val_loss,
                      selected ? 1 : 0);
        log << row;
        std::cerr << "epoch " << epoch << " loss " << train_loss << "\n";
    }

    (have_best ? best : w).save(out_path);
    return 0;
}

int cmd_sample(const std::string& manifest_path, const std::string& structures_dir,
               const std::string& weights_path, const std::string& out_path, int n,
               double temperature, std::uint64_t seed, const std::string& split,
               unsigned threads) {
    const Manifest manifest = read_manifest(manifest_path);
    const StructureResolver resolver(structures_dir);
    const ModelWeights w = ModelWeights::load(weights_path);
    const auto pairs = pairs_of_split(manifest, split);

    std::vector<std::string> blocks(pairs.size());
    parallel_for(pairs.size(), threads, [&](std::size_t i) {
        const MultiGraph mg = build_multigraph(*pairs[i], resolver, 0.0, seed);
        const auto samples = sample_sequences(w, mg, n, temperature, seed);
        std::string block;
        for (std::size_t k = 0; k < samples.size(); ++k) {
            char header[160];
            std::snprintf(header, sizeof header, ">%s|%zu|logp=%.6f\n",
                          pairs[i]->pair_id.c_str(), k, samples[k].total_logp);
            block += header;
            block += samples[k].sequence;
            block += "\n";
        }
        blocks[i] = std::move(block);
    });

    std::ofstream out(out_path);
    if (!out) fail("IoFailure", "cannot write " + out_path);
    for (const auto& b : blocks) out << b;
    std::cerr << "sampled " << n << " sequences for " << pairs.size() << " pairs\n";
    return 0;
}

int cmd_score(const std::string& manifest_path, const std::string& structures_dir,
              const std::string& weights_path, const std::string& out_path,
              const std::string& split, unsigned threads) {
    const Manifest manifest = read_manifest(manifest_path);
    const StructureResolver resolver(structures_dir);
    const ModelWeights w = ModelWeights::load(weights_path);
    const auto pairs = pairs_of_split(manifest, split);

    struct Row {
        std::string id;
        ScoreResult score;
    };
    std::vector<Row> rows(pairs.size());
    parallel_for(pairs.size(), threads, [&](std::size_t i) {
        const MultiGraph mg = build_multigraph(*pairs[i], resolver, 0.0, 1);
        rows[i] = {pairs[i]->pair_id, score_sequences(w, mg, {mg.native_aa})};
    });

    std::ofstream out(out_path);
    if (!out) fail("IoFailure", "cannot write " + out_path);
    out << "protein,recovery,perplexity\n";
    double rec = 0.0, ppl = 0.0;
    for (const auto& r : rows) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f\n", r.id.c_str(), r.score.recovery,
                      r.score.perplexity);
        out << buf;
        rec += r.score.recovery / double(rows.size());
        ppl += r.score.perplexity / double(rows.size());
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "MEAN,%.6f,%.6f\n", rec, ppl);
    out << buf;
    return 0;
}

int cmd_eval(const std::string& manifest_path, const std::string& structures_dir,
             const std::string& predictions_dir, const std::string& decoys_dir,
             const std::string& out_dir, int n_seq, bool no_superpose,
             const std::string& label, unsigned threads) {
    const Manifest manifest = read_manifest(manifest_path);
    const StructureResolver structures(structures_dir);
    std::optional<StructureResolver> decoys;
    if (!decoys_dir.empty()) decoys.emplace(decoys_dir);

    EvalPipelineOptions opt;
    opt.n_seq = n_seq;
    opt.superpose = !no_superpose;
    opt.model_label = label;
    opt.threads = threads;
    const EvalOutput result =
        run_eval(manifest, structures, predictions_dir, decoys ? &*decoys : nullptr, opt);
    emit_report(result.rows, {}, out_dir);

    // long-format per-record values back the per-record plot panels
    std::ofstream rec((fs::path(out_dir) / "records.csv").string());
    rec << "protein,model,sequence,state,afig_rmsd,mean_plddt,struct_norm,decoy_norm\n";
    for (const auto& r : result.records) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s,%s,%d,%s,%.6f,%.6f,%.6f,%.6f\n", r.protein_id.c_str(),
                      label.c_str(), r.sequence_index, r.state_label.c_str(), r.afig_rmsd,
                      r.mean_plddt, r.struct_norm, r.decoy_norm);
        rec << buf;
    }
    std::cerr << "evaluated " << result.rows.size() << " proteins\n";
    return 0;
}

int cmd_stats(const std::string& report_a, const std::string& report_b, const std::string& metric,
              const std::string& out_path) {
    const auto rows_a = read_report(report_a);
    const auto rows_b = read_report(report_b);
    std::map<std::string, double> a_of, b_of;
    auto value_of = [&metric](const AggregateRow& r) {
        if (metric == "best_paired_rmsd") return r.best_paired_rmsd;
        if (metric == "best_paired_struct_norm") return r.best_paired_struct_norm;
        if (metric == "best_paired_decoy_norm") return r.best_paired_decoy_norm;
        if (metric == "best_single_rmsd") return r.best_single_rmsd;
        if (metric == "all_avg_rmsd") return r.all_avg_rmsd;
        if (metric == "best_paired_plddt") return r.best_paired_plddt;
        if (metric == "best_single_plddt") return r.best_single_plddt;
        if (metric == "all_avg_plddt") return r.all_avg_plddt;
        fail("UsageError", "unknown metric " + metric);
    };
    for (const auto& r : rows_a) a_of[r.protein_id] = value_of(r);
    for (const auto& r : rows_b) b_of[r.protein_id] = value_of(r);

    std::vector<double> a, b, diffs;
    for (const auto& [id, va] : a_of) {
        auto it = b_of.find(id);
        if (it == b_of.end()) continue;
        a.push_back(va);
        b.push_back(it->second);
        diffs.push_back(va - it->second);
    }
    if (a.size() < 3) fail("SampleTooSmall", "fewer than 3 shared proteins between reports");

    std::vector<StatsLine> lines;
    try {
        const TestResult sw = shapiro_wilk(diffs);
        lines.push_back({"shapiro_wilk", sw.statistic, sw.p_value, sw.n});
    } catch (const Error& e) {
        std::cerr << "shapiro_wilk skipped: " << e.what() << "\n";
    }
    const TestResult wx = wilcoxon_signed_rank(a, b);
    lines.push_back({wx.exact ? "wilcoxon_signed_rank_exact" : "wilcoxon_signed_rank_approx",
                     wx.statistic, wx.p_value, wx.n});
    write_stats(lines, out_path);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"polyfold: multi-state inverse folding toolkit"};
    app.require_subcommand(1);
    const unsigned threads = thread_count_from_env();
    std::uint64_t seed = 0;

    // dataset build
    auto* dataset = app.add_subcommand("dataset", "dataset construction");
    auto* build = dataset->add_subcommand("build", "cluster chains and build the pair manifest");
    std::string structures_dir, benchmark_file, out_path;
    std::size_t test_n = 94, val_n = 100;
    double identity_threshold = 0.95, tm_max = 0.4;
    build->add_option("--structures", structures_dir, "directory of .pdb files")->required();
    build->add_option("--benchmark", benchmark_file, "curated pair list, two refs per line")
        ->required();
    build->add_option("--test-n", test_n, "test quota");
    build->add_option("--val-n", val_n, "validation quota");
    build->add_option("--identity", identity_threshold, "clustering identity threshold");
    build->add_option("--tm-max", tm_max, "leakage TM-score threshold");
    build->add_option("--out", out_path, "manifest output path")->required();

    // featurize
    auto* feat = app.add_subcommand("featurize", "dump feature tensors per pair");
    std::string manifest_path, feat_split = "all";
    double noise = 0.0;
    feat->add_option("--manifest", manifest_path, "manifest path")->required();
    feat->add_option("--structures", structures_dir, "directory of .pdb files")->required();
    feat->add_option("--out", out_path, "output directory")->required();
    feat->add_option("--split", feat_split, "train/val/test/excluded/all");
    feat->add_option("--noise", noise, "coordinate noise sigma in Angstrom");
    feat->add_option("--seed", seed, "noise seed");

    // train
    auto* train = app.add_subcommand("train", "desk-scale training");
    int epochs = 10, scalar_dim = 128, vector_dim = 16, batch = 1;
    double lr = 1e-3, dropout = 0.1, train_noise = 0.1;
    train->add_option("--manifest", manifest_path)->required();
    train->add_option("--structures", structures_dir)->required();
    train->add_option("--out", out_path, "checkpoint output path")->required();
    train->add_option("--epochs", epochs, "0 writes freshly initialized weights");
    train->add_option("--lr", lr);
    train->add_option("--noise", train_noise);
    train->add_option("--seed", seed);
    train->add_option("--scalar-dim", scalar_dim);
    train->add_option("--vector-dim", vector_dim);
    train->add_option("--dropout", dropout);
    train->add_option("--batch", batch);

    // sample
    auto* sample = app.add_subcommand("sample", "autoregressive sequence sampling");
    std::string weights_path, sample_split = "test";
    int n_samples = 16;
    double temperature = 1.0;
    sample->add_option("--manifest", manifest_path)->required();
    sample->add_option("--structures", structures_dir)->required();
    sample->add_option("--weights", weights_path)->required();
    sample->add_option("--out", out_path, "FASTA output")->required();
    sample->add_option("--n", n_samples, "sequences per pair");
    sample->add_option("--temperature", temperature, "0 means argmax");
    sample->add_option("--seed", seed);
    sample->add_option("--split", sample_split);

    // score
    auto* score = app.add_subcommand("score", "native sequence recovery and perplexity");
    std::string score_split = "test";
    score->add_option("--manifest", manifest_path)->required();
    score->add_option("--structures", structures_dir)->required();
    score->add_option("--weights", weights_path)->required();
    score->add_option("--out", out_path)->required();
    score->add_option("--split", score_split);

    // eval
    auto* eval = app.add_subcommand("eval", "multi-state refoldability evaluation");
    std::string predictions_dir, decoys_dir, label = "polyfold";
    int n_seq = 16;
    bool no_superpose = false;
    eval->add_option("--manifest", manifest_path)->required();
    eval->add_option("--structures", structures_dir)->required();
    eval->add_option("--predictions", predictions_dir)->required();
    eval->add_option("--decoys", decoys_dir, "decoy pool directory");
    eval->add_option("--out", out_path, "report directory")->required();
    eval->add_option("--n-seq", n_seq);
    eval->add_flag("--no-superpose", no_superpose, "frame-fixed RMSD");
    eval->add_option("--label", label, "model label in reports");

    // stats
    auto* stats = app.add_subcommand("stats", "paired significance tests between two reports");
    std::string report_a, report_b, metric = "best_paired_rmsd";
    stats->add_option("--a", report_a)->required();
    stats->add_option("--b", report_b)->required();
    stats->add_option("--metric", metric);
    stats->add_option("--out", out_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (build->parsed()) {
            const int rc = cmd_dataset_build(structures_dir, benchmark_file, test_n, val_n,
                                             identity_threshold, tm_max, out_path, threads);
            write_run_sidecar(out_path, "dataset build",
                              ordered_json{{"structures", structures_dir},
                                           {"benchmark", benchmark_file},
                                           {"test_n", test_n},
                                           {"val_n", val_n},
                                           {"identity", identity_threshold},
                                           {"tm_max", tm_max},
                                           {"out", out_path},
                                           {"seed", seed}});
            return rc;
        }
        if (feat->parsed()) {
            const int rc = cmd_featurize(manifest_path, structures_dir, out_path, feat_split,
                                         noise, seed, threads);
            write_run_sidecar((fs::path(out_path) / "features").string(), "featurize",
                              ordered_json{{"manifest", manifest_path},
                                           {"structures", structures_dir},
                                           {"split", feat_split},
                                           {"noise", noise},
                                           {"seed", seed}});
            return rc;
        }
        if (train->parsed()) {
            const int rc = cmd_train(manifest_path, structures_dir, out_path, epochs, lr,
                                     train_noise, seed, scalar_dim, vector_dim, dropout, batch);
            write_run_sidecar(out_path, "train",
                              ordered_json{{"manifest", manifest_path},
                                           {"structures", structures_dir},
                                           {"epochs", epochs},
                                           {"lr", lr},
                                           {"noise", train_noise},
                                           {"seed", seed},
                                           {"scalar_dim", scalar_dim},
                                           {"vector_dim", vector_dim},
                                           {"dropout", dropout},
                                           {"batch", batch}});
            return rc;
        }
        if (sample->parsed()) {
            const int rc = cmd_sample(manifest_path, structures_dir, weights_path, out_path,
                                      n_samples, temperature, seed, sample_split, threads);
            write_run_sidecar(out_path, "sample",
                              ordered_json{{"manifest", manifest_path},
                                           {"structures", structures_dir},
                                           {"weights", weights_path},
                                           {"n", n_samples},
                                           {"temperature", temperature},
                                           {"seed", seed},
                                           {"split", sample_split}});
            return rc;
        }
        if (score->parsed()) {
            const int rc = cmd_score(manifest_path, structures_dir, weights_path, out_path,
                                     score_split, threads);
            write_run_sidecar(out_path, "score",
                              ordered_json{{"manifest", manifest_path},
                                           {"structures", structures_dir},
                                           {"weights", weights_path},
                                           {"split", score_split}});
            return rc;
        }
        if (eval->parsed()) {
            const int rc = cmd_eval(manifest_path, structures_dir, predictions_dir, decoys_dir,
                                    out_path, n_seq, no_superpose, label, threads);
            write_run_sidecar((fs::path(out_path) / "report").string(), "eval",
                              ordered_json{{"manifest", manifest_path},
                                           {"structures", structures_dir},
                                           {"predictions", predictions_dir},
                                           {"decoys", decoys_dir},
                                           {"n_seq", n_seq},
                                           {"superpose", !no_superpose},
                                           {"label", label}});
            return rc;
        }
        if (stats->parsed()) {
            const int rc = cmd_stats(report_a, report_b, metric, out_path);
            write_run_sidecar(out_path, "stats",
                              ordered_json{{"a", report_a},
                                           {"b", report_b},
                                           {"metric", metric}});
            return rc;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: Unexpected: " << e.what() << "\n";
        return 1;
    }
    std::cerr << app.help();
    return 2;
}
