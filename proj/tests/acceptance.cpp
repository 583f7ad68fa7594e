// Acceptance suite: runs every gate the project must clear and prints one
// PASS/FAIL line per criterion. Exit code 0 only when all pass.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "helpers.hpp"
#include "polyfold/afig_eval.hpp"
#include "polyfold/alignment.hpp"
#include "polyfold/dataset.hpp"
#include "polyfold/featurizer.hpp"
#include "polyfold/geometry.hpp"
#include "polyfold/gvpnn.hpp"
#include "polyfold/stats.hpp"
#include "polyfold/struct_io.hpp"

using namespace polyfold;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, const char* label, bool pass, const std::string& detail = "") {
    std::printf("[%s] criterion %2d: %s%s%s\n", pass ? "PASS" : "FAIL", criterion, label,
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double tensor_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return 1e18;
    double scale = 1e-12, worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        scale = std::max({scale, std::fabs(a[i]), std::fabs(b[i])});
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::fabs(a[i] - b[i]) / scale);
    return worst;
}

std::vector<double> rotate_rows(const std::vector<double>& v, const Mat3& r) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i + 2 < v.size(); i += 3) {
        const Vec3 q = mat_apply(r, {v[i], v[i + 1], v[i + 2]});
        for (int x = 0; x < 3; ++x) out[i + std::size_t(x)] = q[std::size_t(x)];
    }
    return out;
}

BackboneChain make_chain(std::mt19937_64& eng, std::size_t n) {
    BackboneChain c;
    c.chain_id = "A";
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> step_len(3.5, 4.1);
    Vec3 prev{0, 0, 0};
    for (std::size_t i = 0; i < n; ++i) {
        c.sequence.push_back(kAaAlphabet[eng() % 20]);
        if (i > 0) {
            Vec3 step{g(eng), g(eng), g(eng)};
            prev = prev + (step_len(eng) / std::max(norm(step), 1e-9)) * step;
        }
        c.coords.push_back({prev + Vec3{-1.2, 0.4, 0.1}, prev, prev + Vec3{1.2, 0.4, -0.1}});
        c.residue_numbers.push_back(int(i) + 1);
    }
    return c;
}

BackboneChain rigid(const BackboneChain& c, const Mat3& r, const Vec3& t) {
    BackboneChain out = c;
    for (auto& res : out.coords)
        for (auto& atom : res) atom = mat_apply(r, atom) + t;
    return out;
}

BackboneChain wobble(std::mt19937_64& eng, const BackboneChain& c, double sigma) {
    BackboneChain out = c;
    std::normal_distribution<double> g(0.0, sigma);
    for (auto& res : out.coords)
        for (auto& atom : res) atom = atom + Vec3{g(eng), g(eng), g(eng)};
    return out;
}

// ---------------------------------------------------------------- criterion 1
bool equivariance_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 eng(9001);
    ModelConfig cfg;
    cfg.scalar_dim = 12;
    cfg.vector_dim = 3;
    cfg.dropout = 0.0;

    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 6 + eng() % 5;
        const BackboneChain a = make_chain(eng, n);
        const BackboneChain b = wobble(eng, a, 1.0);
        std::vector<BackboneChain> env_a, env_b;
        if (trial % 3 == 0) {
            BackboneChain partner = make_chain(eng, 5);
            for (auto& res : partner.coords)
                for (auto& atom : res) atom = atom + Vec3{14, 3, -2};
            env_a.push_back(partner);
        }

        const Mat3 r = testutil::random_rotation(eng);
        std::uniform_real_distribution<double> u(-15.0, 15.0);
        const Vec3 t{u(eng), u(eng), u(eng)};
        std::vector<BackboneChain> env_a_m;
        for (const auto& e : env_a) env_a_m.push_back(rigid(e, r, t));

        const MultiGraph mg = build_multigraph("t", a, env_a, b, env_b, 0.0, 1, 16, 2);
        const MultiGraph moved =
            build_multigraph("t", rigid(a, r, t), env_a_m, rigid(b, r, t), env_b, 0.0, 1, 16, 2);

        const ModelWeights w = ModelWeights::init(cfg, std::uint64_t(trial) + 17);
        const EncodedConformers e1 = encode(w, mg);
        const EncodedConformers e2 = encode(w, moved);
        for (std::size_t k = 0; k < e1.s.size(); ++k) {
            worst = std::max(worst, tensor_rel_diff(e1.s[k], e2.s[k]));
            worst = std::max(worst, tensor_rel_diff(rotate_rows(e1.v[k], r), e2.v[k]));
        }
        const PooledEmbedding p1 = pool_conformations(e1, mg);
        const PooledEmbedding p2 = pool_conformations(e2, moved);
        worst = std::max(worst, tensor_rel_diff(p1.s, p2.s));
        worst = std::max(worst, tensor_rel_diff(rotate_rows(p1.v, r), p2.v));

        std::vector<int> seq(mg.decode_columns.size());
        for (auto& x : seq) x = int(eng() % 20);
        worst = std::max(worst,
                         tensor_rel_diff(decode_logits(w, mg, seq), decode_logits(w, moved, seq)));
        if (worst > 1e-4) break;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char detail[128];
    std::snprintf(detail, sizeof detail, "max rel dev %.3g, %.1f s (< 60 s)", worst, secs);
    report(1, "SE(3) equivariance across featurizer/encoder/pooling/decoder", worst < 1e-4 && secs < 60.0,
           detail);
    return worst < 1e-4 && secs < 60.0;
}

// ---------------------------------------------------------------- criterion 2
bool conformer_order_invariance() {
    std::mt19937_64 eng(9002);
    ModelConfig cfg;
    cfg.scalar_dim = 12;
    cfg.vector_dim = 3;
    cfg.dropout = 0.0;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 6 + eng() % 5;
        const BackboneChain a = make_chain(eng, n);
        const BackboneChain b = wobble(eng, a, 1.1);
        const MultiGraph mg = build_multigraph("t", a, {}, b, {}, 0.0, 1, 16, 2);
        const MultiGraph swp = swap_conformers(mg);
        const ModelWeights w = ModelWeights::init(cfg, std::uint64_t(trial) + 31);

        const PooledEmbedding p1 = pool_conformations(encode(w, mg), mg);
        const PooledEmbedding p2 = pool_conformations(encode(w, swp), swp);
        worst = std::max(worst, tensor_rel_diff(p1.s, p2.s));
        worst = std::max(worst, tensor_rel_diff(p1.v, p2.v));

        std::vector<int> seq(mg.decode_columns.size());
        for (auto& x : seq) x = int(eng() % 20);
        worst = std::max(worst,
                         tensor_rel_diff(decode_logits(w, mg, seq), decode_logits(w, swp, seq)));
        if (worst > 1e-6) break;
    }
    char detail[64];
    std::snprintf(detail, sizeof detail, "max rel dev %.3g", worst);
    report(2, "conformation-order invariance of pooling and logits", worst < 1e-6, detail);
    return worst < 1e-6;
}

// ---------------------------------------------------------------- criterion 3
bool causality_exhaustive() {
    std::mt19937_64 eng(9003);
    ModelConfig cfg;
    cfg.scalar_dim = 12;
    cfg.vector_dim = 3;
    cfg.dropout = 0.0;
    bool ok = true;
    for (std::size_t len = 5; len <= 8 && ok; ++len) {
        const BackboneChain a = make_chain(eng, len);
        const BackboneChain b = wobble(eng, a, 1.0);
        const MultiGraph mg = build_multigraph("t", a, {}, b, {}, 0.0, 1, 16, 2);
        const ModelWeights w = ModelWeights::init(cfg, 97 + len);

        std::vector<int> base(len);
        for (auto& x : base) x = int(eng() % 20);
        const std::vector<double> base_logits = decode_logits(w, mg, base);

        for (std::size_t j = 0; j < len && ok; ++j) {
            for (int repl = 0; repl < 20 && ok; ++repl) {
                if (repl == base[j]) continue;
                auto seq = base;
                seq[j] = repl;
                const std::vector<double> got = decode_logits(w, mg, seq);
                for (std::size_t p = 0; p <= j && ok; ++p)
                    for (int k = 0; k < 20; ++k)
                        if (got[p * 20 + std::size_t(k)] != base_logits[p * 20 + std::size_t(k)])
                            ok = false;
            }
        }
    }
    report(3, "causality: no backward flow under exhaustive single-position edits", ok);
    return ok;
}

// ---------------------------------------------------------------- criterion 4
bool gradient_oracle() {
    std::mt19937_64 eng(9004);
    const BackboneChain a = make_chain(eng, 6);
    const BackboneChain b = wobble(eng, a, 1.0);
    const MultiGraph mg = build_multigraph("grad", a, {}, b, {}, 0.0, 1, 16, 2);

    ModelConfig cfg;
    cfg.scalar_dim = 8;
    cfg.vector_dim = 2;
    cfg.dropout = 0.0;
    ModelWeights w = ModelWeights::init(cfg, 4242);
    // With relu units, a finite-difference step can straddle an activation
    // kink, where the two-sided quotient measures neither one-sided slope.
    // Shifting the scalar biases moves the fixture's pre-activations away
    // from zero so the h = 1e-4 probe stays inside one linear piece (the
    // backward formulas themselves are step-size independent).
    for (auto& [name, p] : w.params())
        if (name.ends_with("/b_m"))
            for (auto& v : p.value) v += 4.0;
    const GradientResult gr = loss_and_gradients(w, mg, 0, false);

    const double h = 1e-4;
    double worst = 0.0;
    std::size_t checked = 0;
    for (const auto& [name, p] : w.params()) {
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            ModelWeights wp = w, wm = w;
            wp.params()[name].value[k] += h;
            wm.params()[name].value[k] -= h;
            const double fd = (teacher_forced_loss(wp, mg) - teacher_forced_loss(wm, mg)) / (2 * h);
            const double an = gr.grads.at(name)[k];
            const double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-6});
            worst = std::max(worst, rel);
            ++checked;
        }
    }
    char detail[96];
    std::snprintf(detail, sizeof detail, "%zu parameters, worst rel err %.3g", checked, worst);
    report(4, "analytic gradients match central differences (every parameter)", worst < 1e-3,
           detail);
    return worst < 1e-3;
}

// ---------------------------------------------------------------- criterion 5
bool overfit_sanity() {
    std::mt19937_64 eng(9005);
    const BackboneChain a = make_chain(eng, 9);
    const BackboneChain b = wobble(eng, a, 1.0);
    const MultiGraph mg = build_multigraph("fit", a, {}, b, {}, 0.0, 1, 16, 2);

    ModelConfig cfg;
    cfg.scalar_dim = 24;
    cfg.vector_dim = 4;
    cfg.dropout = 0.0;
    ModelWeights w = ModelWeights::init(cfg, 555);
    Adam opt{AdamOptions{.lr = 2e-3}};
    double loss = 1e9;
    for (int step = 0; step < 200; ++step) loss = train_step(w, opt, {&mg}, std::uint64_t(step));

    const auto greedy = sample_sequences(w, mg, 1, 0.0, 3);
    const bool recovered = sequence_to_indices(greedy[0].sequence) == mg.native_aa;
    char detail[96];
    std::snprintf(detail, sizeof detail, "final loss %.4f nats/pos, argmax recovery %s", loss,
                  recovered ? "1.0" : "< 1.0");
    report(5, "200-step overfit drives loss below 0.1 and recovers the native sequence",
           loss < 0.1 && recovered, detail);
    return loss < 0.1 && recovered;
}

// ---------------------------------------------------------------- criterion 6
bool geometry_oracles() {
    std::mt19937_64 eng(9006);
    bool ok = true;
    std::string why;

    // Kabsch vs the 1-degree SO(3) grid search
    std::normal_distribution<double> noise(0.0, 0.3);
    double worst_gap = 0.0;
    for (int trial = 0; trial < 20 && ok; ++trial) {
        const auto p = testutil::random_points(eng, 4, 3.0);
        auto q = testutil::apply_rigid(p, testutil::random_rotation(eng), {1.5, -0.5, 2.0});
        for (auto& v : q) v = v + Vec3{noise(eng), noise(eng), noise(eng)};
        const double ours = kabsch_superpose(p, q).rmsd;
        const double grid = testutil::grid_search_min_rmsd(p, q);
        worst_gap = std::max(worst_gap, grid - ours);
        if (ours > grid + 1e-9 || grid - ours > 2e-2) {
            ok = false;
            why = "kabsch vs grid";
        }
    }

    // k-NN equals brute force for every n <= 64
    for (int n = 2; n <= 64 && ok; ++n) {
        const auto pts = testutil::random_points(eng, std::size_t(n), 12.0);
        for (int k : {1, 16}) {
            const EdgeList g = knn_graph(pts, k);
            std::set<std::pair<int, int>> got;
            for (const auto& e : g.edges) got.emplace(e.src, e.dst);
            if (got != testutil::brute_force_knn(pts, k)) {
                ok = false;
                why = "knn n=" + std::to_string(n);
            }
        }
    }

    // TM-score identity and rigid-motion invariance
    for (int trial = 0; trial < 5 && ok; ++trial) {
        const auto p = testutil::helix_ca(30 + std::size_t(trial) * 7);
        std::vector<std::pair<int, int>> mapping;
        for (int i = 0; i < int(p.size()); ++i) mapping.emplace_back(i, i);
        if (tm_score(p, p, mapping) != 1.0) {
            ok = false;
            why = "tm identity";
            break;
        }
        const auto q = testutil::apply_rigid(p, testutil::random_rotation(eng), {5, 1, -9});
        if (std::fabs(tm_score(q, p, mapping) - 1.0) > 1e-6) {
            ok = false;
            why = "tm rigid";
        }
    }

    char detail[96];
    std::snprintf(detail, sizeof detail, "grid gap max %.4f A%s%s", worst_gap,
                  why.empty() ? "" : ", failed at ", why.c_str());
    report(6, "geometry oracles: Kabsch grid search, exhaustive k-NN, TM-score identities", ok,
           detail);
    return ok;
}

// ---------------------------------------------------------------- criterion 7
bool dataset_logic() {
    std::mt19937_64 eng(9007);
    bool ok = true;
    std::string why;

    // 30 chains: 10 planted families of 3 sequence-identical conformers
    std::vector<std::pair<ChainRef, std::string>> chains;
    std::map<std::string, ChainRecord> records;
    for (int f = 0; f < 10; ++f) {
        std::string seq;
        for (int i = 0; i < 18; ++i) seq.push_back(kAaAlphabet[(eng() + std::size_t(f) * 3) % 20]);
        for (int m = 0; m < 3; ++m) {
            ChainRecord r;
            r.ref = {"f" + std::to_string(f) + "m" + std::to_string(m), "A"};
            r.sequence = seq;
            r.ca = testutil::random_points(eng, 18, 7.0);
            chains.emplace_back(r.ref, r.sequence);
            records[r.ref.str()] = r;
        }
    }

    auto clusters = cluster_chains(chains, 0.95);
    // oracle: transitive closure over thresholded identity
    {
        const std::size_t n = chains.size();
        std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
        for (std::size_t i = 0; i < n; ++i) {
            adj[i][i] = true;
            for (std::size_t j = 0; j < n; ++j)
                if (i != j)
                    adj[i][j] =
                        identity(align_pair(chains[i].second, chains[j].second)) >= 0.95;
        }
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    if (adj[i][k] && adj[k][j]) adj[i][j] = true;
        std::set<std::set<std::string>> oracle;
        std::vector<bool> used(n, false);
        for (std::size_t i = 0; i < n; ++i) {
            if (used[i]) continue;
            std::set<std::string> g;
            for (std::size_t j = 0; j < n; ++j)
                if (adj[i][j]) {
                    g.insert(chains[j].first.str());
                    used[j] = true;
                }
            oracle.insert(g);
        }
        std::set<std::set<std::string>> got;
        for (const auto& c : clusters) {
            std::set<std::string> g;
            for (const auto& m : c.members) g.insert(m.str());
            got.insert(g);
        }
        if (got != oracle || clusters.size() != 10) {
            ok = false;
            why = "clustering";
        }
    }

    // max-RMSD pair selection vs exhaustive scan, then the split
    std::vector<ConformerPair> pairs;
    for (auto& cluster : clusters) {
        fill_pairwise_rmsd(cluster, [&](const ChainRef& r) -> const ChainRecord& {
            return records.at(r.str());
        });
        auto pair = select_max_rmsd_pair(cluster);
        if (!pair) continue;
        double best = -1;
        std::pair<std::string, std::string> arg;
        for (std::size_t i = 0; i < cluster.members.size(); ++i)
            for (std::size_t j = i + 1; j < cluster.members.size(); ++j) {
                const double v = mapped_rmsd(records.at(cluster.members[i].str()),
                                             records.at(cluster.members[j].str()));
                if (v > best) {
                    best = v;
                    arg = {cluster.members[i].str(), cluster.members[j].str()};
                }
            }
        if (pair->state_a.str() != arg.first || pair->state_b.str() != arg.second
            || std::fabs(pair->inter_state_rmsd - best) > 1e-12) {
            ok = false;
            why = "max pair";
        }
        pairs.push_back(std::move(*pair));
    }

    // precomputed TM matrix with planted leakage
    std::map<std::pair<std::string, std::string>, double> tm_matrix;
    std::uniform_real_distribution<double> utm(0.05, 0.38);
    std::vector<std::string> ids;
    for (const auto& p : pairs) ids.push_back(p.pair_id);
    std::sort(ids.begin(), ids.end());
    const std::vector<std::string> benchmark(ids.begin(), ids.begin() + 4);
    for (const auto& cand : pairs)
        for (const auto& held : pairs)
            for (const auto& cs : {cand.state_a, cand.state_b})
                for (const auto& hs : {held.state_a, held.state_b})
                    tm_matrix[{cs.str(), hs.str()}] = utm(eng);
    // plant two violations from non-benchmark pairs onto benchmark states
    tm_matrix[{pairs[5].state_a.str(), pairs[0].state_b.str()}] = 0.81;
    tm_matrix[{pairs[7].state_b.str(), pairs[2].state_a.str()}] = 0.47;

    const auto tm = [&](const ChainRef& c, const ChainRef& h) {
        return tm_matrix.at({c.str(), h.str()});
    };
    SplitOptions opt;
    opt.test_n = 2;
    opt.val_n = 2;
    const Manifest manifest = split_dataset(pairs, benchmark, tm, opt);

    // post hoc recomputation: no train pair above threshold to any heldout
    std::size_t excluded = 0;
    for (const auto& p : manifest.pairs) {
        if (p.split == Split::Excluded) ++excluded;
        if (p.split != Split::Train) continue;
        for (const auto& h : manifest.pairs) {
            if (h.split != Split::Test && h.split != Split::Val) continue;
            for (const auto& cs : {p.state_a, p.state_b})
                for (const auto& hs : {h.state_a, h.state_b})
                    if (tm(cs, hs) > opt.tm_threshold) {
                        ok = false;
                        why = "leakage violation";
                    }
        }
    }
    if (excluded == 0) {
        ok = false;
        why = "planted leaks not excluded";
    }

    report(7, "dataset: closure clustering, exhaustive pair scan, leak-free split", ok,
           why.empty() ? "" : why);
    return ok;
}

// ---------------------------------------------------------------- criterion 8
bool aggregation_fixture() {
    // hand-built grid: baseline 5.0 everywhere; sequence 3 gets (2.0, 4.0)
    // and pLDDT (80, 60); decoys fixed at 8.0
    std::vector<EvalRecord> records;
    for (int s = 0; s < 16; ++s) {
        for (const char* lbl : {"A", "B"}) {
            EvalRecord r;
            r.protein_id = "p";
            r.sequence_index = s;
            r.state_label = lbl;
            r.afig_rmsd = s == 3 ? (std::string(lbl) == "A" ? 2.0 : 4.0) : 5.0;
            r.mean_plddt = s == 3 ? (std::string(lbl) == "A" ? 80.0 : 60.0) : 50.0;
            records.push_back(r);
        }
        for (const char* lbl : {"decoyA", "decoyB"}) {
            EvalRecord r;
            r.protein_id = "p";
            r.sequence_index = s;
            r.state_label = lbl;
            r.afig_rmsd = 8.0;
            records.push_back(r);
        }
    }
    const double max_inter = 2.0;
    const AggregateRow row = aggregate("p", records, max_inter, 16, 2);

    // hand values: best paired = (2+4)/2 = 3; best single = 2;
    // all avg = (30*5 + 2 + 4)/32 = 4.875; plddt best paired = (80+60)/2 = 70;
    // struct norm = 3/2 = 1.5; decoy norm = 3/8 = 0.375
    bool ok = row.best_paired_rmsd == 3.0 && row.best_single_rmsd == 2.0
              && row.all_avg_rmsd == 4.875 && row.best_paired_plddt == 70.0
              && row.best_single_plddt == 80.0 && row.all_avg_plddt == (30 * 50.0 + 140.0) / 32.0;
    ok = ok && std::fabs(row.best_paired_struct_norm - 1.5) < 1e-9
         && std::fabs(row.best_paired_decoy_norm - 0.375) < 1e-9;

    char detail[128];
    std::snprintf(detail, sizeof detail,
                  "best paired %.3f, best single %.3f, all avg %.4f, norms %.3f / %.3f",
                  row.best_paired_rmsd, row.best_single_rmsd, row.all_avg_rmsd,
                  row.best_paired_struct_norm, row.best_paired_decoy_norm);
    report(8, "hand-built 16x2 grid reproduces the aggregation semantics exactly", ok, detail);
    return ok;
}

// ---------------------------------------------------------------- criterion 9
bool statistics_gates() {
    bool ok = true;
    std::string why;

    // exact n=6 vs direct 64-outcome enumeration
    const std::vector<double> a = {12.1, 9.4, 15.2, 8.8, 10.0, 11.5};
    const std::vector<double> b = {10.0, 9.9, 11.1, 9.0, 8.2, 10.1};
    {
        const TestResult r = wilcoxon_signed_rank(a, b, WilcoxonMode::Exact);
        std::vector<double> d(6), rank(6);
        for (int i = 0; i < 6; ++i) d[std::size_t(i)] = a[std::size_t(i)] - b[std::size_t(i)];
        for (int i = 0; i < 6; ++i) {
            double below = 0, equal = 0;
            for (int j = 0; j < 6; ++j) {
                if (std::fabs(d[std::size_t(j)]) < std::fabs(d[std::size_t(i)])) ++below;
                if (std::fabs(d[std::size_t(j)]) == std::fabs(d[std::size_t(i)])) ++equal;
            }
            rank[std::size_t(i)] = below + (equal + 1) / 2.0;
        }
        double total = 0, wp = 0;
        for (int i = 0; i < 6; ++i) {
            total += rank[std::size_t(i)];
            if (d[std::size_t(i)] > 0) wp += rank[std::size_t(i)];
        }
        const double w_small = std::min(wp, total - wp);
        std::size_t hits = 0;
        for (std::size_t mask = 0; mask < 64; ++mask) {
            double s = 0;
            for (int i = 0; i < 6; ++i)
                if (mask & (1u << i)) s += rank[std::size_t(i)];
            if (s <= w_small + 1e-9 || s >= total - w_small - 1e-9) ++hits;
        }
        if (r.p_value != double(hits) / 64.0) {
            ok = false;
            why = "wilcoxon exact n=6";
        }
    }

    // n=12 approximation within 0.01 of exact
    {
        std::mt19937_64 eng(9009);
        std::normal_distribution<double> g(0.5, 1.0);
        double worst = 0.0;
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> x(12), zero(12, 0.0);
            bool nonzero = true;
            for (auto& v : x) {
                v = g(eng);
                if (v == 0.0) nonzero = false;
            }
            if (!nonzero) continue;
            const TestResult ex = wilcoxon_signed_rank(x, zero, WilcoxonMode::Exact);
            const TestResult ap = wilcoxon_signed_rank(x, zero, WilcoxonMode::Approx);
            worst = std::max(worst, std::fabs(ex.p_value - ap.p_value));
        }
        if (worst >= 0.01) {
            ok = false;
            why = "wilcoxon approx n=12 off by " + std::to_string(worst);
        }
    }

    // Shapiro-Wilk gates plus the published-example cross-check
    {
        std::vector<double> normal_q, expo_q;
        for (std::size_t i = 1; i <= 50; ++i) {
            normal_q.push_back(normal_quantile((double(i) - 0.5) / 50.0));
            expo_q.push_back(-std::log(1.0 - (double(i) - 0.5) / 50.0));
        }
        const TestResult rn = shapiro_wilk(normal_q);
        const TestResult re = shapiro_wilk(expo_q);
        if (!(rn.p_value > 0.1)) {
            ok = false;
            why = "shapiro normal sample";
        }
        if (!(re.p_value < 0.01)) {
            ok = false;
            why = "shapiro exponential sample";
        }
        // classic 11-point weights data: reference implementations report
        // W ~= 0.7888, p ~= 0.0067
        const std::vector<double> weights = {148, 154, 158, 160, 161, 162,
                                             166, 170, 182, 195, 236};
        const TestResult rw = shapiro_wilk(weights);
        if (std::fabs(rw.statistic - 0.7888) > 0.005 || std::fabs(rw.p_value - 0.0067) > 0.003) {
            ok = false;
            char buf[96];
            std::snprintf(buf, sizeof buf, "published example W=%.4f p=%.4f", rw.statistic,
                          rw.p_value);
            why = buf;
        }
    }

    report(9, "statistics: exact enumeration, approximation gap, Shapiro-Wilk gates", ok, why);
    return ok;
}

// --------------------------------------------------------------- criterion 10
bool cli_determinism() {
    const std::string bin = POLYFOLD_BIN;
    auto quote = [](const std::string& s) { return "'" + s + "'"; };
    testutil::TempDir root("accept");
    const fs::path structures = root.path / "structures";
    const auto corpus = testutil::write_corpus(structures);
    std::string bench;
    for (int f = 2; f < 6; ++f)
        bench += corpus.families[std::size_t(f)].id_a + ":A "
                 + corpus.families[std::size_t(f)].id_b + ":A\n";
    testutil::write_file((root.path / "benchmark.txt").string(), bench);

    bool ok = true;
    std::string why;
    auto run = [&](const std::string& cmd, int threads) {
        const int rc = testutil::run_cmd("POLYFOLD_THREADS=" + std::to_string(threads) + " "
                                         + cmd + " > /dev/null 2>&1");
        if (rc != 0) {
            ok = false;
            why = "command failed: " + cmd;
        }
        return rc == 0;
    };

    // dataset
    const std::string manifest = (root.path / "m.jsonl").string();
    std::string first;
    if (run(quote(bin) + " dataset build --structures " + quote(structures.string())
                + " --benchmark " + quote((root.path / "benchmark.txt").string())
                + " --test-n 2 --val-n 1 --out " + quote(manifest),
            1))
        first = testutil::read_file_bytes(manifest);
    for (int threads : {1, 4}) {
        if (!ok) break;
        run(quote(bin) + " dataset build --structures " + quote(structures.string())
                + " --benchmark " + quote((root.path / "benchmark.txt").string())
                + " --test-n 2 --val-n 1 --out " + quote(manifest),
            threads);
        if (testutil::read_file_bytes(manifest) != first) {
            ok = false;
            why = "dataset bytes differ";
        }
    }

    // sample (freshly initialized checkpoint, same seed, 1 vs 4 threads)
    const std::string ckpt = (root.path / "w.ckpt").string();
    if (ok)
        run(quote(bin) + " train --manifest " + quote(manifest) + " --structures "
                + quote(structures.string()) + " --out " + quote(ckpt)
                + " --epochs 0 --scalar-dim 12 --vector-dim 3 --seed 5",
            1);
    const std::string fasta = (root.path / "s.fasta").string();
    std::string fasta_first;
    if (ok && run(quote(bin) + " sample --manifest " + quote(manifest) + " --structures "
                      + quote(structures.string()) + " --weights " + quote(ckpt) + " --out "
                      + quote(fasta) + " --n 2 --seed 11",
                  1))
        fasta_first = testutil::read_file_bytes(fasta);
    for (int threads : {1, 4}) {
        if (!ok) break;
        run(quote(bin) + " sample --manifest " + quote(manifest) + " --structures "
                + quote(structures.string()) + " --weights " + quote(ckpt) + " --out "
                + quote(fasta) + " --n 2 --seed 11",
            threads);
        if (testutil::read_file_bytes(fasta) != fasta_first) {
            ok = false;
            why = "sample bytes differ";
        }
    }

    // eval (synthetic predictions = perturbed targets)
    if (ok) {
        const Manifest m = read_manifest(manifest);
        const StructureResolver resolver(structures.string());
        const fs::path pred = root.path / "pred";
        fs::create_directories(pred);
        for (const auto& p : m.pairs) {
            if (p.split != Split::Test) continue;
            const std::map<std::string, ChainRef> targets = {{"A", p.state_a}, {"B", p.state_b}};
            for (int s = 0; s < 2; ++s)
                for (const auto& [label, ref] : targets) {
                    BackboneChain chain = resolver.backbone(ref);
                    for (std::size_t i = chain.size() / 2; i < chain.size(); ++i)
                        for (auto& atom : chain.coords[i])
                            atom = atom + Vec3{0.4 * double(s + 1), 0.0, 0.1};
                    std::vector<double> plddt(chain.size(), 55.0 + 5.0 * double(s));
                    write_backbone_pdb(chain, (pred / (p.pair_id + "_" + std::to_string(s) + "_"
                                                       + label + ".pdb")).string(),
                                       &plddt);
                }
        }
        const std::string evdir = (root.path / "ev").string();
        std::string report_first;
        if (run(quote(bin) + " eval --manifest " + quote(manifest) + " --structures "
                    + quote(structures.string()) + " --predictions " + quote(pred.string())
                    + " --out " + quote(evdir) + " --n-seq 2",
                1))
            report_first = testutil::read_file_bytes(evdir + "/report.csv");
        for (int threads : {1, 4}) {
            if (!ok) break;
            run(quote(bin) + " eval --manifest " + quote(manifest) + " --structures "
                    + quote(structures.string()) + " --predictions " + quote(pred.string())
                    + " --out " + quote(evdir) + " --n-seq 2",
                threads);
            if (testutil::read_file_bytes(evdir + "/report.csv") != report_first) {
                ok = false;
                why = "eval bytes differ";
            }
        }
    }

    report(10, "CLI determinism: byte-identical dataset/sample/eval reruns at 1 and N threads",
           ok, why);
    return ok;
}

} // namespace

int main() {
    std::printf("polyfold acceptance suite\n");
    equivariance_suite();
    conformer_order_invariance();
    causality_exhaustive();
    gradient_oracle();
    overfit_sanity();
    geometry_oracles();
    dataset_logic();
    aggregation_fixture();
    statistics_gates();
    cli_determinism();
    if (g_failures == 0) {
        std::printf("all criteria passed\n");
        return 0;
    }
    std::printf("%d criteria FAILED\n", g_failures);
    return 1;
}
