#include "polyfold/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "polyfold/alignment.hpp"
#include "polyfold/errors.hpp"
#include "polyfold/geometry.hpp"
#include "polyfold/parallel.hpp"

namespace polyfold {

using ordered_json = nlohmann::ordered_json;

const char* split_name(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Excluded: return "excluded";
    }
    return "train";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    if (name == "excluded") return Split::Excluded;
    fail("SchemaVersionMismatch", "unknown split tag '" + name + "'");
}

std::vector<ConformerCluster> cluster_chains(
    const std::vector<std::pair<ChainRef, std::string>>& chains, double threshold) {
    const std::size_t n = chains.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (find(i) == find(j)) continue;
            if (identity(align_pair(chains[i].second, chains[j].second)) >= threshold)
                parent[find(i)] = find(j);
        }
    }

    std::map<std::size_t, std::vector<ChainRef>> groups;
    for (std::size_t i = 0; i < n; ++i) groups[find(i)].push_back(chains[i].first);

    std::vector<ConformerCluster> out;
    for (auto& [root, members] : groups) {
        std::sort(members.begin(), members.end());
        ConformerCluster c;
        c.cluster_id = members.front().str();
        c.members = std::move(members);
        out.push_back(std::move(c));
    }
    std::sort(out.begin(), out.end(),
              [](const ConformerCluster& a, const ConformerCluster& b) {
                  return a.cluster_id < b.cluster_id;
              });
    return out;
}

double mapped_rmsd(const ChainRecord& a, const ChainRecord& b) {
    const ResidueMap rm = residue_map(align_pair(a.sequence, b.sequence));
    std::vector<Vec3> pa, pb;
    pa.reserve(rm.pairs.size());
    pb.reserve(rm.pairs.size());
    for (const auto& [ia, ib] : rm.pairs) {
        pa.push_back(a.ca.at(std::size_t(ia)));
        pb.push_back(b.ca.at(std::size_t(ib)));
    }
    if (pa.size() < 3) return 0.0; // too sparse to superpose
    return kabsch_superpose(pa, pb).rmsd;
}

void fill_pairwise_rmsd(ConformerCluster& cluster,
                        const std::function<const ChainRecord&(const ChainRef&)>& resolve,
                        unsigned threads) {
    const std::size_t m = cluster.members.size();
    cluster.pairwise_rmsd.assign(m, std::vector<double>(m, 0.0));
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) cells.emplace_back(i, j);

    parallel_for(cells.size(), threads, [&](std::size_t c) {
        const auto [i, j] = cells[c];
        const double v = mapped_rmsd(resolve(cluster.members[i]), resolve(cluster.members[j]));
        cluster.pairwise_rmsd[i][j] = v;
        cluster.pairwise_rmsd[j][i] = v;
    });
}

std::optional<ConformerPair> select_max_rmsd_pair(const ConformerCluster& cluster) {
    const std::size_t m = cluster.members.size();
    if (m < 2) return std::nullopt;
    if (cluster.pairwise_rmsd.size() != m)
        fail("MatrixNotFilled", "pairwise RMSD matrix missing for cluster " + cluster.cluster_id);

    std::size_t bi = 0, bj = 1;
    double best = -1.0;
    // members are sorted, so the first strict maximum is the smallest
    // (ref_a, ref_b) among ties
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j)
            if (cluster.pairwise_rmsd[i][j] > best) {
                best = cluster.pairwise_rmsd[i][j];
                bi = i;
                bj = j;
            }

    ConformerPair p;
    p.state_a = cluster.members[bi];
    p.state_b = cluster.members[bj];
    p.pair_id = p.state_a.safe() + "__" + p.state_b.safe();
    p.inter_state_rmsd = best;
    return p;
}

Manifest split_dataset(std::vector<ConformerPair> pairs,
                       const std::vector<std::string>& benchmark_pair_ids,
                       const TmScoreFn& tm, const SplitOptions& opt) {
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (by_id.count(pairs[i].pair_id))
            fail("DuplicatePairId", "pair id " + pairs[i].pair_id + " not unique");
        by_id[pairs[i].pair_id] = i;
    }

    std::vector<std::size_t> benchmark;
    for (const auto& id : benchmark_pair_ids) {
        auto it = by_id.find(id);
        if (it != by_id.end()) benchmark.push_back(it->second);
    }
    if (benchmark.size() < opt.test_n + opt.val_n)
        fail("BenchmarkTooSmall", std::to_string(benchmark.size()) + " benchmark pairs matched, need "
                                      + std::to_string(opt.test_n + opt.val_n));

    std::sort(benchmark.begin(), benchmark.end(), [&](std::size_t a, std::size_t b) {
        if (pairs[a].inter_state_rmsd != pairs[b].inter_state_rmsd)
            return pairs[a].inter_state_rmsd > pairs[b].inter_state_rmsd;
        return pairs[a].pair_id < pairs[b].pair_id;
    });

    for (auto& p : pairs) p.split = Split::Train;
    for (std::size_t r = 0; r < benchmark.size(); ++r) {
        if (r < opt.test_n)
            pairs[benchmark[r]].split = Split::Test;
        else if (r < opt.test_n + opt.val_n)
            pairs[benchmark[r]].split = Split::Val;
        // the rest rejoin the training pool
    }

    std::vector<ChainRef> heldout;
    for (const auto& p : pairs)
        if (p.split == Split::Test || p.split == Split::Val) {
            heldout.push_back(p.state_a);
            heldout.push_back(p.state_b);
        }

    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < pairs.size(); ++i)
        if (pairs[i].split == Split::Train) candidates.push_back(i);

    std::vector<char> leaky(candidates.size(), 0);
    parallel_for(candidates.size(), opt.threads, [&](std::size_t c) {
        const ConformerPair& p = pairs[candidates[c]];
        for (const ChainRef& state : {p.state_a, p.state_b}) {
            for (const ChainRef& h : heldout) {
                if (tm(state, h) > opt.tm_threshold) {
                    leaky[c] = 1;
                    return;
                }
            }
        }
    });
    for (std::size_t c = 0; c < candidates.size(); ++c)
        if (leaky[c]) pairs[candidates[c]].split = Split::Excluded;

    Manifest m;
    m.pairs = std::move(pairs);
    return m;
}

namespace {

ordered_json ref_to_json(const ChainRef& r) {
    return ordered_json{{"structure_id", r.structure_id}, {"chain_id", r.chain_id}};
}

ChainRef ref_from_json(const ordered_json& j) {
    return ChainRef{j.at("structure_id").get<std::string>(), j.at("chain_id").get<std::string>()};
}

} // namespace

void write_manifest(const Manifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail("IoFailure", "cannot write " + path);
    ordered_json header{
        {"schema", "polyfold.manifest"},
        {"version", m.version},
        {"provenance", m.provenance},
    };
    out << header.dump() << "\n";
    for (const auto& p : m.pairs) {
        ordered_json envs_a = ordered_json::array(), envs_b = ordered_json::array();
        for (const auto& e : p.environment_a) envs_a.push_back(ref_to_json(e));
        for (const auto& e : p.environment_b) envs_b.push_back(ref_to_json(e));
        ordered_json rec{
            {"pair_id", p.pair_id},
            {"state_a", ref_to_json(p.state_a)},
            {"state_b", ref_to_json(p.state_b)},
            {"inter_state_rmsd", p.inter_state_rmsd},
            {"environment_a", envs_a},
            {"environment_b", envs_b},
            {"split", split_name(p.split)},
        };
        out << rec.dump() << "\n";
    }
    if (!out) fail("IoFailure", "short write to " + path);
}

Manifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("IoFailure", "cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) fail("SchemaVersionMismatch", "empty manifest " + path);

    Manifest m;
    try {
        const auto header = ordered_json::parse(line);
        if (header.value("schema", "") != "polyfold.manifest")
            fail("SchemaVersionMismatch", "not a manifest header: " + path);
        m.version = header.at("version").get<int>();
        m.provenance = header.value("provenance", "");
    } catch (const nlohmann::json::exception& e) {
        fail("SchemaVersionMismatch", std::string("bad manifest header: ") + e.what());
    }
    if (m.version != 1)
        fail("SchemaVersionMismatch", "unsupported manifest version " + std::to_string(m.version));

    std::size_t line_no = 1;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto rec = ordered_json::parse(line);
            ConformerPair p;
            p.pair_id = rec.at("pair_id").get<std::string>();
            p.state_a = ref_from_json(rec.at("state_a"));
            p.state_b = ref_from_json(rec.at("state_b"));
            p.inter_state_rmsd = rec.at("inter_state_rmsd").get<double>();
            for (const auto& e : rec.at("environment_a")) p.environment_a.push_back(ref_from_json(e));
            for (const auto& e : rec.at("environment_b")) p.environment_b.push_back(ref_from_json(e));
            p.split = split_from_name(rec.at("split").get<std::string>());
            if (!seen.insert(p.pair_id).second)
                fail("DuplicatePairId", "pair id " + p.pair_id + " repeated in " + path);
            m.pairs.push_back(std::move(p));
        } catch (const nlohmann::json::exception& e) {
            fail("IoFailure", "bad manifest record at line " + std::to_string(line_no) + ": "
                                  + e.what());
        }
    }
    return m;
}

StructureResolver::StructureResolver(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) fail("IoFailure", dir + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".pdb")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        for (auto& s : parse_structures(f.string())) {
            const std::string id = s.id;
            if (!structures_.emplace(id, std::move(s)).second)
                fail("DuplicateStructureId", "structure id " + id + " appears twice under " + dir);
        }
    }
}

const Structure& StructureResolver::structure(const std::string& structure_id) const {
    auto it = structures_.find(structure_id);
    if (it == structures_.end())
        fail("ResolutionFailure", "structure " + structure_id + " not found");
    return it->second;
}

BackboneChain StructureResolver::backbone(const ChainRef& ref) const {
    return extract_backbone(structure(ref.structure_id), ref.chain_id).chain;
}

std::vector<ChainRef> StructureResolver::environment_of(const ChainRef& ref) const {
    std::vector<ChainRef> out;
    for (const auto& c : structure(ref.structure_id).chains)
        if (c.chain_id != ref.chain_id && !c.residues.empty())
            out.push_back(ChainRef{ref.structure_id, c.chain_id});
    return out;
}

std::vector<std::string> StructureResolver::structure_ids() const {
    std::vector<std::string> out;
    for (const auto& [id, s] : structures_) out.push_back(id);
    return out;
}

} // namespace polyfold
