#include "polyfold/featurizer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "polyfold/alignment.hpp"
#include "polyfold/errors.hpp"
#include "polyfold/rng.hpp"

namespace polyfold {

int aa_index(char one_letter) {
    const char* p = std::strchr(kAaAlphabet, one_letter);
    if (!p || one_letter == '\0') return kAaMask;
    return int(p - kAaAlphabet);
}

char aa_letter(int index) {
    if (index < 0 || index >= kAaMask) return 'X';
    return kAaAlphabet[index];
}

std::vector<char> mask_partners(const std::vector<BackboneChain>& env,
                                const std::string& target_seq, double threshold) {
    std::vector<char> visible(env.size(), 1);
    for (std::size_t i = 0; i < env.size(); ++i) {
        if (env[i].sequence.empty() || target_seq.empty()) continue;
        if (identity(align_pair(env[i].sequence, target_seq)) > threshold) visible[i] = 0;
    }
    return visible;
}

namespace {

void sinusoidal_encoding(int index, double* out /* 16 values */) {
    for (int t = 0; t < kPosEncDim / 2; ++t) {
        const double rate = std::pow(10000.0, 2.0 * double(t) / double(kPosEncDim));
        out[2 * t] = std::sin(double(index) / rate);
        out[2 * t + 1] = std::cos(double(index) / rate);
    }
}

} // namespace

ConformerGraph featurize_conformer(const BackboneChain& target,
                                   const std::vector<BackboneChain>& env, double noise_sigma,
                                   std::uint64_t seed, int knn_k,
                                   const std::vector<char>* env_visible) {
    if (target.size() == 0) fail("EmptyBackbone", "featurize_conformer on empty target chain");
    if (env_visible && env_visible->size() != env.size())
        fail("ShapeMismatch", "visibility flags do not match environment chain count");

    // noisy copies; the noise stream is consumed chain by chain, atom by atom
    Rng rng(seed);
    std::vector<BackboneChain> chains;
    chains.push_back(target);
    for (const auto& e : env) chains.push_back(e);
    if (noise_sigma > 0.0) {
        for (auto& c : chains)
            for (auto& res : c.coords)
                for (auto& atom : res)
                    for (int d = 0; d < 3; ++d) atom[std::size_t(d)] += noise_sigma * rng.gaussian();
    }

    ConformerGraph g;
    g.target_begin = 0;
    g.target_len = int(target.size());

    // positional index restarts per chain with a +100 break between chains,
    // so cross-chain indices never look sequentially adjacent
    int index_offset = 0;
    for (std::size_t ci = 0; ci < chains.size(); ++ci) {
        const BackboneChain& c = chains[ci];
        const auto dih = dihedrals(c);
        const auto virt = virtual_angles(c);
        for (std::size_t i = 0; i < c.size(); ++i) {
            double row[kNodeScalarDim];
            sinusoidal_encoding(index_offset + int(i), row);
            const AngleRow angles[5] = {dih[i][0], dih[i][1], dih[i][2], virt[i][0], virt[i][1]};
            std::array<char, 5> valid{};
            for (int a = 0; a < 5; ++a) {
                // invalid angles carry the zero convention: (sin, cos) = (0, 1)
                row[kPosEncDim + 2 * a] = std::sin(angles[a].value);
                row[kPosEncDim + 2 * a + 1] = std::cos(angles[a].value);
                valid[std::size_t(a)] = angles[a].valid ? 1 : 0;
            }
            g.node_scalar.insert(g.node_scalar.end(), row, row + kNodeScalarDim);
            g.angle_valid.push_back(valid);
            g.ca.push_back(c.coords[i][1]);

            if (ci == 0) {
                g.context_aa.push_back(kAaMask); // the design chain is never exposed
            } else {
                const bool vis = !env_visible || (*env_visible)[ci - 1];
                g.context_aa.push_back(vis ? aa_index(c.sequence[i]) : kAaMask);
            }
        }
        index_offset += int(c.size()) + 100;
    }
    g.n_nodes = int(g.ca.size());

    const Vec3 center = centroid(g.ca);
    g.node_vector.reserve(std::size_t(g.n_nodes) * 3);
    for (const auto& p : g.ca) {
        const Vec3 v = p - center;
        g.node_vector.push_back(v[0]);
        g.node_vector.push_back(v[1]);
        g.node_vector.push_back(v[2]);
    }

    g.edges = knn_graph(g.ca, knn_k);
    g.edge_scalar.reserve(g.edges.edges.size() * kEdgeScalarDim);
    g.edge_vector.reserve(g.edges.edges.size() * 6);
    for (const auto& e : g.edges.edges) {
        const auto rbf = rbf_expand(e.length);
        g.edge_scalar.insert(g.edge_scalar.end(), rbf.begin(), rbf.end());
        g.edge_scalar.push_back(e.length);
        const Vec3 d = g.ca[std::size_t(e.src)] - g.ca[std::size_t(e.dst)];
        const double dn = norm(d);
        for (int x = 0; x < 3; ++x) g.edge_vector.push_back(d[std::size_t(x)] / dn);
        for (int x = 0; x < 3; ++x) g.edge_vector.push_back(-d[std::size_t(x)] / dn);
    }
    return g;
}

MultiGraph build_multigraph(const std::string& pair_id, const BackboneChain& a,
                            const std::vector<BackboneChain>& env_a, const BackboneChain& b,
                            const std::vector<BackboneChain>& env_b, double noise_sigma,
                            std::uint64_t seed, int knn_k, std::size_t min_mapped) {
    const Alignment al = align_pair(a.sequence, b.sequence);
    std::size_t mapped = 0;
    for (const auto tag : al.columns)
        if (tag == ColumnTag::Match || tag == ColumnTag::Mismatch) ++mapped;
    if (mapped < min_mapped)
        fail("AlignmentTooSparse", pair_id + ": only " + std::to_string(mapped)
                                       + " mapped columns between states");

    MultiGraph mg;
    mg.pair_id = pair_id;
    const auto vis_a = mask_partners(env_a, a.sequence);
    const auto vis_b = mask_partners(env_b, b.sequence);
    mg.conformers.push_back(featurize_conformer(a, env_a, noise_sigma,
                                                seed ^ fnv1a(pair_id + "/state_a"), knn_k, &vis_a));
    mg.conformers.push_back(featurize_conformer(b, env_b, noise_sigma,
                                                seed ^ fnv1a(pair_id + "/state_b"), knn_k, &vis_b));

    mg.columns = int(al.size());
    mg.column_map.assign(2, std::vector<int>(std::size_t(mg.columns), -1));
    mg.gap_mask.assign(std::size_t(mg.columns), std::vector<char>(2, 0));
    int ia = 0, ib = 0;
    for (int c = 0; c < mg.columns; ++c) {
        const bool in_a = al.aligned_a[std::size_t(c)] != '-';
        const bool in_b = al.aligned_b[std::size_t(c)] != '-';
        if (in_a) {
            mg.column_map[0][std::size_t(c)] = mg.conformers[0].target_begin + ia;
            mg.gap_mask[std::size_t(c)][0] = 1;
            ++ia;
        }
        if (in_b) {
            mg.column_map[1][std::size_t(c)] = mg.conformers[1].target_begin + ib;
            mg.gap_mask[std::size_t(c)][1] = 1;
            ++ib;
        }
        if (in_a) {
            mg.decode_columns.push_back(c);
            mg.native_aa.push_back(aa_index(a.sequence[std::size_t(ia - 1)]));
        }
    }
    return mg;
}

MultiGraph build_multigraph(const ConformerPair& pair, const StructureResolver& resolver,
                            double noise_sigma, std::uint64_t seed, int knn_k) {
    const BackboneChain a = resolver.backbone(pair.state_a);
    const BackboneChain b = resolver.backbone(pair.state_b);
    auto load_env = [&](const std::vector<ChainRef>& refs) {
        std::vector<BackboneChain> out;
        for (const auto& r : refs) {
            try {
                out.push_back(resolver.backbone(r));
            } catch (const Error&) {
                // partners without a complete protein backbone are skipped
            }
        }
        return out;
    };
    return build_multigraph(pair.pair_id, a, load_env(pair.environment_a), b,
                            load_env(pair.environment_b), noise_sigma, seed, knn_k);
}

MultiGraph build_multigraph_single(const std::string& id, const BackboneChain& chain,
                                   const std::vector<BackboneChain>& env, double noise_sigma,
                                   std::uint64_t seed, int knn_k) {
    MultiGraph mg;
    mg.pair_id = id;
    const auto vis = mask_partners(env, chain.sequence);
    mg.conformers.push_back(
        featurize_conformer(chain, env, noise_sigma, seed ^ fnv1a(id + "/state_a"), knn_k, &vis));
    mg.columns = int(chain.size());
    mg.column_map.assign(1, std::vector<int>(std::size_t(mg.columns)));
    mg.gap_mask.assign(std::size_t(mg.columns), std::vector<char>(1, 1));
    for (int c = 0; c < mg.columns; ++c) {
        mg.column_map[0][std::size_t(c)] = c;
        mg.decode_columns.push_back(c);
        mg.native_aa.push_back(aa_index(chain.sequence[std::size_t(c)]));
    }
    return mg;
}

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

void put_tensor(std::ofstream& out, const std::string& name, const std::vector<std::uint32_t>& dims,
                const std::vector<float>& data) {
    put_u32(out, std::uint32_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    put_u32(out, std::uint32_t(dims.size()));
    for (auto d : dims) put_u32(out, d);
    out.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size() * 4));
}

std::vector<float> to_f32(const std::vector<double>& v) {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = float(v[i]);
    return out;
}

} // namespace

void write_feature_dump(const MultiGraph& mg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("IoFailure", "cannot write " + path);
    out.write("PFTENS01", 8);

    std::uint32_t count = std::uint32_t(mg.conformers.size() * 5 + 2);
    put_u32(out, count);
    for (std::size_t k = 0; k < mg.conformers.size(); ++k) {
        const ConformerGraph& g = mg.conformers[k];
        const std::string prefix = "conf" + std::to_string(k) + "/";
        const auto n = std::uint32_t(g.n_nodes);
        const auto ne = std::uint32_t(g.edges.edges.size());
        put_tensor(out, prefix + "node_scalar", {n, kNodeScalarDim}, to_f32(g.node_scalar));
        put_tensor(out, prefix + "node_vector", {n, 1, 3}, to_f32(g.node_vector));
        put_tensor(out, prefix + "edge_scalar", {ne, kEdgeScalarDim}, to_f32(g.edge_scalar));
        put_tensor(out, prefix + "edge_vector", {ne, 2, 3}, to_f32(g.edge_vector));
        std::vector<float> idx;
        idx.reserve(std::size_t(ne) * 2);
        for (const auto& e : g.edges.edges) {
            idx.push_back(float(e.src));
            idx.push_back(float(e.dst));
        }
        put_tensor(out, prefix + "edge_index", {ne, 2}, idx);
    }
    std::vector<float> gap;
    gap.reserve(std::size_t(mg.columns) * mg.conformers.size());
    for (const auto& col : mg.gap_mask)
        for (char v : col) gap.push_back(float(v));
    put_tensor(out, "gap_mask", {std::uint32_t(mg.columns), std::uint32_t(mg.conformers.size())}, gap);
    std::vector<float> cmap;
    for (const auto& per_conf : mg.column_map)
        for (int v : per_conf) cmap.push_back(float(v));
    put_tensor(out, "column_map", {std::uint32_t(mg.conformers.size()), std::uint32_t(mg.columns)},
               cmap);
    if (!out) fail("IoFailure", "short write to " + path);
}

} // namespace polyfold
