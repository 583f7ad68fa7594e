#include "polyfold/gvpnn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "polyfold/errors.hpp"
#include "polyfold/rng.hpp"

namespace polyfold {

namespace {

using ad::Shape;
using ad::Tape;

struct GvpDims {
    int s_in, v_in, s_out, v_out;
    int hidden() const { return std::max(v_in, v_out); }
};

void add_gvp_params(std::map<std::string, Param>& p, const std::string& prefix, GvpDims d) {
    const int h = d.hidden();
    p[prefix + "/w_h"] = {Shape::mat(h, d.v_in), {}};
    p[prefix + "/w_m"] = {Shape::mat(d.s_out, d.s_in + h), {}};
    p[prefix + "/b_m"] = {Shape::mat(1, d.s_out), {}};
    p[prefix + "/w_mu"] = {Shape::mat(d.v_out, h), {}};
    p[prefix + "/w_g"] = {Shape::mat(d.v_out, d.s_out), {}};
    p[prefix + "/b_g"] = {Shape::mat(1, d.v_out), {}};
}

GvpDims embed_dims(const ModelConfig& c) {
    return {kNodeScalarDim, 1, c.scalar_dim, c.vector_dim};
}
GvpDims enc_msg_dims(const ModelConfig& c) {
    return {2 * c.scalar_dim + kEdgeScalarDim, 2 * c.vector_dim + 2, c.scalar_dim, c.vector_dim};
}
GvpDims dec_msg_dims(const ModelConfig& c) {
    // decoder messages carry the sender's residue embedding as extra scalars
    return {3 * c.scalar_dim + kEdgeScalarDim, 2 * c.vector_dim + 2, c.scalar_dim, c.vector_dim};
}
GvpDims upd_dims(const ModelConfig& c) {
    return {2 * c.scalar_dim, 2 * c.vector_dim, c.scalar_dim, c.vector_dim};
}

} // namespace

ModelWeights ModelWeights::init(const ModelConfig& cfg, std::uint64_t seed) {
    ModelWeights w;
    w.cfg_ = cfg;
    auto& p = w.params_;

    p["aa_embed"] = {Shape::mat(kAaTypes, cfg.scalar_dim), {}};
    add_gvp_params(p, "embed", embed_dims(cfg));
    for (int l = 0; l < ModelConfig::kEncoderLayers; ++l) {
        add_gvp_params(p, "enc" + std::to_string(l) + "/msg", enc_msg_dims(cfg));
        add_gvp_params(p, "enc" + std::to_string(l) + "/upd", upd_dims(cfg));
    }
    for (int l = 0; l < ModelConfig::kDecoderLayers; ++l) {
        add_gvp_params(p, "dec" + std::to_string(l) + "/msg", dec_msg_dims(cfg));
        add_gvp_params(p, "dec" + std::to_string(l) + "/upd", upd_dims(cfg));
    }
    p["out/w"] = {Shape::mat(ModelConfig::kLogits, cfg.scalar_dim), {}};
    p["out/b"] = {Shape::mat(1, ModelConfig::kLogits), {}};

    // deterministic fill in name order: fan-in scaled uniform for scalar
    // maps, smaller uniform for vector channel mixes, zero biases
    Rng rng(seed);
    for (auto& [name, param] : p) {
        param.value.assign(param.shape.size(), 0.0);
        const bool bias = name.ends_with("/b_m") || name.ends_with("/b_g") || name == "out/b";
        if (bias) continue;
        const int fan_in = param.shape.d[1];
        double scale;
        if (name.ends_with("/w_h") || name.ends_with("/w_mu"))
            scale = 1.0 / std::sqrt(double(fan_in));
        else if (name == "aa_embed")
            scale = 0.3;
        else
            scale = std::sqrt(6.0 / double(fan_in));
        for (auto& v : param.value) v = (2.0 * rng.uniform() - 1.0) * scale;
    }
    return w;
}

const Param& ModelWeights::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) fail("UnknownParameter", name);
    return it->second;
}

std::size_t ModelWeights::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.value.size();
    return n;
}

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}
std::uint32_t get_u32(std::ifstream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

} // namespace

void ModelWeights::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("IoFailure", "cannot write " + path);
    out.write("PFCKPT01", 8);
    put_u32(out, 1);
    put_u32(out, std::uint32_t(cfg_.scalar_dim));
    put_u32(out, std::uint32_t(cfg_.vector_dim));
    put_u32(out, std::uint32_t(cfg_.knn));
    const float drop = float(cfg_.dropout);
    out.write(reinterpret_cast<const char*>(&drop), 4);

    put_u32(out, std::uint32_t(params_.size()));
    for (const auto& [name, p] : params_) {
        put_u32(out, std::uint32_t(name.size()));
        out.write(name.data(), std::streamsize(name.size()));
        put_u32(out, std::uint32_t(p.shape.ndim));
        for (int i = 0; i < p.shape.ndim; ++i) put_u32(out, std::uint32_t(p.shape.d[std::size_t(i)]));
        std::vector<float> data(p.value.size());
        for (std::size_t i = 0; i < data.size(); ++i) data[i] = float(p.value[i]);
        out.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size() * 4));
    }
    if (!out) fail("IoFailure", "short write to " + path);
}

ModelWeights ModelWeights::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("IoFailure", "cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (std::string(magic, 8) != "PFCKPT01")
        fail("CheckpointMismatch", path + " is not a checkpoint file");
    if (get_u32(in) != 1) fail("CheckpointMismatch", "unsupported checkpoint version");

    ModelConfig cfg;
    cfg.scalar_dim = int(get_u32(in));
    cfg.vector_dim = int(get_u32(in));
    cfg.knn = int(get_u32(in));
    float drop = 0.0f;
    in.read(reinterpret_cast<char*>(&drop), 4);
    cfg.dropout = double(drop);

    // the expected parameter inventory comes from the config; this pins the
    // 8 + 8 layer structure and the 20-way head
    ModelWeights w = ModelWeights::init(cfg, 0);
    const std::uint32_t count = get_u32(in);
    if (count != w.params_.size())
        fail("CheckpointMismatch", "parameter count " + std::to_string(count) + ", expected "
                                       + std::to_string(w.params_.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = get_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        auto it = w.params_.find(name);
        if (it == w.params_.end()) fail("CheckpointMismatch", "unexpected parameter " + name);
        const std::uint32_t ndim = get_u32(in);
        if (int(ndim) != it->second.shape.ndim) fail("CheckpointMismatch", "rank of " + name);
        for (std::uint32_t d = 0; d < ndim; ++d)
            if (int(get_u32(in)) != it->second.shape.d[d]) fail("CheckpointMismatch", "shape of " + name);
        std::vector<float> data(it->second.shape.size());
        in.read(reinterpret_cast<char*>(data.data()), std::streamsize(data.size() * 4));
        if (!in) fail("CheckpointMismatch", "truncated data for " + name);
        for (std::size_t k = 0; k < data.size(); ++k) it->second.value[k] = double(data[k]);
    }
    return w;
}

namespace {

struct Bound {
    std::map<std::string, int> ids;
    int operator()(const std::string& name) const {
        auto it = ids.find(name);
        if (it == ids.end()) fail("UnknownParameter", name);
        return it->second;
    }
};

Bound bind(Tape& t, const ModelWeights& w, bool needs_grad) {
    Bound b;
    for (const auto& [name, p] : w.params()) b.ids[name] = t.leaf(p.shape, p.value, needs_grad);
    return b;
}

struct GvpIds {
    int w_h, w_m, b_m, w_mu, w_g, b_g;
};

GvpIds gvp_ids(const Bound& b, const std::string& prefix) {
    return {b(prefix + "/w_h"), b(prefix + "/w_m"), b(prefix + "/b_m"),
            b(prefix + "/w_mu"), b(prefix + "/w_g"), b(prefix + "/b_g")};
}

std::pair<int, int> gvp_apply(Tape& t, const GvpIds& g, int s, int v) {
    const int vh = t.vecmix(g.w_h, v);
    const int sm = t.linear(t.concat_ch({s, t.rownorm3(vh)}), g.w_m, g.b_m);
    const int sp = t.relu(sm);
    const int vmu = t.vecmix(g.w_mu, vh);
    const int gate = t.sigmoid(t.linear(sm, g.w_g, g.b_g));
    return {sp, t.gatemul(gate, vmu)};
}

std::vector<double> expand_rows(const std::vector<double>& per_row, std::size_t stride) {
    std::vector<double> out(per_row.size() * stride);
    for (std::size_t i = 0; i < per_row.size(); ++i)
        for (std::size_t k = 0; k < stride; ++k) out[i * stride + k] = per_row[i];
    return out;
}

std::vector<double> dropout_mask(Rng& rng, std::size_t rows, std::size_t stride, double rate) {
    std::vector<double> per_row(rows);
    const double keep = 1.0 - rate;
    for (auto& v : per_row) v = rng.uniform() < keep ? 1.0 / keep : 0.0;
    return expand_rows(per_row, stride);
}

// One conformer through the input projection and the 8 encoder rounds.
std::pair<int, int> encoder_forward(Tape& t, const Bound& b, const ModelConfig& cfg,
                                    const ConformerGraph& g, bool train, Rng* drop_rng) {
    const int n = g.n_nodes;
    const int ns = t.leaf(Shape::mat(n, kNodeScalarDim), g.node_scalar, false);
    const int nv = t.leaf(Shape::vec3(n, 1), g.node_vector, false);

    auto [s, v] = gvp_apply(t, gvp_ids(b, "embed"), ns, nv);
    s = t.add(s, t.gather_rows(b("aa_embed"), g.context_aa));

    const std::size_t ne = g.edges.edges.size();
    std::vector<int> receivers(ne), senders(ne);
    ad::RowComb agg;
    agg.resize(std::size_t(n));
    for (std::size_t e = 0; e < ne; ++e) {
        receivers[e] = g.edges.edges[e].src;
        senders[e] = g.edges.edges[e].dst;
        agg[std::size_t(receivers[e])].emplace_back(int(e), 1.0);
    }
    const int es = t.leaf(Shape::mat(int(ne), kEdgeScalarDim), g.edge_scalar, false);
    const int ev = t.leaf(Shape::vec3(int(ne), 2), g.edge_vector, false);

    for (int l = 0; l < ModelConfig::kEncoderLayers; ++l) {
        const std::string tag = "enc" + std::to_string(l);
        const int s_i = t.gather_rows(s, receivers);
        const int v_i = t.gather_rows(v, receivers);
        const int s_j = t.gather_rows(s, senders);
        const int v_j = t.gather_rows(v, senders);
        auto [ms, mv] = gvp_apply(t, gvp_ids(b, tag + "/msg"),
                                  t.concat_ch({s_i, s_j, es}), t.vconcat_ch({v_i, v_j, ev}));
        const int agg_s = t.row_comb(agg, ms);
        const int agg_v = t.row_comb(agg, mv);
        auto [us, uv] = gvp_apply(t, gvp_ids(b, tag + "/upd"),
                                  t.concat_ch({s, agg_s}), t.vconcat_ch({v, agg_v}));
        if (train && cfg.dropout > 0.0)
            us = t.mulmask(us, dropout_mask(*drop_rng, std::size_t(n), std::size_t(cfg.scalar_dim),
                                            cfg.dropout));
        s = t.layernorm(t.add(s, us));
        v = t.vecnorm(t.add(v, uv));
    }
    return {s, v};
}

// Decoder-side graph: pooled alignment columns plus frozen per-conformer
// environment nodes. Target-target edges are the union over conformers with
// features averaged where an edge exists in both.
struct DecEdge {
    int sender = 0;
    int receiver = 0; // always a decoded column
    bool causal = false;
    int seq_pos = -1; // sender's decode position when causal
    std::vector<double> es;
    std::array<double, 6> ev{};
};

struct DecoderGraph {
    int columns = 0;
    int n_nodes = 0;
    int n_dec = 0;
    std::vector<int> dec_pos_of_col;              // -1 for context columns
    std::vector<DecEdge> edges;
    std::vector<std::vector<int>> env_nodes;      // per conformer, node ids in that conformer
};

DecoderGraph build_decoder_graph(const MultiGraph& mg) {
    DecoderGraph dg;
    dg.columns = mg.columns;
    dg.n_dec = int(mg.decode_columns.size());
    dg.dec_pos_of_col.assign(std::size_t(mg.columns), -1);
    for (int p = 0; p < dg.n_dec; ++p)
        dg.dec_pos_of_col[std::size_t(mg.decode_columns[std::size_t(p)])] = p;

    const std::size_t k = mg.conformers.size();
    std::vector<std::vector<int>> col_of(k);
    dg.env_nodes.resize(k);
    std::vector<int> env_offset(k);
    int next_env = mg.columns;
    for (std::size_t ci = 0; ci < k; ++ci) {
        col_of[ci].assign(std::size_t(mg.conformers[ci].n_nodes), -1);
        for (int c = 0; c < mg.columns; ++c) {
            const int node = mg.column_map[ci][std::size_t(c)];
            if (node >= 0) col_of[ci][std::size_t(node)] = c;
        }
        env_offset[ci] = next_env;
        for (int node = 0; node < mg.conformers[ci].n_nodes; ++node)
            if (col_of[ci][std::size_t(node)] < 0) {
                dg.env_nodes[ci].push_back(node);
                ++next_env;
            }
    }
    dg.n_nodes = next_env;

    struct Accum {
        std::vector<double> es;
        std::array<double, 6> ev{};
        int count = 0;
    };
    std::map<std::pair<int, int>, Accum> unions; // (sender col, receiver col)
    std::vector<DecEdge> env_edges;

    for (std::size_t ci = 0; ci < k; ++ci) {
        const ConformerGraph& g = mg.conformers[ci];
        std::vector<int> env_row(std::size_t(g.n_nodes), -1);
        for (std::size_t e = 0; e < dg.env_nodes[ci].size(); ++e)
            env_row[std::size_t(dg.env_nodes[ci][e])] = env_offset[ci] + int(e);

        for (std::size_t e = 0; e < g.edges.edges.size(); ++e) {
            const int recv = g.edges.edges[e].src;
            const int send = g.edges.edges[e].dst;
            const int recv_col = col_of[ci][std::size_t(recv)];
            if (recv_col < 0 || dg.dec_pos_of_col[std::size_t(recv_col)] < 0)
                continue; // only decoded columns are updated
            const double* es_row = g.edge_scalar.data() + e * kEdgeScalarDim;
            const double* ev_row = g.edge_vector.data() + e * 6;
            const int send_col = col_of[ci][std::size_t(send)];
            if (send_col >= 0) {
                Accum& a = unions[{send_col, recv_col}];
                if (a.es.empty()) a.es.assign(kEdgeScalarDim, 0.0);
                for (int x = 0; x < kEdgeScalarDim; ++x) a.es[std::size_t(x)] += es_row[x];
                for (int x = 0; x < 6; ++x) a.ev[std::size_t(x)] += ev_row[x];
                ++a.count;
            } else {
                DecEdge de;
                de.sender = env_row[std::size_t(send)];
                de.receiver = recv_col;
                de.es.assign(es_row, es_row + kEdgeScalarDim);
                std::copy(ev_row, ev_row + 6, de.ev.begin());
                env_edges.push_back(std::move(de));
            }
        }
    }

    for (const auto& [key, a] : unions) {
        DecEdge de;
        de.sender = key.first;
        de.receiver = key.second;
        de.es.resize(kEdgeScalarDim);
        for (int x = 0; x < kEdgeScalarDim; ++x) de.es[std::size_t(x)] = a.es[std::size_t(x)] / a.count;
        for (int x = 0; x < 6; ++x) de.ev[std::size_t(x)] = a.ev[std::size_t(x)] / a.count;
        const int ps = dg.dec_pos_of_col[std::size_t(key.first)];
        const int pr = dg.dec_pos_of_col[std::size_t(key.second)];
        de.causal = ps >= 0 && ps < pr;
        de.seq_pos = de.causal ? ps : -1;
        dg.edges.push_back(std::move(de));
    }
    for (auto& de : env_edges) dg.edges.push_back(std::move(de));
    std::sort(dg.edges.begin(), dg.edges.end(), [](const DecEdge& a, const DecEdge& b) {
        if (a.receiver != b.receiver) return a.receiver < b.receiver;
        return a.sender < b.sender;
    });
    return dg;
}

ad::RowComb pooling_comb(const MultiGraph& mg, const std::vector<int>& row_offsets) {
    ad::RowComb comb;
    comb.resize(std::size_t(mg.columns));
    for (int c = 0; c < mg.columns; ++c) {
        int contributors = 0;
        for (std::size_t ci = 0; ci < mg.conformers.size(); ++ci)
            if (mg.gap_mask[std::size_t(c)][ci]) ++contributors;
        if (contributors == 0) fail("EmptyColumn", "column " + std::to_string(c) + " has no conformer");
        const double wgt = 1.0 / double(contributors);
        for (std::size_t ci = 0; ci < mg.conformers.size(); ++ci)
            if (mg.gap_mask[std::size_t(c)][ci])
                comb[std::size_t(c)].emplace_back(
                    row_offsets[ci] + mg.column_map[ci][std::size_t(c)], wgt);
    }
    return comb;
}

struct ForwardIds {
    std::vector<int> enc_s, enc_v; // per conformer
    int pooled_s = -1, pooled_v = -1;
    int logits = -1;
};

// The whole pipeline on one tape: encode each conformer, pool target
// columns, run the causal decoder, project to residue logits.
ForwardIds build_forward(Tape& t, const Bound& b, const ModelConfig& cfg, const MultiGraph& mg,
                         const std::vector<int>& seq_by_pos, bool train,
                         std::uint64_t dropout_seed) {
    ForwardIds out;
    Rng drop_rng(dropout_seed);
    const std::size_t k = mg.conformers.size();
    for (std::size_t ci = 0; ci < k; ++ci) {
        auto [s, v] = encoder_forward(t, b, cfg, mg.conformers[ci], train, &drop_rng);
        out.enc_s.push_back(s);
        out.enc_v.push_back(v);
    }

    std::vector<int> row_offsets(k);
    int total = 0;
    for (std::size_t ci = 0; ci < k; ++ci) {
        row_offsets[ci] = total;
        total += mg.conformers[ci].n_nodes;
    }
    const ad::RowComb pool = pooling_comb(mg, row_offsets);
    out.pooled_s = t.row_comb(pool, t.concat_rows(out.enc_s));
    out.pooled_v = t.row_comb(pool, t.concat_rows(out.enc_v));

    const DecoderGraph dg = build_decoder_graph(mg);
    if (int(seq_by_pos.size()) != dg.n_dec)
        fail("LengthMismatch", "sequence length " + std::to_string(seq_by_pos.size())
                                   + " vs decoded positions " + std::to_string(dg.n_dec));

    // initial decoder node set: pooled columns, then each conformer's
    // environment nodes with their encoder embeddings
    std::vector<int> h0_s_parts = {out.pooled_s};
    std::vector<int> h0_v_parts = {out.pooled_v};
    for (std::size_t ci = 0; ci < k; ++ci) {
        if (dg.env_nodes[ci].empty()) continue;
        h0_s_parts.push_back(t.gather_rows(out.enc_s[ci], dg.env_nodes[ci]));
        h0_v_parts.push_back(t.gather_rows(out.enc_v[ci], dg.env_nodes[ci]));
    }
    const int h0_s = h0_s_parts.size() == 1 ? h0_s_parts[0] : t.concat_rows(h0_s_parts);
    const int h0_v = h0_v_parts.size() == 1 ? h0_v_parts[0] : t.concat_rows(h0_v_parts);

    const std::size_t ne = dg.edges.size();
    std::vector<int> senders(ne), receivers(ne), seq_idx(ne, 0);
    std::vector<double> causal_rows(ne, 0.0), noncausal_rows(ne, 1.0);
    std::vector<double> es_flat;
    std::vector<double> ev_flat;
    es_flat.reserve(ne * kEdgeScalarDim);
    ev_flat.reserve(ne * 6);
    ad::RowComb agg;
    agg.resize(std::size_t(dg.n_nodes));
    for (std::size_t e = 0; e < ne; ++e) {
        const DecEdge& de = dg.edges[e];
        senders[e] = de.sender;
        receivers[e] = de.receiver;
        if (de.causal) {
            causal_rows[e] = 1.0;
            noncausal_rows[e] = 0.0;
            seq_idx[e] = seq_by_pos[std::size_t(de.seq_pos)];
        }
        es_flat.insert(es_flat.end(), de.es.begin(), de.es.end());
        ev_flat.insert(ev_flat.end(), de.ev.begin(), de.ev.end());
        agg[std::size_t(de.receiver)].emplace_back(int(e), 1.0);
    }
    const int es = t.leaf(Shape::mat(int(ne), kEdgeScalarDim), es_flat, false);
    const int ev = t.leaf(Shape::vec3(int(ne), 2), ev_flat, false);
    // ground-truth residue embeddings ride causal edges only
    const int seq_emb = ne == 0
                            ? -1
                            : t.mulmask(t.gather_rows(b("aa_embed"), seq_idx),
                                        expand_rows(causal_rows, std::size_t(cfg.scalar_dim)));

    const auto causal_s = expand_rows(causal_rows, std::size_t(cfg.scalar_dim));
    const auto noncausal_s = expand_rows(noncausal_rows, std::size_t(cfg.scalar_dim));
    const auto causal_v = expand_rows(causal_rows, std::size_t(cfg.vector_dim) * 3);
    const auto noncausal_v = expand_rows(noncausal_rows, std::size_t(cfg.vector_dim) * 3);

    // decoded columns evolve; context columns and environment stay at h0
    std::vector<double> dec_rows(std::size_t(dg.n_nodes), 0.0);
    for (int c = 0; c < dg.columns; ++c)
        if (dg.dec_pos_of_col[std::size_t(c)] >= 0) dec_rows[std::size_t(c)] = 1.0;
    std::vector<double> ctx_rows(std::size_t(dg.n_nodes));
    for (std::size_t i = 0; i < ctx_rows.size(); ++i) ctx_rows[i] = 1.0 - dec_rows[i];
    const auto dec_s = expand_rows(dec_rows, std::size_t(cfg.scalar_dim));
    const auto ctx_s = expand_rows(ctx_rows, std::size_t(cfg.scalar_dim));
    const auto dec_v = expand_rows(dec_rows, std::size_t(cfg.vector_dim) * 3);
    const auto ctx_v = expand_rows(ctx_rows, std::size_t(cfg.vector_dim) * 3);

    int h_s = h0_s, h_v = h0_v;
    for (int l = 0; l < ModelConfig::kDecoderLayers; ++l) {
        const std::string tag = "dec" + std::to_string(l);
        int ms = -1, mv = -1;
        if (ne > 0) {
            // senders already decoded at this position use their current
            // embedding; everything else stays at the decoder input
            const int s_src = t.add(t.mulmask(t.gather_rows(h_s, senders), causal_s),
                                    t.mulmask(t.gather_rows(h0_s, senders), noncausal_s));
            const int v_src = t.add(t.mulmask(t.gather_rows(h_v, senders), causal_v),
                                    t.mulmask(t.gather_rows(h0_v, senders), noncausal_v));
            const int s_dst = t.gather_rows(h_s, receivers);
            const int v_dst = t.gather_rows(h_v, receivers);
            auto [ms2, mv2] = gvp_apply(t, gvp_ids(b, tag + "/msg"),
                                        t.concat_ch({s_dst, s_src, es, seq_emb}),
                                        t.vconcat_ch({v_dst, v_src, ev}));
            ms = ms2;
            mv = mv2;
        }
        const int agg_s = ne > 0 ? t.row_comb(agg, ms)
                                 : t.leaf(Shape::mat(dg.n_nodes, cfg.scalar_dim),
                                          std::vector<double>(std::size_t(dg.n_nodes)
                                                                  * std::size_t(cfg.scalar_dim)),
                                          false);
        const int agg_v = ne > 0 ? t.row_comb(agg, mv)
                                 : t.leaf(Shape::vec3(dg.n_nodes, cfg.vector_dim),
                                          std::vector<double>(std::size_t(dg.n_nodes)
                                                              * std::size_t(cfg.vector_dim) * 3),
                                          false);
        auto [us, uv] = gvp_apply(t, gvp_ids(b, tag + "/upd"),
                                  t.concat_ch({h_s, agg_s}), t.vconcat_ch({h_v, agg_v}));
        if (train && cfg.dropout > 0.0)
            us = t.mulmask(us, dropout_mask(drop_rng, std::size_t(dg.n_nodes),
                                            std::size_t(cfg.scalar_dim), cfg.dropout));
        const int s_new = t.layernorm(t.add(h_s, us));
        const int v_new = t.vecnorm(t.add(h_v, uv));
        h_s = t.add(t.mulmask(s_new, dec_s), t.mulmask(h_s, ctx_s));
        h_v = t.add(t.mulmask(v_new, dec_v), t.mulmask(h_v, ctx_v));
    }

    out.logits = t.linear(t.gather_rows(h_s, mg.decode_columns), b("out/w"), b("out/b"));
    return out;
}

std::vector<double> log_softmax_row(const double* row, int k) {
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double logz = std::log(z) + mx;
    std::vector<double> out(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) out[std::size_t(j)] = row[j] - logz;
    return out;
}

} // namespace

GvpOutput gvp_forward(const GvpLayerWeights& w, const std::vector<double>& s,
                      const std::vector<double>& v, int rows) {
    if (w.hidden != std::max(w.v_in, w.v_out)) fail("ShapeMismatch", "gvp hidden dim");
    if (s.size() != std::size_t(rows) * std::size_t(w.s_in)
        || v.size() != std::size_t(rows) * std::size_t(w.v_in) * 3)
        fail("ShapeMismatch", "gvp_forward input sizes");

    Tape t(false);
    Bound b;
    b.ids["g/w_h"] = t.leaf(Shape::mat(w.hidden, w.v_in), w.w_h, false);
    b.ids["g/w_m"] = t.leaf(Shape::mat(w.s_out, w.s_in + w.hidden), w.w_m, false);
    b.ids["g/b_m"] = t.leaf(Shape::mat(1, w.s_out), w.b_m, false);
    b.ids["g/w_mu"] = t.leaf(Shape::mat(w.v_out, w.hidden), w.w_mu, false);
    b.ids["g/w_g"] = t.leaf(Shape::mat(w.v_out, w.s_out), w.w_g, false);
    b.ids["g/b_g"] = t.leaf(Shape::mat(1, w.v_out), w.b_g, false);
    const int sid = t.leaf(Shape::mat(rows, w.s_in), s, false);
    const int vid = t.leaf(Shape::vec3(rows, w.v_in), v, false);
    auto [so, vo] = gvp_apply(t, gvp_ids(b, "g"), sid, vid);
    return {t.val(so), t.val(vo)};
}

EncodedConformers encode(const ModelWeights& w, const MultiGraph& mg) {
    Tape t(false);
    const Bound b = bind(t, w, false);
    EncodedConformers out;
    for (const auto& g : mg.conformers) {
        auto [s, v] = encoder_forward(t, b, w.config(), g, false, nullptr);
        out.s.push_back(t.val(s));
        out.v.push_back(t.val(v));
    }
    return out;
}

PooledEmbedding pool_conformations(const EncodedConformers& enc, const MultiGraph& mg) {
    if (enc.s.size() != mg.conformers.size())
        fail("ShapeMismatch", "encoded conformer count does not match the multigraph");
    PooledEmbedding out;
    out.columns = mg.columns;
    if (mg.columns == 0) return out;
    const std::size_t d = enc.s[0].size() / std::size_t(mg.conformers[0].n_nodes);
    const std::size_t dv = enc.v[0].size() / std::size_t(mg.conformers[0].n_nodes);
    out.s.assign(std::size_t(mg.columns) * d, 0.0);
    out.v.assign(std::size_t(mg.columns) * dv, 0.0);
    for (int c = 0; c < mg.columns; ++c) {
        int contributors = 0;
        for (std::size_t ci = 0; ci < mg.conformers.size(); ++ci)
            if (mg.gap_mask[std::size_t(c)][ci]) ++contributors;
        if (contributors == 0) fail("EmptyColumn", "column " + std::to_string(c));
        for (std::size_t ci = 0; ci < mg.conformers.size(); ++ci) {
            if (!mg.gap_mask[std::size_t(c)][ci]) continue;
            const std::size_t node = std::size_t(mg.column_map[ci][std::size_t(c)]);
            for (std::size_t x = 0; x < d; ++x)
                out.s[std::size_t(c) * d + x] += enc.s[ci][node * d + x] / double(contributors);
            for (std::size_t x = 0; x < dv; ++x)
                out.v[std::size_t(c) * dv + x] += enc.v[ci][node * dv + x] / double(contributors);
        }
    }
    return out;
}

std::vector<double> decode_logits(const ModelWeights& w, const MultiGraph& mg,
                                  const std::vector<int>& sequence) {
    Tape t(false);
    const Bound b = bind(t, w, false);
    const ForwardIds ids = build_forward(t, b, w.config(), mg, sequence, false, 0);
    return t.val(ids.logits);
}

double teacher_forced_logprob(const ModelWeights& w, const MultiGraph& mg,
                              const std::vector<int>& sequence) {
    const std::vector<double> logits = decode_logits(w, mg, sequence);
    double total = 0.0;
    for (std::size_t p = 0; p < sequence.size(); ++p) {
        if (sequence[p] < 0 || sequence[p] >= ModelConfig::kLogits)
            fail("LengthMismatch", "sequence position " + std::to_string(p) + " outside the 20 classes");
        const auto lp = log_softmax_row(logits.data() + p * ModelConfig::kLogits,
                                        ModelConfig::kLogits);
        total += lp[std::size_t(sequence[p])];
    }
    return total;
}

std::vector<SampledSequence> sample_sequences(const ModelWeights& w, const MultiGraph& mg, int n,
                                              double temperature, std::uint64_t seed) {
    if (n < 1) fail("LengthMismatch", "sample count must be >= 1");
    const int n_dec = int(mg.decode_columns.size());
    std::vector<SampledSequence> out;
    out.reserve(std::size_t(n));
    for (int i = 0; i < n; ++i) {
        Rng rng(seed ^ fnv1a(mg.pair_id + "/sample" + std::to_string(i)));
        std::vector<int> seq(std::size_t(n_dec), 0);
        SampledSequence rec;
        for (int pos = 0; pos < n_dec; ++pos) {
            // causal masking makes logits at `pos` independent of entries
            // at >= pos, so the zero placeholders are inert
            const std::vector<double> logits = decode_logits(w, mg, seq);
            const double* row = logits.data() + std::size_t(pos) * ModelConfig::kLogits;
            int chosen;
            double logp;
            if (temperature <= 1e-12) { // argmax limit
                chosen = 0;
                for (int j = 1; j < ModelConfig::kLogits; ++j)
                    if (row[j] > row[chosen]) chosen = j;
                logp = 0.0;
            } else {
                std::vector<double> scaled(ModelConfig::kLogits);
                for (int j = 0; j < ModelConfig::kLogits; ++j) scaled[std::size_t(j)] = row[j] / temperature;
                const auto lp = log_softmax_row(scaled.data(), ModelConfig::kLogits);
                std::vector<double> probs(ModelConfig::kLogits);
                for (int j = 0; j < ModelConfig::kLogits; ++j) probs[std::size_t(j)] = std::exp(lp[std::size_t(j)]);
                chosen = rng.categorical(probs);
                logp = lp[std::size_t(chosen)];
            }
            seq[std::size_t(pos)] = chosen;
            rec.logp.push_back(logp);
            rec.total_logp += logp;
        }
        rec.sequence = indices_to_sequence(seq);
        out.push_back(std::move(rec));
    }
    return out;
}

ScoreResult score_sequences(const ModelWeights& w, const MultiGraph& mg,
                            const std::vector<std::vector<int>>& sequences) {
    if (sequences.empty()) fail("LengthMismatch", "no sequences to score");
    double recovery_sum = 0.0, nll_sum = 0.0;
    std::size_t nll_count = 0;
    for (const auto& seq : sequences) {
        if (seq.size() != mg.decode_columns.size())
            fail("LengthMismatch", "sequence length " + std::to_string(seq.size())
                                       + " vs decoded positions "
                                       + std::to_string(mg.decode_columns.size()));
        const std::vector<double> logits = decode_logits(w, mg, seq);
        std::size_t hits = 0, scored = 0;
        for (std::size_t p = 0; p < seq.size(); ++p) {
            if (seq[p] < 0 || seq[p] >= ModelConfig::kLogits) continue; // 'X' skipped
            const double* row = logits.data() + p * ModelConfig::kLogits;
            int arg = 0;
            for (int j = 1; j < ModelConfig::kLogits; ++j)
                if (row[j] > row[arg]) arg = j;
            if (arg == seq[p]) ++hits;
            const auto lp = log_softmax_row(row, ModelConfig::kLogits);
            nll_sum -= lp[std::size_t(seq[p])];
            ++scored;
            ++nll_count;
        }
        if (scored == 0) fail("LengthMismatch", "sequence has no scorable positions");
        recovery_sum += double(hits) / double(scored);
    }
    ScoreResult out;
    out.recovery = recovery_sum / double(sequences.size());
    out.perplexity = std::exp(nll_sum / double(nll_count));
    return out;
}

std::vector<int> sequence_to_indices(const std::string& seq) {
    std::vector<int> out;
    out.reserve(seq.size());
    for (char c : seq) out.push_back(aa_index(c));
    return out;
}

std::string indices_to_sequence(const std::vector<int>& idx) {
    std::string out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(aa_letter(i));
    return out;
}

GradientResult loss_and_gradients(const ModelWeights& w, const MultiGraph& mg,
                                  std::uint64_t dropout_seed, bool train_mode) {
    Tape t(true);
    const Bound b = bind(t, w, true);
    const ForwardIds ids = build_forward(t, b, w.config(), mg, mg.native_aa, train_mode,
                                         dropout_seed);
    std::vector<int> targets = mg.native_aa;
    std::vector<char> mask(targets.size(), 1);
    for (std::size_t i = 0; i < targets.size(); ++i)
        if (targets[i] >= ModelConfig::kLogits) { // unknown residues carry no loss
            targets[i] = 0;
            mask[i] = 0;
        }
    const int loss = t.softmax_xent(ids.logits, targets, mask);
    t.backward(loss);

    GradientResult out;
    out.loss = t.val(loss)[0];
    for (const auto& [name, id] : b.ids) out.grads[name] = t.grad(id);
    return out;
}

double teacher_forced_loss(const ModelWeights& w, const MultiGraph& mg) {
    Tape t(false);
    const Bound b = bind(t, w, false);
    const ForwardIds ids = build_forward(t, b, w.config(), mg, mg.native_aa, false, 0);
    std::vector<int> targets = mg.native_aa;
    std::vector<char> mask(targets.size(), 1);
    for (std::size_t i = 0; i < targets.size(); ++i)
        if (targets[i] >= ModelConfig::kLogits) {
            targets[i] = 0;
            mask[i] = 0;
        }
    return t.val(t.softmax_xent(ids.logits, targets, mask))[0];
}

void Adam::apply(ModelWeights& w, const std::map<std::string, std::vector<double>>& grads) {
    ++step_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, double(step_));
    for (auto& [name, param] : w.params()) {
        auto git = grads.find(name);
        if (git == grads.end()) fail("UnknownParameter", "gradient missing for " + name);
        const auto& grad = git->second;
        auto& [m, v] = state_[name];
        if (m.empty()) {
            m.assign(param.value.size(), 0.0);
            v.assign(param.value.size(), 0.0);
        }
        for (std::size_t i = 0; i < param.value.size(); ++i) {
            m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * grad[i];
            v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * grad[i] * grad[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            param.value[i] -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
        }
    }
}

double train_step(ModelWeights& w, Adam& opt, const std::vector<const MultiGraph*>& batch,
                  std::uint64_t seed) {
    if (batch.empty()) fail("LengthMismatch", "empty training batch");
    std::map<std::string, std::vector<double>> total;
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const std::uint64_t item_seed = seed ^ fnv1a(batch[i]->pair_id + "/dropout");
        GradientResult r = loss_and_gradients(w, *batch[i], item_seed, true);
        if (!std::isfinite(r.loss))
            fail("NonFiniteLoss", "item " + batch[i]->pair_id + " produced loss "
                                      + std::to_string(r.loss));
        loss_sum += r.loss;
        for (auto& [name, grad] : r.grads) {
            auto& acc = total[name];
            if (acc.empty()) acc.assign(grad.size(), 0.0);
            for (std::size_t k = 0; k < grad.size(); ++k) acc[k] += grad[k] / double(batch.size());
        }
    }
    opt.apply(w, total);
    return loss_sum / double(batch.size());
}

MultiGraph swap_conformers(const MultiGraph& mg) {
    MultiGraph out = mg;
    std::reverse(out.conformers.begin(), out.conformers.end());
    std::reverse(out.column_map.begin(), out.column_map.end());
    for (auto& col : out.gap_mask) std::reverse(col.begin(), col.end());
    // decode_columns and native_aa reference alignment columns, which do not
    // move when the conformer list is permuted
    return out;
}

} // namespace polyfold
