#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "polyfold/autodiff.hpp"
#include "polyfold/featurizer.hpp"

namespace polyfold {

struct ModelConfig {
    int scalar_dim = 128;
    int vector_dim = 16;
    int knn = 16;
    double dropout = 0.1;

    static constexpr int kEncoderLayers = 8;
    static constexpr int kDecoderLayers = 8;
    static constexpr int kLogits = 20;
};

struct Param {
    ad::Shape shape;
    std::vector<double> value;
};

// All parameters keyed by name:
//   embed/*            input projection GVP (26 scalars, 1 vector -> d, d')
//   aa_embed           21 x d token table (20 amino acids + MASK)
//   enc{0..7}/msg/*, enc{0..7}/upd/*   encoder message/update GVPs
//   dec{0..7}/msg/*, dec{0..7}/upd/*   decoder message/update GVPs
//   out/w, out/b       d -> 20 head
// Each GVP bundle holds w_h, w_m, b_m, w_mu, w_g, b_g.
class ModelWeights {
public:
    static ModelWeights init(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    const std::map<std::string, Param>& params() const { return params_; }
    std::map<std::string, Param>& params() { return params_; }
    const Param& at(const std::string& name) const;
    std::size_t parameter_count() const;

    void save(const std::string& path) const;
    static ModelWeights load(const std::string& path);

private:
    ModelConfig cfg_;
    std::map<std::string, Param> params_;
};

// Standalone geometric-vector-perceptron application, the same math the
// model layers run: V_h = W_h V; s' = relu(W_m [s ; |V_h|] + b_m);
// V' = sigmoid(W_g (W_m path) + b_g) o (W_mu V_h).
struct GvpLayerWeights {
    int s_in = 0, v_in = 0, s_out = 0, v_out = 0, hidden = 0;
    std::vector<double> w_h;  // hidden x v_in
    std::vector<double> w_m;  // s_out x (s_in + hidden)
    std::vector<double> b_m;  // s_out
    std::vector<double> w_mu; // v_out x hidden
    std::vector<double> w_g;  // v_out x s_out
    std::vector<double> b_g;  // v_out
};

struct GvpOutput {
    std::vector<double> s; // n x s_out
    std::vector<double> v; // n x v_out x 3
};

GvpOutput gvp_forward(const GvpLayerWeights& w, const std::vector<double>& s,
                      const std::vector<double>& v, int rows);

// Per-conformer final encoder embeddings.
struct EncodedConformers {
    std::vector<std::vector<double>> s; // k entries of n_k x d
    std::vector<std::vector<double>> v; // k entries of n_k x d' x 3
};

EncodedConformers encode(const ModelWeights& w, const MultiGraph& mg);

struct PooledEmbedding {
    int columns = 0;
    std::vector<double> s; // columns x d
    std::vector<double> v; // columns x d' x 3
};

// Mean over the conformers contributing to each alignment column.
PooledEmbedding pool_conformations(const EncodedConformers& enc, const MultiGraph& mg);

// Teacher-forced logits over the decoded positions (conformer 0's residues),
// causally masked: position i sees ground-truth residues only at j < i.
std::vector<double> decode_logits(const ModelWeights& w, const MultiGraph& mg,
                                  const std::vector<int>& sequence);

double teacher_forced_logprob(const ModelWeights& w, const MultiGraph& mg,
                              const std::vector<int>& sequence);

struct SampledSequence {
    std::string sequence;
    std::vector<double> logp; // per residue, under the sampling distribution
    double total_logp = 0.0;
};

std::vector<SampledSequence> sample_sequences(const ModelWeights& w, const MultiGraph& mg, int n,
                                              double temperature, std::uint64_t seed);

struct ScoreResult {
    double recovery = 0.0;
    double perplexity = 0.0;
};

// Teacher-forces each sequence and scores argmax identity and per-position
// negative log-likelihood against it; 'X' positions are skipped.
ScoreResult score_sequences(const ModelWeights& w, const MultiGraph& mg,
                            const std::vector<std::vector<int>>& sequences);

std::vector<int> sequence_to_indices(const std::string& seq);
std::string indices_to_sequence(const std::vector<int>& idx);

// Loss plus d(loss)/d(param) for one training item, via the reverse tape.
struct GradientResult {
    double loss = 0.0;
    std::map<std::string, std::vector<double>> grads;
};

GradientResult loss_and_gradients(const ModelWeights& w, const MultiGraph& mg,
                                  std::uint64_t dropout_seed, bool train_mode);

// Forward-only loss on the native sequence (no tape bookkeeping).
double teacher_forced_loss(const ModelWeights& w, const MultiGraph& mg);

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamOptions opt = {}) : opt_(opt) {}
    void apply(ModelWeights& w, const std::map<std::string, std::vector<double>>& grads);
    const AdamOptions& options() const { return opt_; }

private:
    AdamOptions opt_;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> state_;
    long step_ = 0;
};

// One optimizer step over a batch (gradients averaged across items).
double train_step(ModelWeights& w, Adam& opt, const std::vector<const MultiGraph*>& batch,
                  std::uint64_t seed);

// Conformer order permutation helper: swaps the conformer list and its
// column bookkeeping while leaving the decoded positions untouched.
MultiGraph swap_conformers(const MultiGraph& mg);

} // namespace polyfold
