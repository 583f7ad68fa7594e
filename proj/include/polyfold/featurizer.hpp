#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polyfold/dataset.hpp"
#include "polyfold/geometry.hpp"
#include "polyfold/struct_io.hpp"

namespace polyfold {

inline constexpr int kPosEncDim = 16;
inline constexpr int kNodeScalarDim = 26; // 16 positional + 6 dihedral + 4 virtual
inline constexpr int kEdgeScalarDim = kRbfBins + 1;
inline constexpr int kAaTypes = 21; // 20 amino acids + MASK/unknown
inline constexpr int kAaMask = 20;
inline constexpr const char* kAaAlphabet = "ACDEFGHIKLMNPQRSTVWY";

int aa_index(char one_letter); // 'X' and anything unknown map to kAaMask
char aa_letter(int index);

// One featurized conformation: the target chain followed by its environment
// chains as a single node set, with a k-NN graph over all CA positions.
struct ConformerGraph {
    int n_nodes = 0;
    int target_begin = 0; // target chain occupies [target_begin, target_begin + target_len)
    int target_len = 0;
    std::vector<double> node_scalar;  // n x 26
    std::vector<double> node_vector;  // n x 1 x 3, centered CA
    EdgeList edges;                   // src = receiving node, dst = its neighbor
    std::vector<double> edge_scalar;  // E x 33 (32 RBF + raw length)
    std::vector<double> edge_vector;  // E x 2 x 3 (unit src-dst, unit dst-src)
    std::vector<int> context_aa;      // n; MASK for target and masked partners
    std::vector<std::array<char, 5>> angle_valid; // phi, psi, omega, kappa, alpha
    std::vector<Vec3> ca;             // noisy CA actually used for the graph
};

// Visibility flags per environment chain: a partner stays visible only when
// its identity to the target sequence is at or below the threshold.
std::vector<char> mask_partners(const std::vector<BackboneChain>& env,
                                const std::string& target_seq, double threshold = 0.70);

ConformerGraph featurize_conformer(const BackboneChain& target,
                                   const std::vector<BackboneChain>& env, double noise_sigma,
                                   std::uint64_t seed, int knn_k = 16,
                                   const std::vector<char>* env_visible = nullptr);

struct MultiGraph {
    std::string pair_id;
    std::vector<ConformerGraph> conformers;     // length k
    int columns = 0;                            // alignment columns
    std::vector<std::vector<int>> column_map;   // k x columns, node index or -1
    std::vector<std::vector<char>> gap_mask;    // columns x k, true where mapped
    std::vector<int> decode_columns;            // columns where conformer 0 is non-gap
    std::vector<int> native_aa;                 // per decode column, from conformer 0
};

// Featurizes both states independently (independent noise streams derived
// from pair_id) and aligns their target sequences into the column map.
MultiGraph build_multigraph(const std::string& pair_id, const BackboneChain& a,
                            const std::vector<BackboneChain>& env_a, const BackboneChain& b,
                            const std::vector<BackboneChain>& env_b, double noise_sigma,
                            std::uint64_t seed, int knn_k = 16, std::size_t min_mapped = 10);

MultiGraph build_multigraph(const ConformerPair& pair, const StructureResolver& resolver,
                            double noise_sigma, std::uint64_t seed, int knn_k = 16);

// Single-conformation graph; the pipeline then reduces to a plain GNN.
MultiGraph build_multigraph_single(const std::string& id, const BackboneChain& chain,
                                   const std::vector<BackboneChain>& env, double noise_sigma,
                                   std::uint64_t seed, int knn_k = 16);

// Debug dump: raw 32-bit float tensors, row-major, self-describing header.
void write_feature_dump(const MultiGraph& mg, const std::string& path);

} // namespace polyfold
