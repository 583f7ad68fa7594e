#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "polyfold/linalg.hpp"
#include "polyfold/struct_io.hpp"

namespace polyfold {

struct ChainRef {
    std::string structure_id;
    std::string chain_id;

    std::string str() const { return structure_id + ":" + chain_id; }
    // filesystem-safe form used in pair ids and prediction file names
    std::string safe() const {
        std::string s = structure_id + "-" + chain_id;
        for (char& c : s)
            if (c == ':' || c == '/' || c == '\\') c = '-';
        return s;
    }
    auto operator<=>(const ChainRef&) const = default;
};

struct ChainRecord {
    ChainRef ref;
    std::string sequence;
    std::vector<Vec3> ca;
};

struct ConformerCluster {
    std::string cluster_id; // smallest member ref
    std::vector<ChainRef> members;
    std::vector<std::vector<double>> pairwise_rmsd; // filled separately
};

enum class Split { Train, Val, Test, Excluded };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct ConformerPair {
    std::string pair_id;
    ChainRef state_a, state_b; // state_a is the lexicographically smaller ref
    double inter_state_rmsd = 0.0;
    std::vector<ChainRef> environment_a, environment_b;
    Split split = Split::Train;
};

struct Manifest {
    int version = 1;
    std::vector<ConformerPair> pairs;
    std::string provenance;
};

// Single-linkage clustering under pairwise sequence identity >= threshold.
// Members come back sorted by ref; cluster order follows the smallest member.
std::vector<ConformerCluster> cluster_chains(
    const std::vector<std::pair<ChainRef, std::string>>& chains, double threshold);

// Superposed CA RMSD over alignment-mapped residues.
double mapped_rmsd(const ChainRecord& a, const ChainRecord& b);

// Fills the symmetric member x member matrix using mapped_rmsd; `threads`
// cells computed concurrently (each cell owns its slot).
void fill_pairwise_rmsd(ConformerCluster& cluster,
                        const std::function<const ChainRecord&(const ChainRef&)>& resolve,
                        unsigned threads = 1);

// Argmax over the cluster matrix; ties break lexicographically by
// (ref_a, ref_b). Single-member clusters yield nothing.
std::optional<ConformerPair> select_max_rmsd_pair(const ConformerCluster& cluster);

// TM-score of a candidate training state against a held-out state, the
// held-out one being the normalization reference.
using TmScoreFn = std::function<double(const ChainRef& candidate, const ChainRef& heldout)>;

struct SplitOptions {
    std::size_t test_n = 94;
    std::size_t val_n = 100;
    double tm_threshold = 0.4;
    unsigned threads = 1;
};

// Benchmark pairs ranked by inter-state RMSD feed the test and validation
// quotas; remaining pairs train unless either state scores above the TM
// threshold against any held-out state.
Manifest split_dataset(std::vector<ConformerPair> pairs,
                       const std::vector<std::string>& benchmark_pair_ids,
                       const TmScoreFn& tm, const SplitOptions& opt);

void write_manifest(const Manifest& m, const std::string& path);
Manifest read_manifest(const std::string& path);

// Directory-backed structure lookup: scans *.pdb at construction, one entry
// per MODEL. Read-only afterwards, safe to share across threads.
class StructureResolver {
public:
    explicit StructureResolver(const std::string& dir);

    const Structure& structure(const std::string& structure_id) const;
    BackboneChain backbone(const ChainRef& ref) const;
    std::vector<ChainRef> environment_of(const ChainRef& ref) const;
    std::vector<std::string> structure_ids() const;

private:
    std::map<std::string, Structure> structures_;
};

} // namespace polyfold
