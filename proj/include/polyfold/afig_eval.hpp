#pragma once

#include <optional>
#include <string>
#include <vector>

#include "polyfold/dataset.hpp"
#include "polyfold/stats.hpp"
#include "polyfold/struct_io.hpp"

namespace polyfold {

// One oracle prediction scored against its target. State labels are "A",
// "B" for the conformations and "decoyA"/"decoyB" for the negative
// controls.
struct EvalRecord {
    std::string protein_id;
    int sequence_index = 0;
    std::string state_label;
    double afig_rmsd = 0.0;
    double mean_plddt = 0.0;
    double struct_norm = 0.0; // NaN when the denominators are unavailable
    double decoy_norm = 0.0;
};

struct AggregateRow {
    std::string protein_id;
    std::string model;
    double best_paired_rmsd = 0.0;
    double best_paired_struct_norm = 0.0;
    double best_paired_decoy_norm = 0.0;
    double best_single_rmsd = 0.0;
    double all_avg_rmsd = 0.0;
    double best_paired_plddt = 0.0;
    double best_single_plddt = 0.0;
    double all_avg_plddt = 0.0;
};

// CA RMSD over sequence-aligned residues after superposition (flag to
// compare in the frame the oracle produced instead).
double afig_rmsd(const BackboneChain& pred, const BackboneChain& target, bool superpose = true);

double max_pairwise_rmsd(const std::vector<BackboneChain>& targets);

// afig / max pairwise target RMSD
double struct_norm(double afig, const std::vector<BackboneChain>& targets);

double decoy_norm(double afig_target, double afig_decoy);

// Deterministic decoy choice: TM-score to the target nearest to but below
// tm_max, length within +-20% of the target, lexicographic tie-break.
ChainRef select_decoy(const BackboneChain& target,
                      const std::vector<std::pair<ChainRef, BackboneChain>>& pool,
                      double tm_max = 0.4);

// Collapses one protein's grid of records. Best Paired takes the best
// across sequences of the per-sequence two-state mean; Best Single the best
// single cell; All Avg the grand mean. The Eq. 2 / Eq. 3 normalizations
// apply to the Best Paired RMSD.
AggregateRow aggregate(const std::string& protein_id, const std::vector<EvalRecord>& records,
                       double max_inter_target_rmsd, int n_seq = 16, int n_states = 2);

struct StatsLine {
    std::string test_name;
    double statistic = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
};

// report.csv (per-protein rows + MEAN), one long-format plot file per
// metric, stats.csv when stats lines are provided. Deterministic bytes.
void emit_report(const std::vector<AggregateRow>& rows, const std::vector<StatsLine>& stats,
                 const std::string& out_dir);

void write_stats(const std::vector<StatsLine>& stats, const std::string& path);

std::vector<AggregateRow> read_report(const std::string& path);

struct EvalPipelineOptions {
    int n_seq = 16;
    bool superpose = true;
    double tm_max = 0.4;
    std::string model_label = "polyfold";
    unsigned threads = 1;
};

struct EvalOutput {
    std::vector<EvalRecord> records;
    std::vector<AggregateRow> rows;
};

// Walks the manifest's test pairs, reads
// {protein}_{seqidx}_{state}.pdb predictions, scores Eq. 1-3 and
// aggregates per protein. `decoys`, when present, supplies the negative
// control pool and requires decoy predictions for every cell.
EvalOutput run_eval(const Manifest& manifest, const StructureResolver& structures,
                    const std::string& predictions_dir, const StructureResolver* decoys,
                    const EvalPipelineOptions& opt);

} // namespace polyfold
