#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "polyfold/linalg.hpp"

namespace polyfold {

struct RawAtom {
    std::string name;   // stripped, e.g. "CA"
    Vec3 xyz{};
    double bfactor = 0.0;
};

struct RawResidue {
    int number = 0;           // resSeq column; insertion codes are ignored
    std::string name;         // three-letter code
    char one_letter = 'X';    // 'X' for nonstandard residues
    std::vector<RawAtom> atoms;

    const RawAtom* find_atom(const std::string& atom_name) const;
};

struct RawChain {
    std::string chain_id;
    std::vector<RawResidue> residues;
};

struct Structure {
    std::string id;
    std::vector<RawChain> chains; // file order
    std::string source_path;

    const RawChain* find_chain(const std::string& chain_id) const;
};

// Backbone of one chain: per residue the (N, CA, C) coordinates in file
// order, the derived one-letter sequence, and the CA B-factor as a
// per-residue confidence when the file carries one (pLDDT for oracle
// outputs).
struct BackboneChain {
    std::string chain_id;
    std::string sequence;                      // length n
    std::vector<std::array<Vec3, 3>> coords;   // n x (N, CA, C)
    std::vector<int> residue_numbers;          // strictly increasing
    std::optional<std::vector<double>> confidence;

    std::size_t size() const { return sequence.size(); }
    std::vector<Vec3> ca() const;
};

struct ExtractResult {
    BackboneChain chain;
    std::vector<std::size_t> dropped; // indices (pre-drop) missing N/CA/C
};

// One Structure per MODEL block; files without MODEL records yield one
// entry. Ids of multi-model files are suffixed "_model<k>".
std::vector<Structure> parse_structures(const std::string& path);

// Single-structure convenience: first (or only) model.
Structure parse_structure(const std::string& path);

ExtractResult extract_backbone(const Structure& s, const std::string& chain_id);

double read_confidence(const BackboneChain& c);

char three_to_one(const std::string& res_name);

// Minimal legacy-PDB writer for backbones; per-residue bfactor goes into
// the B-factor column of every atom of that residue.
void write_backbone_pdb(const BackboneChain& chain, const std::string& path,
                        const std::vector<double>* bfactor = nullptr);

} // namespace polyfold
