#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "polyfold/linalg.hpp"
#include "polyfold/struct_io.hpp"

namespace polyfold {

// Rigid transform x -> R*x + t mapping the second point set (Q) into the
// frame of the first (P), with the CA RMSD after superposition.
struct Superposition {
    Mat3 rotation = mat_identity();
    Vec3 translation{0, 0, 0};
    double rmsd = 0.0;
    bool degenerate = false; // rank-deficient input (collinear / n < 3)

    Vec3 apply(const Vec3& x) const { return mat_apply(rotation, x) + translation; }
};

struct EdgeList {
    struct Edge {
        int src = 0;
        int dst = 0;
        double length = 0.0;
    };
    std::vector<Edge> edges;
    int k = 0;
};

struct AngleRow {
    double value = 0.0;
    bool valid = false;
};

Superposition kabsch_superpose(const std::vector<Vec3>& p, const std::vector<Vec3>& q);

double rmsd(const std::vector<Vec3>& p, const std::vector<Vec3>& q, bool superposed);

// Correspondence (index into P, index into Q); the score is normalized by
// the reference length |Q| and maximized over superpositions found by
// fragment seeding plus iterative refinement.
double tm_score(const std::vector<Vec3>& p, const std::vector<Vec3>& q,
                const std::vector<std::pair<int, int>>& mapping);

inline double tm_d0(std::size_t reference_length) {
    if (reference_length <= 15) return 0.5;
    const double d0 = 1.24 * std::cbrt(double(reference_length) - 15.0) - 1.8;
    return d0 < 0.5 ? 0.5 : d0;
}

// n x 3 rows of (phi, psi, omega); angles that need atoms beyond the chain
// ends, or degenerate (collinear) geometry, are masked invalid with value 0.
std::vector<std::array<AngleRow, 3>> dihedrals(const BackboneChain& c);

// n x 2 rows of (kappa, alpha) over the CA trace.
std::vector<std::array<AngleRow, 2>> virtual_angles(const BackboneChain& c);

// Each node gets min(k, n-1) outgoing edges to its nearest CA neighbors;
// distance ties break toward the lower index.
EdgeList knn_graph(const std::vector<Vec3>& coords, int k);

inline constexpr int kRbfBins = 32;
inline constexpr double kRbfMax = 20.0; // Angstrom; covers k-NN edge lengths

std::array<double, kRbfBins> rbf_expand(double d);

// Four-point torsion in (-pi, pi]; invalid (collinear) marked in the flag.
AngleRow torsion(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

// Angle at vertex b between arms (a - b) and (c - b), in [0, pi].
AngleRow bond_angle(const Vec3& a, const Vec3& b, const Vec3& c);

} // namespace polyfold
