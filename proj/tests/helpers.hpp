#pragma once

// Shared fixtures and independent oracles for the test suites. Oracles here
// deliberately avoid the library's own code paths: brute-force scans, grid
// searches, and straight-line re-implementations.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "polyfold/linalg.hpp"

namespace testutil {

using polyfold::Vec3;
using polyfold::Mat3;

inline std::filesystem::path make_temp_dir(const std::string& tag) {
    static std::mt19937_64 eng{std::random_device{}()};
    auto dir = std::filesystem::temp_directory_path()
               / ("polyfold_" + tag + "_" + std::to_string(eng()));
    std::filesystem::create_directories(dir);
    return dir;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) : path(make_temp_dir(tag)) {}
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

// One ATOM record, fixed columns per wwPDB v3.3.
inline std::string pdb_atom_line(int serial, const std::string& atom, const std::string& res,
                                 char chain, int res_seq, double x, double y, double z,
                                 double bfactor = 0.0, double occupancy = 1.0) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "ATOM  %5d  %-3s %3s %c%4d    %8.3f%8.3f%8.3f%6.2f%6.2f",
                  serial, atom.c_str(), res.c_str(), chain, res_seq, x, y, z, occupancy,
                  bfactor);
    return buf;
}

// A minimal residue: N at (x,y,z), CA at +1.5 x, C at +1.5 x +1.5 y.
inline void append_residue(std::string& text, int& serial, char chain, int res_seq,
                           const std::string& res3, Vec3 n_pos, double bfactor = 0.0) {
    text += pdb_atom_line(serial++, "N", res3, chain, res_seq, n_pos[0], n_pos[1], n_pos[2], bfactor) + "\n";
    text += pdb_atom_line(serial++, "CA", res3, chain, res_seq, n_pos[0] + 1.5, n_pos[1], n_pos[2], bfactor) + "\n";
    text += pdb_atom_line(serial++, "C", res3, chain, res_seq, n_pos[0] + 1.5, n_pos[1] + 1.5, n_pos[2], bfactor) + "\n";
}

inline void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

inline Mat3 rotation_from_euler(double a, double b, double c) {
    const double ca = std::cos(a), sa = std::sin(a);
    const double cb = std::cos(b), sb = std::sin(b);
    const double cc = std::cos(c), sc = std::sin(c);
    // z-y-z convention
    Mat3 r;
    r[0] = {ca * cb * cc - sa * sc, -ca * cb * sc - sa * cc, ca * sb};
    r[1] = {sa * cb * cc + ca * sc, -sa * cb * sc + ca * cc, sa * sb};
    r[2] = {-sb * cc, sb * sc, cb};
    return r;
}

inline Mat3 random_rotation(std::mt19937_64& eng) {
    std::normal_distribution<double> g(0.0, 1.0);
    double q[4] = {g(eng), g(eng), g(eng), g(eng)};
    double qn = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    for (double& v : q) v /= qn;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r[0] = {w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)};
    r[1] = {2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)};
    r[2] = {2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z};
    return r;
}

inline std::vector<Vec3> random_points(std::mt19937_64& eng, std::size_t n, double scale = 5.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    std::vector<Vec3> out(n);
    for (auto& p : out) p = {u(eng), u(eng), u(eng)};
    return out;
}

inline std::vector<Vec3> apply_rigid(const std::vector<Vec3>& pts, const Mat3& r, const Vec3& t) {
    std::vector<Vec3> out;
    out.reserve(pts.size());
    for (const auto& p : pts) out.push_back(polyfold::mat_apply(r, p) + t);
    return out;
}

// Oracle: minimum RMSD over a 1-degree Euler grid of SO(3), translation
// solved exactly by centroid matching.
inline double grid_search_min_rmsd(const std::vector<Vec3>& p, const std::vector<Vec3>& q) {
    using namespace polyfold;
    const Vec3 pc = centroid(p), qc = centroid(q);
    std::vector<Vec3> pcent, qcent;
    for (const auto& v : p) pcent.push_back(v - pc);
    for (const auto& v : q) qcent.push_back(v - qc);

    const double deg = M_PI / 180.0;
    double best = 1e300;
    for (int ia = 0; ia < 360; ++ia) {
        for (int ib = 0; ib <= 180; ++ib) {
            for (int ic = 0; ic < 360; ++ic) {
                const Mat3 r = rotation_from_euler(ia * deg, ib * deg, ic * deg);
                double ss = 0.0;
                for (std::size_t i = 0; i < p.size(); ++i)
                    ss += dist2(mat_apply(r, qcent[i]), pcent[i]);
                if (ss < best) best = ss;
            }
        }
    }
    return std::sqrt(best / double(p.size()));
}

// Oracle: exhaustive all-pairs k-NN with (distance, index) tie-breaking.
inline std::set<std::pair<int, int>> brute_force_knn(const std::vector<Vec3>& pts, int k) {
    using namespace polyfold;
    std::set<std::pair<int, int>> edges;
    const int n = int(pts.size());
    const int kk = std::min(k, n - 1);
    for (int i = 0; i < n; ++i) {
        std::vector<std::pair<double, int>> cand;
        for (int j = 0; j < n; ++j)
            if (j != i) cand.emplace_back(dist2(pts[std::size_t(i)], pts[std::size_t(j)]), j);
        std::sort(cand.begin(), cand.end());
        for (int e = 0; e < kk; ++e) edges.emplace(i, cand[std::size_t(e)].second);
    }
    return edges;
}

// Ideal alpha-helix CA trace: rise 1.5 A, radius 2.3 A, 100 deg per residue.
inline std::vector<Vec3> helix_ca(std::size_t n) {
    std::vector<Vec3> out(n);
    const double turn = 100.0 * M_PI / 180.0;
    for (std::size_t i = 0; i < n; ++i)
        out[i] = {2.3 * std::cos(turn * double(i)), 2.3 * std::sin(turn * double(i)),
                  1.5 * double(i)};
    return out;
}

} // namespace testutil

// ---------------------------------------------------------------------------
// Synthetic desk-scale corpus shared by the CLI test and the acceptance
// suite: six two-conformer families with increasing inter-state RMSD, one
// family carrying a partner chain, plus dissimilar singletons usable as a
// decoy pool.

#include <cstdlib>
#include <map>

namespace testutil {

struct CorpusFamily {
    std::string id_a, id_b; // structure ids
    std::string sequence;
};

inline std::string family_sequence(int family, std::size_t len, std::mt19937_64& eng) {
    static const char* alphabet = "ACDEFGHIKLMNPQRSTVWY";
    std::string s;
    for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[(eng() + std::size_t(family) * 7) % 20]);
    return s;
}

inline std::vector<Vec3> walk_ca(std::mt19937_64& eng, std::size_t n) {
    std::vector<Vec3> ca(n);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> len(3.6, 4.0);
    ca[0] = {0, 0, 0};
    for (std::size_t i = 1; i < n; ++i) {
        Vec3 step{g(eng), g(eng), g(eng)};
        ca[i] = ca[i - 1] + (len(eng) / std::max(polyfold::norm(step), 1e-9)) * step;
    }
    return ca;
}

inline void write_chain_pdb_text(std::string& text, int& serial, char chain_id,
                                 const std::string& seq, const std::vector<Vec3>& ca,
                                 double bfactor = 0.0) {
    static const std::map<char, std::string> three = {
        {'A', "ALA"}, {'C', "CYS"}, {'D', "ASP"}, {'E', "GLU"}, {'F', "PHE"}, {'G', "GLY"},
        {'H', "HIS"}, {'I', "ILE"}, {'K', "LYS"}, {'L', "LEU"}, {'M', "MET"}, {'N', "ASN"},
        {'P', "PRO"}, {'Q', "GLN"}, {'R', "ARG"}, {'S', "SER"}, {'T', "THR"}, {'V', "VAL"},
        {'W', "TRP"}, {'Y', "TYR"}, {'X', "UNK"}};
    for (std::size_t i = 0; i < ca.size(); ++i) {
        const std::string& res = three.at(seq[i]);
        const Vec3 n = ca[i] + Vec3{-1.2, 0.4, 0.1};
        const Vec3 c = ca[i] + Vec3{1.2, 0.4, -0.1};
        text += pdb_atom_line(serial++, "N", res, chain_id, int(i) + 1, n[0], n[1], n[2], bfactor) + "\n";
        text += pdb_atom_line(serial++, "CA", res, chain_id, int(i) + 1, ca[i][0], ca[i][1], ca[i][2], bfactor) + "\n";
        text += pdb_atom_line(serial++, "C", res, chain_id, int(i) + 1, c[0], c[1], c[2], bfactor) + "\n";
    }
    text += "TER\n";
}

// Conformer B of a family: the second half hinges by an angle that grows
// with the family index, giving a strictly increasing inter-state RMSD.
inline std::vector<Vec3> hinge(const std::vector<Vec3>& ca, double angle_rad) {
    std::vector<Vec3> out = ca;
    const std::size_t pivot = ca.size() / 2;
    const Mat3 r = rotation_from_euler(angle_rad, angle_rad * 0.7, 0.0);
    for (std::size_t i = pivot; i < ca.size(); ++i) {
        const Vec3 rel = ca[i] - ca[pivot];
        out[i] = ca[pivot] + polyfold::mat_apply(r, rel);
    }
    return out;
}

struct Corpus {
    std::vector<CorpusFamily> families;
    std::vector<std::string> singleton_ids;
};

inline Corpus write_corpus(const std::filesystem::path& dir, int n_families = 6,
                           std::size_t base_len = 14) {
    std::filesystem::create_directories(dir);
    Corpus corpus;
    std::mt19937_64 eng(2024);
    for (int f = 0; f < n_families; ++f) {
        const std::size_t len = base_len + std::size_t(f);
        const std::string seq = family_sequence(f, len, eng);
        const auto ca_a = walk_ca(eng, len);
        const auto ca_b = hinge(ca_a, 0.25 + 0.35 * double(f));

        CorpusFamily fam;
        fam.id_a = "fam" + std::to_string(f) + "a";
        fam.id_b = "fam" + std::to_string(f) + "b";
        fam.sequence = seq;

        for (int which = 0; which < 2; ++which) {
            std::string text;
            int serial = 1;
            write_chain_pdb_text(text, serial, 'A', seq, which == 0 ? ca_a : ca_b, 77.0);
            if (f == 0) {
                // family 0 carries a dissimilar partner chain in both states
                const std::string part_seq = family_sequence(17, 12, eng);
                auto part = walk_ca(eng, 12);
                for (auto& p : part) p = p + Vec3{18.0, 2.0, -4.0};
                write_chain_pdb_text(text, serial, 'B', part_seq, part, 55.0);
            }
            text += "END\n";
            write_file((dir / ((which == 0 ? fam.id_a : fam.id_b) + ".pdb")).string(), text);
        }
        corpus.families.push_back(fam);
    }
    for (int s = 0; s < 2; ++s) {
        const std::string id = "single" + std::to_string(s);
        const std::size_t len = base_len + 2 + std::size_t(s);
        std::string text;
        int serial = 1;
        write_chain_pdb_text(text, serial, 'A', family_sequence(40 + s, len, eng),
                             walk_ca(eng, len), 60.0);
        text += "END\n";
        write_file((dir / (id + ".pdb")).string(), text);
        corpus.singleton_ids.push_back(id);
    }
    return corpus;
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline int run_cmd(const std::string& cmd) {
    const int rc = std::system(cmd.c_str());
    return rc < 0 ? rc : WEXITSTATUS(rc);
}

} // namespace testutil
