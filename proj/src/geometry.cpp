#include "polyfold/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "polyfold/errors.hpp"

namespace polyfold {

namespace {

// Rank of the centered scatter matrix, for degeneracy detection.
int scatter_rank(const std::vector<Vec3>& pts) {
    const Vec3 c = centroid(pts);
    std::array<std::array<double, 3>, 3> s{};
    double scale = 0.0;
    for (const auto& p : pts) {
        const Vec3 d = p - c;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) s[i][j] += d[i] * d[j];
        scale += dot(d, d);
    }
    if (scale <= 0.0) return 0;
    std::array<double, 3> vals{};
    std::array<std::array<double, 3>, 3> vecs{};
    jacobi_eigen_sym<3>(s, vals, vecs);
    int rank = 0;
    for (double v : vals)
        if (v > 1e-10 * scale) ++rank;
    return rank;
}

Mat3 quaternion_to_rotation(double w, double x, double y, double z) {
    Mat3 r;
    r[0] = {w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)};
    r[1] = {2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)};
    r[2] = {2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z};
    return r;
}

} // namespace

Superposition kabsch_superpose(const std::vector<Vec3>& p, const std::vector<Vec3>& q) {
    if (p.size() != q.size())
        fail("LengthMismatch", "point sets of sizes " + std::to_string(p.size()) + " and "
                                   + std::to_string(q.size()));
    const std::size_t n = p.size();
    if (n < 3) fail("LengthMismatch", "need at least 3 points, got " + std::to_string(n));

    const Vec3 pc = centroid(p), qc = centroid(q);

    // Covariance of centered Q against centered P (Q is the moving set).
    Mat3 h{};
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 a = q[i] - qc, b = p[i] - pc;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) h[r][c] += a[r] * b[c];
    }

    // Horn's quaternion form: the rotation maximizing the trace is the top
    // eigenvector of the symmetric 4x4 key matrix. Always proper, so no
    // explicit reflection correction is needed.
    const double sxx = h[0][0], sxy = h[0][1], sxz = h[0][2];
    const double syx = h[1][0], syy = h[1][1], syz = h[1][2];
    const double szx = h[2][0], szy = h[2][1], szz = h[2][2];
    std::array<std::array<double, 4>, 4> key = {{
        {sxx + syy + szz, syz - szy, szx - sxz, sxy - syx},
        {syz - szy, sxx - syy - szz, sxy + syx, szx + sxz},
        {szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy},
        {sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz},
    }};
    std::array<double, 4> vals{};
    std::array<std::array<double, 4>, 4> vecs{};
    jacobi_eigen_sym<4>(key, vals, vecs);

    Superposition out;
    out.rotation = quaternion_to_rotation(vecs[0][0], vecs[1][0], vecs[2][0], vecs[3][0]);
    out.translation = pc - mat_apply(out.rotation, qc);
    out.degenerate = scatter_rank(p) < 2 || scatter_rank(q) < 2;

    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += dist2(out.apply(q[i]), p[i]);
    out.rmsd = std::sqrt(ss / double(n));
    return out;
}

double rmsd(const std::vector<Vec3>& p, const std::vector<Vec3>& q, bool superposed) {
    if (p.size() != q.size())
        fail("LengthMismatch", "point sets of sizes " + std::to_string(p.size()) + " and "
                                   + std::to_string(q.size()));
    if (superposed) return kabsch_superpose(p, q).rmsd;
    if (p.empty()) return 0.0;
    double ss = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) ss += dist2(p[i], q[i]);
    return std::sqrt(ss / double(p.size()));
}

namespace {

double tm_sum(const std::vector<Vec3>& pm, const std::vector<Vec3>& qm,
              const Superposition& sup, double d0) {
    const double d0sq = d0 * d0;
    double s = 0.0;
    for (std::size_t i = 0; i < pm.size(); ++i) {
        const double dd = dist2(pm[i], sup.apply(qm[i]));
        s += 1.0 / (1.0 + dd / d0sq);
    }
    return s;
}

// Residues within `cutoff` of their partner under the current superposition;
// relaxes the cutoff until at least 3 survive.
std::vector<int> close_subset(const std::vector<Vec3>& pm, const std::vector<Vec3>& qm,
                              const Superposition& sup, double cutoff) {
    std::vector<int> sel;
    for (;;) {
        sel.clear();
        const double c2 = cutoff * cutoff;
        for (std::size_t i = 0; i < pm.size(); ++i)
            if (dist2(pm[i], sup.apply(qm[i])) < c2) sel.push_back(int(i));
        if (sel.size() >= 3 || sel.size() == pm.size()) return sel;
        cutoff += 0.5;
    }
}

} // namespace

double tm_score(const std::vector<Vec3>& p, const std::vector<Vec3>& q,
                const std::vector<std::pair<int, int>>& mapping) {
    if (mapping.size() < 5)
        fail("TooShort", "mapping aligns " + std::to_string(mapping.size()) + " residue pairs, need >= 5");

    const std::size_t ref_len = q.size();
    const double d0 = tm_d0(ref_len);
    const double d_search = std::clamp(d0, 4.5, 8.0);

    std::vector<Vec3> pm, qm;
    pm.reserve(mapping.size());
    qm.reserve(mapping.size());
    for (const auto& [pi, qi] : mapping) {
        pm.push_back(p.at(std::size_t(pi)));
        qm.push_back(q.at(std::size_t(qi)));
    }
    const int L = int(pm.size());

    double best = 0.0;
    const int seed_lengths[3] = {L, std::max(4, L / 2), std::max(4, L / 4)};
    for (int len : seed_lengths) {
        for (int start = 0; start + len <= L; ++start) {
            std::vector<Vec3> ps(pm.begin() + start, pm.begin() + start + len);
            std::vector<Vec3> qs(qm.begin() + start, qm.begin() + start + len);
            Superposition sup = kabsch_superpose(ps, qs);
            best = std::max(best, tm_sum(pm, qm, sup, d0));

            std::vector<int> sel = close_subset(pm, qm, sup, d_search + 1.0);
            std::vector<int> prev;
            for (int round = 0; round < 20; ++round) {
                std::vector<Vec3> psel, qsel;
                psel.reserve(sel.size());
                qsel.reserve(sel.size());
                for (int i : sel) {
                    psel.push_back(pm[std::size_t(i)]);
                    qsel.push_back(qm[std::size_t(i)]);
                }
                sup = kabsch_superpose(psel, qsel);
                best = std::max(best, tm_sum(pm, qm, sup, d0));
                prev = std::move(sel);
                sel = close_subset(pm, qm, sup, d_search + 1.0);
                if (sel == prev) break;
            }
            if (len == L) break; // full-length seed has a single placement
        }
    }
    return best / double(ref_len);
}

AngleRow torsion(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    const Vec3 b1 = b - a, b2 = c - b, b3 = d - c;
    const Vec3 n1 = cross(b1, b2), n2 = cross(b2, b3);
    const double n1n = norm(n1), n2n = norm(n2), b2n = norm(b2);
    if (n1n < 1e-9 || n2n < 1e-9 || b2n < 1e-12) return {0.0, false};
    const double x = dot(n1, n2);
    const double y = dot(cross(n1, n2), {b2[0] / b2n, b2[1] / b2n, b2[2] / b2n});
    double ang = std::atan2(y, x);
    if (ang <= -M_PI) ang = M_PI;
    return {ang, true};
}

AngleRow bond_angle(const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 u = a - b, v = c - b;
    const double un = norm(u), vn = norm(v);
    if (un < 1e-12 || vn < 1e-12) return {0.0, false};
    double cosv = dot(u, v) / (un * vn);
    cosv = std::clamp(cosv, -1.0, 1.0);
    return {std::acos(cosv), true};
}

std::vector<std::array<AngleRow, 3>> dihedrals(const BackboneChain& c) {
    const std::size_t n = c.size();
    if (n == 0) fail("EmptyBackbone", "dihedrals on empty chain");
    std::vector<std::array<AngleRow, 3>> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3& ni = c.coords[i][0];
        const Vec3& cai = c.coords[i][1];
        const Vec3& ci = c.coords[i][2];
        if (i > 0) {
            const Vec3& cprev = c.coords[i - 1][2];
            const Vec3& caprev = c.coords[i - 1][1];
            out[i][0] = torsion(cprev, ni, cai, ci);           // phi
            out[i][2] = torsion(caprev, cprev, ni, cai);       // omega
        }
        if (i + 1 < n) {
            const Vec3& nnext = c.coords[i + 1][0];
            out[i][1] = torsion(ni, cai, ci, nnext);           // psi
        }
    }
    return out;
}

std::vector<std::array<AngleRow, 2>> virtual_angles(const BackboneChain& c) {
    const std::size_t n = c.size();
    std::vector<std::array<AngleRow, 2>> out(n);
    const auto ca = c.ca();
    for (std::size_t i = 0; i < n; ++i) {
        if (i >= 2 && i + 2 < n) out[i][0] = bond_angle(ca[i - 2], ca[i], ca[i + 2]); // kappa
        if (i >= 1 && i + 2 < n) out[i][1] = torsion(ca[i - 1], ca[i], ca[i + 1], ca[i + 2]); // alpha
    }
    return out;
}

EdgeList knn_graph(const std::vector<Vec3>& coords, int k) {
    const int n = int(coords.size());
    EdgeList out;
    out.k = k;
    if (n < 2) return out;
    const int kk = std::min(k, n - 1);
    out.edges.reserve(std::size_t(n) * std::size_t(kk));

    std::vector<std::pair<double, int>> cand(std::size_t(n) - 1);
    for (int i = 0; i < n; ++i) {
        cand.clear();
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            cand.emplace_back(dist2(coords[std::size_t(i)], coords[std::size_t(j)]), j);
        }
        std::partial_sort(cand.begin(), cand.begin() + kk, cand.end());
        for (int e = 0; e < kk; ++e)
            out.edges.push_back({i, cand[std::size_t(e)].second, std::sqrt(cand[std::size_t(e)].first)});
    }
    return out;
}

std::array<double, kRbfBins> rbf_expand(double d) {
    std::array<double, kRbfBins> out{};
    const double spacing = kRbfMax / double(kRbfBins - 1);
    for (int i = 0; i < kRbfBins; ++i) {
        const double mu = spacing * double(i);
        const double z = (d - mu) / spacing;
        out[std::size_t(i)] = std::exp(-0.5 * z * z);
    }
    return out;
}

} // namespace polyfold
