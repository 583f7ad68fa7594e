#include "polyfold/autodiff.hpp"

#include <cmath>

#include "polyfold/errors.hpp"

namespace polyfold::ad {

namespace {

void require(bool cond, const char* what) {
    if (!cond) fail("ShapeMismatch", what);
}

} // namespace

int Tape::push(Shape s, std::vector<double> val, bool needs_grad) {
    Node n;
    n.shape = s;
    n.val = std::move(val);
    n.needs_grad = needs_grad && track_;
    if (n.needs_grad) n.grad.assign(n.shape.size(), 0.0);
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
}

int Tape::leaf(const Shape& s, std::vector<double> data, bool needs_grad) {
    require(data.size() == s.size(), "leaf data size");
    return push(s, std::move(data), needs_grad);
}

int Tape::linear(int x, int w, int bias) {
    const Shape& sx = shape(x);
    const Shape& sw = shape(w);
    const Shape& sb = shape(bias);
    require(sx.ndim == 2 && sw.ndim == 2 && sx.d[1] == sw.d[1], "linear dims");
    require(sb.size() == std::size_t(sw.d[0]), "linear bias dim");
    const int n = sx.d[0], a = sx.d[1], b = sw.d[0];

    std::vector<double> out(std::size_t(n) * std::size_t(b));
    const auto& xv = val(x);
    const auto& wv = val(w);
    const auto& bv = val(bias);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < b; ++c) {
            double acc = bv[std::size_t(c)];
            const std::size_t xo = std::size_t(i) * std::size_t(a);
            const std::size_t wo = std::size_t(c) * std::size_t(a);
            for (int k = 0; k < a; ++k) acc += xv[xo + std::size_t(k)] * wv[wo + std::size_t(k)];
            out[std::size_t(i) * std::size_t(b) + std::size_t(c)] = acc;
        }

    const int id = push(Shape::mat(n, b), std::move(out), wants(x) || wants(w) || wants(bias));
    if (track_ && wants(id)) {
        back_.push_back([this, x, w, bias, id, n, a, b] {
            const auto& dy = grad(id);
            const auto& xv2 = val(x);
            const auto& wv2 = val(w);
            if (wants(x)) {
                auto& dx = g(x);
                for (int i = 0; i < n; ++i)
                    for (int c = 0; c < b; ++c) {
                        const double d = dy[std::size_t(i) * std::size_t(b) + std::size_t(c)];
                        if (d == 0.0) continue;
                        const std::size_t xo = std::size_t(i) * std::size_t(a);
                        const std::size_t wo = std::size_t(c) * std::size_t(a);
                        for (int k = 0; k < a; ++k) dx[xo + std::size_t(k)] += d * wv2[wo + std::size_t(k)];
                    }
            }
            if (wants(w)) {
                auto& dw = g(w);
                for (int i = 0; i < n; ++i)
                    for (int c = 0; c < b; ++c) {
                        const double d = dy[std::size_t(i) * std::size_t(b) + std::size_t(c)];
                        if (d == 0.0) continue;
                        const std::size_t xo = std::size_t(i) * std::size_t(a);
                        const std::size_t wo = std::size_t(c) * std::size_t(a);
                        for (int k = 0; k < a; ++k) dw[wo + std::size_t(k)] += d * xv2[xo + std::size_t(k)];
                    }
            }
            if (wants(bias)) {
                auto& db = g(bias);
                for (int i = 0; i < n; ++i)
                    for (int c = 0; c < b; ++c)
                        db[std::size_t(c)] += dy[std::size_t(i) * std::size_t(b) + std::size_t(c)];
            }
        });
    }
    return id;
}

int Tape::vecmix(int w, int v) {
    const Shape& sw = shape(w);
    const Shape& sv = shape(v);
    require(sw.ndim == 2 && sv.ndim == 3 && sw.d[1] == sv.d[1], "vecmix dims");
    const int n = sv.d[0], a = sv.d[1], b = sw.d[0];

    std::vector<double> out(std::size_t(n) * std::size_t(b) * 3, 0.0);
    const auto& wv = val(w);
    const auto& vv = val(v);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < b; ++c) {
            const std::size_t oo = (std::size_t(i) * std::size_t(b) + std::size_t(c)) * 3;
            const std::size_t wo = std::size_t(c) * std::size_t(a);
            for (int k = 0; k < a; ++k) {
                const double wk = wv[wo + std::size_t(k)];
                const std::size_t vo = (std::size_t(i) * std::size_t(a) + std::size_t(k)) * 3;
                out[oo + 0] += wk * vv[vo + 0];
                out[oo + 1] += wk * vv[vo + 1];
                out[oo + 2] += wk * vv[vo + 2];
            }
        }

    const int id = push(Shape::vec3(n, b), std::move(out), wants(w) || wants(v));
    if (track_ && wants(id)) {
        back_.push_back([this, w, v, id, n, a, b] {
            const auto& dy = grad(id);
            const auto& wv2 = val(w);
            const auto& vv2 = val(v);
            if (wants(v)) {
                auto& dv = g(v);
                for (int i = 0; i < n; ++i)
                    for (int c = 0; c < b; ++c) {
                        const std::size_t oo = (std::size_t(i) * std::size_t(b) + std::size_t(c)) * 3;
                        const std::size_t wo = std::size_t(c) * std::size_t(a);
                        for (int k = 0; k < a; ++k) {
                            const double wk = wv2[wo + std::size_t(k)];
                            const std::size_t vo = (std::size_t(i) * std::size_t(a) + std::size_t(k)) * 3;
                            dv[vo + 0] += wk * dy[oo + 0];
                            dv[vo + 1] += wk * dy[oo + 1];
                            dv[vo + 2] += wk * dy[oo + 2];
                        }
                    }
            }
            if (wants(w)) {
                auto& dw = g(w);
                for (int i = 0; i < n; ++i)
                    for (int c = 0; c < b; ++c) {
                        const std::size_t oo = (std::size_t(i) * std::size_t(b) + std::size_t(c)) * 3;
                        const std::size_t wo = std::size_t(c) * std::size_t(a);
                        for (int k = 0; k < a; ++k) {
                            const std::size_t vo = (std::size_t(i) * std::size_t(a) + std::size_t(k)) * 3;
                            dw[wo + std::size_t(k)] += dy[oo + 0] * vv2[vo + 0]
                                                     + dy[oo + 1] * vv2[vo + 1]
                                                     + dy[oo + 2] * vv2[vo + 2];
                        }
                    }
            }
        });
    }
    return id;
}

int Tape::add(int a, int b) {
    require(shape(a) == shape(b), "add shapes");
    std::vector<double> out = val(a);
    const auto& bv = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    const int id = push(shape(a), std::move(out), wants(a) || wants(b));
    if (track_ && wants(id)) {
        back_.push_back([this, a, b, id] {
            const auto& dy = grad(id);
            if (wants(a)) {
                auto& da = g(a);
                for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
            }
            if (wants(b)) {
                auto& db = g(b);
                for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
            }
        });
    }
    return id;
}

int Tape::sub(int a, int b) {
    require(shape(a) == shape(b), "sub shapes");
    std::vector<double> out = val(a);
    const auto& bv = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    const int id = push(shape(a), std::move(out), wants(a) || wants(b));
    if (track_ && wants(id)) {
        back_.push_back([this, a, b, id] {
            const auto& dy = grad(id);
            if (wants(a)) {
                auto& da = g(a);
                for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
            }
            if (wants(b)) {
                auto& db = g(b);
                for (std::size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
            }
        });
    }
    return id;
}

int Tape::hadamard(int a, int b) {
    require(shape(a) == shape(b), "hadamard shapes");
    std::vector<double> out = val(a);
    const auto& bv = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const int id = push(shape(a), std::move(out), wants(a) || wants(b));
    if (track_ && wants(id)) {
        back_.push_back([this, a, b, id] {
            const auto& dy = grad(id);
            const auto& av = val(a);
            const auto& bv2 = val(b);
            if (wants(a)) {
                auto& da = g(a);
                for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv2[i];
            }
            if (wants(b)) {
                auto& db = g(b);
                for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
            }
        });
    }
    return id;
}

int Tape::scale(int a, double c) {
    std::vector<double> out = val(a);
    for (double& v : out) v *= c;
    const int id = push(shape(a), std::move(out), wants(a));
    if (track_ && wants(id)) {
        back_.push_back([this, a, c, id] {
            const auto& dy = grad(id);
            auto& da = g(a);
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += c * dy[i];
        });
    }
    return id;
}

int Tape::mulmask(int a, std::vector<double> mask) {
    require(mask.size() == shape(a).size(), "mulmask size");
    std::vector<double> out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    const int id = push(shape(a), std::move(out), wants(a));
    if (track_ && wants(id)) {
        back_.push_back([this, a, id, m = std::move(mask)] {
            const auto& dy = grad(id);
            auto& da = g(a);
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += m[i] * dy[i];
        });
    }
    return id;
}

int Tape::concat_ch(const std::vector<int>& xs) {
    require(!xs.empty(), "concat_ch inputs");
    const int n = shape(xs[0]).d[0];
    int total = 0;
    bool ng = false;
    for (int x : xs) {
        require(shape(x).ndim == 2 && shape(x).d[0] == n, "concat_ch shapes");
        total += shape(x).d[1];
        ng = ng || wants(x);
    }
    std::vector<double> out(std::size_t(n) * std::size_t(total));
    int off = 0;
    for (int x : xs) {
        const int c = shape(x).d[1];
        const auto& xv = val(x);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < c; ++k)
                out[std::size_t(i) * std::size_t(total) + std::size_t(off + k)] =
                    xv[std::size_t(i) * std::size_t(c) + std::size_t(k)];
        off += c;
    }
    const int id = push(Shape::mat(n, total), std::move(out), ng);
    if (track_ && wants(id)) {
        back_.push_back([this, xs, id, n, total] {
            const auto& dy = grad(id);
            int off2 = 0;
            for (int x : xs) {
                const int c = shape(x).d[1];
                if (wants(x)) {
                    auto& dx = g(x);
                    for (int i = 0; i < n; ++i)
                        for (int k = 0; k < c; ++k)
                            dx[std::size_t(i) * std::size_t(c) + std::size_t(k)] +=
                                dy[std::size_t(i) * std::size_t(total) + std::size_t(off2 + k)];
                }
                off2 += c;
            }
        });
    }
    return id;
}

int Tape::vconcat_ch(const std::vector<int>& vs) {
    require(!vs.empty(), "vconcat_ch inputs");
    const int n = shape(vs[0]).d[0];
    int total = 0;
    bool ng = false;
    for (int v : vs) {
        require(shape(v).ndim == 3 && shape(v).d[0] == n, "vconcat_ch shapes");
        total += shape(v).d[1];
        ng = ng || wants(v);
    }
    std::vector<double> out(std::size_t(n) * std::size_t(total) * 3);
    int off = 0;
    for (int v : vs) {
        const int c = shape(v).d[1];
        const auto& vv = val(v);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < c; ++k)
                for (int x = 0; x < 3; ++x)
                    out[(std::size_t(i) * std::size_t(total) + std::size_t(off + k)) * 3 + std::size_t(x)] =
                        vv[(std::size_t(i) * std::size_t(c) + std::size_t(k)) * 3 + std::size_t(x)];
        off += c;
    }
    const int id = push(Shape::vec3(n, total), std::move(out), ng);
    if (track_ && wants(id)) {
        back_.push_back([this, vs, id, n, total] {
            const auto& dy = grad(id);
            int off2 = 0;
            for (int v : vs) {
                const int c = shape(v).d[1];
                if (wants(v)) {
                    auto& dv = g(v);
                    for (int i = 0; i < n; ++i)
                        for (int k = 0; k < c; ++k)
                            for (int x = 0; x < 3; ++x)
                                dv[(std::size_t(i) * std::size_t(c) + std::size_t(k)) * 3 + std::size_t(x)] +=
                                    dy[(std::size_t(i) * std::size_t(total) + std::size_t(off2 + k)) * 3
                                       + std::size_t(x)];
                }
                off2 += c;
            }
        });
    }
    return id;
}

int Tape::concat_rows(const std::vector<int>& xs) {
    require(!xs.empty(), "concat_rows inputs");
    const Shape& s0 = shape(xs[0]);
    int rows = 0;
    bool ng = false;
    for (int x : xs) {
        require(shape(x).ndim == s0.ndim && shape(x).d[1] == s0.d[1] && shape(x).d[2] == s0.d[2],
                "concat_rows shapes");
        rows += shape(x).d[0];
        ng = ng || wants(x);
    }
    const std::size_t stride = std::size_t(s0.d[1]) * std::size_t(s0.d[2]);
    std::vector<double> out;
    out.reserve(std::size_t(rows) * stride);
    for (int x : xs) out.insert(out.end(), val(x).begin(), val(x).end());

    Shape s = s0;
    s.d[0] = rows;
    const int id = push(s, std::move(out), ng);
    if (track_ && wants(id)) {
        back_.push_back([this, xs, id, stride] {
            const auto& dy = grad(id);
            std::size_t off = 0;
            for (int x : xs) {
                const std::size_t cnt = std::size_t(shape(x).d[0]) * stride;
                if (wants(x)) {
                    auto& dx = g(x);
                    for (std::size_t i = 0; i < cnt; ++i) dx[i] += dy[off + i];
                }
                off += cnt;
            }
        });
    }
    return id;
}

int Tape::slice_rows(int x, int start, int len) {
    const Shape& sx = shape(x);
    require(start >= 0 && len >= 0 && start + len <= sx.d[0], "slice_rows range");
    const std::size_t stride = std::size_t(sx.d[1]) * std::size_t(sx.d[2]);
    std::vector<double> out(val(x).begin() + long(std::size_t(start) * stride),
                            val(x).begin() + long(std::size_t(start + len) * stride));
    Shape s = sx;
    s.d[0] = len;
    const int id = push(s, std::move(out), wants(x));
    if (track_ && wants(id)) {
        back_.push_back([this, x, id, start, stride] {
            const auto& dy = grad(id);
            auto& dx = g(x);
            const std::size_t off = std::size_t(start) * stride;
            for (std::size_t i = 0; i < dy.size(); ++i) dx[off + i] += dy[i];
        });
    }
    return id;
}

int Tape::gather_rows(int x, std::vector<int> idx) {
    const Shape& sx = shape(x);
    const std::size_t stride = std::size_t(sx.d[1]) * std::size_t(sx.d[2]);
    std::vector<double> out(idx.size() * stride);
    const auto& xv = val(x);
    for (std::size_t e = 0; e < idx.size(); ++e) {
        require(idx[e] >= 0 && idx[e] < sx.d[0], "gather_rows index");
        const std::size_t src = std::size_t(idx[e]) * stride;
        for (std::size_t k = 0; k < stride; ++k) out[e * stride + k] = xv[src + k];
    }
    Shape s = sx;
    s.d[0] = int(idx.size());
    const int id = push(s, std::move(out), wants(x));
    if (track_ && wants(id)) {
        back_.push_back([this, x, id, stride, ids = std::move(idx)] {
            const auto& dy = grad(id);
            auto& dx = g(x);
            for (std::size_t e = 0; e < ids.size(); ++e) {
                const std::size_t dst = std::size_t(ids[e]) * stride;
                for (std::size_t k = 0; k < stride; ++k) dx[dst + k] += dy[e * stride + k];
            }
        });
    }
    return id;
}

int Tape::row_comb(const RowComb& comb, int x) {
    const Shape& sx = shape(x);
    const std::size_t stride = std::size_t(sx.d[1]) * std::size_t(sx.d[2]);
    std::vector<double> out(comb.size() * stride, 0.0);
    const auto& xv = val(x);
    for (std::size_t i = 0; i < comb.size(); ++i)
        for (const auto& [row, wgt] : comb[i]) {
            require(row >= 0 && row < sx.d[0], "row_comb index");
            const std::size_t src = std::size_t(row) * stride;
            for (std::size_t k = 0; k < stride; ++k) out[i * stride + k] += wgt * xv[src + k];
        }
    Shape s = sx;
    s.d[0] = int(comb.size());
    const int id = push(s, std::move(out), wants(x));
    if (track_ && wants(id)) {
        back_.push_back([this, x, id, stride, comb] {
            const auto& dy = grad(id);
            auto& dx = g(x);
            for (std::size_t i = 0; i < comb.size(); ++i)
                for (const auto& [row, wgt] : comb[i]) {
                    const std::size_t dst = std::size_t(row) * stride;
                    for (std::size_t k = 0; k < stride; ++k) dx[dst + k] += wgt * dy[i * stride + k];
                }
        });
    }
    return id;
}

int Tape::rownorm3(int v, double eps) {
    const Shape& sv = shape(v);
    require(sv.ndim == 3, "rownorm3 input");
    const int n = sv.d[0], c = sv.d[1];
    std::vector<double> out(std::size_t(n) * std::size_t(c));
    const auto& vv = val(v);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::size_t vo = i * 3;
        out[i] = std::sqrt(vv[vo] * vv[vo] + vv[vo + 1] * vv[vo + 1] + vv[vo + 2] * vv[vo + 2] + eps);
    }
    const int id = push(Shape::mat(n, c), std::move(out), wants(v));
    if (track_ && wants(id)) {
        back_.push_back([this, v, id] {
            const auto& dy = grad(id);
            const auto& yv = val(id);
            const auto& vv2 = val(v);
            auto& dv = g(v);
            for (std::size_t i = 0; i < dy.size(); ++i) {
                const double scale = dy[i] / yv[i];
                const std::size_t vo = i * 3;
                dv[vo] += scale * vv2[vo];
                dv[vo + 1] += scale * vv2[vo + 1];
                dv[vo + 2] += scale * vv2[vo + 2];
            }
        });
    }
    return id;
}

int Tape::relu(int x) {
    std::vector<double> out = val(x);
    for (double& v : out)
        if (v < 0.0) v = 0.0;
    const int id = push(shape(x), std::move(out), wants(x));
    if (track_ && wants(id)) {
        back_.push_back([this, x, id] {
            const auto& dy = grad(id);
            const auto& xv = val(x);
            auto& dx = g(x);
            for (std::size_t i = 0; i < dy.size(); ++i)
                if (xv[i] > 0.0) dx[i] += dy[i];
        });
    }
    return id;
}

int Tape::sigmoid(int x) {
    std::vector<double> out = val(x);
    for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
    const int id = push(shape(x), std::move(out), wants(x));
    if (track_ && wants(id)) {
        back_.push_back([this, x, id] {
            const auto& dy = grad(id);
            const auto& yv = val(id);
            auto& dx = g(x);
            for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * yv[i] * (1.0 - yv[i]);
        });
    }
    return id;
}

int Tape::gatemul(int gate, int v) {
    const Shape& sg = shape(gate);
    const Shape& sv = shape(v);
    require(sg.ndim == 2 && sv.ndim == 3 && sg.d[0] == sv.d[0] && sg.d[1] == sv.d[1],
            "gatemul shapes");
    std::vector<double> out = val(v);
    const auto& gv = val(gate);
    for (std::size_t i = 0; i < gv.size(); ++i) {
        out[i * 3] *= gv[i];
        out[i * 3 + 1] *= gv[i];
        out[i * 3 + 2] *= gv[i];
    }
    const int id = push(sv, std::move(out), wants(gate) || wants(v));
    if (track_ && wants(id)) {
        back_.push_back([this, gate, v, id] {
            const auto& dy = grad(id);
            const auto& gv2 = val(gate);
            const auto& vv = val(v);
            if (wants(v)) {
                auto& dv = g(v);
                for (std::size_t i = 0; i < gv2.size(); ++i) {
                    dv[i * 3] += dy[i * 3] * gv2[i];
                    dv[i * 3 + 1] += dy[i * 3 + 1] * gv2[i];
                    dv[i * 3 + 2] += dy[i * 3 + 2] * gv2[i];
                }
            }
            if (wants(gate)) {
                auto& dg = g(gate);
                for (std::size_t i = 0; i < gv2.size(); ++i)
                    dg[i] += dy[i * 3] * vv[i * 3] + dy[i * 3 + 1] * vv[i * 3 + 1]
                             + dy[i * 3 + 2] * vv[i * 3 + 2];
            }
        });
    }
    return id;
}

int Tape::layernorm(int x, double eps) {
    const Shape& sx = shape(x);
    require(sx.ndim == 2, "layernorm input");
    const int n = sx.d[0], c = sx.d[1];
    std::vector<double> out(std::size_t(n) * std::size_t(c));
    std::vector<double> inv_sd(static_cast<std::size_t>(n));
    const auto& xv = val(x);
    for (int i = 0; i < n; ++i) {
        const std::size_t o = std::size_t(i) * std::size_t(c);
        double mean = 0.0;
        for (int k = 0; k < c; ++k) mean += xv[o + std::size_t(k)];
        mean /= double(c);
        double var = 0.0;
        for (int k = 0; k < c; ++k) {
            const double d = xv[o + std::size_t(k)] - mean;
            var += d * d;
        }
        var /= double(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_sd[std::size_t(i)] = inv;
        for (int k = 0; k < c; ++k) out[o + std::size_t(k)] = (xv[o + std::size_t(k)] - mean) * inv;
    }
    const int id = push(sx, std::move(out), wants(x));
    if (track_ && wants(id)) {
        back_.push_back([this, x, id, n, c, inv = std::move(inv_sd)] {
            const auto& dy = grad(id);
            const auto& yv = val(id);
            auto& dx = g(x);
            for (int i = 0; i < n; ++i) {
                const std::size_t o = std::size_t(i) * std::size_t(c);
                double mean_dy = 0.0, mean_dyy = 0.0;
                for (int k = 0; k < c; ++k) {
                    mean_dy += dy[o + std::size_t(k)];
                    mean_dyy += dy[o + std::size_t(k)] * yv[o + std::size_t(k)];
                }
                mean_dy /= double(c);
                mean_dyy /= double(c);
                for (int k = 0; k < c; ++k)
                    dx[o + std::size_t(k)] += inv[std::size_t(i)]
                                              * (dy[o + std::size_t(k)] - mean_dy
                                                 - yv[o + std::size_t(k)] * mean_dyy);
            }
        });
    }
    return id;
}

int Tape::vecnorm(int v, double eps) {
    const Shape& sv = shape(v);
    require(sv.ndim == 3, "vecnorm input");
    const int n = sv.d[0], c = sv.d[1];
    const std::size_t stride = std::size_t(c) * 3;
    std::vector<double> out(std::size_t(n) * stride);
    std::vector<double> sfac(static_cast<std::size_t>(n));
    const auto& vv = val(v);
    for (int i = 0; i < n; ++i) {
        const std::size_t o = std::size_t(i) * stride;
        double r = 0.0;
        for (std::size_t k = 0; k < stride; ++k) r += vv[o + k] * vv[o + k];
        r /= double(c);
        const double s = 1.0 / std::sqrt(r + eps);
        sfac[std::size_t(i)] = s;
        for (std::size_t k = 0; k < stride; ++k) out[o + k] = s * vv[o + k];
    }
    const int id = push(sv, std::move(out), wants(v));
    if (track_ && wants(id)) {
        back_.push_back([this, v, id, n, c, stride, s = std::move(sfac)] {
            const auto& dy = grad(id);
            const auto& vv2 = val(v);
            auto& dv = g(v);
            for (int i = 0; i < n; ++i) {
                const std::size_t o = std::size_t(i) * stride;
                double dsum = 0.0;
                for (std::size_t k = 0; k < stride; ++k) dsum += dy[o + k] * vv2[o + k];
                const double si = s[std::size_t(i)];
                const double coef = dsum * si * si * si / double(c);
                for (std::size_t k = 0; k < stride; ++k)
                    dv[o + k] += si * dy[o + k] - coef * vv2[o + k];
            }
        });
    }
    return id;
}

int Tape::weighted_sum(int x, std::vector<double> w) {
    require(w.size() == shape(x).size(), "weighted_sum size");
    double acc = 0.0;
    const auto& xv = val(x);
    for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * xv[i];
    const int id = push(Shape::scalar(), { acc }, wants(x));
    if (track_ && wants(id)) {
        back_.push_back([this, x, id, wv = std::move(w)] {
            const double d = grad(id)[0];
            auto& dx = g(x);
            for (std::size_t i = 0; i < wv.size(); ++i) dx[i] += d * wv[i];
        });
    }
    return id;
}

int Tape::softmax_xent(int logits, std::vector<int> targets, std::vector<char> mask) {
    const Shape& sx = shape(logits);
    require(sx.ndim == 2, "softmax_xent input");
    const int n = sx.d[0], k = sx.d[1];
    require(int(targets.size()) == n && int(mask.size()) == n, "softmax_xent rows");

    const auto& xv = val(logits);
    std::vector<double> probs(std::size_t(n) * std::size_t(k));
    double loss = 0.0;
    int count = 0;
    for (int i = 0; i < n; ++i) {
        const std::size_t o = std::size_t(i) * std::size_t(k);
        double mx = xv[o];
        for (int j = 1; j < k; ++j) mx = std::max(mx, xv[o + std::size_t(j)]);
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(xv[o + std::size_t(j)] - mx);
        const double logz = std::log(z) + mx;
        for (int j = 0; j < k; ++j) probs[o + std::size_t(j)] = std::exp(xv[o + std::size_t(j)] - logz);
        if (mask[std::size_t(i)]) {
            require(targets[std::size_t(i)] >= 0 && targets[std::size_t(i)] < k, "softmax_xent target");
            loss -= xv[o + std::size_t(targets[std::size_t(i)])] - logz;
            ++count;
        }
    }
    require(count > 0, "softmax_xent has no unmasked rows");
    loss /= double(count);

    const int id = push(Shape::scalar(), { loss }, wants(logits));
    if (track_ && wants(id)) {
        back_.push_back([this, logits, id, n, k, count, p = std::move(probs),
                         t = std::move(targets), m = std::move(mask)] {
            const double d = grad(id)[0] / double(count);
            auto& dx = g(logits);
            for (int i = 0; i < n; ++i) {
                if (!m[std::size_t(i)]) continue;
                const std::size_t o = std::size_t(i) * std::size_t(k);
                for (int j = 0; j < k; ++j) {
                    const double onehot = j == t[std::size_t(i)] ? 1.0 : 0.0;
                    dx[o + std::size_t(j)] += d * (p[o + std::size_t(j)] - onehot);
                }
            }
        });
    }
    return id;
}

void Tape::backward(int loss) {
    require(shape(loss).size() == 1, "backward needs a scalar loss");
    if (!track_ || !wants(loss)) fail("NoGradient", "loss does not require gradients");
    g(loss)[0] = 1.0;
    for (auto it = back_.rbegin(); it != back_.rend(); ++it) (*it)();
}

} // namespace polyfold::ad
