#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

namespace polyfold::ad {

// Tensors are at most rank 3; geometric vector channels always use a
// trailing axis of 3.
struct Shape {
    std::array<int, 3> d{1, 1, 1};
    int ndim = 2;

    static Shape mat(int rows, int cols) { return {{rows, cols, 1}, 2}; }
    static Shape vec3(int rows, int chans) { return {{rows, chans, 3}, 3}; }
    static Shape scalar() { return {{1, 1, 1}, 2}; }

    std::size_t size() const {
        return std::size_t(d[0]) * std::size_t(d[1]) * std::size_t(d[2]);
    }
    bool operator==(const Shape&) const = default;
};

// Fixed (non-learned) linear combination of input rows per output row; used
// for message aggregation and conformation pooling.
using RowComb = std::vector<std::vector<std::pair<int, double>>>;

// Reverse-mode tape over dense double tensors. Values are immutable once a
// node is created; backward() runs the recorded closures in reverse and
// accumulates into grad buffers of nodes marked as requiring gradients.
class Tape {
public:
    explicit Tape(bool track_gradients = true) : track_(track_gradients) {}

    int leaf(const Shape& s, std::vector<double> data, bool needs_grad = false);

    int linear(int x, int w, int bias);           // [n,a] x [b,a] + [b] -> [n,b]
    int vecmix(int w, int v);                     // [b,a] x [n,a,3] -> [n,b,3]
    int add(int a, int b);
    int sub(int a, int b);
    int hadamard(int a, int b);
    int scale(int a, double c);
    int mulmask(int a, std::vector<double> mask); // elementwise constant factor
    int concat_ch(const std::vector<int>& xs);    // [n,ci] -> [n, sum ci]
    int vconcat_ch(const std::vector<int>& vs);   // [n,ci,3] -> [n, sum ci, 3]
    int concat_rows(const std::vector<int>& xs);  // stack along axis 0
    int slice_rows(int x, int start, int len);
    int gather_rows(int x, std::vector<int> idx);
    int row_comb(const RowComb& comb, int x);     // out[i] = sum w * x[row]
    int rownorm3(int v, double eps = 1e-8);       // [n,c,3] -> [n,c]
    int relu(int x);
    int sigmoid(int x);
    int gatemul(int g, int v);                    // [n,c] * [n,c,3] -> [n,c,3]
    int layernorm(int x, double eps = 1e-5);      // per-row, no affine
    int vecnorm(int v, double eps = 1e-8);        // per-row vector norm scaling
    int weighted_sum(int x, std::vector<double> w); // -> scalar

    // mean cross-entropy of softmax(logits) vs targets over rows where
    // mask != 0; logits [n,k]
    int softmax_xent(int logits, std::vector<int> targets, std::vector<char> mask);

    void backward(int loss);

    const std::vector<double>& val(int id) const { return nodes_[std::size_t(id)].val; }
    const std::vector<double>& grad(int id) const { return nodes_[std::size_t(id)].grad; }
    const Shape& shape(int id) const { return nodes_[std::size_t(id)].shape; }
    bool tracking() const { return track_; }
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Shape shape;
        std::vector<double> val;
        std::vector<double> grad; // allocated only when needed
        bool needs_grad = false;
    };

    int push(Shape s, std::vector<double> val, bool needs_grad);
    bool wants(int id) const { return nodes_[std::size_t(id)].needs_grad; }
    std::vector<double>& g(int id) { return nodes_[std::size_t(id)].grad; }

    std::vector<Node> nodes_;
    std::vector<std::function<void()>> back_;
    bool track_;
};

} // namespace polyfold::ad
