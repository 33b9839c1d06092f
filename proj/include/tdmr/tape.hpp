#pragma once

#include "tdmr/rng.hpp"
#include "tdmr/types.hpp"

#include <functional>
#include <span>
#include <vector>

namespace tdmr::num {

// Handle into a Tape. Cheap to copy; only valid for the tape it came from.
struct Node {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

// Reverse-mode differentiation over a recorded computation. Each recorded
// op stores its output value and a pull-back that routes the output
// gradient to its inputs. One tape is confined to one logical thread.
class Tape {
public:
    using Backward = std::function<void(Tape&)>;

    // Leaf with no gradient.
    Node constant(Mat v) { return push(std::move(v), false, nullptr); }

    // Leaf that receives a gradient (inputs under test).
    Node leaf(Mat v) { return push(std::move(v), true, nullptr); }

    // Leaf bound to a Parameter; backward() accumulates into p.grad.
    Node param(Parameter& p) {
        Node n = push(p.value, true, nullptr);
        entries_[n.idx].sink = &p;
        return n;
    }

    Node push(Mat value, bool needs_grad, Backward back) {
        if (check_finite_ && !value.allFinite()) {
            throw NumericError("tape: non-finite value produced by operation " +
                               std::to_string(entries_.size()));
        }
        entries_.push_back(Entry{std::move(value), Mat(), needs_grad, std::move(back), nullptr});
        return Node{static_cast<int>(entries_.size()) - 1};
    }

    void set_back(Node n, Backward back) { entries_[n.idx].back = std::move(back); }

    const Mat& value(Node n) const { return entries_[n.idx].value; }
    Index rows(Node n) const { return entries_[n.idx].value.rows(); }
    Index cols(Node n) const { return entries_[n.idx].value.cols(); }

    bool needs_grad(Node n) const { return entries_[n.idx].needs_grad; }

    // Gradient accumulator for n; zero-sized until touched.
    Mat& grad(Node n) {
        Entry& e = entries_[n.idx];
        if (e.grad.size() == 0) e.grad = Mat::Zero(e.value.rows(), e.value.cols());
        return e.grad;
    }

    // Seeds d(root)/d(root) = 1 and runs the pull-backs in reverse order.
    // root must be scalar (1x1). Parameter sinks receive their gradients.
    void backward(Node root) {
        if (entries_[root.idx].value.size() != 1) {
            throw DimensionError("backward: root must be scalar");
        }
        grad(root).setConstant(1.0);
        for (int i = root.idx; i >= 0; --i) {
            Entry& e = entries_[i];
            if (e.grad.size() == 0) continue;  // no gradient reached this node
            if (e.back) e.back(*this);
            if (e.sink) e.sink->grad += e.grad;
        }
    }

    std::size_t size() const { return entries_.size(); }
    void set_check_finite(bool on) { check_finite_ = on; }

private:
    struct Entry {
        Mat value;
        Mat grad;
        bool needs_grad;
        Backward back;
        Parameter* sink;
    };
    std::vector<Entry> entries_;
    bool check_finite_ = true;
};

// ---- elementwise / structural ops -------------------------------------

Node add(Tape& t, Node a, Node b);
Node sub(Tape& t, Node a, Node b);
Node mul(Tape& t, Node a, Node b);  // elementwise
Node scale(Tape& t, Node a, double s);
Node add_scalar(Tape& t, Node a, double s);
Node neg(Tape& t, Node a);

// Broadcast-add a 1xD row vector to every row of an LxD matrix.
Node add_rowvec(Tape& t, Node x, Node row);

Node matmul(Tape& t, Node a, Node b);
Node transpose(Tape& t, Node a);

Node div(Tape& t, Node a, Node b);  // elementwise
Node relu(Tape& t, Node a);
Node exp_(Tape& t, Node a);
Node sigmoid(Tape& t, Node a);
Node softplus(Tape& t, Node a);  // log(1 + e^x), stable
Node log_(Tape& t, Node a);
Node abs_(Tape& t, Node a);
Node cwise_max(Tape& t, Node a, Node b);  // ties route gradient to a
Node cwise_min(Tape& t, Node a, Node b);

Node sum_all(Tape& t, Node a);   // 1x1
Node mean_all(Tape& t, Node a);  // 1x1
Node mean_rows(Tape& t, Node a); // LxD -> 1xD

Node slice(Tape& t, Node a, Index r0, Index nrows, Index c0, Index ncols);
Node concat_rows(Tape& t, std::span<const Node> parts);
Node concat_cols(Tape& t, std::span<const Node> parts);
inline Node concat_rows(Tape& t, Node a, Node b) {
    Node parts[] = {a, b};
    return concat_rows(t, parts);
}

// ---- neural-net primitives --------------------------------------------

// out[i,j] = sum_k x[i,k] W[k,j] + b[j]
Node affine(Tape& t, Node x, Node W, Node b);

// Row-wise softmax, stabilized by row-max subtraction.
Node softmax_rows(Tape& t, Node x);
Node log_softmax_rows(Tape& t, Node x);

// softmax(Q K^T / sqrt(d)) V
Node scaled_dot_attention(Tape& t, Node q, Node k, Node v);

// Per-row standardization (eps = 1e-5), then gain/bias (each 1xD).
Node layer_norm(Tape& t, Node x, Node gain, Node bias);

// Inverted dropout; identity when !training or rate == 0.
Node dropout(Tape& t, Node x, double rate, RngStream& rng, bool training);

// ---- gradient checking ------------------------------------------------

// Max over all entries of all params of
// |analytic - central difference| / max(1, |analytic|).
// `loss` must be a pure function of the parameter values; analytic
// gradients are read from p.grad (populate them before the call).
double grad_check(std::span<Parameter* const> params,
                  const std::function<double()>& loss, double h);

}  // namespace tdmr::num
