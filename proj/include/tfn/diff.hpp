#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tfn/mat.hpp"

namespace tfn::diff {

// Reverse-mode autodiff over dense matrices. Each op builds a Value node
// holding the forward result plus a closure that scatters the node's
// gradient into its parents. backward() runs the closures once each in
// reverse topological order.
struct Value;
using ValuePtr = std::shared_ptr<Value>;

struct Value {
    Mat x;                          // forward data
    Mat g;                          // gradient accumulator, same shape as x
    bool needs_grad = false;
    std::vector<ValuePtr> parents;  // producing inputs, kept alive for backward
    std::function<void()> backprop; // adds this->g into parents' g
    const char* op = "leaf";

    int rows() const { return x.rows; }
    int cols() const { return x.cols; }
    int size() const { return x.size(); }
    void zero_grad() { g.fill(0.0); }
};

ValuePtr constant(Mat m);
ValuePtr param(Mat m);  // needs_grad leaf

// elementwise / structural
ValuePtr add(const ValuePtr& a, const ValuePtr& b);
ValuePtr sub(const ValuePtr& a, const ValuePtr& b);
ValuePtr mul(const ValuePtr& a, const ValuePtr& b);  // Hadamard
ValuePtr scale(const ValuePtr& a, double c);
ValuePtr matmul(const ValuePtr& a, const ValuePtr& b);
ValuePtr transpose(const ValuePtr& a);
ValuePtr tanh(const ValuePtr& a);
ValuePtr sigmoid(const ValuePtr& a);
ValuePtr exp(const ValuePtr& a);

// broadcast 1xC row vector over every row of a RxC matrix
ValuePtr add_rowvec(const ValuePtr& m, const ValuePtr& v);

ValuePtr concat_rows(const ValuePtr& a, const ValuePtr& b);
ValuePtr concat_cols(const ValuePtr& a, const ValuePtr& b);
ValuePtr vstack(const std::vector<ValuePtr>& rows);
ValuePtr slice_cols(const ValuePtr& a, int first, int count);
ValuePtr row(const ValuePtr& a, int r);  // 1xC view with scatter-add backward

ValuePtr sum_all(const ValuePtr& a);  // 1x1

// Row-wise masked stable softmax. admissible is a constant 0/1 matrix of the
// same shape; inadmissible entries are exactly 0 in the output. A row with no
// admissible entry throws ("empty attention support").
ValuePtr softmax_rows(const ValuePtr& scores, const Mat& admissible);

// Per-row layer normalization with learned gain/bias (both 1xC).
ValuePtr layer_norm_rows(const ValuePtr& a, const ValuePtr& gain, const ValuePtr& bias,
                         double eps = 1e-5);

// x @ W + b with x RxI, W IxO, b 1xO
inline ValuePtr linear(const ValuePtr& x, const ValuePtr& w, const ValuePtr& b) {
    return add_rowvec(matmul(x, w), b);
}

// Scalar loss backward pass: seeds grad 1 on the 1x1 loss node and visits
// every producing op exactly once.
void backward(const ValuePtr& loss);

// Plain (non-graph) numerically stable softmax. mask, when given, marks
// admissible entries with nonzero values; inadmissible outputs are exactly 0.
std::vector<double> softmax_stable(std::span<const double> v,
                                   std::span<const double> mask = {});

}  // namespace tfn::diff
