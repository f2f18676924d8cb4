#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "frontal/tensor.hpp"

namespace frontal {

class Var;

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Produces gradients for the wanted inputs of an op. Gradients are built out
// of Var operations so that a backward pass is itself differentiable (the
// gradient penalty trains the critic through the gradient of its own
// gradient).
using BackwardFn = std::function<std::vector<Var>(
    const Var& grad, const std::vector<Var>& inputs, const Var& output,
    const std::vector<char>& wanted)>;

struct Node {
    Tensor value;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    long id = 0;
    const char* op = "leaf";
};

}  // namespace detail

// Handle to a node of the dynamic computation graph. Copying is cheap.
class Var {
public:
    Var() = default;

    static Var leaf(Tensor value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const std::vector<int>& shape() const { return node_->value.shape(); }
    detail::Node* node() const { return node_.get(); }

    // Scalar convenience.
    double item() const { return node_->value.item(); }

private:
    explicit Var(detail::NodePtr n) : node_(std::move(n)) {}
    detail::NodePtr node_;

    friend Var make_op(const char* name, Tensor value, std::vector<Var> inputs,
                       detail::BackwardFn backward, bool force_grad);
};

Var make_op(const char* name, Tensor value, std::vector<Var> inputs,
            detail::BackwardFn backward, bool force_grad = false);

// Disables graph construction while alive (forward evaluation only).
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// Gradients keyed by graph node, themselves graph variables.
class GradMap {
public:
    bool contains(const Var& v) const { return grads_.count(v.node()) > 0; }
    Var get(const Var& v) const;             // undefined Var when absent
    Var get_or_zero(const Var& v) const;     // zeros_like(v) when absent
    void add(const Var& key, const Var& g);

private:
    std::unordered_map<const detail::Node*, Var> grads_;
};

// Reverse-mode sweep from a scalar root. When `targets` is non-empty only the
// gradients needed to reach those nodes are materialized.
GradMap backward(const Var& root, const std::vector<Var>& targets = {});

// Gradient of a scalar w.r.t. one variable; the result stays connected to the
// graph so it can be differentiated again.
Var grad_of(const Var& root, const Var& wrt);

// ---- elementwise (shapes must have equal rank; axes match or are 1) ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& x);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);
Var exp(const Var& x);
Var log(const Var& x);
Var sqrt(const Var& x);
// sqrt with the minimum-norm subgradient at 0 (norms of coincident points).
Var sqrt_safe(const Var& x);
Var abs(const Var& x);
Var square(const Var& x);
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var clamp(const Var& x, double lo, double hi);

// ---- shape ----
Var reshape(const Var& x, std::vector<int> shape);
Var broadcast_to(const Var& x, std::vector<int> shape);
Var concat_ch(const Var& a, const Var& b);
Var slice_axis(const Var& x, int axis, int start, int len);
Var embed_axis(const Var& x, int axis, int start, int full);

// ---- reductions ----
Var sum(const Var& x);                                        // -> [1]
Var sum_axes(const Var& x, std::vector<int> axes, bool keepdims);
Var mean(const Var& x);                                       // -> [1]
Var mean_axes(const Var& x, std::vector<int> axes, bool keepdims);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);      // [M,K]x[K,N]
Var transpose(const Var& a);                 // [M,N] -> [N,M]
Var bmm(const Var& a, const Var& b);         // [B,M,K]x[B,K,N]
Var btranspose(const Var& a);                // [B,M,N] -> [B,N,M]

// ---- convolution (NCHW; conv weights [K,C,kh,kw], transposed [C,K,kh,kw]) ----
Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad);
Var conv_transpose2d(const Var& x, const Var& w, const Var& bias, int stride,
                     int pad, int out_pad);
Var avg_pool2d(const Var& x, int k);

// ---- specials ----
Var grl(const Var& x, double lambda);   // identity forward, -lambda * grad backward
Var detach(const Var& x);
// Identity that always joins the graph, so gradients w.r.t. it can be taken
// even when it is built purely from constants.
Var require_grad(const Var& x);
Var softmax_lastdim(const Var& x);

// Plain-tensor utilities used for targets and data paths.
Tensor avg_pool2d(const Tensor& x, int k);

}  // namespace frontal
