#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "pvsynth/kernels.hpp"
#include "pvsynth/tensor.hpp"

// Define-by-run reverse-mode autograd over Tensor. Graphs are built on the
// main thread; parallelism lives inside the kernels. Backward walks nodes in
// reverse creation order, which is a valid topological order for graphs built
// incrementally, so gradient accumulation order is deterministic.
namespace pvsynth::ag {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    int64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
};

using NodePtr = std::shared_ptr<Node>;

struct Var {
    NodePtr n;

    Var() = default;
    explicit Var(NodePtr p) : n(std::move(p)) {}

    const Tensor& value() const { return n->value; }
    Tensor& value() { return n->value; }
    const Tensor& grad() const { return n->grad; }
    bool defined() const { return static_cast<bool>(n); }
    const Shape& shape() const { return n->value.shape; }
    int dim(int i) const { return n->value.dim(i); }
    double item() const { return n->value.data[0]; }

    void zero_grad() {
        n->has_grad = false;
        n->grad = Tensor();
    }
};

Var leaf(Tensor value, bool requires_grad);
Var constant(Tensor value);
Var detach(const Var& x);

void backward(const Var& loss);

// --- elementwise / scalar ---
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var neg(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var silu(const Var& a);
Var sigmoid(const Var& a);
Var tanh_(const Var& a);
Var exp_(const Var& a);
Var log_(const Var& a);
Var sqrt_(const Var& a);
Var square(const Var& a);
Var abs_(const Var& a);

// --- reductions ---
Var sum_all(const Var& a);
Var mean_all(const Var& a);

// --- shape ---
Var reshape(const Var& a, Shape s);
Var flatten2d(const Var& a);  // (N, rest)
Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(const Var& a, int c0, int c1);

// --- NN primitives ---
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var linear(const Var& x, const Var& w, const Var& b);
Var avgpool2x(const Var& x);
Var upsample2x(const Var& x);
Var instance_norm(const Var& x, double eps = 1e-5);
Var channel_softmax(const Var& x);
// gamma/beta of shape (C) or (N,C), broadcast over space.
Var channel_affine(const Var& x, const Var& gamma, const Var& beta);
Var add_channel_bias(const Var& x, const Var& b);
Var global_avg_pool(const Var& x);  // (N,C,H,W) -> (N,C)
// Mean cross-entropy of row-wise softmax against integer targets.
Var cross_entropy_logits(const Var& logits, const std::vector<int>& targets);

}  // namespace pvsynth::ag
