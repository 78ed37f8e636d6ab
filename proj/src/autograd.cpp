#include "pvsynth/autograd.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "pvsynth/errors.hpp"

namespace pvsynth::ag {

namespace {

std::atomic<int64_t> g_next_id{1};

NodePtr make_node(Tensor value, std::vector<NodePtr> parents) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    for (const auto& p : n->parents)
        if (p && p->requires_grad) n->requires_grad = true;
    return n;
}

void accum(Node& p, const Tensor& g) {
    if (!p.has_grad) {
        p.grad = g;
        p.has_grad = true;
    } else {
        double* dst = p.grad.data.data();
        const double* src = g.data.data();
        const int64_t n = p.grad.numel();
        for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
    }
}

bool wants_grad(const NodePtr& p) { return p && p->requires_grad; }

template <typename FwdFn, typename BwdFn>
Var unary_ew(const Var& a, FwdFn fwd, BwdFn dydx) {
    Tensor y(a.shape());
    const int64_t n = y.numel();
    const double* xp = a.value().data.data();
    for (int64_t i = 0; i < n; ++i) y.data[i] = fwd(xp[i]);
    auto node = make_node(std::move(y), {a.n});
    if (node->requires_grad) {
        node->backward_fn = [dydx](Node& self) {
            auto& p = self.parents[0];
            if (!wants_grad(p)) return;
            Tensor g(p->value.shape);
            const int64_t n = g.numel();
            const double* xp = p->value.data.data();
            const double* yp = self.value.data.data();
            const double* gp = self.grad.data.data();
            for (int64_t i = 0; i < n; ++i) g.data[i] = gp[i] * dydx(xp[i], yp[i]);
            accum(*p, g);
        };
    }
    return Var(node);
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw DomainError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

}  // namespace

Var leaf(Tensor value, bool requires_grad) {
    auto n = make_node(std::move(value), {});
    n->requires_grad = requires_grad;
    return Var(n);
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

Var detach(const Var& x) { return constant(x.value()); }

void backward(const Var& loss) {
    if (loss.value().numel() != 1) throw DomainError("backward: loss must be scalar");
    // Collect the reachable subgraph, then run in reverse creation order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{loss.n.get()};
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        order.push_back(n);
        for (auto& p : n->parents)
            if (p && p->requires_grad) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });
    accum(*loss.n, Tensor::scalar(1.0));
    for (Node* n : order) {
        if (n->has_grad && n->backward_fn) n->backward_fn(*n);
    }
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor y(a.shape());
    const int64_t n = y.numel();
    for (int64_t i = 0; i < n; ++i) y.data[i] = a.value().data[i] + b.value().data[i];
    auto node = make_node(std::move(y), {a.n, b.n});
    if (node->requires_grad) {
        node->backward_fn = [](Node& self) {
            for (auto& p : self.parents)
                if (wants_grad(p)) accum(*p, self.grad);
        };
    }
    return Var(node);
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor y(a.shape());
    const int64_t n = y.numel();
    for (int64_t i = 0; i < n; ++i) y.data[i] = a.value().data[i] - b.value().data[i];
    auto node = make_node(std::move(y), {a.n, b.n});
    if (node->requires_grad) {
        node->backward_fn = [](Node& self) {
            if (wants_grad(self.parents[0])) accum(*self.parents[0], self.grad);
            if (wants_grad(self.parents[1])) {
                Tensor g(self.grad.shape);
                const int64_t n = g.numel();
                for (int64_t i = 0; i < n; ++i) g.data[i] = -self.grad.data[i];
                accum(*self.parents[1], g);
            }
        };
    }
    return Var(node);
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor y(a.shape());
    const int64_t n = y.numel();
    for (int64_t i = 0; i < n; ++i) y.data[i] = a.value().data[i] * b.value().data[i];
    auto node = make_node(std::move(y), {a.n, b.n});
    if (node->requires_grad) {
        node->backward_fn = [](Node& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            const int64_t n = self.grad.numel();
            if (wants_grad(pa)) {
                Tensor g(self.grad.shape);
                for (int64_t i = 0; i < n; ++i) g.data[i] = self.grad.data[i] * pb->value.data[i];
                accum(*pa, g);
            }
            if (wants_grad(pb)) {
                Tensor g(self.grad.shape);
                for (int64_t i = 0; i < n; ++i) g.data[i] = self.grad.data[i] * pa->value.data[i];
                accum(*pb, g);
            }
        };
    }
    return Var(node);
}

Var div(const Var& a, const Var& b) {
    check_same_shape(a, b, "div");
    Tensor y(a.shape());
    const int64_t n = y.numel();
    for (int64_t i = 0; i < n; ++i) y.data[i] = a.value().data[i] / b.value().data[i];
    auto node = make_node(std::move(y), {a.n, b.n});
    if (node->requires_grad) {
        node->backward_fn = [](Node& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            const int64_t n = self.grad.numel();
            if (wants_grad(pa)) {
                Tensor g(self.grad.shape);
                for (int64_t i = 0; i < n; ++i) g.data[i] = self.grad.data[i] / pb->value.data[i];
                accum(*pa, g);
            }
            if (wants_grad(pb)) {
                Tensor g(self.grad.shape);
                for (int64_t i = 0; i < n; ++i) {
                    const double bv = pb->value.data[i];
                    g.data[i] = -self.grad.data[i] * pa->value.data[i] / (bv * bv);
                }
                accum(*pb, g);
            }
        };
    }
    return Var(node);
}

Var add_scalar(const Var& a, double s) {
    return unary_ew(
        a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var mul_scalar(const Var& a, double s) {
    return unary_ew(
        a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var relu(const Var& a) {
    return unary_ew(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
    return unary_ew(
        a, [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var silu(const Var& a) {
    return unary_ew(
        a,
        [](double x) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return x * s;
        },
        [](double x, double) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

Var sigmoid(const Var& a) {
    return unary_ew(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Var tanh_(const Var& a) {
    return unary_ew(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp_(const Var& a) {
    return unary_ew(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log_(const Var& a) {
    return unary_ew(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt_(const Var& a) {
    return unary_ew(
        a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var square(const Var& a) {
    return unary_ew(
        a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs_(const Var& a) {
    // Subgradient 0 at the kink.
    return unary_ew(
        a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sum_all(const Var& a) {
    Tensor y = Tensor::scalar(a.value().sum());
    auto node = make_node(std::move(y), {a.n});
    if (node->requires_grad) {
        node->backward_fn = [](Node& self) {
            auto& p = self.parents[0];
            if (!wants_grad(p)) return;
            accum(*p, Tensor::full(p->value.shape, self.grad.data[0]));
        };
    }
    return Var(node);
}

Var mean_all(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a.value().numel());
    Tensor y = Tensor::scalar(a.value().sum() * inv);
    auto node = make_node(std::move(y), {a.n});
    if (node->requires_grad) {
        node->backward_fn = [inv](Node& self) {
            auto& p = self.parents[0];
            if (!wants_grad(p)) return;
            accum(*p, Tensor::full(p->value.shape, self.grad.data[0] * inv));
        };
    }
    return Var(node);
}

Var reshape(const Var& a, Shape s) {
    if (shape_numel(s) != a.value().numel())
        throw DomainError("reshape: numel mismatch " + shape_str(a.shape()) + " -> " +
                          shape_str(s));
    Tensor y = a.value();
    y.shape = std::move(s);
    auto node = make_node(std::move(y), {a.n});
    if (node->requires_grad) {
        node->backward_fn = [](Node& self) {
            auto& p = self.parents[0];
            if (!wants_grad(p)) return;
            Tensor g = self.grad;
            g.shape = p->value.shape;
            accum(*p, g);
        };
    }
    return Var(node);
}

Var flatten2d(const Var& a) {
    const int n = a.dim(0);
    return reshape(a, {n, static_cast<int>(a.value().numel() / n)});
}

Var concat_channels(const std::vector<Var>& xs) {
    const int N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
    int C = 0;
    for (const auto& x : xs) {
        if (x.dim(0) != N || x.dim(2) != H || x.dim(3) != W)
            throw DomainError("concat_channels: incompatible shapes");
        C += x.dim(1);
    }
    Tensor y({N, C, H, W});
    const int64_t HW = static_cast<int64_t>(H) * W;
    int c_off = 0;
    for (const auto& x : xs) {
        const int xc = x.dim(1);
        for (int n = 0; n < N; ++n) {
            const double* src = x.value().data.data() + static_cast<int64_t>(n) * xc * HW;
            double* dst = y.data.data() + (static_cast<int64_t>(n) * C + c_off) * HW;
            std::copy(src, src + static_cast<int64_t>(xc) * HW, dst);
        }
        c_off += xc;
    }
    std::vector<NodePtr> parents;
    for (const auto& x : xs) parents.push_back(x.n);
    auto node = make_node(std::move(y), std::move(parents));
    if (node->requires_grad) {
        node->backward_fn = [N, C, HW](Node& self) {
            int c_off = 0;
            for (auto& p : self.parents) {
                const int xc = p->value.dim(1);
                if (wants_grad(p)) {
                    Tensor g(p->value.shape);
                    for (int n = 0; n < N; ++n) {
                        const double* src =
                            self.grad.data.data() + (static_cast<int64_t>(n) * C + c_off) * HW;
                        double* dst = g.data.data() + static_cast<int64_t>(n) * xc * HW;
                        std::copy(src, src + static_cast<int64_t>(xc) * HW, dst);
                    }
                    accum(*p, g);
                }
                c_off += xc;
            }
        };
    }
    return Var(node);
}

Var slice_channels(const Var& a, int c0, int c1) {
    const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    if (c0 < 0 || c1 > C || c0 >= c1) throw DomainError("slice_channels: bad range");
    const int SC = c1 - c0;
    const int64_t HW = static_cast<int64_t>(H) * W;
    Tensor y({N, SC, H, W});
    for (int n = 0; n < N; ++n) {
        const double* src = a.value().data.data() + (static_cast<int64_t>(n) * C + c0) * HW;
        double* dst = y.data.data() + static_cast<int64_t>(n) * SC * HW;
        std::copy(src, src + static_cast<int64_t>(SC) * HW, dst);
    }
    auto node = make_node(std::move(y), {a.n});
    if (node->requires_grad) {
        node->backward_fn = [N, C, c0, SC, HW](Node& self) {
            auto& p = self.parents[0];
            if (!wants_grad(p)) return;
            Tensor g(p->value.shape);
            for (int n = 0; n < N; ++n) {
                const double* src = self.grad.data.data() + static_cast<int64_t>(n) * SC * HW;
                double* dst = g.data.data() + (static_cast<int64_t>(n) * C + c0) * HW;
                std::copy(src, src + static_cast<int64_t>(SC) * HW, dst);
            }
            accum(*p, g);
        };
    }
    return Var(node);
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    if (x.dim(1) != w.dim(1))
        throw DomainError("conv2d: input channels " + std::to_string(x.dim(1)) +
                          " != weight channels " + std::to_string(w.dim(1)));
    Tensor y;
    kernels::conv2d_forward(x.value(), w.value(), b.defined() ? &b.value() : nullptr, stride, pad,
                            y);
    std::vector<NodePtr> parents{x.n, w.n};
    if (b.defined()) parents.push_back(b.n);
    auto node = make_node(std::move(y), std::move(parents));
    if (node->requires_grad) {
        node->backward_fn = [stride, pad](Node& self) {
            auto& px = self.parents[0];
            auto& pw = self.parents[1];
            if (wants_grad(px)) {
                Tensor gx(px->value.shape);
                kernels::conv2d_backward_input(self.grad, pw->value, stride, pad, gx);
                accum(*px, gx);
            }
            if (wants_grad(pw)) {
                Tensor gw(pw->value.shape);
                kernels::conv2d_backward_weight(self.grad, px->value, stride, pad, gw);
                accum(*pw, gw);
            }
            if (self.parents.size() > 2 && wants_grad(self.parents[2])) {
                Tensor gb(self.parents[2]->value.shape);
                kernels::conv2d_backward_bias(self.grad, gb);
                accum(*self.parents[2], gb);
            }
        };
    }
    return Var(node);
}

Var linear(const Var& x, const Var& w, const Var& b) {
    if (x.dim(1) != w.dim(1)) throw DomainError("linear: feature dim mismatch");
    Tensor y;
    kernels::linear_forward(x.value(), w.value(), b.defined() ? &b.value() : nullptr, y);
    std::vector<NodePtr> parents{x.n, w.n};
    if (b.defined()) parents.push_back(b.n);
    auto node = make_node(std::move(y), std::move(parents));
    if (node->requires_grad) {
        node->backward_fn = [](Node& self) {
            auto& px = self.parents[0];
            auto& pw = self.parents[1];
            if (wants_grad(px)) {
                Tensor gx(px->value.shape);
                kernels::linear_backward_input(self.grad, pw->value, gx);
                accum(*px, gx);
            }
            if (wants_grad(pw)) {
                Tensor gw(pw->value.shape);
                kernels::linear_backward_weight(self.grad, px->value, gw);
                accum(*pw, gw);
            }
            if (self.parents.size() > 2 && wants_grad(self.parents[2])) {
                Tensor gb(self.parents[2]->value.shape);
                kernels::linear_backward_bias(self.grad, gb);
                accum(*self.parents[2], gb);
            }
        };
    }
    return Var(node);
}

Var avgpool2x(const Var& x) {
    Tensor y;
    kernels::avgpool2x_forward(x.value(), y);
    auto node = make_node(std::move(y), {x.n});
    if (node->requires_grad) {
        node->backward_fn = [](Node& self) {
            auto& p = self.parents[0];
            if (!wants_grad(p)) return;
            Tensor g(p->value.shape);
            kernels::avgpool2x_backward(self.grad, g);
            accum(*p, g);
        };
    }
    return Var(node);
}

Var upsample2x(const Var& x) {
    Tensor y;
    kernels::upsample2x_forward(x.value(), y);
    auto node = make_node(std::move(y), {x.n});
    if (node->requires_grad) {
        node->backward_fn = [](Node& self) {
            auto& p = self.parents[0];
            if (!wants_grad(p)) return;
            Tensor g(p->value.shape);
            kernels::upsample2x_backward(self.grad, g);
            accum(*p, g);
        };
    }
    return Var(node);
}

Var instance_norm(const Var& x, double eps) {
    Tensor y, mean, invstd;
    kernels::instance_norm_forward(x.value(), eps, y, mean, invstd);
    auto node = make_node(std::move(y), {x.n});
    if (node->requires_grad) {
        node->backward_fn = [mean, invstd](Node& self) {
            auto& p = self.parents[0];
            if (!wants_grad(p)) return;
            Tensor g(p->value.shape);
            kernels::instance_norm_backward(self.grad, p->value, mean, invstd, g);
            accum(*p, g);
        };
    }
    return Var(node);
}

Var channel_softmax(const Var& x) {
    Tensor y;
    kernels::channel_softmax_forward(x.value(), y);
    auto node = make_node(std::move(y), {x.n});
    if (node->requires_grad) {
        node->backward_fn = [](Node& self) {
            auto& p = self.parents[0];
            if (!wants_grad(p)) return;
            Tensor g(p->value.shape);
            kernels::channel_softmax_backward(self.grad, self.value, g);
            accum(*p, g);
        };
    }
    return Var(node);
}

namespace {

// gamma/beta broadcast helper: (C) applies to every sample, (N,C) per sample.
inline int64_t gb_index(const Tensor& gb, int n, int c, int C) {
    return gb.ndim() == 1 ? c : static_cast<int64_t>(n) * C + c;
}

}  // namespace

Var channel_affine(const Var& x, const Var& gamma, const Var& beta) {
    const int N = x.dim(0), C = x.dim(1);
    const int64_t HW = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    Tensor y(x.shape());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double g = gamma.value().data[gb_index(gamma.value(), n, c, C)];
            const double b = beta.value().data[gb_index(beta.value(), n, c, C)];
            const double* src = x.value().data.data() + (static_cast<int64_t>(n) * C + c) * HW;
            double* dst = y.data.data() + (static_cast<int64_t>(n) * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) dst[i] = src[i] * g + b;
        }
    auto node = make_node(std::move(y), {x.n, gamma.n, beta.n});
    if (node->requires_grad) {
        node->backward_fn = [N, C, HW](Node& self) {
            auto& px = self.parents[0];
            auto& pg = self.parents[1];
            auto& pb = self.parents[2];
            if (wants_grad(px)) {
                Tensor g(px->value.shape);
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const double gm = pg->value.data[gb_index(pg->value, n, c, C)];
                        const double* gr =
                            self.grad.data.data() + (static_cast<int64_t>(n) * C + c) * HW;
                        double* dst = g.data.data() + (static_cast<int64_t>(n) * C + c) * HW;
                        for (int64_t i = 0; i < HW; ++i) dst[i] = gr[i] * gm;
                    }
                accum(*px, g);
            }
            if (wants_grad(pg)) {
                Tensor g(pg->value.shape);
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const double* gr =
                            self.grad.data.data() + (static_cast<int64_t>(n) * C + c) * HW;
                        const double* xr =
                            px->value.data.data() + (static_cast<int64_t>(n) * C + c) * HW;
                        double acc = 0.0;
                        for (int64_t i = 0; i < HW; ++i) acc += gr[i] * xr[i];
                        g.data[gb_index(pg->value, n, c, C)] += acc;
                    }
                accum(*pg, g);
            }
            if (wants_grad(pb)) {
                Tensor g(pb->value.shape);
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const double* gr =
                            self.grad.data.data() + (static_cast<int64_t>(n) * C + c) * HW;
                        double acc = 0.0;
                        for (int64_t i = 0; i < HW; ++i) acc += gr[i];
                        g.data[gb_index(pb->value, n, c, C)] += acc;
                    }
                accum(*pb, g);
            }
        };
    }
    return Var(node);
}

Var add_channel_bias(const Var& x, const Var& b) {
    const int N = x.dim(0), C = x.dim(1);
    const int64_t HW = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    Tensor y(x.shape());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double bv = b.value().data[gb_index(b.value(), n, c, C)];
            const double* src = x.value().data.data() + (static_cast<int64_t>(n) * C + c) * HW;
            double* dst = y.data.data() + (static_cast<int64_t>(n) * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) dst[i] = src[i] + bv;
        }
    auto node = make_node(std::move(y), {x.n, b.n});
    if (node->requires_grad) {
        node->backward_fn = [N, C, HW](Node& self) {
            auto& px = self.parents[0];
            auto& pb = self.parents[1];
            if (wants_grad(px)) accum(*px, self.grad);
            if (wants_grad(pb)) {
                Tensor g(pb->value.shape);
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const double* gr =
                            self.grad.data.data() + (static_cast<int64_t>(n) * C + c) * HW;
                        double acc = 0.0;
                        for (int64_t i = 0; i < HW; ++i) acc += gr[i];
                        g.data[gb_index(pb->value, n, c, C)] += acc;
                    }
                accum(*pb, g);
            }
        };
    }
    return Var(node);
}

Var global_avg_pool(const Var& x) {
    const int N = x.dim(0), C = x.dim(1);
    const int64_t HW = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    const double inv = 1.0 / static_cast<double>(HW);
    Tensor y({N, C});
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        const double* src = x.value().data.data() + nc * HW;
        double acc = 0.0;
        for (int64_t i = 0; i < HW; ++i) acc += src[i];
        y.data[nc] = acc * inv;
    }
    auto node = make_node(std::move(y), {x.n});
    if (node->requires_grad) {
        node->backward_fn = [HW, inv](Node& self) {
            auto& p = self.parents[0];
            if (!wants_grad(p)) return;
            Tensor g(p->value.shape);
            const int64_t NC = self.grad.numel();
            for (int64_t nc = 0; nc < NC; ++nc) {
                const double gv = self.grad.data[nc] * inv;
                double* dst = g.data.data() + nc * HW;
                for (int64_t i = 0; i < HW; ++i) dst[i] = gv;
            }
            accum(*p, g);
        };
    }
    return Var(node);
}

Var cross_entropy_logits(const Var& logits, const std::vector<int>& targets) {
    const int N = logits.dim(0), C = logits.dim(1);
    if (static_cast<int>(targets.size()) != N)
        throw DomainError("cross_entropy_logits: target count mismatch");
    for (int t : targets)
        if (t < 0 || t >= C) throw DomainError("cross_entropy_logits: target out of range");
    Tensor probs({N, C});
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
        const double* row = logits.value().data.data() + static_cast<int64_t>(n) * C;
        double mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (int c = 0; c < C; ++c) z += std::exp(row[c] - mx);
        const double logz = std::log(z) + mx;
        for (int c = 0; c < C; ++c)
            probs.data[static_cast<int64_t>(n) * C + c] = std::exp(row[c] - logz);
        loss -= row[targets[static_cast<size_t>(n)]] - logz;
    }
    loss /= static_cast<double>(N);
    auto node = make_node(Tensor::scalar(loss), {logits.n});
    if (node->requires_grad) {
        node->backward_fn = [probs, targets, N, C](Node& self) {
            auto& p = self.parents[0];
            if (!wants_grad(p)) return;
            Tensor g({N, C});
            const double gv = self.grad.data[0] / static_cast<double>(N);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const int64_t i = static_cast<int64_t>(n) * C + c;
                    g.data[i] = gv * (probs.data[i] -
                                      (c == targets[static_cast<size_t>(n)] ? 1.0 : 0.0));
                }
            accum(*p, g);
        };
    }
    return Var(node);
}

}  // namespace pvsynth::ag
