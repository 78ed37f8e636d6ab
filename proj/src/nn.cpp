#include "pvsynth/nn.hpp"

#include <cmath>

#include "pvsynth/errors.hpp"

namespace pvsynth::nn {

ag::Var ParamStore::add(const std::string& name, Tensor init, bool trainable) {
    for (const auto& [n, v] : items_)
        if (n == name) throw DomainError("ParamStore: duplicate parameter " + name);
    ag::Var v = ag::leaf(std::move(init), trainable);
    items_.emplace_back(name, v);
    return v;
}

std::vector<ag::Var> ParamStore::trainable() const {
    std::vector<ag::Var> out;
    for (const auto& [n, v] : items_)
        if (v.n->requires_grad) out.push_back(v);
    return out;
}

ag::Var ParamStore::find(const std::string& name) const {
    for (const auto& [n, v] : items_)
        if (n == name) return v;
    throw DomainError("ParamStore: no parameter named " + name);
}

int64_t ParamStore::total_params() const {
    int64_t n = 0;
    for (const auto& [name, v] : items_) n += v.value().numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [n, v] : items_) v.zero_grad();
}

void ParamStore::freeze() {
    for (auto& [n, v] : items_) v.n->requires_grad = false;
}

Tensor kaiming_conv_init(int oc, int ic, int kh, int kw, Rng& rng) {
    Tensor t({oc, ic, kh, kw});
    const double std = std::sqrt(2.0 / (static_cast<double>(ic) * kh * kw));
    rng.fill_normal(t, 0.0, std);
    return t;
}

Tensor kaiming_linear_init(int out, int in, Rng& rng) {
    Tensor t({out, in});
    const double std = std::sqrt(2.0 / static_cast<double>(in));
    rng.fill_normal(t, 0.0, std);
    return t;
}

Conv2d::Conv2d(ParamStore& ps, const std::string& name, int ic, int oc, int k, int stride, int pad,
               Rng& rng)
    : stride(stride), pad(pad) {
    w = ps.add(name + ".w", kaiming_conv_init(oc, ic, k, k, rng));
    b = ps.add(name + ".b", Tensor({oc}));
}

Linear::Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng) {
    w = ps.add(name + ".w", kaiming_linear_init(out, in, rng));
    b = ps.add(name + ".b", Tensor({out}));
}

NormAffine::NormAffine(ParamStore& ps, const std::string& name, int c) {
    gamma = ps.add(name + ".g", Tensor::full({c}, 1.0));
    beta = ps.add(name + ".b", Tensor({c}));
}

Adam::Adam(std::vector<ag::Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
        m_.emplace_back(p.value().shape);
        v_.emplace_back(p.value().shape);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
        auto& p = params_[k];
        if (!p.n->has_grad) continue;
        const int64_t n = p.value().numel();
        double* w = p.value().data.data();
        const double* g = p.grad().data.data();
        double* m = m_[k].data.data();
        double* v = v_[k].data.data();
        for (int64_t i = 0; i < n; ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

Tensor timestep_embedding(double t, int dim) {
    Tensor e({dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        e.data[static_cast<size_t>(i)] = std::sin(t * freq);
        e.data[static_cast<size_t>(half + i)] = std::cos(t * freq);
    }
    return e;
}

}  // namespace pvsynth::nn
