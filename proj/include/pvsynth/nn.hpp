#pragma once

#include <string>
#include <vector>

#include "pvsynth/autograd.hpp"
#include "pvsynth/rng.hpp"

namespace pvsynth::nn {

// Ordered, named parameter registry. Registration order is the checkpoint
// and optimizer iteration order, so it must be deterministic (construct
// networks in a fixed order from a fixed seed).
class ParamStore {
public:
    ag::Var add(const std::string& name, Tensor init, bool trainable = true);
    const std::vector<std::pair<std::string, ag::Var>>& items() const { return items_; }
    std::vector<ag::Var> trainable() const;
    ag::Var find(const std::string& name) const;
    int64_t total_params() const;
    void zero_grad();
    void freeze();  // clears requires_grad on every parameter

private:
    std::vector<std::pair<std::string, ag::Var>> items_;
};

Tensor kaiming_conv_init(int oc, int ic, int kh, int kw, Rng& rng);
Tensor kaiming_linear_init(int out, int in, Rng& rng);

struct Conv2d {
    ag::Var w, b;
    int stride = 1, pad = 1;

    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& name, int ic, int oc, int k, int stride, int pad,
           Rng& rng);
    ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, w, b, stride, pad); }
};

struct Linear {
    ag::Var w, b;

    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng);
    ag::Var operator()(const ag::Var& x) const { return ag::linear(x, w, b); }
};

// Instance norm followed by a learned per-channel affine.
struct NormAffine {
    ag::Var gamma, beta;

    NormAffine() = default;
    NormAffine(ParamStore& ps, const std::string& name, int c);
    ag::Var operator()(const ag::Var& x) const {
        return ag::channel_affine(ag::instance_norm(x), gamma, beta);
    }
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(std::vector<ag::Var> params, AdamConfig cfg);
    void step();
    void zero_grad();
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }

private:
    std::vector<ag::Var> params_;
    std::vector<Tensor> m_, v_;
    AdamConfig cfg_;
    int64_t t_ = 0;
};

// Sinusoidal timestep embedding, dim must be even.
Tensor timestep_embedding(double t, int dim);

}  // namespace pvsynth::nn
