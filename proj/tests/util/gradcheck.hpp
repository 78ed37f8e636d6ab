#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "pvsynth/autograd.hpp"

namespace pvsynth::testutil {

// Central-difference gradient check. loss_fn must rebuild the graph from the
// current parameter values on every call. Returns the worst relative error
// across every scalar entry of every parameter.
inline double gradcheck_max_rel_err(const std::function<ag::Var()>& loss_fn,
                                    std::vector<ag::Var> params, double h = 1e-6) {
    for (auto& p : params) p.zero_grad();
    ag::Var loss = loss_fn();
    ag::backward(loss);

    std::vector<Tensor> analytic;
    for (auto& p : params)
        analytic.push_back(p.n->has_grad ? p.grad() : Tensor(p.value().shape));

    double worst = 0.0;
    for (size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        for (int64_t i = 0; i < p.value().numel(); ++i) {
            const double orig = p.value().data[static_cast<size_t>(i)];
            p.value().data[static_cast<size_t>(i)] = orig + h;
            const double fp = loss_fn().item();
            p.value().data[static_cast<size_t>(i)] = orig - h;
            const double fm = loss_fn().item();
            p.value().data[static_cast<size_t>(i)] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double a = analytic[k].data[static_cast<size_t>(i)];
            const double denom = std::max({std::fabs(a), std::fabs(fd), 1.0});
            worst = std::max(worst, std::fabs(a - fd) / denom);
        }
    }
    return worst;
}

}  // namespace pvsynth::testutil
