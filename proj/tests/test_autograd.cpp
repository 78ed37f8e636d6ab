#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pvsynth/nn.hpp"
#include "pvsynth/rng.hpp"
#include "util/gradcheck.hpp"

using namespace pvsynth;
using pvsynth::testutil::gradcheck_max_rel_err;

namespace {

ag::Var rand_leaf(Shape s, Rng& rng, bool rg = true) {
    Tensor t(std::move(s));
    rng.fill_normal(t);
    return ag::leaf(std::move(t), rg);
}

}  // namespace

TEST_CASE("gradcheck: conv2d + activations + reductions") {
    Rng rng(42);
    ag::Var x = rand_leaf({2, 3, 6, 6}, rng);
    ag::Var w = rand_leaf({4, 3, 3, 3}, rng);
    ag::Var b = rand_leaf({4}, rng);
    auto loss = [&] {
        ag::Var y = ag::conv2d(x, w, b, 1, 1);
        y = ag::silu(y);
        return ag::mean_all(ag::square(y));
    };
    CHECK(gradcheck_max_rel_err(loss, {x, w, b}) < 1e-6);
}

TEST_CASE("gradcheck: strided conv") {
    Rng rng(43);
    ag::Var x = rand_leaf({1, 2, 8, 8}, rng);
    ag::Var w = rand_leaf({3, 2, 3, 3}, rng);
    ag::Var b = rand_leaf({3}, rng);
    auto loss = [&] {
        ag::Var y = ag::conv2d(x, w, b, 2, 1);
        return ag::mean_all(ag::square(y));
    };
    CHECK(gradcheck_max_rel_err(loss, {x, w, b}) < 1e-6);
}

TEST_CASE("gradcheck: linear + tanh") {
    Rng rng(44);
    ag::Var x = rand_leaf({3, 5}, rng);
    ag::Var w = rand_leaf({4, 5}, rng);
    ag::Var b = rand_leaf({4}, rng);
    auto loss = [&] { return ag::mean_all(ag::tanh_(ag::linear(x, w, b))); };
    CHECK(gradcheck_max_rel_err(loss, {x, w, b}) < 1e-6);
}

TEST_CASE("gradcheck: instance norm") {
    Rng rng(45);
    ag::Var x = rand_leaf({2, 3, 4, 4}, rng);
    auto loss = [&] {
        ag::Var y = ag::instance_norm(x);
        return ag::mean_all(ag::mul(y, y));
    };
    CHECK(gradcheck_max_rel_err(loss, {x}) < 1e-5);
}

TEST_CASE("gradcheck: channel softmax") {
    Rng rng(46);
    ag::Var x = rand_leaf({1, 5, 3, 3}, rng);
    ag::Var t = rand_leaf({1, 5, 3, 3}, rng, false);
    auto loss = [&] {
        ag::Var y = ag::channel_softmax(x);
        return ag::mean_all(ag::square(ag::sub(y, t)));
    };
    CHECK(gradcheck_max_rel_err(loss, {x}) < 1e-6);
}

TEST_CASE("gradcheck: upsample, pool, concat, slice") {
    Rng rng(47);
    ag::Var x = rand_leaf({1, 2, 4, 4}, rng);
    ag::Var y = rand_leaf({1, 3, 4, 4}, rng);
    auto loss = [&] {
        ag::Var u = ag::upsample2x(x);            // (1,2,8,8)
        ag::Var p = ag::avgpool2x(u);             // (1,2,4,4)
        ag::Var c = ag::concat_channels({p, y});  // (1,5,4,4)
        ag::Var s = ag::slice_channels(c, 1, 4);
        return ag::mean_all(ag::square(s));
    };
    CHECK(gradcheck_max_rel_err(loss, {x, y}) < 1e-6);
}

TEST_CASE("gradcheck: channel affine with vector and per-sample params") {
    Rng rng(48);
    ag::Var x = rand_leaf({2, 3, 4, 4}, rng);
    ag::Var g = rand_leaf({3}, rng);
    ag::Var b = rand_leaf({3}, rng);
    ag::Var gper = rand_leaf({2, 3}, rng);
    auto loss = [&] {
        ag::Var y = ag::channel_affine(x, g, b);
        y = ag::add_channel_bias(y, gper);
        return ag::mean_all(ag::square(y));
    };
    CHECK(gradcheck_max_rel_err(loss, {x, g, b, gper}) < 1e-6);
}

TEST_CASE("gradcheck: cross entropy with logits") {
    Rng rng(49);
    ag::Var x = rand_leaf({4, 3}, rng);
    std::vector<int> targets{0, 2, 1, 2};
    auto loss = [&] { return ag::cross_entropy_logits(x, targets); };
    CHECK(gradcheck_max_rel_err(loss, {x}) < 1e-6);
}

TEST_CASE("gradcheck: global average pool and scalar chain") {
    Rng rng(50);
    ag::Var x = rand_leaf({2, 3, 4, 4}, rng);
    auto loss = [&] {
        ag::Var p = ag::global_avg_pool(x);
        ag::Var s = ag::sum_all(ag::exp_(ag::mul_scalar(p, 0.3)));
        return ag::log_(s);
    };
    CHECK(gradcheck_max_rel_err(loss, {x}) < 1e-6);
}

TEST_CASE("grad accumulates across shared subexpressions") {
    ag::Var x = ag::leaf(Tensor::scalar(3.0), true);
    ag::Var y = ag::add(ag::mul(x, x), x);  // x^2 + x, dy/dx = 2x + 1 = 7
    ag::backward(y);
    CHECK(x.grad().data[0] == doctest::Approx(7.0));
}

TEST_CASE("detach blocks gradient flow") {
    ag::Var x = ag::leaf(Tensor::scalar(2.0), true);
    ag::Var d = ag::detach(ag::mul(x, x));
    ag::Var y = ag::mul(d, x);  // treated as 4*x
    ag::backward(y);
    CHECK(x.grad().data[0] == doctest::Approx(4.0));
}

TEST_CASE("Adam converges on a quadratic") {
    ag::Var x = ag::leaf(Tensor::scalar(5.0), true);
    nn::Adam opt({x}, {.lr = 0.1, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8});
    for (int i = 0; i < 400; ++i) {
        opt.zero_grad();
        ag::Var loss = ag::square(ag::add_scalar(x, -1.5));
        ag::backward(loss);
        opt.step();
    }
    CHECK(x.value().data[0] == doctest::Approx(1.5).epsilon(1e-3));
}

TEST_CASE("timestep embedding is bounded and dimensioned") {
    Tensor e = nn::timestep_embedding(17.0, 16);
    CHECK(e.numel() == 16);
    for (double v : e.data) {
        CHECK(v <= 1.0);
        CHECK(v >= -1.0);
    }
}
