#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pvsynth/kernels.hpp"
#include "pvsynth/rng.hpp"

using namespace pvsynth;
namespace K = pvsynth::kernels;

namespace {

Tensor random_tensor(Shape s, Rng& rng) {
    Tensor t(std::move(s));
    rng.fill_normal(t);
    return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a.data[static_cast<size_t>(i)] != b.data[static_cast<size_t>(i)]) return false;
    return true;
}

// Runs fn once per backend and asserts bit-identical outputs.
template <typename Fn>
void check_backends_agree(Fn&& fn) {
    K::set_backend(K::Backend::Serial);
    Tensor serial = fn();
    K::set_backend(K::Backend::OpenMP);
    Tensor omp = fn();
    CHECK(bit_equal(serial, omp));
}

}  // namespace

TEST_CASE("conv2d forward matches hand example") {
    // 1x1x3x3 input, single 3x3 filter of ones, pad 1: each output is the
    // sum of the 3x3 neighbourhood.
    Tensor x({1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) x.data[static_cast<size_t>(i)] = i + 1;
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor y;
    K::conv2d_forward(x, w, nullptr, 1, 1, y);
    CHECK(y.shape == Shape{1, 1, 3, 3});
    CHECK(y.at4(0, 0, 1, 1) == doctest::Approx(45.0));  // full grid
    CHECK(y.at4(0, 0, 0, 0) == doctest::Approx(1 + 2 + 4 + 5));
    CHECK(y.at4(0, 0, 2, 2) == doctest::Approx(5 + 6 + 8 + 9));
}

TEST_CASE("conv2d stride-2 shape") {
    Rng rng(7);
    Tensor x = random_tensor({2, 3, 8, 8}, rng);
    Tensor w = random_tensor({5, 3, 3, 3}, rng);
    Tensor y;
    K::conv2d_forward(x, w, nullptr, 2, 1, y);
    CHECK(y.shape == Shape{2, 5, 4, 4});
}

TEST_CASE("serial and OpenMP backends are bit-identical") {
    Rng rng(11);
    Tensor x = random_tensor({3, 4, 10, 10}, rng);
    Tensor w = random_tensor({6, 4, 3, 3}, rng);
    Tensor b = random_tensor({6}, rng);
    Tensor gy = random_tensor({3, 6, 10, 10}, rng);
    Tensor gy2 = random_tensor({3, 6, 5, 5}, rng);

    check_backends_agree([&] {
        Tensor y;
        K::conv2d_forward(x, w, &b, 1, 1, y);
        return y;
    });
    check_backends_agree([&] {
        Tensor gx(x.shape);
        K::conv2d_backward_input(gy, w, 1, 1, gx);
        return gx;
    });
    check_backends_agree([&] {
        Tensor gw(w.shape);
        K::conv2d_backward_weight(gy, x, 1, 1, gw);
        return gw;
    });
    check_backends_agree([&] {
        Tensor gw(w.shape);
        K::conv2d_backward_weight(gy2, x, 2, 1, gw);
        return gw;
    });
    check_backends_agree([&] {
        Tensor gb({6});
        K::conv2d_backward_bias(gy, gb);
        return gb;
    });

    Tensor xl = random_tensor({4, 12}, rng);
    Tensor wl = random_tensor({7, 12}, rng);
    Tensor bl = random_tensor({7}, rng);
    Tensor gl = random_tensor({4, 7}, rng);
    check_backends_agree([&] {
        Tensor y;
        K::linear_forward(xl, wl, &bl, y);
        return y;
    });
    check_backends_agree([&] {
        Tensor gx(xl.shape);
        K::linear_backward_input(gl, wl, gx);
        return gx;
    });
    check_backends_agree([&] {
        Tensor gw(wl.shape);
        K::linear_backward_weight(gl, xl, gw);
        return gw;
    });

    check_backends_agree([&] {
        Tensor y;
        K::avgpool2x_forward(x, y);
        return y;
    });
    check_backends_agree([&] {
        Tensor y;
        K::upsample2x_forward(x, y);
        return y;
    });
    check_backends_agree([&] {
        Tensor y, m, s;
        K::instance_norm_forward(x, 1e-5, y, m, s);
        return y;
    });
    check_backends_agree([&] {
        Tensor y;
        K::channel_softmax_forward(x, y);
        return y;
    });
    check_backends_agree([&] {
        Tensor y;
        K::AffineParams p;
        p.rot_rad = 0.1;
        p.scale = 1.03;
        p.tx = 0.02;
        p.ty = -0.01;
        K::warp_affine_bilinear(x, p, y);
        return y;
    });
    K::set_backend(K::Backend::OpenMP);
}

TEST_CASE("avgpool/upsample round trip on constant maps") {
    Tensor x = Tensor::full({1, 2, 4, 4}, 3.25);
    Tensor y, z;
    K::avgpool2x_forward(x, y);
    CHECK(y.shape == Shape{1, 2, 2, 2});
    for (double v : y.data) CHECK(v == doctest::Approx(3.25));
    K::upsample2x_forward(y, z);
    CHECK(z.shape == x.shape);
    for (double v : z.data) CHECK(v == doctest::Approx(3.25));
}

TEST_CASE("instance norm output is standardized per channel") {
    Rng rng(3);
    Tensor x = random_tensor({2, 3, 8, 8}, rng);
    Tensor y, m, s;
    K::instance_norm_forward(x, 1e-8, y, m, s);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c) {
            double mean = 0.0, var = 0.0;
            for (int i = 0; i < 64; ++i) mean += y.data[((n * 3 + c) * 64) + i];
            mean /= 64.0;
            for (int i = 0; i < 64; ++i) {
                const double d = y.data[((n * 3 + c) * 64) + i] - mean;
                var += d * d;
            }
            var /= 64.0;
            CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
            CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
        }
}

TEST_CASE("channel softmax sums to one per pixel") {
    Rng rng(5);
    Tensor x = random_tensor({2, 7, 4, 4}, rng);
    Tensor y;
    K::channel_softmax_forward(x, y);
    for (int n = 0; n < 2; ++n)
        for (int px = 0; px < 16; ++px) {
            double s = 0.0;
            for (int c = 0; c < 7; ++c) s += y.data[(n * 7 + c) * 16 + px];
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
}

TEST_CASE("identity affine warp is exact") {
    Rng rng(9);
    Tensor x = random_tensor({1, 2, 6, 6}, rng);
    Tensor y;
    K::warp_affine_bilinear(x, K::AffineParams{}, y);
    CHECK(bit_equal(x, y));
}
