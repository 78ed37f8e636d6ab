// Times the OpenMP kernels against the serial reference implementation.
// Usage: kernel_bench [--quick]

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "pvsynth/kernels.hpp"
#include "pvsynth/rng.hpp"

using namespace pvsynth;
namespace K = pvsynth::kernels;

namespace {

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

struct BenchCase {
    std::string name;
    double macs;  // multiply-accumulates per call
    std::function<void()> fn;
};

void run_case(const BenchCase& c, int reps) {
    c.fn();  // warmup
    double best = 1e300;
    for (int trial = 0; trial < 3; ++trial) {
        const double t0 = now_ms();
        for (int r = 0; r < reps; ++r) c.fn();
        best = std::min(best, (now_ms() - t0) / reps);
    }
    std::printf("  %-28s %9.3f ms   %7.2f GMAC/s\n", c.name.c_str(), best, c.macs / best / 1e6);
}

}  // namespace

int main(int argc, char** argv) {
    const bool quick = argc > 1 && std::strcmp(argv[1], "--quick") == 0;
    const int reps = quick ? 2 : 10;

    Rng rng(1234);
    const int N = quick ? 2 : 8, IC = 24, OC = 24, H = 64, W = 64;
    Tensor x({N, IC, H, W});
    rng.fill_normal(x);
    Tensor w({OC, IC, 3, 3});
    rng.fill_normal(w);
    Tensor b({OC});
    rng.fill_normal(b);
    Tensor y;
    K::conv2d_forward(x, w, &b, 1, 1, y);
    Tensor gy(y.shape);
    rng.fill_normal(gy);

    const double conv_macs = static_cast<double>(N) * OC * H * W * IC * 9;

    std::vector<BenchCase> cases;
    cases.push_back({"conv2d_forward", conv_macs, [&] { K::conv2d_forward(x, w, &b, 1, 1, y); }});
    cases.push_back({"conv2d_backward_input", conv_macs, [&] {
                         Tensor gx(x.shape);
                         K::conv2d_backward_input(gy, w, 1, 1, gx);
                     }});
    cases.push_back({"conv2d_backward_weight", conv_macs, [&] {
                         Tensor gw(w.shape);
                         K::conv2d_backward_weight(gy, x, 1, 1, gw);
                     }});
    cases.push_back({"instance_norm_forward", static_cast<double>(N) * IC * H * W * 3, [&] {
                         Tensor o, m, s;
                         K::instance_norm_forward(x, 1e-5, o, m, s);
                     }});
    cases.push_back({"avgpool2x_forward", static_cast<double>(N) * IC * H * W, [&] {
                         Tensor o;
                         K::avgpool2x_forward(x, o);
                     }});

    for (auto backend : {K::Backend::Serial, K::Backend::OpenMP}) {
        K::set_backend(backend);
        std::printf("%s\n", backend == K::Backend::Serial ? "serial reference:" : "OpenMP:");
        for (const auto& c : cases) run_case(c, reps);
    }
    K::set_backend(K::Backend::OpenMP);
    return 0;
}
