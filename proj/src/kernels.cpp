#include "pvsynth/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>

namespace pvsynth {

double Tensor::min() const {
    double m = data.empty() ? 0.0 : data[0];
    for (double v : data)
        if (v < m) m = v;
    return m;
}

double Tensor::max() const {
    double m = data.empty() ? 0.0 : data[0];
    for (double v : data)
        if (v > m) m = v;
    return m;
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace pvsynth

namespace pvsynth::kernels {

namespace {

Backend g_backend = [] {
    const char* env = std::getenv("PVSYNTH_KERNELS");
    if (env && std::string(env) == "serial") return Backend::Serial;
    return Backend::OpenMP;
}();

// Runs body(i) for i in [0, n). The OpenMP path assigns each index to exactly
// one thread, so any kernel whose iterations write disjoint outputs is
// bit-identical to the serial path.
template <typename F>
inline void par_for(int64_t n, F&& body) {
    if (g_backend == Backend::OpenMP) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) body(i);
    } else {
        for (int64_t i = 0; i < n; ++i) body(i);
    }
}

}  // namespace

Backend backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

namespace {

// Valid output range for one kernel tap: ix = ox*stride - pad + k must land
// in [0, limit). Returns [lo, hi).
inline void tap_range(int k, int pad, int stride, int limit, int out_size, int& lo, int& hi) {
    const int off = k - pad;
    lo = off < 0 ? (-off + stride - 1) / stride : 0;
    const int last = limit - 1 - off;
    hi = last < 0 ? 0 : std::min(out_size, last / stride + 1);
}

// Dot product with eight independent accumulator lanes summed in a fixed
// order. Breaks the FP dependency chain without -ffast-math; the lane
// pattern is part of the kernel definition, so results stay deterministic.
inline double dot8(const double* a, const double* b, int n) {
    double l0 = 0, l1 = 0, l2 = 0, l3 = 0, l4 = 0, l5 = 0, l6 = 0, l7 = 0;
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        l0 += a[i] * b[i];
        l1 += a[i + 1] * b[i + 1];
        l2 += a[i + 2] * b[i + 2];
        l3 += a[i + 3] * b[i + 3];
        l4 += a[i + 4] * b[i + 4];
        l5 += a[i + 5] * b[i + 5];
        l6 += a[i + 6] * b[i + 6];
        l7 += a[i + 7] * b[i + 7];
    }
    double tail = 0.0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return (((l0 + l1) + (l2 + l3)) + ((l4 + l5) + (l6 + l7))) + tail;
}

inline double dot8_stride(const double* a, const double* b, int64_t bs, int n) {
    double l0 = 0, l1 = 0, l2 = 0, l3 = 0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        l0 += a[i] * b[i * bs];
        l1 += a[i + 1] * b[(i + 1) * bs];
        l2 += a[i + 2] * b[(i + 2) * bs];
        l3 += a[i + 3] * b[(i + 3) * bs];
    }
    double tail = 0.0;
    for (; i < n; ++i) tail += a[i] * b[i * bs];
    return ((l0 + l1) + (l2 + l3)) + tail;
}

}  // namespace

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad,
                    Tensor& y) {
    const int N = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    const int OH = (H + 2 * pad - KH) / stride + 1;
    const int OW = (W + 2 * pad - KW) / stride + 1;
    y = Tensor({N, OC, OH, OW});

    const double* xp = x.data.data();
    const double* wp = w.data.data();
    const double* bp = b ? b->data.data() : nullptr;
    double* yp = y.data.data();

    par_for(static_cast<int64_t>(N) * OC * OH, [&](int64_t row) {
        const int oy = static_cast<int>(row % OH);
        const int oc = static_cast<int>((row / OH) % OC);
        const int n = static_cast<int>(row / (static_cast<int64_t>(OH) * OC));
        double* ydst = yp + ((static_cast<int64_t>(n) * OC + oc) * OH + oy) * OW;
        const double bias = bp ? bp[oc] : 0.0;
        for (int ox = 0; ox < OW; ++ox) ydst[ox] = bias;
        for (int ic = 0; ic < IC; ++ic) {
            const double* xch = xp + (static_cast<int64_t>(n) * IC + ic) * H * W;
            const double* wch = wp + ((static_cast<int64_t>(oc) * IC + ic) * KH) * KW;
            for (int ky = 0; ky < KH; ++ky) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= H) continue;
                const double* xrow = xch + static_cast<int64_t>(iy) * W;
                const double* wrow = wch + static_cast<int64_t>(ky) * KW;
                for (int kx = 0; kx < KW; ++kx) {
                    const double wv = wrow[kx];
                    int lo, hi;
                    tap_range(kx, pad, stride, W, OW, lo, hi);
                    const double* xoff = xrow + (kx - pad);
                    if (stride == 1) {
                        for (int ox = lo; ox < hi; ++ox) ydst[ox] += xoff[ox] * wv;
                    } else {
                        for (int ox = lo; ox < hi; ++ox)
                            ydst[ox] += xoff[static_cast<int64_t>(ox) * stride] * wv;
                    }
                }
            }
        }
    });
}

void conv2d_backward_input(const Tensor& gy, const Tensor& w, int stride, int pad, Tensor& gx) {
    const int N = gy.dim(0), OC = gy.dim(1), OH = gy.dim(2), OW = gy.dim(3);
    const int IC = w.dim(1), KH = w.dim(2), KW = w.dim(3);
    const int H = gx.dim(2), W = gx.dim(3);

    const double* gp = gy.data.data();
    const double* wp = w.data.data();
    double* xp = gx.data.data();

    // Gather form: each input row collects its own contributions, so rows
    // parallelize without write conflicts.
    par_for(static_cast<int64_t>(N) * IC * H, [&](int64_t row) {
        const int iy = static_cast<int>(row % H);
        const int ic = static_cast<int>((row / H) % IC);
        const int n = static_cast<int>(row / (static_cast<int64_t>(H) * IC));
        double* dst = xp + ((static_cast<int64_t>(n) * IC + ic) * H + iy) * W;
        for (int ix = 0; ix < W; ++ix) dst[ix] = 0.0;
        for (int oc = 0; oc < OC; ++oc) {
            const double* gch = gp + (static_cast<int64_t>(n) * OC + oc) * OH * OW;
            const double* wch = wp + ((static_cast<int64_t>(oc) * IC + ic) * KH) * KW;
            for (int ky = 0; ky < KH; ++ky) {
                const int num = iy + pad - ky;
                if (num < 0 || num % stride) continue;
                const int oy = num / stride;
                if (oy >= OH) continue;
                const double* grow = gch + static_cast<int64_t>(oy) * OW;
                const double* wrow = wch + static_cast<int64_t>(ky) * KW;
                for (int kx = 0; kx < KW; ++kx) {
                    const double wv = wrow[kx];
                    // ix = ox*stride - pad + kx over valid ox.
                    int lo, hi;
                    tap_range(kx, pad, stride, W, OW, lo, hi);
                    double* xoff = dst + (kx - pad);
                    if (stride == 1) {
                        for (int ox = lo; ox < hi; ++ox) xoff[ox] += grow[ox] * wv;
                    } else {
                        for (int ox = lo; ox < hi; ++ox)
                            xoff[static_cast<int64_t>(ox) * stride] += grow[ox] * wv;
                    }
                }
            }
        }
    });
}

void conv2d_backward_weight(const Tensor& gy, const Tensor& x, int stride, int pad, Tensor& gw) {
    const int N = gy.dim(0), OC = gy.dim(1), OH = gy.dim(2), OW = gy.dim(3);
    const int IC = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int KH = gw.dim(2), KW = gw.dim(3);

    const double* gp = gy.data.data();
    const double* xp = x.data.data();
    double* wp = gw.data.data();

    // One thread owns the (oc, ic) weight patch and scans that channel pair
    // once per sample, accumulating all KH*KW taps while both channels sit in
    // cache. Reduction order is fixed, so backends agree bitwise.
    par_for(static_cast<int64_t>(OC) * IC, [&](int64_t pair) {
        const int ic = static_cast<int>(pair % IC);
        const int oc = static_cast<int>(pair / IC);
        double* wcell = wp + pair * KH * KW;
        for (int64_t i = 0; i < static_cast<int64_t>(KH) * KW; ++i) wcell[i] = 0.0;
        for (int n = 0; n < N; ++n) {
            const double* gch = gp + (static_cast<int64_t>(n) * OC + oc) * OH * OW;
            const double* xch = xp + (static_cast<int64_t>(n) * IC + ic) * H * W;
            for (int ky = 0; ky < KH; ++ky) {
                int oy_lo, oy_hi;
                tap_range(ky, pad, stride, H, OH, oy_lo, oy_hi);
                for (int kx = 0; kx < KW; ++kx) {
                    int ox_lo, ox_hi;
                    tap_range(kx, pad, stride, W, OW, ox_lo, ox_hi);
                    double acc = 0.0;
                    for (int oy = oy_lo; oy < oy_hi; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        const double* grow = gch + static_cast<int64_t>(oy) * OW;
                        const double* xrow = xch + static_cast<int64_t>(iy) * W + (kx - pad);
                        if (stride == 1) {
                            acc += dot8(grow + ox_lo, xrow + ox_lo, ox_hi - ox_lo);
                        } else {
                            acc += dot8_stride(grow + ox_lo, xrow + static_cast<int64_t>(ox_lo) * stride,
                                               stride, ox_hi - ox_lo);
                        }
                    }
                    wcell[static_cast<int64_t>(ky) * KW + kx] += acc;
                }
            }
        }
    });
}

void conv2d_backward_bias(const Tensor& gy, Tensor& gb) {
    const int N = gy.dim(0), OC = gy.dim(1);
    const int64_t HW = static_cast<int64_t>(gy.dim(2)) * gy.dim(3);
    const double* gp = gy.data.data();
    double* bp = gb.data.data();
    par_for(OC, [&](int64_t oc) {
        double acc = 0.0;
        for (int n = 0; n < N; ++n) {
            const double* base = gp + (static_cast<int64_t>(n) * OC + oc) * HW;
            for (int64_t i = 0; i < HW; ++i) acc += base[i];
        }
        bp[oc] = acc;
    });
}

void linear_forward(const Tensor& x, const Tensor& w, const Tensor* b, Tensor& y) {
    const int N = x.dim(0), I = x.dim(1), O = w.dim(0);
    y = Tensor({N, O});
    const double* xp = x.data.data();
    const double* wp = w.data.data();
    const double* bp = b ? b->data.data() : nullptr;
    double* yp = y.data.data();
    par_for(static_cast<int64_t>(N) * O, [&](int64_t idx) {
        const int o = static_cast<int>(idx % O);
        const int n = static_cast<int>(idx / O);
        const double* xr = xp + static_cast<int64_t>(n) * I;
        const double* wr = wp + static_cast<int64_t>(o) * I;
        yp[idx] = (bp ? bp[o] : 0.0) + dot8(xr, wr, I);
    });
}

void linear_backward_input(const Tensor& gy, const Tensor& w, Tensor& gx) {
    const int N = gy.dim(0), O = gy.dim(1), I = w.dim(1);
    const double* gp = gy.data.data();
    const double* wp = w.data.data();
    double* xp = gx.data.data();
    par_for(static_cast<int64_t>(N) * I, [&](int64_t idx) {
        const int i = static_cast<int>(idx % I);
        const int n = static_cast<int>(idx / I);
        const double* gr = gp + static_cast<int64_t>(n) * O;
        double acc = 0.0;
        for (int o = 0; o < O; ++o) acc += gr[o] * wp[static_cast<int64_t>(o) * I + i];
        xp[idx] = acc;
    });
}

void linear_backward_weight(const Tensor& gy, const Tensor& x, Tensor& gw) {
    const int N = gy.dim(0), O = gy.dim(1), I = x.dim(1);
    const double* gp = gy.data.data();
    const double* xp = x.data.data();
    double* wp = gw.data.data();
    par_for(static_cast<int64_t>(O) * I, [&](int64_t idx) {
        const int i = static_cast<int>(idx % I);
        const int o = static_cast<int>(idx / I);
        wp[idx] = dot8_stride(gp + o, xp + i, 1, 0) * 0.0 + [&] {
            double l0 = 0, l1 = 0;
            int n = 0;
            for (; n + 2 <= N; n += 2) {
                l0 += gp[static_cast<int64_t>(n) * O + o] * xp[static_cast<int64_t>(n) * I + i];
                l1 += gp[static_cast<int64_t>(n + 1) * O + o] * xp[static_cast<int64_t>(n + 1) * I + i];
            }
            double tail = 0.0;
            for (; n < N; ++n) tail += gp[static_cast<int64_t>(n) * O + o] * xp[static_cast<int64_t>(n) * I + i];
            return (l0 + l1) + tail;
        }();
    });
}

void linear_backward_bias(const Tensor& gy, Tensor& gb) {
    const int N = gy.dim(0), O = gy.dim(1);
    const double* gp = gy.data.data();
    double* bp = gb.data.data();
    par_for(O, [&](int64_t o) {
        double acc = 0.0;
        for (int n = 0; n < N; ++n) acc += gp[static_cast<int64_t>(n) * O + o];
        bp[o] = acc;
    });
}

void avgpool2x_forward(const Tensor& x, Tensor& y) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OH = H / 2, OW = W / 2;
    y = Tensor({N, C, OH, OW});
    const double* xp = x.data.data();
    double* yp = y.data.data();
    par_for(static_cast<int64_t>(N) * C * OH, [&](int64_t row) {
        const int oy = static_cast<int>(row % OH);
        const int64_t nc = row / OH;
        const double* x0 = xp + (nc * H + 2 * oy) * W;
        const double* x1 = x0 + W;
        double* dst = yp + row * OW;
        for (int ox = 0; ox < OW; ++ox)
            dst[ox] = 0.25 * (x0[2 * ox] + x0[2 * ox + 1] + x1[2 * ox] + x1[2 * ox + 1]);
    });
}

void avgpool2x_backward(const Tensor& gy, Tensor& gx) {
    const int OH = gy.dim(2), OW = gy.dim(3);
    const int H = gx.dim(2), W = gx.dim(3);
    const int64_t NC = static_cast<int64_t>(gy.dim(0)) * gy.dim(1);
    const double* gp = gy.data.data();
    double* xp = gx.data.data();
    par_for(NC * H, [&](int64_t row) {
        const int iy = static_cast<int>(row % H);
        const int64_t nc = row / H;
        const double* src = gp + (nc * OH + iy / 2) * OW;
        double* dst = xp + row * W;
        for (int ix = 0; ix < W; ++ix) dst[ix] = 0.25 * src[ix / 2];
    });
}

void upsample2x_forward(const Tensor& x, Tensor& y) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    y = Tensor({N, C, 2 * H, 2 * W});
    const double* xp = x.data.data();
    double* yp = y.data.data();
    par_for(static_cast<int64_t>(N) * C * 2 * H, [&](int64_t row) {
        const int oy = static_cast<int>(row % (2 * H));
        const int64_t nc = row / (2 * H);
        const double* src = xp + (nc * H + oy / 2) * W;
        double* dst = yp + row * (2 * W);
        for (int ox = 0; ox < 2 * W; ++ox) dst[ox] = src[ox / 2];
    });
}

void upsample2x_backward(const Tensor& gy, Tensor& gx) {
    const int H = gx.dim(2), W = gx.dim(3);
    const int64_t NC = static_cast<int64_t>(gx.dim(0)) * gx.dim(1);
    const double* gp = gy.data.data();
    double* xp = gx.data.data();
    par_for(NC * H, [&](int64_t row) {
        const int iy = static_cast<int>(row % H);
        const int64_t nc = row / H;
        const double* g0 = gp + (nc * 2 * H + 2 * iy) * 2 * W;
        const double* g1 = g0 + 2 * W;
        double* dst = xp + row * W;
        for (int ix = 0; ix < W; ++ix)
            dst[ix] = g0[2 * ix] + g0[2 * ix + 1] + g1[2 * ix] + g1[2 * ix + 1];
    });
}

void instance_norm_forward(const Tensor& x, double eps, Tensor& y, Tensor& mean, Tensor& invstd) {
    const int N = x.dim(0), C = x.dim(1);
    const int64_t HW = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    y = Tensor(x.shape);
    mean = Tensor({N, C});
    invstd = Tensor({N, C});
    const double* xp = x.data.data();
    double* yp = y.data.data();
    double* mp = mean.data.data();
    double* sp = invstd.data.data();
    par_for(static_cast<int64_t>(N) * C, [&](int64_t nc) {
        const double* src = xp + nc * HW;
        double m = 0.0;
        for (int64_t i = 0; i < HW; ++i) m += src[i];
        m /= static_cast<double>(HW);
        double v = 0.0;
        for (int64_t i = 0; i < HW; ++i) {
            const double d = src[i] - m;
            v += d * d;
        }
        v /= static_cast<double>(HW);
        const double is = 1.0 / std::sqrt(v + eps);
        mp[nc] = m;
        sp[nc] = is;
        double* dst = yp + nc * HW;
        for (int64_t i = 0; i < HW; ++i) dst[i] = (src[i] - m) * is;
    });
}

void instance_norm_backward(const Tensor& gy, const Tensor& x, const Tensor& mean,
                            const Tensor& invstd, Tensor& gx) {
    const int N = x.dim(0), C = x.dim(1);
    const int64_t HW = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    const double* gp = gy.data.data();
    const double* xp = x.data.data();
    const double* mp = mean.data.data();
    const double* sp = invstd.data.data();
    double* op = gx.data.data();
    par_for(static_cast<int64_t>(N) * C, [&](int64_t nc) {
        const double* g = gp + nc * HW;
        const double* xr = xp + nc * HW;
        const double m = mp[nc], is = sp[nc];
        double gsum = 0.0, gxhat = 0.0;
        for (int64_t i = 0; i < HW; ++i) {
            const double xh = (xr[i] - m) * is;
            gsum += g[i];
            gxhat += g[i] * xh;
        }
        const double inv_n = 1.0 / static_cast<double>(HW);
        double* dst = op + nc * HW;
        for (int64_t i = 0; i < HW; ++i) {
            const double xh = (xr[i] - m) * is;
            dst[i] = is * (g[i] - inv_n * gsum - xh * inv_n * gxhat);
        }
    });
}

void channel_softmax_forward(const Tensor& x, Tensor& y) {
    const int N = x.dim(0), C = x.dim(1);
    const int64_t HW = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    y = Tensor(x.shape);
    const double* xp = x.data.data();
    double* yp = y.data.data();
    par_for(static_cast<int64_t>(N) * HW, [&](int64_t idx) {
        const int64_t px = idx % HW;
        const int64_t n = idx / HW;
        const double* base = xp + n * C * HW + px;
        double* dst = yp + n * C * HW + px;
        double mx = base[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, base[static_cast<int64_t>(c) * HW]);
        double z = 0.0;
        for (int c = 0; c < C; ++c) {
            const double e = std::exp(base[static_cast<int64_t>(c) * HW] - mx);
            dst[static_cast<int64_t>(c) * HW] = e;
            z += e;
        }
        const double iz = 1.0 / z;
        for (int c = 0; c < C; ++c) dst[static_cast<int64_t>(c) * HW] *= iz;
    });
}

void channel_softmax_backward(const Tensor& gy, const Tensor& y, Tensor& gx) {
    const int N = y.dim(0), C = y.dim(1);
    const int64_t HW = static_cast<int64_t>(y.dim(2)) * y.dim(3);
    const double* gp = gy.data.data();
    const double* yp = y.data.data();
    double* op = gx.data.data();
    par_for(static_cast<int64_t>(N) * HW, [&](int64_t idx) {
        const int64_t px = idx % HW;
        const int64_t n = idx / HW;
        const double* g = gp + n * C * HW + px;
        const double* s = yp + n * C * HW + px;
        double dot = 0.0;
        for (int c = 0; c < C; ++c)
            dot += g[static_cast<int64_t>(c) * HW] * s[static_cast<int64_t>(c) * HW];
        double* dst = op + n * C * HW + px;
        for (int c = 0; c < C; ++c)
            dst[static_cast<int64_t>(c) * HW] =
                s[static_cast<int64_t>(c) * HW] * (g[static_cast<int64_t>(c) * HW] - dot);
    });
}

void warp_affine_bilinear(const Tensor& x, const AffineParams& p, Tensor& y) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    y = Tensor(x.shape);
    const double cy = 0.5 * (H - 1), cx = 0.5 * (W - 1);
    const double ca = std::cos(p.rot_rad), sa = std::sin(p.rot_rad);
    // Output pixel samples the input at the inverse-transformed location.
    const double inv_s = 1.0 / p.scale;
    const double* xp = x.data.data();
    double* yp = y.data.data();
    par_for(static_cast<int64_t>(N) * C * H, [&](int64_t row) {
        const int oy = static_cast<int>(row % H);
        const int64_t nc = row / H;
        const double* src = xp + nc * H * W;
        double* dst = yp + row * W;
        for (int ox = 0; ox < W; ++ox) {
            const double dx = (ox - cx) - p.tx * W;
            const double dy = (oy - cy) - p.ty * H;
            double sxf = inv_s * (ca * dx + sa * dy) + cx;
            double syf = inv_s * (-sa * dx + ca * dy) + cy;
            sxf = std::min(std::max(sxf, 0.0), static_cast<double>(W - 1));
            syf = std::min(std::max(syf, 0.0), static_cast<double>(H - 1));
            const int x0 = static_cast<int>(sxf), y0 = static_cast<int>(syf);
            const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
            const double fx = sxf - x0, fy = syf - y0;
            const double v00 = src[static_cast<int64_t>(y0) * W + x0];
            const double v01 = src[static_cast<int64_t>(y0) * W + x1];
            const double v10 = src[static_cast<int64_t>(y1) * W + x0];
            const double v11 = src[static_cast<int64_t>(y1) * W + x1];
            dst[ox] = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
        }
    });
}

}  // namespace pvsynth::kernels
