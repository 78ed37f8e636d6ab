#pragma once

#include "pvsynth/tensor.hpp"

// Dense compute kernels behind the autograd ops. Every kernel has one inner
// body shared by two drivers: a serial reference loop and an OpenMP
// parallel-for over independent output elements. Because each output element
// is accumulated by exactly one iteration in a fixed order, the two backends
// produce bit-identical results; tests assert that and kernel_bench times it.
namespace pvsynth::kernels {

enum class Backend { Serial, OpenMP };

Backend backend();
void set_backend(Backend b);

// y[N,OC,OH,OW] = conv(x[N,IC,H,W], w[OC,IC,KH,KW]) + b[OC]; zero padding.
void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad,
                    Tensor& y);
void conv2d_backward_input(const Tensor& gy, const Tensor& w, int stride, int pad, Tensor& gx);
void conv2d_backward_weight(const Tensor& gy, const Tensor& x, int stride, int pad, Tensor& gw);
void conv2d_backward_bias(const Tensor& gy, Tensor& gb);

// y[N,O] = x[N,I] * w[O,I]^T + b[O]
void linear_forward(const Tensor& x, const Tensor& w, const Tensor* b, Tensor& y);
void linear_backward_input(const Tensor& gy, const Tensor& w, Tensor& gx);
void linear_backward_weight(const Tensor& gy, const Tensor& x, Tensor& gw);
void linear_backward_bias(const Tensor& gy, Tensor& gb);

// 2x average pooling (H, W even).
void avgpool2x_forward(const Tensor& x, Tensor& y);
void avgpool2x_backward(const Tensor& gy, Tensor& gx);

// 2x nearest-neighbour upsampling.
void upsample2x_forward(const Tensor& x, Tensor& y);
void upsample2x_backward(const Tensor& gy, Tensor& gx);

// Parameter-free per-sample, per-channel normalization over H*W.
// Saves mean and inverse std for the backward pass.
void instance_norm_forward(const Tensor& x, double eps, Tensor& y, Tensor& mean, Tensor& invstd);
void instance_norm_backward(const Tensor& gy, const Tensor& x, const Tensor& mean,
                            const Tensor& invstd, Tensor& gx);

// Per-pixel softmax over the channel dimension.
void channel_softmax_forward(const Tensor& x, Tensor& y);
void channel_softmax_backward(const Tensor& gy, const Tensor& y, Tensor& gx);

// Bilinear affine warp of (N,C,H,W) about the image centre; out-of-range
// samples clamp to the border. Data-side only (no gradient).
struct AffineParams {
    double rot_rad = 0.0;
    double scale = 1.0;
    double tx = 0.0;  // translation, fraction of width
    double ty = 0.0;  // translation, fraction of height
};
void warp_affine_bilinear(const Tensor& x, const AffineParams& p, Tensor& y);

}  // namespace pvsynth::kernels
