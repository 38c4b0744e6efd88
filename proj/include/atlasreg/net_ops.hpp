#pragma once

#include <cstdint>
#include <vector>

#include "atlasreg/types.hpp"

namespace atlasreg {

// Dense feature map: channel-major, spatial x-fastest within a channel.
struct Tensor4 {
    int c = 0;
    Dims3 sd;
    std::vector<double> d;

    Tensor4() = default;
    Tensor4(int channels, Dims3 dims)
        : c(channels), sd(dims),
          d(static_cast<std::size_t>(channels) * dims.count(), 0.0) {}

    std::size_t plane() const { return sd.count(); }
    std::size_t size() const { return d.size(); }
    double *ch(int ci) { return d.data() + static_cast<std::size_t>(ci) * plane(); }
    const double *ch(int ci) const { return d.data() + static_cast<std::size_t>(ci) * plane(); }
    std::size_t idx(int ci, int x, int y, int z) const {
        return static_cast<std::size_t>(ci) * plane() + sd.idx(x, y, z);
    }
    double at(int ci, int x, int y, int z) const { return d[idx(ci, x, y, z)]; }
    double &at(int ci, int x, int y, int z) { return d[idx(ci, x, y, z)]; }
};

// 3D cross-correlation with 'same' zero padding, odd kernel. Kernel layout:
// w[(((oc*in_c + ic)*k + kz)*k + ky)*k + kx], bias per output channel.
Tensor4 conv3d_forward(const Tensor4 &x, const std::vector<double> &w,
                       const std::vector<double> &bias, int out_c, int k);

// Accumulates into dx/dw/db (any may be null to skip that gradient).
void conv3d_backward(const Tensor4 &x, const std::vector<double> &w, int out_c, int k,
                     const Tensor4 &gout, Tensor4 *dx, std::vector<double> *dw,
                     std::vector<double> *db);

// Window 2, stride 2; spatial dims must be even. argmax holds the linear
// index of each window winner (ties: smallest linear index).
struct PoolCache {
    Dims3 in_dims;
    int c = 0;
    std::vector<std::int64_t> argmax;
};
Tensor4 maxpool_forward(const Tensor4 &x, PoolCache &cache);
Tensor4 maxpool_backward(const PoolCache &cache, const Tensor4 &gout);

// Trilinear upsampling by exactly 2x per axis, half-pixel convention
// (output coordinate o samples input at o/2 - 0.25, clamped at borders).
Tensor4 upsample2x_forward(const Tensor4 &x);
Tensor4 upsample2x_backward(const Tensor4 &gout, const Dims3 &in_dims);

Tensor4 leaky_relu_forward(const Tensor4 &x, double slope);
Tensor4 leaky_relu_backward(const Tensor4 &x, const Tensor4 &gout, double slope);

// Per-channel normalization over all voxels of the (single-volume) batch.
// Training mode normalizes by batch statistics and updates the running ones;
// inference mode normalizes by the running statistics.
struct BnCache {
    std::vector<double> mean, inv_std;       // batch statistics used in forward
};
Tensor4 batchnorm_forward(const Tensor4 &x, const std::vector<double> &gamma,
                          const std::vector<double> &shift, std::vector<double> &run_mean,
                          std::vector<double> &run_var, bool training, double eps,
                          double momentum, BnCache *cache);
// Training-mode backward through the batch statistics. Accumulates dgamma/dshift.
Tensor4 batchnorm_backward(const Tensor4 &x, const std::vector<double> &gamma,
                           const BnCache &cache, const Tensor4 &gout,
                           std::vector<double> *dgamma, std::vector<double> *dshift);

// Channel concatenation [a; b] and its split.
Tensor4 concat_forward(const Tensor4 &a, const Tensor4 &b);
void concat_backward(const Tensor4 &gout, Tensor4 &ga, Tensor4 &gb);

}  // namespace atlasreg
