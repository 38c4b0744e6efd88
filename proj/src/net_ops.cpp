#include "atlasreg/net_ops.hpp"

#include <algorithm>
#include <cmath>

namespace atlasreg {

Tensor4 conv3d_forward(const Tensor4 &x, const std::vector<double> &w,
                       const std::vector<double> &bias, int out_c, int k) {
    if (k < 1 || k % 2 == 0)
        throw ArgumentError("conv3d: kernel size must be odd and positive");
    const int in_c = x.c;
    if (w.size() != static_cast<std::size_t>(out_c) * in_c * k * k * k)
        throw ArgumentError("conv3d: kernel buffer size mismatch");
    if (bias.size() != static_cast<std::size_t>(out_c))
        throw ArgumentError("conv3d: bias buffer size mismatch");

    const int r = k / 2;
    const Dims3 sd = x.sd;
    const int nx = sd.nx, ny = sd.ny, nz = sd.nz;
    Tensor4 out(out_c, sd);

    // Shift-and-accumulate: for each kernel tap, add a weighted shifted row.
    // Each (oc, zo) output plane-row set is owned by one iteration, so the
    // result is independent of the parallel partitioning.
#pragma omp parallel for collapse(2) schedule(static)
    for (int oc = 0; oc < out_c; ++oc) {
        for (int zo = 0; zo < nz; ++zo) {
            double *outp = out.ch(oc) + sd.idx(0, 0, zo);
            const double b = bias[oc];
            for (int i = 0; i < nx * ny; ++i) outp[i] = b;
            for (int ic = 0; ic < in_c; ++ic) {
                const double *inc = x.ch(ic);
                const std::size_t wbase0 =
                    (static_cast<std::size_t>(oc) * in_c + ic) * k * k * k;
                for (int kz = 0; kz < k; ++kz) {
                    const int zi = zo + kz - r;
                    if (zi < 0 || zi >= nz) continue;
                    for (int ky = 0; ky < k; ++ky) {
                        const int y_lo = std::max(0, r - ky);
                        const int y_hi = std::min(ny, ny + r - ky);
                        for (int kx = 0; kx < k; ++kx) {
                            const double wv = w[wbase0 + (static_cast<std::size_t>(kz) * k + ky) * k + kx];
                            if (wv == 0.0) continue;
                            const int x_lo = std::max(0, r - kx);
                            const int x_hi = std::min(nx, nx + r - kx);
                            const int len = x_hi - x_lo;
                            if (len <= 0) continue;
                            for (int yo = y_lo; yo < y_hi; ++yo) {
                                const int yi = yo + ky - r;
                                const double *inrow = inc + sd.idx(x_lo + kx - r, yi, zi);
                                double *outrow = outp + static_cast<std::size_t>(yo) * nx + x_lo;
                                for (int i = 0; i < len; ++i) outrow[i] += wv * inrow[i];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

void conv3d_backward(const Tensor4 &x, const std::vector<double> &w, int out_c, int k,
                     const Tensor4 &gout, Tensor4 *dx, std::vector<double> *dw,
                     std::vector<double> *db) {
    const int in_c = x.c;
    const int r = k / 2;
    const Dims3 sd = x.sd;
    const int nx = sd.nx, ny = sd.ny, nz = sd.nz;
    if (gout.c != out_c || gout.sd != sd)
        throw DimsError("conv3d_backward: upstream gradient shape mismatch");

    if (db) {
        if (db->size() != static_cast<std::size_t>(out_c))
            throw ArgumentError("conv3d_backward: dbias size mismatch");
#pragma omp parallel for schedule(static)
        for (int oc = 0; oc < out_c; ++oc) {
            const double *g = gout.ch(oc);
            double acc = 0.0;
            const std::size_t n = sd.count();
            for (std::size_t i = 0; i < n; ++i) acc += g[i];
            (*db)[oc] += acc;
        }
    }

    if (dw) {
        if (dw->size() != w.size())
            throw ArgumentError("conv3d_backward: dkernel size mismatch");
        // dw[oc,ic,kz,ky,kx] = sum over output voxels of g * shifted input.
#pragma omp parallel for collapse(2) schedule(static)
        for (int oc = 0; oc < out_c; ++oc) {
            for (int ic = 0; ic < in_c; ++ic) {
                const double *g = gout.ch(oc);
                const double *inc = x.ch(ic);
                const std::size_t wbase0 =
                    (static_cast<std::size_t>(oc) * in_c + ic) * k * k * k;
                for (int kz = 0; kz < k; ++kz) {
                    const int z_lo = std::max(0, r - kz);
                    const int z_hi = std::min(nz, nz + r - kz);
                    for (int ky = 0; ky < k; ++ky) {
                        const int y_lo = std::max(0, r - ky);
                        const int y_hi = std::min(ny, ny + r - ky);
                        for (int kx = 0; kx < k; ++kx) {
                            const int x_lo = std::max(0, r - kx);
                            const int x_hi = std::min(nx, nx + r - kx);
                            const int len = x_hi - x_lo;
                            if (len <= 0) continue;
                            double acc = 0.0;
                            for (int zo = z_lo; zo < z_hi; ++zo) {
                                const int zi = zo + kz - r;
                                for (int yo = y_lo; yo < y_hi; ++yo) {
                                    const int yi = yo + ky - r;
                                    const double *grow = g + sd.idx(x_lo, yo, zo);
                                    const double *inrow = inc + sd.idx(x_lo + kx - r, yi, zi);
                                    for (int i = 0; i < len; ++i) acc += grow[i] * inrow[i];
                                }
                            }
                            (*dw)[wbase0 + (static_cast<std::size_t>(kz) * k + ky) * k + kx] += acc;
                        }
                    }
                }
            }
        }
    }

    if (dx) {
        if (dx->c != in_c || dx->sd != sd)
            throw DimsError("conv3d_backward: dx shape mismatch");
        // dx(ic, xi) = sum_oc sum_k w * g(oc, xi + r - k): the adjoint shifts
        // the other way. Each (ic, zi) row set is owned by one iteration.
#pragma omp parallel for collapse(2) schedule(static)
        for (int ic = 0; ic < in_c; ++ic) {
            for (int zi = 0; zi < nz; ++zi) {
                double *dxp = dx->ch(ic) + sd.idx(0, 0, zi);
                for (int oc = 0; oc < out_c; ++oc) {
                    const double *g = gout.ch(oc);
                    const std::size_t wbase0 =
                        (static_cast<std::size_t>(oc) * in_c + ic) * k * k * k;
                    for (int kz = 0; kz < k; ++kz) {
                        const int zo = zi - kz + r;
                        if (zo < 0 || zo >= nz) continue;
                        for (int ky = 0; ky < k; ++ky) {
                            const int y_lo = std::max(0, ky - r);
                            const int y_hi = std::min(ny, ny + ky - r);
                            for (int kx = 0; kx < k; ++kx) {
                                const double wv = w[wbase0 + (static_cast<std::size_t>(kz) * k + ky) * k + kx];
                                if (wv == 0.0) continue;
                                const int x_lo = std::max(0, kx - r);
                                const int x_hi = std::min(nx, nx + kx - r);
                                const int len = x_hi - x_lo;
                                if (len <= 0) continue;
                                for (int yi = y_lo; yi < y_hi; ++yi) {
                                    const int yo = yi - ky + r;
                                    const double *grow = g + sd.idx(x_lo - kx + r, yo, zo);
                                    double *dxrow = dxp + static_cast<std::size_t>(yi) * nx + x_lo;
                                    for (int i = 0; i < len; ++i) dxrow[i] += wv * grow[i];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

Tensor4 maxpool_forward(const Tensor4 &x, PoolCache &cache) {
    const Dims3 sd = x.sd;
    if (sd.nx % 2 || sd.ny % 2 || sd.nz % 2)
        throw StateError("maxpool: odd spatial dims reached a pooling layer");
    const Dims3 od{sd.nx / 2, sd.ny / 2, sd.nz / 2};
    Tensor4 out(x.c, od);
    cache.in_dims = sd;
    cache.c = x.c;
    cache.argmax.assign(out.size(), 0);

#pragma omp parallel for schedule(static)
    for (int c = 0; c < x.c; ++c) {
        const double *in = x.ch(c);
        for (int zo = 0; zo < od.nz; ++zo)
            for (int yo = 0; yo < od.ny; ++yo)
                for (int xo = 0; xo < od.nx; ++xo) {
                    double best = -1.0;
                    std::int64_t best_idx = -1;
                    // dz/dy/dx scan order visits window voxels in increasing
                    // linear index; strict > keeps the first on ties.
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const std::size_t ii = sd.idx(2 * xo + dx, 2 * yo + dy, 2 * zo + dz);
                                const double v = in[ii];
                                if (best_idx < 0 || v > best) {
                                    best = v;
                                    best_idx = static_cast<std::int64_t>(ii);
                                }
                            }
                    const std::size_t oi = out.idx(c, xo, yo, zo);
                    out.d[oi] = best;
                    cache.argmax[oi] = best_idx;
                }
    }
    return out;
}

Tensor4 maxpool_backward(const PoolCache &cache, const Tensor4 &gout) {
    Tensor4 dx(cache.c, cache.in_dims);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < cache.c; ++c) {
        double *dst = dx.ch(c);
        const double *g = gout.ch(c);
        const std::size_t n = gout.plane();
        const std::size_t base = static_cast<std::size_t>(c) * n;
        for (std::size_t i = 0; i < n; ++i)
            dst[cache.argmax[base + i]] += g[i];
    }
    return dx;
}

namespace {

struct UpAxis {
    std::vector<int> i0;
    std::vector<double> f;
};

UpAxis up_axis_table(int n_in) {
    const int n_out = n_in * 2;
    UpAxis t;
    t.i0.resize(n_out);
    t.f.resize(n_out);
    for (int o = 0; o < n_out; ++o) {
        double s = 0.5 * o - 0.25;
        if (s < 0.0) s = 0.0;
        if (s > n_in - 1) s = static_cast<double>(n_in - 1);
        int i0 = static_cast<int>(std::floor(s));
        if (i0 > n_in - 2) i0 = std::max(0, n_in - 2);
        t.i0[o] = i0;
        t.f[o] = (n_in == 1) ? 0.0 : s - i0;
    }
    return t;
}

}  // namespace

Tensor4 upsample2x_forward(const Tensor4 &x) {
    const Dims3 sd = x.sd;
    const Dims3 od{sd.nx * 2, sd.ny * 2, sd.nz * 2};
    Tensor4 out(x.c, od);
    const UpAxis tx = up_axis_table(sd.nx);
    const UpAxis ty = up_axis_table(sd.ny);
    const UpAxis tz = up_axis_table(sd.nz);

#pragma omp parallel for schedule(static)
    for (int c = 0; c < x.c; ++c) {
        const double *in = x.ch(c);
        double *dst = out.ch(c);
        for (int zo = 0; zo < od.nz; ++zo) {
            const int z0 = tz.i0[zo];
            const double fz = tz.f[zo];
            for (int yo = 0; yo < od.ny; ++yo) {
                const int y0 = ty.i0[yo];
                const double fy = ty.f[yo];
                for (int xo = 0; xo < od.nx; ++xo) {
                    const int x0 = tx.i0[xo];
                    const double fx = tx.f[xo];
                    const int x1 = std::min(x0 + 1, sd.nx - 1);
                    const int y1 = std::min(y0 + 1, sd.ny - 1);
                    const int z1 = std::min(z0 + 1, sd.nz - 1);
                    const double c00 = in[sd.idx(x0, y0, z0)] + fx * (in[sd.idx(x1, y0, z0)] - in[sd.idx(x0, y0, z0)]);
                    const double c10 = in[sd.idx(x0, y1, z0)] + fx * (in[sd.idx(x1, y1, z0)] - in[sd.idx(x0, y1, z0)]);
                    const double c01 = in[sd.idx(x0, y0, z1)] + fx * (in[sd.idx(x1, y0, z1)] - in[sd.idx(x0, y0, z1)]);
                    const double c11 = in[sd.idx(x0, y1, z1)] + fx * (in[sd.idx(x1, y1, z1)] - in[sd.idx(x0, y1, z1)]);
                    const double c0 = c00 + fy * (c10 - c00);
                    const double c1 = c01 + fy * (c11 - c01);
                    dst[od.idx(xo, yo, zo)] = c0 + fz * (c1 - c0);
                }
            }
        }
    }
    return out;
}

Tensor4 upsample2x_backward(const Tensor4 &gout, const Dims3 &in_dims) {
    if (gout.sd.nx != in_dims.nx * 2 || gout.sd.ny != in_dims.ny * 2 || gout.sd.nz != in_dims.nz * 2)
        throw DimsError("upsample2x_backward: gradient dims are not 2x the input dims");
    Tensor4 dx(gout.c, in_dims);
    const UpAxis tx = up_axis_table(in_dims.nx);
    const UpAxis ty = up_axis_table(in_dims.ny);
    const UpAxis tz = up_axis_table(in_dims.nz);
    const Dims3 od = gout.sd;

#pragma omp parallel for schedule(static)
    for (int c = 0; c < gout.c; ++c) {
        const double *g = gout.ch(c);
        double *dst = dx.ch(c);
        for (int zo = 0; zo < od.nz; ++zo) {
            const int z0 = tz.i0[zo];
            const double fz = tz.f[zo];
            const int z1 = std::min(z0 + 1, in_dims.nz - 1);
            for (int yo = 0; yo < od.ny; ++yo) {
                const int y0 = ty.i0[yo];
                const double fy = ty.f[yo];
                const int y1 = std::min(y0 + 1, in_dims.ny - 1);
                for (int xo = 0; xo < od.nx; ++xo) {
                    const int x0 = tx.i0[xo];
                    const double fx = tx.f[xo];
                    const int x1 = std::min(x0 + 1, in_dims.nx - 1);
                    const double gv = g[od.idx(xo, yo, zo)];
                    dst[in_dims.idx(x0, y0, z0)] += gv * (1 - fx) * (1 - fy) * (1 - fz);
                    dst[in_dims.idx(x1, y0, z0)] += gv * fx * (1 - fy) * (1 - fz);
                    dst[in_dims.idx(x0, y1, z0)] += gv * (1 - fx) * fy * (1 - fz);
                    dst[in_dims.idx(x1, y1, z0)] += gv * fx * fy * (1 - fz);
                    dst[in_dims.idx(x0, y0, z1)] += gv * (1 - fx) * (1 - fy) * fz;
                    dst[in_dims.idx(x1, y0, z1)] += gv * fx * (1 - fy) * fz;
                    dst[in_dims.idx(x0, y1, z1)] += gv * (1 - fx) * fy * fz;
                    dst[in_dims.idx(x1, y1, z1)] += gv * fx * fy * fz;
                }
            }
        }
    }
    return dx;
}

Tensor4 leaky_relu_forward(const Tensor4 &x, double slope) {
    Tensor4 out(x.c, x.sd);
    const std::size_t n = x.size();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i)
        out.d[i] = x.d[i] >= 0.0 ? x.d[i] : slope * x.d[i];
    return out;
}

Tensor4 leaky_relu_backward(const Tensor4 &x, const Tensor4 &gout, double slope) {
    if (x.size() != gout.size())
        throw DimsError("leaky_relu_backward: shape mismatch");
    Tensor4 dx(x.c, x.sd);
    const std::size_t n = x.size();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i)
        dx.d[i] = x.d[i] >= 0.0 ? gout.d[i] : slope * gout.d[i];
    return dx;
}

Tensor4 batchnorm_forward(const Tensor4 &x, const std::vector<double> &gamma,
                          const std::vector<double> &shift, std::vector<double> &run_mean,
                          std::vector<double> &run_var, bool training, double eps,
                          double momentum, BnCache *cache) {
    const int C = x.c;
    if (gamma.size() != static_cast<std::size_t>(C) || shift.size() != static_cast<std::size_t>(C) ||
        run_mean.size() != static_cast<std::size_t>(C) || run_var.size() != static_cast<std::size_t>(C))
        throw ArgumentError("batchnorm: parameter size mismatch");
    Tensor4 out(C, x.sd);
    const std::size_t n = x.plane();
    if (cache) {
        cache->mean.assign(C, 0.0);
        cache->inv_std.assign(C, 0.0);
    }

#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        const double *in = x.ch(c);
        double *dst = out.ch(c);
        double mean, var;
        if (training) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += in[i];
            mean = s / static_cast<double>(n);
            double sq = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double dxi = in[i] - mean;
                sq += dxi * dxi;
            }
            var = sq / static_cast<double>(n);
            // Running stats use the unbiased variance, as is conventional.
            const double unbiased = n > 1 ? sq / static_cast<double>(n - 1) : var;
            run_mean[c] = (1.0 - momentum) * run_mean[c] + momentum * mean;
            run_var[c] = (1.0 - momentum) * run_var[c] + momentum * unbiased;
        } else {
            mean = run_mean[c];
            var = run_var[c];
        }
        const double inv_std = 1.0 / std::sqrt(var + eps);
        const double g = gamma[c], b = shift[c];
        for (std::size_t i = 0; i < n; ++i)
            dst[i] = g * ((in[i] - mean) * inv_std) + b;
        if (cache) {
            cache->mean[c] = mean;
            cache->inv_std[c] = inv_std;
        }
    }
    return out;
}

Tensor4 batchnorm_backward(const Tensor4 &x, const std::vector<double> &gamma_param,
                           const BnCache &cache, const Tensor4 &gout,
                           std::vector<double> *dgamma, std::vector<double> *dshift) {
    const int C = x.c;
    const std::size_t n = x.plane();
    Tensor4 dx(C, x.sd);

#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        const double *in = x.ch(c);
        const double *g = gout.ch(c);
        double *dst = dx.ch(c);
        const double mean = cache.mean[c];
        const double inv_std = cache.inv_std[c];
        const double gamma = gamma_param[c];

        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double xhat = (in[i] - mean) * inv_std;
            sum_g += g[i];
            sum_gx += g[i] * xhat;
        }
        if (dgamma) (*dgamma)[c] += sum_gx;
        if (dshift) (*dshift)[c] += sum_g;

        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double xhat = (in[i] - mean) * inv_std;
            dst[i] = gamma * inv_std * (g[i] - inv_n * sum_g - xhat * inv_n * sum_gx);
        }
    }
    return dx;
}

Tensor4 concat_forward(const Tensor4 &a, const Tensor4 &b) {
    if (a.sd != b.sd)
        throw DimsError("concat: spatial dims mismatch");
    Tensor4 out(a.c + b.c, a.sd);
    std::copy(a.d.begin(), a.d.end(), out.d.begin());
    std::copy(b.d.begin(), b.d.end(), out.d.begin() + static_cast<std::ptrdiff_t>(a.size()));
    return out;
}

void concat_backward(const Tensor4 &gout, Tensor4 &ga, Tensor4 &gb) {
    if (gout.c != ga.c + gb.c || gout.sd != ga.sd || gout.sd != gb.sd)
        throw DimsError("concat_backward: shape mismatch");
    std::copy(gout.d.begin(), gout.d.begin() + static_cast<std::ptrdiff_t>(ga.size()), ga.d.begin());
    std::copy(gout.d.begin() + static_cast<std::ptrdiff_t>(ga.size()), gout.d.end(), gb.d.begin());
}

}  // namespace atlasreg
