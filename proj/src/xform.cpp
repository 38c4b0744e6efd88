#include "atlasreg/xform.hpp"

#include <algorithm>
#include <cmath>

namespace atlasreg {

namespace {

struct AxisSample {
    int i0;        // lower corner index
    int i1;        // upper corner index
    double frac;   // in [0, 1]
    double dmul;   // 1 if the coordinate influences the value, 0 if clamped/degenerate
};

AxisSample resolve_axis(double s, int n) {
    AxisSample a;
    if (n == 1) {
        a.i0 = a.i1 = 0;
        a.frac = 0.0;
        a.dmul = 0.0;
        return a;
    }
    const double hi = static_cast<double>(n - 1);
    double c = s;
    a.dmul = 1.0;
    if (c < 0.0) {
        c = 0.0;
        a.dmul = 0.0;
    } else if (c > hi) {
        c = hi;
        a.dmul = 0.0;
    }
    int i0 = static_cast<int>(std::floor(c));
    if (i0 > n - 2) i0 = n - 2;
    a.i0 = i0;
    a.i1 = i0 + 1;
    a.frac = c - static_cast<double>(i0);
    return a;
}

}  // namespace

TriSample sample_trilinear(const double *grid, const Dims3 &dims, double sx, double sy, double sz) {
    const AxisSample ax = resolve_axis(sx, dims.nx);
    const AxisSample ay = resolve_axis(sy, dims.ny);
    const AxisSample az = resolve_axis(sz, dims.nz);

    const double c000 = grid[dims.idx(ax.i0, ay.i0, az.i0)];
    const double c100 = grid[dims.idx(ax.i1, ay.i0, az.i0)];
    const double c010 = grid[dims.idx(ax.i0, ay.i1, az.i0)];
    const double c110 = grid[dims.idx(ax.i1, ay.i1, az.i0)];
    const double c001 = grid[dims.idx(ax.i0, ay.i0, az.i1)];
    const double c101 = grid[dims.idx(ax.i1, ay.i0, az.i1)];
    const double c011 = grid[dims.idx(ax.i0, ay.i1, az.i1)];
    const double c111 = grid[dims.idx(ax.i1, ay.i1, az.i1)];

    const double fx = ax.frac, fy = ay.frac, fz = az.frac;

    // Interpolate along x, then y, then z.
    const double c00 = c000 + fx * (c100 - c000);
    const double c10 = c010 + fx * (c110 - c010);
    const double c01 = c001 + fx * (c101 - c001);
    const double c11 = c011 + fx * (c111 - c011);

    const double c0 = c00 + fy * (c10 - c00);
    const double c1 = c01 + fy * (c11 - c01);

    TriSample out;
    out.value = c0 + fz * (c1 - c0);

    const double dx00 = c100 - c000;
    const double dx10 = c110 - c010;
    const double dx01 = c101 - c001;
    const double dx11 = c111 - c011;
    const double dx0 = dx00 + fy * (dx10 - dx00);
    const double dx1 = dx01 + fy * (dx11 - dx01);
    out.deriv[0] = (dx0 + fz * (dx1 - dx0)) * ax.dmul;

    const double dy0 = c10 - c00;
    const double dy1 = c11 - c01;
    out.deriv[1] = (dy0 + fz * (dy1 - dy0)) * ay.dmul;

    out.deriv[2] = (c1 - c0) * az.dmul;
    return out;
}

Vec3 sample_field(const DispField &u, double sx, double sy, double sz) {
    // Components are interleaved; sample each through a strided view by
    // gathering corners directly.
    const AxisSample ax = resolve_axis(sx, u.dims.nx);
    const AxisSample ay = resolve_axis(sy, u.dims.ny);
    const AxisSample az = resolve_axis(sz, u.dims.nz);
    const double fx = ax.frac, fy = ay.frac, fz = az.frac;

    Vec3 out{0.0, 0.0, 0.0};
    for (int comp = 0; comp < 3; ++comp) {
        const auto g = [&](int x, int y, int z) { return u.data[u.dims.idx(x, y, z) * 3 + comp]; };
        const double c00 = g(ax.i0, ay.i0, az.i0) + fx * (g(ax.i1, ay.i0, az.i0) - g(ax.i0, ay.i0, az.i0));
        const double c10 = g(ax.i0, ay.i1, az.i0) + fx * (g(ax.i1, ay.i1, az.i0) - g(ax.i0, ay.i1, az.i0));
        const double c01 = g(ax.i0, ay.i0, az.i1) + fx * (g(ax.i1, ay.i0, az.i1) - g(ax.i0, ay.i0, az.i1));
        const double c11 = g(ax.i0, ay.i1, az.i1) + fx * (g(ax.i1, ay.i1, az.i1) - g(ax.i0, ay.i1, az.i1));
        const double c0 = c00 + fy * (c10 - c00);
        const double c1 = c01 + fy * (c11 - c01);
        out[comp] = c0 + fz * (c1 - c0);
    }
    return out;
}

PullbackResult pullback(const Volume3 &p, const DispField &u) {
    if (!all_finite(u.data))
        throw ArgumentError("pullback: displacement field has non-finite components");

    PullbackResult r;
    r.warped.dims = u.dims;
    r.warped.spacing = u.spacing;
    r.warped.data.resize(u.dims.count());
    r.jac.dims = u.dims;
    r.jac.data.resize(u.dims.count() * 3);

    const Dims3 d = u.dims;
    const double *grid = p.data.data();
#pragma omp parallel for schedule(static)
    for (int z = 0; z < d.nz; ++z) {
        for (int y = 0; y < d.ny; ++y) {
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t i = d.idx(x, y, z);
                const std::size_t i3 = i * 3;
                const TriSample s = sample_trilinear(grid, p.dims,
                                                     x + u.data[i3],
                                                     y + u.data[i3 + 1],
                                                     z + u.data[i3 + 2]);
                r.warped.data[i] = s.value;
                r.jac.data[i3] = s.deriv[0];
                r.jac.data[i3 + 1] = s.deriv[1];
                r.jac.data[i3 + 2] = s.deriv[2];
            }
        }
    }
    return r;
}

DispField pullback_grad(const std::vector<double> &upstream, const SampleJacobian &jac) {
    if (upstream.size() != jac.dims.count())
        throw DimsError("pullback_grad: upstream size does not match jacobian dims");
    DispField g(jac.dims, Vec3{1.0, 1.0, 1.0});
    for (std::size_t i = 0; i < upstream.size(); ++i) {
        g.data[i * 3] = upstream[i] * jac.data[i * 3];
        g.data[i * 3 + 1] = upstream[i] * jac.data[i * 3 + 1];
        g.data[i * 3 + 2] = upstream[i] * jac.data[i * 3 + 2];
    }
    return g;
}

TriMesh warp_mesh(const TriMesh &mesh, const DispField &u) {
    if (mesh.vertices.empty())
        throw ArgumentError("warp_mesh: empty mesh");
    if (!all_finite(u.data))
        throw ArgumentError("warp_mesh: displacement field has non-finite components");
    TriMesh out = mesh;
    for (auto &v : out.vertices) {
        const Vec3 disp = sample_field(u, v[0], v[1], v[2]);
        v = v + disp;
    }
    out.frame = MeshFrame::patient;
    return out;
}

Mask3 splat_mask(const Mask3 &beta, const DispField &u, int supersample) {
    if (supersample < 1)
        throw ArgumentError("splat_mask: supersample must be >= 1");
    require_same_dims(beta.dims, u.dims, "splat_mask");

    Mask3 out(beta.dims, beta.spacing, 0);
    const Dims3 d = beta.dims;
    const int S = supersample;
    // Sub-voxel sample offsets in (-0.5, 0.5), centered so S=1 hits the voxel center.
    std::vector<double> offs(S);
    for (int k = 0; k < S; ++k)
        offs[k] = (k + 0.5) / static_cast<double>(S) - 0.5;

    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                if (!beta.at(x, y, z)) continue;
                for (int kz = 0; kz < S; ++kz)
                    for (int ky = 0; ky < S; ++ky)
                        for (int kx = 0; kx < S; ++kx) {
                            const double px = x + offs[kx];
                            const double py = y + offs[ky];
                            const double pz = z + offs[kz];
                            const Vec3 disp = sample_field(u, px, py, pz);
                            const int tx = static_cast<int>(std::lround(px + disp[0]));
                            const int ty = static_cast<int>(std::lround(py + disp[1]));
                            const int tz = static_cast<int>(std::lround(pz + disp[2]));
                            if (d.contains(tx, ty, tz)) out.at(tx, ty, tz) = 1;
                        }
            }
    return out;
}

}  // namespace atlasreg
