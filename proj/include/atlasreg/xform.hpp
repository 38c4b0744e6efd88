#pragma once

#include "atlasreg/types.hpp"

namespace atlasreg {

// Spatial gradient of the sampled image with respect to the sample coordinate,
// one 3-vector per atlas voxel. Zero along axes where the sample was clamped.
struct SampleJacobian {
    Dims3 dims;
    std::vector<double> data;  // 3 * dims.count(), interleaved

    Vec3 at(int x, int y, int z) const {
        const std::size_t i = dims.idx(x, y, z) * 3;
        return {data[i], data[i + 1], data[i + 2]};
    }
};

struct PullbackResult {
    Volume3 warped;
    SampleJacobian jac;
};

// Trilinear sample of a scalar grid at a continuous coordinate, with the
// derivative of the value with respect to the coordinate. Coordinates are
// clamped to [0, n-1] per axis; a clamped axis contributes zero derivative.
struct TriSample {
    double value;
    Vec3 deriv;
};
TriSample sample_trilinear(const double *grid, const Dims3 &dims, double sx, double sy, double sz);

// Trilinear sample of a displacement field (component-wise).
Vec3 sample_field(const DispField &u, double sx, double sy, double sz);

// warped(x) = trilinear(p, x + u(x)) on the atlas grid, plus the per-voxel
// sample Jacobian needed to chain loss gradients back onto u.
PullbackResult pullback(const Volume3 &p, const DispField &u);

// Chain rule through pullback: dL/du(x) = upstream(x) * jac(x).
DispField pullback_grad(const std::vector<double> &upstream, const SampleJacobian &jac);

// Vertex v -> v + trilinear(u, v); connectivity and ordering preserved.
TriMesh warp_mesh(const TriMesh &mesh, const DispField &u);

// Forward-map a binary atlas mask into patient space: each foreground voxel is
// subdivided supersample^3 times, each point moved by phi(x) = x + u(x), and
// the nearest patient voxel marked. No hole-filling pass.
Mask3 splat_mask(const Mask3 &beta, const DispField &u, int supersample = 3);

}  // namespace atlasreg
