#pragma once

#include "atlasreg/types.hpp"

namespace atlasreg {

// Binary dilation by a Euclidean ball of the given radius in voxel units.
// The structuring element is the set of integer offsets d with |d|^2 <= r^2,
// ties at |d| == r included. The domain boundary clips the element; spacing
// anisotropy is ignored (the radius is in voxels, not mm).
Mask3 dilate_sphere(const Mask3 &mask, double radius_voxels);

// Integer offsets of the ball element; exposed so tests can audit cardinality.
std::vector<std::array<int, 3>> sphere_offsets(double radius_voxels);

Mask3 mask_and(const Mask3 &a, const Mask3 &b);
Mask3 mask_or(const Mask3 &a, const Mask3 &b);
Mask3 mask_not(const Mask3 &a);
// a AND NOT b.
Mask3 mask_sub(const Mask3 &a, const Mask3 &b);

// True iff every set voxel of inner is set in outer.
bool mask_subset(const Mask3 &inner, const Mask3 &outer);

}  // namespace atlasreg
