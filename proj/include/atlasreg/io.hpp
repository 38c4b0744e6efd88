#pragma once

#include <string>

#include "atlasreg/types.hpp"

namespace atlasreg {

// File formats (all little-endian payloads, x-fastest voxel order):
//   MVOL: "MVOL1\n" "dims nx ny nz\n" "spacing sx sy sz\n" "dtype f32\n" "\n"
//         then nx*ny*nz raw f32.
//   MMSK: same header shape with "MMSK1" / "dtype u8", payload bytes in {0,1}.
//   MFLD: "MFLD1" / "dtype f32x3", payload interleaved (ux,uy,uz) f32 per voxel.
//   Mesh: OBJ subset, only "v x y z" and "f i j k" (1-based); '#' comments.
//
// Internal scalars are f64; payloads are f32/u8, so round-trips are
// bit-identical for data that is f32-representable (anything read from disk).

Volume3 read_volume(const std::string &path);
void write_volume(const Volume3 &v, const std::string &path);

Mask3 read_mask(const std::string &path);
void write_mask(const Mask3 &m, const std::string &path);

DispField read_field(const std::string &path);
void write_field(const DispField &f, const std::string &path);

TriMesh read_mesh(const std::string &path);
void write_mesh(const TriMesh &m, const std::string &path);

}  // namespace atlasreg
