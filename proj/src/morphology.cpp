#include "atlasreg/morphology.hpp"

#include <algorithm>

namespace atlasreg {

std::vector<std::array<int, 3>> sphere_offsets(double radius_voxels) {
    if (!(radius_voxels > 0.0))
        throw ArgumentError("sphere_offsets: radius must be > 0");
    const int R = static_cast<int>(std::floor(radius_voxels));
    const double r2 = radius_voxels * radius_voxels;
    std::vector<std::array<int, 3>> offs;
    for (int dz = -R; dz <= R; ++dz)
        for (int dy = -R; dy <= R; ++dy)
            for (int dx = -R; dx <= R; ++dx)
                if (static_cast<double>(dx) * dx + static_cast<double>(dy) * dy +
                        static_cast<double>(dz) * dz <= r2)
                    offs.push_back({dx, dy, dz});
    return offs;
}

Mask3 dilate_sphere(const Mask3 &mask, double radius_voxels) {
    const auto offs = sphere_offsets(radius_voxels);
    Mask3 out(mask.dims, mask.spacing, 0);
    const Dims3 &d = mask.dims;
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                if (!mask.at(x, y, z)) continue;
                for (const auto &o : offs) {
                    const int px = x + o[0], py = y + o[1], pz = z + o[2];
                    if (d.contains(px, py, pz)) out.at(px, py, pz) = 1;
                }
            }
    return out;
}

namespace {
template <typename F>
Mask3 zip_masks(const Mask3 &a, const Mask3 &b, F &&f, const char *what) {
    require_same_dims(a.dims, b.dims, what);
    Mask3 out(a.dims, a.spacing, 0);
    for (std::size_t i = 0; i < a.data.size(); ++i)
        out.data[i] = f(a.data[i], b.data[i]);
    return out;
}
}  // namespace

Mask3 mask_and(const Mask3 &a, const Mask3 &b) {
    return zip_masks(a, b, [](std::uint8_t x, std::uint8_t y) { return std::uint8_t(x & y); }, "mask_and");
}

Mask3 mask_or(const Mask3 &a, const Mask3 &b) {
    return zip_masks(a, b, [](std::uint8_t x, std::uint8_t y) { return std::uint8_t(x | y); }, "mask_or");
}

Mask3 mask_not(const Mask3 &a) {
    Mask3 out(a.dims, a.spacing, 0);
    for (std::size_t i = 0; i < a.data.size(); ++i)
        out.data[i] = a.data[i] ? 0 : 1;
    return out;
}

Mask3 mask_sub(const Mask3 &a, const Mask3 &b) {
    return zip_masks(a, b, [](std::uint8_t x, std::uint8_t y) { return std::uint8_t(x & (y ? 0 : 1)); }, "mask_sub");
}

bool mask_subset(const Mask3 &inner, const Mask3 &outer) {
    require_same_dims(inner.dims, outer.dims, "mask_subset");
    for (std::size_t i = 0; i < inner.data.size(); ++i)
        if (inner.data[i] && !outer.data[i]) return false;
    return true;
}

}  // namespace atlasreg
