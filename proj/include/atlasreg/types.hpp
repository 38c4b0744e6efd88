#pragma once

#include <array>
#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace atlasreg {

// Error classes map 1:1 onto CLI exit codes; keep the list short.
enum class ErrorClass : int {
    argument  = 2,
    missing   = 3,
    format    = 4,
    dims      = 5,
    numeric   = 6,
    internal  = 1,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorClass cls, const std::string &msg)
        : std::runtime_error(msg), cls_(cls) {}
    ErrorClass cls() const { return cls_; }

  private:
    ErrorClass cls_;
};

struct ArgumentError : Error {
    explicit ArgumentError(const std::string &msg) : Error(ErrorClass::argument, msg) {}
};
struct MissingFileError : Error {
    explicit MissingFileError(const std::string &msg) : Error(ErrorClass::missing, msg) {}
};
struct FormatError : Error {
    explicit FormatError(const std::string &msg) : Error(ErrorClass::format, msg) {}
};
struct DimsError : Error {
    explicit DimsError(const std::string &msg) : Error(ErrorClass::dims, msg) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string &msg) : Error(ErrorClass::numeric, msg) {}
};
struct StateError : Error {
    explicit StateError(const std::string &msg) : Error(ErrorClass::internal, msg) {}
};

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3 &a, const Vec3 &b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3 &a, const Vec3 &b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3 &a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3 &a, const Vec3 &b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3 &a, const Vec3 &b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3 &a) { return std::sqrt(dot(a, a)); }

struct Dims3 {
    int nx = 0, ny = 0, nz = 0;

    std::size_t count() const {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
    }
    // x-fastest linear order.
    std::size_t idx(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(nx) * (static_cast<std::size_t>(y) +
               static_cast<std::size_t>(ny) * static_cast<std::size_t>(z));
    }
    bool contains(int x, int y, int z) const {
        return x >= 0 && x < nx && y >= 0 && y < ny && z >= 0 && z < nz;
    }
    bool operator==(const Dims3 &o) const { return nx == o.nx && ny == o.ny && nz == o.nz; }
    bool operator!=(const Dims3 &o) const { return !(*this == o); }
};

inline void require_positive_dims(const Dims3 &d, const char *what) {
    if (d.nx <= 0 || d.ny <= 0 || d.nz <= 0)
        throw ArgumentError(std::string(what) + ": dims must be positive");
}

// Scalar 3D image, 64-bit internally. Spacing is mm per voxel.
struct Volume3 {
    Dims3 dims;
    Vec3 spacing{1.0, 1.0, 1.0};
    std::vector<double> data;

    Volume3() = default;
    Volume3(Dims3 d, Vec3 sp, double fill = 0.0)
        : dims(d), spacing(sp), data(d.count(), fill) {
        require_positive_dims(d, "Volume3");
    }
    double at(int x, int y, int z) const { return data[dims.idx(x, y, z)]; }
    double &at(int x, int y, int z) { return data[dims.idx(x, y, z)]; }
};

// Strictly binary mask on the same kind of grid.
struct Mask3 {
    Dims3 dims;
    Vec3 spacing{1.0, 1.0, 1.0};
    std::vector<std::uint8_t> data;

    Mask3() = default;
    Mask3(Dims3 d, Vec3 sp, std::uint8_t fill = 0)
        : dims(d), spacing(sp), data(d.count(), fill) {
        require_positive_dims(d, "Mask3");
    }
    std::uint8_t at(int x, int y, int z) const { return data[dims.idx(x, y, z)]; }
    std::uint8_t &at(int x, int y, int z) { return data[dims.idx(x, y, z)]; }
    std::size_t sum() const {
        std::size_t s = 0;
        for (auto v : data) s += v;
        return s;
    }
};

// Per-voxel displacement u in voxel units of the atlas grid; phi(x) = x + u(x).
// Components interleaved (ux, uy, uz) per voxel, voxels in x-fastest order.
struct DispField {
    Dims3 dims;
    Vec3 spacing{1.0, 1.0, 1.0};
    std::vector<double> data;  // 3 * dims.count()

    DispField() = default;
    DispField(Dims3 d, Vec3 sp)
        : dims(d), spacing(sp), data(d.count() * 3, 0.0) {
        require_positive_dims(d, "DispField");
    }
    Vec3 at(int x, int y, int z) const {
        const std::size_t i = dims.idx(x, y, z) * 3;
        return {data[i], data[i + 1], data[i + 2]};
    }
    void set(int x, int y, int z, const Vec3 &u) {
        const std::size_t i = dims.idx(x, y, z) * 3;
        data[i] = u[0];
        data[i + 1] = u[1];
        data[i + 2] = u[2];
    }
};

enum class MeshFrame : std::uint8_t { atlas, patient };

// Triangle mesh in voxel coordinates of a stated grid. Homologous meshes
// share vertex count and ordering.
struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    MeshFrame frame = MeshFrame::atlas;

    void validate() const {
        const int n = static_cast<int>(vertices.size());
        for (const auto &t : triangles) {
            for (int k = 0; k < 3; ++k) {
                if (t[k] < 0 || t[k] >= n)
                    throw FormatError("TriMesh: triangle index out of range");
            }
            if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
                throw FormatError("TriMesh: degenerate triangle (repeated index)");
        }
    }
};

inline bool all_finite(const std::vector<double> &v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline void require_same_dims(const Dims3 &a, const Dims3 &b, const char *what) {
    if (a != b)
        throw DimsError(std::string(what) + ": dims mismatch (" +
                        std::to_string(a.nx) + "x" + std::to_string(a.ny) + "x" + std::to_string(a.nz) + " vs " +
                        std::to_string(b.nx) + "x" + std::to_string(b.ny) + "x" + std::to_string(b.nz) + ")");
}

}  // namespace atlasreg
