#include "atlasreg/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace atlasreg {

namespace {

// Shortest round-trip decimal for a double ("%.17g" always round-trips).
std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // Prefer a shorter form when it round-trips exactly.
    for (int prec = 1; prec < 17; ++prec) {
        char shorter[64];
        std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
        if (std::strtod(shorter, nullptr) == v) return shorter;
    }
    return buf;
}

std::ifstream open_in(const std::string &path, bool binary) {
    std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
    if (!f)
        throw MissingFileError("cannot open for reading: " + path);
    return f;
}

std::ofstream open_out(const std::string &path) {
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw Error(ErrorClass::internal, "cannot open for writing: " + path);
    return f;
}

struct GridHeader {
    Dims3 dims;
    Vec3 spacing;
};

GridHeader read_grid_header(std::istream &in, const char *magic, const char *dtype,
                            const std::string &path) {
    std::string line;
    if (!std::getline(in, line) || line != magic)
        throw FormatError(path + ": bad magic, expected " + magic);
    GridHeader h;
    if (!std::getline(in, line))
        throw FormatError(path + ": missing dims line");
    {
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key >> h.dims.nx >> h.dims.ny >> h.dims.nz) || key != "dims")
            throw FormatError(path + ": malformed dims line");
        if (h.dims.nx <= 0 || h.dims.ny <= 0 || h.dims.nz <= 0)
            throw FormatError(path + ": non-positive dims");
    }
    if (!std::getline(in, line))
        throw FormatError(path + ": missing spacing line");
    {
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key >> h.spacing[0] >> h.spacing[1] >> h.spacing[2]) || key != "spacing")
            throw FormatError(path + ": malformed spacing line");
        if (!(h.spacing[0] > 0 && h.spacing[1] > 0 && h.spacing[2] > 0))
            throw FormatError(path + ": non-positive spacing");
    }
    if (!std::getline(in, line) || line != std::string("dtype ") + dtype)
        throw FormatError(path + ": expected 'dtype " + dtype + "'");
    if (!std::getline(in, line) || !line.empty())
        throw FormatError(path + ": expected blank line before payload");
    return h;
}

void write_grid_header(std::ostream &out, const char *magic, const char *dtype,
                       const Dims3 &dims, const Vec3 &spacing) {
    out << magic << "\n"
        << "dims " << dims.nx << " " << dims.ny << " " << dims.nz << "\n"
        << "spacing " << fmt_double(spacing[0]) << " " << fmt_double(spacing[1])
        << " " << fmt_double(spacing[2]) << "\n"
        << "dtype " << dtype << "\n\n";
}

// Payloads are little-endian f32; this targets little-endian hosts.
void read_f32_payload(std::istream &in, std::vector<double> &out, std::size_t n,
                      const std::string &path) {
    std::vector<float> buf(n);
    in.read(reinterpret_cast<char *>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != n * sizeof(float))
        throw FormatError(path + ": payload truncated (dims/payload size mismatch)");
    char extra;
    if (in.read(&extra, 1))
        throw FormatError(path + ": trailing bytes after payload");
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = static_cast<double>(buf[i]);
        if (!std::isfinite(out[i]))
            throw FormatError(path + ": non-finite payload value");
    }
}

void write_f32_payload(std::ostream &out, const std::vector<double> &data,
                       const std::string &path) {
    std::vector<float> buf(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i]))
            throw ArgumentError(path + ": refusing to write non-finite value");
        buf[i] = static_cast<float>(data[i]);
    }
    out.write(reinterpret_cast<const char *>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

}  // namespace

Volume3 read_volume(const std::string &path) {
    auto f = open_in(path, true);
    const GridHeader h = read_grid_header(f, "MVOL1", "f32", path);
    Volume3 v;
    v.dims = h.dims;
    v.spacing = h.spacing;
    read_f32_payload(f, v.data, h.dims.count(), path);
    return v;
}

void write_volume(const Volume3 &v, const std::string &path) {
    if (v.data.size() != v.dims.count())
        throw ArgumentError(path + ": volume data length does not match dims");
    auto f = open_out(path);
    write_grid_header(f, "MVOL1", "f32", v.dims, v.spacing);
    write_f32_payload(f, v.data, path);
    if (!f)
        throw Error(ErrorClass::internal, "write failed: " + path);
}

Mask3 read_mask(const std::string &path) {
    auto f = open_in(path, true);
    const GridHeader h = read_grid_header(f, "MMSK1", "u8", path);
    Mask3 m;
    m.dims = h.dims;
    m.spacing = h.spacing;
    const std::size_t n = h.dims.count();
    m.data.resize(n);
    f.read(reinterpret_cast<char *>(m.data.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(f.gcount()) != n)
        throw FormatError(path + ": payload truncated (dims/payload size mismatch)");
    char extra;
    if (f.read(&extra, 1))
        throw FormatError(path + ": trailing bytes after payload");
    for (auto b : m.data)
        if (b > 1)
            throw FormatError(path + ": mask byte not in {0,1}");
    return m;
}

void write_mask(const Mask3 &m, const std::string &path) {
    if (m.data.size() != m.dims.count())
        throw ArgumentError(path + ": mask data length does not match dims");
    for (auto b : m.data)
        if (b > 1)
            throw ArgumentError(path + ": mask byte not in {0,1}");
    auto f = open_out(path);
    write_grid_header(f, "MMSK1", "u8", m.dims, m.spacing);
    f.write(reinterpret_cast<const char *>(m.data.data()),
            static_cast<std::streamsize>(m.data.size()));
    if (!f)
        throw Error(ErrorClass::internal, "write failed: " + path);
}

DispField read_field(const std::string &path) {
    auto f = open_in(path, true);
    const GridHeader h = read_grid_header(f, "MFLD1", "f32x3", path);
    DispField u;
    u.dims = h.dims;
    u.spacing = h.spacing;
    read_f32_payload(f, u.data, h.dims.count() * 3, path);
    return u;
}

void write_field(const DispField &u, const std::string &path) {
    if (u.data.size() != u.dims.count() * 3)
        throw ArgumentError(path + ": field data length does not match dims");
    auto f = open_out(path);
    write_grid_header(f, "MFLD1", "f32x3", u.dims, u.spacing);
    write_f32_payload(f, u.data, path);
    if (!f)
        throw Error(ErrorClass::internal, "write failed: " + path);
}

TriMesh read_mesh(const std::string &path) {
    auto f = open_in(path, false);
    TriMesh m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            Vec3 p;
            if (!(ss >> p[0] >> p[1] >> p[2]))
                throw FormatError(path + ":" + std::to_string(lineno) + ": malformed vertex line");
            m.vertices.push_back(p);
        } else if (tag == "f") {
            int a, b, c;
            if (!(ss >> a >> b >> c))
                throw FormatError(path + ":" + std::to_string(lineno) + ": malformed face line");
            m.triangles.push_back({a - 1, b - 1, c - 1});
        } else {
            throw FormatError(path + ":" + std::to_string(lineno) +
                              ": unsupported OBJ directive '" + tag + "'");
        }
    }
    m.validate();
    return m;
}

void write_mesh(const TriMesh &m, const std::string &path) {
    m.validate();
    auto f = open_out(path);
    for (const auto &v : m.vertices)
        f << "v " << fmt_double(v[0]) << " " << fmt_double(v[1]) << " " << fmt_double(v[2]) << "\n";
    for (const auto &t : m.triangles)
        f << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
    if (!f)
        throw Error(ErrorClass::internal, "write failed: " + path);
}

}  // namespace atlasreg
