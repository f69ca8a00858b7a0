// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/io.hpp"

#include <fmt/format.h>

#include <cstring>
#include <sstream>
#include <unordered_map>

namespace pygs::io {

namespace {

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

PlyType parse_type(const std::string& s) {
    static const std::unordered_map<std::string, PlyType> names{
        {"char", PlyType::Int8},     {"int8", PlyType::Int8},      {"uchar", PlyType::UInt8},
        {"uint8", PlyType::UInt8},   {"short", PlyType::Int16},    {"int16", PlyType::Int16},
        {"ushort", PlyType::UInt16}, {"uint16", PlyType::UInt16},  {"int", PlyType::Int32},
        {"int32", PlyType::Int32},   {"uint", PlyType::UInt32},    {"uint32", PlyType::UInt32},
        {"float", PlyType::Float32}, {"float32", PlyType::Float32}, {"double", PlyType::Float64},
        {"float64", PlyType::Float64}};
    auto it = names.find(s);
    if (it == names.end()) throw DataError("ply: unsupported property type '" + s + "'");
    return it->second;
}

std::size_t type_size(PlyType t) {
    switch (t) {
    case PlyType::Int8:
    case PlyType::UInt8: return 1;
    case PlyType::Int16:
    case PlyType::UInt16: return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
    }
    return 0;
}

template <typename T> double load_as(const std::uint8_t* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return static_cast<double>(v);
}

double load(PlyType t, const std::uint8_t* p) {
    switch (t) {
    case PlyType::Int8: return load_as<std::int8_t>(p);
    case PlyType::UInt8: return load_as<std::uint8_t>(p);
    case PlyType::Int16: return load_as<std::int16_t>(p);
    case PlyType::UInt16: return load_as<std::uint16_t>(p);
    case PlyType::Int32: return load_as<std::int32_t>(p);
    case PlyType::UInt32: return load_as<std::uint32_t>(p);
    case PlyType::Float32: return load_as<float>(p);
    case PlyType::Float64: return load_as<double>(p);
    }
    return 0.0;
}

// Vertex table of a binary little-endian PLY, one double per property.
struct VertexTable {
    std::size_t count = 0;
    std::vector<std::string> names;
    std::vector<double> values; // count x names.size()

    int column(const std::string& name, bool required = true) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return static_cast<int>(i);
        if (required) throw DataError("ply: missing vertex property '" + name + "'");
        return -1;
    }
    double at(std::size_t row, int col) const { return values[row * names.size() + col]; }
};

VertexTable read_vertices(const fs::path& path) {
    const auto bytes = read_file(path);
    const std::string marker = "end_header\n";
    const std::string head(reinterpret_cast<const char*>(bytes.data()), std::min<std::size_t>(bytes.size(), 1 << 16));
    const auto end = head.find(marker);
    if (head.rfind("ply\n", 0) != 0 || end == std::string::npos) throw DataError(path.string() + ": not a PLY file");
    std::istringstream lines(head.substr(0, end));
    std::string line;
    VertexTable t;
    std::vector<PlyType> types;
    bool in_vertex = false, seen_vertex = false;
    while (std::getline(lines, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "binary_little_endian") throw DataError(path.string() + ": only binary_little_endian PLY is supported");
        } else if (key == "element") {
            std::string name;
            std::size_t n = 0;
            ls >> name >> n;
            if (seen_vertex && !in_vertex) continue;
            if (name == "vertex") {
                if (seen_vertex) throw DataError(path.string() + ": duplicate vertex element");
                in_vertex = seen_vertex = true;
                t.count = n;
            } else {
                if (!seen_vertex) throw DataError(path.string() + ": elements before 'vertex' are not supported");
                in_vertex = false;
            }
        } else if (key == "property" && in_vertex) {
            std::string type, name;
            ls >> type >> name;
            if (type == "list") throw DataError(path.string() + ": list properties on vertices are not supported");
            types.push_back(parse_type(type));
            t.names.push_back(name);
        }
    }
    if (!seen_vertex) throw DataError(path.string() + ": no vertex element");
    std::size_t stride = 0;
    for (auto ty : types) stride += type_size(ty);
    const std::size_t offset = end + marker.size();
    if (stride == 0 || (bytes.size() - offset) / stride < t.count)
        throw DataError(path.string() + ": vertex data is truncated");
    t.values.resize(t.count * types.size());
    const std::uint8_t* p = bytes.data() + offset;
    for (std::size_t i = 0; i < t.count; ++i)
        for (std::size_t c = 0; c < types.size(); ++c) {
            t.values[i * types.size() + c] = load(types[c], p);
            p += type_size(types[c]);
        }
    return t;
}

template <typename T> void append(std::vector<std::uint8_t>& out, T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

} // namespace

void export_ply(const GaussianSet<float>& g, const fs::path& path, int level) {
    std::vector<std::uint32_t> keep;
    for (std::uint32_t i = 0; i < g.size(); ++i)
        if (level <= 0 || g.levels[i] == level) keep.push_back(i);

    std::string header = fmt::format("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", keep.size());
    for (const char* p : {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"})
        header += fmt::format("property float {}\n", p);
    for (int i = 0; i < 3 * kShRestCoeffs; ++i) header += fmt::format("property float f_rest_{}\n", i);
    header += "property float opacity\n";
    for (int i = 0; i < 3; ++i) header += fmt::format("property float scale_{}\n", i);
    for (int i = 0; i < 4; ++i) header += fmt::format("property float rot_{}\n", i);
    header += "property uchar level\nproperty uint cluster\nend_header\n";

    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (std::uint32_t i : keep) {
        for (int a = 0; a < 3; ++a) append(out, g.positions[3 * i + a]);
        for (int a = 0; a < 3; ++a) append(out, 0.0f);
        for (int a = 0; a < 3; ++a) append(out, g.sh_dc[3 * i + a]);
        // Channel-major on disk, coefficient-major in memory.
        for (int c = 0; c < 3; ++c)
            for (int k = 0; k < kShRestCoeffs; ++k) append(out, g.sh_rest[3 * kShRestCoeffs * i + 3 * k + c]);
        append(out, g.opacity_logits[i]);
        for (int a = 0; a < 3; ++a) append(out, g.log_scales[3 * i + a]);
        for (int a = 0; a < 4; ++a) append(out, g.rotations[4 * i + a]);
        append(out, g.levels[i]);
        append(out, g.clusters[i]);
    }
    write_file_atomic(path, out);
}

GaussianSet<float> import_ply(const fs::path& path) {
    const auto t = read_vertices(path);
    auto columns = [&](const std::string& base, int n) {
        std::vector<int> c;
        for (int i = 0; i < n; ++i) c.push_back(t.column(base + std::to_string(i)));
        return c;
    };
    const std::vector<int> pos{t.column("x"), t.column("y"), t.column("z")};
    const auto dcs = columns("f_dc_", 3), scs = columns("scale_", 3), rots = columns("rot_", 4);
    const auto rests = t.column("f_rest_0", false) >= 0 ? columns("f_rest_", 3 * kShRestCoeffs) : std::vector<int>{};
    const int op = t.column("opacity"), lvl = t.column("level", false), cl = t.column("cluster", false);
    GaussianSet<float> g;
    g.resize(t.count);
    for (std::size_t i = 0; i < t.count; ++i) {
        for (int a = 0; a < 3; ++a) {
            g.positions[3 * i + a] = static_cast<float>(t.at(i, pos[a]));
            g.sh_dc[3 * i + a] = static_cast<float>(t.at(i, dcs[a]));
            g.log_scales[3 * i + a] = static_cast<float>(t.at(i, scs[a]));
        }
        for (int a = 0; a < 4; ++a) g.rotations[4 * i + a] = static_cast<float>(t.at(i, rots[a]));
        g.opacity_logits[i] = static_cast<float>(t.at(i, op));
        if (!rests.empty())
            for (int c = 0; c < 3; ++c)
                for (int k = 0; k < kShRestCoeffs; ++k)
                    g.sh_rest[3 * kShRestCoeffs * i + 3 * k + c] = static_cast<float>(t.at(i, rests[c * kShRestCoeffs + k]));
        g.levels[i] = lvl >= 0 ? static_cast<std::uint8_t>(t.at(i, lvl)) : 1;
        g.clusters[i] = cl >= 0 ? static_cast<std::uint32_t>(t.at(i, cl)) : 0;
    }
    return g;
}

void write_point_ply(const PointCloud& cloud, const fs::path& path) {
    if (cloud.colors.size() != cloud.positions.size()) throw std::invalid_argument("point cloud colors and positions differ in size");
    const std::string header = fmt::format(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.size());
    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (int a = 0; a < 3; ++a) append(out, cloud.positions[i][a]);
        for (int a = 0; a < 3; ++a) append(out, encode_srgb8(cloud.colors[i][a]));
    }
    write_file_atomic(path, out);
}

PointCloud read_point_ply(const fs::path& path) {
    const auto t = read_vertices(path);
    const int x = t.column("x"), y = t.column("y"), z = t.column("z");
    const int r = t.column("red", false), gc = t.column("green", false), b = t.column("blue", false);
    PointCloud cloud;
    cloud.positions.reserve(t.count);
    cloud.colors.reserve(t.count);
    for (std::size_t i = 0; i < t.count; ++i) {
        cloud.positions.emplace_back(t.at(i, x), t.at(i, y), t.at(i, z));
        if (r >= 0 && gc >= 0 && b >= 0)
            cloud.colors.emplace_back(srgb_to_linear(static_cast<float>(t.at(i, r)) / 255.0f),
                                      srgb_to_linear(static_cast<float>(t.at(i, gc)) / 255.0f),
                                      srgb_to_linear(static_cast<float>(t.at(i, b)) / 255.0f));
        else
            cloud.colors.emplace_back(0.5f, 0.5f, 0.5f);
    }
    return cloud;
}

} // namespace pygs::io
