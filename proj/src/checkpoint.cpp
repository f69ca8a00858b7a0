// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/io.hpp"

#include <fmt/format.h>
#include <zlib.h>

#include <bit>
#include <cstring>
#include <map>
#include <span>

namespace pygs::io {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

namespace {

constexpr std::uint32_t fourcc(const char (&s)[5]) {
    return static_cast<std::uint32_t>(s[0]) | (static_cast<std::uint32_t>(s[1]) << 8) |
           (static_cast<std::uint32_t>(s[2]) << 16) | (static_cast<std::uint32_t>(s[3]) << 24);
}

constexpr std::uint32_t kMagic = fourcc("PYGS");
constexpr std::uint32_t kFieldMagic = fourcc("PYGF");
constexpr std::uint32_t kHeader = fourcc("HEAD");
constexpr std::uint32_t kGaussians = fourcc("GAUS");
constexpr std::uint32_t kCentroids = fourcc("CENT");
constexpr std::uint32_t kClusterEmb = fourcc("EMBC");
constexpr std::uint32_t kAppearanceEmb = fourcc("EMBA");
constexpr std::uint32_t kWeightingNet = fourcc("WNET");
constexpr std::uint32_t kCorrectionNet = fourcc("CNET");
constexpr std::uint32_t kField = fourcc("FILD");
constexpr std::uint32_t kCameras = fourcc("CAMS");
constexpr std::uint32_t kConfig = fourcc("CONF");
constexpr std::uint32_t kIteration = fourcc("ITER");
constexpr std::uint32_t kMoments = fourcc("MOMS");
constexpr std::uint32_t kGradStats = fourcc("GRAD");

class Writer {
public:
    template <typename T> void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }
    template <typename T> void put_array(std::span<const T> v) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
        bytes_.insert(bytes_.end(), p, p + v.size_bytes());
    }
    template <typename T> void put_vector(const std::vector<T>& v) {
        put<std::uint64_t>(v.size());
        put_array(std::span<const T>(v));
    }
    void put_string(const std::string& s) {
        put<std::uint64_t>(s.size());
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    void section(std::uint32_t tag, const Writer& payload) {
        put(tag);
        put<std::uint64_t>(payload.bytes_.size());
        bytes_.insert(bytes_.end(), payload.bytes_.begin(), payload.bytes_.end());
    }
    std::vector<std::uint8_t>& bytes() { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size, std::string what) : p_(data), end_(data + size), what_(std::move(what)) {}

    template <typename T> T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, p_, sizeof(T));
        p_ += sizeof(T);
        return v;
    }
    template <typename T> void get_array(T* out, std::size_t n) {
        if (n > remaining() / sizeof(T)) fail("array runs past the section end");
        std::memcpy(out, p_, n * sizeof(T));
        p_ += n * sizeof(T);
    }
    template <typename T> std::vector<T> get_vector() {
        const auto n = get<std::uint64_t>();
        if (n > remaining() / sizeof(T)) fail("array length exceeds the section");
        std::vector<T> v(n);
        get_array(v.data(), n);
        return v;
    }
    std::string get_string() {
        const auto n = get<std::uint64_t>();
        if (n > remaining()) fail("string length exceeds the section");
        std::string s(reinterpret_cast<const char*>(p_), n);
        p_ += n;
        return s;
    }
    std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }
    void expect_end() const {
        if (p_ != end_) fail("trailing bytes");
    }
    [[noreturn]] void fail(const std::string& why) const { throw DataError("checkpoint " + what_ + ": " + why); }

private:
    void need(std::size_t n) const {
        if (remaining() < n) fail("unexpected end of data");
    }
    const std::uint8_t* p_;
    const std::uint8_t* end_;
    std::string what_;
};

std::string tag_name(std::uint32_t tag) {
    std::string s(4, ' ');
    for (int i = 0; i < 4; ++i) {
        const char c = static_cast<char>((tag >> (8 * i)) & 0xFF);
        s[i] = (c >= 32 && c < 127) ? c : '?';
    }
    return s;
}

void put_matrix(Writer& w, const MatX<float>& m) {
    // Row-major on disk.
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) w.put<float>(m(r, c));
}

MatX<float> get_matrix(Reader& r, Eigen::Index rows, Eigen::Index cols) {
    MatX<float> m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = r.get<float>();
    return m;
}

void put_mlp(Writer& w, const nets::Mlp<float>& net) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(net.dims().size()));
    for (int d : net.dims()) w.put<std::int32_t>(d);
    w.put_vector(net.params());
}

nets::Mlp<float> get_mlp(Reader& r) {
    const auto n = r.get<std::uint32_t>();
    if (n < 2 || n > 64) r.fail("invalid network depth");
    std::vector<int> dims(n);
    for (auto& d : dims) {
        d = r.get<std::int32_t>();
        if (d <= 0 || d > (1 << 16)) r.fail("invalid network width");
    }
    nets::Mlp<float> net(dims);
    auto params = r.get_vector<float>();
    if (params.size() != net.params().size()) r.fail("network parameter count does not match its shape");
    net.params() = std::move(params);
    return net;
}

void put_aabb(Writer& w, const Aabb& b) {
    for (int a = 0; a < 3; ++a) w.put<float>(b.min[a]);
    for (int a = 0; a < 3; ++a) w.put<float>(b.max[a]);
}

Aabb get_aabb(Reader& r) {
    Aabb b;
    for (int a = 0; a < 3; ++a) b.min[a] = r.get<float>();
    for (int a = 0; a < 3; ++a) b.max[a] = r.get<float>();
    if (!((b.max - b.min).array() > 0.0f).all()) r.fail("empty bounding box");
    return b;
}

void put_field(Writer& w, const field::VoxelField<float>& f) {
    put_aabb(w, f.aabb);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(f.resolution));
    w.put_vector(f.density);
    w.put_vector(f.features);
    put_mlp(w, f.head);
}

field::VoxelField<float> get_field(Reader& r) {
    field::VoxelField<float> f;
    f.aabb = get_aabb(r);
    const auto res = r.get<std::uint32_t>();
    if (res < 2 || res > 2048) r.fail("field resolution out of range");
    f.resolution = static_cast<int>(res);
    f.density = r.get_vector<float>();
    f.features = r.get_vector<float>();
    f.head = get_mlp(r);
    r.expect_end();
    if (f.density.size() != f.vertex_count() || f.features.size() != f.vertex_count() * field::kFeatureDim)
        r.fail("grid sizes do not match the resolution");
    if (f.head.input_dim() != field::kHeadInput || f.head.output_dim() != 3) r.fail("head network has the wrong shape");
    return f;
}

std::uint32_t checksum(const std::uint8_t* data, std::size_t n) {
    return static_cast<std::uint32_t>(crc32(0L, data, static_cast<uInt>(n)));
}

bool all_finite(const std::vector<float>& v) {
    for (float x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

} // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    const auto& m = ckpt.model;
    const auto& g = m.gaussians;
    Writer out;
    out.put(kMagic);
    out.put(kCheckpointVersion);

    Writer head;
    head.put<std::uint32_t>(static_cast<std::uint32_t>(m.levels));
    head.put<std::uint32_t>(static_cast<std::uint32_t>(m.clusters()));
    head.put<std::uint32_t>(static_cast<std::uint32_t>(m.embeddings.dim()));
    head.put<std::uint32_t>(static_cast<std::uint32_t>(m.cameras()));
    head.put<std::uint64_t>(g.size());
    head.put<std::uint32_t>(static_cast<std::uint32_t>(m.sh_degree));
    head.put<std::uint8_t>(static_cast<std::uint8_t>(m.weighting_mode));
    head.put<std::uint8_t>(m.color_correction ? 1 : 0);
    put_aabb(head, m.scene_aabb);
    head.put<float>(m.scene_extent);
    out.section(kHeader, head);

    Writer gs;
    g.for_each_attribute([&](const std::vector<float>& v, int) { gs.put_array(std::span<const float>(v)); });
    gs.put_array(std::span<const std::uint8_t>(g.levels));
    gs.put_array(std::span<const std::uint32_t>(g.clusters));
    out.section(kGaussians, gs);

    Writer cent;
    for (const auto& c : m.centroids)
        for (int a = 0; a < 3; ++a) cent.put<float>(c[a]);
    out.section(kCentroids, cent);

    Writer ec, ea;
    put_matrix(ec, m.embeddings.cluster);
    put_matrix(ea, m.embeddings.appearance);
    out.section(kClusterEmb, ec);
    out.section(kAppearanceEmb, ea);

    Writer wn, cn;
    put_mlp(wn, m.weighting);
    put_mlp(cn, m.correction);
    out.section(kWeightingNet, wn);
    out.section(kCorrectionNet, cn);

    if (ckpt.field) {
        Writer fw;
        put_field(fw, *ckpt.field);
        out.section(kField, fw);
    }

    if (!ckpt.cameras.empty()) {
        Writer cw;
        cw.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.cameras.size()));
        for (const auto& c : ckpt.cameras) {
            for (int r = 0; r < 3; ++r)
                for (int k = 0; k < 3; ++k) cw.put<double>(c.rotation(r, k));
            for (int a = 0; a < 3; ++a) cw.put<double>(c.translation[a]);
            cw.put<double>(c.fx);
            cw.put<double>(c.fy);
            cw.put<double>(c.cx);
            cw.put<double>(c.cy);
            cw.put<std::int32_t>(c.width);
            cw.put<std::int32_t>(c.height);
            cw.put<std::int32_t>(c.index);
        }
        out.section(kCameras, cw);
    }

    if (!ckpt.config_json.empty()) {
        Writer conf;
        conf.put_string(ckpt.config_json);
        out.section(kConfig, conf);
    }

    Writer it;
    it.put<std::uint64_t>(ckpt.iteration);
    out.section(kIteration, it);

    if (!ckpt.moments.empty()) {
        Writer mo;
        mo.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.moments.size()));
        for (const auto& s : ckpt.moments) {
            mo.put_string(s.name);
            mo.put<std::uint64_t>(s.step);
            mo.put_vector(s.m);
            mo.put_vector(s.v);
        }
        out.section(kMoments, mo);
    }

    if (!ckpt.grad_accum.empty() || !ckpt.grad_count.empty()) {
        Writer gr;
        gr.put_vector(ckpt.grad_accum);
        gr.put_vector(ckpt.grad_count);
        out.section(kGradStats, gr);
    }

    auto& bytes = out.bytes();
    const auto crc = static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
    out.put(crc);
    return std::move(out.bytes());
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 12) throw DataError("checkpoint is truncated");
    Reader top(bytes.data(), bytes.size() - 4, "file");
    if (top.get<std::uint32_t>() != kMagic) throw DataError("not a PYGS checkpoint (bad magic)");
    const auto version = top.get<std::uint32_t>();
    if (version != kCheckpointVersion) throw DataError(fmt::format("unsupported checkpoint version {}", version));
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    const auto crc = static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size() - 4)));
    if (crc != stored_crc) throw DataError("checkpoint checksum mismatch (truncated or corrupted)");

    std::map<std::uint32_t, std::pair<const std::uint8_t*, std::size_t>> sections;
    const std::uint8_t* base = bytes.data();
    std::size_t pos = 8;
    const std::size_t end = bytes.size() - 4;
    while (pos < end) {
        if (end - pos < 12) throw DataError("checkpoint section header is truncated");
        std::uint32_t tag;
        std::uint64_t len;
        std::memcpy(&tag, base + pos, 4);
        std::memcpy(&len, base + pos + 4, 8);
        pos += 12;
        if (len > end - pos) throw DataError("checkpoint section " + tag_name(tag) + " runs past the end of the file");
        if (!sections.emplace(tag, std::make_pair(base + pos, static_cast<std::size_t>(len))).second)
            throw DataError("checkpoint section " + tag_name(tag) + " appears twice");
        pos += len;
    }
    auto section = [&](std::uint32_t tag, bool required) -> std::optional<Reader> {
        auto it = sections.find(tag);
        if (it == sections.end()) {
            if (required) throw DataError("checkpoint is missing section " + tag_name(tag));
            return std::nullopt;
        }
        return Reader(it->second.first, it->second.second, "section " + tag_name(tag));
    };

    Checkpoint ck;
    auto& m = ck.model;
    auto head = *section(kHeader, true);
    const auto levels = head.get<std::uint32_t>();
    const auto clusters = head.get<std::uint32_t>();
    const auto dim = head.get<std::uint32_t>();
    const auto cameras = head.get<std::uint32_t>();
    const auto count = head.get<std::uint64_t>();
    const auto sh_degree = head.get<std::uint32_t>();
    const auto mode = head.get<std::uint8_t>();
    const auto correction = head.get<std::uint8_t>();
    m.scene_aabb = get_aabb(head);
    m.scene_extent = head.get<float>();
    head.expect_end();
    if (levels < 1 || levels > 255) head.fail("level count out of range");
    if (clusters < 1) head.fail("cluster count must be positive");
    if (dim < 1) head.fail("embedding dimension must be positive");
    if (sh_degree > static_cast<std::uint32_t>(geom::kMaxShDegree)) head.fail("SH degree out of range");
    if (mode > static_cast<std::uint8_t>(WeightingMode::Top1)) head.fail("unknown weighting mode");
    if (correction > 1) head.fail("invalid color-correction flag");
    if (!(m.scene_extent > 0.0f) || !std::isfinite(m.scene_extent)) head.fail("invalid scene extent");
    m.levels = static_cast<int>(levels);
    m.sh_degree = static_cast<int>(sh_degree);
    m.weighting_mode = static_cast<WeightingMode>(mode);
    m.color_correction = correction != 0;

    auto gs = *section(kGaussians, true);
    constexpr std::size_t per_gaussian = (3 + 4 + 3 + 1 + 3 + 3 * kShRestCoeffs) * 4 + 1 + 4;
    if (gs.remaining() / per_gaussian < count || gs.remaining() != count * per_gaussian)
        gs.fail("size does not match the Gaussian count in the header");
    m.gaussians.resize(count);
    m.gaussians.for_each_attribute([&](std::vector<float>& v, int) { gs.get_array(v.data(), v.size()); });
    gs.get_array(m.gaussians.levels.data(), count);
    gs.get_array(m.gaussians.clusters.data(), count);
    gs.expect_end();
    bool finite = true;
    m.gaussians.for_each_attribute([&](const std::vector<float>& v, int) { finite = finite && all_finite(v); });
    if (!finite) gs.fail("non-finite Gaussian attribute");
    for (std::size_t i = 0; i < count; ++i) {
        if (m.gaussians.levels[i] < 1 || m.gaussians.levels[i] > levels) gs.fail(fmt::format("Gaussian {} has level out of range", i));
        if (m.gaussians.clusters[i] >= clusters) gs.fail(fmt::format("Gaussian {} has cluster out of range", i));
    }

    auto cent = *section(kCentroids, true);
    if (cent.remaining() != static_cast<std::size_t>(clusters) * 12) cent.fail("size does not match the cluster count");
    m.centroids.resize(clusters);
    for (auto& c : m.centroids)
        for (int a = 0; a < 3; ++a) c[a] = cent.get<float>();

    auto ec = *section(kClusterEmb, true);
    if (ec.remaining() != static_cast<std::size_t>(clusters) * dim * 4) ec.fail("size does not match K x D");
    m.embeddings.cluster = get_matrix(ec, clusters, dim);
    auto ea = *section(kAppearanceEmb, true);
    if (ea.remaining() != static_cast<std::size_t>(cameras) * dim * 4) ea.fail("size does not match N_cam x D");
    m.embeddings.appearance = get_matrix(ea, cameras, dim);

    auto wn = *section(kWeightingNet, true);
    m.weighting = get_mlp(wn);
    wn.expect_end();
    if (m.weighting.input_dim() != static_cast<int>(dim) + geom::positional_encoding_size(nets::kCameraFreqs) ||
        m.weighting.output_dim() != static_cast<int>(levels))
        wn.fail("weighting network shape does not match D and L");
    auto cn = *section(kCorrectionNet, true);
    m.correction = get_mlp(cn);
    cn.expect_end();
    if (m.correction.input_dim() != 2 * static_cast<int>(dim) || m.correction.output_dim() != 3)
        cn.fail("correction network shape does not match D");

    if (auto fr = section(kField, false)) ck.field = get_field(*fr);

    if (auto cr = section(kCameras, false)) {
        const auto n = cr->get<std::uint32_t>();
        if (cr->remaining() != static_cast<std::size_t>(n) * (16 * 8 + 12)) cr->fail("size does not match the camera count");
        ck.cameras.resize(n);
        for (auto& c : ck.cameras) {
            for (int r = 0; r < 3; ++r)
                for (int k = 0; k < 3; ++k) c.rotation(r, k) = cr->get<double>();
            for (int a = 0; a < 3; ++a) c.translation[a] = cr->get<double>();
            c.fx = cr->get<double>();
            c.fy = cr->get<double>();
            c.cx = cr->get<double>();
            c.cy = cr->get<double>();
            c.width = cr->get<std::int32_t>();
            c.height = cr->get<std::int32_t>();
            c.index = cr->get<std::int32_t>();
            try {
                c.validate();
            } catch (const ConfigError& e) {
                cr->fail(e.what());
            }
        }
    }

    if (auto conf = section(kConfig, false)) {
        ck.config_json = conf->get_string();
        conf->expect_end();
    }
    auto it = *section(kIteration, true);
    ck.iteration = it.get<std::uint64_t>();
    it.expect_end();

    if (auto mo = section(kMoments, false)) {
        const auto n = mo->get<std::uint32_t>();
        for (std::uint32_t i = 0; i < n; ++i) {
            OptimizerMoments s;
            s.name = mo->get_string();
            s.step = mo->get<std::uint64_t>();
            s.m = mo->get_vector<float>();
            s.v = mo->get_vector<float>();
            if (s.m.size() != s.v.size()) mo->fail("moment vectors of group '" + s.name + "' differ in size");
            ck.moments.push_back(std::move(s));
        }
        mo->expect_end();
    }
    if (auto gr = section(kGradStats, false)) {
        ck.grad_accum = gr->get_vector<float>();
        ck.grad_count = gr->get_vector<std::uint32_t>();
        gr->expect_end();
        if (ck.grad_accum.size() != count || ck.grad_count.size() != count) gr->fail("size does not match the Gaussian count");
    }
    return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) { write_file_atomic(path, serialize_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const fs::path& path) {
    try {
        return deserialize_checkpoint(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> serialize_field(const field::VoxelField<float>& f) {
    Writer out;
    out.put(kFieldMagic);
    out.put(kCheckpointVersion);
    Writer fw;
    put_field(fw, f);
    out.section(kField, fw);
    out.put(checksum(out.bytes().data(), out.bytes().size()));
    return std::move(out.bytes());
}

field::VoxelField<float> deserialize_field(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 24) throw DataError("field file is truncated");
    Reader top(bytes.data(), bytes.size() - 4, "file");
    if (top.get<std::uint32_t>() != kFieldMagic) throw DataError("not a PYGF field file (bad magic)");
    const auto version = top.get<std::uint32_t>();
    if (version != kCheckpointVersion) throw DataError(fmt::format("unsupported field file version {}", version));
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    if (checksum(bytes.data(), bytes.size() - 4) != stored_crc)
        throw DataError("field file checksum mismatch (truncated or corrupted)");
    if (top.get<std::uint32_t>() != kField) throw DataError("field file has no field section");
    const auto len = top.get<std::uint64_t>();
    if (len != top.remaining()) throw DataError("field section length does not match the file");
    std::vector<std::uint8_t> payload(bytes.begin() + 20, bytes.end() - 4);
    Reader r(payload.data(), payload.size(), "section FILD");
    return get_field(r);
}

void save_field(const field::VoxelField<float>& f, const fs::path& path) { write_file_atomic(path, serialize_field(f)); }

field::VoxelField<float> load_field(const fs::path& path) {
    try {
        return deserialize_field(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

} // namespace pygs::io
