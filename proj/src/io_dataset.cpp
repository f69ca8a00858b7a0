// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/io.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <cmath>
#include <exception>
#include <fstream>
#include <optional>

namespace pygs::io {

using nlohmann::json;

namespace {

std::optional<double> number(const json& obj, const char* key) {
    if (!obj.is_object() || !obj.contains(key)) return std::nullopt;
    const auto& v = obj.at(key);
    if (!v.is_number()) throw DataError(std::string("transforms.json: '") + key + "' must be a number");
    return v.get<double>();
}

// Per-frame value first, then the top-level default.
std::optional<double> lookup(const json& frame, const json& root, const char* key) {
    if (auto v = number(frame, key)) return v;
    return number(root, key);
}

Eigen::Matrix4d parse_transform(const json& frame, std::size_t i) {
    if (!frame.contains("transform_matrix")) throw DataError(fmt::format("frame {} has no transform_matrix", i));
    const auto& t = frame.at("transform_matrix");
    if (!t.is_array() || t.size() < 3) throw DataError(fmt::format("frame {}: transform_matrix must be 4x4", i));
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    for (std::size_t r = 0; r < t.size() && r < 4; ++r) {
        if (!t[r].is_array() || t[r].size() != 4) throw DataError(fmt::format("frame {}: transform_matrix must be 4x4", i));
        for (std::size_t c = 0; c < 4; ++c) {
            if (!t[r][c].is_number()) throw DataError(fmt::format("frame {}: non-numeric transform entry", i));
            m(static_cast<int>(r), static_cast<int>(c)) = t[r][c].get<double>();
        }
    }
    return m;
}

fs::path resolve_image(const fs::path& root, const std::string& name) {
    fs::path p = root / name;
    if (fs::exists(p) && fs::is_regular_file(p)) return p;
    if (!p.has_extension() || p.extension().string().size() > 5) {
        for (const char* ext : {".png", ".jpg", ".jpeg"}) {
            fs::path q = p;
            q += ext;
            if (fs::exists(q)) return q;
        }
    }
    return p;
}

Vec3f parse_vec3(const json& v, const char* what) {
    if (!v.is_array() || v.size() != 3) throw DataError(std::string("transforms.json: ") + what + " must have 3 entries");
    Vec3f out;
    for (int a = 0; a < 3; ++a) {
        if (!v[a].is_number()) throw DataError(std::string("transforms.json: ") + what + " must be numeric");
        out[a] = v[a].get<float>();
    }
    return out;
}

} // namespace

std::vector<geom::Camera> Dataset::train_cameras() const {
    std::vector<geom::Camera> out;
    out.reserve(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        out.push_back(cameras[train[i]]);
        out.back().index = static_cast<int>(i);
    }
    return out;
}

std::vector<Image<float>> Dataset::train_images() const {
    std::vector<Image<float>> out;
    out.reserve(train.size());
    for (int i : train) out.push_back(images[i]);
    return out;
}

Dataset load_dataset(const fs::path& path, int test_every, int threads) {
    const fs::path file = fs::is_directory(path) ? path / "transforms.json" : path;
    std::ifstream in(file);
    if (!in) throw DataError("cannot open " + file.string());
    json root;
    try {
        root = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(file.string() + ": " + e.what());
    }
    if (!root.is_object() || !root.contains("frames") || !root.at("frames").is_array())
        throw DataError(file.string() + ": missing 'frames' array");
    const auto& frames = root.at("frames");
    if (frames.empty()) throw DataError(file.string() + ": no frames");

    Dataset data;
    data.root = file.parent_path();
    if (root.contains("background")) data.background = parse_vec3(root.at("background"), "background");
    if (root.contains("aabb")) {
        const auto& a = root.at("aabb");
        if (!a.is_array() || a.size() != 2) throw DataError("transforms.json: aabb must be [[min], [max]]");
        Aabb box{parse_vec3(a[0], "aabb min"), parse_vec3(a[1], "aabb max")};
        if (!((box.max - box.min).array() > 0.0f).all()) throw DataError("transforms.json: aabb is empty");
        data.aabb = box;
    }

    const std::size_t n = frames.size();
    std::vector<fs::path> paths(n);
    std::vector<Eigen::Matrix4d> poses(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& f = frames[i];
        if (!f.contains("file_path") || !f.at("file_path").is_string())
            throw DataError(fmt::format("frame {} has no file_path", i));
        data.names.push_back(f.at("file_path").get<std::string>());
        paths[i] = resolve_image(data.root, data.names.back());
        if (!fs::exists(paths[i]))
            throw DataError(fmt::format("frame {} ('{}'): image not found at {}", i, data.names.back(), paths[i].string()));
        poses[i] = parse_transform(f, i);
    }

    data.images.resize(n);
    std::vector<std::exception_ptr> errors(n);
    parallel_for(n, resolve_threads(threads), [&](std::size_t b, std::size_t e, int) {
        for (std::size_t i = b; i < e; ++i) {
            try {
                data.images[i] = read_image(paths[i], data.background);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    });
    for (std::size_t i = 0; i < n; ++i) {
        if (!errors[i]) continue;
        try {
            std::rethrow_exception(errors[i]);
        } catch (const std::exception& e) {
            throw DataError(fmt::format("frame {} ('{}'): {}", i, data.names[i], e.what()));
        }
    }

    for (std::size_t i = 0; i < n; ++i) {
        const auto& f = frames[i];
        const int w = data.images[i].width, h = data.images[i].height;
        if (auto jw = lookup(f, root, "w"); jw && static_cast<int>(*jw) != w)
            throw DataError(fmt::format("frame {}: image width {} does not match w = {}", i, w, *jw));
        if (auto jh = lookup(f, root, "h"); jh && static_cast<int>(*jh) != h)
            throw DataError(fmt::format("frame {}: image height {} does not match h = {}", i, h, *jh));
        double fx = 0.0, fy = 0.0;
        if (auto v = lookup(f, root, "fl_x")) {
            fx = *v;
            fy = lookup(f, root, "fl_y").value_or(fx);
        } else if (auto ax = lookup(f, root, "camera_angle_x")) {
            fx = 0.5 * w / std::tan(0.5 * *ax);
            if (auto ay = lookup(f, root, "camera_angle_y")) fy = 0.5 * h / std::tan(0.5 * *ay);
            else fy = fx;
        } else {
            throw DataError(fmt::format("frame {}: no focal length (camera_angle_x or fl_x)", i));
        }
        const double cx = lookup(f, root, "cx").value_or(0.5 * w);
        const double cy = lookup(f, root, "cy").value_or(0.5 * h);
        if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy))
            throw DataError(fmt::format("frame {}: invalid focal length", i));
        data.cameras.push_back(geom::Camera::from_camera_to_world_gl(poses[i], fx, fy, cx, cy, w, h, static_cast<int>(i)));
        if (test_every > 0 && i % static_cast<std::size_t>(test_every) == 0) data.test.push_back(static_cast<int>(i));
        else data.train.push_back(static_cast<int>(i));
    }
    if (data.train.empty()) throw DataError("dataset has no training frames");
    spdlog::debug("loaded {} frames ({} train, {} test) from {}", n, data.train.size(), data.test.size(), file.string());
    return data;
}

void save_dataset(const fs::path& dir, const std::vector<geom::Camera>& cameras, const std::vector<Image<float>>& images,
                  const std::optional<Aabb>& aabb, const Vec3f& background) {
    if (cameras.size() != images.size()) throw std::invalid_argument("save_dataset: camera and image counts differ");
    fs::create_directories(dir / "images");
    json root;
    json frames = json::array();
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        const auto& cam = cameras[i];
        const std::string name = fmt::format("images/frame_{:04d}", i);
        write_png(dir / (name + ".png"), images[i]);
        const Eigen::Matrix4d m = cam.camera_to_world_gl();
        json rows = json::array();
        for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
        frames.push_back({{"file_path", name},
                          {"transform_matrix", rows},
                          {"fl_x", cam.fx},
                          {"fl_y", cam.fy},
                          {"cx", cam.cx},
                          {"cy", cam.cy},
                          {"w", cam.width},
                          {"h", cam.height}});
    }
    root["frames"] = frames;
    if (aabb) root["aabb"] = {{aabb->min[0], aabb->min[1], aabb->min[2]}, {aabb->max[0], aabb->max[1], aabb->max[2]}};
    root["background"] = {background[0], background[1], background[2]};
    const std::string text = root.dump(2);
    write_file_atomic(dir / "transforms.json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

Aabb padded_camera_box(const std::vector<geom::Camera>& cameras) {
    if (cameras.empty()) throw DataError("no cameras to bound");
    Vec3f lo = Vec3f::Constant(std::numeric_limits<float>::max());
    Vec3f hi = Vec3f::Constant(std::numeric_limits<float>::lowest());
    for (const auto& c : cameras) {
        const Vec3f p = c.center().cast<float>();
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Vec3f center = 0.5f * (lo + hi);
    // Cameras on a plane or a line still need a box with volume.
    const float floor = std::max(1e-3f, 0.1f * (hi - lo).maxCoeff());
    const Vec3f half = (0.5f * (hi - lo)).cwiseMax(Vec3f::Constant(floor));
    return Aabb{center - 2.0f * half, center + 2.0f * half};
}

float camera_extent(const std::vector<geom::Camera>& cameras) {
    if (cameras.empty()) throw DataError("no cameras to bound");
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& c : cameras) mean += c.center();
    mean /= static_cast<double>(cameras.size());
    double radius = 0.0;
    for (const auto& c : cameras) radius = std::max(radius, (c.center() - mean).norm());
    return static_cast<float>(1.1 * std::max(radius, 1e-3));
}

SceneBounds scene_bounds(const Dataset& data) {
    SceneBounds b;
    b.scene_box = padded_camera_box(data.cameras);
    b.field_box = data.aabb.value_or(b.scene_box);
    b.extent = camera_extent(data.cameras);
    return b;
}

} // namespace pygs::io
