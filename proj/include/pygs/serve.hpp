// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "pygs/model.hpp"

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace pygs::serve {

inline constexpr int kMaxWidth = 1920;
inline constexpr int kMaxHeight = 1080;

enum class Overlay { None, DominantLevel, LevelMass };
enum class FrameFormat : std::uint8_t { Color = 0, Overlay = 1 };

struct ViewRequest {
    std::uint32_t id = 0;
    Eigen::Matrix4d camera_to_world = Eigen::Matrix4d::Identity(); // OpenGL axes, row-major in JSON
    double fov_y = 0.8;                                            // radians
    int width = 512;
    int height = 512;
    Overlay overlay = Overlay::None;
    int overlay_level = 1; // for LevelMass
    std::uint32_t enabled_levels = ~0u;
    int appearance = -1; // training camera row, -1 = mean embedding
    bool color_correction = true;
};

/// Parses a `{type:"view", ...}` message. Throws ConfigError with a human-readable reason.
ViewRequest parse_view_request(const std::string& text);
std::string error_message(std::uint32_t id, const std::string& reason);

/// Immutable render state shared by all connections.
struct RenderSnapshot {
    Model<float> model;
    std::vector<geom::Camera> cameras; // training cameras
    Vec3f background = Vec3f::Zero();
};

/// One bounded copy of the scene; later changes to `model` do not reach the snapshot.
std::shared_ptr<const RenderSnapshot> snapshot_scene(const Model<float>& model, const std::vector<geom::Camera>& cameras,
                                                     const Vec3f& background = Vec3f::Zero());

geom::Camera request_camera(const ViewRequest& req);

/// 16 bytes: "PYFR", id u32, width u32, height u16, format u8, reserved u8 (little-endian).
std::array<std::uint8_t, 16> frame_header(std::uint32_t id, std::uint32_t width, std::uint16_t height, FrameFormat format);

/// Renders a request and returns the binary reply (header + PNG). Throws ConfigError for
/// requests the snapshot cannot satisfy.
std::vector<std::uint8_t> render_reply(const RenderSnapshot& snap, const ViewRequest& req, int threads = 1);

/// Image the reply encodes (8-bit sRGB color or overlay), without the PNG step.
Image<std::uint8_t> render_view_image(const RenderSnapshot& snap, const ViewRequest& req, int threads = 1);

std::string meta_json(const RenderSnapshot& snap);

struct ServerOptions {
    std::string address = "127.0.0.1";
    unsigned short port = 8080; // 0 picks a free port
    std::filesystem::path web_root;
    int render_workers = 1;
    int render_threads = 1; // threads per render
};

class Server {
public:
    Server(std::shared_ptr<const RenderSnapshot> snapshot, ServerOptions options);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds and starts serving on background threads. Returns the bound port.
    unsigned short start();
    void stop();
    /// Blocks until stop() is called or SIGINT/SIGTERM arrives.
    void wait();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace pygs::serve
