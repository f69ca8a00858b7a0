// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/serve.hpp"

#include "pygs/io.hpp"

#include <boost/asio.hpp>
#include <boost/beast.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <thread>

namespace pygs::serve {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using json = nlohmann::json;

ViewRequest parse_view_request(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("message is not a JSON object");
    if (j.value("type", std::string()) != "view") throw ConfigError("unsupported message type");
    ViewRequest r;
    try {
        r.id = j.value("id", 0u);
        if (j.contains("camera_to_world")) {
            const auto& m = j.at("camera_to_world");
            if (!m.is_array() || m.size() != 16) throw ConfigError("camera_to_world must hold 16 numbers (row-major)");
            for (int i = 0; i < 16; ++i) r.camera_to_world(i / 4, i % 4) = m.at(i).get<double>();
        }
        r.fov_y = j.value("fov_y", r.fov_y);
        r.width = j.value("width", r.width);
        r.height = j.value("height", r.height);
        const std::string overlay = j.value("overlay", std::string("none"));
        if (overlay == "none") {
            r.overlay = Overlay::None;
        } else if (overlay == "dominant-level") {
            r.overlay = Overlay::DominantLevel;
        } else if (overlay == "level-mass") {
            r.overlay = Overlay::LevelMass;
            r.overlay_level = j.value("overlay_level", 1);
        } else {
            throw ConfigError("unknown overlay '" + overlay + "'");
        }
        r.enabled_levels = j.value("enabled_levels", r.enabled_levels);
        r.appearance = j.value("appearance", r.appearance);
        r.color_correction = j.value("color_correction", r.color_correction);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad field: ") + e.what());
    }
    if (r.width <= 0 || r.height <= 0) throw ConfigError("width and height must be positive");
    if (r.width > kMaxWidth || r.height > kMaxHeight)
        throw ConfigError(fmt::format("resolution {}x{} exceeds {}x{}", r.width, r.height, kMaxWidth, kMaxHeight));
    if (!(r.fov_y > 0.0 && r.fov_y < 3.1)) throw ConfigError("fov_y must be in (0, 3.1) radians");
    if (r.enabled_levels == 0 && r.overlay == Overlay::None) throw ConfigError("enabled_levels is empty");
    if (!r.camera_to_world.allFinite()) throw ConfigError("camera_to_world is not finite");
    return r;
}

std::string error_message(std::uint32_t id, const std::string& reason) {
    return json{{"type", "error"}, {"id", id}, {"reason", reason}}.dump();
}

std::shared_ptr<const RenderSnapshot> snapshot_scene(const Model<float>& model, const std::vector<geom::Camera>& cameras,
                                                     const Vec3f& background) {
    auto s = std::make_shared<RenderSnapshot>();
    s->model = model;
    s->cameras = cameras;
    s->background = background;
    return s;
}

geom::Camera request_camera(const ViewRequest& req) {
    const double f = 0.5 * req.height / std::tan(0.5 * req.fov_y);
    return geom::Camera::from_camera_to_world_gl(req.camera_to_world, f, f, 0.5 * req.width, 0.5 * req.height,
                                                 req.width, req.height);
}

std::array<std::uint8_t, 16> frame_header(std::uint32_t id, std::uint32_t width, std::uint16_t height, FrameFormat format) {
    std::array<std::uint8_t, 16> h{};
    h[0] = 'P';
    h[1] = 'Y';
    h[2] = 'F';
    h[3] = 'R';
    for (int i = 0; i < 4; ++i) h[4 + i] = static_cast<std::uint8_t>(id >> (8 * i));
    for (int i = 0; i < 4; ++i) h[8 + i] = static_cast<std::uint8_t>(width >> (8 * i));
    h[12] = static_cast<std::uint8_t>(height);
    h[13] = static_cast<std::uint8_t>(height >> 8);
    h[14] = static_cast<std::uint8_t>(format);
    h[15] = 0;
    return h;
}

namespace {

const std::array<Vec3f, 8> kLevelPalette = {Vec3f(0.90f, 0.25f, 0.20f), Vec3f(0.20f, 0.65f, 0.30f),
                                            Vec3f(0.20f, 0.40f, 0.90f), Vec3f(0.95f, 0.75f, 0.15f),
                                            Vec3f(0.60f, 0.30f, 0.80f), Vec3f(0.15f, 0.75f, 0.80f),
                                            Vec3f(0.90f, 0.50f, 0.70f), Vec3f(0.55f, 0.55f, 0.55f)};

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

} // namespace

Image<std::uint8_t> render_view_image(const RenderSnapshot& snap, const ViewRequest& req, int threads) {
    const auto& model = snap.model;
    if (req.appearance < -1 || req.appearance >= model.cameras())
        throw ConfigError(fmt::format("appearance index {} out of range", req.appearance));
    if (req.overlay == Overlay::LevelMass && (req.overlay_level < 1 || req.overlay_level > model.levels))
        throw ConfigError(fmt::format("overlay level {} out of range", req.overlay_level));
    geom::Camera cam = request_camera(req);
    ViewOptions opt;
    opt.background = snap.background;
    opt.appearance = req.appearance;
    opt.color_correction = req.color_correction;
    opt.enabled_levels = req.enabled_levels;
    opt.threads = threads;
    const auto frame = render_frame(model, cam, opt);
    const auto& out = frame.output;
    switch (req.overlay) {
    case Overlay::None: return io::to_srgb8(out.color);
    case Overlay::DominantLevel: {
        Image<std::uint8_t> img(cam.width, cam.height, 3);
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x) {
                const int l = out.dominant.at(x, y);
                const Vec3f c = l == 0 ? Vec3f::Zero() : kLevelPalette[(l - 1) % kLevelPalette.size()];
                for (int a = 0; a < 3; ++a) img.at(x, y, a) = to_byte(c[a]);
            }
        return img;
    }
    case Overlay::LevelMass: {
        Image<std::uint8_t> img(cam.width, cam.height, 1);
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x) img.at(x, y) = to_byte(out.level_mass.at(x, y, req.overlay_level - 1));
        return img;
    }
    }
    throw ConfigError("unknown overlay");
}

std::vector<std::uint8_t> render_reply(const RenderSnapshot& snap, const ViewRequest& req, int threads) {
    const auto png = io::encode_png(render_view_image(snap, req, threads));
    const auto format = req.overlay == Overlay::None ? FrameFormat::Color : FrameFormat::Overlay;
    const auto h = frame_header(req.id, static_cast<std::uint32_t>(req.width), static_cast<std::uint16_t>(req.height), format);
    std::vector<std::uint8_t> msg(h.size() + png.size());
    std::copy(h.begin(), h.end(), msg.begin());
    std::copy(png.begin(), png.end(), msg.begin() + static_cast<std::ptrdiff_t>(h.size()));
    return msg;
}

std::string meta_json(const RenderSnapshot& snap) {
    const auto& m = snap.model;
    json cams = json::array();
    for (const auto& c : snap.cameras) {
        const Eigen::Matrix4d t = c.camera_to_world_gl();
        json mat = json::array();
        for (int r = 0; r < 4; ++r)
            for (int k = 0; k < 4; ++k) mat.push_back(t(r, k));
        cams.push_back({{"index", c.index},
                        {"camera_to_world", mat},
                        {"fov_y", 2.0 * std::atan(0.5 * c.height / c.fy)},
                        {"width", c.width},
                        {"height", c.height}});
    }
    const auto& b = m.scene_aabb;
    return json{{"L", m.levels},
                {"K", m.clusters()},
                {"camera_count", m.cameras()},
                {"gaussians", m.gaussians.size()},
                {"scene_aabb", {{"min", {b.min.x(), b.min.y(), b.min.z()}}, {"max", {b.max.x(), b.max.y(), b.max.z()}}}},
                {"cameras", cams}}
        .dump();
}

// ---- network ----------------------------------------------------------------------------

namespace {

struct Outgoing {
    bool binary = false;
    std::shared_ptr<const std::vector<std::uint8_t>> bytes;
};

class WsSession : public std::enable_shared_from_this<WsSession> {
public:
    WsSession(tcp::socket socket, std::shared_ptr<const RenderSnapshot> snap, asio::thread_pool& pool, int render_threads)
        : ws_(std::move(socket)), snap_(std::move(snap)), pool_(pool), render_threads_(render_threads) {}

    void start(http::request<http::string_body> req) {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
    }

private:
    void on_accept(beast::error_code ec) {
        if (ec) return;
        do_read();
    }

    void do_read() { ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this())); }

    void on_read(beast::error_code ec, std::size_t) {
        if (ec) return;
        const std::string text = beast::buffers_to_string(buffer_.data());
        buffer_.consume(buffer_.size());
        if (!ws_.got_text()) {
            send_text(error_message(0, "binary messages are not accepted"));
        } else {
            try {
                pending_ = parse_view_request(text);
                maybe_render();
            } catch (const ConfigError& e) {
                std::uint32_t id = 0;
                try {
                    id = json::parse(text).value("id", 0u);
                } catch (const std::exception&) {
                }
                send_text(error_message(id, e.what()));
            }
        }
        do_read();
    }

    // Latest-wins: only one render in flight; a newer request replaces any waiting one.
    void maybe_render() {
        if (rendering_ || !pending_) return;
        rendering_ = true;
        const ViewRequest req = *pending_;
        pending_.reset();
        asio::post(pool_, [self = shared_from_this(), req] {
            Outgoing out;
            try {
                out.binary = true;
                out.bytes = std::make_shared<std::vector<std::uint8_t>>(render_reply(*self->snap_, req, self->render_threads_));
            } catch (const std::exception& e) {
                const auto text = error_message(req.id, e.what());
                out.binary = false;
                out.bytes = std::make_shared<std::vector<std::uint8_t>>(text.begin(), text.end());
            }
            asio::post(self->ws_.get_executor(), [self, out] {
                self->rendering_ = false;
                self->enqueue(out);
                self->maybe_render();
            });
        });
    }

    void send_text(const std::string& text) {
        enqueue(Outgoing{false, std::make_shared<std::vector<std::uint8_t>>(text.begin(), text.end())});
    }

    void enqueue(Outgoing out) {
        queue_.push_back(std::move(out));
        if (queue_.size() == 1) do_write();
    }

    void do_write() {
        ws_.binary(queue_.front().binary);
        ws_.async_write(asio::buffer(*queue_.front().bytes),
                        beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
    }

    void on_write(beast::error_code ec, std::size_t) {
        if (ec) return;
        queue_.pop_front();
        if (!queue_.empty()) do_write();
    }

    websocket::stream<beast::tcp_stream> ws_;
    beast::flat_buffer buffer_;
    std::shared_ptr<const RenderSnapshot> snap_;
    asio::thread_pool& pool_;
    int render_threads_;
    std::optional<ViewRequest> pending_;
    bool rendering_ = false;
    std::deque<Outgoing> queue_;
};

std::string mime_type(const std::filesystem::path& p) {
    const auto ext = p.extension().string();
    if (ext == ".html") return "text/html; charset=utf-8";
    if (ext == ".js") return "text/javascript";
    if (ext == ".css") return "text/css";
    if (ext == ".json") return "application/json";
    if (ext == ".png") return "image/png";
    if (ext == ".svg") return "image/svg+xml";
    return "application/octet-stream";
}

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
    HttpSession(tcp::socket socket, std::shared_ptr<const RenderSnapshot> snap, const ServerOptions& opt,
                asio::thread_pool& pool)
        : stream_(std::move(socket)), snap_(std::move(snap)), opt_(opt), pool_(pool) {}

    void start() { do_read(); }

private:
    void do_read() {
        req_ = {};
        stream_.expires_after(std::chrono::seconds(30));
        http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
    }

    void on_read(beast::error_code ec, std::size_t) {
        if (ec) return;
        if (websocket::is_upgrade(req_)) {
            if (req_.target() != "/ws") return send(error_response(http::status::not_found, "unknown endpoint"));
            stream_.expires_never();
            std::make_shared<WsSession>(stream_.release_socket(), snap_, pool_, opt_.render_threads)->start(std::move(req_));
            return;
        }
        send(handle());
    }

    http::response<http::string_body> error_response(http::status status, const std::string& why) {
        http::response<http::string_body> res{status, req_.version()};
        res.set(http::field::content_type, "application/json");
        res.body() = json{{"type", "error"}, {"reason", why}}.dump();
        res.keep_alive(req_.keep_alive());
        res.prepare_payload();
        return res;
    }

    http::response<http::string_body> handle() {
        if (req_.method() != http::verb::get && req_.method() != http::verb::head)
            return error_response(http::status::method_not_allowed, "only GET is supported");
        std::string target(req_.target());
        if (const auto q = target.find('?'); q != std::string::npos) target.resize(q);
        if (target == "/meta") {
            http::response<http::string_body> res{http::status::ok, req_.version()};
            res.set(http::field::content_type, "application/json");
            res.body() = meta_json(*snap_);
            res.keep_alive(req_.keep_alive());
            res.prepare_payload();
            return res;
        }
        if (target == "/") target = "/index.html";
        if (target.find("..") != std::string::npos || opt_.web_root.empty())
            return error_response(http::status::not_found, "not found");
        const auto path = opt_.web_root / target.substr(1);
        std::vector<std::uint8_t> body;
        try {
            body = io::read_file(path);
        } catch (const std::exception&) {
            return error_response(http::status::not_found, "not found");
        }
        http::response<http::string_body> res{http::status::ok, req_.version()};
        res.set(http::field::content_type, mime_type(path));
        res.body().assign(body.begin(), body.end());
        res.keep_alive(req_.keep_alive());
        res.prepare_payload();
        return res;
    }

    void send(http::response<http::string_body> res) {
        auto sp = std::make_shared<http::response<http::string_body>>(std::move(res));
        http::async_write(stream_, *sp, [self = shared_from_this(), sp](beast::error_code ec, std::size_t) {
            if (ec) return;
            if (!sp->keep_alive()) {
                beast::error_code ignored;
                self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
                return;
            }
            self->do_read();
        });
    }

    beast::tcp_stream stream_;
    beast::flat_buffer buffer_;
    http::request<http::string_body> req_;
    std::shared_ptr<const RenderSnapshot> snap_;
    const ServerOptions& opt_;
    asio::thread_pool& pool_;
};

} // namespace

struct Server::Impl {
    std::shared_ptr<const RenderSnapshot> snap;
    ServerOptions opt;
    asio::io_context ioc;
    std::optional<asio::thread_pool> pool;
    std::optional<tcp::acceptor> acceptor;
    std::optional<asio::executor_work_guard<asio::io_context::executor_type>> work;
    std::thread io_thread;
    std::mutex mutex;
    std::condition_variable stopped_cv;
    bool running = false;

    void do_accept() {
        acceptor->async_accept(asio::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
            if (ec) return;
            std::make_shared<HttpSession>(std::move(socket), snap, opt, *pool)->start();
            do_accept();
        });
    }
};

Server::Server(std::shared_ptr<const RenderSnapshot> snapshot, ServerOptions options) : impl_(std::make_unique<Impl>()) {
    impl_->snap = std::move(snapshot);
    impl_->opt = std::move(options);
}

Server::~Server() { stop(); }

unsigned short Server::start() {
    auto& d = *impl_;
    d.pool.emplace(static_cast<std::size_t>(std::max(1, d.opt.render_workers)));
    beast::error_code ec;
    const auto address = asio::ip::make_address(d.opt.address, ec);
    if (ec) throw ConfigError("invalid bind address '" + d.opt.address + "'");
    const tcp::endpoint ep(address, d.opt.port);
    d.acceptor.emplace(d.ioc);
    d.acceptor->open(ep.protocol());
    d.acceptor->set_option(asio::socket_base::reuse_address(true));
    d.acceptor->bind(ep, ec);
    if (ec) throw DataError(fmt::format("cannot bind {}:{}: {}", d.opt.address, d.opt.port, ec.message()));
    d.acceptor->listen();
    const auto port = d.acceptor->local_endpoint().port();
    d.work.emplace(d.ioc.get_executor());
    d.do_accept();
    d.running = true;
    d.io_thread = std::thread([&d] { d.ioc.run(); });
    spdlog::info("serving on http://{}:{}/", d.opt.address, port);
    return port;
}

void Server::stop() {
    auto& d = *impl_;
    {
        std::lock_guard lock(d.mutex);
        if (!d.running) return;
        d.running = false;
    }
    asio::post(d.ioc, [&d] {
        beast::error_code ignored;
        if (d.acceptor) d.acceptor->close(ignored);
    });
    d.work.reset();
    d.ioc.stop();
    if (d.io_thread.joinable()) d.io_thread.join();
    if (d.pool) d.pool->join();
    d.stopped_cv.notify_all();
}

void Server::wait() {
    auto& d = *impl_;
    asio::io_context signals_ctx;
    asio::signal_set signals(signals_ctx, SIGINT, SIGTERM);
    signals.async_wait([this](beast::error_code ec, int) {
        if (!ec) stop();
    });
    std::thread signal_thread([&] { signals_ctx.run(); });
    {
        std::unique_lock lock(d.mutex);
        d.stopped_cv.wait(lock, [&] { return !d.running; });
    }
    signals_ctx.stop();
    signal_thread.join();
}

} // namespace pygs::serve
