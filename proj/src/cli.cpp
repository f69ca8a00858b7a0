// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/cli.hpp"

#include "pygs/field.hpp"
#include "pygs/init.hpp"
#include "pygs/io.hpp"
#include "pygs/metrics.hpp"
#include "pygs/serve.hpp"
#include "pygs/synth.hpp"
#include "pygs/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <iostream>
#include <memory>
#include <optional>

#ifndef PYGS_WEB_DIR
#define PYGS_WEB_DIR ""
#endif

namespace pygs::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// ---- presets --------------------------------------------------------------------------

struct InitSettings {
    init::PyramidSpec pyramid;
    int clusters = 64;
    std::size_t points = 0; // 0 = total pyramid size
    field::FieldTrainConfig field;
    init::PointCloudConfig cloud;
    init::KMeansConfig kmeans;

    static InitSettings preset(train::Preset p) {
        InitSettings s;
        if (p == train::Preset::Desk) {
            s.pyramid = {3, 1000};
            s.clusters = 64;
            s.field.resolution = 64;
            s.field.steps = 1000;
            s.field.rays_per_batch = 2048;
        } else {
            s.pyramid = {3, 800000};
            s.clusters = 5000;
        }
        return s;
    }
};

struct Settings {
    std::string preset_name = "desk";
    int threads = 0;
    bool deterministic = false;
    std::uint64_t seed = 0;
    int test_every = 8;
    std::string log_level = "info";

    train::Preset preset() const { return train::preset_from_string(preset_name); }
    int worker_threads() const { return deterministic ? 1 : resolve_threads(threads); }
};

// Flags whose defaults depend on the preset. Values stay unset unless given, and are
// applied on top of the chosen preset.
template <typename Cfg> class Overrides {
public:
    template <typename T, typename Get>
    void add(CLI::App* app, const std::string& flag, Get get, const std::string& help, Cfg desk, Cfg full) {
        auto slot = std::make_shared<std::optional<T>>();
        const T d = get(desk), p = get(full);
        std::string text = help;
        if (fmt::format("{}", d) == fmt::format("{}", p)) {
            text += fmt::format(" [default: {}]", d);
        } else {
            text += fmt::format(" [desk: {}, full: {}]", d, p);
        }
        app->add_option(flag, *slot, text);
        apply_.push_back([slot, get](Cfg& c) {
            if (*slot) get(c) = **slot;
        });
        slots_.push_back(slot);
    }
    void apply(Cfg& c) const {
        for (const auto& f : apply_) f(c);
    }

private:
    std::vector<std::function<void(Cfg&)>> apply_;
    std::vector<std::shared_ptr<void>> slots_;
};

void add_train_overrides(CLI::App* app, Overrides<train::TrainConfig>& o) {
    using train::TrainConfig;
    const auto d = TrainConfig::preset(train::Preset::Desk), p = TrainConfig::preset(train::Preset::Full);
    o.add<int>(app, "--iterations", [](TrainConfig& c) -> int& { return c.iterations; }, "training iterations", d, p);
    o.add<double>(app, "--lambda", [](TrainConfig& c) -> double& { return c.lambda; }, "L1 / SSIM balance", d, p);
    o.add<double>(app, "--lr-position-init", [](TrainConfig& c) -> double& { return c.lr.position_init; },
                  "initial position learning rate (times scene extent)", d, p);
    o.add<double>(app, "--lr-position-final", [](TrainConfig& c) -> double& { return c.lr.position_final; },
                  "final position learning rate (times scene extent)", d, p);
    o.add<double>(app, "--lr-sh-dc", [](TrainConfig& c) -> double& { return c.lr.sh_dc; }, "SH band-0 learning rate", d, p);
    o.add<double>(app, "--lr-sh-rest", [](TrainConfig& c) -> double& { return c.lr.sh_rest; },
                  "higher SH bands learning rate", d, p);
    o.add<double>(app, "--lr-opacity", [](TrainConfig& c) -> double& { return c.lr.opacity; }, "opacity learning rate", d, p);
    o.add<double>(app, "--lr-scale", [](TrainConfig& c) -> double& { return c.lr.scale; }, "log-scale learning rate", d, p);
    o.add<double>(app, "--lr-rotation", [](TrainConfig& c) -> double& { return c.lr.rotation; }, "rotation learning rate",
                  d, p);
    o.add<double>(app, "--lr-networks", [](TrainConfig& c) -> double& { return c.lr.networks; },
                  "weighting and correction network learning rate", d, p);
    o.add<double>(app, "--lr-embeddings", [](TrainConfig& c) -> double& { return c.lr.embeddings; },
                  "embedding learning rate", d, p);
    o.add<int>(app, "--densify-interval", [](TrainConfig& c) -> int& { return c.densify_interval; },
               "iterations between densification steps", d, p);
    o.add<double>(app, "--densify-threshold", [](TrainConfig& c) -> double& { return c.densify_threshold; },
                  "mean screen-space gradient that triggers densification", d, p);
    o.add<int>(app, "--densify-from", [](TrainConfig& c) -> int& { return c.densify_from; },
               "first densification iteration", d, p);
    o.add<int>(app, "--densify-until", [](TrainConfig& c) -> int& { return c.densify_until; },
               "densification stop iteration (capped at half the iterations)", d, p);
    o.add<double>(app, "--clone-scale", [](TrainConfig& c) -> double& { return c.clone_scale; },
                  "clone/split boundary as a fraction of the scene extent", d, p);
    o.add<double>(app, "--prune-scale", [](TrainConfig& c) -> double& { return c.prune_scale; },
                  "prune Gaussians larger than this fraction of the scene extent", d, p);
    o.add<double>(app, "--prune-opacity", [](TrainConfig& c) -> double& { return c.prune_opacity; },
                  "prune Gaussians below this opacity", d, p);
    o.add<int>(app, "--opacity-reset-interval", [](TrainConfig& c) -> int& { return c.opacity_reset_interval; },
               "iterations between opacity resets", d, p);
    o.add<int>(app, "--reassign-interval", [](TrainConfig& c) -> int& { return c.reassign_interval; },
               "iterations between level reassignments", d, p);
    o.add<int>(app, "--sh-degree-interval", [](TrainConfig& c) -> int& { return c.sh_degree_interval; },
               "iterations per SH degree increase", d, p);
    o.add<std::size_t>(app, "--max-gaussians", [](TrainConfig& c) -> std::size_t& { return c.max_gaussians; },
                       "cap on the Gaussian count during densification (0 = none)", d, p);
    o.add<int>(app, "--log-interval", [](TrainConfig& c) -> int& { return c.log_interval; },
               "iterations between progress lines", d, p);
}

void add_init_overrides(CLI::App* app, Overrides<InitSettings>& o) {
    const auto d = InitSettings::preset(train::Preset::Desk), p = InitSettings::preset(train::Preset::Full);
    o.add<int>(app, "--levels", [](InitSettings& s) -> int& { return s.pyramid.levels; }, "pyramid levels L", d, p);
    o.add<std::size_t>(app, "--n1", [](InitSettings& s) -> std::size_t& { return s.pyramid.base; },
                       "level-1 point count N_1 (level l gets l * N_1)", d, p);
    o.add<int>(app, "--clusters", [](InitSettings& s) -> int& { return s.clusters; }, "k-means cluster count K", d, p);
    o.add<std::size_t>(app, "--points", [](InitSettings& s) -> std::size_t& { return s.points; },
                       "point cloud size N_P (0 = sum of level sizes)", d, p);
    o.add<int>(app, "--field-resolution", [](InitSettings& s) -> int& { return s.field.resolution; },
               "voxel field vertices per axis", d, p);
    o.add<int>(app, "--field-steps", [](InitSettings& s) -> int& { return s.field.steps; }, "field optimization steps", d,
               p);
    o.add<int>(app, "--field-rays", [](InitSettings& s) -> int& { return s.field.rays_per_batch; }, "rays per field batch",
               d, p);
    o.add<int>(app, "--field-samples", [](InitSettings& s) -> int& { return s.field.samples; },
               "samples per ray while fitting the field", d, p);
    o.add<double>(app, "--field-grid-lr", [](InitSettings& s) -> double& { return s.field.grid_lr; }, "field grid learning rate",
                  d, p);
    o.add<double>(app, "--field-head-lr", [](InitSettings& s) -> double& { return s.field.head_lr; },
                  "field color head learning rate", d, p);
    o.add<int>(app, "--termination-samples", [](InitSettings& s) -> int& { return s.cloud.samples; },
               "samples per ray for the termination depth", d, p);
    o.add<std::size_t>(app, "--kmeans-subset", [](InitSettings& s) -> std::size_t& { return s.kmeans.subset; },
                       "k-means working subset cap", d, p);
    o.add<std::size_t>(app, "--kmeans-batch", [](InitSettings& s) -> std::size_t& { return s.kmeans.batch; },
                       "k-means mini-batch size", d, p);
    o.add<int>(app, "--kmeans-iterations", [](InitSettings& s) -> int& { return s.kmeans.iterations; },
               "k-means iterations", d, p);
}

void add_common(CLI::App* app, Settings& s) {
    app->add_option("--preset", s.preset_name, "desk or full scale defaults")->check(CLI::IsMember({"desk", "full"}));
    app->add_option("--threads", s.threads, "worker threads (0 = all cores)");
    app->add_flag("--deterministic", s.deterministic, "single-threaded, bit-reproducible execution");
    app->add_option("--seed", s.seed, "random seed");
    app->add_option("--test-every", s.test_every, "every n-th frame is held out for testing (0 = none)");
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    io::write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- synth ----------------------------------------------------------------------------

int cmd_synth(const synth::SynthConfig& config, const fs::path& out_dir, std::ostream& out) {
    const auto data = synth::make_dataset(config);
    synth::write_dataset(data, out_dir);
    out << "views\tgaussians\twidth\theight\n"
        << data.cameras.size() << '\t' << data.truth.gaussians.size() << '\t' << config.width << '\t' << config.height
        << '\n';
    return kExitOk;
}

// ---- init-points ----------------------------------------------------------------------

int cmd_init_points(const Settings& s, InitSettings init, const fs::path& data_path, const fs::path& out_dir,
                    std::ostream& out) {
    const int threads = s.worker_threads();
    if (init.pyramid.levels < 1 || init.pyramid.levels > 255) throw ConfigError("--levels must be in 1..255");
    if (init.pyramid.base < 1) throw ConfigError("--n1 must be positive");
    if (init.clusters < 1) throw ConfigError("--clusters must be positive");
    const auto data = io::load_dataset(data_path, s.test_every, threads);
    const auto bounds = io::scene_bounds(data);
    const auto cameras = data.train_cameras();
    const auto images = data.train_images();
    fs::create_directories(out_dir);

    auto t0 = std::chrono::steady_clock::now();
    init.field.seed = s.seed;
    init.field.threads = threads;
    init.field.background = data.background.cast<double>();
    field::FieldTrainReport field_report;
    const auto f = field::train_field(
        cameras, images, bounds.field_box, init.field,
        [&](int step, double loss) {
            if (step % 100 == 0) spdlog::info("field step {} loss {:.6f}", step, loss);
        },
        &field_report);
    io::save_field(f, out_dir / "field.pygf");
    const double field_s = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    init.cloud.target = init.points > 0 ? init.points : init.pyramid.total();
    init.cloud.seed = s.seed;
    init.cloud.threads = threads;
    init::PointCloudReport cloud_report;
    const auto cloud = init::generate_point_cloud(f, cameras, init.cloud, &cloud_report);
    io::write_point_ply(cloud, out_dir / "points.ply");
    const double cloud_s = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    const auto subsets = init::sample_multiscale(cloud, init.pyramid, s.seed);
    for (int l = 1; l <= init.pyramid.levels; ++l)
        io::write_point_ply(subsets[l - 1], out_dir / fmt::format("level_{}.ply", l));
    const double subsets_s = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    init.kmeans.seed = s.seed;
    init.kmeans.threads = threads;
    const auto km = init::kmeans_centroids(cloud.positions, init.clusters, init.kmeans);
    io::PointCloud centroids;
    centroids.positions = km.centroids;
    centroids.colors.assign(km.centroids.size(), Vec3f::Zero());
    io::write_point_ply(centroids, out_dir / "centroids.ply");
    const double kmeans_s = seconds_since(t0);

    json meta{{"levels", init.pyramid.levels},
              {"n1", init.pyramid.base},
              {"clusters", init.clusters},
              {"points", cloud.size()},
              {"rays", cloud_report.rays},
              {"seed", s.seed},
              {"field_loss", field_report.final_loss}};
    write_text_atomic(out_dir / "init.json", meta.dump(2));

    out << "stage\tcount\tseconds\n";
    out << fmt::format("field\t{}\t{:.2f}\n", field_report.steps, field_s);
    out << fmt::format("point_cloud\t{}\t{:.2f}\n", cloud.size(), cloud_s);
    for (int l = 1; l <= init.pyramid.levels; ++l)
        out << fmt::format("level_{}\t{}\t{:.2f}\n", l, subsets[l - 1].size(), l == 1 ? subsets_s : 0.0);
    out << fmt::format("kmeans\t{}\t{:.2f}\n", km.centroids.size(), kmeans_s);
    return kExitOk;
}

// ---- train ----------------------------------------------------------------------------

struct TrainFlags {
    fs::path data, init, out, resume;
    int embedding_dim = nets::kDefaultEmbeddingDim;
    std::string weighting = "learned";
    std::string color_correction = "on";
    std::string ssim_term = "dissimilarity";
    int checkpoint_every = 1000;
    bool white_background = false;
};

const geom::Camera* probe_camera_of(const io::Dataset& data, std::optional<geom::Camera>& holder) {
    if (data.test.empty()) return nullptr;
    holder = data.cameras[data.test.front()];
    holder->index = -1;
    return &*holder;
}

int cmd_train(const Settings& s, const Overrides<train::TrainConfig>& overrides, const TrainFlags& f, std::ostream& out) {
    const int threads = s.worker_threads();
    const auto data = io::load_dataset(f.data, s.test_every, threads);
    const auto cameras = data.train_cameras();
    auto images = data.train_images();
    fs::create_directories(f.out);

    std::optional<field::VoxelField<float>> field;
    std::optional<train::Trainer> trainer;
    if (!f.resume.empty()) {
        const auto ck = io::load_checkpoint(f.resume);
        auto t = train::Trainer::from_checkpoint(ck, images);
        auto cfg = t.config();
        overrides.apply(cfg);
        cfg.validate();
        field = ck.field;
        train::TrainState st = t.state();
        trainer.emplace(std::move(st), ck.cameras, std::move(images), cfg);
    } else {
        if (f.init.empty()) throw ConfigError("train needs --init (or --resume)");
        auto cfg = train::TrainConfig::preset(s.preset());
        overrides.apply(cfg);
        cfg.seed = s.seed;
        cfg.deterministic = s.deterministic;
        cfg.threads = threads;
        cfg.ssim_term = f.ssim_term == "raw" ? metrics::SsimTerm::Raw : metrics::SsimTerm::Dissimilarity;
        cfg.background = f.white_background ? Vec3f::Ones() : data.background;
        cfg.validate();

        const auto meta_bytes = io::read_file(f.init / "init.json");
        json meta;
        try {
            meta = json::parse(meta_bytes.begin(), meta_bytes.end());
        } catch (const json::exception& e) {
            throw DataError(fmt::format("{}: {}", (f.init / "init.json").string(), e.what()));
        }
        const int levels = meta.value("levels", 0);
        if (levels < 1) throw DataError("init.json has no valid level count");
        const auto bounds = io::scene_bounds(data);
        GaussianSet<float> gaussians;
        for (int l = 1; l <= levels; ++l) {
            const auto subset = io::read_point_ply(f.init / fmt::format("level_{}.ply", l));
            gaussians.append(init::init_gaussians_from_points(subset, l, bounds.extent, threads));
        }
        const auto centroids = io::read_point_ply(f.init / "centroids.ply").positions;
        if (fs::exists(f.init / "field.pygf")) field = io::load_field(f.init / "field.pygf");

        init::ModelConfig mc;
        mc.levels = levels;
        mc.embedding_dim = f.embedding_dim;
        mc.cameras = static_cast<int>(cameras.size());
        mc.scene_box = bounds.scene_box;
        mc.scene_extent = bounds.extent;
        mc.weighting_mode = weighting_mode_from_string(f.weighting);
        mc.color_correction = f.color_correction == "on";
        mc.seed = s.seed;
        train::TrainState st;
        st.model = init::create_model(std::move(gaussians), centroids, mc, threads);
        trainer.emplace(std::move(st), cameras, std::move(images), cfg);
    }

    const auto ckpt_path = f.out / "checkpoint.pygs";
    auto save = [&](const train::Trainer& t) {
        auto ck = t.checkpoint();
        ck.field = field;
        io::save_checkpoint(ck, ckpt_path);
        spdlog::info("saved {} at iteration {}", ckpt_path.string(), t.state().iteration);
    };
    save(*trainer);
    if (trainer->config().iterations == 0 || static_cast<int>(trainer->state().iteration) >= trainer->config().iterations)
        return kExitOk;

    std::optional<geom::Camera> probe_holder;
    const geom::Camera* probe_cam = probe_camera_of(data, probe_holder);
    const Image<float>* probe_img = probe_cam ? &data.images[data.test.front()] : nullptr;
    std::uint64_t last_saved = trainer->state().iteration;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        trainer->run(&out, probe_cam, probe_img, [&](const train::Trainer& t) {
            if (f.checkpoint_every > 0 && t.state().iteration - last_saved >= static_cast<std::uint64_t>(f.checkpoint_every)) {
                save(t);
                last_saved = t.state().iteration;
            }
        });
    } catch (const NumericalError& e) {
        spdlog::error("{}; last good checkpoint kept at {}", e.what(), ckpt_path.string());
        return kExitNumerical;
    }
    spdlog::info("trained {} iterations in {:.1f} s", trainer->config().iterations, seconds_since(t0));
    save(*trainer);
    return kExitOk;
}

// ---- render / eval --------------------------------------------------------------------

struct View {
    int frame = 0;
    std::string name;
    geom::Camera camera; // index = appearance row or -1
    const Image<float>* truth = nullptr;
};

std::vector<View> select_views(const io::Checkpoint& ck, const io::Dataset* data, const std::string& split, int only) {
    std::vector<View> views;
    if (data) {
        std::vector<int> rows(data->cameras.size(), -1);
        for (std::size_t i = 0; i < data->train.size(); ++i) rows[data->train[i]] = static_cast<int>(i);
        std::vector<int> frames;
        if (split == "train") frames = data->train;
        else if (split == "test") frames = data->test;
        else
            for (std::size_t i = 0; i < data->cameras.size(); ++i) frames.push_back(static_cast<int>(i));
        for (int fi : frames) {
            View v{fi, data->names[fi], data->cameras[fi], &data->images[fi]};
            v.camera.index = rows[fi] < ck.model.cameras() ? rows[fi] : -1;
            views.push_back(std::move(v));
        }
    } else {
        for (std::size_t i = 0; i < ck.cameras.size(); ++i)
            views.push_back(View{static_cast<int>(i), fmt::format("camera_{}", i), ck.cameras[i], nullptr});
    }
    if (only >= 0) {
        if (only >= static_cast<int>(views.size()))
            throw DataError(fmt::format("camera index {} out of range ({} views)", only, views.size()));
        views = {views[only]};
    }
    return views;
}

Vec3f checkpoint_background(const io::Checkpoint& ck) {
    if (ck.config_json.empty()) return Vec3f::Zero();
    return train::TrainConfig::from_json(ck.config_json).background;
}

std::uint32_t parse_level_mask(const std::string& text, int levels) {
    if (text.empty()) return all_levels_mask(levels);
    std::uint32_t mask = 0;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        int l = 0;
        try {
            l = std::stoi(item);
        } catch (const std::exception&) {
            throw ConfigError("--enabled-levels expects comma-separated level numbers");
        }
        if (l < 1 || l > levels || l > 32) throw ConfigError(fmt::format("level {} out of range 1..{}", l, levels));
        mask |= 1u << (l - 1);
    }
    return mask;
}

struct RenderFlags {
    fs::path checkpoint, data, out, heatmaps;
    std::string split = "test";
    int camera = -1;
    std::string enabled_levels;
    bool no_correction = false;
};

ViewOptions view_options(const io::Checkpoint& ck, const RenderFlags& f, int threads) {
    ViewOptions opt;
    opt.background = checkpoint_background(ck);
    opt.enabled_levels = parse_level_mask(f.enabled_levels, ck.model.levels);
    opt.color_correction = !f.no_correction;
    opt.threads = threads;
    return opt;
}

int cmd_render(const Settings& s, const RenderFlags& f, std::ostream& out) {
    const int threads = s.worker_threads();
    const auto ck = io::load_checkpoint(f.checkpoint);
    std::optional<io::Dataset> data;
    if (!f.data.empty()) data = io::load_dataset(f.data, s.test_every, threads);
    const auto views = select_views(ck, data ? &*data : nullptr, f.split, f.camera);
    const auto opt = view_options(ck, f, threads);
    fs::create_directories(f.out);
    out << "frame\tpath\n";
    for (const auto& v : views) {
        const auto frame = render_frame(ck.model, v.camera, opt);
        const auto path = f.out / fmt::format("{:04d}.png", v.frame);
        io::write_png(path, frame.output.color);
        out << v.frame << '\t' << path.string() << '\n';
    }
    return kExitOk;
}

int cmd_eval(const Settings& s, const RenderFlags& f, std::ostream& out) {
    const int threads = s.worker_threads();
    const auto ck = io::load_checkpoint(f.checkpoint);
    if (f.data.empty()) throw ConfigError("eval needs --data");
    const auto data = io::load_dataset(f.data, s.test_every, threads);
    const auto views = select_views(ck, &data, f.split, f.camera);
    if (views.empty()) throw DataError("no views in the '" + f.split + "' split");
    const auto opt = view_options(ck, f, threads);
    if (!f.heatmaps.empty()) fs::create_directories(f.heatmaps);
    out << "frame\tname\tpsnr\tssim\n";
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (const auto& v : views) {
        const auto frame = render_frame(ck.model, v.camera, opt);
        const double psnr = metrics::compute_psnr(*v.truth, frame.output.color);
        const double ssim = metrics::compute_ssim(*v.truth, frame.output.color);
        psnr_sum += psnr;
        ssim_sum += ssim;
        out << fmt::format("{}\t{}\t{:.4f}\t{:.5f}\n", v.frame, v.name, psnr, ssim);
        if (!f.heatmaps.empty()) {
            const auto& mass = frame.output.level_mass;
            for (int l = 0; l < ck.model.levels; ++l) {
                Image<std::uint8_t> img(mass.width, mass.height, 1);
                for (int y = 0; y < mass.height; ++y)
                    for (int x = 0; x < mass.width; ++x)
                        img.at(x, y) = static_cast<std::uint8_t>(std::lround(std::clamp(mass.at(x, y, l), 0.0f, 1.0f) * 255.0f));
                io::write_png(f.heatmaps / fmt::format("{:04d}_level_{}.png", v.frame, l + 1), img);
            }
        }
    }
    const double n = static_cast<double>(views.size());
    out << fmt::format("mean\t-\t{:.4f}\t{:.5f}\n", psnr_sum / n, ssim_sum / n);
    return kExitOk;
}

// ---- serve / export / reassign --------------------------------------------------------

int cmd_serve(const Settings& s, const fs::path& checkpoint, serve::ServerOptions opt, std::ostream& out) {
    const auto ck = io::load_checkpoint(checkpoint);
    opt.render_threads = s.worker_threads();
    serve::Server server(serve::snapshot_scene(ck.model, ck.cameras, checkpoint_background(ck)), opt);
    const auto port = server.start();
    out << "url\thttp://" << opt.address << ':' << port << "/\n";
    out.flush();
    server.wait();
    return kExitOk;
}

int cmd_export_ply(const fs::path& checkpoint, const fs::path& path, int level, std::ostream& out) {
    const auto ck = io::load_checkpoint(checkpoint);
    if (level < 0 || level > ck.model.levels) throw ConfigError(fmt::format("--level must be in 0..{}", ck.model.levels));
    io::export_ply(ck.model.gaussians, path, level);
    std::size_t n = 0;
    for (auto l : ck.model.gaussians.levels) n += level == 0 || l == level;
    out << "path\tgaussians\n" << path.string() << '\t' << n << '\n';
    return kExitOk;
}

int cmd_reassign_clusters(const Settings& s, const fs::path& checkpoint, fs::path target, std::ostream& out) {
    auto ck = io::load_checkpoint(checkpoint);
    auto& g = ck.model.gaussians;
    const auto fresh = init::assign_clusters(g, ck.model.centroids, s.worker_threads());
    std::size_t changed = 0;
    for (std::size_t i = 0; i < g.size(); ++i) changed += fresh[i] != g.clusters[i];
    g.clusters = fresh;
    if (target.empty()) target = checkpoint;
    io::save_checkpoint(ck, target);
    out << "gaussians\tchanged\n" << g.size() << '\t' << changed << '\n';
    return kExitOk;
}

void setup_logging(const std::string& level) {
    if (!spdlog::get("pygs")) spdlog::set_default_logger(spdlog::stderr_color_mt("pygs"));
    spdlog::set_level(spdlog::level::from_str(level));
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out) {
    CLI::App app{"Pyramidal Gaussian splatting: toy data, initialization, training, rendering and serving"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
    Settings s;

    synth::SynthConfig synth_cfg;
    fs::path synth_out;
    auto* synth_cmd = app.add_subcommand("synth", "write a synthetic toy dataset");
    synth_cmd->add_option("--out", synth_out, "output directory")->required();
    std::string synth_kind = "random";
    synth_cmd->add_option("--kind", synth_kind, "random or multiscale")->check(CLI::IsMember({"random", "multiscale"}));
    synth_cmd->add_option("--gaussians", synth_cfg.gaussians, "ground-truth Gaussian count");
    synth_cmd->add_option("--views", synth_cfg.views, "number of posed images");
    synth_cmd->add_option("--width", synth_cfg.width, "image width");
    synth_cmd->add_option("--height", synth_cfg.height, "image height");
    synth_cmd->add_option("--exposure-jitter", synth_cfg.exposure_jitter, "per-image gain range for training views");
    synth_cmd->add_option("--test-every", synth_cfg.test_every, "held-out views (index % n == 0) keep unit gain");
    synth_cmd->add_option("--seed", synth_cfg.seed, "random seed");
    synth_cmd->add_option("--threads", s.threads, "worker threads (0 = all cores)");

    Overrides<InitSettings> init_over;
    fs::path init_data, init_out;
    auto* init_cmd = app.add_subcommand("init-points", "fit the coarse field, sample level subsets and cluster centroids");
    init_cmd->add_option("--data", init_data, "dataset directory or transforms.json")->required();
    init_cmd->add_option("--out", init_out, "output directory for initialization artifacts")->required();
    add_common(init_cmd, s);
    add_init_overrides(init_cmd, init_over);

    Overrides<train::TrainConfig> train_over;
    TrainFlags tf;
    auto* train_cmd = app.add_subcommand("train", "optimize the pyramid and write checkpoints");
    train_cmd->add_option("--data", tf.data, "dataset directory or transforms.json")->required();
    train_cmd->add_option("--init", tf.init, "init-points output directory");
    train_cmd->add_option("--out", tf.out, "output directory")->required();
    train_cmd->add_option("--resume", tf.resume, "continue from this checkpoint");
    add_common(train_cmd, s);
    add_train_overrides(train_cmd, train_over);
    train_cmd->add_option("--embedding-dim", tf.embedding_dim, "embedding width D");
    train_cmd->add_option("--weighting", tf.weighting, "level weighting: learned, uniform, random or top1")
        ->check(CLI::IsMember({"learned", "uniform", "random", "top1"}));
    train_cmd->add_option("--color-correction", tf.color_correction, "per-Gaussian color correction")
        ->check(CLI::IsMember({"on", "off"}));
    train_cmd->add_option("--ssim-term", tf.ssim_term, "SSIM loss term: dissimilarity (1 - SSIM) or raw")
        ->check(CLI::IsMember({"dissimilarity", "raw"}));
    train_cmd->add_option("--checkpoint-every", tf.checkpoint_every, "iterations between checkpoint writes (0 = end only)");
    train_cmd->add_flag("--white-background", tf.white_background, "composite over white instead of the dataset background");

    RenderFlags rf;
    auto* render_cmd = app.add_subcommand("render", "render views of a checkpoint to PNG");
    auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM of a checkpoint against dataset images");
    for (auto* cmd : {render_cmd, eval_cmd}) {
        cmd->add_option("--checkpoint", rf.checkpoint, "checkpoint file")->required();
        cmd->add_option("--data", rf.data, "dataset (render: optional, defaults to the checkpoint's training cameras)");
        cmd->add_option("--split", rf.split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
        cmd->add_option("--camera", rf.camera, "only this position within the selected views (-1 = all)");
        cmd->add_option("--enabled-levels", rf.enabled_levels, "comma-separated levels to draw (empty = all)");
        cmd->add_flag("--no-correction", rf.no_correction, "disable color correction");
        cmd->add_option("--threads", s.threads, "worker threads (0 = all cores)");
        cmd->add_flag("--deterministic", s.deterministic, "single-threaded execution");
        cmd->add_option("--test-every", s.test_every, "every n-th frame is held out for testing (0 = none)");
    }
    render_cmd->add_option("--out", rf.out, "output directory")->required();
    eval_cmd->add_option("--heatmaps", rf.heatmaps, "write per-level weight-mass images to this directory");

    fs::path serve_ckpt;
    serve::ServerOptions serve_opt;
    serve_opt.web_root = PYGS_WEB_DIR;
    auto* serve_cmd = app.add_subcommand("serve", "interactive render service (HTTP + WebSocket)");
    serve_cmd->add_option("--checkpoint", serve_ckpt, "checkpoint file")->required();
    serve_cmd->add_option("--address", serve_opt.address, "bind address");
    serve_cmd->add_option("--port", serve_opt.port, "TCP port (0 = any free port)");
    serve_cmd->add_option("--web-root", serve_opt.web_root, "static viewer bundle directory");
    serve_cmd->add_option("--render-workers", serve_opt.render_workers, "concurrent renders across connections");
    serve_cmd->add_option("--threads", s.threads, "threads per render (0 = all cores)");

    fs::path export_ckpt, export_out;
    int export_level = 0;
    auto* export_cmd = app.add_subcommand("export-ply", "write Gaussians as a 3DGS-style PLY");
    export_cmd->add_option("--checkpoint", export_ckpt, "checkpoint file")->required();
    export_cmd->add_option("--out", export_out, "output PLY")->required();
    export_cmd->add_option("--level", export_level, "only this level (0 = all)");

    fs::path reassign_ckpt, reassign_out;
    auto* reassign_cmd = app.add_subcommand("reassign-clusters", "recompute nearest-centroid clusters of a checkpoint");
    reassign_cmd->add_option("--checkpoint", reassign_ckpt, "checkpoint file")->required();
    reassign_cmd->add_option("--out", reassign_out, "output checkpoint (default: overwrite)");
    reassign_cmd->add_option("--threads", s.threads, "worker threads (0 = all cores)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, std::cerr);
        return code == 0 ? kExitOk : kExitUsage;
    }
    setup_logging(log_level);

    try {
        if (*synth_cmd) {
            synth_cfg.kind = synth::scene_kind_from_string(synth_kind);
            synth_cfg.threads = s.worker_threads();
            return cmd_synth(synth_cfg, synth_out, out);
        }
        if (*init_cmd) {
            auto init = InitSettings::preset(s.preset());
            init_over.apply(init);
            return cmd_init_points(s, init, init_data, init_out, out);
        }
        if (*train_cmd) return cmd_train(s, train_over, tf, out);
        if (*render_cmd) return cmd_render(s, rf, out);
        if (*eval_cmd) return cmd_eval(s, rf, out);
        if (*serve_cmd) return cmd_serve(s, serve_ckpt, serve_opt, out);
        if (*export_cmd) return cmd_export_ply(export_ckpt, export_out, export_level, out);
        if (*reassign_cmd) return cmd_reassign_clusters(s, reassign_ckpt, reassign_out, out);
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return kExitUsage;
    } catch (const NumericalError& e) {
        spdlog::error("{}", e.what());
        return kExitNumerical;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kExitData;
    }
    return kExitUsage;
}

} // namespace pygs::cli
