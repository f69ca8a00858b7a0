// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/train.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

namespace pygs::train {

using nlohmann::json;
using metrics::compute_psnr;
using metrics::LossOptions;
using metrics::photometric_loss;
using metrics::SsimTerm;

Preset preset_from_string(std::string_view s) {
    if (s == "desk") return Preset::Desk;
    if (s == "full") return Preset::Full;
    throw ConfigError(fmt::format("unknown preset '{}' (expected desk or full)", s));
}

std::string_view to_string(Preset p) { return p == Preset::Desk ? "desk" : "full"; }

TrainConfig TrainConfig::preset(Preset p) {
    TrainConfig c;
    if (p == Preset::Full) {
        c.iterations = 200000;
        c.lr.position_init = 1.6e-5;
        c.lr.position_final = 1.6e-7;
    }
    return c;
}

double TrainConfig::position_lr(int iteration, float scene_extent) const {
    const double r = iterations > 0 ? std::clamp(static_cast<double>(iteration) / iterations, 0.0, 1.0) : 1.0;
    const double a = lr.position_init, b = lr.position_final;
    const double rate = (a > 0.0 && b > 0.0) ? std::exp((1.0 - r) * std::log(a) + r * std::log(b)) : (1.0 - r) * a + r * b;
    return rate * scene_extent;
}

void TrainConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError(what);
    };
    require(lambda >= 0.0 && lambda <= 1.0, "lambda must lie in [0, 1]");
    require(iterations >= 0, "iterations must be non-negative");
    for (double v : {lr.position_init, lr.position_final, lr.sh_dc, lr.sh_rest, lr.opacity, lr.scale, lr.rotation,
                     lr.networks, lr.embeddings})
        require(std::isfinite(v) && v >= 0.0, "learning rates must be finite and non-negative");
    require(densify_interval >= 1, "densify interval must be at least 1");
    require(opacity_reset_interval >= 1, "opacity reset interval must be at least 1");
    require(reassign_interval >= 1, "level reassign interval must be at least 1");
    require(sh_degree_interval >= 1, "SH degree interval must be at least 1");
    require(log_interval >= 1, "log interval must be at least 1");
    require(densify_threshold >= 0.0, "densify threshold must be non-negative");
    require(prune_opacity >= 0.0 && prune_opacity < 1.0, "prune opacity must lie in [0, 1)");
    require(clone_scale > 0.0 && prune_scale > 0.0, "clone and prune scale fractions must be positive");
    require(threads >= 0, "threads must be non-negative");
    require(background.allFinite(), "background must be finite");
}

std::string TrainConfig::to_json() const {
    json j;
    j["lambda"] = lambda;
    j["ssim_term"] = ssim_term == SsimTerm::Dissimilarity ? "dissimilarity" : "raw";
    j["iterations"] = iterations;
    j["lr"] = {{"position_init", lr.position_init}, {"position_final", lr.position_final}, {"sh_dc", lr.sh_dc},
               {"sh_rest", lr.sh_rest},             {"opacity", lr.opacity},               {"scale", lr.scale},
               {"rotation", lr.rotation},           {"networks", lr.networks},             {"embeddings", lr.embeddings}};
    j["densify_interval"] = densify_interval;
    j["densify_threshold"] = densify_threshold;
    j["densify_from"] = densify_from;
    j["densify_until"] = densify_until;
    j["clone_scale"] = clone_scale;
    j["prune_scale"] = prune_scale;
    j["prune_opacity"] = prune_opacity;
    j["opacity_reset_interval"] = opacity_reset_interval;
    j["reassign_interval"] = reassign_interval;
    j["sh_degree_interval"] = sh_degree_interval;
    j["max_gaussians"] = max_gaussians;
    j["background"] = {background[0], background[1], background[2]};
    j["log_interval"] = log_interval;
    j["seed"] = seed;
    j["deterministic"] = deterministic;
    j["threads"] = threads;
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    TrainConfig c;
    json j;
    try {
        j = json::parse(text);
        c.lambda = j.value("lambda", c.lambda);
        c.ssim_term = j.value("ssim_term", std::string("dissimilarity")) == "raw" ? SsimTerm::Raw : SsimTerm::Dissimilarity;
        c.iterations = j.value("iterations", c.iterations);
        if (j.contains("lr")) {
            const auto& l = j.at("lr");
            c.lr.position_init = l.value("position_init", c.lr.position_init);
            c.lr.position_final = l.value("position_final", c.lr.position_final);
            c.lr.sh_dc = l.value("sh_dc", c.lr.sh_dc);
            c.lr.sh_rest = l.value("sh_rest", c.lr.sh_rest);
            c.lr.opacity = l.value("opacity", c.lr.opacity);
            c.lr.scale = l.value("scale", c.lr.scale);
            c.lr.rotation = l.value("rotation", c.lr.rotation);
            c.lr.networks = l.value("networks", c.lr.networks);
            c.lr.embeddings = l.value("embeddings", c.lr.embeddings);
        }
        c.densify_interval = j.value("densify_interval", c.densify_interval);
        c.densify_threshold = j.value("densify_threshold", c.densify_threshold);
        c.densify_from = j.value("densify_from", c.densify_from);
        c.densify_until = j.value("densify_until", c.densify_until);
        c.clone_scale = j.value("clone_scale", c.clone_scale);
        c.prune_scale = j.value("prune_scale", c.prune_scale);
        c.prune_opacity = j.value("prune_opacity", c.prune_opacity);
        c.opacity_reset_interval = j.value("opacity_reset_interval", c.opacity_reset_interval);
        c.reassign_interval = j.value("reassign_interval", c.reassign_interval);
        c.sh_degree_interval = j.value("sh_degree_interval", c.sh_degree_interval);
        c.max_gaussians = j.value("max_gaussians", c.max_gaussians);
        if (j.contains("background")) {
            const auto& b = j.at("background");
            c.background = Vec3f(b.at(0).get<float>(), b.at(1).get<float>(), b.at(2).get<float>());
        }
        c.log_interval = j.value("log_interval", c.log_interval);
        c.seed = j.value("seed", c.seed);
        c.deterministic = j.value("deterministic", c.deterministic);
        c.threads = j.value("threads", c.threads);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid training configuration: ") + e.what());
    }
    c.validate();
    return c;
}

// ---- optimizer state ------------------------------------------------------------------

namespace {

template <typename O, typename Fn> void for_each_named(O& o, Fn&& fn) {
    fn("positions", o.positions);
    fn("rotations", o.rotations);
    fn("log_scales", o.log_scales);
    fn("opacity_logits", o.opacity_logits);
    fn("sh_dc", o.sh_dc);
    fn("sh_rest", o.sh_rest);
    fn("cluster_embedding", o.cluster_embedding);
    fn("appearance_embedding", o.appearance_embedding);
    fn("weighting", o.weighting);
    fn("correction", o.correction);
}

template <typename Mat> std::span<float> flat(Mat& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
template <typename Mat> std::span<const float> flat_const(const Mat& m) {
    return {m.data(), static_cast<std::size_t>(m.size())};
}

bool finite(std::span<const float> v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

} // namespace

std::vector<io::OptimizerMoments> Optimizers::export_moments() const {
    std::vector<io::OptimizerMoments> out;
    for_each_named(*this, [&](const char* name, const AdamState<float>& s) {
        out.push_back({name, s.step, s.m, s.v});
    });
    return out;
}

void Optimizers::import_moments(const std::vector<io::OptimizerMoments>& moments) {
    for_each_named(*this, [&](const char* name, AdamState<float>& s) {
        for (const auto& m : moments)
            if (m.name == name) {
                s.step = m.step;
                s.m = m.m;
                s.v = m.v;
            }
    });
}

// ---- level reassignment ---------------------------------------------------------------

std::vector<std::size_t> level_targets(std::size_t n, int levels) {
    const std::size_t total_weight = static_cast<std::size_t>(levels) * (levels + 1) / 2;
    std::vector<std::size_t> out(levels);
    std::size_t prev = 0;
    for (int l = 1; l <= levels; ++l) {
        const std::size_t cum_weight = static_cast<std::size_t>(l) * (l + 1) / 2;
        // round(n * cum_weight / total_weight) in integer arithmetic
        const std::size_t cum = (2 * n * cum_weight + total_weight) / (2 * total_weight);
        out[l - 1] = cum - prev;
        prev = cum;
    }
    return out;
}

std::size_t reassign_levels(GaussianSet<float>& g, int levels) {
    const std::size_t n = g.size();
    std::vector<float> key(n);
    for (std::size_t i = 0; i < n; ++i)
        key[i] = std::max({g.log_scales[3 * i], g.log_scales[3 * i + 1], g.log_scales[3 * i + 2]});
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return key[a] > key[b]; });
    const auto targets = level_targets(n, levels);
    std::size_t changed = 0, pos = 0;
    for (int l = 1; l <= levels; ++l)
        for (std::size_t j = 0; j < targets[l - 1]; ++j, ++pos) {
            auto& lv = g.levels[order[pos]];
            if (lv != l) ++changed;
            lv = static_cast<std::uint8_t>(l);
        }
    return changed;
}

// ---- density control ------------------------------------------------------------------

void reset_opacity(TrainState& state) {
    const float cap = logit(0.01f);
    for (auto& o : state.model.gaussians.opacity_logits) o = std::min(o, cap);
    auto& s = state.optim.opacity_logits;
    std::fill(s.m.begin(), s.m.end(), 0.0f);
    std::fill(s.v.begin(), s.v.end(), 0.0f);
}

DensifyReport densify(TrainState& state, const TrainConfig& config, double position_lr, std::uint64_t rng_seed) {
    auto& g = state.model.gaussians;
    const std::size_t n = g.size();
    const double extent = state.model.scene_extent;
    state.grad_accum.resize(n, 0.0f);
    state.grad_count.resize(n, 0);

    std::vector<std::uint32_t> candidates;
    std::vector<float> mean_grad(n, 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
        if (state.grad_count[i] > 0) mean_grad[i] = state.grad_accum[i] / static_cast<float>(state.grad_count[i]);
        if (mean_grad[i] > config.densify_threshold) candidates.push_back(static_cast<std::uint32_t>(i));
    }
    if (config.max_gaussians > 0) {
        const std::size_t budget = config.max_gaussians > n ? config.max_gaussians - n : 0;
        if (candidates.size() > budget) {
            std::stable_sort(candidates.begin(), candidates.end(),
                             [&](std::uint32_t a, std::uint32_t b) { return mean_grad[a] > mean_grad[b]; });
            candidates.resize(budget);
            std::sort(candidates.begin(), candidates.end());
        }
    }

    const double clone_limit = config.clone_scale * extent;
    std::vector<std::uint32_t> clones, splits;
    std::vector<bool> split_parent(n, false);
    for (auto i : candidates) {
        if (g.max_scale(i) <= clone_limit) {
            clones.push_back(i);
        } else {
            splits.push_back(i);
            split_parent[i] = true;
        }
    }

    DensifyReport report;
    for (std::uint32_t i = 0; i < n; ++i)
        if (!split_parent[i]) {
            report.source.push_back(i);
            report.created.push_back(false);
        }
    for (auto i : clones) {
        report.source.push_back(i);
        report.created.push_back(true);
    }
    for (auto i : splits)
        for (int c = 0; c < 2; ++c) {
            report.source.push_back(i);
            report.created.push_back(true);
        }
    GaussianSet<float> next = g.select(report.source);

    // Clones take one optimizer step along the accumulated position moment.
    const auto& pm = state.optim.positions;
    const std::size_t first_clone = n - splits.size();
    if (pm.step > 0 && pm.m.size() == 3 * n) {
        const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(pm.step));
        const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(pm.step));
        for (std::size_t c = 0; c < clones.size(); ++c) {
            const std::size_t src = clones[c], dst = first_clone + c;
            for (int a = 0; a < 3; ++a) {
                const double m = pm.m[3 * src + a] / bc1, v = pm.v[3 * src + a] / bc2;
                next.positions[3 * dst + a] -= static_cast<float>(position_lr * m / (std::sqrt(v) + 1e-15));
            }
        }
    }
    // Split children are drawn from the parent's own Gaussian and shrink by 1.6.
    std::mt19937_64 rng(rng_seed);
    std::normal_distribution<float> nd(0.0f, 1.0f);
    const float shrink = std::log(1.6f);
    const std::size_t first_child = first_clone + clones.size();
    for (std::size_t s = 0; s < splits.size(); ++s) {
        const std::size_t src = splits[s];
        const Vec4<float> q = g.rotation(src);
        const Mat3<float> r = geom::quaternion_to_matrix(q);
        const Vec3<float> scale = g.log_scale(src).array().exp().matrix();
        for (int c = 0; c < 2; ++c) {
            const std::size_t dst = first_child + 2 * s + c;
            const Vec3<float> z(nd(rng), nd(rng), nd(rng));
            const Vec3<float> offset = r * scale.cwiseProduct(z);
            for (int a = 0; a < 3; ++a) {
                next.positions[3 * dst + a] += offset[a];
                next.log_scales[3 * dst + a] -= shrink;
            }
        }
    }

    // Prune over the densified set.
    const double prune_limit = config.prune_scale * extent * (1.0 + 1e-4);
    std::vector<std::uint32_t> keep;
    for (std::uint32_t j = 0; j < next.size(); ++j) {
        const bool transparent = next.opacity(j) < config.prune_opacity;
        const bool huge = next.max_scale(j) > prune_limit;
        if (transparent || huge) {
            ++report.pruned;
            continue;
        }
        keep.push_back(j);
    }
    report.cloned = clones.size();
    report.split = splits.size();

    GaussianSet<float> final_set = next.select(keep);
    std::vector<std::uint32_t> source(keep.size());
    std::vector<bool> created(keep.size());
    for (std::size_t j = 0; j < keep.size(); ++j) {
        source[j] = report.source[keep[j]];
        created[j] = report.created[keep[j]];
    }
    report.source = std::move(source);
    report.created = std::move(created);

    state.optim.for_each_gaussian_group([&](AdamState<float>& s, int width) {
        const std::size_t w = static_cast<std::size_t>(width);
        std::vector<float> m(keep.size() * w, 0.0f), v(keep.size() * w, 0.0f);
        if (s.m.size() == n * w) {
            for (std::size_t j = 0; j < keep.size(); ++j) {
                if (report.created[j]) continue;
                std::copy_n(s.m.begin() + report.source[j] * w, w, m.begin() + j * w);
                std::copy_n(s.v.begin() + report.source[j] * w, w, v.begin() + j * w);
            }
        }
        s.m = std::move(m);
        s.v = std::move(v);
    });
    g = std::move(final_set);
    state.grad_accum.assign(g.size(), 0.0f);
    state.grad_count.assign(g.size(), 0);
    return report;
}

// ---- trainer --------------------------------------------------------------------------

Trainer::Trainer(TrainState state, std::vector<geom::Camera> cameras, std::vector<Image<float>> images, TrainConfig config)
    : state_(std::move(state)), cameras_(std::move(cameras)), images_(std::move(images)), config_(std::move(config)) {
    config_.validate();
    if (cameras_.empty()) throw DataError("training needs at least one camera");
    if (cameras_.size() != images_.size()) throw DataError("camera and image counts differ");
    for (std::size_t i = 0; i < cameras_.size(); ++i) {
        if (images_[i].width != cameras_[i].width || images_[i].height != cameras_[i].height || images_[i].channels != 3)
            throw DataError(fmt::format("training image {} does not match its camera", i));
        if (cameras_[i].index >= state_.model.cameras())
            throw DataError(fmt::format("camera {} has appearance row {} but the model has {}", i, cameras_[i].index,
                                        state_.model.cameras()));
    }
    state_.grad_accum.resize(state_.model.gaussians.size(), 0.0f);
    state_.grad_count.resize(state_.model.gaussians.size(), 0);
}

int Trainer::image_for_iteration(std::uint64_t iteration) const {
    const std::uint64_t n = cameras_.size();
    const std::uint64_t epoch = iteration / n;
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(config_.seed * 0x9E3779B97F4A7C15ull + epoch);
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
    }
    return order[iteration % n];
}

ViewOptions Trainer::view_options(const geom::Camera&) const {
    ViewOptions opt;
    opt.background = config_.background;
    opt.threads = threads();
    return opt;
}

StepResult Trainer::step() {
    auto& model = state_.model;
    if (model.gaussians.empty()) throw NumericalError("scene has no Gaussians left");
    const int it = static_cast<int>(state_.iteration);
    const int idx = image_for_iteration(state_.iteration);
    const auto& cam = cameras_[idx];
    const auto& gt = images_[idx];

    ViewOptions opt = view_options(cam);
    opt.active_sh_degree = std::min(model.sh_degree, it / config_.sh_degree_interval);
    opt.random_seed = config_.seed ^ (state_.iteration * 0xD1B54A32D192ED03ull);
    const auto frame = render_frame(model, cam, opt);
    Image<float> dcolor;
    const LossOptions lo{config_.lambda, config_.ssim_term};
    const float loss = photometric_loss(gt, frame.output.color, lo, &dcolor);
    if (!std::isfinite(loss)) throw NumericalError(fmt::format("non-finite loss at iteration {}", it));
    auto grads = render_frame_backward(model, frame, dcolor);

    bool ok = finite(grads.weighting) && finite(grads.correction) && finite(flat_const(grads.cluster_embedding)) &&
              finite(flat_const(grads.appearance_embedding));
    grads.gaussians.for_each_attribute([&](const std::vector<float>& v, int) { ok = ok && finite(v); });
    if (!ok) throw NumericalError(fmt::format("non-finite gradient at iteration {}", it));

    auto& o = state_.optim;
    auto& g = model.gaussians;
    const auto& dg = grads.gaussians;
    auto adam = [](AdamState<float>& s, std::span<float> p, std::span<const float> d, double lr) {
        s.step_update(p, d, AdamParams{lr, 0.9, 0.999, 1e-15});
    };
    adam(o.positions, g.positions, dg.positions, config_.position_lr(it, model.scene_extent));
    adam(o.rotations, g.rotations, dg.rotations, config_.lr.rotation);
    adam(o.log_scales, g.log_scales, dg.log_scales, config_.lr.scale);
    adam(o.opacity_logits, g.opacity_logits, dg.opacity_logits, config_.lr.opacity);
    adam(o.sh_dc, g.sh_dc, dg.sh_dc, config_.lr.sh_dc);
    adam(o.sh_rest, g.sh_rest, dg.sh_rest, config_.lr.sh_rest);
    adam(o.cluster_embedding, flat(model.embeddings.cluster), flat_const(grads.cluster_embedding), config_.lr.embeddings);
    adam(o.appearance_embedding, flat(model.embeddings.appearance), flat_const(grads.appearance_embedding),
         config_.lr.embeddings);
    adam(o.weighting, model.weighting.params(), grads.weighting, config_.lr.networks);
    adam(o.correction, model.correction.params(), grads.correction, config_.lr.networks);

    // Quaternions are normalized when building covariances; rescale stored values only
    // when they drift far enough to hurt the optimizer's step size.
    for (std::size_t i = 0; i < g.size(); ++i) {
        const float norm = g.rotation(i).norm();
        if (norm > 0.0f && (norm < 0.5f || norm > 2.0f))
            for (int a = 0; a < 4; ++a) g.rotations[4 * i + a] /= norm;
    }

    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!frame.job.gaussians.valid[i]) continue;
        state_.grad_accum[i] += grads.screen_grad_norm[i];
        ++state_.grad_count[i];
    }
    ++state_.iteration;
    return {loss, compute_psnr(gt, frame.output.color)};
}

void Trainer::after_step() {
    const int t = static_cast<int>(state_.iteration);
    if (t < config_.effective_densify_until()) {
        if (t > config_.densify_from && t % config_.densify_interval == 0) {
            const GaussianSet<float> before = on_densify ? state_.model.gaussians : GaussianSet<float>{};
            const auto report =
                densify(state_, config_, config_.position_lr(t, state_.model.scene_extent), config_.seed ^ (0xA5A5ull * t));
            spdlog::debug("iteration {}: cloned {}, split {}, pruned {}, now {} Gaussians", t, report.cloned, report.split,
                          report.pruned, state_.model.gaussians.size());
            if (on_densify) on_densify(report, before);
        }
        if (t % config_.opacity_reset_interval == 0) reset_opacity(state_);
    }
    if (t % config_.reassign_interval == 0 && t < config_.iterations)
        reassign_levels(state_.model.gaussians, state_.model.levels);
}

double Trainer::probe_psnr(const geom::Camera& cam, const Image<float>& gt) const {
    ViewOptions opt = view_options(cam);
    return compute_psnr(gt, render_frame(state_.model, cam, opt).output.color);
}

std::string progress_header(int levels) {
    std::string h = "iteration\tloss\ttrain_psnr\tprobe_psnr\tgaussians";
    for (int l = 1; l <= levels; ++l) h += fmt::format("\tlevel_{}", l);
    return h;
}

void Trainer::run(std::ostream* log, const geom::Camera* probe_camera, const Image<float>* probe_image,
                  const std::function<void(const Trainer&)>& on_interval) {
    const geom::Camera& pcam = probe_camera ? *probe_camera : cameras_.front();
    const Image<float>& pimg = probe_image ? *probe_image : images_.front();
    if (log) *log << progress_header(state_.model.levels) << '\n';
    double loss_sum = 0.0, psnr_sum = 0.0;
    int loss_n = 0;
    while (static_cast<int>(state_.iteration) < config_.iterations) {
        const auto r = step();
        loss_sum += r.loss;
        psnr_sum += r.psnr;
        ++loss_n;
        after_step();
        const int t = static_cast<int>(state_.iteration);
        if (t % config_.log_interval == 0 || t == config_.iterations) {
            if (log) {
                std::vector<std::size_t> counts(state_.model.levels, 0);
                for (auto l : state_.model.gaussians.levels) ++counts[l - 1];
                const int n = std::max(1, loss_n);
                *log << fmt::format("{}\t{:.6f}\t{:.4f}\t{:.4f}\t{}", t, loss_sum / n, psnr_sum / n,
                                    probe_psnr(pcam, pimg), state_.model.gaussians.size());
                for (auto c : counts) *log << '\t' << c;
                *log << '\n';
                log->flush();
            }
            loss_sum = psnr_sum = 0.0;
            loss_n = 0;
            if (on_interval) on_interval(*this);
        }
    }
}

io::Checkpoint Trainer::checkpoint() const {
    io::Checkpoint ck;
    ck.model = state_.model;
    ck.cameras = cameras_;
    ck.config_json = config_.to_json();
    ck.iteration = state_.iteration;
    ck.moments = state_.optim.export_moments();
    ck.grad_accum = state_.grad_accum;
    ck.grad_count = state_.grad_count;
    return ck;
}

Trainer Trainer::from_checkpoint(const io::Checkpoint& ckpt, std::vector<Image<float>> images) {
    TrainState s;
    s.model = ckpt.model;
    s.iteration = ckpt.iteration;
    s.optim.import_moments(ckpt.moments);
    s.grad_accum = ckpt.grad_accum;
    s.grad_count = ckpt.grad_count;
    const TrainConfig cfg = ckpt.config_json.empty() ? TrainConfig{} : TrainConfig::from_json(ckpt.config_json);
    return Trainer(std::move(s), ckpt.cameras, std::move(images), cfg);
}

} // namespace pygs::train
