// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "pygs/field.hpp"
#include "pygs/geom.hpp"
#include "pygs/image.hpp"
#include "pygs/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pygs::io {

namespace fs = std::filesystem;

// ---- images ---------------------------------------------------------------------------

float srgb_to_linear(float c);
float linear_to_srgb(float c);
std::uint8_t encode_srgb8(float linear);

/// Decodes a PNG or JPEG (chosen by content) to linear RGB in [0, 1]. Alpha, when present,
/// composites the image over `background` in linear space.
Image<float> read_image(const fs::path& path, const Vec3f& background = Vec3f::Zero());

/// Decodes to raw 8-bit channels without color conversion (1, 3 or 4 channels as stored).
Image<std::uint8_t> read_image_u8(const fs::path& path);

/// Linear [0, 1] RGB -> 8-bit sRGB.
Image<std::uint8_t> to_srgb8(const Image<float>& linear);

std::vector<std::uint8_t> encode_png(const Image<std::uint8_t>& img);
Image<std::uint8_t> decode_png(const std::vector<std::uint8_t>& bytes);
void write_png(const fs::path& path, const Image<std::uint8_t>& img);
/// Writes a linear RGB image as 8-bit sRGB PNG.
void write_png(const fs::path& path, const Image<float>& linear);

/// Writes `bytes` to `path` via a temporary file in the same directory and a rename.
void write_file_atomic(const fs::path& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file(const fs::path& path);

// ---- datasets -------------------------------------------------------------------------

struct Dataset {
    fs::path root;
    std::vector<geom::Camera> cameras; // one per frame, index = frame index
    std::vector<Image<float>> images;  // linear RGB
    std::vector<std::string> names;    // file_path entries
    std::vector<int> train;            // frame indices
    std::vector<int> test;
    std::optional<Aabb> aabb; // from the optional "aabb" key
    Vec3f background = Vec3f::Zero();

    /// Training cameras with `index` set to their appearance-table row.
    std::vector<geom::Camera> train_cameras() const;
    std::vector<Image<float>> train_images() const;
};

/// Loads `transforms.json` from a directory (or the file itself). Every `test_every`-th frame
/// (index % test_every == 0) goes to the test split; 0 disables the split.
Dataset load_dataset(const fs::path& path, int test_every = 8, int threads = 1);

/// Writes images as sRGB PNGs plus a transforms.json with per-frame intrinsics.
void save_dataset(const fs::path& dir, const std::vector<geom::Camera>& cameras,
                  const std::vector<Image<float>>& images, const std::optional<Aabb>& aabb,
                  const Vec3f& background = Vec3f::Zero());

/// Bounds derived from the camera centers: the hull box padded 2x around its center.
Aabb padded_camera_box(const std::vector<geom::Camera>& cameras);
/// 1.1 x the largest camera distance from the camera centroid (the 3DGS convention).
float camera_extent(const std::vector<geom::Camera>& cameras);

struct SceneBounds {
    Aabb field_box; // region covered by the radiance field
    Aabb scene_box; // normalizes camera centers for the weighting network
    float extent = 1.0f;
};
SceneBounds scene_bounds(const Dataset& data);

// ---- checkpoints ----------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct OptimizerMoments {
    std::string name;
    std::uint64_t step = 0;
    std::vector<float> m;
    std::vector<float> v;
};

struct Checkpoint {
    Model<float> model;
    std::optional<field::VoxelField<float>> field;
    std::vector<geom::Camera> cameras; // training cameras, index = appearance row
    std::string config_json;           // training configuration as written by the trainer
    std::uint64_t iteration = 0;
    std::vector<OptimizerMoments> moments;
    std::vector<float> grad_accum; // per-Gaussian accumulated screen gradient norms
    std::vector<std::uint32_t> grad_count;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const Checkpoint& ckpt, const fs::path& path);
Checkpoint load_checkpoint(const fs::path& path);

/// Standalone radiance-field file (same framing as checkpoints, magic "PYGF").
std::vector<std::uint8_t> serialize_field(const field::VoxelField<float>& f);
field::VoxelField<float> deserialize_field(const std::vector<std::uint8_t>& bytes);
void save_field(const field::VoxelField<float>& f, const fs::path& path);
field::VoxelField<float> load_field(const fs::path& path);

// ---- PLY ------------------------------------------------------------------------------

/// Binary little-endian PLY with the usual 3DGS vertex properties plus `level` and
/// `cluster`. `level` > 0 keeps only that level.
void export_ply(const GaussianSet<float>& gaussians, const fs::path& path, int level = 0);
GaussianSet<float> import_ply(const fs::path& path);

struct PointCloud {
    std::vector<Vec3f> positions;
    std::vector<Vec3f> colors; // linear [0, 1]
    std::size_t size() const { return positions.size(); }
};

void write_point_ply(const PointCloud& cloud, const fs::path& path);
PointCloud read_point_ply(const fs::path& path);

} // namespace pygs::io
