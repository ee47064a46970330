#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldfuse/tensor.hpp"

namespace ldfuse::imageio {

// 8-bit raster, interleaved row-major (y, x, channel) as stored in PNG.
struct RasterImage {
  int height = 0;
  int width = 0;
  int channels = 0;  // 1 (infrared / gray) or 3 (visible RGB)
  std::vector<std::uint8_t> pixels;

  RasterImage() = default;
  RasterImage(int h, int w, int c);

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const RasterImage&) const = default;
};

void validate(const RasterImage& image);

// Samples scaled to [0, 1] in (C, H, W) layout, and back (round to nearest).
Tensor to_unit(const RasterImage& image);
RasterImage from_unit(const Tensor& unit);

// Validates a [0, 1] working tensor with the given channel count.
void require_unit(const Tensor& t, int channels, const char* what);

// The diffusion data space: channels R, G, B, IR.
struct MultiChannelImage {
  Tensor values;  // 4 x H x W
};

// Positive metric depth with a validity mask. Invalid pixels hold the value
// they were loaded with (non-positive or non-finite) or 0.
struct DepthMap {
  Tensor depth;                     // 1 x H x W, meters
  std::vector<std::uint8_t> valid;  // 1 = valid

  DepthMap() = default;
  // Mask derived from the values: valid iff finite and > 0.
  explicit DepthMap(Tensor values);

  int height() const { return depth.height(); }
  int width() const { return depth.width(); }
  std::size_t count_valid() const;
  bool operator==(const DepthMap& other) const;
};

RasterImage load_image(const std::filesystem::path& path);
void save_image(const RasterImage& image, const std::filesystem::path& path);

// PFM "Pf" single channel. Written little-endian (scale -1.0); invalid
// pixels are written as 0 so the mask survives the round trip.
DepthMap load_depth(const std::filesystem::path& path);
void save_depth(const DepthMap& depth, const std::filesystem::path& path);

// 0.299 R + 0.587 G + 0.114 B.
Tensor luminance(const Tensor& rgb);

MultiChannelImage concat_modalities(const Tensor& vis, const Tensor& ir);

// ---------------------------------------------------------------------------
// Procedural scenes.

struct SceneObject {
  double cx = 0.0;  // pixel coordinates of the ellipse centre
  double cy = 0.0;
  double rx = 0.0;  // semi-axes in pixels
  double ry = 0.0;
  double depth = 0.0;  // meters
  bool visible_in_vis = true;
  bool visible_in_ir = true;
};

struct SceneGeometry {
  double near_plane = 1.0;
  double far_plane = 80.0;
  // Background ramp: far at the top row, this depth at the bottom row.
  double ground_depth = 10.0;
  double min_object_depth = 2.0;
  double max_object_depth = 8.0;
};

struct ScenePair {
  RasterImage vis;  // 3 channels
  RasterImage ir;   // 1 channel
  DepthMap gt_depth;
  std::vector<SceneObject> objects;
  SceneGeometry geometry;
  std::uint64_t seed = 0;
};

// Contrast of a modality-hidden object over the background, and the additive
// sensor noise; the former is kept below the latter.
inline constexpr double kHiddenContrast = 1.5 / 255.0;
inline constexpr double kSensorNoise = 3.0 / 255.0;

// Rendered intensity for a surface at `depth` meters, shared by both sensors.
double depth_to_intensity(double depth, const SceneGeometry& geometry);
// Background depth of image row y.
double background_depth(int y, int height, const SceneGeometry& geometry);

ScenePair synth_scene(std::uint64_t seed, int height, int width, int n_objects,
                      double p_ir_only, double p_vis_only,
                      const SceneGeometry& geometry = {});

nlohmann::json manifest_to_json(const ScenePair& scene);

// `<dir>/<id>_{vis.png,ir.png,depth.pfm,manifest.json}`
void save_scene(const ScenePair& scene, const std::filesystem::path& dir, const std::string& id);
ScenePair load_scene(const std::filesystem::path& dir, const std::string& id);

}  // namespace ldfuse::imageio
