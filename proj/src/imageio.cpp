#include "ldfuse/imageio.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <numbers>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "ldfuse/errors.hpp"
#include "ldfuse/nn/ops.hpp"
#include "ldfuse/rng.hpp"

namespace ldfuse::imageio {

RasterImage::RasterImage(int h, int w, int c)
    : height(h), width(w), channels(c),
      pixels(static_cast<std::size_t>(h) * w * c, 0) {}

void validate(const RasterImage& image) {
  if (image.height < 2 || image.width < 2) {
    throw SizeError("raster must be at least 2x2, got " + std::to_string(image.height) + "x" +
                    std::to_string(image.width));
  }
  if (image.channels != 1 && image.channels != 3) {
    throw FormatError("raster channel count must be 1 or 3, got " +
                      std::to_string(image.channels));
  }
  if (image.pixels.size() !=
      static_cast<std::size_t>(image.height) * image.width * image.channels) {
    throw FormatError("raster pixel buffer size mismatch");
  }
}

Tensor to_unit(const RasterImage& image) {
  validate(image);
  Tensor t({image.channels, image.height, image.width});
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) t(c, y, x) = image.at(y, x, c) / 255.0;
    }
  }
  return t;
}

RasterImage from_unit(const Tensor& unit) {
  RasterImage image(unit.height(), unit.width(), unit.channels());
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        const double v = std::clamp(unit(c, y, x), 0.0, 1.0);
        image.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  validate(image);
  return image;
}

void require_unit(const Tensor& t, int channels, const char* what) {
  if (t.channels() != channels) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) +
                     " channels, got " + to_string(t.shape()));
  }
  for (double v : t.values()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DomainError(std::string(what) + ": sample outside [0, 1]");
    }
  }
}

DepthMap::DepthMap(Tensor values) : depth(std::move(values)), valid(depth.size(), 0) {
  if (depth.channels() != 1) throw ShapeError("depth map must have one channel");
  for (std::size_t i = 0; i < depth.size(); ++i) {
    valid[i] = std::isfinite(depth[i]) && depth[i] > 0.0 ? 1 : 0;
  }
}

std::size_t DepthMap::count_valid() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
}

bool DepthMap::operator==(const DepthMap& other) const {
  if (depth.shape() != other.depth.shape() || valid != other.valid) return false;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (valid[i] && depth[i] != other.depth[i]) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct PngReadGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadGuard() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
  if (buf) *buf = msg;
  png_longjmp(png, 1);
}
void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace

RasterImage load_image(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open image " + path.string());

  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError("not a PNG file: " + path.string());
  }

  std::string err;
  PngReadGuard guard;
  guard.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!guard.png) throw FormatError("libpng initialisation failed");
  guard.info = png_create_info_struct(guard.png);
  if (!guard.info) throw FormatError("libpng initialisation failed");

  RasterImage image;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(guard.png))) {
    throw FormatError("corrupt PNG " + path.string() + ": " + err);
  }
  png_init_io(guard.png, file.get());
  png_set_sig_bytes(guard.png, 8);
  png_read_info(guard.png, guard.info);

  const int bit_depth = png_get_bit_depth(guard.png, guard.info);
  const int color_type = png_get_color_type(guard.png, guard.info);
  if (bit_depth != 8) {
    throw FormatError("unsupported PNG bit depth " + std::to_string(bit_depth) + " in " +
                      path.string() + " (8-bit required)");
  }
  int channels = 0;
  if (color_type == PNG_COLOR_TYPE_GRAY) {
    channels = 1;
  } else if (color_type == PNG_COLOR_TYPE_RGB) {
    channels = 3;
  } else {
    throw FormatError("unsupported PNG color type in " + path.string() +
                      " (gray or RGB without alpha required)");
  }
  if (png_get_valid(guard.png, guard.info, PNG_INFO_tRNS)) {
    throw FormatError("PNG transparency is not supported: " + path.string());
  }
  png_set_interlace_handling(guard.png);
  png_read_update_info(guard.png, guard.info);

  const auto h = static_cast<int>(png_get_image_height(guard.png, guard.info));
  const auto w = static_cast<int>(png_get_image_width(guard.png, guard.info));
  image = RasterImage(h, w, channels);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = image.pixels.data() + static_cast<std::size_t>(y) * w * channels;
  png_read_image(guard.png, rows.data());
  png_read_end(guard.png, nullptr);

  validate(image);
  return image;
}

void save_image(const RasterImage& image, const std::filesystem::path& path) {
  validate(image);
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot write PNG " + path.string() + ": " + msg);
  }
}

// ---------------------------------------------------------------------------
// PFM

DepthMap load_depth(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open depth file " + path.string());

  std::string magic;
  in >> magic;
  if (magic == "PF") {
    throw FormatError("PFM " + path.string() + " has 3 channels; single-channel 'Pf' required");
  }
  if (magic != "Pf") throw FormatError("malformed PFM header in " + path.string());
  long w = 0, h = 0;
  double scale = 0.0;
  if (!(in >> w >> h >> scale) || w < 1 || h < 1 || scale == 0.0 || !std::isfinite(scale)) {
    throw FormatError("malformed PFM header in " + path.string());
  }
  in.get();  // single whitespace byte before the raster
  const bool little = scale < 0.0;

  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<std::uint32_t> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 4));
  if (static_cast<std::size_t>(in.gcount()) != n * 4) {
    throw FormatError("truncated PFM payload in " + path.string());
  }
  const bool swap = little != (std::endian::native == std::endian::little);

  Tensor depth({1, static_cast<int>(h), static_cast<int>(w)});
  // PFM rows run bottom to top.
  for (long row = 0; row < h; ++row) {
    const long y = h - 1 - row;
    for (long x = 0; x < w; ++x) {
      std::uint32_t bits = raw[static_cast<std::size_t>(row) * w + x];
      if (swap) bits = __builtin_bswap32(bits);
      depth(0, static_cast<int>(y), static_cast<int>(x)) = std::bit_cast<float>(bits);
    }
  }
  return DepthMap(std::move(depth));
}

void save_depth(const DepthMap& depth, const std::filesystem::path& path) {
  if (depth.depth.channels() != 1 || depth.valid.size() != depth.depth.size()) {
    throw ShapeError("depth map is not single channel with a matching mask");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write depth file " + path.string());
  const int h = depth.height(), w = depth.width();
  out << "Pf\n" << w << ' ' << h << "\n-1.0\n";
  std::vector<float> row(w);
  for (int r = 0; r < h; ++r) {
    const int y = h - 1 - r;
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      row[x] = depth.valid[i] ? static_cast<float>(depth.depth[i]) : 0.0f;
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw IoError("short write to " + path.string());
}

// ---------------------------------------------------------------------------

Tensor luminance(const Tensor& rgb) {
  if (rgb.channels() != 3) {
    throw ShapeError("luminance expects 3 channels, got " + to_string(rgb.shape()));
  }
  return nn::luminance(nn::Var::constant(rgb)).value();
}

MultiChannelImage concat_modalities(const Tensor& vis, const Tensor& ir) {
  if (vis.channels() != 3 || ir.channels() != 1) {
    throw ShapeError("concat_modalities expects 3 + 1 channels, got " + to_string(vis.shape()) +
                     " and " + to_string(ir.shape()));
  }
  if (vis.height() != ir.height() || vis.width() != ir.width()) {
    throw ShapeError("visible " + to_string(vis.shape()) + " and infrared " +
                     to_string(ir.shape()) + " are not registered");
  }
  const Tensor parts[] = {vis, ir};
  return {concat_channels(parts)};
}

// ---------------------------------------------------------------------------
// Synthetic scenes

double depth_to_intensity(double depth, const SceneGeometry& g) {
  const double s = std::log(depth / g.near_plane) / std::log(g.far_plane / g.near_plane);
  return 0.1 + 0.85 * (1.0 - std::clamp(s, 0.0, 1.0));
}

double background_depth(int y, int height, const SceneGeometry& g) {
  const double f = static_cast<double>(y) / static_cast<double>(height - 1);
  return g.far_plane * std::pow(g.ground_depth / g.far_plane, f);
}

namespace {

bool inside(const SceneObject& o, int y, int x) {
  const double dx = (x - o.cx) / o.rx;
  const double dy = (y - o.cy) / o.ry;
  return dx * dx + dy * dy <= 1.0;
}

}  // namespace

ScenePair synth_scene(std::uint64_t seed, int height, int width, int n_objects,
                      double p_ir_only, double p_vis_only, const SceneGeometry& geometry) {
  if (height < 16 || width < 16) {
    throw SizeError("synthetic scenes need H, W >= 16, got " + std::to_string(height) + "x" +
                    std::to_string(width));
  }
  if (n_objects < 1) throw ParameterError("n_objects must be >= 1");
  auto is_prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!is_prob(p_ir_only) || !is_prob(p_vis_only) || p_ir_only + p_vis_only > 1.0 + 1e-12) {
    throw ParameterError("modality probabilities must lie in [0, 1] and sum to at most 1");
  }

  Rng rng(seed);
  ScenePair scene;
  scene.seed = seed;
  scene.geometry = geometry;

  const double log_lo = std::log(geometry.min_object_depth);
  const double log_hi = std::log(geometry.max_object_depth);
  for (int i = 0; i < n_objects; ++i) {
    SceneObject o;
    o.cx = rng.uniform(0.15, 0.85) * (width - 1);
    o.cy = rng.uniform(0.15, 0.85) * (height - 1);
    o.rx = rng.uniform(0.08, 0.18) * std::min(height, width);
    o.ry = o.rx * rng.uniform(0.7, 1.4);
    // Depths are kept float-representable so PFM storage is exact.
    o.depth = static_cast<float>(std::exp(rng.uniform(log_lo, log_hi)));
    const double u = rng.uniform();
    if (u < p_ir_only) {
      o.visible_in_vis = false;
    } else if (u < p_ir_only + p_vis_only) {
      o.visible_in_ir = false;
    }
    scene.objects.push_back(o);
  }

  // Per-object tint with unit luma so colour never changes the depth cue.
  std::vector<std::array<double, 3>> tints;
  for (int i = 0; i < n_objects; ++i) {
    const double r = rng.uniform(0.85, 1.15);
    const double b = rng.uniform(0.85, 1.15);
    const double g = (1.0 - 0.299 * r - 0.114 * b) / 0.587;
    tints.push_back({r, g, b});
  }
  const double tex_fx = rng.uniform(0.15, 0.45);
  const double tex_fy = rng.uniform(0.15, 0.45);
  const double tex_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  constexpr double kTexture = 0.03;

  Tensor depth({1, height, width});
  Tensor vis({3, height, width});
  Tensor ir({1, height, width});
  for (int y = 0; y < height; ++y) {
    const double bg_depth = static_cast<float>(background_depth(y, height, geometry));
    const double bg_level = depth_to_intensity(bg_depth, geometry);
    for (int x = 0; x < width; ++x) {
      // z-buffer: nearest covering object wins.
      int front = -1;
      double z = bg_depth;
      for (int i = 0; i < n_objects; ++i) {
        if (scene.objects[i].depth < z && inside(scene.objects[i], y, x)) {
          z = scene.objects[i].depth;
          front = i;
        }
      }
      depth(0, y, x) = z;

      const double texture =
          kTexture * std::sin(2.0 * std::numbers::pi * (tex_fx * x + tex_fy * y) + tex_phase);
      std::array<double, 3> v{};
      double t = bg_level;
      if (front < 0) {
        v = {bg_level + texture, bg_level + texture, bg_level + texture};
      } else {
        const SceneObject& o = scene.objects[front];
        const double level = depth_to_intensity(o.depth, geometry);
        if (o.visible_in_vis) {
          for (int c = 0; c < 3; ++c) v[c] = level * tints[front][c];
        } else {
          v = {bg_level + kHiddenContrast, bg_level + kHiddenContrast, bg_level + kHiddenContrast};
        }
        t = o.visible_in_ir ? level : bg_level + kHiddenContrast;
      }
      for (int c = 0; c < 3; ++c) vis(c, y, x) = v[c];
      ir(0, y, x) = t;
    }
  }
  for (double& s : vis.values()) s = std::clamp(s + kSensorNoise * rng.normal(), 0.0, 1.0);
  for (double& s : ir.values()) s = std::clamp(s + kSensorNoise * rng.normal(), 0.0, 1.0);

  scene.vis = from_unit(vis);
  scene.ir = from_unit(ir);
  scene.gt_depth = DepthMap(std::move(depth));
  return scene;
}

nlohmann::json manifest_to_json(const ScenePair& scene) {
  nlohmann::json objects = nlohmann::json::array();
  for (const SceneObject& o : scene.objects) {
    objects.push_back({{"center", {o.cx, o.cy}},
                       {"radius", {o.rx, o.ry}},
                       {"depth", o.depth},
                       {"visible_in_vis", o.visible_in_vis},
                       {"visible_in_ir", o.visible_in_ir}});
  }
  const SceneGeometry& g = scene.geometry;
  return {{"seed", scene.seed},
          {"height", scene.vis.height},
          {"width", scene.vis.width},
          {"near_plane", g.near_plane},
          {"far_plane", g.far_plane},
          {"ground_depth", g.ground_depth},
          {"object_depth_range", {g.min_object_depth, g.max_object_depth}},
          {"objects", objects}};
}

namespace {

ScenePair manifest_from_json(const nlohmann::json& j) {
  ScenePair scene;
  scene.seed = j.at("seed").get<std::uint64_t>();
  SceneGeometry& g = scene.geometry;
  g.near_plane = j.at("near_plane").get<double>();
  g.far_plane = j.at("far_plane").get<double>();
  g.ground_depth = j.at("ground_depth").get<double>();
  g.min_object_depth = j.at("object_depth_range").at(0).get<double>();
  g.max_object_depth = j.at("object_depth_range").at(1).get<double>();
  for (const auto& o : j.at("objects")) {
    SceneObject obj;
    obj.cx = o.at("center").at(0).get<double>();
    obj.cy = o.at("center").at(1).get<double>();
    obj.rx = o.at("radius").at(0).get<double>();
    obj.ry = o.at("radius").at(1).get<double>();
    obj.depth = o.at("depth").get<double>();
    obj.visible_in_vis = o.at("visible_in_vis").get<bool>();
    obj.visible_in_ir = o.at("visible_in_ir").get<bool>();
    scene.objects.push_back(obj);
  }
  return scene;
}

}  // namespace

void save_scene(const ScenePair& scene, const std::filesystem::path& dir, const std::string& id) {
  std::filesystem::create_directories(dir);
  save_image(scene.vis, dir / (id + "_vis.png"));
  save_image(scene.ir, dir / (id + "_ir.png"));
  save_depth(scene.gt_depth, dir / (id + "_depth.pfm"));
  std::ofstream mf(dir / (id + "_manifest.json"));
  if (!mf) throw IoError("cannot write manifest in " + dir.string());
  mf << manifest_to_json(scene).dump(2) << '\n';
}

ScenePair load_scene(const std::filesystem::path& dir, const std::string& id) {
  const auto manifest_path = dir / (id + "_manifest.json");
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot read " + manifest_path.string());
  ScenePair scene;
  try {
    scene = manifest_from_json(nlohmann::json::parse(mf));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  scene.vis = load_image(dir / (id + "_vis.png"));
  scene.ir = load_image(dir / (id + "_ir.png"));
  scene.gt_depth = load_depth(dir / (id + "_depth.pfm"));
  if (scene.vis.channels != 3 || scene.ir.channels != 1) {
    throw FormatError("scene " + id + " has wrong modality channel counts");
  }
  if (scene.vis.height != scene.ir.height || scene.vis.width != scene.ir.width ||
      scene.gt_depth.height() != scene.vis.height || scene.gt_depth.width() != scene.vis.width) {
    throw ShapeError("scene " + id + " modalities are not registered");
  }
  return scene;
}

}  // namespace ldfuse::imageio
