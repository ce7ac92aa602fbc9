#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rrp/rng.hpp"
#include "rrp/tensor.hpp"

namespace rrp {

struct Point {
  double x = 0.0;  // column
  double y = 0.0;  // row
  bool operator==(const Point&) const = default;
};

// Head positions for one image, zero-indexed pixel coordinates.
struct PointAnnotation {
  std::string image_id;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Point> points;

  std::size_t count() const { return points.size(); }
};

// Throws ValidationError naming the image if any point leaves [0,W) x [0,H).
void validate_annotation(const PointAnnotation& annotation);

// One JSON object per line: {"image": "...", "points": [[x,y], ...]}.
// Optional "height"/"width" keys give the image dims; without them the dims
// are read from the image header, resolved relative to the file's directory.
std::vector<PointAnnotation> load_annotations(const std::filesystem::path& path);
std::string annotation_to_json_line(const PointAnnotation& annotation);

// 8-bit raster as stored on disk.
struct RawImage {
  std::size_t channels = 1;  // 1 = P5, 3 = P6
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bytes;  // interleaved, row-major
};

RawImage read_pnm(const std::filesystem::path& path);
RawImage parse_pnm(const std::vector<std::uint8_t>& file, const std::string& label = "<memory>");
void write_pnm(const std::filesystem::path& path, const RawImage& image);
std::vector<std::uint8_t> encode_pnm(const RawImage& image);

// Byte v maps to v/255 - 0.5; layout [C,H,W].
Tensor image_to_tensor(const RawImage& image);
RawImage tensor_to_image(const Tensor& t);
Tensor load_image(const std::filesystem::path& path);

struct SceneConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t count_min = 5;
  std::size_t count_max = 80;
  double radius_min = 1.0;
  double radius_max = 3.0;
  double noise_sigma = 0.05;
  std::uint64_t seed = 1;
};

void validate_scene_config(const SceneConfig& cfg);

struct Scene {
  RawImage raw;
  Tensor image;  // [1,H,W]
  PointAnnotation annotation;
};

// Head radius at row y: grows linearly toward the bottom (nearer the camera).
double head_radius(const SceneConfig& cfg, double y);

// Deterministic in (cfg, index): the stream key is cfg.seed XOR index.
Scene synth_scene(const SceneConfig& cfg, std::uint64_t index);

struct Patch {
  Tensor image;  // [C,h,w]
  PointAnnotation annotation;
  bool flipped = false;
};

// Size of each augmentation crop: floor(extent / 2 / align) * align.
std::size_t crop_extent(std::size_t extent, std::size_t align);

// 9 uniform random crops at quarter area, each also emitted mirrored
// (x' = w - 1 - x): 18 patches. Crop sides are multiples of `align`.
std::vector<Patch> augment(const Tensor& image, const PointAnnotation& annotation, SplitMix64& rng,
                           std::size_t align);

// Crop keeping points in the half-open window [x0, x0+w) x [y0, y0+h).
Patch crop(const Tensor& image, const PointAnnotation& annotation, std::size_t y0, std::size_t x0, std::size_t h,
           std::size_t w);
Patch flip_patch(const Patch& patch);

struct Sample {
  Tensor image;
  PointAnnotation annotation;
};

// Scenes [first, first + count) of the synthetic stream.
std::vector<Sample> synth_dataset(const SceneConfig& cfg, std::uint64_t first, std::size_t count);

}  // namespace rrp
