#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "rrp/data.hpp"
#include "rrp/tensor.hpp"

namespace rrp {

struct LabelConfig {
  std::size_t r = 8;  // window size; 1 or even
  double density_sigma = 2.0;  // in output-grid cells
  std::vector<double> class_bins{0.5, 1.5, 3.5};

  std::size_t stride() const { return r == 1 ? 1 : r / 2; }
  // Number of windows covering each pixel along one axis (r / s).
  std::size_t coverage() const { return r == 1 ? 1 : 2; }
  std::size_t num_classes() const { return class_bins.size() + 1; }
};

// Throws ValidationError for r = 0, odd r > 1, non-positive sigma, or bins
// that are not strictly increasing.
void validate_label_config(const LabelConfig& cfg);

// Extent rounded up to a multiple of the stride (zero-extension right/bottom).
std::size_t padded_extent(std::size_t extent, std::size_t stride);

// Label grid rows/cols for an image of the given size.
std::pair<std::size_t, std::size_t> label_grid_dims(std::size_t height, std::size_t width, const LabelConfig& cfg);

struct LocationMap {
  Tensor grid;  // [1,H,W], counts of heads per pixel
};

struct CountMap {
  Tensor grid;  // [1,H/s+1,W/s+1]
  std::size_t coverage = 2;
};

struct DensityMap {
  Tensor grid;
};

struct ClassMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t classes = 0;
  std::vector<std::int32_t> ids;  // row-major
};

// Each point is rounded half-up to a pixel (clamped into the grid) and that
// pixel is incremented; the map is zero-extended to multiples of `stride`.
LocationMap build_location_map(const PointAnnotation& annotation, std::size_t stride = 1);

// Sum pooling over a zero-padded [1,H,W] map.
Tensor sum_pool2d(const Tensor& map, std::size_t window, std::size_t stride, std::size_t padding);

// Pads by s on every side and sum-pools with window r, stride s, so every
// pixel lands in exactly coverage^2 windows. With r = 1 the result is L.
CountMap make_count_map(const LocationMap& location, const LabelConfig& cfg);

// Degenerate single-window count map: one unpadded cell holding m.
CountMap make_global_count_map(const LocationMap& location);

// Per-head Gaussian on the count-map grid, truncated at 4 sigma and
// renormalized so every head contributes exactly 1.
DensityMap make_density_map(const PointAnnotation& annotation, const LabelConfig& cfg);

ClassMap make_class_map(const CountMap& counts, const LabelConfig& cfg);
std::int32_t class_of(double value, const std::vector<double>& bins);

// Label cache container: 4-byte magic, u32 version/height/width (LE), then
// height*width binary32 LE values.
enum class LabelKind { count, density, classes };
const char* label_magic(LabelKind kind);

std::vector<std::uint8_t> encode_label_file(LabelKind kind, const Tensor& grid);
Tensor decode_label_file(const std::vector<std::uint8_t>& bytes, LabelKind kind);
void write_label_file(const std::filesystem::path& path, LabelKind kind, const Tensor& grid);
Tensor read_label_file(const std::filesystem::path& path, LabelKind kind);
Tensor class_map_tensor(const ClassMap& classes);

}  // namespace rrp
