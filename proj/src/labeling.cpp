#include "rrp/labeling.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rrp/errors.hpp"

namespace rrp {

void validate_label_config(const LabelConfig& cfg) {
  if (cfg.r == 0) throw ValidationError("label: window size r must be positive");
  if (cfg.r != 1 && cfg.r % 2 != 0) {
    throw ValidationError("label: window size r = " + std::to_string(cfg.r) + " must be 1 or even");
  }
  if (!(cfg.density_sigma > 0.0)) throw ValidationError("label: density_sigma must be > 0");
  for (std::size_t i = 1; i < cfg.class_bins.size(); ++i) {
    if (!(cfg.class_bins[i] > cfg.class_bins[i - 1])) {
      throw ValidationError("label: class_bins must be strictly increasing");
    }
  }
}

std::size_t padded_extent(std::size_t extent, std::size_t stride) { return (extent + stride - 1) / stride * stride; }

std::pair<std::size_t, std::size_t> label_grid_dims(std::size_t height, std::size_t width, const LabelConfig& cfg) {
  const std::size_t s = cfg.stride();
  const std::size_t h = padded_extent(height, s), w = padded_extent(width, s);
  if (cfg.r == 1) return {h, w};
  return {h / s + 1, w / s + 1};
}

LocationMap build_location_map(const PointAnnotation& annotation, std::size_t stride) {
  validate_annotation(annotation);
  if (stride == 0) throw ValidationError("location map: stride must be positive");
  const std::size_t h = padded_extent(annotation.height, stride), w = padded_extent(annotation.width, stride);
  std::vector<double> grid(h * w, 0.0);
  for (const auto& p : annotation.points) {
    // Half-up rounding; a point in the last half pixel rounds onto the edge.
    const auto col = std::min<std::size_t>(static_cast<std::size_t>(std::floor(p.x + 0.5)), annotation.width - 1);
    const auto row = std::min<std::size_t>(static_cast<std::size_t>(std::floor(p.y + 0.5)), annotation.height - 1);
    grid[row * w + col] += 1.0;
  }
  return {Tensor({1, h, w}, std::move(grid))};
}

Tensor sum_pool2d(const Tensor& map, std::size_t window, std::size_t stride, std::size_t padding) {
  if (map.rank() != 3 || map.dim(0) != 1) throw DimensionError("sum_pool2d: need [1,H,W], got " + shape_string(map.shape()));
  if (window == 0 || stride == 0) throw DimensionError("sum_pool2d: window and stride must be positive");
  const std::size_t h = map.dim(1), w = map.dim(2);
  const std::size_t ph = h + 2 * padding, pw = w + 2 * padding;
  if (ph < window || pw < window) throw DimensionError("sum_pool2d: window larger than padded map");
  const std::size_t oh = (ph - window) / stride + 1, ow = (pw - window) / stride + 1;

  // Summed-area table over the padded map keeps every window sum exact
  // (all partial sums are small integers for location maps).
  std::vector<double> sat((ph + 1) * (pw + 1), 0.0);
  const auto src = map.data();
  for (std::size_t y = 0; y < ph; ++y) {
    double row = 0.0;
    for (std::size_t x = 0; x < pw; ++x) {
      double v = 0.0;
      if (y >= padding && y < padding + h && x >= padding && x < padding + w) v = src[(y - padding) * w + (x - padding)];
      row += v;
      sat[(y + 1) * (pw + 1) + x + 1] = sat[y * (pw + 1) + x + 1] + row;
    }
  }
  std::vector<double> out(oh * ow);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      const std::size_t y0 = i * stride, x0 = j * stride, y1 = y0 + window, x1 = x0 + window;
      out[i * ow + j] = sat[y1 * (pw + 1) + x1] - sat[y0 * (pw + 1) + x1] - sat[y1 * (pw + 1) + x0] +
                        sat[y0 * (pw + 1) + x0];
    }
  return Tensor({1, oh, ow}, std::move(out));
}

CountMap make_count_map(const LocationMap& location, const LabelConfig& cfg) {
  validate_label_config(cfg);
  const std::size_t s = cfg.stride();
  const auto& grid = location.grid;
  if (grid.rank() != 3 || grid.dim(0) != 1) throw DimensionError("count map: location map must be [1,H,W]");
  if (grid.dim(1) % s != 0 || grid.dim(2) % s != 0) {
    throw DimensionError("count map: location map " + shape_string(grid.shape()) + " not divisible by stride " +
                         std::to_string(s));
  }
  const std::size_t pad = cfg.r == 1 ? 0 : s;
  return {sum_pool2d(grid, cfg.r, s, pad), cfg.coverage()};
}

CountMap make_global_count_map(const LocationMap& location) {
  const auto& grid = location.grid;
  if (grid.rank() != 3 || grid.dim(0) != 1) throw DimensionError("global count map: location map must be [1,H,W]");
  // One unpadded window spanning the whole map.
  double total = 0.0;
  for (double v : grid.data()) total += v;
  return {Tensor({1, 1, 1}, {total}), 1};
}

DensityMap make_density_map(const PointAnnotation& annotation, const LabelConfig& cfg) {
  validate_label_config(cfg);
  validate_annotation(annotation);
  const auto [rows, cols] = label_grid_dims(annotation.height, annotation.width, cfg);
  const double s = static_cast<double>(cfg.stride());
  const double sigma = cfg.density_sigma;
  const double radius = 4.0 * sigma;
  std::vector<double> grid(rows * cols, 0.0);
  std::vector<std::pair<std::size_t, double>> stencil;
  for (const auto& p : annotation.points) {
    const double cy = p.y / s, cx = p.x / s;
    const auto i0 = static_cast<std::ptrdiff_t>(std::ceil(cy - radius));
    const auto i1 = static_cast<std::ptrdiff_t>(std::floor(cy + radius));
    const auto j0 = static_cast<std::ptrdiff_t>(std::ceil(cx - radius));
    const auto j1 = static_cast<std::ptrdiff_t>(std::floor(cx + radius));
    stencil.clear();
    double total = 0.0;
    for (auto i = std::max<std::ptrdiff_t>(i0, 0); i <= std::min<std::ptrdiff_t>(i1, static_cast<std::ptrdiff_t>(rows) - 1); ++i)
      for (auto j = std::max<std::ptrdiff_t>(j0, 0); j <= std::min<std::ptrdiff_t>(j1, static_cast<std::ptrdiff_t>(cols) - 1); ++j) {
        const double dy = static_cast<double>(i) - cy, dx = static_cast<double>(j) - cx;
        const double d2 = dy * dy + dx * dx;
        if (d2 > radius * radius) continue;
        const double g = std::exp(-d2 / (2.0 * sigma * sigma));
        stencil.emplace_back(static_cast<std::size_t>(i) * cols + static_cast<std::size_t>(j), g);
        total += g;
      }
    if (stencil.empty() || !(total > 0.0)) {
      throw NumericError("density map: empty stencil for head in " + annotation.image_id);
    }
    for (const auto& [idx, g] : stencil) grid[idx] += g / total;
  }
  return {Tensor({1, rows, cols}, std::move(grid))};
}

std::int32_t class_of(double value, const std::vector<double>& bins) {
  return static_cast<std::int32_t>(std::upper_bound(bins.begin(), bins.end(), value) - bins.begin());
}

ClassMap make_class_map(const CountMap& counts, const LabelConfig& cfg) {
  validate_label_config(cfg);
  const auto& g = counts.grid;
  ClassMap out{g.dim(1), g.dim(2), cfg.num_classes(), std::vector<std::int32_t>(g.size())};
  for (std::size_t i = 0; i < g.size(); ++i) out.ids[i] = class_of(g.data()[i], cfg.class_bins);
  return out;
}

Tensor class_map_tensor(const ClassMap& classes) {
  std::vector<double> v(classes.ids.begin(), classes.ids.end());
  return Tensor({1, classes.height, classes.width}, std::move(v));
}

// ---------------------------------------------------------------------------
// Label cache files

const char* label_magic(LabelKind kind) {
  switch (kind) {
    case LabelKind::count: return "CMAP";
    case LabelKind::density: return "DMAP";
    case LabelKind::classes: return "KMAP";
  }
  return "????";
}

namespace {

constexpr std::uint32_t kLabelVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_label_file(LabelKind kind, const Tensor& grid) {
  if (grid.rank() != 3 || grid.dim(0) != 1) throw DimensionError("label file: grid must be [1,H,W]");
  std::vector<std::uint8_t> out;
  out.reserve(16 + 4 * grid.size());
  const char* magic = label_magic(kind);
  out.insert(out.end(), magic, magic + 4);
  put_u32(out, kLabelVersion);
  put_u32(out, static_cast<std::uint32_t>(grid.dim(1)));
  put_u32(out, static_cast<std::uint32_t>(grid.dim(2)));
  for (double v : grid.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

Tensor decode_label_file(const std::vector<std::uint8_t>& bytes, LabelKind kind) {
  const char* magic = label_magic(kind);
  if (bytes.size() < 16) throw FormatError(std::string(magic) + " file: truncated header");
  if (std::memcmp(bytes.data(), magic, 4) != 0) {
    throw FormatError(std::string("label file: bad magic, expected ") + magic);
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kLabelVersion) throw FormatError(std::string(magic) + " file: unsupported version " + std::to_string(version));
  const std::size_t h = get_u32(bytes, 8), w = get_u32(bytes, 12);
  if (h == 0 || w == 0) throw FormatError(std::string(magic) + " file: empty grid");
  if (bytes.size() != 16 + 4 * h * w) throw LengthError(std::string(magic) + " file: truncated payload");
  std::vector<double> v(h * w);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::bit_cast<float>(get_u32(bytes, 16 + 4 * i));
  return Tensor({1, h, w}, std::move(v));
}

void write_label_file(const std::filesystem::path& path, LabelKind kind, const Tensor& grid) {
  const auto bytes = encode_label_file(kind, grid);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Tensor read_label_file(const std::filesystem::path& path, LabelKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_label_file(bytes, kind);
}

}  // namespace rrp
