#include "rrp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <json.hpp>
#include <sstream>

#include "rrp/errors.hpp"

namespace rrp {

namespace fs = std::filesystem;
using json = nlohmann::json;

void validate_annotation(const PointAnnotation& annotation) {
  if (annotation.height == 0 || annotation.width == 0) {
    throw ValidationError("annotation " + annotation.image_id + ": image dims must be positive");
  }
  const auto w = static_cast<double>(annotation.width);
  const auto h = static_cast<double>(annotation.height);
  for (std::size_t i = 0; i < annotation.points.size(); ++i) {
    const auto& p = annotation.points[i];
    if (!(p.x >= 0.0 && p.x < w && p.y >= 0.0 && p.y < h)) {
      std::ostringstream os;
      os << "annotation " << annotation.image_id << ": point " << i << " (" << p.x << ", " << p.y
         << ") outside " << annotation.width << "x" << annotation.height << " image";
      throw ValidationError(os.str());
    }
  }
}

std::vector<PointAnnotation> load_annotations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations " + path.string());
  std::vector<PointAnnotation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(where + ": malformed JSON: " + e.what());
    }
    PointAnnotation ann;
    try {
      ann.image_id = j.at("image").get<std::string>();
      for (const auto& p : j.at("points")) {
        if (!p.is_array() || p.size() != 2) throw FormatError(where + ": each point must be [x, y]");
        ann.points.push_back({p[0].get<double>(), p[1].get<double>()});
      }
      if (j.contains("height") || j.contains("width")) {
        ann.height = j.at("height").get<std::size_t>();
        ann.width = j.at("width").get<std::size_t>();
      }
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (ann.height == 0 || ann.width == 0) {
      const RawImage header = read_pnm(path.parent_path() / ann.image_id);
      ann.height = header.height;
      ann.width = header.width;
    }
    validate_annotation(ann);
    out.push_back(std::move(ann));
  }
  return out;
}

std::string annotation_to_json_line(const PointAnnotation& annotation) {
  json pts = json::array();
  for (const auto& p : annotation.points) pts.push_back({p.x, p.y});
  json j = {{"image", annotation.image_id},
            {"height", annotation.height},
            {"width", annotation.width},
            {"points", std::move(pts)}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// Binary netpbm

RawImage parse_pnm(const std::vector<std::uint8_t>& file, const std::string& label) {
  if (file.size() < 2 || file[0] != 'P' || (file[1] != '5' && file[1] != '6')) {
    throw FormatError(label + ": wrong magic (binary P5/P6 expected)");
  }
  RawImage img;
  img.channels = file[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  auto read_field = [&](const char* what) -> std::size_t {
    for (;;) {
      while (pos < file.size() && std::isspace(file[pos])) ++pos;
      if (pos < file.size() && file[pos] == '#') {
        while (pos < file.size() && file[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= file.size() || !std::isdigit(file[pos])) throw FormatError(label + ": bad header field " + what);
    std::size_t v = 0;
    while (pos < file.size() && std::isdigit(file[pos])) {
      v = v * 10 + static_cast<std::size_t>(file[pos] - '0');
      if (v > (1u << 24)) throw FormatError(label + ": header field " + what + " too large");
      ++pos;
    }
    return v;
  };
  img.width = read_field("width");
  img.height = read_field("height");
  const std::size_t maxval = read_field("maxval");
  if (maxval != 255) throw FormatError(label + ": maxval " + std::to_string(maxval) + " unsupported (need 255)");
  if (img.width == 0 || img.height == 0) throw FormatError(label + ": empty image");
  if (pos >= file.size() || !std::isspace(file[pos])) throw FormatError(label + ": truncated header");
  ++pos;
  const std::size_t need = img.channels * img.width * img.height;
  if (file.size() - pos < need) {
    throw LengthError(label + ": truncated payload, expected " + std::to_string(need) + " bytes, found " +
                      std::to_string(file.size() - pos));
  }
  img.bytes.assign(file.begin() + static_cast<std::ptrdiff_t>(pos),
                   file.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

RawImage read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_pnm(file, path.string());
}

std::vector<std::uint8_t> encode_pnm(const RawImage& image) {
  if (image.channels != 1 && image.channels != 3) throw FormatError("pnm: channels must be 1 or 3");
  if (image.bytes.size() != image.channels * image.width * image.height) {
    throw DimensionError("pnm: byte count does not match dims");
  }
  const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(image.width) +
                             " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.bytes.begin(), image.bytes.end());
  return out;
}

void write_pnm(const fs::path& path, const RawImage& image) {
  const auto bytes = encode_pnm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Tensor image_to_tensor(const RawImage& image) {
  const std::size_t c = image.channels, h = image.height, w = image.width;
  std::vector<double> data(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        data[(ch * h + y) * w + x] = image.bytes[(y * w + x) * c + ch] / 255.0 - 0.5;
  return Tensor({c, h, w}, std::move(data));
}

RawImage tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
    throw DimensionError("tensor_to_image: need [1|3,H,W], got " + shape_string(t.shape()));
  }
  RawImage img{t.dim(0), t.dim(1), t.dim(2), {}};
  img.bytes.resize(t.size());
  const std::size_t c = img.channels, h = img.height, w = img.width;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = std::clamp((t.data()[(ch * h + y) * w + x] + 0.5) * 255.0, 0.0, 255.0);
        img.bytes[(y * w + x) * c + ch] = static_cast<std::uint8_t>(std::floor(v + 0.5));
      }
  return img;
}

Tensor load_image(const fs::path& path) { return image_to_tensor(read_pnm(path)); }

// ---------------------------------------------------------------------------
// Synthetic scenes

void validate_scene_config(const SceneConfig& cfg) {
  if (cfg.height < 32 || cfg.width < 32) throw ValidationError("scene: height and width must be >= 32");
  if (cfg.count_min > cfg.count_max) throw ValidationError("scene: count_min exceeds count_max");
  if (cfg.radius_min < 1.0) throw ValidationError("scene: radius_min must be >= 1");
  if (cfg.radius_max < cfg.radius_min) throw ValidationError("scene: radius_max below radius_min");
  if (!(cfg.noise_sigma >= 0.0)) throw ValidationError("scene: noise_sigma must be >= 0");
}

double head_radius(const SceneConfig& cfg, double y) {
  return cfg.radius_min + (cfg.radius_max - cfg.radius_min) * (y / static_cast<double>(cfg.height));
}

Scene synth_scene(const SceneConfig& cfg, std::uint64_t index) {
  validate_scene_config(cfg);
  SplitMix64 rng(cfg.seed ^ index);
  const auto h = cfg.height, w = cfg.width;
  const auto m = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(cfg.count_min), static_cast<std::int64_t>(cfg.count_max)));

  std::ostringstream id;
  id << "scene_" << std::setw(6) << std::setfill('0') << index << ".pgm";
  PointAnnotation ann{id.str(), h, w, {}};
  std::vector<double> radii;

  constexpr int kMaxAttempts = 1000;
  for (std::size_t k = 0; k < m; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      // Row density proportional to 1 - y/H: inverse CDF of 2t - t^2.
      const double t = 1.0 - std::sqrt(1.0 - rng.uniform());
      const double y = std::min(t * static_cast<double>(h), std::nextafter(static_cast<double>(h), 0.0));
      const double x = rng.uniform(0.0, static_cast<double>(w));
      const double r = head_radius(cfg, y);
      bool clear = true;
      for (std::size_t j = 0; j < ann.points.size() && clear; ++j) {
        const double dx = ann.points[j].x - x, dy = ann.points[j].y - y;
        clear = dx * dx + dy * dy >= (r + radii[j]) * (r + radii[j]);
      }
      if (clear) {
        ann.points.push_back({x, y});
        radii.push_back(r);
        placed = true;
      }
    }
    if (!placed) {
      throw GenerationError("scene " + std::to_string(index) + ": could not place head " + std::to_string(k) +
                            " of " + std::to_string(m) + " after " + std::to_string(kMaxAttempts) + " attempts");
    }
  }

  std::vector<double> canvas(h * w, 0.1);
  for (std::size_t k = 0; k < ann.points.size(); ++k) {
    const auto& p = ann.points[k];
    const double r = radii[k];
    const auto y_lo = static_cast<std::ptrdiff_t>(std::max(0.0, std::floor(p.y - r)));
    const auto y_hi = static_cast<std::ptrdiff_t>(std::min<double>(static_cast<double>(h) - 1, std::ceil(p.y + r)));
    const auto x_lo = static_cast<std::ptrdiff_t>(std::max(0.0, std::floor(p.x - r)));
    const auto x_hi = static_cast<std::ptrdiff_t>(std::min<double>(static_cast<double>(w) - 1, std::ceil(p.x + r)));
    for (auto py = y_lo; py <= y_hi; ++py)
      for (auto px = x_lo; px <= x_hi; ++px) {
        const double dx = static_cast<double>(px) - p.x, dy = static_cast<double>(py) - p.y;
        if (dx * dx + dy * dy <= r * r) canvas[static_cast<std::size_t>(py) * w + static_cast<std::size_t>(px)] = 0.8;
      }
  }

  RawImage raw{1, h, w, std::vector<std::uint8_t>(h * w)};
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    double v = canvas[i];
    if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * rng.normal();
    v = std::clamp(v, 0.0, 1.0);
    raw.bytes[i] = static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
  }
  Scene scene{raw, image_to_tensor(raw), std::move(ann)};
  return scene;
}

std::vector<Sample> synth_dataset(const SceneConfig& cfg, std::uint64_t first, std::size_t count) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Scene s = synth_scene(cfg, first + i);
    out.push_back({std::move(s.image), std::move(s.annotation)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

std::size_t crop_extent(std::size_t extent, std::size_t align) { return extent / 2 / align * align; }

Patch crop(const Tensor& image, const PointAnnotation& annotation, std::size_t y0, std::size_t x0, std::size_t h,
           std::size_t w) {
  if (image.rank() != 3) throw DimensionError("crop: image must be [C,H,W]");
  const std::size_t c = image.dim(0), ih = image.dim(1), iw = image.dim(2);
  if (h == 0 || w == 0 || y0 + h > ih || x0 + w > iw) throw DimensionError("crop: window outside image");
  std::vector<double> data(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) data[(ch * h + y) * w + x] = image.data()[(ch * ih + y0 + y) * iw + x0 + x];

  Patch patch{Tensor({c, h, w}, std::move(data)), {annotation.image_id, h, w, {}}, false};
  const auto fx0 = static_cast<double>(x0), fy0 = static_cast<double>(y0);
  for (const auto& p : annotation.points) {
    const double lx = p.x - fx0, ly = p.y - fy0;
    if (lx >= 0.0 && lx < static_cast<double>(w) && ly >= 0.0 && ly < static_cast<double>(h)) {
      patch.annotation.points.push_back({lx, ly});
    }
  }
  return patch;
}

Patch flip_patch(const Patch& patch) {
  Patch out{flip_horizontal(patch.image.detach()), patch.annotation, !patch.flipped};
  const auto w = static_cast<double>(patch.annotation.width);
  // Points in (w-1, w) would mirror to a negative column; they stay in column 0.
  for (auto& p : out.annotation.points) p.x = std::max(0.0, w - 1.0 - p.x);
  return out;
}

std::vector<Patch> augment(const Tensor& image, const PointAnnotation& annotation, SplitMix64& rng,
                           std::size_t align) {
  if (image.rank() != 3) throw DimensionError("augment: image must be [C,H,W]");
  if (align == 0) throw ValidationError("augment: alignment must be positive");
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (h < 2 * align || w < 2 * align) {
    throw GenerationError("augment: image " + std::to_string(h) + "x" + std::to_string(w) +
                          " smaller than the minimum crop for alignment " + std::to_string(align));
  }
  const std::size_t ch = crop_extent(h, align), cw = crop_extent(w, align);
  std::vector<Patch> patches;
  patches.reserve(18);
  for (int i = 0; i < 9; ++i) {
    const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(h - ch)));
    const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(w - cw)));
    Patch p = crop(image, annotation, y0, x0, ch, cw);
    Patch f = flip_patch(p);
    patches.push_back(std::move(p));
    patches.push_back(std::move(f));
  }
  return patches;
}

}  // namespace rrp
