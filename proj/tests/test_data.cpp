#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "rrp/data.hpp"
#include "rrp/errors.hpp"
#include "rrp/rng.hpp"

using namespace rrp;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("rrp_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

}  // namespace

TEST_CASE("SplitMix64 is reproducible and in range") {
  SplitMix64 a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  SplitMix64 r(7);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    const auto k = r.uniform_int(-2, 3);
    CHECK((k >= -2 && k <= 3));
    seen.insert(k);
  }
  CHECK(seen.size() == 6);
  CHECK(derive_key(1, 2) != derive_key(1, 3));
  CHECK(derive_key(1, 2) != derive_key(2, 2));
}

TEST_CASE("normal draws have unit variance") {
  SplitMix64 r(3);
  double s = 0.0, s2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    s += v;
    s2 += v * v;
  }
  CHECK(std::abs(s / n) < 0.03);
  CHECK(std::abs(s2 / n - 1.0) < 0.05);
}

TEST_CASE("PNM decoding maps bytes to [-0.5, 0.5]") {
  std::vector<std::uint8_t> file{'P', '5', '\n', '2', ' ', '2', '\n', '2', '5', '5', '\n', 0, 255, 0, 255};
  Tensor t = image_to_tensor(parse_pnm(file));
  CHECK(t.shape() == Shape{1, 2, 2});
  CHECK(t.data()[0] == -0.5);
  CHECK(t.data()[1] == 0.5);

  std::vector<std::uint8_t> ppm{'P', '6', ' ', '2', ' ', '1', ' ', '2', '5', '5', '\n', 0, 0, 0, 0, 0, 0};
  Tensor c = image_to_tensor(parse_pnm(ppm));
  CHECK(c.shape() == Shape{3, 1, 2});
  for (double v : c.data()) CHECK(v == -0.5);
}

TEST_CASE("PNM rejects ASCII variants and truncated payloads") {
  std::vector<std::uint8_t> ascii{'P', '2', '\n', '1', ' ', '1', '\n', '2', '5', '5', '\n', '0'};
  CHECK_THROWS_AS(parse_pnm(ascii), FormatError);
  std::vector<std::uint8_t> short_payload{'P', '5', '\n', '2', ' ', '2', '\n', '2', '5', '5', '\n', 0, 1, 2};
  CHECK_THROWS_AS(parse_pnm(short_payload), LengthError);
  std::vector<std::uint8_t> maxval{'P', '5', '\n', '1', ' ', '1', '\n', '1', '5', '\n', 0};
  CHECK_THROWS_AS(parse_pnm(maxval), FormatError);
}

TEST_CASE("PNM encode/decode round trip, with header comments") {
  RawImage img{3, 2, 3, {}};
  for (int i = 0; i < 18; ++i) img.bytes.push_back(static_cast<std::uint8_t>(i * 14));
  const RawImage back = parse_pnm(encode_pnm(img));
  CHECK(back.channels == 3);
  CHECK(back.bytes == img.bytes);

  const std::string commented = std::string("P5\n# a comment\n1 1\n255\n") + char(7);
  RawImage one = parse_pnm(std::vector<std::uint8_t>(commented.begin(), commented.end()));
  CHECK(one.bytes[0] == 7);
}

TEST_CASE("annotations parse from JSON Lines") {
  const fs::path dir = temp_dir("ann");
  write_file(dir / "annotations.jsonl",
             "{\"image\":\"a.pgm\",\"points\":[],\"height\":10,\"width\":10}\n"
             "\n"
             "{\"image\":\"b.pgm\",\"points\":[[3.5,2.0]],\"height\":10,\"width\":10}\n");
  auto anns = load_annotations(dir / "annotations.jsonl");
  REQUIRE(anns.size() == 2);
  CHECK(anns[0].count() == 0);
  CHECK(anns[1].points[0] == Point{3.5, 2.0});
}

TEST_CASE("annotation dims fall back to the image header") {
  const fs::path dir = temp_dir("ann_header");
  write_pnm(dir / "a.pgm", RawImage{1, 4, 6, std::vector<std::uint8_t>(24, 0)});
  write_file(dir / "annotations.jsonl", "{\"image\":\"a.pgm\",\"points\":[[5.5,3.9]]}\n");
  auto anns = load_annotations(dir / "annotations.jsonl");
  CHECK(anns[0].height == 4);
  CHECK(anns[0].width == 6);
}

TEST_CASE("annotation errors carry the line number") {
  const fs::path dir = temp_dir("ann_bad");
  write_file(dir / "annotations.jsonl",
             "{\"image\":\"a.pgm\",\"points\":[],\"height\":10,\"width\":10}\n{\"image\": oops}\n");
  try {
    load_annotations(dir / "annotations.jsonl");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  write_file(dir / "annotations.jsonl", "{\"image\":\"a.pgm\",\"points\":[[10.0,2.0]],\"height\":10,\"width\":10}\n");
  CHECK_THROWS_AS(load_annotations(dir / "annotations.jsonl"), ValidationError);
}

TEST_CASE("annotation JSON line round trip") {
  PointAnnotation a{"x.pgm", 8, 9, {{0.25, 7.5}, {8.75, 0.0}}};
  const fs::path dir = temp_dir("ann_rt");
  write_file(dir / "annotations.jsonl", annotation_to_json_line(a) + "\n");
  auto back = load_annotations(dir / "annotations.jsonl");
  CHECK(back[0].image_id == a.image_id);
  CHECK(back[0].points == a.points);
  CHECK(back[0].height == 8);
}

TEST_CASE("synthetic scenes are deterministic per (seed, index)") {
  SceneConfig cfg;
  Scene a = synth_scene(cfg, 5), b = synth_scene(cfg, 5), c = synth_scene(cfg, 6);
  CHECK(a.raw.bytes == b.raw.bytes);
  CHECK(a.annotation.points == b.annotation.points);
  CHECK(a.raw.bytes != c.raw.bytes);
  cfg.seed = 2;
  CHECK(synth_scene(cfg, 5).raw.bytes != a.raw.bytes);
}

TEST_CASE("synthetic heads stay in range and never overlap") {
  SceneConfig cfg;
  for (std::uint64_t i = 0; i < 40; ++i) {
    Scene s = synth_scene(cfg, i);
    const auto& pts = s.annotation.points;
    CHECK(pts.size() >= cfg.count_min);
    CHECK(pts.size() <= cfg.count_max);
    validate_annotation(s.annotation);
    for (std::size_t a = 0; a < pts.size(); ++a)
      for (std::size_t b = a + 1; b < pts.size(); ++b) {
        const double d = std::hypot(pts[a].x - pts[b].x, pts[a].y - pts[b].y);
        CHECK(d >= head_radius(cfg, pts[a].y) + head_radius(cfg, pts[b].y));
      }
    // The image tensor is the quantized bytes mapped to [-0.5, 0.5].
    for (std::size_t k = 0; k < s.raw.bytes.size(); k += 97) {
      CHECK(s.image.data()[k] == static_cast<double>(s.raw.bytes[k]) / 255.0 - 0.5);
    }
  }
}

TEST_CASE("head rows follow a density proportional to 1 - y/H") {
  // E[y/H] = integral of t * 2(1 - t) over [0, 1] = 1/3.
  SceneConfig cfg;
  cfg.count_min = 5;
  cfg.count_max = 10;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::uint64_t i = 0; i < 400; ++i) {
    for (const auto& p : synth_scene(cfg, i).annotation.points) {
      sum += p.y / static_cast<double>(cfg.height);
      ++n;
    }
  }
  CHECK(sum / static_cast<double>(n) == doctest::Approx(1.0 / 3.0).epsilon(0.05));
}

TEST_CASE("impossible scenes fail with GenerationError") {
  SceneConfig cfg;
  cfg.count_min = cfg.count_max = 2000;
  cfg.radius_min = cfg.radius_max = 3.0;
  CHECK_THROWS_AS(synth_scene(cfg, 0), GenerationError);
  cfg.count_min = 3000;
  CHECK_THROWS_AS(validate_scene_config(cfg), ValidationError);
}

TEST_CASE("crop keeps exactly the points inside the half-open window") {
  Tensor img = Tensor::zeros({1, 8, 8});
  PointAnnotation ann{"a", 8, 8, {{1.0, 1.0}, {3.99, 3.0}, {4.0, 3.0}, {2.0, 0.5}}};
  Patch p = crop(img, ann, 1, 0, 4, 4);
  REQUIRE(p.annotation.points.size() == 2);
  CHECK(p.annotation.points[0] == Point{1.0, 0.0});
  CHECK(p.annotation.points[1] == Point{3.99, 2.0});
}

TEST_CASE("flip mirrors image columns and point x") {
  Tensor img({1, 1, 4}, {1, 2, 3, 4});
  PointAnnotation ann{"a", 1, 4, {{0.0, 0.0}, {2.5, 0.0}, {3.5, 0.0}}};
  Patch f = flip_patch(crop(img, ann, 0, 0, 1, 4));
  CHECK(f.flipped);
  CHECK(f.image.data()[0] == 4.0);
  CHECK(f.annotation.points[0].x == 3.0);
  CHECK(f.annotation.points[1].x == 0.5);
  CHECK(f.annotation.points[2].x == 0.0);
  Patch back = flip_patch(f);
  CHECK(back.image.data()[0] == 1.0);
}

TEST_CASE("augment yields nine crops and their mirrors") {
  SceneConfig cfg;
  Scene s = synth_scene(cfg, 1);
  SplitMix64 rng(9);
  auto patches = augment(s.image, s.annotation, rng, 8);
  REQUIRE(patches.size() == 18);
  for (std::size_t i = 0; i < 18; ++i) {
    CHECK(patches[i].image.shape() == Shape{1, 32, 32});
    CHECK(patches[i].flipped == (i % 2 == 1));
  }
  for (std::size_t i = 0; i < 18; i += 2) CHECK(patches[i].annotation.count() == patches[i + 1].annotation.count());
  CHECK(crop_extent(64, 16) == 32);
  CHECK(crop_extent(72, 8) == 32);
  SplitMix64 again(9);
  auto repeat = augment(s.image, s.annotation, again, 8);
  for (std::size_t i = 0; i < 18; ++i) CHECK(repeat[i].annotation.points == patches[i].annotation.points);
}
