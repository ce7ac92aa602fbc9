#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "rrp/errors.hpp"
#include "rrp/model.hpp"

using namespace rrp;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.channels = {4, 4, 8};
  cfg.head_width = 6;
  cfg.rram = {3, 5, 2};
  return cfg;
}

}  // namespace

TEST_CASE("parameter layout names and shapes") {
  ModelConfig cfg = small_config();
  auto layout = parameter_layout(cfg);
  std::set<std::string> names;
  for (const auto& [name, shape] : layout) names.insert(name);
  CHECK(names.size() == layout.size());
  CHECK(names.count("backbone.5.weight"));
  CHECK(names.count("rram.adjacency"));
  CHECK(names.count("rram.gcn.1.weight"));
  CHECK(names.count("head.cls.1.bias"));
  ModelParams p = init_params(cfg, 1);
  CHECK(p.get("head.cls.1.weight").shape() == Shape{4, 6, 1, 1});
  CHECK(p.get("rram.theta.weight").shape() == Shape{3, 8, 1, 1});

  cfg.rram.gcn_layers = 0;
  ModelParams flat = init_params(cfg, 1);
  CHECK_FALSE(flat.contains("rram.adjacency"));
  CHECK_FALSE(flat.contains("rram.gcn.0.weight"));
}

TEST_CASE("toggling the relation block changes exactly the rram.* names") {
  ModelConfig on = small_config(), off = small_config();
  off.rram_enabled = false;
  std::set<std::string> a, b;
  for (const auto& n : init_params(on, 1).names()) a.insert(n);
  for (const auto& n : init_params(off, 1).names()) b.insert(n);
  for (const auto& n : a) CHECK((b.count(n) == 1) != n.starts_with("rram."));
  for (const auto& n : b) CHECK(a.count(n) == 1);
}

TEST_CASE("Gaussian init has zero biases and std 0.01 weights") {
  ModelConfig cfg;
  cfg.rram_enabled = false;
  ModelParams p = init_params(cfg, 3);
  double s = 0.0, s2 = 0.0;
  std::size_t n = 0;
  for (const auto& [name, t] : p.entries()) {
    if (name.ends_with(".bias")) {
      for (double v : t.data()) CHECK(v == 0.0);
      continue;
    }
    for (double v : t.data()) {
      s += v;
      s2 += v * v;
      ++n;
    }
  }
  const double mean = s / static_cast<double>(n);
  const double sd = std::sqrt(s2 / static_cast<double>(n) - mean * mean);
  CHECK(sd > 0.009);
  CHECK(sd < 0.011);
}

TEST_CASE("Kaiming init scales backbone weights by fan-in") {
  ModelConfig cfg;
  cfg.backbone_init = InitScheme::kaiming;
  cfg.rram_enabled = false;
  ModelParams p = init_params(cfg, 3);
  const Tensor& w = p.get("backbone.5.weight");  // fan_in = 128 * 9
  double s2 = 0.0;
  for (double v : w.data()) s2 += v * v;
  CHECK(std::sqrt(s2 / static_cast<double>(w.size())) == doctest::Approx(std::sqrt(2.0 / (128.0 * 9.0))).epsilon(0.02));
}

TEST_CASE("init is deterministic and independent per tensor") {
  ModelConfig cfg = small_config();
  ModelParams a = init_params(cfg, 7), b = init_params(cfg, 7), c = init_params(cfg, 8);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& ta = a.entries()[i].tensor;
    for (std::size_t k = 0; k < ta.size(); ++k) CHECK(ta.data()[k] == b.entries()[i].tensor.data()[k]);
  }
  CHECK(a.get("backbone.0.weight").data()[0] != c.get("backbone.0.weight").data()[0]);
  // Adding the relation block must not perturb the other tensors' streams.
  ModelConfig off = cfg;
  off.rram_enabled = false;
  ModelParams d = init_params(off, 7);
  CHECK(d.get("head.reg.0.weight").data()[5] == a.get("head.reg.0.weight").data()[5]);
}

TEST_CASE("forward shapes follow the label grid") {
  ModelConfig cfg = small_config();
  ModelParams p = init_params(cfg, 1);
  for (std::size_t r : {1u, 4u, 8u, 16u}) {
    cfg.label.r = r;
    ModelOutput out = model_forward(Tensor::zeros({1, 32, 48}), p, cfg);
    const auto [rows, cols] = label_grid_dims(32, 48, cfg.label);
    CHECK(out.count.shape() == Shape{1, rows, cols});
    CHECK(out.logits.shape() == Shape{4, rows, cols});
  }
  CHECK_THROWS_AS(model_forward(Tensor::zeros({1, 36, 32}), p, cfg), DimensionError);
  CHECK_THROWS_AS(model_forward(Tensor::zeros({3, 32, 32}), p, cfg), DimensionError);
}

TEST_CASE("checkpoints round trip bit-exactly at binary32") {
  ModelConfig cfg = small_config();
  ModelParams p = quantize_to_float(init_params(cfg, 5));
  const auto bytes = encode_checkpoint(p);
  CHECK(std::memcmp(bytes.data(), "RRPC", 4) == 0);
  ModelParams back = decode_checkpoint(bytes);
  REQUIRE(back.names() == p.names());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& a = p.entries()[i].tensor;
    const auto& b = back.entries()[i].tensor;
    CHECK(a.shape() == b.shape());
    CHECK(std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0);
  }
  CHECK(encode_checkpoint(back) == bytes);
  CHECK_NOTHROW(check_params_match(back, cfg));
}

TEST_CASE("checkpoint corruption is reported") {
  ModelParams p;
  p.add("a", Tensor({2}, {1.0, 2.0}));
  p.add("b", Tensor({1, 1}, {3.0}));
  const auto bytes = encode_checkpoint(p);

  auto magic = bytes;
  magic[1] = 'X';
  try {
    decode_checkpoint(magic);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("RRPC") != std::string::npos);
  }
  auto version = bytes;
  version[4] = 9;
  CHECK_THROWS_WITH_AS(decode_checkpoint(version), doctest::Contains("version mismatch"), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(truncated), LengthError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_WITH_AS(decode_checkpoint(trailing), doctest::Contains("trailing"), FormatError);

  ModelParams dup;
  dup.add("a", Tensor({1}, {1.0}));
  dup.add("c", Tensor({1}, {1.0}));
  auto dup_bytes = encode_checkpoint(dup);
  for (std::size_t i = 0; i + 2 < dup_bytes.size(); ++i) {
    if (dup_bytes[i] == 1 && dup_bytes[i + 1] == 0 && dup_bytes[i + 2] == 'c') dup_bytes[i + 2] = 'a';
  }
  CHECK_THROWS_WITH_AS(decode_checkpoint(dup_bytes), doctest::Contains("duplicate"), FormatError);
}

TEST_CASE("check_params_match rejects a different class count") {
  ModelConfig cfg = small_config();
  ModelParams p = init_params(cfg, 1);
  ModelConfig other = cfg;
  other.label.class_bins = {0.5, 1.5};
  CHECK_THROWS_AS(check_params_match(p, other), ValidationError);
  ModelConfig no_rram = cfg;
  no_rram.rram_enabled = false;
  CHECK_THROWS_AS(check_params_match(p, no_rram), ValidationError);
  CHECK_THROWS_AS(p.add("head.reg.1.bias", Tensor::zeros({1})), ValidationError);
}
