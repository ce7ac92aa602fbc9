#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rrp/grad_check.hpp"
#include "rrp/labeling.hpp"
#include "rrp/rram.hpp"
#include "rrp/tensor.hpp"

namespace rrp {

enum class InitScheme {
  gaussian,  // N(0, init_std^2)
  kaiming,   // N(0, 2 / fan_in), backbone convs only
};

struct ModelConfig {
  std::size_t image_channels = 1;
  // Three stages of (3x3 conv + ReLU) x 2 followed by maxpool2: stride 8.
  std::vector<std::size_t> channels{32, 64, 128};
  std::size_t head_width = 256;
  bool rram_enabled = true;
  RramConfig rram;
  LabelConfig label;
  InitScheme backbone_init = InitScheme::gaussian;
  double init_std = 0.01;

  std::size_t num_classes() const { return label.num_classes(); }
  std::size_t feature_channels() const { return channels.back(); }
};

inline constexpr std::size_t kDownsample = 8;

void validate_model_config(const ModelConfig& cfg);

// Named parameter set with a deterministic insertion order.
class ModelParams {
 public:
  void add(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::vector<NamedTensor>& entries() { return entries_; }
  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();
  // Deep copy (fresh storage, gradients dropped).
  ModelParams clone() const;

 private:
  std::vector<NamedTensor> entries_;
  std::map<std::string, std::size_t> index_;
};

// Names and shapes the config implies, in parameter order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& cfg);

// Conv weights, A and GCN weights ~ N(0, init_std^2) (or Kaiming for the
// backbone if configured); biases zero. Each tensor draws from its own
// stream keyed by (seed, name), so the result is a pure function of both.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// Throws ValidationError if names or shapes disagree with `cfg`.
void check_params_match(const ModelParams& params, const ModelConfig& cfg);

RramParams rram_params(const ModelParams& params, const ModelConfig& cfg);

Tensor backbone_forward(const Tensor& image, const ModelParams& params, const ModelConfig& cfg);

struct ModelOutput {
  Tensor count;   // [1, h/s+1, w/s+1]
  Tensor logits;  // [C, h/s+1, w/s+1]
};

ModelOutput model_forward(const Tensor& image, const ModelParams& params, const ModelConfig& cfg);

// "RRPC" checkpoint: magic, u32 version, u32 count, then per tensor
// u16 name length, name, u8 rank, rank x u32 dims, binary32 data (all LE).
std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params);
ModelParams decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

// Rounds every value to binary32 and back, matching what a checkpoint holds.
ModelParams quantize_to_float(const ModelParams& params);

}  // namespace rrp
