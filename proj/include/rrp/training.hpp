#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "rrp/data.hpp"
#include "rrp/evaluation.hpp"
#include "rrp/labeling.hpp"
#include "rrp/model.hpp"

namespace rrp {

// Per-cell mean (default) or the literal sum over cells.
enum class LossNorm { mean, sum };
enum class TargetKind { count_map, density_map };

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.0005;
  std::size_t epochs = 50;
  std::uint64_t seed = 1;
  LossNorm loss_norm = LossNorm::mean;
  TargetKind target = TargetKind::count_map;
  bool rram_enabled = true;
  bool cls_enabled = true;
};

void validate_train_config(const TrainConfig& cfg);

// Squared error between predicted and target maps, averaged (or summed) over cells.
Tensor reg_loss(const Tensor& pred, const Tensor& target, LossNorm norm = LossNorm::mean);

// Softmax cross-entropy per cell against integer class ids.
Tensor cls_loss(const Tensor& logits, const ClassMap& target, LossNorm norm = LossNorm::mean);

// reg + cls when classification is enabled, reg otherwise.
Tensor total_loss(const Tensor& reg, const Tensor& cls, bool cls_enabled);

// theta <- theta - lr * (grad + weight_decay * theta) for every entry, then
// clears the gradients. A tensor with no accumulated gradient is treated as
// having zero gradient. Throws NumericError naming the first non-finite
// gradient before anything is modified.
void sgd_step(std::vector<NamedTensor>& params, double lr, double weight_decay);
void sgd_step(ModelParams& params, double lr, double weight_decay);

struct PatchTargets {
  Tensor regression;             // count map or density map
  std::optional<ClassMap> classes;  // only for count-map targets
  std::size_t coverage = 2;
};

PatchTargets make_targets(const PointAnnotation& annotation, const LabelConfig& label, TargetKind kind);

// Coverage factor used to turn a predicted map into a count.
std::size_t target_coverage(const LabelConfig& label, TargetKind kind);

struct TrainRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::size_t steps = 0;
  std::optional<double> mae;
  std::optional<double> mse;
  double seconds = 0.0;
};

nlohmann::json record_to_json(const TrainRecord& record);

struct FitResult {
  ModelParams params;
  std::vector<TrainRecord> records;
  std::size_t total_steps = 0;
};

// Stream key for the crops of one image in one epoch.
std::uint64_t augment_key(std::uint64_t seed, std::uint64_t epoch, std::uint64_t image);

// Crop side alignment: crops must be divisible by both the label stride and
// the backbone's downsampling factor.
std::size_t crop_alignment(const LabelConfig& label);

// Per epoch: 18 augmented patches per training image, deterministic shuffle,
// one SGD step per patch, then MAE/MSE on `eval` using the binary32-rounded
// parameters (what a checkpoint would hold). `on_epoch` sees every record.
FitResult fit(const std::vector<Sample>& train, const std::vector<Sample>& eval, const ModelConfig& model_cfg,
              const TrainConfig& train_cfg, const std::function<void(const TrainRecord&)>& on_epoch = {});

// Model config with the training-time switches applied.
ModelConfig effective_model_config(ModelConfig model_cfg, const TrainConfig& train_cfg);

}  // namespace rrp
