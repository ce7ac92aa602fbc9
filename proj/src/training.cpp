#include "rrp/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "rrp/errors.hpp"
#include "rrp/rng.hpp"

namespace rrp {

void validate_train_config(const TrainConfig& cfg) {
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw ValidationError("train: lr must be finite and >= 0");
  if (!(cfg.weight_decay >= 0.0)) throw ValidationError("train: weight_decay must be >= 0");
}

Tensor reg_loss(const Tensor& pred, const Tensor& target, LossNorm norm) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("reg_loss: prediction " + shape_string(pred.shape()) + " vs target " +
                         shape_string(target.shape()));
  }
  const double denom = norm == LossNorm::mean ? static_cast<double>(pred.size()) : 1.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    acc += d * d;
  }
  return detail::make_result("reg_loss", {1}, {acc / denom}, {pred, target}, [=](std::span<const double> g) {
    const double f = 2.0 * g[0] / denom;
    if (pred.requires_grad()) {
      auto dp = detail::grad_buffer(pred);
      for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += f * (pred.data()[i] - target.data()[i]);
    }
    if (target.requires_grad()) {
      auto dt = detail::grad_buffer(target);
      for (std::size_t i = 0; i < dt.size(); ++i) dt[i] -= f * (pred.data()[i] - target.data()[i]);
    }
  });
}

Tensor cls_loss(const Tensor& logits, const ClassMap& target, LossNorm norm) {
  if (logits.rank() != 3 || logits.dim(1) != target.height || logits.dim(2) != target.width) {
    throw DimensionError("cls_loss: logits " + shape_string(logits.shape()) + " vs class map " +
                         std::to_string(target.height) + "x" + std::to_string(target.width));
  }
  const std::size_t c = logits.dim(0), cells = target.height * target.width;
  for (auto id : target.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= c) {
      throw ValidationError("cls_loss: class id " + std::to_string(id) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  auto probs = std::make_shared<std::vector<double>>(c * cells);
  const auto xs = logits.data();
  double acc = 0.0;
  for (std::size_t p = 0; p < cells; ++p) {
    double mx = xs[p];
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, xs[k * cells + p]);
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) total += ((*probs)[k * cells + p] = std::exp(xs[k * cells + p] - mx));
    for (std::size_t k = 0; k < c; ++k) (*probs)[k * cells + p] /= total;
    const auto t = static_cast<std::size_t>(target.ids[p]);
    // -log softmax, computed from the shifted logits to stay accurate near 1.
    acc += std::log(total) - (xs[t * cells + p] - mx);
  }
  const double denom = norm == LossNorm::mean ? static_cast<double>(cells) : 1.0;
  auto ids = std::make_shared<std::vector<std::int32_t>>(target.ids);
  return detail::make_result("cls_loss", {1}, {acc / denom}, {logits}, [=](std::span<const double> g) {
    auto dx = detail::grad_buffer(logits);
    const double f = g[0] / denom;
    for (std::size_t p = 0; p < cells; ++p) {
      const auto t = static_cast<std::size_t>((*ids)[p]);
      for (std::size_t k = 0; k < c; ++k) {
        dx[k * cells + p] += f * ((*probs)[k * cells + p] - (k == t ? 1.0 : 0.0));
      }
    }
  });
}

Tensor total_loss(const Tensor& reg, const Tensor& cls, bool cls_enabled) {
  if (!cls_enabled || !cls.defined()) return reg;
  return add(reg, cls);
}

void sgd_step(std::vector<NamedTensor>& params, double lr, double weight_decay) {
  for (const auto& [name, t] : params) {
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw NumericError("sgd_step: non-finite gradient for " + name);
    }
  }
  for (auto& [name, t] : params) {
    auto values = t.mutable_data();
    const auto grad = t.grad();
    if (grad.empty()) {
      if (weight_decay != 0.0 && lr != 0.0) {
        for (auto& v : values) v -= lr * (weight_decay * v);
      }
      continue;
    }
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * (grad[i] + weight_decay * values[i]);
    t.zero_grad();
  }
}

void sgd_step(ModelParams& params, double lr, double weight_decay) { sgd_step(params.entries(), lr, weight_decay); }

std::size_t target_coverage(const LabelConfig& label, TargetKind kind) {
  return kind == TargetKind::density_map ? 1 : label.coverage();
}

PatchTargets make_targets(const PointAnnotation& annotation, const LabelConfig& label, TargetKind kind) {
  PatchTargets out;
  out.coverage = target_coverage(label, kind);
  if (kind == TargetKind::density_map) {
    out.regression = make_density_map(annotation, label).grid;
    return out;
  }
  const CountMap counts = make_count_map(build_location_map(annotation, label.stride()), label);
  out.classes = make_class_map(counts, label);
  out.regression = counts.grid;
  return out;
}

nlohmann::json record_to_json(const TrainRecord& record) {
  nlohmann::json j = {{"epoch", record.epoch}, {"loss", record.loss}, {"steps", record.steps}};
  j["mae"] = record.mae ? nlohmann::json(*record.mae) : nlohmann::json(nullptr);
  j["mse"] = record.mse ? nlohmann::json(*record.mse) : nlohmann::json(nullptr);
  j["seconds"] = record.seconds;
  return j;
}

std::uint64_t augment_key(std::uint64_t seed, std::uint64_t epoch, std::uint64_t image) {
  return seed ^ SplitMix64::mix(epoch ^ 0xA0761D6478BD642FULL) ^ SplitMix64::mix(image ^ 0xE7037ED1A0B428DBULL);
}

std::size_t crop_alignment(const LabelConfig& label) { return std::lcm(label.stride(), kDownsample); }

ModelConfig effective_model_config(ModelConfig model_cfg, const TrainConfig& train_cfg) {
  model_cfg.rram_enabled = train_cfg.rram_enabled;
  return model_cfg;
}

FitResult fit(const std::vector<Sample>& train, const std::vector<Sample>& eval, const ModelConfig& model_cfg_in,
              const TrainConfig& train_cfg, const std::function<void(const TrainRecord&)>& on_epoch) {
  if (train.empty()) throw ValidationError("fit: training set is empty");
  validate_train_config(train_cfg);
  const ModelConfig model_cfg = effective_model_config(model_cfg_in, train_cfg);
  validate_model_config(model_cfg);

  FitResult result{init_params(model_cfg, train_cfg.seed), {}, 0};
  const LabelConfig& label = model_cfg.label;
  const std::size_t align = crop_alignment(label);
  const std::size_t coverage = target_coverage(label, train_cfg.target);
  // Class bins are defined over count-map cells; density targets train the
  // regression branch alone.
  const bool use_cls = train_cfg.cls_enabled && train_cfg.target == TargetKind::count_map;

  for (std::size_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<Patch> patches;
    patches.reserve(train.size() * 18);
    for (std::size_t i = 0; i < train.size(); ++i) {
      SplitMix64 rng(augment_key(train_cfg.seed, epoch, i));
      for (auto& p : augment(train[i].image, train[i].annotation, rng, align)) patches.push_back(std::move(p));
    }
    std::vector<std::size_t> order(patches.size());
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 shuffle(derive_key(train_cfg.seed, 0x5348554646ULL + epoch));
    for (std::size_t k = order.size(); k > 1; --k) {
      std::swap(order[k - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(k) - 1))]);
    }

    double loss_sum = 0.0;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const Patch& patch = patches[order[step]];
      try {
        const PatchTargets targets = make_targets(patch.annotation, label, train_cfg.target);
        const ModelOutput out = model_forward(patch.image, result.params, model_cfg);
        const Tensor reg = reg_loss(out.count, targets.regression, train_cfg.loss_norm);
        Tensor cls;
        if (use_cls) cls = cls_loss(out.logits, *targets.classes, train_cfg.loss_norm);
        const Tensor loss = total_loss(reg, cls, use_cls);
        loss.backward();
        sgd_step(result.params, train_cfg.lr, train_cfg.weight_decay);
        loss_sum += loss.item();
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", patch " + std::to_string(step) + ": " + e.what());
      }
      ++result.total_steps;
    }

    TrainRecord record;
    record.epoch = epoch;
    record.steps = order.size();
    record.loss = loss_sum / static_cast<double>(order.size());
    if (!eval.empty()) {
      const Metrics m = evaluate_model(quantize_to_float(result.params), model_cfg, eval, coverage);
      record.mae = m.mae;
      record.mse = m.mse;
    }
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.records.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  return result;
}

}  // namespace rrp
