#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrp/data.hpp"
#include "rrp/model.hpp"
#include "rrp/tensor.hpp"

namespace rrp {

// Integral of a predicted map divided by coverage^2 (k = 2 for count maps
// with r = 2s, k = 1 for density maps and r = 1).
double estimate_count(const Tensor& pred, std::size_t coverage);

struct CountPair {
  std::string id;
  double truth = 0.0;     // z
  double estimate = 0.0;  // z-hat
};

struct ImageError {
  std::string id;
  double truth = 0.0;
  double estimate = 0.0;
  double abs_error = 0.0;
};

struct Metrics {
  double mae = 0.0;
  double mse = 0.0;  // root of the mean squared error
  std::vector<ImageError> per_image;
};

// Throws std::domain_error on an empty list.
Metrics compute_metrics(const std::vector<CountPair>& pairs);
nlohmann::json metrics_to_json(const Metrics& metrics);

// Forward pass per image (no graph recorded); the count estimate uses the
// coverage factor that matches how the targets were built.
std::vector<CountPair> predict_counts(const ModelParams& params, const ModelConfig& cfg,
                                      const std::vector<Sample>& samples, std::size_t coverage);
Metrics evaluate_model(const ModelParams& params, const ModelConfig& cfg, const std::vector<Sample>& samples,
                       std::size_t coverage);

// Both maps scaled jointly by 255 / max(max(pred), max(gt), 1e-12), rounded
// half-up and placed side by side (pred left, gt right) with a 2-pixel white
// separator.
RawImage render_heatmap(const Tensor& pred, const Tensor& gt);
void export_heatmap(const Tensor& pred, const Tensor& gt, const std::filesystem::path& path);

}  // namespace rrp
