#include "rrp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rrp/errors.hpp"

namespace rrp {

double estimate_count(const Tensor& pred, std::size_t coverage) {
  if (coverage != 1 && coverage != 2) throw ValidationError("estimate_count: coverage must be 1 or 2");
  double total = 0.0;
  for (double v : pred.data()) total += v;
  return total / static_cast<double>(coverage * coverage);
}

Metrics compute_metrics(const std::vector<CountPair>& pairs) {
  if (pairs.empty()) throw std::domain_error("compute_metrics: no image pairs");
  Metrics m;
  double abs_sum = 0.0, sq_sum = 0.0;
  for (const auto& p : pairs) {
    const double err = std::abs(p.truth - p.estimate);
    abs_sum += err;
    sq_sum += err * err;
    m.per_image.push_back({p.id, p.truth, p.estimate, err});
  }
  const auto n = static_cast<double>(pairs.size());
  m.mae = abs_sum / n;
  m.mse = std::sqrt(sq_sum / n);
  return m;
}

nlohmann::json metrics_to_json(const Metrics& metrics) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& e : metrics.per_image) per.push_back({{"id", e.id}, {"z", e.truth}, {"zhat", e.estimate}});
  return {{"mae", metrics.mae}, {"mse", metrics.mse}, {"n", metrics.per_image.size()}, {"per_image", per}};
}

std::vector<CountPair> predict_counts(const ModelParams& params, const ModelConfig& cfg,
                                      const std::vector<Sample>& samples, std::size_t coverage) {
  NoGradGuard no_grad;
  std::vector<CountPair> pairs;
  pairs.reserve(samples.size());
  for (const auto& s : samples) {
    const ModelOutput out = model_forward(s.image, params, cfg);
    pairs.push_back({s.annotation.image_id, static_cast<double>(s.annotation.count()),
                     estimate_count(out.count, coverage)});
  }
  return pairs;
}

Metrics evaluate_model(const ModelParams& params, const ModelConfig& cfg, const std::vector<Sample>& samples,
                       std::size_t coverage) {
  return compute_metrics(predict_counts(params, cfg, samples, coverage));
}

RawImage render_heatmap(const Tensor& pred, const Tensor& gt) {
  if (pred.rank() != 3 || pred.dim(0) != 1 || pred.shape() != gt.shape()) {
    throw DimensionError("heatmap: pred " + shape_string(pred.shape()) + " and gt " + shape_string(gt.shape()) +
                         " must be equal [1,H,W]");
  }
  const std::size_t h = pred.dim(1), w = pred.dim(2);
  const double peak = std::max({*std::max_element(pred.data().begin(), pred.data().end()),
                                *std::max_element(gt.data().begin(), gt.data().end()), 1e-12});
  const double factor = 255.0 / peak;
  auto to_byte = [&](double v) {
    return static_cast<std::uint8_t>(std::floor(std::clamp(v * factor, 0.0, 255.0) + 0.5));
  };
  const std::size_t width = 2 * w + 2;
  RawImage img{1, h, width, std::vector<std::uint8_t>(h * width, 255)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      img.bytes[y * width + x] = to_byte(pred.data()[y * w + x]);
      img.bytes[y * width + w + 2 + x] = to_byte(gt.data()[y * w + x]);
    }
  return img;
}

void export_heatmap(const Tensor& pred, const Tensor& gt, const std::filesystem::path& path) {
  write_pnm(path, render_heatmap(pred, gt));
}

}  // namespace rrp
