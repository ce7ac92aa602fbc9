#include <doctest.h>

#include <cmath>

#include "rrp/errors.hpp"
#include "rrp/evaluation.hpp"
#include "rrp/training.hpp"

using namespace rrp;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.channels = {2, 2, 4};
  cfg.head_width = 4;
  cfg.rram = {2, 3, 1};
  cfg.backbone_init = InitScheme::kaiming;
  return cfg;
}

std::vector<Sample> tiny_data(std::size_t first, std::size_t n) {
  SceneConfig scene;
  scene.height = scene.width = 32;
  scene.count_max = 20;
  return synth_dataset(scene, first, n);
}

}  // namespace

TEST_CASE("reg_loss is the per-cell mean squared error") {
  Tensor p({1, 1, 3}, {1.0, 2.0, 4.0}, true);
  Tensor t({1, 1, 3}, {0.0, 2.0, 1.0});
  Tensor mean = reg_loss(p, t);
  CHECK(mean.item() == doctest::Approx(10.0 / 3.0));
  mean.backward();
  CHECK(p.grad()[0] == doctest::Approx(2.0 / 3.0));
  CHECK(p.grad()[2] == doctest::Approx(2.0));
  CHECK(reg_loss(p, t, LossNorm::sum).item() == 10.0);
  CHECK_THROWS_AS(reg_loss(p, Tensor::zeros({1, 3, 1})), DimensionError);
}

TEST_CASE("cls_loss is the per-cell softmax cross-entropy") {
  Tensor logits({3, 1, 2}, {0.0, 2.0, 1.0, 0.0, -1.0, 0.0}, true);
  ClassMap target{1, 2, 3, {1, 0}};
  // Cell 0 logits (0, 1, -1), class 1; cell 1 logits (2, 0, 0), class 0.
  const double l0 = std::log(std::exp(0.0) + std::exp(1.0) + std::exp(-1.0)) - 1.0;
  const double l1 = std::log(std::exp(2.0) + 2.0) - 2.0;
  Tensor loss = cls_loss(logits, target);
  CHECK(loss.item() == doctest::Approx((l0 + l1) / 2.0).epsilon(1e-14));
  CHECK(cls_loss(logits, target, LossNorm::sum).item() == doctest::Approx(l0 + l1).epsilon(1e-14));
  loss.backward();
  const double z0 = std::exp(0.0) + std::exp(1.0) + std::exp(-1.0);
  CHECK(logits.grad()[2] == doctest::Approx((std::exp(1.0) / z0 - 1.0) / 2.0));
  CHECK(logits.grad()[0] == doctest::Approx((1.0 / z0) / 2.0));

  ClassMap bad{1, 2, 3, {3, 0}};
  CHECK_THROWS_AS(cls_loss(logits, bad), ValidationError);
}

TEST_CASE("total_loss adds classification only when enabled") {
  Tensor r = Tensor::scalar(2.0), c = Tensor::scalar(3.0);
  CHECK(total_loss(r, c, true).item() == 5.0);
  CHECK(total_loss(r, c, false).item() == 2.0);
  CHECK(total_loss(r, Tensor(), true).item() == 2.0);
}

TEST_CASE("sgd_step applies lr * (g + wd * theta)") {
  Tensor w({2}, {1.0, -2.0}, true);
  Tensor idle({1}, {4.0}, true);
  std::vector<NamedTensor> params{{"w", w}, {"idle", idle}};
  sum_all(scale(w, 3.0)).backward();
  sgd_step(params, 0.1, 0.5);
  CHECK(w.data()[0] == doctest::Approx(1.0 - 0.1 * (3.0 + 0.5)));
  CHECK(w.data()[1] == doctest::Approx(-2.0 - 0.1 * (3.0 - 1.0)));
  CHECK(w.grad()[0] == 0.0);
  CHECK(idle.data()[0] == doctest::Approx(4.0 - 0.1 * 0.5 * 4.0));
}

TEST_CASE("sgd_step refuses non-finite gradients") {
  Tensor w({1}, {1.0}, true);
  std::vector<NamedTensor> params{{"w", w}};
  w.mutable_grad();
  w.zero_grad();
  detail::grad_buffer(w)[0] = std::nan("");
  CHECK_THROWS_WITH_AS(sgd_step(params, 0.1, 0.0), doctest::Contains("w"), NumericError);
  CHECK(w.data()[0] == 1.0);
}

TEST_CASE("targets per label kind") {
  PointAnnotation a{"a", 32, 32, {{3.0, 4.0}, {20.0, 30.0}}};
  LabelConfig label;
  PatchTargets c = make_targets(a, label, TargetKind::count_map);
  CHECK(c.coverage == 2);
  REQUIRE(c.classes.has_value());
  CHECK(estimate_count(c.regression, c.coverage) == 2.0);
  PatchTargets d = make_targets(a, label, TargetKind::density_map);
  CHECK(d.coverage == 1);
  CHECK_FALSE(d.classes.has_value());
  CHECK(estimate_count(d.regression, d.coverage) == doctest::Approx(2.0).epsilon(1e-3));
  CHECK(d.regression.shape() == c.regression.shape());
}

TEST_CASE("augmentation keys differ across epochs and images") {
  CHECK(augment_key(1, 0, 1) != augment_key(1, 1, 0));
  CHECK(augment_key(1, 2, 3) != augment_key(1, 3, 2));
  CHECK(augment_key(1, 2, 3) == augment_key(1, 2, 3));
  LabelConfig label;
  CHECK(crop_alignment(label) == 8);
  label.r = 32;
  CHECK(crop_alignment(label) == 16);
}

TEST_CASE("fit with zero epochs returns the initialization") {
  TrainConfig tc;
  tc.epochs = 0;
  FitResult r = fit(tiny_data(0, 2), {}, tiny_model(), tc);
  ModelParams init = init_params(effective_model_config(tiny_model(), tc), tc.seed);
  CHECK(r.records.empty());
  for (std::size_t i = 0; i < init.size(); ++i) {
    const auto& a = init.entries()[i].tensor;
    const auto& b = r.params.entries()[i].tensor;
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a.data()[k] == b.data()[k]);
  }
}

TEST_CASE("fit is deterministic and lowers the training loss") {
  TrainConfig tc;
  tc.epochs = 3;
  tc.lr = 0.01;
  const auto train = tiny_data(0, 4), test = tiny_data(4, 2);
  FitResult a = fit(train, test, tiny_model(), tc);
  FitResult b = fit(train, test, tiny_model(), tc);
  REQUIRE(a.records.size() == 3);
  CHECK(a.total_steps == 3 * 4 * 18);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(a.records[e].loss == b.records[e].loss);
    CHECK(*a.records[e].mae == *b.records[e].mae);
  }
  CHECK(a.records.back().loss < a.records.front().loss);
  CHECK(encode_checkpoint(a.params) == encode_checkpoint(b.params));
}

TEST_CASE("fit surfaces divergence with its location") {
  TrainConfig tc;
  tc.epochs = 1;
  tc.lr = 1e6;
  tc.cls_enabled = false;
  try {
    fit(tiny_data(0, 2), {}, tiny_model(), tc);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
  }
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  tc.lr = -1.0;
  CHECK_THROWS_AS(validate_train_config(tc), ValidationError);
  CHECK_THROWS_AS(fit({}, {}, tiny_model(), TrainConfig{}), ValidationError);
}

TEST_CASE("epoch records serialize with null metrics when there is no eval set") {
  TrainRecord r;
  r.epoch = 2;
  auto j = record_to_json(r);
  CHECK(j["mae"].is_null());
  r.mae = 1.5;
  r.mse = 2.0;
  CHECK(record_to_json(r)["mae"] == 1.5);
}
