#include <doctest.h>

#include "rrp/config.hpp"
#include "rrp/errors.hpp"

using namespace rrp;
using json = nlohmann::json;

TEST_CASE("empty config yields documented defaults") {
  RunConfig cfg = parse_run_config(json::object());
  CHECK(cfg.seed == 1);
  CHECK(cfg.label.r == 8);
  CHECK(cfg.train.lr == 1e-3);
  CHECK(cfg.train.weight_decay == 0.0005);
  CHECK(cfg.train.epochs == 50);
  CHECK(cfg.dataset.n_train == 200);
  CHECK(cfg.model.channels == std::vector<std::size_t>{32, 64, 128});
  CHECK(cfg.rram.gcn_layers == 1);
  CHECK(cfg.gradcheck.seeds == 10);
}

TEST_CASE("unknown keys are rejected at every level") {
  CHECK_THROWS_AS(parse_run_config(json{{"sed", 1}}), ValidationError);
  CHECK_THROWS_AS(parse_run_config(json{{"train", {{"learning_rate", 0.1}}}}), ValidationError);
  CHECK_THROWS_WITH_AS(parse_run_config(json{{"label", {{"R", 8}}}}), doctest::Contains("label.R"), ValidationError);
}

TEST_CASE("wrong types and invalid values are validation errors") {
  CHECK_THROWS_AS(parse_run_config(json{{"label", {{"r", "eight"}}}}), ValidationError);
  CHECK_THROWS_AS(parse_run_config(json{{"label", {{"r", 5}}}}), ValidationError);
  CHECK_THROWS_AS(parse_run_config(json{{"train", {{"loss_norm", "median"}}}}), ValidationError);
  CHECK_THROWS_AS(parse_run_config(json{{"eval", {{"split", "val"}}}}), ValidationError);
  CHECK_THROWS_AS(parse_run_config(json{{"model", {{"channels", {8, 16}}}}}), ValidationError);
}

TEST_CASE("scene seed follows the top-level seed unless set") {
  RunConfig a = parse_run_config(json{{"seed", 9}});
  CHECK(a.scene.seed == 9);
  CHECK(a.train.seed == 9);
  RunConfig b = parse_run_config(json{{"seed", 9}, {"scene", {{"seed", 4}}}});
  CHECK(b.scene.seed == 4);
  CHECK(b.train.seed == 9);
}

TEST_CASE("resolved config round trips through JSON") {
  json in = {{"seed", 3},
             {"label", {{"r", 16}, {"class_bins", {0.5, 2.5}}}},
             {"model", {{"channels", {4, 8, 8}}, {"backbone_init", "kaiming"}}},
             {"train", {{"label_kind", "density_map"}, {"rram_enabled", false}, {"loss_norm", "sum"}}}};
  RunConfig cfg = parse_run_config(in);
  json out = run_config_to_json(cfg);
  RunConfig again = parse_run_config(out);
  CHECK(run_config_to_json(again) == out);
  CHECK(again.label.num_classes() == 3);
  CHECK(again.train.target == TargetKind::density_map);
  CHECK(again.model.backbone_init == InitScheme::kaiming);
  ModelConfig m = again.resolved_model();
  CHECK_FALSE(m.rram_enabled);
  CHECK(m.label.r == 16);
}
