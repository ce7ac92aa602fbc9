#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrp/data.hpp"
#include "rrp/labeling.hpp"
#include "rrp/model.hpp"
#include "rrp/rram.hpp"
#include "rrp/training.hpp"

namespace rrp {

struct DatasetConfig {
  std::size_t n_train = 200;
  std::size_t n_test = 50;
};

struct PathConfig {
  std::string data;        // directory with annotations.jsonl + images; empty = generate in memory
  std::string out = "out";
  std::string checkpoint;  // for eval; defaults to <out>/model.rrpc
};

struct GradcheckConfig {
  std::size_t seeds = 10;
  double eps = 1e-5;
  double op_tol = 1e-4;
  double model_tol = 1e-3;
};

struct AblateConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct EvalConfig {
  std::string split = "test";  // train | test | all
};

// Everything one experiment needs, resolved from a single JSON document.
struct RunConfig {
  std::uint64_t seed = 1;
  SceneConfig scene;
  DatasetConfig dataset;
  LabelConfig label;
  ModelConfig model;  // label/rram sub-configs are filled in from the sections above
  RramConfig rram;
  TrainConfig train;
  PathConfig paths;
  GradcheckConfig gradcheck;
  AblateConfig ablate;
  EvalConfig eval;

  // Model config with label, rram and train switches folded in.
  ModelConfig resolved_model() const;
};

// Strict parse: unknown keys and wrong types throw ValidationError.
// Missing keys keep their defaults; scene.seed defaults to the top-level seed.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& cfg);

// Validates every section; throws ValidationError.
void validate_run_config(const RunConfig& cfg);

}  // namespace rrp
