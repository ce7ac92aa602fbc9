#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "rrp/config.hpp"
#include "rrp/evaluation.hpp"
#include "rrp/gradcheck_suite.hpp"

namespace rrp {

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

// Every annotated image in `dir` (annotations.jsonl plus the images it names),
// in file order. Throws ValidationError when an image and its annotation disagree.
std::vector<Sample> load_samples(const std::filesystem::path& dir);

// First n_train samples train, the next n_test test. Reads paths.data when set,
// otherwise generates the same scenes cmd_synth would write.
Dataset load_dataset(const RunConfig& cfg);

void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& out_dir);

struct SynthSummary {
  std::size_t images = 0;
  std::size_t heads = 0;
};
SynthSummary cmd_synth(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log);

struct LabelSummary {
  std::size_t files = 0;
  std::size_t count_exact = 0;     // count maps with sum == k^2 m
  std::size_t count_checked = 0;
  std::size_t density_within = 0;  // density maps with |sum - m| <= 1e-3 m
  std::size_t density_checked = 0;
};
// kinds: any of "count", "density", "classes".
LabelSummary cmd_label(const RunConfig& cfg, const std::filesystem::path& out_dir, const std::vector<std::string>& kinds,
                       std::ostream& log);

struct TrainSummary {
  FitResult fit;
  Metrics train;
  Metrics test;
  bool has_test = false;
};
// Writes model.rrpc, train_log.jsonl, metrics.json and config.resolved.json.
TrainSummary cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log);

// Loads paths.checkpoint (default <out>/model.rrpc) and evaluates eval.split.
// With heatmaps, writes one P5 per image under <out>/heatmaps.
Metrics cmd_eval(const RunConfig& cfg, const std::filesystem::path& out_dir, bool heatmaps, std::ostream& log);

// Returns true when every case passed.
bool cmd_gradcheck(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log);

struct AblationRow {
  std::string variant;  // density_map | count_map | count_map_rram
  std::size_t r = 0;
  std::optional<std::size_t> gcn_layers;  // absent for variants without the relation block
  std::uint64_t seed = 0;
  double mae = 0.0;
  double mse = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> table;    // variant x seed
  std::vector<AblationRow> r_sweep;  // count_map, r in {4, 8, 16, 32}
  std::vector<AblationRow> gcn_sweep;  // count_map_rram, L_g in {0, 1, 2, 3}
  double median_density = 0.0;
  double median_count = 0.0;
  double median_count_rram = 0.0;
  bool count_le_density = false;
  bool rram_le_count = false;
  std::size_t training_runs = 0;
};

std::string ablation_csv(const AblationReport& report);
std::string ablation_summary(const AblationReport& report);

// Writes ablation.csv and ablation_report.txt.
AblationReport cmd_ablate(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log);

}  // namespace rrp
