#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "rrp/commands.hpp"
#include "rrp/errors.hpp"

using namespace rrp;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("rrp_cmd_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json tiny_json() {
  return {{"seed", 5},
          {"scene", {{"height", 32}, {"width", 32}, {"count_max", 20}}},
          {"dataset", {{"n_train", 3}, {"n_test", 2}}},
          {"model", {{"channels", {2, 2, 4}}, {"head_width", 4}, {"backbone_init", "kaiming"}}},
          {"rram", {{"nodes", 2}, {"dim", 3}}},
          {"train", {{"epochs", 1}}}};
}

std::size_t count_ext(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

}  // namespace

TEST_CASE("synth writes n images and annotation lines, byte-identically on rerun") {
  json j = tiny_json();
  j["dataset"] = {{"n_train", 2}, {"n_test", 1}};
  RunConfig cfg = parse_run_config(j);
  std::ostringstream log;
  const fs::path a = fresh_dir("synth_a"), b = fresh_dir("synth_b");
  cmd_synth(cfg, a, log);
  cmd_synth(cfg, b, log);
  CHECK(count_ext(a, ".pgm") == 3);
  const std::string lines = slurp(a / "annotations.jsonl");
  CHECK(std::count(lines.begin(), lines.end(), '\n') == 3);
  CHECK(fs::exists(a / "config.resolved.json"));
  for (const auto& e : fs::directory_iterator(a)) CHECK(slurp(e.path()) == slurp(b / e.path().filename()));

  // Files on disk load back to the same samples the in-memory path generates.
  RunConfig disk = cfg;
  disk.paths.data = a.string();
  Dataset from_disk = load_dataset(disk), in_memory = load_dataset(cfg);
  REQUIRE(from_disk.train.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(from_disk.train[i].annotation.points == in_memory.train[i].annotation.points);
    for (std::size_t k = 0; k < 32 * 32; k += 31)
      CHECK(from_disk.train[i].image.data()[k] == in_memory.train[i].image.data()[k]);
  }
}

TEST_CASE("synth with zero images writes an empty annotation file") {
  json j = tiny_json();
  j["dataset"] = {{"n_train", 0}, {"n_test", 0}};
  std::ostringstream log;
  const fs::path dir = fresh_dir("synth_zero");
  cmd_synth(parse_run_config(j), dir, log);
  CHECK(slurp(dir / "annotations.jsonl").empty());
}

TEST_CASE("label reports the exact counting identity") {
  RunConfig cfg = parse_run_config(tiny_json());
  const fs::path data = fresh_dir("label_data"), out = fresh_dir("label_out");
  std::ostringstream log;
  cmd_synth(cfg, data, log);
  cfg.paths.data = data.string();
  LabelSummary s = cmd_label(cfg, out, {"count", "density", "classes"}, log);
  CHECK(s.count_exact == 5);
  CHECK(s.count_checked == 5);
  CHECK(s.density_within == 5);
  CHECK(s.files == 15);
  CHECK(log.str().find("exact: 5/5") != std::string::npos);
  CHECK(count_ext(out, ".cmap") == 5);
  Tensor c = read_label_file(out / "scene_000000.cmap", LabelKind::count);
  CHECK(c.dim(1) == 32 / 4 + 1);
  CHECK_THROWS_AS(cmd_label(cfg, out, {"heat"}, log), ValidationError);
}

TEST_CASE("label detects image/annotation disagreement") {
  const fs::path data = fresh_dir("label_mismatch");
  fs::create_directories(data);
  write_pnm(data / "a.pgm", RawImage{1, 8, 8, std::vector<std::uint8_t>(64, 0)});
  std::ofstream(data / "annotations.jsonl") << "{\"image\":\"a.pgm\",\"points\":[],\"height\":16,\"width\":8}\n";
  RunConfig cfg = parse_run_config(tiny_json());
  cfg.paths.data = data.string();
  std::ostringstream log;
  CHECK_THROWS_AS(cmd_label(cfg, fresh_dir("label_mismatch_out"), {"count"}, log), ValidationError);
  std::ofstream(data / "annotations.jsonl") << "{\"image\":\"missing.pgm\",\"points\":[],\"height\":8,\"width\":8}\n";
  CHECK_THROWS_AS(cmd_label(cfg, fresh_dir("label_mismatch_out"), {"count"}, log), IoError);
}

TEST_CASE("train with zero epochs stores the initialization") {
  json j = tiny_json();
  j["train"]["epochs"] = 0;
  RunConfig cfg = parse_run_config(j);
  std::ostringstream log;
  const fs::path out = fresh_dir("train_zero");
  cmd_train(cfg, out, log);
  ModelParams init = quantize_to_float(init_params(cfg.resolved_model(), cfg.seed));
  const auto expected = encode_checkpoint(init);
  CHECK(slurp(out / "model.rrpc") == std::string(expected.begin(), expected.end()));
  CHECK(slurp(out / "train_log.jsonl").empty());
}

TEST_CASE("train is reproducible and eval reproduces the logged metrics") {
  RunConfig cfg = parse_run_config(tiny_json());
  std::ostringstream log;
  const fs::path a = fresh_dir("train_a"), b = fresh_dir("train_b");
  TrainSummary s = cmd_train(cfg, a, log);
  cmd_train(cfg, b, log);
  CHECK(slurp(a / "model.rrpc") == slurp(b / "model.rrpc"));
  CHECK(slurp(a / "metrics.json") == slurp(b / "metrics.json"));
  CHECK(slurp(a / "config.resolved.json") == slurp(b / "config.resolved.json"));

  const json metrics = json::parse(slurp(a / "metrics.json"));
  const json last = json::parse(slurp(a / "train_log.jsonl"));
  CHECK(metrics["test"]["mae"] == last["mae"]);

  RunConfig ev = cfg;
  ev.eval.split = "train";
  Metrics m = cmd_eval(ev, a, true, log);
  CHECK(m.mae == s.train.mae);
  CHECK(metrics["train"]["mae"].get<double>() == m.mae);
  CHECK(count_ext(a / "heatmaps", ".pgm") == 3);
  ev.eval.split = "all";
  CHECK(cmd_eval(ev, a, false, log).per_image.size() == 5);
}

TEST_CASE("eval rejects a checkpoint built for a different model") {
  RunConfig cfg = parse_run_config(tiny_json());
  std::ostringstream log;
  const fs::path out = fresh_dir("eval_mismatch");
  cfg.train.epochs = 0;
  cmd_train(cfg, out, log);
  RunConfig other = cfg;
  other.label.class_bins = {0.5, 1.5, 3.5, 7.5};
  CHECK_THROWS_AS(cmd_eval(other, out, false, log), ValidationError);
  other = cfg;
  other.paths.checkpoint = (out / "nope.rrpc").string();
  CHECK_THROWS_AS(cmd_eval(other, out, false, log), IoError);
}

TEST_CASE("ablation CSV schema") {
  AblationReport r;
  r.table.push_back({"density_map", 8, std::nullopt, 1, 2.0, 3.0});
  r.table.push_back({"count_map_rram", 8, 1, 1, 1.5, 2.0});
  const std::string csv = ablation_csv(r);
  CHECK(csv.rfind("variant,r,gcn_layers,seed,mae,mse\n", 0) == 0);
  CHECK(csv.find("density_map,8,NA,1,2,3\n") != std::string::npos);
  CHECK(csv.find("count_map_rram,8,1,1,1.5,2\n") != std::string::npos);
}
