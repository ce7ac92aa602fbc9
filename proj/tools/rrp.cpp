#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "rrp/commands.hpp"
#include "rrp/errors.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string split;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> kinds{"count"};
  bool heatmap = false;
  std::string inject_fault;
};

rrp::RunConfig resolve(const Options& o) {
  nlohmann::json j = nlohmann::json::object();
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw rrp::IoError("cannot open config " + o.config);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw rrp::ValidationError("config " + o.config + ": " + e.what());
    }
    if (!j.is_object()) throw rrp::ValidationError("config " + o.config + ": top level must be an object");
  }
  if (o.seed) j["seed"] = *o.seed;
  auto set_path = [&](const char* key, const std::string& value) {
    if (value.empty()) return;
    if (!j.contains("paths")) j["paths"] = nlohmann::json::object();
    j["paths"][key] = value;
  };
  set_path("out", o.out);
  set_path("data", o.data);
  set_path("checkpoint", o.checkpoint);
  if (!o.split.empty()) j["eval"]["split"] = o.split;
  return rrp::parse_run_config(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Count-map crowd counting with a region relation-aware module"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "Output directory (overrides paths.out)");
    sub->add_option("--seed", o.seed, "Seed (overrides the config's top-level seed)");
  };

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset (PGM images + annotations.jsonl)");
  common(synth);

  auto* label = app.add_subcommand("label", "Write count/density/class label files for a dataset");
  common(label);
  label->add_option("--data", o.data, "Dataset directory (default: generate in memory)");
  label->add_option("--kinds", o.kinds, "Label kinds: count, density, classes")->delimiter(',');

  auto* train = app.add_subcommand("train", "Train a model and write checkpoint, log and metrics");
  common(train);
  train->add_option("--data", o.data, "Dataset directory (default: generate in memory)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  common(eval);
  eval->add_option("--data", o.data, "Dataset directory (default: generate in memory)");
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint (default: <out>/model.rrpc)");
  eval->add_option("--split", o.split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
  eval->add_flag("--heatmap", o.heatmap, "Write one P5 heatmap per image");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  common(gradcheck);
  gradcheck->add_option("--inject-fault", o.inject_fault, "Break a backward rule on purpose")
      ->check(CLI::IsMember({"relu"}))
      ->group("");

  auto* ablate = app.add_subcommand("ablate", "Train the ablation grid and write ablation.csv");
  common(ablate);
  ablate->add_option("--data", o.data, "Dataset directory (default: generate in memory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    const rrp::RunConfig cfg = resolve(o);
    const std::filesystem::path out = cfg.paths.out;
    if (synth->parsed()) rrp::cmd_synth(cfg, out, std::cout);
    if (label->parsed()) rrp::cmd_label(cfg, out, o.kinds, std::cout);
    if (train->parsed()) rrp::cmd_train(cfg, out, std::cout);
    if (eval->parsed()) rrp::cmd_eval(cfg, out, o.heatmap, std::cout);
    if (gradcheck->parsed()) {
      if (o.inject_fault == "relu") rrp::fault_injection().flip_relu_backward = true;
      if (!rrp::cmd_gradcheck(cfg, out, std::cout)) return kRuntime;
    }
    if (ablate->parsed()) rrp::cmd_ablate(cfg, out, std::cout);
  } catch (const rrp::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
