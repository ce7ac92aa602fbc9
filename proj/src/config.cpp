#include "rrp/config.hpp"

#include <fstream>
#include <set>

#include "rrp/errors.hpp"

namespace rrp {

using json = nlohmann::json;

namespace {

// Reads known keys from one JSON object and rejects everything else.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ValidationError("config: " + where_ + " must be an object");
  }

  template <typename T>
  bool read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return false;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ValidationError("config: " + where_ + "." + key + ": " + e.what());
    }
    return true;
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ValidationError("config: unknown key " + where_ + "." + it.key());
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename Fn>
void with_section(Section& parent, const char* key, Fn&& fn) {
  if (const json* j = parent.child(key)) {
    Section s(*j, key);
    fn(s);
    s.finish();
  }
}

const char* norm_name(LossNorm n) { return n == LossNorm::mean ? "mean" : "sum"; }
const char* target_name(TargetKind k) { return k == TargetKind::count_map ? "count_map" : "density_map"; }
const char* init_name(InitScheme s) { return s == InitScheme::gaussian ? "gaussian" : "kaiming"; }

}  // namespace

ModelConfig RunConfig::resolved_model() const {
  ModelConfig m = model;
  m.label = label;
  m.rram = rram;
  m.rram_enabled = train.rram_enabled;
  return m;
}

RunConfig parse_run_config(const json& j) {
  RunConfig cfg;
  Section root(j, "<root>");
  root.read("seed", cfg.seed);
  bool scene_seed = false;

  with_section(root, "scene", [&](Section& s) {
    s.read("height", cfg.scene.height);
    s.read("width", cfg.scene.width);
    s.read("count_min", cfg.scene.count_min);
    s.read("count_max", cfg.scene.count_max);
    s.read("radius_min", cfg.scene.radius_min);
    s.read("radius_max", cfg.scene.radius_max);
    s.read("noise_sigma", cfg.scene.noise_sigma);
    scene_seed = s.read("seed", cfg.scene.seed);
  });
  if (!scene_seed) cfg.scene.seed = cfg.seed;

  with_section(root, "dataset", [&](Section& s) {
    s.read("n_train", cfg.dataset.n_train);
    s.read("n_test", cfg.dataset.n_test);
  });
  with_section(root, "label", [&](Section& s) {
    s.read("r", cfg.label.r);
    s.read("density_sigma", cfg.label.density_sigma);
    s.read("class_bins", cfg.label.class_bins);
  });
  with_section(root, "model", [&](Section& s) {
    s.read("image_channels", cfg.model.image_channels);
    s.read("channels", cfg.model.channels);
    s.read("head_width", cfg.model.head_width);
    s.read("init_std", cfg.model.init_std);
    std::string init;
    if (s.read("backbone_init", init)) {
      if (init == "gaussian") cfg.model.backbone_init = InitScheme::gaussian;
      else if (init == "kaiming") cfg.model.backbone_init = InitScheme::kaiming;
      else throw ValidationError("config: model.backbone_init must be \"gaussian\" or \"kaiming\"");
    }
  });
  with_section(root, "rram", [&](Section& s) {
    s.read("nodes", cfg.rram.nodes);
    s.read("dim", cfg.rram.dim);
    s.read("gcn_layers", cfg.rram.gcn_layers);
  });
  with_section(root, "train", [&](Section& s) {
    s.read("lr", cfg.train.lr);
    s.read("weight_decay", cfg.train.weight_decay);
    s.read("epochs", cfg.train.epochs);
    s.read("rram_enabled", cfg.train.rram_enabled);
    s.read("cls_enabled", cfg.train.cls_enabled);
    std::string v;
    if (s.read("loss_norm", v)) {
      if (v == "mean") cfg.train.loss_norm = LossNorm::mean;
      else if (v == "sum") cfg.train.loss_norm = LossNorm::sum;
      else throw ValidationError("config: train.loss_norm must be \"mean\" or \"sum\"");
    }
    if (s.read("label_kind", v)) {
      if (v == "count_map") cfg.train.target = TargetKind::count_map;
      else if (v == "density_map") cfg.train.target = TargetKind::density_map;
      else throw ValidationError("config: train.label_kind must be \"count_map\" or \"density_map\"");
    }
  });
  with_section(root, "paths", [&](Section& s) {
    s.read("data", cfg.paths.data);
    s.read("out", cfg.paths.out);
    s.read("checkpoint", cfg.paths.checkpoint);
  });
  with_section(root, "gradcheck", [&](Section& s) {
    s.read("seeds", cfg.gradcheck.seeds);
    s.read("eps", cfg.gradcheck.eps);
    s.read("op_tol", cfg.gradcheck.op_tol);
    s.read("model_tol", cfg.gradcheck.model_tol);
  });
  with_section(root, "ablate", [&](Section& s) { s.read("seeds", cfg.ablate.seeds); });
  with_section(root, "eval", [&](Section& s) { s.read("split", cfg.eval.split); });
  root.finish();

  cfg.train.seed = cfg.seed;
  validate_run_config(cfg);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

json run_config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["scene"] = {{"height", cfg.scene.height},       {"width", cfg.scene.width},
                {"count_min", cfg.scene.count_min}, {"count_max", cfg.scene.count_max},
                {"radius_min", cfg.scene.radius_min}, {"radius_max", cfg.scene.radius_max},
                {"noise_sigma", cfg.scene.noise_sigma}, {"seed", cfg.scene.seed}};
  j["dataset"] = {{"n_train", cfg.dataset.n_train}, {"n_test", cfg.dataset.n_test}};
  j["label"] = {{"r", cfg.label.r}, {"density_sigma", cfg.label.density_sigma}, {"class_bins", cfg.label.class_bins}};
  j["model"] = {{"image_channels", cfg.model.image_channels},
                {"channels", cfg.model.channels},
                {"head_width", cfg.model.head_width},
                {"init_std", cfg.model.init_std},
                {"backbone_init", init_name(cfg.model.backbone_init)}};
  j["rram"] = {{"nodes", cfg.rram.nodes}, {"dim", cfg.rram.dim}, {"gcn_layers", cfg.rram.gcn_layers}};
  j["train"] = {{"lr", cfg.train.lr},
                {"weight_decay", cfg.train.weight_decay},
                {"epochs", cfg.train.epochs},
                {"loss_norm", norm_name(cfg.train.loss_norm)},
                {"label_kind", target_name(cfg.train.target)},
                {"rram_enabled", cfg.train.rram_enabled},
                {"cls_enabled", cfg.train.cls_enabled}};
  j["paths"] = {{"data", cfg.paths.data}, {"out", cfg.paths.out}, {"checkpoint", cfg.paths.checkpoint}};
  j["gradcheck"] = {{"seeds", cfg.gradcheck.seeds},
                    {"eps", cfg.gradcheck.eps},
                    {"op_tol", cfg.gradcheck.op_tol},
                    {"model_tol", cfg.gradcheck.model_tol}};
  j["ablate"] = {{"seeds", cfg.ablate.seeds}};
  j["eval"] = {{"split", cfg.eval.split}};
  return j;
}

void validate_run_config(const RunConfig& cfg) {
  validate_scene_config(cfg.scene);
  validate_label_config(cfg.label);
  validate_rram_config(cfg.rram);
  validate_model_config(cfg.resolved_model());
  validate_train_config(cfg.train);
  if (cfg.eval.split != "train" && cfg.eval.split != "test" && cfg.eval.split != "all") {
    throw ValidationError("config: eval.split must be train, test or all");
  }
  if (!(cfg.gradcheck.eps > 0.0)) throw ValidationError("config: gradcheck.eps must be > 0");
  if (cfg.ablate.seeds.empty()) throw ValidationError("config: ablate.seeds must not be empty");
}

}  // namespace rrp
