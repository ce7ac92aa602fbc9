#include "rrp/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include "rrp/errors.hpp"

namespace rrp {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string image_stem(const std::string& image_id) { return fs::path(image_id).stem().string(); }

std::vector<Sample> split_selection(const RunConfig& cfg) {
  Dataset d = load_dataset(cfg);
  if (cfg.eval.split == "train") return d.train;
  if (cfg.eval.split == "test") return d.test;
  d.train.insert(d.train.end(), d.test.begin(), d.test.end());
  return d.train;
}

double constant_baseline_mae(const std::vector<Sample>& train, const std::vector<Sample>& test) {
  double mean = 0.0;
  for (const auto& s : train) mean += static_cast<double>(s.annotation.count());
  mean /= static_cast<double>(train.size());
  double acc = 0.0;
  for (const auto& s : test) acc += std::abs(static_cast<double>(s.annotation.count()) - mean);
  return acc / static_cast<double>(test.size());
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<Sample> load_samples(const fs::path& dir) {
  std::vector<Sample> out;
  for (auto& ann : load_annotations(dir / "annotations.jsonl")) {
    Tensor image = load_image(dir / ann.image_id);
    if (image.dim(1) != ann.height || image.dim(2) != ann.width) {
      throw ValidationError("image " + ann.image_id + " is " + std::to_string(image.dim(1)) + "x" +
                            std::to_string(image.dim(2)) + " but its annotation says " + std::to_string(ann.height) +
                            "x" + std::to_string(ann.width));
    }
    out.push_back({std::move(image), std::move(ann)});
  }
  return out;
}

Dataset load_dataset(const RunConfig& cfg) {
  const std::size_t n_train = cfg.dataset.n_train, n_test = cfg.dataset.n_test;
  Dataset d;
  if (cfg.paths.data.empty()) {
    d.train = synth_dataset(cfg.scene, 0, n_train);
    d.test = synth_dataset(cfg.scene, n_train, n_test);
    return d;
  }
  std::vector<Sample> all = load_samples(cfg.paths.data);
  if (all.size() < n_train + n_test) {
    throw ValidationError("dataset " + cfg.paths.data + " has " + std::to_string(all.size()) + " images, need " +
                          std::to_string(n_train) + " train + " + std::to_string(n_test) + " test");
  }
  d.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  d.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                all.begin() + static_cast<std::ptrdiff_t>(n_train + n_test));
  return d;
}

void write_resolved_config(const RunConfig& cfg, const fs::path& out_dir) {
  ensure_dir(out_dir);
  write_text(out_dir / "config.resolved.json", run_config_to_json(cfg).dump(2) + "\n");
}

// ---------------------------------------------------------------------------

SynthSummary cmd_synth(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  write_resolved_config(cfg, out_dir);
  const std::size_t n = cfg.dataset.n_train + cfg.dataset.n_test;
  std::string lines;
  SynthSummary summary;
  for (std::size_t i = 0; i < n; ++i) {
    Scene scene = synth_scene(cfg.scene, i);
    write_pnm(out_dir / scene.annotation.image_id, scene.raw);
    lines += annotation_to_json_line(scene.annotation) + "\n";
    summary.heads += scene.annotation.count();
  }
  write_text(out_dir / "annotations.jsonl", lines);
  summary.images = n;
  log << "synth: " << n << " images, " << summary.heads << " heads -> " << out_dir.string() << "\n";
  return summary;
}

LabelSummary cmd_label(const RunConfig& cfg, const fs::path& out_dir, const std::vector<std::string>& kinds,
                       std::ostream& log) {
  bool want_count = false, want_density = false, want_classes = false;
  for (const auto& k : kinds) {
    if (k == "count") want_count = true;
    else if (k == "density") want_density = true;
    else if (k == "classes") want_classes = true;
    else throw ValidationError("label: unknown kind '" + k + "' (expected count, density or classes)");
  }
  validate_label_config(cfg.label);
  write_resolved_config(cfg, out_dir);

  std::vector<Sample> samples;
  if (cfg.paths.data.empty()) {
    Dataset d = load_dataset(cfg);
    samples = std::move(d.train);
    samples.insert(samples.end(), d.test.begin(), d.test.end());
  } else {
    samples = load_samples(cfg.paths.data);
  }

  LabelSummary s;
  const double k2 = static_cast<double>(cfg.label.coverage() * cfg.label.coverage());
  for (const auto& sample : samples) {
    const auto& ann = sample.annotation;
    const std::string stem = image_stem(ann.image_id);
    const double m = static_cast<double>(ann.count());
    if (want_count || want_classes) {
      const CountMap counts = make_count_map(build_location_map(ann, cfg.label.stride()), cfg.label);
      if (want_count) {
        write_label_file(out_dir / (stem + ".cmap"), LabelKind::count, counts.grid);
        ++s.files;
        double total = 0.0;
        for (double v : counts.grid.data()) total += v;
        ++s.count_checked;
        if (total == k2 * m) ++s.count_exact;
      }
      if (want_classes) {
        write_label_file(out_dir / (stem + ".kmap"), LabelKind::classes, class_map_tensor(make_class_map(counts, cfg.label)));
        ++s.files;
      }
    }
    if (want_density) {
      const DensityMap density = make_density_map(ann, cfg.label);
      write_label_file(out_dir / (stem + ".dmap"), LabelKind::density, density.grid);
      ++s.files;
      double total = 0.0;
      for (double v : density.grid.data()) total += v;
      ++s.density_checked;
      if (std::abs(total - m) <= 1e-3 * m) ++s.density_within;
    }
  }
  log << "label: " << samples.size() << " images, " << s.files << " files -> " << out_dir.string() << "\n";
  if (want_count) log << "exact: " << s.count_exact << "/" << s.count_checked << "\n";
  if (want_density) log << "density within 1e-3 m: " << s.density_within << "/" << s.density_checked << "\n";
  return s;
}

TrainSummary cmd_train(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  write_resolved_config(cfg, out_dir);
  const Dataset data = load_dataset(cfg);
  const ModelConfig model_cfg = cfg.resolved_model();
  const std::size_t coverage = target_coverage(cfg.label, cfg.train.target);

  std::ofstream train_log(out_dir / "train_log.jsonl", std::ios::binary);
  if (!train_log) throw IoError("cannot write " + (out_dir / "train_log.jsonl").string());
  TrainSummary summary;
  summary.fit = fit(data.train, data.test, model_cfg, cfg.train, [&](const TrainRecord& r) {
    train_log << record_to_json(r).dump() << "\n" << std::flush;
    log << "epoch " << r.epoch << " loss " << r.loss;
    if (r.mae) log << " mae " << *r.mae << " mse " << *r.mse;
    log << " (" << std::fixed << std::setprecision(1) << r.seconds << "s)" << std::defaultfloat
        << std::setprecision(6) << "\n";
  });

  // The checkpoint stores binary32; metrics are computed from exactly those values.
  const ModelParams stored = quantize_to_float(summary.fit.params);
  save_checkpoint(stored, out_dir / "model.rrpc");
  summary.train = evaluate_model(stored, model_cfg, data.train, coverage);
  json metrics = {{"train", metrics_to_json(summary.train)},
                  {"epochs", cfg.train.epochs},
                  {"steps", summary.fit.total_steps}};
  if (!data.test.empty()) {
    summary.test = evaluate_model(stored, model_cfg, data.test, coverage);
    summary.has_test = true;
    metrics["test"] = metrics_to_json(summary.test);
    metrics["baseline_mae"] = constant_baseline_mae(data.train, data.test);
  }
  write_text(out_dir / "metrics.json", metrics.dump(2) + "\n");
  log << "train mae " << summary.train.mae << " mse " << summary.train.mse;
  if (summary.has_test) log << " | test mae " << summary.test.mae << " mse " << summary.test.mse;
  log << "\n";
  return summary;
}

Metrics cmd_eval(const RunConfig& cfg, const fs::path& out_dir, bool heatmaps, std::ostream& log) {
  const fs::path ckpt = cfg.paths.checkpoint.empty() ? out_dir / "model.rrpc" : fs::path(cfg.paths.checkpoint);
  const ModelConfig model_cfg = cfg.resolved_model();
  const ModelParams params = load_checkpoint(ckpt);
  check_params_match(params, model_cfg);
  write_resolved_config(cfg, out_dir);

  const std::vector<Sample> samples = split_selection(cfg);
  const std::size_t coverage = target_coverage(cfg.label, cfg.train.target);
  const Metrics m = evaluate_model(params, model_cfg, samples, coverage);
  write_text(out_dir / "eval_metrics.json", metrics_to_json(m).dump(2) + "\n");

  if (heatmaps) {
    const fs::path dir = out_dir / "heatmaps";
    ensure_dir(dir);
    NoGradGuard guard;
    for (const auto& s : samples) {
      const ModelOutput out = model_forward(s.image, params, model_cfg);
      const PatchTargets targets = make_targets(s.annotation, cfg.label, cfg.train.target);
      export_heatmap(out.count, targets.regression, dir / (image_stem(s.annotation.image_id) + ".pgm"));
    }
    log << "heatmaps: " << samples.size() << " -> " << dir.string() << "\n";
  }
  log << "eval " << cfg.eval.split << " (" << samples.size() << " images): mae " << m.mae << " mse " << m.mse << "\n";
  return m;
}

bool cmd_gradcheck(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  write_resolved_config(cfg, out_dir);
  const auto& g = cfg.gradcheck;
  bool ok = true;
  log << std::left << std::setw(22) << "case" << std::setw(14) << "max_rel_err" << std::setw(10) << "tol"
      << "result\n";
  for (const auto& c : gradcheck_cases(g.op_tol, g.model_tol)) {
    const GradCaseResult r = run_grad_case(c, g.seeds, g.eps);
    ok = ok && r.passed;
    std::ostringstream err, tol;
    err << std::scientific << std::setprecision(3) << r.max_rel_error;
    tol << std::scientific << std::setprecision(0) << r.tol;
    log << std::left << std::setw(22) << r.name << std::setw(14) << err.str() << std::setw(10) << tol.str()
        << (r.passed ? "PASS" : "FAIL");
    if (!r.passed) log << "  worst " << r.worst;
    if (r.resamples) log << "  (" << r.resamples << " redraws)";
    log << "\n";
  }
  log << (ok ? "gradcheck: all cases passed\n" : "gradcheck: FAILED\n");
  return ok;
}

// ---------------------------------------------------------------------------

std::string ablation_csv(const AblationReport& report) {
  std::ostringstream out;
  out << "variant,r,gcn_layers,seed,mae,mse\n";
  out << std::setprecision(10);
  for (const auto* rows : {&report.table, &report.r_sweep, &report.gcn_sweep}) {
    for (const auto& row : *rows) {
      out << row.variant << "," << row.r << ",";
      if (row.gcn_layers) out << *row.gcn_layers;
      else out << "NA";
      out << "," << row.seed << "," << row.mae << "," << row.mse << "\n";
    }
  }
  return out.str();
}

std::string ablation_summary(const AblationReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "median test MAE over " << report.table.size() / 3 << " seeds\n";
  out << "  density_map     " << report.median_density << "\n";
  out << "  count_map       " << report.median_count << "\n";
  out << "  count_map_rram  " << report.median_count_rram << "\n";
  out << "expected direction: count_map <= density_map: "
      << (report.count_le_density ? "holds" : "DEVIATES") << "\n";
  out << "expected direction: count_map_rram <= count_map: "
      << (report.rram_le_count ? "holds" : "DEVIATES") << "\n";
  auto sweep = [&](const char* title, const std::vector<AblationRow>& rows, bool by_r) {
    std::map<std::size_t, std::vector<double>> groups;
    for (const auto& row : rows) groups[by_r ? row.r : row.gcn_layers.value_or(0)].push_back(row.mae);
    out << title << "\n";
    for (const auto& [key, maes] : groups) out << "  " << key << "  " << median(maes) << "\n";
  };
  sweep("median test MAE by r (count_map)", report.r_sweep, true);
  sweep("median test MAE by gcn_layers (count_map_rram)", report.gcn_sweep, false);
  out << "training runs: " << report.training_runs << "\n";
  return out.str();
}

AblationReport cmd_ablate(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  write_resolved_config(cfg, out_dir);
  const Dataset data = load_dataset(cfg);
  if (data.test.empty()) throw ValidationError("ablate: dataset.n_test must be > 0");

  AblationReport report;
  using Key = std::tuple<std::string, std::size_t, std::size_t, std::uint64_t>;
  std::map<Key, AblationRow> cache;

  auto run = [&](const std::string& variant, std::size_t r, std::size_t gcn_layers, std::uint64_t seed) {
    const bool rram = variant == "count_map_rram";
    const Key key{variant, r, rram ? gcn_layers : 0, seed};
    if (auto it = cache.find(key); it != cache.end()) return it->second;

    RunConfig run_cfg = cfg;
    run_cfg.seed = seed;
    run_cfg.train.seed = seed;
    run_cfg.label.r = r;
    run_cfg.rram.gcn_layers = gcn_layers;
    run_cfg.train.rram_enabled = rram;
    run_cfg.train.target = variant == "density_map" ? TargetKind::density_map : TargetKind::count_map;
    validate_run_config(run_cfg);
    const ModelConfig model_cfg = run_cfg.resolved_model();

    const FitResult result = fit(data.train, {}, model_cfg, run_cfg.train);
    const Metrics m = evaluate_model(quantize_to_float(result.params), model_cfg, data.test,
                                     target_coverage(run_cfg.label, run_cfg.train.target));
    ++report.training_runs;
    AblationRow row{variant, r, std::nullopt, seed, m.mae, m.mse};
    if (rram) row.gcn_layers = gcn_layers;
    log << "ablate: " << variant << " r=" << r << " gcn_layers=" << (rram ? std::to_string(gcn_layers) : "NA")
        << " seed=" << seed << " mae " << m.mae << " mse " << m.mse << "\n"
        << std::flush;
    cache.emplace(key, row);
    return row;
  };

  const std::size_t r0 = cfg.label.r, lg0 = cfg.rram.gcn_layers;
  std::vector<double> dens, count, rram;
  for (const char* variant : {"density_map", "count_map", "count_map_rram"}) {
    for (std::uint64_t seed : cfg.ablate.seeds) {
      AblationRow row = run(variant, r0, lg0, seed);
      report.table.push_back(row);
      (row.variant == "density_map" ? dens : row.variant == "count_map" ? count : rram).push_back(row.mae);
    }
  }
  for (std::size_t r : {4, 8, 16, 32}) {
    for (std::uint64_t seed : cfg.ablate.seeds) report.r_sweep.push_back(run("count_map", r, lg0, seed));
  }
  for (std::size_t lg : {0, 1, 2, 3}) {
    for (std::uint64_t seed : cfg.ablate.seeds) report.gcn_sweep.push_back(run("count_map_rram", r0, lg, seed));
  }
  report.median_density = median(dens);
  report.median_count = median(count);
  report.median_count_rram = median(rram);
  report.count_le_density = report.median_count <= report.median_density;
  report.rram_le_count = report.median_count_rram <= report.median_count;

  const std::string csv = ablation_csv(report), summary = ablation_summary(report);
  write_text(out_dir / "ablation.csv", csv);
  write_text(out_dir / "ablation_report.txt", summary);
  log << summary;
  return report;
}

}  // namespace rrp
