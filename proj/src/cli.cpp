#include "pnerf/cli.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "pnerf/error.hpp"
#include "pnerf/geometry.hpp"
#include "pnerf/pipeline.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace pnerf {

namespace {

void make_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string() + (ec ? ": " + ec.message() : ""));
  }
}

void require_dir(const std::filesystem::path& dir, const std::string& what) {
  if (dir.empty()) throw ConfigError("no " + what + " given");
  if (!std::filesystem::is_directory(dir)) throw IoError(what + " " + dir.string() + " does not exist");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string numbered(const char* prefix, std::size_t i, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%03zu%s", prefix, i, suffix);
  return buf;
}

}  // namespace

void cmd_gen(const RunConfig& config, std::ostream& log) {
  const Dataset ds = make_dataset(scene_preset(config.scene), config.dataset_spec());
  make_dir(config.out_dir);
  save_dataset(ds, config.out_dir);
  write_config(config.out_dir / "gen_config.txt", config);
  log << "wrote " << ds.views.size() << " views to " << config.out_dir.string() << '\n';
}

TrainResult cmd_train(const RunConfig& config, std::ostream& log) {
  require_dir(config.dataset_dir, "dataset");
  const TrainConfig tc = config.train_config();
  tc.validate();
  const Dataset ds = load_dataset(config.dataset_dir);
  make_dir(config.out_dir);
  write_config(config.out_dir / "config.txt", config);
  TrainResult result = train(ds, tc, [&](const std::string& line) { log << line << '\n'; });
  save_training(config.out_dir, result);
  log << "best epoch " << result.best_epoch << " val_psnr " << format_metric(result.best_val_psnr) << '\n';
  return result;
}

void cmd_render(const RunConfig& config, std::ostream& log) {
  require_dir(config.checkpoint_dir, "checkpoint directory");
  if (config.poses_file.empty()) throw ConfigError("no pose file given");
  const FieldPair<double> nets = load_fields(config.checkpoint_dir);
  const std::vector<Pose> poses = read_poses(config.poses_file);
  const DatasetSpec spec = config.dataset_spec();
  spec.intrinsics.validate();
  make_dir(config.out_dir);
  write_config(config.out_dir / "config.txt", config);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const RenderedView view =
        render_view(nets, spec.intrinsics, poses[i], spec.t_near, spec.t_far, config.train.sampling, config.threads);
    write_pfr(config.out_dir / numbered("render_", i, "_rgb.pfr"), view.rgb);
    write_pfr(config.out_dir / numbered("render_", i, "_depth.pfr"), view.depth);
    write_png(config.out_dir / numbered("render_", i, "_rgb.png"), view.rgb);
    write_png(config.out_dir / numbered("render_", i, "_depth.png"), view.depth, spec.t_far);
  }
  log << "rendered " << poses.size() << " poses to " << config.out_dir.string() << '\n';
}

EvalReport cmd_eval(const RunConfig& config, std::ostream& log) {
  require_dir(config.checkpoint_dir, "checkpoint directory");
  require_dir(config.dataset_dir, "dataset");
  const FieldPair<double> nets = load_fields(config.checkpoint_dir);
  const Dataset ds = load_dataset(config.dataset_dir);
  const EvalReport report = evaluate(nets, ds, config.eval_split, config.train.sampling, config.threads);
  make_dir(config.out_dir);
  write_config(config.out_dir / "eval_config.txt", config);
  write_eval_csv(config.out_dir / "eval.csv", report);
  const std::string table = format_eval_table(report);
  write_text(config.out_dir / "eval.txt", table);
  log << table;
  return report;
}

std::vector<std::pair<std::string, LossGains>> ablation_arms() {
  return {{"photo", {1.0, 0.0, 0.0}}, {"photo+density", {1.0, 1.0, 0.0}}, {"photo+density+depth", {1.0, 1.0, 1.0}}};
}

std::vector<AblationRow> cmd_ablate(const RunConfig& config, std::ostream& log) {
  require_dir(config.dataset_dir, "dataset");
  const std::string hash = dataset_hash(config.dataset_dir);
  const Dataset ds = load_dataset(config.dataset_dir);
  if (ds.indices(Split::test).empty()) throw ConfigError("ablation: dataset has no test views");
  make_dir(config.out_dir);
  write_config(config.out_dir / "config.txt", config);

  std::vector<AblationRow> rows;
  for (const auto& [arm, gains] : ablation_arms()) {
    TrainConfig tc = config.train_config();
    tc.gains = gains;
    log << "arm " << arm << '\n';
    const TrainResult result = train(ds, tc, [&](const std::string& line) { log << "  " << line << '\n'; });
    const EvalReport report = evaluate(result.best, ds, Split::test, tc.sampling, tc.threads);
    rows.push_back({arm, gains, hash, report.mean(), result.best_epoch});
  }
  write_text(config.out_dir / "ablation.csv", format_ablation_csv(rows));
  const std::string table = format_ablation_table(rows);
  write_text(config.out_dir / "ablation.txt", table);
  log << table;
  return rows;
}

std::string format_ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "arm,gains,dataset_hash,best_epoch,psnr,ssim,depth_rmse,mean_pdf_l1\n";
  for (const AblationRow& r : rows) {
    out << r.arm << ",\"" << format_gains(r.gains) << "\"," << r.dataset_hash << ',' << r.best_epoch << ','
        << format_metric(r.metrics.psnr) << ',' << format_metric(r.metrics.ssim) << ','
        << format_metric(r.metrics.depth_rmse) << ',' << format_metric(r.metrics.mean_pdf_l1) << '\n';
  }
  return out.str();
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-22s %10s %10s %12s %12s\n", "loss", "psnr", "ssim", "depth_rmse", "pdf_l1");
  out << line;
  for (const AblationRow& r : rows) {
    std::snprintf(line, sizeof(line), "%-22s %10s %10s %12s %12s\n", r.arm.c_str(), format_metric(r.metrics.psnr).c_str(),
                  format_metric(r.metrics.ssim).c_str(), format_metric(r.metrics.depth_rmse).c_str(),
                  format_metric(r.metrics.mean_pdf_l1).c_str());
    out << line;
  }
  if (!rows.empty()) out << "dataset " << rows.front().dataset_hash << '\n';
  return out.str();
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UsageError*>(&e) ||
      dynamic_cast<const DomainError*>(&e)) {
    return 2;
  }
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const IoError*>(&e)) return 3;
  if (dynamic_cast<const DivergenceError*>(&e) || dynamic_cast<const NumericError*>(&e)) return 4;
  return 1;
}

}  // namespace pnerf
