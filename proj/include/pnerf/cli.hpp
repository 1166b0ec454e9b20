#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "pnerf/config.hpp"
#include "pnerf/metrics.hpp"

namespace pnerf {

/// Writes the dataset to config.out_dir.
void cmd_gen(const RunConfig& config, std::ostream& log);

/// Trains on config.dataset_dir; checkpoints, optimizer state and history go to config.out_dir.
TrainResult cmd_train(const RunConfig& config, std::ostream& log);

/// Renders every pose of config.poses_file with the checkpoint in
/// config.checkpoint_dir: render_NNN_{rgb,depth}.{pfr,png} in config.out_dir.
void cmd_render(const RunConfig& config, std::ostream& log);

/// Evaluates the checkpoint on config.eval_split; writes eval.csv and eval.txt.
EvalReport cmd_eval(const RunConfig& config, std::ostream& log);

struct AblationRow {
  std::string arm;
  LossGains gains;
  std::string dataset_hash;
  EvalRow metrics;  // mean over the test views
  int best_epoch = 0;
};

/// Arms in report order: photometric, photometric + density, full loss.
std::vector<std::pair<std::string, LossGains>> ablation_arms();

/// Trains the three arms with the configured seed and evaluates each on the
/// test split; writes ablation.csv and ablation.txt.
std::vector<AblationRow> cmd_ablate(const RunConfig& config, std::ostream& log);

std::string format_ablation_csv(const std::vector<AblationRow>& rows);
std::string format_ablation_table(const std::vector<AblationRow>& rows);

/// Keeps large training buffers on the heap between batches instead of
/// returning them to the system (glibc only; no-op elsewhere).
void tune_allocator();

/// Exit code for an exception: 2 configuration, 3 data, 4 numeric, 1 otherwise.
int exit_code_for(const std::exception& e);

}  // namespace pnerf
