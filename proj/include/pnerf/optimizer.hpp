#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pnerf/field_mlp.hpp"
#include "pnerf/losses.hpp"
#include "pnerf/pipeline.hpp"
#include "pnerf/scenes.hpp"

namespace pnerf {

struct AdamConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

template <typename Scalar>
struct AdamState {
  AdamConfig config;
  Vector<Scalar> m;
  Vector<Scalar> v;
  std::uint64_t step = 0;

  static AdamState for_params(const MlpParams<Scalar>& params, const AdamConfig& config = {}) {
    return {config, Vector<Scalar>::Zero(params.size()), Vector<Scalar>::Zero(params.size()), 0};
  }
};

/// Bias-corrected Adam update. Returns false and leaves params and state
/// untouched when the gradient has a non-finite entry.
template <typename Scalar>
bool adam_step(MlpParams<Scalar>& params, const ParamGrad<Scalar>& grad, AdamState<Scalar>& state);

/// Header "PNERF-ADAM 1" with hyperparameters and step, then m and v as little-endian float64.
void save_adam_state(const std::filesystem::path& path, const AdamState<double>& state);
AdamState<double> load_adam_state(const std::filesystem::path& path);

enum class Precision { f64, f32 };
std::string to_string(Precision p);
Precision parse_precision(const std::string& name);

struct TrainConfig {
  /// Passes over all training pixels. Ignored when `iterations` > 0.
  int epochs = 200;
  /// Total number of batches; the last epoch may be partial.
  long iterations = 0;
  int batch_rays = 2048;
  SamplingSettings sampling;
  LossGains gains;
  std::uint64_t seed = 0;
  bool deterministic = true;
  /// Validation every this many epochs (0: only after the last one).
  int eval_interval = 1;
  int threads = 1;
  /// Rays per work item; fixes the reduction order independently of `threads`.
  int chunk_rays = 32;
  AdamConfig adam;
  FieldArchitecture arch;
  Precision precision = Precision::f64;
  /// Initial density head bias of both networks.
  double density_bias = 0.0;
  /// Use only the first this many training views (0: all).
  int train_views = 0;
  /// Scale depth terms by the per-ray target confidence.
  bool use_confidence = true;
  /// Overrides every target's sigma when positive.
  double target_sigma = 0.0;
  /// Derive the architecture's scene center and scale from the training rays.
  bool normalize_scene = true;

  void validate() const;
};

struct HistoryRow {
  int epoch = 0;
  LossBreakdown loss;  // mean over the epoch's batches
  double val_psnr = 0.0;
  double val_ssim = 0.0;
};

struct TrainResult {
  FieldPair<double> best;
  FieldPair<double> last;
  AdamState<double> adam_coarse;
  AdamState<double> adam_fine;
  std::vector<HistoryRow> history;
  int best_epoch = 0;
  double best_val_psnr = 0.0;
  long iterations = 0;
  std::size_t skipped_steps = 0;
  std::size_t skipped_targets = 0;
};

using TrainLog = std::function<void(const std::string&)>;

/// Scene center and scale mapping the ray segments of the training views into [-1, 1]^3.
std::pair<Vec3, double> scene_normalization(const Dataset& dataset, const std::vector<std::size_t>& views);

/// Training views after the `train_views` limit.
std::vector<std::size_t> training_views(const Dataset& dataset, const TrainConfig& config);

/// Joint coarse/fine training. Validation uses the val split, or the training
/// views when the dataset has none; the best epoch by validation PSNR is kept.
TrainResult train(const Dataset& dataset, const TrainConfig& config, const TrainLog& log = {});

/// "epoch,total,color,density,depth,val_psnr,val_ssim"
void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history);

/// coarse.ckpt, fine.ckpt (best epoch), adam_coarse.state, adam_fine.state, history.csv.
void save_training(const std::filesystem::path& dir, const TrainResult& result);
FieldPair<double> load_fields(const std::filesystem::path& dir);

}  // namespace pnerf
