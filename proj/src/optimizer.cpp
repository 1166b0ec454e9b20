#include "pnerf/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "binary_io.hpp"
#include "pnerf/error.hpp"
#include "pnerf/random.hpp"

namespace pnerf {

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("adam: learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam: beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam: beta2 must be in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("adam: epsilon must be positive");
}

template <typename Scalar>
bool adam_step(MlpParams<Scalar>& params, const ParamGrad<Scalar>& grad, AdamState<Scalar>& state) {
  if (grad.values.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw UsageError("adam_step: gradient, state and parameters differ in size");
  }
  if (!grad.values.allFinite()) return false;
  const AdamConfig& c = state.config;
  ++state.step;
  const auto t = static_cast<double>(state.step);
  const Scalar b1 = static_cast<Scalar>(c.beta1), b2 = static_cast<Scalar>(c.beta2);
  state.m = b1 * state.m + (Scalar(1) - b1) * grad.values;
  state.v = b2 * state.v + (Scalar(1) - b2) * grad.values.cwiseAbs2();
  const auto step_size = static_cast<Scalar>(c.learning_rate / (1.0 - std::pow(c.beta1, t)));
  const auto v_scale = static_cast<Scalar>(1.0 / (1.0 - std::pow(c.beta2, t)));
  const auto eps = static_cast<Scalar>(c.epsilon);
  params.values.array() -= step_size * state.m.array() / ((state.v.array() * v_scale).sqrt() + eps);
  ++params.generation;
  return true;
}

template bool adam_step<double>(MlpParams<double>&, const ParamGrad<double>&, AdamState<double>&);
template bool adam_step<float>(MlpParams<float>&, const ParamGrad<float>&, AdamState<float>&);

namespace {

constexpr const char* kAdamMagic = "PNERF-ADAM 1";

}  // namespace

void save_adam_state(const std::filesystem::path& path, const AdamState<double>& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write optimizer state " + path.string());
  out << std::setprecision(17) << kAdamMagic << '\n';
  out << "learning_rate " << state.config.learning_rate << '\n';
  out << "beta1 " << state.config.beta1 << '\n';
  out << "beta2 " << state.config.beta2 << '\n';
  out << "epsilon " << state.config.epsilon << '\n';
  out << "step " << state.step << '\n';
  out << "values " << state.m.size() << '\n';
  out << "data\n";
  detail::write_f64_le(out, {state.m.data(), static_cast<std::size_t>(state.m.size())});
  detail::write_f64_le(out, {state.v.data(), static_cast<std::size_t>(state.v.size())});
  if (!out) throw IoError("failed writing optimizer state " + path.string());
}

AdamState<double> load_adam_state(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open optimizer state " + path.string());
  detail::HeaderReader header(in, "optimizer state " + path.string());
  std::string magic;
  if (!std::getline(in, magic) || magic != kAdamMagic) header.fail("magic");
  AdamState<double> s;
  s.config.learning_rate = header.value<double>("learning_rate");
  s.config.beta1 = header.value<double>("beta1");
  s.config.beta2 = header.value<double>("beta2");
  s.config.epsilon = header.value<double>("epsilon");
  s.step = header.value<std::uint64_t>("step");
  const auto n = header.value<Index>("values");
  if (n < 0) header.fail("values");
  header.expect("data");
  s.m.resize(n);
  s.v.resize(n);
  if (!detail::read_f64_le(in, {s.m.data(), static_cast<std::size_t>(n)}) ||
      !detail::read_f64_le(in, {s.v.data(), static_cast<std::size_t>(n)}) ||
      in.peek() != std::char_traits<char>::eof()) {
    header.fail("data");
  }
  return s;
}

std::string to_string(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

Precision parse_precision(const std::string& name) {
  if (name == "f64" || name == "double") return Precision::f64;
  if (name == "f32" || name == "float") return Precision::f32;
  throw ConfigError("unknown precision '" + name + "'");
}

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("train: iterations must be non-negative");
  if (iterations == 0 && epochs < 0) throw ConfigError("train: epochs must be non-negative");
  if (batch_rays < 1) throw ConfigError("train: batch_rays must be at least 1");
  if (sampling.n_coarse < 2) throw ConfigError("train: n_coarse must be at least 2");
  if (sampling.n_fine < 1) throw ConfigError("train: n_fine must be at least 1");
  if (eval_interval < 0) throw ConfigError("train: eval_interval must be non-negative");
  if (threads < 1) throw ConfigError("train: threads must be at least 1");
  if (chunk_rays < 1) throw ConfigError("train: chunk_rays must be at least 1");
  if (train_views < 0) throw ConfigError("train: train_views must be non-negative");
  if (target_sigma < 0.0) throw ConfigError("train: target_sigma must be non-negative");
  gains.validate();
  adam.validate();
  arch.validate();
}

std::vector<std::size_t> training_views(const Dataset& dataset, const TrainConfig& config) {
  std::vector<std::size_t> views = dataset.indices(Split::train);
  if (config.train_views > 0 && static_cast<std::size_t>(config.train_views) < views.size()) {
    views.resize(static_cast<std::size_t>(config.train_views));
  }
  return views;
}

std::pair<Vec3, double> scene_normalization(const Dataset& dataset, const std::vector<std::size_t>& views) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  const CameraIntrinsics& intr = dataset.intrinsics;
  const int cols[] = {0, intr.width - 1};
  const int rows[] = {0, intr.height - 1};
  for (const std::size_t v : views) {
    for (const int r : rows) {
      for (const int c : cols) {
        const Ray ray = generate_ray(intr, dataset.views[v].pose, r, c, Vec2(0.5, 0.5), dataset.t_near, dataset.t_far);
        for (const double t : {dataset.t_near, dataset.t_far}) {
          lo = lo.cwiseMin(ray.at(t));
          hi = hi.cwiseMax(ray.at(t));
        }
      }
    }
  }
  const double extent = (hi - lo).maxCoeff();
  if (!(extent > 0.0) || !std::isfinite(extent)) return {Vec3::Zero(), 1.0};
  return {0.5 * (lo + hi), 2.0 / extent};
}

namespace {

struct PixelRef {
  std::uint32_t view = 0;
  int row = 0;
  int col = 0;
};

struct TrainingSet {
  std::vector<std::size_t> views;
  std::vector<PixelRef> pixels;
  /// Per training view, row-major per-pixel targets (present == false when absent).
  std::vector<std::vector<DepthTarget>> targets;
};

TrainingSet build_training_set(const Dataset& dataset, const TrainConfig& config) {
  TrainingSet set;
  set.views = training_views(dataset, config);
  if (set.views.empty()) throw ConfigError("train: dataset has no training views");
  const int w = dataset.intrinsics.width, h = dataset.intrinsics.height;
  for (std::size_t i = 0; i < set.views.size(); ++i) {
    const View& view = dataset.views[set.views[i]];
    std::vector<DepthTarget> table(static_cast<std::size_t>(w) * h);
    if (view.targets) {
      for (const DepthRow& r : *view.targets) {
        DepthTarget t = r.target;
        if (!config.use_confidence) t.confidence = 1.0;
        if (config.target_sigma > 0.0) t.sigma = config.target_sigma;
        t.present = true;
        table[static_cast<std::size_t>(r.row) * w + r.col] = t;
      }
    }
    set.targets.push_back(std::move(table));
    for (int row = 0; row < h; ++row) {
      for (int col = 0; col < w; ++col) set.pixels.push_back({static_cast<std::uint32_t>(i), row, col});
    }
  }
  return set;
}

template <typename Scalar>
FieldPair<double> as_double(const FieldPair<Scalar>& nets) {
  return {nets.coarse.template cast<double>(), nets.fine.template cast<double>()};
}

template <typename Scalar>
AdamState<double> adam_as_double(const AdamState<Scalar>& s) {
  return {s.config, s.m.template cast<double>(), s.v.template cast<double>(), s.step};
}

LossBreakdown scaled(const LossBreakdown& sum, double count) {
  LossBreakdown b = sum;
  if (count > 0) {
    b.total /= count;
    b.color_term /= count;
    b.density_term /= count;
    b.depth_term /= count;
  }
  return b;
}

std::string describe(const LossBreakdown& b) {
  std::ostringstream s;
  s << "total " << b.total << " color " << b.color_term << " density " << b.density_term << " depth " << b.depth_term;
  return s.str();
}

template <typename Scalar>
TrainResult train_impl(const Dataset& dataset, const TrainConfig& config, const TrainLog& log) {
  const TrainingSet set = build_training_set(dataset, config);
  FieldArchitecture arch = config.arch;
  if (config.normalize_scene) std::tie(arch.scene_center, arch.scene_scale) = scene_normalization(dataset, set.views);

  FieldPair<Scalar> nets{init_params<Scalar>(arch, mix_seed(config.seed, 1), config.density_bias),
                         init_params<Scalar>(arch, mix_seed(config.seed, 2), config.density_bias)};
  AdamState<Scalar> adam_c = AdamState<Scalar>::for_params(nets.coarse, config.adam);
  AdamState<Scalar> adam_f = AdamState<Scalar>::for_params(nets.fine, config.adam);

  std::vector<std::size_t> val_views = dataset.indices(Split::val);
  Dataset val_set{dataset.intrinsics, dataset.t_near, dataset.t_far, {}};
  for (const std::size_t v : val_views.empty() ? set.views : val_views) {
    View view = dataset.views[v];
    view.split = Split::val;
    view.targets.reset();
    val_set.views.push_back(std::move(view));
  }

  const std::size_t n_pixels = set.pixels.size();
  const auto batch = static_cast<std::size_t>(config.batch_rays);
  const long batches_per_epoch = static_cast<long>((n_pixels + batch - 1) / batch);
  const long total_iterations = config.iterations > 0 ? config.iterations : long(config.epochs) * batches_per_epoch;

  TrainResult result;
  result.best = as_double(nets);
  result.best_val_psnr = -std::numeric_limits<double>::infinity();

  Rng rng(mix_seed(config.seed, 3));
  std::vector<std::size_t> order(n_pixels);
  const int n_coarse = config.sampling.n_coarse, n_fine = config.sampling.n_fine;
  const auto chunk = static_cast<std::size_t>(config.chunk_rays);
  int consecutive_bad = 0;

  for (int epoch = 1; result.iterations < total_iterations; ++epoch) {
    for (std::size_t i = 0; i < n_pixels; ++i) order[i] = i;
    shuffle(order, rng);
    LossBreakdown epoch_sum;
    double epoch_batches = 0;

    for (std::size_t start = 0; start < n_pixels && result.iterations < total_iterations; start += batch) {
      const std::size_t count = std::min(batch, n_pixels - start);
      std::vector<Ray> rays(count);
      std::vector<SampleGrid> grids(count);
      std::vector<RaySupervision> sups(count);
      std::vector<double> fine_draws(count * static_cast<std::size_t>(n_fine));
      for (std::size_t i = 0; i < count; ++i) {
        const PixelRef& p = set.pixels[order[start + i]];
        const View& view = dataset.views[set.views[p.view]];
        rays[i] = generate_ray(dataset.intrinsics, view.pose, p.row, p.col, Vec2(0.5, 0.5), dataset.t_near, dataset.t_far);
        grids[i] = stratified_samples(rays[i], n_coarse, uniform_draws(rng, static_cast<std::size_t>(n_coarse)));
        for (int k = 0; k < n_fine; ++k) fine_draws[i * n_fine + k] = uniform01(rng);
        for (int ch = 0; ch < 3; ++ch) sups[i].rgb(ch) = view.rgb.at(p.row, p.col, ch);
        sups[i].depth = set.targets[p.view][static_cast<std::size_t>(p.row) * dataset.intrinsics.width + p.col];
      }
      const LossNormalization norm = LossNormalization::for_batch(sups);

      const std::size_t n_chunks = (count + chunk - 1) / chunk;
      std::vector<BatchGradient<Scalar>> parts(n_chunks);
      parallel_for(n_chunks, config.threads, [&](std::size_t c) {
        const std::size_t begin = c * chunk;
        const std::size_t len = std::min(chunk, count - begin);
        parts[c] = BatchGradient<Scalar>::zeros_like(nets);
        const FineGridFn fine = [&, begin](std::size_t i, const SampleGrid& coarse, const VecX& weights) {
          const std::span<const double> draws(fine_draws.data() + (begin + i) * n_fine, static_cast<std::size_t>(n_fine));
          return hierarchical_resample(coarse, weights, n_fine, draws);
        };
        accumulate_batch(nets, std::span<const Ray>(rays).subspan(begin, len),
                         std::span<const SampleGrid>(grids).subspan(begin, len), fine,
                         std::span<const RaySupervision>(sups).subspan(begin, len), config.gains, norm, parts[c],
                         static_cast<long>(begin));
      });
      BatchGradient<Scalar> sum = std::move(parts[0]);
      for (std::size_t c = 1; c < n_chunks; ++c) sum += parts[c];
      result.skipped_targets += sum.skipped;
      const LossBreakdown loss = make_breakdown(sum.color, sum.density, sum.depth, count, config.gains);
      ++result.iterations;

      if (!std::isfinite(loss.total)) {
        if (++consecutive_bad >= 2) {
          throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", iteration " +
                                std::to_string(result.iterations) + ": " + describe(loss));
        }
        if (log) log("non-finite loss at iteration " + std::to_string(result.iterations) + ", step skipped");
        ++result.skipped_steps;
        continue;
      }
      consecutive_bad = 0;
      const bool ok_c = adam_step(nets.coarse, sum.coarse, adam_c);
      const bool ok_f = adam_step(nets.fine, sum.fine, adam_f);
      if (!ok_c || !ok_f) {
        ++result.skipped_steps;
        if (log) log("non-finite gradient at iteration " + std::to_string(result.iterations) + ", step skipped");
      }
      epoch_sum.total += loss.total;
      epoch_sum.color_term += loss.color_term;
      epoch_sum.density_term += loss.density_term;
      epoch_sum.depth_term += loss.depth_term;
      epoch_sum.ray_count += count;
      epoch_batches += 1;
    }

    HistoryRow row;
    row.epoch = epoch;
    row.loss = scaled(epoch_sum, epoch_batches);
    row.val_psnr = row.val_ssim = std::numeric_limits<double>::quiet_NaN();
    const bool last = result.iterations >= total_iterations;
    if (last || (config.eval_interval > 0 && epoch % config.eval_interval == 0)) {
      const FieldPair<double> snapshot = as_double(nets);
      const EvalRow mean = evaluate(snapshot, val_set, Split::val, config.sampling, config.threads).mean();
      row.val_psnr = mean.psnr;
      row.val_ssim = mean.ssim;
      if (mean.psnr > result.best_val_psnr) {
        result.best_val_psnr = mean.psnr;
        result.best_epoch = epoch;
        result.best = snapshot;
      }
    }
    result.history.push_back(row);
    if (log) {
      std::ostringstream s;
      s << "epoch " << epoch << " " << describe(row.loss) << " val_psnr " << format_metric(row.val_psnr);
      log(s.str());
    }
  }

  result.last = as_double(nets);
  result.adam_coarse = adam_as_double(adam_c);
  result.adam_fine = adam_as_double(adam_f);
  if (result.history.empty()) result.best_val_psnr = std::numeric_limits<double>::quiet_NaN();
  return result;
}

}  // namespace

TrainResult train(const Dataset& dataset, const TrainConfig& config, const TrainLog& log) {
  config.validate();
  dataset.validate();
  return config.precision == Precision::f64 ? train_impl<double>(dataset, config, log)
                                            : train_impl<float>(dataset, config, log);
}

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write history " + path.string());
  out << "epoch,total,color,density,depth,val_psnr,val_ssim\n";
  for (const HistoryRow& r : history) {
    out << r.epoch << ',' << format_metric(r.loss.total) << ',' << format_metric(r.loss.color_term) << ','
        << format_metric(r.loss.density_term) << ',' << format_metric(r.loss.depth_term) << ','
        << format_metric(r.val_psnr) << ',' << format_metric(r.val_ssim) << '\n';
  }
  if (!out) throw IoError("failed writing history " + path.string());
}

void save_training(const std::filesystem::path& dir, const TrainResult& result) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  save_checkpoint(dir / "coarse.ckpt", result.best.coarse);
  save_checkpoint(dir / "fine.ckpt", result.best.fine);
  save_adam_state(dir / "adam_coarse.state", result.adam_coarse);
  save_adam_state(dir / "adam_fine.state", result.adam_fine);
  write_history_csv(dir / "history.csv", result.history);
}

FieldPair<double> load_fields(const std::filesystem::path& dir) {
  return {load_checkpoint(dir / "coarse.ckpt"), load_checkpoint(dir / "fine.ckpt")};
}

}  // namespace pnerf
