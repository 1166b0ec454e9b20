// Acceptance checks. Usage: acceptance [criterion ...]; no arguments runs all.
// Prints one PASS/FAIL line per criterion and exits non-zero on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <sstream>
#include <string>

#include "pnerf/cli.hpp"
#include "pnerf/error.hpp"
#include "pnerf/random.hpp"
#include "pnerf/renderer.hpp"

using namespace pnerf;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("pnerf_acceptance_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Desk-scale run settings shared by the training criteria.
RunConfig desk_config(const std::filesystem::path& root) {
  RunConfig c;
  c.seed = 7;
  c.threads = 1;
  c.deterministic = true;
  c.dataset.n_views = 3;
  c.dataset.depth_sigma = 0.05;
  c.train.iterations = 2000;
  c.train.batch_rays = 128;
  c.train.sampling = {32, 32};
  c.train.eval_interval = 25;
  c.train.adam.learning_rate = 2e-3;
  c.train.arch.hidden_width = 64;
  c.train.arch.color_width = 32;
  c.dataset_dir = root / "data";
  c.out_dir = root / "data";
  return c;
}

EvalRow train_and_test(const RunConfig& config, const LossGains& gains) {
  std::ostringstream log;
  TrainConfig tc = config.train_config();
  tc.gains = gains;
  const Dataset ds = load_dataset(config.dataset_dir);
  const TrainResult r = train(ds, tc);
  return evaluate(r.best, ds, Split::test, tc.sampling, tc.threads).mean();
}

std::vector<SampleGrid> fine_grids_of(const std::vector<RayRender>& renders) {
  std::vector<SampleGrid> out;
  for (const RayRender& r : renders) out.push_back(r.grid_fine);
  return out;
}

// Smallest |pre-activation| of any ReLU unit over the samples of the grids.
double relu_margin(const MlpParams<double>& params, const std::vector<Ray>& rays, const std::vector<SampleGrid>& grids) {
  const EncodedSamples<double> enc = encode_samples<double>(params.arch, rays, grids);
  FieldCache<double> cache;
  field_forward(params, enc.pos, enc.dir, &cache);
  double margin = INFINITY;
  for (Index l = 0; l < params.num_layers(); ++l) {
    if (params.layers[l].activation == Activation::relu) margin = std::min(margin, cache.pre[l].cwiseAbs().minCoeff());
  }
  return margin;
}

// 1: analytic parameter gradients of the total loss against central differences.
Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(20240601);
  double worst = 0.0;
  long checked = 0;
  int redrawn = 0;
  for (int trial = 0; trial < 100; ++trial) {
    FieldArchitecture arch;
    arch.pos_frequencies = 1 + static_cast<int>(uniform_index(rng, 3));
    arch.dir_frequencies = 1 + static_cast<int>(uniform_index(rng, 2));
    arch.hidden_layers = 2;
    arch.hidden_width = 4 + static_cast<int>(uniform_index(rng, 5));
    arch.skip_layer = uniform01(rng) < 0.5 ? 1 : -1;
    arch.color_width = 3 + static_cast<int>(uniform_index(rng, 4));
    arch.hidden_activation = uniform01(rng) < 0.5 ? Activation::relu : Activation::softplus;
    FieldPair<double> nets{init_params<double>(arch, rng(), uniform(rng, -1.0, 1.0)),
                           init_params<double>(arch, rng(), uniform(rng, -1.0, 1.0))};
    // Perturb the zero biases so every layer sees non-trivial gradients.
    for (MlpParams<double>* p : {&nets.coarse, &nets.fine}) {
      for (Index l = 0; l < p->num_layers(); ++l) {
        for (Index k = 0; k < p->bias(l).size(); ++k) p->bias(l)(k) += uniform(rng, -0.3, 0.3);
      }
    }

    std::vector<Ray> rays;
    std::vector<SampleGrid> coarse;
    std::vector<RaySupervision> sups;
    for (int i = 0; i < 2; ++i) {
      Vec3 d(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3), -1.0);
      rays.push_back(Ray{Vec3(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), 0.0), d.normalized(), 0.5, 3.0});
      coarse.push_back(stratified_samples(rays.back(), 8, uniform_draws(rng, 8)));
      RaySupervision s;
      s.rgb = Vec3(uniform01(rng), uniform01(rng), uniform01(rng));
      s.depth = {uniform(rng, 1.0, 2.5), uniform(rng, 0.2, 0.8), uniform(rng, 0.3, 1.0), true};
      sups.push_back(s);
    }
    const LossGains gains{uniform(rng, 0.5, 1.5), uniform(rng, 0.5, 1.5), uniform(rng, 0.5, 1.5)};
    const LossNormalization norm = LossNormalization::for_batch(sups);

    // Resampling is a stop-gradient path: freeze the fine grids of the base point.
    const auto base_renders = render_rays(nets, std::span<const Ray>(rays), std::span<const SampleGrid>(coarse),
                                          eval_fine_grids(8));
    // Central differences are meaningless across a ReLU kink; redraw such configurations.
    if (arch.hidden_activation == Activation::relu &&
        std::min(relu_margin(nets.coarse, rays, coarse),
                 relu_margin(nets.fine, rays, fine_grids_of(base_renders))) < 1e-4) {
      ++redrawn;
      --trial;
      continue;
    }
    const FineGridFn frozen = [&](std::size_t i, const SampleGrid&, const VecX&) { return base_renders[i].grid_fine; };

    auto loss_at = [&](const FieldPair<double>& n, BatchGradient<double>* g) {
      BatchGradient<double> out = BatchGradient<double>::zeros_like(n);
      accumulate_batch(n, std::span<const Ray>(rays), std::span<const SampleGrid>(coarse), frozen,
                       std::span<const RaySupervision>(sups), gains, norm, out);
      if (g) *g = out;
      return make_breakdown(out.color, out.density, out.depth, rays.size(), gains).total;
    };
    BatchGradient<double> grad;
    loss_at(nets, &grad);
    const double h = 1e-5;
    for (int which = 0; which < 2; ++which) {
      MlpParams<double>& p = which == 0 ? nets.coarse : nets.fine;
      const VecX& analytic = which == 0 ? grad.coarse.values : grad.fine.values;
      for (Index k = 0; k < p.size(); ++k) {
        const double saved = p.values(k);
        p.values(k) = saved + h;
        const double up = loss_at(nets, nullptr);
        p.values(k) = saved - h;
        const double down = loss_at(nets, nullptr);
        p.values(k) = saved;
        const double fd = (up - down) / (2 * h);
        const double err = std::abs(analytic(k) - fd) / std::max({std::abs(analytic(k)), std::abs(fd), 1e-6});
        worst = std::max(worst, err);
        ++checked;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && secs < 60.0,
          fmt("max rel error %.3g over %ld parameters in 100 configurations (limit 1e-3), %d redrawn near a ReLU "
              "kink, %.1f s (limit 60 s)",
              worst, checked, redrawn, secs)};
}

// 2: homogeneous medium closed form and an opaque plane.
Outcome renderer_oracle() {
  Ray ray;
  ray.t_near = 0.0;
  ray.t_far = 1.0;
  const SampleGrid g = stratified_samples(ray, 256, std::vector<double>(256, 0.5));
  const Vec3 c(0.3, 0.6, 0.9);
  const RenderResult r = composite(g, c.replicate(1, 256), VecX::Constant(256, 2.0));
  const double absorbed = 1.0 - std::exp(-2.0);
  const double color_err = (r.color - c * absorbed).cwiseAbs().maxCoeff();
  const double depth_err = std::abs(r.depth - (1.0 - 3.0 * std::exp(-2.0)) / (2.0 * absorbed));

  // Plane z = -6 seen by rays through a 9x9 pixel grid; density 1e3 behind the plane.
  const CameraIntrinsics intr = CameraIntrinsics::centered(9, 9, 8.0);
  double worst_bins = 0.0;
  for (int row = 0; row < 9; ++row) {
    for (int col = 0; col < 9; ++col) {
      const Ray pr = generate_ray(intr, Pose{}, row, col, Vec2(0.5, 0.5), 1.0, 10.0);
      const SampleGrid pg = stratified_samples(pr, 64, std::vector<double>(64, 0.5));
      VecX tau(64);
      for (Index k = 0; k < 64; ++k) tau(k) = pr.at(pg.t(k)).z() <= -6.0 ? 1e3 : 0.0;
      const double truth = -6.0 / pr.direction.z();
      const double bin = (pr.t_far - pr.t_near) / 64.0;
      worst_bins = std::max(worst_bins, std::abs(composite(pg, Mat3X::Ones(3, 64), tau).depth - truth) / bin);
    }
  }
  return {color_err < 1e-3 && depth_err < 2e-3 && worst_bins <= 1.0,
          fmt("color err %.3g (limit 1e-3), depth err %.3g (limit 2e-3), plane depth err %.3f bins (limit 1)", color_err,
              depth_err, worst_bins)};
}

// 3: depth PDF normalization, scale invariance and Gaussian discretization.
Outcome pdf_properties() {
  Rng rng(31337);
  double worst_sum = 0.0, worst_scale = 0.0;
  long below_floor = 0;
  for (int i = 0; i < 100000; ++i) {
    const Index n = 1 + static_cast<Index>(uniform_index(rng, 64));
    VecX w = VecX::Zero(n);
    const double kind = uniform01(rng);
    if (kind >= 0.05) {
      for (Index k = 0; k < n; ++k) w(k) = uniform01(rng) < 0.3 ? 0.0 : uniform01(rng);
      if (w.sum() > 0.0) w *= std::pow(10.0, uniform(rng, -7.0, 0.0)) / w.sum();
    }
    const VecX p = depth_pdf(w);
    worst_sum = std::max(worst_sum, std::abs(p.sum() - 1.0));
    // Rescaling keeps the vector a valid weight vector (mass at most one).
    const double s = w.sum();
    const double lambda = s > 0.0 ? std::pow(10.0, uniform(rng, std::log10(kPdfMassFloor / s), -std::log10(s)))
                                  : uniform(rng, 0.1, 10.0);
    if (s > 0.0 && s < kPdfMassFloor) {
      ++below_floor;  // the mass floor blends toward uniform here, see notes
      continue;
    }
    worst_scale = std::max(worst_scale, (depth_pdf(lambda * w) - p).cwiseAbs().maxCoeff());
  }

  Ray ray;
  ray.t_near = 0.0;
  ray.t_far = 1.0;
  const SampleGrid g = stratified_samples(ray, 4, std::vector<double>(4, 0.5));
  const auto target = discretize_gaussian(DepthTarget{0.5, 0.25, 1.0, true}, g);
  double masses[4], total = 0.0;
  const int n = 1000000;
  for (int k = 0; k < 4; ++k) {
    masses[k] = 0.0;
    const double lo = 0.25 * k, h = 0.25 / (n / 4);
    for (int i = 0; i < n / 4; ++i) {
      const double z = (lo + (i + 0.5) * h - 0.5) / 0.25;
      masses[k] += std::exp(-0.5 * z * z) * h;
    }
    total += masses[k];
  }
  double worst_mass = 0.0;
  for (int k = 0; k < 4; ++k) worst_mass = std::max(worst_mass, std::abs((*target)(k) - masses[k] / total));
  return {worst_sum < 1e-9 && worst_scale < 1e-12 && worst_mass < 1e-9,
          fmt("sum err %.3g (limit 1e-9), rescale err %.3g (limit 1e-12; %ld vectors below the mass floor excluded), "
              "gaussian mass err %.3g (limit 1e-9)",
              worst_sum, worst_scale, below_floor, worst_mass)};
}

// 4: ablation ordering on the stereo-pair tri-sphere dataset.
Outcome ablation_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto root = scratch("ablation");
  RunConfig c = desk_config(root);
  std::ostringstream log;
  cmd_gen(c, log);
  c.out_dir = root / "ablate";
  const auto rows = cmd_ablate(c, log);
  const double secs = seconds_since(t0);
  const EvalRow& photo = rows[0].metrics;
  const EvalRow& density = rows[1].metrics;
  const EvalRow& full = rows[2].metrics;
  const bool psnr_ok = photo.psnr + 2.0 <= density.psnr && density.psnr <= full.psnr + 0.5;
  const bool depth_ok = full.depth_rmse <= 0.5 * photo.depth_rmse;
  return {psnr_ok && depth_ok && secs < 600.0,
          fmt("psnr photo %.2f, photo+density %.2f, full %.2f dB; depth_rmse photo %.3f, full %.3f; %.0f s (limit 600 s)",
              photo.psnr, density.psnr, full.psnr, photo.depth_rmse, full.depth_rmse, secs)};
}

// 5: full-loss test PSNR grows with the number of training views.
Outcome view_count() {
  const auto root = scratch("views");
  RunConfig c = desk_config(root);
  c.dataset.n_views = 10;
  std::ostringstream log;
  cmd_gen(c, log);
  std::map<int, EvalRow> by_views;
  for (const int n : {2, 4, 8}) {
    c.train.train_views = n;
    by_views[n] = train_and_test(c, {1, 1, 1});
  }
  const double p2 = by_views[2].psnr, p4 = by_views[4].psnr, p8 = by_views[8].psnr;
  return {p8 >= p4 && p4 >= p2, fmt("test psnr 2 views %.2f, 4 views %.2f, 8 views %.2f dB", p2, p4, p8)};
}

// 6: confidence down-weighting keeps depth error near the outlier-free run.
Outcome outlier_robustness() {
  const auto root = scratch("outliers");
  RunConfig clean = desk_config(root / "clean");
  std::ostringstream log;
  std::filesystem::create_directories(root / "clean");
  cmd_gen(clean, log);
  RunConfig noisy = desk_config(root / "noisy");
  noisy.dataset.outlier_rate = 0.2;
  std::filesystem::create_directories(root / "noisy");
  cmd_gen(noisy, log);
  const double base = train_and_test(clean, {1, 1, 1}).depth_rmse;
  const double weighted = train_and_test(noisy, {1, 1, 1}).depth_rmse;
  noisy.train.use_confidence = false;
  const double unweighted = train_and_test(noisy, {1, 1, 1}).depth_rmse;
  return {weighted <= 1.25 * base,
          fmt("depth_rmse clean %.3f, outliers weighted %.3f (limit %.3f), outliers unweighted %.3f (diagnostic)", base,
              weighted, 1.25 * base, unweighted)};
}

// 7: metric reference values.
Outcome metric_self_tests() {
  Rng rng(7);
  Image x(16, 16, 3);
  for (Index i = 0; i < x.data.size(); ++i) x.data(i) = uniform01(rng);
  const double same = psnr(x, x);
  const double twenty = psnr(Image(10, 10, 1, 0.1), Image(10, 10, 1, 0.0));
  const double self = ssim(x, x);
  const double offset = ssim(Image(8, 8, 1, 0.25), Image(8, 8, 1, 0.75));
  // Hand evaluation: only the luminance term differs from one on constant images.
  const double c1 = 1e-4;
  const double hand = (2 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
  const bool ok = std::isinf(same) && same > 0 && format_metric(same) == "inf" && twenty == 20.0 &&
                  std::abs(self - 1.0) < 1e-12 && std::abs(offset - hand) < 1e-4;
  return {ok, fmt("psnr(x,x) %s, mse 0.01 -> %.15g dB, ssim(x,x) - 1 = %.3g, constant-offset ssim %.6f "
                  "(hand-evaluated formula %.6f)",
                  format_metric(same).c_str(), twenty, self - 1.0, offset, hand)};
}

// 8: two separate ablation invocations write identical CSV bytes.
Outcome determinism() {
  const auto root = scratch("determinism");
  RunConfig c = desk_config(root);
  c.train.iterations = 150;
  std::ostringstream log;
  cmd_gen(c, log);
  std::ofstream(root / "run.cfg") << c.to_text();
  std::string csv[2];
  for (int i = 0; i < 2; ++i) {
    const auto out = root / ("run" + std::to_string(i));
    const std::string cmd = std::string(PNERF_CLI_PATH) + " ablate --config " + (root / "run.cfg").string() +
                            " --threads 1 --deterministic --out " + out.string() + " > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) return {false, "ablate invocation " + std::to_string(i) + " failed"};
    csv[i] = read_bytes(out / "ablation.csv");
  }
  return {!csv[0].empty() && csv[0] == csv[1], fmt("ablation.csv %zu bytes, identical: %s", csv[0].size(),
                                                   csv[0] == csv[1] ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria = {
      {1, {"gradient correctness", gradient_check}},
      {2, {"renderer oracle", renderer_oracle}},
      {3, {"pdf properties", pdf_properties}},
      {4, {"ablation trend", ablation_trend}},
      {5, {"view-count monotonicity", view_count}},
      {6, {"outlier robustness", outlier_robustness}},
      {7, {"metric self-tests", metric_self_tests}},
      {8, {"determinism", determinism}},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty()) {
    for (const auto& [id, _] : criteria) selected.push_back(id);
  }
  int failures = 0;
  for (const int id : selected) {
    const auto it = criteria.find(id);
    if (it == criteria.end()) {
      std::printf("criterion %d: FAIL unknown criterion\n", id);
      ++failures;
      continue;
    }
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d (%s): %s  %s\n", id, it->second.first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
