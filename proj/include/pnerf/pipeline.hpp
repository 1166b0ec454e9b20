#pragma once

#include <functional>
#include <span>
#include <vector>

#include "pnerf/field_mlp.hpp"
#include "pnerf/geometry.hpp"
#include "pnerf/losses.hpp"
#include "pnerf/metrics.hpp"
#include "pnerf/renderer.hpp"
#include "pnerf/scenes.hpp"

namespace pnerf {

/// Independent coarse and fine networks.
template <typename Scalar>
struct FieldPair {
  MlpParams<Scalar> coarse;
  MlpParams<Scalar> fine;
};

struct SamplingSettings {
  int n_coarse = 64;
  int n_fine = 192;
};

/// Encoded positions and directions for every sample of every grid, ray-major.
template <typename Scalar>
struct EncodedSamples {
  Matrix<Scalar> pos;
  Matrix<Scalar> dir;
};

template <typename Scalar>
EncodedSamples<Scalar> encode_samples(const FieldArchitecture& arch, std::span<const Ray> rays,
                                      std::span<const SampleGrid> grids);

/// Builds the fine grid of ray `index` from its coarse grid and weights.
using FineGridFn = std::function<SampleGrid(std::size_t index, const SampleGrid& coarse, const VecX& coarse_weights)>;

struct RayRender {
  SampleGrid grid_coarse;
  SampleGrid grid_fine;
  RenderResult coarse;
  RenderResult fine;
};

/// Forward-only coarse-to-fine render of a set of rays.
template <typename Scalar>
std::vector<RayRender> render_rays(const FieldPair<Scalar>& nets, std::span<const Ray> rays,
                                   std::span<const SampleGrid> coarse_grids, const FineGridFn& fine_grids);

/// Midpoint coarse grid and evenly spaced inverse-CDF fine draws.
SampleGrid eval_coarse_grid(const Ray& ray, int n_coarse);
FineGridFn eval_fine_grids(int n_fine);

/// Loss terms and parameter gradients accumulated over rays.
template <typename Scalar>
struct BatchGradient {
  ParamGrad<Scalar> coarse;
  ParamGrad<Scalar> fine;
  double color = 0.0;
  double density = 0.0;
  double depth = 0.0;
  std::size_t skipped = 0;

  static BatchGradient zeros_like(const FieldPair<Scalar>& nets) {
    return {ParamGrad<Scalar>::zeros_like(nets.coarse), ParamGrad<Scalar>::zeros_like(nets.fine)};
  }
  BatchGradient& operator+=(const BatchGradient& other);
};

/// Adds the loss and its gradient for `rays` (fixed coarse grids, fine grids
/// from `fine_grids`) into `out`. `norm` carries the whole-batch normalizers
/// so that chunks of a batch can be evaluated independently and summed.
/// `ray_offset` is added to ray indices reported in errors.
template <typename Scalar>
void accumulate_batch(const FieldPair<Scalar>& nets, std::span<const Ray> rays, std::span<const SampleGrid> coarse_grids,
                      const FineGridFn& fine_grids, std::span<const RaySupervision> supervision, const LossGains& gains,
                      const LossNormalization& norm, BatchGradient<Scalar>& out, long ray_offset = 0);

/// Runs fn(0..n_tasks-1) on up to `threads` workers; rethrows the first failure.
void parallel_for(std::size_t n_tasks, int threads, const std::function<void(std::size_t)>& fn);

struct RenderedView {
  Image rgb;
  Image depth;
  std::vector<RayRender> rays;  // row-major, only when requested
};

template <typename Scalar>
RenderedView render_view(const FieldPair<Scalar>& nets, const CameraIntrinsics& intr, const Pose& pose, double t_near,
                         double t_far, const SamplingSettings& sampling, int threads = 1, bool keep_rays = false);

/// PSNR, SSIM, depth RMSE and fine-PDF L1 against the targets for every view of a split.
EvalReport evaluate(const FieldPair<double>& nets, const Dataset& dataset, Split split, const SamplingSettings& sampling,
                    int threads = 1);

}  // namespace pnerf
