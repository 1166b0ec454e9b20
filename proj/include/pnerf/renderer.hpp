#pragma once

#include <functional>
#include <span>

#include "pnerf/field_mlp.hpp"
#include "pnerf/geometry.hpp"

namespace pnerf {

/// Below this total weight the depth PDF blends linearly toward uniform.
inline constexpr double kPdfMassFloor = 1e-6;

struct RenderResult {
  Vec3 color = Vec3::Zero();
  VecX weights;
  VecX transmittance;
  /// Expected termination distance under the depth PDF.
  double depth = 0.0;
  VecX depth_pdf;
  double weight_sum = 0.0;
};

struct CompositeCache {
  VecX t;
  VecX deltas;
  Mat3X colors;
  VecX alpha;
  VecX transmittance;
  VecX weights;
  VecX depth_pdf;
};

struct CompositeGradients {
  Mat3X d_color;  // 3 x N
  VecX d_tau;
};

/// Normalized weights. Sums to one exactly for any non-negative input; below
/// kPdfMassFloor the result is w / floor + (1 - sum / floor) / N.
VecX depth_pdf(const VecX& weights);

/// Cotangent of the weights given the cotangent of depth_pdf(weights).
VecX depth_pdf_backward(const VecX& weights, const VecX& d_pdf);

/// Quadrature of the volume rendering integral over a sample grid.
RenderResult composite(const SampleGrid& grid, const Eigen::Ref<const Mat3X>& colors,
                       const Eigen::Ref<const VecX>& taus, CompositeCache* cache = nullptr);
RenderResult composite(const SampleGrid& grid, std::span<const FieldOutput> samples, CompositeCache* cache = nullptr);

/// Per-sample cotangents from cotangents of color, depth and depth PDF.
CompositeGradients composite_backward(const CompositeCache& cache, const Vec3& d_color, double d_depth,
                                      const VecX& d_pdf);

struct QuadratureResult {
  Vec3 color = Vec3::Zero();
  /// Normalized expected depth; NaN when no mass was absorbed.
  double depth = 0.0;
  double opacity = 0.0;
};

using DensityFn = std::function<double(const Vec3& point, double t)>;
using ColorFn = std::function<Vec3(const Vec3& point, double t)>;

/// Dense midpoint evaluation of the continuous transport integral over
/// [t_near, t_far]. Test and ground-truth use only.
QuadratureResult reference_quadrature(const DensityFn& density, const ColorFn& color, const Ray& ray, Index n_dense);

}  // namespace pnerf
