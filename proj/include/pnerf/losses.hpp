#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "pnerf/geometry.hpp"

namespace pnerf {

/// Gaussian depth supervision for one ray, in distance along the ray.
struct DepthTarget {
  double mean = 0.0;
  double sigma = 1.0;
  double confidence = 1.0;
  bool present = false;

  void validate() const;
};

struct LossGains {
  double color = 1.0;
  double density = 1.0;
  double depth = 1.0;

  void validate() const;
};

struct LossBreakdown {
  double total = 0.0;
  double color_term = 0.0;
  double density_term = 0.0;
  double depth_term = 0.0;
  std::size_t ray_count = 0;
};

/// Below this much total mass on the grid the target is treated as unusable.
inline constexpr double kTargetMassFloor = 1e-12;

/// Edges of the per-sample bins: midpoints between neighbours, extended by
/// half a bin at both ends. Size N + 1.
VecX pdf_bin_edges(const SampleGrid& grid);

/// Gaussian mass per bin, renormalized to one. std::nullopt when the mass on
/// the grid is below kTargetMassFloor (supervision is skipped for the ray).
std::optional<VecX> discretize_gaussian(const DepthTarget& target, const SampleGrid& grid);

double loss_color(const Vec3& coarse, const Vec3& fine, const Vec3& target);
double loss_density(const VecX& pdf_coarse, const VecX& pdf_fine, const VecX& target_coarse, const VecX& target_fine);
double loss_depth(double depth, const DepthTarget& target);

/// Per-ray outputs of the coarse and fine renders that the loss consumes.
struct RayPrediction {
  Vec3 color_coarse = Vec3::Zero();
  Vec3 color_fine = Vec3::Zero();
  VecX pdf_coarse;
  VecX pdf_fine;
  double depth_fine = 0.0;
  const SampleGrid* grid_coarse = nullptr;
  const SampleGrid* grid_fine = nullptr;
};

struct RaySupervision {
  Vec3 rgb = Vec3::Zero();
  DepthTarget depth;
};

struct RayCotangents {
  Vec3 d_color_coarse = Vec3::Zero();
  Vec3 d_color_fine = Vec3::Zero();
  VecX d_pdf_coarse;
  VecX d_pdf_fine;
  double d_depth_fine = 0.0;
};

/// Batch normalizers: the color term is a mean over all rays, the density
/// and depth terms are means over rays whose target is present.
struct LossNormalization {
  double color = 1.0;
  double supervised = 0.0;

  static LossNormalization for_batch(std::span<const RaySupervision> batch);
};

/// Contribution of one ray (already divided by the batch normalizers and
/// multiplied by its confidence, not by the gains).
struct RayLoss {
  double color_term = 0.0;
  double density_term = 0.0;
  double depth_term = 0.0;
  bool skipped = false;
  RayCotangents cotangents;
};

RayLoss ray_loss(const RayPrediction& pred, const RaySupervision& sup, const LossGains& gains,
                 const LossNormalization& norm);

struct TotalLoss {
  LossBreakdown breakdown;
  std::vector<RayCotangents> cotangents;
  std::size_t skipped = 0;
};

/// Weighted sum of the batch-mean color, density-PDF and depth terms.
TotalLoss total_loss(std::span<const RayPrediction> predictions, std::span<const RaySupervision> supervision,
                     const LossGains& gains);

/// Combines per-term sums into a breakdown with total = gains . terms.
LossBreakdown make_breakdown(double color, double density, double depth, std::size_t rays, const LossGains& gains);

}  // namespace pnerf
