#include "pnerf/losses.hpp"

#include <cmath>

#include "pnerf/error.hpp"

namespace pnerf {

void DepthTarget::validate() const {
  if (!(confidence >= 0.0 && confidence <= 1.0)) throw DomainError("depth target: confidence must lie in [0, 1]");
  if (present && !(sigma > 0.0 && std::isfinite(mean))) throw DomainError("depth target: needs finite mean and sigma > 0");
}

void LossGains::validate() const {
  if (!(color >= 0.0 && density >= 0.0 && depth >= 0.0)) throw ConfigError("loss gains must be non-negative");
}

VecX pdf_bin_edges(const SampleGrid& grid) {
  const Index n = grid.size();
  VecX edges(n + 1);
  if (n == 1) {
    edges << grid.t_near, grid.t_far;
    return edges;
  }
  for (Index k = 1; k < n; ++k) edges(k) = 0.5 * (grid.t(k - 1) + grid.t(k));
  edges(0) = grid.t(0) - 0.5 * (grid.t(1) - grid.t(0));
  edges(n) = grid.t(n - 1) + 0.5 * (grid.t(n - 1) - grid.t(n - 2));
  return edges;
}

namespace {

/// Phi(zb) - Phi(za) without cancellation in either tail.
double normal_mass(double za, double zb) {
  constexpr double r = 0.70710678118654752440;
  if (za >= 0.0) return 0.5 * (std::erfc(za * r) - std::erfc(zb * r));
  if (zb <= 0.0) return 0.5 * (std::erfc(-zb * r) - std::erfc(-za * r));
  return 1.0 - 0.5 * std::erfc(zb * r) - 0.5 * std::erfc(-za * r);
}

double l1_sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::optional<VecX> discretize_gaussian(const DepthTarget& target, const SampleGrid& grid) {
  if (!target.present) throw UsageError("discretize_gaussian: target not present");
  target.validate();
  const VecX edges = pdf_bin_edges(grid);
  const Index n = grid.size();
  VecX mass(n);
  for (Index k = 0; k < n; ++k) {
    mass(k) = normal_mass((edges(k) - target.mean) / target.sigma, (edges(k + 1) - target.mean) / target.sigma);
  }
  const double total = mass.sum();
  if (!(total >= kTargetMassFloor)) return std::nullopt;
  return mass / total;
}

double loss_color(const Vec3& coarse, const Vec3& fine, const Vec3& target) {
  return (coarse - target).lpNorm<1>() + (fine - target).lpNorm<1>();
}

double loss_density(const VecX& pdf_coarse, const VecX& pdf_fine, const VecX& target_coarse, const VecX& target_fine) {
  if (pdf_coarse.size() != target_coarse.size() || pdf_fine.size() != target_fine.size()) {
    throw UsageError("loss_density: PDF and target are on different grids");
  }
  return (pdf_coarse - target_coarse).lpNorm<1>() + (pdf_fine - target_fine).lpNorm<1>();
}

double loss_depth(double depth, const DepthTarget& target) {
  if (!target.present) throw UsageError("loss_depth: target not present");
  return std::abs(depth - target.mean);
}

LossNormalization LossNormalization::for_batch(std::span<const RaySupervision> batch) {
  if (batch.empty()) throw UsageError("loss: empty batch");
  std::size_t supervised = 0;
  for (const RaySupervision& s : batch) supervised += s.depth.present ? 1 : 0;
  return {1.0 / static_cast<double>(batch.size()), supervised ? 1.0 / static_cast<double>(supervised) : 0.0};
}

RayLoss ray_loss(const RayPrediction& pred, const RaySupervision& sup, const LossGains& gains,
                 const LossNormalization& norm) {
  RayLoss out;
  RayCotangents& g = out.cotangents;
  g.d_pdf_coarse = VecX::Zero(pred.pdf_coarse.size());
  g.d_pdf_fine = VecX::Zero(pred.pdf_fine.size());

  out.color_term = norm.color * loss_color(pred.color_coarse, pred.color_fine, sup.rgb);
  const double color_scale = gains.color * norm.color;
  g.d_color_coarse = color_scale * (pred.color_coarse - sup.rgb).unaryExpr(&l1_sign);
  g.d_color_fine = color_scale * (pred.color_fine - sup.rgb).unaryExpr(&l1_sign);

  if (!sup.depth.present) return out;
  if (!pred.grid_coarse || !pred.grid_fine) throw UsageError("ray_loss: supervised ray without sample grids");
  if (pred.grid_coarse->size() != pred.pdf_coarse.size() || pred.grid_fine->size() != pred.pdf_fine.size()) {
    throw UsageError("ray_loss: PDF and grid sizes differ");
  }
  const auto target_coarse = discretize_gaussian(sup.depth, *pred.grid_coarse);
  const auto target_fine = discretize_gaussian(sup.depth, *pred.grid_fine);
  if (!target_coarse || !target_fine) {
    out.skipped = true;
    return out;
  }
  const double weight = sup.depth.confidence * norm.supervised;
  out.density_term = weight * loss_density(pred.pdf_coarse, pred.pdf_fine, *target_coarse, *target_fine);
  out.depth_term = weight * loss_depth(pred.depth_fine, sup.depth);

  g.d_pdf_coarse = gains.density * weight * (pred.pdf_coarse - *target_coarse).unaryExpr(&l1_sign);
  g.d_pdf_fine = gains.density * weight * (pred.pdf_fine - *target_fine).unaryExpr(&l1_sign);
  g.d_depth_fine = gains.depth * weight * l1_sign(pred.depth_fine - sup.depth.mean);
  return out;
}

LossBreakdown make_breakdown(double color, double density, double depth, std::size_t rays, const LossGains& gains) {
  LossBreakdown b;
  b.color_term = color;
  b.density_term = density;
  b.depth_term = depth;
  b.total = gains.color * color + gains.density * density + gains.depth * depth;
  b.ray_count = rays;
  return b;
}

TotalLoss total_loss(std::span<const RayPrediction> predictions, std::span<const RaySupervision> supervision,
                     const LossGains& gains) {
  if (predictions.size() != supervision.size()) throw UsageError("total_loss: predictions and supervision differ in size");
  gains.validate();
  const LossNormalization norm = LossNormalization::for_batch(supervision);
  TotalLoss out;
  out.cotangents.reserve(predictions.size());
  double color = 0.0, density = 0.0, depth = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    RayLoss r = ray_loss(predictions[i], supervision[i], gains, norm);
    color += r.color_term;
    density += r.density_term;
    depth += r.depth_term;
    out.skipped += r.skipped ? 1 : 0;
    out.cotangents.push_back(std::move(r.cotangents));
  }
  out.breakdown = make_breakdown(color, density, depth, predictions.size(), gains);
  return out;
}

}  // namespace pnerf
