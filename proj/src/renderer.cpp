#include "pnerf/renderer.hpp"

#include <cmath>

#include "pnerf/error.hpp"

namespace pnerf {

VecX depth_pdf(const VecX& weights) {
  const Index n = weights.size();
  if (n == 0) throw UsageError("depth_pdf: empty weight vector");
  const double sum = weights.sum();
  if (sum >= kPdfMassFloor) return weights / sum;
  return (weights.array() / kPdfMassFloor + (1.0 - sum / kPdfMassFloor) / static_cast<double>(n)).matrix();
}

VecX depth_pdf_backward(const VecX& weights, const VecX& d_pdf) {
  const Index n = weights.size();
  if (d_pdf.size() != n) throw UsageError("depth_pdf_backward: cotangent size mismatch");
  const double sum = weights.sum();
  if (sum >= kPdfMassFloor) {
    const double projected = d_pdf.dot(weights) / sum;
    return ((d_pdf.array() - projected) / sum).matrix();
  }
  return ((d_pdf.array() - d_pdf.sum() / static_cast<double>(n)) / kPdfMassFloor).matrix();
}

RenderResult composite(const SampleGrid& grid, const Eigen::Ref<const Mat3X>& colors, const Eigen::Ref<const VecX>& taus,
                       CompositeCache* cache) {
  const Index n = grid.size();
  if (colors.cols() != n || taus.size() != n) throw UsageError("composite: samples do not match the grid");

  RenderResult r;
  VecX alpha(n);
  r.transmittance.resize(n);
  r.weights.resize(n);
  double optical_depth = 0.0;
  for (Index k = 0; k < n; ++k) {
    const double step = taus(k) * grid.deltas(k);
    r.transmittance(k) = std::exp(-optical_depth);
    alpha(k) = -std::expm1(-step);
    r.weights(k) = r.transmittance(k) * alpha(k);
    optical_depth += step;
  }
  r.color = colors * r.weights;
  r.weight_sum = r.weights.sum();
  r.depth_pdf = depth_pdf(r.weights);
  r.depth = r.depth_pdf.dot(grid.t);
  if (cache) {
    cache->t = grid.t;
    cache->deltas = grid.deltas;
    cache->colors = colors;
    cache->alpha = std::move(alpha);
    cache->transmittance = r.transmittance;
    cache->weights = r.weights;
    cache->depth_pdf = r.depth_pdf;
  }
  return r;
}

RenderResult composite(const SampleGrid& grid, std::span<const FieldOutput> samples, CompositeCache* cache) {
  if (static_cast<Index>(samples.size()) != grid.size()) throw UsageError("composite: samples do not match the grid");
  Mat3X colors(3, grid.size());
  VecX taus(grid.size());
  for (Index k = 0; k < grid.size(); ++k) {
    colors.col(k) = samples[k].color;
    taus(k) = samples[k].tau;
  }
  return composite(grid, colors, taus, cache);
}

CompositeGradients composite_backward(const CompositeCache& cache, const Vec3& d_color, double d_depth, const VecX& d_pdf) {
  const Index n = cache.weights.size();
  if (d_pdf.size() != n) throw UsageError("composite_backward: pdf cotangent has the wrong length");

  // depth = pdf . t, pdf = normalize(w), color = colors * w
  const VecX d_pdf_total = d_pdf + d_depth * cache.t;
  VecX d_w = depth_pdf_backward(cache.weights, d_pdf_total);
  d_w.noalias() += cache.colors.transpose() * d_color;

  CompositeGradients g;
  g.d_color = d_color * cache.weights.transpose();
  g.d_tau.resize(n);
  // w_k = T_k alpha_k depends on tau_j through alpha_j (k = j) and T_k (k > j).
  double tail = 0.0;  // sum_{k > j} d_w_k w_k
  for (Index j = n - 1; j >= 0; --j) {
    const double survive = 1.0 - cache.alpha(j);
    g.d_tau(j) = cache.deltas(j) * (d_w(j) * cache.transmittance(j) * survive - tail);
    tail += d_w(j) * cache.weights(j);
  }
  return g;
}

QuadratureResult reference_quadrature(const DensityFn& density, const ColorFn& color, const Ray& ray, Index n_dense) {
  if (n_dense < 1) throw DomainError("reference_quadrature: n_dense must be positive");
  const double dt = (ray.t_far - ray.t_near) / static_cast<double>(n_dense);
  QuadratureResult out;
  double optical_depth = 0.0;
  double depth_sum = 0.0;
  for (Index i = 0; i < n_dense; ++i) {
    const double t = ray.t_near + (static_cast<double>(i) + 0.5) * dt;
    const Vec3 p = ray.at(t);
    const double sigma = density(p, t);
    if (sigma <= 0.0) continue;
    const double w = std::exp(-optical_depth) * -std::expm1(-sigma * dt);
    out.color += w * color(p, t);
    depth_sum += w * t;
    out.opacity += w;
    optical_depth += sigma * dt;
  }
  out.depth = out.opacity > 0.0 ? depth_sum / out.opacity : std::nan("");
  return out;
}

}  // namespace pnerf
