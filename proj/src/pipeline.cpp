#include "pnerf/pipeline.hpp"

#include <algorithm>
#include <exception>
#include <mutex>
#include <thread>

#include "pnerf/error.hpp"

namespace pnerf {

template <typename Scalar>
EncodedSamples<Scalar> encode_samples(const FieldArchitecture& arch, std::span<const Ray> rays,
                                      std::span<const SampleGrid> grids) {
  if (rays.size() != grids.size()) throw UsageError("encode_samples: rays and grids differ in count");
  Index total = 0;
  for (const SampleGrid& g : grids) total += g.size();
  Eigen::Matrix3Xd points(3, total), dirs(3, total);
  Index col = 0;
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const Ray& ray = rays[i];
    for (Index k = 0; k < grids[i].size(); ++k, ++col) {
      points.col(col) = (ray.at(grids[i].t(k)) - arch.scene_center) * arch.scene_scale;
      dirs.col(col) = ray.direction;
    }
  }
  return {positional_encoding_batch<Scalar>(points, arch.pos_frequencies),
          positional_encoding_batch<Scalar>(dirs, arch.dir_frequencies)};
}

SampleGrid eval_coarse_grid(const Ray& ray, int n_coarse) {
  const std::vector<double> mid(static_cast<std::size_t>(n_coarse), 0.5);
  return stratified_samples(ray, n_coarse, mid);
}

FineGridFn eval_fine_grids(int n_fine) {
  std::vector<double> draws(static_cast<std::size_t>(n_fine));
  for (int k = 0; k < n_fine; ++k) draws[k] = (k + 0.5) / n_fine;
  return [draws, n_fine](std::size_t, const SampleGrid& coarse, const VecX& weights) {
    return hierarchical_resample(coarse, weights, n_fine, draws);
  };
}

template <typename Scalar>
BatchGradient<Scalar>& BatchGradient<Scalar>::operator+=(const BatchGradient& other) {
  coarse.values += other.coarse.values;
  fine.values += other.fine.values;
  color += other.color;
  density += other.density;
  depth += other.depth;
  skipped += other.skipped;
  return *this;
}

namespace {

template <typename Scalar>
struct NetworkPass {
  FieldCache<Scalar> cache;
  std::vector<CompositeCache> composites;
  std::vector<RenderResult> renders;
  std::vector<Index> offsets;  // first column of each ray, plus the total
};

template <typename Scalar>
NetworkPass<Scalar> run_network(const MlpParams<Scalar>& net, std::span<const Ray> rays, std::span<const SampleGrid> grids,
                                bool keep_cache, long ray_offset) {
  NetworkPass<Scalar> pass;
  pass.offsets.reserve(rays.size() + 1);
  pass.offsets.push_back(0);
  for (const SampleGrid& g : grids) pass.offsets.push_back(pass.offsets.back() + g.size());

  const EncodedSamples<Scalar> enc = encode_samples<Scalar>(net.arch, rays, grids);
  FieldBatch<Scalar> out;
  try {
    out = field_forward(net, enc.pos, enc.dir, keep_cache ? &pass.cache : nullptr);
  } catch (const NumericError& e) {
    const Index col = e.ray_index.value_or(0);
    const auto it = std::upper_bound(pass.offsets.begin(), pass.offsets.end(), col);
    throw NumericError("non-finite field input", ray_offset + static_cast<long>(it - pass.offsets.begin()) - 1);
  }
  const Eigen::Matrix3Xd colors = out.color.template cast<double>();
  const VecX taus = out.tau.transpose().template cast<double>();
  pass.renders.reserve(rays.size());
  if (keep_cache) pass.composites.resize(rays.size());
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const Index begin = pass.offsets[i];
    const Index n = grids[i].size();
    pass.renders.push_back(composite(grids[i], colors.middleCols(begin, n), taus.segment(begin, n),
                                     keep_cache ? &pass.composites[i] : nullptr));
  }
  return pass;
}

template <typename Scalar>
std::vector<SampleGrid> fine_grids_for(const NetworkPass<Scalar>& coarse, std::span<const SampleGrid> coarse_grids,
                                       const FineGridFn& fine_grids) {
  std::vector<SampleGrid> fine;
  fine.reserve(coarse_grids.size());
  for (std::size_t i = 0; i < coarse_grids.size(); ++i) {
    fine.push_back(fine_grids(i, coarse_grids[i], coarse.renders[i].weights));
  }
  return fine;
}

}  // namespace

template <typename Scalar>
std::vector<RayRender> render_rays(const FieldPair<Scalar>& nets, std::span<const Ray> rays,
                                   std::span<const SampleGrid> coarse_grids, const FineGridFn& fine_grids) {
  if (rays.size() != coarse_grids.size()) throw UsageError("render_rays: rays and grids differ in count");
  NetworkPass<Scalar> coarse = run_network(nets.coarse, rays, coarse_grids, false, 0);
  std::vector<SampleGrid> fine_grid = fine_grids_for(coarse, coarse_grids, fine_grids);
  NetworkPass<Scalar> fine = run_network(nets.fine, rays, std::span<const SampleGrid>(fine_grid), false, 0);
  std::vector<RayRender> out(rays.size());
  for (std::size_t i = 0; i < rays.size(); ++i) {
    out[i].grid_coarse = coarse_grids[i];
    out[i].grid_fine = std::move(fine_grid[i]);
    out[i].coarse = std::move(coarse.renders[i]);
    out[i].fine = std::move(fine.renders[i]);
  }
  return out;
}

template <typename Scalar>
void accumulate_batch(const FieldPair<Scalar>& nets, std::span<const Ray> rays, std::span<const SampleGrid> coarse_grids,
                      const FineGridFn& fine_grids, std::span<const RaySupervision> supervision, const LossGains& gains,
                      const LossNormalization& norm, BatchGradient<Scalar>& out, long ray_offset) {
  if (rays.size() != coarse_grids.size() || rays.size() != supervision.size()) {
    throw UsageError("accumulate_batch: rays, grids and supervision differ in count");
  }
  if (rays.empty()) return;
  NetworkPass<Scalar> coarse = run_network(nets.coarse, rays, coarse_grids, true, ray_offset);
  const std::vector<SampleGrid> fine_grid = fine_grids_for(coarse, coarse_grids, fine_grids);
  NetworkPass<Scalar> fine = run_network(nets.fine, rays, std::span<const SampleGrid>(fine_grid), true, ray_offset);

  Matrix<Scalar> d_color_c(3, coarse.offsets.back()), d_color_f(3, fine.offsets.back());
  RowVector<Scalar> d_tau_c(coarse.offsets.back()), d_tau_f(fine.offsets.back());
  for (std::size_t i = 0; i < rays.size(); ++i) {
    RayPrediction pred;
    pred.color_coarse = coarse.renders[i].color;
    pred.color_fine = fine.renders[i].color;
    pred.pdf_coarse = coarse.renders[i].depth_pdf;
    pred.pdf_fine = fine.renders[i].depth_pdf;
    pred.depth_fine = fine.renders[i].depth;
    pred.grid_coarse = &coarse_grids[i];
    pred.grid_fine = &fine_grid[i];
    const RayLoss loss = ray_loss(pred, supervision[i], gains, norm);
    out.color += loss.color_term;
    out.density += loss.density_term;
    out.depth += loss.depth_term;
    out.skipped += loss.skipped ? 1 : 0;

    const RayCotangents& g = loss.cotangents;
    const CompositeGradients gc = composite_backward(coarse.composites[i], g.d_color_coarse, 0.0, g.d_pdf_coarse);
    const CompositeGradients gf = composite_backward(fine.composites[i], g.d_color_fine, g.d_depth_fine, g.d_pdf_fine);
    const Index bc = coarse.offsets[i], nc = coarse_grids[i].size();
    const Index bf = fine.offsets[i], nf = fine_grid[i].size();
    d_color_c.middleCols(bc, nc) = gc.d_color.template cast<Scalar>();
    d_tau_c.segment(bc, nc) = gc.d_tau.transpose().template cast<Scalar>();
    d_color_f.middleCols(bf, nf) = gf.d_color.template cast<Scalar>();
    d_tau_f.segment(bf, nf) = gf.d_tau.transpose().template cast<Scalar>();
  }
  field_backward(nets.coarse, coarse.cache, d_color_c, d_tau_c, out.coarse);
  field_backward(nets.fine, fine.cache, d_color_f, d_tau_f, out.fine);
}

void parallel_for(std::size_t n_tasks, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n_tasks, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n_tasks; ++i) fn(i);
    return;
  }
  std::mutex mutex;
  std::exception_ptr failure;
  std::size_t next = 0;
  auto work = [&] {
    for (;;) {
      std::size_t task = 0;
      {
        std::lock_guard lock(mutex);
        if (failure || next >= n_tasks) return;
        task = next++;
      }
      try {
        fn(task);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

template <typename Scalar>
RenderedView render_view(const FieldPair<Scalar>& nets, const CameraIntrinsics& intr, const Pose& pose, double t_near,
                         double t_far, const SamplingSettings& sampling, int threads, bool keep_rays) {
  constexpr int kChunk = 256;
  const Index n_pixels = Index(intr.width) * intr.height;
  std::vector<Ray> rays;
  std::vector<SampleGrid> grids;
  rays.reserve(n_pixels);
  for (int row = 0; row < intr.height; ++row) {
    for (int col = 0; col < intr.width; ++col) {
      rays.push_back(generate_ray(intr, pose, row, col, Vec2(0.5, 0.5), t_near, t_far));
      grids.push_back(eval_coarse_grid(rays.back(), sampling.n_coarse));
    }
  }
  const FineGridFn fine = eval_fine_grids(sampling.n_fine);
  const std::size_t n_chunks = (rays.size() + kChunk - 1) / kChunk;
  std::vector<std::vector<RayRender>> chunks(n_chunks);
  parallel_for(n_chunks, threads, [&](std::size_t c) {
    const std::size_t begin = c * kChunk;
    const std::size_t count = std::min<std::size_t>(kChunk, rays.size() - begin);
    chunks[c] = render_rays(nets, std::span<const Ray>(rays).subspan(begin, count),
                            std::span<const SampleGrid>(grids).subspan(begin, count), fine);
  });
  RenderedView view{Image(intr.width, intr.height, 3), Image(intr.width, intr.height, 1), {}};
  Index p = 0;
  for (auto& chunk : chunks) {
    for (RayRender& r : chunk) {
      view.rgb.data.segment(3 * p, 3) = r.fine.color.array();
      view.depth.data(p) = r.fine.depth;
      if (keep_rays) view.rays.push_back(std::move(r));
      ++p;
    }
  }
  return view;
}

EvalReport evaluate(const FieldPair<double>& nets, const Dataset& dataset, Split split, const SamplingSettings& sampling,
                    int threads) {
  EvalReport report;
  const int width = dataset.intrinsics.width;
  for (const std::size_t index : dataset.indices(split)) {
    const View& view = dataset.views[index];
    const RenderedView out = render_view(nets, dataset.intrinsics, view.pose, dataset.t_near, dataset.t_far, sampling,
                                         threads, view.targets.has_value());
    EvalRow row;
    row.image = view.name;
    row.psnr = psnr(out.rgb, view.rgb);
    row.ssim = ssim(out.rgb, view.rgb);
    Image mask(view.depth.width, view.depth.height, 1);
    mask.data = view.depth.data.isFinite().cast<double>();
    row.depth_rmse = mask.data.sum() > 0 ? depth_rmse(out.depth, view.depth, mask) : std::nan("");
    row.mean_pdf_l1 = std::nan("");
    if (view.targets) {
      double sum = 0.0;
      std::size_t count = 0;
      for (const DepthRow& r : *view.targets) {
        const RayRender& ray = out.rays[static_cast<std::size_t>(r.row) * width + r.col];
        const auto target = discretize_gaussian(r.target, ray.grid_fine);
        if (!target) continue;
        sum += (ray.fine.depth_pdf - *target).lpNorm<1>();
        ++count;
      }
      if (count) row.mean_pdf_l1 = sum / static_cast<double>(count);
    }
    report.rows.push_back(row);
  }
  return report;
}

#define PNERF_INSTANTIATE_PIPELINE(S)                                                                              \
  template EncodedSamples<S> encode_samples<S>(const FieldArchitecture&, std::span<const Ray>,                     \
                                               std::span<const SampleGrid>);                                       \
  template struct BatchGradient<S>;                                                                                \
  template std::vector<RayRender> render_rays<S>(const FieldPair<S>&, std::span<const Ray>,                        \
                                                 std::span<const SampleGrid>, const FineGridFn&);                  \
  template void accumulate_batch<S>(const FieldPair<S>&, std::span<const Ray>, std::span<const SampleGrid>,        \
                                    const FineGridFn&, std::span<const RaySupervision>, const LossGains&,          \
                                    const LossNormalization&, BatchGradient<S>&, long);                            \
  template RenderedView render_view<S>(const FieldPair<S>&, const CameraIntrinsics&, const Pose&, double, double,  \
                                       const SamplingSettings&, int, bool);

PNERF_INSTANTIATE_PIPELINE(double)
PNERF_INSTANTIATE_PIPELINE(float)
#undef PNERF_INSTANTIATE_PIPELINE

}  // namespace pnerf
