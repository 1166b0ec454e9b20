#include "pnerf/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "pnerf/error.hpp"

namespace pnerf {

double psnr(const Image& pred, const Image& ref, double peak) {
  if (!pred.same_shape(ref)) throw UsageError("psnr: image shapes differ");
  if (pred.data.size() == 0) throw UsageError("psnr: empty images");
  const double mse = (pred.data - ref.data).square().mean();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

Image luminance(const Image& image) {
  if (image.channels == 1) return image;
  if (image.channels != 3) throw UsageError("luminance: needs 1 or 3 channels");
  Image out(image.width, image.height, 1);
  for (Index p = 0; p < image.pixel_count(); ++p) {
    out.data(p) = 0.299 * image.data(3 * p) + 0.587 * image.data(3 * p + 1) + 0.114 * image.data(3 * p + 2);
  }
  return out;
}

double ssim(const Image& pred, const Image& ref, double peak) {
  if (!pred.same_shape(ref)) throw UsageError("ssim: image shapes differ");
  if (pred.width < kSsimWindow || pred.height < kSsimWindow) throw UsageError("ssim: image smaller than the 8x8 window");
  const Image x = luminance(pred);
  const Image y = luminance(ref);
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const double n = kSsimWindow * kSsimWindow;
  using RowMajor = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMajor> a(x.data.data(), x.height, x.width);
  const Eigen::Map<const RowMajor> b(y.data.data(), y.height, y.width);
  double total = 0.0;
  Index windows = 0;
  for (int r = 0; r + kSsimWindow <= x.height; ++r) {
    for (int c = 0; c + kSsimWindow <= x.width; ++c) {
      const auto wa = a.block(r, c, kSsimWindow, kSsimWindow);
      const auto wb = b.block(r, c, kSsimWindow, kSsimWindow);
      const double mx = wa.sum() / n;
      const double my = wb.sum() / n;
      const double vx = (wa - mx).square().sum() / n;
      const double vy = (wb - my).square().sum() / n;
      const double cxy = ((wa - mx) * (wb - my)).sum() / n;
      total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  }
  return total / static_cast<double>(windows);
}

double depth_rmse(const Image& pred, const Image& truth, const Image& valid_mask) {
  if (!pred.same_shape(truth) || pred.width != valid_mask.width || pred.height != valid_mask.height ||
      pred.channels != 1 || valid_mask.channels != 1) {
    throw UsageError("depth_rmse: raster shapes differ");
  }
  double sum = 0.0;
  Index count = 0;
  for (Index i = 0; i < pred.data.size(); ++i) {
    if (valid_mask.data(i) == 0.0) continue;
    const double e = pred.data(i) - truth.data(i);
    sum += e * e;
    ++count;
  }
  if (count == 0) throw UsageError("depth_rmse: empty mask");
  return std::sqrt(sum / static_cast<double>(count));
}

EvalRow EvalReport::mean() const {
  EvalRow m;
  m.image = "mean";
  if (rows.empty()) return m;
  for (const EvalRow& r : rows) {
    m.psnr += r.psnr;
    m.ssim += r.ssim;
    m.depth_rmse += r.depth_rmse;
    m.mean_pdf_l1 += r.mean_pdf_l1;
  }
  const double n = static_cast<double>(rows.size());
  m.psnr /= n;
  m.ssim /= n;
  m.depth_rmse /= n;
  m.mean_pdf_l1 /= n;
  return m;
}

std::string format_metric(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (std::isnan(value)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", value);
  return buf;
}

void write_eval_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "image,psnr,ssim,depth_rmse,mean_pdf_l1\n";
  auto row = [&](const EvalRow& r) {
    out << r.image << ',' << format_metric(r.psnr) << ',' << format_metric(r.ssim) << ',' << format_metric(r.depth_rmse)
        << ',' << format_metric(r.mean_pdf_l1) << '\n';
  };
  for (const EvalRow& r : report.rows) row(r);
  row(report.mean());
  if (!out) throw IoError("failed writing " + path.string());
}

std::string format_eval_table(const EvalReport& report) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-16s %10s %8s %11s %12s\n", "image", "PSNR[dB]", "SSIM", "depth_rmse", "pdf_L1");
  out << buf;
  auto row = [&](const EvalRow& r) {
    std::snprintf(buf, sizeof(buf), "%-16s %10s %8s %11s %12s\n", r.image.c_str(), format_metric(r.psnr).c_str(),
                  format_metric(r.ssim).c_str(), format_metric(r.depth_rmse).c_str(), format_metric(r.mean_pdf_l1).c_str());
    out << buf;
  };
  for (const EvalRow& r : report.rows) row(r);
  row(report.mean());
  return out.str();
}

}  // namespace pnerf
