#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pnerf/image.hpp"

namespace pnerf {

/// 10 log10(peak^2 / MSE) over all channels; +infinity for identical images.
double psnr(const Image& pred, const Image& ref, double peak = 1.0);

/// Rec.601 luma (0.299, 0.587, 0.114) of a 3-channel image; 1-channel images pass through.
Image luminance(const Image& image);

inline constexpr int kSsimWindow = 8;

/// Mean SSIM over every 8x8 window (stride 1) of the luminance images, with
/// population statistics and C1 = (0.01 peak)^2, C2 = (0.03 peak)^2.
double ssim(const Image& pred, const Image& ref, double peak = 1.0);

/// RMSE over pixels whose mask value is non-zero.
double depth_rmse(const Image& pred, const Image& truth, const Image& valid_mask);

struct EvalRow {
  std::string image;
  double psnr = 0.0;
  double ssim = 0.0;
  double depth_rmse = 0.0;
  double mean_pdf_l1 = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;

  /// Arithmetic mean of each column.
  EvalRow mean() const;
};

/// Formats a metric value; infinities as "inf", NaN as "nan".
std::string format_metric(double value);

void write_eval_csv(const std::filesystem::path& path, const EvalReport& report);
std::string format_eval_table(const EvalReport& report);

}  // namespace pnerf
