#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "pnerf/error.hpp"
#include "pnerf/metrics.hpp"

using namespace pnerf;

namespace {

Image random_image(Rng& rng, int w, int h, int c) {
  Image img(w, h, c);
  for (Index i = 0; i < img.data.size(); ++i) img.data(i) = uniform01(rng);
  return img;
}

// Direct transcription of the windowed SSIM definition on one channel.
double ssim_oracle(const Image& a, const Image& b, double peak) {
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  const int w = kSsimWindow;
  double total = 0.0;
  int count = 0;
  for (int r0 = 0; r0 + w <= a.height; ++r0) {
    for (int c0 = 0; c0 + w <= a.width; ++c0) {
      double ma = 0, mb = 0;
      for (int r = r0; r < r0 + w; ++r)
        for (int c = c0; c < c0 + w; ++c) ma += a.at(r, c), mb += b.at(r, c);
      ma /= w * w;
      mb /= w * w;
      double va = 0, vb = 0, cov = 0;
      for (int r = r0; r < r0 + w; ++r) {
        for (int c = c0; c < c0 + w; ++c) {
          va += (a.at(r, c) - ma) * (a.at(r, c) - ma);
          vb += (b.at(r, c) - mb) * (b.at(r, c) - mb);
          cov += (a.at(r, c) - ma) * (b.at(r, c) - mb);
        }
      }
      va /= w * w;
      vb /= w * w;
      cov /= w * w;
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / count;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("psnr examples") {
  Rng rng(1);
  const Image a = random_image(rng, 8, 8, 3);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a, a) > 0);
  CHECK(format_metric(psnr(a, a)) == "inf");
  Image z(10, 10, 1, 0.0), n(10, 10, 1, 0.1);
  CHECK(psnr(n, z) == 20.0);
  CHECK(psnr(Image(4, 4, 1, 2.0), Image(4, 4, 1, 0.0), 2.0) == doctest::Approx(0.0));
  CHECK_THROWS_AS(psnr(Image(4, 4, 1), Image(4, 5, 1)), UsageError);
}

TEST_CASE("psnr decreases along a noise ladder and ignores pixel order") {
  Rng rng(2);
  const Image ref = random_image(rng, 16, 16, 3);
  Image noise(16, 16, 3);
  for (Index i = 0; i < noise.data.size(); ++i) noise.data(i) = uniform(rng, -1, 1);
  double prev = INFINITY;
  for (double amp : {0.001, 0.01, 0.03, 0.1, 0.3}) {
    Image p = ref;
    p.data += amp * noise.data;
    const double v = psnr(p, ref);
    CHECK(v < prev);
    prev = v;
  }
  Image p = ref;
  p.data += 0.05 * noise.data;
  std::vector<Index> perm(256);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Image pp = p, rp = ref;
  for (Index i = 0; i < 256; ++i) {
    for (int c = 0; c < 3; ++c) {
      pp.data(i * 3 + c) = p.data(perm[i] * 3 + c);
      rp.data(i * 3 + c) = ref.data(perm[i] * 3 + c);
    }
  }
  CHECK(psnr(pp, rp) == doctest::Approx(psnr(p, ref)).epsilon(1e-12));
}

TEST_CASE("ssim examples") {
  Rng rng(3);
  const Image a = random_image(rng, 12, 10, 3);
  CHECK(std::abs(ssim(a, a) - 1.0) < 1e-12);
  const Image x(8, 8, 1, 0.25), y(8, 8, 1, 0.75);
  // Constant images: only the luminance term differs from one.
  const double c1 = 1e-4;
  const double expected = (2 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
  CHECK(std::abs(expected - 0.600064) < 1e-6);
  CHECK(std::abs(ssim(x, y) - expected) < 1e-12);
  CHECK_THROWS_AS(ssim(Image(7, 9, 1), Image(7, 9, 1)), UsageError);
  CHECK_THROWS_AS(ssim(Image(8, 8, 1), Image(9, 8, 1)), UsageError);
}

TEST_CASE("ssim matches the windowed definition and is symmetric") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const int w = 8 + static_cast<int>(uniform_index(rng, 9)), h = 8 + static_cast<int>(uniform_index(rng, 9));
    const Image a = random_image(rng, w, h, 1);
    Image b = a;
    for (Index i = 0; i < b.data.size(); ++i) b.data(i) = std::clamp(b.data(i) + uniform(rng, -0.3, 0.3), 0.0, 1.0);
    CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b, 1.0)) < 1e-12);
    CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-12);
  }
}

TEST_CASE("luminance uses Rec.601 weights") {
  Image rgb(1, 1, 3);
  rgb.at(0, 0, 0) = 1.0;
  CHECK(luminance(rgb).at(0, 0) == doctest::Approx(0.299));
  rgb.at(0, 0, 0) = 0.0;
  rgb.at(0, 0, 1) = 1.0;
  CHECK(luminance(rgb).at(0, 0) == doctest::Approx(0.587));
  const Image gray(2, 2, 1, 0.4);
  CHECK(luminance(gray).data.isApprox(gray.data));
}

TEST_CASE("depth rmse") {
  Rng rng(5);
  const Image mask(6, 5, 1, 1.0);
  const Image d = random_image(rng, 6, 5, 1);
  CHECK(depth_rmse(d, d, mask) == 0.0);
  Image off = d;
  off.data += 0.5;
  CHECK(depth_rmse(off, d, mask) == doctest::Approx(0.5).epsilon(1e-14));
  for (int trial = 0; trial < 50; ++trial) {
    const Image p = random_image(rng, 6, 5, 1), t = random_image(rng, 6, 5, 1);
    Image m(6, 5, 1);
    double sq = 0.0;
    int n = 0;
    for (Index i = 0; i < 30; ++i) {
      m.data(i) = uniform01(rng) < 0.6 ? 1.0 : 0.0;
      if (m.data(i) != 0.0) sq += (p.data(i) - t.data(i)) * (p.data(i) - t.data(i)), ++n;
    }
    if (n == 0) continue;
    CHECK(std::abs(depth_rmse(p, t, m) - std::sqrt(sq / n)) < 1e-12);
  }
  CHECK_THROWS_AS(depth_rmse(d, d, Image(6, 5, 1, 0.0)), UsageError);
  CHECK_THROWS_AS(depth_rmse(d, Image(5, 5, 1), mask), UsageError);
}

TEST_CASE("report formatting") {
  EvalReport r;
  r.rows.push_back({"a", 20.0, 0.5, 1.0, 0.25});
  r.rows.push_back({"b", 30.0, 0.7, 3.0, 0.75});
  const EvalRow m = r.mean();
  CHECK(m.image == "mean");
  CHECK(m.psnr == 25.0);
  CHECK(m.depth_rmse == 2.0);
  CHECK(format_metric(std::nan("")) == "nan");
  CHECK(format_metric(20.0) == "20.000000");
  const auto dir = testing::temp_dir("eval_csv");
  write_eval_csv(dir / "e.csv", r);
  const std::string csv = testing::read_bytes(dir / "e.csv");
  CHECK(csv.rfind("image,psnr,ssim,depth_rmse,mean_pdf_l1\n", 0) == 0);
  CHECK(csv.find("mean,25.000000,0.600000,2.000000,0.500000\n") != std::string::npos);
  CHECK(format_eval_table(r).find("mean") != std::string::npos);
}

}
