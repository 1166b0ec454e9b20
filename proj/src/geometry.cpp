#include "pnerf/geometry.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "pnerf/error.hpp"

namespace pnerf {

CameraIntrinsics CameraIntrinsics::centered(int width, int height, double focal) {
  CameraIntrinsics intr{width, height, focal, Vec2(0.5 * width, 0.5 * height)};
  intr.validate();
  return intr;
}

void CameraIntrinsics::validate() const {
  if (width < 1 || height < 1) throw ConfigError("camera: width and height must be >= 1");
  if (!(focal > 0.0) || !std::isfinite(focal)) throw ConfigError("camera: focal must be positive");
  if (!principal_point.allFinite()) throw ConfigError("camera: principal point must be finite");
}

Pose Pose::look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = target - eye;
  if (forward.norm() == 0.0) throw DomainError("look_at: eye and target coincide");
  const Vec3 z = -forward.normalized();
  const Vec3 x_raw = up.cross(z);
  if (x_raw.norm() < 1e-12) throw DomainError("look_at: up vector parallel to view direction");
  const Vec3 x = x_raw.normalized();
  const Vec3 y = z.cross(x);
  Pose pose;
  pose.rotation.col(0) = x;
  pose.rotation.col(1) = y;
  pose.rotation.col(2) = z;
  pose.translation = eye;
  return pose;
}

void Pose::validate(double tolerance) const {
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho <= tolerance)) throw DomainError("pose: rotation columns are not orthonormal");
  if (!(std::abs(rotation.determinant() - 1.0) <= tolerance)) throw DomainError("pose: rotation determinant is not +1");
  if (!translation.allFinite()) throw DomainError("pose: translation must be finite");
}

SampleGrid SampleGrid::from_distances(VecX distances, double t_near, double t_far) {
  const Index n = distances.size();
  if (n < 1) throw DomainError("sample grid: no samples");
  if (!(t_near >= 0.0 && t_near < t_far)) throw DomainError("sample grid: requires 0 <= t_near < t_far");
  if (distances(0) < t_near || distances(n - 1) > t_far) throw DomainError("sample grid: samples outside [t_near, t_far]");
  SampleGrid grid;
  grid.deltas.resize(n);
  for (Index k = 0; k + 1 < n; ++k) {
    grid.deltas(k) = distances(k + 1) - distances(k);
    if (!(grid.deltas(k) > 0.0)) throw DomainError("sample grid: distances must be strictly increasing");
  }
  grid.deltas(n - 1) = t_far - distances(n - 1);
  if (!(grid.deltas(n - 1) > 0.0)) throw DomainError("sample grid: last sample must lie before t_far");
  grid.t = std::move(distances);
  grid.t_near = t_near;
  grid.t_far = t_far;
  return grid;
}

Ray generate_ray(const CameraIntrinsics& intr, const Pose& pose, int row, int col, const Vec2& jitter,
                 double t_near, double t_far) {
  if (row < 0 || row >= intr.height || col < 0 || col >= intr.width) {
    throw DomainError("generate_ray: pixel (" + std::to_string(row) + ", " + std::to_string(col) + ") out of bounds");
  }
  if (!(t_near >= 0.0 && t_near < t_far)) throw DomainError("generate_ray: requires 0 <= t_near < t_far");
  const double x = (col + jitter.x() - intr.principal_point.x()) / intr.focal;
  const double y = -(row + jitter.y() - intr.principal_point.y()) / intr.focal;
  Ray ray;
  ray.origin = pose.translation;
  ray.direction = (pose.rotation * Vec3(x, y, -1.0)).normalized();
  ray.t_near = t_near;
  ray.t_far = t_far;
  return ray;
}

Vec2 project_point(const CameraIntrinsics& intr, const Pose& pose, const Vec3& world) {
  const Vec3 p = pose.rotation.transpose() * (world - pose.translation);
  if (!(p.z() < 0.0)) throw DomainError("project_point: point behind the camera");
  const double depth = -p.z();
  return {intr.principal_point.x() + intr.focal * p.x() / depth, intr.principal_point.y() - intr.focal * p.y() / depth};
}

SampleGrid stratified_samples(const Ray& ray, int n, std::span<const double> draws) {
  if (n < 2) throw DomainError("stratified_samples: need at least 2 samples");
  if (draws.size() < static_cast<std::size_t>(n)) throw DomainError("stratified_samples: not enough draws");
  const double width = (ray.t_far - ray.t_near) / n;
  VecX t(n);
  for (int k = 0; k < n; ++k) {
    const double u = std::clamp(draws[k], 0.0, std::nextafter(1.0, 0.0));
    t(k) = ray.t_near + (k + u) * width;
  }
  // Rounding can push the last stratum onto t_far.
  if (t(n - 1) >= ray.t_far) t(n - 1) = std::nextafter(ray.t_far, ray.t_near);
  return SampleGrid::from_distances(std::move(t), ray.t_near, ray.t_far);
}

VecX sample_piecewise_constant(const SampleGrid& grid, const VecX& weights, std::span<const double> draws) {
  const Index n_bins = grid.size();
  if (weights.size() != n_bins) throw UsageError("sample_piecewise_constant: weights do not match grid");
  if (!weights.allFinite() || (weights.array() < 0.0).any()) {
    throw DomainError("sample_piecewise_constant: weights must be finite and non-negative");
  }
  const Index n = static_cast<Index>(draws.size());
  VecX out(n);
  const double total = weights.sum();
  if (!(total > 0.0)) {
    const double width = (grid.t_far - grid.t_near) / static_cast<double>(n);
    for (Index k = 0; k < n; ++k) out(k) = grid.t_near + (k + draws[k]) * width;
    std::sort(out.data(), out.data() + n);
    return out;
  }
  std::vector<double> cdf(n_bins + 1, 0.0);
  for (Index k = 0; k < n_bins; ++k) cdf[k + 1] = cdf[k] + weights(k) / total;
  cdf[n_bins] = 1.0;
  for (Index i = 0; i < n; ++i) {
    const double u = std::clamp(draws[i], 0.0, std::nextafter(1.0, 0.0));
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const Index bin = std::clamp<Index>(static_cast<Index>(it - cdf.begin()) - 1, 0, n_bins - 1);
    const double mass = cdf[bin + 1] - cdf[bin];
    const double frac = mass > 0.0 ? std::clamp((u - cdf[bin]) / mass, 0.0, 1.0) : 0.5;
    out(i) = grid.t(bin) + frac * grid.deltas(bin);
  }
  std::sort(out.data(), out.data() + n);
  return out;
}

SampleGrid hierarchical_resample(const SampleGrid& coarse, const VecX& coarse_weights, int n_fine,
                                 std::span<const double> draws) {
  if (n_fine < 1) throw DomainError("hierarchical_resample: n_fine must be >= 1");
  if (draws.size() < static_cast<std::size_t>(n_fine)) throw DomainError("hierarchical_resample: not enough draws");
  const VecX fine = sample_piecewise_constant(coarse, coarse_weights, draws.first(n_fine));
  VecX merged(coarse.size() + n_fine);
  merged << coarse.t, fine;
  std::sort(merged.data(), merged.data() + merged.size());
  const double upper = std::nextafter(coarse.t_far, coarse.t_near);
  for (Index k = 1; k < merged.size(); ++k) {
    if (merged(k) <= merged(k - 1)) merged(k) = std::nextafter(merged(k - 1), coarse.t_far);
  }
  // Coincident draws next to t_far can only be separated downward.
  const Index last = merged.size() - 1;
  merged(last) = std::min(merged(last), upper);
  for (Index k = last - 1; k >= 0 && merged(k) >= merged(k + 1); --k) {
    merged(k) = std::nextafter(merged(k + 1), coarse.t_near);
  }
  return SampleGrid::from_distances(std::move(merged), coarse.t_near, coarse.t_far);
}

VecX positional_encoding(const VecX& x, int frequencies) {
  if (frequencies < 1) throw DomainError("positional_encoding: need at least one frequency");
  const Index dim = x.size();
  VecX out(2 * frequencies * dim);
  double scale = 1.0;
  for (int l = 0; l < frequencies; ++l, scale *= 2.0) {
    out.segment(2 * l * dim, dim) = (scale * x).array().sin();
    out.segment((2 * l + 1) * dim, dim) = (scale * x).array().cos();
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> positional_encoding_batch(const Eigen::Ref<const Eigen::MatrixXd>& points, int frequencies) {
  if (frequencies < 1) throw DomainError("positional_encoding: need at least one frequency");
  const Index dim = points.rows();
  Matrix<Scalar> out(2 * frequencies * dim, points.cols());
  // Higher octaves by the double-angle identities; the rounding error grows
  // like 2^l, the same as the error of forming 2^l x directly.
  Eigen::ArrayXXd s = points.array().sin();
  Eigen::ArrayXXd c = points.array().cos();
  for (int l = 0; l < frequencies; ++l) {
    out.middleRows(2 * l * dim, dim) = s.matrix().template cast<Scalar>();
    out.middleRows((2 * l + 1) * dim, dim) = c.matrix().template cast<Scalar>();
    if (l + 1 < frequencies) {
      const Eigen::ArrayXXd s2 = 2.0 * s * c;
      c = (c - s) * (c + s);
      s = s2;
    }
  }
  return out;
}

template Matrix<double> positional_encoding_batch<double>(const Eigen::Ref<const Eigen::MatrixXd>&, int);
template Matrix<float> positional_encoding_batch<float>(const Eigen::Ref<const Eigen::MatrixXd>&, int);

std::vector<Pose> read_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pose file " + path.string());
  std::vector<double> numbers;
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string token;
    while (fields >> token) {
      try {
        std::size_t used = 0;
        numbers.push_back(std::stod(token, &used));
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        throw FormatError("pose file " + path.string() + ": bad number '" + token + "'");
      }
    }
  }
  if (numbers.size() % 12 != 0) throw FormatError("pose file " + path.string() + ": count is not a multiple of 12");
  std::vector<Pose> poses(numbers.size() / 12);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const double* m = numbers.data() + 12 * i;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) poses[i].rotation(r, c) = m[4 * r + c];
      poses[i].translation(r) = m[4 * r + 3];
    }
    try {
      poses[i].validate(1e-6);
    } catch (const DomainError& e) {
      throw FormatError("pose file " + path.string() + ": camera " + std::to_string(i) + ": " + e.what());
    }
  }
  return poses;
}

void write_poses(const std::filesystem::path& path, std::span<const Pose> poses) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write pose file " + path.string());
  out << "# world-from-camera, row-major 3x4, one camera per block\n";
  out << std::setprecision(17);
  for (const Pose& pose : poses) {
    for (int r = 0; r < 3; ++r) {
      out << pose.rotation(r, 0) << ' ' << pose.rotation(r, 1) << ' ' << pose.rotation(r, 2) << ' ' << pose.translation(r)
          << '\n';
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing pose file " + path.string());
}

}  // namespace pnerf
