#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "pnerf/types.hpp"

namespace pnerf {

/// Pinhole intrinsics. The principal point is (column, row) in pixels.
struct CameraIntrinsics {
  int width = 1;
  int height = 1;
  double focal = 1.0;
  Vec2 principal_point = Vec2::Zero();

  /// Principal point at the image center.
  static CameraIntrinsics centered(int width, int height, double focal);
  void validate() const;
};

/// World-from-camera rigid transform. Cameras look along -z, rows grow downward.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitY());
  void validate(double tolerance = 1e-9) const;
  Vec3 center() const { return translation; }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = -Vec3::UnitZ();
  double t_near = 0.0;
  double t_far = 1.0;

  Vec3 at(double t) const { return origin + t * direction; }
};

/// Ordered sample distances along a ray with their bin widths. The last
/// width runs to t_far.
struct SampleGrid {
  VecX t;
  VecX deltas;
  double t_near = 0.0;
  double t_far = 1.0;

  /// Builds deltas from strictly increasing distances; throws DomainError otherwise.
  static SampleGrid from_distances(VecX distances, double t_near, double t_far);
  Index size() const { return t.size(); }
};

/// Camera ray through (row + jitter.y, col + jitter.x).
Ray generate_ray(const CameraIntrinsics& intr, const Pose& pose, int row, int col,
                 const Vec2& jitter, double t_near, double t_far);

/// Continuous pixel coordinates (col, row) of a world point; the inverse of generate_ray.
Vec2 project_point(const CameraIntrinsics& intr, const Pose& pose, const Vec3& world);

/// One sample per equal stratum of [t_near, t_far], offset by the given draws.
SampleGrid stratified_samples(const Ray& ray, int n, std::span<const double> draws);

/// Inverse-transform samples of the piecewise-constant density whose mass in
/// bin [t_k, t_k + delta_k] is proportional to weights[k]. Output is sorted.
/// All-zero weights fall back to stratified sampling over [t_near, t_far].
VecX sample_piecewise_constant(const SampleGrid& grid, const VecX& weights, std::span<const double> draws);

/// Coarse distances merged with n_fine importance samples drawn from the coarse weights.
SampleGrid hierarchical_resample(const SampleGrid& coarse, const VecX& coarse_weights, int n_fine,
                                 std::span<const double> draws);

/// [sin(x), cos(x), ..., sin(2^{L-1} x), cos(2^{L-1} x)], each block of dim(x).
VecX positional_encoding(const VecX& x, int frequencies);

/// Column-wise positional encoding of a dim x M matrix of points.
template <typename Scalar>
Matrix<Scalar> positional_encoding_batch(const Eigen::Ref<const Eigen::MatrixXd>& points, int frequencies);

/// Pose files: one camera per block of 12 numbers, the row-major 3x4
/// world-from-camera matrix. '#' starts a comment.
std::vector<Pose> read_poses(const std::filesystem::path& path);
void write_poses(const std::filesystem::path& path, std::span<const Pose> poses);

}  // namespace pnerf
