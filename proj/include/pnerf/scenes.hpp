#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pnerf/geometry.hpp"
#include "pnerf/image.hpp"
#include "pnerf/losses.hpp"

namespace pnerf {

/// Lambertian surface lit by one directional light plus a self-emitted
/// floor: color = albedo * (emission + (1 - emission) * max(0, n.l)).
/// A positive checker_size alternates albedo and albedo_alt on a world grid.
struct Material {
  Vec3 albedo = Vec3::Constant(0.8);
  Vec3 albedo_alt = Vec3::Constant(0.4);
  double checker_size = 0.0;
  double emission = 0.3;
};

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  Material material;
};

struct Box {
  Vec3 lo = -Vec3::Ones();
  Vec3 hi = Vec3::Ones();
  Material material;
};

struct Plane {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Material material;
};

using Primitive = std::variant<Sphere, Box, Plane>;

/// Constant-density participating medium filling [t_near, first hit].
struct Medium {
  double density = 1.0;
  Vec3 tint = Vec3::Ones();
};

/// Opaque primitives plus an optional homogeneous medium.
struct AnalyticScene {
  std::vector<Primitive> primitives;
  std::optional<Medium> medium;
  Vec3 light_direction = Vec3(-0.4, 0.6, 0.7).normalized();

  void validate() const;
};

struct SurfaceHit {
  double t = 0.0;
  Vec3 normal = Vec3::UnitZ();
  const Material* material = nullptr;
};

/// Nearest intersection with t in [t_min, t_max].
std::optional<SurfaceHit> intersect(const AnalyticScene& scene, const Vec3& origin, const Vec3& direction, double t_min,
                                    double t_max);
Vec3 shade(const AnalyticScene& scene, const SurfaceHit& hit, const Vec3& point);

/// Three colored spheres centered 2, 3 and 4 units along -z in front of a
/// checkered backplane at z = -6.
AnalyticScene tri_sphere_scene();
/// Named presets: "tri_sphere", "empty", "fog" (tri-sphere inside a thin medium).
AnalyticScene scene_preset(const std::string& name);

struct GroundTruth {
  Image rgb;    // 3 channels
  Image depth;  // 1 channel, distance along the ray; NaN where nothing is hit
};

GroundTruth render_ground_truth(const AnalyticScene& scene, const CameraIntrinsics& intr, const Pose& pose,
                                double t_near, double t_far);

struct DepthRow {
  int row = 0;
  int col = 0;
  DepthTarget target;
};

using DepthTable = std::vector<DepthRow>;

/// Outlier targets get this confidence; inliers get 1.
inline constexpr double kOutlierConfidence = 0.1;

/// Noisy Gaussian depth targets for every valid pixel: mean = truth + N(0, sigma),
/// a fraction `outlier_rate` replaced by uniform draws in [t_near, t_far].
DepthTable corrupt_depth(const Image& true_depth, double sigma, double outlier_rate, std::uint64_t seed, double t_near,
                         double t_far);

/// Rows "row col mean sigma confidence".
void write_depth_table(const std::filesystem::path& path, const DepthTable& table);
DepthTable read_depth_table(const std::filesystem::path& path);

enum class Split { train, val, test };
std::string to_string(Split split);
Split parse_split(const std::string& name);

/// Camera placement facing `target` from distance `radius`.
/// fan: view 0 on the +z axis of the target, then alternating +step, -step,
/// +2 step, ... in azimuth. ring: n evenly spaced azimuths over 360 degrees.
struct CameraRingSpec {
  enum class Layout { fan, ring };
  Layout layout = Layout::fan;
  Vec3 target = Vec3(0.0, 0.0, -4.0);
  double radius = 4.0;
  double step_deg = 8.0;
  double elevation_deg = 0.0;

  std::vector<Pose> poses(int n_views) const;
};

struct DatasetSpec {
  CameraIntrinsics intrinsics = CameraIntrinsics::centered(32, 32, 40.0);
  CameraRingSpec ring;
  double t_near = 1.0;
  double t_far = 8.0;
  int n_views = 3;
  /// Views with index % test_stride == 0 are test views (0 disables).
  int test_stride = 8;
  /// Remaining views with index % val_stride == val_offset are validation views (0 disables).
  int val_stride = 0;
  int val_offset = 4;
  double depth_sigma = 1.0;
  double outlier_rate = 0.0;
  std::uint64_t seed = 0;
};

struct View {
  std::string name;
  Pose pose;
  Split split = Split::train;
  Image rgb;
  Image depth;
  /// Absent: only the photometric term is used for this view.
  std::optional<DepthTable> targets;
};

struct Dataset {
  CameraIntrinsics intrinsics;
  double t_near = 1.0;
  double t_far = 8.0;
  std::vector<View> views;

  std::vector<std::size_t> indices(Split split) const;
  void validate() const;
};

Dataset make_dataset(const AnalyticScene& scene, const DatasetSpec& spec);

/// Directory with manifest.txt, poses.txt, float rasters, PNG previews and depth tables.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// FNV-1a over the manifest and every file it references, in manifest order.
std::string dataset_hash(const std::filesystem::path& dir);

}  // namespace pnerf
