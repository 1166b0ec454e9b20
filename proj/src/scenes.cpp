#include "pnerf/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "pnerf/error.hpp"
#include "pnerf/random.hpp"

namespace pnerf {

namespace {

std::optional<SurfaceHit> intersect_one(const Sphere& s, const Vec3& o, const Vec3& d, double t_min, double t_max) {
  const Vec3 oc = o - s.center;
  const double b = d.dot(oc);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double root = std::sqrt(disc);
  double t = -b - root;
  if (t < t_min) t = -b + root;
  if (t < t_min || t > t_max) return std::nullopt;
  return SurfaceHit{t, (o + t * d - s.center) / s.radius, &s.material};
}

std::optional<SurfaceHit> intersect_one(const Box& box, const Vec3& o, const Vec3& d, double t_min, double t_max) {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  int axis_lo = 0, axis_hi = 0;
  for (int a = 0; a < 3; ++a) {
    if (d(a) == 0.0) {
      if (o(a) < box.lo(a) || o(a) > box.hi(a)) return std::nullopt;
      continue;
    }
    double t0 = (box.lo(a) - o(a)) / d(a);
    double t1 = (box.hi(a) - o(a)) / d(a);
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > lo) { lo = t0; axis_lo = a; }
    if (t1 < hi) { hi = t1; axis_hi = a; }
  }
  if (lo > hi) return std::nullopt;
  double t = lo;
  int axis = axis_lo;
  if (t < t_min) {
    t = hi;
    axis = axis_hi;
  }
  if (t < t_min || t > t_max) return std::nullopt;
  Vec3 n = Vec3::Zero();
  n(axis) = d(axis) > 0.0 ? -1.0 : 1.0;
  if (t == hi && t != lo) n = -n;
  return SurfaceHit{t, n, &box.material};
}

std::optional<SurfaceHit> intersect_one(const Plane& p, const Vec3& o, const Vec3& d, double t_min, double t_max) {
  const Vec3 n = p.normal.normalized();
  const double denom = n.dot(d);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = n.dot(p.point - o) / denom;
  if (t < t_min || t > t_max) return std::nullopt;
  return SurfaceHit{t, denom > 0.0 ? Vec3(-n) : n, &p.material};
}

/// Closed-form transport through a medium of constant density over a
/// segment of length `length` that starts at `start`.
struct MediumSegment {
  double transmittance;
  double absorbed;
  double depth_moment;  // integral of t * density * T(t)
};

MediumSegment medium_segment(double density, double start, double length) {
  const double x = density * length;
  const double absorbed = -std::expm1(-x);
  const double moment = start * absorbed + (absorbed - x * std::exp(-x)) / density;
  return {1.0 - absorbed, absorbed, moment};
}

}  // namespace

void AnalyticScene::validate() const {
  for (const Primitive& p : primitives) {
    if (const auto* s = std::get_if<Sphere>(&p); s && !(s->radius > 0.0)) throw ConfigError("scene: sphere radius must be positive");
    if (const auto* b = std::get_if<Box>(&p); b && !(b->lo.array() < b->hi.array()).all()) throw ConfigError("scene: box lo must be below hi");
    if (const auto* pl = std::get_if<Plane>(&p); pl && !(pl->normal.norm() > 0.0)) throw ConfigError("scene: plane normal must be non-zero");
  }
  if (medium && !(medium->density >= 0.0)) throw ConfigError("scene: medium density must be non-negative");
}

std::optional<SurfaceHit> intersect(const AnalyticScene& scene, const Vec3& origin, const Vec3& direction, double t_min,
                                    double t_max) {
  std::optional<SurfaceHit> best;
  for (const Primitive& p : scene.primitives) {
    const auto hit = std::visit([&](const auto& prim) { return intersect_one(prim, origin, direction, t_min, t_max); }, p);
    if (hit && (!best || hit->t < best->t)) best = hit;
  }
  return best;
}

Vec3 shade(const AnalyticScene& scene, const SurfaceHit& hit, const Vec3& point) {
  const Material& m = *hit.material;
  Vec3 albedo = m.albedo;
  if (m.checker_size > 0.0) {
    const Eigen::Array3d cell = (point.array() / m.checker_size).floor();
    const long parity = static_cast<long>(cell.sum());
    if (parity % 2 != 0) albedo = m.albedo_alt;
  }
  const double lambert = std::max(0.0, hit.normal.dot(scene.light_direction));
  return albedo * (m.emission + (1.0 - m.emission) * lambert);
}

AnalyticScene tri_sphere_scene() {
  AnalyticScene scene;
  scene.primitives.push_back(Sphere{Vec3(-0.35, -0.2, -2.0), 0.3, Material{Vec3(0.9, 0.2, 0.15), {}, 0.0, 0.35}});
  scene.primitives.push_back(Sphere{Vec3(0.45, 0.25, -3.0), 0.45, Material{Vec3(0.2, 0.8, 0.3), {}, 0.0, 0.35}});
  scene.primitives.push_back(Sphere{Vec3(-0.5, 0.6, -4.0), 0.55, Material{Vec3(0.2, 0.35, 0.9), {}, 0.0, 0.35}});
  scene.primitives.push_back(
      Plane{Vec3(0.0, 0.0, -6.0), Vec3::UnitZ(), Material{Vec3(0.85, 0.8, 0.6), Vec3(0.45, 0.4, 0.35), 0.6, 0.6}});
  return scene;
}

AnalyticScene scene_preset(const std::string& name) {
  if (name == "tri_sphere") return tri_sphere_scene();
  if (name == "empty") return {};
  if (name == "fog") {
    AnalyticScene scene = tri_sphere_scene();
    scene.medium = Medium{0.05, Vec3(0.7, 0.7, 0.75)};
    return scene;
  }
  throw ConfigError("unknown scene preset '" + name + "'");
}

GroundTruth render_ground_truth(const AnalyticScene& scene, const CameraIntrinsics& intr, const Pose& pose,
                                double t_near, double t_far) {
  scene.validate();
  intr.validate();
  GroundTruth gt{Image(intr.width, intr.height, 3), Image(intr.width, intr.height, 1, std::nan(""))};
  const double medium_density = scene.medium ? scene.medium->density : 0.0;
  for (int row = 0; row < intr.height; ++row) {
    for (int col = 0; col < intr.width; ++col) {
      const Ray ray = generate_ray(intr, pose, row, col, Vec2(0.5, 0.5), t_near, t_far);
      const auto hit = intersect(scene, ray.origin, ray.direction, t_near, t_far);
      Vec3 color = Vec3::Zero();
      double depth = std::nan("");
      if (medium_density > 0.0) {
        const double end = hit ? hit->t : t_far;
        const MediumSegment seg = medium_segment(medium_density, t_near, end - t_near);
        color = seg.absorbed * scene.medium->tint;
        double moment = seg.depth_moment;
        double mass = seg.absorbed;
        if (hit) {
          color += seg.transmittance * shade(scene, *hit, ray.at(hit->t));
          moment += seg.transmittance * hit->t;
          mass += seg.transmittance;
        }
        if (mass > 0.0) depth = moment / mass;
      } else if (hit) {
        color = shade(scene, *hit, ray.at(hit->t));
        depth = hit->t;
      }
      for (int c = 0; c < 3; ++c) gt.rgb.at(row, col, c) = color(c);
      gt.depth.at(row, col) = depth;
    }
  }
  return gt;
}

DepthTable corrupt_depth(const Image& true_depth, double sigma, double outlier_rate, std::uint64_t seed, double t_near,
                         double t_far) {
  if (!(sigma > 0.0)) throw DomainError("corrupt_depth: sigma must be positive");
  if (!(outlier_rate >= 0.0 && outlier_rate <= 1.0)) throw DomainError("corrupt_depth: outlier rate must lie in [0, 1]");
  if (true_depth.channels != 1) throw UsageError("corrupt_depth: expects a single-channel depth raster");
  Rng rng(mix_seed(seed, 0x64657074));
  DepthTable table;
  for (int row = 0; row < true_depth.height; ++row) {
    for (int col = 0; col < true_depth.width; ++col) {
      const double truth = true_depth.at(row, col);
      // Draw both values for every pixel so the noise does not depend on validity.
      const double noise = standard_normal(rng);
      const double outlier_draw = uniform01(rng);
      const double outlier_depth = uniform(rng, t_near, t_far);
      if (!std::isfinite(truth)) continue;
      DepthRow r{row, col, DepthTarget{truth + sigma * noise, sigma, 1.0, true}};
      if (outlier_draw < outlier_rate) {
        r.target.mean = outlier_depth;
        r.target.confidence = kOutlierConfidence;
      }
      table.push_back(r);
    }
  }
  return table;
}

void write_depth_table(const std::filesystem::path& path, const DepthTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write depth table " + path.string());
  out << "# row col mean sigma confidence\n" << std::setprecision(17);
  for (const DepthRow& r : table) {
    out << r.row << ' ' << r.col << ' ' << r.target.mean << ' ' << r.target.sigma << ' ' << r.target.confidence << '\n';
  }
  if (!out) throw IoError("failed writing depth table " + path.string());
}

DepthTable read_depth_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open depth table " + path.string());
  DepthTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    DepthRow r;
    std::string extra;
    if (!(fields >> r.row >> r.col >> r.target.mean >> r.target.sigma >> r.target.confidence) || (fields >> extra)) {
      throw FormatError("depth table " + path.string() + ": malformed line " + std::to_string(line_no));
    }
    r.target.present = true;
    try {
      r.target.validate();
    } catch (const DomainError& e) {
      throw FormatError("depth table " + path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
    table.push_back(r);
  }
  return table;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw FormatError("unknown split '" + name + "'");
}

std::vector<Pose> CameraRingSpec::poses(int n_views) const {
  if (!(radius > 0.0) || !std::isfinite(radius)) throw ConfigError("camera ring: radius must be positive");
  if (n_views < 1) throw ConfigError("camera ring: need at least one view");
  const double deg = std::numbers::pi / 180.0;
  const double elevation = elevation_deg * deg;
  std::vector<Pose> out;
  for (int i = 0; i < n_views; ++i) {
    double azimuth = 0.0;
    if (layout == Layout::fan) {
      const int k = (i + 1) / 2;
      azimuth = (i % 2 == 1 ? 1.0 : -1.0) * k * step_deg * deg;
    } else {
      azimuth = 2.0 * std::numbers::pi * i / n_views;
    }
    const Vec3 offset(std::sin(azimuth) * std::cos(elevation), std::sin(elevation), std::cos(azimuth) * std::cos(elevation));
    out.push_back(Pose::look_at(target + radius * offset, target));
  }
  return out;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (views[i].split == split) out.push_back(i);
  }
  return out;
}

void Dataset::validate() const {
  intrinsics.validate();
  if (!(t_near >= 0.0 && t_near < t_far)) throw FormatError("dataset: requires 0 <= t_near < t_far");
  for (const View& v : views) {
    if (v.rgb.width != intrinsics.width || v.rgb.height != intrinsics.height || v.rgb.channels != 3) {
      throw FormatError("dataset: view " + v.name + " has a wrong color raster shape");
    }
    if (v.depth.width != intrinsics.width || v.depth.height != intrinsics.height || v.depth.channels != 1) {
      throw FormatError("dataset: view " + v.name + " has a wrong depth raster shape");
    }
    if (v.targets) {
      for (const DepthRow& r : *v.targets) {
        if (r.row < 0 || r.row >= intrinsics.height || r.col < 0 || r.col >= intrinsics.width) {
          throw FormatError("dataset: view " + v.name + " supervises an out-of-bounds pixel");
        }
      }
    }
  }
}

Dataset make_dataset(const AnalyticScene& scene, const DatasetSpec& spec) {
  if (spec.n_views < 2) throw ConfigError("make_dataset: need at least 2 views");
  spec.intrinsics.validate();
  if (!(spec.t_near >= 0.0 && spec.t_near < spec.t_far)) throw ConfigError("make_dataset: requires 0 <= t_near < t_far");
  Dataset ds;
  ds.intrinsics = spec.intrinsics;
  ds.t_near = spec.t_near;
  ds.t_far = spec.t_far;
  const std::vector<Pose> poses = spec.ring.poses(spec.n_views);
  for (int i = 0; i < spec.n_views; ++i) {
    View v;
    char name[32];
    std::snprintf(name, sizeof(name), "view_%03d", i);
    v.name = name;
    v.pose = poses[i];
    if (spec.test_stride > 0 && i % spec.test_stride == 0) {
      v.split = Split::test;
    } else if (spec.val_stride > 0 && i % spec.val_stride == spec.val_offset % spec.val_stride) {
      v.split = Split::val;
    } else {
      v.split = Split::train;
    }
    GroundTruth gt = render_ground_truth(scene, spec.intrinsics, v.pose, spec.t_near, spec.t_far);
    v.rgb = std::move(gt.rgb);
    v.depth = std::move(gt.depth);
    v.targets = corrupt_depth(v.depth, spec.depth_sigma, spec.outlier_rate, mix_seed(spec.seed, i), spec.t_near, spec.t_far);
    ds.views.push_back(std::move(v));
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  dataset.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  std::vector<Pose> poses;
  for (const View& v : dataset.views) poses.push_back(v.pose);
  write_poses(dir / "poses.txt", poses);

  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.txt").string());
  const CameraIntrinsics& in = dataset.intrinsics;
  manifest << std::setprecision(17);
  manifest << "PNERF-DATASET 1\n";
  manifest << "width " << in.width << "\nheight " << in.height << "\nfocal " << in.focal << "\nprincipal "
           << in.principal_point.x() << ' ' << in.principal_point.y() << '\n';
  manifest << "t_near " << dataset.t_near << "\nt_far " << dataset.t_far << '\n';
  manifest << "poses poses.txt\n";
  manifest << "views " << dataset.views.size() << '\n';
  for (const View& v : dataset.views) {
    const std::string rgb = v.name + "_rgb.pfr";
    const std::string depth = v.name + "_depth.pfr";
    const std::string targets = v.targets ? v.name + "_targets.txt" : std::string("-");
    manifest << "view " << v.name << ' ' << to_string(v.split) << ' ' << rgb << ' ' << depth << ' ' << targets << '\n';
    write_pfr(dir / rgb, v.rgb);
    write_pfr(dir / depth, v.depth);
    write_png(dir / (v.name + "_rgb.png"), v.rgb);
    write_png(dir / (v.name + "_depth.png"), v.depth, dataset.t_far);
    if (v.targets) write_depth_table(dir / targets, *v.targets);
  }
  if (!manifest) throw IoError("failed writing " + (dir / "manifest.txt").string());
}

namespace {

struct ManifestEntry {
  std::string name, split, rgb, depth, targets;
};

struct Manifest {
  Dataset dataset;
  std::string poses_file;
  std::vector<ManifestEntry> entries;
};

Manifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.txt";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset manifest " + path.string());
  auto fail = [&](const std::string& field) -> void { throw FormatError("manifest " + path.string() + ": bad field '" + field + "'"); };
  auto expect = [&](const std::string& key) {
    std::string line;
    if (!std::getline(in, line)) fail(key);
    std::istringstream fields(line);
    std::string found;
    fields >> found;
    if (found != key) fail(key);
    return fields;
  };
  std::string magic;
  if (!std::getline(in, magic) || magic != "PNERF-DATASET 1") fail("magic");
  Manifest m;
  CameraIntrinsics& intr = m.dataset.intrinsics;
  if (!(expect("width") >> intr.width)) fail("width");
  if (!(expect("height") >> intr.height)) fail("height");
  if (!(expect("focal") >> intr.focal)) fail("focal");
  {
    auto f = expect("principal");
    if (!(f >> intr.principal_point.x() >> intr.principal_point.y())) fail("principal");
  }
  if (!(expect("t_near") >> m.dataset.t_near)) fail("t_near");
  if (!(expect("t_far") >> m.dataset.t_far)) fail("t_far");
  if (!(expect("poses") >> m.poses_file)) fail("poses");
  std::size_t count = 0;
  if (!(expect("views") >> count)) fail("views");
  for (std::size_t i = 0; i < count; ++i) {
    ManifestEntry e;
    if (!(expect("view") >> e.name >> e.split >> e.rgb >> e.depth >> e.targets)) fail("view");
    m.entries.push_back(e);
  }
  return m;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& dir) {
  Manifest m = read_manifest(dir);
  const std::vector<Pose> poses = read_poses(dir / m.poses_file);
  if (poses.size() != m.entries.size()) throw FormatError("dataset " + dir.string() + ": pose count differs from view count");
  Dataset ds = std::move(m.dataset);
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const ManifestEntry& e = m.entries[i];
    View v;
    v.name = e.name;
    v.pose = poses[i];
    v.split = parse_split(e.split);
    v.rgb = read_pfr(dir / e.rgb);
    v.depth = read_pfr(dir / e.depth);
    if (e.targets != "-" && std::filesystem::exists(dir / e.targets)) v.targets = read_depth_table(dir / e.targets);
    ds.views.push_back(std::move(v));
  }
  ds.validate();
  return ds;
}

std::string dataset_hash(const std::filesystem::path& dir) {
  const Manifest m = read_manifest(dir);
  std::vector<std::string> files{"manifest.txt", m.poses_file};
  for (const ManifestEntry& e : m.entries) {
    files.push_back(e.rgb);
    files.push_back(e.depth);
    if (e.targets != "-") files.push_back(e.targets);
  }
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::string& f : files) {
    std::ifstream in(dir / f, std::ios::binary);
    if (!in) throw IoError("cannot open " + (dir / f).string());
    for (std::istreambuf_iterator<char> it(in), end; it != end; ++it) {
      h ^= static_cast<unsigned char>(*it);
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace pnerf
