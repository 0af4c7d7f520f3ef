// SPDX-License-Identifier: Apache-2.0
#include "spfuse/synthdata.hpp"

#include <cmath>
#include <cstdio>

namespace spfuse {

namespace {

constexpr int kGround = 0;
constexpr int kBuilding = 1;
constexpr int kVehicle = 2;
constexpr int kPole = 3;
constexpr int kVegetation = 4;
constexpr int kPedestrian = 5;

constexpr double kGroundHalf = 8.0;     // ground plane spans [-8, 8]^2
constexpr double kIlluminationTarget = 0.65;
constexpr double kDropoutTarget = 0.15;
constexpr double kYawShiftTarget = 10.0 * M_PI / 180.0;

// Position-keyed procedural noise: quantize at `scale`, hash, map to [0, 1).
double hash01(const Eigen::Vector3d& p, double scale, std::uint64_t salt) {
  std::int64_t q[3];
  for (int i = 0; i < 3; ++i) q[i] = static_cast<std::int64_t>(std::floor(p[i] / scale));
  std::uint64_t h = fnv1a(q, sizeof q, mix_seed(salt, 0x9e3779b97f4a7c15ull));
  return std::ldexp(static_cast<double>(h >> 11), -53);
}

double hash01(std::uint64_t salt, std::uint64_t lane) {
  const std::uint64_t h = mix_seed(salt, lane);
  return std::ldexp(static_cast<double>(h >> 11), -53);
}

struct Primitive {
  int cls = kGround;
  int kind = 0;  // 0 plane, 1 box, 2 cylinder, 3 ellipsoid
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d size = Eigen::Vector3d::Ones();  // box: half extents;
                                                   // cyl: (r, r, h/2); ell: radii
  double yaw = 0.0;

  double area() const {
    const double a = size[0], b = size[1], c = size[2];
    switch (kind) {
      case 0:
        return 4.0 * kGroundHalf * kGroundHalf;
      case 1:  // five exposed faces of a box with half extents (a, b, c)
        return 8.0 * a * c + 8.0 * b * c + 4.0 * a * b;
      case 2:  // cylinder side plus top cap
        return 2.0 * M_PI * a * (2.0 * c) + M_PI * a * a;
      default: {  // Thomsen approximation of the ellipsoid surface
        const double p = 1.6;
        const double s = (std::pow(a * b, p) + std::pow(a * c, p) +
                          std::pow(b * c, p)) / 3.0;
        return 4.0 * M_PI * std::pow(s, 1.0 / p);
      }
    }
  }

  Eigen::Vector3d sample_surface(Rng& rng) const {
    Eigen::Vector3d local;
    switch (kind) {
      case 0:
        return {rng.uniform(-kGroundHalf, kGroundHalf),
                rng.uniform(-kGroundHalf, kGroundHalf), 0.0};
      case 1: {
        const double a = size[0], b = size[1], c = size[2];
        const double w[5] = {4.0 * b * c, 4.0 * b * c, 4.0 * a * c, 4.0 * a * c,
                             4.0 * a * b};  // +x, -x, +y, -y, top
        double total = 0.0;
        for (double v : w) total += v;
        double pick = rng.uniform(0.0, total);
        int face = 0;
        while (face < 4 && pick > w[face]) pick -= w[face], ++face;
        const double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
        switch (face) {
          case 0: local = {a, u * b, v * c}; break;
          case 1: local = {-a, u * b, v * c}; break;
          case 2: local = {u * a, b, v * c}; break;
          case 3: local = {u * a, -b, v * c}; break;
          default: local = {u * a, v * b, c}; break;
        }
        break;
      }
      case 2: {
        const double r = size[0], hh = size[2];
        const double side = 2.0 * M_PI * r * (2.0 * hh), cap = M_PI * r * r;
        if (rng.uniform(0.0, side + cap) < side) {
          const double ang = rng.uniform(0.0, 2.0 * M_PI);
          local = {r * std::cos(ang), r * std::sin(ang), rng.uniform(-hh, hh)};
        } else {
          const double ang = rng.uniform(0.0, 2.0 * M_PI);
          const double rr = r * std::sqrt(rng.uniform());
          local = {rr * std::cos(ang), rr * std::sin(ang), hh};
        }
        break;
      }
      default: {
        Eigen::Vector3d d{rng.normal(), rng.normal(), rng.normal()};
        const double n = d.norm();
        d = n > 1e-12 ? Eigen::Vector3d(d / n) : Eigen::Vector3d(0, 0, 1);
        local = d.cwiseProduct(size);
        break;
      }
    }
    const double cy = std::cos(yaw), sy = std::sin(yaw);
    return center + Eigen::Vector3d(cy * local[0] - sy * local[1],
                                    sy * local[0] + cy * local[1], local[2]);
  }
};

// Class-conditioned procedural texture. Vegetation carries high-frequency
// green speckle while pedestrians are smooth warm tones, so the two
// geometrically similar classes separate by appearance.
Eigen::Vector3d class_color(int cls, const Eigen::Vector3d& p, std::uint64_t salt,
                            double top_z) {
  Eigen::Vector3d c;
  switch (cls) {
    case kGround: {
      const double n = (hash01(p, 0.75, salt) - 0.5) * 0.12;
      c = {0.36 + n, 0.33 + n, 0.28 + n};
      break;
    }
    case kBuilding: {
      const double tint = (hash01(salt, 1) - 0.5) * 0.16;
      const double band = std::abs(p[2] - std::round(p[2])) < 0.12 ? -0.12 : 0.0;
      c = {0.52 + tint + band, 0.52 + tint + band, 0.56 + tint + band};
      break;
    }
    case kVehicle: {
      const double h1 = hash01(salt, 2), h2 = hash01(salt, 3), h3 = hash01(salt, 4);
      c = {0.15 + 0.75 * h1, 0.10 + 0.25 * h2, 0.10 + 0.25 * h3};
      if (static_cast<int>(salt % 3) == 1) std::swap(c[0], c[2]);
      if (static_cast<int>(salt % 3) == 2) std::swap(c[0], c[1]);
      break;
    }
    case kPole:
      c = {0.22, 0.22, 0.24};
      break;
    case kVegetation: {
      const double s = (hash01(p, 0.05, salt) - 0.5) * 2.0;
      c = {0.10 + 0.05 * s, 0.42 + 0.22 * s, 0.12 + 0.05 * s};
      break;
    }
    default: {  // pedestrian
      if (p[2] > top_z) {
        c = {0.78, 0.62, 0.52};
      } else {
        const double h1 = hash01(salt, 5), h2 = hash01(salt, 6), h3 = hash01(salt, 7);
        c = {0.45 + 0.25 * h1, 0.30 + 0.15 * h2, 0.25 + 0.12 * h3};
      }
      break;
    }
  }
  return c;
}

double horizontal_radius(const Primitive& pr) {
  switch (pr.kind) {
    case 1:
      return std::hypot(pr.size[0], pr.size[1]);
    case 2:
      return pr.size[0];
    default:
      return std::max(pr.size[0], pr.size[1]);
  }
}

std::vector<Primitive> sample_layout(const SceneConfig& cfg, Rng& rng) {
  std::vector<Primitive> prims;
  prims.push_back(Primitive{});  // ground plane

  const int n_object_classes = cfg.n_classes - 1;
  const int n_obj = static_cast<int>(
      rng.uniform_int(static_cast<std::uint64_t>(cfg.objects_min),
                      static_cast<std::uint64_t>(cfg.objects_max)));

  // One object of each available class first (class-presence guarantee),
  // then extras. Buildings are capped at two per scene to bound occlusion.
  std::vector<int> classes;
  int n_buildings = 0;
  for (int i = 0; i < n_obj; ++i) {
    int cl;
    if (i < n_object_classes) {
      cl = 1 + i;
    } else {
      cl = 1 + static_cast<int>(rng.uniform_int(
                   0, static_cast<std::uint64_t>(n_object_classes - 1)));
      for (int redraw = 0; redraw < 20 && cl == kBuilding && n_buildings >= 1;
           ++redraw)
        cl = 1 + static_cast<int>(rng.uniform_int(
                     0, static_cast<std::uint64_t>(n_object_classes - 1)));
    }
    if (cl == kBuilding) ++n_buildings;
    classes.push_back(cl);
  }

  const double yaw_mean =
      cfg.domain_style == DomainStyle::Target ? kYawShiftTarget : 0.0;
  for (int i = 0; i < n_obj; ++i) {
    Primitive pr;
    pr.cls = classes[static_cast<std::size_t>(i)];
    pr.yaw = yaw_mean + rng.normal() * (20.0 * M_PI / 180.0);
    switch (pr.cls) {
      case kBuilding:
        pr.kind = 1;
        pr.size = {rng.uniform(0.9, 1.6), rng.uniform(0.9, 1.6),
                   rng.uniform(1.0, 1.6)};
        break;
      case kVehicle: {
        pr.kind = 1;
        const double u = rng.uniform(0.85, 1.15);
        pr.size = {2.0 * u, 0.9 * u, 0.75 * u};
        break;
      }
      case kPole:
        pr.kind = 2;
        pr.size[0] = pr.size[1] = rng.uniform(0.15, 0.25);
        pr.size[2] = rng.uniform(1.2, 2.0);
        break;
      case kVegetation:
        pr.kind = 3;
        pr.size = {rng.uniform(0.28, 0.9), rng.uniform(0.28, 0.9),
                   rng.uniform(0.5, 1.1)};
        break;
      default:  // pedestrian
        pr.kind = 3;
        const double u = rng.uniform(0.9, 1.1);
        pr.size = {0.25 * u, 0.25 * u, 0.85 * u};
        break;
    }
    // place with radius-aware clearance so primitives never interpenetrate
    for (int attempt = 0; attempt < 20; ++attempt) {
      const double ang = rng.uniform(0.0, 2.0 * M_PI);
      const double rad = std::sqrt(rng.uniform()) * 6.0;
      pr.center = {rad * std::cos(ang), rad * std::sin(ang), pr.size[2]};
      bool clear = true;
      for (std::size_t j = 1; j < prims.size(); ++j) {
        const double need =
            horizontal_radius(prims[j]) + horizontal_radius(pr) + 0.4;
        clear = clear &&
                (prims[j].center.head<2>() - pr.center.head<2>()).norm() > need;
      }
      if (clear) break;
    }
    prims.push_back(pr);
  }
  return prims;
}

// Largest-remainder allocation of n samples over primitives: ground takes a
// fixed share, objects split the rest by surface area with a per-object floor.
std::vector<int> allocate_counts(const std::vector<Primitive>& prims, int n,
                                 double ground_share, int object_floor) {
  const std::size_t m = prims.size();
  std::vector<int> counts(m, 0);
  if (n <= 0) return counts;
  if (static_cast<std::size_t>(n) <= m) {
    for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(i)] = 1;
    return counts;
  }
  std::vector<double> quota(m, 0.0);
  quota[0] = ground_share * n;
  double area_total = 0.0;
  for (std::size_t i = 1; i < m; ++i) area_total += prims[i].area();
  const double object_budget = (1.0 - ground_share) * n;
  for (std::size_t i = 1; i < m; ++i)
    quota[i] = m > 1 ? object_budget * prims[i].area() / area_total : 0.0;
  const double floor_quota =
      std::min(static_cast<double>(object_floor),
               m > 1 ? object_budget / static_cast<double>(m - 1) : 0.0);
  for (std::size_t i = 1; i < m; ++i) quota[i] = std::max(quota[i], floor_quota);
  double qsum = 0.0;
  for (double q : quota) qsum += q;
  int assigned = 0;
  std::vector<std::pair<double, std::size_t>> rema(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double exact = quota[i] * n / qsum;
    counts[i] = static_cast<int>(std::floor(exact));
    assigned += counts[i];
    rema[i] = {exact - std::floor(exact), i};
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; k < n - assigned; ++k)
    ++counts[rema[static_cast<std::size_t>(k) % m].second];
  return counts;
}

Calibration look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                    int image_h, int image_w) {
  Calibration c;
  c.image_h = image_h;
  c.image_w = image_w;
  // focal length proportional to width keeps the field of view independent
  // of image resolution (110 px at the default width of 128)
  const double f = 110.0 / 128.0 * image_w;
  c.intrinsics << f, 0.0, image_w / 2.0, 0.0, f, image_h / 2.0, 0.0, 0.0, 1.0;
  const Eigen::Vector3d up(0.0, 0.0, 1.0);
  const Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d x = z.cross(up);
  if (x.norm() < 1e-9) x = Eigen::Vector3d(1.0, 0.0, 0.0);
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  c.rotation.row(0) = x;
  c.rotation.row(1) = y;
  c.rotation.row(2) = z;
  c.translation = -c.rotation * eye;
  return c;
}

Calibration sample_camera(const Points& probe, int image_h, int image_w, Rng& rng) {
  // elevated vantage keeps occlusion shadows short, which the pixel/point
  // label-consistency contract depends on
  const Eigen::Vector3d target(0.0, 0.0, 0.3);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double azim = rng.uniform(0.0, 2.0 * M_PI);
    const double dist = rng.uniform(7.0, 10.0);
    const double height = rng.uniform(15.0, 18.0);
    const Eigen::Vector3d eye(dist * std::cos(azim), dist * std::sin(azim), height);
    Calibration calib = look_at(eye, target, image_h, image_w);
    Correspondence corr = project_points(probe, calib);
    if (corr.n_valid() * 20 >= probe.rows() * 11) return calib;
  }
  throw ValidationError(
      "synthdata: no camera pose placed half the points in the frustum "
      "after 100 attempts");
}

}  // namespace

std::string to_string(DomainStyle style) {
  return style == DomainStyle::Source ? "source" : "target";
}

DomainStyle domain_style_from_string(const std::string& s) {
  if (s == "source") return DomainStyle::Source;
  if (s == "target") return DomainStyle::Target;
  throw ValidationError("domain style must be 'source' or 'target', got '" + s + "'");
}

const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names = {"ground",     "building",
                                                 "vehicle",    "pole",
                                                 "vegetation", "pedestrian"};
  return names;
}

void SceneConfig::validate() const {
  if (n_points < 1) throw ValidationError("scene config: n_points must be >= 1");
  if (n_classes < 2 ||
      n_classes > static_cast<int>(default_class_names().size()))
    throw ValidationError("scene config: n_classes must be in [2, 6]");
  if (patch_divisor < 1)
    throw ValidationError("scene config: patch_divisor must be >= 1");
  if (image_h < patch_divisor || image_w < patch_divisor ||
      image_h % patch_divisor != 0 || image_w % patch_divisor != 0)
    throw ValidationError(
        "scene config: image sides must be positive multiples of patch_divisor");
  if (objects_min < 1 || objects_max < objects_min)
    throw ValidationError("scene config: objects range must satisfy 1 <= min <= max");
  if (!(noise_sigma >= 0.0))
    throw ValidationError("scene config: noise_sigma must be >= 0");
}

LabeledScene generate_scene(const SceneConfig& config) {
  config.validate();
  Rng root(config.seed);
  Rng layout_rng = root.child("layout");
  Rng probe_rng = root.child("probe");
  Rng point_rng = root.child("points");
  Rng render_rng = root.child("render");
  Rng camera_rng = root.child("camera");
  Rng dropout_rng = root.child("dropout");

  const std::vector<Primitive> prims = sample_layout(config, layout_rng);
  const double illumination =
      config.domain_style == DomainStyle::Target ? kIlluminationTarget : 1.0;

  // ground samples avoid object footprints: the ground there is hidden from
  // every viewpoint, and points inside objects would poison the z-buffer
  // label-consistency contract
  std::vector<std::pair<Eigen::Vector2d, double>> footprints;
  for (std::size_t pi = 1; pi < prims.size(); ++pi)
    footprints.emplace_back(prims[pi].center.head<2>(),
                            horizontal_radius(prims[pi]) + 0.05);
  const auto sample_primitive = [&](std::size_t pi, Rng& rng) {
    if (pi != 0) return prims[pi].sample_surface(rng);
    for (int attempt = 0; attempt < 40; ++attempt) {
      Eigen::Vector3d p = prims[0].sample_surface(rng);
      bool clear = true;
      for (const auto& [c, r] : footprints)
        clear = clear && (p.head<2>() - c).norm() > r;
      if (clear) return p;
    }
    return prims[0].sample_surface(rng);
  };

  // Camera selection scores frustum coverage on a throwaway probe cloud drawn
  // from the same surfaces the LiDAR will sample.
  constexpr int kNProbe = 2048;
  const std::vector<int> probe_counts = allocate_counts(prims, kNProbe, 0.30, 20);
  Points probe(kNProbe, 3);
  {
    Eigen::Index r = 0;
    for (std::size_t pi = 0; pi < prims.size(); ++pi)
      for (int k = 0; k < probe_counts[pi]; ++k)
        probe.row(r++) = sample_primitive(pi, probe_rng);
  }
  LabeledScene scene;
  scene.calibration =
      sample_camera(probe, config.image_h, config.image_w, camera_rng);
  const Eigen::Matrix3d& R = scene.calibration.rotation;
  const Eigen::Vector3d& t = scene.calibration.translation;
  const double fx = scene.calibration.fx(), fy = scene.calibration.fy();
  const double cx = scene.calibration.cx(), cy = scene.calibration.cy();

  // Dense surface splats render first so LiDAR sampling can consult the
  // visible-surface depth buffer.
  const int n_render = std::max(60000, 5 * config.image_h * config.image_w);
  const std::vector<int> render_counts = allocate_counts(prims, n_render, 0.35, 200);
  Points splat_pts(n_render, 3);
  std::vector<int> splat_cls(static_cast<std::size_t>(n_render));
  std::vector<std::size_t> splat_prim(static_cast<std::size_t>(n_render));
  {
    Eigen::Index row = 0;
    for (std::size_t pi = 0; pi < prims.size(); ++pi) {
      for (int k = 0; k < render_counts[pi]; ++k) {
        splat_pts.row(row) = sample_primitive(pi, render_rng);
        splat_cls[static_cast<std::size_t>(row)] = prims[pi].cls;
        splat_prim[static_cast<std::size_t>(row)] = pi;
        ++row;
      }
    }
  }

  const int hw = config.image_h * config.image_w;
  std::vector<double> depth(static_cast<std::size_t>(hw),
                            std::numeric_limits<double>::infinity());
  std::vector<Eigen::Index> winner(static_cast<std::size_t>(hw), -1);
  const auto stamp = [&](const Eigen::Vector3d& p, Eigen::Index id) {
    const Eigen::Vector3d q = R * p + t;
    if (!(q.z() > kZMin)) return;
    const long long ui = std::llround(fx * q.x() / q.z() + cx);
    const long long vi = std::llround(fy * q.y() / q.z() + cy);
    if (ui < 0 || ui >= config.image_w || vi < 0 || vi >= config.image_h) return;
    const std::size_t cell = static_cast<std::size_t>(vi) *
                                 static_cast<std::size_t>(config.image_w) +
                             static_cast<std::size_t>(ui);
    if (q.z() < depth[cell]) {
      depth[cell] = q.z();
      winner[cell] = id;
    }
  };
  for (Eigen::Index i = 0; i < splat_pts.rows(); ++i)
    stamp(splat_pts.row(i), i);

  // LiDAR points: surface samples with Gaussian noise, labels from the
  // generating primitive. In-frustum samples are kept only when they lie on
  // the surface visible from the camera (out-of-view returns are kept as-is),
  // mirroring depth-backprojected point clouds, so point labels agree with
  // the pixels they land on by construction.
  constexpr double kVisibleEps = 0.15;
  const std::vector<int> lidar_counts =
      allocate_counts(prims, config.n_points, 0.30, 40);
  std::vector<Eigen::Vector3d> pts;
  std::vector<int> labels;
  std::vector<std::size_t> point_prim;
  pts.reserve(static_cast<std::size_t>(config.n_points));
  for (std::size_t pi = 0; pi < prims.size(); ++pi) {
    for (int k = 0; k < lidar_counts[pi]; ++k) {
      Eigen::Vector3d p;
      for (int attempt = 0; attempt < 40; ++attempt) {
        p = sample_primitive(pi, point_rng) +
            config.noise_sigma * Eigen::Vector3d(point_rng.normal(),
                                                 point_rng.normal(),
                                                 point_rng.normal());
        const Eigen::Vector3d q = R * p + t;
        if (!(q.z() > kZMin)) break;
        const long long ui = std::llround(fx * q.x() / q.z() + cx);
        const long long vi = std::llround(fy * q.y() / q.z() + cy);
        if (ui < 0 || ui >= config.image_w || vi < 0 || vi >= config.image_h)
          break;
        const std::size_t cell = static_cast<std::size_t>(vi) *
                                     static_cast<std::size_t>(config.image_w) +
                                 static_cast<std::size_t>(ui);
        if (q.z() < depth[cell] + kVisibleEps) break;
      }
      pts.push_back(p);
      labels.push_back(prims[pi].cls);
      point_prim.push_back(pi);
    }
  }
  if (config.domain_style == DomainStyle::Target) {
    std::vector<Eigen::Vector3d> kept_p;
    std::vector<int> kept_l;
    std::vector<std::size_t> kept_prim;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (dropout_rng.uniform() < kDropoutTarget) continue;
      kept_p.push_back(pts[i]);
      kept_l.push_back(labels[i]);
      kept_prim.push_back(point_prim[i]);
    }
    if (!kept_p.empty()) {
      pts = std::move(kept_p);
      labels = std::move(kept_l);
      point_prim = std::move(kept_prim);
    }
  }

  scene.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
  scene.point_labels.resize(static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    scene.points.row(static_cast<Eigen::Index>(i)) = pts[i];
    scene.point_labels[static_cast<Eigen::Index>(i)] = labels[i];
  }

  // The LiDAR points join the same z-buffer so a point that wins its pixel
  // stamps its own label there.
  for (Eigen::Index i = 0; i < scene.points.rows(); ++i)
    stamp(scene.points.row(i), static_cast<Eigen::Index>(n_render) + i);

  scene.image.resize(hw, 3);
  scene.pixel_labels.resize(hw);
  const Eigen::Vector3d sky(0.55, 0.65, 0.80);
  for (int cell = 0; cell < hw; ++cell) {
    const Eigen::Index w = winner[static_cast<std::size_t>(cell)];
    Eigen::Vector3d color;
    if (w < 0) {
      color = sky;
      scene.pixel_labels[cell] = kIgnoreLabel;
    } else {
      const bool from_lidar = w >= n_render;
      const Eigen::Index li = w - n_render;
      const std::size_t pi = from_lidar
                                 ? point_prim[static_cast<std::size_t>(li)]
                                 : splat_prim[static_cast<std::size_t>(w)];
      const Eigen::Vector3d p =
          from_lidar ? Eigen::Vector3d(scene.points.row(li))
                     : Eigen::Vector3d(splat_pts.row(w));
      const int cls =
          from_lidar ? scene.point_labels[li]
                     : splat_cls[static_cast<std::size_t>(w)];
      color = class_color(cls, p, mix_seed(config.seed, 1000 + pi),
                          prims[pi].center[2] + 0.55 * prims[pi].size[2]);
      scene.pixel_labels[cell] = cls;
    }
    color *= illumination;
    for (int ch = 0; ch < 3; ++ch)
      scene.image(cell, ch) = std::clamp(color[ch], 0.0, 1.0);
  }

  char id[64];
  std::snprintf(id, sizeof id, "%s-%020llu", to_string(config.domain_style).c_str(),
                static_cast<unsigned long long>(config.seed));
  scene.scene_id = id;
  scene.domain_tag = to_string(config.domain_style);
  scene.validate(config.n_classes);
  return scene;
}

Dataset generate_dataset(int n_scenes, const SceneConfig& config) {
  if (n_scenes < 0) throw ValidationError("generate_dataset: n_scenes must be >= 0");
  config.validate();
  Dataset ds;
  ds.n_classes = config.n_classes;
  ds.class_names.assign(default_class_names().begin(),
                        default_class_names().begin() + config.n_classes);
  std::vector<int> presence(static_cast<std::size_t>(config.n_classes), 0);
  for (int i = 0; i < n_scenes; ++i) {
    SceneConfig c = config;
    c.seed = config.seed + static_cast<std::uint64_t>(i);
    LabeledScene s = generate_scene(c);
    char id[80];
    std::snprintf(id, sizeof id, "%s-%05d-%020llu",
                  to_string(config.domain_style).c_str(), i,
                  static_cast<unsigned long long>(c.seed));
    s.scene_id = id;
    std::vector<bool> seen(static_cast<std::size_t>(config.n_classes), false);
    for (Eigen::Index k = 0; k < s.point_labels.size(); ++k)
      if (s.point_labels[k] != kIgnoreLabel)
        seen[static_cast<std::size_t>(s.point_labels[k])] = true;
    for (int cmark = 0; cmark < config.n_classes; ++cmark)
      presence[static_cast<std::size_t>(cmark)] += seen[static_cast<std::size_t>(cmark)];
    ds.scenes.push_back(std::move(s));
  }
  for (int cmark = 0; cmark < config.n_classes; ++cmark) {
    if (n_scenes > 0 &&
        presence[static_cast<std::size_t>(cmark)] * 5 < n_scenes * 4)
      throw ValidationError("generate_dataset: class " + std::to_string(cmark) +
                            " appears in fewer than 80% of scenes");
  }
  return ds;
}

}  // namespace spfuse
