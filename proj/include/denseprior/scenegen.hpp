#pragma once

// Procedural ray-cast scene generator: random sphere/box/ground-plane scenes
// rendered to RGB with analytic depth, surface normals, alpha matte, and a
// validity mask. Conventions, fixed so the losses and metrics downstream are
// well defined:
//
//  - Camera space is x-right, y-down, z-forward; the camera may pitch about
//    its x axis (positive pitch looks downward). Depth is z-depth: distance
//    along the camera axis, not Euclidean ray length.
//  - Stored normals are camera-space geometric normals with the z component
//    negated, so surfaces facing the camera have +z. The flip is an isometry
//    (angles between stored normals equal angles between geometric ones).
//  - The matte is supersampled foreground coverage: the fraction of ss x ss
//    subpixel rays whose nearest hit is a foreground primitive. The ground
//    plane is background, so plane-only scenes have matte identically 0.
//  - The camera's focal length is in pixels at image width ref_width and is
//    scaled by W / ref_width when rendering, so a scene shows the same view
//    at every resolution.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "denseprior/errors.hpp"
#include "denseprior/raster.hpp"
#include "denseprior/rng.hpp"
#include "denseprior/tensor.hpp"

namespace dp {

struct Camera {
  std::array<double, 3> pos{0.0, 0.0, 0.0};
  double focal_px = 64.0;   // focal length in pixels at width ref_width
  double ref_width = 64.0;  // width the focal length is defined for
  double pitch = 0.0;       // radians, positive looks downward (+y)
};

struct Primitive {
  enum class Kind { sphere, box, plane } kind = Kind::sphere;
  // sphere/box: center. plane: c[1] is the plane's y coordinate.
  std::array<double, 3> c{0.0, 0.0, 0.0};
  // sphere: r[0] is the radius. box: half-extents per axis. plane: unused.
  std::array<double, 3> r{1.0, 1.0, 1.0};
  std::array<double, 3> albedo{0.7, 0.7, 0.7};
  bool foreground = true;
};

struct Scene {
  Camera camera;
  std::vector<Primitive> primitives;
  std::array<double, 3> light_dir{0.0, 0.0, 1.0};  // photon direction, unit
  double ambient = 0.25;

  // Checks the structural invariants: unit light, ambient in [0,1), and
  // every sphere/box strictly in front of the camera plane.
  void validate() const {
    const double ln = std::sqrt(light_dir[0] * light_dir[0] +
                                light_dir[1] * light_dir[1] +
                                light_dir[2] * light_dir[2]);
    if (std::abs(ln - 1.0) > 1e-9)
      throw config_error("scene light direction must be unit-norm");
    if (!(ambient >= 0.0 && ambient < 1.0))
      throw config_error("scene ambient fraction must be in [0, 1)");
    for (const Primitive& p : primitives) {
      if (p.kind == Primitive::Kind::plane) continue;
      const double front = p.kind == Primitive::Kind::sphere ? p.r[0] : p.r[2];
      if (!(p.c[2] - front > camera.pos[2] + 0.05))
        throw config_error("primitive is not strictly in front of the camera");
    }
  }
};

// One rendered example: image plus aligned dense ground truth.
struct DenseSample {
  TensorF rgb;             // (H, W, 3) in [0, 1]
  TensorF depth;           // (H, W), z-depth in scene units, valid where mask
  TensorF normal;          // (H, W, 3) unit camera-space normals (stored sign)
  TensorF matte;           // (H, W) in [0, 1]
  Tensor<uint8_t> mask;    // (H, W) hit-any-primitive validity
  bool pseudo = false;     // true once labels were perturbed into pseudo-labels

  int height() const { return depth.shape.empty() ? 0 : depth.shape[0]; }
  int width() const { return depth.shape.size() < 2 ? 0 : depth.shape[1]; }

  void validate() const {
    const int h = height(), w = width();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float m = matte.at(y, x);
        if (!(m >= 0.0f && m <= 1.0f))
          throw range_error("matte value outside [0, 1]");
        if (!mask.at(y, x)) continue;
        if (!(depth.at(y, x) > 0.0f))
          throw range_error("masked depth must be positive");
        const float nx = normal.at(y, x, 0), ny = normal.at(y, x, 1),
                    nz = normal.at(y, x, 2);
        const float nn = std::sqrt(nx * nx + ny * ny + nz * nz);
        if (std::abs(nn - 1.0f) > 1e-5f)
          throw range_error("masked normal must be unit-norm within 1e-5");
      }
  }
};

// Bounds for random_scene. Defaults give mixed sphere/box scenes over a
// ground plane, centered in the view frustum.
struct SceneGenConfig {
  int min_primitives = 1;       // foreground primitives, in [1, 8]
  int max_primitives = 4;
  double z_near = 2.5, z_far = 7.0;      // center depth range
  double radius_min = 0.3, radius_max = 1.0;   // sphere radius / box half-extent
  double frustum_margin = 0.8;  // keep centers within this frustum fraction
  double focal_rel_min = 0.8, focal_rel_max = 1.4;  // focal / image width
  double pitch_min = -0.05, pitch_max = 0.30;       // radians
  double ground_y_min = 0.9, ground_y_max = 1.8;    // plane below the camera
  double box_fraction = 0.35;   // probability a primitive is a box
  double ambient_min = 0.15, ambient_max = 0.35;

  void validate() const {
    if (min_primitives < 1 || max_primitives > 8 ||
        min_primitives > max_primitives)
      throw config_error("primitive count bounds must satisfy 1 <= min <= max <= 8");
    if (!(z_near >= 0.5 && z_near <= z_far))
      throw config_error("depth range must satisfy 0.5 <= z_near <= z_far");
    if (!(radius_min > 0.0 && radius_min <= radius_max))
      throw config_error("radius range must satisfy 0 < min <= max");
    if (!(frustum_margin > 0.0 && frustum_margin <= 1.0))
      throw config_error("frustum margin must be in (0, 1]");
    if (!(focal_rel_min > 0.0 && focal_rel_min <= focal_rel_max))
      throw config_error("focal range must satisfy 0 < min <= max");
    if (!(box_fraction >= 0.0 && box_fraction <= 1.0))
      throw config_error("box fraction must be in [0, 1]");
    if (!(ambient_min >= 0.0 && ambient_min <= ambient_max && ambient_max < 1.0))
      throw config_error("ambient range must satisfy 0 <= min <= max < 1");
    if (!(ground_y_min > 0.0 && ground_y_min <= ground_y_max))
      throw config_error("ground plane range must satisfy 0 < min <= max");
  }
};

namespace detail {

constexpr double kRayTMin = 1e-6;

struct Hit {
  double t = 0.0;                       // z-depth of the hit
  std::array<double, 3> n{0, 0, 0};     // world geometric normal, toward ray origin
  const Primitive* prim = nullptr;
};

// Ray origin o, direction d with d parameterized so that t equals z-depth in
// camera space (see render_scene). Returns the nearest hit with t > kRayTMin.
inline bool intersect(const Primitive& p, const std::array<double, 3>& o,
                      const std::array<double, 3>& d, Hit& hit) {
  switch (p.kind) {
    case Primitive::Kind::sphere: {
      const double ox = o[0] - p.c[0], oy = o[1] - p.c[1], oz = o[2] - p.c[2];
      const double a = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
      const double b = 2.0 * (ox * d[0] + oy * d[1] + oz * d[2]);
      const double cq = ox * ox + oy * oy + oz * oz - p.r[0] * p.r[0];
      const double disc = b * b - 4.0 * a * cq;
      if (disc < 0.0) return false;
      const double sq = std::sqrt(disc);
      double t = (-b - sq) / (2.0 * a);
      if (t <= kRayTMin) t = (-b + sq) / (2.0 * a);
      if (t <= kRayTMin) return false;
      hit.t = t;
      for (int k = 0; k < 3; ++k)
        hit.n[k] = (o[k] + t * d[k] - p.c[k]) / p.r[0];
      break;
    }
    case Primitive::Kind::box: {
      double tn = -1e300, tf = 1e300;
      int axis = 0;
      for (int k = 0; k < 3; ++k) {
        const double lo = p.c[k] - p.r[k], hi = p.c[k] + p.r[k];
        if (d[k] == 0.0) {
          if (o[k] < lo || o[k] > hi) return false;
          continue;
        }
        double t0 = (lo - o[k]) / d[k], t1 = (hi - o[k]) / d[k];
        if (t0 > t1) std::swap(t0, t1);
        if (t0 > tn) { tn = t0; axis = k; }
        tf = std::min(tf, t1);
        if (tn > tf) return false;
      }
      double t = tn;
      if (t <= kRayTMin) {
        t = tf;  // ray starts inside: exit face, normal flipped below
        if (t <= kRayTMin) return false;
      }
      hit.t = t;
      hit.n = {0.0, 0.0, 0.0};
      hit.n[axis] = d[axis] > 0.0 ? -1.0 : 1.0;
      break;
    }
    case Primitive::Kind::plane: {
      if (d[1] == 0.0) return false;
      const double t = (p.c[1] - o[1]) / d[1];
      if (t <= kRayTMin) return false;
      hit.t = t;
      hit.n = {0.0, d[1] > 0.0 ? -1.0 : 1.0, 0.0};
      break;
    }
  }
  // Orient toward the ray origin so shading and storage see a camera-facing
  // normal even in grazing or inside-primitive configurations.
  const double nd = hit.n[0] * d[0] + hit.n[1] * d[1] + hit.n[2] * d[2];
  if (nd > 0.0)
    for (double& v : hit.n) v = -v;
  hit.prim = &p;
  return true;
}

inline bool nearest_hit(const Scene& s, const std::array<double, 3>& o,
                        const std::array<double, 3>& d, Hit& best) {
  bool any = false;
  Hit h;
  for (const Primitive& p : s.primitives)
    if (intersect(p, o, d, h) && (!any || h.t < best.t)) {
      best = h;
      any = true;
    }
  return any;
}

}  // namespace detail

// Draws a random scene within the config bounds: a ground plane plus
// min..max foreground primitives, a random camera, and a random light.
// Reproducible per RNG state; throws generation_error if the bounds cannot
// be satisfied within 1000 placement attempts.
inline Scene random_scene(Rng& rng, const SceneGenConfig& cfg = {}) {
  cfg.validate();
  Scene s;
  s.camera.focal_px =
      rng.uniform(cfg.focal_rel_min, cfg.focal_rel_max) * s.camera.ref_width;
  s.camera.pitch = rng.uniform(cfg.pitch_min, cfg.pitch_max);
  s.ambient = rng.uniform(cfg.ambient_min, cfg.ambient_max);

  // Random unit light; forward/down bias keeps most visible faces lit.
  for (;;) {
    double lx = rng.normal(), ly = rng.normal(), lz = rng.normal();
    const double n = std::sqrt(lx * lx + ly * ly + lz * lz);
    if (n < 1e-6) continue;
    s.light_dir = {lx / n, std::abs(ly / n), std::abs(lz / n)};
    break;
  }

  auto albedo = [&rng]() {
    return std::array<double, 3>{rng.uniform(0.1, 0.95),
                                 rng.uniform(0.1, 0.95),
                                 rng.uniform(0.1, 0.95)};
  };

  Primitive ground;
  ground.kind = Primitive::Kind::plane;
  ground.c = {0.0, rng.uniform(cfg.ground_y_min, cfg.ground_y_max), 0.0};
  ground.albedo = albedo();
  ground.foreground = false;
  s.primitives.push_back(ground);

  const int count =
      cfg.min_primitives +
      rng.below_int(cfg.max_primitives - cfg.min_primitives + 1);
  const double focal_rel = s.camera.focal_px / s.camera.ref_width;
  int attempts = 0;
  for (int i = 0; i < count; ++i) {
    for (;;) {
      if (++attempts > 1000)
        throw generation_error(
            "could not place primitives within the configured bounds "
            "after 1000 attempts");
      Primitive p;
      p.kind = rng.uniform() < cfg.box_fraction ? Primitive::Kind::box
                                                : Primitive::Kind::sphere;
      const double z = rng.uniform(cfg.z_near, cfg.z_far);
      if (p.kind == Primitive::Kind::sphere) {
        const double r = rng.uniform(cfg.radius_min, cfg.radius_max);
        p.r = {r, r, r};
      } else {
        p.r = {rng.uniform(cfg.radius_min, cfg.radius_max),
               rng.uniform(cfg.radius_min, cfg.radius_max),
               rng.uniform(cfg.radius_min, cfg.radius_max)};
      }
      // Frustum half-extent at depth z (margin applied); the pitch shifts
      // the frustum center vertically by z*tan(pitch).
      const double ex = cfg.frustum_margin * z / (2.0 * focal_rel);
      const double cy = z * std::tan(s.camera.pitch);
      p.c = {rng.uniform(-ex, ex), cy + rng.uniform(-ex, ex), z};
      p.albedo = albedo();

      const double front = p.kind == Primitive::Kind::sphere ? p.r[0] : p.r[2];
      if (p.c[2] - front < 0.4) continue;  // must stay in front of the camera
      const double cc = std::sqrt(p.c[0] * p.c[0] + p.c[1] * p.c[1] +
                                  p.c[2] * p.c[2]);
      if (cc < front + 0.3) continue;  // must not engulf the camera
      s.primitives.push_back(p);
      break;
    }
  }
  s.validate();
  return s;
}

// Renders a scene to a DenseSample. Depth, normals, RGB, and mask come from
// one ray through each pixel center; the matte averages foreground coverage
// over ss x ss subpixel rays. ss must be 1, 2, or 4; H, W >= 16.
inline DenseSample render_scene(const Scene& scene, int height, int width,
                                int ss = 1) {
  if (height < 16 || width < 16)
    throw usage_error("render size must be at least 16 x 16");
  if (ss != 1 && ss != 2 && ss != 4)
    throw usage_error("supersample factor must be 1, 2, or 4");
  scene.validate();

  DenseSample out;
  out.rgb = TensorF({height, width, 3});
  out.depth = TensorF({height, width});
  out.normal = TensorF({height, width, 3});
  out.matte = TensorF({height, width});
  out.mask = Tensor<uint8_t>({height, width});

  const Camera& cam = scene.camera;
  const double f = cam.focal_px * (double(width) / cam.ref_width);
  const double cx = width / 2.0, cy = height / 2.0;
  const double cp = std::cos(cam.pitch), sp = std::sin(cam.pitch);

  // Camera-space direction (u, v, 1) rotated into the world; because the
  // rotation is rigid, the ray parameter t stays equal to camera z-depth.
  auto world_dir = [&](double u, double v) {
    return std::array<double, 3>{u, v * cp + sp, -v * sp + cp};
  };

  const double bg[3] = {0.10, 0.12, 0.15};
  detail::Hit hit;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5 - cx) / f, v = (y + 0.5 - cy) / f;
      const std::array<double, 3> d = world_dir(u, v);
      if (detail::nearest_hit(scene, cam.pos, d, hit)) {
        out.mask.at(y, x) = 1;
        out.depth.at(y, x) = float(hit.t);
        // World normal -> camera space (inverse pitch), then the storage
        // flip that makes camera-facing surfaces +z.
        const double ncx = hit.n[0];
        const double ncy = hit.n[1] * cp - hit.n[2] * sp;
        const double ncz = hit.n[1] * sp + hit.n[2] * cp;
        out.normal.at(y, x, 0) = float(ncx);
        out.normal.at(y, x, 1) = float(ncy);
        out.normal.at(y, x, 2) = float(-ncz);
        const double lambert =
            std::max(0.0, -(hit.n[0] * scene.light_dir[0] +
                            hit.n[1] * scene.light_dir[1] +
                            hit.n[2] * scene.light_dir[2]));
        const double shade = scene.ambient + (1.0 - scene.ambient) * lambert;
        for (int k = 0; k < 3; ++k)
          out.rgb.at(y, x, k) =
              float(std::clamp(hit.prim->albedo[k] * shade, 0.0, 1.0));
      } else {
        out.mask.at(y, x) = 0;
        out.depth.at(y, x) = 0.0f;
        for (int k = 0; k < 3; ++k) out.normal.at(y, x, k) = 0.0f;
        for (int k = 0; k < 3; ++k) out.rgb.at(y, x, k) = float(bg[k]);
      }

      int fg = 0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const double ou = (x + (sx + 0.5) / ss - cx) / f;
          const double ov = (y + (sy + 0.5) / ss - cy) / f;
          detail::Hit sh;
          if (detail::nearest_hit(scene, cam.pos, world_dir(ou, ov), sh) &&
              sh.prim->foreground)
            ++fg;
        }
      out.matte.at(y, x) = float(fg) / float(ss * ss);
    }
  return out;
}

// Label-noise bounds for simulated pseudo-labels.
struct PseudoNoiseConfig {
  double depth_sigma = 0.05;   // relative scale of the depth multiplier field
  double normal_sigma = 0.05;  // additive scale of the normal jitter field
  int field_cells = 4;         // low-frequency grid resolution per axis

  void validate() const {
    if (depth_sigma < 0.0 || normal_sigma < 0.0)
      throw config_error("pseudo-label noise magnitudes must be >= 0");
    if (field_cells < 1)
      throw config_error("pseudo-label field must have at least 1 cell");
  }
};

namespace detail {

// Smooth low-frequency field: bilinear interpolation of a (cells+1)^2 grid
// of standard normal draws.
struct SmoothField {
  int cells;
  std::vector<double> grid;

  SmoothField(Rng& rng, int cells_) : cells(cells_), grid((cells_ + 1) * (cells_ + 1)) {
    for (double& g : grid) g = rng.normal();
  }

  double at(double fy, double fx) const {  // fy, fx in [0, 1]
    const double gy = fy * cells, gx = fx * cells;
    const int y0 = std::min(int(gy), cells - 1), x0 = std::min(int(gx), cells - 1);
    const double ty = gy - y0, tx = gx - x0;
    const int s = cells + 1;
    const double a = grid[y0 * s + x0], b = grid[y0 * s + x0 + 1];
    const double c = grid[(y0 + 1) * s + x0], d = grid[(y0 + 1) * s + x0 + 1];
    return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
  }
};

}  // namespace detail

// Perturbs analytic labels into simulated pseudo-labels: depth is multiplied
// by a smooth field 1 + sigma*g (clamped positive), normals get smooth
// additive jitter and are re-normalized, RGB is untouched, and the pseudo
// provenance flag is set. Zero magnitudes leave the maps bit-identical.
inline DenseSample make_pseudo_labeled(const DenseSample& sample, Rng& rng,
                                       const PseudoNoiseConfig& cfg = {}) {
  cfg.validate();
  DenseSample out = sample;
  out.pseudo = true;
  const int h = sample.height(), w = sample.width();
  const double dy = h > 1 ? 1.0 / (h - 1) : 0.0;
  const double dx = w > 1 ? 1.0 / (w - 1) : 0.0;

  if (cfg.depth_sigma > 0.0) {
    detail::SmoothField field(rng, cfg.field_cells);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!sample.mask.at(y, x)) continue;
        const double m =
            std::max(0.01, 1.0 + cfg.depth_sigma * field.at(y * dy, x * dx));
        out.depth.at(y, x) = float(sample.depth.at(y, x) * m);
      }
  }
  if (cfg.normal_sigma > 0.0) {
    detail::SmoothField fx(rng, cfg.field_cells), fy(rng, cfg.field_cells),
        fz(rng, cfg.field_cells);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!sample.mask.at(y, x)) continue;
        double n[3] = {sample.normal.at(y, x, 0) +
                           cfg.normal_sigma * fx.at(y * dy, x * dx),
                       sample.normal.at(y, x, 1) +
                           cfg.normal_sigma * fy.at(y * dy, x * dx),
                       sample.normal.at(y, x, 2) +
                           cfg.normal_sigma * fz.at(y * dy, x * dx)};
        const double nn = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
        if (nn < 1e-8) continue;  // keep the original on degenerate jitter
        for (int k = 0; k < 3; ++k) out.normal.at(y, x, k) = float(n[k] / nn);
      }
  }
  return out;
}

// --- sample container I/O ---------------------------------------------------

// A DenseSample round-trips through one 9-channel bundle raster:
// channels 0-2 rgb, 3 depth, 4-6 normal, 7 matte, 8 mask.
inline void write_sample(const DenseSample& s, const std::string& path) {
  const int h = s.height(), w = s.width();
  TensorF bundle({h, w, 9});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < 3; ++k) bundle.at(y, x, k) = s.rgb.at(y, x, k);
      bundle.at(y, x, 3) = s.depth.at(y, x);
      for (int k = 0; k < 3; ++k) bundle.at(y, x, 4 + k) = s.normal.at(y, x, k);
      bundle.at(y, x, 7) = s.matte.at(y, x);
      bundle.at(y, x, 8) = s.mask.at(y, x) ? 1.0f : 0.0f;
    }
  write_raster(path, bundle, RasterSemantic::bundle, s.pseudo);
}

inline DenseSample read_sample(const std::string& path) {
  RasterMeta meta;
  const TensorF bundle = read_raster(path, &meta);
  if (meta.semantic != RasterSemantic::bundle)
    throw format_error("expected a 9-channel bundle raster", 16);
  const int h = int(meta.height), w = int(meta.width);
  DenseSample s;
  s.pseudo = meta.pseudo;
  s.rgb = TensorF({h, w, 3});
  s.depth = TensorF({h, w});
  s.normal = TensorF({h, w, 3});
  s.matte = TensorF({h, w});
  s.mask = Tensor<uint8_t>({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < 3; ++k) s.rgb.at(y, x, k) = bundle.at(y, x, k);
      s.depth.at(y, x) = bundle.at(y, x, 3);
      for (int k = 0; k < 3; ++k) s.normal.at(y, x, k) = bundle.at(y, x, 4 + k);
      s.matte.at(y, x) = bundle.at(y, x, 7);
      s.mask.at(y, x) = bundle.at(y, x, 8) != 0.0f ? 1 : 0;
    }
  return s;
}

// --- dataset generation ------------------------------------------------------

struct DatasetGenConfig {
  int n = 0;                    // number of samples; must be >= 1
  int size = 64;                // square render size
  int supersample = 4;
  double pseudo_fraction = 0.0;  // trailing fraction gets pseudo-labels
  SceneGenConfig scene;
  PseudoNoiseConfig noise;

  void validate() const {
    if (n < 1) throw config_error("dataset size n must be at least 1");
    if (size < 16) throw config_error("sample size must be at least 16");
    if (supersample != 1 && supersample != 2 && supersample != 4)
      throw config_error("supersample factor must be 1, 2, or 4");
    if (!(pseudo_fraction >= 0.0 && pseudo_fraction <= 1.0))
      throw config_error("pseudo fraction must be in [0, 1]");
    scene.validate();
    noise.validate();
  }
};

// Writes n samples plus a manifest ("file<TAB>kind" header, one line per
// sample) into dir. Sample i derives from an independent child RNG stream of
// the seed, so output is byte-reproducible and independent of generation
// order. Returns the written sample filenames in manifest order.
inline std::vector<std::string> generate_dataset(const std::string& dir,
                                                 const DatasetGenConfig& cfg,
                                                 uint64_t seed) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create dataset directory: " + dir);

  const int first_pseudo = int(std::ceil(double(cfg.n) * (1.0 - cfg.pseudo_fraction)));
  Rng root(seed);
  std::vector<std::string> names;
  names.reserve(cfg.n);
  std::string manifest = "file\tkind\n";
  for (int i = 0; i < cfg.n; ++i) {
    Rng rng = root.child(uint64_t(i));
    Scene scene = random_scene(rng, cfg.scene);
    DenseSample s = render_scene(scene, cfg.size, cfg.size, cfg.supersample);
    const bool pseudo = i >= first_pseudo;
    if (pseudo) s = make_pseudo_labeled(s, rng, cfg.noise);
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05d.dpr1", i);
    write_sample(s, dir + "/" + name);
    manifest += std::string(name) + "\t" + (pseudo ? "pseudo" : "synthetic") + "\n";
    names.push_back(name);
  }
  std::ofstream mf(dir + "/manifest.tsv", std::ios::trunc);
  if (!mf) throw io_error("cannot write manifest in: " + dir);
  mf << manifest;
  if (!mf) throw io_error("short manifest write in: " + dir);
  return names;
}

}  // namespace dp
