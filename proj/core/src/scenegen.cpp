#include "mvoc/scenegen.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>

#include "mvoc/json_util.hpp"
#include "mvoc/png_io.hpp"
#include "mvoc/util.hpp"

namespace mvoc {

namespace {

using json = nlohmann::json;
using Vec3 = std::array<double, 3>;

constexpr double kPi = 3.14159265358979323846;

Vec3 sub3(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 add3(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 scale3(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross3(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 normalize3(const Vec3& a) {
  const double n = std::sqrt(dot3(a, a));
  return {a[0] / n, a[1] / n, a[2] / n};
}

// Fixed directional light, world space.
const Vec3 kLightDir = normalize3({0.5, 0.25, 0.8});
constexpr double kAmbient = 0.35;
constexpr double kDiffuse = 0.65;

struct Camera {
  Vec3 pos, right, up, forward;
  double tan_half_fov;
  int res;

  // Returns (px, py, depth); depth <= 0 means behind the camera.
  std::array<double, 3> project(const Vec3& w) const {
    const Vec3 d = sub3(w, pos);
    const double zc = dot3(d, forward);
    if (zc <= 1e-9) return {0, 0, -1};
    const double xc = dot3(d, right) / (zc * tan_half_fov);
    const double yc = dot3(d, up) / (zc * tan_half_fov);
    const double px = (xc + 1.0) * 0.5 * res;
    const double py = (1.0 - (yc + 1.0) * 0.5) * res;
    return {px, py, zc};
  }
};

Camera make_camera(const CameraPose& pose, int resolution, double fov_degrees) {
  Camera cam;
  cam.pos = pose.position;
  cam.forward = normalize3(scale3(pose.position, -1.0));  // look at origin
  const Vec3 world_up{0, 0, 1};
  cam.right = normalize3(cross3(cam.forward, world_up));
  cam.up = cross3(cam.right, cam.forward);
  cam.tan_half_fov = std::tan(fov_degrees * kPi / 180.0 / 2.0);
  cam.res = resolution;
  return cam;
}

double shade(const Vec3& normal) {
  return kAmbient + kDiffuse * std::max(0.0, dot3(normal, kLightDir));
}

void put_pixel(Tensor& image, std::vector<std::uint8_t>& mask, int res, int x, int y,
               const Vec3& color, double intensity, int id) {
  if (x < 0 || x >= res || y < 0 || y >= res) return;
  const std::int64_t base = (static_cast<std::int64_t>(y) * res + x) * 3;
  for (int c = 0; c < 3; ++c) image[base + c] = std::clamp(color[c] * intensity, 0.0, 1.0);
  mask[static_cast<std::size_t>(y) * res + x] = static_cast<std::uint8_t>(id);
}

void draw_sphere(const SceneObject& obj, int id, const Camera& cam, Tensor& image,
                 std::vector<std::uint8_t>& mask) {
  const auto proj = cam.project(obj.position);
  if (proj[2] <= 0) return;
  const double cx = proj[0], cy = proj[1];
  const double rp = obj.size / (proj[2] * cam.tan_half_fov) * (cam.res * 0.5);
  if (rp <= 0) return;
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - rp)));
  const int x1 = std::min(cam.res - 1, static_cast<int>(std::ceil(cx + rp)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - rp)));
  const int y1 = std::min(cam.res - 1, static_cast<int>(std::ceil(cy + rp)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5 - cx) / rp;
      const double dy = (y + 0.5 - cy) / rp;
      const double rr = dx * dx + dy * dy;
      if (rr > 1.0) continue;
      const double nz = std::sqrt(1.0 - rr);
      // Impostor normal: disc coords mapped onto the camera frame.
      Vec3 n = add3(add3(scale3(cam.right, dx), scale3(cam.up, -dy)),
                    scale3(cam.forward, -nz));
      n = normalize3(n);
      put_pixel(image, mask, cam.res, x, y, obj.color, shade(n), id);
    }
  }
}

struct Tri {
  std::array<double, 2> a, b, c;
};

bool point_in_tri(double px, double py, const Tri& t) {
  auto edge = [](const std::array<double, 2>& p, const std::array<double, 2>& q, double x,
                 double y) { return (q[0] - p[0]) * (y - p[1]) - (q[1] - p[1]) * (x - p[0]); };
  const double e0 = edge(t.a, t.b, px, py);
  const double e1 = edge(t.b, t.c, px, py);
  const double e2 = edge(t.c, t.a, px, py);
  const bool neg = e0 < 0 || e1 < 0 || e2 < 0;
  const bool pos = e0 > 0 || e1 > 0 || e2 > 0;
  return !(neg && pos);
}

void draw_cube(const SceneObject& obj, int id, const Camera& cam, Tensor& image,
               std::vector<std::uint8_t>& mask) {
  const double s = obj.size;
  // Axis-aligned cube faces: (normal axis, sign).
  struct Face {
    Vec3 normal;
    Vec3 center;
    Vec3 u, v;  // in-plane half-extent vectors
    double depth;
  };
  std::vector<Face> faces;
  for (int axis = 0; axis < 3; ++axis) {
    for (int sign = -1; sign <= 1; sign += 2) {
      Face f;
      f.normal = {0, 0, 0};
      f.normal[static_cast<std::size_t>(axis)] = sign;
      f.center = add3(obj.position, scale3(f.normal, s));
      const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
      f.u = {0, 0, 0};
      f.u[static_cast<std::size_t>(a1)] = s;
      f.v = {0, 0, 0};
      f.v[static_cast<std::size_t>(a2)] = s;
      // Backface culling.
      if (dot3(f.normal, sub3(f.center, cam.pos)) >= 0) continue;
      f.depth = dot3(sub3(f.center, cam.pos), cam.forward);
      faces.push_back(f);
    }
  }
  std::sort(faces.begin(), faces.end(),
            [](const Face& a, const Face& b) { return a.depth > b.depth; });

  for (const Face& f : faces) {
    const Vec3 c0 = add3(add3(f.center, f.u), f.v);
    const Vec3 c1 = add3(sub3(f.center, f.u), f.v);
    const Vec3 c2 = sub3(sub3(f.center, f.u), f.v);
    const Vec3 c3 = sub3(add3(f.center, f.u), f.v);
    std::array<std::array<double, 2>, 4> p{};
    bool ok = true;
    double minx = 1e18, maxx = -1e18, miny = 1e18, maxy = -1e18;
    for (int i = 0; i < 4; ++i) {
      const Vec3& corner = i == 0 ? c0 : i == 1 ? c1 : i == 2 ? c2 : c3;
      const auto proj = cam.project(corner);
      if (proj[2] <= 0) {
        ok = false;
        break;
      }
      p[static_cast<std::size_t>(i)] = {proj[0], proj[1]};
      minx = std::min(minx, proj[0]);
      maxx = std::max(maxx, proj[0]);
      miny = std::min(miny, proj[1]);
      maxy = std::max(maxy, proj[1]);
    }
    if (!ok) continue;
    const double intensity = shade(f.normal);
    const Tri t1{p[0], p[1], p[2]};
    const Tri t2{p[0], p[2], p[3]};
    const int x0 = std::max(0, static_cast<int>(std::floor(minx)));
    const int x1 = std::min(cam.res - 1, static_cast<int>(std::ceil(maxx)));
    const int y0 = std::max(0, static_cast<int>(std::floor(miny)));
    const int y1 = std::min(cam.res - 1, static_cast<int>(std::ceil(maxy)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        if (point_in_tri(px, py, t1) || point_in_tri(px, py, t2))
          put_pixel(image, mask, cam.res, x, y, obj.color, intensity, id);
      }
  }
}

const std::array<Vec3, 8> kPalette{{{0.85, 0.20, 0.20},
                                    {0.20, 0.75, 0.25},
                                    {0.20, 0.35, 0.85},
                                    {0.90, 0.85, 0.20},
                                    {0.80, 0.25, 0.80},
                                    {0.25, 0.80, 0.80},
                                    {0.90, 0.55, 0.15},
                                    {0.50, 0.30, 0.75}}};

json spec_to_json(const SceneSpec& spec) {
  json objs = json::array();
  for (const auto& o : spec.objects) {
    objs.push_back({{"shape", o.shape == Shape::Sphere ? "sphere" : "cube"},
                    {"color", o.color},
                    {"position", o.position},
                    {"size", o.size}});
  }
  return {{"object_count", spec.object_count},
          {"objects", objs},
          {"background_color", spec.background_color},
          {"seed", spec.seed}};
}

SceneSpec spec_from_json(const json& j) {
  SceneSpec spec;
  spec.object_count = j.at("object_count").get<int>();
  spec.background_color = j.at("background_color").get<Vec3>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& jo : j.at("objects")) {
    SceneObject o;
    o.shape = jo.at("shape").get<std::string>() == "sphere" ? Shape::Sphere : Shape::Cube;
    o.color = jo.at("color").get<Vec3>();
    o.position = jo.at("position").get<Vec3>();
    o.size = jo.at("size").get<double>();
    spec.objects.push_back(o);
  }
  return spec;
}

json config_to_json(const DatasetConfig& c) {
  return {{"num_train", c.num_train},   {"num_valid", c.num_valid},
          {"num_test", c.num_test},     {"num_views", c.num_views},
          {"image_size", c.image_size}, {"min_objects", c.min_objects},
          {"max_objects", c.max_objects}, {"rho_min", c.rho_min},
          {"rho_max", c.rho_max},       {"theta_min", c.theta_min},
          {"theta_max", c.theta_max},   {"min_separation", c.min_separation},
          {"place_radius", c.place_radius}, {"min_size", c.min_size},
          {"max_size", c.max_size},     {"azimuth_jitter", c.azimuth_jitter},
          {"fov_degrees", c.fov_degrees}};
}

DatasetConfig config_from_json(const json& j) {
  check_keys(j, "dataset",
             {"num_train", "num_valid", "num_test", "num_views", "image_size", "min_objects",
              "max_objects", "rho_min", "rho_max", "theta_min", "theta_max", "min_separation",
              "place_radius", "min_size", "max_size", "azimuth_jitter", "fov_degrees"});
  DatasetConfig c;
  c.num_train = get_or(j, "num_train", c.num_train);
  c.num_valid = get_or(j, "num_valid", c.num_valid);
  c.num_test = get_or(j, "num_test", c.num_test);
  c.num_views = get_or(j, "num_views", c.num_views);
  c.image_size = get_or(j, "image_size", c.image_size);
  c.min_objects = get_or(j, "min_objects", c.min_objects);
  c.max_objects = get_or(j, "max_objects", c.max_objects);
  c.rho_min = get_or(j, "rho_min", c.rho_min);
  c.rho_max = get_or(j, "rho_max", c.rho_max);
  c.theta_min = get_or(j, "theta_min", c.theta_min);
  c.theta_max = get_or(j, "theta_max", c.theta_max);
  c.min_separation = get_or(j, "min_separation", c.min_separation);
  c.place_radius = get_or(j, "place_radius", c.place_radius);
  c.min_size = get_or(j, "min_size", c.min_size);
  c.max_size = get_or(j, "max_size", c.max_size);
  c.azimuth_jitter = get_or(j, "azimuth_jitter", c.azimuth_jitter);
  c.fov_degrees = get_or(j, "fov_degrees", c.fov_degrees);
  if (c.image_size < 16) throw ConfigError("dataset.image_size: must be >= 16");
  if (c.min_objects < 0 || c.max_objects < c.min_objects)
    throw ConfigError("dataset object range invalid");
  if (c.num_views < 1) throw ConfigError("dataset.num_views: must be >= 1");
  return c;
}

}  // namespace

std::array<double, 3> camera_from_spherical(double rho, double theta, double phi) {
  if (!std::isfinite(rho) || !std::isfinite(theta) || !std::isfinite(phi) || rho <= 0)
    throw std::invalid_argument("camera_from_spherical: invalid inputs");
  return {rho * std::sin(theta) * std::cos(phi), rho * std::sin(theta) * std::sin(phi),
          rho * std::cos(theta)};
}

CameraPose make_pose(double rho, double theta, double phi) {
  CameraPose p;
  p.rho = rho;
  p.theta = theta;
  p.phi = phi;
  p.position = camera_from_spherical(rho, theta, phi);
  return p;
}

SceneSpec sample_scene(const DatasetConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  SceneSpec spec;
  spec.seed = seed;
  const int range = config.max_objects - config.min_objects + 1;
  spec.object_count = config.min_objects + static_cast<int>(rng.uniform_int(range));

  std::vector<int> palette_order(kPalette.size());
  for (std::size_t i = 0; i < kPalette.size(); ++i) palette_order[i] = static_cast<int>(i);
  // Colors drawn without replacement.
  for (std::size_t i = 0; i < palette_order.size(); ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(
        palette_order.size() - i))) + i;
    std::swap(palette_order[i], palette_order[j]);
  }
  if (spec.object_count > static_cast<int>(kPalette.size()))
    throw std::runtime_error("sample_scene: more objects than palette colors");

  for (int k = 0; k < spec.object_count; ++k) {
    SceneObject obj;
    obj.shape = rng.uniform_int(2) == 0 ? Shape::Sphere : Shape::Cube;
    obj.color = kPalette[static_cast<std::size_t>(palette_order[static_cast<std::size_t>(k)])];
    obj.size = rng.uniform(config.min_size, config.max_size);
    spec.objects.push_back(obj);
  }

  // A bad early placement can block the rest, so retry whole layouts.
  for (int round = 0; round < 50; ++round) {
    bool all_placed = true;
    for (int k = 0; k < spec.object_count && all_placed; ++k) {
      auto& obj = spec.objects[static_cast<std::size_t>(k)];
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        const double ang = rng.uniform(0.0, 2.0 * kPi);
        const double rad = config.place_radius * std::sqrt(rng.uniform());
        const double x = rad * std::cos(ang), y = rad * std::sin(ang);
        placed = true;
        for (int j = 0; j < k; ++j) {
          const double dx = x - spec.objects[static_cast<std::size_t>(j)].position[0];
          const double dy = y - spec.objects[static_cast<std::size_t>(j)].position[1];
          if (std::sqrt(dx * dx + dy * dy) < config.min_separation) {
            placed = false;
            break;
          }
        }
        if (placed) obj.position = {x, y, obj.size};
      }
      all_placed = placed;
    }
    if (all_placed) return spec;
  }
  throw std::runtime_error("sample_scene: could not place " + std::to_string(spec.object_count) +
                           " objects without overlap (seed " + std::to_string(seed) + ")");
}

std::vector<CameraPose> sample_poses(const DatasetConfig& config, Rng& rng) {
  std::vector<CameraPose> poses;
  const int V = config.num_views;
  const double slot_half = kPi / V;
  for (int v = 0; v < V; ++v) {
    const double rho = rng.uniform(config.rho_min, config.rho_max);
    const double theta = rng.uniform(config.theta_min, config.theta_max);
    double phi = 2.0 * kPi * v / V +
                 config.azimuth_jitter * rng.uniform(-slot_half, slot_half);
    phi = std::fmod(phi + 2.0 * kPi, 2.0 * kPi);
    poses.push_back(make_pose(rho, theta, phi));
  }
  return poses;
}

void render_view(const SceneSpec& spec, const CameraPose& pose, int resolution,
                 double fov_degrees, Tensor& image, std::vector<std::uint8_t>& mask) {
  if (resolution < 16) throw std::invalid_argument("render_view: resolution must be >= 16");
  image = Tensor({resolution, resolution, 3});
  mask.assign(static_cast<std::size_t>(resolution) * resolution, 0);
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      const std::int64_t base = (static_cast<std::int64_t>(y) * resolution + x) * 3;
      for (int c = 0; c < 3; ++c) image[base + c] = spec.background_color[static_cast<std::size_t>(c)];
    }
  const Camera cam = make_camera(pose, resolution, fov_degrees);

  // Painter's algorithm over whole objects, far to near.
  std::vector<int> order(spec.objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::vector<double> depth(spec.objects.size());
  for (std::size_t i = 0; i < spec.objects.size(); ++i)
    depth[i] = dot3(sub3(spec.objects[i].position, cam.pos), cam.forward);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (depth[static_cast<std::size_t>(a)] != depth[static_cast<std::size_t>(b)])
      return depth[static_cast<std::size_t>(a)] > depth[static_cast<std::size_t>(b)];
    return a < b;
  });

  for (int idx : order) {
    const auto& obj = spec.objects[static_cast<std::size_t>(idx)];
    if (obj.shape == Shape::Sphere)
      draw_sphere(obj, idx + 1, cam, image, mask);
    else
      draw_cube(obj, idx + 1, cam, image, mask);
  }

  // Quantize to the 8-bit grid the on-disk format uses.
  for (std::int64_t i = 0; i < image.numel(); ++i)
    image[i] = std::round(image[i] * 255.0) / 255.0;
}

MultiViewScene make_scene(const DatasetConfig& config, std::uint64_t scene_seed,
                          const std::string& id) {
  MultiViewScene scene;
  scene.id = id;
  scene.height = scene.width = config.image_size;
  scene.spec = sample_scene(config, mix_seed({scene_seed, stream_tag("spec")}));
  Rng pose_rng(mix_seed({scene_seed, stream_tag("poses")}));
  scene.poses = sample_poses(config, pose_rng);
  for (int v = 0; v < config.num_views; ++v) {
    Tensor img;
    std::vector<std::uint8_t> mask;
    render_view(scene.spec, scene.poses[static_cast<std::size_t>(v)], config.image_size,
                config.fov_degrees, img, mask);
    scene.images.push_back(std::move(img));
    scene.masks.push_back(std::move(mask));
    scene.annotations.push_back(v + 1);
  }
  return scene;
}

namespace {

namespace fs = std::filesystem;

void write_scene(const fs::path& dir, const MultiViewScene& scene) {
  fs::create_directories(dir);
  for (int v = 0; v < scene.num_views(); ++v) {
    write_png_rgb(dir / ("view_" + std::to_string(v + 1) + ".png"),
                  scene.images[static_cast<std::size_t>(v)]);
    write_png_gray(dir / ("mask_" + std::to_string(v + 1) + ".png"),
                   scene.masks[static_cast<std::size_t>(v)], scene.height, scene.width);
  }
  json poses = json::array();
  for (const auto& p : scene.poses)
    poses.push_back({{"rho", p.rho}, {"theta", p.theta}, {"phi", p.phi}});
  json meta{{"seed", scene.spec.seed},
            {"spec", spec_to_json(scene.spec)},
            {"poses", poses},
            {"annotations", scene.annotations}};
  atomic_write_file(dir / "meta.json", meta.dump(2));
}

}  // namespace

const std::vector<std::string>& DatasetIndex::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split: " + name);
}

DatasetIndex generate_dataset(const DatasetConfig& config, const fs::path& out_dir,
                              std::uint64_t seed, ThreadPool& pool) {
  fs::create_directories(out_dir);
  struct SplitPlan {
    const char* name;
    int count;
  };
  const SplitPlan plans[] = {{"train", config.num_train},
                             {"valid", config.num_valid},
                             {"test", config.num_test}};

  json splits;
  // Channel statistics accumulate over the train split in index order.
  double sum[3] = {0, 0, 0}, sumsq[3] = {0, 0, 0};
  std::int64_t count = 0;
  Tensor mean_image({config.image_size, config.image_size, 3});

  for (const auto& plan : plans) {
    std::vector<std::string> dirs(static_cast<std::size_t>(plan.count));
    std::vector<MultiViewScene> scenes(static_cast<std::size_t>(plan.count));
    pool.parallel_for(plan.count, [&](std::int64_t i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s_%05d", plan.name, static_cast<int>(i));
      const std::uint64_t scene_seed = mix_seed({seed, stream_tag(plan.name),
                                                 static_cast<std::uint64_t>(i)});
      scenes[static_cast<std::size_t>(i)] = make_scene(config, scene_seed, buf);
      write_scene(out_dir / buf, scenes[static_cast<std::size_t>(i)]);
      dirs[static_cast<std::size_t>(i)] = buf;
    });
    splits[plan.name] = dirs;
    if (std::string(plan.name) == "train") {
      for (const auto& scene : scenes)
        for (const auto& img : scene.images) {
          for (std::int64_t p = 0; p < img.numel(); p += 3)
            for (int c = 0; c < 3; ++c) {
              sum[c] += img[p + c];
              sumsq[c] += img[p + c] * img[p + c];
            }
          for (std::int64_t p = 0; p < img.numel(); ++p) mean_image[p] += img[p];
          count += img.numel() / 3;
        }
    }
  }

  DatasetStats stats;
  for (int c = 0; c < 3; ++c) {
    stats.channel_mean[static_cast<std::size_t>(c)] = sum[c] / static_cast<double>(count);
    const double var = sumsq[c] / static_cast<double>(count) -
                       stats.channel_mean[static_cast<std::size_t>(c)] *
                           stats.channel_mean[static_cast<std::size_t>(c)];
    stats.channel_std[static_cast<std::size_t>(c)] = std::sqrt(std::max(var, 1e-8));
  }
  const std::int64_t total_views = static_cast<std::int64_t>(config.num_train) * config.num_views;
  for (std::int64_t p = 0; p < mean_image.numel(); ++p)
    mean_image[p] /= static_cast<double>(total_views);
  atomic_write_file(out_dir / "mean_image.bin", mean_image.data(),
                    static_cast<std::size_t>(mean_image.numel()) * sizeof(double));

  json manifest{{"format_version", 1},
                {"config", config_to_json(config)},
                {"seed", seed},
                {"splits", splits},
                {"stats", {{"channel_mean", stats.channel_mean},
                           {"channel_std", stats.channel_std}}}};
  atomic_write_file(out_dir / "manifest.json", manifest.dump(2));
  return load_dataset(out_dir);
}

DatasetIndex load_dataset(const fs::path& root) {
  const auto text = read_text_file(root / "manifest.json");
  json j = json::parse(text);
  if (j.at("format_version").get<int>() != 1)
    throw std::runtime_error("unsupported dataset format_version");
  DatasetIndex idx;
  idx.root = root;
  idx.config = config_from_json(j.at("config"));
  idx.train = j.at("splits").at("train").get<std::vector<std::string>>();
  idx.valid = j.at("splits").at("valid").get<std::vector<std::string>>();
  idx.test = j.at("splits").at("test").get<std::vector<std::string>>();
  idx.stats.channel_mean = j.at("stats").at("channel_mean").get<Vec3>();
  idx.stats.channel_std = j.at("stats").at("channel_std").get<Vec3>();
  return idx;
}

MultiViewScene load_scene(const fs::path& scene_dir) {
  MultiViewScene scene;
  scene.id = scene_dir.filename().string();
  json meta = json::parse(read_text_file(scene_dir / "meta.json"));
  scene.spec = spec_from_json(meta.at("spec"));
  scene.annotations = meta.at("annotations").get<std::vector<double>>();
  for (const auto& jp : meta.at("poses"))
    scene.poses.push_back(make_pose(jp.at("rho").get<double>(), jp.at("theta").get<double>(),
                                    jp.at("phi").get<double>()));
  const int V = static_cast<int>(scene.annotations.size());
  for (int v = 0; v < V; ++v) {
    scene.images.push_back(read_png_rgb(scene_dir / ("view_" + std::to_string(v + 1) + ".png")));
    int h = 0, w = 0;
    scene.masks.push_back(
        read_png_gray(scene_dir / ("mask_" + std::to_string(v + 1) + ".png"), h, w));
    scene.height = h;
    scene.width = w;
  }
  return scene;
}

Tensor load_mean_image(const DatasetIndex& index) {
  const auto bytes = read_binary_file(index.root / "mean_image.bin");
  const int hw = index.config.image_size;
  Tensor t({hw, hw, 3});
  if (bytes.size() != static_cast<std::size_t>(t.numel()) * sizeof(double))
    throw std::runtime_error("mean_image.bin size mismatch");
  std::memcpy(t.data(), bytes.data(), bytes.size());
  return t;
}

std::string dataset_config_to_json(const DatasetConfig& config) {
  return config_to_json(config).dump(2);
}

DatasetConfig dataset_config_from_json(const std::string& json_text) {
  return config_from_json(json::parse(json_text));
}

}  // namespace mvoc
