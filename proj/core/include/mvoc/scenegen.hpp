#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvoc/rng.hpp"
#include "mvoc/tensor.hpp"
#include "mvoc/threadpool.hpp"

namespace mvoc {

struct CameraPose {
  double rho = 0, theta = 0, phi = 0;
  std::array<double, 3> position{};  // derived
};

// position = (rho sin(theta) cos(phi), rho sin(theta) sin(phi), rho cos(theta)),
// theta measured from the +z axis.
std::array<double, 3> camera_from_spherical(double rho, double theta, double phi);
CameraPose make_pose(double rho, double theta, double phi);

enum class Shape { Sphere, Cube };

struct SceneObject {
  Shape shape = Shape::Sphere;
  std::array<double, 3> color{};
  std::array<double, 3> position{};  // center; rests on z=0, so z = size
  double size = 0.7;                 // sphere radius / cube half-extent
};

struct SceneSpec {
  int object_count = 0;
  std::vector<SceneObject> objects;
  std::array<double, 3> background_color{0.82, 0.82, 0.85};
  std::uint64_t seed = 0;
};

struct DatasetConfig {
  int num_train = 200;
  int num_valid = 10;
  int num_test = 20;
  int num_views = 8;
  int image_size = 32;
  int min_objects = 3;
  int max_objects = 5;
  double rho_min = 10.5;
  double rho_max = 12.0;
  double theta_min = 0.15 * 3.14159265358979323846;
  double theta_max = 0.30 * 3.14159265358979323846;
  double min_separation = 2.0;
  double place_radius = 2.8;
  double min_size = 0.5;
  double max_size = 0.9;
  double azimuth_jitter = 1.0;  // fraction of the per-view slot half-width
  double fov_degrees = 40.0;
};

struct MultiViewScene {
  std::string id;
  int height = 0, width = 0;
  SceneSpec spec;
  std::vector<CameraPose> poses;        // V
  std::vector<double> annotations;      // c_v, 1..V
  std::vector<Tensor> images;           // V x [H,W,3], quantized to 8-bit steps
  std::vector<std::vector<std::uint8_t>> masks;  // V x H*W, 0 = background

  int num_views() const { return static_cast<int>(images.size()); }
};

SceneSpec sample_scene(const DatasetConfig& config, std::uint64_t seed);
std::vector<CameraPose> sample_poses(const DatasetConfig& config, Rng& rng);

// Perspective render toward the origin; painter's-algorithm occlusion.
// Output image values are quantized to k/255 so PNG round-trips are exact.
void render_view(const SceneSpec& spec, const CameraPose& pose, int resolution,
                 double fov_degrees, Tensor& image, std::vector<std::uint8_t>& mask);

MultiViewScene make_scene(const DatasetConfig& config, std::uint64_t scene_seed,
                          const std::string& id);

struct DatasetStats {
  std::array<double, 3> channel_mean{};
  std::array<double, 3> channel_std{};
};

struct DatasetIndex {
  std::filesystem::path root;
  DatasetConfig config;
  DatasetStats stats;
  std::vector<std::string> train, valid, test;

  const std::vector<std::string>& split(const std::string& name) const;
};

// Writes scenes + manifest.json; returns the loaded index. Byte-identical
// across runs and thread counts for a fixed (config, seed).
DatasetIndex generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir,
                              std::uint64_t seed, ThreadPool& pool);

DatasetIndex load_dataset(const std::filesystem::path& root);
MultiViewScene load_scene(const std::filesystem::path& scene_dir);

// Pixelwise mean over all training views, stored as raw doubles at gen time.
Tensor load_mean_image(const DatasetIndex& index);

std::string dataset_config_to_json(const DatasetConfig& config);
DatasetConfig dataset_config_from_json(const std::string& json_text);

}  // namespace mvoc
