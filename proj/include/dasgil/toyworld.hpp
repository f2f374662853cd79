#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "dasgil/dataman.hpp"
#include "dasgil/image.hpp"

namespace dasgil::toy {

// Classes produced by the renderer; ids at or above class_count - 1 are merged into the last class.
enum Class : std::uint8_t { Sky = 0, Road = 1, Building = 2, Vegetation = 3, Object = 4 };
inline constexpr int kNaturalClassCount = 5;

struct Appearance {
  std::string name;
  Eigen::Vector3d gain = Eigen::Vector3d::Ones();
  double brightness = 0.0;
  double hue_deg = 0.0;
  double contrast = 1.0;  // scales around mid-grey
  double noise_sigma = 0.0;
  int blur_radius = 0;    // box blur half-width in pixels
  double fog_density = 0.0;
  Eigen::Vector3d fog_color{0.72, 0.74, 0.78};
};

struct ToyWorldConfig {
  int image_height = 64;
  int image_width = 64;
  int sequences = 2;
  int frames_per_sequence = 16;
  std::vector<Appearance> environments = default_environments();
  Appearance real_domain_shift = default_real_shift();
  int class_count = kNaturalClassCount;
  std::uint64_t seed = 7;
  double frame_spacing_m = 2.0;
  std::vector<double> camera_angles_deg{0.0};
  double depth_scale = 0.001;
  double max_depth_m = 60.0;
  // Real captures deviate from the virtual camera path by up to these amounts (uniform, per frame).
  double real_position_jitter_m = 0.5;
  double real_yaw_jitter_deg = 5.0;

  static std::vector<Appearance> default_environments();
  static Appearance default_real_shift();
  void validate() const;
};

void to_json(nlohmann::json& j, const Appearance& a);
void from_json(const nlohmann::json& j, Appearance& a);
void to_json(nlohmann::json& j, const ToyWorldConfig& c);
void from_json(const nlohmann::json& j, ToyWorldConfig& c);

// Axis-aligned box in world coordinates (y up).
struct Box {
  Eigen::Vector3d lo;
  Eigen::Vector3d hi;
  Class cls = Building;
  Eigen::Vector3d color{0.5, 0.5, 0.5};
  double window_period = 0.0;  // 0 disables the window pattern
};

struct Scene {
  std::vector<Box> boxes;
  double road_center_x = 0.0;
  double road_half_width = 4.5;
  double sidewalk_half_width = 6.0;
};

// Pinhole camera; yaw rotates about +y and yaw 0 looks along +z.
struct Camera {
  Eigen::Vector3d position{0.0, 1.5, 0.0};
  double yaw_rad = 0.0;
  double focal_px = 32.0;

  Eigen::Quaterniond orientation() const;
  // World-space ray direction through pixel centre (x, y) whose forward component is exactly 1.
  Eigen::Vector3d ray(int x, int y, int width, int height) const;
};

struct Render {
  Image<float> color;  // linear RGB in [0, 1]
  DepthImage depth;    // forward distance in metres, 0 where nothing is hit within range
  LabelImage labels;
};

Render render(const Scene& scene, const Camera& camera, int height, int width, double max_depth);
RgbImage apply_appearance(const Render& r, const Appearance& a, Rng& rng);

Scene make_scene(const ToyWorldConfig& config, int sequence);
Camera make_camera(const ToyWorldConfig& config, int sequence, int frame, double angle_deg);

std::vector<std::array<std::uint8_t, 3>> class_palette(int class_count);
std::vector<std::string> class_names(int class_count);

// Renders every sequence x frame once per environment and angle (virtual, with ground truth) and once
// under the real-domain shift (real, no ground truth). Writes manifest.jsonl, classes.json and PNGs.
data::DatasetManifest generate_toy_dataset(const ToyWorldConfig& config, const std::filesystem::path& out_dir);

}  // namespace dasgil::toy
