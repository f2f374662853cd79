#include "dasgil/toyworld.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <cstdio>
#include <limits>
#include <nlohmann/json.hpp>

namespace dasgil::toy {

using nlohmann::json;
using Eigen::Vector3d;

std::vector<Appearance> ToyWorldConfig::default_environments() {
  Appearance clone{.name = "clone"};
  Appearance fog{.name = "fog", .brightness = 0.02, .fog_density = 0.06};
  Appearance sunset{.name = "sunset", .gain = {1.25, 0.85, 0.6}, .brightness = 0.03};
  return {clone, fog, sunset};
}

Appearance ToyWorldConfig::default_real_shift() {
  return Appearance{.name = "real",
                    .gain = {0.85, 1.05, 1.2},
                    .brightness = -0.03,
                    .hue_deg = 90.0,
                    .contrast = 0.7,
                    .noise_sigma = 0.05,
                    .blur_radius = 1};
}

void ToyWorldConfig::validate() const {
  require(image_height >= 32 && image_width >= 32, ErrorCode::InvalidConfig, "toy images must be at least 32x32");
  require(sequences >= 1, ErrorCode::InvalidConfig, "need at least one sequence");
  require(frames_per_sequence >= 6, ErrorCode::InvalidConfig, "frames_per_sequence must be at least 6");
  require(!environments.empty(), ErrorCode::InvalidConfig, "need at least one environment");
  require(!camera_angles_deg.empty(), ErrorCode::InvalidConfig, "need at least one camera angle");
  require(class_count >= 2 && class_count <= 256, ErrorCode::InvalidConfig, "class_count must be in [2, 256]");
  require(frame_spacing_m > 0 && depth_scale > 0 && max_depth_m > 0, ErrorCode::InvalidConfig,
          "spacing, depth_scale and max_depth must be positive");
  require(real_position_jitter_m >= 0 && real_yaw_jitter_deg >= 0, ErrorCode::InvalidConfig,
          "real jitter must be non-negative");
  require(max_depth_m / depth_scale <= 65535.0, ErrorCode::InvalidConfig, "max_depth does not fit 16-bit storage");
  for (std::size_t i = 0; i < environments.size(); ++i) {
    require(!environments[i].name.empty() && environments[i].name != real_domain_shift.name, ErrorCode::InvalidConfig,
            "environment names must be non-empty and differ from the real domain name");
    for (std::size_t j = 0; j < i; ++j)
      require(environments[i].name != environments[j].name, ErrorCode::InvalidConfig, "duplicate environment name");
  }
}

namespace {

json vec_json(const Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }
Vector3d vec_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

void to_json(json& j, const Appearance& a) {
  j = {{"name", a.name},           {"gain", vec_json(a.gain)},         {"brightness", a.brightness},
       {"hue_deg", a.hue_deg},     {"noise_sigma", a.noise_sigma},     {"fog_density", a.fog_density},
       {"fog_color", vec_json(a.fog_color)}, {"contrast", a.contrast},     {"blur_radius", a.blur_radius}};
}

void from_json(const json& j, Appearance& a) {
  a = Appearance{};
  a.name = j.at("name").get<std::string>();
  if (j.contains("gain")) a.gain = vec_from(j.at("gain"));
  a.brightness = j.value("brightness", 0.0);
  a.hue_deg = j.value("hue_deg", 0.0);
  a.noise_sigma = j.value("noise_sigma", 0.0);
  a.contrast = j.value("contrast", 1.0);
  a.blur_radius = j.value("blur_radius", 0);
  a.fog_density = j.value("fog_density", 0.0);
  if (j.contains("fog_color")) a.fog_color = vec_from(j.at("fog_color"));
}

void to_json(json& j, const ToyWorldConfig& c) {
  j = {{"image_height", c.image_height},
       {"image_width", c.image_width},
       {"sequences", c.sequences},
       {"frames_per_sequence", c.frames_per_sequence},
       {"environments", c.environments},
       {"real_domain_shift", c.real_domain_shift},
       {"class_count", c.class_count},
       {"seed", c.seed},
       {"frame_spacing_m", c.frame_spacing_m},
       {"camera_angles_deg", c.camera_angles_deg},
       {"depth_scale", c.depth_scale},
       {"max_depth_m", c.max_depth_m},
       {"real_position_jitter_m", c.real_position_jitter_m},
       {"real_yaw_jitter_deg", c.real_yaw_jitter_deg}};
}

void from_json(const json& j, ToyWorldConfig& c) {
  static const std::vector<std::string> known{"image_height", "image_width",     "sequences",         "frames_per_sequence",
                                              "environments", "real_domain_shift", "class_count",     "seed",
                                              "frame_spacing_m", "camera_angles_deg", "depth_scale",   "max_depth_m",
                                              "real_position_jitter_m", "real_yaw_jitter_deg"};
  for (const auto& [k, v] : j.items())
    require(std::find(known.begin(), known.end(), k) != known.end(), ErrorCode::InvalidConfig, "unknown toy key '" + k + "'");
  c = ToyWorldConfig{};
  c.image_height = j.value("image_height", c.image_height);
  c.image_width = j.value("image_width", c.image_width);
  c.sequences = j.value("sequences", c.sequences);
  c.frames_per_sequence = j.value("frames_per_sequence", c.frames_per_sequence);
  if (j.contains("environments")) c.environments = j.at("environments").get<std::vector<Appearance>>();
  if (j.contains("real_domain_shift")) c.real_domain_shift = j.at("real_domain_shift").get<Appearance>();
  c.class_count = j.value("class_count", c.class_count);
  c.seed = j.value("seed", c.seed);
  c.frame_spacing_m = j.value("frame_spacing_m", c.frame_spacing_m);
  if (j.contains("camera_angles_deg")) c.camera_angles_deg = j.at("camera_angles_deg").get<std::vector<double>>();
  c.depth_scale = j.value("depth_scale", c.depth_scale);
  c.max_depth_m = j.value("max_depth_m", c.max_depth_m);
  c.real_position_jitter_m = j.value("real_position_jitter_m", c.real_position_jitter_m);
  c.real_yaw_jitter_deg = j.value("real_yaw_jitter_deg", c.real_yaw_jitter_deg);
}

Eigen::Quaterniond Camera::orientation() const { return Eigen::Quaterniond(Eigen::AngleAxisd(yaw_rad, Vector3d::UnitY())); }

Vector3d Camera::ray(int x, int y, int width, int height) const {
  const Vector3d d((x + 0.5 - width / 2.0) / focal_px, (height / 2.0 - (y + 0.5)) / focal_px, 1.0);
  if (yaw_rad == 0.0) return d;
  const double c = std::cos(yaw_rad), s = std::sin(yaw_rad);
  return {c * d.x() + s * d.z(), d.y(), -s * d.x() + c * d.z()};
}

namespace {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  int axis = 1;
  const Box* box = nullptr;
};

// Slab test for a ray starting outside the box.
bool intersect(const Box& b, const Vector3d& o, const Vector3d& d, double& t_hit, int& axis) {
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  int near_axis = 0;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < b.lo[a] || o[a] > b.hi[a]) return false;
      continue;
    }
    double ta = (b.lo[a] - o[a]) / d[a], tb = (b.hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      near_axis = a;
    }
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t0 <= 1e-9) return false;
  t_hit = t0;
  axis = near_axis;
  return true;
}

double fract(double v) { return v - std::floor(v); }

double hash01(int a, int b, int c) {
  std::uint32_t h = std::uint32_t(a) * 73856093u ^ std::uint32_t(b) * 19349663u ^ std::uint32_t(c) * 83492791u;
  h ^= h >> 13;
  h *= 0x5bd1e995u;
  h ^= h >> 15;
  return (h & 0xffff) / 65535.0;
}

const Vector3d kLight = Vector3d(0.45, 0.8, -0.4).normalized();

Vector3d shade_box(const Box& b, const Vector3d& p, int axis, const Vector3d& d) {
  Vector3d n = Vector3d::Zero();
  n[axis] = d[axis] > 0 ? -1.0 : 1.0;
  const double lambert = 0.55 + 0.45 * std::max(0.0, n.dot(kLight));
  Vector3d c = b.color;
  const double u = axis == 0 ? p.z() : p.x();
  const double v = axis == 1 ? p.z() : p.y();
  if (b.window_period > 0 && axis != 1) {
    if (fract(u / b.window_period) > 0.3 && fract(u / b.window_period) < 0.75 && fract(v / 3.0) > 0.35 &&
        fract(v / 3.0) < 0.8)
      c = 0.3 * c + Vector3d(0.08, 0.1, 0.14);
  } else if (b.cls == Vegetation) {
    c *= 0.8 + 0.35 * hash01(int(std::floor(u * 2)), int(std::floor(v * 2)), axis);
  }
  return lambert * c;
}

Vector3d shade_ground(const Scene& s, const Vector3d& p) {
  const double dx = std::abs(p.x() - s.road_center_x);
  if (dx < 0.12 && fract(p.z() / 6.0) < 0.5) return {0.85, 0.85, 0.8};
  if (dx < s.road_half_width) return Vector3d(0.32, 0.32, 0.34) * (0.92 + 0.1 * hash01(int(p.x() * 2), int(p.z() * 2), 9));
  if (dx < s.sidewalk_half_width) return {0.55, 0.53, 0.5};
  return Vector3d(0.22, 0.42, 0.17) * (0.85 + 0.3 * hash01(int(std::floor(p.x())), int(std::floor(p.z())), 3));
}

Vector3d sky_color(double elevation) {
  const double k = std::clamp(elevation * 2.0, 0.0, 1.0);
  return (1 - k) * Vector3d(0.8, 0.85, 0.92) + k * Vector3d(0.45, 0.62, 0.88);
}

}  // namespace

Render render(const Scene& scene, const Camera& camera, int height, int width, double max_depth) {
  Render r{Image<float>(height, width, 3), DepthImage(height, width, 1), LabelImage(height, width, 1)};
  const Vector3d& o = camera.position;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const Vector3d d = camera.ray(x, y, width, height);
      Hit hit;
      for (const auto& b : scene.boxes) {
        double t;
        int axis;
        if (intersect(b, o, d, t, axis) && t < hit.t) hit = {t, axis, &b};
      }
      const bool ground = d.y() < 0 && -o.y() / d.y() < hit.t;
      const double t = ground ? -o.y() / d.y() : hit.t;
      Vector3d color;
      Class cls;
      if (ground) {
        const Vector3d p = o + t * d;
        color = shade_ground(scene, p);
        cls = std::abs(p.x() - scene.road_center_x) < scene.sidewalk_half_width ? Road : Vegetation;
      } else if (hit.box) {
        color = shade_box(*hit.box, o + t * d, hit.axis, d);
        cls = hit.box->cls;
      } else {
        color = sky_color(d.y() / d.norm());
        cls = Sky;
      }
      const bool in_range = (ground || hit.box) && t <= max_depth;
      if ((ground || hit.box) && !in_range) color = 0.5 * color + 0.5 * sky_color(0.0);
      for (int c = 0; c < 3; ++c) r.color.at(y, x, c) = float(color[c]);
      r.depth.at(y, x) = in_range ? float(t) : 0.0f;
      r.labels.at(y, x) = cls;
    }
  return r;
}

RgbImage apply_appearance(const Render& r, const Appearance& a, Rng& rng) {
  const double th = a.hue_deg * M_PI / 180.0;
  const Eigen::Matrix3d hue = Eigen::AngleAxisd(th, Vector3d::Ones().normalized()).toRotationMatrix();
  const int H = r.color.height, W = r.color.width;
  Image<float> color = r.color;
  if (a.blur_radius > 0) {
    const int k = a.blur_radius;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c) {
          double acc = 0;
          int n = 0;
          for (int yy = std::max(0, y - k); yy <= std::min(H - 1, y + k); ++yy)
            for (int xx = std::max(0, x - k); xx <= std::min(W - 1, x + k); ++xx, ++n) acc += r.color.at(yy, xx, c);
          color.at(y, x, c) = float(acc / n);
        }
  }
  RgbImage out(H, W, 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      Vector3d c(color.at(y, x, 0), color.at(y, x, 1), color.at(y, x, 2));
      if (a.fog_density > 0) {
        const double depth = r.depth.at(y, x);
        const double f = depth > 0 ? 1.0 - std::exp(-a.fog_density * depth) : 0.9;
        c = (1 - f) * c + f * a.fog_color;
      }
      if (th != 0.0) c = hue * c;
      c = c.cwiseProduct(a.gain).array() + a.brightness;
      if (a.contrast != 1.0) c = (c.array() - 0.5) * a.contrast + 0.5;
      for (int k = 0; k < 3; ++k) {
        double v = c[k] + (a.noise_sigma > 0 ? a.noise_sigma * normal(rng) : 0.0);
        out.at(y, x, k) = std::uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  return out;
}

namespace {

Vector3d random_color(Rng& rng, double sat_lo, double sat_hi, double val_lo, double val_hi) {
  const double h = uniform01(rng) * 6.0;
  const double s = sat_lo + (sat_hi - sat_lo) * uniform01(rng);
  const double v = val_lo + (val_hi - val_lo) * uniform01(rng);
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (int(h) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

double range(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

}  // namespace

Scene make_scene(const ToyWorldConfig& config, int sequence) {
  Rng rng = derived_rng(config.seed, 0x5ce4e000ull + std::uint64_t(sequence));
  Scene s;
  s.road_center_x = 500.0 * sequence;
  const double cx = s.road_center_x;
  const double z_begin = -20.0, z_end = config.frames_per_sequence * config.frame_spacing_m + config.max_depth_m + 20.0;
  for (int side : {-1, 1}) {
    for (double z = z_begin; z < z_end;) {
      const double len = range(rng, 5.0, 14.0);
      const double setback = range(rng, 7.0, 10.0), depth = range(rng, 6.0, 12.0);
      const double x0 = cx + side * setback, x1 = cx + side * (setback + depth);
      Box b{Vector3d(std::min(x0, x1), 0.0, z), Vector3d(std::max(x0, x1), range(rng, 4.0, 18.0), z + len), Building,
            random_color(rng, 0.15, 0.6, 0.4, 0.9), range(rng, 1.5, 3.0)};
      s.boxes.push_back(b);
      const double gap = range(rng, 0.5, 4.0);
      if (gap > 2.5) {
        const double tz = z + len + gap / 2, tx = cx + side * range(rng, 6.5, 8.0), r = range(rng, 0.7, 1.2);
        const Vector3d green = random_color(rng, 0.5, 0.8, 0.3, 0.6);
        s.boxes.push_back({Vector3d(tx - 0.15, 0.0, tz - 0.15), Vector3d(tx + 0.15, 1.5, tz + 0.15), Vegetation,
                           Vector3d(0.35, 0.25, 0.15)});
        s.boxes.push_back({Vector3d(tx - r, 1.5, tz - r), Vector3d(tx + r, 1.5 + range(rng, 1.5, 3.0), tz + r), Vegetation,
                           Vector3d(0.25 * green.x(), green.y(), 0.4 * green.z())});
      }
      z += len + gap;
    }
    for (double z = z_begin + range(rng, 0.0, 15.0); z < z_end; z += range(rng, 12.0, 30.0)) {
      const double px = cx + side * 5.0;
      s.boxes.push_back(
          {Vector3d(px - 0.1, 0.0, z - 0.1), Vector3d(px + 0.1, range(rng, 4.0, 6.0), z + 0.1), Object, Vector3d(0.6, 0.6, 0.55)});
    }
    for (double z = z_begin + range(rng, 0.0, 10.0); z < z_end; z += range(rng, 6.0, 20.0)) {
      if (uniform01(rng) < 0.4) continue;
      const double px = cx + side * 3.2;
      s.boxes.push_back({Vector3d(px - 0.9, 0.0, z), Vector3d(px + 0.9, range(rng, 1.3, 1.7), z + 4.2), Object,
                         random_color(rng, 0.5, 0.9, 0.35, 0.9)});
    }
  }
  return s;
}

Camera make_camera(const ToyWorldConfig& config, int sequence, int frame, double angle_deg) {
  Camera c;
  c.position = Vector3d(500.0 * sequence, 1.5, frame * config.frame_spacing_m);
  c.yaw_rad = angle_deg * M_PI / 180.0;
  c.focal_px = config.image_width / 2.0;
  return c;
}

std::vector<std::array<std::uint8_t, 3>> class_palette(int class_count) {
  static const std::array<std::uint8_t, 3> base[] = {
      {70, 130, 180}, {128, 64, 128}, {70, 70, 70}, {107, 142, 35}, {220, 20, 60}};
  std::vector<std::array<std::uint8_t, 3>> p;
  for (int k = 0; k < class_count; ++k) {
    if (k < kNaturalClassCount) {
      p.push_back(base[k]);
    } else {
      const auto v = std::uint8_t(37 * k);
      p.push_back({v, std::uint8_t(255 - v), std::uint8_t(91 * k)});
    }
  }
  return p;
}

std::vector<std::string> class_names(int class_count) {
  static const char* base[] = {"sky", "road", "building", "vegetation", "object"};
  std::vector<std::string> names;
  for (int k = 0; k < class_count; ++k) names.push_back(k < kNaturalClassCount ? base[k] : "class" + std::to_string(k));
  if (class_count < kNaturalClassCount) names.back() = "other";
  return names;
}

data::DatasetManifest generate_toy_dataset(const ToyWorldConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"images", "depth", "seg"}) {
    fs::create_directories(out_dir / sub, ec);
    require(!ec, ErrorCode::IoError, "cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }
  const auto palette = class_palette(config.class_count);
  const auto last_class = std::uint8_t(config.class_count - 1);
  const bool tag_angle = config.camera_angles_deg.size() > 1;
  std::vector<data::SampleRecord> records;
  std::uint64_t serial = 0;

  auto pose_of = [](const Camera& cam) {
    data::Pose p;
    p.position = cam.position;
    p.orientation = cam.orientation();
    return p;
  };

  for (int s = 0; s < config.sequences; ++s) {
    char seq[16];
    std::snprintf(seq, sizeof seq, "seq%02d", s);
    const Scene scene = make_scene(config, s);
    for (int f = 0; f < config.frames_per_sequence; ++f) {
      for (double angle : config.camera_angles_deg) {
        const Camera cam = make_camera(config, s, f, angle);
        Render r = render(scene, cam, config.image_height, config.image_width, config.max_depth_m);
        for (auto& v : r.labels.data) v = std::min(v, last_class);
        Image<std::uint16_t> depth16(r.depth.height, r.depth.width, 1);
        for (std::size_t i = 0; i < r.depth.data.size(); ++i)
          depth16.data[i] = std::uint16_t(std::lround(r.depth.data[i] / config.depth_scale));

        char angle_tag[24] = "";
        if (tag_angle) std::snprintf(angle_tag, sizeof angle_tag, "_a%+d", int(std::lround(angle)));
        for (const auto& env : config.environments) {
          char id[128];
          std::snprintf(id, sizeof id, "%s_f%03d_%s%s", seq, f, env.name.c_str(), angle_tag);
          Rng noise = derived_rng(config.seed, ++serial);
          data::SampleRecord rec;
          rec.id = id;
          rec.domain = data::Domain::Virtual;
          rec.sequence = seq;
          rec.frame = f;
          rec.environment = env.name;
          rec.camera_angle_deg = angle;
          rec.image_path = fs::path("images") / (rec.id + ".png");
          rec.depth_path = fs::path("depth") / (rec.id + ".png");
          rec.seg_path = fs::path("seg") / (rec.id + ".png");
          rec.depth_scale = config.depth_scale;
          rec.pose = pose_of(cam);
          png::write_rgb(out_dir / rec.image_path, apply_appearance(r, env, noise));
          png::write_gray16(out_dir / *rec.depth_path, depth16);
          png::write_indexed(out_dir / *rec.seg_path, r.labels, palette);
          records.push_back(std::move(rec));
        }
        if (angle == config.camera_angles_deg.front()) {
          char id[128];
          std::snprintf(id, sizeof id, "%s_f%03d_%s", seq, f, config.real_domain_shift.name.c_str());
          Rng noise = derived_rng(config.seed, ++serial);
          Camera real_cam = cam;
          Render real_render;
          if (config.real_position_jitter_m > 0 || config.real_yaw_jitter_deg > 0) {
            Rng jitter = derived_rng(config.seed, 0x717e0000 + std::uint64_t(s) * 4096 + std::uint64_t(f));
            auto sym = [&] { return 2.0 * uniform01(jitter) - 1.0; };
            real_cam.position.x() += config.real_position_jitter_m * sym();
            real_cam.position.z() += config.real_position_jitter_m * sym();
            real_cam.yaw_rad += config.real_yaw_jitter_deg * M_PI / 180.0 * sym();
            real_render = render(scene, real_cam, config.image_height, config.image_width, config.max_depth_m);
          }
          const Render& rr = real_render.color.data.empty() ? r : real_render;
          data::SampleRecord rec;
          rec.id = id;
          rec.domain = data::Domain::Real;
          rec.sequence = seq;
          rec.frame = f;
          rec.environment = config.real_domain_shift.name;
          rec.camera_angle_deg = angle;
          rec.image_path = fs::path("images") / (rec.id + ".png");
          rec.depth_scale = config.depth_scale;
          rec.pose = pose_of(real_cam);
          png::write_rgb(out_dir / rec.image_path, apply_appearance(rr, config.real_domain_shift, noise));
          records.push_back(std::move(rec));
        }
      }
    }
  }
  auto manifest = data::make_manifest(std::move(records), config.class_count, class_names(config.class_count), out_dir);
  data::save_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

}  // namespace dasgil::toy
