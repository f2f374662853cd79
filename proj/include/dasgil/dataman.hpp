#pragma once

#include <Eigen/Geometry>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dasgil/image.hpp"
#include "dasgil/random.hpp"
#include "dasgil/tensor.hpp"

namespace dasgil::data {

enum class Domain { Virtual, Real };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();
};

struct SampleRecord {
  std::string id;
  Domain domain = Domain::Virtual;
  std::string sequence;
  int frame = 0;
  std::string environment;
  double camera_angle_deg = 0.0;
  std::filesystem::path image_path;
  std::optional<std::filesystem::path> depth_path;
  std::optional<std::filesystem::path> seg_path;
  double depth_scale = 0.001;
  Pose pose;
};

// Relative paths in records resolve against `root`. Class metadata lives in `classes.json` beside the manifest.
struct DatasetManifest {
  std::vector<SampleRecord> records;
  int class_count = 0;
  std::vector<std::string> class_names;
  std::filesystem::path root;

  std::optional<std::size_t> index_of(const std::string& id) const;
  std::filesystem::path resolve(const std::filesystem::path& p) const { return p.is_absolute() ? p : root / p; }
  std::vector<std::size_t> indices(Domain d) const;

 private:
  friend DatasetManifest load_manifest(const std::filesystem::path&);
  friend DatasetManifest make_manifest(std::vector<SampleRecord>, int, std::vector<std::string>, std::filesystem::path);
  std::unordered_map<std::string, std::size_t> by_id_;
};

// Validates records (unique ids, virtual ground truth, unit quaternions) and builds the id index.
DatasetManifest make_manifest(std::vector<SampleRecord> records, int class_count, std::vector<std::string> class_names,
                              std::filesystem::path root);
DatasetManifest load_manifest(const std::filesystem::path& manifest_path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& manifest_path);

std::string record_to_json_line(const SampleRecord& r);
SampleRecord record_from_json_line(const std::string& line);

struct TripletSpec {
  std::string anchor;
  std::string positive;
  std::string negative;
};

// Record indices of a triplet within its manifest.
struct TripletIndices {
  std::size_t anchor;
  std::size_t positive;
  std::size_t negative;
};

struct TripletRules {
  int max_frame_gap = 5;
  double max_angle_gap_deg = 30.0;
};

// Same place seen under a different environment or viewing angle.
bool is_positive(const SampleRecord& anchor, const SampleRecord& cand, const TripletRules& rules = {});
// Different place: another sequence, or frames further apart than the positive window.
bool is_negative(const SampleRecord& anchor, const SampleRecord& cand, const TripletRules& rules = {});

class TripletSampler {
 public:
  explicit TripletSampler(const DatasetManifest& manifest, TripletRules rules = {});

  // Virtual records that have at least one positive and one negative.
  const std::vector<std::size_t>& anchors() const { return anchors_; }
  const std::vector<std::size_t>& positives_of(std::size_t anchor) const;

  TripletIndices sample(Rng& rng) const;
  TripletIndices sample_for(std::size_t anchor, Rng& rng) const;
  TripletSpec to_spec(const TripletIndices& t) const;

 private:
  const DatasetManifest* manifest_;
  TripletRules rules_;
  std::vector<std::size_t> virtual_;
  std::vector<std::size_t> anchors_;
  std::unordered_map<std::size_t, std::vector<std::size_t>> positives_;
};

inline TripletSpec sample_triplet(const DatasetManifest& manifest, Rng& rng) {
  TripletSampler sampler(manifest);
  return sampler.to_spec(sampler.sample(rng));
}

// A decoded sample; depth is metres with 0 marking invalid pixels.
struct SampleStack {
  RgbImage rgb;
  std::optional<DepthImage> depth;
  std::optional<LabelImage> labels;

  int height() const { return rgb.height; }
  int width() const { return rgb.width; }
};

SampleStack load_sample(const DatasetManifest& manifest, const SampleRecord& record);

SampleStack flip_horizontal(const SampleStack& s);
// Mirrors both stacks together with probability 1/2.
void augment_pair(SampleStack& a, SampleStack& b, Rng& rng);
// Center crop when rng is null, uniform random window otherwise.
SampleStack crop_to_shape(const SampleStack& s, int h, int w, Rng* rng = nullptr);

// RGB bytes to an (1, 3, h, w) tensor scaled to [-0.5, 0.5].
Tensor<float> to_tensor(const RgbImage& img);
// Copies `src` (1, c, h, w) into sample `n` of `dst`.
void put_sample(Tensor<float>& dst, int n, const Tensor<float>& src);

// Decoded-sample cache keyed by record index.
class SampleCache {
 public:
  explicit SampleCache(const DatasetManifest& manifest) : manifest_(&manifest) {}
  const SampleStack& get(std::size_t index);

 private:
  const DatasetManifest* manifest_;
  std::unordered_map<std::size_t, SampleStack> cache_;
};

}  // namespace dasgil::data
