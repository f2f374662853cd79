#include "dasgil/dataman.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

namespace dasgil::data {

using nlohmann::json;

std::string to_string(Domain d) { return d == Domain::Virtual ? "virtual" : "real"; }

Domain domain_from_string(const std::string& s) {
  if (s == "virtual") return Domain::Virtual;
  if (s == "real") return Domain::Real;
  fail(ErrorCode::MalformedRecord, "unknown domain '" + s + "'");
}

std::optional<std::size_t> DatasetManifest::index_of(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::size_t> DatasetManifest::indices(Domain d) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].domain == d) out.push_back(i);
  return out;
}

DatasetManifest make_manifest(std::vector<SampleRecord> records, int class_count, std::vector<std::string> class_names,
                              std::filesystem::path root) {
  require(class_count >= 2, ErrorCode::InvalidConfig, "class_count must be at least 2");
  require(class_names.empty() || int(class_names.size()) == class_count, ErrorCode::InvalidConfig,
          "class_names must list class_count names");
  DatasetManifest m;
  m.class_count = class_count;
  m.class_names = std::move(class_names);
  m.root = std::move(root);
  m.records = std::move(records);
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    require(!r.id.empty(), ErrorCode::MalformedRecord, "record " + std::to_string(i) + " has an empty id");
    require(m.by_id_.emplace(r.id, i).second, ErrorCode::DuplicateId, "duplicate id '" + r.id + "'");
    require(r.frame >= 0, ErrorCode::MalformedRecord, r.id + ": negative frame");
    require(r.depth_scale > 0, ErrorCode::MalformedRecord, r.id + ": depth_scale must be positive");
    require(std::abs(r.pose.orientation.norm() - 1.0) < 1e-6, ErrorCode::MalformedRecord,
            r.id + ": orientation is not a unit quaternion");
    if (r.domain == Domain::Virtual)
      require(r.depth_path && r.seg_path, ErrorCode::VirtualMissingGroundTruth, r.id + ": virtual record needs depth and seg");
  }
  return m;
}

std::string record_to_json_line(const SampleRecord& r) {
  const auto& q = r.pose.orientation;
  json j = {{"id", r.id},
            {"domain", to_string(r.domain)},
            {"sequence", r.sequence},
            {"frame", r.frame},
            {"environment", r.environment},
            {"camera_angle_deg", r.camera_angle_deg},
            {"image_path", r.image_path.generic_string()},
            {"depth_path", r.depth_path ? json(r.depth_path->generic_string()) : json(nullptr)},
            {"seg_path", r.seg_path ? json(r.seg_path->generic_string()) : json(nullptr)},
            {"depth_scale", r.depth_scale},
            {"pose",
             {{"x", r.pose.position.x()},
              {"y", r.pose.position.y()},
              {"z", r.pose.position.z()},
              {"qw", q.w()},
              {"qx", q.x()},
              {"qy", q.y()},
              {"qz", q.z()}}}};
  return j.dump();
}

SampleRecord record_from_json_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    SampleRecord r;
    r.id = j.at("id").get<std::string>();
    r.domain = domain_from_string(j.at("domain").get<std::string>());
    r.sequence = j.at("sequence").get<std::string>();
    r.frame = j.at("frame").get<int>();
    r.environment = j.value("environment", std::string());
    r.camera_angle_deg = j.value("camera_angle_deg", 0.0);
    r.image_path = j.at("image_path").get<std::string>();
    auto opt_path = [&](const char* key) -> std::optional<std::filesystem::path> {
      if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
      return std::filesystem::path(j.at(key).get<std::string>());
    };
    r.depth_path = opt_path("depth_path");
    r.seg_path = opt_path("seg_path");
    r.depth_scale = j.value("depth_scale", 0.001);
    const auto& p = j.at("pose");
    r.pose.position = {p.at("x").get<double>(), p.at("y").get<double>(), p.at("z").get<double>()};
    r.pose.orientation = Eigen::Quaterniond(p.at("qw").get<double>(), p.at("qx").get<double>(), p.at("qy").get<double>(),
                                           p.at("qz").get<double>());
    return r;
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedRecord, e.what());
  }
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  require(in.good(), ErrorCode::MissingFile, "cannot open manifest " + manifest_path.string());
  const auto root = manifest_path.parent_path();
  const auto classes_path = root / "classes.json";
  std::ifstream cin(classes_path);
  require(cin.good(), ErrorCode::MissingFile, "cannot open " + classes_path.string());
  int class_count = 0;
  std::vector<std::string> names;
  try {
    const json cj = json::parse(cin);
    class_count = cj.at("class_count").get<int>();
    if (cj.contains("class_names")) names = cj.at("class_names").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedRecord, classes_path.string() + ": " + e.what());
  }

  std::vector<SampleRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(record_from_json_line(line));
    } catch (const Error& e) {
      throw Error(e.code(), manifest_path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return make_manifest(std::move(records), class_count, std::move(names), root);
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& manifest_path) {
  std::ofstream out(manifest_path);
  require(out.good(), ErrorCode::IoError, "cannot write " + manifest_path.string());
  for (const auto& r : manifest.records) out << record_to_json_line(r) << '\n';
  json cj = {{"class_count", manifest.class_count}};
  if (!manifest.class_names.empty()) cj["class_names"] = manifest.class_names;
  std::ofstream cout(manifest_path.parent_path() / "classes.json");
  require(cout.good(), ErrorCode::IoError, "cannot write classes.json");
  cout << cj.dump(2) << '\n';
}

bool is_positive(const SampleRecord& a, const SampleRecord& c, const TripletRules& rules) {
  return a.domain == Domain::Virtual && c.domain == Domain::Virtual && a.id != c.id && a.sequence == c.sequence &&
         std::abs(a.frame - c.frame) <= rules.max_frame_gap &&
         std::abs(a.camera_angle_deg - c.camera_angle_deg) <= rules.max_angle_gap_deg &&
         (a.environment != c.environment || a.camera_angle_deg != c.camera_angle_deg);
}

bool is_negative(const SampleRecord& a, const SampleRecord& c, const TripletRules& rules) {
  return c.domain == Domain::Virtual && (a.sequence != c.sequence || std::abs(a.frame - c.frame) > rules.max_frame_gap);
}

TripletSampler::TripletSampler(const DatasetManifest& manifest, TripletRules rules)
    : manifest_(&manifest), rules_(rules), virtual_(manifest.indices(Domain::Virtual)) {
  std::map<std::string, std::vector<std::size_t>> by_seq;
  for (auto i : virtual_) by_seq[manifest.records[i].sequence].push_back(i);
  for (auto i : virtual_) {
    const auto& a = manifest.records[i];
    std::vector<std::size_t> pos;
    for (auto j : by_seq[a.sequence])
      if (is_positive(a, manifest.records[j], rules_)) pos.push_back(j);
    if (pos.empty()) continue;
    bool has_negative = by_seq.size() > 1;
    for (std::size_t k = 0; !has_negative && k < virtual_.size(); ++k)
      has_negative = is_negative(a, manifest.records[virtual_[k]], rules_);
    if (!has_negative) continue;
    anchors_.push_back(i);
    positives_.emplace(i, std::move(pos));
  }
}

const std::vector<std::size_t>& TripletSampler::positives_of(std::size_t anchor) const {
  auto it = positives_.find(anchor);
  require(it != positives_.end(), ErrorCode::NoValidPositive,
          "record " + std::to_string(anchor) + " has no valid positive or negative");
  return it->second;
}

TripletIndices TripletSampler::sample(Rng& rng) const {
  require(!anchors_.empty(), ErrorCode::NoValidPositive, "no virtual record has a valid positive and negative");
  return sample_for(anchors_[uniform_index(rng, anchors_.size())], rng);
}

TripletIndices TripletSampler::sample_for(std::size_t anchor, Rng& rng) const {
  const auto& pos = positives_of(anchor);
  TripletIndices t{anchor, pos[uniform_index(rng, pos.size())], 0};
  const auto& a = manifest_->records[anchor];
  // Negatives are the common case, so rejection sampling terminates quickly; the fallback keeps it exact.
  for (int attempt = 0; attempt < 64; ++attempt) {
    const auto c = virtual_[uniform_index(rng, virtual_.size())];
    if (is_negative(a, manifest_->records[c], rules_)) {
      t.negative = c;
      return t;
    }
  }
  std::vector<std::size_t> neg;
  for (auto c : virtual_)
    if (is_negative(a, manifest_->records[c], rules_)) neg.push_back(c);
  t.negative = neg[uniform_index(rng, neg.size())];
  return t;
}

TripletSpec TripletSampler::to_spec(const TripletIndices& t) const {
  const auto& r = manifest_->records;
  return {r.at(t.anchor).id, r.at(t.positive).id, r.at(t.negative).id};
}

SampleStack load_sample(const DatasetManifest& manifest, const SampleRecord& record) {
  SampleStack s;
  s.rgb = png::read_rgb(manifest.resolve(record.image_path));
  if (record.depth_path) {
    const auto raw = png::read_gray16(manifest.resolve(*record.depth_path));
    require(raw.same_size(s.rgb), ErrorCode::ShapeMismatch, record.id + ": depth size differs from image");
    DepthImage d(raw.height, raw.width, 1);
    for (std::size_t i = 0; i < raw.data.size(); ++i) d.data[i] = float(raw.data[i] * record.depth_scale);
    s.depth = std::move(d);
  }
  if (record.seg_path) {
    auto labels = png::read_indexed(manifest.resolve(*record.seg_path));
    require(labels.same_size(s.rgb), ErrorCode::ShapeMismatch, record.id + ": seg size differs from image");
    for (auto v : labels.data)
      require(int(v) < manifest.class_count, ErrorCode::ClassOutOfRange,
              record.id + ": class index " + std::to_string(v) + " >= class_count");
    s.labels = std::move(labels);
  }
  return s;
}

SampleStack flip_horizontal(const SampleStack& s) {
  SampleStack out;
  out.rgb = flip_horizontal(s.rgb);
  if (s.depth) out.depth = flip_horizontal(*s.depth);
  if (s.labels) out.labels = flip_horizontal(*s.labels);
  return out;
}

void augment_pair(SampleStack& a, SampleStack& b, Rng& rng) {
  require(a.rgb.same_size(b.rgb), ErrorCode::DimensionMismatch, "augment_pair needs equally sized images");
  if (coin(rng)) {
    a = flip_horizontal(a);
    b = flip_horizontal(b);
  }
}

SampleStack crop_to_shape(const SampleStack& s, int h, int w, Rng* rng) {
  require(h > 0 && w > 0 && h <= s.height() && w <= s.width(), ErrorCode::TargetTooLarge,
          "crop target " + std::to_string(h) + "x" + std::to_string(w) + " exceeds image " + std::to_string(s.height()) +
              "x" + std::to_string(s.width()));
  int top = (s.height() - h) / 2, left = (s.width() - w) / 2;
  if (rng) {
    top = int(uniform_index(*rng, s.height() - h + 1));
    left = int(uniform_index(*rng, s.width() - w + 1));
  }
  SampleStack out;
  out.rgb = crop(s.rgb, top, left, h, w);
  if (s.depth) out.depth = crop(*s.depth, top, left, h, w);
  if (s.labels) out.labels = crop(*s.labels, top, left, h, w);
  return out;
}

Tensor<float> to_tensor(const RgbImage& img) {
  Tensor<float> t(Shape{1, 3, img.height, img.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) t.at(0, c, y, x) = img.at(y, x, c) / 255.0f - 0.5f;
  return t;
}

void put_sample(Tensor<float>& dst, int n, const Tensor<float>& src) {
  require(src.shape.n == 1 && src.shape.c == dst.shape.c && src.shape.h == dst.shape.h && src.shape.w == dst.shape.w,
          ErrorCode::ShapeMismatch, "sample " + src.shape.str() + " does not fit batch " + dst.shape.str());
  std::copy(src.data.data(), src.data.data() + src.shape.per_sample(), dst.sample_ptr(n));
}

const SampleStack& SampleCache::get(std::size_t index) {
  auto it = cache_.find(index);
  if (it == cache_.end()) it = cache_.emplace(index, load_sample(*manifest_, manifest_->records.at(index))).first;
  return it->second;
}

}  // namespace dasgil::data
