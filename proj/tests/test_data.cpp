#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <nlohmann/json.hpp>
#include <set>

#include "dasgil/dataman.hpp"
#include "dasgil/toyworld.hpp"

using namespace dasgil;
using namespace dasgil::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("dasgil_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SampleRecord virtual_record(const std::string& id, const std::string& seq, int frame, const std::string& env,
                            double angle = 0.0) {
  SampleRecord r;
  r.id = id;
  r.sequence = seq;
  r.frame = frame;
  r.environment = env;
  r.camera_angle_deg = angle;
  r.image_path = "images/" + id + ".png";
  r.depth_path = "depth/" + id + ".png";
  r.seg_path = "seg/" + id + ".png";
  return r;
}

void write_manifest(const fs::path& dir, const std::vector<std::string>& lines) {
  std::ofstream(dir / "classes.json") << R"({"class_count": 3, "class_names": ["a", "b", "c"]})";
  std::ofstream out(dir / "manifest.jsonl");
  for (const auto& l : lines) out << l << '\n';
}

ErrorCode load_error(const fs::path& path) {
  try {
    load_manifest(path);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::IoError;
}

DatasetManifest grid_manifest(int sequences, int frames, std::vector<std::string> envs, std::vector<double> angles = {0.0}) {
  std::vector<SampleRecord> recs;
  for (int s = 0; s < sequences; ++s)
    for (int f = 0; f < frames; ++f)
      for (double a : angles)
        for (const auto& e : envs)
          recs.push_back(virtual_record("s" + std::to_string(s) + "f" + std::to_string(f) + e + std::to_string(int(a)),
                                        "s" + std::to_string(s), f, e, a));
  SampleRecord real = virtual_record("real0", "s0", 0, "real");
  real.domain = Domain::Real;
  real.depth_path.reset();
  real.seg_path.reset();
  recs.push_back(real);
  return make_manifest(std::move(recs), 3, {}, "/");
}

}  // namespace

TEST(Manifest, LoadsInOrder) {
  auto dir = scratch("load");
  auto a = virtual_record("b-first", "A", 0, "clone"), b = virtual_record("a-second", "A", 1, "fog");
  b.pose.position = {1, 2, 3};
  write_manifest(dir, {record_to_json_line(a), record_to_json_line(b)});
  auto m = load_manifest(dir / "manifest.jsonl");
  ASSERT_EQ(m.records.size(), 2u);
  EXPECT_EQ(m.records[0].id, "b-first");
  EXPECT_EQ(m.records[1].id, "a-second");
  EXPECT_EQ(m.records[1].pose.position, Eigen::Vector3d(1, 2, 3));
  EXPECT_EQ(m.class_count, 3);
  EXPECT_EQ(*m.index_of("a-second"), 1u);
  EXPECT_EQ(m.resolve("images/x.png"), dir / "images/x.png");
  fs::remove_all(dir);
}

TEST(Manifest, RecordErrors) {
  auto dir = scratch("errors");
  auto a = virtual_record("a", "A", 0, "clone");
  write_manifest(dir, {record_to_json_line(a), record_to_json_line(a)});
  EXPECT_EQ(load_error(dir / "manifest.jsonl"), ErrorCode::DuplicateId);

  auto nodepth = virtual_record("v", "A", 0, "clone");
  nodepth.depth_path.reset();
  write_manifest(dir, {record_to_json_line(nodepth)});
  EXPECT_EQ(load_error(dir / "manifest.jsonl"), ErrorCode::VirtualMissingGroundTruth);

  write_manifest(dir, {record_to_json_line(a), "{not json"});
  try {
    load_manifest(dir / "manifest.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedRecord);
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }

  auto skew = a;
  skew.pose.orientation = Eigen::Quaterniond(1.0, 0.01, 0, 0);
  write_manifest(dir, {record_to_json_line(skew)});
  EXPECT_EQ(load_error(dir / "manifest.jsonl"), ErrorCode::MalformedRecord);
  EXPECT_EQ(load_error(dir / "missing.jsonl"), ErrorCode::MissingFile);
  fs::remove_all(dir);
}

TEST(Triplets, PositivePredicateCases) {
  auto anchor = virtual_record("a", "A", 10, "clone");
  EXPECT_TRUE(is_positive(anchor, virtual_record("b", "A", 13, "fog")));
  EXPECT_FALSE(is_positive(anchor, virtual_record("b", "A", 13, "clone")));
  EXPECT_TRUE(is_positive(anchor, virtual_record("b", "A", 13, "clone", 15.0)));

  auto left = virtual_record("l", "A", 10, "clone", -15.0);
  EXPECT_FALSE(is_positive(left, virtual_record("r", "A", 10, "fog", 30.0)));
  EXPECT_TRUE(is_positive(left, virtual_record("r", "A", 10, "fog", 15.0)));

  auto far = virtual_record("b", "A", 20, "fog");
  EXPECT_FALSE(is_positive(anchor, far));
  EXPECT_TRUE(is_negative(anchor, far));
  EXPECT_FALSE(is_negative(anchor, virtual_record("c", "A", 15, "clone")));
  EXPECT_TRUE(is_negative(anchor, virtual_record("c", "B", 10, "fog")));
}

TEST(Triplets, TenThousandDrawsRespectInvariants) {
  auto m = grid_manifest(2, 12, {"clone", "fog", "sunset"}, {-30.0, 0.0, 15.0});
  TripletSampler sampler(m);
  Rng rng(3);
  std::set<std::size_t> anchors;
  for (int i = 0; i < 10000; ++i) {
    auto t = sampler.sample(rng);
    const auto &a = m.records[t.anchor], &p = m.records[t.positive], &n = m.records[t.negative];
    anchors.insert(t.anchor);
    ASSERT_TRUE(a.id != p.id && a.id != n.id && p.id != n.id);
    ASSERT_EQ(a.domain, Domain::Virtual);
    ASSERT_EQ(p.domain, Domain::Virtual);
    ASSERT_EQ(n.domain, Domain::Virtual);
    ASSERT_EQ(a.sequence, p.sequence);
    ASSERT_LE(std::abs(a.frame - p.frame), 5);
    ASSERT_LE(std::abs(a.camera_angle_deg - p.camera_angle_deg), 30.0);
    ASSERT_TRUE(a.environment != p.environment || a.camera_angle_deg != p.camera_angle_deg);
    ASSERT_TRUE(a.sequence != n.sequence || std::abs(a.frame - n.frame) > 5);
  }
  EXPECT_EQ(anchors.size(), m.indices(Domain::Virtual).size());
}

TEST(Triplets, DeterministicGivenRngState) {
  auto m = grid_manifest(1, 8, {"clone", "fog"});
  Rng r1(99), r2(99);
  for (int i = 0; i < 200; ++i) {
    auto a = sample_triplet(m, r1), b = sample_triplet(m, r2);
    ASSERT_EQ(a.anchor, b.anchor);
    ASSERT_EQ(a.positive, b.positive);
    ASSERT_EQ(a.negative, b.negative);
  }
}

TEST(Triplets, TooSmallManifest) {
  auto single_env = grid_manifest(1, 12, {"clone"});
  Rng rng(1);
  try {
    sample_triplet(single_env, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoValidPositive);
  }
  // Six frames in one sequence: every frame gap is within the positive window, so there are no negatives.
  auto short_seq = grid_manifest(1, 6, {"clone", "fog"});
  EXPECT_THROW(sample_triplet(short_seq, rng), Error);
  auto seven = grid_manifest(1, 7, {"clone", "fog"});
  auto t = sample_triplet(seven, rng);
  EXPECT_NE(t.anchor, t.negative);
}

namespace {

SampleStack numbered_stack(int h, int w) {
  SampleStack s;
  s.rgb = RgbImage(h, w, 3);
  s.depth = DepthImage(h, w, 1);
  s.labels = LabelImage(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) s.rgb.at(y, x, c) = std::uint8_t((y * 7 + x * 3 + c) % 251);
      s.depth->at(y, x) = float(y * 1000 + x);
      s.labels->at(y, x) = std::uint8_t((x + y) % 5);
    }
  return s;
}

bool same(const SampleStack& a, const SampleStack& b) { return a.rgb == b.rgb && a.depth == b.depth && a.labels == b.labels; }

// Rng whose next coin() is the requested outcome.
Rng rng_with_coin(bool heads) {
  for (std::uint64_t seed = 0;; ++seed) {
    Rng probe(seed);
    if (coin(probe) == heads) return Rng(seed);
  }
}

}  // namespace

TEST(Augment, ForcedFlipMirrorsBoth) {
  const auto a0 = numbered_stack(4, 5), b0 = numbered_stack(4, 5);
  auto a = a0, b = b0;
  auto rng = rng_with_coin(true);
  augment_pair(a, b, rng);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) {
      EXPECT_EQ(a.rgb.at(y, x, 1), a0.rgb.at(y, 4 - x, 1));
      EXPECT_EQ(b.depth->at(y, x), b0.depth->at(y, 4 - x));
      EXPECT_EQ(a.labels->at(y, x), a0.labels->at(y, 4 - x));
    }
  auto c = a0, d = b0;
  auto rng2 = rng_with_coin(false);
  augment_pair(c, d, rng2);
  EXPECT_TRUE(same(c, a0));
  EXPECT_TRUE(same(d, b0));
}

TEST(Augment, SameInputStaysIdentical) {
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    auto a = numbered_stack(3, 6), b = numbered_stack(3, 6);
    augment_pair(a, b, rng);
    EXPECT_TRUE(same(a, b));
  }
}

TEST(Augment, FlipFractionNearHalf) {
  Rng rng(2024);
  int flips = 0;
  for (int i = 0; i < 1000; ++i) {
    auto a = numbered_stack(1, 2), b = numbered_stack(1, 2);
    const auto before = a;
    augment_pair(a, b, rng);
    flips += !same(a, before);
  }
  EXPECT_GE(flips, 450);
  EXPECT_LE(flips, 550);
}

TEST(Augment, DimensionMismatch) {
  auto a = numbered_stack(4, 5), b = numbered_stack(4, 6);
  Rng rng(1);
  try {
    augment_pair(a, b, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(Crop, CenteredOffsets) {
  auto s = numbered_stack(300, 1100);
  auto c = crop_to_shape(s, 256, 1024);
  ASSERT_EQ(c.height(), 256);
  ASSERT_EQ(c.width(), 1024);
  EXPECT_EQ(c.depth->at(0, 0), float(22 * 1000 + 38));
  EXPECT_EQ(c.depth->at(255, 1023), float((22 + 255) * 1000 + 38 + 1023));
  EXPECT_EQ(c.rgb.at(0, 0, 2), s.rgb.at(22, 38, 2));
  EXPECT_EQ(c.labels->at(10, 10), s.labels->at(32, 48));
  EXPECT_TRUE(same(crop_to_shape(s, 300, 1100), s));
  try {
    crop_to_shape(numbered_stack(200, 1024), 256, 1024);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TargetTooLarge);
  }
}

TEST(Crop, RandomWindowStaysAligned) {
  auto s = numbered_stack(20, 30);
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    auto c = crop_to_shape(s, 8, 9, &rng);
    const int top = int(c.depth->at(0, 0)) / 1000, left = int(c.depth->at(0, 0)) % 1000;
    ASSERT_LE(top + 8, 20);
    ASSERT_LE(left + 9, 30);
    EXPECT_EQ(c.labels->at(3, 4), s.labels->at(top + 3, left + 4));
    EXPECT_EQ(c.rgb.at(7, 8, 0), s.rgb.at(top + 7, left + 8, 0));
  }
}

TEST(Png, RoundTrips) {
  auto dir = scratch("png");
  auto s = numbered_stack(7, 9);
  png::write_rgb(dir / "rgb.png", s.rgb);
  EXPECT_EQ(png::read_rgb(dir / "rgb.png"), s.rgb);
  Image<std::uint16_t> d(7, 9, 1);
  for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] = std::uint16_t(i * 997);
  png::write_gray16(dir / "d.png", d);
  EXPECT_EQ(png::read_gray16(dir / "d.png"), d);
  png::write_indexed(dir / "l.png", *s.labels, toy::class_palette(5));
  EXPECT_EQ(png::read_indexed(dir / "l.png"), *s.labels);
  EXPECT_THROW(png::read_gray16(dir / "rgb.png"), Error);
  fs::remove_all(dir);
}

// Toy world.

TEST(ToyWorld, FrontoParallelFaceHasConstantDepth) {
  const double d = 17.25;
  toy::Scene scene;
  scene.boxes.push_back({Eigen::Vector3d(-3, 0.5, d), Eigen::Vector3d(3, 4, d + 2), toy::Building});
  toy::Camera cam;
  cam.position = {0, 1.5, 0};
  cam.focal_px = 32;
  auto r = toy::render(scene, cam, 64, 64, 60.0);
  int inside = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (r.labels.at(y, x) == toy::Building) {
        ++inside;
        EXPECT_FLOAT_EQ(r.depth.at(y, x), float(d));
      }
  // The face spans 6 m x 3.5 m at 17.25 m with f = 32 px: about 11 x 6.5 px.
  EXPECT_GT(inside, 50);
}

TEST(ToyWorld, DepthMatchesAnalyticIntersection) {
  toy::ToyWorldConfig cfg;
  const auto scene = toy::make_scene(cfg, 0);
  for (double angle : {0.0, 20.0}) {
    const auto cam = toy::make_camera(cfg, 0, 3, angle);
    const auto r = toy::render(scene, cam, 64, 64, cfg.max_depth_m);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const float depth = r.depth.at(y, x);
        if (depth == 0.0f) continue;
        const Eigen::Vector3d dir = cam.ray(x, y, 64, 64);
        // Forward component of the viewing ray is 1, so depth equals the ray parameter.
        const Eigen::Vector3d fwd(std::sin(cam.yaw_rad), 0, std::cos(cam.yaw_rad));
        ASSERT_NEAR(dir.dot(fwd), 1.0, 1e-12);
        const Eigen::Vector3d p = cam.position + double(depth) * dir;
        if (r.labels.at(y, x) == toy::Road || (r.labels.at(y, x) == toy::Vegetation && std::abs(p.y()) < 1e-3)) {
          ASSERT_NEAR(depth, cam.position.y() / -dir.y(), 1e-4);
        } else {
          // The hit point lies on the surface of some box.
          bool on_face = false;
          for (const auto& b : scene.boxes) {
            bool inside = true, face = false;
            for (int a = 0; a < 3; ++a) {
              inside &= p[a] >= b.lo[a] - 1e-4 && p[a] <= b.hi[a] + 1e-4;
              face |= std::abs(p[a] - b.lo[a]) < 1e-4 || std::abs(p[a] - b.hi[a]) < 1e-4;
            }
            on_face |= inside && face;
          }
          ASSERT_TRUE(on_face) << "pixel " << x << "," << y;
        }
      }
  }
}

TEST(ToyWorld, CountsAndDeterminism) {
  toy::ToyWorldConfig cfg;
  cfg.sequences = 2;
  cfg.frames_per_sequence = 8;
  cfg.image_height = cfg.image_width = 32;
  auto d1 = scratch("toy1"), d2 = scratch("toy2");
  auto m1 = toy::generate_toy_dataset(cfg, d1);
  toy::generate_toy_dataset(cfg, d2);
  EXPECT_EQ(m1.indices(Domain::Virtual).size(), 48u);
  EXPECT_EQ(m1.indices(Domain::Real).size(), 16u);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(d1)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), d1);
    std::ifstream a(e.path(), std::ios::binary), b(d2 / rel, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    ASSERT_EQ(sa, sb) << rel;
  }
  EXPECT_EQ(files, 48 * 3 + 16 + 2);

  auto loaded = load_manifest(d1 / "manifest.jsonl");
  ASSERT_EQ(loaded.records.size(), 64u);
  const auto& rec = loaded.records[0];
  auto s = load_sample(loaded, rec);
  EXPECT_EQ(s.height(), 32);
  ASSERT_TRUE(s.depth && s.labels);
  for (auto v : s.labels->data) EXPECT_LT(v, cfg.class_count);
  // Stored depth is the render quantised to depth_scale.
  const auto scene = toy::make_scene(cfg, 0);
  const auto r = toy::render(scene, toy::make_camera(cfg, 0, rec.frame, 0.0), 32, 32, cfg.max_depth_m);
  for (std::size_t i = 0; i < r.depth.data.size(); ++i) EXPECT_NEAR(s.depth->data[i], r.depth.data[i], 0.5e-3 + 1e-6);

  cfg.seed = 8;
  auto d3 = scratch("toy3");
  toy::generate_toy_dataset(cfg, d3);
  std::ifstream a(d1 / "images" / (rec.id + ".png"), std::ios::binary), b(d3 / "images" / (rec.id + ".png"), std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_NE(sa, sb);
  for (auto& d : {d1, d2, d3}) fs::remove_all(d);
}

TEST(ToyWorld, ClassMergingAndConfigErrors) {
  toy::ToyWorldConfig cfg;
  cfg.class_count = 3;
  cfg.sequences = 1;
  cfg.frames_per_sequence = 6;
  cfg.image_height = cfg.image_width = 32;
  auto dir = scratch("toymerge");
  auto m = toy::generate_toy_dataset(cfg, dir);
  EXPECT_EQ(m.class_names.size(), 3u);
  for (auto i : m.indices(Domain::Virtual)) {
    const auto s = load_sample(m, m.records[i]);
    for (auto v : s.labels->data) ASSERT_LT(v, 3);
  }
  fs::remove_all(dir);

  for (auto mutate : std::vector<std::function<void(toy::ToyWorldConfig&)>>{
           [](auto& c) { c.image_height = 16; }, [](auto& c) { c.frames_per_sequence = 5; },
           [](auto& c) { c.class_count = 1; }, [](auto& c) { c.environments.clear(); },
           [](auto& c) { c.environments[1].name = "clone"; }}) {
    toy::ToyWorldConfig bad;
    mutate(bad);
    EXPECT_THROW(bad.validate(), Error);
  }
}

TEST(ToyWorld, ConfigJsonRoundTrip) {
  toy::ToyWorldConfig cfg;
  cfg.seed = 123;
  cfg.camera_angles_deg = {-15, 0, 15};
  cfg.real_domain_shift.hue_deg = 12;
  nlohmann::json j = cfg;
  auto back = j.get<toy::ToyWorldConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  j["bogus"] = 1;
  EXPECT_THROW(j.get<toy::ToyWorldConfig>(), Error);
}
