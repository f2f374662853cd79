#include <gtest/gtest.h>

#include <filesystem>
#include <Eigen/LU>
#include <Eigen/QR>
#include <fstream>

#include "dasgil/retrieval.hpp"
#include "dasgil/toyworld.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace dasgil;
using namespace dasgil::retrieval;
using dasgil::testing::brute_force_topk;
using dasgil::testing::plain;
using dasgil::testing::random_descriptor;
namespace fs = std::filesystem;

namespace {

net::NetConfig toy_net() {
  net::NetConfig n;
  n.input_height = n.input_width = 64;
  n.encoder_layers = 5;
  n.width_multiplier = 0.25;
  n.class_count = 5;
  return n.resolved();
}

Tensor<float> random_images(int n, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return dasgil::testing::random_tensor(Shape{n, 3, h, w}, rng, -0.5, 0.5).cast<float>();
}

Descriptor hand(const std::string& id, float x, float y) {
  return {id, {1}, {Eigen::Vector2f(x, y)}, std::nullopt};
}

FeatureDatabase hand_db() {
  FeatureDatabase db({1}, {2}, Digest{});
  db.add(hand("c", 2, 2));
  db.add(hand("a", 1, 0));
  db.add(hand("b", 0, 3));
  return db;
}

}  // namespace

TEST(Extract, LevelDimensionsAtReferenceSize) {
  net::NetConfig n;
  n.width_multiplier = 0.125;
  n.class_count = 2;
  const auto params = net::init_params<float>(n, 1);
  const auto d = extract_descriptor(params, random_images(1, 256, 1024, 2), {5, 6});
  const auto& cfg = params.config;
  ASSERT_EQ(d.parts.size(), 2u);
  EXPECT_EQ(d.parts[0].size(), cfg.channels(5) * 8 * 32);
  EXPECT_EQ(d.parts[1].size(), cfg.channels(6) * 4 * 16);
  EXPECT_EQ(d.total_dim(), cfg.channels(5) * 8 * 32 + cfg.channels(6) * 4 * 16);
  try {
    extract_descriptor(params, random_images(1, 256, 1024, 2), {9});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LayerOutOfRange);
  }
}

TEST(Extract, DeterministicAndBatchConsistent) {
  const auto params = net::init_params<float>(toy_net(), 3);
  const auto imgs = random_images(3, 64, 64, 4);
  const auto batch = extract_descriptors(params, imgs, {4, 5});
  Tensor<float> second(Shape{1, 3, 64, 64});
  second.data = imgs.data.segment(second.data.size(), second.data.size());
  const auto a = extract_descriptor(params, second, {4, 5}), b = extract_descriptor(params, second, {4, 5});
  for (std::size_t s = 0; s < 2; ++s) {
    EXPECT_EQ(a.parts[s], b.parts[s]);
    EXPECT_TRUE(a.parts[s].isApprox(batch[1].parts[s], 1e-6f));
  }
  EXPECT_EQ(*a.source, params_digest(params));
  try {
    extract_descriptor(params, random_images(1, 32, 64, 4), {4});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Query, HandBuiltL1Order) {
  const auto db = hand_db();
  const auto r = query(db, hand("q", 0, 0), {Metric::L1}, 10);
  ASSERT_EQ(r.ranked.size(), 3u);
  EXPECT_EQ(r.ranked[0].id, "a");
  EXPECT_EQ(r.ranked[0].score, 1.0);
  EXPECT_EQ(r.ranked[1].id, "b");
  EXPECT_EQ(r.ranked[1].score, 3.0);
  EXPECT_EQ(r.ranked[2].id, "c");
  EXPECT_EQ(r.ranked[2].score, 4.0);
  EXPECT_EQ(query(db, hand("q", 0, 0), {Metric::L1}, 2).ranked.size(), 2u);
}

TEST(Query, SelfMatch) {
  std::mt19937_64 rng(1);
  FeatureDatabase db({2, 3}, {5, 7}, Digest{});
  std::vector<Descriptor> ds;
  for (int i = 0; i < 6; ++i) {
    ds.push_back(random_descriptor({2, 3}, {5, 7}, rng, "e" + std::to_string(i)));
    ds.back().parts[0][0] = 9.0f + float(i);  // keep entries distinct and layers nonzero
    ds.back().parts[1][0] = 9.0f;
    db.add(ds.back());
  }
  for (const auto& d : ds) {
    const auto l1 = query(db, d, {Metric::L1}, 1);
    EXPECT_EQ(l1.ranked[0].id, d.id);
    EXPECT_EQ(l1.ranked[0].score, 0.0);
    const auto cos = query(db, d, {Metric::Cosine}, 1);
    EXPECT_NEAR(score(db, *db.index_of(d.id), d, {Metric::Cosine}), 2.0, 1e-12);
    EXPECT_GE(cos.ranked[0].score, 2.0 - 1e-12);
  }
}

TEST(Query, TiesKeepInsertionOrder) {
  FeatureDatabase db({1}, {2}, Digest{});
  db.add(hand("first", 1, 0));
  db.add(hand("second", 0, 1));
  db.add(hand("third", -1, 0));
  const auto r = query(db, hand("q", 0, 0), {Metric::L1}, 3);
  EXPECT_EQ(r.ranked[0].id, "first");
  EXPECT_EQ(r.ranked[1].id, "second");
  EXPECT_EQ(r.ranked[2].id, "third");
}

TEST(Query, MatchesBruteForce) {
  std::mt19937_64 rng(17);
  for (const auto& [layers, dims] : std::vector<std::pair<std::vector<int>, std::vector<int>>>{{{5}, {24}}, {{4, 5}, {40, 24}}}) {
    FeatureDatabase db(layers, dims, Digest{});
    std::vector<dasgil::testing::PlainDescriptor> plain_db;
    for (int i = 0; i < 500; ++i) {
      auto d = random_descriptor(layers, dims, rng, "db" + std::to_string(i));
      db.add(d);
      plain_db.push_back(plain(d));
    }
    for (int qi = 0; qi < 200; ++qi) {
      // Every fifth query copies a database row so exact-distance ties with duplicates are exercised.
      auto q = qi % 5 == 0 ? db.entry(std::size_t(qi) * 2) : random_descriptor(layers, dims, rng, "q");
      for (bool cos : {false, true}) {
        const auto got = query(db, q, {cos ? Metric::Cosine : Metric::L1}, 10);
        const auto want = brute_force_topk(plain_db, plain(q), cos, 10);
        ASSERT_EQ(got.ranked.size(), want.size());
        for (std::size_t r = 0; r < want.size(); ++r) ASSERT_EQ(got.ranked[r].index, want[r]) << "query " << qi << " rank " << r;
      }
    }
  }
}

TEST(Query, MetricProperties) {
  std::mt19937_64 rng(23);
  FeatureDatabase db({1, 2}, {6, 4}, Digest{}), scaled({1, 2}, {6, 4}, Digest{});
  std::vector<Descriptor> ds;
  for (int i = 0; i < 40; ++i) {
    ds.push_back(random_descriptor({1, 2}, {6, 4}, rng, "e" + std::to_string(i)));
    db.add(ds.back());
    auto s = ds.back();
    for (auto& p : s.parts) p *= 3.5f;
    scaled.add(s);
  }
  for (int i = 0; i < 10; ++i) {
    const auto& a = ds[i];
    const auto& b = ds[i + 10];
    EXPECT_EQ(score(db, i + 10, a, {Metric::L1}), score(db, i, b, {Metric::L1}));
    auto q = random_descriptor({1, 2}, {6, 4}, rng, "q"), qs = q;
    for (auto& p : qs.parts) p *= 3.5f;
    const auto r1 = query(db, q, {Metric::L1}, 40), r2 = query(scaled, qs, {Metric::L1}, 40);
    for (std::size_t r = 0; r < 40; ++r) EXPECT_EQ(r1.ranked[r].index, r2.ranked[r].index);
  }
  Descriptor zero{"z", {1, 2}, {Eigen::VectorXf::Zero(6), Eigen::VectorXf::Ones(4)}, std::nullopt};
  FeatureDatabase zdb({1, 2}, {6, 4}, Digest{});
  zdb.add(zero);
  EXPECT_DOUBLE_EQ(query(zdb, zero, {Metric::Cosine}, 1).ranked[0].score, 1.0);
}

TEST(Query, Variants) {
  FeatureDatabase db({1, 2}, {2, 4}, Digest{});
  db.add({"a", {1, 2}, {Eigen::Vector2f(1, 0), Eigen::Vector4f(0, 0, 0, 4)}, std::nullopt});
  const Descriptor q{"q", {1, 2}, {Eigen::Vector2f(0, 0), Eigen::Vector4f(0, 0, 0, 0)}, std::nullopt};
  EXPECT_DOUBLE_EQ(score(db, 0, q, {Metric::L1}), 5.0);
  EXPECT_DOUBLE_EQ(score(db, 0, q, {Metric::L1, true}), 1.0 / 2 + 4.0 / 4);
  const Descriptor q2{"q", {1, 2}, {Eigen::Vector2f(1, 0), Eigen::Vector4f(4, 0, 0, 0)}, std::nullopt};
  EXPECT_DOUBLE_EQ(score(db, 0, q2, {Metric::Cosine}), 1.0);
  EXPECT_NEAR(score(db, 0, q2, {Metric::Cosine, false, true}), 1.0 / 17.0, 1e-12);
}

TEST(Query, Errors) {
  const auto db = hand_db();
  try {
    query(db, {"q", {2}, {Eigen::Vector2f(0, 0)}, std::nullopt}, {}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LayerMismatch);
  }
  try {
    query(FeatureDatabase({1}, {2}, Digest{}), hand("q", 0, 0), {}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDatabase);
  }
  auto dup = hand_db();
  EXPECT_THROW(dup.add(hand("a", 0, 0)), Error);
}

TEST(Database, BuildRoundTripAndDigestWarning) {
  const auto dir = fs::temp_directory_path() / ("dasgil_retrieval_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  toy::ToyWorldConfig cfg;
  cfg.sequences = 1;
  cfg.frames_per_sequence = 10;
  cfg.environments.resize(1);
  const auto m = toy::generate_toy_dataset(cfg, dir / "data");
  const auto params = net::init_params<float>(toy_net(), 5);
  std::vector<std::size_t> idx = m.indices(data::Domain::Virtual);
  ASSERT_EQ(idx.size(), 10u);
  const auto db = build_database(params, m, idx, {4, 5});
  ASSERT_EQ(db.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(db.ids()[i], m.records[idx[i]].id);
  EXPECT_EQ(db.digest(), params_digest(params));

  save_database(db, dir / "db.dgfd");
  const auto back = load_database(dir / "db.dgfd");
  EXPECT_TRUE(back == db);
  save_database(back, dir / "db2.dgfd");
  std::ifstream a(dir / "db.dgfd", std::ios::binary), b(dir / "db2.dgfd", std::ios::binary);
  EXPECT_EQ(std::string((std::istreambuf_iterator<char>(a)), {}), std::string((std::istreambuf_iterator<char>(b)), {}));

  // Query from the stored image: same parameters give no diagnostics and a self match.
  const auto stack = data::load_sample(m, m.records[idx[3]]);
  const auto q = extract_descriptor(params, data::to_tensor(stack.rgb), {4, 5});
  const auto r = query(back, q, {Metric::L1}, 3);
  EXPECT_TRUE(r.diagnostics.empty());
  EXPECT_EQ(r.ranked[0].id, m.records[idx[3]].id);
  EXPECT_EQ(r.ranked[0].score, 0.0);

  const auto other = net::init_params<float>(toy_net(), 6);
  const auto q2 = extract_descriptor(other, data::to_tensor(stack.rgb), {4, 5});
  const auto r2 = query(back, q2, {Metric::L1}, 3);
  ASSERT_EQ(r2.diagnostics.size(), 1u);
  EXPECT_NE(r2.diagnostics[0].find("warning"), std::string::npos);

  std::ifstream in(dir / "db.dgfd", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(bytes.substr(0, 4), "DGFD");
  std::ofstream(dir / "cut.dgfd", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  EXPECT_THROW(load_database(dir / "cut.dgfd"), Error);
  fs::remove_all(dir);
}

TEST(Pca, ConstantMapIsGray) {
  Tensor<float> t(Shape{1, 5, 4, 6});
  t.data.setConstant(2.5f);
  const auto img = pca_visualize(t);
  EXPECT_EQ(img.height, 4);
  EXPECT_EQ(img.width, 6);
  for (auto v : img.data) EXPECT_EQ(v, 128);
}

TEST(Pca, ThreeChannelsGiveInvertibleAffineRecolor) {
  std::mt19937_64 rng(3);
  const auto t = dasgil::testing::random_tensor(Shape{1, 3, 9, 11}, rng).cast<float>();
  const auto img = pca_visualize(t);
  ASSERT_EQ(img.height, 9);
  ASSERT_EQ(img.width, 11);
  // Fit input = A * output + b by least squares; an invertible recolor leaves only 8-bit rounding error.
  const int P = 99;
  Eigen::MatrixXd out(P, 4), in(P, 3);
  for (int p = 0; p < P; ++p) {
    for (int c = 0; c < 3; ++c) {
      out(p, c) = img.data[p * 3 + c];
      in(p, c) = t.data[c * P + p];
    }
    out(p, 3) = 1.0;
  }
  const Eigen::MatrixXd coef = out.colPivHouseholderQr().solve(in);
  const double rms = std::sqrt((out * coef - in).squaredNorm() / (P * 3));
  EXPECT_LT(rms, 0.02);
  EXPECT_EQ(Eigen::FullPivLU<Eigen::MatrixXd>(out).rank(), 4);
  // Every component spans the full byte range.
  for (int c = 0; c < 3; ++c) {
    int lo = 255, hi = 0;
    for (int p = 0; p < P; ++p) {
      lo = std::min<int>(lo, img.data[p * 3 + c]);
      hi = std::max<int>(hi, img.data[p * 3 + c]);
    }
    EXPECT_EQ(lo, 0);
    EXPECT_EQ(hi, 255);
  }
}

TEST(Pca, TooFewChannels) {
  try {
    pca_visualize(Tensor<float>(Shape{1, 2, 3, 3}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewChannels);
  }
}
