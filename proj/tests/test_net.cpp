#include <gtest/gtest.h>

#include <random>

#include "dasgil/losses.hpp"
#include "dasgil/net.hpp"
#include "gradcheck.hpp"

using namespace dasgil;
using namespace dasgil::net;
using dasgil::testing::random_tensor;

namespace {

NetConfig toy_config(DiscriminatorKind kind = DiscriminatorKind::Flatten) {
  NetConfig c;
  c.input_height = 64;
  c.input_width = 64;
  c.encoder_layers = 5;
  c.width_multiplier = 0.25;
  c.class_count = 4;
  c.discriminator_kind = kind;
  c.cd_final_dim = 32;
  return c;
}

NetConfig tiny_config(DiscriminatorKind kind = DiscriminatorKind::Flatten) {
  NetConfig c;
  c.input_height = 16;
  c.input_width = 16;
  c.encoder_layers = 3;
  c.channels_per_layer = {3, 4, 4};
  c.class_count = 3;
  c.depth_output_layers = std::vector<int>{2, 1};
  c.triplet_layers = std::vector<int>{2, 3};
  c.fd_hidden = {5, 4};
  c.cd_final_dim = 6;
  c.discriminator_kind = kind;
  return c;
}

template <typename Scalar>
bool same(const ParamCollection<Scalar>& a, const ParamCollection<Scalar>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a)
    if (!(t.shape == b.at(name).shape) || t.data != b.at(name).data) return false;
  return true;
}

Tensor<double> images(int n, const NetConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_tensor(Shape{n, 3, c.input_height, c.input_width}, rng, -0.5, 0.5);
}

}  // namespace

TEST(NetConfig, DefaultsClipToAvailableLayers) {
  const NetConfig c = toy_config().resolved();
  EXPECT_EQ(c.channels_per_layer, (std::vector<int>{4, 8, 16, 16, 32}));
  EXPECT_EQ(c.depth_layers(), (std::vector<int>{4, 3, 2, 1}));
  EXPECT_EQ(c.triplet(), (std::vector<int>{3, 4, 5}));
  EXPECT_EQ(c.retrieval(), (std::vector<int>{5}));
  EXPECT_EQ(c.disc_levels(), (std::vector<int>{1, 2, 3, 4, 5}));

  NetConfig full;
  full = full.resolved();
  EXPECT_EQ(full.triplet(), (std::vector<int>{3, 4, 5, 6}));
  EXPECT_EQ(full.retrieval(), (std::vector<int>{5, 6}));
  NetConfig cascade;
  cascade.discriminator_kind = DiscriminatorKind::Cascade;
  EXPECT_EQ(cascade.resolved().retrieval(), (std::vector<int>{5}));
}

TEST(NetConfig, RejectsInvalid) {
  NetConfig c = toy_config();
  c.input_height = 48;  // not divisible by 2^5
  EXPECT_THROW(c.resolved(), Error);
  c = toy_config();
  c.triplet_layers = std::vector<int>{6};
  EXPECT_THROW(c.resolved(), Error);
  c = toy_config();
  c.class_count = 1;
  EXPECT_THROW(c.resolved(), Error);
}

TEST(NetConfig, JsonRoundTrip) {
  NetConfig c = toy_config(DiscriminatorKind::Cascade);
  c.retrieval_layers = std::vector<int>{4, 5};
  nlohmann::json j = c;
  EXPECT_EQ(j.get<NetConfig>(), c);
}

TEST(InitParams, DeterministicFiniteAndSeedSensitive) {
  const auto a = init_params<float>(toy_config(), 1);
  const auto b = init_params<float>(toy_config(), 1);
  const auto c = init_params<float>(toy_config(), 2);
  EXPECT_TRUE(same(a.extractor, b.extractor) && same(a.depth_gen, b.depth_gen) && same(a.seg_gen, b.seg_gen) &&
              same(a.discriminator, b.discriminator));
  EXPECT_FALSE(same(a.extractor, c.extractor));
  EXPECT_TRUE(a.all_finite());
  EXPECT_TRUE(init_params<float>(toy_config(DiscriminatorKind::Cascade), 3).all_finite());
}

TEST(Encode, FullResolutionEightLayers) {
  NetConfig c;
  c.width_multiplier = 0.125;
  const auto p = init_params<float>(c, 1);
  Tensor<float> img(Shape{1, 3, 256, 1024});
  const auto pyr = encode(p, img);
  ASSERT_EQ(pyr.levels.size(), 8u);
  EXPECT_EQ(pyr.level(8).shape().h, 1);
  EXPECT_EQ(pyr.level(8).shape().w, 4);
  for (int l = 1; l <= 8; ++l) EXPECT_EQ(pyr.level(l).shape().h, 256 >> l);
}

TEST(Encode, ToyLevelsAndPurity) {
  const auto p = init_params<double>(toy_config(), 1);
  Tensor<double> one = images(1, p.config, 5);
  Tensor<double> two(Shape{2, 3, 64, 64});
  two.data << one.data, one.data;
  const auto pyr = encode(p, two);
  EXPECT_EQ(pyr.level(5).shape(), (Shape{2, 32, 2, 2}));
  for (int l = 1; l <= 5; ++l) {
    const auto per = pyr.level(l).shape().per_sample();
    EXPECT_EQ(pyr.level(l).value().data.head(per), pyr.level(l).value().data.tail(per));
  }
  const auto again = encode(p, two);
  EXPECT_EQ(again.level(3).value().data, pyr.level(3).value().data);
  EXPECT_THROW(encode(p, Tensor<double>(Shape{1, 3, 32, 64})), Error);
}

TEST(DecodeDepth, ResolutionsAndNonNegativity) {
  const auto p = init_params<float>(toy_config(), 2);
  const auto pyr = encode(p, images(2, p.config, 6).cast<float>());
  const auto depth = decode_depth(p.config, BoundParams<float>(p.depth_gen, false), pyr);
  ASSERT_EQ(depth.size(), 4u);
  for (int layer = 1; layer <= 4; ++layer) {
    EXPECT_EQ(depth.at(layer).shape(), (Shape{2, 1, 64 >> layer, 64 >> layer}));
    EXPECT_GE(depth.at(layer).value().data.minCoeff(), 0.0f);
  }
  FeaturePyramid<float> wrong = pyr;
  wrong.levels.pop_back();
  EXPECT_THROW(decode_depth(p.config, BoundParams<float>(p.depth_gen, false), wrong), Error);
}

TEST(DecodeDepth, OutputPixelDependsOnExtractorWeights) {
  auto p = init_params<double>(tiny_config(), 3);
  const Tensor<double> img = images(1, p.config, 7);
  auto pixel = [&](const ModelParams<double>& q) {
    const auto d = decode_depth(q.config, BoundParams<double>(q.depth_gen, false), encode(q, img));
    return d.at(1).value().at(0, 0, 3, 4);
  };
  int live = 0;
  for (const std::string name : {"enc1.w", "enc2.w", "enc3.w"}) {
    for (int i = 0; i < 4; ++i) {
      auto plus = p, minus = p;
      plus.extractor.at(name).data[i] += 1e-5;
      minus.extractor.at(name).data[i] -= 1e-5;
      if (std::abs(pixel(plus) - pixel(minus)) > 1e-12) ++live;
    }
  }
  EXPECT_GE(live, 10);
}

TEST(DecodeSeg, FullResolutionAndSoftmax) {
  const auto p = init_params<float>(toy_config(), 4);
  const auto pyr = encode(p, images(2, p.config, 8).cast<float>());
  const auto scores = decode_seg(p.config, BoundParams<float>(p.seg_gen, false), pyr);
  EXPECT_EQ(scores.shape(), (Shape{2, 4, 64, 64}));
  const auto prob = ops::softmax_channels(scores.value());
  for (int n = 0; n < 2; ++n)
    EXPECT_LT((prob.sample(n).colwise().sum().array() - 1.0f).abs().maxCoeff(), 1e-5f);
}

TEST(FlattenDiscriminator, WidthAndDeterminism) {
  const auto p = init_params<double>(toy_config(), 5);
  const NetConfig& c = p.config;
  EXPECT_EQ(c.flatten_dim(), 4 * 32 * 32 + 8 * 16 * 16 + 16 * 8 * 8 + 16 * 4 * 4 + 32 * 2 * 2);
  EXPECT_EQ(p.discriminator.at("fc1.w").shape.c, c.flatten_dim());
  EXPECT_EQ(p.discriminator.at("fc2.w").shape, (Shape{64, 64, 1, 1}));
  EXPECT_EQ(p.discriminator.at("fc3.w").shape, (Shape{1, 64, 1, 1}));

  Tensor<double> batch(Shape{4, 3, 64, 64});
  const Tensor<double> a = images(1, c, 9), b = images(1, c, 10);
  batch.data << a.data, b.data, a.data, b.data;
  const auto scores = discriminate_flatten(c, BoundParams<double>(p.discriminator, false), encode(p, batch));
  ASSERT_EQ(scores.shape(), (Shape{4, 1, 1, 1}));
  EXPECT_EQ(scores.value().data[0], scores.value().data[2]);
  EXPECT_EQ(scores.value().data[1], scores.value().data[3]);
  EXPECT_NE(scores.value().data[0], scores.value().data[1]);
}

TEST(FlattenDiscriminator, ReferenceWidthWhenChannelPlanReproducesIt) {
  // 15*65536 + 1*16384 + 1*4096 + 1*1024 + 1*256 + 1*64 + 1*16 + 1*4 at 256x1024.
  NetConfig c;
  c.channels_per_layer = {15, 1, 1, 1, 1, 1, 1, 1};
  c = c.resolved();
  EXPECT_EQ(c.flatten_dim(), 15L * 65536 + 16384 + 4096 + 1024 + 256 + 64 + 16 + 4);
  NetConfig ref;
  ref.channels_per_layer = {15, 1, 1, 1, 1, 0, 0, 0};
  EXPECT_THROW(ref.resolved(), Error);
  EXPECT_EQ(kReferenceFlattenWidth, 1004800);
}

TEST(CascadeDiscriminator, BlockChannelsFollowPyramid) {
  const auto p = init_params<double>(toy_config(DiscriminatorKind::Cascade), 6);
  const auto& c = p.config;
  for (int i = 1; i < c.encoder_layers; ++i) {
    const Shape w = p.discriminator.at("block" + std::to_string(i) + ".conv1.w").shape;
    EXPECT_EQ(w.c, i == 1 ? c.channels(1) : 2 * c.channels(i));
    EXPECT_EQ(w.n, c.channels(i + 1));
  }
  EXPECT_EQ(p.discriminator.at("fc1.w").shape.n, 32);
}

TEST(CascadeDiscriminator, ShallowLevelInfluencesScoreAndIsDeterministic) {
  const auto p = init_params<double>(toy_config(DiscriminatorKind::Cascade), 7);
  const auto& c = p.config;
  const BoundParams<double> D(p.discriminator, false);
  const auto pyr = encode(p, images(3, c, 11));
  const auto base = discriminate_cascade(c, D, pyr).value().data;
  EXPECT_EQ(discriminate_cascade(c, D, pyr).value().data, base);

  FeaturePyramid<double> bumped = pyr;
  Tensor<double> l1 = pyr.level(1).value();
  l1.data.array() += 0.3 * Eigen::ArrayXd::LinSpaced(l1.data.size(), -1, 1);
  bumped.levels[0] = Var<double>::constant(l1);
  EXPECT_GT((discriminate_cascade(c, D, bumped).value().data - base).norm(), 1e-9);
}

TEST(Network, EndToEndGradientMatchesFiniteDifferences) {
  for (auto kind : {DiscriminatorKind::Flatten, DiscriminatorKind::Cascade}) {
    const auto p = init_params<double>(tiny_config(kind), 8);
    const auto& c = p.config;
    const Tensor<double> img = images(2, c, 12);
    Tensor<double> gt(Shape{2, 1, 16, 16});
    gt.data.setLinSpaced(1.0, 9.0);
    std::vector<std::int32_t> labels(2 * 256);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 3);

    // Loss as a function of (enc2.w, dec1.w, score.w, first discriminator conv/linear weight).
    const std::string dname = kind == DiscriminatorKind::Flatten ? "fc1.w" : "block1.conv1.w";
    auto f = [&](const std::vector<Var<double>>& v) {
      BoundParams<double> Ep(p.extractor, false), Gp(p.depth_gen, false), Sp(p.seg_gen, false),
          Dp(p.discriminator, false);
      Ep.rebind("enc2.w", v[0]);
      Gp.rebind("dec1.w", v[1]);
      Sp.rebind("score.w", v[2]);
      Dp.rebind(dname, v[3]);
      auto pyr = encode(c, Ep, Var<double>::constant(img));
      auto gen = losses::gen_loss(discriminate(c, Dp, pyr));
      auto trip = losses::triplet_multi(pyr.slice(0, 1).levels, pyr.slice(1, 1).levels, pyr.slice(1, 1).levels,
                                        c.triplet(), losses::LossWeights{});
      auto depth = losses::depth_loss(decode_depth(c, Gp, pyr), gt);
      auto seg = losses::seg_cross_entropy(decode_seg(c, Sp, pyr), labels);
      return losses::total_gen_objective(gen, trip, depth, seg, losses::LossWeights{0.5, 0.1, 1.0});
    };
    const double err = dasgil::testing::gradient_error(
        f, {p.extractor.at("enc2.w"), p.depth_gen.at("dec1.w"), p.seg_gen.at("score.w"), p.discriminator.at(dname)},
        1e-6);
    EXPECT_LT(err, 1e-4) << to_string(kind);
  }
}
