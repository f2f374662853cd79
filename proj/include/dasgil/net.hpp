#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dasgil/ops.hpp"

namespace dasgil::net {

enum class DiscriminatorKind { Flatten, Cascade };

std::string to_string(DiscriminatorKind kind);
DiscriminatorKind discriminator_kind_from_string(const std::string& name);

// Flattened concatenation width of the reference 256x1024 eight-layer model; kept for
// documentation and only meaningful when the channel plan reproduces it.
inline constexpr long kReferenceFlattenWidth = 1004800;

struct NetConfig {
  int input_height = 256;
  int input_width = 1024;
  int input_channels = 3;
  int encoder_layers = 8;
  // Empty: (16, 32, 64, 64, 128, 128, 256, 256) scaled by width_multiplier, truncated.
  std::vector<int> channels_per_layer;
  double width_multiplier = 1.0;
  int class_count = 2;
  // Unset lists take the defaults clipped to the available layers.
  std::optional<std::vector<int>> depth_output_layers;
  std::optional<std::vector<int>> triplet_layers;
  std::optional<std::vector<int>> retrieval_layers;
  std::optional<std::vector<int>> discriminator_levels;
  DiscriminatorKind discriminator_kind = DiscriminatorKind::Flatten;
  std::array<int, 2> fd_hidden{64, 64};
  int cd_final_dim = 1536;
  double leaky_slope = 0.2;
  // Meters per unit of the softplus depth head.
  double depth_output_scale = 1.0;

  // Copy with every default filled in and every invariant checked (InvalidConfig).
  NetConfig resolved() const;

  int channels(int layer) const { return channels_per_layer.at(layer - 1); }
  int level_height(int layer) const { return input_height >> layer; }
  int level_width(int layer) const { return input_width >> layer; }
  long level_size(int layer) const { return long(channels(layer)) * level_height(layer) * level_width(layer); }
  long flatten_dim() const;

  const std::vector<int>& depth_layers() const { return *depth_output_layers; }
  const std::vector<int>& triplet() const { return *triplet_layers; }
  const std::vector<int>& retrieval() const { return *retrieval_layers; }
  const std::vector<int>& disc_levels() const { return *discriminator_levels; }

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

void to_json(nlohmann::json& j, const NetConfig& c);
void from_json(const nlohmann::json& j, NetConfig& c);

// Named tensors of one sub-network, ordered by name.
template <typename Scalar>
using ParamCollection = std::map<std::string, Tensor<Scalar>>;

template <typename Scalar>
struct ModelParams {
  ParamCollection<Scalar> extractor;
  ParamCollection<Scalar> depth_gen;
  ParamCollection<Scalar> seg_gen;
  ParamCollection<Scalar> discriminator;
  NetConfig config;
  int version = 1;

  bool all_finite() const {
    for (const auto* c : {&extractor, &depth_gen, &seg_gen, &discriminator})
      for (const auto& [name, t] : *c)
        if (!t.all_finite()) return false;
    return true;
  }

  template <typename Other>
  ModelParams<Other> cast() const {
    auto conv = [](const ParamCollection<Scalar>& c) {
      ParamCollection<Other> out;
      for (const auto& [name, t] : c) out.emplace(name, t.template cast<Other>());
      return out;
    };
    return {conv(extractor), conv(depth_gen), conv(seg_gen), conv(discriminator), config, version};
  }
};

// Parameters lifted onto the tape for one forward pass.
template <typename Scalar>
class BoundParams {
 public:
  BoundParams() = default;
  BoundParams(const ParamCollection<Scalar>& params, bool trainable) {
    for (const auto& [name, t] : params)
      vars_.emplace(name, trainable ? Var<Scalar>::parameter(t) : Var<Scalar>::constant(t));
  }

  const Var<Scalar>& operator[](const std::string& name) const {
    auto it = vars_.find(name);
    require(it != vars_.end(), ErrorCode::ShapeMismatch, "missing parameter '" + name + "'");
    return it->second;
  }

  ParamCollection<Scalar> grads() const {
    ParamCollection<Scalar> out;
    for (const auto& [name, v] : vars_) out.emplace(name, Tensor<Scalar>(v.shape(), v.grad()));
    return out;
  }

  const std::map<std::string, Var<Scalar>>& vars() const { return vars_; }

  // Replaces one binding, e.g. to probe a single tensor.
  void rebind(const std::string& name, Var<Scalar> var) {
    auto it = vars_.find(name);
    require(it != vars_.end() && it->second.shape() == var.shape(), ErrorCode::ShapeMismatch,
            "rebind: no parameter '" + name + "' of matching shape");
    it->second = std::move(var);
  }

 private:
  std::map<std::string, Var<Scalar>> vars_;
};

// Encoder output for a batch: levels[i] is layer i+1, shape (n, c_i, H/2^i, W/2^i).
template <typename Scalar>
struct FeaturePyramid {
  std::vector<Var<Scalar>> levels;

  const Var<Scalar>& level(int layer) const { return levels.at(layer - 1); }
  int batch() const { return levels.empty() ? 0 : levels.front().shape().n; }

  FeaturePyramid slice(int begin, int count) const {
    FeaturePyramid out;
    for (const auto& l : levels) out.levels.push_back(ops::slice_batch(l, begin, count));
    return out;
  }
  FeaturePyramid detach() const {
    FeaturePyramid out;
    for (const auto& l : levels) out.levels.push_back(l.detach());
    return out;
  }
};

template <typename Scalar>
FeaturePyramid<Scalar> concat_pyramids(const std::vector<FeaturePyramid<Scalar>>& parts) {
  FeaturePyramid<Scalar> out;
  for (std::size_t l = 0; l < parts.front().levels.size(); ++l) {
    std::vector<Var<Scalar>> items;
    for (const auto& p : parts) items.push_back(p.levels[l]);
    out.levels.push_back(ops::concat_batch(items));
  }
  return out;
}

namespace detail {

// Uniform in [-bound, bound) from 53 random bits; independent of the standard library's distributions.
inline double uniform(std::mt19937_64& rng, double bound) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return (2.0 * u - 1.0) * bound;
}

template <typename Scalar>
void add_conv(ParamCollection<Scalar>& c, const std::string& name, int out_c, int in_c, int k) {
  c.emplace(name + ".w", Tensor<Scalar>(Shape{out_c, in_c, k, k}));
  c.emplace(name + ".b", Tensor<Scalar>(Shape{1, out_c, 1, 1}));
}

template <typename Scalar>
void add_linear(ParamCollection<Scalar>& c, const std::string& name, int out, long in) {
  c.emplace(name + ".w", Tensor<Scalar>(Shape{out, static_cast<int>(in), 1, 1}));
  c.emplace(name + ".b", Tensor<Scalar>(Shape{1, out, 1, 1}));
}

template <typename Scalar>
void add_bn(ParamCollection<Scalar>& c, const std::string& name, long channels) {
  Tensor<Scalar> gamma(Shape{1, static_cast<int>(channels), 1, 1});
  gamma.data.setOnes();
  c.emplace(name + ".gamma", std::move(gamma));
  c.emplace(name + ".beta", Tensor<Scalar>(Shape{1, static_cast<int>(channels), 1, 1}));
}

// Kaiming-style uniform fill of every ".w" tensor; biases and norm shifts start at zero.
template <typename Scalar>
void fill(ParamCollection<Scalar>& c, std::mt19937_64& rng, double slope) {
  for (auto& [name, t] : c) {
    if (!name.ends_with(".w")) continue;
    const double fan_in = static_cast<double>(t.shape.per_sample());
    const double bound = std::sqrt(6.0 / ((1.0 + slope * slope) * fan_in));
    for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<Scalar>(uniform(rng, bound));
  }
}

template <typename Scalar>
void add_decoder_stages(ParamCollection<Scalar>& c, const NetConfig& cfg, int lowest) {
  int carried = cfg.channels(cfg.encoder_layers);
  for (int i = cfg.encoder_layers - 1; i >= lowest; --i) {
    add_conv(c, "dec" + std::to_string(i), cfg.channels(i), carried + cfg.channels(i), 3);
    carried = cfg.channels(i);
  }
}

template <typename Scalar>
Var<Scalar> conv(const BoundParams<Scalar>& p, const std::string& name, const Var<Scalar>& x, int stride, int pad) {
  return ops::conv2d(x, p[name + ".w"], p[name + ".b"], stride, pad);
}

template <typename Scalar>
Var<Scalar> dense(const BoundParams<Scalar>& p, const std::string& name, const Var<Scalar>& x) {
  return ops::linear(x, p[name + ".w"], p[name + ".b"]);
}

template <typename Scalar>
Var<Scalar> bn(const BoundParams<Scalar>& p, const std::string& name, const Var<Scalar>& x) {
  return ops::batch_norm(x, p[name + ".gamma"], p[name + ".beta"]);
}

template <typename Scalar>
void check_pyramid(const NetConfig& cfg, const FeaturePyramid<Scalar>& pyr) {
  require(static_cast<int>(pyr.levels.size()) == cfg.encoder_layers, ErrorCode::ShapeMismatch,
          "pyramid has " + std::to_string(pyr.levels.size()) + " levels, config expects " +
              std::to_string(cfg.encoder_layers));
  for (int l = 1; l <= cfg.encoder_layers; ++l) {
    const Shape s = pyr.level(l).shape();
    require(s.c == cfg.channels(l) && s.h == cfg.level_height(l) && s.w == cfg.level_width(l),
            ErrorCode::ShapeMismatch, "pyramid level " + std::to_string(l) + " has shape " + s.str());
  }
}

}  // namespace detail

template <typename Scalar>
ModelParams<Scalar> init_params(const NetConfig& config, std::uint64_t seed) {
  const NetConfig cfg = config.resolved();
  ModelParams<Scalar> p;
  p.config = cfg;
  const int L = cfg.encoder_layers;

  for (int i = 1; i <= L; ++i)
    detail::add_conv(p.extractor, "enc" + std::to_string(i), cfg.channels(i),
                     i == 1 ? cfg.input_channels : cfg.channels(i - 1), 3);

  const auto& depth_layers = cfg.depth_layers();
  const int lowest_depth = *std::min_element(depth_layers.begin(), depth_layers.end());
  detail::add_decoder_stages(p.depth_gen, cfg, lowest_depth);
  for (int layer : depth_layers) detail::add_conv(p.depth_gen, "head" + std::to_string(layer), 1, cfg.channels(layer), 1);

  detail::add_decoder_stages(p.seg_gen, cfg, 1);
  detail::add_conv(p.seg_gen, "final", cfg.channels(1), cfg.channels(1), 3);
  detail::add_conv(p.seg_gen, "score", cfg.class_count, cfg.channels(1), 1);

  if (cfg.discriminator_kind == DiscriminatorKind::Flatten) {
    long width = 0;
    for (int l : cfg.disc_levels()) width += cfg.level_size(l);
    detail::add_bn(p.discriminator, "bn", width);
    detail::add_linear(p.discriminator, "fc1", cfg.fd_hidden[0], width);
    detail::add_linear(p.discriminator, "fc2", cfg.fd_hidden[1], cfg.fd_hidden[0]);
    detail::add_linear(p.discriminator, "fc3", 1, cfg.fd_hidden[1]);
  } else {
    int carried = cfg.channels(1);
    for (int i = 1; i < L; ++i) {
      const std::string b = "block" + std::to_string(i);
      const int out = cfg.channels(i + 1);
      detail::add_conv(p.discriminator, b + ".conv1", out, carried, 3);
      detail::add_bn(p.discriminator, b + ".bn1", out);
      detail::add_conv(p.discriminator, b + ".conv2", out, out, 3);
      detail::add_bn(p.discriminator, b + ".bn2", out);
      detail::add_conv(p.discriminator, b + ".skip", out, carried, 1);
      carried = 2 * out;
    }
    const long flat = long(L > 1 ? carried : cfg.channels(1)) * cfg.level_height(L) * cfg.level_width(L);
    detail::add_linear(p.discriminator, "fc1", cfg.cd_final_dim, flat);
    detail::add_linear(p.discriminator, "fc2", 1, cfg.cd_final_dim);
  }

  std::mt19937_64 rng(seed);
  for (auto* c : {&p.extractor, &p.depth_gen, &p.seg_gen, &p.discriminator}) detail::fill(*c, rng, cfg.leaky_slope);
  return p;
}

// Images: (n, input_channels, H, W) normalised tensor on the tape.
template <typename Scalar>
FeaturePyramid<Scalar> encode(const NetConfig& cfg, const BoundParams<Scalar>& E, const Var<Scalar>& images) {
  const Shape s = images.shape();
  require(s.c == cfg.input_channels && s.h == cfg.input_height && s.w == cfg.input_width, ErrorCode::ShapeMismatch,
          "encode: image batch " + s.str() + " does not match configured input " +
              std::to_string(cfg.input_height) + "x" + std::to_string(cfg.input_width));
  FeaturePyramid<Scalar> pyr;
  Var<Scalar> x = images;
  const auto slope = static_cast<Scalar>(cfg.leaky_slope);
  for (int i = 1; i <= cfg.encoder_layers; ++i) {
    x = ops::leaky_relu(detail::conv(E, "enc" + std::to_string(i), x, 2, 1), slope);
    pyr.levels.push_back(x);
  }
  return pyr;
}

template <typename Scalar>
FeaturePyramid<Scalar> encode(const ModelParams<Scalar>& params, const Tensor<Scalar>& images) {
  return encode(params.config, BoundParams<Scalar>(params.extractor, false), Var<Scalar>::constant(images));
}

// Multi-scale depth: layer -> (n, 1, H/2^layer, W/2^layer), nonnegative.
template <typename Scalar>
std::map<int, Var<Scalar>> decode_depth(const NetConfig& cfg, const BoundParams<Scalar>& G,
                                        const FeaturePyramid<Scalar>& pyr) {
  detail::check_pyramid(cfg, pyr);
  const auto& layers = cfg.depth_layers();
  const int lowest = *std::min_element(layers.begin(), layers.end());
  const auto scale = static_cast<Scalar>(cfg.depth_output_scale);
  auto head = [&](int layer, const Var<Scalar>& x) {
    return ops::scale(ops::softplus(detail::conv(G, "head" + std::to_string(layer), x, 1, 0)), scale);
  };
  auto wanted = [&](int layer) { return std::find(layers.begin(), layers.end(), layer) != layers.end(); };

  std::map<int, Var<Scalar>> out;
  Var<Scalar> x = pyr.level(cfg.encoder_layers);
  if (wanted(cfg.encoder_layers)) out.emplace(cfg.encoder_layers, head(cfg.encoder_layers, x));
  for (int i = cfg.encoder_layers - 1; i >= lowest; --i) {
    x = ops::concat_channels<Scalar>({ops::upsample2x(x), pyr.level(i)});
    x = ops::relu(detail::conv(G, "dec" + std::to_string(i), x, 1, 1));
    if (wanted(i)) out.emplace(i, head(i, x));
  }
  return out;
}

// Raw class scores (n, M, H, W) at input resolution.
template <typename Scalar>
Var<Scalar> decode_seg(const NetConfig& cfg, const BoundParams<Scalar>& G, const FeaturePyramid<Scalar>& pyr) {
  detail::check_pyramid(cfg, pyr);
  Var<Scalar> x = pyr.level(cfg.encoder_layers);
  for (int i = cfg.encoder_layers - 1; i >= 1; --i) {
    x = ops::concat_channels<Scalar>({ops::upsample2x(x), pyr.level(i)});
    x = ops::relu(detail::conv(G, "dec" + std::to_string(i), x, 1, 1));
  }
  x = ops::relu(detail::conv(G, "final", ops::upsample2x(x), 1, 1));
  return detail::conv(G, "score", x, 1, 0);
}

// Flattened-concatenation discriminator: batch norm then three affine stages. Scores (n, 1, 1, 1).
template <typename Scalar>
Var<Scalar> discriminate_flatten(const NetConfig& cfg, const BoundParams<Scalar>& D,
                                 const FeaturePyramid<Scalar>& pyr) {
  detail::check_pyramid(cfg, pyr);
  std::vector<Var<Scalar>> parts;
  for (int l : cfg.disc_levels()) parts.push_back(ops::flatten(pyr.level(l)));
  const auto slope = static_cast<Scalar>(cfg.leaky_slope);
  Var<Scalar> x = detail::bn(D, "bn", ops::concat_channels(parts));
  x = ops::leaky_relu(detail::dense(D, "fc1", x), slope);
  x = ops::leaky_relu(detail::dense(D, "fc2", x), slope);
  return detail::dense(D, "fc3", x);
}

// Cascade discriminator: a strided residual block carries level i down to level i+1's
// resolution and channel count, where it is concatenated with level i+1.
template <typename Scalar>
Var<Scalar> discriminate_cascade(const NetConfig& cfg, const BoundParams<Scalar>& D,
                                 const FeaturePyramid<Scalar>& pyr) {
  detail::check_pyramid(cfg, pyr);
  const auto slope = static_cast<Scalar>(cfg.leaky_slope);
  Var<Scalar> carried = pyr.level(1);
  for (int i = 1; i < cfg.encoder_layers; ++i) {
    const std::string b = "block" + std::to_string(i);
    Var<Scalar> h = ops::leaky_relu(detail::bn(D, b + ".bn1", detail::conv(D, b + ".conv1", carried, 2, 1)), slope);
    h = detail::bn(D, b + ".bn2", detail::conv(D, b + ".conv2", h, 1, 1));
    Var<Scalar> r = ops::leaky_relu(ops::add(h, detail::conv(D, b + ".skip", carried, 2, 0)), slope);
    carried = ops::concat_channels<Scalar>({r, pyr.level(i + 1)});
  }
  Var<Scalar> x = ops::leaky_relu(detail::dense(D, "fc1", ops::flatten(carried)), slope);
  return detail::dense(D, "fc2", x);
}

template <typename Scalar>
Var<Scalar> discriminate(const NetConfig& cfg, const BoundParams<Scalar>& D, const FeaturePyramid<Scalar>& pyr) {
  return cfg.discriminator_kind == DiscriminatorKind::Flatten ? discriminate_flatten(cfg, D, pyr)
                                                              : discriminate_cascade(cfg, D, pyr);
}

}  // namespace dasgil::net
