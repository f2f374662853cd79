#include <algorithm>

#include "dasgil/net.hpp"

namespace dasgil::net {

namespace {

constexpr std::array<int, 8> kChannelPlan{16, 32, 64, 64, 128, 128, 256, 256};

// Default layer lists keep only the layers that exist; an emptied list falls back to the deepest layer.
std::vector<int> clip(std::vector<int> layers, int available) {
  std::erase_if(layers, [&](int l) { return l < 1 || l > available; });
  if (layers.empty()) layers.push_back(available);
  return layers;
}

void check_layers(const std::vector<int>& layers, int available, const char* what) {
  require(!layers.empty(), ErrorCode::InvalidConfig, std::string(what) + " is empty");
  for (int l : layers)
    require(l >= 1 && l <= available, ErrorCode::InvalidConfig,
            std::string(what) + " contains layer " + std::to_string(l) + " outside [1, " +
                std::to_string(available) + "]");
  auto sorted = layers;
  std::sort(sorted.begin(), sorted.end());
  require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), ErrorCode::InvalidConfig,
          std::string(what) + " repeats a layer");
}

}  // namespace

std::string to_string(DiscriminatorKind kind) { return kind == DiscriminatorKind::Flatten ? "flatten" : "cascade"; }

DiscriminatorKind discriminator_kind_from_string(const std::string& name) {
  if (name == "flatten" || name == "fd") return DiscriminatorKind::Flatten;
  if (name == "cascade" || name == "cd") return DiscriminatorKind::Cascade;
  fail(ErrorCode::InvalidConfig, "unknown discriminator kind '" + name + "'");
}

NetConfig NetConfig::resolved() const {
  NetConfig c = *this;
  const int L = c.encoder_layers;
  require(L >= 1 && L <= 8, ErrorCode::InvalidConfig, "encoder_layers must be in [1, 8]");
  require(c.input_channels >= 1, ErrorCode::InvalidConfig, "input_channels must be positive");
  require(c.input_height > 0 && c.input_width > 0 && c.input_height % (1 << L) == 0 &&
              c.input_width % (1 << L) == 0,
          ErrorCode::InvalidConfig,
          "input " + std::to_string(c.input_height) + "x" + std::to_string(c.input_width) +
              " is not divisible by 2^" + std::to_string(L));
  require(c.class_count >= 2, ErrorCode::InvalidConfig, "class_count must be at least 2");
  require(c.width_multiplier > 0, ErrorCode::InvalidConfig, "width_multiplier must be positive");
  require(c.fd_hidden[0] > 0 && c.fd_hidden[1] > 0 && c.cd_final_dim > 0, ErrorCode::InvalidConfig,
          "discriminator widths must be positive");
  require(c.depth_output_scale > 0, ErrorCode::InvalidConfig, "depth_output_scale must be positive");

  if (c.channels_per_layer.empty())
    for (int i = 0; i < L; ++i)
      c.channels_per_layer.push_back(std::max(1, static_cast<int>(std::lround(kChannelPlan[i] * c.width_multiplier))));
  require(static_cast<int>(c.channels_per_layer.size()) == L, ErrorCode::InvalidConfig,
          "channels_per_layer must list one entry per encoder layer");
  for (int ch : c.channels_per_layer) require(ch > 0, ErrorCode::InvalidConfig, "channel counts must be positive");

  if (!c.depth_output_layers) c.depth_output_layers = clip({4, 3, 2, 1}, L);
  if (!c.triplet_layers) c.triplet_layers = clip({3, 4, 5, 6}, L);
  if (!c.retrieval_layers)
    c.retrieval_layers = clip(c.discriminator_kind == DiscriminatorKind::Flatten ? std::vector<int>{5, 6}
                                                                                  : std::vector<int>{5},
                              L);
  if (!c.discriminator_levels) {
    c.discriminator_levels.emplace();
    for (int i = 1; i <= L; ++i) c.discriminator_levels->push_back(i);
  }
  check_layers(*c.depth_output_layers, L, "depth_output_layers");
  check_layers(*c.triplet_layers, L, "triplet_layers");
  check_layers(*c.retrieval_layers, L, "retrieval_layers");
  check_layers(*c.discriminator_levels, L, "discriminator_levels");
  return c;
}

long NetConfig::flatten_dim() const {
  long total = 0;
  for (int l = 1; l <= encoder_layers; ++l) total += level_size(l);
  return total;
}

void to_json(nlohmann::json& j, const NetConfig& c) {
  j = nlohmann::json{{"input_height", c.input_height},
                     {"input_width", c.input_width},
                     {"input_channels", c.input_channels},
                     {"encoder_layers", c.encoder_layers},
                     {"channels_per_layer", c.channels_per_layer},
                     {"width_multiplier", c.width_multiplier},
                     {"class_count", c.class_count},
                     {"discriminator_kind", to_string(c.discriminator_kind)},
                     {"fd_hidden", c.fd_hidden},
                     {"cd_final_dim", c.cd_final_dim},
                     {"leaky_slope", c.leaky_slope},
                     {"depth_output_scale", c.depth_output_scale}};
  auto opt = [&](const char* key, const std::optional<std::vector<int>>& v) {
    if (v) j[key] = *v;
  };
  opt("depth_output_layers", c.depth_output_layers);
  opt("triplet_layers", c.triplet_layers);
  opt("retrieval_layers", c.retrieval_layers);
  opt("discriminator_levels", c.discriminator_levels);
}

void from_json(const nlohmann::json& j, NetConfig& c) {
  static const std::vector<std::string> known{
      "input_height",       "input_width",    "input_channels", "encoder_layers",   "channels_per_layer",
      "width_multiplier",   "class_count",    "discriminator_kind", "fd_hidden",    "cd_final_dim",
      "leaky_slope",        "depth_output_scale", "depth_output_layers", "triplet_layers", "retrieval_layers",
      "discriminator_levels"};
  for (const auto& [key, value] : j.items())
    require(std::find(known.begin(), known.end(), key) != known.end(), ErrorCode::InvalidConfig,
            "unknown net config key '" + key + "'");
  c.input_height = j.value("input_height", c.input_height);
  c.input_width = j.value("input_width", c.input_width);
  c.input_channels = j.value("input_channels", c.input_channels);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.channels_per_layer = j.value("channels_per_layer", c.channels_per_layer);
  c.width_multiplier = j.value("width_multiplier", c.width_multiplier);
  c.class_count = j.value("class_count", c.class_count);
  if (j.contains("discriminator_kind"))
    c.discriminator_kind = discriminator_kind_from_string(j.at("discriminator_kind").get<std::string>());
  c.fd_hidden = j.value("fd_hidden", c.fd_hidden);
  c.cd_final_dim = j.value("cd_final_dim", c.cd_final_dim);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.depth_output_scale = j.value("depth_output_scale", c.depth_output_scale);
  auto opt = [&](const char* key, std::optional<std::vector<int>>& v) {
    if (j.contains(key)) v = j.at(key).get<std::vector<int>>();
  };
  opt("depth_output_layers", c.depth_output_layers);
  opt("triplet_layers", c.triplet_layers);
  opt("retrieval_layers", c.retrieval_layers);
  opt("discriminator_levels", c.discriminator_levels);
}

}  // namespace dasgil::net
