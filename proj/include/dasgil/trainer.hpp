#pragma once

#include <filesystem>
#include <functional>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <vector>

#include "dasgil/dataman.hpp"
#include "dasgil/losses.hpp"
#include "dasgil/net.hpp"
#include "dasgil/random.hpp"

namespace dasgil::train {

using Params = net::ModelParams<float>;
using Collection = net::ParamCollection<float>;

struct TrainConfig {
  int batch_size = 8;
  double learning_rate = 0.005;
  // Unset: same as learning_rate.
  std::optional<double> discriminator_learning_rate;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Unset: 5 for the flatten discriminator, 40 for the cascade one.
  std::optional<int> epochs;
  losses::LossWeights weights;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: only at the end
  std::string log_path;
  std::string checkpoint_path;
  bool use_depth = true;
  bool use_seg = true;
  bool use_gan = true;
  bool random_crop = false;
  std::optional<long> max_steps;  // stop early once the global step reaches this

  int epochs_for(net::DiscriminatorKind kind) const {
    return epochs.value_or(kind == net::DiscriminatorKind::Flatten ? 5 : 40);
  }
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// First and second moments for one parameter group; keys are "<collection>/<name>".
struct AdamState {
  Collection m;
  Collection v;
  long t = 0;
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct AdamHyper {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamSlot {
  std::string prefix;
  Collection* params;
  const Collection* grads;
};

// One bias-corrected Adam update over all slots of a group. lr == 0 leaves params bit-identical.
void adam_step(const std::vector<AdamSlot>& slots, AdamState& state, const AdamHyper& h);

struct TrainState {
  Params params;
  AdamState gen_opt;  // extractor, depth and segmentation generators
  AdamState dis_opt;  // discriminator
  long step = 0;
  Rng rng;

  friend bool operator==(const TrainState& a, const TrainState& b);
};

TrainState init_state(const net::NetConfig& config, std::uint64_t seed);

struct BatchBundle {
  Tensor<float> anchors;    // (B, 3, H, W)
  Tensor<float> positives;  // (B, 3, H, W)
  Tensor<float> negatives;  // (B, 3, H, W), mirrored
  Tensor<float> real;       // (B, 3, H, W)
  Tensor<float> anchor_depth;              // (B, 1, H, W) metres, 0 invalid
  std::vector<std::int32_t> anchor_labels;  // B*H*W, sample-major then row-major
  std::vector<data::TripletSpec> triplets;
  std::vector<std::string> real_ids;

  int size() const { return anchors.shape.n; }
};

// Draws batches from a manifest: triplets for the virtual side, uniform draws for the real side.
class BatchSource {
 public:
  BatchSource(const data::DatasetManifest& manifest, const net::NetConfig& net, const TrainConfig& config);

  const data::TripletSampler& sampler() const { return sampler_; }
  // Anchor candidates; one epoch visits each once.
  std::size_t anchor_count() const { return sampler_.anchors().size(); }
  long steps_per_epoch() const { return long(anchor_count()) / batch_size_; }
  // Deterministic anchor order for an epoch.
  std::vector<std::size_t> epoch_order(std::uint64_t seed, long epoch) const;

  BatchBundle assemble(const std::vector<std::size_t>& anchors, Rng& rng);
  BatchBundle assemble_random(Rng& rng);

 private:
  data::SampleStack load(std::size_t index, Rng& rng);

  const data::DatasetManifest* manifest_;
  data::TripletSampler sampler_;
  data::SampleCache cache_;
  std::vector<std::size_t> real_;
  int batch_size_;
  int height_;
  int width_;
  bool random_crop_;
};

BatchBundle assemble_batch(const data::DatasetManifest& manifest, const net::NetConfig& net, const TrainConfig& config,
                           Rng& rng);

struct StepLog {
  long step = 0;
  double L_dis = 0;
  double L_gen = 0;
  double L_T = 0;
  double L_D = 0;
  double L_S = 0;
  double total = 0;
  double wallclock_ms = 0;
};

nlohmann::json to_json(const StepLog& log);

enum class Phase { Discriminator, Generator };
using PhaseHook = std::function<void(Phase, const TrainState&)>;

// Discriminator update on detached features, then generator update against the updated, frozen discriminator.
StepLog train_step(TrainState& state, const BatchBundle& batch, const TrainConfig& config, const PhaseHook& hook = {});

struct TrainResult {
  TrainState state;
  std::vector<StepLog> log;
};

// Runs epochs x steps_per_epoch steps, continuing from `resume` when given.
TrainResult train(const data::DatasetManifest& manifest, const net::NetConfig& net, const TrainConfig& config,
                  std::optional<TrainState> resume = std::nullopt);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
// `expected`, when given, must equal the stored network configuration (VersionMismatch otherwise).
TrainState load_checkpoint(const std::filesystem::path& path, const net::NetConfig* expected = nullptr);

}  // namespace dasgil::train
