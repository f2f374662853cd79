#include "dasgil/trainer.hpp"

#include <chrono>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "dasgil/binio.hpp"

namespace dasgil::train {

using nlohmann::json;
using net::BoundParams;
using net::FeaturePyramid;

void TrainConfig::validate() const {
  require(batch_size >= 1, ErrorCode::InvalidConfig, "batch_size must be at least 1");
  require(std::isfinite(learning_rate) && learning_rate >= 0, ErrorCode::InvalidConfig,
          "learning_rate must be finite and nonnegative");
  require(!discriminator_learning_rate || (std::isfinite(*discriminator_learning_rate) && *discriminator_learning_rate >= 0),
          ErrorCode::InvalidConfig, "discriminator_learning_rate must be finite and nonnegative");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0, ErrorCode::InvalidConfig,
          "invalid Adam hyperparameters");
  require(!epochs || *epochs >= 1, ErrorCode::InvalidConfig, "epochs must be at least 1");
  require(checkpoint_every >= 0, ErrorCode::InvalidConfig, "checkpoint_every must be nonnegative");
  require(!max_steps || *max_steps >= 0, ErrorCode::InvalidConfig, "max_steps must be nonnegative");
  weights.validate();
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"weights", c.weights},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every},
       {"log_path", c.log_path},
       {"checkpoint_path", c.checkpoint_path},
       {"use_depth", c.use_depth},
       {"use_seg", c.use_seg},
       {"use_gan", c.use_gan},
       {"random_crop", c.random_crop}};
  if (c.epochs) j["epochs"] = *c.epochs;
  if (c.discriminator_learning_rate) j["discriminator_learning_rate"] = *c.discriminator_learning_rate;
  if (c.max_steps) j["max_steps"] = *c.max_steps;
}

void from_json(const json& j, TrainConfig& c) {
  static const char* known[] = {"batch_size", "learning_rate", "beta1",    "beta2",   "adam_eps",    "epochs",
                                "weights",    "seed",          "checkpoint_every",    "log_path",    "checkpoint_path",
                                "use_depth",  "use_seg",       "use_gan",  "random_crop", "max_steps",
                                "discriminator_learning_rate"};
  for (const auto& [k, v] : j.items())
    require(std::find(std::begin(known), std::end(known), k) != std::end(known), ErrorCode::InvalidConfig,
            "unknown train key '" + k + "'");
  c = TrainConfig{};
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  if (j.contains("epochs") && !j.at("epochs").is_null()) c.epochs = j.at("epochs").get<int>();
  if (j.contains("discriminator_learning_rate") && !j.at("discriminator_learning_rate").is_null())
    c.discriminator_learning_rate = j.at("discriminator_learning_rate").get<double>();
  if (j.contains("weights")) c.weights = j.at("weights").get<losses::LossWeights>();
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.log_path = j.value("log_path", c.log_path);
  c.checkpoint_path = j.value("checkpoint_path", c.checkpoint_path);
  c.use_depth = j.value("use_depth", c.use_depth);
  c.use_seg = j.value("use_seg", c.use_seg);
  c.use_gan = j.value("use_gan", c.use_gan);
  c.random_crop = j.value("random_crop", c.random_crop);
  if (j.contains("max_steps") && !j.at("max_steps").is_null()) c.max_steps = j.at("max_steps").get<long>();
  c.validate();
}

void adam_step(const std::vector<AdamSlot>& slots, AdamState& state, const AdamHyper& h) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(h.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(h.beta2, double(state.t));
  const float b1 = float(h.beta1), b2 = float(h.beta2);
  const float step = float(h.lr / bc1), inv_bc2 = float(1.0 / bc2), eps = float(h.eps);
  for (const auto& slot : slots)
    for (auto& [name, p] : *slot.params) {
      const auto& g = slot.grads->at(name);
      require(g.shape == p.shape, ErrorCode::ShapeMismatch, "gradient shape differs for " + name);
      const std::string key = slot.prefix + name;
      auto m_it = state.m.find(key);
      if (m_it == state.m.end()) m_it = state.m.emplace(key, Tensor<float>(p.shape)).first;
      auto v_it = state.v.find(key);
      if (v_it == state.v.end()) v_it = state.v.emplace(key, Tensor<float>(p.shape)).first;
      auto& m = m_it->second.data;
      auto& v = v_it->second.data;
      m = b1 * m + (1.0f - b1) * g.data;
      v = b2 * v + (1.0f - b2) * g.data.cwiseAbs2();
      if (h.lr == 0.0) continue;
      p.data.array() -= step * m.array() / ((v.array() * inv_bc2).sqrt() + eps);
    }
}

namespace {

bool collections_equal(const Collection& a, const Collection& b) {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib)
    if (ia->first != ib->first || !bit_equal(ia->second, ib->second)) return false;
  return true;
}

const char* const kGroups[] = {"E/", "GD/", "GS/", "D/"};

std::vector<Collection*> groups(Params& p) { return {&p.extractor, &p.depth_gen, &p.seg_gen, &p.discriminator}; }
std::vector<const Collection*> groups(const Params& p) {
  return {&p.extractor, &p.depth_gen, &p.seg_gen, &p.discriminator};
}

}  // namespace

bool operator==(const TrainState& a, const TrainState& b) {
  const auto ga = groups(a.params), gb = groups(b.params);
  for (std::size_t i = 0; i < ga.size(); ++i)
    if (!collections_equal(*ga[i], *gb[i])) return false;
  return a.params.config == b.params.config && a.step == b.step && a.rng == b.rng && a.gen_opt.t == b.gen_opt.t &&
         a.dis_opt.t == b.dis_opt.t && collections_equal(a.gen_opt.m, b.gen_opt.m) &&
         collections_equal(a.gen_opt.v, b.gen_opt.v) && collections_equal(a.dis_opt.m, b.dis_opt.m) &&
         collections_equal(a.dis_opt.v, b.dis_opt.v);
}

TrainState init_state(const net::NetConfig& config, std::uint64_t seed) {
  TrainState s{net::init_params<float>(config.resolved(), seed), {}, {}, 0, derived_rng(seed, 0x5eed5eedull)};
  const auto g = groups(s.params);
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto& opt = i == 3 ? s.dis_opt : s.gen_opt;
    for (const auto& [name, t] : *g[i]) {
      opt.m.emplace(kGroups[i] + name, Tensor<float>(t.shape));
      opt.v.emplace(kGroups[i] + name, Tensor<float>(t.shape));
    }
  }
  return s;
}

// Batches.

BatchSource::BatchSource(const data::DatasetManifest& manifest, const net::NetConfig& net, const TrainConfig& config)
    : manifest_(&manifest),
      sampler_(manifest),
      cache_(manifest),
      real_(manifest.indices(data::Domain::Real)),
      batch_size_(config.batch_size),
      height_(net.input_height),
      width_(net.input_width),
      random_crop_(config.random_crop) {
  require(!real_.empty(), ErrorCode::EmptyDomain, "manifest has no real-domain records");
  require(!sampler_.anchors().empty(), ErrorCode::NoValidPositive, "no virtual record has a valid positive and negative");
}

std::vector<std::size_t> BatchSource::epoch_order(std::uint64_t seed, long epoch) const {
  std::vector<std::size_t> order = sampler_.anchors();
  Rng rng = derived_rng(seed, 0xe90c0000ull + std::uint64_t(epoch));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  return order;
}

data::SampleStack BatchSource::load(std::size_t index, Rng& rng) {
  const auto& s = cache_.get(index);
  if (s.height() == height_ && s.width() == width_) return s;
  return data::crop_to_shape(s, height_, width_, random_crop_ ? &rng : nullptr);
}

BatchBundle BatchSource::assemble(const std::vector<std::size_t>& anchors, Rng& rng) {
  const int B = int(anchors.size());
  require(B >= 1, ErrorCode::EmptyBatch, "empty batch");
  const Shape img{B, 3, height_, width_};
  BatchBundle b{Tensor<float>(img), Tensor<float>(img), Tensor<float>(img), Tensor<float>(img),
                Tensor<float>(Shape{B, 1, height_, width_}), {}, {}, {}};
  b.anchor_labels.reserve(std::size_t(B) * height_ * width_);
  for (int i = 0; i < B; ++i) {
    const auto t = sampler_.sample_for(anchors[i], rng);
    auto a = load(t.anchor, rng), p = load(t.positive, rng);
    data::augment_pair(a, p, rng);
    const auto n = data::flip_horizontal(load(t.negative, rng));
    require(a.depth && a.labels, ErrorCode::VirtualMissingGroundTruth, "anchor without ground truth");
    data::put_sample(b.anchors, i, data::to_tensor(a.rgb));
    data::put_sample(b.positives, i, data::to_tensor(p.rgb));
    data::put_sample(b.negatives, i, data::to_tensor(n.rgb));
    std::copy(a.depth->data.begin(), a.depth->data.end(), b.anchor_depth.sample_ptr(i));
    b.anchor_labels.insert(b.anchor_labels.end(), a.labels->data.begin(), a.labels->data.end());
    b.triplets.push_back(sampler_.to_spec(t));
  }
  for (int i = 0; i < B; ++i) {
    const auto r = real_[uniform_index(rng, real_.size())];
    data::put_sample(b.real, i, data::to_tensor(load(r, rng).rgb));
    b.real_ids.push_back(manifest_->records[r].id);
  }
  return b;
}

BatchBundle BatchSource::assemble_random(Rng& rng) {
  std::vector<std::size_t> anchors;
  for (int i = 0; i < batch_size_; ++i) anchors.push_back(sampler_.anchors()[uniform_index(rng, sampler_.anchors().size())]);
  return assemble(anchors, rng);
}

BatchBundle assemble_batch(const data::DatasetManifest& manifest, const net::NetConfig& net, const TrainConfig& config,
                           Rng& rng) {
  BatchSource src(manifest, net, config);
  return src.assemble_random(rng);
}

// Steps.

json to_json(const StepLog& l) {
  return {{"step", l.step}, {"L_dis", l.L_dis}, {"L_gen", l.L_gen}, {"L_T", l.L_T}, {"L_D", l.L_D},
          {"L_S", l.L_S},   {"total", l.total}, {"wallclock_ms", l.wallclock_ms}};
}

StepLog train_step(TrainState& state, const BatchBundle& batch, const TrainConfig& config, const PhaseHook& hook) {
  const auto start = std::chrono::steady_clock::now();
  const net::NetConfig& nc = state.params.config;
  const int B = batch.size();
  const AdamHyper hyper{config.learning_rate, config.beta1, config.beta2, config.adam_eps};
  StepLog log;
  log.step = state.step + 1;
  auto finite = [&](const char* name, double v) {
    require(std::isfinite(v), ErrorCode::NonFiniteLoss,
            "step " + std::to_string(log.step) + ": " + name + " = " + std::to_string(v));
  };

  Tensor<float> images(Shape{4 * B, 3, nc.input_height, nc.input_width});
  const auto per = batch.anchors.data.size();
  images.data.segment(0, per) = batch.anchors.data;
  images.data.segment(per, per) = batch.positives.data;
  images.data.segment(2 * per, per) = batch.negatives.data;
  images.data.segment(3 * per, per) = batch.real.data;

  BoundParams<float> E(state.params.extractor, true);
  const auto pyr = net::encode(nc, E, Var<float>::constant(images));
  const auto anchor = pyr.slice(0, B), positive = pyr.slice(B, B), negative = pyr.slice(2 * B, B),
             real = pyr.slice(3 * B, B);

  if (config.use_gan) {
    BoundParams<float> D(state.params.discriminator, true);
    const auto scores = net::discriminate(nc, D, net::concat_pyramids<float>({anchor.detach(), real.detach()}));
    const auto l_dis = losses::dis_loss(ops::slice_batch(scores, 0, B), ops::slice_batch(scores, B, B));
    log.L_dis = l_dis.item();
    finite("L_dis", log.L_dis);
    backward(l_dis);
    const auto grads = D.grads();
    AdamHyper dis_hyper = hyper;
    dis_hyper.lr = config.discriminator_learning_rate.value_or(config.learning_rate);
    adam_step({{"D/", &state.params.discriminator, &grads}}, state.dis_opt, dis_hyper);
  }
  if (hook) hook(Phase::Discriminator, state);

  const auto zero = Var<float>::constant(Tensor<float>::scalar(0.0f));
  Var<float> gen = zero, depth = zero, seg = zero;
  if (config.use_gan) {
    BoundParams<float> D(state.params.discriminator, false);
    const auto scores = net::discriminate(nc, D, net::concat_pyramids<float>({anchor, real}));
    gen = losses::gen_loss(ops::slice_batch(scores, 0, B));
  }
  const auto triplet = losses::triplet_multi(anchor.levels, positive.levels, negative.levels, nc.triplet(), config.weights);
  BoundParams<float> GD, GS;
  if (config.use_depth) {
    GD = BoundParams<float>(state.params.depth_gen, true);
    depth = losses::depth_loss(net::decode_depth(nc, GD, anchor), batch.anchor_depth);
  }
  if (config.use_seg) {
    GS = BoundParams<float>(state.params.seg_gen, true);
    seg = losses::seg_cross_entropy(net::decode_seg(nc, GS, anchor), batch.anchor_labels);
  }
  log.L_gen = gen.item();
  log.L_T = triplet.item();
  log.L_D = depth.item();
  log.L_S = seg.item();
  finite("L_gen", log.L_gen);
  finite("L_T", log.L_T);
  finite("L_D", log.L_D);
  finite("L_S", log.L_S);
  const auto total = losses::total_gen_objective(gen, triplet, depth, seg, config.weights);
  log.total = total.item();
  finite("total", log.total);
  backward(total);
  const auto ge = E.grads();
  std::vector<AdamSlot> slots{{"E/", &state.params.extractor, &ge}};
  Collection gd, gs;
  if (config.use_depth) {
    gd = GD.grads();
    slots.push_back({"GD/", &state.params.depth_gen, &gd});
  }
  if (config.use_seg) {
    gs = GS.grads();
    slots.push_back({"GS/", &state.params.seg_gen, &gs});
  }
  adam_step(slots, state.gen_opt, hyper);
  if (hook) hook(Phase::Generator, state);

  ++state.step;
  log.wallclock_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return log;
}

TrainResult train(const data::DatasetManifest& manifest, const net::NetConfig& net_config, const TrainConfig& config,
                  std::optional<TrainState> resume) {
  config.validate();
  const net::NetConfig nc = net_config.resolved();
  require(!manifest.indices(data::Domain::Real).empty(), ErrorCode::EmptyDomain, "manifest has no real-domain records");
  BatchSource source(manifest, nc, config);
  const long spe = source.steps_per_epoch();
  require(spe >= 1, ErrorCode::EmptyBatch,
          "batch size " + std::to_string(config.batch_size) + " exceeds " + std::to_string(source.anchor_count()) +
              " anchor candidates");
  long total = long(config.epochs_for(nc.discriminator_kind)) * spe;
  if (config.max_steps) total = std::min(total, *config.max_steps);

  TrainResult result{resume ? std::move(*resume) : init_state(nc, config.seed), {}};
  TrainState& state = result.state;
  require(state.params.config == nc, ErrorCode::VersionMismatch, "resume state was trained with a different NetConfig");

  std::ofstream log_file;
  if (!config.log_path.empty()) {
    log_file.open(config.log_path, state.step > 0 ? std::ios::app : std::ios::trunc);
    require(log_file.good(), ErrorCode::IoError, "cannot write " + config.log_path);
  }
  long order_epoch = -1;
  std::vector<std::size_t> order;
  while (state.step < total) {
    const long epoch = state.step / spe, offset = state.step % spe;
    if (epoch != order_epoch) {
      order = source.epoch_order(config.seed, epoch);
      order_epoch = epoch;
    }
    const auto first = order.begin() + offset * config.batch_size;
    const auto batch = source.assemble({first, first + config.batch_size}, state.rng);
    const auto log = train_step(state, batch, config);
    if (log_file.is_open()) log_file << to_json(log).dump() << '\n' << std::flush;
    result.log.push_back(log);
    if (config.checkpoint_every > 0 && !config.checkpoint_path.empty() && state.step % config.checkpoint_every == 0)
      save_checkpoint(state, config.checkpoint_path);
  }
  if (!config.checkpoint_path.empty()) save_checkpoint(state, config.checkpoint_path);
  return result;
}

// Checkpoints.

namespace {

constexpr char kCheckpointMagic[4] = {'D', 'G', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kEndMarker[4] = {'E', 'N', 'D', '!'};

void write_collection(binio::Writer& w, const std::string& prefix, const Collection& c) {
  for (const auto& [name, t] : c) {
    w.str(prefix + name);
    for (int d : {t.shape.n, t.shape.c, t.shape.h, t.shape.w}) w.i32(d);
    w.f32(t.data.data(), std::size_t(t.data.size()));
  }
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  binio::Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(json(state.params.config).dump());
  w.u64(std::uint64_t(state.step));
  std::ostringstream rng;
  rng << state.rng;
  w.str(rng.str());
  w.u64(std::uint64_t(state.gen_opt.t));
  w.u64(std::uint64_t(state.dis_opt.t));
  const auto g = groups(state.params);
  std::uint32_t count = std::uint32_t(state.gen_opt.m.size() + state.gen_opt.v.size() + state.dis_opt.m.size() +
                                      state.dis_opt.v.size());
  for (const auto* c : g) count += std::uint32_t(c->size());
  w.u32(count);
  for (std::size_t i = 0; i < g.size(); ++i) write_collection(w, std::string("param/") + kGroups[i], *g[i]);
  write_collection(w, "gen_m/", state.gen_opt.m);
  write_collection(w, "gen_v/", state.gen_opt.v);
  write_collection(w, "dis_m/", state.dis_opt.m);
  write_collection(w, "dis_v/", state.dis_opt.v);
  w.bytes(kEndMarker, 4);
  w.save(path);
}

TrainState load_checkpoint(const std::filesystem::path& path, const net::NetConfig* expected) {
  auto r = binio::Reader::open(path);
  char magic[4];
  r.bytes(magic, 4);
  require(std::memcmp(magic, kCheckpointMagic, 4) == 0, ErrorCode::VersionMismatch, path.string() + " is not a checkpoint");
  const auto version = r.u32();
  require(version == kCheckpointVersion, ErrorCode::VersionMismatch,
          "checkpoint format " + std::to_string(version) + " is not supported");
  TrainState s;
  try {
    s.params.config = json::parse(r.str()).get<net::NetConfig>();
  } catch (const json::exception& e) {
    fail(ErrorCode::VersionMismatch, std::string("unreadable network configuration: ") + e.what());
  }
  if (expected)
    require(s.params.config == expected->resolved(), ErrorCode::VersionMismatch,
            "checkpoint network configuration differs from the requested one");
  s.step = long(r.u64());
  std::istringstream rng(r.str());
  rng >> s.rng;
  require(!rng.fail(), ErrorCode::VersionMismatch, "unreadable rng state");
  s.gen_opt.t = long(r.u64());
  s.dis_opt.t = long(r.u64());
  const auto count = r.u32();
  auto g = groups(s.params);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str();
    Shape shape;
    shape.n = r.i32();
    shape.c = r.i32();
    shape.h = r.i32();
    shape.w = r.i32();
    require(shape.n >= 0 && shape.c >= 0 && shape.h >= 0 && shape.w >= 0, ErrorCode::IoError, "corrupt tensor shape");
    Tensor<float> t(shape);
    r.f32(t.data.data(), std::size_t(t.data.size()));
    const auto slash = name.find('/');
    const std::string kind = name.substr(0, slash), rest = name.substr(slash + 1);
    if (kind == "param") {
      bool placed = false;
      for (std::size_t i = 0; i < g.size() && !placed; ++i)
        if (rest.rfind(kGroups[i], 0) == 0) {
          g[i]->emplace(rest.substr(std::strlen(kGroups[i])), std::move(t));
          placed = true;
        }
      require(placed, ErrorCode::VersionMismatch, "unknown parameter group in '" + name + "'");
    } else if (kind == "gen_m") {
      s.gen_opt.m.emplace(rest, std::move(t));
    } else if (kind == "gen_v") {
      s.gen_opt.v.emplace(rest, std::move(t));
    } else if (kind == "dis_m") {
      s.dis_opt.m.emplace(rest, std::move(t));
    } else if (kind == "dis_v") {
      s.dis_opt.v.emplace(rest, std::move(t));
    } else {
      fail(ErrorCode::VersionMismatch, "unknown checkpoint entry '" + name + "'");
    }
  }
  char end[4];
  r.bytes(end, 4);
  require(std::memcmp(end, kEndMarker, 4) == 0 && r.at_end(), ErrorCode::IoError, "checkpoint trailer missing");
  // Parameter shapes must match what this configuration builds.
  const auto fresh = net::init_params<float>(s.params.config, 0);
  const auto fg = groups(fresh);
  for (std::size_t i = 0; i < g.size(); ++i) {
    require(g[i]->size() == fg[i]->size(), ErrorCode::VersionMismatch, "parameter set differs from configuration");
    for (const auto& [name, t] : *fg[i]) {
      auto it = g[i]->find(name);
      require(it != g[i]->end() && it->second.shape == t.shape, ErrorCode::VersionMismatch,
              "parameter '" + name + "' missing or misshapen");
    }
  }
  return s;
}

}  // namespace dasgil::train
