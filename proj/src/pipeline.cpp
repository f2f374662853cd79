#include "dasgil/pipeline.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dasgil/error.hpp"

namespace dasgil::pipeline {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> known, const std::string& section) {
  require(j.is_object(), ErrorCode::InvalidConfig, section + " must be an object");
  for (const auto& [k, v] : j.items())
    require(std::any_of(known.begin(), known.end(), [&](const char* n) { return k == n; }), ErrorCode::InvalidConfig,
            "unknown " + section + " key '" + k + "'");
}

template <typename T>
T get_or_throw(const json& j, const std::string& what) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, what + ": " + e.what());
  }
}

}  // namespace

void to_json(json& j, const EvalConfig& c) {
  j = {{"metric", retrieval::to_string(c.metric)},
       {"normalize_l1", c.normalize_l1},
       {"concat_cosine", c.concat_cosine},
       {"database_environment", c.database_environment},
       {"radius_m", c.radius_m},
       {"recall_ns", c.recall_ns},
       {"distance_thresholds", c.distance_thresholds},
       {"plots", c.plots}};
  if (c.layers) j["layers"] = *c.layers;
}

void from_json(const json& j, EvalConfig& c) {
  check_keys(j,
             {"metric", "normalize_l1", "concat_cosine", "layers", "database_environment", "radius_m", "recall_ns",
              "distance_thresholds", "plots"},
             "eval");
  c = EvalConfig{};
  if (j.contains("metric")) c.metric = retrieval::metric_from_string(j.at("metric").get<std::string>());
  c.normalize_l1 = j.value("normalize_l1", c.normalize_l1);
  c.concat_cosine = j.value("concat_cosine", c.concat_cosine);
  if (j.contains("layers") && !j.at("layers").is_null()) c.layers = j.at("layers").get<std::vector<int>>();
  c.database_environment = j.value("database_environment", c.database_environment);
  c.radius_m = j.value("radius_m", c.radius_m);
  if (j.contains("recall_ns")) c.recall_ns = j.at("recall_ns").get<std::vector<int>>();
  if (j.contains("distance_thresholds")) c.distance_thresholds = j.at("distance_thresholds").get<std::vector<double>>();
  c.plots = j.value("plots", c.plots);
}

void RunConfig::validate() const {
  const auto n = net.resolved();
  train.validate();
  toy.validate();
  require(eval.radius_m > 0, ErrorCode::InvalidConfig, "eval.radius_m must be positive");
  require(!eval.recall_ns.empty() && std::is_sorted(eval.recall_ns.begin(), eval.recall_ns.end()) &&
              std::adjacent_find(eval.recall_ns.begin(), eval.recall_ns.end()) == eval.recall_ns.end() &&
              eval.recall_ns.front() >= 1,
          ErrorCode::InvalidConfig, "eval.recall_ns must be strictly increasing positive integers");
  const auto& d = eval.distance_thresholds;
  require(!d.empty() && std::adjacent_find(d.begin(), d.end(), std::greater_equal<>()) == d.end() && d.front() > 0,
          ErrorCode::InvalidConfig, "eval.distance_thresholds must be strictly increasing and positive");
  for (int l : retrieval_layers())
    require(l >= 1 && l <= n.encoder_layers, ErrorCode::InvalidConfig,
            "eval.layers entry " + std::to_string(l) + " outside 1.." + std::to_string(n.encoder_layers));
  require(n.class_count == toy.class_count, ErrorCode::InvalidConfig,
          "net.class_count (" + std::to_string(n.class_count) + ") differs from toy.class_count (" +
              std::to_string(toy.class_count) + ")");
  require(n.input_height <= toy.image_height && n.input_width <= toy.image_width, ErrorCode::InvalidConfig,
          "network input is larger than the toy images");
  require(!data_dir.empty() && !out_dir.empty(), ErrorCode::InvalidConfig, "data_dir and out_dir must be set");
}

json to_json(const RunConfig& c) {
  return {{"net", c.net}, {"train", c.train}, {"toy", c.toy}, {"eval", c.eval}, {"data_dir", c.data_dir},
          {"out_dir", c.out_dir}};
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, {"net", "train", "toy", "eval", "data_dir", "out_dir"}, "config");
  RunConfig c;
  if (j.contains("net")) c.net = get_or_throw<net::NetConfig>(j.at("net"), "net");
  if (j.contains("train")) c.train = get_or_throw<train::TrainConfig>(j.at("train"), "train");
  if (j.contains("toy")) c.toy = get_or_throw<toy::ToyWorldConfig>(j.at("toy"), "toy");
  if (j.contains("eval")) c.eval = get_or_throw<EvalConfig>(j.at("eval"), "eval");
  c.data_dir = get_or_throw<std::string>(j.value("data_dir", json(c.data_dir)), "data_dir");
  c.out_dir = get_or_throw<std::string>(j.value("out_dir", json(c.out_dir)), "out_dir");
  return c;
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string_view::npos && eq > 0, ErrorCode::InvalidConfig,
          "override '" + std::string(assignment) + "' is not of the form key=value");
  const std::string key(assignment.substr(0, eq)), text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require(!part.empty(), ErrorCode::InvalidConfig, "empty path component in '" + key + "'");
    if (node->is_null()) *node = json::object();
    require(node->is_object(), ErrorCode::InvalidConfig, "'" + key + "' descends into a non-object");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides) {
  json doc = to_json(toy_study_config());
  if (path) {
    std::ifstream in(*path);
    require(in.good(), ErrorCode::MissingFile, path->string());
    json file = json::parse(in, nullptr, false);
    require(!file.is_discarded() && file.is_object(), ErrorCode::InvalidConfig, path->string() + " is not a JSON object");
    doc.merge_patch(file);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  auto cfg = run_config_from_json(doc);
  cfg.validate();
  return cfg;
}

RunConfig toy_study_config() {
  RunConfig c;
  c.net.input_height = 64;
  c.net.input_width = 64;
  c.net.encoder_layers = 5;
  c.net.width_multiplier = 0.5;
  c.net.class_count = toy::kNaturalClassCount;
  c.net.triplet_layers = std::vector<int>{3, 4, 5};
  c.net.retrieval_layers = std::vector<int>{4, 5};
  c.net.depth_output_scale = 10.0;
  c.train.batch_size = 8;
  c.train.learning_rate = 2e-4;
  c.train.epochs = 30;
  c.train.weights.lambda_D = 0.1;
  // Toy frames are 2 m apart and sequences 500 m apart, so distances shrink by a factor of ten.
  c.eval.radius_m = 2.5;
  c.eval.recall_ns = {1, 2, 3, 5, 10};
  c.eval.distance_thresholds.clear();
  for (int d = 15; d <= 50; d += 5) c.eval.distance_thresholds.push_back(d / 10.0);
  return c;
}

std::vector<std::string> training_variants() {
  return {"depth-only", "seg-only", "no-gan", "single-fd", "multi-fd", "multi-cd", "single-triplet", "multi-triplet"};
}

std::vector<std::string> retrieval_variants() { return {"retrieval-single", "retrieval-multi"}; }

bool is_retrieval_variant(const std::string& name) {
  const auto r = retrieval_variants();
  return std::find(r.begin(), r.end(), name) != r.end();
}

RunConfig apply_variant(RunConfig c, const std::string& name) {
  const std::vector<int> single{kToySingleLayer};
  if (name == "depth-only") {
    c.train.use_seg = false;
  } else if (name == "seg-only") {
    c.train.use_depth = false;
  } else if (name == "no-gan") {
    c.train.use_gan = false;
  } else if (name == "single-fd") {
    c.net.discriminator_kind = net::DiscriminatorKind::Flatten;
    c.net.discriminator_levels = single;
    c.eval.layers = single;
  } else if (name == "multi-fd" || name == "multi-triplet" || name == "retrieval-multi") {
    c.net.discriminator_kind = net::DiscriminatorKind::Flatten;
    c.net.discriminator_levels.reset();
  } else if (name == "multi-cd") {
    c.net.discriminator_kind = net::DiscriminatorKind::Cascade;
    c.net.discriminator_levels.reset();
  } else if (name == "single-triplet") {
    c.net.triplet_layers = single;
  } else if (name == "retrieval-single") {
    c.eval.layers = single;
  } else {
    fail(ErrorCode::InvalidConfig, "unknown variant '" + name + "'");
  }
  return c;
}

Digest dataset_digest(const data::DatasetManifest& manifest) {
  std::vector<std::filesystem::path> files{"manifest.jsonl", "classes.json"};
  for (const auto& r : manifest.records) {
    files.push_back(r.image_path);
    if (r.depth_path) files.push_back(*r.depth_path);
    if (r.seg_path) files.push_back(*r.seg_path);
  }
  return files_digest(manifest.root, files);
}

std::vector<std::size_t> database_records(const data::DatasetManifest& manifest, const EvalConfig& cfg) {
  std::vector<std::size_t> out;
  for (std::size_t i : manifest.indices(data::Domain::Virtual))
    if (cfg.database_environment.empty() || manifest.records[i].environment == cfg.database_environment)
      out.push_back(i);
  require(!out.empty(), ErrorCode::EmptyDatabase,
          "no virtual records for database environment '" + cfg.database_environment + "'");
  return out;
}

std::vector<std::size_t> query_records(const data::DatasetManifest& manifest) {
  auto q = manifest.indices(data::Domain::Real);
  require(!q.empty(), ErrorCode::EmptyQuerySet, "manifest has no real records to query");
  return q;
}

eval::EvalReport evaluate_model(const net::ModelParams<float>& params, const data::DatasetManifest& manifest,
                                const EvalConfig& cfg, const std::vector<int>& layers) {
  const auto db_idx = database_records(manifest, cfg);
  const auto q_idx = query_records(manifest);
  const auto db = retrieval::build_database(params, manifest, db_idx, layers);
  const auto queries = retrieval::build_database(params, manifest, q_idx, layers);
  const std::size_t k = std::size_t(*std::max_element(cfg.recall_ns.begin(), cfg.recall_ns.end()));
  std::vector<eval::QueryOutcome> outcomes;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto result = retrieval::query(db, queries.entry(i), cfg.query_options(), k);
    eval::QueryOutcome o;
    o.truth = manifest.records[q_idx[i]].pose;
    for (const auto& m : result.ranked) o.ranked.push_back(manifest.records[db_idx[m.index]].pose);
    outcomes.push_back(std::move(o));
  }
  auto report = eval::evaluate(outcomes, {cfg.recall_ns, cfg.distance_thresholds, cfg.radius_m});
  report.meta["checkpoint_digest"] = to_hex(params_digest(params));
  report.meta["dataset_digest"] = to_hex(dataset_digest(manifest));
  report.meta["metric"] = retrieval::to_string(cfg.metric);
  report.meta["layers"] = layers;
  report.meta["database_environment"] = cfg.database_environment;
  report.meta["database_size"] = db.size();
  return report;
}

namespace {

Eigen::VectorXf concat_parts(const retrieval::Descriptor& d) {
  Eigen::VectorXf v(d.total_dim());
  long at = 0;
  for (const auto& p : d.parts) {
    v.segment(at, p.size()) = p;
    at += p.size();
  }
  return v;
}

// Descriptors of each record and of its mirror image, as rows.
Eigen::MatrixXd probe_features(const net::ModelParams<float>& params, const data::DatasetManifest& manifest,
                               const std::vector<std::size_t>& records, const std::vector<int>& layers) {
  const auto& cfg = params.config;
  std::vector<Eigen::VectorXf> rows;
  constexpr std::size_t kChunk = 16;
  for (std::size_t begin = 0; begin < records.size(); begin += kChunk) {
    const std::size_t count = std::min(kChunk, records.size() - begin);
    Tensor<float> batch(Shape{int(2 * count), cfg.input_channels, cfg.input_height, cfg.input_width});
    for (std::size_t k = 0; k < count; ++k) {
      const auto stack = data::crop_to_shape(data::load_sample(manifest, manifest.records[records[begin + k]]),
                                             cfg.input_height, cfg.input_width);
      data::put_sample(batch, int(2 * k), data::to_tensor(stack.rgb));
      data::put_sample(batch, int(2 * k + 1), data::to_tensor(flip_horizontal(stack.rgb)));
    }
    for (const auto& d : retrieval::extract_descriptors(params, batch, layers)) rows.push_back(concat_parts(d));
  }
  Eigen::MatrixXd x(long(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) x.row(long(i)) = rows[i].cast<double>().transpose();
  return x;
}

double accuracy(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w, double b) {
  const Eigen::VectorXd z = (x * w).array() + b;
  long correct = 0;
  for (long i = 0; i < x.rows(); ++i) correct += (z[i] > 0) == (y[i] > 0.5);
  return double(correct) / double(x.rows());
}

}  // namespace

ProbeResult domain_probe(const net::ModelParams<float>& params, const data::DatasetManifest& manifest,
                         const std::vector<int>& layers, std::uint64_t seed) {
  auto rng = derived_rng(seed, 0x9b0be000);
  auto real = query_records(manifest);
  auto virt = manifest.indices(data::Domain::Virtual);
  require(!virt.empty(), ErrorCode::EmptyDomain, "manifest has no virtual records");
  std::shuffle(virt.begin(), virt.end(), rng);
  std::shuffle(real.begin(), real.end(), rng);
  const std::size_t per_domain = std::min(real.size(), virt.size());
  require(per_domain >= 2, ErrorCode::EmptyDomain, "probe needs at least two images per domain");
  virt.resize(per_domain);
  real.resize(per_domain);
  const std::size_t train_per = per_domain / 2;

  // Rows come in (image, mirror) pairs, so a split by image keeps both copies together.
  const Eigen::MatrixXd fv = probe_features(params, manifest, virt, layers);
  const Eigen::MatrixXd fr = probe_features(params, manifest, real, layers);
  const long dim = fv.cols();
  const long n_train = long(4 * train_per), n_test = long(4 * (per_domain - train_per));
  Eigen::MatrixXd xtr(n_train, dim), xte(n_test, dim);
  Eigen::VectorXd ytr(n_train), yte(n_test);
  const long tr_rows = long(2 * train_per), te_rows = long(2 * (per_domain - train_per));
  xtr << fv.topRows(tr_rows), fr.topRows(tr_rows);
  xte << fv.bottomRows(te_rows), fr.bottomRows(te_rows);
  ytr << Eigen::VectorXd::Zero(tr_rows), Eigen::VectorXd::Ones(tr_rows);
  yte << Eigen::VectorXd::Zero(te_rows), Eigen::VectorXd::Ones(te_rows);

  const Eigen::RowVectorXd mean = xtr.colwise().mean();
  const Eigen::RowVectorXd sd =
      ((xtr.rowwise() - mean).array().square().colwise().sum() / double(n_train)).sqrt() + 1e-6;
  auto standardize = [&](Eigen::MatrixXd& x) { x = (x.rowwise() - mean).array().rowwise() / sd.array(); };
  standardize(xtr);
  standardize(xte);

  // L2-regularised logistic regression by full-batch gradient descent with step 1/L.
  constexpr int kIters = 2000;
  constexpr double kL2 = 1e-3;
  const Eigen::MatrixXd gram = xtr * xtr.transpose() / double(n_train);
  const double lipschitz = 0.25 * Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram).eigenvalues().maxCoeff() + kL2;
  const double lr = 1.0 / lipschitz;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(dim);
  double b = 0;
  for (int it = 0; it < kIters; ++it) {
    const Eigen::VectorXd z = (xtr * w).array() + b;
    const Eigen::VectorXd p = (1.0 / (1.0 + (-z.array()).exp())).matrix();
    const Eigen::VectorXd r = (p - ytr) / double(n_train);
    w -= lr * (xtr.transpose() * r + kL2 * w);
    b -= 4.0 * r.sum();
  }
  return {accuracy(xtr, ytr, w, b), accuracy(xte, yte, w, b), std::size_t(n_train), std::size_t(n_test)};
}

std::vector<VariantOutcome> ablate(const RunConfig& base, const data::DatasetManifest& manifest,
                                   const std::vector<std::string>& variants, const std::filesystem::path& out_dir) {
  std::vector<std::string> names;
  for (const auto& v : variants) {
    apply_variant(base, v).validate();
    if (std::find(names.begin(), names.end(), v) == names.end()) names.push_back(v);
  }
  std::filesystem::create_directories(out_dir);
  std::optional<train::TrainResult> shared;  // model behind the retrieval variants
  std::vector<VariantOutcome> outcomes;
  for (const auto& name : names) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = apply_variant(base, name);
    const auto dir = out_dir / name;
    std::filesystem::create_directories(dir);
    VariantOutcome o{name, {}, {}, 0};
    const train::TrainResult* model = nullptr;
    std::optional<train::TrainResult> own;
    if (is_retrieval_variant(name)) {
      if (!shared) {
        auto tc = base.train;
        tc.log_path = (out_dir / "retrieval-base" / "train_log.jsonl").string();
        tc.checkpoint_path = (out_dir / "retrieval-base" / "checkpoint.dgck").string();
        std::filesystem::create_directories(out_dir / "retrieval-base");
        shared = train::train(manifest, apply_variant(base, "multi-fd").net, tc);
      }
      model = &*shared;
    } else {
      auto tc = cfg.train;
      tc.log_path = (dir / "train_log.jsonl").string();
      tc.checkpoint_path = (dir / "checkpoint.dgck").string();
      std::filesystem::remove(tc.log_path);
      own = train::train(manifest, cfg.net, tc);
      model = &*own;
      o.log = own->log;
    }
    o.report = evaluate_model(model->state.params, manifest, cfg.eval, cfg.retrieval_layers());
    o.report.meta["variant"] = name;
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    eval::emit_report(o.report, dir / "report.json", cfg.eval.plots);
    outcomes.push_back(std::move(o));
  }
  json summary = json::array();
  for (const auto& o : outcomes) summary.push_back({{"variant", o.name}, {"report", eval::to_json(o.report)}});
  std::ofstream(out_dir / "ablation.json") << summary.dump(2) << '\n';
  std::ofstream(out_dir / "ablation.txt") << ablation_table(outcomes);
  return outcomes;
}

namespace {

// Nearest-neighbour resize of an RGB panel into a slot of the canvas.
void paste(RgbImage& canvas, const RgbImage& panel, int slot, int h, int w) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        canvas.at(y, slot * w + x, c) = panel.at(y * panel.height / h, x * panel.width / w, c);
}

}  // namespace

RgbImage visualize_sample(const net::ModelParams<float>& params, const RgbImage& image, int layer, double max_depth_m) {
  const auto& cfg = params.config;
  require(layer >= 1 && layer <= cfg.encoder_layers, ErrorCode::LayerOutOfRange,
          "layer " + std::to_string(layer) + " outside 1.." + std::to_string(cfg.encoder_layers));
  const int H = cfg.input_height, W = cfg.input_width;
  require(image.height == H && image.width == W && image.channels == 3, ErrorCode::ShapeMismatch,
          "visualize_sample: image must be " + std::to_string(H) + "x" + std::to_string(W) + " RGB");
  const auto pyr = net::encode(params, data::to_tensor(image));
  RgbImage canvas(H, 4 * W, 3);
  paste(canvas, image, 0, H, W);
  paste(canvas, retrieval::pca_visualize(pyr.level(layer).value()), 1, H, W);

  const auto depths = net::decode_depth(cfg, net::BoundParams<float>(params.depth_gen, false), pyr);
  const auto& d = depths.begin()->second.value();  // finest level
  RgbImage dimg(d.shape.h, d.shape.w, 3);
  for (int y = 0; y < d.shape.h; ++y)
    for (int x = 0; x < d.shape.w; ++x) {
      const double t = std::clamp(1.0 - d.at(0, 0, y, x) / max_depth_m, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) dimg.at(y, x, c) = std::uint8_t(std::lround(255.0 * t));
    }
  paste(canvas, dimg, 2, H, W);

  const auto scores = net::decode_seg(cfg, net::BoundParams<float>(params.seg_gen, false), pyr).value();
  const auto palette = toy::class_palette(cfg.class_count);
  RgbImage simg(H, W, 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int best = 0;
      for (int k = 1; k < cfg.class_count; ++k)
        if (scores.at(0, k, y, x) > scores.at(0, best, y, x)) best = k;
      for (int c = 0; c < 3; ++c) simg.at(y, x, c) = palette[std::size_t(best)][std::size_t(c)];
    }
  paste(canvas, simg, 3, H, W);
  return canvas;
}

std::string ablation_table(const std::vector<VariantOutcome>& outcomes) {
  std::ostringstream s;
  s << std::left << std::setw(18) << "variant" << std::right << std::setw(24) << "high/medium/coarse %";
  if (!outcomes.empty())
    for (const auto& p : outcomes.front().report.recall_at_n) s << std::setw(8) << ("R@" + std::to_string(p.n));
  s << '\n' << std::fixed << std::setprecision(1);
  for (const auto& o : outcomes) {
    std::ostringstream b;
    b << std::fixed << std::setprecision(1) << o.report.buckets.high << " / " << o.report.buckets.medium << " / "
      << o.report.buckets.coarse;
    s << std::left << std::setw(18) << o.name << std::right << std::setw(24) << b.str();
    for (const auto& p : o.report.recall_at_n) s << std::setw(8) << p.recall;
    s << '\n';
  }
  return s.str();
}

}  // namespace dasgil::pipeline
