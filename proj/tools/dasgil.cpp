#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dasgil/pipeline.hpp"

using namespace dasgil;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;

  pipeline::RunConfig load(const std::vector<std::string>& extra = {}) const {
    auto overrides = sets;
    overrides.insert(overrides.end(), extra.begin(), extra.end());
    auto cfg = pipeline::load_run_config(config.empty() ? std::nullopt : std::optional<fs::path>(config), overrides);
    if (!data.empty()) cfg.data_dir = data;
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& c, bool with_data = true) {
  cmd->add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "Override a config value, e.g. train.learning_rate=1e-4 (repeatable)");
  cmd->add_option("--seed", c.seed, "Seed for all randomness in this command");
  cmd->add_option("--out", c.out, "Output directory");
  if (with_data) cmd->add_option("--data", c.data, "Dataset directory (default: data_dir from the config)");
}

std::vector<int> parse_layers(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      require(used == item.size(), ErrorCode::InvalidConfig, "bad layer '" + item + "'");
    } catch (const std::logic_error&) {
      fail(ErrorCode::InvalidConfig, "bad layer list '" + text + "'");
    }
  }
  require(!out.empty(), ErrorCode::InvalidConfig, "empty layer list");
  return out;
}

std::string layers_override(const std::string& text) {
  std::string json = "[";
  for (int l : parse_layers(text)) json += (json.size() > 1 ? "," : "") + std::to_string(l);
  return "eval.layers=" + json + "]";
}

fs::path out_dir(const Common& c, const pipeline::RunConfig& cfg) { return c.out.empty() ? fs::path(cfg.out_dir) : fs::path(c.out); }

train::TrainState load_model(const std::string& checkpoint) {
  require(!checkpoint.empty(), ErrorCode::InvalidConfig, "--checkpoint is required");
  return train::load_checkpoint(checkpoint);
}

int cmd_toygen(const Common& c) {
  auto cfg = c.load();
  if (c.seed) cfg.toy.seed = *c.seed;
  const fs::path dir = c.out.empty() ? fs::path(cfg.data_dir) : fs::path(c.out);
  const auto m = toy::generate_toy_dataset(cfg.toy, dir);
  std::cout << "wrote " << m.records.size() << " records to " << dir.string() << "\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& variant, const std::string& resume) {
  auto cfg = c.load();
  if (!variant.empty()) cfg = pipeline::apply_variant(cfg, variant);
  if (c.seed) cfg.train.seed = *c.seed;
  cfg.validate();
  const auto manifest = data::load_manifest(fs::path(cfg.data_dir) / "manifest.jsonl");
  const auto dir = out_dir(c, cfg);
  std::optional<train::TrainState> state;
  if (!resume.empty()) state = train::load_checkpoint(resume, nullptr);
  auto tc = cfg.train;
  if (tc.log_path.empty()) tc.log_path = (dir / "train_log.jsonl").string();
  if (tc.checkpoint_path.empty()) tc.checkpoint_path = (dir / "checkpoint.dgck").string();
  fs::create_directories(dir);
  if (!state) fs::remove(tc.log_path);
  const auto result = train::train(manifest, cfg.net, tc, state);
  std::cout << "trained " << result.log.size() << " steps; checkpoint " << tc.checkpoint_path << "\n";
  if (!result.log.empty()) std::cout << nlohmann::json(train::to_json(result.log.back())).dump() << "\n";
  return 0;
}

int cmd_build_db(const Common& c, const std::string& checkpoint, const std::string& db_path, const std::string& layers) {
  auto cfg = c.load(layers.empty() ? std::vector<std::string>{} : std::vector<std::string>{layers_override(layers)});
  const auto state = load_model(checkpoint);
  const auto manifest = data::load_manifest(fs::path(cfg.data_dir) / "manifest.jsonl");
  const auto use = cfg.eval.layers.value_or(state.params.config.retrieval());
  const auto db = retrieval::build_database(state.params, manifest, pipeline::database_records(manifest, cfg.eval), use);
  const fs::path path = db_path.empty() ? out_dir(c, cfg) / "db.dgfd" : fs::path(db_path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  retrieval::save_database(db, path);
  std::cout << "wrote " << db.size() << " descriptors (" << db.total_dim() << " floats each) to " << path.string() << "\n";
  return 0;
}

int cmd_query(const Common& c, const std::string& checkpoint, const std::string& db_path, const std::string& metric,
              const std::vector<std::string>& images, std::size_t k) {
  auto cfg = c.load(metric.empty() ? std::vector<std::string>{} : std::vector<std::string>{"eval.metric=\"" + metric + "\""});
  require(!db_path.empty(), ErrorCode::InvalidConfig, "--db is required");
  const auto state = load_model(checkpoint);
  const auto db = retrieval::load_database(db_path);
  const auto& net = state.params.config;
  for (const auto& img_path : images) {
    data::SampleStack s;
    s.rgb = png::read_rgb(img_path);
    s = data::crop_to_shape(s, net.input_height, net.input_width);
    const auto q = retrieval::extract_descriptor(state.params, data::to_tensor(s.rgb), db.layers());
    const auto r = retrieval::query(db, q, cfg.eval.query_options(), k);
    for (const auto& d : r.diagnostics) std::cerr << d << "\n";
    nlohmann::json out{{"query", img_path}, {"metric", retrieval::to_string(r.metric)}, {"matches", nlohmann::json::array()}};
    for (const auto& m : r.ranked) out["matches"].push_back({{"id", m.id}, {"score", m.score}});
    std::cout << out.dump() << "\n";
  }
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& metric, const std::string& layers,
             bool plots) {
  std::vector<std::string> extra;
  if (!metric.empty()) extra.push_back("eval.metric=\"" + metric + "\"");
  if (!layers.empty()) extra.push_back(layers_override(layers));
  auto cfg = c.load(extra);
  const auto state = load_model(checkpoint);
  const auto manifest = data::load_manifest(fs::path(cfg.data_dir) / "manifest.jsonl");
  const auto use = cfg.eval.layers.value_or(state.params.config.retrieval());
  auto report = pipeline::evaluate_model(state.params, manifest, cfg.eval, use);
  const auto files = eval::emit_report(report, out_dir(c, cfg) / "report.json", plots || cfg.eval.plots);
  for (const auto& f : files) std::cout << "wrote " << f.string() << "\n";
  std::cout << eval::to_json(report).dump() << "\n";
  return 0;
}

int cmd_ablate(const Common& c, std::vector<std::string> variants) {
  auto cfg = c.load();
  if (c.seed) cfg.train.seed = *c.seed;
  if (variants.empty()) {
    variants = pipeline::training_variants();
    for (const auto& v : pipeline::retrieval_variants()) variants.push_back(v);
  }
  const auto manifest = data::load_manifest(fs::path(cfg.data_dir) / "manifest.jsonl");
  const auto outcomes = pipeline::ablate(cfg, manifest, variants, out_dir(c, cfg));
  std::cout << pipeline::ablation_table(outcomes);
  return 0;
}

int cmd_viz(const Common& c, const std::string& checkpoint, const std::string& layers, std::vector<std::string> ids) {
  auto cfg = c.load();
  const auto state = load_model(checkpoint);
  const auto& net = state.params.config;
  const auto manifest = data::load_manifest(fs::path(cfg.data_dir) / "manifest.jsonl");
  const int layer = layers.empty() ? net.retrieval().front() : parse_layers(layers).front();
  if (ids.empty())
    for (std::size_t i : manifest.indices(data::Domain::Real)) {
      if (ids.size() == 4) break;
      ids.push_back(manifest.records[i].id);
    }
  const fs::path dir = c.out.empty() ? fs::path(cfg.out_dir) / "viz" : fs::path(c.out);
  fs::create_directories(dir);
  for (const auto& id : ids) {
    const auto idx = manifest.index_of(id);
    require(idx.has_value(), ErrorCode::MissingFile, "no record '" + id + "' in the manifest");
    const auto stack =
        data::crop_to_shape(data::load_sample(manifest, manifest.records[*idx]), net.input_height, net.input_width);
    const auto path = dir / (id + ".png");
    png::write_rgb(path, pipeline::visualize_sample(state.params, stack.rgb, layer, cfg.toy.max_depth_m));
    std::cout << "wrote " << path.string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-adaptive place recognition: toy data, training, retrieval and evaluation"};
  app.require_subcommand(1);

  Common toygen, trn, bdb, qry, ev, abl, viz;
  std::string variant, resume, checkpoint, db, metric, layers;
  std::vector<std::string> variants, images, ids;
  std::size_t k = 5;
  bool plots = false;

  auto* c_toygen = app.add_subcommand("toygen", "Render the synthetic virtual/real toy dataset");
  add_common(c_toygen, toygen, false);

  auto* c_train = app.add_subcommand("train", "Train the encoder, decoders and discriminator");
  add_common(c_train, trn);
  c_train->add_option("--variant", variant, "Train a named ablation variant");
  c_train->add_option("--checkpoint", resume, "Resume from this checkpoint");

  auto* c_db = app.add_subcommand("build-db", "Encode the virtual database images into a feature database");
  add_common(c_db, bdb);
  c_db->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  c_db->add_option("--db", db, "Output feature database (default <out>/db.dgfd)");
  c_db->add_option("--layers", layers, "Comma-separated encoder layers");

  auto* c_query = app.add_subcommand("query", "Retrieve the nearest database entries for query images");
  add_common(c_query, qry, false);
  c_query->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  c_query->add_option("--db", db, "Feature database")->required();
  c_query->add_option("--metric", metric, "l1 or cosine")->check(CLI::IsMember({"l1", "cosine"}));
  c_query->add_option("-k,--top", k, "Number of matches")->check(CLI::PositiveNumber);
  c_query->add_option("images", images, "Query PNG files")->required();

  auto* c_eval = app.add_subcommand("eval", "Localize real images against the virtual database and report metrics");
  add_common(c_eval, ev);
  c_eval->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  c_eval->add_option("--metric", metric, "l1 or cosine")->check(CLI::IsMember({"l1", "cosine"}));
  c_eval->add_option("--layers", layers, "Comma-separated encoder layers");
  c_eval->add_flag("--plots", plots, "Also write recall curve images");

  auto* c_ablate = app.add_subcommand("ablate", "Train and evaluate ablation variants side by side");
  add_common(c_ablate, abl);
  c_ablate->add_option("--variant", variants, "Variant name (repeatable; default: all)");

  auto* c_viz = app.add_subcommand("viz", "Write image / feature PCA / depth / segmentation panels");
  add_common(c_viz, viz);
  c_viz->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  c_viz->add_option("--layers", layers, "Encoder layer to colour (first entry is used)");
  c_viz->add_option("ids", ids, "Record ids (default: the first four real records)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*c_toygen) return cmd_toygen(toygen);
    if (*c_train) return cmd_train(trn, variant, resume);
    if (*c_db) return cmd_build_db(bdb, checkpoint, db, layers);
    if (*c_query) return cmd_query(qry, checkpoint, db, metric, images, k);
    if (*c_eval) return cmd_eval(ev, checkpoint, metric, layers, plots);
    if (*c_ablate) return cmd_ablate(abl, variants);
    if (*c_viz) return cmd_viz(viz, checkpoint, layers, ids);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
