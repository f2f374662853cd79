#include "dasgil/retrieval.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "dasgil/binio.hpp"

namespace dasgil::retrieval {

long Descriptor::total_dim() const {
  long n = 0;
  for (const auto& p : parts) n += p.size();
  return n;
}

namespace {

void check_layers(const net::NetConfig& cfg, const std::vector<int>& layers) {
  require(!layers.empty(), ErrorCode::LayerOutOfRange, "no retrieval layers requested");
  for (int l : layers)
    require(l >= 1 && l <= cfg.encoder_layers, ErrorCode::LayerOutOfRange,
            "layer " + std::to_string(l) + " outside 1.." + std::to_string(cfg.encoder_layers));
}

}  // namespace

std::vector<Descriptor> extract_descriptors(const net::ModelParams<float>& params, const Tensor<float>& images,
                                            const std::vector<int>& layers) {
  check_layers(params.config, layers);
  const auto pyr = net::encode(params, images);
  const Digest digest = params_digest(params);
  std::vector<Descriptor> out(images.shape.n);
  for (int n = 0; n < images.shape.n; ++n) {
    out[n].layers = layers;
    out[n].source = digest;
    for (int l : layers) {
      const auto& level = pyr.level(l).value();
      const auto per = level.shape.per_sample();
      out[n].parts.emplace_back(Eigen::Map<const Eigen::VectorXf>(level.sample_ptr(n), per));
    }
  }
  return out;
}

Descriptor extract_descriptor(const net::ModelParams<float>& params, const Tensor<float>& image,
                              const std::vector<int>& layers) {
  require(image.shape.n == 1, ErrorCode::ShapeMismatch, "extract_descriptor expects a single image");
  return extract_descriptors(params, image, layers).front();
}

FeatureDatabase::FeatureDatabase(std::vector<int> layers, std::vector<int> dims, Digest digest)
    : layers_(std::move(layers)), dims_(std::move(dims)), digest_(digest) {
  require(!layers_.empty() && layers_.size() == dims_.size(), ErrorCode::LayerMismatch, "layer and dim lists differ");
  for (int d : dims_) {
    require(d > 0, ErrorCode::LayerMismatch, "layer dims must be positive");
    offsets_.push_back(total_dim_);
    total_dim_ += d;
  }
}

void FeatureDatabase::add(const Descriptor& d) {
  require(d.layers == layers_ && d.parts.size() == dims_.size(), ErrorCode::LayerMismatch,
          "descriptor layers differ from the database");
  for (std::size_t s = 0; s < dims_.size(); ++s) {
    require(d.parts[s].size() == dims_[s], ErrorCode::LayerMismatch, "descriptor dims differ from the database");
    require(d.parts[s].allFinite(), ErrorCode::NonFiniteInput, "descriptor '" + d.id + "' is not finite");
  }
  require(by_id_.emplace(d.id, ids_.size()).second, ErrorCode::DuplicateId, "duplicate database id '" + d.id + "'");
  ids_.push_back(d.id);
  for (const auto& p : d.parts) data_.insert(data_.end(), p.data(), p.data() + p.size());
}

std::optional<std::size_t> FeatureDatabase::index_of(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

Descriptor FeatureDatabase::entry(std::size_t i) const {
  require(i < size(), ErrorCode::ShapeMismatch, "database index out of range");
  Descriptor d{ids_[i], layers_, {}, digest_};
  const float* row = data_.data() + i * total_dim_;
  for (std::size_t s = 0; s < dims_.size(); ++s)
    d.parts.emplace_back(Eigen::Map<const Eigen::VectorXf>(row + offsets_[s], dims_[s]));
  return d;
}

bool operator==(const FeatureDatabase& a, const FeatureDatabase& b) {
  return a.layers_ == b.layers_ && a.dims_ == b.dims_ && a.digest_ == b.digest_ && a.ids_ == b.ids_ &&
         a.data_.size() == b.data_.size() &&
         std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0;
}

FeatureDatabase build_database(const net::ModelParams<float>& params, const data::DatasetManifest& manifest,
                               const std::vector<std::size_t>& records, const std::vector<int>& layers) {
  const auto& cfg = params.config;
  check_layers(cfg, layers);
  std::vector<int> dims;
  for (int l : layers) dims.push_back(int(cfg.level_size(l)));
  FeatureDatabase db(layers, dims, params_digest(params));
  constexpr std::size_t kChunk = 16;
  for (std::size_t begin = 0; begin < records.size(); begin += kChunk) {
    const std::size_t count = std::min(kChunk, records.size() - begin);
    Tensor<float> batch(Shape{int(count), cfg.input_channels, cfg.input_height, cfg.input_width});
    for (std::size_t k = 0; k < count; ++k) {
      const auto& rec = manifest.records.at(records[begin + k]);
      const auto stack = data::crop_to_shape(data::load_sample(manifest, rec), cfg.input_height, cfg.input_width);
      data::put_sample(batch, int(k), data::to_tensor(stack.rgb));
    }
    auto descs = extract_descriptors(params, batch, layers);
    for (std::size_t k = 0; k < count; ++k) {
      descs[k].id = manifest.records[records[begin + k]].id;
      db.add(descs[k]);
    }
  }
  return db;
}

namespace {

constexpr char kDbMagic[4] = {'D', 'G', 'F', 'D'};
constexpr std::uint16_t kDbVersion = 1;

}  // namespace

void save_database(const FeatureDatabase& db, const std::filesystem::path& path) {
  binio::Writer w;
  w.bytes(kDbMagic, 4);
  w.u16(kDbVersion);
  w.bytes(db.digest().data(), db.digest().size());
  w.u32(std::uint32_t(db.layers().size()));
  for (std::size_t s = 0; s < db.layers().size(); ++s) {
    w.u32(std::uint32_t(db.layers()[s]));
    w.u32(std::uint32_t(db.dims()[s]));
  }
  w.u64(db.size());
  for (const auto& id : db.ids()) w.str(id);
  const auto m = db.matrix();
  w.f32(m.data(), std::size_t(m.size()));
  w.save(path);
}

FeatureDatabase load_database(const std::filesystem::path& path) {
  auto r = binio::Reader::open(path);
  char magic[4];
  r.bytes(magic, 4);
  require(std::memcmp(magic, kDbMagic, 4) == 0, ErrorCode::VersionMismatch, path.string() + " is not a feature database");
  const auto version = r.u16();
  require(version == kDbVersion, ErrorCode::VersionMismatch, "feature database version " + std::to_string(version));
  Digest digest;
  r.bytes(digest.data(), digest.size());
  const auto nlayers = r.u32();
  require(nlayers >= 1 && nlayers <= 64, ErrorCode::IoError, "corrupt layer count");
  std::vector<int> layers, dims;
  for (std::uint32_t s = 0; s < nlayers; ++s) {
    layers.push_back(int(r.u32()));
    dims.push_back(int(r.u32()));
  }
  FeatureDatabase db(layers, dims, digest);
  const auto count = r.u64();
  std::vector<std::string> ids;
  for (std::uint64_t i = 0; i < count; ++i) ids.push_back(r.str());
  Descriptor d{{}, layers, {}, digest};
  for (int dim : dims) d.parts.emplace_back(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    d.id = ids[i];
    for (auto& p : d.parts) r.f32(p.data(), std::size_t(p.size()));
    db.add(d);
  }
  require(r.at_end(), ErrorCode::IoError, "trailing bytes in feature database");
  return db;
}

std::string to_string(Metric m) { return m == Metric::L1 ? "l1" : "cosine"; }

Metric metric_from_string(const std::string& s) {
  if (s == "l1" || s == "L1") return Metric::L1;
  if (s == "cosine" || s == "cos") return Metric::Cosine;
  fail(ErrorCode::InvalidConfig, "unknown metric '" + s + "' (expected l1 or cosine)");
}

namespace {

void check_query(const FeatureDatabase& db, const Descriptor& q) {
  require(!db.empty(), ErrorCode::EmptyDatabase, "feature database is empty");
  require(q.layers == db.layers() && q.parts.size() == db.dims().size(), ErrorCode::LayerMismatch,
          "query layers differ from database layers");
  for (std::size_t s = 0; s < q.parts.size(); ++s)
    require(q.parts[s].size() == db.dims()[s], ErrorCode::LayerMismatch, "query dims differ from database dims");
}

double cosine(double dot, double nq, double nr) { return nq > 0 && nr > 0 ? dot / (std::sqrt(nq) * std::sqrt(nr)) : 0.0; }

}  // namespace

double score(const FeatureDatabase& db, std::size_t i, const Descriptor& q, const QueryOptions& opts) {
  const float* row = db.matrix().data() + i * db.total_dim();
  double total = 0, dot_all = 0, nq_all = 0, nr_all = 0;
  for (std::size_t s = 0; s < q.parts.size(); ++s) {
    const float* r = row + db.offset(s);
    const float* v = q.parts[s].data();
    const long n = db.dims()[s];
    if (opts.metric == Metric::L1) {
      double acc = 0;
      for (long j = 0; j < n; ++j) acc += std::abs(double(v[j]) - double(r[j]));
      total += opts.normalize_l1 ? acc / double(n) : acc;
    } else {
      double dot = 0, nq = 0, nr = 0;
      for (long j = 0; j < n; ++j) {
        dot += double(v[j]) * double(r[j]);
        nq += double(v[j]) * double(v[j]);
        nr += double(r[j]) * double(r[j]);
      }
      total += cosine(dot, nq, nr);
      dot_all += dot;
      nq_all += nq;
      nr_all += nr;
    }
  }
  if (opts.metric == Metric::Cosine && opts.concat_cosine) return cosine(dot_all, nq_all, nr_all);
  return total;
}

QueryResult query(const FeatureDatabase& db, const Descriptor& q, const QueryOptions& opts, std::size_t k) {
  check_query(db, q);
  QueryResult result;
  result.metric = opts.metric;
  if (q.source && *q.source != db.digest())
    result.diagnostics.push_back("warning: query descriptor comes from parameters " + to_hex(*q.source) +
                                 " but the database was built from " + to_hex(db.digest()));
  std::vector<double> scores(db.size());
  for (std::size_t i = 0; i < db.size(); ++i) scores[i] = score(db, i, q, opts);
  std::vector<std::size_t> order(db.size());
  std::iota(order.begin(), order.end(), 0);
  const bool ascending = opts.metric == Metric::L1;
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return ascending ? scores[a] < scores[b] : scores[a] > scores[b];
    return a < b;
  };
  k = std::min(k, db.size());
  std::partial_sort(order.begin(), order.begin() + k, order.end(), better);
  for (std::size_t r = 0; r < k; ++r) result.ranked.push_back({db.ids()[order[r]], order[r], scores[order[r]]});
  return result;
}

RgbImage pca_visualize(const Tensor<float>& feature_map) {
  const Shape s = feature_map.shape;
  require(s.c >= 3, ErrorCode::TooFewChannels, "PCA visualisation needs at least 3 channels, got " + std::to_string(s.c));
  require(s.n == 1, ErrorCode::ShapeMismatch, "PCA visualisation expects a single feature map");
  const Eigen::MatrixXd x = feature_map.sample(0).cast<double>();  // C x P
  const Eigen::VectorXd mean = x.rowwise().mean();
  const Eigen::MatrixXd centered = x.colwise() - mean;
  const Eigen::MatrixXd cov = centered * centered.transpose() / double(x.cols());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const double top = std::max(eig.eigenvalues().maxCoeff(), 0.0);
  RgbImage out(s.h, s.w, 3, 128);
  for (int k = 0; k < 3; ++k) {
    const Eigen::Index col = s.c - 1 - k;
    const double lambda = eig.eigenvalues()[col];
    if (!(lambda > 1e-12 * top) || top <= 1e-30) continue;
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    const Eigen::RowVectorXd proj = v.transpose() * centered;
    const double lo = proj.minCoeff(), hi = proj.maxCoeff();
    if (!(hi > lo)) continue;
    for (int y = 0; y < s.h; ++y)
      for (int xx = 0; xx < s.w; ++xx)
        out.at(y, xx, k) = std::uint8_t(std::lround(255.0 * (proj[y * s.w + xx] - lo) / (hi - lo)));
  }
  return out;
}

}  // namespace dasgil::retrieval
