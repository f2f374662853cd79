#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dasgil/dataman.hpp"
#include "dasgil/digest.hpp"
#include "dasgil/net.hpp"

namespace dasgil::retrieval {

using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Descriptor {
  std::string id;
  std::vector<int> layers;
  std::vector<Eigen::VectorXf> parts;  // one flattened level per entry of `layers`
  std::optional<Digest> source;        // digest of the parameters that produced it

  long total_dim() const;
};

// Flattens the requested encoder levels of each image in the batch (n, 3, H, W).
std::vector<Descriptor> extract_descriptors(const net::ModelParams<float>& params, const Tensor<float>& images,
                                            const std::vector<int>& layers);
Descriptor extract_descriptor(const net::ModelParams<float>& params, const Tensor<float>& image,
                              const std::vector<int>& layers);

class FeatureDatabase {
 public:
  FeatureDatabase() = default;
  FeatureDatabase(std::vector<int> layers, std::vector<int> dims, Digest digest);

  void add(const Descriptor& d);

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  const std::vector<int>& layers() const { return layers_; }
  const std::vector<int>& dims() const { return dims_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const Digest& digest() const { return digest_; }
  Eigen::Map<const RowMatrixXf> matrix() const {
    return {data_.data(), static_cast<Eigen::Index>(ids_.size()), total_dim_};
  }
  long total_dim() const { return total_dim_; }
  long offset(std::size_t layer_slot) const { return offsets_.at(layer_slot); }
  std::optional<std::size_t> index_of(const std::string& id) const;
  Descriptor entry(std::size_t i) const;

  friend bool operator==(const FeatureDatabase& a, const FeatureDatabase& b);

 private:
  std::vector<int> layers_;
  std::vector<int> dims_;
  std::vector<long> offsets_;
  Digest digest_{};
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::vector<float> data_;
  long total_dim_ = 0;
};

// Encodes the given manifest records (centre-cropped to the network input) in batches.
FeatureDatabase build_database(const net::ModelParams<float>& params, const data::DatasetManifest& manifest,
                               const std::vector<std::size_t>& records, const std::vector<int>& layers);

void save_database(const FeatureDatabase& db, const std::filesystem::path& path);
FeatureDatabase load_database(const std::filesystem::path& path);

enum class Metric { L1, Cosine };
std::string to_string(Metric m);
Metric metric_from_string(const std::string& s);

struct QueryOptions {
  Metric metric = Metric::L1;
  // L1: divide each layer's distance by its dimension before summing.
  bool normalize_l1 = false;
  // Cosine: one similarity over the concatenation instead of a per-layer sum.
  bool concat_cosine = false;
};

struct Match {
  std::string id;
  std::size_t index;
  double score;  // distance for L1, similarity for cosine
};

struct QueryResult {
  std::vector<Match> ranked;
  Metric metric = Metric::L1;
  std::vector<std::string> diagnostics;
};

// Aggregate score between a descriptor and database row i.
double score(const FeatureDatabase& db, std::size_t i, const Descriptor& q, const QueryOptions& opts);

// Top-k by least distance or greatest similarity; ties keep database insertion order.
QueryResult query(const FeatureDatabase& db, const Descriptor& q, const QueryOptions& opts, std::size_t k);

// Projects (1, C, h, w) features onto their top three principal components, one colour channel each.
RgbImage pca_visualize(const Tensor<float>& feature_map);

}  // namespace dasgil::retrieval
