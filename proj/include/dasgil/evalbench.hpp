#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <vector>

#include "dasgil/dataman.hpp"

namespace dasgil::eval {

struct PoseError {
  double translation_m = 0;
  double rotation_deg = 0;
};

// Quaternions must be unit length to within 1e-6.
PoseError pose_error(const data::Pose& estimated, const data::Pose& truth);

struct Bucket {
  double max_translation_m;
  double max_rotation_deg;
};

inline constexpr Bucket kHighPrecision{0.25, 2.0};
inline constexpr Bucket kMediumPrecision{0.5, 5.0};
inline constexpr Bucket kCoarsePrecision{5.0, 10.0};

// Percentages of queries within each bucket; an error on a threshold counts as inside.
struct Buckets {
  double high = 0;
  double medium = 0;
  double coarse = 0;
  bool operator==(const Buckets&) const = default;
};

Buckets precision_buckets(const std::vector<PoseError>& errors);

struct RecallAtN {
  int n;
  double recall;  // percent
  bool operator==(const RecallAtN&) const = default;
};

struct RecallAtD {
  double d_m;
  double recall;  // percent
  bool operator==(const RecallAtD&) const = default;
};

std::vector<int> default_recall_ns();
std::vector<double> default_distance_thresholds();  // 15, 20, ..., 50

// ranked[q] holds the positions of query q's retrieved candidates, best first.
std::vector<RecallAtN> recall_at_n(const std::vector<std::vector<Eigen::Vector3d>>& ranked,
                                   const std::vector<Eigen::Vector3d>& truth, const std::vector<int>& ns,
                                   double radius_m = 25.0);

std::vector<RecallAtD> top1_recall_at_d(const std::vector<Eigen::Vector3d>& top1,
                                        const std::vector<Eigen::Vector3d>& truth,
                                        const std::vector<double>& thresholds = default_distance_thresholds());

struct EvalReport {
  Buckets buckets;
  std::vector<RecallAtN> recall_at_n;
  std::vector<RecallAtD> top1_recall_at_d;
  nlohmann::json meta = nlohmann::json::object();
  bool operator==(const EvalReport&) const = default;
};

struct EvalOptions {
  std::vector<int> recall_ns = default_recall_ns();
  std::vector<double> distance_thresholds = default_distance_thresholds();
  double radius_m = 25.0;
};

// One query: its true pose and the poses of its retrievals, best first. The top-1 pose is the estimate.
struct QueryOutcome {
  data::Pose truth;
  std::vector<data::Pose> ranked;
};

EvalReport evaluate(const std::vector<QueryOutcome>& outcomes, const EvalOptions& opts = {});

// Throws InvalidReport naming the first violated invariant.
void validate(const EvalReport& report);

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

// Writes the JSON report; with `plots`, also <stem>_recall_at_n.png and <stem>_top1_recall_at_d.png beside it.
std::vector<std::filesystem::path> emit_report(const EvalReport& report, const std::filesystem::path& path,
                                               bool plots = false);
EvalReport load_report(const std::filesystem::path& path);

}  // namespace dasgil::eval
