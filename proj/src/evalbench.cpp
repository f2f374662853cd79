#include "dasgil/evalbench.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "dasgil/error.hpp"
#include "dasgil/image.hpp"

namespace dasgil::eval {

namespace {

void check_unit(const Eigen::Quaterniond& q, const char* which) {
  require(std::abs(q.norm() - 1.0) <= 1e-6, ErrorCode::NonUnitQuaternion,
          std::string(which) + " quaternion has norm " + std::to_string(q.norm()));
}

double percent(std::size_t hits, std::size_t total) { return 100.0 * double(hits) / double(total); }

bool within(const PoseError& e, const Bucket& b) {
  return e.translation_m <= b.max_translation_m && e.rotation_deg <= b.max_rotation_deg;
}

void require_queries(std::size_t n) { require(n > 0, ErrorCode::EmptyQuerySet, "no queries to evaluate"); }

void invalid(const std::string& why) { fail(ErrorCode::InvalidReport, why); }

bool in_range(double v) { return std::isfinite(v) && v >= 0.0 && v <= 100.0; }

struct Rgb {
  std::uint8_t r, g, b;
};

void put(RgbImage& img, int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  img.at(y, x, 0) = c.r;
  img.at(y, x, 1) = c.g;
  img.at(y, x, 2) = c.b;
}

void line(RgbImage& img, int x0, int y0, int x1, int y1, Rgb c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    put(img, x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

// Recall curve on a white canvas: x spans the sample range, y spans 0..100 %. Grid every 10 %.
RgbImage plot_curve(const std::vector<double>& xs, const std::vector<double>& ys) {
  constexpr int W = 400, H = 300, L = 40, R = 15, T = 15, B = 35;
  RgbImage img(H, W, 3, 255);
  const Rgb grid{220, 220, 220}, axis{0, 0, 0}, curve{31, 119, 180};
  const double x_lo = xs.front(), x_hi = xs.size() > 1 ? xs.back() : xs.front() + 1.0;
  auto px = [&](double x) { return L + int(std::lround((x - x_lo) / (x_hi - x_lo) * (W - L - R))); };
  auto py = [&](double y) { return H - B - int(std::lround(y / 100.0 * (H - T - B))); };
  for (int g = 0; g <= 10; ++g) line(img, L, py(g * 10.0), W - R, py(g * 10.0), grid);
  for (double x : xs) line(img, px(x), py(0), px(x), py(100), grid);
  line(img, L, py(0), W - R, py(0), axis);
  line(img, L, py(0), L, py(100), axis);
  for (double x : xs) line(img, px(x), py(0), px(x), py(0) + 4, axis);
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) line(img, px(xs[i]), py(ys[i]), px(xs[i + 1]), py(ys[i + 1]), curve);
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (int oy = -2; oy <= 2; ++oy)
      for (int ox = -2; ox <= 2; ++ox) put(img, px(xs[i]) + ox, py(ys[i]) + oy, curve);
  return img;
}

}  // namespace

PoseError pose_error(const data::Pose& estimated, const data::Pose& truth) {
  check_unit(estimated.orientation, "estimated");
  check_unit(truth.orientation, "ground-truth");
  const double dot = std::abs(estimated.orientation.coeffs().dot(truth.orientation.coeffs()));
  const double angle = 2.0 * std::acos(std::min(1.0, dot));
  return {(estimated.position - truth.position).norm(), angle * 180.0 / std::numbers::pi};
}

Buckets precision_buckets(const std::vector<PoseError>& errors) {
  require_queries(errors.size());
  std::size_t h = 0, m = 0, c = 0;
  for (const auto& e : errors) {
    h += within(e, kHighPrecision);
    m += within(e, kMediumPrecision);
    c += within(e, kCoarsePrecision);
  }
  return {percent(h, errors.size()), percent(m, errors.size()), percent(c, errors.size())};
}

std::vector<int> default_recall_ns() { return {1, 2, 5, 10, 15, 20, 25}; }

std::vector<double> default_distance_thresholds() {
  std::vector<double> d;
  for (int v = 15; v <= 50; v += 5) d.push_back(v);
  return d;
}

std::vector<RecallAtN> recall_at_n(const std::vector<std::vector<Eigen::Vector3d>>& ranked,
                                   const std::vector<Eigen::Vector3d>& truth, const std::vector<int>& ns,
                                   double radius_m) {
  require_queries(ranked.size());
  require(ranked.size() == truth.size(), ErrorCode::DimensionMismatch, "one ground-truth position per query");
  // First rank at which each query hits; a hit at rank r counts for every N > r.
  std::vector<std::size_t> first_hit(ranked.size(), std::numeric_limits<std::size_t>::max());
  for (std::size_t q = 0; q < ranked.size(); ++q)
    for (std::size_t r = 0; r < ranked[q].size(); ++r)
      if ((ranked[q][r] - truth[q]).norm() <= radius_m) {
        first_hit[q] = r;
        break;
      }
  std::vector<RecallAtN> out;
  for (int n : ns) {
    require(n >= 1, ErrorCode::InvalidConfig, "recall N must be positive");
    const auto hits = std::count_if(first_hit.begin(), first_hit.end(), [n](std::size_t r) { return r < std::size_t(n); });
    out.push_back({n, percent(std::size_t(hits), ranked.size())});
  }
  return out;
}

std::vector<RecallAtD> top1_recall_at_d(const std::vector<Eigen::Vector3d>& top1,
                                        const std::vector<Eigen::Vector3d>& truth,
                                        const std::vector<double>& thresholds) {
  require_queries(top1.size());
  require(top1.size() == truth.size(), ErrorCode::DimensionMismatch, "one ground-truth position per query");
  std::vector<RecallAtD> out;
  for (double d : thresholds) {
    std::size_t hits = 0;
    for (std::size_t q = 0; q < top1.size(); ++q) hits += (top1[q] - truth[q]).norm() <= d;
    out.push_back({d, percent(hits, top1.size())});
  }
  return out;
}

EvalReport evaluate(const std::vector<QueryOutcome>& outcomes, const EvalOptions& opts) {
  require_queries(outcomes.size());
  std::vector<PoseError> errors;
  std::vector<std::vector<Eigen::Vector3d>> ranked;
  std::vector<Eigen::Vector3d> top1, truth;
  for (const auto& o : outcomes) {
    require(!o.ranked.empty(), ErrorCode::EmptyQuerySet, "query without retrievals");
    errors.push_back(pose_error(o.ranked.front(), o.truth));
    auto& r = ranked.emplace_back();
    for (const auto& p : o.ranked) r.push_back(p.position);
    top1.push_back(o.ranked.front().position);
    truth.push_back(o.truth.position);
  }
  EvalReport rep;
  rep.buckets = precision_buckets(errors);
  rep.recall_at_n = recall_at_n(ranked, truth, opts.recall_ns, opts.radius_m);
  rep.top1_recall_at_d = top1_recall_at_d(top1, truth, opts.distance_thresholds);
  rep.meta["query_count"] = outcomes.size();
  rep.meta["radius_m"] = opts.radius_m;
  return rep;
}

void validate(const EvalReport& r) {
  const auto& b = r.buckets;
  if (!in_range(b.high) || !in_range(b.medium) || !in_range(b.coarse)) invalid("bucket percentage outside [0,100]");
  if (b.high > b.medium || b.medium > b.coarse) invalid("precision buckets are not cumulative");
  for (std::size_t i = 0; i < r.recall_at_n.size(); ++i) {
    const auto& p = r.recall_at_n[i];
    if (p.n < 1) invalid("recall_at_n has N < 1");
    if (!in_range(p.recall)) invalid("recall_at_n value outside [0,100] at N=" + std::to_string(p.n));
    if (i > 0 && p.n <= r.recall_at_n[i - 1].n) invalid("recall_at_n N values must increase");
    if (i > 0 && p.recall < r.recall_at_n[i - 1].recall) invalid("recall_at_n decreases at N=" + std::to_string(p.n));
  }
  for (std::size_t i = 0; i < r.top1_recall_at_d.size(); ++i) {
    const auto& p = r.top1_recall_at_d[i];
    if (!std::isfinite(p.d_m) || p.d_m < 0) invalid("top1_recall_at_d has an invalid distance");
    if (!in_range(p.recall)) invalid("top1_recall_at_d value outside [0,100]");
    if (i > 0 && p.d_m <= r.top1_recall_at_d[i - 1].d_m) invalid("top1_recall_at_d distances must increase");
    if (i > 0 && p.recall < r.top1_recall_at_d[i - 1].recall) invalid("top1_recall_at_d decreases with distance");
  }
  if (!r.meta.is_object()) invalid("meta must be an object");
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["buckets"] = {{"high", r.buckets.high}, {"medium", r.buckets.medium}, {"coarse", r.buckets.coarse}};
  j["recall_at_n"] = nlohmann::json::array();
  for (const auto& p : r.recall_at_n) j["recall_at_n"].push_back({{"n", p.n}, {"recall", p.recall}});
  j["top1_recall_at_d"] = nlohmann::json::array();
  for (const auto& p : r.top1_recall_at_d) j["top1_recall_at_d"].push_back({{"d_m", p.d_m}, {"recall", p.recall}});
  j["meta"] = r.meta;
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    const auto& b = j.at("buckets");
    r.buckets = {b.at("high").get<double>(), b.at("medium").get<double>(), b.at("coarse").get<double>()};
    for (const auto& p : j.at("recall_at_n")) r.recall_at_n.push_back({p.at("n").get<int>(), p.at("recall").get<double>()});
    for (const auto& p : j.at("top1_recall_at_d"))
      r.top1_recall_at_d.push_back({p.at("d_m").get<double>(), p.at("recall").get<double>()});
    r.meta = j.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    invalid(e.what());
  }
  validate(r);
  return r;
}

std::vector<std::filesystem::path> emit_report(const EvalReport& report, const std::filesystem::path& path, bool plots) {
  validate(report);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path);
    require(out.good(), ErrorCode::IoError, "cannot write " + path.string());
    out << to_json(report).dump(2) << '\n';
    require(out.good(), ErrorCode::IoError, "write failed for " + path.string());
  }
  std::vector<std::filesystem::path> written{path};
  if (!plots) return written;
  const auto stem = path.parent_path() / path.stem();
  if (!report.recall_at_n.empty()) {
    std::vector<double> xs, ys;
    for (const auto& p : report.recall_at_n) {
      xs.push_back(p.n);
      ys.push_back(p.recall);
    }
    written.push_back(stem.string() + "_recall_at_n.png");
    png::write_rgb(written.back(), plot_curve(xs, ys));
  }
  if (!report.top1_recall_at_d.empty()) {
    std::vector<double> xs, ys;
    for (const auto& p : report.top1_recall_at_d) {
      xs.push_back(p.d_m);
      ys.push_back(p.recall);
    }
    written.push_back(stem.string() + "_top1_recall_at_d.png");
    png::write_rgb(written.back(), plot_curve(xs, ys));
  }
  return written;
}

EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::MissingFile, path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    invalid(path.string() + ": " + e.what());
  }
  return report_from_json(j);
}

}  // namespace dasgil::eval
