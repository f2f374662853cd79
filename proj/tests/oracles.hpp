#pragma once

// Independent reference implementations used by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Geometry>

#include "dasgil/evalbench.hpp"
#include "dasgil/retrieval.hpp"

namespace dasgil::testing {

// Descriptor as plain nested vectors, one inner vector per layer.
using PlainDescriptor = std::vector<std::vector<double>>;

inline PlainDescriptor plain(const retrieval::Descriptor& d) {
  PlainDescriptor out;
  for (const auto& p : d.parts) out.emplace_back(p.data(), p.data() + p.size());
  return out;
}

inline double l1_plain(const PlainDescriptor& a, const PlainDescriptor& b) {
  double total = 0;
  for (std::size_t s = 0; s < a.size(); ++s)
    for (std::size_t j = 0; j < a[s].size(); ++j) total += std::fabs(a[s][j] - b[s][j]);
  return total;
}

inline double cosine_plain(const PlainDescriptor& a, const PlainDescriptor& b) {
  double total = 0;
  for (std::size_t s = 0; s < a.size(); ++s) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t j = 0; j < a[s].size(); ++j) {
      dot += a[s][j] * b[s][j];
      na += a[s][j] * a[s][j];
      nb += b[s][j] * b[s][j];
    }
    if (na > 0 && nb > 0) total += dot / std::sqrt(na * nb);
  }
  return total;
}

// Full scan: sort (score, insertion index) pairs and keep k.
inline std::vector<std::size_t> brute_force_topk(const std::vector<PlainDescriptor>& db, const PlainDescriptor& q,
                                                 bool cosine, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < db.size(); ++i)
    scored.emplace_back(cosine ? -cosine_plain(q, db[i]) : l1_plain(q, db[i]), i);
  std::sort(scored.begin(), scored.end());
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < std::min(k, scored.size()); ++r) out.push_back(scored[r].second);
  return out;
}

// Random descriptor with values on a coarse grid so exact ties occur.
inline retrieval::Descriptor random_descriptor(const std::vector<int>& layers, const std::vector<int>& dims,
                                               std::mt19937_64& rng, const std::string& id) {
  retrieval::Descriptor d{id, layers, {}, std::nullopt};
  std::uniform_int_distribution<int> grid(-4, 4);
  for (int n : dims) {
    Eigen::VectorXf v(n);
    for (int j = 0; j < n; ++j) v[j] = 0.25f * float(grid(rng));
    d.parts.push_back(v);
  }
  return d;
}

// Recall@N straight from the definition: scan the first N candidates of every query.
inline std::vector<double> recall_oracle(const std::vector<std::vector<Eigen::Vector3d>>& ranked,
                                         const std::vector<Eigen::Vector3d>& truth, const std::vector<int>& ns,
                                         double radius) {
  std::vector<double> out;
  for (int n : ns) {
    int hits = 0;
    for (std::size_t q = 0; q < ranked.size(); ++q) {
      bool any = false;
      for (std::size_t r = 0; r < ranked[q].size() && r < std::size_t(n); ++r) {
        const Eigen::Vector3d d = ranked[q][r] - truth[q];
        any = any || std::sqrt(d.x() * d.x() + d.y() * d.y() + d.z() * d.z()) <= radius;
      }
      hits += any;
    }
    out.push_back(100.0 * hits / double(ranked.size()));
  }
  return out;
}

inline Eigen::Quaterniond random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  return q.normalized();
}

// Random queries with 1..30 candidates each, scattered within 60 m of the truth.
struct RandomGeometry {
  std::vector<eval::QueryOutcome> outcomes;
  std::vector<std::vector<Eigen::Vector3d>> ranked;
  std::vector<Eigen::Vector3d> truth;
};

inline RandomGeometry random_geometry(std::mt19937_64& rng) {
  RandomGeometry g;
  std::uniform_int_distribution<int> nq(1, 20), nc(1, 30);
  std::uniform_real_distribution<double> u(-35.0, 35.0), small(-1.0, 1.0);
  const int queries = nq(rng);
  for (int q = 0; q < queries; ++q) {
    eval::QueryOutcome o;
    o.truth.position = Eigen::Vector3d(u(rng), u(rng), u(rng) * 0.1);
    o.truth.orientation = random_rotation(rng);
    const double spread = std::abs(small(rng)) * 60.0 + 0.1;
    std::vector<Eigen::Vector3d> cand;
    const int c = nc(rng);
    for (int k = 0; k < c; ++k) {
      data::Pose p;
      p.position = o.truth.position + spread / 35.0 * Eigen::Vector3d(u(rng), u(rng), u(rng));
      p.orientation = (o.truth.orientation * Eigen::Quaterniond(Eigen::AngleAxisd(small(rng) * 0.3,
                                                                                   Eigen::Vector3d::UnitY())))
                          .normalized();
      o.ranked.push_back(p);
      cand.push_back(p.position);
    }
    g.ranked.push_back(cand);
    g.truth.push_back(o.truth.position);
    g.outcomes.push_back(std::move(o));
  }
  return g;
}

}  // namespace dasgil::testing
