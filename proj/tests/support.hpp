// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/LU>
#include <Eigen/QR>

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "geokp/geodesy.hpp"
#include "geokp/losses.hpp"
#include "geokp/nnet.hpp"
#include "geokp/pcloud.hpp"

// Test-only oracles. Everything here is deliberately naive and independent of
// the implementation paths it checks.
namespace oracle {

inline geokp::PointCloud random_cloud(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> uniform(-0.5 * scale, 0.5 * scale);
  geokp::PointCloud cloud;
  cloud.points.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) cloud.points(i, c) = uniform(rng);
  }
  return cloud;
}

inline geokp::ProbabilityMatrix random_probability(Eigen::Index k, Eigen::Index n,
                                                   std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.05, 1.0);
  geokp::ProbabilityMatrix w;
  w.w.resize(k, n);
  for (Eigen::Index j = 0; j < k; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) w.w(j, i) = uniform(rng);
    w.w.row(j) /= w.w.row(j).sum();
  }
  return w;
}

// random symmetric zero-diagonal "distance" matrix; good enough for the
// algebraic identities of the geodesic loss
inline geokp::GeodesicMatrix random_distances(Eigen::Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.1, 2.0);
  geokp::GeodesicMatrix d;
  d.d.setZero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = uniform(rng);
      d.d(i, j) = v;
      d.d(j, i) = v;
    }
  }
  return d;
}

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Matrix3d m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = gauss(rng);
  Eigen::Matrix3d q = Eigen::HouseholderQR<Eigen::Matrix3d>(m).householderQ();
  if (q.determinant() < 0) q.col(0) *= -1.0;
  return q;
}

// all-pairs shortest paths the slow cubic way
inline Eigen::MatrixXd floyd_warshall(const geokp::NeighborGraph& graph) {
  const auto n = graph.n;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd d = Eigen::MatrixXd::Constant(n, n, kInf);
  for (Eigen::Index i = 0; i < n; ++i) d(i, i) = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (const auto& [j, w] : graph.edges[static_cast<std::size_t>(i)]) {
      d(i, j) = std::min(d(i, j), w);
    }
  }
  for (Eigen::Index m = 0; m < n; ++m) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        d(i, j) = std::min(d(i, j), d(i, m) + d(m, j));
      }
    }
  }
  return d;
}

// brute-force farthest point sampling: O(N^2 m) max-min selection
inline std::vector<Eigen::Index> fps_brute_force(const geokp::PointCloud& cloud, Eigen::Index m,
                                                 Eigen::Index start) {
  std::vector<Eigen::Index> picked{start};
  while (static_cast<Eigen::Index>(picked.size()) < m) {
    Eigen::Index best = -1;
    double best_min = -1.0;
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
      bool taken = false;
      double min_d = std::numeric_limits<double>::infinity();
      for (Eigen::Index p : picked) {
        if (p == i) taken = true;
        min_d = std::min(min_d, (cloud.points.row(i) - cloud.points.row(p)).squaredNorm());
      }
      if (taken) continue;
      if (min_d > best_min) {
        best_min = min_d;
        best = i;
      }
    }
    picked.push_back(best);
  }
  return picked;
}

inline Eigen::Index nearest_index(const Eigen::RowVector3d& query, const geokp::PointMatrix& points,
                                  Eigen::Index skip = -1) {
  Eigen::Index best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    if (i == skip) continue;
    const double d2 = (query - points.row(i)).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

inline Eigen::MatrixXd euclidean_matrix(const geokp::PointCloud& cloud) {
  const auto n = cloud.size();
  Eigen::MatrixXd e(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) e(i, j) = (cloud.points.row(i) - cloud.points.row(j)).norm();
  return e;
}

// --- finite differences -----------------------------------------------------

inline constexpr double kFdStep = 1e-5;

/// Central finite differences of eval() with respect to every entry of x,
/// where eval reads the current contents of x. Parallel over entries; each
/// worker perturbs its own copy.
inline Eigen::MatrixXd fd_gradient(Eigen::MatrixXd& x,
                                   const std::function<double(const Eigen::MatrixXd&)>& eval,
                                   double step = kFdStep) {
  Eigen::MatrixXd grad(x.rows(), x.cols());
  const Eigen::MatrixXd base = x;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      Eigen::MatrixXd probe = base;
      probe(r, c) = base(r, c) + step;
      const double up = eval(probe);
      probe(r, c) = base(r, c) - step;
      const double down = eval(probe);
      grad(r, c) = (up - down) / (2.0 * step);
    }
  }
  return grad;
}

/// Norm-wise relative error between an analytic and a reference gradient.
inline double rel_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& reference) {
  const double scale = std::max({analytic.norm(), reference.norm(), 1e-12});
  return (analytic - reference).norm() / scale;
}

inline double rel_error(double analytic, double reference) {
  const double scale = std::max({std::abs(analytic), std::abs(reference), 1e-12});
  return std::abs(analytic - reference) / scale;
}

// --- non-degenerate network configurations ----------------------------------
//
// End-to-end finite differences need configurations where no min-tie,
// zero-norm or ReLU kink sits within reach of the probe. A 1e-5 step moves
// any pre-activation by at most ~1e-5 (unit-bounded leverage), so a 5e-5
// margin on |z| keeps every ReLU on one side; geometric margins follow the
// 1e-3 resampling rule for the distance terms.

struct NetworkConfig {
  geokp::ModelParams params;
  geokp::SequenceWindow window;
  std::vector<geokp::GeodesicMatrix> ds;
};

inline double geometry_margin(const Eigen::Matrix<double, Eigen::Dynamic, 3>& from,
                              const Eigen::Matrix<double, Eigen::Dynamic, 3>& to, bool skip_same) {
  double worst = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < from.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    double second = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < to.rows(); ++j) {
      if (skip_same && i == j) continue;
      const double d = (from.row(i) - to.row(j)).norm();
      if (d < best) {
        second = best;
        best = d;
      } else {
        second = std::min(second, d);
      }
    }
    worst = std::min({worst, best, second - best});
  }
  return worst;
}

inline bool degenerate_network_config(const geokp::ModelParams& params,
                                      const geokp::SequenceWindow& window,
                                      double z_margin = 5e-5, double geom_margin = 1e-3) {
  std::vector<geokp::KeypointSet> kps;
  for (const auto& frame : window.frames) {
    const geokp::ForwardResult fw = geokp::forward(params, frame);
    const auto& c = fw.cache;
    for (const Eigen::MatrixXd* z : {&c.z1, &c.z2, &c.z3}) {
      if (z->cwiseAbs().minCoeff() < z_margin) return true;
    }
    if (c.za.cwiseAbs().minCoeff() < z_margin) return true;
    if (c.zb.cwiseAbs().minCoeff() < z_margin) return true;
    // max-pool argmax must not flip either; a tie at exactly 0 is a dead
    // channel whose values are ReLU-clamped flat, not a kink
    for (int f = 0; f < geokp::kEncFeature; ++f) {
      double best = -std::numeric_limits<double>::infinity();
      double second = best;
      for (Eigen::Index i = 0; i < c.h2.cols(); ++i) {
        const double v = c.h2(f, i);
        if (v > best) {
          second = best;
          best = v;
        } else {
          second = std::max(second, v);
        }
      }
      if (best > 0.0 && best - second < z_margin) return true;
    }
    // distance-term margins: coverage, surface, chamfer
    if (geometry_margin(fw.keypoints.positions, fw.keypoints.positions, true) < geom_margin) return true;
    if (geometry_margin(fw.keypoints.positions, frame.points, false) < geom_margin) return true;
    if (geometry_margin(frame.points, fw.reconstruction.points, false) < geom_margin) return true;
    if (geometry_margin(fw.reconstruction.points, frame.points, false) < geom_margin) return true;
    kps.push_back(fw.keypoints);
  }
  for (std::size_t t = 0; t + 1 < kps.size(); ++t) {
    if ((kps[t].positions - kps[t + 1].positions).rowwise().norm().minCoeff() < geom_margin) {
      return true;
    }
  }
  return false;
}

/// Pushes every pre-activation that sits within `z_margin` of its ReLU kink
/// away from zero by nudging the owning unit's bias. Returns the number of
/// units touched.
inline int repair_kinks(geokp::ModelParams& params, const geokp::SequenceWindow& window,
                        double z_margin, std::mt19937_64& rng) {
  using geokp::ModelTensors;
  std::uniform_real_distribution<double> jitter(6.0 * z_margin, 30.0 * z_margin);
  int touched = 0;
  std::vector<std::pair<Eigen::MatrixXd ModelTensors::*, Eigen::Index>> offenders;
  for (const auto& frame : window.frames) {
    const geokp::ForwardCache cache = geokp::forward(params, frame).cache;
    const std::pair<const Eigen::MatrixXd*, Eigen::MatrixXd ModelTensors::*> layers[] = {
        {&cache.z1, &ModelTensors::enc1_b}, {&cache.z2, &ModelTensors::enc2_b},
        {&cache.z3, &ModelTensors::head1_b}};
    for (const auto& [z, bias] : layers) {
      for (Eigen::Index unit = 0; unit < z->rows(); ++unit) {
        if (z->row(unit).cwiseAbs().minCoeff() < z_margin) offenders.emplace_back(bias, unit);
      }
    }
    const std::pair<const Eigen::VectorXd*, Eigen::MatrixXd ModelTensors::*> dec_layers[] = {
        {&cache.za, &ModelTensors::dec1_b}, {&cache.zb, &ModelTensors::dec2_b}};
    for (const auto& [z, bias] : dec_layers) {
      for (Eigen::Index unit = 0; unit < z->size(); ++unit) {
        if (std::abs((*z)[unit]) < z_margin) offenders.emplace_back(bias, unit);
      }
    }
  }
  for (const auto& [bias, unit] : offenders) {
    (params.t.*bias)(unit, 0) += (rng() & 1 ? 1.0 : -1.0) * jitter(rng);
    ++touched;
  }
  return touched;
}

/// Draws seeds until the induced configuration is clear of every kink,
/// min-tie and zero-norm. The weights are amplified so the softmax is peaky
/// enough to spread the keypoints away from their mutual ties; units whose
/// pre-activation lands on a kink get their bias nudged aside.
inline NetworkConfig sample_network_config(int k, int m, Eigen::Index n, int frames,
                                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < 200; ++attempt) {
    NetworkConfig config;
    config.params = geokp::init_params(k, m, rng());
    for (auto member : geokp::kTensorMembers) {
      if ((config.params.t.*member).cols() > 1) (config.params.t.*member) *= 3.0;
    }
    config.window.frames.clear();
    config.ds.clear();
    bool connected = true;
    for (int t = 0; t < frames; ++t) {
      const geokp::PointCloud cloud = geokp::normalize(oracle::random_cloud(n, rng));
      config.window.frames.push_back(cloud);
      const geokp::NeighborGraph graph = geokp::build_knn_graph(cloud, 5);
      if (geokp::component_sizes(graph).size() > 1) {
        connected = false;
        break;
      }
      config.ds.push_back(geokp::shortest_paths(graph));
    }
    if (!connected) continue;
    for (int round = 0; round < 25; ++round) {
      if (repair_kinks(config.params, config.window, 5e-5, rng) == 0) break;
    }
    if (degenerate_network_config(config.params, config.window)) continue;
    return config;
  }
  throw std::runtime_error("no non-degenerate network configuration found");
}

}  // namespace oracle

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("geokp_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};
