// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <random>

#include "geokp/losses.hpp"
#include "support.hpp"

using namespace geokp;

namespace {

constexpr double kMargin = 1e-3;  // distance to the nearest min-tie or zero-norm

// nearest-neighbor gap of each row of `from` against rows of `to`
double min_gap_and_floor(const GradPoints& from, const GradPoints& to, bool skip_same_index) {
  double worst = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < from.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    double second = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < to.rows(); ++j) {
      if (skip_same_index && i == j) continue;
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

KeypointSet random_keypoints(Eigen::Index k, std::mt19937_64& rng) {
  KeypointSet kps;
  kps.positions = oracle::random_cloud(k, rng).points;
  return kps;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("expected keypoints: one-hot row picks the point exactly") {
  std::mt19937_64 rng(41);
  const PointCloud cloud = oracle::random_cloud(10, rng);
  ProbabilityMatrix w;
  w.w = Eigen::MatrixXd::Zero(1, 10);
  w.w(0, 7) = 1.0;
  const KeypointSet kps = expected_keypoints(w, cloud);
  CHECK(kps.positions.row(0) == cloud.points.row(7));
}

TEST_CASE("expected keypoints: uniform weights give the midpoint") {
  PointCloud cloud;
  cloud.points.resize(2, 3);
  cloud.points << 0, 0, 0, 1, 0, 0;
  ProbabilityMatrix w;
  w.w.resize(1, 2);
  w.w << 0.5, 0.5;
  const KeypointSet kps = expected_keypoints(w, cloud);
  CHECK((kps.positions.row(0) - Eigen::RowVector3d(0.5, 0, 0)).norm() < 1e-15);
}

TEST_CASE("expected keypoints match the naive double loop") {
  std::mt19937_64 rng(42);
  const PointCloud cloud = oracle::random_cloud(20, rng);
  const ProbabilityMatrix w = oracle::random_probability(5, 20, rng);
  const KeypointSet kps = expected_keypoints(w, cloud);
  for (Eigen::Index j = 0; j < 5; ++j) {
    Eigen::RowVector3d acc = Eigen::RowVector3d::Zero();
    for (Eigen::Index i = 0; i < 20; ++i) acc += w.w(j, i) * cloud.points.row(i);
    CHECK((kps.positions.row(j) - acc).norm() < 1e-12);
  }
  ProbabilityMatrix bad = w;
  bad.w.conservativeResize(5, 19);
  CHECK_THROWS_WITH_AS(expected_keypoints(bad, cloud), doctest::Contains("shape_mismatch"), Error);
}

TEST_CASE("chamfer basics") {
  std::mt19937_64 rng(43);
  const PointCloud cloud = oracle::random_cloud(12, rng);
  CHECK(chamfer(cloud, cloud).value == 0.0);

  PointCloud p, q;
  p.points.resize(1, 3);
  p.points << 0, 0, 0;
  q.points.resize(1, 3);
  q.points << 1, 0, 0;
  CHECK(chamfer(p, q).value == doctest::Approx(2.0));
  CHECK_THROWS_WITH_AS(chamfer(PointCloud{}, q), doctest::Contains("empty_cloud"), Error);
}

TEST_CASE("chamfer is symmetric in its arguments") {
  std::mt19937_64 rng(44);
  const PointCloud p = oracle::random_cloud(9, rng);
  const PointCloud q = oracle::random_cloud(14, rng);
  CHECK(chamfer(p, q).value == doctest::Approx(chamfer(q, p).value).epsilon(1e-12));
}

TEST_CASE("chamfer matches the brute-force oracle and finite differences") {
  std::mt19937_64 rng(45);
  int done = 0;
  while (done < 20) {
    const PointCloud p = oracle::random_cloud(5, rng);
    PointCloud q = oracle::random_cloud(5, rng);
    if (min_gap_and_floor(p.points, q.points, false) < kMargin ||
        min_gap_and_floor(q.points, p.points, false) < kMargin) {
      continue;
    }
    ++done;

    double expected = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      expected += (p.points.row(i) - q.points.row(oracle::nearest_index(p.points.row(i), q.points)))
                      .squaredNorm();
    }
    for (Eigen::Index j = 0; j < q.size(); ++j) {
      expected += (q.points.row(j) - p.points.row(oracle::nearest_index(q.points.row(j), p.points)))
                      .squaredNorm();
    }
    const ChamferResult result = chamfer(p, q);
    CHECK(oracle::rel_error(result.value, expected) < 1e-12);

    Eigen::MatrixXd probe = q.points;
    const Eigen::MatrixXd fd = oracle::fd_gradient(probe, [&](const Eigen::MatrixXd& x) {
      PointCloud moved = q;
      moved.points = x;
      return chamfer(p, moved).value;
    });
    CHECK(oracle::rel_error(result.grad_q, fd) < 1e-6);
  }
}

TEST_CASE("coverage loss analytic values") {
  KeypointSet two;
  two.positions.resize(2, 3);
  two.positions << 0, 0, 0, 1, 0, 0;
  CHECK(coverage_loss(two, 0.01).value == doctest::Approx(1.0 / 1.01).epsilon(1e-12));

  KeypointSet coincident;
  coincident.positions = GradPoints::Zero(3, 3);
  CHECK(coverage_loss(coincident, 0.01).value == doctest::Approx(100.0).epsilon(1e-12));

  KeypointSet one;
  one.positions = GradPoints::Zero(1, 3);
  CHECK_THROWS_WITH_AS(coverage_loss(one, 0.01), doctest::Contains("too_few_keypoints"), Error);
}

TEST_CASE("coverage gradient matches finite differences") {
  std::mt19937_64 rng(46);
  int done = 0;
  while (done < 20) {
    const KeypointSet kps = random_keypoints(6, rng);
    if (min_gap_and_floor(kps.positions, kps.positions, true) < kMargin) continue;
    ++done;
    const KeypointGradResult result = coverage_loss(kps, 0.01);
    Eigen::MatrixXd probe = kps.positions;
    const Eigen::MatrixXd fd = oracle::fd_gradient(probe, [&](const Eigen::MatrixXd& x) {
      KeypointSet moved;
      moved.positions = x;
      return coverage_loss(moved, 0.01).value;
    });
    CHECK(oracle::rel_error(result.grad_keypoints, fd) < 1e-6);
  }
}

TEST_CASE("surface loss analytic values") {
  std::mt19937_64 rng(47);
  const PointCloud cloud = oracle::random_cloud(15, rng);
  KeypointSet on_surface;
  on_surface.positions = cloud.points.topRows(4);
  CHECK(surface_loss(on_surface, cloud).value == 0.0);

  PointCloud single;
  single.points.resize(1, 3);
  single.points << 0, 0, 0;
  KeypointSet lifted;
  lifted.positions.resize(1, 3);
  lifted.positions << 0, 0, 0.5;
  CHECK(surface_loss(lifted, single).value == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("surface gradient matches finite differences") {
  std::mt19937_64 rng(48);
  int done = 0;
  while (done < 20) {
    const PointCloud cloud = oracle::random_cloud(20, rng);
    const KeypointSet kps = random_keypoints(4, rng);
    if (min_gap_and_floor(kps.positions, cloud.points, false) < kMargin) continue;
    ++done;
    const KeypointGradResult result = surface_loss(kps, cloud);
    Eigen::MatrixXd probe = kps.positions;
    const Eigen::MatrixXd fd = oracle::fd_gradient(probe, [&](const Eigen::MatrixXd& x) {
      KeypointSet moved;
      moved.positions = x;
      return surface_loss(moved, cloud).value;
    });
    CHECK(oracle::rel_error(result.grad_keypoints, fd) < 1e-6);
  }
}

TEST_CASE("geodesic loss: identical frames vanish") {
  std::mt19937_64 rng(49);
  const ProbabilityMatrix w = oracle::random_probability(4, 16, rng);
  const GeodesicMatrix d = oracle::random_distances(16, rng);
  const std::vector<ProbabilityMatrix> ws{w, w, w};
  const std::vector<GeodesicMatrix> ds{d, d, d};
  CHECK(geodesic_loss(ws, ds).value == 0.0);
}

TEST_CASE("geodesic loss: two-frame one-keypoint analytic case") {
  // frame 1: two points at distance 1, w = (0.5, 0.5) -> G = 0.5
  // frame 2: one-hot w -> G = 0; unordered-pairs loss = 0.25
  ProbabilityMatrix w1, w2;
  w1.w.resize(1, 2);
  w1.w << 0.5, 0.5;
  w2.w.resize(1, 2);
  w2.w << 1.0, 0.0;
  GeodesicMatrix d;
  d.d.resize(2, 2);
  d.d << 0, 1, 1, 0;
  const std::vector<ProbabilityMatrix> ws{w1, w2};
  const std::vector<GeodesicMatrix> ds{d, d};
  CHECK(geodesic_loss(ws, ds, false).value == doctest::Approx(0.25).epsilon(1e-15));
  // the ordered-pairs convention counts (a,b) and (b,a)
  CHECK(geodesic_loss(ws, ds, true).value == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("geodesic loss matches the quadruple-loop oracle and finite differences") {
  std::mt19937_64 rng(50);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index t_frames = 3, k = 4, n = 16;
    std::vector<ProbabilityMatrix> ws;
    std::vector<GeodesicMatrix> ds;
    for (Eigen::Index t = 0; t < t_frames; ++t) {
      ws.push_back(oracle::random_probability(k, n, rng));
      ds.push_back(oracle::random_distances(n, rng));
    }

    // naive expected-geodesic matrices
    std::vector<Eigen::MatrixXd> g(t_frames, Eigen::MatrixXd::Zero(k, k));
    for (Eigen::Index t = 0; t < t_frames; ++t) {
      for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j)
          for (Eigen::Index m = 0; m < n; ++m)
            for (Eigen::Index q = 0; q < n; ++q)
              g[t](i, j) += ws[t].w(i, m) * ds[t].d(m, q) * ws[t].w(j, q);
    }
    double expected = 0.0;
    for (Eigen::Index a = 0; a < t_frames; ++a)
      for (Eigen::Index b = a + 1; b < t_frames; ++b) expected += (g[a] - g[b]).squaredNorm();

    const GeodesicLossResult result = geodesic_loss(ws, ds, false);
    CHECK(std::abs(result.value - expected) < 1e-10);

    if (trial < 3) {  // finite differences on the first few trials
      for (Eigen::Index t = 0; t < t_frames; ++t) {
        Eigen::MatrixXd probe = ws[t].w;
        const Eigen::MatrixXd fd = oracle::fd_gradient(probe, [&](const Eigen::MatrixXd& x) {
          std::vector<ProbabilityMatrix> mod = ws;
          mod[static_cast<std::size_t>(t)].w = x;
          return geodesic_loss(mod, ds, false).value;
        });
        CHECK(oracle::rel_error(result.grad_w[static_cast<std::size_t>(t)], fd) < 1e-6);
      }
    }
  }
}

TEST_CASE("geodesic loss is invariant under point relabeling") {
  std::mt19937_64 rng(51);
  const Eigen::Index n = 12;
  std::vector<ProbabilityMatrix> ws{oracle::random_probability(3, n, rng),
                                    oracle::random_probability(3, n, rng)};
  std::vector<GeodesicMatrix> ds{oracle::random_distances(n, rng),
                                 oracle::random_distances(n, rng)};
  const double base = geodesic_loss(ws, ds).value;

  std::vector<Eigen::Index> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<ProbabilityMatrix> ws_p = ws;
  std::vector<GeodesicMatrix> ds_p = ds;
  for (std::size_t t = 0; t < ws.size(); ++t) {
    for (Eigen::Index i = 0; i < n; ++i) {
      ws_p[t].w.col(perm[static_cast<std::size_t>(i)]) = ws[t].w.col(i);
      for (Eigen::Index j = 0; j < n; ++j) {
        ds_p[t].d(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]) =
            ds[t].d(i, j);
      }
    }
  }
  CHECK(oracle::rel_error(geodesic_loss(ws_p, ds_p).value, base) < 1e-12);
}

TEST_CASE("smoothing loss basics") {
  std::mt19937_64 rng(52);
  const KeypointSet kps = random_keypoints(5, rng);
  const std::vector<KeypointSet> static_seq{kps, kps, kps};
  CHECK(smoothing_loss(static_seq).value == 0.0);

  KeypointSet shifted = kps;
  shifted.positions.col(0).array() += 0.1;
  const std::vector<KeypointSet> pair{kps, shifted};
  CHECK(smoothing_loss(pair).value == doctest::Approx(0.1).epsilon(1e-12));

  CHECK_THROWS_WITH_AS(smoothing_loss(std::vector<KeypointSet>{kps}),
                       doctest::Contains("too_few_frames"), Error);
}

TEST_CASE("smoothing gradient matches finite differences") {
  std::mt19937_64 rng(53);
  int done = 0;
  while (done < 20) {
    std::vector<KeypointSet> seq;
    for (int t = 0; t < 4; ++t) seq.push_back(random_keypoints(5, rng));
    bool degenerate = false;
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      degenerate = degenerate ||
                   (seq[t].positions - seq[t + 1].positions).rowwise().norm().minCoeff() < kMargin;
    }
    if (degenerate) continue;
    ++done;

    const SmoothingLossResult result = smoothing_loss(seq);
    for (std::size_t t = 0; t < seq.size(); ++t) {
      Eigen::MatrixXd probe = seq[t].positions;
      const Eigen::MatrixXd fd = oracle::fd_gradient(probe, [&](const Eigen::MatrixXd& x) {
        std::vector<KeypointSet> mod = seq;
        mod[t].positions = x;
        return smoothing_loss(mod).value;
      });
      CHECK(oracle::rel_error(result.grad_keypoints[t], fd) < 1e-6);
    }
  }
}

TEST_CASE("total loss: zero weights give zero regardless of inputs") {
  std::mt19937_64 rng(54);
  SequenceWindow window;
  window.frames = {oracle::random_cloud(12, rng), oracle::random_cloud(12, rng)};
  std::vector<ProbabilityMatrix> ws{oracle::random_probability(3, 12, rng),
                                    oracle::random_probability(3, 12, rng)};
  LossWeights weights;
  weights.rec = weights.cov = weights.surf = weights.geo = weights.smt = 0.0;
  const TotalLossResult result = total_loss(window, ws, {}, {}, weights);
  CHECK(result.breakdown.total == 0.0);
}

TEST_CASE("total loss equals the manually weighted sum of its terms") {
  std::mt19937_64 rng(55);
  SequenceWindow window;
  window.frames = {oracle::random_cloud(14, rng), oracle::random_cloud(14, rng)};
  std::vector<ProbabilityMatrix> ws{oracle::random_probability(4, 14, rng),
                                    oracle::random_probability(4, 14, rng)};
  std::vector<GeodesicMatrix> ds{oracle::random_distances(14, rng),
                                 oracle::random_distances(14, rng)};
  std::vector<PointCloud> recons{oracle::random_cloud(6, rng), oracle::random_cloud(6, rng)};

  const LossWeights weights;  // paper defaults {1, 2.5, 6, 6, 2}
  const TotalLossResult result = total_loss(window, ws, ds, recons, weights);

  std::vector<KeypointSet> kps;
  for (int t = 0; t < 2; ++t) kps.push_back(expected_keypoints(ws[t], window.frames[t]));
  double rec = 0, cov = 0, surf = 0;
  for (int t = 0; t < 2; ++t) {
    rec += 0.5 * chamfer(window.frames[t], recons[t]).value;
    cov += 0.5 * coverage_loss(kps[t], weights.epsilon).value;
    surf += 0.5 * surface_loss(kps[t], window.frames[t]).value;
  }
  const double geo = geodesic_loss(ws, ds).value;
  const double smt = smoothing_loss(kps).value;
  const double manual =
      weights.rec * rec + weights.cov * cov + weights.surf * surf + weights.geo * geo + weights.smt * smt;
  CHECK(std::abs(result.breakdown.total - manual) < 1e-12);

  // zeroing one weight removes exactly that contribution
  LossWeights no_geo = weights;
  no_geo.geo = 0.0;
  const TotalLossResult ablated = total_loss(window, ws, ds, recons, no_geo);
  CHECK(ablated.breakdown.geo == 0.0);
  CHECK(std::abs(ablated.breakdown.total - (manual - weights.geo * geo)) < 1e-12);
}

TEST_CASE("total loss gradients: W and reconstruction against finite differences") {
  std::mt19937_64 rng(56);
  int done = 0;
  while (done < 3) {
    SequenceWindow window;
    window.frames = {oracle::random_cloud(10, rng), oracle::random_cloud(10, rng)};
    std::vector<ProbabilityMatrix> ws{oracle::random_probability(3, 10, rng),
                                      oracle::random_probability(3, 10, rng)};
    std::vector<GeodesicMatrix> ds{oracle::random_distances(10, rng),
                                   oracle::random_distances(10, rng)};
    std::vector<PointCloud> recons{oracle::random_cloud(5, rng), oracle::random_cloud(5, rng)};
    const LossWeights weights;

    // keep clear of min ties in every nearest-neighbor term
    bool degenerate = false;
    for (int t = 0; t < 2; ++t) {
      const KeypointSet kps = expected_keypoints(ws[t], window.frames[t]);
      degenerate = degenerate ||
                   min_gap_and_floor(kps.positions, kps.positions, true) < kMargin ||
                   min_gap_and_floor(kps.positions, window.frames[t].points, false) < kMargin ||
                   min_gap_and_floor(window.frames[t].points, recons[t].points, false) < kMargin ||
                   min_gap_and_floor(recons[t].points, window.frames[t].points, false) < kMargin;
    }
    {
      const KeypointSet k0 = expected_keypoints(ws[0], window.frames[0]);
      const KeypointSet k1 = expected_keypoints(ws[1], window.frames[1]);
      degenerate =
          degenerate || (k0.positions - k1.positions).rowwise().norm().minCoeff() < kMargin;
    }
    if (degenerate) continue;
    ++done;

    const TotalLossResult result = total_loss(window, ws, ds, recons, weights);

    for (int t = 0; t < 2; ++t) {
      // d total / d W, with the keypoints tied to W inside total_loss
      const Eigen::MatrixXd analytic =
          result.grad_w[static_cast<std::size_t>(t)] +
          result.grad_keypoints[static_cast<std::size_t>(t)] * window.frames[t].points.transpose();
      Eigen::MatrixXd probe = ws[static_cast<std::size_t>(t)].w;
      const Eigen::MatrixXd fd = oracle::fd_gradient(probe, [&](const Eigen::MatrixXd& x) {
        std::vector<ProbabilityMatrix> mod = ws;
        mod[static_cast<std::size_t>(t)].w = x;
        return total_loss(window, mod, ds, recons, weights).breakdown.total;
      });
      CHECK(oracle::rel_error(analytic, fd) < 1e-5);

      Eigen::MatrixXd rprobe = recons[static_cast<std::size_t>(t)].points;
      const Eigen::MatrixXd rfd = oracle::fd_gradient(rprobe, [&](const Eigen::MatrixXd& x) {
        std::vector<PointCloud> mod = recons;
        mod[static_cast<std::size_t>(t)].points = x;
        return total_loss(window, ws, ds, mod, weights).breakdown.total;
      });
      CHECK(oracle::rel_error(result.grad_recon[static_cast<std::size_t>(t)], rfd) < 1e-5);
    }
  }
}

TEST_CASE("rigid motion leaves the geodesic loss alone but moves the smoothing loss") {
  std::mt19937_64 rng(57);
  const PointCloud cloud = oracle::random_cloud(48, rng);
  const Mat3 r = oracle::random_rotation(rng);
  const PointCloud moved = rigid_transform(cloud, r, Vec3(0.5, 0.0, -0.2));

  const ProbabilityMatrix w = oracle::random_probability(4, 48, rng);
  const GeodesicMatrix d_orig = shortest_paths(build_knn_graph(cloud, 5));
  const GeodesicMatrix d_moved = shortest_paths(build_knn_graph(moved, 5));

  const std::vector<ProbabilityMatrix> ws{w, w};
  const std::vector<GeodesicMatrix> ds{d_orig, d_moved};
  CHECK(geodesic_loss(ws, ds).value < 1e-9);

  const std::vector<KeypointSet> kps{expected_keypoints(w, cloud), expected_keypoints(w, moved)};
  CHECK(smoothing_loss(kps).value > 0.01);
}

TEST_CASE("all losses are non-negative on random instances") {
  std::mt19937_64 rng(58);
  for (int trial = 0; trial < 25; ++trial) {
    const PointCloud cloud = oracle::random_cloud(16, rng);
    const PointCloud recon = oracle::random_cloud(8, rng);
    const ProbabilityMatrix w = oracle::random_probability(4, 16, rng);
    const KeypointSet kps = expected_keypoints(w, cloud);
    CHECK(chamfer(cloud, recon).value >= 0.0);
    CHECK(coverage_loss(kps, 1e-2).value >= 0.0);
    CHECK(surface_loss(kps, cloud).value >= 0.0);
    const std::vector<ProbabilityMatrix> ws{w, oracle::random_probability(4, 16, rng)};
    const std::vector<GeodesicMatrix> ds{oracle::random_distances(16, rng),
                                         oracle::random_distances(16, rng)};
    CHECK(geodesic_loss(ws, ds).value >= 0.0);
    const std::vector<KeypointSet> seq{kps, expected_keypoints(ws[1], cloud)};
    CHECK(smoothing_loss(seq).value >= 0.0);
  }
}

}  // TEST_SUITE
