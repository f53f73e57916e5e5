// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>
#include <random>

#include "geokp/geodesy.hpp"
#include "geokp/synth.hpp"
#include "support.hpp"

using namespace geokp;

namespace {

CorrespondenceMap identity_map(Eigen::Index n) {
  CorrespondenceMap map(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < map.size(); ++i) map[i] = static_cast<std::int32_t>(i);
  return map;
}

void check_matrix_invariants(const GeodesicMatrix& d, const PointCloud& cloud) {
  const auto n = d.size();
  // exact symmetry, zero diagonal
  CHECK(d.d == d.d.transpose().eval());
  CHECK(d.d.diagonal().cwiseAbs().maxCoeff() == 0.0);
  // triangle inequality and the Euclidean lower bound
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      CHECK(d.d(i, j) >= (cloud.points.row(i) - cloud.points.row(j)).norm() - 1e-9);
      for (Eigen::Index m = 0; m < n; ++m) {
        CHECK(d.d(i, j) <= d.d(i, m) + d.d(m, j) + 1e-9);
      }
    }
  }
}

}  // namespace

TEST_SUITE("geodesy") {

TEST_CASE("knn on three collinear points") {
  PointCloud cloud;
  cloud.points.resize(3, 3);
  cloud.points << 0, 0, 0, 1, 0, 0, 2, 0, 0;
  const NeighborGraph g = build_knn_graph(cloud, 2);
  // complete graph here: 0-1 (1), 1-2 (1), 0-2 (2)
  REQUIRE(g.edges[0].size() == 2);
  CHECK(g.edges[0][0] == std::pair<std::int32_t, double>{1, 1.0});
  CHECK(g.edges[0][1] == std::pair<std::int32_t, double>{2, 2.0});
  CHECK(g.edges[1].size() == 2);
  CHECK(g.edges[2][0].second == 2.0);
}

TEST_CASE("knn k=1 on the unit square links sides, never the diagonal") {
  PointCloud cloud;
  cloud.points.resize(4, 3);
  cloud.points << 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0;
  const NeighborGraph g = build_knn_graph(cloud, 1);
  for (Eigen::Index i = 0; i < 4; ++i) {
    // edges are the symmetrized union, so a node may also carry the picks of
    // others; none of them may be the diagonal
    for (const auto& [j, w] : g.edges[static_cast<std::size_t>(i)]) {
      CHECK(w == doctest::Approx(1.0));  // never sqrt(2)
    }
    // ties broken toward the lower index: node i's own pick is the
    // brute-force (distance, index) winner
    const std::int32_t own = knn_neighbors(cloud, 1)[static_cast<std::size_t>(i)][0];
    CHECK(own == oracle::nearest_index(cloud.points.row(i), cloud.points, i));
  }
}

TEST_CASE("knn k=N-1 yields the complete graph with Euclidean weights") {
  std::mt19937_64 rng(31);
  const PointCloud cloud = oracle::random_cloud(12, rng);
  const NeighborGraph g = build_knn_graph(cloud, 11);
  const GeodesicMatrix d = shortest_paths(g);
  const Eigen::MatrixXd e = oracle::euclidean_matrix(cloud);
  CHECK((d.d - e).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("kd-tree neighbors equal brute force, including tie-breaks") {
  std::mt19937_64 rng(32);
  // random clouds plus a lattice cloud full of exact distance ties
  for (int trial = 0; trial < 3; ++trial) {
    PointCloud cloud;
    if (trial < 2) {
      cloud = oracle::random_cloud(600, rng);
    } else {
      cloud.points.resize(8 * 8 * 8, 3);
      int r = 0;
      for (int x = 0; x < 8; ++x)
        for (int y = 0; y < 8; ++y)
          for (int z = 0; z < 8; ++z) cloud.points.row(r++) << x, y, z;
    }
    const auto brute = knn_neighbors(cloud, 5, KnnMethod::brute_force);
    const auto tree = knn_neighbors(cloud, 5, KnnMethod::kd_tree);
    REQUIRE(brute.size() == tree.size());
    for (std::size_t i = 0; i < brute.size(); ++i) CHECK(brute[i] == tree[i]);
  }
}

TEST_CASE("shortest paths on a path graph") {
  PointCloud cloud;
  cloud.points.resize(3, 3);
  cloud.points << 0, 0, 0, 1, 0, 0, 2, 0, 0;
  const GeodesicMatrix d = shortest_paths(build_knn_graph(cloud, 1));
  CHECK(d.d(0, 2) == doctest::Approx(2.0));
}

TEST_CASE("shortest paths match Floyd-Warshall on random clouds") {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index n = 16 + static_cast<Eigen::Index>(rng() % 49);
    const PointCloud cloud = oracle::random_cloud(n, rng);
    NeighborGraph g = build_knn_graph(cloud, 5);
    if (component_sizes(g).size() > 1) continue;  // rare at this density
    const GeodesicMatrix d = shortest_paths(g);
    const Eigen::MatrixXd ref = oracle::floyd_warshall(g);
    CHECK((d.d - ref).cwiseAbs().maxCoeff() < 1e-12);
    check_matrix_invariants(d, cloud);
  }
}

TEST_CASE("disconnected graphs are reported with component sizes") {
  PointCloud cloud;
  cloud.points.resize(6, 3);
  // two clusters far apart
  cloud.points << 0, 0, 0, 0.01, 0, 0, 0, 0.01, 0, 9, 9, 9, 9.01, 9, 9, 9, 9.01, 9;
  const NeighborGraph g = build_knn_graph(cloud, 2);
  CHECK(component_sizes(g) == std::vector<Eigen::Index>{3, 3});
  CHECK_THROWS_WITH_AS(shortest_paths(g), doctest::Contains("disconnected_graph"), Error);
}

TEST_CASE("monotonicity: increasing k never increases any distance") {
  std::mt19937_64 rng(34);
  PointCloud cloud = oracle::random_cloud(80, rng);
  while (component_sizes(build_knn_graph(cloud, 5)).size() > 1) {
    cloud = oracle::random_cloud(80, rng);
  }
  GeodesicMatrix prev = shortest_paths(build_knn_graph(cloud, 5));
  for (int k : {7, 10, 15}) {
    const GeodesicMatrix next = shortest_paths(build_knn_graph(cloud, k));
    CHECK((next.d.array() <= prev.d.array()).all());
    prev = next;
  }
}

TEST_CASE("rigid invariance of the geodesic matrix") {
  std::mt19937_64 rng(35);
  const PointCloud cloud = oracle::random_cloud(128, rng);
  const GeodesicMatrix base = shortest_paths(build_knn_graph(cloud, 5));
  const Mat3 r = oracle::random_rotation(rng);
  const PointCloud moved = rigid_transform(cloud, r, Vec3(0.3, 0.1, -2.0));
  const GeodesicMatrix after = shortest_paths(build_knn_graph(moved, 5));
  CHECK((base.d - after.d).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("shortcut diagnostic: identical clouds give an empty report") {
  std::mt19937_64 rng(36);
  const PointCloud cloud = oracle::random_cloud(64, rng);
  const ShortcutReport report =
      shortcut_diagnostic(cloud, cloud, identity_map(cloud.size()));
  CHECK(report.pairs.empty());
}

TEST_CASE("shortcut diagnostic: gentle bending stays under the threshold") {
  DeformSpec spec;
  spec.generator = Generator::bending_cylinder;
  spec.n_points = 512;
  spec.n_frames = 4;
  spec.amplitude = 0.3;
  spec.seed = 7;
  const SequenceWindow window = generate(spec);
  const ShortcutReport report = shortcut_diagnostic(window.frames.front(), window.frames.back(),
                                                    identity_map(spec.n_points));
  CHECK(report.pairs.empty());
}

TEST_CASE("shortcut diagnostic: ends touching at full amplitude are flagged") {
  DeformSpec spec;
  spec.generator = Generator::bending_cylinder;
  spec.n_points = 512;
  spec.n_frames = 4;
  spec.amplitude = 1.0;
  spec.seed = 7;
  const SequenceWindow window = generate(spec);
  const ShortcutReport report = shortcut_diagnostic(window.frames.front(), window.frames.back(),
                                                    identity_map(spec.n_points));
  CHECK(!report.pairs.empty());
  // the worst offenders collapse macro-scale distances
  CHECK(report.pairs.front().rel_change > 0.5);
}

TEST_CASE("cache round trip is bit exact") {
  TempDir tmp("gkpd");
  std::mt19937_64 rng(37);
  // float32-representable symmetric matrix
  GeodesicMatrix m;
  m.d.setZero(32, 32);
  std::uniform_real_distribution<float> uniform(0.0f, 2.0f);
  for (int i = 0; i < 32; ++i) {
    for (int j = i + 1; j < 32; ++j) {
      const float v = uniform(rng);
      m.d(i, j) = static_cast<double>(v);
      m.d(j, i) = static_cast<double>(v);
    }
  }
  cache_write(m, tmp / "m.gkpd");
  const GeodesicMatrix back = cache_read(tmp / "m.gkpd");
  CHECK(back.d == m.d);

  // writing the re-read matrix reproduces the file byte for byte
  cache_write(back, tmp / "m2.gkpd");
  std::ifstream a(tmp / "m.gkpd", std::ios::binary);
  std::ifstream b(tmp / "m2.gkpd", std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  const std::string bytes_b((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(bytes_a == bytes_b);
}

TEST_CASE("cache rejects truncation and bad magic") {
  TempDir tmp("gkpd_bad");
  GeodesicMatrix m;
  m.d.setZero(4, 4);
  cache_write(m, tmp / "ok.gkpd");

  // truncate
  {
    std::ifstream in(tmp / "ok.gkpd", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(tmp / "short.gkpd", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 7));
  }
  CHECK_THROWS_WITH_AS(cache_read(tmp / "short.gkpd"), doctest::Contains("size_mismatch"), Error);

  // wrong magic
  {
    std::ofstream out(tmp / "bad.gkpd", std::ios::binary);
    out << "NOPE";
    const std::uint32_t version = 1, n = 0;
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&n), 4);
  }
  CHECK_THROWS_WITH_AS(cache_read(tmp / "bad.gkpd"), doctest::Contains("bad_magic"), Error);

  CHECK_THROWS_WITH_AS(cache_read(tmp / "missing.gkpd"), doctest::Contains("io"), Error);
}

}  // TEST_SUITE
