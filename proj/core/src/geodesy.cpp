// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#include "geokp/geodesy.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>

#include "geokp/parallel.hpp"

namespace geokp {

namespace {

constexpr Eigen::Index kBruteForceMaxN = 512;

struct Candidate {
  double d2;
  std::int32_t index;
};

// (distance, index) ordering so equidistant neighbors resolve to the lower index
bool better(const Candidate& a, const Candidate& b) {
  return a.d2 < b.d2 || (a.d2 == b.d2 && a.index < b.index);
}

std::vector<std::vector<std::int32_t>> knn_brute_force(const PointMatrix& pts, int k) {
  const Eigen::Index n = pts.rows();
  std::vector<std::vector<std::int32_t>> result(static_cast<std::size_t>(n));
  std::vector<Candidate> cand(static_cast<std::size_t>(n - 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      cand[m++] = {(pts.row(i) - pts.row(j)).squaredNorm(), static_cast<std::int32_t>(j)};
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end(), better);
    auto& out = result[static_cast<std::size_t>(i)];
    out.resize(static_cast<std::size_t>(k));
    for (int q = 0; q < k; ++q) out[static_cast<std::size_t>(q)] = cand[static_cast<std::size_t>(q)].index;
  }
  return result;
}

// Static median-split k-d tree. Queries are exact and reproduce the brute
// force (distance, index) tie-break.
class KdTree {
 public:
  explicit KdTree(const PointMatrix& pts) : pts_(pts), order_(static_cast<std::size_t>(pts.rows())) {
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(2 * order_.size() / kLeafSize + 2);
    root_ = build(0, static_cast<std::int32_t>(order_.size()));
  }

  void query(const Eigen::RowVector3d& q, std::int32_t skip, int k,
             std::vector<Candidate>& heap) const {
    heap.clear();
    search(root_, q, skip, static_cast<std::size_t>(k), heap);
    std::sort_heap(heap.begin(), heap.end(), worse);
  }

 private:
  static constexpr std::int32_t kLeafSize = 16;

  struct Node {
    double split = 0.0;
    std::int32_t axis = -1;  // -1 marks a leaf
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::int32_t begin = 0;
    std::int32_t end = 0;
  };

  static bool worse(const Candidate& a, const Candidate& b) { return better(a, b); }

  std::int32_t build(std::int32_t begin, std::int32_t end) {
    Node node;
    node.begin = begin;
    node.end = end;
    if (end - begin > kLeafSize) {
      Eigen::RowVector3d lo = pts_.row(order_[static_cast<std::size_t>(begin)]);
      Eigen::RowVector3d hi = lo;
      for (std::int32_t i = begin + 1; i < end; ++i) {
        lo = lo.cwiseMin(pts_.row(order_[static_cast<std::size_t>(i)]));
        hi = hi.cwiseMax(pts_.row(order_[static_cast<std::size_t>(i)]));
      }
      int axis;
      (hi - lo).maxCoeff(&axis);
      const std::int32_t mid = begin + (end - begin) / 2;
      std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                       [&](std::int32_t a, std::int32_t b) {
                         const double pa = pts_(a, axis), pb = pts_(b, axis);
                         return pa < pb || (pa == pb && a < b);
                       });
      node.axis = axis;
      node.split = pts_(order_[static_cast<std::size_t>(mid)], axis);
      nodes_.push_back(node);
      const auto id = static_cast<std::int32_t>(nodes_.size() - 1);
      const std::int32_t left = build(begin, mid);
      const std::int32_t right = build(mid, end);
      nodes_[static_cast<std::size_t>(id)].left = left;
      nodes_[static_cast<std::size_t>(id)].right = right;
      return id;
    }
    nodes_.push_back(node);
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  void consider(const Eigen::RowVector3d& q, std::int32_t idx, std::size_t k,
                std::vector<Candidate>& heap) const {
    const Candidate c{(q - pts_.row(idx)).squaredNorm(), idx};
    if (heap.size() < k) {
      heap.push_back(c);
      std::push_heap(heap.begin(), heap.end(), worse);
    } else if (better(c, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), worse);
      heap.back() = c;
      std::push_heap(heap.begin(), heap.end(), worse);
    }
  }

  void search(std::int32_t node_id, const Eigen::RowVector3d& q, std::int32_t skip, std::size_t k,
              std::vector<Candidate>& heap) const {
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (node.axis < 0) {
      for (std::int32_t i = node.begin; i < node.end; ++i) {
        const std::int32_t idx = order_[static_cast<std::size_t>(i)];
        if (idx != skip) consider(q, idx, k, heap);
      }
      return;
    }
    const double delta = q[node.axis] - node.split;
    const std::int32_t near = delta < 0.0 ? node.left : node.right;
    const std::int32_t far = delta < 0.0 ? node.right : node.left;
    search(near, q, skip, k, heap);
    // equality must still descend: an equidistant point may win its tie by index
    if (heap.size() < k || delta * delta <= heap.front().d2) {
      search(far, q, skip, k, heap);
    }
  }

  const PointMatrix& pts_;
  std::vector<std::int32_t> order_;
  std::vector<Node> nodes_;
  std::int32_t root_ = 0;
};

std::vector<std::vector<std::int32_t>> knn_kd_tree(const PointMatrix& pts, int k) {
  const Eigen::Index n = pts.rows();
  const KdTree tree(pts);
  std::vector<std::vector<std::int32_t>> result(static_cast<std::size_t>(n));
  std::vector<Candidate> heap;
  heap.reserve(static_cast<std::size_t>(k) + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    tree.query(pts.row(i), static_cast<std::int32_t>(i), k, heap);
    auto& out = result[static_cast<std::size_t>(i)];
    out.resize(heap.size());
    for (std::size_t q = 0; q < heap.size(); ++q) out[q] = heap[q].index;
  }
  return result;
}

}  // namespace

std::vector<std::vector<std::int32_t>> knn_neighbors(const PointCloud& cloud, int k, KnnMethod method) {
  const Eigen::Index n = cloud.size();
  if (k < 1 || k >= n) {
    throw Error(Errc::k_too_large, "k=" + std::to_string(k) + " needs 1 <= k < N=" + std::to_string(n));
  }
  if (method == KnnMethod::automatic) {
    method = n <= kBruteForceMaxN ? KnnMethod::brute_force : KnnMethod::kd_tree;
  }
  return method == KnnMethod::brute_force ? knn_brute_force(cloud.points, k)
                                          : knn_kd_tree(cloud.points, k);
}

NeighborGraph build_knn_graph(const PointCloud& cloud, int k, KnnMethod method) {
  const auto neighbors = knn_neighbors(cloud, k, method);
  const Eigen::Index n = cloud.size();

  NeighborGraph graph;
  graph.n = n;
  graph.edges.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::int32_t j : neighbors[static_cast<std::size_t>(i)]) {
      const double w = (cloud.points.row(i) - cloud.points.row(j)).norm();
      graph.edges[static_cast<std::size_t>(i)].emplace_back(j, w);
      graph.edges[static_cast<std::size_t>(j)].emplace_back(static_cast<std::int32_t>(i), w);
    }
  }
  for (auto& adj : graph.edges) {
    std::sort(adj.begin(), adj.end());
    adj.erase(std::unique(adj.begin(), adj.end(),
                          [](const auto& a, const auto& b) { return a.first == b.first; }),
              adj.end());
  }
  return graph;
}

std::vector<Eigen::Index> component_sizes(const NeighborGraph& graph) {
  std::vector<Eigen::Index> sizes;
  std::vector<bool> seen(static_cast<std::size_t>(graph.n), false);
  std::vector<std::int32_t> stack;
  for (Eigen::Index s = 0; s < graph.n; ++s) {
    if (seen[static_cast<std::size_t>(s)]) continue;
    Eigen::Index count = 0;
    stack.push_back(static_cast<std::int32_t>(s));
    seen[static_cast<std::size_t>(s)] = true;
    while (!stack.empty()) {
      const std::int32_t v = stack.back();
      stack.pop_back();
      ++count;
      for (const auto& [u, w] : graph.edges[static_cast<std::size_t>(v)]) {
        if (!seen[static_cast<std::size_t>(u)]) {
          seen[static_cast<std::size_t>(u)] = true;
          stack.push_back(u);
        }
      }
    }
    sizes.push_back(count);
  }
  std::sort(sizes.rbegin(), sizes.rend());
  return sizes;
}

GeodesicMatrix shortest_paths(const NeighborGraph& graph, unsigned jobs) {
  const Eigen::Index n = graph.n;
  if (n == 0) throw Error(Errc::precondition, "shortest_paths: empty graph");

  const auto components = component_sizes(graph);
  if (components.size() > 1) {
    std::ostringstream msg;
    msg << components.size() << " components with sizes [";
    for (std::size_t i = 0; i < components.size(); ++i) {
      if (i) msg << ", ";
      msg << components[i];
    }
    msg << "]; raise k and retry";
    throw Error(Errc::disconnected_graph, msg.str());
  }

  // flatten to CSR for the inner loop
  std::vector<std::int32_t> offsets(static_cast<std::size_t>(n) + 1, 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    offsets[static_cast<std::size_t>(i) + 1] =
        offsets[static_cast<std::size_t>(i)] +
        static_cast<std::int32_t>(graph.edges[static_cast<std::size_t>(i)].size());
  }
  std::vector<std::int32_t> nbr(static_cast<std::size_t>(offsets.back()));
  std::vector<double> wt(nbr.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t at = static_cast<std::size_t>(offsets[static_cast<std::size_t>(i)]);
    for (const auto& [j, w] : graph.edges[static_cast<std::size_t>(i)]) {
      nbr[at] = j;
      wt[at] = w;
      ++at;
    }
  }

  GeodesicMatrix result;
  result.d.resize(n, n);

  parallel_for(static_cast<std::size_t>(n), jobs, [&](std::size_t begin, std::size_t end) {
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(static_cast<std::size_t>(n));
    using Entry = std::pair<double, std::int32_t>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
    for (std::size_t src = begin; src < end; ++src) {
      std::fill(dist.begin(), dist.end(), kInf);
      dist[src] = 0.0;
      queue.emplace(0.0, static_cast<std::int32_t>(src));
      while (!queue.empty()) {
        const auto [d, v] = queue.top();
        queue.pop();
        if (d > dist[static_cast<std::size_t>(v)]) continue;
        const auto lo = static_cast<std::size_t>(offsets[static_cast<std::size_t>(v)]);
        const auto hi = static_cast<std::size_t>(offsets[static_cast<std::size_t>(v) + 1]);
        for (std::size_t e = lo; e < hi; ++e) {
          const std::int32_t u = nbr[e];
          const double nd = d + wt[e];
          if (nd < dist[static_cast<std::size_t>(u)]) {
            dist[static_cast<std::size_t>(u)] = nd;
            queue.emplace(nd, u);
          }
        }
      }
      // column write: contiguous in Eigen's column-major storage
      for (Eigen::Index i = 0; i < n; ++i) result.d(i, static_cast<Eigen::Index>(src)) = dist[static_cast<std::size_t>(i)];
    }
  });

  // opposite-direction sums can differ in the last ulp; pin exact symmetry
  for (Eigen::Index i = 0; i < n; ++i) {
    result.d(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double m = std::min(result.d(i, j), result.d(j, i));
      result.d(i, j) = m;
      result.d(j, i) = m;
    }
  }
  return result;
}

ShortcutReport shortcut_diagnostic(const PointCloud& cloud_a, const PointCloud& cloud_b,
                                   const CorrespondenceMap& correspondence, double rel_threshold,
                                   int k, double min_distance, unsigned jobs) {
  if (cloud_a.size() != cloud_b.size()) {
    throw Error(Errc::shape_mismatch, "shortcut_diagnostic: clouds differ in point count");
  }
  check_correspondence(correspondence, cloud_a.size());

  const GeodesicMatrix da = shortest_paths(build_knn_graph(cloud_a, k), jobs);
  const GeodesicMatrix db = shortest_paths(build_knn_graph(cloud_b, k), jobs);

  ShortcutReport report;
  report.threshold = rel_threshold;
  report.min_distance = min_distance;
  report.k = k;
  report.n = cloud_a.size();
  const Eigen::Index n = cloud_a.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double a = da.d(i, j);
      const double b = db.d(correspondence[static_cast<std::size_t>(i)],
                            correspondence[static_cast<std::size_t>(j)]);
      ++report.pairs_checked;
      const double rel = std::abs(b - a) / std::max(a, min_distance);
      if (rel > rel_threshold) {
        report.pairs.push_back({static_cast<std::int32_t>(i), static_cast<std::int32_t>(j), a, b, rel});
      }
    }
  }
  std::sort(report.pairs.begin(), report.pairs.end(),
            [](const ShortcutPair& x, const ShortcutPair& y) { return x.rel_change > y.rel_change; });
  return report;
}

// --- cache file -------------------------------------------------------------

namespace {
constexpr char kCacheMagic[4] = {'G', 'K', 'P', 'D'};
constexpr std::uint32_t kCacheVersion = 1;
}  // namespace

void cache_write(const GeodesicMatrix& matrix, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot write " + file.string());
  const auto n = static_cast<std::uint32_t>(matrix.size());
  out.write(kCacheMagic, 4);
  out.write(reinterpret_cast<const char*>(&kCacheVersion), 4);
  out.write(reinterpret_cast<const char*>(&n), 4);
  std::vector<float> row(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < n; ++j) row[j] = static_cast<float>(matrix.d(i, j));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * 4));
  }
  if (!out) throw Error(Errc::io, "short write to " + file.string());
}

GeodesicMatrix cache_read(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + file.string());

  char magic[4];
  std::uint32_t version = 0;
  std::uint32_t n = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&n), 4);
  if (!in || std::memcmp(magic, kCacheMagic, 4) != 0) {
    throw Error(Errc::bad_magic, file.string() + " is not a geodesic cache");
  }
  if (version != kCacheVersion) {
    throw Error(Errc::bad_magic, file.string() + ": unsupported cache version " + std::to_string(version));
  }

  std::error_code ec;
  const auto bytes = std::filesystem::file_size(file, ec);
  const auto expected = 12 + static_cast<std::uintmax_t>(n) * n * 4;
  if (ec || bytes != expected) {
    throw Error(Errc::size_mismatch, file.string() + ": expected " + std::to_string(expected) +
                                         " bytes, found " + std::to_string(bytes));
  }

  GeodesicMatrix matrix;
  matrix.d.resize(n, n);
  std::vector<float> row(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * 4));
    for (std::uint32_t j = 0; j < n; ++j) matrix.d(i, j) = static_cast<double>(row[j]);
  }
  if (!in) throw Error(Errc::size_mismatch, file.string() + ": truncated payload");
  return matrix;
}

}  // namespace geokp
