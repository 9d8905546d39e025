#include "gsdeform/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>

#include "gsdeform/error.hpp"

namespace gsdeform {
namespace {

constexpr int kLeafSize = 12;

bool closer(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
}

}  // namespace

PointIndex::PointIndex(std::vector<Vec3> points) : points_(std::move(points)) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 1);
    build(0, static_cast<int>(points_.size()));
  }
}

int PointIndex::build(int begin, int end) {
  const int node_id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return node_id;

  Vec3 lo = points_[order_[begin]], hi = lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] - lo[axis] <= 0.0) return node_id;  // all coincident

  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[order_[mid]][axis];

  const int left = build(begin, mid);
  const int right = build(mid, end);
  Node& node = nodes_[node_id];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return node_id;
}

void PointIndex::radius_search(const Vec3& center, double radius, std::vector<int>& out) const {
  if (nodes_.empty()) return;
  const double r2 = radius * radius;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[stack.back()];
    stack.pop_back();
    if (node.axis < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        if ((points_[order_[i]] - center).squaredNorm() <= r2) out.push_back(order_[i]);
      }
      continue;
    }
    const double d = center[node.axis] - node.split;
    // Left holds coordinates <= split, right holds >= split.
    if (d - radius <= 0.0) stack.push_back(node.left);
    if (d + radius >= 0.0) stack.push_back(node.right);
  }
}

KnnResult PointIndex::knn(const Vec3& query, int k) const {
  if (k < 1) throw Error(ErrorCode::kInvalidInput, "knn requires k >= 1");
  KnnResult result;
  const auto n = static_cast<int>(points_.size());
  if (k > n) {
    result.truncated = true;
    k = n;
  }
  if (k == 0) return result;

  // Max-heap on (distance, id) keeps the current k best.
  auto worse = [](const Neighbor& a, const Neighbor& b) { return closer(a, b); };
  std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(worse)> heap(worse);

  struct Pending {
    int node;
    double bound;
  };
  std::vector<Pending> stack{{0, 0.0}};
  while (!stack.empty()) {
    const Pending p = stack.back();
    stack.pop_back();
    if (static_cast<int>(heap.size()) == k && p.bound > heap.top().distance) continue;
    const Node& node = nodes_[p.node];
    if (node.axis < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const Neighbor cand{order_[i], (points_[order_[i]] - query).norm()};
        if (static_cast<int>(heap.size()) < k) {
          heap.push(cand);
        } else if (closer(cand, heap.top())) {
          heap.pop();
          heap.push(cand);
        }
      }
      continue;
    }
    const double d = query[node.axis] - node.split;
    const int near = d <= 0.0 ? node.left : node.right;
    const int far = d <= 0.0 ? node.right : node.left;
    stack.push_back({far, std::max(p.bound, std::abs(d))});
    stack.push_back({near, p.bound});
  }

  result.neighbors.resize(heap.size());
  for (auto it = result.neighbors.rbegin(); it != result.neighbors.rend(); ++it) {
    *it = heap.top();
    heap.pop();
  }
  return result;
}

std::vector<int> ball_query(const PointIndex& index, std::span<const int> seeds, double radius) {
  if (!(radius > 0.0)) throw Error(ErrorCode::kInvalidInput, "ball query radius must be > 0");
  std::vector<char> hit(index.size(), 0);
  std::vector<int> found;
  for (int seed : seeds) {
    if (seed < 0 || static_cast<std::size_t>(seed) >= index.size()) {
      throw Error(ErrorCode::kInvalidInput, "ball query seed id out of range");
    }
    found.clear();
    index.radius_search(index.point(seed), radius, found);
    hit[seed] = 1;
    for (int id : found) hit[id] = 1;
  }
  std::vector<int> out;
  for (std::size_t i = 0; i < hit.size(); ++i) {
    if (hit[i]) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<Voxel> voxelize(std::span<const Vec3> points, double voxel_size) {
  if (!(voxel_size > 0.0)) throw Error(ErrorCode::kInvalidInput, "voxel size must be > 0");
  std::map<VoxelKey, Voxel> cells;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3& p = points[i];
    const VoxelKey key{static_cast<std::int64_t>(std::floor(p.x() / voxel_size)),
                       static_cast<std::int64_t>(std::floor(p.y() / voxel_size)),
                       static_cast<std::int64_t>(std::floor(p.z() / voxel_size))};
    Voxel& v = cells[key];
    v.key = key;
    v.centroid += p;
    v.members.push_back(static_cast<int>(i));
  }
  std::vector<Voxel> out;
  out.reserve(cells.size());
  for (auto& [key, v] : cells) {
    v.centroid /= static_cast<double>(v.members.size());
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace gsdeform
