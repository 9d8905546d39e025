#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gsdeform/geometry.hpp"

namespace gsdeform {

struct Neighbor {
  int id = -1;
  double distance = 0.0;
};

struct KnnResult {
  std::vector<Neighbor> neighbors;  // ascending distance, ties by lower id
  bool truncated = false;           // fewer than k points were indexed
};

// Static kd-tree over a point set. Query results are exact.
class PointIndex {
 public:
  PointIndex() = default;
  explicit PointIndex(std::vector<Vec3> points);

  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }
  const Vec3& point(int id) const { return points_[static_cast<std::size_t>(id)]; }

  /// Ids of all points within `radius` (inclusive) of `center`, unsorted.
  void radius_search(const Vec3& center, double radius, std::vector<int>& out) const;

  KnnResult knn(const Vec3& query, int k) const;

 private:
  struct Node {
    int begin = 0;
    int end = 0;
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    int left = -1;
    int right = -1;
  };

  int build(int begin, int end);

  std::vector<Vec3> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

/// Every indexed point within `radius` of at least one seed (seeds included),
/// sorted ascending. Empty seeds give an empty result.
std::vector<int> ball_query(const PointIndex& index, std::span<const int> seeds, double radius);

struct VoxelKey {
  std::int64_t i = 0;
  std::int64_t j = 0;
  std::int64_t k = 0;
  auto operator<=>(const VoxelKey&) const = default;
};

struct Voxel {
  VoxelKey key;
  Vec3 centroid = Vec3::Zero();
  std::vector<int> members;
};

/// Partitions points into cubic cells keyed by floor(p / voxel_size).
/// Output is ordered by key.
std::vector<Voxel> voxelize(std::span<const Vec3> points, double voxel_size);

}  // namespace gsdeform
