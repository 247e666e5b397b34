#pragma once

#include "dilate/geometry.hpp"

#include <span>
#include <vector>

namespace dilate {

/// Bounding-volume hierarchy over a triangle set. Answers exact closest-point queries and
/// fast (dipole far-field) generalized winding numbers. The triangle set is a snapshot of
/// the positions passed at construction.
class MeshBvh {
 public:
  MeshBvh() = default;
  explicit MeshBvh(const TriMesh& mesh);
  /// Restricts the hierarchy to a subset of faces; reported face ids are indices into `faces`.
  MeshBvh(std::span<const Vec3> vertices, std::span<const Face> faces);

  bool empty() const { return tris_.empty(); }
  std::size_t num_faces() const { return tris_.size(); }

  SurfacePoint closest(const Vec3& p) const;
  /// Approximate winding number; exact for nodes nearer than `far_ratio` times their radius.
  double winding_number(const Vec3& p, double far_ratio = 2.5) const;
  bool inside(const Vec3& p) const { return winding_number(p) >= 0.5; }

  /// Ids of this hierarchy's triangles whose boxes overlap `box`.
  void overlapping(const Eigen::AlignedBox3d& box, std::vector<int>& out) const;

  const std::array<Vec3, 3>& triangle(int id) const { return tris_[id].v; }
  const Face& face(int id) const { return faces_[id]; }

 private:
  struct Tri {
    std::array<Vec3, 3> v;
  };
  struct Node {
    Eigen::AlignedBox3d box;
    Vec3 area_normal = Vec3::Zero();  // sum of 0.5 * cross products
    Vec3 center = Vec3::Zero();       // area-weighted centroid
    double radius = 0.0;
    int left = -1, right = -1;        // children; -1 for leaves
    int begin = 0, end = 0;           // range into order_
  };

  void build(std::span<const Vec3> vertices, std::span<const Face> faces);
  int build_node(int begin, int end, std::vector<Vec3>& centroids);

  std::vector<Tri> tris_;
  std::vector<Face> faces_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

/// Exact triangle-triangle overlap test (Moller), including coplanar overlap.
bool triangles_intersect(const std::array<Vec3, 3>& a, const std::array<Vec3, 3>& b);

/// True when the triangles pass through each other: each has vertices strictly on both sides of the
/// other's plane and the crossing segments overlap with positive length. Contact (shared vertices or
/// edges, coplanar overlap, one triangle resting on the other) does not count.
bool triangles_cross(const std::array<Vec3, 3>& a, const std::array<Vec3, 3>& b);

/// Faces of `a` that intersect at least one face of `b`.
std::vector<int> intersecting_faces(const TriMesh& a, const TriMesh& b);

/// Faces of `a` that cross at least one face of `b` (see triangles_cross).
std::vector<int> crossing_faces(const TriMesh& a, const TriMesh& b);

/// Number of intersecting face pairs that share no vertex.
std::size_t self_intersection_count(const TriMesh& mesh);

/// kd-tree over points for exact nearest-neighbour queries.
class PointKdTree {
 public:
  PointKdTree() = default;
  explicit PointKdTree(std::vector<Vec3> points);

  /// Index of the nearest point; ties resolve to the lowest index.
  int nearest(const Vec3& q) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1, right = -1;
  };
  int build(std::vector<int>& idx, int begin, int end, int depth);
  void search(int node, const Vec3& q, int& best, double& best_d2) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace dilate
