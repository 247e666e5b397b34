#pragma once

#include "dilate/common.hpp"

#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace dilate {

/// Unordered 3D points in meters, optionally carrying one part id per point.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<int> labels;  // empty, or one per point

  std::size_t size() const { return points.size(); }
  bool has_labels() const { return !labels.empty(); }

  /// Throws DegenerateInput on non-finite coordinates or a label/point count mismatch.
  void validate() const;
};

using Face = std::array<int, 3>;

/// Indexed triangle mesh. Construction validates indices and drops zero-area faces;
/// derived meshes made with with_vertices() keep the connectivity untouched.
class TriMesh {
 public:
  TriMesh() = default;
  TriMesh(std::vector<Vec3> vertices, std::vector<Face> faces, std::vector<int> vertex_labels = {});

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Face>& faces() const { return faces_; }
  const std::vector<int>& vertex_labels() const { return labels_; }
  bool has_labels() const { return !labels_.empty(); }
  std::size_t num_vertices() const { return vertices_.size(); }
  std::size_t num_faces() const { return faces_.size(); }
  bool empty() const { return faces_.empty(); }

  /// Same faces and labels, new positions (must have the same count).
  TriMesh with_vertices(std::vector<Vec3> vertices) const;
  TriMesh with_labels(std::vector<int> labels) const;

  Vec3 face_vertex(std::size_t f, int k) const { return vertices_[faces_[f][k]]; }
  double face_area(std::size_t f) const;
  /// Unit normal, counter-clockwise winding.
  Vec3 face_normal(std::size_t f) const;
  /// Area-weighted, normalized.
  std::vector<Vec3> vertex_normals() const;
  double area() const;
  /// Signed volume by the divergence theorem; positive for outward-oriented closed meshes.
  double volume() const;
  Eigen::AlignedBox3d bounds() const;
  Vec3 centroid() const;

 private:
  std::vector<Vec3> vertices_;
  std::vector<Face> faces_;
  std::vector<int> labels_;
};

/// Every undirected edge is shared by exactly two faces that traverse it in opposite directions.
bool is_closed(const TriMesh& mesh);
std::size_t connected_components(const TriMesh& mesh);

/// Scalar values stored at cell centers, x-fastest. Cell (i,j,k) is centered at
/// origin + (i+0.5, j+0.5, k+0.5) * cell_size.
class ScalarGrid {
 public:
  ScalarGrid() = default;
  ScalarGrid(std::array<int, 3> res, Vec3 origin, double cell_size);
  ScalarGrid(std::array<int, 3> res, Vec3 origin, double cell_size, std::vector<float> values);

  int nx() const { return res_[0]; }
  int ny() const { return res_[1]; }
  int nz() const { return res_[2]; }
  std::array<int, 3> resolution() const { return res_; }
  const Vec3& origin() const { return origin_; }
  double cell_size() const { return cell_; }
  std::size_t size() const { return values_.size(); }

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(res_[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(res_[1]) * k);
  }
  float at(int i, int j, int k) const { return values_[index(i, j, k)]; }
  float& at(int i, int j, int k) { return values_[index(i, j, k)]; }
  Vec3 cell_center(int i, int j, int k) const {
    return origin_ + cell_ * Vec3(i + 0.5, j + 0.5, k + 0.5);
  }
  Vec3 upper() const { return origin_ + cell_ * Vec3(res_[0], res_[1], res_[2]); }

  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }

 private:
  std::array<int, 3> res_{0, 0, 0};
  Vec3 origin_ = Vec3::Zero();
  double cell_ = 1.0;
  std::vector<float> values_;
};

/// q = scale * p + offset.
struct NormalizationTransform {
  double scale = 1.0;
  Vec3 offset = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * p + offset; }
  Vec3 invert(const Vec3& q) const { return (q - offset) / scale; }
};

struct NormalizedCloud {
  PointCloud cloud;
  NormalizationTransform transform;
};

/// Centers the cloud's bounding box at the origin and scales its longest side to box_size.
NormalizedCloud normalize_to_box(const PointCloud& pc, double box_size);

inline constexpr double kDefaultBoxSize = 1.6;

/// Binary occupancy of a res^3 grid covering [-box/2, box/2]^3.
ScalarGrid voxelize(const PointCloud& pc, int res, double box_size = kDefaultBoxSize);

struct TrilinearSample {
  float value = 0.0f;
  bool clamped = false;  // query fell outside the cell-center hull and was clamped
};

TrilinearSample trilinear_sample(const ScalarGrid& grid, const Vec3& p);

struct SurfacePoint {
  double distance = 0.0;
  Vec3 point = Vec3::Zero();
  int face = -1;
  Vec3 barycentric = Vec3::Zero();  // weights of the face's three vertices
};

/// Closest point on triangle (a,b,c) to p, with barycentric weights.
SurfacePoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Exact distance from p to the mesh by scanning every face.
SurfacePoint point_to_surface(const Vec3& p, const TriMesh& mesh);

/// One-ring neighbour lists.
std::vector<std::vector<int>> vertex_neighbors(const TriMesh& mesh);

/// Mean of one-ring neighbours minus the vertex. Throws IsolatedVertex.
std::vector<Vec3> uniform_laplacian(const TriMesh& mesh);

/// Area-uniform samples; labelled meshes give each sample the label of its face's nearest vertex.
PointCloud sample_surface(const TriMesh& mesh, std::size_t n, std::uint64_t seed);

struct InsideResult {
  bool inside = false;
  double winding = 0.0;
  bool approximate = false;  // mesh is not closed
};

/// Generalized winding number test (exact sum over faces).
InsideResult inside_test(const Vec3& p, const TriMesh& mesh);

/// Signed solid angle of triangle (a,b,c) seen from p, divided by 4*pi.
double triangle_winding(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

}  // namespace dilate
