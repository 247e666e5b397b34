#include "dilate/geometry.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

namespace dilate {

void PointCloud::validate() const {
  if (!labels.empty() && labels.size() != points.size()) {
    throw DegenerateInput("label count " + std::to_string(labels.size()) + " != point count " +
                          std::to_string(points.size()));
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points[i].allFinite()) throw DegenerateInput("non-finite point at index " + std::to_string(i));
  }
}

// --- TriMesh ---------------------------------------------------------------

TriMesh::TriMesh(std::vector<Vec3> vertices, std::vector<Face> faces, std::vector<int> vertex_labels)
    : vertices_(std::move(vertices)), labels_(std::move(vertex_labels)) {
  if (!labels_.empty() && labels_.size() != vertices_.size()) {
    throw DegenerateInput("vertex label count does not match vertex count");
  }
  const int nv = static_cast<int>(vertices_.size());
  faces_.reserve(faces.size());
  for (const Face& f : faces) {
    for (int k = 0; k < 3; ++k) {
      if (f[k] < 0 || f[k] >= nv) throw DegenerateInput("face index out of range");
    }
    const Vec3 n = (vertices_[f[1]] - vertices_[f[0]]).cross(vertices_[f[2]] - vertices_[f[0]]);
    if (n.squaredNorm() > 0.0) faces_.push_back(f);
  }
}

TriMesh TriMesh::with_vertices(std::vector<Vec3> vertices) const {
  if (vertices.size() != vertices_.size()) throw TopologyMismatch("vertex count changed");
  TriMesh out;
  out.vertices_ = std::move(vertices);
  out.faces_ = faces_;
  out.labels_ = labels_;
  return out;
}

TriMesh TriMesh::with_labels(std::vector<int> labels) const {
  if (!labels.empty() && labels.size() != vertices_.size()) {
    throw DegenerateInput("vertex label count does not match vertex count");
  }
  TriMesh out = *this;
  out.labels_ = std::move(labels);
  return out;
}

double TriMesh::face_area(std::size_t f) const {
  const Face& t = faces_[f];
  return 0.5 * (vertices_[t[1]] - vertices_[t[0]]).cross(vertices_[t[2]] - vertices_[t[0]]).norm();
}

Vec3 TriMesh::face_normal(std::size_t f) const {
  const Face& t = faces_[f];
  return (vertices_[t[1]] - vertices_[t[0]]).cross(vertices_[t[2]] - vertices_[t[0]]).normalized();
}

std::vector<Vec3> TriMesh::vertex_normals() const {
  std::vector<Vec3> n(vertices_.size(), Vec3::Zero());
  for (const Face& t : faces_) {
    const Vec3 a = (vertices_[t[1]] - vertices_[t[0]]).cross(vertices_[t[2]] - vertices_[t[0]]);
    for (int k = 0; k < 3; ++k) n[t[k]] += a;
  }
  for (Vec3& v : n) {
    const double len = v.norm();
    if (len > 0) v /= len;
  }
  return n;
}

double TriMesh::area() const {
  double a = 0;
  for (std::size_t f = 0; f < faces_.size(); ++f) a += face_area(f);
  return a;
}

double TriMesh::volume() const {
  double v = 0;
  for (const Face& t : faces_) v += vertices_[t[0]].dot(vertices_[t[1]].cross(vertices_[t[2]]));
  return v / 6.0;
}

Eigen::AlignedBox3d TriMesh::bounds() const {
  Eigen::AlignedBox3d box;
  for (const Vec3& v : vertices_) box.extend(v);
  return box;
}

Vec3 TriMesh::centroid() const {
  Vec3 c = Vec3::Zero();
  for (const Vec3& v : vertices_) c += v;
  return vertices_.empty() ? c : Vec3(c / static_cast<double>(vertices_.size()));
}

bool is_closed(const TriMesh& mesh) {
  // directed edge -> count; a closed, consistently oriented mesh uses each directed edge once
  // and its reverse once.
  std::map<std::pair<int, int>, int> directed;
  for (const Face& f : mesh.faces()) {
    for (int k = 0; k < 3; ++k) {
      if (++directed[{f[k], f[(k + 1) % 3]}] > 1) return false;
    }
  }
  for (const auto& [e, count] : directed) {
    if (!directed.contains({e.second, e.first})) return false;
  }
  return !mesh.empty();
}

std::size_t connected_components(const TriMesh& mesh) {
  std::vector<int> parent(mesh.num_vertices());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<char> used(mesh.num_vertices(), 0);
  for (const Face& f : mesh.faces()) {
    for (int k = 0; k < 3; ++k) {
      used[f[k]] = 1;
      const int a = find(f[k]), b = find(f[(k + 1) % 3]);
      if (a != b) parent[a] = b;
    }
  }
  std::size_t count = 0;
  for (std::size_t v = 0; v < parent.size(); ++v) {
    if (used[v] && find(static_cast<int>(v)) == static_cast<int>(v)) ++count;
  }
  return count;
}

// --- ScalarGrid ------------------------------------------------------------

ScalarGrid::ScalarGrid(std::array<int, 3> res, Vec3 origin, double cell_size)
    : ScalarGrid(res, origin, cell_size,
                 std::vector<float>(static_cast<std::size_t>(res[0]) * res[1] * res[2], 0.0f)) {}

ScalarGrid::ScalarGrid(std::array<int, 3> res, Vec3 origin, double cell_size, std::vector<float> values)
    : res_(res), origin_(origin), cell_(cell_size), values_(std::move(values)) {
  if (res[0] < 2 || res[1] < 2 || res[2] < 2) throw DegenerateInput("grid resolution must be >= 2 per axis");
  if (!(cell_size > 0)) throw DegenerateInput("grid cell size must be positive");
  if (values_.size() != static_cast<std::size_t>(res[0]) * res[1] * res[2]) {
    throw DegenerateInput("grid value count does not match resolution");
  }
}

// --- normalization / voxelization --------------------------------------------

NormalizedCloud normalize_to_box(const PointCloud& pc, double box_size) {
  pc.validate();
  if (pc.size() < 4) throw DegenerateInput("need at least 4 points to normalize");
  Eigen::AlignedBox3d box;
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : pc.points) {
    box.extend(p);
    mean += p;
  }
  mean /= static_cast<double>(pc.size());
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : pc.points) cov += (p - mean) * (p - mean).transpose();
  const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 ev = eig.eigenvalues();  // ascending
  if (!(ev(2) > 0) || ev(1) <= 1e-12 * ev(2)) throw DegenerateInput("point cloud is collinear");

  const double extent = box.sizes().maxCoeff();
  NormalizationTransform t;
  t.scale = box_size / extent;
  t.offset = -t.scale * box.center();
  NormalizedCloud out{pc, t};
  for (Vec3& p : out.cloud.points) p = t.apply(p);
  return out;
}

ScalarGrid voxelize(const PointCloud& pc, int res, double box_size) {
  const double half = 0.5 * box_size, slack = half * (1.0 + 1e-9);
  ScalarGrid grid({res, res, res}, Vec3::Constant(-half), box_size / res);
  for (std::size_t n = 0; n < pc.points.size(); ++n) {
    const Vec3& p = pc.points[n];
    if (!p.allFinite() || (p.array() < -slack).any() || (p.array() > slack).any()) {
      throw OutOfBounds(n, "point " + std::to_string(n) + " lies outside the voxel grid");
    }
    std::array<int, 3> idx;
    for (int a = 0; a < 3; ++a) {
      idx[a] = std::clamp(static_cast<int>(std::floor((p[a] + half) / grid.cell_size())), 0, res - 1);
    }
    grid.at(idx[0], idx[1], idx[2]) = 1.0f;
  }
  return grid;
}

TrilinearSample trilinear_sample(const ScalarGrid& grid, const Vec3& p) {
  TrilinearSample s;
  const auto res = grid.resolution();
  std::array<int, 3> i0;
  std::array<double, 3> frac;
  for (int a = 0; a < 3; ++a) {
    double u = (p[a] - grid.origin()[a]) / grid.cell_size() - 0.5;
    const double hi = res[a] - 1;
    if (u < 0.0) {
      u = 0.0;
      s.clamped = true;
    } else if (u > hi) {
      u = hi;
      s.clamped = true;
    } else if (!(u == u)) {
      u = 0.0;
      s.clamped = true;
    }
    int base = static_cast<int>(std::floor(u));
    if (base >= res[a] - 1) base = res[a] - 2;
    i0[a] = base;
    frac[a] = u - base;
  }
  double acc = 0.0;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double w = (dx ? frac[0] : 1 - frac[0]) * (dy ? frac[1] : 1 - frac[1]) * (dz ? frac[2] : 1 - frac[2]);
    if (w != 0.0) acc += w * grid.at(i0[0] + dx, i0[1] + dy, i0[2] + dz);
  }
  s.value = static_cast<float>(acc);
  return s;
}

// --- distances -----------------------------------------------------------------

SurfacePoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Region classification after Ericson, "Real-Time Collision Detection" 5.1.5.
  SurfacePoint out;
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  auto finish = [&](double u, double v, double w) {
    out.barycentric = Vec3(u, v, w);
    out.point = u * a + v * b + w * c;
    out.distance = (p - out.point).norm();
    return out;
  };
  if (d1 <= 0 && d2 <= 0) return finish(1, 0, 0);
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return finish(0, 1, 0);
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    return finish(1 - v, v, 0);
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return finish(0, 0, 1);
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    return finish(1 - w, 0, w);
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return finish(0, 1 - w, w);
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return finish(1 - v - w, v, w);
}

SurfacePoint point_to_surface(const Vec3& p, const TriMesh& mesh) {
  if (mesh.empty()) throw DegenerateInput("distance query against an empty mesh");
  SurfacePoint best;
  best.distance = std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    SurfacePoint s = closest_point_on_triangle(p, mesh.face_vertex(f, 0), mesh.face_vertex(f, 1), mesh.face_vertex(f, 2));
    if (s.distance < best.distance) {
      best = s;
      best.face = static_cast<int>(f);
    }
  }
  return best;
}

// --- Laplacian -----------------------------------------------------------------

std::vector<std::vector<int>> vertex_neighbors(const TriMesh& mesh) {
  std::vector<std::vector<int>> nb(mesh.num_vertices());
  for (const Face& f : mesh.faces()) {
    for (int k = 0; k < 3; ++k) {
      nb[f[k]].push_back(f[(k + 1) % 3]);
      nb[f[k]].push_back(f[(k + 2) % 3]);
    }
  }
  for (auto& list : nb) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return nb;
}

std::vector<Vec3> uniform_laplacian(const TriMesh& mesh) {
  const auto nb = vertex_neighbors(mesh);
  std::vector<Vec3> lap(mesh.num_vertices());
  for (std::size_t v = 0; v < nb.size(); ++v) {
    if (nb[v].empty()) throw IsolatedVertex("vertex " + std::to_string(v) + " has no neighbours");
    Vec3 mean = Vec3::Zero();
    for (int u : nb[v]) mean += mesh.vertices()[u];
    lap[v] = mean / static_cast<double>(nb[v].size()) - mesh.vertices()[v];
  }
  return lap;
}

// --- sampling ------------------------------------------------------------------

PointCloud sample_surface(const TriMesh& mesh, std::size_t n, std::uint64_t seed) {
  std::vector<double> cdf(mesh.num_faces());
  double total = 0;
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    total += mesh.face_area(f);
    cdf[f] = total;
  }
  if (!(total > 0)) throw DegenerateInput("cannot sample a zero-area mesh");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  PointCloud pc;
  pc.points.reserve(n);
  if (mesh.has_labels()) pc.labels.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double r = uni(rng) * total;
    const std::size_t f = std::min<std::size_t>(
        std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin(), mesh.num_faces() - 1);
    double u = uni(rng), v = uni(rng);
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const Vec3 a = mesh.face_vertex(f, 0), b = mesh.face_vertex(f, 1), c = mesh.face_vertex(f, 2);
    const Vec3 p = a + u * (b - a) + v * (c - a);
    pc.points.push_back(p);
    if (mesh.has_labels()) {
      int best = 0;
      double bd = (p - a).squaredNorm();
      for (int k = 1; k < 3; ++k) {
        const double d = (p - mesh.face_vertex(f, k)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = k;
        }
      }
      pc.labels.push_back(mesh.vertex_labels()[mesh.faces()[f][best]]);
    }
  }
  return pc;
}

// --- winding number -----------------------------------------------------------------

double triangle_winding(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Van Oosterom & Strackee solid angle.
  const Vec3 ra = a - p, rb = b - p, rc = c - p;
  const double la = ra.norm(), lb = rb.norm(), lc = rc.norm();
  const double num = ra.dot(rb.cross(rc));
  const double den = la * lb * lc + ra.dot(rb) * lc + rb.dot(rc) * la + rc.dot(ra) * lb;
  return std::atan2(num, den) / (2.0 * std::numbers::pi);
}

InsideResult inside_test(const Vec3& p, const TriMesh& mesh) {
  InsideResult r;
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    r.winding += triangle_winding(p, mesh.face_vertex(f, 0), mesh.face_vertex(f, 1), mesh.face_vertex(f, 2));
  }
  r.inside = r.winding >= 0.5;
  r.approximate = !is_closed(mesh);
  return r;
}

}  // namespace dilate
