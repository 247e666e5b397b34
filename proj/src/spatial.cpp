#include "dilate/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace dilate {

// --- MeshBvh -------------------------------------------------------------------

namespace {
constexpr int kLeafSize = 4;

double box_sq_distance(const Eigen::AlignedBox3d& box, const Vec3& p) {
  double d2 = 0;
  for (int a = 0; a < 3; ++a) {
    const double lo = box.min()[a] - p[a], hi = p[a] - box.max()[a];
    const double e = std::max({lo, hi, 0.0});
    d2 += e * e;
  }
  return d2;
}
}  // namespace

MeshBvh::MeshBvh(const TriMesh& mesh) { build(mesh.vertices(), mesh.faces()); }

MeshBvh::MeshBvh(std::span<const Vec3> vertices, std::span<const Face> faces) { build(vertices, faces); }

void MeshBvh::build(std::span<const Vec3> vertices, std::span<const Face> faces) {
  tris_.resize(faces.size());
  faces_.assign(faces.begin(), faces.end());
  std::vector<Vec3> centroids(faces.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (int k = 0; k < 3; ++k) tris_[f].v[k] = vertices[faces[f][k]];
    centroids[f] = (tris_[f].v[0] + tris_[f].v[1] + tris_[f].v[2]) / 3.0;
  }
  order_.resize(faces.size());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.clear();
  if (!faces.empty()) {
    nodes_.reserve(2 * faces.size() / kLeafSize + 2);
    build_node(0, static_cast<int>(faces.size()), centroids);
  }
}

int MeshBvh::build_node(int begin, int end, std::vector<Vec3>& centroids) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Node node;
  node.begin = begin;
  node.end = end;
  Eigen::AlignedBox3d cbox;
  double area = 0;
  Vec3 weighted = Vec3::Zero();
  for (int i = begin; i < end; ++i) {
    const Tri& t = tris_[order_[i]];
    for (const Vec3& v : t.v) node.box.extend(v);
    cbox.extend(centroids[order_[i]]);
    const Vec3 an = 0.5 * (t.v[1] - t.v[0]).cross(t.v[2] - t.v[0]);
    node.area_normal += an;
    const double a = an.norm();
    area += a;
    weighted += a * centroids[order_[i]];
  }
  node.center = area > 0 ? Vec3(weighted / area) : node.box.center();
  for (int i = begin; i < end; ++i) {
    for (const Vec3& v : tris_[order_[i]].v) node.radius = std::max(node.radius, (v - node.center).norm());
  }
  if (end - begin > kLeafSize) {
    int axis;
    cbox.sizes().maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
      if (centroids[a][axis] != centroids[b][axis]) return centroids[a][axis] < centroids[b][axis];
      return a < b;
    });
    node.left = build_node(begin, mid, centroids);
    node.right = build_node(mid, end, centroids);
  }
  nodes_[id] = node;
  return id;
}

SurfacePoint MeshBvh::closest(const Vec3& p) const {
  SurfacePoint best;
  best.distance = std::numeric_limits<double>::infinity();
  if (nodes_.empty()) throw DegenerateInput("distance query against an empty mesh");
  double best_d2 = std::numeric_limits<double>::infinity();
  int stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& n = nodes_[stack[--top]];
    if (box_sq_distance(n.box, p) >= best_d2) continue;
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int f = order_[i];
        const Tri& t = tris_[f];
        SurfacePoint s = closest_point_on_triangle(p, t.v[0], t.v[1], t.v[2]);
        const double d2 = (s.point - p).squaredNorm();
        if (d2 < best_d2 || (d2 == best_d2 && f < best.face)) {
          best_d2 = d2;
          best = s;
          best.face = f;
        }
      }
      continue;
    }
    const double dl = box_sq_distance(nodes_[n.left].box, p);
    const double dr = box_sq_distance(nodes_[n.right].box, p);
    // push the farther child first so the nearer one is processed next
    if (dl <= dr) {
      stack[top++] = n.right;
      stack[top++] = n.left;
    } else {
      stack[top++] = n.left;
      stack[top++] = n.right;
    }
  }
  best.distance = std::sqrt(best_d2);
  return best;
}

double MeshBvh::winding_number(const Vec3& p, double far_ratio) const {
  if (nodes_.empty()) return 0.0;
  double w = 0.0;
  int stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& n = nodes_[stack[--top]];
    const Vec3 r = n.center - p;
    const double dist = r.norm();
    if (dist > far_ratio * n.radius) {
      w += n.area_normal.dot(r) / (4.0 * std::numbers::pi * dist * dist * dist);
      continue;
    }
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const Tri& t = tris_[order_[i]];
        w += triangle_winding(p, t.v[0], t.v[1], t.v[2]);
      }
      continue;
    }
    stack[top++] = n.left;
    stack[top++] = n.right;
  }
  return w;
}

void MeshBvh::overlapping(const Eigen::AlignedBox3d& box, std::vector<int>& out) const {
  out.clear();
  if (nodes_.empty()) return;
  int stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& n = nodes_[stack[--top]];
    if (!n.box.intersects(box)) continue;
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) out.push_back(order_[i]);
      continue;
    }
    stack[top++] = n.left;
    stack[top++] = n.right;
  }
  std::sort(out.begin(), out.end());
}

// --- triangle-triangle ---------------------------------------------------------------

namespace {

// Interval of a triangle along the intersection line, from projected vertices `p` and
// signed plane distances `d` (at least one nonzero).
void line_interval(const double p[3], const double d[3], double& t0, double& t1) {
  int k;
  if (d[0] * d[1] > 0) k = 2;
  else if (d[0] * d[2] > 0) k = 1;
  else if (d[1] * d[2] > 0 || d[0] != 0) k = 0;
  else if (d[1] != 0) k = 1;
  else k = 2;
  const int i = (k + 1) % 3, j = (k + 2) % 3;
  t0 = p[k] + (p[i] - p[k]) * d[k] / (d[k] - d[i]);
  t1 = p[k] + (p[j] - p[k]) * d[k] / (d[k] - d[j]);
  if (t0 > t1) std::swap(t0, t1);
}

bool segments_intersect_2d(const Eigen::Vector2d& a0, const Eigen::Vector2d& a1, const Eigen::Vector2d& b0,
                           const Eigen::Vector2d& b1) {
  auto orient = [](const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
    return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
  };
  const double o1 = orient(a0, a1, b0), o2 = orient(a0, a1, b1);
  const double o3 = orient(b0, b1, a0), o4 = orient(b0, b1, a1);
  if (((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0)) && ((o3 > 0 && o4 < 0) || (o3 < 0 && o4 > 0))) return true;
  auto on_segment = [](const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
    return std::min(a.x(), b.x()) <= c.x() && c.x() <= std::max(a.x(), b.x()) && std::min(a.y(), b.y()) <= c.y() &&
           c.y() <= std::max(a.y(), b.y());
  };
  if (o1 == 0 && on_segment(a0, a1, b0)) return true;
  if (o2 == 0 && on_segment(a0, a1, b1)) return true;
  if (o3 == 0 && on_segment(b0, b1, a0)) return true;
  if (o4 == 0 && on_segment(b0, b1, a1)) return true;
  return false;
}

bool point_in_triangle_2d(const Eigen::Vector2d& p, const std::array<Eigen::Vector2d, 3>& t) {
  double s[3];
  for (int k = 0; k < 3; ++k) {
    const Eigen::Vector2d& a = t[k];
    const Eigen::Vector2d& b = t[(k + 1) % 3];
    s[k] = (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
  }
  return (s[0] >= 0 && s[1] >= 0 && s[2] >= 0) || (s[0] <= 0 && s[1] <= 0 && s[2] <= 0);
}

bool coplanar_intersect(const Vec3& n, const std::array<Vec3, 3>& a, const std::array<Vec3, 3>& b) {
  int drop;
  n.cwiseAbs().maxCoeff(&drop);
  const int u = drop == 0 ? 1 : 0, v = drop == 2 ? 1 : 2;
  std::array<Eigen::Vector2d, 3> a2, b2;
  for (int k = 0; k < 3; ++k) {
    a2[k] = Eigen::Vector2d(a[k][u], a[k][v]);
    b2[k] = Eigen::Vector2d(b[k][u], b[k][v]);
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (segments_intersect_2d(a2[i], a2[(i + 1) % 3], b2[j], b2[(j + 1) % 3])) return true;
    }
  }
  return point_in_triangle_2d(a2[0], b2) || point_in_triangle_2d(b2[0], a2);
}

}  // namespace

bool triangles_intersect(const std::array<Vec3, 3>& a, const std::array<Vec3, 3>& b) {
  constexpr double kEps = 1e-12;
  const Vec3 n2 = (b[1] - b[0]).cross(b[2] - b[0]);
  const double n2len = n2.norm();
  if (!(n2len > 0)) return false;
  const Vec3 u2 = n2 / n2len;
  double da[3];
  for (int k = 0; k < 3; ++k) {
    da[k] = u2.dot(a[k] - b[0]);
    if (std::abs(da[k]) < kEps) da[k] = 0.0;
  }
  if ((da[0] > 0 && da[1] > 0 && da[2] > 0) || (da[0] < 0 && da[1] < 0 && da[2] < 0)) return false;

  const Vec3 n1 = (a[1] - a[0]).cross(a[2] - a[0]);
  const double n1len = n1.norm();
  if (!(n1len > 0)) return false;
  const Vec3 u1 = n1 / n1len;
  double db[3];
  for (int k = 0; k < 3; ++k) {
    db[k] = u1.dot(b[k] - a[0]);
    if (std::abs(db[k]) < kEps) db[k] = 0.0;
  }
  if ((db[0] > 0 && db[1] > 0 && db[2] > 0) || (db[0] < 0 && db[1] < 0 && db[2] < 0)) return false;

  if (da[0] == 0 && da[1] == 0 && da[2] == 0) return coplanar_intersect(u1, a, b);

  const Vec3 dir = u1.cross(u2);
  int axis;
  dir.cwiseAbs().maxCoeff(&axis);
  const double pa[3] = {a[0][axis], a[1][axis], a[2][axis]};
  const double pb[3] = {b[0][axis], b[1][axis], b[2][axis]};
  double a0, a1, b0, b1;
  line_interval(pa, da, a0, a1);
  line_interval(pb, db, b0, b1);
  return !(a1 < b0 || b1 < a0);
}

bool triangles_cross(const std::array<Vec3, 3>& a, const std::array<Vec3, 3>& b) {
  constexpr double kEps = 1e-12;
  auto side = [](const std::array<Vec3, 3>& t, const std::array<Vec3, 3>& plane, double d[3]) {
    const Vec3 n = (plane[1] - plane[0]).cross(plane[2] - plane[0]);
    const double len = n.norm();
    if (!(len > 0)) return false;
    bool pos = false, neg = false;
    for (int k = 0; k < 3; ++k) {
      d[k] = n.dot(t[k] - plane[0]) / len;
      if (std::abs(d[k]) < kEps) d[k] = 0.0;
      pos = pos || d[k] > 0;
      neg = neg || d[k] < 0;
    }
    return pos && neg;
  };
  double da[3], db[3];
  if (!side(a, b, da) || !side(b, a, db)) return false;
  const Vec3 dir = (a[1] - a[0]).cross(a[2] - a[0]).cross((b[1] - b[0]).cross(b[2] - b[0]));
  int axis;
  dir.cwiseAbs().maxCoeff(&axis);
  const double pa[3] = {a[0][axis], a[1][axis], a[2][axis]};
  const double pb[3] = {b[0][axis], b[1][axis], b[2][axis]};
  double a0, a1, b0, b1;
  line_interval(pa, da, a0, a1);
  line_interval(pb, db, b0, b1);
  return std::min(a1, b1) - std::max(a0, b0) > kEps;
}

namespace {

template <class Pred>
std::vector<int> faces_touching(const TriMesh& a, const TriMesh& b, Pred pred) {
  std::vector<int> out;
  if (a.empty() || b.empty()) return out;
  const MeshBvh bvh(b);
  std::vector<int> cand;
  for (std::size_t f = 0; f < a.num_faces(); ++f) {
    const std::array<Vec3, 3> ta{a.face_vertex(f, 0), a.face_vertex(f, 1), a.face_vertex(f, 2)};
    Eigen::AlignedBox3d box;
    for (const Vec3& v : ta) box.extend(v);
    bvh.overlapping(box, cand);
    for (int g : cand) {
      if (pred(ta, bvh.triangle(g))) {
        out.push_back(static_cast<int>(f));
        break;
      }
    }
  }
  return out;
}

}  // namespace

std::vector<int> intersecting_faces(const TriMesh& a, const TriMesh& b) {
  return faces_touching(a, b, triangles_intersect);
}

std::vector<int> crossing_faces(const TriMesh& a, const TriMesh& b) { return faces_touching(a, b, triangles_cross); }

std::size_t self_intersection_count(const TriMesh& mesh) {
  if (mesh.empty()) return 0;
  const MeshBvh bvh(mesh);
  std::vector<int> cand;
  std::size_t count = 0;
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    const Face& ff = mesh.faces()[f];
    const std::array<Vec3, 3> ta{mesh.face_vertex(f, 0), mesh.face_vertex(f, 1), mesh.face_vertex(f, 2)};
    Eigen::AlignedBox3d box;
    for (const Vec3& v : ta) box.extend(v);
    bvh.overlapping(box, cand);
    for (int g : cand) {
      if (g <= static_cast<int>(f)) continue;
      const Face& fg = mesh.faces()[g];
      bool shared = false;
      for (int i = 0; i < 3 && !shared; ++i) {
        for (int j = 0; j < 3; ++j) shared |= ff[i] == fg[j];
      }
      if (shared) continue;
      if (triangles_intersect(ta, bvh.triangle(g))) ++count;
    }
  }
  return count;
}

// --- PointKdTree -------------------------------------------------------------

PointKdTree::PointKdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  std::vector<int> idx(points_.size());
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(points_.size());
  root_ = build(idx, 0, static_cast<int>(idx.size()), 0);
}

int PointKdTree::build(std::vector<int>& idx, int begin, int end, int depth) {
  if (begin >= end) return -1;
  const int axis = depth % 3;
  const int mid = (begin + end) / 2;
  std::nth_element(idx.begin() + begin, idx.begin() + mid, idx.begin() + end, [&](int a, int b) {
    if (points_[a][axis] != points_[b][axis]) return points_[a][axis] < points_[b][axis];
    return a < b;
  });
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({idx[mid], axis, -1, -1});
  const int l = build(idx, begin, mid, depth + 1);
  const int r = build(idx, mid + 1, end, depth + 1);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

void PointKdTree::search(int node, const Vec3& q, int& best, double& best_d2) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const double d2 = (points_[n.point] - q).squaredNorm();
  if (d2 < best_d2 || (d2 == best_d2 && n.point < best)) {
    best_d2 = d2;
    best = n.point;
  }
  const double diff = q[n.axis] - points_[n.point][n.axis];
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search(near, q, best, best_d2);
  if (diff * diff <= best_d2) search(far, q, best, best_d2);
}

int PointKdTree::nearest(const Vec3& q) const {
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  search(root_, q, best, best_d2);
  return best;
}

}  // namespace dilate
