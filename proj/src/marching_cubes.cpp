#include "dilate/marching_cubes.hpp"

#include <cmath>

#include "mc_tables.inc"

namespace dilate {

namespace {
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
// Each cube edge as (corner, axis): the lattice edge starts at that corner and runs along axis.
constexpr int kEdgeStart[12][2] = {{0, 0}, {1, 1}, {3, 0}, {0, 1}, {4, 0}, {5, 1},
                                   {7, 0}, {4, 1}, {0, 2}, {1, 2}, {2, 2}, {3, 2}};
// Interpolation parameter is kept away from the lattice nodes so that no output triangle
// collapses when the field hits the iso value exactly at a node.
constexpr double kMinT = 1e-6;
}  // namespace

TriMesh marching_cubes(const ScalarGrid& field, float iso, InsideSide inside) {
  const int nx = field.nx(), ny = field.ny(), nz = field.nz();
  const auto vals = field.values();
  for (float v : vals) {
    if (!std::isfinite(v)) throw DegenerateInput("marching cubes on a non-finite field");
  }
  // signed value, negative inside
  auto s = [&](int i, int j, int k) -> double {
    const double v = vals[field.index(i, j, k)];
    return inside == InsideSide::Below ? v - iso : iso - v;
  };

  std::vector<int> edge_vertex(3 * field.size(), -1);
  std::vector<Vec3> vertices;
  std::vector<Face> faces;

  auto vertex_on_edge = [&](int i, int j, int k, int axis) {
    int& slot = edge_vertex[3 * field.index(i, j, k) + axis];
    if (slot >= 0) return slot;
    const int i1 = i + (axis == 0), j1 = j + (axis == 1), k1 = k + (axis == 2);
    const double s0 = s(i, j, k), s1 = s(i1, j1, k1);
    double t = s0 / (s0 - s1);
    t = std::clamp(t, kMinT, 1.0 - kMinT);
    const Vec3 p0 = field.cell_center(i, j, k), p1 = field.cell_center(i1, j1, k1);
    slot = static_cast<int>(vertices.size());
    vertices.push_back(p0 + t * (p1 - p0));
    return slot;
  };

  for (int k = 0; k + 1 < nz; ++k) {
    for (int j = 0; j + 1 < ny; ++j) {
      for (int i = 0; i + 1 < nx; ++i) {
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          if (s(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]) < 0) cube |= 1 << c;
        }
        if (mc_detail::kEdgeTable[cube] == 0) continue;
        int ev[12];
        for (int e = 0; e < 12; ++e) {
          if (mc_detail::kEdgeTable[cube] & (1 << e)) {
            const int* c = kCorner[kEdgeStart[e][0]];
            ev[e] = vertex_on_edge(i + c[0], j + c[1], k + c[2], kEdgeStart[e][1]);
          }
        }
        const signed char* row = mc_detail::kTriTable[cube];
        for (int t = 0; row[t] != -1; t += 3) {
          // table winding is clockwise seen from outside
          faces.push_back({ev[row[t]], ev[row[t + 2]], ev[row[t + 1]]});
        }
      }
    }
  }
  if (faces.empty()) throw EmptySurface("level set " + std::to_string(iso) + " is empty");
  return TriMesh(std::move(vertices), std::move(faces));
}

}  // namespace dilate
