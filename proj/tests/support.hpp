#pragma once

#include "dilate/body_model.hpp"
#include "dilate/geometry.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <functional>
#include <map>
#include <random>

namespace dilate::test {

/// Subdivided icosahedron projected onto a sphere, outward faces.
inline TriMesh icosphere(double radius, int subdivisions, const Vec3& center = Vec3::Zero()) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  std::vector<Face> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                         {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                         {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (auto& p : v) p.normalize();
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      return mid[key] = static_cast<int>(v.size()) - 1;
    };
    std::vector<Face> next;
    for (const auto& tri : f) {
      const int a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  for (auto& p : v) p = center + radius * p;
  return TriMesh(std::move(v), std::move(f));
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

inline Vec3 random_vec(std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vec3(u(rng), u(rng), u(rng));
}

inline TriMesh transformed(const TriMesh& m, const Mat3& r, const Vec3& t) {
  std::vector<Vec3> v = m.vertices();
  for (auto& p : v) p = r * p + t;
  return m.with_vertices(std::move(v));
}

/// Relative error in the max norm, guarded for tiny gradients.
inline double rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), 1e-8});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

/// Central differences of f at x.
inline Eigen::VectorXd central_diff(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                    double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd a = x, b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

/// Random moderate pose within the joint limits.
inline BodyParams random_params(const BodyModel& model, std::mt19937_64& rng, double angle = 0.3,
                                bool displacements = false) {
  BodyParams p = BodyParams::zero(model, displacements);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int j = 0; j < model.num_joints(); ++j) p.pose[j] = random_vec(rng, angle);
  for (int b = 0; b < model.num_shapes(); ++b) p.shape[b] = n(rng);
  p.translation = random_vec(rng, 0.2);
  if (displacements) {
    for (auto& d : p.displacements) d = random_vec(rng, 0.01);
  }
  return p;
}

}  // namespace dilate::test
