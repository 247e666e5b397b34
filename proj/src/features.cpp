#include "dilate/features.hpp"

#include <algorithm>
#include <cmath>

namespace dilate {

FeatureGrid FeatureGrid::encode(const PointCloud& normalized, int base_res, double box_size) {
  if (normalized.points.empty()) throw DegenerateInput("cannot encode an empty point cloud");
  if (base_res < (1 << (kNumScales - 1)) || base_res % (1 << (kNumScales - 1)) != 0) {
    throw InvalidParams("base resolution must be a multiple of " + std::to_string(1 << (kNumScales - 1)));
  }
  FeatureGrid fg;
  fg.box_ = box_size;
  std::array<std::vector<float>, kNumScales> occ;
  {
    const ScalarGrid vox = voxelize(normalized, base_res, box_size);
    occ[0].assign(vox.values().begin(), vox.values().end());
  }
  fg.res_[0] = base_res;
  for (int s = 1; s < kNumScales; ++s) {
    const int r = fg.res_[s - 1] / 2, rp = fg.res_[s - 1];
    fg.res_[s] = r;
    occ[s].assign(static_cast<std::size_t>(r) * r * r, 0.0f);
    const auto& fine = occ[s - 1];
    for (int k = 0; k < r; ++k) {
      for (int j = 0; j < r; ++j) {
        for (int i = 0; i < r; ++i) {
          float acc = 0;
          for (int c = 0; c < 8; ++c) {
            const int fi = 2 * i + (c & 1), fj = 2 * j + ((c >> 1) & 1), fk = 2 * k + (c >> 2);
            acc += fine[fi + static_cast<std::size_t>(rp) * (fj + static_cast<std::size_t>(rp) * fk)];
          }
          occ[s][i + static_cast<std::size_t>(r) * (j + static_cast<std::size_t>(r) * k)] = acc * 0.125f;
        }
      }
    }
  }
  for (int s = 0; s < kNumScales; ++s) {
    const int r = fg.res_[s];
    const auto& o = occ[s];
    auto at = [&](int i, int j, int k) {
      i = std::clamp(i, 0, r - 1);
      j = std::clamp(j, 0, r - 1);
      k = std::clamp(k, 0, r - 1);
      return o[i + static_cast<std::size_t>(r) * (j + static_cast<std::size_t>(r) * k)];
    };
    auto& d = fg.data_[s];
    d.resize(o.size() * kChannelsPerScale);
    for (int k = 0; k < r; ++k) {
      for (int j = 0; j < r; ++j) {
        for (int i = 0; i < r; ++i) {
          float* c = &d[kChannelsPerScale * (i + static_cast<std::size_t>(r) * (j + static_cast<std::size_t>(r) * k))];
          c[0] = at(i, j, k);
          c[1] = 0.5f * (at(i + 1, j, k) - at(i - 1, j, k));
          c[2] = 0.5f * (at(i, j + 1, k) - at(i, j - 1, k));
          c[3] = 0.5f * (at(i, j, k + 1) - at(i, j, k - 1));
        }
      }
    }
  }
  return fg;
}

ScalarGrid FeatureGrid::channel(int scale, int c) const {
  const int r = res_[scale];
  const double cell = box_ / r;
  ScalarGrid g({r, r, r}, Vec3::Constant(-0.5 * box_), cell);
  auto v = g.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = data_[scale][kChannelsPerScale * i + c];
  return g;
}

void FeatureGrid::query(const Vec3& p, float* out) const {
  for (int s = kNumScales - 1, slot = 0; s >= 0; --s, ++slot) {
    const int r = res_[s];
    const double cell = box_ / r;
    int i0[3];
    double t[3];
    for (int a = 0; a < 3; ++a) {
      double u = (p[a] + 0.5 * box_) / cell - 0.5;
      u = std::clamp(u, 0.0, static_cast<double>(r - 1));
      int i = std::min(static_cast<int>(u), r - 2);
      if (r == 1) i = 0;
      i0[a] = i;
      t[a] = u - i;
    }
    double acc[kChannelsPerScale] = {0, 0, 0, 0};
    const float* d = data_[s].data();
    for (int c = 0; c < 8; ++c) {
      const int dx = c & 1, dy = (c >> 1) & 1, dz = c >> 2;
      const double w = (dx ? t[0] : 1 - t[0]) * (dy ? t[1] : 1 - t[1]) * (dz ? t[2] : 1 - t[2]);
      if (w == 0.0) continue;
      const std::size_t idx =
          (i0[0] + dx) + static_cast<std::size_t>(r) * ((i0[1] + dy) + static_cast<std::size_t>(r) * (i0[2] + dz));
      const float* v = d + kChannelsPerScale * idx;
      for (int ch = 0; ch < kChannelsPerScale; ++ch) acc[ch] += w * v[ch];
    }
    for (int ch = 0; ch < kChannelsPerScale; ++ch) out[slot * kChannelsPerScale + ch] = static_cast<float>(acc[ch]);
  }
}

std::array<float, kFeatureDim> FeatureGrid::query(const Vec3& p) const {
  std::array<float, kFeatureDim> f;
  query(p, f.data());
  return f;
}

void FeatureGrid::query_many(std::span<const Vec3> points, std::span<float> out) const {
  if (out.size() != points.size() * kFeatureDim) throw LengthMismatch("feature buffer has the wrong size");
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(points.size()); ++k) {
    query(points[k], out.data() + k * kFeatureDim);
  }
}

}  // namespace dilate
