#pragma once

#include "dilate/geometry.hpp"

#include <array>
#include <span>

namespace dilate {

inline constexpr int kNumScales = 6;
inline constexpr int kChannelsPerScale = 4;
inline constexpr int kFeatureDim = kNumScales * kChannelsPerScale;

/// Multi-scale occupancy features over the normalization box. Scale 0 is the finest
/// (base resolution, 128 by default) and each further scale is an exact 2x box filter of
/// the previous one. Every scale carries its occupancy plus three central-difference
/// gradient channels, measured in occupancy per cell and clamped at the borders.
class FeatureGrid {
 public:
  FeatureGrid() = default;

  /// `normalized` must already lie in the box. Throws DegenerateInput for an empty cloud.
  static FeatureGrid encode(const PointCloud& normalized, int base_res = 128, double box_size = kDefaultBoxSize);

  int resolution(int scale) const { return res_[scale]; }
  double box_size() const { return box_; }

  /// Channel c (0 = occupancy, 1..3 = d/dx, d/dy, d/dz) of a scale as a standalone grid.
  ScalarGrid channel(int scale, int c) const;

  /// Concatenated trilinear samples, coarse-to-fine: scale 5 channels first, scale 0 last.
  void query(const Vec3& p, float* out) const;
  std::array<float, kFeatureDim> query(const Vec3& p) const;
  /// Row-major (n x kFeatureDim) features for many points.
  void query_many(std::span<const Vec3> points, std::span<float> out) const;

 private:
  std::array<int, kNumScales> res_{};
  double box_ = kDefaultBoxSize;
  // per scale, x-fastest cells with four interleaved channels
  std::array<std::vector<float>, kNumScales> data_;
};

}  // namespace dilate
