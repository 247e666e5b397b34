#pragma once

#include "dilate/geometry.hpp"
#include "dilate/synth.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>

namespace dilate {

/// Mean distance between corresponding vertices, in cm. Throws TopologyMismatch unless the
/// meshes share vertex count and faces.
double v2v(const TriMesh& a, const TriMesh& b);

/// Mean point-to-surface distance from the vertices of `a` to the surface of `b`, meters.
double mean_surface_distance(const TriMesh& a, const TriMesh& b);
/// Average of the two one-sided mean vertex-to-surface distances, in mm.
double bidirectional_surface_error(const TriMesh& a, const TriMesh& b);

/// Total area of faces of `a` that intersect some face of `b`, in mm^2.
double interpenetration_area(const TriMesh& a, const TriMesh& b);
/// Average of interpenetration_area(a, b) and interpenetration_area(b, a); the reported variant.
double interpenetration_area_symmetric(const TriMesh& a, const TriMesh& b);

struct LabelMetrics {
  double accuracy = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [gt][pred]
};
/// Labels outside [0, classes) throw InvalidParams.
LabelMetrics label_metrics(std::span<const int> pred, std::span<const int> gt, int classes);

struct EvalReport {
  double v2v_cm = 0;           // fitted dressed mesh vs GT outer mesh
  double v2v_body_cm = 0;      // fitted body vs GT inner mesh
  double bidir_mm = 0;         // fitted dressed mesh vs GT outer surface
  double interpenetration_mm2 = 0;  // reconstructed inner vs outer, symmetric
  double part_accuracy = 0;
  std::array<std::array<std::size_t, kNumRegions>, kNumRegions> region_confusion{};
  std::array<double, kNumParts> region_accuracy_by_part{};
  std::array<std::size_t, kNumParts> queries_by_part{};
  bool has_body = false;
  bool has_reconstruction = false;
  bool has_queries = false;

  /// Throws InvalidParams when a value is negative or non-finite.
  void validate() const;
  /// Pretty-printed JSON with a metric_definitions block; stable key order.
  std::string to_json() const;
};

struct EvalInputs {
  TriMesh fitted;                      // posed model with displacements
  std::optional<TriMesh> fitted_body;  // posed model without displacements
  std::optional<TriMesh> inner;        // reconstructed, labels optional
  std::optional<TriMesh> outer;
  std::optional<std::vector<int>> query_regions;  // predictions at the GT query points
  std::optional<std::vector<int>> query_parts;
};

EvalReport evaluate(const EvalInputs& pred, const SubjectFiles& gt);

}  // namespace dilate
