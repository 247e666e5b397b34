#include "dilate/metrics.hpp"

#include "dilate/spatial.hpp"

#include <json.hpp>

#include <cmath>

namespace dilate {

using nlohmann::ordered_json;

double v2v(const TriMesh& a, const TriMesh& b) {
  if (a.num_vertices() != b.num_vertices()) {
    throw TopologyMismatch("vertex counts differ: " + std::to_string(a.num_vertices()) + " vs " +
                           std::to_string(b.num_vertices()));
  }
  if (a.faces() != b.faces()) throw TopologyMismatch("face lists differ");
  if (a.num_vertices() == 0) throw DegenerateInput("v2v of empty meshes");
  double sum = 0;
  for (std::size_t i = 0; i < a.num_vertices(); ++i) sum += (a.vertices()[i] - b.vertices()[i]).norm();
  return 100.0 * sum / static_cast<double>(a.num_vertices());
}

double mean_surface_distance(const TriMesh& a, const TriMesh& b) {
  if (a.num_vertices() == 0 || b.empty()) throw DegenerateInput("surface distance needs two nonempty meshes");
  const MeshBvh bvh(b);
  const auto& v = a.vertices();
  std::vector<double> d(v.size());
#pragma omp parallel for schedule(dynamic, 256)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(v.size()); ++i) d[i] = bvh.closest(v[i]).distance;
  double sum = 0;
  for (double x : d) sum += x;
  return sum / static_cast<double>(d.size());
}

double bidirectional_surface_error(const TriMesh& a, const TriMesh& b) {
  return 1000.0 * 0.5 * (mean_surface_distance(a, b) + mean_surface_distance(b, a));
}

double interpenetration_area(const TriMesh& a, const TriMesh& b) {
  double area = 0;
  for (int f : crossing_faces(a, b)) area += a.face_area(f);
  return area * 1e6;
}

double interpenetration_area_symmetric(const TriMesh& a, const TriMesh& b) {
  return 0.5 * (interpenetration_area(a, b) + interpenetration_area(b, a));
}

LabelMetrics label_metrics(std::span<const int> pred, std::span<const int> gt, int classes) {
  if (pred.size() != gt.size()) throw LengthMismatch("prediction and ground-truth label counts differ");
  if (classes <= 0) throw InvalidParams("class count must be positive");
  LabelMetrics m;
  m.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] < 0 || gt[i] >= classes || pred[i] < 0 || pred[i] >= classes) {
      throw InvalidParams("label out of range at index " + std::to_string(i));
    }
    ++m.confusion[gt[i]][pred[i]];
    hits += gt[i] == pred[i];
  }
  m.accuracy = gt.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(gt.size());
  return m;
}

void EvalReport::validate() const {
  auto check = [](double v, const char* name) {
    if (!std::isfinite(v) || v < 0) throw InvalidParams(std::string("report field ") + name + " is invalid");
  };
  check(v2v_cm, "v2v_cm");
  check(v2v_body_cm, "v2v_body_cm");
  check(bidir_mm, "bidir_mm");
  check(interpenetration_mm2, "interpenetration_mm2");
  check(part_accuracy, "part_accuracy");
  for (double v : region_accuracy_by_part) check(v, "region_accuracy_by_part");
}

std::string EvalReport::to_json() const {
  validate();
  ordered_json j;
  j["format"] = "dilate-eval";
  j["version"] = 1;
  j["v2v_cm"] = v2v_cm;
  if (has_body) j["v2v_body_cm"] = v2v_body_cm;
  j["bidir_mm"] = bidir_mm;
  if (has_reconstruction) j["interpenetration_mm2"] = interpenetration_mm2;
  j["part_accuracy"] = part_accuracy;
  if (has_queries) {
    ordered_json conf = ordered_json::array();
    for (const auto& row : region_confusion) conf.push_back(row);
    j["region_confusion"] = conf;
    ordered_json by_part = ordered_json::object();
    for (int p = 0; p < kNumParts; ++p) {
      by_part[std::string(part_name(p))] = {{"accuracy", region_accuracy_by_part[p]}, {"queries", queries_by_part[p]}};
    }
    j["region_accuracy_by_part"] = by_part;
  }
  j["metric_definitions"] = {
      {"v2v_cm", "mean distance between corresponding vertices of the fitted dressed mesh and the GT outer mesh, cm"},
      {"v2v_body_cm", "mean distance between corresponding vertices of the fitted body and the GT inner mesh, cm"},
      {"bidir_mm",
       "average of the two one-sided mean vertex-to-surface distances between the fitted dressed mesh and the GT "
       "outer mesh, mm"},
      {"interpenetration_mm2",
       "area of reconstructed inner-mesh faces intersecting any outer-mesh face, averaged with the same quantity "
       "taken on the outer mesh (exact triangle-triangle tests), mm^2"},
      {"part_accuracy",
       "fraction of GT query points (or reconstructed inner vertices when no query predictions are given) whose "
       "predicted part equals the part of the nearest GT inner vertex"},
      {"region_confusion", "query counts, rows = GT region (inside body, between layers, outside), columns = prediction"},
      {"region_accuracy_by_part", "region accuracy over the GT queries of each part"},
  };
  return j.dump(2) + "\n";
}

EvalReport evaluate(const EvalInputs& pred, const SubjectFiles& gt) {
  EvalReport r;
  r.v2v_cm = v2v(pred.fitted, gt.outer);
  r.bidir_mm = bidirectional_surface_error(pred.fitted, gt.outer);
  if (pred.fitted_body) {
    r.v2v_body_cm = v2v(*pred.fitted_body, gt.inner);
    r.has_body = true;
  }
  if (pred.inner && pred.outer) {
    r.interpenetration_mm2 = interpenetration_area_symmetric(*pred.inner, *pred.outer);
    r.has_reconstruction = true;
  }
  if (pred.query_regions) {
    const auto& reg = *pred.query_regions;
    const LabelMetrics m = label_metrics(reg, gt.region_labels, kNumRegions);
    for (int a = 0; a < kNumRegions; ++a) {
      for (int b = 0; b < kNumRegions; ++b) r.region_confusion[a][b] = m.confusion[a][b];
    }
    std::array<std::size_t, kNumParts> hits{};
    for (std::size_t i = 0; i < reg.size(); ++i) {
      const int p = gt.part_labels[i];
      ++r.queries_by_part[p];
      hits[p] += reg[i] == gt.region_labels[i];
    }
    for (int p = 0; p < kNumParts; ++p) {
      r.region_accuracy_by_part[p] =
          r.queries_by_part[p] ? static_cast<double>(hits[p]) / static_cast<double>(r.queries_by_part[p]) : 0.0;
    }
    r.has_queries = true;
  }
  if (pred.query_parts) {
    r.part_accuracy = label_metrics(*pred.query_parts, gt.part_labels, kNumParts).accuracy;
  } else if (pred.inner && pred.inner->has_labels()) {
    const PointKdTree tree(gt.inner.vertices());
    const auto& v = pred.inner->vertices();
    std::vector<int> truth(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) truth[i] = gt.inner.vertex_labels()[tree.nearest(v[i])];
    r.part_accuracy = label_metrics(pred.inner->vertex_labels(), truth, kNumParts).accuracy;
  }
  r.validate();
  return r;
}

}  // namespace dilate
