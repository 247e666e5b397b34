#include "dilate/synth.hpp"

#include "dilate/io.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace dilate {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const Vec3 v(n(rng), n(rng), n(rng));
    const double l = v.norm();
    if (l > 1e-12) return v / l;
  }
}

}  // namespace

bool is_clean_surface(const TriMesh& mesh, double probe) {
  if (self_intersection_count(mesh) != 0) return false;
  const MeshBvh bvh(mesh);
  const auto normals = mesh.vertex_normals();
  for (std::size_t i = 0; i < mesh.num_vertices(); ++i) {
    if (bvh.inside(mesh.vertices()[i] + probe * normals[i])) return false;
  }
  return true;
}

std::vector<std::vector<Vec3>> pose_suite(const BodyModel& model) {
  const double d = std::numbers::pi / 180.0;
  const Vec3 x = Vec3::UnitX(), y = Vec3::UnitY(), z = Vec3::UnitZ();
  // arms lie along +-x in the rest pose: +y rotation lowers the left arm, -y the right one;
  // +x rotation swings a leg forward, -x bends a knee backwards
  auto make = [&](std::initializer_list<std::pair<int, Vec3>> joints) {
    std::vector<Vec3> p(model.num_joints(), Vec3::Zero());
    for (const auto& [j, r] : joints) p[j] = r;
    return p;
  };
  return {
      make({{kLeftShoulder, 40 * d * y}, {kRightShoulder, -40 * d * y}}),
      make({{kLeftShoulder, 35 * d * y}, {kRightShoulder, -35 * d * y}, {kLeftHip, 30 * d * x},
            {kRightHip, -20 * d * x}, {kLeftKnee, -30 * d * x}, {kRightKnee, -10 * d * x}}),
      make({{kLeftShoulder, 45 * d * z}, {kRightShoulder, -45 * d * z}, {kLeftElbow, 30 * d * z},
            {kRightElbow, -30 * d * z}}),
      make({{kRoot, 30 * d * z}, {kLeftShoulder, 30 * d * y}, {kRightShoulder, -30 * d * y}, {kHead, -20 * d * z}}),
      make({{kSpine, -20 * d * x}, {kNeck, -15 * d * x}, {kLeftShoulder, 35 * d * y}, {kRightShoulder, -35 * d * y},
            {kLeftElbow, 20 * d * z}, {kRightElbow, -20 * d * z}}),
      make({{kSpine, 15 * d * y}, {kHead, 10 * d * y}, {kLeftShoulder, -30 * d * y}, {kRightShoulder, -30 * d * y},
            {kLeftHip, 10 * d * y}}),
      make({{kLeftHip, 40 * d * x}, {kRightHip, 40 * d * x}, {kLeftKnee, -45 * d * x}, {kRightKnee, -45 * d * x},
            {kLeftShoulder, 30 * d * z}, {kRightShoulder, -30 * d * z}}),
      make({{kLeftShoulder, 30 * d * y}, {kRightShoulder, -30 * d * y}, {kLeftElbow, 45 * d * z},
            {kRightElbow, -45 * d * z}, {kLeftWrist, 20 * d * z}, {kRightWrist, -20 * d * z}}),
      make({{kLeftHip, 45 * d * x}, {kLeftKnee, -20 * d * x}, {kRightHip, -10 * d * x}, {kLeftShoulder, 25 * d * y},
            {kRightShoulder, -25 * d * y}, {kRightAnkle, 10 * d * x}}),
      make({{kRoot, Vec3(10 * d, 0, -20 * d)}, {kHead, 30 * d * z}, {kLeftShoulder, 45 * d * y},
            {kRightShoulder, -45 * d * y}, {kLeftElbow, -25 * d * y}, {kRightKnee, -20 * d * x}}),
  };
}

std::vector<Vec3> sample_pose(const BodyModel& model, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Vec3> pose(model.num_joints());
  for (int j = 0; j < model.num_joints(); ++j) {
    const double limit = j == kRoot ? model.joint_limits[kSpine] : model.joint_limits[j];
    const Vec3 axis = random_unit(rng);
    pose[j] = axis * (uni(rng) * limit);
  }
  return pose;
}

Subject sample_subject(const BodyModel& model, std::uint64_t seed, const SubjectConfig& cfg) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Subject s;
  s.params = BodyParams::zero(model);
  auto draw_shape = [&] {
    for (int b = 0; b < model.num_shapes(); ++b) s.params.shape[b] = (2.0 * uni(rng) - 1.0) * cfg.shape_range;
  };
  draw_shape();

  bool ok = false;
  if (cfg.pose) {
    // a fixed pose keeps the pose and redraws the shape instead
    s.params.pose = *cfg.pose;
    s.params.validate(model);
    for (int attempt = 0; attempt < cfg.max_attempts && !ok; ++attempt) {
      if (attempt > 0) draw_shape();
      s.inner = forward(model, s.params);
      ok = is_clean_surface(s.inner);
    }
    if (!ok) throw GenerationFailed("the requested pose self-intersects for every drawn shape");
  }
  for (int attempt = 0; attempt < cfg.max_attempts && !ok; ++attempt) {
    s.params.pose = sample_pose(model, rng);
    s.inner = forward(model, s.params);
    ok = is_clean_surface(s.inner);
  }
  if (!ok) {
    throw GenerationFailed("no clean pose after " + std::to_string(cfg.max_attempts) + " draws");
  }

  // smooth offset field on the rest template, so it does not depend on the pose
  const int nv = model.num_vertices();
  std::vector<double> field(nv, 0.0);
  std::uniform_int_distribution<int> pick(0, nv - 1);
  for (int k = 0; k < cfg.bumps; ++k) {
    const Vec3 c = model.template_vertices[pick(rng)];
    const double w = cfg.bump_width_min + uni(rng) * (cfg.bump_width_max - cfg.bump_width_min);
    const double a = 0.5 + 0.5 * uni(rng);
    for (int i = 0; i < nv; ++i) field[i] += a * std::exp(-(model.template_vertices[i] - c).squaredNorm() / (2 * w * w));
  }
  const auto [lo, hi] = std::minmax_element(field.begin(), field.end());
  const double flo = *lo, span = std::max(*hi - *lo, 1e-12);
  s.clothing_offsets.resize(nv);
  for (int i = 0; i < nv; ++i) {
    double taper = 1.0;
    for (const auto& inf : model.skinning[i]) {
      if (inf.joint == kHead || inf.joint == kNeck || inf.joint == kLeftAnkle || inf.joint == kRightAnkle) {
        taper -= inf.weight;
      }
    }
    const double f = (field[i] - flo) / span * std::clamp(taper, 0.0, 1.0);
    s.clothing_offsets[i] = std::clamp(cfg.offset_min + f * (cfg.offset_max - cfg.offset_min), cfg.offset_min,
                                       cfg.offset_max);
  }

  const auto normals = s.inner.vertex_normals();
  std::vector<Vec3> outer(nv);
  for (int i = 0; i < nv; ++i) outer[i] = s.inner.vertices()[i] + s.clothing_offsets[i] * normals[i];

  // Vertices that ended up inside the body (concave creases) are re-projected off the
  // nearest body point, pushing further out if needed; as a last resort they fall back
  // towards the body along their own normal.
  const MeshBvh bvh(s.inner);
  for (int i = 0; i < nv; ++i) {
    if (!bvh.inside(outer[i])) continue;
    const SurfacePoint cp = bvh.closest(outer[i]);
    const Vec3 n = s.inner.face_normal(static_cast<std::size_t>(cp.face));
    bool done = false;
    for (double d = cfg.offset_min; d < 4 * cfg.offset_max && !done; d *= 1.5) {
      outer[i] = cp.point + d * n;
      done = !bvh.inside(outer[i]);
    }
    for (double d = s.clothing_offsets[i]; !done && d > 1e-5; d *= 0.5) {
      outer[i] = s.inner.vertices()[i] + d * normals[i];
      done = !bvh.inside(outer[i]);
    }
  }
  s.outer = s.inner.with_vertices(std::move(outer));
  return s;
}

// --- labels ---------------------------------------------------------------------------

RegionOracle::RegionOracle(const TriMesh& inner, const TriMesh& outer)
    : inner_(inner), outer_(outer), inner_vertices_(inner.vertices()), labels_(inner.vertex_labels()) {}

int RegionOracle::region(const Vec3& p) const {
  if (inner_.inside(p)) return kInsideBody;
  if (outer_.inside(p)) return kBetweenLayers;
  return kOutsideClothing;
}

int RegionOracle::part(const Vec3& p) const {
  if (labels_.empty()) return 0;
  return labels_[inner_vertices_.nearest(p)];
}

TrainingSample make_sample(const Subject& subject, const QueryConfig& cfg, std::uint64_t seed,
                           const PointCloud* input_override) {
  if (cfg.n_query < 1) throw InvalidParams("need at least one query point");
  TrainingSample out;
  out.input_cloud = input_override ? *input_override : sample_surface(subject.outer, cfg.n_input, sub_seed(seed, "input"));

  std::mt19937_64 rng(sub_seed(seed, "queries"));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(-0.5, 0.5);
  const auto n_uniform = static_cast<std::size_t>(std::llround(cfg.uniform_fraction * cfg.n_query));
  const std::size_t n_near = cfg.n_query - n_uniform;
  const std::size_t n_inner = n_near / 2, n_outer = n_near - n_inner;
  const PointCloud on_inner = sample_surface(subject.inner, n_inner, sub_seed(seed, "inner"));
  const PointCloud on_outer = sample_surface(subject.outer, n_outer, sub_seed(seed, "outer"));
  out.query_points.reserve(cfg.n_query);
  auto perturb = [&](const std::vector<Vec3>& pts) {
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const double sigma = k % 2 == 0 ? cfg.sigma_small : cfg.sigma_large;
      out.query_points.push_back(pts[k] + sigma * Vec3(gauss(rng), gauss(rng), gauss(rng)));
    }
  };
  perturb(on_inner.points);
  perturb(on_outer.points);
  if (n_uniform > 0) {
    const NormalizedCloud nc = normalize_to_box(out.input_cloud, cfg.box_size);
    for (std::size_t k = 0; k < n_uniform; ++k) {
      const Vec3 q = cfg.box_size * Vec3(uni(rng), uni(rng), uni(rng));
      out.query_points.push_back(nc.transform.invert(q));
    }
  }

  const RegionOracle oracle(subject.inner, subject.outer);
  out.region_labels.resize(out.query_points.size());
  out.part_labels.resize(out.query_points.size());
#pragma omp parallel for schedule(dynamic, 256)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(out.query_points.size()); ++k) {
    out.region_labels[k] = oracle.region(out.query_points[k]);
    out.part_labels[k] = oracle.part(out.query_points[k]);
  }
  return out;
}

// --- single view ----------------------------------------------------------------------

SingleViewResult single_view_cloud(const TriMesh& surface, const Vec3& view_dir, std::size_t n, std::uint64_t seed,
                                   int depth_resolution) {
  if (!(view_dir.norm() > 0) || !view_dir.allFinite()) throw DegenerateInput("view direction must be nonzero");
  const Vec3 d = view_dir.normalized();
  const Vec3 u = d.unitOrthogonal();
  const Vec3 w = d.cross(u);
  const int res = depth_resolution;

  const auto& verts = surface.vertices();
  const auto& faces = surface.faces();
  std::vector<Eigen::Vector3d> proj(verts.size());
  Eigen::Vector2d lo(std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
  Eigen::Vector2d hi = -lo;
  for (std::size_t i = 0; i < verts.size(); ++i) {
    proj[i] = Vec3(verts[i].dot(u), verts[i].dot(w), verts[i].dot(d));
    lo = lo.cwiseMin(proj[i].head<2>());
    hi = hi.cwiseMax(proj[i].head<2>());
  }
  const double pixel = std::max((hi - lo).maxCoeff(), 1e-9) / res;
  const double minus_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> depth(static_cast<std::size_t>(res) * res, minus_inf);
  auto pixel_of = [&](double x, double y) {
    const int px = std::clamp(static_cast<int>((x - lo.x()) / pixel), 0, res - 1);
    const int py = std::clamp(static_cast<int>((y - lo.y()) / pixel), 0, res - 1);
    return std::pair{px, py};
  };

  // depth = distance towards the camera; larger is nearer
  for (const Face& f : faces) {
    const Vec3 &a = proj[f[0]], &b = proj[f[1]], &c = proj[f[2]];
    const double area = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
    if (std::abs(area) < 1e-20) continue;
    const auto [x0, y0] = pixel_of(std::min({a.x(), b.x(), c.x()}), std::min({a.y(), b.y(), c.y()}));
    const auto [x1, y1] = pixel_of(std::max({a.x(), b.x(), c.x()}), std::max({a.y(), b.y(), c.y()}));
    for (int py = y0; py <= y1; ++py) {
      for (int px = x0; px <= x1; ++px) {
        const double x = lo.x() + (px + 0.5) * pixel, y = lo.y() + (py + 0.5) * pixel;
        const double l1 = ((b.x() - x) * (c.y() - y) - (c.x() - x) * (b.y() - y)) / area;
        const double l2 = ((c.x() - x) * (a.y() - y) - (a.x() - x) * (c.y() - y)) / area;
        const double l3 = 1.0 - l1 - l2;
        if (l1 < 0 || l2 < 0 || l3 < 0) continue;
        double& z = depth[static_cast<std::size_t>(py) * res + px];
        z = std::max(z, l1 * a.z() + l2 * b.z() + l3 * c.z());
      }
    }
  }

  // dense candidates, area-uniform, with their faces
  std::vector<double> cdf(faces.size());
  double total = 0;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    total += surface.face_area(f);
    cdf[f] = total;
  }
  SingleViewResult out;
  if (!(total > 0)) throw DegenerateInput("cannot sample a zero-area mesh");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const std::size_t n_dense = std::max<std::size_t>(20 * n, 50000);
  const double tol = 2.0 * pixel;
  std::vector<Vec3> visible;
  std::vector<int> visible_labels;
  for (std::size_t s = 0; s < n_dense; ++s) {
    const double r = uni(rng) * total;
    const std::size_t f =
        std::min<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin(), faces.size() - 1);
    double a = uni(rng), b = uni(rng);
    if (a + b > 1.0) {
      a = 1.0 - a;
      b = 1.0 - b;
    }
    if (surface.face_normal(f).dot(d) <= 0) continue;
    const Vec3 p0 = surface.face_vertex(f, 0), p1 = surface.face_vertex(f, 1), p2 = surface.face_vertex(f, 2);
    const Vec3 p = p0 + a * (p1 - p0) + b * (p2 - p0);
    const auto [px, py] = pixel_of(p.dot(u), p.dot(w));
    const double z = depth[static_cast<std::size_t>(py) * res + px];
    if (z != minus_inf && p.dot(d) < z - tol) continue;
    visible.push_back(p);
    if (surface.has_labels()) visible_labels.push_back(surface.vertex_labels()[faces[f][0]]);
  }
  std::vector<std::size_t> order(visible.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::shuffle(order.begin(), order.end(), rng);
  if (order.size() < n) {
    out.short_of_target = true;
    spdlog::warn("single view: only {} visible points, {} requested", order.size(), n);
  } else {
    order.resize(n);
  }
  for (std::size_t k : order) {
    out.cloud.points.push_back(visible[k]);
    if (!visible_labels.empty()) out.cloud.labels.push_back(visible_labels[k]);
  }
  return out;
}

// --- dataset --------------------------------------------------------------------------

fs::path subject_dir(const fs::path& root, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "subject_%04d", index);
  return root / buf;
}

void save_subject(const fs::path& dir, const Subject& subject, const TrainingSample& sample) {
  fs::create_directories(dir);
  io::write_obj(dir / "inner.obj", subject.inner);
  io::write_obj(dir / "outer.obj", subject.outer);
  save_params(dir / "params.json", subject.params);
  io::write_xyz(dir / "input.xyz", sample.input_cloud.points, {});
  io::write_xyz(dir / "queries.xyz", sample.query_points, {sample.region_labels, sample.part_labels});
}

SubjectFiles load_subject(const fs::path& dir, const BodyModel& model) {
  SubjectFiles s;
  s.inner = io::read_obj(dir / "inner.obj");
  s.outer = io::read_obj(dir / "outer.obj");
  if (static_cast<int>(s.inner.num_vertices()) == model.num_vertices()) s.inner = s.inner.with_labels(model.part_labels);
  if (static_cast<int>(s.outer.num_vertices()) == model.num_vertices()) s.outer = s.outer.with_labels(model.part_labels);
  s.params = load_params(dir / "params.json");
  std::vector<std::vector<int>> cols;
  io::read_xyz(dir / "input.xyz", s.input.points, cols);
  io::read_xyz(dir / "queries.xyz", s.query_points, cols);
  if (cols.size() != 2) throw FormatError((dir / "queries.xyz").string() + ": expected region and part columns");
  s.region_labels = std::move(cols[0]);
  s.part_labels = std::move(cols[1]);
  return s;
}

std::vector<fs::path> list_subjects(const fs::path& root) {
  std::vector<fs::path> out;
  if (!fs::is_directory(root)) throw FormatError(root.string() + " is not a directory");
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && e.path().filename().string().rfind("subject_", 0) == 0) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

DatasetEntry dataset_entry(const BodyModel& model, const DatasetConfig& cfg, int index) {
  const std::uint64_t seed = sub_seed(cfg.seed, "subject" + std::to_string(index));
  DatasetEntry e;
  e.subject = sample_subject(model, seed, cfg.subject);
  if (cfg.single_view) {
    std::mt19937_64 rng(sub_seed(seed, "view"));
    std::uniform_real_distribution<double> yaw(-std::numbers::pi / 3, std::numbers::pi / 3);
    const double a = yaw(rng);
    e.view_dir = Vec3(std::sin(a), std::cos(a), 0.0);
    const SingleViewResult sv = single_view_cloud(e.subject.outer, *e.view_dir, cfg.query.n_input, sub_seed(seed, "single"));
    e.sample = make_sample(e.subject, cfg.query, seed, &sv.cloud);
  } else {
    e.sample = make_sample(e.subject, cfg.query, seed);
  }
  return e;
}

void generate_dataset(const BodyModel& model, const DatasetConfig& cfg, const fs::path& root) {
  fs::create_directories(root);
  save_model(root / "body.json", model);
  for (int i = 0; i < cfg.count; ++i) {
    const DatasetEntry e = dataset_entry(model, cfg, i);
    const fs::path dir = subject_dir(root, i);
    if (e.view_dir) {
      fs::create_directories(dir);
      const Vec3& v = *e.view_dir;
      io::write_text(dir / "view.json", json{{"view_dir", {v.x(), v.y(), v.z()}}}.dump(2) + "\n");
    }
    save_subject(dir, e.subject, e.sample);
    spdlog::info("subject {} written to {}", i, dir.string());
  }
}

}  // namespace dilate
