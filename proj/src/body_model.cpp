#include "dilate/body_model.hpp"

#include "dilate/io.hpp"
#include "dilate/marching_cubes.hpp"

#include <json.hpp>

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace dilate {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kNumParts> kPartNames = {
    "left_forearm",  "right_forearm",  "left_mid_arm",  "right_mid_arm", "left_upper_arm",
    "right_upper_arm", "left_upper_leg", "right_upper_leg", "left_mid_leg", "right_mid_leg",
    "left_foot",     "right_foot",     "torso",         "head"};

constexpr std::array<const char*, kNumJoints> kJointNames = {
    "root",       "spine",       "neck",        "head",     "left_shoulder", "left_elbow",
    "left_wrist", "right_shoulder", "right_elbow", "right_wrist", "left_hip",  "left_knee",
    "left_ankle", "right_hip",   "right_knee",  "right_ankle"};

constexpr std::array<int, kNumJoints> kParents = {-1, 0, 1, 2, 1, 4, 5, 1, 7, 8, 0, 10, 11, 0, 13, 14};

double deg(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace

std::string_view part_name(int part) {
  if (part < 0 || part >= kNumParts) return "unknown";
  return kPartNames[part];
}

int mirror_part(int part) {
  if (part < 0 || part >= 12) return part;
  return part ^ 1;
}

Mat3 skew(const Vec3& v) {
  Mat3 k;
  k << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return k;
}

Mat3 rodrigues(const Vec3& w) {
  const double th = w.norm();
  if (th == 0.0) return Mat3::Identity();
  const Mat3 k = skew(w / th);
  return Mat3::Identity() + std::sin(th) * k + (1.0 - std::cos(th)) * k * k;
}

std::array<Mat3, 3> rodrigues_derivatives(const Vec3& w) {
  std::array<Mat3, 3> d;
  const double th2 = w.squaredNorm();
  if (th2 < 1e-16) {
    for (int i = 0; i < 3; ++i) d[i] = skew(Vec3::Unit(i));
    return d;
  }
  const Mat3 r = rodrigues(w);
  const Mat3 i_minus_r = Mat3::Identity() - r;
  for (int i = 0; i < 3; ++i) {
    const Vec3 c = w.cross(i_minus_r.col(i));
    d[i] = (w[i] * skew(w) + skew(c)) * r / th2;
  }
  return d;
}

Vec3 log_rotation(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

Vec3 canonicalize_axis_angle(const Vec3& w) {
  const double th = w.norm();
  if (th == 0.0) return w;
  // a negative remainder flips the axis, which keeps the angle in [0, pi]
  return w / th * std::remainder(th, 2.0 * std::numbers::pi);
}

// --- model ---------------------------------------------------------------------------

TriMesh BodyModel::template_mesh() const { return TriMesh(template_vertices, faces, part_labels); }

std::vector<int> BodyModel::part_faces(int part) const {
  std::vector<int> out;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Face& fc = faces[f];
    if (part_labels[fc[0]] == part && part_labels[fc[1]] == part && part_labels[fc[2]] == part) {
      out.push_back(static_cast<int>(f));
    }
  }
  return out;
}

bool BodyModel::is_ancestor(int ancestor, int joint) const {
  for (int j = joint; j >= 0; j = parents[j]) {
    if (j == ancestor) return true;
  }
  return false;
}

void BodyModel::validate() const {
  const std::size_t v = template_vertices.size(), j = joints.size();
  if (v == 0 || faces.empty()) throw DegenerateInput("body model has no geometry");
  if (parents.size() != j || joint_limits.size() != j || joint_names.size() != j) {
    throw DegenerateInput("joint arrays disagree in length");
  }
  for (std::size_t k = 0; k < j; ++k) {
    if (k == 0 ? parents[k] != -1 : (parents[k] < 0 || parents[k] >= static_cast<int>(k))) {
      throw DegenerateInput("joint tree must list parents before children with joint 0 as root");
    }
  }
  if (skinning.size() != v || part_labels.size() != v) throw DegenerateInput("per-vertex arrays disagree in length");
  for (const auto& row : skinning) {
    double s = 0;
    for (const auto& inf : row) {
      if (inf.joint < 0 || inf.joint >= static_cast<int>(j) || !(inf.weight >= 0)) {
        throw DegenerateInput("invalid skinning influence");
      }
      s += inf.weight;
    }
    if (std::abs(s - 1.0) > 1e-6) throw DegenerateInput("skinning weights do not sum to one");
  }
  if (joint_shape_basis.size() != shape_basis.size()) throw DegenerateInput("shape bases disagree");
  for (std::size_t b = 0; b < shape_basis.size(); ++b) {
    if (shape_basis[b].size() != v || joint_shape_basis[b].size() != j) {
      throw DegenerateInput("shape basis has the wrong size");
    }
  }
  for (int l : part_labels) {
    if (l < 0 || l >= kNumParts) throw DegenerateInput("part label out of range");
  }
  for (const Face& f : faces) {
    for (int k : f) {
      if (k < 0 || k >= static_cast<int>(v)) throw DegenerateInput("face index out of range");
    }
  }
}

BodyParams BodyParams::zero(const BodyModel& model, bool with_displacements) {
  BodyParams p;
  p.pose.assign(model.num_joints(), Vec3::Zero());
  p.shape = Eigen::VectorXd::Zero(model.num_shapes());
  if (with_displacements) p.displacements.assign(model.num_vertices(), Vec3::Zero());
  return p;
}

void BodyParams::validate(const BodyModel& model) const {
  if (static_cast<int>(pose.size()) != model.num_joints()) {
    throw InvalidParams("pose has " + std::to_string(pose.size()) + " joints, model has " +
                        std::to_string(model.num_joints()));
  }
  if (shape.size() != model.num_shapes()) throw InvalidParams("shape vector has the wrong length");
  if (!displacements.empty() && static_cast<int>(displacements.size()) != model.num_vertices()) {
    throw InvalidParams("displacement field has the wrong length");
  }
  for (const Vec3& w : pose) {
    if (!w.allFinite()) throw InvalidParams("non-finite pose");
  }
  if (!shape.allFinite()) throw InvalidParams("non-finite shape");
  if (!translation.allFinite()) throw InvalidParams("non-finite translation");
  for (const Vec3& d : displacements) {
    if (!d.allFinite()) throw InvalidParams("non-finite displacement");
  }
}

// --- forward --------------------------------------------------------------------------
//
// Joint j moves points by x -> Rg_j (x - J_j) + J_j + delta_j, where Rg is the chained
// rotation and delta_j the displacement of the joint itself. The skinning transform is
// written as x + (Rg_j - I) x + a_j with a_j = delta_j - (Rg_j - I) J_j so that a zero
// pose reproduces the rest vertices exactly.

PosedState pose_state(const BodyModel& model, const BodyParams& params) {
  params.validate(model);
  const int nv = model.num_vertices(), nj = model.num_joints(), nb = model.num_shapes();
  PosedState s;
  s.rest = model.template_vertices;
  s.joints = model.joints;
  for (int b = 0; b < nb; ++b) {
    const double beta = params.shape[b];
    if (beta == 0.0) continue;
    for (int i = 0; i < nv; ++i) s.rest[i] += beta * model.shape_basis[b][i];
    for (int j = 0; j < nj; ++j) s.joints[j] += beta * model.joint_shape_basis[b][j];
  }
  if (params.has_displacements()) {
    for (int i = 0; i < nv; ++i) s.rest[i] += params.displacements[i];
  }
  s.local_rot.resize(nj);
  s.world_rot.resize(nj);
  s.world_trans.resize(nj);
  s.skin_trans.resize(nj);
  for (int j = 0; j < nj; ++j) {
    s.local_rot[j] = rodrigues(params.pose[j]);
    const int p = model.parents[j];
    if (p < 0) {
      s.world_rot[j] = s.local_rot[j];
      s.world_trans[j] = Vec3::Zero();
    } else {
      s.world_rot[j] = s.world_rot[p] * s.local_rot[j];
      s.world_trans[j] = (s.world_rot[p] - Mat3::Identity()) * (s.joints[j] - s.joints[p]) + s.world_trans[p];
    }
    s.skin_trans[j] = s.world_trans[j] - (s.world_rot[j] - Mat3::Identity()) * s.joints[j];
  }
  std::vector<Mat3> rm(nj);
  for (int j = 0; j < nj; ++j) rm[j] = s.world_rot[j] - Mat3::Identity();
  s.vertices.resize(nv);
  for (int i = 0; i < nv; ++i) {
    const Vec3& x = s.rest[i];
    Vec3 acc = Vec3::Zero();
    for (const auto& inf : model.skinning[i]) acc += inf.weight * (rm[inf.joint] * x + s.skin_trans[inf.joint]);
    s.vertices[i] = x + acc + params.translation;
  }
  return s;
}

TriMesh forward(const BodyModel& model, const BodyParams& params) {
  PosedState s = pose_state(model, params);
  return TriMesh(std::move(s.vertices), model.faces, model.part_labels);
}

Eigen::SparseMatrix<double> forward_jacobian(const BodyModel& model, const BodyParams& params, ParamBlock block) {
  const PosedState s = pose_state(model, params);
  const int nv = model.num_vertices(), nj = model.num_joints(), nb = model.num_shapes();
  std::vector<Eigen::Triplet<double>> trip;
  int cols = 0;
  auto add_vec = [&](int i, int col, const Vec3& d) {
    for (int r = 0; r < 3; ++r) {
      if (d[r] != 0.0) trip.emplace_back(3 * i + r, col, d[r]);
    }
  };
  switch (block) {
    case ParamBlock::Translation:
      cols = 3;
      for (int i = 0; i < nv; ++i) {
        for (int r = 0; r < 3; ++r) trip.emplace_back(3 * i + r, r, 1.0);
      }
      break;
    case ParamBlock::Displacement: {
      cols = 3 * nv;
      for (int i = 0; i < nv; ++i) {
        Mat3 m = Mat3::Identity();
        for (const auto& inf : model.skinning[i]) m += inf.weight * (s.world_rot[inf.joint] - Mat3::Identity());
        for (int r = 0; r < 3; ++r) {
          for (int c = 0; c < 3; ++c) {
            if (m(r, c) != 0.0) trip.emplace_back(3 * i + r, 3 * i + c, m(r, c));
          }
        }
      }
      break;
    }
    case ParamBlock::Shape: {
      cols = nb;
      std::vector<Vec3> dd(nj), da(nj);
      for (int b = 0; b < nb; ++b) {
        const auto& dj = model.joint_shape_basis[b];
        for (int j = 0; j < nj; ++j) {
          const int p = model.parents[j];
          dd[j] = p < 0 ? Vec3::Zero() : Vec3((s.world_rot[p] - Mat3::Identity()) * (dj[j] - dj[p]) + dd[p]);
          da[j] = dd[j] - (s.world_rot[j] - Mat3::Identity()) * dj[j];
        }
        for (int i = 0; i < nv; ++i) {
          const Vec3& dv = model.shape_basis[b][i];
          Vec3 acc = dv;
          for (const auto& inf : model.skinning[i]) {
            acc += inf.weight * ((s.world_rot[inf.joint] - Mat3::Identity()) * dv + da[inf.joint]);
          }
          add_vec(i, b, acc);
        }
      }
      break;
    }
    case ParamBlock::Pose: {
      cols = 3 * nj;
      std::vector<Mat3> drg(nj);
      std::vector<Vec3> dd(nj), da(nj);
      std::vector<char> moved(nj);
      for (int j = 0; j < nj; ++j) {
        const auto dr = rodrigues_derivatives(params.pose[j]);
        for (int c = 0; c < 3; ++c) {
          for (int k = 0; k < nj; ++k) {
            const int p = model.parents[k];
            if (k == j) {
              drg[k] = p < 0 ? dr[c] : Mat3(s.world_rot[p] * dr[c]);
              dd[k].setZero();
              moved[k] = 1;
            } else if (p >= 0 && moved[p]) {
              drg[k] = drg[p] * s.local_rot[k];
              dd[k] = drg[p] * (s.joints[k] - s.joints[p]) + dd[p];
              moved[k] = 1;
            } else {
              moved[k] = 0;
              continue;
            }
            da[k] = dd[k] - drg[k] * s.joints[k];
          }
          for (int i = 0; i < nv; ++i) {
            Vec3 acc = Vec3::Zero();
            bool any = false;
            for (const auto& inf : model.skinning[i]) {
              if (!moved[inf.joint]) continue;
              acc += inf.weight * (drg[inf.joint] * s.rest[i] + da[inf.joint]);
              any = true;
            }
            if (any) add_vec(i, 3 * j + c, acc);
          }
        }
      }
      break;
    }
  }
  Eigen::SparseMatrix<double> jac(3 * nv, cols);
  jac.setFromTriplets(trip.begin(), trip.end());
  return jac;
}

ParamGradient backpropagate(const BodyModel& model, const BodyParams& params, const PosedState& s,
                            std::span<const Vec3> g, bool with_displacements) {
  const int nv = model.num_vertices(), nj = model.num_joints(), nb = model.num_shapes();
  if (static_cast<int>(g.size()) != nv) throw LengthMismatch("vertex gradient has the wrong length");
  ParamGradient out;
  std::vector<Mat3> g_rg(nj, Mat3::Zero());
  std::vector<Vec3> g_a(nj, Vec3::Zero()), g_d(nj, Vec3::Zero()), g_j(nj, Vec3::Zero());
  std::vector<Vec3> g_rest(nv);
  for (int i = 0; i < nv; ++i) {
    out.translation += g[i];
    Vec3 gr = g[i];
    for (const auto& inf : model.skinning[i]) {
      const Vec3 wg = inf.weight * g[i];
      g_rg[inf.joint] += wg * s.rest[i].transpose();
      g_a[inf.joint] += wg;
      gr += (s.world_rot[inf.joint] - Mat3::Identity()).transpose() * wg;
    }
    g_rest[i] = gr;
  }
  for (int j = 0; j < nj; ++j) {
    g_d[j] += g_a[j];
    g_rg[j] -= g_a[j] * s.joints[j].transpose();
    g_j[j] -= (s.world_rot[j] - Mat3::Identity()).transpose() * g_a[j];
  }
  out.local_rot.assign(nj, Mat3::Zero());
  for (int j = nj - 1; j >= 0; --j) {
    const int p = model.parents[j];
    if (p < 0) {
      out.local_rot[j] = g_rg[j];
      continue;
    }
    g_rg[p] += g_d[j] * (s.joints[j] - s.joints[p]).transpose();
    const Vec3 gj = (s.world_rot[p] - Mat3::Identity()).transpose() * g_d[j];
    g_j[j] += gj;
    g_j[p] -= gj;
    g_d[p] += g_d[j];
    g_rg[p] += g_rg[j] * s.local_rot[j].transpose();
    out.local_rot[j] = s.world_rot[p].transpose() * g_rg[j];
  }
  out.pose.resize(nj);
  for (int j = 0; j < nj; ++j) {
    const auto dr = rodrigues_derivatives(params.pose[j]);
    for (int c = 0; c < 3; ++c) out.pose[j][c] = (out.local_rot[j].array() * dr[c].array()).sum();
  }
  out.shape = Eigen::VectorXd::Zero(nb);
  for (int b = 0; b < nb; ++b) {
    double acc = 0;
    for (int i = 0; i < nv; ++i) acc += g_rest[i].dot(model.shape_basis[b][i]);
    for (int j = 0; j < nj; ++j) acc += g_j[j].dot(model.joint_shape_basis[b][j]);
    out.shape[b] = acc;
  }
  if (with_displacements) out.displacements = std::move(g_rest);
  return out;
}

TriMesh part_submesh(const BodyModel& model, const BodyParams& params, int part) {
  std::vector<int> ids = model.part_faces(part);
  if (ids.empty()) throw EmptyPart("part " + std::string(part_name(part)) + " has no faces");
  PosedState s = pose_state(model, params);
  std::vector<Face> faces;
  faces.reserve(ids.size());
  for (int f : ids) faces.push_back(model.faces[f]);
  return TriMesh(std::move(s.vertices), std::move(faces), model.part_labels);
}

TriMesh repose(const BodyModel& model, const BodyParams& fitted, std::span<const Vec3> new_pose) {
  BodyParams p = fitted;
  p.pose.assign(new_pose.begin(), new_pose.end());
  return forward(model, p);
}

// --- procedural template -----------------------------------------------------------

namespace {

// Elliptic capsule: an axis segment a->b, cross-section radii (r1 along e1, r2 along
// e2 = u x e1) linearly tapered from a to b, and ellipsoidal end caps of depth ca / cb.
struct Primitive {
  Vec3 a, b, e1;
  double ra1, ra2, rb1, rb2, ca, cb;
  int part;
};

double primitive_sdf(const Primitive& pr, const Vec3& p) {
  const Vec3 d = pr.b - pr.a;
  const double len = d.norm();
  const Vec3 u = len > 0 ? Vec3(d / len) : Vec3::UnitZ();
  const Vec3 e1 = (pr.e1 - pr.e1.dot(u) * u).normalized();
  const Vec3 e2 = u.cross(e1);
  const double x = (p - pr.a).dot(u);
  const double s = len > 0 ? std::clamp(x / len, 0.0, 1.0) : 0.0;
  const double h = x - s * len;
  const Vec3 q = p - pr.a - s * len * u;
  const double r1 = pr.ra1 + s * (pr.rb1 - pr.ra1);
  const double r2 = pr.ra2 + s * (pr.rb2 - pr.ra2);
  const double rc = h < 0 ? pr.ca : pr.cb;
  const double n = std::sqrt(std::pow(q.dot(e1) / r1, 2) + std::pow(q.dot(e2) / r2, 2) + std::pow(h / rc, 2));
  return (n - 1.0) * std::min({r1, r2, rc});
}

double smooth_min(double a, double b, double k) {
  const double h = std::max(k - std::abs(a - b), 0.0) / k;
  return std::min(a, b) - h * h * k * 0.25;
}

struct Segment {
  Vec3 a, b;
};

constexpr double kBoneGap = 0.05;
constexpr double kHipX = 0.12;

double segment_distance(const Segment& s, const Vec3& p) {
  const Vec3 d = s.b - s.a;
  const double t = std::clamp((p - s.a).dot(d) / d.squaredNorm(), 0.0, 1.0);
  return (p - s.a - t * d).norm();
}

std::vector<Primitive> body_primitives() {
  using P = PartId;
  const Vec3 ex = Vec3::UnitX(), ey = Vec3::UnitY();
  std::vector<Primitive> v;
  auto add = [&](Vec3 a, Vec3 b, Vec3 e1, double ra1, double ra2, double rb1, double rb2, double ca, double cb,
                 P part) { v.push_back({a, b, e1, ra1, ra2, rb1, rb2, ca, cb, static_cast<int>(part)}); };
  add({0, 0, 0.98}, {0, 0, 1.32}, ex, 0.155, 0.105, 0.16, 0.10, 0.10, 0.10, P::Torso);
  add({0, 0, 0.93}, {0, 0, 0.93}, ex, 0.165, 0.11, 0.165, 0.11, 0.10, 0.10, P::Torso);
  add({0, 0, 1.40}, {0, 0, 1.52}, ex, 0.05, 0.05, 0.048, 0.048, 0.05, 0.048, P::Head);
  add({0, 0.005, 1.605}, {0, 0.005, 1.605}, ex, 0.075, 0.09, 0.075, 0.09, 0.095, 0.095, P::Head);
  add({0, 0.085, 1.59}, {0, 0.085, 1.59}, ex, 0.018, 0.022, 0.018, 0.022, 0.022, 0.022, P::Head);
  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? 1.0 : -1.0;
    auto pp = [&](P left) { return static_cast<P>(static_cast<int>(left) + side); };
    const Vec3 ax = sx * ex;
    add({sx * 0.17, 0, 1.40}, {sx * 0.45, 0, 1.40}, ey, 0.05, 0.046, 0.04, 0.037, 0.05, 0.037, pp(P::LeftUpperArm));
    add({sx * 0.45, 0, 1.40}, {sx * 0.70, 0, 1.40}, ey, 0.04, 0.035, 0.031, 0.027, 0.035, 0.027, pp(P::LeftMidArm));
    add({sx * 0.71, 0, 1.40}, {sx * 0.84, 0, 1.40}, ey, 0.045, 0.022, 0.04, 0.02, 0.022, 0.022, pp(P::LeftForearm));
    add({sx * kHipX, 0, 0.90}, {sx * kHipX, 0, 0.50}, ex, 0.07, 0.08, 0.055, 0.055, 0.08, 0.055, pp(P::LeftUpperLeg));
    add({sx * kHipX, 0, 0.50}, {sx * kHipX, 0, 0.10}, ex, 0.052, 0.055, 0.036, 0.038, 0.052, 0.036, pp(P::LeftMidLeg));
    add({sx * kHipX, -0.03, 0.045}, {sx * kHipX, 0.15, 0.045}, ax, 0.045, 0.04, 0.042, 0.03, 0.04, 0.03,
        pp(P::LeftFoot));
  }
  return v;
}

std::vector<Vec3> rest_joints() {
  std::vector<Vec3> j(kNumJoints);
  j[kRoot] = {0, 0, 0.95};
  j[kSpine] = {0, 0, 1.15};
  j[kNeck] = {0, 0, 1.45};
  j[kHead] = {0, 0, 1.55};
  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? 1.0 : -1.0;
    const int o = side * 3;
    j[kLeftShoulder + o] = {sx * 0.17, 0, 1.40};
    j[kLeftElbow + o] = {sx * 0.45, 0, 1.40};
    j[kLeftWrist + o] = {sx * 0.705, 0, 1.40};
    j[kLeftHip + o] = {sx * kHipX, 0, 0.90};
    j[kLeftKnee + o] = {sx * kHipX, 0, 0.50};
    j[kLeftAnkle + o] = {sx * kHipX, 0, 0.09};
  }
  return j;
}

// Bone segments that attract skinning weight for each joint. Bones stop short of the
// joints so that bends blend over a band rather than folding.
std::vector<std::vector<Segment>> joint_bones() {
  constexpr double g = kBoneGap;
  std::vector<std::vector<Segment>> b(kNumJoints);
  b[kRoot] = {{{0, 0, 0.86}, {0, 0, 1.02}}, {{-0.08, 0, 0.93}, {0.08, 0, 0.93}}};
  b[kSpine] = {{{0, 0, 1.17}, {0, 0, 1.34}}, {{-0.12, 0, 1.35}, {0.12, 0, 1.35}}};
  b[kNeck] = {{{0, 0, 1.44}, {0, 0, 1.51}}};
  b[kHead] = {{{0, 0.01, 1.57}, {0, 0.01, 1.66}}};
  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? 1.0 : -1.0;
    const int o = side * 3;
    b[kLeftShoulder + o] = {{{sx * (0.17 + g), 0, 1.40}, {sx * (0.45 - g), 0, 1.40}}};
    b[kLeftElbow + o] = {{{sx * (0.45 + g), 0, 1.40}, {sx * (0.705 - g), 0, 1.40}}};
    b[kLeftWrist + o] = {{{sx * (0.705 + g), 0, 1.40}, {sx * 0.85, 0, 1.40}}};
    b[kLeftHip + o] = {{{sx * kHipX, 0, 0.90 - g}, {sx * kHipX, 0, 0.50 + g}}};
    b[kLeftKnee + o] = {{{sx * kHipX, 0, 0.50 - g}, {sx * kHipX, 0, 0.09 + g}}};
    b[kLeftAnkle + o] = {{{sx * kHipX, 0.0, 0.045}, {sx * kHipX, 0.17, 0.04}}};
  }
  return b;
}

double field_at(const std::vector<Primitive>& prims, const Vec3& p) {
  double d = primitive_sdf(prims[0], p);
  for (std::size_t k = 1; k < prims.size(); ++k) d = smooth_min(d, primitive_sdf(prims[k], p), 0.02);
  return d;
}

// Drops vertices not referenced by any face.
void compact(std::vector<Vec3>& verts, std::vector<Face>& faces) {
  std::vector<int> remap(verts.size(), -1);
  std::vector<Vec3> out;
  for (Face& f : faces) {
    for (int& k : f) {
      if (remap[k] < 0) {
        remap[k] = static_cast<int>(out.size());
        out.push_back(verts[k]);
      }
      k = remap[k];
    }
  }
  verts = std::move(out);
}

Vec3 to_float(const Vec3& v) {
  return Vec3(static_cast<float>(v.x()), static_cast<float>(v.y()), static_cast<float>(v.z()));
}

constexpr double kCell = 0.02;
constexpr double kSkinFalloff = 0.02;
constexpr double kMinInfluence = 1e-3;
constexpr double kHeight = 1.70;

}  // namespace

BodyModel build_default_model(int shape_modes, std::uint64_t seed) {
  if (shape_modes < 0 || shape_modes > 8) throw InvalidParams("shape_modes must lie in [0, 8]");
  const auto prims = body_primitives();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.25 * kCell, 0.25 * kCell);
  const Vec3 lo(-0.95 + jitter(rng), -0.24 + jitter(rng), -0.06 + jitter(rng));
  const std::array<int, 3> res = {96, 27, 92};
  ScalarGrid grid(res, lo, kCell);
  for (int k = 0; k < res[2]; ++k) {
    for (int j = 0; j < res[1]; ++j) {
      for (int i = 0; i < res[0]; ++i) grid.at(i, j, k) = static_cast<float>(field_at(prims, grid.cell_center(i, j, k)));
    }
  }
  const TriMesh raw = marching_cubes(grid, 0.0f, InsideSide::Below);
  std::vector<Vec3> verts = raw.vertices();
  std::vector<Face> faces = raw.faces();
  compact(verts, faces);

  // exact standing height, feet on z = 0
  double zmin = std::numeric_limits<double>::infinity(), zmax = -zmin;
  for (const Vec3& v : verts) {
    zmin = std::min(zmin, v.z());
    zmax = std::max(zmax, v.z());
  }
  const double scale = kHeight / (zmax - zmin);
  auto normalize = [&](const Vec3& p) { return Vec3(p.x() * scale, p.y() * scale, (p.z() - zmin) * scale); };
  for (Vec3& v : verts) v = to_float(normalize(v));
  {
    // pin the extreme vertices so the float rounding keeps the height exact
    double lo_z = std::numeric_limits<double>::infinity(), hi_z = -lo_z;
    for (const Vec3& v : verts) {
      lo_z = std::min(lo_z, v.z());
      hi_z = std::max(hi_z, v.z());
    }
    for (Vec3& v : verts) {
      if (v.z() == lo_z) v.z() = 0.0;
      if (v.z() == hi_z) v.z() = static_cast<float>(kHeight);
    }
  }
  const std::size_t nv = verts.size();

  BodyModel m;
  m.joints = rest_joints();
  for (Vec3& j : m.joints) j = to_float(normalize(j));
  auto bones = joint_bones();
  for (auto& bl : bones) {
    for (Segment& s : bl) {
      s.a = normalize(s.a);
      s.b = normalize(s.b);
    }
  }
  m.parents.assign(kParents.begin(), kParents.end());
  for (const char* n : kJointNames) m.joint_names.emplace_back(n);
  m.joint_limits.resize(kNumJoints, deg(60));
  m.joint_limits[kRoot] = std::numbers::pi;
  for (int j : {kSpine, kNeck, kHead}) m.joint_limits[j] = deg(20);

  // part labels: nearest primitive in the original frame
  m.part_labels.resize(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    const Vec3 p(verts[i].x() / scale, verts[i].y() / scale, verts[i].z() / scale + zmin);
    double best = std::numeric_limits<double>::infinity();
    for (const Primitive& pr : prims) {
      const double d = primitive_sdf(pr, p);
      if (d < best) {
        best = d;
        m.part_labels[i] = pr.part;
      }
    }
  }

  // skinning: exponential falloff in bone distance
  m.skinning.resize(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    std::array<double, kNumJoints> d;
    double dmin = std::numeric_limits<double>::infinity();
    for (int j = 0; j < kNumJoints; ++j) {
      d[j] = std::numeric_limits<double>::infinity();
      for (const Segment& s : bones[j]) d[j] = std::min(d[j], segment_distance(s, verts[i]));
      dmin = std::min(dmin, d[j]);
    }
    double total = 0;
    std::vector<SkinInfluence> row;
    for (int j = 0; j < kNumJoints; ++j) {
      const double w = std::exp(-(d[j] - dmin) / kSkinFalloff);
      if (w >= kMinInfluence) {
        row.push_back({j, w});
        total += w;
      }
    }
    for (auto& inf : row) inf.weight = static_cast<float>(inf.weight / total);
    m.skinning[i] = std::move(row);
  }

  // Shape fields are smooth ambient deformation maps evaluated at vertices (F) and joints
  // (G). Being smooth and nearly monotone, they cannot fold the surface at moderate scale.
  constexpr int kFields = 8;
  const double z_root = m.joints[kRoot].z(), z_neck = m.joints[kNeck].z();
  const double z_head = m.joints[kHead].z(), shoulder_x = m.joints[kLeftShoulder].x();
  const double z_arm = m.joints[kLeftShoulder].z(), z_hip = m.joints[kLeftHip].z();
  auto softplus = [](double u, double k) { return u > 30 * k ? u : k * std::log1p(std::exp(u / k)); };
  auto sigmoid = [](double u) { return 1.0 / (1.0 + std::exp(-u)); };
  auto smoothstep = [](double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3 - 2 * t);
  };
  auto fields = [&](const Vec3& p) {
    const double x = p.x(), y = p.y(), z = p.z(), ax = std::abs(x);
    const double arm = smoothstep(z_arm - 0.25, z_arm - 0.15, z);
    const double sgn = std::tanh(x / 0.03);
    std::array<Vec3, kFields> c;
    c[0] = {0, 0, z};
    c[1] = {0.16 * std::tanh(x / 0.16), y, 0};
    c[2] = {arm * sgn * softplus(ax - shoulder_x, 0.02), 0, -softplus(z_hip - z, 0.02)};
    c[3] = {0, 0, softplus(z - z_root, 0.02) - softplus(z - z_neck, 0.02)};
    c[4] = {arm * sgn * sigmoid((ax - shoulder_x) / 0.03), 0, 0};
    c[5] = {0, softplus(y, 0.02) * std::exp(-std::pow((z - z_root - 0.1) / 0.12, 2) - std::pow(x / 0.15, 2)), 0};
    c[6] = arm * sigmoid((ax - shoulder_x - 0.05) / 0.02) * Vec3(0, y, z - z_arm);
    c[7] = sigmoid((z - z_head + 0.05) / 0.02) * (p - Vec3(0, 0, z_head));
    return c;
  };
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(3 * nv, kFields);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(3 * kNumJoints, kFields);
  for (std::size_t i = 0; i < nv; ++i) {
    const auto c = fields(verts[i]);
    for (int k = 0; k < kFields; ++k) f.block<3, 1>(3 * i, k) = c[k];
  }
  for (int j = 0; j < kNumJoints; ++j) {
    const auto c = fields(m.joints[j]);
    for (int k = 0; k < kFields; ++k) g.block<3, 1>(3 * j, k) = c[k];
  }
  if (shape_modes > 0) {
    const Eigen::MatrixXd fb = f.leftCols(shape_modes);
    const Eigen::MatrixXd gb = g.leftCols(shape_modes);
    const Eigen::MatrixXd gram = fb.transpose() * fb;
    const Eigen::LLT<Eigen::MatrixXd> llt(gram);
    // Q = F L^-T is orthonormal; one unit of each mode moves vertices by 1 cm RMS
    const Eigen::MatrixXd lt_inv = llt.matrixU().solve(Eigen::MatrixXd::Identity(shape_modes, shape_modes));
    const double unit = 0.01 * std::sqrt(static_cast<double>(nv));
    const Eigen::MatrixXd q = fb * lt_inv * unit;
    const Eigen::MatrixXd qj = gb * lt_inv * unit;
    for (int b = 0; b < shape_modes; ++b) {
      std::vector<Vec3> sv(nv), sj(kNumJoints);
      for (std::size_t i = 0; i < nv; ++i) sv[i] = to_float(q.block<3, 1>(3 * i, b));
      for (int j = 0; j < kNumJoints; ++j) sj[j] = to_float(qj.block<3, 1>(3 * j, b));
      m.shape_basis.push_back(std::move(sv));
      m.joint_shape_basis.push_back(std::move(sj));
    }
  }
  m.template_vertices = std::move(verts);
  m.faces = std::move(faces);
  m.validate();
  return m;
}

// --- serialization -----------------------------------------------------------------

namespace {

std::vector<float> flatten(const std::vector<Vec3>& v) {
  std::vector<float> out;
  out.reserve(3 * v.size());
  for (const Vec3& p : v) {
    out.push_back(static_cast<float>(p.x()));
    out.push_back(static_cast<float>(p.y()));
    out.push_back(static_cast<float>(p.z()));
  }
  return out;
}

std::vector<Vec3> unflatten(const std::vector<float>& f) {
  std::vector<Vec3> out(f.size() / 3);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Vec3(f[3 * i], f[3 * i + 1], f[3 * i + 2]);
  return out;
}

void expect_shape(const io::BlobSection& s, std::vector<std::uint32_t> shape, const char* name) {
  if (s.shape != shape) throw FormatError(std::string("blob section '") + name + "' has an unexpected shape");
}

}  // namespace

void save_model(const std::filesystem::path& json_path, const BodyModel& model) {
  model.validate();
  const auto nv = static_cast<std::uint32_t>(model.num_vertices());
  const auto nj = static_cast<std::uint32_t>(model.num_joints());
  const auto nb = static_cast<std::uint32_t>(model.num_shapes());
  const auto nf = static_cast<std::uint32_t>(model.faces.size());
  io::Blob blob;
  blob["template_vertices"] = io::f32_section({nv, 3}, flatten(model.template_vertices));
  std::vector<std::int32_t> faces;
  for (const Face& f : model.faces) faces.insert(faces.end(), f.begin(), f.end());
  blob["faces"] = io::i32_section({nf, 3}, std::move(faces));
  blob["joints"] = io::f32_section({nj, 3}, flatten(model.joints));
  std::vector<float> w(static_cast<std::size_t>(nv) * nj, 0.0f);
  for (std::uint32_t i = 0; i < nv; ++i) {
    for (const auto& inf : model.skinning[i]) w[i * nj + inf.joint] = static_cast<float>(inf.weight);
  }
  blob["skinning_weights"] = io::f32_section({nv, nj}, std::move(w));
  std::vector<float> sb, sj;
  for (std::uint32_t b = 0; b < nb; ++b) {
    const auto a = flatten(model.shape_basis[b]);
    sb.insert(sb.end(), a.begin(), a.end());
    const auto c = flatten(model.joint_shape_basis[b]);
    sj.insert(sj.end(), c.begin(), c.end());
  }
  blob["shape_basis"] = io::f32_section({nb, nv, 3}, std::move(sb));
  blob["joint_shape_basis"] = io::f32_section({nb, nj, 3}, std::move(sj));
  blob["part_labels"] = io::i32_section({nv}, {model.part_labels.begin(), model.part_labels.end()});

  auto blob_path = json_path;
  blob_path.replace_extension(".bin");
  json j;
  j["format"] = "dilate-body-model";
  j["version"] = 1;
  j["num_vertices"] = nv;
  j["num_faces"] = nf;
  j["num_joints"] = nj;
  j["num_shapes"] = nb;
  j["parents"] = model.parents;
  j["joint_names"] = model.joint_names;
  j["joint_limits"] = model.joint_limits;
  std::vector<std::string> parts;
  for (int p = 0; p < kNumParts; ++p) parts.emplace_back(part_name(p));
  j["part_names"] = parts;
  j["blob"] = blob_path.filename().string();
  io::write_blob(blob_path, blob);
  io::write_text(json_path, j.dump(2) + "\n");
}

BodyModel load_model(const std::filesystem::path& json_path) {
  json j;
  try {
    j = json::parse(io::read_text(json_path));
  } catch (const json::exception& e) {
    throw FormatError(json_path.string() + ": " + e.what());
  }
  BodyModel m;
  std::uint32_t nv, nj, nb, nf;
  try {
    if (j.at("format") != "dilate-body-model") throw FormatError(json_path.string() + ": not a body model");
    nv = j.at("num_vertices");
    nj = j.at("num_joints");
    nb = j.at("num_shapes");
    nf = j.at("num_faces");
    m.parents = j.at("parents").get<std::vector<int>>();
    m.joint_names = j.at("joint_names").get<std::vector<std::string>>();
    m.joint_limits = j.at("joint_limits").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError(json_path.string() + ": " + e.what());
  }
  const auto blob = io::read_blob(json_path.parent_path() / j.at("blob").get<std::string>());
  const auto& tv = io::section(blob, "template_vertices");
  expect_shape(tv, {nv, 3}, "template_vertices");
  m.template_vertices = unflatten(tv.f32);
  const auto& fc = io::section(blob, "faces");
  expect_shape(fc, {nf, 3}, "faces");
  for (std::uint32_t f = 0; f < nf; ++f) m.faces.push_back({fc.i32[3 * f], fc.i32[3 * f + 1], fc.i32[3 * f + 2]});
  const auto& js = io::section(blob, "joints");
  expect_shape(js, {nj, 3}, "joints");
  m.joints = unflatten(js.f32);
  const auto& w = io::section(blob, "skinning_weights");
  expect_shape(w, {nv, nj}, "skinning_weights");
  m.skinning.resize(nv);
  for (std::uint32_t i = 0; i < nv; ++i) {
    for (std::uint32_t k = 0; k < nj; ++k) {
      const float x = w.f32[i * nj + k];
      if (x != 0.0f) m.skinning[i].push_back({static_cast<int>(k), x});
    }
  }
  const auto& sb = io::section(blob, "shape_basis");
  expect_shape(sb, {nb, nv, 3}, "shape_basis");
  const auto& sj = io::section(blob, "joint_shape_basis");
  expect_shape(sj, {nb, nj, 3}, "joint_shape_basis");
  for (std::uint32_t b = 0; b < nb; ++b) {
    m.shape_basis.push_back(unflatten({sb.f32.begin() + 3 * nv * b, sb.f32.begin() + 3 * nv * (b + 1)}));
    m.joint_shape_basis.push_back(unflatten({sj.f32.begin() + 3 * nj * b, sj.f32.begin() + 3 * nj * (b + 1)}));
  }
  const auto& pl = io::section(blob, "part_labels");
  expect_shape(pl, {nv}, "part_labels");
  m.part_labels.assign(pl.i32.begin(), pl.i32.end());
  m.validate();
  return m;
}

void save_params(const std::filesystem::path& json_path, const BodyParams& params) {
  json j;
  json pose = json::array();
  for (const Vec3& w : params.pose) pose.push_back({w.x(), w.y(), w.z()});
  j["pose"] = pose;
  j["shape"] = std::vector<double>(params.shape.data(), params.shape.data() + params.shape.size());
  j["translation"] = {params.translation.x(), params.translation.y(), params.translation.z()};
  if (params.has_displacements()) {
    auto blob_path = json_path;
    blob_path.replace_extension(".disp.bin");
    io::Blob blob;
    blob["displacements"] =
        io::f32_section({static_cast<std::uint32_t>(params.displacements.size()), 3}, flatten(params.displacements));
    io::write_blob(blob_path, blob);
    j["displacements"] = blob_path.filename().string();
  }
  io::write_text(json_path, j.dump(2) + "\n");
}

BodyParams load_params(const std::filesystem::path& json_path) {
  BodyParams p;
  try {
    const json j = json::parse(io::read_text(json_path));
    for (const auto& w : j.at("pose")) p.pose.emplace_back(w.at(0).get<double>(), w.at(1).get<double>(), w.at(2).get<double>());
    const auto shape = j.at("shape").get<std::vector<double>>();
    p.shape = Eigen::Map<const Eigen::VectorXd>(shape.data(), static_cast<Eigen::Index>(shape.size()));
    const auto& t = j.at("translation");
    p.translation = Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
    if (j.contains("displacements")) {
      const auto blob = io::read_blob(json_path.parent_path() / j.at("displacements").get<std::string>());
      p.displacements = unflatten(io::section(blob, "displacements").f32);
    }
  } catch (const json::exception& e) {
    throw FormatError(json_path.string() + ": " + e.what());
  }
  return p;
}

}  // namespace dilate
