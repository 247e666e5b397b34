#include "dilate/registration.hpp"

#include "dilate/io.hpp"

#include <Eigen/SVD>
#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace dilate {

void FitWeights::validate() const {
  if (!(w_data >= 0) || !(w_part >= 0) || !(w_lap >= 0) || !(w_bidir >= 0)) {
    throw InvalidParams("fit weights must be nonnegative");
  }
}

// --- energy -----------------------------------------------------------------------------

namespace {

Vec3 anchor_point(const std::vector<Vec3>& posed, const Face& f, const Vec3& b) {
  return b[0] * posed[f[0]] + b[1] * posed[f[1]] + b[2] * posed[f[2]];
}

// mean of neighbours minus the vertex
Vec3 laplacian_at(const std::vector<Vec3>& v, const std::vector<int>& nb, int i) {
  Vec3 m = Vec3::Zero();
  for (int k : nb) m += v[k];
  return m / static_cast<double>(nb.size()) - v[i];
}

// Adds the gradient of c . l_i to g, where l_i is the uniform Laplacian at i.
void scatter_laplacian(std::vector<Vec3>& g, const std::vector<int>& nb, int i, const Vec3& c) {
  g[i] -= c;
  const Vec3 share = c / static_cast<double>(nb.size());
  for (int k : nb) g[k] += share;
}

}  // namespace

FitEnergy::FitEnergy(const BodyModel& model, const TriMesh& target, std::vector<int> labels, const FitWeights& weights,
                     FitStage stage, double smoothing)
    : model_(model), target_(target), labels_(std::move(labels)), weights_(weights), stage_(stage),
      smoothing_(smoothing) {
  weights_.validate();
  if (!(smoothing_ >= 0) || !std::isfinite(smoothing_)) throw InvalidParams("smoothing radius must be finite and >= 0");
  if (target_.empty()) throw DegenerateInput("registration target has no faces");
  if (!labels_.empty() && labels_.size() != target_.num_vertices()) {
    throw LengthMismatch("target labels do not match the target vertex count");
  }
  for (int l : labels_) {
    if (l < 0 || l >= kNumParts) throw InvalidParams("target label out of range: " + std::to_string(l));
  }
  target_bvh_ = MeshBvh(target_);
  const TriMesh tmpl = model_.template_mesh();
  neighbors_ = vertex_neighbors(tmpl);
  rest_laplacian_ = uniform_laplacian(tmpl);
  if (uses_parts()) {
    for (int i = 0; i < kNumParts; ++i) part_faces_[i] = model_.part_faces(i);
    for (int l : labels_) {
      if (part_faces_[l].empty()) throw EmptyPart("part " + std::string(part_name(l)) + " has no model faces");
    }
  }
}

FitEnergy::Frozen FitEnergy::freeze(const std::vector<Vec3>& posed) const {
  Frozen f;
  const auto& tv = target_.vertices();
  const std::ptrdiff_t nt = static_cast<std::ptrdiff_t>(tv.size());
  if (weights_.w_data > 0) {
    const MeshBvh model_bvh(posed, model_.faces);
    f.to_model.resize(tv.size());
#pragma omp parallel for schedule(dynamic, 256)
    for (std::ptrdiff_t i = 0; i < nt; ++i) {
      const SurfacePoint sp = model_bvh.closest(tv[i]);
      f.to_model[i] = {sp.face, sp.barycentric};
    }
    f.to_target.resize(posed.size());
#pragma omp parallel for schedule(dynamic, 256)
    for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(posed.size()); ++j) {
      f.to_target[j] = target_bvh_.closest(posed[j]).point;
    }
  }
  if (uses_parts()) {
    f.to_part.resize(tv.size());
    std::array<std::vector<int>, kNumParts> members;
    for (std::size_t i = 0; i < tv.size(); ++i) members[labels_[i]].push_back(static_cast<int>(i));
    for (int part = 0; part < kNumParts; ++part) {
      if (members[part].empty()) continue;
      const auto& ids = part_faces_[part];
      std::vector<Face> faces;
      faces.reserve(ids.size());
      for (int id : ids) faces.push_back(model_.faces[id]);
      const MeshBvh bvh(posed, faces);
      const auto& mem = members[part];
#pragma omp parallel for schedule(dynamic, 256)
      for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(mem.size()); ++k) {
        const SurfacePoint sp = bvh.closest(tv[mem[k]]);
        f.to_part[mem[k]] = {ids[sp.face], sp.barycentric};
      }
    }
  }
  return f;
}

void FitEnergy::refreeze(const BodyParams& params) { frozen_ = freeze(pose_state(model_, params).vertices); }

double FitEnergy::evaluate(const BodyParams& params, EnergyTerms* terms, ParamGradient* grad) const {
  return evaluate_frozen(frozen_, params, smoothing_, terms, grad);
}

EnergyTerms FitEnergy::exact(const BodyParams& params) const {
  EnergyTerms t;
  evaluate_frozen(freeze(pose_state(model_, params).vertices), params, 0.0, &t, nullptr);
  return t;
}

double FitEnergy::evaluate_frozen(const Frozen& f, const BodyParams& params, double smoothing, EnergyTerms* terms,
                                  ParamGradient* grad) const {
  const double smooth2 = smoothing * smoothing;
  const PosedState s = pose_state(model_, params);
  const auto& posed = s.vertices;
  const auto& tv = target_.vertices();
  const int nv = model_.num_vertices();
  const double nt = static_cast<double>(tv.size());
  std::vector<Vec3> g(grad ? nv : 0, Vec3::Zero());
  EnergyTerms e;

  auto surface_term = [&](const std::vector<Anchor>& anchors, double coeff) {
    double sum = 0;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      const Face& face = model_.faces[anchors[i].face];
      const Vec3 diff = anchor_point(posed, face, anchors[i].bary) - tv[i];
      const double d = std::sqrt(diff.squaredNorm() + smooth2);
      sum += d - smoothing;
      if (grad && d > 1e-12) {
        const Vec3 u = coeff * diff / d;
        for (int k = 0; k < 3; ++k) g[face[k]] += anchors[i].bary[k] * u;
      }
    }
    return sum / nt;
  };

  if (weights_.w_data > 0) {
    e.data = surface_term(f.to_model, weights_.w_data / nt);
    double back = 0;
    const double coeff = weights_.w_data * weights_.w_bidir / nv;
    for (int j = 0; j < nv; ++j) {
      const Vec3 diff = posed[j] - f.to_target[j];
      const double d = std::sqrt(diff.squaredNorm() + smooth2);
      back += d - smoothing;
      if (grad && d > 1e-12) g[j] += coeff * diff / d;
    }
    e.data += weights_.w_bidir * back / nv;
  }
  if (uses_parts()) e.part = surface_term(f.to_part, weights_.w_part / nt);

  Mat3 g_root = Mat3::Zero();
  std::vector<Vec3> g_disp;
  if (weights_.w_lap > 0) {
    double sum = 0;
    const double coeff = 2.0 * weights_.w_lap;
    if (stage_ == FitStage::Body) {
      const Mat3& r0 = s.world_rot[0];
      for (int i = 0; i < nv; ++i) {
        const Vec3 l = laplacian_at(posed, neighbors_[i], i);
        const Vec3 u = r0.transpose() * l - rest_laplacian_[i];
        sum += u.squaredNorm();
        if (grad) {
          scatter_laplacian(g, neighbors_[i], i, coeff * (r0 * u));
          g_root += coeff * l * u.transpose();
        }
      }
    } else if (params.has_displacements()) {
      const auto& d = params.displacements;
      std::vector<Vec3> ld(nv);
      for (int i = 0; i < nv; ++i) {
        ld[i] = laplacian_at(d, neighbors_[i], i);
        sum += ld[i].squaredNorm();
      }
      if (grad) {
        g_disp.assign(nv, Vec3::Zero());
        for (int i = 0; i < nv; ++i) scatter_laplacian(g_disp, neighbors_[i], i, coeff * ld[i]);
      }
    }
    e.lap = sum;
  }

  if (grad) {
    const bool with_disp = stage_ == FitStage::Displacement && params.has_displacements();
    *grad = backpropagate(model_, params, s, g, with_disp);
    if (stage_ == FitStage::Body && weights_.w_lap > 0) {
      grad->local_rot[0] += g_root;
      const auto dr = rodrigues_derivatives(params.pose[0]);
      for (int c = 0; c < 3; ++c) grad->pose[0][c] += (g_root.array() * dr[c].array()).sum();
    }
    if (with_disp && !g_disp.empty()) {
      for (int i = 0; i < nv; ++i) grad->displacements[i] += g_disp[i];
    }
  }
  if (terms) *terms = e;
  return e.total(weights_);
}

double energy_data(const BodyModel& model, const BodyParams& params, const TriMesh& target, double w_bidir,
                   ParamGradient* grad) {
  FitWeights w{1.0, 0.0, 0.0, w_bidir};
  FitEnergy e(model, target, {}, w, FitStage::Body);
  e.refreeze(params);
  return e.evaluate(params, nullptr, grad);
}

double energy_part(const BodyModel& model, const BodyParams& params, const TriMesh& target,
                   const std::vector<int>& labels, ParamGradient* grad) {
  if (labels.size() != target.num_vertices()) throw LengthMismatch("target labels do not match the target vertex count");
  FitWeights w{0.0, 1.0, 0.0, 0.0};
  FitEnergy e(model, target, labels, w, FitStage::Body);
  e.refreeze(params);
  return e.evaluate(params, nullptr, grad);
}

// --- optimizer --------------------------------------------------------------------------

namespace {

// Flat optimizer vector. The root rotation and the root joint position are expressed as
// increments in the frame of the phase's starting pose, which keeps the optimizer
// equivariant under rigid motions of the target: root increment (3), other joints
// (3(J-1)), shape (B), root offset (3), displacements (3V, optional).
struct Layout {
  int nj = 0, nb = 0, nv = 0;
  bool disp = false;

  Eigen::Index pose() const { return 0; }
  Eigen::Index shape() const { return 3 * nj; }
  Eigen::Index trans() const { return 3 * nj + nb; }
  Eigen::Index displacement() const { return 3 * nj + nb + 3; }
  Eigen::Index size() const { return displacement() + (disp ? 3 * nv : 0); }
};

Vec3 root_joint(const BodyModel& model, const Eigen::VectorXd& shape) {
  Vec3 c = model.joints[0];
  for (int b = 0; b < model.num_shapes(); ++b) c += shape[b] * model.joint_shape_basis[b][0];
  return c;
}

class Chart {
 public:
  Chart(const BodyModel& model, const BodyParams& start)
      : model_(model),
        l_{model.num_joints(), model.num_shapes(), model.num_vertices(), start.has_displacements()},
        root_(rodrigues(start.pose[0])),
        center_(root_joint(model, start.shape) + start.translation) {}

  const Layout& layout() const { return l_; }

  Eigen::VectorXd pack(const BodyParams& p) const {
    Eigen::VectorXd x(l_.size());
    x.segment<3>(0) = log_rotation(root_.transpose() * rodrigues(p.pose[0]));
    for (int j = 1; j < l_.nj; ++j) x.segment<3>(3 * j) = p.pose[j];
    x.segment(l_.shape(), l_.nb) = p.shape;
    x.segment<3>(l_.trans()) = root_.transpose() * (root_joint(model_, p.shape) + p.translation - center_);
    if (l_.disp) {
      for (int i = 0; i < l_.nv; ++i) x.segment<3>(l_.displacement() + 3 * i) = p.displacements[i];
    }
    return x;
  }

  BodyParams unpack(const Eigen::VectorXd& x) const {
    BodyParams p;
    p.pose.resize(l_.nj);
    p.pose[0] = canonicalize_axis_angle(log_rotation(root_ * rodrigues(x.segment<3>(0))));
    for (int j = 1; j < l_.nj; ++j) p.pose[j] = x.segment<3>(3 * j);
    p.shape = x.segment(l_.shape(), l_.nb);
    p.translation = center_ + root_ * x.segment<3>(l_.trans()) - root_joint(model_, p.shape);
    if (l_.disp) {
      p.displacements.resize(l_.nv);
      for (int i = 0; i < l_.nv; ++i) p.displacements[i] = x.segment<3>(l_.displacement() + 3 * i);
    }
    return p;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& x, const ParamGradient& g) const {
    Eigen::VectorXd out(l_.size());
    const auto d = rodrigues_derivatives(x.segment<3>(0));
    for (int k = 0; k < 3; ++k) out[k] = (g.local_rot[0].array() * (root_ * d[k]).array()).sum();
    for (int j = 1; j < l_.nj; ++j) out.segment<3>(3 * j) = g.pose[j];
    out.segment(l_.shape(), l_.nb) = g.shape;
    // translation = center + R tau - root_joint(shape)
    for (int b = 0; b < l_.nb; ++b) out[l_.shape() + b] -= model_.joint_shape_basis[b][0].dot(g.translation);
    out.segment<3>(l_.trans()) = root_.transpose() * g.translation;
    if (l_.disp) {
      for (int i = 0; i < l_.nv; ++i) out.segment<3>(l_.displacement() + 3 * i) = g.displacements[i];
    }
    return out;
  }

  // Joint limits on the non-root joints.
  void project(Eigen::VectorXd& x) const {
    for (int j = 1; j < l_.nj; ++j) {
      auto r = x.segment<3>(3 * j);
      const double a = r.norm(), lim = model_.joint_limits[j];
      if (a > lim) r *= lim / a;
    }
  }

 private:
  const BodyModel& model_;
  Layout l_;
  Mat3 root_;
  Vec3 center_;
};

void project_limits(const BodyModel& model, BodyParams& p) {
  p.pose[0] = canonicalize_axis_angle(p.pose[0]);
  for (int j = 1; j < model.num_joints(); ++j) {
    const double a = p.pose[j].norm(), lim = model.joint_limits[j];
    if (a > lim) p.pose[j] *= lim / a;
  }
}

struct PhaseRates {
  double root = 0, pose = 0, shape = 0, trans = 0, disp = 0;
  int max_depth = std::numeric_limits<int>::max();  // joints deeper in the tree stay fixed
};

std::vector<int> joint_depths(const BodyModel& model) {
  std::vector<int> d(model.num_joints(), 0);
  for (int j = 1; j < model.num_joints(); ++j) d[j] = d[model.parents[j]] + 1;
  return d;
}

Eigen::VectorXd rate_vector(const BodyModel& model, const Layout& l, const PhaseRates& r) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(l.size());
  const auto depth = joint_depths(model);
  v.segment<3>(l.pose()).setConstant(r.root);
  for (int j = 1; j < l.nj; ++j) {
    if (depth[j] <= r.max_depth) v.segment<3>(l.pose() + 3 * j).setConstant(r.pose);
  }
  v.segment(l.shape(), l.nb).setConstant(r.shape);
  v.segment<3>(l.trans()).setConstant(r.trans);
  if (l.disp) v.segment(l.displacement(), 3 * l.nv).setConstant(r.disp);
  return v;
}

void check_finite(double e, const std::vector<TraceRow>& trace) {
  if (std::isfinite(e)) return;
  std::ostringstream msg;
  msg << "fitting energy became non-finite after " << trace.size() << " iterations";
  if (!trace.empty()) msg << " (last total " << trace.back().total << ")";
  throw FitDiverged(msg.str());
}

struct AdamState {
  Eigen::ArrayXd m, v, steps;  // steps: per-coordinate update counts for bias correction
};

// Adam with backtracking: a step is kept only if it does not raise the frozen energy, so
// the energy never increases. Correspondences are refrozen every `refreeze_every` steps
// and after a rejected step; the phase ends when the exact energy stalls between
// refreezes or the step budget runs out. The learning rate follows a cosine decay.
// Rigid frame of the root joint. Fits run in the frame of their initial body so that
// rigidly moved problems are numerically the same problem.
struct RootFrame {
  Mat3 r = Mat3::Identity();
  Vec3 c = Vec3::Zero();
};

RootFrame root_frame(const BodyModel& model, const BodyParams& p) {
  return {rodrigues(p.pose[0]), root_joint(model, p.shape) + p.translation};
}

TriMesh into_frame(const TriMesh& mesh, const RootFrame& f) {
  std::vector<Vec3> v = mesh.vertices();
  for (Vec3& x : v) x = f.r.transpose() * (x - f.c);
  return mesh.with_vertices(std::move(v));
}

BodyParams into_frame(const BodyModel& model, BodyParams p, const RootFrame& f) {
  const Vec3 j = root_joint(model, p.shape);
  p.pose[0] = log_rotation(f.r.transpose() * rodrigues(p.pose[0]));
  p.translation = f.r.transpose() * (j + p.translation - f.c) - j;
  return p;
}

BodyParams out_of_frame(const BodyModel& model, BodyParams p, const RootFrame& f) {
  const Vec3 j = root_joint(model, p.shape);
  p.pose[0] = canonicalize_axis_angle(log_rotation(f.r * rodrigues(p.pose[0])));
  p.translation = f.r * (j + p.translation) + f.c - j;
  return p;
}

int run_phase(FitEnergy& energy, const BodyModel& model, BodyParams& params, const PhaseRates& phase,
              const FitOptions& opt, AdamState& adam, std::vector<TraceRow>& trace) {
  const Chart chart(model, params);
  const Layout& l = chart.layout();
  const Eigen::VectorXd rates = rate_vector(model, l, phase);
  Eigen::VectorXd x = chart.pack(params);
  if (adam.m.size() != l.size()) adam.m = adam.v = adam.steps = Eigen::ArrayXd::Zero(l.size());
  auto& m = adam.m;
  auto& v = adam.v;
  const Eigen::ArrayXd active = (rates.array() > 0).cast<double>();
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-12;
  constexpr int kHalvings = 16;
  const int stage = static_cast<int>(energy.stage());

  energy.refreeze(params);
  EnergyTerms terms;
  ParamGradient grad;
  double e = energy.evaluate(params, &terms, &grad);
  check_finite(e, trace);
  double anchor = e, scale = 1.0;
  int since_freeze = 0, failures = 0, it = 0;
  while (it < opt.max_iterations) {
    const Eigen::ArrayXd gv = chart.gradient(x, grad).array() * active;
    ++it;
    adam.steps += active;
    m = active * (b1 * m + (1 - b1) * gv) + (1 - active) * m;
    v = active * (b2 * v + (1 - b2) * gv * gv) + (1 - active) * v;
    const Eigen::ArrayXd c1 = 1 - Eigen::pow(b1, adam.steps.max(1.0));
    const Eigen::ArrayXd c2 = 1 - Eigen::pow(b2, adam.steps.max(1.0));
    const double decay = 0.02 + 0.98 * 0.5 * (1 + std::cos(std::numbers::pi * (it - 1) / opt.max_iterations));
    const Eigen::ArrayXd precond = decay * rates.array() / ((v / c2).sqrt() + eps);
    Eigen::VectorXd dir = (precond * m / c1).matrix();

    bool accepted = false;
    for (int attempt = 0; attempt < 2 * kHalvings && !accepted; ++attempt) {
      if (attempt == kHalvings) {
        // momentum no longer points downhill: restart it from the current gradient
        m = active * gv * c1 + (1 - active) * m;
        dir = (precond * gv).matrix();
        scale = 1.0;
      }
      Eigen::VectorXd xt = x - scale * dir;
      chart.project(xt);
      BodyParams trial = chart.unpack(xt);
      EnergyTerms t_terms;
      ParamGradient t_grad;
      const double et = energy.evaluate(trial, &t_terms, &t_grad);
      if (std::isfinite(et) && et <= e) {
        params = std::move(trial);
        x = std::move(xt);
        e = et;
        terms = t_terms;
        grad = std::move(t_grad);
        accepted = true;
        scale = std::min(1.0, 2.0 * scale);
      } else {
        scale *= 0.5;
      }
    }
    bool done = false;
    if (!accepted || ++since_freeze >= opt.refreeze_every) {
      energy.refreeze(params);
      e = energy.evaluate(params, &terms, &grad);
      check_finite(e, trace);
      since_freeze = 0;
      scale = 1.0;
      const double rel = (anchor - e) / std::max(anchor, 1e-300);
      anchor = e;
      failures = accepted ? 0 : failures + 1;
      done = (accepted && rel < opt.rel_tolerance) || failures >= 3;
    }
    trace.push_back({static_cast<int>(trace.size()) + 1, stage, terms, e});
    if (done) break;
  }
  return it;
}

// Rigid motion taking the per-part vertex centroids of the posed model onto those of the
// labelled target (weighted Kabsch), applied about the root joint. Needs three parts.
void align_part_centroids(const BodyModel& model, BodyParams& params, const TriMesh& target,
                          const std::vector<int>& labels) {
  std::array<Vec3, kNumParts> tc, mc;
  std::array<double, kNumParts> tn{}, mn{};
  tc.fill(Vec3::Zero());
  mc.fill(Vec3::Zero());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    tc[labels[i]] += target.vertices()[i];
    tn[labels[i]] += 1;
  }
  const TriMesh posed = forward(model, params);
  for (int i = 0; i < model.num_vertices(); ++i) {
    mc[model.part_labels[i]] += posed.vertices()[i];
    mn[model.part_labels[i]] += 1;
  }
  std::vector<int> used;
  double wsum = 0;
  Vec3 tmean = Vec3::Zero(), mmean = Vec3::Zero();
  for (int p = 0; p < kNumParts; ++p) {
    if (tn[p] == 0 || mn[p] == 0) continue;
    tc[p] /= tn[p];
    mc[p] /= mn[p];
    used.push_back(p);
    wsum += tn[p];
    tmean += tn[p] * tc[p];
    mmean += tn[p] * mc[p];
  }
  if (used.size() < 3) return;
  tmean /= wsum;
  mmean /= wsum;
  Mat3 cov = Mat3::Zero();
  for (int p : used) cov += tn[p] * (tc[p] - tmean) * (mc[p] - mmean).transpose();
  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2, 2) = -1;
  const Mat3 r = svd.matrixU() * d * svd.matrixV().transpose();
  const Vec3 t = tmean - r * mmean;
  const Vec3 center = root_joint(model, params.shape) + params.translation;
  params.pose[0] = canonicalize_axis_angle(log_rotation(r * rodrigues(params.pose[0])));
  params.translation = r * center + t - root_joint(model, params.shape);
}

}  // namespace

FitResult fit_body(const TriMesh& target, const std::vector<int>& labels, const BodyModel& model,
                   const FitWeights& weights, const BodyParams& init, const FitOptions& opt) {
  init.validate(model);
  FitResult res;
  res.params = init;
  res.params.displacements.clear();
  project_limits(model, res.params);
  const RootFrame frame = root_frame(model, res.params);
  const TriMesh inner = into_frame(target, frame);
  res.params = into_frame(model, res.params, frame);
  FitEnergy energy(model, inner, labels, weights, FitStage::Body, opt.smoothing);
  res.initial_energy = energy.exact(res.params).total(weights);
  check_finite(res.initial_energy, res.trace);

  // Rigid, then pose released from the trunk outwards, then shape.
  std::vector<PhaseRates> phases;
  phases.push_back({opt.lr_pose, 0, 0, opt.lr_translation, 0});
  for (int depth : {2, 3}) phases.push_back({opt.lr_pose, opt.lr_pose, 0, opt.lr_translation, 0, depth});
  phases.push_back({opt.lr_pose, opt.lr_pose, 0, opt.lr_translation, 0});
  phases.push_back({opt.lr_pose, opt.lr_pose, opt.lr_shape, opt.lr_translation, 0});
  if (opt.rigid_only) phases.resize(1);
  AdamState adam;
  if (opt.part_alignment && energy.uses_parts()) {
    // rigid alignment on the parts alone: nearest-surface data terms cannot tell a body
    // from its 180-degree flip, the part labels can
    align_part_centroids(model, res.params, inner, labels);
    FitWeights wp = weights;
    wp.w_data = 0;
    FitEnergy parts_only(model, inner, labels, wp, FitStage::Body, opt.smoothing);
    AdamState rigid;
    res.iterations.push_back(run_phase(parts_only, model, res.params, phases.front(), opt, rigid, res.trace));
  }
  for (const auto& ph : phases) res.iterations.push_back(run_phase(energy, model, res.params, ph, opt, adam, res.trace));
  res.terms = energy.exact(res.params);
  res.energy = res.terms.total(weights);
  res.params = out_of_frame(model, res.params, frame);
  spdlog::debug("fit_body: energy {:.6g} -> {:.6g} in {} iterations", res.initial_energy, res.energy, res.trace.size());
  return res;
}

FitResult fit_displacements(const TriMesh& target, const BodyModel& model, const FitResult& start,
                            const FitWeights& weights, const FitOptions& opt) {
  FitWeights w = weights;
  w.w_part = 0;
  FitResult res;
  res.params = start.params;
  res.params.validate(model);
  const RootFrame frame = root_frame(model, res.params);
  res.params = into_frame(model, res.params, frame);
  FitEnergy energy(model, into_frame(target, frame), {}, w, FitStage::Displacement, opt.smoothing);
  if (!res.params.has_displacements()) res.params.displacements.assign(model.num_vertices(), Vec3::Zero());
  res.initial_energy = energy.exact(res.params).total(w);
  check_finite(res.initial_energy, res.trace);

  const double body = opt.freeze_body ? 0.0 : opt.body_rate_in_stage2;
  const PhaseRates rates{body * opt.lr_pose, body * opt.lr_pose, body * opt.lr_shape, body * opt.lr_translation,
                         opt.lr_displacement};
  AdamState adam;
  res.iterations.push_back(run_phase(energy, model, res.params, rates, opt, adam, res.trace));
  res.terms = energy.exact(res.params);
  res.energy = res.terms.total(w);
  res.params = out_of_frame(model, res.params, frame);
  spdlog::debug("fit_displacements: energy {:.6g} -> {:.6g}", res.initial_energy, res.energy);
  return res;
}

// --- pipelines --------------------------------------------------------------------------

BodyParams yawed_init(const BodyModel& model, const TriMesh& target, double yaw) {
  BodyParams p = BodyParams::zero(model);
  p.pose[0] = Vec3(0, 0, yaw);
  const TriMesh m = forward(model, p);
  Vec3 a = Vec3::Zero(), b = Vec3::Zero();
  for (const Vec3& v : m.vertices()) a += v;
  for (const Vec3& v : target.vertices()) b += v;
  p.translation = b / static_cast<double>(target.num_vertices()) - a / static_cast<double>(m.num_vertices());
  return p;
}

namespace {

Registration fit_reconstruction(Reconstruction rec, const BodyModel& model, const RegisterOptions& opt,
                                const TriMesh* displacement_target) {
  Registration r;
  r.inner = std::move(rec.inner);
  r.outer = std::move(rec.outer);
  const TriMesh& body_target = opt.skip_inner ? r.outer : r.inner;
  const std::vector<int> labels = opt.use_parts ? body_target.vertex_labels() : std::vector<int>{};
  FitWeights w = opt.weights;
  if (!opt.use_parts) w.w_part = 0;
  const BodyParams init = opt.init ? *opt.init : yawed_init(model, body_target, 0.0);
  r.body = fit_body(body_target, labels, model, w, init, opt.fit);
  r.full = fit_displacements(displacement_target ? *displacement_target : r.outer, model, r.body, w, opt.fit);
  r.fitted = forward(model, r.full.params);
  return r;
}

}  // namespace

Registration register_reconstruction(Reconstruction rec, const BodyModel& model, const RegisterOptions& opt) {
  return fit_reconstruction(std::move(rec), model, opt, nullptr);
}

Registration register_prediction(const RegionPredictor& predictor, const NormalizationTransform& transform,
                                 const BodyModel& model, const RegisterOptions& opt) {
  return fit_reconstruction(reconstruct(predictor, transform, opt.resolution), model, opt, nullptr);
}

Registration register_cloud(const PointCloud& cloud, const DecoderStack& stack, const BodyModel& model,
                            const RegisterOptions& opt) {
  const NetworkPredictor pred(stack, cloud);
  return register_prediction(pred, pred.transform(), model, opt);
}

Registration register_scan(const TriMesh& scan, const DecoderStack& stack, const BodyModel& model,
                           const RegisterOptions& opt, std::size_t scan_samples, std::uint64_t seed) {
  const PointCloud cloud = sample_surface(scan, scan_samples, seed);
  const NetworkPredictor pred(stack, cloud);
  Reconstruction rec = reconstruct(pred, pred.transform(), opt.resolution);
  std::vector<std::array<float, 3>> probs;
  std::vector<int> scan_labels;
  pred.predict(scan.vertices(), probs, &scan_labels);
  const TriMesh labelled = scan.with_labels(std::move(scan_labels));
  RegisterOptions o = opt;
  o.skip_inner = false;
  Registration r = fit_reconstruction(std::move(rec), model, o, &labelled);
  r.outer = labelled;
  return r;
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace) {
  std::ostringstream out;
  out.precision(17);
  out << "iteration,stage,E_data,E_part,E_lap,total\n";
  for (const auto& r : trace) {
    out << r.iteration << ',' << r.stage << ',' << r.terms.data << ',' << r.terms.part << ',' << r.terms.lap << ','
        << r.total << '\n';
  }
  io::write_text(path, out.str());
}

}  // namespace dilate
