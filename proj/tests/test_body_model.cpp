#include "dilate/body_model.hpp"
#include "dilate/spatial.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <filesystem>
#include <set>

namespace dilate {
namespace {

const BodyModel& model() {
  static const BodyModel m = build_default_model();
  return m;
}

// Per-vertex 4x4 chain products, no shared intermediate state.
std::vector<Vec3> reference_forward(const BodyModel& m, const BodyParams& p) {
  const int nj = m.num_joints();
  std::vector<Vec3> joints = m.joints;
  for (int b = 0; b < m.num_shapes(); ++b) {
    for (int j = 0; j < nj; ++j) joints[j] += p.shape[b] * m.joint_shape_basis[b][j];
  }
  auto local = [&](int j) {
    Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
    t.topLeftCorner<3, 3>() = rodrigues(p.pose[j]);
    t.topRightCorner<3, 1>() = m.parents[j] < 0 ? joints[j] : Vec3(joints[j] - joints[m.parents[j]]);
    return t;
  };
  std::vector<Vec3> out(m.num_vertices());
  for (int i = 0; i < m.num_vertices(); ++i) {
    Vec3 rest = m.template_vertices[i];
    for (int b = 0; b < m.num_shapes(); ++b) rest += p.shape[b] * m.shape_basis[b][i];
    if (p.has_displacements()) rest += p.displacements[i];
    Eigen::Vector4d acc = Eigen::Vector4d::Zero();
    for (const auto& inf : m.skinning[i]) {
      Eigen::Matrix4d g = Eigen::Matrix4d::Identity();
      std::vector<int> chain;
      for (int j = inf.joint; j >= 0; j = m.parents[j]) chain.push_back(j);
      for (auto it = chain.rbegin(); it != chain.rend(); ++it) g = g * local(*it);
      Eigen::Matrix4d unbind = Eigen::Matrix4d::Identity();
      unbind.topRightCorner<3, 1>() = -joints[inf.joint];
      acc += inf.weight * g * unbind * rest.homogeneous();
    }
    out[i] = acc.head<3>() + p.translation;
  }
  return out;
}

TEST(BodyModel, DefaultModelSelfChecks) {
  const BodyModel& m = model();
  EXPECT_NO_THROW(m.validate());
  EXPECT_GE(m.num_vertices(), 3000);
  EXPECT_LE(m.num_vertices(), 8000);
  EXPECT_EQ(m.num_joints(), kNumJoints);
  EXPECT_EQ(m.num_shapes(), 4);
  const TriMesh t = m.template_mesh();
  EXPECT_TRUE(is_closed(t));
  EXPECT_EQ(self_intersection_count(t), 0u);
  const auto box = t.bounds();
  EXPECT_NEAR(box.max().z() - box.min().z(), 1.7, 0.01);
  std::array<int, kNumParts> counts{};
  for (int l : m.part_labels) ++counts[l];
  for (int c : counts) EXPECT_GE(c, 50);
  for (const auto& row : m.skinning) {
    double s = 0;
    for (const auto& inf : row) {
      EXPECT_GE(inf.weight, 0);
      s += inf.weight;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(BodyModel, PartNames) {
  const std::set<std::string> expected = {"left_forearm",   "right_forearm",  "left_mid_arm",  "right_mid_arm",
                                          "left_upper_arm", "right_upper_arm", "left_upper_leg", "right_upper_leg",
                                          "left_mid_leg",   "right_mid_leg",  "left_foot",     "right_foot",
                                          "torso",          "head"};
  std::set<std::string> names;
  for (int p = 0; p < kNumParts; ++p) names.insert(std::string(part_name(p)));
  EXPECT_EQ(names, expected);
  for (int p = 0; p < kNumParts; ++p) EXPECT_EQ(mirror_part(mirror_part(p)), p);
}

TEST(BodyModel, Deterministic) {
  const BodyModel a = build_default_model(4, 7), b = build_default_model(4, 7);
  EXPECT_EQ(a.template_vertices, b.template_vertices);
  EXPECT_EQ(a.faces, b.faces);
  EXPECT_EQ(a.part_labels, b.part_labels);
  for (int s = 0; s < a.num_shapes(); ++s) EXPECT_EQ(a.shape_basis[s], b.shape_basis[s]);
}

TEST(BodyModel, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "dilate_model_test";
  std::filesystem::create_directories(dir);
  save_model(dir / "body.json", model());
  const BodyModel r = load_model(dir / "body.json");
  EXPECT_EQ(r.faces, model().faces);
  EXPECT_EQ(r.parents, model().parents);
  EXPECT_EQ(r.part_labels, model().part_labels);
  std::mt19937_64 rng(1);
  const BodyParams p = test::random_params(model(), rng, 0.3, true);
  const auto a = forward(model(), p).vertices(), b = forward(r, p).vertices();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LT((a[i] - b[i]).norm(), 1e-6);

  save_params(dir / "p.json", p);
  const BodyParams q = load_params(dir / "p.json");
  EXPECT_EQ(q.pose, p.pose);
  EXPECT_EQ(q.shape, p.shape);
  ASSERT_EQ(q.displacements.size(), p.displacements.size());
  for (std::size_t i = 0; i < p.displacements.size(); ++i) {
    EXPECT_LT((q.displacements[i] - p.displacements[i]).norm(), 1e-8);
  }
  std::filesystem::remove_all(dir);
}

TEST(Rotation, RodriguesLogRoundTrip) {
  std::mt19937_64 rng(2);
  for (int n = 0; n < 200; ++n) {
    Vec3 w = test::random_vec(rng, 1.0);
    w = w.normalized() * std::uniform_real_distribution<double>(0, std::numbers::pi - 1e-3)(rng);
    const Mat3 r = rodrigues(w);
    EXPECT_LT((r * r.transpose() - Mat3::Identity()).norm(), 1e-12);
    EXPECT_LT((log_rotation(r) - w).norm(), 1e-9);
    EXPECT_LE(canonicalize_axis_angle(w * 3.0).norm(), std::numbers::pi + 1e-12);
    EXPECT_LT((rodrigues(canonicalize_axis_angle(w * 3.0)) - rodrigues(w * 3.0)).norm(), 1e-9);
  }
  EXPECT_LT((rodrigues(Vec3::Zero()) - Mat3::Identity()).norm(), 0.0 + 1e-15);
}

TEST(Rotation, DerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (int n = 0; n < 20; ++n) {
    const Vec3 w = test::random_vec(rng, 1.5);
    const auto d = rodrigues_derivatives(w);
    for (int k = 0; k < 3; ++k) {
      Vec3 a = w, b = w;
      a[k] += 1e-6;
      b[k] -= 1e-6;
      const Mat3 fd = (rodrigues(a) - rodrigues(b)) / 2e-6;
      EXPECT_LT((fd - d[k]).norm(), 1e-6 * std::max(1.0, d[k].norm()));
    }
  }
  const auto d0 = rodrigues_derivatives(Vec3::Zero());
  for (int k = 0; k < 3; ++k) EXPECT_LT((d0[k] - skew(Vec3::Unit(k))).norm(), 1e-12);
}

TEST(Forward, ZeroParamsGiveTemplateExactly) {
  const TriMesh t = forward(model(), BodyParams::zero(model()));
  EXPECT_EQ(t.vertices(), model().template_vertices);
  EXPECT_EQ(t.vertex_labels(), model().part_labels);
}

TEST(Forward, TranslationShiftsTemplate) {
  BodyParams p = BodyParams::zero(model());
  p.translation = Vec3(0, 0, 1);
  const TriMesh t = forward(model(), p);
  for (int i = 0; i < model().num_vertices(); ++i) {
    EXPECT_LT((t.vertices()[i] - model().template_vertices[i] - Vec3(0, 0, 1)).norm(), 1e-12);
  }
}

TEST(Forward, MatchesReferenceImplementation) {
  std::mt19937_64 rng(4);
  for (int n = 0; n < 5; ++n) {
    const BodyParams p = test::random_params(model(), rng, 1.0, n % 2 == 1);
    const auto fast = forward(model(), p).vertices();
    const auto ref = reference_forward(model(), p);
    for (std::size_t i = 0; i < fast.size(); ++i) ASSERT_LT((fast[i] - ref[i]).norm(), 1e-6);
  }
}

TEST(Forward, RejectsNonFiniteParams) {
  BodyParams p = BodyParams::zero(model());
  p.pose[3].x() = std::nan("");
  EXPECT_THROW(forward(model(), p), InvalidParams);
  p = BodyParams::zero(model());
  p.shape.resize(2);
  EXPECT_THROW(forward(model(), p), InvalidParams);
}

TEST(Forward, FiniteForLargeRotations) {
  std::mt19937_64 rng(5);
  for (int n = 0; n < 10; ++n) {
    BodyParams p = BodyParams::zero(model());
    for (auto& w : p.pose) w = test::random_vec(rng, 1.0).normalized() * std::numbers::pi;
    for (const auto& v : forward(model(), p).vertices()) ASSERT_TRUE(v.allFinite());
  }
}

Eigen::VectorXd flat(const std::vector<Vec3>& v) {
  Eigen::VectorXd out(3 * v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out.segment<3>(3 * i) = v[i];
  return out;
}

TEST(Jacobian, TranslationIsIdentityAndShapeIsBasis) {
  const BodyParams p = BodyParams::zero(model());
  const Eigen::MatrixXd jt = forward_jacobian(model(), p, ParamBlock::Translation);
  for (int i = 0; i < model().num_vertices(); ++i) EXPECT_LT((jt.block<3, 3>(3 * i, 0) - Mat3::Identity()).norm(), 1e-12);
  const Eigen::MatrixXd js = forward_jacobian(model(), p, ParamBlock::Shape);
  for (int b = 0; b < model().num_shapes(); ++b) {
    EXPECT_LT((js.col(b) - flat(model().shape_basis[b])).cwiseAbs().maxCoeff(), 1e-12);
  }
}

// Every block at 20 random configurations against central differences.
TEST(Jacobian, MatchesFiniteDifferencesProperty) {
  std::mt19937_64 rng(6);
  const double h = 1e-5;
  for (int n = 0; n < 20; ++n) {
    const BodyParams p = test::random_params(model(), rng, 0.8, true);
    for (ParamBlock block : {ParamBlock::Pose, ParamBlock::Shape, ParamBlock::Translation, ParamBlock::Displacement}) {
      const Eigen::SparseMatrix<double> jac = forward_jacobian(model(), p, block);
      std::vector<int> cols;
      if (block == ParamBlock::Displacement) {
        std::uniform_int_distribution<int> u(0, static_cast<int>(jac.cols()) - 1);
        for (int k = 0; k < 12; ++k) cols.push_back(u(rng));
      } else {
        for (int c = 0; c < jac.cols(); ++c) cols.push_back(c);
      }
      for (int c : cols) {
        auto perturbed = [&](double s) {
          BodyParams q = p;
          switch (block) {
            case ParamBlock::Pose: q.pose[c / 3][c % 3] += s; break;
            case ParamBlock::Shape: q.shape[c] += s; break;
            case ParamBlock::Translation: q.translation[c] += s; break;
            case ParamBlock::Displacement: q.displacements[c / 3][c % 3] += s; break;
          }
          return flat(forward(model(), q).vertices());
        };
        const Eigen::VectorXd fd = (perturbed(h) - perturbed(-h)) / (2 * h);
        const Eigen::VectorXd an = Eigen::VectorXd(jac.col(c));
        ASSERT_LE(test::rel_error(an, fd), 1e-4) << "block " << static_cast<int>(block) << " column " << c;
      }
    }
  }
}

TEST(Jacobian, BackpropagateIsTransposeProduct) {
  std::mt19937_64 rng(7);
  const BodyParams p = test::random_params(model(), rng, 0.5, true);
  std::vector<Vec3> g(model().num_vertices());
  for (auto& x : g) x = test::random_vec(rng);
  const ParamGradient pg = backpropagate(model(), p, pose_state(model(), p), g, true);
  const Eigen::VectorXd gv = flat(g);
  const Eigen::VectorXd pose = Eigen::SparseMatrix<double>(forward_jacobian(model(), p, ParamBlock::Pose).transpose()) * gv;
  const Eigen::VectorXd shape = Eigen::SparseMatrix<double>(forward_jacobian(model(), p, ParamBlock::Shape).transpose()) * gv;
  const Eigen::VectorXd disp =
      Eigen::SparseMatrix<double>(forward_jacobian(model(), p, ParamBlock::Displacement).transpose()) * gv;
  EXPECT_LE(test::rel_error(flat(pg.pose), pose), 1e-9);
  EXPECT_LE(test::rel_error(pg.shape, shape), 1e-9);
  EXPECT_LE(test::rel_error(flat(pg.displacements), disp), 1e-9);
  EXPECT_LE(test::rel_error(pg.translation, flat(g).reshaped(3, g.size()).rowwise().sum()), 1e-12);
}

TEST(PartSubmesh, PartitionAndHeadOnTop) {
  const BodyParams rest = BodyParams::zero(model());
  std::set<int> covered;
  double best_z = -1e9;
  int top = -1;
  for (int part = 0; part < kNumParts; ++part) {
    const TriMesh sub = part_submesh(model(), rest, part);
    const auto faces = model().part_faces(part);
    EXPECT_EQ(sub.num_faces(), faces.size());
    covered.insert(faces.begin(), faces.end());
    Vec3 c = Vec3::Zero();
    double area = 0;
    for (std::size_t f = 0; f < sub.num_faces(); ++f) {
      c += sub.face_area(f) * (sub.face_vertex(f, 0) + sub.face_vertex(f, 1) + sub.face_vertex(f, 2)) / 3;
      area += sub.face_area(f);
    }
    if (c.z() / area > best_z) {
      best_z = c.z() / area;
      top = part;
    }
  }
  EXPECT_EQ(top, static_cast<int>(PartId::Head));
  for (std::size_t f = 0; f < model().faces.size(); ++f) {
    const Face& fc = model().faces[f];
    const auto& l = model().part_labels;
    const bool mixed = l[fc[0]] != l[fc[1]] || l[fc[1]] != l[fc[2]];
    EXPECT_NE(covered.count(static_cast<int>(f)) > 0, mixed);
  }
}

TEST(PartSubmesh, PoseDoesNotChangeMembership) {
  std::mt19937_64 rng(8);
  const BodyParams p = test::random_params(model(), rng, 0.6);
  for (int part = 0; part < kNumParts; ++part) {
    EXPECT_EQ(part_submesh(model(), p, part).faces(), part_submesh(model(), BodyParams::zero(model()), part).faces());
  }
}

TEST(Repose, SamePoseAndRigidRoot) {
  std::mt19937_64 rng(9);
  const BodyParams p = test::random_params(model(), rng, 0.4, true);
  const TriMesh fitted = forward(model(), p);
  EXPECT_EQ(repose(model(), p, p.pose).vertices(), fitted.vertices());

  std::vector<Vec3> pose = p.pose;
  pose[0] = log_rotation(rodrigues(Vec3(0.3, -0.2, 1.1)) * rodrigues(p.pose[0]));
  const TriMesh moved = repose(model(), p, pose);
  EXPECT_EQ(moved.faces(), fitted.faces());
  std::uniform_int_distribution<int> u(0, model().num_vertices() - 1);
  for (int n = 0; n < 500; ++n) {
    const int a = u(rng), b = u(rng);
    EXPECT_NEAR((moved.vertices()[a] - moved.vertices()[b]).norm(),
                (fitted.vertices()[a] - fitted.vertices()[b]).norm(), 1e-6);
  }
}

TEST(Repose, LimbRotationMovesOnlyItsSkin) {
  const BodyParams p = BodyParams::zero(model(), true);
  std::vector<Vec3> pose = p.pose;
  pose[kLeftElbow] = Vec3(0, 0.5, 0.2);
  const TriMesh a = forward(model(), p), b = repose(model(), p, pose);
  for (int i = 0; i < model().num_vertices(); ++i) {
    double w = 0;
    for (const auto& inf : model().skinning[i]) {
      if (inf.joint == kLeftElbow || model().is_ancestor(kLeftElbow, inf.joint)) w += inf.weight;
    }
    if ((a.vertices()[i] - b.vertices()[i]).norm() > 1e-6) EXPECT_GE(w, 1e-3) << "vertex " << i;
  }
}

}  // namespace
}  // namespace dilate
