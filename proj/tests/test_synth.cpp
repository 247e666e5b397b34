#include "dilate/synth.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

namespace dilate {
namespace {

const BodyModel& model() {
  static const BodyModel m = build_default_model();
  return m;
}

// Odd number of crossings along a fixed skew ray means inside.
bool ray_parity_inside(const Vec3& p, const TriMesh& mesh) {
  const Vec3 dir = Vec3(0.5773, 0.5801, 0.5747).normalized();
  int hits = 0;
  for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
    const Vec3 a = mesh.face_vertex(f, 0), b = mesh.face_vertex(f, 1), c = mesh.face_vertex(f, 2);
    const Vec3 e1 = b - a, e2 = c - a;
    const Vec3 h = dir.cross(e2);
    const double det = e1.dot(h);
    if (std::abs(det) < 1e-14) continue;
    const Vec3 s = p - a;
    const double u = s.dot(h) / det;
    if (u < 0 || u > 1) continue;
    const Vec3 q = s.cross(e1);
    const double v = dir.dot(q) / det;
    if (v < 0 || u + v > 1) continue;
    if (e2.dot(q) / det > 0) ++hits;
  }
  return hits % 2 == 1;
}

TEST(Subject, DeterministicPerSeed) {
  const Subject a = sample_subject(model(), 11), b = sample_subject(model(), 11), c = sample_subject(model(), 12);
  EXPECT_EQ(a.outer.vertices(), b.outer.vertices());
  EXPECT_EQ(a.params.pose, b.params.pose);
  EXPECT_NE(a.outer.vertices(), c.outer.vertices());
}

TEST(Subject, OffsetsAndNesting) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Subject s = sample_subject(model(), seed);
    EXPECT_EQ(s.inner.faces(), s.outer.faces());
    EXPECT_EQ(s.inner.faces(), model().faces);
    EXPECT_EQ(s.inner.vertex_labels(), model().part_labels);
    for (double o : s.clothing_offsets) {
      EXPECT_GE(o, 0.005);
      EXPECT_LE(o, 0.03);
    }
    EXPECT_TRUE(is_clean_surface(s.inner));
    const MeshBvh body(s.inner);
    for (const Vec3& v : s.outer.vertices()) ASSERT_FALSE(body.inside(v));
  }
}

TEST(Subject, FixedPoseIsUsed) {
  SubjectConfig cfg;
  cfg.pose = pose_suite(model())[3];
  const Subject s = sample_subject(model(), 4, cfg);
  EXPECT_EQ(s.params.pose, *cfg.pose);
}

TEST(Subject, CleanSurfaceDetectsSelfIntersection) {
  EXPECT_TRUE(is_clean_surface(test::icosphere(0.5, 3)));
  BodyParams p = BodyParams::zero(model());
  p.pose[kLeftShoulder] = Vec3(0, 0, -2.6);  // swing the arm through the torso
  EXPECT_FALSE(is_clean_surface(forward(model(), p)));
}

TEST(PoseSuite, TenCleanModestPoses) {
  const auto suite = pose_suite(model());
  ASSERT_EQ(suite.size(), 10u);
  for (const auto& pose : suite) {
    for (const Vec3& w : pose) EXPECT_LE(w.norm(), std::numbers::pi / 4 + 1e-9);
    BodyParams p = BodyParams::zero(model());
    p.pose = pose;
    const TriMesh m = forward(model(), p);
    EXPECT_EQ(self_intersection_count(m), 0u);
    EXPECT_TRUE(is_clean_surface(m));
  }
}

TEST(SamplePose, WithinJointLimits) {
  std::mt19937_64 rng(5);
  for (int n = 0; n < 100; ++n) {
    const auto pose = sample_pose(model(), rng);
    for (int j = 0; j < model().num_joints(); ++j) EXPECT_LE(pose[j].norm(), model().joint_limits[j] + 1e-12);
  }
}

class SampleTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    subject_ = new Subject(sample_subject(model(), 21));
    QueryConfig cfg;
    cfg.n_query = 4000;
    cfg.n_input = 2000;
    sample_ = new TrainingSample(make_sample(*subject_, cfg, 22));
  }
  static void TearDownTestSuite() {
    delete subject_;
    delete sample_;
  }
  static Subject* subject_;
  static TrainingSample* sample_;
};
Subject* SampleTest::subject_ = nullptr;
TrainingSample* SampleTest::sample_ = nullptr;

TEST_F(SampleTest, Sizes) {
  EXPECT_EQ(sample_->input_cloud.size(), 2000u);
  EXPECT_EQ(sample_->query_points.size(), 4000u);
  EXPECT_EQ(sample_->region_labels.size(), 4000u);
  EXPECT_EQ(sample_->part_labels.size(), 4000u);
}

TEST_F(SampleTest, Deterministic) {
  QueryConfig cfg;
  cfg.n_query = 4000;
  cfg.n_input = 2000;
  const TrainingSample again = make_sample(*subject_, cfg, 22);
  EXPECT_EQ(again.query_points, sample_->query_points);
  EXPECT_EQ(again.region_labels, sample_->region_labels);
  EXPECT_EQ(again.input_cloud.points, sample_->input_cloud.points);
}

TEST_F(SampleTest, RegionsAgreeWithRayParity) {
  std::size_t agree = 0;
  const auto& q = sample_->query_points;
  for (std::size_t k = 0; k < q.size(); ++k) {
    const bool in_inner = ray_parity_inside(q[k], subject_->inner);
    const bool in_outer = ray_parity_inside(q[k], subject_->outer);
    const int region = in_inner ? kInsideBody : (in_outer ? kBetweenLayers : kOutsideClothing);
    agree += region == sample_->region_labels[k];
  }
  EXPECT_GE(static_cast<double>(agree) / q.size(), 0.999);
}

TEST_F(SampleTest, RegionsNestAndBetweenLayersIsPopulated) {
  const RegionOracle oracle(subject_->inner, subject_->outer);
  const MeshBvh clothing(subject_->outer);
  std::size_t between = 0;
  const std::size_t n_near = 3600;
  for (std::size_t k = 0; k < sample_->query_points.size(); ++k) {
    const Vec3& p = sample_->query_points[k];
    const int r = sample_->region_labels[k];
    EXPECT_EQ(r, oracle.region(p));
    if (r == kInsideBody) EXPECT_TRUE(clothing.inside(p));
    if (k < n_near) between += r == kBetweenLayers;
  }
  EXPECT_GE(static_cast<double>(between) / n_near, 0.05);
}

TEST_F(SampleTest, PartIsNearestBodyVertexLabel) {
  const auto& verts = subject_->inner.vertices();
  for (std::size_t k = 0; k < 200; ++k) {
    const Vec3& p = sample_->query_points[k * 20];
    std::size_t best = 0;
    for (std::size_t i = 1; i < verts.size(); ++i) {
      if ((verts[i] - p).squaredNorm() < (verts[best] - p).squaredNorm()) best = i;
    }
    EXPECT_EQ(sample_->part_labels[k * 20], model().part_labels[best]);
  }
}

TEST_F(SampleTest, InputOnOuterSurface) {
  for (const Vec3& p : sample_->input_cloud.points) EXPECT_LT(point_to_surface(p, subject_->outer).distance, 1e-9);
}

TEST_F(SampleTest, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "dilate_subject_test";
  std::filesystem::remove_all(dir);
  save_subject(dir, *subject_, *sample_);
  const SubjectFiles f = load_subject(dir, model());
  EXPECT_EQ(f.inner.faces(), subject_->inner.faces());
  EXPECT_EQ(f.inner.vertex_labels(), model().part_labels);
  EXPECT_EQ(f.region_labels, sample_->region_labels);
  EXPECT_EQ(f.part_labels, sample_->part_labels);
  ASSERT_EQ(f.query_points.size(), sample_->query_points.size());
  for (std::size_t k = 0; k < f.query_points.size(); ++k) {
    EXPECT_LT((f.query_points[k] - sample_->query_points[k]).norm(), 1e-8);
  }
  for (std::size_t i = 0; i < f.outer.num_vertices(); ++i) {
    EXPECT_LT((f.outer.vertices()[i] - subject_->outer.vertices()[i]).norm(), 1e-8);
  }
  std::filesystem::remove_all(dir);
}

TEST(SingleView, SphereFromAboveSeesUpperHalf) {
  const Vec3 c(0.1, -0.2, 0.3);
  const TriMesh sphere = test::icosphere(0.4, 4, c);
  const SingleViewResult r = single_view_cloud(sphere, Vec3(0, 0, 1), 3000, 9);
  EXPECT_EQ(r.cloud.size(), 3000u);
  EXPECT_FALSE(r.short_of_target);
  for (const Vec3& p : r.cloud.points) EXPECT_GE(p.z(), c.z() - 0.01);
  const SingleViewResult again = single_view_cloud(sphere, Vec3(0, 0, 1), 3000, 9);
  EXPECT_EQ(again.cloud.points, r.cloud.points);
}

TEST(SingleView, ZeroDirectionThrows) {
  EXPECT_THROW(single_view_cloud(test::icosphere(0.4, 2), Vec3::Zero(), 10, 1), DegenerateInput);
}

TEST(SingleView, SeesFrontOfBody) {
  const Subject s = sample_subject(model(), 3);
  const SingleViewResult r = single_view_cloud(s.outer, Vec3(0, 1, 0), 2000, 4);
  // the model faces +y; a front view must not reach the back of the torso
  const double mid_y = s.outer.centroid().y();
  std::size_t front = 0;
  for (const Vec3& p : r.cloud.points) front += p.y() > mid_y - 0.02;
  EXPECT_GE(static_cast<double>(front) / r.cloud.size(), 0.9);
}

TEST(Dataset, EveryPartAppearsAcrossABatch) {
  DatasetConfig cfg;
  cfg.count = 50;
  cfg.seed = 77;
  cfg.query.n_query = 1000;
  cfg.query.n_input = 200;
  std::set<int> parts;
  for (int i = 0; i < cfg.count; ++i) {
    const DatasetEntry e = dataset_entry(model(), cfg, i);
    parts.insert(e.sample.part_labels.begin(), e.sample.part_labels.end());
  }
  EXPECT_EQ(parts.size(), static_cast<std::size_t>(kNumParts));
}

TEST(Dataset, GenerateWritesSubjectsDeterministically) {
  const auto root = std::filesystem::temp_directory_path() / "dilate_dataset_test";
  std::filesystem::remove_all(root);
  DatasetConfig cfg;
  cfg.count = 2;
  cfg.seed = 1;
  cfg.query.n_query = 500;
  cfg.query.n_input = 300;
  generate_dataset(model(), cfg, root);
  const auto dirs = list_subjects(root);
  ASSERT_EQ(dirs.size(), 2u);
  EXPECT_EQ(dirs[0], subject_dir(root, 0));
  EXPECT_TRUE(std::filesystem::exists(root / "body.json"));
  const DatasetEntry e = dataset_entry(model(), cfg, 1);
  const SubjectFiles f = load_subject(dirs[1], model());
  EXPECT_EQ(f.region_labels, e.sample.region_labels);

  cfg.single_view = true;
  const DatasetEntry sv = dataset_entry(model(), cfg, 0);
  ASSERT_TRUE(sv.view_dir.has_value());
  EXPECT_EQ(sv.sample.input_cloud.size(), 300u);
  std::filesystem::remove_all(root);
}

}  // namespace
}  // namespace dilate
