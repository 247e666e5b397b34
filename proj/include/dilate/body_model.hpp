#pragma once

#include "dilate/geometry.hpp"

#include <Eigen/SparseCore>

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dilate {

inline constexpr int kNumParts = 14;

/// Body parts, proximal-to-distal within each limb. For arms, "upper-arm" is the
/// shoulder-to-elbow segment, "mid-arm" elbow-to-wrist, and "forearm" the distal hand stub.
enum class PartId : int {
  LeftForearm = 0,
  RightForearm,
  LeftMidArm,
  RightMidArm,
  LeftUpperArm,
  RightUpperArm,
  LeftUpperLeg,
  RightUpperLeg,
  LeftMidLeg,
  RightMidLeg,
  LeftFoot,
  RightFoot,
  Torso,
  Head,
};

std::string_view part_name(int part);
/// Part with left and right exchanged; central parts map to themselves.
int mirror_part(int part);

inline constexpr int kNumJoints = 16;

enum Joint : int {
  kRoot = 0,
  kSpine,
  kNeck,
  kHead,
  kLeftShoulder,
  kLeftElbow,
  kLeftWrist,
  kRightShoulder,
  kRightElbow,
  kRightWrist,
  kLeftHip,
  kLeftKnee,
  kLeftAnkle,
  kRightHip,
  kRightKnee,
  kRightAnkle,
};

struct SkinInfluence {
  int joint;
  double weight;
};

/// Articulated template: rest mesh, kinematic tree (parents precede children), sparse
/// skinning weights, linear shape basis acting on vertices and joints, part labels.
struct BodyModel {
  std::vector<Vec3> template_vertices;
  std::vector<Face> faces;
  std::vector<int> parents;
  std::vector<Vec3> joints;
  std::vector<std::string> joint_names;
  std::vector<double> joint_limits;                  // max rotation angle per joint, radians
  std::vector<std::vector<SkinInfluence>> skinning;  // per vertex
  std::vector<std::vector<Vec3>> shape_basis;        // B x V
  std::vector<std::vector<Vec3>> joint_shape_basis;  // B x J
  std::vector<int> part_labels;                      // per vertex

  int num_vertices() const { return static_cast<int>(template_vertices.size()); }
  int num_joints() const { return static_cast<int>(joints.size()); }
  int num_shapes() const { return static_cast<int>(shape_basis.size()); }

  TriMesh template_mesh() const;
  /// Faces whose three vertices carry `part`.
  std::vector<int> part_faces(int part) const;
  bool is_ancestor(int ancestor, int joint) const;
  /// Throws DegenerateInput when an invariant is broken.
  void validate() const;
};

struct BodyParams {
  std::vector<Vec3> pose;           // axis-angle per joint
  Eigen::VectorXd shape;            // B
  Vec3 translation = Vec3::Zero();
  std::vector<Vec3> displacements;  // empty, or one per vertex (rest frame)

  static BodyParams zero(const BodyModel& model, bool with_displacements = false);
  /// Throws InvalidParams on size mismatch or non-finite entries.
  void validate(const BodyModel& model) const;
  bool has_displacements() const { return !displacements.empty(); }
};

Mat3 rodrigues(const Vec3& axis_angle);
/// Partial derivatives of rodrigues() with respect to each axis-angle component.
std::array<Mat3, 3> rodrigues_derivatives(const Vec3& axis_angle);
Vec3 log_rotation(const Mat3& r);
/// Equivalent rotation with angle in [0, pi].
Vec3 canonicalize_axis_angle(const Vec3& axis_angle);
Mat3 skew(const Vec3& v);

/// Intermediate quantities of a forward pass, reused by the gradient routines.
struct PosedState {
  std::vector<Vec3> rest;         // shaped + displaced rest vertices
  std::vector<Vec3> joints;       // shaped rest joints
  std::vector<Mat3> local_rot;    // R_j
  std::vector<Mat3> world_rot;    // chain rotation of joint j
  std::vector<Vec3> world_trans;  // chain translation of joint j
  std::vector<Vec3> skin_trans;   // world_trans - world_rot * joint
  std::vector<Vec3> vertices;     // posed output
};

PosedState pose_state(const BodyModel& model, const BodyParams& params);
TriMesh forward(const BodyModel& model, const BodyParams& params);

enum class ParamBlock { Pose, Shape, Translation, Displacement };

/// d(vertices)/d(block) as a (3V x n) sparse matrix; rows are vertex-major (x,y,z).
Eigen::SparseMatrix<double> forward_jacobian(const BodyModel& model, const BodyParams& params, ParamBlock block);

/// Gradient of a scalar with respect to all parameters, given its gradient with respect
/// to the posed vertices.
struct ParamGradient {
  std::vector<Vec3> pose;
  std::vector<Mat3> local_rot;  // d/dR_j before the axis-angle chain rule
  Eigen::VectorXd shape;
  Vec3 translation = Vec3::Zero();
  std::vector<Vec3> displacements;  // filled when requested
};

ParamGradient backpropagate(const BodyModel& model, const BodyParams& params, const PosedState& state,
                            std::span<const Vec3> vertex_grad, bool with_displacements);

/// Posed mesh restricted to the faces of `part` (all posed vertices are kept so face
/// indices stay model indices). Throws EmptyPart.
TriMesh part_submesh(const BodyModel& model, const BodyParams& params, int part);

/// Fitted shape, translation and displacements under a new pose.
TriMesh repose(const BodyModel& model, const BodyParams& fitted, std::span<const Vec3> new_pose);

/// Procedural capsule humanoid with `shape_modes` orthogonal shape modes.
BodyModel build_default_model(int shape_modes = 4, std::uint64_t seed = 0);

void save_model(const std::filesystem::path& json_path, const BodyModel& model);
BodyModel load_model(const std::filesystem::path& json_path);

/// JSON with pose (J x 3), shape (B), translation (3) and an optional displacement blob
/// written next to it.
void save_params(const std::filesystem::path& json_path, const BodyParams& params);
BodyParams load_params(const std::filesystem::path& json_path);

}  // namespace dilate
