#pragma once

#include "dilate/body_model.hpp"
#include "dilate/spatial.hpp"

#include <filesystem>
#include <optional>
#include <random>

namespace dilate {

enum Region : int { kInsideBody = 0, kBetweenLayers = 1, kOutsideClothing = 2 };
inline constexpr int kNumRegions = 3;

struct SubjectConfig {
  double offset_min = 0.005;
  double offset_max = 0.03;
  int bumps = 8;
  double bump_width_min = 0.10, bump_width_max = 0.25;
  double shape_range = 2.0;
  int max_attempts = 20;  // pose resamples before giving up
  std::optional<std::vector<Vec3>> pose;  // fixed pose instead of random draws
};

/// A dressed synthetic person: the body surface and a clothing surface with identical
/// connectivity, displaced outwards along the body normals.
struct Subject {
  BodyParams params;
  TriMesh inner;
  TriMesh outer;
  std::vector<double> clothing_offsets;  // nominal per-vertex offsets, meters
};

/// No intersecting face pairs, and every vertex pushed `probe` meters along its normal
/// lands outside (rules out folded pockets between adjacent faces).
bool is_clean_surface(const TriMesh& mesh, double probe = 1e-3);

/// Throws GenerationFailed when no pose draw gives a clean body surface.
Subject sample_subject(const BodyModel& model, std::uint64_t seed, const SubjectConfig& cfg = {});

/// Ten hand-made everyday poses (A-pose, walking, reaching, bending, ...); no joint
/// rotates by more than 45 degrees and every pose gives a clean body surface.
std::vector<std::vector<Vec3>> pose_suite(const BodyModel& model);

/// Random pose with angle uniform in [0, limit] about a uniform random axis per joint.
/// The root uses the same limit as the spine.
std::vector<Vec3> sample_pose(const BodyModel& model, std::mt19937_64& rng);

struct QueryConfig {
  std::size_t n_input = 5000;
  std::size_t n_query = 20000;
  double sigma_small = 0.005;
  double sigma_large = 0.02;
  double uniform_fraction = 0.1;
  double box_size = kDefaultBoxSize;
};

/// Input cloud and labelled query points, all in meters.
struct TrainingSample {
  PointCloud input_cloud;
  std::vector<Vec3> query_points;
  std::vector<int> region_labels;
  std::vector<int> part_labels;
};

/// Ground-truth region and part labels from winding numbers against both surfaces and the
/// nearest inner vertex.
class RegionOracle {
 public:
  RegionOracle(const TriMesh& inner, const TriMesh& outer);
  int region(const Vec3& p) const;
  int part(const Vec3& p) const;

 private:
  MeshBvh inner_, outer_;
  PointKdTree inner_vertices_;
  std::vector<int> labels_;
};

/// `input_override` replaces the full-view input (e.g. with a single-view cloud); the
/// uniform queries then cover the normalization box of that cloud.
TrainingSample make_sample(const Subject& subject, const QueryConfig& cfg, std::uint64_t seed,
                           const PointCloud* input_override = nullptr);

struct SingleViewResult {
  PointCloud cloud;
  bool short_of_target = false;  // fewer visible candidates than requested
};

/// Orthographic depth-buffer visibility seen from direction `view_dir` (pointing from the
/// subject towards the camera). Throws DegenerateInput for a zero direction.
SingleViewResult single_view_cloud(const TriMesh& surface, const Vec3& view_dir, std::size_t n, std::uint64_t seed,
                                   int depth_resolution = 512);

/// Dataset layout: `<root>/body.json` + `<root>/subject_%04d/` with inner.obj, outer.obj,
/// params.json, input.xyz and queries.xyz (region and part label columns).
struct SubjectFiles {
  TriMesh inner;
  TriMesh outer;
  BodyParams params;
  PointCloud input;
  std::vector<Vec3> query_points;
  std::vector<int> region_labels;
  std::vector<int> part_labels;
};

std::filesystem::path subject_dir(const std::filesystem::path& root, int index);
void save_subject(const std::filesystem::path& dir, const Subject& subject, const TrainingSample& sample);
/// Inner/outer labels are restored from the model.
SubjectFiles load_subject(const std::filesystem::path& dir, const BodyModel& model);
/// Sorted subject directories under a dataset root.
std::vector<std::filesystem::path> list_subjects(const std::filesystem::path& root);

struct DatasetConfig {
  int count = 1;
  std::uint64_t seed = 0;
  bool single_view = false;
  QueryConfig query;
  SubjectConfig subject;
};

struct DatasetEntry {
  Subject subject;
  TrainingSample sample;
  std::optional<Vec3> view_dir;  // single-view datasets
};
/// Subject `index` of a dataset, as generate_dataset writes it.
DatasetEntry dataset_entry(const BodyModel& model, const DatasetConfig& cfg, int index);

/// Writes body.json and `count` subjects; subject i uses sub-seed "subject<i>".
void generate_dataset(const BodyModel& model, const DatasetConfig& cfg, const std::filesystem::path& root);

}  // namespace dilate
