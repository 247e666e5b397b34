#pragma once

#include "dilate/body_model.hpp"
#include "dilate/occnet.hpp"
#include "dilate/spatial.hpp"

#include <filesystem>
#include <optional>

namespace dilate {

struct FitWeights {
  double w_data = 100.0;
  double w_part = 10.0;
  double w_lap = 1.0;
  double w_bidir = 0.1;

  void validate() const;
};

/// Unweighted energy terms; total() applies the weights.
struct EnergyTerms {
  double data = 0;
  double part = 0;
  double lap = 0;

  double total(const FitWeights& w) const { return w.w_data * data + w.w_part * part + w.w_lap * lap; }
};

enum class FitStage { Body = 1, Displacement = 2 };

struct TraceRow {
  int iteration = 0;
  int stage = 1;
  EnergyTerms terms;
  double total = 0;
};

struct FitResult {
  BodyParams params;
  std::vector<TraceRow> trace;
  EnergyTerms terms;  // at the returned params, exact closest points
  double energy = 0;
  double initial_energy = 0;
  std::vector<int> iterations;  // per phase
};

struct FitOptions {
  int max_iterations = 300;  // per phase
  double rel_tolerance = 1e-5;
  int refreeze_every = 3;
  double lr_pose = 0.05;          // radians
  double lr_translation = 0.01;   // meters
  double lr_shape = 0.1;          // shape units (1 cm RMS)
  double lr_displacement = 0.002; // meters
  double body_rate_in_stage2 = 0.1;
  double smoothing = 0.01;  // meters; distances d enter the optimized energy as sqrt(d^2 + s^2) - s
  bool freeze_body = false;  // stage 2 keeps pose, shape and translation fixed
  bool part_alignment = true;  // with labels, start stage 1 with a rigid fit of the part term alone
  bool rigid_only = false;     // stage 1 stops after the rigid phase
};

/// Fitting energy with closest-point correspondences held fixed between calls to refreeze().
/// Stage Body: data + part + Laplacian change of the posed surface, measured in the root
/// frame. Stage Displacement: data + Laplacian of the displacements. With a positive
/// smoothing radius s, point distances d are replaced by sqrt(d^2 + s^2) - s, which is
/// differentiable at d = 0 and never exceeds d.
class FitEnergy {
 public:
  FitEnergy(const BodyModel& model, const TriMesh& target, std::vector<int> labels, const FitWeights& weights,
            FitStage stage, double smoothing = 0.0);

  /// Recomputes closest points for the current params.
  void refreeze(const BodyParams& params);
  /// Weighted total under the frozen correspondences, with optional terms and gradient.
  double evaluate(const BodyParams& params, EnergyTerms* terms, ParamGradient* grad) const;
  /// Exact terms (fresh closest points, no smoothing) without touching the frozen state.
  EnergyTerms exact(const BodyParams& params) const;

  const FitWeights& weights() const { return weights_; }
  FitStage stage() const { return stage_; }
  bool uses_parts() const { return weights_.w_part > 0 && !labels_.empty(); }

 private:
  struct Anchor {
    int face = -1;  // model face
    Vec3 bary = Vec3::Zero();
  };
  struct Frozen {
    std::vector<Anchor> to_model;  // per target vertex
    std::vector<Anchor> to_part;   // per target vertex, face within the labelled part
    std::vector<Vec3> to_target;   // per model vertex
  };
  Frozen freeze(const std::vector<Vec3>& posed) const;
  double evaluate_frozen(const Frozen& f, const BodyParams& params, double smoothing, EnergyTerms* terms,
                         ParamGradient* grad) const;

  const BodyModel& model_;
  TriMesh target_;
  MeshBvh target_bvh_;
  std::vector<int> labels_;
  FitWeights weights_;
  FitStage stage_;
  double smoothing_;
  std::vector<std::vector<int>> neighbors_;
  std::vector<Vec3> rest_laplacian_;
  std::array<std::vector<int>, kNumParts> part_faces_;
  Frozen frozen_;
};

/// Free-standing terms: value and gradient at `params` with correspondences frozen there.
double energy_data(const BodyModel& model, const BodyParams& params, const TriMesh& target, double w_bidir,
                   ParamGradient* grad = nullptr);
double energy_part(const BodyModel& model, const BodyParams& params, const TriMesh& target,
                   const std::vector<int>& labels, ParamGradient* grad = nullptr);

/// Stage 1: rigid, then pose, then shape. `labels` may be empty (no part term). Each phase
/// appends one entry to `iterations`; the trace energy is monotone within a phase.
FitResult fit_body(const TriMesh& inner, const std::vector<int>& labels, const BodyModel& model,
                   const FitWeights& weights, const BodyParams& init, const FitOptions& opt = {});
/// Stage 2: displacements (and, unless frozen, the body at a reduced rate) to the outer surface.
FitResult fit_displacements(const TriMesh& outer, const BodyModel& model, const FitResult& start,
                            const FitWeights& weights, const FitOptions& opt = {});

struct RegisterOptions {
  FitWeights weights;
  FitOptions fit;
  int resolution = 128;
  bool use_parts = true;    // false drops the part term (labels withheld)
  bool skip_inner = false;  // fit the body straight to the outer surface
  std::optional<BodyParams> init;
};

struct Registration {
  FitResult body;
  FitResult full;
  TriMesh inner;  // reconstructed
  TriMesh outer;
  TriMesh fitted;  // posed model with displacements
};

/// fit_body on the inner surface (its vertex labels drive the part term) -> fit_displacements
/// on the outer surface.
Registration register_reconstruction(Reconstruction rec, const BodyModel& model, const RegisterOptions& opt);
/// reconstruct -> register_reconstruction.
Registration register_prediction(const RegionPredictor& predictor, const NormalizationTransform& transform,
                                 const BodyModel& model, const RegisterOptions& opt);
Registration register_cloud(const PointCloud& cloud, const DecoderStack& stack, const BodyModel& model,
                            const RegisterOptions& opt);
/// Scan mode: labels predicted per scan vertex, body fitted to the predicted inner surface,
/// displacements fitted to the scan itself.
Registration register_scan(const TriMesh& scan, const DecoderStack& stack, const BodyModel& model,
                           const RegisterOptions& opt, std::size_t scan_samples = 5000, std::uint64_t seed = 0);

/// Rest pose with the root yawed by `yaw` radians about +z, translated to the target's centroid.
BodyParams yawed_init(const BodyModel& model, const TriMesh& target, double yaw);

/// iteration,stage,E_data,E_part,E_lap,total
void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace);

}  // namespace dilate
