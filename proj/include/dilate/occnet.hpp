#pragma once

#include "dilate/body_model.hpp"
#include "dilate/features.hpp"
#include "dilate/mlp.hpp"
#include "dilate/synth.hpp"

#include <filesystem>
#include <functional>
#include <span>

namespace dilate {

/// Decoder input: the multi-scale grid features followed by the normalized query position.
inline constexpr int kDecoderInputDim = kFeatureDim + 3;
void decoder_input(const FeatureGrid& grid, const Vec3& normalized, float* out);

/// Part classifier plus one 3-region occupancy classifier per part. Raw features are
/// standardized with a stored per-channel mean and scale before entering any network.
template <typename S>
struct DecoderStackT {
  using Mat = typename Mlp<S>::Mat;
  using Vec = typename Mlp<S>::Vec;

  Vec input_mean;
  Vec input_scale;
  Mlp<S> part;
  std::vector<Mlp<S>> members;

  int num_parts() const { return static_cast<int>(members.size()); }

  /// Zero weights (uniform scores), identity standardization.
  static DecoderStackT zeros(int parts = kNumParts, int part_hidden = 64, int member_hidden = 32);
  /// Random initialization.
  static DecoderStackT random(std::uint64_t seed, int parts = kNumParts, int part_hidden = 64, int member_hidden = 32);

  struct Output {
    Mat scores;                // N x n part scores
    std::vector<Mat> members;  // N entries of 3 x n member distributions
    Mat probs;                 // 3 x n blended region probabilities
  };
  /// `features` is kDecoderInputDim x n, unstandardized.
  Output evaluate(const Mat& features) const;

  /// Summed mean cross-entropies: w_part on the part scores, w_occ on the blended region
  /// probabilities. Writes parameter gradients into `grad` when given (overwritten).
  S loss(const Mat& features, std::span<const int> regions, std::span<const int> parts, S w_part, S w_occ,
         DecoderStackT* grad) const;

  std::vector<std::pair<S*, std::size_t>> tensors();
  bool all_finite() const;
  void set_zero();

  template <typename T>
  DecoderStackT<T> cast() const {
    DecoderStackT<T> out;
    out.input_mean = input_mean.template cast<T>();
    out.input_scale = input_scale.template cast<T>();
    out.part = part.template cast<T>();
    for (const auto& m : members) out.members.push_back(m.template cast<T>());
    return out;
  }
};

using DecoderStack = DecoderStackT<float>;

/// Part scores for one feature vector; sums to one.
std::vector<float> part_scores(const DecoderStack& stack, std::span<const float> features);
/// Argmax with ties to the lowest index.
int part_label(std::span<const float> scores);

struct Occupancy {
  int region = 0;
  std::array<float, 3> probs{};
};
/// Blend of the member distributions weighted by `scores`.
Occupancy occupancy(const DecoderStack& stack, std::span<const float> features, std::span<const float> scores);
/// The same blend for given member outputs (N x 3, row per member).
std::array<double, 3> blend_probabilities(std::span<const double> scores, std::span<const std::array<double, 3>> members);

// --- training ---------------------------------------------------------------------------

/// Stacked decoder inputs (kDecoderInputDim x n) with their labels.
struct TrainingData {
  Eigen::MatrixXf features;
  std::vector<int> regions;
  std::vector<int> parts;
  std::vector<int> subject;  // source subject index per column

  std::size_t size() const { return regions.size(); }
  void append(const TrainingData& other);
};

/// Normalizes the input cloud, encodes it and samples features at the (metric) queries.
TrainingData make_training_data(const PointCloud& input, std::span<const Vec3> queries, std::span<const int> regions,
                                std::span<const int> parts, int subject_index = 0, int base_res = 128);
TrainingData load_training_data(const std::vector<std::filesystem::path>& subject_dirs, const BodyModel& model,
                                int base_res = 128);

struct TrainConfig {
  double lr = 2e-3;
  int batch = 2048;
  int epochs = 40;
  std::uint64_t seed = 0;
  double w_part = 1.0;
  double w_occ = 1.0;
  int part_hidden = 64;
  int member_hidden = 32;
  double lr_decay = 0.1;  // final learning rate fraction, cosine schedule
};

struct TrainResult {
  DecoderStack stack;
  std::vector<double> epoch_loss;
};

/// Deterministic given the config. Throws TrainingDiverged on a non-finite loss.
TrainResult train(const TrainingData& data, const TrainConfig& cfg,
                  const std::function<void(int, double)>& on_epoch = {});

struct AccuracyReport {
  double region = 0;
  double part = 0;
  std::array<double, kNumParts> region_by_part{};  // region accuracy grouped by GT part
  std::array<std::size_t, kNumParts> count_by_part{};
  double min_region_by_part() const;
};

AccuracyReport evaluate_accuracy(const DecoderStack& stack, const TrainingData& data);

/// Single softmax classifier with its own standardization (baselines).
struct Classifier {
  Eigen::VectorXf input_mean;
  Eigen::VectorXf input_scale;
  Mlp<float> net;

  Eigen::MatrixXf probabilities(const Eigen::MatrixXf& features) const;
};

Classifier train_classifier(const Eigen::MatrixXf& features, std::span<const int> labels, int classes,
                            const std::vector<int>& hidden, const TrainConfig& cfg);

/// Region accuracy of a 3-class classifier grouped by GT part.
AccuracyReport evaluate_accuracy(const Classifier& monolithic, const TrainingData& data);

// --- inference --------------------------------------------------------------------------

/// Region probabilities and part labels at metric points. Fields used for surfaces are
/// probs[0] (inner) and probs[0] + probs[1] (outer).
class RegionPredictor {
 public:
  virtual ~RegionPredictor() = default;
  virtual void predict(std::span<const Vec3> points, std::vector<std::array<float, 3>>& probs,
                       std::vector<int>* parts) const = 0;
};

/// The trained stack applied to features of one input cloud.
class NetworkPredictor : public RegionPredictor {
 public:
  NetworkPredictor(const DecoderStack& stack, const PointCloud& metric_cloud, int base_res = 128);
  void predict(std::span<const Vec3> points, std::vector<std::array<float, 3>>& probs,
               std::vector<int>* parts) const override;
  const NormalizationTransform& transform() const { return transform_; }

 private:
  const DecoderStack& stack_;
  NormalizationTransform transform_;
  FeatureGrid grid_;
};

/// Ground-truth labeler: winding numbers against both surfaces and nearest-vertex parts.
class OraclePredictor : public RegionPredictor {
 public:
  OraclePredictor(const TriMesh& inner, const TriMesh& outer) : oracle_(inner, outer) {}
  void predict(std::span<const Vec3> points, std::vector<std::array<float, 3>>& probs,
               std::vector<int>* parts) const override;

 private:
  RegionOracle oracle_;
};

/// Two independent binary decoders (inside body, inside clothing). probs[1] is the
/// difference of the two fields and can be negative where they disagree.
class SeparatePredictor : public RegionPredictor {
 public:
  SeparatePredictor(const Classifier& inner, const Classifier& outer, const PointCloud& metric_cloud,
                    int base_res = 128);
  void predict(std::span<const Vec3> points, std::vector<std::array<float, 3>>& probs,
               std::vector<int>* parts) const override;

 private:
  const Classifier& inner_;
  const Classifier& outer_;
  NormalizationTransform transform_;
  FeatureGrid grid_;
};

struct Reconstruction {
  TriMesh outer;
  TriMesh inner;
};

/// Evaluates the predictor on a res^3 lattice over the normalization box (padded by two
/// cells on each side so extremities close), extracts both 0.5 level sets and maps them
/// back to meters. Vertex labels come from the predictor. Throws EmptySurface.
Reconstruction reconstruct(const RegionPredictor& predictor, const NormalizationTransform& transform, int res = 128);
Reconstruction reconstruct(const DecoderStack& stack, const PointCloud& metric_cloud, int res = 128);

// --- weights files ----------------------------------------------------------------------

/// JSON manifest with layer shapes and training config, plus `<path>.bin` blob of
/// row-major f32 layers.
void save_stack(const std::filesystem::path& path, const DecoderStack& stack, const TrainConfig& cfg);
DecoderStack load_stack(const std::filesystem::path& path);
void save_classifier(const std::filesystem::path& path, const Classifier& c);
Classifier load_classifier(const std::filesystem::path& path);

}  // namespace dilate
