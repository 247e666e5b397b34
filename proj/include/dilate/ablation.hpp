#pragma once

#include "dilate/occnet.hpp"
#include "dilate/registration.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace dilate {

enum class AblationSuite { PartTerm, SkipInner, SingleView, JointVsSeparate };

/// "part-term", "skip-inner", "single-view", "joint-vs-separate"; throws InvalidParams.
AblationSuite parse_suite(std::string_view name);
std::string_view suite_name(AblationSuite suite);

/// One row per case plus a trailing "mean" row in the CSV.
struct AblationReport {
  std::vector<std::string> columns;  // value columns, after "case"
  std::vector<std::string> cases;
  std::vector<std::vector<double>> values;  // [case][column]

  std::vector<double> means() const;
  std::string to_csv() const;
};

struct AblationConfig {
  int cases = 10;  // test subjects, one per pose-suite pose (cycled)
  std::uint64_t seed = 0;
  int resolution = 64;
  FitOptions fit;
  FitWeights weights;
  double adversarial_yaw = 3.14159265358979323846;  // part-term suite init
  Vec3 view_dir = Vec3::UnitY();                    // single-view camera side (the body faces +y)
  std::size_t input_points = 5000;
  // training when no weights are supplied
  int train_subjects = 40;
  QueryConfig query;
  TrainConfig train;
  std::vector<int> separate_hidden = {128, 64};
};

/// Test subject `index`: pose-suite pose index % 10 with its own shape and clothing.
Subject ablation_subject(const BodyModel& model, const AblationConfig& cfg, int index);
/// Training set of random-pose subjects generated in memory.
TrainingData ablation_training_data(const BodyModel& model, const AblationConfig& cfg, bool single_view = false);

/// Body fitted from a 180-degree yawed rest pose to the oracle-reconstructed inner surface
/// with and without the part term. Columns: with_part_v2v_cm, without_part_v2v_cm (body vs
/// GT inner).
AblationReport part_term_suite(const BodyModel& model, const AblationConfig& cfg);
/// Full pipeline vs fitting body and displacements straight to the outer surface. Columns:
/// full_v2v_cm, skip_inner_v2v_cm (dressed fit vs GT outer). The oracle labeler is used
/// when `stack` is null.
AblationReport skip_inner_suite(const BodyModel& model, const DecoderStack* stack, const AblationConfig& cfg);
/// Registration from a full surface cloud vs a single-view cloud. Columns: full_cloud_v2v_cm,
/// single_view_v2v_cm. `single_stack` may be the same network as `full_stack`.
AblationReport single_view_suite(const BodyModel& model, const DecoderStack& full_stack,
                                 const DecoderStack& single_stack, const AblationConfig& cfg);
/// Interpenetration of the joint 3-region reconstruction vs two independently trained
/// binary decoders. Columns: joint_interpenetration_mm2, separate_interpenetration_mm2.
AblationReport joint_vs_separate_suite(const BodyModel& model, const DecoderStack& stack, const Classifier& inner,
                                       const Classifier& outer, const AblationConfig& cfg);

/// Inside-body and inside-clothing binary decoders trained on the region labels.
std::pair<Classifier, Classifier> train_separate_decoders(const TrainingData& data, const AblationConfig& cfg);

}  // namespace dilate
