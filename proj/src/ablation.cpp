#include "dilate/ablation.hpp"

#include "dilate/metrics.hpp"

#include <spdlog/spdlog.h>

#include <iomanip>
#include <sstream>

namespace dilate {

namespace {

constexpr std::array<std::pair<AblationSuite, std::string_view>, 4> kSuites{{
    {AblationSuite::PartTerm, "part-term"},
    {AblationSuite::SkipInner, "skip-inner"},
    {AblationSuite::SingleView, "single-view"},
    {AblationSuite::JointVsSeparate, "joint-vs-separate"},
}};

std::string case_name(int i) {
  std::ostringstream s;
  s << "case_" << std::setw(2) << std::setfill('0') << i;
  return s.str();
}

PointCloud case_cloud(const Subject& s, const AblationConfig& cfg, int index) {
  return sample_surface(s.outer, cfg.input_points, sub_seed(cfg.seed, "cloud" + std::to_string(index)));
}

RegisterOptions register_options(const AblationConfig& cfg) {
  RegisterOptions o;
  o.weights = cfg.weights;
  o.fit = cfg.fit;
  o.resolution = cfg.resolution;
  return o;
}

}  // namespace

AblationSuite parse_suite(std::string_view name) {
  for (const auto& [s, n] : kSuites) {
    if (n == name) return s;
  }
  throw InvalidParams("unknown ablation suite: " + std::string(name));
}

std::string_view suite_name(AblationSuite suite) {
  for (const auto& [s, n] : kSuites) {
    if (s == suite) return n;
  }
  return "unknown";
}

std::vector<double> AblationReport::means() const {
  std::vector<double> m(columns.size(), 0.0);
  if (values.empty()) return m;
  for (const auto& row : values) {
    for (std::size_t c = 0; c < columns.size(); ++c) m[c] += row[c];
  }
  for (double& v : m) v /= static_cast<double>(values.size());
  return m;
}

std::string AblationReport::to_csv() const {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "case";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < values.size(); ++i) {
    out << cases[i];
    for (double v : values[i]) out << ',' << v;
    out << '\n';
  }
  out << "mean";
  for (double v : means()) out << ',' << v;
  out << '\n';
  return out.str();
}

Subject ablation_subject(const BodyModel& model, const AblationConfig& cfg, int index) {
  const auto suite = pose_suite(model);
  SubjectConfig sc;
  sc.pose = suite[static_cast<std::size_t>(index) % suite.size()];
  return sample_subject(model, sub_seed(cfg.seed, "case" + std::to_string(index)), sc);
}

TrainingData ablation_training_data(const BodyModel& model, const AblationConfig& cfg, bool single_view) {
  DatasetConfig dc;
  dc.count = cfg.train_subjects;
  dc.seed = sub_seed(cfg.seed, "train-data");
  dc.single_view = single_view;
  dc.query = cfg.query;
  dc.query.n_input = cfg.input_points;
  TrainingData all;
  std::vector<TrainingData> pieces;
  for (int i = 0; i < cfg.train_subjects; ++i) {
    const DatasetEntry e = dataset_entry(model, dc, i);
    pieces.push_back(make_training_data(e.sample.input_cloud, e.sample.query_points, e.sample.region_labels,
                                        e.sample.part_labels, i));
  }
  for (const auto& p : pieces) all.append(p);
  return all;
}

AblationReport part_term_suite(const BodyModel& model, const AblationConfig& cfg) {
  AblationReport r;
  r.columns = {"with_part_v2v_cm", "without_part_v2v_cm"};
  for (int i = 0; i < cfg.cases; ++i) {
    const Subject s = ablation_subject(model, cfg, i);
    const OraclePredictor oracle(s.inner, s.outer);
    const NormalizedCloud nc = normalize_to_box(case_cloud(s, cfg, i), kDefaultBoxSize);
    const Reconstruction rec = reconstruct(oracle, nc.transform, cfg.resolution);
    const BodyParams init = yawed_init(model, rec.inner, cfg.adversarial_yaw);
    FitWeights with = cfg.weights, without = cfg.weights;
    without.w_part = 0;
    const FitResult a = fit_body(rec.inner, rec.inner.vertex_labels(), model, with, init, cfg.fit);
    const FitResult b = fit_body(rec.inner, {}, model, without, init, cfg.fit);
    r.cases.push_back(case_name(i));
    r.values.push_back({v2v(forward(model, a.params), s.inner), v2v(forward(model, b.params), s.inner)});
    spdlog::info("part-term {}: with {:.3f} cm, without {:.3f} cm", i, r.values.back()[0], r.values.back()[1]);
  }
  return r;
}

AblationReport skip_inner_suite(const BodyModel& model, const DecoderStack* stack, const AblationConfig& cfg) {
  AblationReport r;
  r.columns = {"full_v2v_cm", "skip_inner_v2v_cm"};
  for (int i = 0; i < cfg.cases; ++i) {
    const Subject s = ablation_subject(model, cfg, i);
    const PointCloud cloud = case_cloud(s, cfg, i);
    Reconstruction rec;
    if (stack) {
      const NetworkPredictor pred(*stack, cloud);
      rec = reconstruct(pred, pred.transform(), cfg.resolution);
    } else {
      const OraclePredictor pred(s.inner, s.outer);
      rec = reconstruct(pred, normalize_to_box(cloud, kDefaultBoxSize).transform, cfg.resolution);
    }
    RegisterOptions full = register_options(cfg), skip = full;
    skip.skip_inner = true;
    skip.use_parts = false;
    const Registration a = register_reconstruction(rec, model, full);
    const Registration b = register_reconstruction(std::move(rec), model, skip);
    r.cases.push_back(case_name(i));
    r.values.push_back({v2v(a.fitted, s.outer), v2v(b.fitted, s.outer)});
    spdlog::info("skip-inner {}: full {:.3f} cm, outer only {:.3f} cm", i, r.values.back()[0], r.values.back()[1]);
  }
  return r;
}

AblationReport single_view_suite(const BodyModel& model, const DecoderStack& full_stack,
                                 const DecoderStack& single_stack, const AblationConfig& cfg) {
  AblationReport r;
  r.columns = {"full_cloud_v2v_cm", "single_view_v2v_cm"};
  const RegisterOptions opt = register_options(cfg);
  for (int i = 0; i < cfg.cases; ++i) {
    const Subject s = ablation_subject(model, cfg, i);
    const PointCloud full = case_cloud(s, cfg, i);
    const SingleViewResult sv =
        single_view_cloud(s.outer, cfg.view_dir, cfg.input_points, sub_seed(cfg.seed, "view" + std::to_string(i)));
    const Registration a = register_cloud(full, full_stack, model, opt);
    const Registration b = register_cloud(sv.cloud, single_stack, model, opt);
    r.cases.push_back(case_name(i));
    r.values.push_back({v2v(a.fitted, s.outer), v2v(b.fitted, s.outer)});
    spdlog::info("single-view {}: full {:.3f} cm, single view {:.3f} cm", i, r.values.back()[0], r.values.back()[1]);
  }
  return r;
}

std::pair<Classifier, Classifier> train_separate_decoders(const TrainingData& data, const AblationConfig& cfg) {
  std::vector<int> inside_body(data.size()), inside_clothing(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    inside_body[i] = data.regions[i] == kInsideBody ? 1 : 0;
    inside_clothing[i] = data.regions[i] != kOutsideClothing ? 1 : 0;
  }
  Classifier inner = train_classifier(data.features, inside_body, 2, cfg.separate_hidden, cfg.train);
  TrainConfig second = cfg.train;
  second.seed = sub_seed(cfg.train.seed, "outer");
  Classifier outer = train_classifier(data.features, inside_clothing, 2, cfg.separate_hidden, second);
  return {std::move(inner), std::move(outer)};
}

AblationReport joint_vs_separate_suite(const BodyModel& model, const DecoderStack& stack, const Classifier& inner,
                                       const Classifier& outer, const AblationConfig& cfg) {
  AblationReport r;
  r.columns = {"joint_interpenetration_mm2", "separate_interpenetration_mm2"};
  for (int i = 0; i < cfg.cases; ++i) {
    const Subject s = ablation_subject(model, cfg, i);
    const PointCloud cloud = case_cloud(s, cfg, i);
    const NetworkPredictor joint(stack, cloud);
    const SeparatePredictor separate(inner, outer, cloud);
    const Reconstruction a = reconstruct(joint, joint.transform(), cfg.resolution);
    const Reconstruction b = reconstruct(separate, joint.transform(), cfg.resolution);
    r.cases.push_back(case_name(i));
    r.values.push_back({interpenetration_area_symmetric(a.inner, a.outer), interpenetration_area_symmetric(b.inner, b.outer)});
    spdlog::info("joint-vs-separate {}: joint {:.3f} mm^2, separate {:.3f} mm^2", i, r.values.back()[0],
                 r.values.back()[1]);
  }
  return r;
}

}  // namespace dilate
