#include "dilate/occnet.hpp"

#include "dilate/io.hpp"
#include "dilate/marching_cubes.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace dilate {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kInferenceChunk = 16384;

template <typename S>
typename Mlp<S>::Mat standardize(const typename Mlp<S>::Mat& x, const typename Mlp<S>::Vec& mean,
                                 const typename Mlp<S>::Vec& scale) {
  typename Mlp<S>::Mat out = x.colwise() - mean;
  out.array().colwise() *= scale.array();
  return out;
}

}  // namespace

// --- decoder stack ----------------------------------------------------------------------

template <typename S>
DecoderStackT<S> DecoderStackT<S>::zeros(int parts, int part_hidden, int member_hidden) {
  if (parts <= 0) throw InvalidParams("need at least one part");
  DecoderStackT s;
  s.input_mean = Vec::Zero(kDecoderInputDim);
  s.input_scale = Vec::Ones(kDecoderInputDim);
  s.part = Mlp<S>({kDecoderInputDim, part_hidden, part_hidden, parts});
  for (int i = 0; i < parts; ++i) s.members.emplace_back(std::vector<int>{kDecoderInputDim, member_hidden, kNumRegions});
  return s;
}

template <typename S>
DecoderStackT<S> DecoderStackT<S>::random(std::uint64_t seed, int parts, int part_hidden, int member_hidden) {
  DecoderStackT s = zeros(parts, part_hidden, member_hidden);
  std::mt19937_64 rng(seed);
  s.part.init(rng);
  for (auto& m : s.members) m.init(rng);
  return s;
}

template <typename S>
typename DecoderStackT<S>::Output DecoderStackT<S>::evaluate(const Mat& features) const {
  const Mat x = standardize<S>(features, input_mean, input_scale);
  Output out;
  out.scores = softmax_columns(part.forward(x));
  out.probs = Mat::Zero(kNumRegions, features.cols());
  for (int i = 0; i < num_parts(); ++i) {
    Mat q = softmax_columns(members[i].forward(x));
    out.probs += q * out.scores.row(i).asDiagonal();
    out.members.push_back(std::move(q));
  }
  return out;
}

template <typename S>
S DecoderStackT<S>::loss(const Mat& features, std::span<const int> regions, std::span<const int> parts, S w_part,
                         S w_occ, DecoderStackT* grad) const {
  const Eigen::Index n = features.cols();
  if (static_cast<Eigen::Index>(regions.size()) != n || static_cast<Eigen::Index>(parts.size()) != n) {
    throw LengthMismatch("label arrays do not match the feature batch");
  }
  const Mat x = standardize<S>(features, input_mean, input_scale);
  typename Mlp<S>::Cache part_cache;
  const Mat scores = softmax_columns(part.forward(x, grad ? &part_cache : nullptr));
  std::vector<typename Mlp<S>::Cache> caches(members.size());
  std::vector<Mat> q(members.size());
  Mat probs = Mat::Zero(kNumRegions, n);
  for (int i = 0; i < num_parts(); ++i) {
    q[i] = softmax_columns(members[i].forward(x, grad ? &caches[i] : nullptr));
    probs += q[i] * scores.row(i).asDiagonal();
  }
  constexpr S kFloor = S(1e-12);
  S part_loss = 0, occ_loss = 0;
  for (Eigen::Index c = 0; c < n; ++c) {
    part_loss -= std::log(std::max(scores(parts[c], c), kFloor));
    occ_loss -= std::log(std::max(probs(regions[c], c), kFloor));
  }
  const S inv_n = S(1) / static_cast<S>(n);
  const S total = w_part * part_loss * inv_n + w_occ * occ_loss * inv_n;
  if (!grad) return total;

  grad->set_zero();
  Mat d_probs = Mat::Zero(kNumRegions, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    d_probs(regions[c], c) = -w_occ * inv_n / std::max(probs(regions[c], c), kFloor);
  }
  Mat d_scores(num_parts(), n);
  for (int i = 0; i < num_parts(); ++i) {
    d_scores.row(i) = q[i].cwiseProduct(d_probs).colwise().sum();
    const Mat d_q = d_probs * scores.row(i).asDiagonal();
    members[i].backward(caches[i], softmax_backward<S>(q[i], d_q), grad->members[i]);
  }
  Mat d_logits = softmax_backward<S>(scores, d_scores);
  d_logits += w_part * inv_n * scores;
  for (Eigen::Index c = 0; c < n; ++c) d_logits(parts[c], c) -= w_part * inv_n;
  part.backward(part_cache, d_logits, grad->part);
  return total;
}

template <typename S>
std::vector<std::pair<S*, std::size_t>> DecoderStackT<S>::tensors() {
  std::vector<std::pair<S*, std::size_t>> out;
  auto push = [&](S* p, std::size_t n) { out.emplace_back(p, n); };
  part.for_each_tensor(push);
  for (auto& m : members) m.for_each_tensor(push);
  return out;
}

template <typename S>
bool DecoderStackT<S>::all_finite() const {
  if (!part.all_finite() || !input_mean.allFinite() || !input_scale.allFinite()) return false;
  for (const auto& m : members) {
    if (!m.all_finite()) return false;
  }
  return true;
}

template <typename S>
void DecoderStackT<S>::set_zero() {
  part.set_zero();
  for (auto& m : members) m.set_zero();
}

template struct DecoderStackT<float>;
template struct DecoderStackT<double>;

std::vector<float> part_scores(const DecoderStack& stack, std::span<const float> features) {
  if (features.size() != kDecoderInputDim) throw LengthMismatch("decoder input has the wrong length");
  const Eigen::MatrixXf f = Eigen::Map<const Eigen::MatrixXf>(features.data(), kDecoderInputDim, 1);
  const auto out = stack.evaluate(f);
  return {out.scores.data(), out.scores.data() + out.scores.size()};
}

int part_label(std::span<const float> scores) {
  if (scores.empty()) throw InvalidParams("empty score vector");
  return argmax_lowest(scores.begin(), scores.end());
}

Occupancy occupancy(const DecoderStack& stack, std::span<const float> features, std::span<const float> scores) {
  if (static_cast<int>(scores.size()) != stack.num_parts()) throw LengthMismatch("score vector has the wrong length");
  if (features.size() != kDecoderInputDim) throw LengthMismatch("decoder input has the wrong length");
  const Eigen::MatrixXf f = Eigen::Map<const Eigen::MatrixXf>(features.data(), kDecoderInputDim, 1);
  const Eigen::MatrixXf x = standardize<float>(f, stack.input_mean, stack.input_scale);
  std::array<double, 3> p{0, 0, 0};
  for (int i = 0; i < stack.num_parts(); ++i) {
    const Eigen::MatrixXf q = softmax_columns(stack.members[i].forward(x));
    for (int c = 0; c < kNumRegions; ++c) p[c] += static_cast<double>(scores[i]) * q(c, 0);
  }
  Occupancy o;
  for (int c = 0; c < kNumRegions; ++c) o.probs[c] = static_cast<float>(p[c]);
  o.region = argmax_lowest(o.probs.begin(), o.probs.end());
  return o;
}

std::array<double, 3> blend_probabilities(std::span<const double> scores, std::span<const std::array<double, 3>> members) {
  if (scores.size() != members.size()) throw LengthMismatch("one score per member is required");
  std::array<double, 3> p{0, 0, 0};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (int c = 0; c < 3; ++c) p[c] += scores[i] * members[i][c];
  }
  return p;
}

// --- training data ----------------------------------------------------------------------

void decoder_input(const FeatureGrid& grid, const Vec3& normalized, float* out) {
  grid.query(normalized, out);
  for (int a = 0; a < 3; ++a) out[kFeatureDim + a] = static_cast<float>(normalized[a]);
}

void TrainingData::append(const TrainingData& other) {
  const Eigen::Index n0 = features.cols();
  Eigen::MatrixXf merged(other.features.rows(), n0 + other.features.cols());
  if (n0 > 0) merged.leftCols(n0) = features;
  merged.rightCols(other.features.cols()) = other.features;
  features = std::move(merged);
  regions.insert(regions.end(), other.regions.begin(), other.regions.end());
  parts.insert(parts.end(), other.parts.begin(), other.parts.end());
  subject.insert(subject.end(), other.subject.begin(), other.subject.end());
}

TrainingData make_training_data(const PointCloud& input, std::span<const Vec3> queries, std::span<const int> regions,
                                std::span<const int> parts, int subject_index, int base_res) {
  if (regions.size() != queries.size() || parts.size() != queries.size()) {
    throw LengthMismatch("query labels do not match the query count");
  }
  const NormalizedCloud nc = normalize_to_box(input, kDefaultBoxSize);
  const FeatureGrid grid = FeatureGrid::encode(nc.cloud, base_res);
  TrainingData d;
  d.features.resize(kDecoderInputDim, static_cast<Eigen::Index>(queries.size()));
  for (std::size_t k = 0; k < queries.size(); ++k) {
    decoder_input(grid, nc.transform.apply(queries[k]), d.features.col(static_cast<Eigen::Index>(k)).data());
  }
  d.regions.assign(regions.begin(), regions.end());
  d.parts.assign(parts.begin(), parts.end());
  d.subject.assign(queries.size(), subject_index);
  return d;
}

TrainingData load_training_data(const std::vector<fs::path>& subject_dirs, const BodyModel& model, int base_res) {
  TrainingData all;
  std::vector<TrainingData> pieces;
  std::size_t total = 0;
  for (std::size_t s = 0; s < subject_dirs.size(); ++s) {
    const SubjectFiles f = load_subject(subject_dirs[s], model);
    pieces.push_back(make_training_data(f.input, f.query_points, f.region_labels, f.part_labels, static_cast<int>(s),
                                        base_res));
    total += pieces.back().size();
  }
  all.features.resize(kDecoderInputDim, static_cast<Eigen::Index>(total));
  Eigen::Index col = 0;
  for (auto& p : pieces) {
    all.features.middleCols(col, p.features.cols()) = p.features;
    col += p.features.cols();
    all.regions.insert(all.regions.end(), p.regions.begin(), p.regions.end());
    all.parts.insert(all.parts.end(), p.parts.begin(), p.parts.end());
    all.subject.insert(all.subject.end(), p.subject.begin(), p.subject.end());
  }
  return all;
}

// --- training ---------------------------------------------------------------------------

namespace {

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr > 0) || cfg.batch <= 0 || cfg.epochs <= 0 || cfg.w_part < 0 || cfg.w_occ < 0 || cfg.part_hidden <= 0 ||
      cfg.member_hidden <= 0 || !(cfg.lr_decay > 0 && cfg.lr_decay <= 1)) {
    throw InvalidParams("training config needs positive rates and sizes");
  }
}

void feature_statistics(const Eigen::MatrixXf& f, Eigen::VectorXf& mean, Eigen::VectorXf& scale) {
  mean.resize(f.rows());
  scale.resize(f.rows());
  const double n = static_cast<double>(std::max<Eigen::Index>(f.cols(), 1));
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    double s = 0, s2 = 0;
    for (Eigen::Index c = 0; c < f.cols(); ++c) s += f(r, c);
    const double m = s / n;
    for (Eigen::Index c = 0; c < f.cols(); ++c) s2 += (f(r, c) - m) * (f(r, c) - m);
    const double sd = std::sqrt(s2 / n);
    mean[r] = static_cast<float>(m);
    scale[r] = static_cast<float>(sd > 1e-6 ? 1.0 / sd : 1.0);
  }
}

double cosine_lr(const TrainConfig& cfg, long step, long total) {
  const double t = total > 1 ? static_cast<double>(step) / static_cast<double>(total - 1) : 1.0;
  return cfg.lr * (cfg.lr_decay + (1.0 - cfg.lr_decay) * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
}

Eigen::MatrixXf gather(const Eigen::MatrixXf& f, std::span<const std::size_t> idx) {
  Eigen::MatrixXf out(f.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = f.col(static_cast<Eigen::Index>(idx[k]));
  return out;
}

}  // namespace

TrainResult train(const TrainingData& data, const TrainConfig& cfg, const std::function<void(int, double)>& on_epoch) {
  validate(cfg);
  if (data.size() == 0) throw DegenerateInput("no training data");
  TrainResult res;
  res.stack = DecoderStack::random(cfg.seed, kNumParts, cfg.part_hidden, cfg.member_hidden);
  feature_statistics(data.features, res.stack.input_mean, res.stack.input_scale);
  DecoderStack grad = DecoderStack::zeros(kNumParts, cfg.part_hidden, cfg.member_hidden);

  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(sub_seed(cfg.seed, "shuffle"));
  Adam<float> adam(cfg.lr);
  const std::size_t batch = static_cast<std::size_t>(cfg.batch);
  const long steps_per_epoch = static_cast<long>((data.size() + batch - 1) / batch);
  const long total_steps = steps_per_epoch * cfg.epochs;
  long step = 0;
  std::vector<int> r(batch), p(batch);
  const auto params = res.stack.tensors();
  const auto grads = grad.tensors();
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(perm.begin(), perm.end(), rng);
    double sum = 0;
    std::size_t seen = 0;
    for (std::size_t b0 = 0; b0 < perm.size(); b0 += batch) {
      const std::size_t nb = std::min(batch, perm.size() - b0);
      const std::span<const std::size_t> idx(perm.data() + b0, nb);
      const Eigen::MatrixXf x = gather(data.features, idx);
      r.resize(nb);
      p.resize(nb);
      for (std::size_t k = 0; k < nb; ++k) {
        r[k] = data.regions[idx[k]];
        p[k] = data.parts[idx[k]];
      }
      const float l = res.stack.loss(x, r, p, static_cast<float>(cfg.w_part), static_cast<float>(cfg.w_occ), &grad);
      if (!std::isfinite(l)) throw TrainingDiverged("loss became non-finite in epoch " + std::to_string(e + 1));
      adam.set_learning_rate(cosine_lr(cfg, step++, total_steps));
      adam.step(params, grads);
      sum += static_cast<double>(l) * static_cast<double>(nb);
      seen += nb;
    }
    const double mean = sum / static_cast<double>(seen);
    res.epoch_loss.push_back(mean);
    if (!res.stack.all_finite()) throw TrainingDiverged("weights became non-finite in epoch " + std::to_string(e + 1));
    if (on_epoch) on_epoch(e + 1, mean);
  }
  return res;
}

double AccuracyReport::min_region_by_part() const {
  double m = 1.0;
  for (int i = 0; i < kNumParts; ++i) {
    if (count_by_part[i] > 0) m = std::min(m, region_by_part[i]);
  }
  return m;
}

namespace {

template <typename RegionFn>
AccuracyReport accumulate_accuracy(const TrainingData& data, RegionFn&& fn) {
  AccuracyReport rep;
  std::array<std::size_t, kNumParts> correct_by_part{};
  std::size_t region_ok = 0, part_ok = 0;
  std::vector<int> region_pred, part_pred;
  for (std::size_t b0 = 0; b0 < data.size(); b0 += kInferenceChunk) {
    const std::size_t nb = std::min(kInferenceChunk, data.size() - b0);
    fn(data.features.middleCols(static_cast<Eigen::Index>(b0), static_cast<Eigen::Index>(nb)), region_pred, part_pred);
    for (std::size_t k = 0; k < nb; ++k) {
      const int gp = data.parts[b0 + k];
      const bool ok = region_pred[k] == data.regions[b0 + k];
      region_ok += ok;
      if (!part_pred.empty()) part_ok += part_pred[k] == gp;
      if (gp >= 0 && gp < kNumParts) {
        ++rep.count_by_part[gp];
        correct_by_part[gp] += ok;
      }
    }
  }
  const double n = static_cast<double>(std::max<std::size_t>(data.size(), 1));
  rep.region = static_cast<double>(region_ok) / n;
  rep.part = static_cast<double>(part_ok) / n;
  for (int i = 0; i < kNumParts; ++i) {
    rep.region_by_part[i] =
        rep.count_by_part[i] ? static_cast<double>(correct_by_part[i]) / static_cast<double>(rep.count_by_part[i]) : 0.0;
  }
  return rep;
}

}  // namespace

AccuracyReport evaluate_accuracy(const DecoderStack& stack, const TrainingData& data) {
  return accumulate_accuracy(data, [&](const Eigen::MatrixXf& f, std::vector<int>& reg, std::vector<int>& part) {
    const auto out = stack.evaluate(f);
    reg.resize(f.cols());
    part.resize(f.cols());
    for (Eigen::Index c = 0; c < f.cols(); ++c) {
      reg[c] = argmax_lowest(out.probs.col(c).data(), out.probs.col(c).data() + kNumRegions);
      part[c] = argmax_lowest(out.scores.col(c).data(), out.scores.col(c).data() + out.scores.rows());
    }
  });
}

// --- single classifiers (baselines) -----------------------------------------------------

Eigen::MatrixXf Classifier::probabilities(const Eigen::MatrixXf& features) const {
  return softmax_columns(net.forward(standardize<float>(features, input_mean, input_scale)));
}

Classifier train_classifier(const Eigen::MatrixXf& features, std::span<const int> labels, int classes,
                            const std::vector<int>& hidden, const TrainConfig& cfg) {
  validate(cfg);
  if (features.cols() == 0 || static_cast<Eigen::Index>(labels.size()) != features.cols()) {
    throw LengthMismatch("classifier labels do not match the features");
  }
  std::vector<int> sizes{kDecoderInputDim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(classes);
  Classifier c;
  c.net = Mlp<float>(sizes);
  std::mt19937_64 init_rng(cfg.seed);
  c.net.init(init_rng);
  feature_statistics(features, c.input_mean, c.input_scale);
  Mlp<float> grad(sizes);
  std::vector<std::pair<float*, std::size_t>> params, grads;
  c.net.for_each_tensor([&](float* p, std::size_t n) { params.emplace_back(p, n); });
  grad.for_each_tensor([&](float* p, std::size_t n) { grads.emplace_back(p, n); });

  const std::size_t n = labels.size(), batch = static_cast<std::size_t>(cfg.batch);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(sub_seed(cfg.seed, "shuffle"));
  Adam<float> adam(cfg.lr);
  const long total_steps = static_cast<long>((n + batch - 1) / batch) * cfg.epochs;
  long step = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t b0 = 0; b0 < n; b0 += batch) {
      const std::size_t nb = std::min(batch, n - b0);
      const std::span<const std::size_t> idx(perm.data() + b0, nb);
      const Eigen::MatrixXf x = standardize<float>(gather(features, idx), c.input_mean, c.input_scale);
      Mlp<float>::Cache cache;
      const Eigen::MatrixXf probs = softmax_columns(c.net.forward(x, &cache));
      Eigen::MatrixXf d = probs / static_cast<float>(nb);
      float loss = 0;
      for (std::size_t k = 0; k < nb; ++k) {
        const int y = labels[idx[k]];
        d(y, static_cast<Eigen::Index>(k)) -= 1.0f / static_cast<float>(nb);
        loss -= std::log(std::max(probs(y, static_cast<Eigen::Index>(k)), 1e-12f));
      }
      if (!std::isfinite(loss)) throw TrainingDiverged("classifier loss became non-finite");
      grad.set_zero();
      c.net.backward(cache, d, grad);
      adam.set_learning_rate(cosine_lr(cfg, step++, total_steps));
      adam.step(params, grads);
    }
  }
  return c;
}

AccuracyReport evaluate_accuracy(const Classifier& monolithic, const TrainingData& data) {
  return accumulate_accuracy(data, [&](const Eigen::MatrixXf& f, std::vector<int>& reg, std::vector<int>& part) {
    const Eigen::MatrixXf p = monolithic.probabilities(f);
    reg.resize(f.cols());
    part.clear();
    for (Eigen::Index c = 0; c < f.cols(); ++c) reg[c] = argmax_lowest(p.col(c).data(), p.col(c).data() + p.rows());
  });
}

// --- predictors -------------------------------------------------------------------------

NetworkPredictor::NetworkPredictor(const DecoderStack& stack, const PointCloud& metric_cloud, int base_res)
    : stack_(stack) {
  const NormalizedCloud nc = normalize_to_box(metric_cloud, kDefaultBoxSize);
  transform_ = nc.transform;
  grid_ = FeatureGrid::encode(nc.cloud, base_res);
}

void NetworkPredictor::predict(std::span<const Vec3> points, std::vector<std::array<float, 3>>& probs,
                               std::vector<int>* parts) const {
  probs.resize(points.size());
  if (parts) parts->resize(points.size());
  for (std::size_t b0 = 0; b0 < points.size(); b0 += kInferenceChunk) {
    const std::size_t nb = std::min(kInferenceChunk, points.size() - b0);
    Eigen::MatrixXf f(kDecoderInputDim, static_cast<Eigen::Index>(nb));
    for (std::size_t k = 0; k < nb; ++k) decoder_input(grid_, transform_.apply(points[b0 + k]), f.col(static_cast<Eigen::Index>(k)).data());
    const auto out = stack_.evaluate(f);
    for (std::size_t k = 0; k < nb; ++k) {
      const auto c = static_cast<Eigen::Index>(k);
      probs[b0 + k] = {out.probs(0, c), out.probs(1, c), out.probs(2, c)};
      if (parts) (*parts)[b0 + k] = argmax_lowest(out.scores.col(c).data(), out.scores.col(c).data() + out.scores.rows());
    }
  }
}

void OraclePredictor::predict(std::span<const Vec3> points, std::vector<std::array<float, 3>>& probs,
                              std::vector<int>* parts) const {
  probs.resize(points.size());
  if (parts) parts->resize(points.size());
#pragma omp parallel for schedule(dynamic, 1024)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(points.size()); ++k) {
    const int r = oracle_.region(points[k]);
    probs[k] = {0.0f, 0.0f, 0.0f};
    probs[k][r] = 1.0f;
    if (parts) (*parts)[k] = oracle_.part(points[k]);
  }
}

SeparatePredictor::SeparatePredictor(const Classifier& inner, const Classifier& outer, const PointCloud& metric_cloud,
                                     int base_res)
    : inner_(inner), outer_(outer) {
  const NormalizedCloud nc = normalize_to_box(metric_cloud, kDefaultBoxSize);
  transform_ = nc.transform;
  grid_ = FeatureGrid::encode(nc.cloud, base_res);
}

void SeparatePredictor::predict(std::span<const Vec3> points, std::vector<std::array<float, 3>>& probs,
                                std::vector<int>* parts) const {
  probs.resize(points.size());
  if (parts) parts->assign(points.size(), 0);
  for (std::size_t b0 = 0; b0 < points.size(); b0 += kInferenceChunk) {
    const std::size_t nb = std::min(kInferenceChunk, points.size() - b0);
    Eigen::MatrixXf f(kDecoderInputDim, static_cast<Eigen::Index>(nb));
    for (std::size_t k = 0; k < nb; ++k) decoder_input(grid_, transform_.apply(points[b0 + k]), f.col(static_cast<Eigen::Index>(k)).data());
    const Eigen::MatrixXf pin = inner_.probabilities(f);
    const Eigen::MatrixXf pout = outer_.probabilities(f);
    for (std::size_t k = 0; k < nb; ++k) {
      const auto c = static_cast<Eigen::Index>(k);
      const float a = pin(1, c), b = pout(1, c);
      probs[b0 + k] = {a, b - a, 1.0f - b};
    }
  }
}

// --- reconstruction ---------------------------------------------------------------------

Reconstruction reconstruct(const RegionPredictor& predictor, const NormalizationTransform& transform, int res) {
  if (res < 2) throw InvalidParams("lattice resolution must be at least 2");
  constexpr int kPad = 2;
  const double box = kDefaultBoxSize, cell = box / res;
  const int n = res + 2 * kPad;
  const Vec3 origin = Vec3::Constant(-0.5 * box - kPad * cell);
  ScalarGrid inner_field({n, n, n}, origin, cell), outer_field({n, n, n}, origin, cell);
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(n) * n);
  std::vector<std::array<float, 3>> probs;
  for (int k = 0; k < n; ++k) {
    pts.clear();
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) pts.push_back(transform.invert(inner_field.cell_center(i, j, k)));
    }
    predictor.predict(pts, probs, nullptr);
    std::size_t q = 0;
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i, ++q) {
        inner_field.at(i, j, k) = probs[q][0];
        outer_field.at(i, j, k) = probs[q][0] + probs[q][1];
      }
    }
  }
  auto extract = [&](const ScalarGrid& field) {
    const TriMesh m = marching_cubes(field, 0.5f, InsideSide::Above);
    std::vector<Vec3> v(m.vertices().size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = transform.invert(m.vertices()[i]);
    std::vector<int> labels;
    predictor.predict(v, probs, &labels);
    return TriMesh(std::move(v), m.faces(), std::move(labels));
  };
  Reconstruction r;
  r.outer = extract(outer_field);
  r.inner = extract(inner_field);
  return r;
}

Reconstruction reconstruct(const DecoderStack& stack, const PointCloud& metric_cloud, int res) {
  const NetworkPredictor pred(stack, metric_cloud);
  return reconstruct(pred, pred.transform(), res);
}

// --- weights files ----------------------------------------------------------------------

namespace {

io::BlobSection matrix_section(const Eigen::MatrixXf& m) {
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  return io::f32_section({static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
                         std::vector<float>(rm.data(), rm.data() + rm.size()));
}

io::BlobSection vector_section(const Eigen::VectorXf& v) {
  return io::f32_section({static_cast<std::uint32_t>(v.size())}, std::vector<float>(v.data(), v.data() + v.size()));
}

Eigen::MatrixXf read_matrix(const io::Blob& blob, const std::string& name, int rows, int cols) {
  const auto& s = io::section(blob, name);
  if (s.shape != std::vector<std::uint32_t>{static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(cols)}) {
    throw FormatError("weights section '" + name + "' has an unexpected shape");
  }
  return Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(s.f32.data(), rows, cols);
}

Eigen::VectorXf read_vector(const io::Blob& blob, const std::string& name, int size) {
  const auto& s = io::section(blob, name);
  if (s.shape != std::vector<std::uint32_t>{static_cast<std::uint32_t>(size)}) {
    throw FormatError("weights section '" + name + "' has an unexpected shape");
  }
  return Eigen::Map<const Eigen::VectorXf>(s.f32.data(), size);
}

void put_mlp(io::Blob& blob, const std::string& prefix, const Mlp<float>& m) {
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    blob[prefix + ".w" + std::to_string(l)] = matrix_section(m.weights[l]);
    blob[prefix + ".b" + std::to_string(l)] = vector_section(m.biases[l]);
  }
}

Mlp<float> get_mlp(const io::Blob& blob, const std::string& prefix, const std::vector<int>& sizes) {
  Mlp<float> m(sizes);
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    m.weights[l] = read_matrix(blob, prefix + ".w" + std::to_string(l), sizes[l + 1], sizes[l]);
    m.biases[l] = read_vector(blob, prefix + ".b" + std::to_string(l), sizes[l + 1]);
  }
  return m;
}

fs::path blob_path_for(const fs::path& path) {
  fs::path b = path;
  b += ".bin";
  return b;
}

json parse_manifest(const fs::path& path, const char* format) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!j.contains("format") || j["format"] != format) throw FormatError(path.string() + ": not a " + format + " file");
  return j;
}

}  // namespace

void save_stack(const fs::path& path, const DecoderStack& stack, const TrainConfig& cfg) {
  io::Blob blob;
  blob["input_mean"] = vector_section(stack.input_mean);
  blob["input_scale"] = vector_section(stack.input_scale);
  put_mlp(blob, "part", stack.part);
  for (int i = 0; i < stack.num_parts(); ++i) put_mlp(blob, "member" + std::to_string(i), stack.members[i]);
  const fs::path bp = blob_path_for(path);
  json j;
  j["format"] = "dilate-ipnet";
  j["version"] = 1;
  j["num_parts"] = stack.num_parts();
  j["feature_dim"] = kDecoderInputDim;
  j["part_layers"] = stack.part.sizes();
  j["member_layers"] = stack.members.front().sizes();
  j["seed"] = cfg.seed;
  j["train"] = {{"lr", cfg.lr},         {"batch", cfg.batch},   {"epochs", cfg.epochs},
                {"w_part", cfg.w_part}, {"w_occ", cfg.w_occ},   {"lr_decay", cfg.lr_decay},
                {"part_hidden", cfg.part_hidden}, {"member_hidden", cfg.member_hidden}};
  j["blob"] = bp.filename().string();
  io::write_blob(bp, blob);
  io::write_text(path, j.dump(2) + "\n");
}

DecoderStack load_stack(const fs::path& path) {
  const json j = parse_manifest(path, "dilate-ipnet");
  DecoderStack s;
  try {
    if (j.at("feature_dim").get<int>() != kDecoderInputDim) throw FormatError(path.string() + ": feature dimension mismatch");
    const int parts = j.at("num_parts");
    const auto part_layers = j.at("part_layers").get<std::vector<int>>();
    const auto member_layers = j.at("member_layers").get<std::vector<int>>();
    const io::Blob blob = io::read_blob(path.parent_path() / j.at("blob").get<std::string>());
    s.input_mean = read_vector(blob, "input_mean", kDecoderInputDim);
    s.input_scale = read_vector(blob, "input_scale", kDecoderInputDim);
    s.part = get_mlp(blob, "part", part_layers);
    for (int i = 0; i < parts; ++i) s.members.push_back(get_mlp(blob, "member" + std::to_string(i), member_layers));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!s.all_finite()) throw FormatError(path.string() + ": non-finite weights");
  return s;
}

void save_classifier(const fs::path& path, const Classifier& c) {
  io::Blob blob;
  blob["input_mean"] = vector_section(c.input_mean);
  blob["input_scale"] = vector_section(c.input_scale);
  put_mlp(blob, "net", c.net);
  const fs::path bp = blob_path_for(path);
  json j;
  j["format"] = "dilate-classifier";
  j["version"] = 1;
  j["layers"] = c.net.sizes();
  j["blob"] = bp.filename().string();
  io::write_blob(bp, blob);
  io::write_text(path, j.dump(2) + "\n");
}

Classifier load_classifier(const fs::path& path) {
  const json j = parse_manifest(path, "dilate-classifier");
  Classifier c;
  try {
    const auto layers = j.at("layers").get<std::vector<int>>();
    const io::Blob blob = io::read_blob(path.parent_path() / j.at("blob").get<std::string>());
    c.input_mean = read_vector(blob, "input_mean", layers.front());
    c.input_scale = read_vector(blob, "input_scale", layers.front());
    c.net = get_mlp(blob, "net", layers);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return c;
}

}  // namespace dilate
