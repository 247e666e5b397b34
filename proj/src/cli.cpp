#include "dilate/cli.hpp"

#include "dilate/ablation.hpp"
#include "dilate/io.hpp"
#include "dilate/metrics.hpp"
#include "dilate/occnet.hpp"
#include "dilate/registration.hpp"
#include "dilate/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

namespace dilate::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct Profile {
  int count = 50;
  std::size_t queries = 20000;
  int epochs = 20;
  int res = 128;
  int cases = 10;
  int train_subjects = 40;
};

Profile profile_defaults(const std::string& name) {
  Profile p;
  if (name == "ci") {
    p.count = 6;
    p.queries = 5000;
    p.epochs = 4;
    p.res = 64;
    p.cases = 3;
    p.train_subjects = 6;
  } else if (name == "full") {
    p.count = 120;
    p.epochs = 40;
    p.res = 192;
    p.train_subjects = 100;
  } else if (name != "desk") {
    throw CLI::ValidationError("--profile", "must be one of ci, desk, full");
  }
  return p;
}

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = kDigits[v & 15];
  return s;
}

std::uint64_t hash_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot read " + p.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

/// Records what a subcommand read and wrote; appended to `<out dir>/manifest.json`.
class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& args) : command_(std::move(command)) {
    line_ = "dilate";
    for (const auto& a : args) line_ += " " + a;
  }

  void set_config(ordered_json cfg) { config_ = std::move(cfg); }
  void seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }
  void input(const fs::path& p) {
    if (fs::is_regular_file(p)) inputs_[p.string()] = hex64(hash_file(p));
  }
  void artifact(const fs::path& p) { artifacts_.push_back(p); }
  void timing(const std::string& name, double seconds) { timings_[name] = seconds; }
  void extra(const std::string& key, ordered_json value) { extra_[key] = std::move(value); }

  void write(const fs::path& dir) const {
    fs::create_directories(dir);
    const fs::path path = dir / "manifest.json";
    ordered_json doc;
    if (fs::exists(path)) {
      try {
        doc = ordered_json::parse(io::read_text(path));
      } catch (const nlohmann::json::exception&) {
        doc = ordered_json();
      }
    }
    if (!doc.is_object() || doc.value("format", "") != "dilate-manifest") {
      doc = ordered_json{{"format", "dilate-manifest"}, {"runs", ordered_json::array()}};
    }
    ordered_json run;
    run["command"] = command_;
    run["command_line"] = line_;
    run["library_version"] = std::string(kVersion);
    const std::string cfg = config_.dump();
    run["config"] = config_;
    run["config_hash"] = hex64(fnv1a64(cfg));
    run["seeds"] = seeds_;
    run["inputs"] = inputs_;
    ordered_json arts = ordered_json::object();
    for (const auto& a : artifacts_) {
      if (fs::is_directory(a)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(a)) {
          if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) arts[fs::relative(f, dir).generic_string()] = hex64(hash_file(f));
      } else if (fs::is_regular_file(a)) {
        arts[fs::relative(a, dir).generic_string()] = hex64(hash_file(a));
      }
    }
    run["artifacts"] = arts;
    run["timings_s"] = timings_;
    for (const auto& [k, v] : extra_.items()) run[k] = v;
    doc["runs"].push_back(run);
    io::write_text(path, doc.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::string line_;
  ordered_json config_ = ordered_json::object();
  ordered_json seeds_ = ordered_json::object();
  ordered_json inputs_ = ordered_json::object();
  std::vector<fs::path> artifacts_;
  ordered_json timings_ = ordered_json::object();
  ordered_json extra_ = ordered_json::object();
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

fs::path prefix_dir(const std::string& prefix) {
  const fs::path p(prefix);
  return p.has_parent_path() ? p.parent_path() : fs::path(".");
}

fs::path with_suffix(const std::string& prefix, const std::string& suffix) { return fs::path(prefix + suffix); }

fs::path require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw FormatError("no such file: " + p.string());
  return p;
}

BodyModel model_for(const std::string& model_path, const fs::path& fallback_dir) {
  if (!model_path.empty()) return load_model(require_file(model_path));
  const fs::path guess = fallback_dir / "body.json";
  if (fs::is_regular_file(guess)) return load_model(guess);
  spdlog::info("no body.json found next to the data; using the built-in model");
  return build_default_model();
}

std::vector<Vec3> load_pose(const fs::path& path) {
  const ordered_json j = ordered_json::parse(io::read_text(require_file(path)), nullptr, false);
  if (j.is_discarded()) throw FormatError(path.string() + ": invalid JSON");
  const ordered_json& arr = j.is_object() ? j.value("pose", ordered_json()) : j;
  if (!arr.is_array()) throw FormatError(path.string() + ": expected a pose array");
  std::vector<Vec3> pose;
  for (const auto& w : arr) {
    if (!w.is_array() || w.size() != 3) throw FormatError(path.string() + ": each joint needs 3 values");
    pose.emplace_back(w[0].get<double>(), w[1].get<double>(), w[2].get<double>());
  }
  return pose;
}

void write_mesh_with_labels(const std::string& prefix, const std::string& name, const TriMesh& mesh, Manifest& m) {
  const fs::path obj = with_suffix(prefix, "_" + name + ".obj");
  io::write_obj(obj, mesh);
  m.artifact(obj);
  if (mesh.has_labels()) {
    const fs::path labels = with_suffix(prefix, "_" + name + "_labels.txt");
    io::write_labels(labels, mesh.vertex_labels());
    m.artifact(labels);
  }
}

TriMesh read_mesh_with_labels(const std::string& prefix, const std::string& name) {
  TriMesh mesh = io::read_obj(require_file(with_suffix(prefix, "_" + name + ".obj")));
  const fs::path labels = with_suffix(prefix, "_" + name + "_labels.txt");
  if (fs::is_regular_file(labels)) mesh = mesh.with_labels(io::read_labels(labels));
  return mesh;
}

/// Flat option values as given or defaulted, for the manifest and its hash.
ordered_json resolved_options(const CLI::App& app) {
  ordered_json out = ordered_json::object();
  for (const CLI::Option* o : app.get_options()) {
    const std::string name = o->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    if (o->get_expected_max() == 0) {
      out[name] = o->count() > 0;
    } else if (!o->results().empty()) {
      out[name] = o->results().back();
    } else {
      out[name] = o->get_default_str();
    }
  }
  return out;
}

// --- subcommands --------------------------------------------------------------------------

struct Global {
  std::string config;
  std::string profile = "desk";
  int threads = 0;
  std::string log = "info";
};

struct GenDataArgs {
  int count = 0;
  std::uint64_t seed = 0;
  bool single_view = false;
  std::size_t points = 5000;
  std::size_t queries = 0;
  std::string out;
};

void cmd_gen_data(const GenDataArgs& a, Manifest& m) {
  Stopwatch sw;
  DatasetConfig cfg;
  cfg.count = a.count;
  cfg.seed = sub_seed(a.seed, "data");
  cfg.single_view = a.single_view;
  cfg.query.n_input = a.points;
  cfg.query.n_query = a.queries;
  m.seed("seed", a.seed);
  m.seed("data", cfg.seed);
  const BodyModel model = build_default_model();
  generate_dataset(model, cfg, a.out);
  m.artifact(fs::path(a.out) / "body.json");
  m.artifact(fs::path(a.out) / "body.bin");
  for (const auto& d : list_subjects(a.out)) m.artifact(d);
  m.timing("total", sw.seconds());
  m.write(a.out);
}

struct TrainArgs {
  std::string data;
  std::string model;
  int epochs = 0;
  double lr = 2e-3;
  int batch = 2048;
  std::uint64_t seed = 0;
  int part_hidden = 64;
  int member_hidden = 32;
  double w_part = 1.0;
  int holdout = 0;
  std::string out;
};

void cmd_train(const TrainArgs& a, Manifest& m) {
  Stopwatch sw;
  const BodyModel model = model_for(a.model, a.data);
  auto dirs = list_subjects(a.data);
  if (dirs.empty()) throw DegenerateInput("no subject directories under " + a.data);
  if (a.holdout < 0 || a.holdout >= static_cast<int>(dirs.size())) {
    throw InvalidParams("--holdout must leave at least one training subject");
  }
  const std::vector<fs::path> held(dirs.end() - a.holdout, dirs.end());
  dirs.resize(dirs.size() - static_cast<std::size_t>(a.holdout));
  for (const auto& d : dirs) {
    for (const char* f : {"input.xyz", "queries.xyz"}) m.input(d / f);
  }
  const TrainingData data = load_training_data(dirs, model);
  spdlog::info("training on {} queries from {} subjects", data.size(), dirs.size());
  m.timing("load", sw.seconds());

  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.lr = a.lr;
  cfg.batch = a.batch;
  cfg.seed = sub_seed(a.seed, "train");
  cfg.part_hidden = a.part_hidden;
  cfg.member_hidden = a.member_hidden;
  cfg.w_part = a.w_part;
  m.seed("seed", a.seed);
  m.seed("train", cfg.seed);
  const TrainResult res = train(data, cfg, [](int e, double loss) { spdlog::info("epoch {} loss {:.6f}", e, loss); });
  m.timing("train", sw.seconds());

  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_stack(out, res.stack, cfg);
  m.artifact(out);
  m.artifact(fs::path(a.out + ".bin"));
  m.extra("epoch_loss", res.epoch_loss);
  if (!held.empty()) {
    const AccuracyReport acc = evaluate_accuracy(res.stack, load_training_data(held, model));
    spdlog::info("held-out region accuracy {:.4f}, part accuracy {:.4f}", acc.region, acc.part);
    m.extra("holdout_accuracy", {{"subjects", held.size()}, {"region", acc.region}, {"part", acc.part}});
  }
  m.timing("total", sw.seconds());
  m.write(out.has_parent_path() ? out.parent_path() : fs::path("."));
}

struct ReconstructArgs {
  std::string weights;
  std::string oracle;
  std::string model;
  std::string cloud;
  int res = 0;
  std::string out_prefix;
};

void cmd_reconstruct(const ReconstructArgs& a, Manifest& m) {
  Stopwatch sw;
  const PointCloud cloud = io::read_xyz(require_file(a.cloud));
  m.input(a.cloud);
  Reconstruction rec;
  if (!a.oracle.empty()) {
    const fs::path dir(a.oracle);
    const BodyModel model = model_for(a.model, dir.parent_path());
    const SubjectFiles gt = load_subject(dir, model);
    const OraclePredictor oracle(gt.inner, gt.outer);
    rec = reconstruct(oracle, normalize_to_box(cloud, kDefaultBoxSize).transform, a.res);
  } else {
    m.input(a.weights);
    const DecoderStack stack = load_stack(require_file(a.weights));
    rec = reconstruct(stack, cloud, a.res);
  }
  write_mesh_with_labels(a.out_prefix, "outer", rec.outer, m);
  write_mesh_with_labels(a.out_prefix, "inner", rec.inner, m);
  m.timing("total", sw.seconds());
  m.write(prefix_dir(a.out_prefix));
}

struct RegisterArgs {
  std::string weights;
  std::string oracle;
  std::string cloud;
  std::string model;
  std::string target;
  std::string out_prefix;
  int res = 0;
  std::uint64_t seed = 0;
  std::size_t scan_samples = 5000;
  bool no_part_term = false;
  bool skip_inner = false;
  bool freeze_body = false;
};

void cmd_register(const RegisterArgs& a, Manifest& m) {
  Stopwatch sw;
  const BodyModel model = model_for(a.model, fs::path(a.cloud.empty() ? a.target : a.cloud).parent_path());
  if (!a.model.empty()) m.input(a.model);
  RegisterOptions opt;
  opt.resolution = a.res;
  opt.use_parts = !a.no_part_term;
  opt.skip_inner = a.skip_inner;
  opt.fit.freeze_body = a.freeze_body;
  const std::uint64_t fit_seed = sub_seed(a.seed, "fit");
  m.seed("seed", a.seed);
  m.seed("fit", fit_seed);

  std::optional<DecoderStack> stack;
  if (!a.weights.empty()) {
    m.input(a.weights);
    stack = load_stack(require_file(a.weights));
  }
  Registration r;
  if (!a.target.empty()) {
    if (!stack) throw InvalidParams("--target needs --weights");
    m.input(a.target);
    r = register_scan(io::read_obj(require_file(a.target)), *stack, model, opt, a.scan_samples, fit_seed);
  } else {
    if (a.cloud.empty()) throw InvalidParams("either --cloud or --target is required");
    m.input(a.cloud);
    const PointCloud cloud = io::read_xyz(require_file(a.cloud));
    if (!a.oracle.empty()) {
      const SubjectFiles gt = load_subject(a.oracle, model);
      const OraclePredictor oracle(gt.inner, gt.outer);
      r = register_prediction(oracle, normalize_to_box(cloud, kDefaultBoxSize).transform, model, opt);
    } else {
      if (!stack) throw InvalidParams("--weights or --oracle is required");
      r = register_cloud(cloud, *stack, model, opt);
    }
  }

  const fs::path params = with_suffix(a.out_prefix, "_params.json");
  fs::create_directories(prefix_dir(a.out_prefix));
  save_params(params, r.full.params);
  m.artifact(params);
  if (r.full.params.has_displacements()) m.artifact(fs::path(params).replace_extension(".disp.bin"));
  const fs::path mesh = with_suffix(a.out_prefix, "_mesh.obj");
  io::write_obj(mesh, r.fitted);
  m.artifact(mesh);
  const fs::path body = with_suffix(a.out_prefix, "_body.obj");
  io::write_obj(body, forward(model, r.body.params));
  m.artifact(body);
  std::vector<TraceRow> trace = r.body.trace;
  trace.insert(trace.end(), r.full.trace.begin(), r.full.trace.end());
  const fs::path csv = with_suffix(a.out_prefix, "_trace.csv");
  write_trace_csv(csv, trace);
  m.artifact(csv);
  write_mesh_with_labels(a.out_prefix, "inner", r.inner, m);
  write_mesh_with_labels(a.out_prefix, "outer", r.outer, m);
  m.extra("energy", {{"body", r.body.energy}, {"full", r.full.energy}});
  m.timing("total", sw.seconds());
  m.write(prefix_dir(a.out_prefix));
}

struct ReposeArgs {
  std::string model;
  std::string params;
  std::string pose;
  std::string out;
};

void cmd_repose(const ReposeArgs& a, Manifest& m) {
  Stopwatch sw;
  const BodyModel model = load_model(require_file(a.model));
  const BodyParams fitted = load_params(require_file(a.params));
  const std::vector<Vec3> pose = load_pose(a.pose);
  for (const auto& p : {a.model, a.params, a.pose}) m.input(p);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  io::write_obj(out, repose(model, fitted, pose));
  m.artifact(out);
  m.timing("total", sw.seconds());
  m.write(out.has_parent_path() ? out.parent_path() : fs::path("."));
}

struct EvalArgs {
  std::string pred_prefix;
  std::string gt_dir;
  std::string model;
  std::string weights;
  std::string report;
};

void cmd_eval(const EvalArgs& a, Manifest& m) {
  Stopwatch sw;
  const fs::path gt_dir(a.gt_dir);
  const BodyModel model = model_for(a.model, gt_dir.parent_path());
  const SubjectFiles gt = load_subject(gt_dir, model);
  EvalInputs in;
  in.fitted = io::read_obj(require_file(with_suffix(a.pred_prefix, "_mesh.obj")));
  m.input(with_suffix(a.pred_prefix, "_mesh.obj"));
  const fs::path body = with_suffix(a.pred_prefix, "_body.obj");
  if (fs::is_regular_file(body)) in.fitted_body = io::read_obj(body);
  if (fs::is_regular_file(with_suffix(a.pred_prefix, "_inner.obj")) &&
      fs::is_regular_file(with_suffix(a.pred_prefix, "_outer.obj"))) {
    in.inner = read_mesh_with_labels(a.pred_prefix, "inner");
    in.outer = read_mesh_with_labels(a.pred_prefix, "outer");
  }
  if (!a.weights.empty()) {
    m.input(a.weights);
    const DecoderStack stack = load_stack(require_file(a.weights));
    const NetworkPredictor pred(stack, gt.input);
    std::vector<std::array<float, 3>> probs;
    std::vector<int> parts;
    pred.predict(gt.query_points, probs, &parts);
    std::vector<int> regions(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
      regions[i] = static_cast<int>(std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin());
    }
    in.query_regions = std::move(regions);
    in.query_parts = std::move(parts);
  }
  const EvalReport report = evaluate(in, gt);
  const fs::path out(a.report);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  io::write_text(out, report.to_json());
  m.artifact(out);
  spdlog::info("v2v {:.3f} cm, bidirectional {:.3f} mm", report.v2v_cm, report.bidir_mm);
  m.timing("total", sw.seconds());
  m.write(out.has_parent_path() ? out.parent_path() : fs::path("."));
}

struct AblateArgs {
  std::string suite;
  std::string out;
  std::string weights;
  std::string single_weights;
  std::string data;
  std::uint64_t seed = 0;
  int cases = 0;
  int res = 0;
  int train_subjects = 0;
  std::size_t queries = 0;
  int epochs = 0;
};

void cmd_ablate(const AblateArgs& a, Manifest& m) {
  Stopwatch sw;
  const AblationSuite suite = parse_suite(a.suite);
  const BodyModel model = build_default_model();
  AblationConfig cfg;
  cfg.cases = a.cases;
  cfg.seed = sub_seed(a.seed, "fit");
  cfg.resolution = a.res;
  cfg.train_subjects = a.train_subjects;
  cfg.query.n_query = a.queries;
  cfg.train.epochs = a.epochs;
  cfg.train.seed = sub_seed(a.seed, "train");
  m.seed("seed", a.seed);
  m.seed("fit", cfg.seed);
  m.seed("train", cfg.train.seed);

  std::optional<TrainingData> data;
  auto training_data = [&]() -> const TrainingData& {
    if (!data) {
      if (!a.data.empty()) {
        data = load_training_data(list_subjects(a.data), model_for("", a.data));
      } else {
        spdlog::info("generating {} training subjects", cfg.train_subjects);
        data = ablation_training_data(model, cfg);
      }
    }
    return *data;
  };
  auto stack_from = [&](const std::string& path, bool single_view) -> DecoderStack {
    if (!path.empty()) {
      m.input(path);
      return load_stack(require_file(path));
    }
    spdlog::info("training a {} decoder stack", single_view ? "single-view" : "full-view");
    if (single_view) return train(ablation_training_data(model, cfg, true), cfg.train).stack;
    return train(training_data(), cfg.train).stack;
  };

  AblationReport report;
  switch (suite) {
    case AblationSuite::PartTerm:
      report = part_term_suite(model, cfg);
      break;
    case AblationSuite::SkipInner: {
      std::optional<DecoderStack> stack;
      if (!a.weights.empty()) stack = stack_from(a.weights, false);
      report = skip_inner_suite(model, stack ? &*stack : nullptr, cfg);
      break;
    }
    case AblationSuite::SingleView: {
      const DecoderStack full = stack_from(a.weights, false);
      const DecoderStack single = stack_from(a.single_weights, true);
      report = single_view_suite(model, full, single, cfg);
      break;
    }
    case AblationSuite::JointVsSeparate: {
      const DecoderStack joint = stack_from(a.weights, false);
      const auto [inner, outer] = train_separate_decoders(training_data(), cfg);
      report = joint_vs_separate_suite(model, joint, inner, outer, cfg);
      break;
    }
  }
  fs::create_directories(a.out);
  const fs::path csv = fs::path(a.out) / (std::string(suite_name(suite)) + ".csv");
  io::write_text(csv, report.to_csv());
  m.artifact(csv);
  m.timing("total", sw.seconds());
  m.write(a.out);
}

// --- argument plumbing ----------------------------------------------------------------------

std::string arg_value(const std::vector<std::string>& args, const std::string& flag) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == flag && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind(flag + "=", 0) == 0) return args[i].substr(flag.size() + 1);
  }
  return {};
}

bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args) {
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  }
  return false;
}

/// Config keys become `--key value` arguments unless the key was given on the command line.
std::vector<std::string> config_arguments(const ordered_json& cfg, const std::vector<std::string>& args) {
  std::vector<std::string> out;
  for (const auto& [key, value] : cfg.items()) {
    const std::string flag = "--" + key;
    if (key == "config" || has_flag(args, flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back(flag);
    } else if (value.is_string()) {
      out.insert(out.end(), {flag, value.get<std::string>()});
    } else if (value.is_number() || value.is_null()) {
      out.insert(out.end(), {flag, value.dump()});
    } else {
      throw CLI::ValidationError(flag, "config values must be scalars");
    }
  }
  return out;
}

void setup_logging(const std::string& level) {
  auto logger = spdlog::get("dilate");
  if (!logger) logger = spdlog::stderr_color_mt("dilate");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(level == "debug" ? spdlog::level::debug : spdlog::level::info);
}

}  // namespace

int run(const std::vector<std::string>& args_in) {
  std::vector<std::string> args = args_in;
  setup_logging("info");

  CLI::App app{"Double-layer body reconstruction and registration from point clouds", "dilate"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();

  Global g;
  std::string profile_name = "desk";
  try {
    const std::string cfg_path = arg_value(args, "--config");
    if (!cfg_path.empty()) {
      const ordered_json cfg = ordered_json::parse(io::read_text(cfg_path), nullptr, false);
      if (cfg.is_discarded() || !cfg.is_object()) throw CLI::ValidationError("--config", "expected a flat JSON object");
      // subcommand name stays first, config values follow it and fall through to globals
      static const std::vector<std::string> kCommands = {"gen-data", "train",   "reconstruct", "register",
                                                         "repose",   "eval",    "ablate"};
      auto sub = std::find_first_of(args.begin(), args.end(), kCommands.begin(), kCommands.end());
      const auto extra = config_arguments(cfg, args);
      if (sub == args.end()) {
        args.insert(args.end(), extra.begin(), extra.end());
      } else {
        args.insert(sub + 1, extra.begin(), extra.end());
      }
    }
    if (const std::string p = arg_value(args, "--profile"); !p.empty()) profile_name = p;
  } catch (const CLI::Error& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  Profile prof;
  try {
    prof = profile_defaults(profile_name);
  } catch (const CLI::Error& e) {
    std::cerr << "--profile: must be one of ci, desk, full\n";
    return kExitUsage;
  }

  app.add_option("--config", g.config, "JSON file with flat keys mirroring the flags");
  app.add_option("--profile", g.profile, "Scale of counts and resolutions")->check(CLI::IsMember({"ci", "desk", "full"}));
  app.add_option("--threads", g.threads, "Worker threads, 0 = auto")->check(CLI::NonNegativeNumber);
  app.add_option("--log", g.log, "Log level on stderr")->check(CLI::IsMember({"info", "debug"}));

  GenDataArgs gen{prof.count, 0, false, 5000, prof.queries, {}};
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic double-layer dataset");
  gen_cmd->add_option("--count", gen.count, "Subjects")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed, "Master seed");
  gen_cmd->add_flag("--single-view", gen.single_view, "Input clouds from one random view");
  gen_cmd->add_option("--points", gen.points, "Input points per subject")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--queries", gen.queries, "Labelled queries per subject")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  tr.epochs = prof.epochs;
  auto* tr_cmd = app.add_subcommand("train", "Train the decoder stack");
  tr_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  tr_cmd->add_option("--model", tr.model, "Body model JSON (default: <data>/body.json)");
  tr_cmd->add_option("--epochs", tr.epochs)->check(CLI::PositiveNumber);
  tr_cmd->add_option("--lr", tr.lr)->check(CLI::PositiveNumber);
  tr_cmd->add_option("--batch", tr.batch)->check(CLI::PositiveNumber);
  tr_cmd->add_option("--seed", tr.seed);
  tr_cmd->add_option("--part-hidden", tr.part_hidden)->check(CLI::PositiveNumber);
  tr_cmd->add_option("--member-hidden", tr.member_hidden)->check(CLI::PositiveNumber);
  tr_cmd->add_option("--w-part", tr.w_part)->check(CLI::NonNegativeNumber);
  tr_cmd->add_option("--holdout", tr.holdout, "Last N subjects held out for an accuracy report");
  tr_cmd->add_option("--out", tr.out, "Weights file")->required();

  ReconstructArgs rc;
  rc.res = prof.res;
  auto* rc_cmd = app.add_subcommand("reconstruct", "Reconstruct inner and outer surfaces from a cloud");
  auto* rc_w = rc_cmd->add_option("--weights", rc.weights);
  auto* rc_o = rc_cmd->add_option("--oracle", rc.oracle, "Subject directory; use its ground-truth labeler");
  rc_w->excludes(rc_o);
  rc_cmd->add_option("--model", rc.model);
  rc_cmd->add_option("--cloud", rc.cloud)->required();
  rc_cmd->add_option("--res", rc.res, "Lattice resolution")->check(CLI::Range(4, 512));
  rc_cmd->add_option("--out-prefix", rc.out_prefix)->required();

  RegisterArgs rg;
  rg.res = prof.res;
  auto* rg_cmd = app.add_subcommand("register", "Fit the body model to a cloud or scan");
  auto* rg_w = rg_cmd->add_option("--weights", rg.weights);
  auto* rg_o = rg_cmd->add_option("--oracle", rg.oracle, "Subject directory; use its ground-truth labeler");
  rg_w->excludes(rg_o);
  rg_cmd->add_option("--cloud", rg.cloud);
  rg_cmd->add_option("--model", rg.model);
  rg_cmd->add_option("--target", rg.target, "Scan mesh to fit instead of a cloud");
  rg_cmd->add_option("--out-prefix", rg.out_prefix)->required();
  rg_cmd->add_option("--res", rg.res)->check(CLI::Range(4, 512));
  rg_cmd->add_option("--seed", rg.seed);
  rg_cmd->add_option("--scan-samples", rg.scan_samples)->check(CLI::PositiveNumber);
  rg_cmd->add_flag("--no-part-term", rg.no_part_term);
  rg_cmd->add_flag("--skip-inner", rg.skip_inner);
  rg_cmd->add_flag("--freeze-body", rg.freeze_body);

  ReposeArgs rp;
  auto* rp_cmd = app.add_subcommand("repose", "Pose a fitted subject anew");
  rp_cmd->add_option("--model", rp.model)->required();
  rp_cmd->add_option("--params", rp.params)->required();
  rp_cmd->add_option("--pose", rp.pose)->required();
  rp_cmd->add_option("--out", rp.out)->required();

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Compare a registration with ground truth");
  ev_cmd->add_option("--pred-prefix", ev.pred_prefix)->required();
  ev_cmd->add_option("--gt-dir", ev.gt_dir)->required();
  ev_cmd->add_option("--model", ev.model, "Body model JSON (default: body.json next to the subject)");
  ev_cmd->add_option("--weights", ev.weights, "Also score region and part predictions at the GT queries");
  ev_cmd->add_option("--report", ev.report)->required();

  AblateArgs ab;
  ab.cases = prof.cases;
  ab.res = prof.res == 128 ? 64 : prof.res;
  ab.train_subjects = prof.train_subjects;
  ab.queries = prof.queries;
  ab.epochs = prof.epochs;
  auto* ab_cmd = app.add_subcommand("ablate", "Run one comparison suite");
  ab_cmd->add_option("--suite", ab.suite)
      ->required()
      ->check(CLI::IsMember({"part-term", "skip-inner", "single-view", "joint-vs-separate"}));
  ab_cmd->add_option("--out", ab.out)->required();
  ab_cmd->add_option("--weights", ab.weights, "Trained stack (trained in memory when absent)");
  ab_cmd->add_option("--single-weights", ab.single_weights, "Stack trained on single-view data");
  ab_cmd->add_option("--data", ab.data, "Training dataset for in-memory training");
  ab_cmd->add_option("--seed", ab.seed);
  ab_cmd->add_option("--cases", ab.cases)->check(CLI::PositiveNumber);
  ab_cmd->add_option("--res", ab.res)->check(CLI::Range(4, 512));
  ab_cmd->add_option("--train-subjects", ab.train_subjects)->check(CLI::PositiveNumber);
  ab_cmd->add_option("--queries", ab.queries)->check(CLI::PositiveNumber);
  ab_cmd->add_option("--epochs", ab.epochs)->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  setup_logging(g.log);
#ifdef _OPENMP
  if (g.threads > 0) omp_set_num_threads(g.threads);
#endif

  CLI::App* sub = app.get_subcommands().front();
  Manifest manifest(sub->get_name(), args_in);
  ordered_json cfg = resolved_options(app);
  cfg.update(resolved_options(*sub));
  manifest.set_config(cfg);

  try {
    const std::string name = sub->get_name();
    if (name == "gen-data") cmd_gen_data(gen, manifest);
    else if (name == "train") cmd_train(tr, manifest);
    else if (name == "reconstruct") cmd_reconstruct(rc, manifest);
    else if (name == "register") cmd_register(rg, manifest);
    else if (name == "repose") cmd_repose(rp, manifest);
    else if (name == "eval") cmd_eval(ev, manifest);
    else if (name == "ablate") cmd_ablate(ab, manifest);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kExitDomain;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return kExitDomain;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("FormatError: {}", e.what());
    return kExitDomain;
  }
  return kExitOk;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace dilate::cli
