#include "hybridtrack/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "hybridtrack/dataset.hpp"
#include "hybridtrack/errors.hpp"
#include "hybridtrack/filters.hpp"
#include "hybridtrack/kitti.hpp"
#include "hybridtrack/metrics.hpp"
#include "hybridtrack/tracker.hpp"

namespace hybridtrack::cli {
namespace {

namespace fs = std::filesystem;

std::string_view trim(std::string_view s) {
  const auto space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && space(s.front())) s.remove_prefix(1);
  while (!s.empty() && space(s.back())) s.remove_suffix(1);
  return s;
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw ConfigError("bad value '" + std::string(text) + "' for key '" + std::string(key) + "'");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) {
      throw ConfigError("non-finite value for key '" + std::string(key) + "'");
    }
  }
  return v;
}

template <class T>
T parse_value(std::string_view key, std::string_view text) {
  if constexpr (std::is_same_v<T, std::string>) {
    return std::string(text);
  } else if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError("bad boolean '" + std::string(text) + "' for key '" + std::string(key) + "'");
  } else if constexpr (std::is_same_v<T, CostFunction>) {
    try {
      return parse_cost_function(text);
    } catch (const Error&) {
      throw ConfigError("unknown cost function '" + std::string(text) +
                        "' (ciou3d, l2, l2size, ciou2d)");
    }
  } else if constexpr (std::is_same_v<T, MotionMix>) {
    try {
      return parse_motion_mix(text);
    } catch (const Error& e) {
      throw ConfigError(std::string("bad motion_mix: ") + e.what());
    }
  } else if constexpr (std::is_same_v<T, HistorySource>) {
    if (text == "posterior") return HistorySource::kPosterior;
    if (text == "truth") return HistorySource::kGroundTruth;
    throw ConfigError("history must be 'posterior' or 'truth'");
  } else {
    return parse_number<T>(key, text);
  }
}

template <class T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, CostFunction>) {
    return std::string(to_string(v));
  } else if constexpr (std::is_same_v<T, MotionMix>) {
    return format_motion_mix(v);
  } else if constexpr (std::is_same_v<T, HistorySource>) {
    return v == HistorySource::kPosterior ? "posterior" : "truth";
  } else {
    std::array<char, 64> buf{};
    const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return {buf.data(), r.ptr};
  }
}

template <class T>
const char* type_name() {
  if constexpr (std::is_same_v<T, bool>) {
    return "BOOL";
  } else if constexpr (std::is_integral_v<T>) {
    return "INT";
  } else if constexpr (std::is_floating_point_v<T>) {
    return "FLOAT";
  } else {
    return "TEXT";
  }
}

struct Binding {
  SchemaEntry entry;
  const char* type;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

// `access` returns a reference to the field for const and non-const configs.
template <class T, class Access>
Binding bind(std::string key, std::string help, unsigned commands, Access access) {
  const std::string k = key;
  return {{std::move(key), std::move(help), commands},
          type_name<T>(),
          [access, k](RunConfig& c, std::string_view v) { access(c) = parse_value<T>(k, v); },
          [access](const RunConfig& c) { return format_value<T>(access(c)); }};
}

#define HT_FIELD(expr) [](auto& c) -> auto& { return expr; }

const std::vector<Binding>& bindings() {
  constexpr unsigned kAll = kTrain | kTrack | kEval | kSimulate | kGradcheck;
  constexpr unsigned kTrk = kTrack;
  constexpr unsigned kSim = kSimulate | kTrain;
  static const std::vector<Binding> table = {
      bind<std::uint64_t>("seed", "random seed (model init, sampling, scenarios)", kAll,
                          HT_FIELD(c.seed)),
      bind<int>("threads", "worker threads for concurrent sequences", kTrk, HT_FIELD(c.threads)),

      bind<std::string>("checkpoint",
                        "model checkpoint (written by train, read by track and gradcheck)",
                        kTrain | kTrack | kGradcheck, HT_FIELD(c.checkpoint)),
      bind<std::string>("input",
                        "comma-separated inputs: scenario files or KITTI files (labels for "
                        "train, detections for track, tracker results for eval)",
                        kTrain | kTrack | kEval, HT_FIELD(c.input)),
      bind<std::string>("output",
                        "output path (track: result directory; eval: CSV report; simulate: "
                        "scenario file)",
                        kTrack | kEval | kSimulate, HT_FIELD(c.output)),
      bind<std::string>("ground_truth", "comma-separated scenario or KITTI label files", kEval,
                        HT_FIELD(c.ground_truth)),
      bind<std::string>("detections",
                        "comma-separated KITTI detection files paired with KITTI label inputs",
                        kTrain, HT_FIELD(c.detections)),
      bind<std::string>("loss_trace", "CSV file for the per-iteration loss", kTrain,
                        HT_FIELD(c.loss_trace)),
      bind<std::string>("manifest", "file listing the training tracklets used", kTrain,
                        HT_FIELD(c.manifest)),
      bind<std::string>("labels_output", "KITTI label file of the scenario ground truth",
                        kSimulate, HT_FIELD(c.labels_output)),
      bind<std::string>("detections_output", "KITTI detection file of the scenario detections",
                        kSimulate, HT_FIELD(c.detections_output)),
      bind<std::string>("filter", "motion filter: hybrid or cv-kalman", kTrk, HT_FIELD(c.filter)),

      bind<int>("t_max", "frames for the residual scale to ramp up after birth",
                kTrack | kTrain | kGradcheck, HT_FIELD(c.tracker.t_max)),
      bind<double>("a_min", "residual scale floor after long miss streaks", kTrk,
                   HT_FIELD(c.tracker.a_min)),
      bind<double>("a_max", "residual scale range ceiling", kTrk, HT_FIELD(c.tracker.a_max)),
      bind<int>("mu_max", "consecutive misses before a track dies", kTrk,
                HT_FIELD(c.tracker.mu_max)),
      bind<int>("sigma_birth", "frames a new track may go unmatched before it is dropped", kTrk,
                HT_FIELD(c.tracker.sigma_birth)),
      bind<double>("tau_3d", "association gate on the CIoU costs", kTrk,
                   HT_FIELD(c.tracker.tau_3d)),
      bind<double>("tau_l2", "association gate on the distance costs (m)", kTrk,
                   HT_FIELD(c.tracker.tau_l2)),
      bind<int>("p_window", "posterior differences fed to the residual predictor",
                kTrack | kTrain | kGradcheck, HT_FIELD(c.tracker.p_window)),
      bind<double>("epsilon_init", "offset of the virtual state at birth",
                   kTrack | kTrain | kGradcheck,
                   HT_FIELD(c.tracker.epsilon_init)),
      bind<CostFunction>("cost_function", "association cost: ciou3d, l2, l2size or ciou2d",
                         kTrk, HT_FIELD(c.tracker.cost_function)),
      bind<bool>("report_coasted", "also report tracks that missed this frame", kTrk,
                 HT_FIELD(c.tracker.report_coasted)),
      bind<double>("min_score", "drop detections scored below this", kTrk,
                   HT_FIELD(c.tracker.min_score)),

      bind<MotionMix>("motion_mix", "agent motion weights, e.g. cv:1,ca:1,ctrv:1,lane:1", kSim,
                      HT_FIELD(c.scenario.mix)),
      bind<int>("n_agents", "agents per scenario", kSim, HT_FIELD(c.scenario.n_agents)),
      bind<int>("n_frames", "frames per scenario", kSim, HT_FIELD(c.scenario.n_frames)),
      bind<double>("dt", "seconds per frame", kSim, HT_FIELD(c.scenario.dt)),
      bind<double>("extent", "half width of the spawn area in metres", kSim,
                   HT_FIELD(c.scenario.extent)),
      bind<double>("sigma_pos", "detection position noise (m)", kSim,
                   HT_FIELD(c.scenario.sigma_pos)),
      bind<double>("sigma_dim", "detection size noise (m)", kSim, HT_FIELD(c.scenario.sigma_dim)),
      bind<double>("sigma_yaw", "detection yaw noise (rad)", kSim, HT_FIELD(c.scenario.sigma_yaw)),
      bind<double>("miss_rate", "probability a true box is not detected", kSim,
                   HT_FIELD(c.scenario.miss_rate)),
      bind<double>("fp_rate", "false positives per agent and frame", kSim,
                   HT_FIELD(c.scenario.fp_rate)),

      bind<int>("iterations", "optimizer steps", kTrain, HT_FIELD(c.iterations)),
      bind<int>("batch_size", "tracklets per step", kTrain, HT_FIELD(c.batch_size)),
      bind<double>("learning_rate", "Adam step size", kTrain, HT_FIELD(c.learning_rate)),
      bind<double>("weight_decay", "decoupled weight decay", kTrain, HT_FIELD(c.weight_decay)),
      bind<double>("max_grad_norm", "gradient norm clip, 0 disables", kTrain,
                   HT_FIELD(c.max_grad_norm)),
      bind<HistorySource>("history",
                          "states fed back during unrolling: posterior or truth",
                          kTrain | kGradcheck, HT_FIELD(c.history)),
      bind<int>("max_context", "burn-in frames kept before each training window", kTrain,
                HT_FIELD(c.max_context)),
      bind<int>("max_tracklets", "train on a seeded subset of this size (0 = all)", kTrain,
                HT_FIELD(c.max_tracklets)),
      bind<int>("train_scenarios", "synthetic scenarios generated when no input is given",
                kTrain, HT_FIELD(c.train_scenarios)),
      bind<int>("log_every", "print the batch loss every N iterations (0 = never)", kTrain,
                HT_FIELD(c.log_every)),

      bind<int>("tracklets", "random tracklets to check", kGradcheck, HT_FIELD(c.tracklets)),
      bind<int>("context", "burn-in frames of each random tracklet", kGradcheck,
                HT_FIELD(c.context)),
      bind<double>("step", "finite-difference step", kGradcheck, HT_FIELD(c.step)),
      bind<double>("tolerance", "largest accepted relative error", kGradcheck,
                   HT_FIELD(c.tolerance)),
      bind<int>("entries_per_tensor", "sampled entries per parameter tensor", kGradcheck,
                HT_FIELD(c.entries_per_tensor)),
  };
  return table;
}

#undef HT_FIELD

const Binding& find_binding(std::string_view key) {
  for (const Binding& b : bindings()) {
    if (b.entry.key == key) return b;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void validate(const RunConfig& c) {
  c.tracker.validate();
  c.scenario.validate();
  if (c.threads < 1) throw ConfigError("threads must be >= 1");
  if (c.filter != "hybrid" && c.filter != "cv-kalman") {
    throw ConfigError("filter must be 'hybrid' or 'cv-kalman'");
  }
  if (c.iterations < 0) throw ConfigError("iterations must be >= 0");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (c.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (!(c.max_grad_norm >= 0.0)) throw ConfigError("max_grad_norm must be >= 0");
  if (c.max_context < 0) throw ConfigError("max_context must be >= 0");
  if (c.max_tracklets < 0) throw ConfigError("max_tracklets must be >= 0");
  if (c.train_scenarios < 1) throw ConfigError("train_scenarios must be >= 1");
  if (c.log_every < 0) throw ConfigError("log_every must be >= 0");
  if (c.tracklets < 1) throw ConfigError("tracklets must be >= 1");
  if (c.context < 0) throw ConfigError("context must be >= 0");
  if (!(c.step > 0.0)) throw ConfigError("step must be > 0");
  if (!(c.tolerance > 0.0)) throw ConfigError("tolerance must be > 0");
  if (c.entries_per_tensor < 1) throw ConfigError("entries_per_tensor must be >= 1");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    const std::string_view item = trim(std::string_view(s).substr(pos, comma - pos));
    if (!item.empty()) out.emplace_back(item);
    pos = comma + 1;
  }
  return out;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes next to the target and renames, so readers never see partial files.
void write_atomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path + "'");
    out << content;
    out.flush();
    if (!out) throw Error("write to '" + path + "' failed");
  }
  fs::rename(tmp, target);
}

bool is_scenario_text(std::string_view text) {
  return text.starts_with("# hybridtrack-scenario");
}

std::string sequence_name(const std::string& path) { return fs::path(path).stem().string(); }

std::shared_ptr<HybridModel> load_or_create(const RunConfig& c, HeadInit init) {
  ModelShape shape;
  shape.p_window = c.tracker.p_window;
  if (c.checkpoint.empty()) {
    return std::make_shared<HybridModel>(HybridModel::create(shape, c.seed, init));
  }
  return std::make_shared<HybridModel>(HybridModel::load(c.checkpoint, shape));
}

// ---- subcommands -------------------------------------------------------------------

int cmd_simulate(const RunConfig& c, std::ostream& out) {
  if (c.output.empty()) throw ConfigError("simulate needs 'output'");
  ScenarioSpec spec = c.scenario;
  spec.seed = c.seed;
  const Scenario s = generate_scenario(spec);
  write_atomic(c.output, write_scenario(s));
  std::size_t n_det = 0;
  if (!c.labels_output.empty()) {
    std::vector<KittiObject> rows;
    for (std::size_t k = 0; k < s.ground_truth.size(); ++k) {
      for (const GroundTruthBox& g : s.ground_truth[k]) {
        KittiObject o = KittiObject::from_state(g.state);
        o.frame = static_cast<int>(k);
        o.track_id = g.track_id;
        o.type = "Car";
        rows.push_back(o);
      }
    }
    write_atomic(c.labels_output, write_kitti(rows));
  }
  std::vector<KittiObject> det_rows;
  for (std::size_t k = 0; k < s.detections.size(); ++k) {
    for (const Detection& d : s.detections[k]) {
      KittiObject o = KittiObject::from_state(d.state);
      o.frame = static_cast<int>(k);
      o.track_id = -1;
      o.type = "Car";
      o.score = d.score;
      det_rows.push_back(o);
      ++n_det;
    }
  }
  if (!c.detections_output.empty()) write_atomic(c.detections_output, write_kitti(det_rows));
  out << "wrote " << c.output << ": " << s.spec.n_frames << " frames, " << n_det
      << " detections\n";
  return kExitOk;
}

struct InputSequence {
  std::string name;
  std::vector<std::vector<Detection>> frames;
};

InputSequence load_detections(const std::string& path) {
  const std::string text = read_text(path);
  InputSequence seq{sequence_name(path), {}};
  if (is_scenario_text(text)) {
    seq.frames = parse_scenario(text, path).detections;
  } else {
    seq.frames = detections_by_frame(parse_kitti(text, path));
  }
  return seq;
}

int cmd_track(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const std::vector<std::string> inputs = split_list(c.input);
  if (inputs.empty()) throw ConfigError("track needs 'input'");
  if (c.output.empty()) throw ConfigError("track needs 'output'");
  std::set<std::string> names;
  for (const std::string& p : inputs) {
    if (!names.insert(sequence_name(p)).second) {
      throw ConfigError("two inputs share the sequence name '" + sequence_name(p) + "'");
    }
  }

  std::shared_ptr<const MotionFilter> filter;
  if (c.filter == "cv-kalman") {
    filter = std::make_shared<ConstantVelocityFilter>();
  } else {
    if (c.checkpoint.empty()) err << "note: no checkpoint given, using zero-initialised heads\n";
    filter = std::make_shared<HybridFilter>(load_or_create(c, HeadInit::kZero));
  }

  const std::size_t n = inputs.size();
  std::vector<double> seconds(n, 0.0);
  std::vector<std::size_t> frame_counts(n, 0);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const InputSequence seq = load_detections(inputs[i]);
        const auto t0 = std::chrono::steady_clock::now();
        const std::vector<FrameOutput> frames = run_sequence(c.tracker, filter, seq.frames);
        seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        frame_counts[i] = frames.size();
        write_atomic((fs::path(c.output) / (seq.name + ".txt")).string(),
                     write_kitti(to_kitti(frames)));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(c.threads), n);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const std::size_t frames = std::accumulate(frame_counts.begin(), frame_counts.end(),
                                             std::size_t{0});
  const double busy = std::accumulate(seconds.begin(), seconds.end(), 0.0);
  out << "tracked " << n << " sequence(s), " << frames << " frames with " << filter->name()
      << '\n';
  out << std::fixed << std::setprecision(1)
      << "tracking fps: " << (busy > 0.0 ? static_cast<double>(frames) / busy : 0.0)
      << " (per thread, detection excluded)\n";
  out.unsetf(std::ios::floatfield);
  return kExitOk;
}

std::vector<EvalFrame> to_eval_frames(const std::vector<std::vector<LabeledBox>>& frames) {
  std::vector<EvalFrame> out(frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    for (const LabeledBox& b : frames[k]) out[k].push_back({b.track_id, b.state});
  }
  return out;
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
  const std::vector<std::string> truth = split_list(c.ground_truth);
  const std::vector<std::string> preds = split_list(c.input);
  if (truth.empty() || preds.empty()) throw ConfigError("eval needs 'ground_truth' and 'input'");
  if (truth.size() != preds.size()) {
    throw ConfigError("eval needs one result file per ground truth file");
  }
  std::vector<EvalSequence> seqs;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::string text = read_text(truth[i]);
    std::vector<EvalFrame> gt;
    if (is_scenario_text(text)) {
      const Scenario s = parse_scenario(text, truth[i]);
      gt.resize(s.ground_truth.size());
      for (std::size_t k = 0; k < s.ground_truth.size(); ++k) {
        for (const GroundTruthBox& g : s.ground_truth[k]) gt[k].push_back({g.track_id, g.state});
      }
    } else {
      gt = to_eval_frames(group_by_frame(parse_kitti(text, truth[i])));
    }
    std::vector<EvalFrame> pred = to_eval_frames(group_by_frame(read_kitti(preds[i])));
    const std::size_t n = std::max(gt.size(), pred.size());
    gt.resize(n);
    pred.resize(n);
    seqs.push_back({std::move(gt), std::move(pred)});
  }
  const MetricReport report = evaluate(seqs);
  out << format_report(report);
  if (!c.output.empty()) {
    std::ostringstream csv;
    write_report_csv(report, csv);
    write_atomic(c.output, csv.str());
  }
  return kExitOk;
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  if (c.checkpoint.empty()) throw ConfigError("train needs 'checkpoint' (output path)");
  const std::vector<std::string> inputs = split_list(c.input);
  const std::vector<std::string> dets = split_list(c.detections);
  if (!dets.empty() && dets.size() != inputs.size()) {
    throw ConfigError("'detections' must list one file per input");
  }

  TrackletSet all;
  if (inputs.empty()) {
    for (int i = 0; i < c.train_scenarios; ++i) {
      ScenarioSpec spec = c.scenario;
      spec.seed = c.seed + static_cast<std::uint64_t>(i);
      all.append(cut_tracklets(
          labeled_sequence(generate_scenario(spec), "sim" + std::to_string(spec.seed)),
          c.max_context));
    }
  } else {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const std::string text = read_text(inputs[i]);
      const std::string name = sequence_name(inputs[i]);
      if (is_scenario_text(text)) {
        all.append(cut_tracklets(labeled_sequence(parse_scenario(text, inputs[i]), name),
                                 c.max_context));
      } else {
        const std::vector<KittiObject> labels = parse_kitti(text, inputs[i]);
        std::vector<KittiObject> det;
        if (!dets.empty()) det = read_kitti(dets[i]);
        all.append(cut_tracklets(
            labeled_sequence(labels, dets.empty() ? nullptr : &det, name), c.max_context));
      }
    }
  }
  if (all.tracklets.empty()) throw Error("the inputs contain no 20-frame tracklet");

  if (c.max_tracklets > 0 && static_cast<std::size_t>(c.max_tracklets) < all.tracklets.size()) {
    std::vector<std::size_t> idx(all.tracklets.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(c.seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(c.max_tracklets));
    std::sort(idx.begin(), idx.end());
    TrackletSet subset;
    for (std::size_t i : idx) {
      subset.tracklets.push_back(std::move(all.tracklets[i]));
      subset.sources.push_back(all.sources[i]);
    }
    all = std::move(subset);
  }
  if (!c.manifest.empty()) {
    std::ostringstream m;
    write_manifest(all.sources, m);
    write_atomic(c.manifest, m.str());
  }

  ModelShape shape;
  shape.p_window = c.tracker.p_window;
  HybridModel model = HybridModel::create(shape, c.seed);
  TrainOptions opts;
  opts.iterations = c.iterations;
  opts.batch_size = c.batch_size;
  opts.adam.lr = c.learning_rate;
  opts.adam.weight_decay = c.weight_decay;
  opts.max_grad_norm = c.max_grad_norm;
  opts.seed = c.seed;
  opts.unroll.history = c.history;
  opts.unroll.t_max = c.tracker.t_max;
  opts.unroll.epsilon_init = c.tracker.epsilon_init;
  if (c.log_every > 0) {
    opts.on_iteration = [&out, every = c.log_every](int it, const LossReport& r) {
      if (it % every == 0) out << "iteration " << it << " loss " << r.total << '\n';
    };
  }
  out << "training on " << all.tracklets.size() << " tracklets\n";
  const TrainResult result = train(model, all.tracklets, opts);
  out << "dataset loss " << result.initial.total << " -> " << result.final.total << '\n';

  std::ostringstream ckpt;
  nn::save_checkpoint(model.params(), ckpt);
  write_atomic(c.checkpoint, ckpt.str());
  if (!c.loss_trace.empty()) {
    std::ostringstream trace;
    write_loss_trace(result.trace, trace);
    write_atomic(c.loss_trace, trace.str());
  }
  out << "wrote " << c.checkpoint << '\n';
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& c, std::ostream& out) {
  const std::shared_ptr<HybridModel> model = load_or_create(c, HeadInit::kRandom);
  std::vector<Tracklet> tracklets;
  for (int i = 0; i < c.tracklets; ++i) {
    tracklets.push_back(random_tracklet(c.seed + static_cast<std::uint64_t>(i), 0.1, c.context));
  }
  GradCheckOptions opts;
  opts.step = c.step;
  opts.tolerance = c.tolerance;
  opts.entries_per_tensor = c.entries_per_tensor;
  opts.seed = c.seed;
  opts.unroll.history = c.history;
  opts.unroll.t_max = c.tracker.t_max;
  opts.unroll.epsilon_init = c.tracker.epsilon_init;
  const GradCheckReport r = gradient_check(*model, tracklets, opts);
  out << "checked " << r.checked << " entries, skipped " << r.skipped_kinks << " at kinks, "
      << r.failures << " failure(s); max relative error " << r.max_relative_error;
  if (!r.worst_tensor.empty()) out << " (" << r.worst_tensor << ")";
  out << '\n';
  return r.passed() ? kExitOk : kExitFailure;
}

}  // namespace

const std::vector<SchemaEntry>& schema() {
  static const std::vector<SchemaEntry> entries = [] {
    std::vector<SchemaEntry> e;
    for (const Binding& b : bindings()) e.push_back(b.entry);
    return e;
  }();
  return entries;
}

void set_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  find_binding(key).set(cfg, trim(value));
}

std::string get_value(const RunConfig& cfg, std::string_view key) {
  return find_binding(key).get(cfg);
}

void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& source) {
  int line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      set_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"HybridTrack: 3D multi-object tracking with a learnable Kalman filter",
               "hybridtrack"};
  app.require_subcommand(1);

  struct Sub {
    Command command;
    const char* name;
    const char* help;
    CLI::App* app = nullptr;
    std::string config_path;
    std::map<std::string, CLI::Option*> flags;
    std::map<std::string, std::string> values;
  };
  std::vector<Sub> subs = {
      {kTrain, "train", "train the residual predictor and gain estimator on tracklets", nullptr, {}, {}, {}},
      {kTrack, "track", "run the tracker over detection files and write KITTI results", nullptr, {}, {}, {}},
      {kEval, "eval", "score tracker results against ground truth", nullptr, {}, {}, {}},
      {kSimulate, "simulate", "generate a synthetic scenario", nullptr, {}, {}, {}},
      {kGradcheck, "gradcheck", "compare analytic and finite-difference gradients", nullptr, {}, {}, {}},
  };
  const RunConfig defaults;
  for (Sub& s : subs) {
    s.app = app.add_subcommand(s.name, s.help);
    s.app->add_option("--config", s.config_path, "key = value file; flags override it");
    for (const Binding& b : bindings()) {
      if ((b.entry.commands & s.command) == 0U) continue;
      std::string flag = "--" + b.entry.key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      const std::string def = b.get(defaults);
      s.flags[b.entry.key] = s.app->add_option(
          flag, s.values[b.entry.key],
          b.entry.help + " [config key " + b.entry.key + ", default " +
              (def.empty() ? "none" : def) + "]")
          ->type_name(b.type);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const Sub* chosen = nullptr;
  for (const Sub& s : subs) {
    if (s.app->parsed()) chosen = &s;
  }
  RunConfig cfg;
  try {
    if (!chosen->config_path.empty()) {
      std::ifstream in(chosen->config_path);
      if (!in) throw ConfigError("cannot open config '" + chosen->config_path + "'");
      std::ostringstream ss;
      ss << in.rdbuf();
      apply_config_text(cfg, ss.str(), chosen->config_path);
    }
    for (const auto& [key, opt] : chosen->flags) {
      if (opt->count() > 0) set_value(cfg, key, chosen->values.at(key));
    }
    validate(cfg);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    switch (chosen->command) {
      case kTrain:
        return cmd_train(cfg, out);
      case kTrack:
        return cmd_track(cfg, out, err);
      case kEval:
        return cmd_eval(cfg, out);
      case kSimulate:
        return cmd_simulate(cfg, out);
      case kGradcheck:
        return cmd_gradcheck(cfg, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace hybridtrack::cli
