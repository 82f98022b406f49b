#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "hybridtrack/association.hpp"
#include "hybridtrack/cli.hpp"
#include "hybridtrack/errors.hpp"
#include "hybridtrack/filters.hpp"
#include "hybridtrack/geometry.hpp"
#include "hybridtrack/metrics.hpp"
#include "hybridtrack/scenario.hpp"
#include "hybridtrack/tracker.hpp"

namespace py = pybind11;
using namespace hybridtrack;

namespace {

using Row = Eigen::Matrix<double, 1, 7>;
using Boxes = Eigen::Matrix<double, Eigen::Dynamic, 7, Eigen::RowMajor>;

StateVector to_state(const Row& r) { return {r[0], r[1], r[2], r[3], r[4], r[5], r[6]}; }

Row to_row(const StateVector& s) {
  Row r;
  r << s.x, s.y, s.z, s.w, s.l, s.h, s.theta;
  return r;
}

geometry::RotatedBox3D to_box(const Row& r) { return geometry::RotatedBox3D::from_state(to_state(r)); }

py::list pairs_of(const MatchResult& m) {
  py::list out;
  for (const auto& [r, c] : m.pairs) out.append(py::make_tuple(r, c));
  return out;
}

std::shared_ptr<const MotionFilter> make_filter(const std::string& kind,
                                                const std::string& checkpoint) {
  if (kind == "cv-kalman") return std::make_shared<ConstantVelocityFilter>();
  if (kind != "hybrid") throw ConfigError("unknown filter '" + kind + "'");
  auto model = std::make_shared<HybridModel>(checkpoint.empty() ? HybridModel::create({}, 0)
                                                                : HybridModel::load(checkpoint));
  return std::make_shared<HybridFilter>(std::move(model));
}

/// Frame of boxes: (ids, N x 7 states).
py::tuple frame_output(const FrameOutput& f) {
  std::vector<int> ids;
  Boxes states(static_cast<Eigen::Index>(f.tracks.size()), 7);
  for (std::size_t i = 0; i < f.tracks.size(); ++i) {
    ids.push_back(f.tracks[i].track_id);
    states.row(static_cast<Eigen::Index>(i)) = to_row(f.tracks[i].state);
  }
  return py::make_tuple(ids, states);
}

std::vector<Detection> detections_of(int frame, const Boxes& boxes,
                                     const std::optional<Eigen::VectorXd>& scores) {
  if (scores && scores->size() != boxes.rows()) {
    throw ShapeError("scores must have one entry per box");
  }
  std::vector<Detection> dets;
  for (Eigen::Index i = 0; i < boxes.rows(); ++i) {
    Detection d;
    d.state = to_state(boxes.row(i));
    d.frame = frame;
    d.score = scores ? (*scores)[i] : 1.0;
    d.source_id = static_cast<int>(i);
    dets.push_back(d);
  }
  return dets;
}

EvalFrame eval_frame(const std::vector<int>& ids, const Boxes& boxes) {
  if (static_cast<Eigen::Index>(ids.size()) != boxes.rows()) {
    throw ShapeError("ids and boxes differ in length");
  }
  EvalFrame f;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    f.push_back({ids[i], to_state(boxes.row(static_cast<Eigen::Index>(i)))});
  }
  return f;
}

py::dict report_dict(const MetricReport& r) {
  py::dict d;
  d["hota"] = r.hota;
  d["deta"] = r.deta;
  d["assa"] = r.assa;
  d["loca"] = r.loca;
  d["mota"] = r.mota;
  d["motp"] = r.motp;
  d["idf1"] = r.idf1;
  d["mt"] = r.mt;
  d["pt"] = r.pt;
  d["ml"] = r.ml;
  d["tp"] = r.tp;
  d["fn"] = r.fn;
  d["fp"] = r.fp;
  d["id_switches"] = r.id_switches;
  return d;
}

class PyTracker {
 public:
  PyTracker(const std::string& filter, const std::string& checkpoint, const std::string& cost,
            bool report_coasted, double min_score) {
    TrackerConfig cfg;
    cfg.cost_function = parse_cost_function(cost);
    cfg.report_coasted = report_coasted;
    cfg.min_score = min_score;
    tracker_ = std::make_unique<Tracker>(cfg, make_filter(filter, checkpoint));
  }

  py::tuple step(int frame, const Boxes& boxes, const std::optional<Eigen::VectorXd>& scores) {
    const std::vector<Detection> dets = detections_of(frame, boxes, scores);
    FrameOutput out;
    {
      py::gil_scoped_release release;
      out = tracker_->step(frame, dets);
    }
    return frame_output(out);
  }

  std::size_t live() const { return tracker_->live().size(); }

 private:
  std::unique_ptr<Tracker> tracker_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Learnable Kalman filter 3D multi-object tracker.";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ContractViolation>(m, "ContractViolation", base.ptr());

  m.def(
      "bev_intersection_area",
      [](const Row& a, const Row& b) { return geometry::bev_intersection_area(to_box(a), to_box(b)); },
      py::arg("a"), py::arg("b"), "Footprint overlap area of two [x y z w l h yaw] boxes.");
  m.def(
      "iou_3d", [](const Row& a, const Row& b) { return geometry::iou_3d(to_box(a), to_box(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "ciou_3d", [](const Row& a, const Row& b) { return geometry::ciou_3d(to_box(a), to_box(b)); },
      py::arg("a"), py::arg("b"));

  m.def(
      "greedy_match",
      [](const Eigen::MatrixXd& costs, double threshold) {
        CostMatrix c{costs};
        return pairs_of(greedy_match(c, threshold));
      },
      py::arg("costs"), py::arg("threshold"),
      "Globally cheapest-first matching; returns (row, column) pairs sorted by row.");
  m.def(
      "hungarian_match",
      [](const Eigen::MatrixXd& costs) {
        CostMatrix c{costs};
        return pairs_of(hungarian_match(c));
      },
      py::arg("costs"));

  m.def(
      "simulate",
      [](std::uint64_t seed, int n_agents, int n_frames, const std::string& mix, double sigma_pos,
         double miss_rate, double fp_rate) {
        ScenarioSpec spec;
        spec.seed = seed;
        spec.n_agents = n_agents;
        spec.n_frames = n_frames;
        spec.mix = parse_motion_mix(mix);
        spec.sigma_pos = sigma_pos;
        spec.miss_rate = miss_rate;
        spec.fp_rate = fp_rate;
        const Scenario sc = generate_scenario(spec);
        py::list truth;
        py::list dets;
        for (std::size_t k = 0; k < sc.ground_truth.size(); ++k) {
          std::vector<int> ids;
          Boxes gt(static_cast<Eigen::Index>(sc.ground_truth[k].size()), 7);
          for (std::size_t i = 0; i < sc.ground_truth[k].size(); ++i) {
            ids.push_back(sc.ground_truth[k][i].track_id);
            gt.row(static_cast<Eigen::Index>(i)) = to_row(sc.ground_truth[k][i].state);
          }
          truth.append(py::make_tuple(ids, gt));
          Boxes d(static_cast<Eigen::Index>(sc.detections[k].size()), 7);
          for (std::size_t i = 0; i < sc.detections[k].size(); ++i) {
            d.row(static_cast<Eigen::Index>(i)) = to_row(sc.detections[k][i].state);
          }
          dets.append(d);
        }
        return py::make_tuple(truth, dets);
      },
      py::arg("seed") = 0, py::arg("n_agents") = 20, py::arg("n_frames") = 200,
      py::arg("mix") = "cv:0.25,ca:0.25,ctrv:0.25,lane:0.25", py::arg("sigma_pos") = 0.15,
      py::arg("miss_rate") = 0.1, py::arg("fp_rate") = 0.05,
      "Synthetic scenario: (truth frames as (ids, boxes), detection boxes per frame).");

  m.def(
      "evaluate",
      [](const std::vector<std::pair<std::vector<int>, Boxes>>& truth,
         const std::vector<std::pair<std::vector<int>, Boxes>>& predicted) {
        if (truth.size() != predicted.size()) throw ShapeError("frame counts differ");
        EvalSequence seq;
        for (std::size_t k = 0; k < truth.size(); ++k) {
          seq.truth.push_back(eval_frame(truth[k].first, truth[k].second));
          seq.predicted.push_back(eval_frame(predicted[k].first, predicted[k].second));
        }
        return report_dict(summarize(accumulate(seq)));
      },
      py::arg("truth"), py::arg("predicted"),
      "HOTA and CLEAR metrics (percent) of per-frame (ids, boxes) pairs.");

  py::class_<PyTracker>(m, "Tracker")
      .def(py::init<const std::string&, const std::string&, const std::string&, bool, double>(),
           py::arg("filter") = "hybrid", py::arg("checkpoint") = "", py::arg("cost") = "ciou3d",
           py::arg("report_coasted") = false, py::arg("min_score") = 0.0)
      .def("step", &PyTracker::step, py::arg("frame"), py::arg("boxes"),
           py::arg("scores") = std::nullopt, "Advances one frame; returns (ids, boxes).")
      .def_property_readonly("live", &PyTracker::live);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"hybridtrack"};
        for (const std::string& a : args) argv.push_back(a.c_str());
        std::ostringstream out;
        std::ostringstream err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line tool; returns (exit code, stdout, stderr).");
}
