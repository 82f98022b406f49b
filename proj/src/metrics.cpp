#include "hybridtrack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <unordered_map>

#include "hybridtrack/association.hpp"
#include "hybridtrack/errors.hpp"
#include "hybridtrack/geometry.hpp"

namespace hybridtrack {

namespace {

constexpr double kClearThreshold = 0.5;

using PairKey = std::pair<int, int>;

Eigen::MatrixXd similarity(const EvalFrame& gt, const EvalFrame& pr) {
  Eigen::MatrixXd s(static_cast<Eigen::Index>(gt.size()), static_cast<Eigen::Index>(pr.size()));
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto a = geometry::RotatedBox3D::from_state(gt[i].state);
    for (std::size_t j = 0; j < pr.size(); ++j) {
      s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          geometry::iou_3d(a, geometry::RotatedBox3D::from_state(pr[j].state));
    }
  }
  return s;
}

// Assignment among entries with sim >= threshold maximising `score`. With
// `count_first` the number of pairs takes precedence over their scores.
std::vector<PairKey> match_valid(const Eigen::MatrixXd& sim, const Eigen::MatrixXd& score,
                                 double threshold, bool count_first) {
  std::vector<PairKey> out;
  if (sim.rows() == 0 || sim.cols() == 0) return out;
  CostMatrix c;
  c.values = Eigen::MatrixXd::Zero(sim.rows(), sim.cols());
  // Offset larger than any possible difference of score sums.
  const double big =
      count_first ? 1.0 + static_cast<double>(std::min(sim.rows(), sim.cols())) *
                              (1.0 + score.cwiseAbs().maxCoeff())
                  : 0.0;
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    for (Eigen::Index j = 0; j < sim.cols(); ++j) {
      if (sim(i, j) >= threshold) c.values(i, j) = -big - score(i, j);
    }
  }
  for (const auto& [r, q] : hungarian_match(c).pairs) {
    if (sim(r, q) >= threshold) out.emplace_back(r, q);
  }
  return out;
}

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

void check_ids(const EvalFrame& f, const char* what, std::size_t frame) {
  for (std::size_t i = 0; i < f.size(); ++i) {
    for (std::size_t j = i + 1; j < f.size(); ++j) {
      if (f[i].id == f[j].id) {
        throw ContractViolation(std::string(what) + " id " + std::to_string(f[i].id) +
                                " appears twice in frame " + std::to_string(frame));
      }
    }
  }
}

}  // namespace

double hota_threshold(int i) { return 0.05 * (i + 1); }

MetricCounts& MetricCounts::operator+=(const MetricCounts& o) {
  for (int a = 0; a < kHotaSteps; ++a) {
    tp[a] += o.tp[a];
    fn[a] += o.fn[a];
    fp[a] += o.fp[a];
    ass_sum[a] += o.ass_sum[a];
    ass_re_sum[a] += o.ass_re_sum[a];
    ass_pr_sum[a] += o.ass_pr_sum[a];
    loc_sum[a] += o.loc_sum[a];
  }
  clear_tp += o.clear_tp;
  clear_fn += o.clear_fn;
  clear_fp += o.clear_fp;
  id_switches += o.id_switches;
  motp_sum += o.motp_sum;
  gt_tracks += o.gt_tracks;
  mostly_tracked += o.mostly_tracked;
  partly_tracked += o.partly_tracked;
  mostly_lost += o.mostly_lost;
  idtp += o.idtp;
  idfn += o.idfn;
  idfp += o.idfp;
  return *this;
}

MetricCounts accumulate(const EvalSequence& seq) {
  if (seq.truth.size() != seq.predicted.size()) {
    throw ShapeError("evaluation: ground truth and prediction frame counts differ");
  }
  const std::size_t n = seq.truth.size();
  MetricCounts c;

  std::vector<Eigen::MatrixXd> sims(n);
  std::map<int, double> gt_count;
  std::map<int, double> pr_count;
  double total_gt = 0.0;
  double total_pr = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    check_ids(seq.truth[k], "ground truth", k);
    check_ids(seq.predicted[k], "predicted", k);
    sims[k] = similarity(seq.truth[k], seq.predicted[k]);
    for (const EvalBox& b : seq.truth[k]) gt_count[b.id] += 1.0;
    for (const EvalBox& b : seq.predicted[k]) pr_count[b.id] += 1.0;
    total_gt += static_cast<double>(seq.truth[k].size());
    total_pr += static_cast<double>(seq.predicted[k].size());
  }

  // HOTA family: one matching per threshold.
  for (int a = 0; a < kHotaSteps; ++a) {
    const double alpha = hota_threshold(a);
    std::map<PairKey, double> pair_count;
    double tp = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const Eigen::MatrixXd& s = sims[k];
      for (const auto& [i, j] : match_valid(s, s, alpha, true)) {
        tp += 1.0;
        c.loc_sum[a] += s(i, j);
        pair_count[{seq.truth[k][static_cast<std::size_t>(i)].id,
                    seq.predicted[k][static_cast<std::size_t>(j)].id}] += 1.0;
      }
    }
    c.tp[a] = tp;
    c.fn[a] = total_gt - tp;
    c.fp[a] = total_pr - tp;
    for (const auto& [key, m] : pair_count) {
      const double g = gt_count[key.first];
      const double p = pr_count[key.second];
      c.ass_sum[a] += m * m / (g + p - m);
      c.ass_re_sum[a] += m * m / g;
      c.ass_pr_sum[a] += m * m / p;
    }
  }

  // CLEAR: keep last frame's pairs when still valid, count identity switches
  // against the last prediction each ground truth id was matched to.
  std::unordered_map<int, int> last_match;
  std::unordered_map<int, int> prev_frame_match;
  std::map<int, double> matched_frames;
  for (std::size_t k = 0; k < n; ++k) {
    const EvalFrame& gt = seq.truth[k];
    const EvalFrame& pr = seq.predicted[k];
    const Eigen::MatrixXd& s = sims[k];
    Eigen::MatrixXd score = s;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const auto it = prev_frame_match.find(gt[i].id);
      if (it == prev_frame_match.end()) continue;
      for (std::size_t j = 0; j < pr.size(); ++j) {
        if (pr[j].id == it->second) score(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += 1000.0;
      }
    }
    const auto pairs = match_valid(s, score, kClearThreshold, false);
    std::unordered_map<int, int> now;
    for (const auto& [i, j] : pairs) {
      const int g = gt[static_cast<std::size_t>(i)].id;
      const int p = pr[static_cast<std::size_t>(j)].id;
      const auto last = last_match.find(g);
      if (last != last_match.end() && last->second != p) c.id_switches += 1.0;
      last_match[g] = p;
      now[g] = p;
      matched_frames[g] += 1.0;
      c.motp_sum += s(i, j);
    }
    prev_frame_match = std::move(now);
    c.clear_tp += static_cast<double>(pairs.size());
    c.clear_fn += static_cast<double>(gt.size() - pairs.size());
    c.clear_fp += static_cast<double>(pr.size() - pairs.size());
  }
  for (const auto& [id, count] : gt_count) {
    const double r = matched_frames[id] / count;
    c.gt_tracks += 1.0;
    if (r > 0.8) {
      c.mostly_tracked += 1.0;
    } else if (r < 0.2) {
      c.mostly_lost += 1.0;
    } else {
      c.partly_tracked += 1.0;
    }
  }

  // Identity: one global id-to-id assignment maximising co-detections.
  std::map<int, int> gt_index;
  std::map<int, int> pr_index;
  for (const auto& [id, _] : gt_count) gt_index.emplace(id, static_cast<int>(gt_index.size()));
  for (const auto& [id, _] : pr_count) pr_index.emplace(id, static_cast<int>(pr_index.size()));
  if (!gt_index.empty() && !pr_index.empty()) {
    CostMatrix potential;
    potential.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(gt_index.size()),
                                             static_cast<Eigen::Index>(pr_index.size()));
    for (std::size_t k = 0; k < n; ++k) {
      const Eigen::MatrixXd& s = sims[k];
      for (Eigen::Index i = 0; i < s.rows(); ++i) {
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
          if (s(i, j) < kClearThreshold) continue;
          potential.values(gt_index[seq.truth[k][static_cast<std::size_t>(i)].id],
                           pr_index[seq.predicted[k][static_cast<std::size_t>(j)].id]) -= 1.0;
        }
      }
    }
    for (const auto& [r, q] : hungarian_match(potential).pairs) c.idtp -= potential(r, q);
  }
  c.idfn = total_gt - c.idtp;
  c.idfp = total_pr - c.idtp;
  return c;
}

MetricReport summarize(const MetricCounts& c) {
  MetricReport r;
  for (int a = 0; a < kHotaSteps; ++a) {
    const double det = ratio(c.tp[a], c.tp[a] + c.fn[a] + c.fp[a]);
    const double ass = ratio(c.ass_sum[a], c.tp[a]);
    r.hota_at[static_cast<std::size_t>(a)] = 100.0 * std::sqrt(det * ass);
    r.hota += std::sqrt(det * ass);
    r.deta += det;
    r.assa += ass;
    r.detre += ratio(c.tp[a], c.tp[a] + c.fn[a]);
    r.detpr += ratio(c.tp[a], c.tp[a] + c.fp[a]);
    r.assre += ratio(c.ass_re_sum[a], c.tp[a]);
    r.asspr += ratio(c.ass_pr_sum[a], c.tp[a]);
    r.loca += ratio(c.loc_sum[a], c.tp[a]);
  }
  const double scale = 100.0 / kHotaSteps;
  for (double* v : {&r.hota, &r.deta, &r.assa, &r.detre, &r.detpr, &r.assre, &r.asspr, &r.loca}) {
    *v *= scale;
  }

  const double num_gt = c.clear_tp + c.clear_fn;
  r.mota = num_gt > 0.0 ? 100.0 * (1.0 - (c.clear_fn + c.clear_fp + c.id_switches) / num_gt) : 0.0;
  r.motp = 100.0 * ratio(c.motp_sum, c.clear_tp);
  r.idf1 = 100.0 * ratio(c.idtp, c.idtp + 0.5 * c.idfn + 0.5 * c.idfp);
  r.mt = 100.0 * ratio(c.mostly_tracked, c.gt_tracks);
  r.pt = 100.0 * ratio(c.partly_tracked, c.gt_tracks);
  r.ml = 100.0 * ratio(c.mostly_lost, c.gt_tracks);
  r.tp = std::llround(c.clear_tp);
  r.fn = std::llround(c.clear_fn);
  r.fp = std::llround(c.clear_fp);
  r.id_switches = std::llround(c.id_switches);
  r.idtp = std::llround(c.idtp);
  r.idfn = std::llround(c.idfn);
  r.idfp = std::llround(c.idfp);
  r.gt_tracks = std::llround(c.gt_tracks);
  return r;
}

MetricReport evaluate(std::span<const EvalSequence> sequences) {
  MetricCounts total;
  for (const EvalSequence& s : sequences) total += accumulate(s);
  return summarize(total);
}

std::string format_report(const MetricReport& r) {
  std::string out;
  char buf[96];
  auto pct = [&](const char* name, double v) {
    std::snprintf(buf, sizeof buf, "%-8s %8.2f\n", name, v);
    out += buf;
  };
  auto cnt = [&](const char* name, long long v) {
    std::snprintf(buf, sizeof buf, "%-8s %8lld\n", name, v);
    out += buf;
  };
  pct("HOTA", r.hota);
  pct("DetA", r.deta);
  pct("AssA", r.assa);
  pct("DetRe", r.detre);
  pct("DetPr", r.detpr);
  pct("AssRe", r.assre);
  pct("AssPr", r.asspr);
  pct("LocA", r.loca);
  pct("MOTA", r.mota);
  pct("MOTP", r.motp);
  pct("IDF1", r.idf1);
  pct("MT", r.mt);
  pct("PT", r.pt);
  pct("ML", r.ml);
  cnt("IDSW", r.id_switches);
  cnt("IDFN", r.idfn);
  cnt("IDFP", r.idfp);
  cnt("TP", r.tp);
  cnt("FN", r.fn);
  cnt("FP", r.fp);
  return out;
}

void write_report_csv(const MetricReport& r, std::ostream& out) {
  out << "hota,deta,assa,detre,detpr,assre,asspr,loca,mota,motp,idf1,mt,pt,ml,idsw,idtp,idfn,"
         "idfp,tp,fn,fp\n";
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%lld,%lld,"
                "%lld,%lld,%lld,%lld,%lld\n",
                r.hota, r.deta, r.assa, r.detre, r.detpr, r.assre, r.asspr, r.loca, r.mota, r.motp,
                r.idf1, r.mt, r.pt, r.ml, r.id_switches, r.idtp, r.idfn, r.idfp, r.tp, r.fn, r.fp);
  out << buf;
}

}  // namespace hybridtrack
