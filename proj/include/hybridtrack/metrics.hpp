#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hybridtrack/state.hpp"

namespace hybridtrack {

struct EvalBox {
  int id = 0;
  StateVector state;
};

using EvalFrame = std::vector<EvalBox>;

/// Aligned ground truth and tracker output of one sequence (same frame count).
struct EvalSequence {
  std::vector<EvalFrame> truth;
  std::vector<EvalFrame> predicted;
};

/// Localization thresholds 0.05, 0.10, ..., 0.95.
inline constexpr int kHotaSteps = 19;
double hota_threshold(int i);

/// Additive sufficient statistics; sequences combine by summation.
struct MetricCounts {
  std::array<double, kHotaSteps> tp{};
  std::array<double, kHotaSteps> fn{};
  std::array<double, kHotaSteps> fp{};
  std::array<double, kHotaSteps> ass_sum{};  // sum over TPs of the association score
  std::array<double, kHotaSteps> ass_re_sum{};
  std::array<double, kHotaSteps> ass_pr_sum{};
  std::array<double, kHotaSteps> loc_sum{};

  double clear_tp = 0.0;
  double clear_fn = 0.0;
  double clear_fp = 0.0;
  double id_switches = 0.0;
  double motp_sum = 0.0;
  double gt_tracks = 0.0;
  double mostly_tracked = 0.0;
  double partly_tracked = 0.0;
  double mostly_lost = 0.0;

  double idtp = 0.0;
  double idfn = 0.0;
  double idfp = 0.0;

  MetricCounts& operator+=(const MetricCounts& o);
};

/// Percentages (0..100) except the raw counts.
struct MetricReport {
  double hota = 0.0;
  double deta = 0.0;
  double assa = 0.0;
  double detre = 0.0;
  double detpr = 0.0;
  double assre = 0.0;
  double asspr = 0.0;
  double loca = 0.0;
  std::array<double, kHotaSteps> hota_at{};

  double mota = 0.0;
  double motp = 0.0;
  double idf1 = 0.0;
  double mt = 0.0;
  double pt = 0.0;
  double ml = 0.0;

  long long tp = 0;
  long long fn = 0;
  long long fp = 0;
  long long id_switches = 0;
  long long idtp = 0;
  long long idfn = 0;
  long long idfp = 0;
  long long gt_tracks = 0;
};

/// Statistics of one sequence with 3D IoU similarity. CLEAR and identity
/// metrics use IoU >= 0.5.
MetricCounts accumulate(const EvalSequence& seq);

MetricReport summarize(const MetricCounts& counts);

MetricReport evaluate(std::span<const EvalSequence> sequences);

/// Two-column human readable table.
std::string format_report(const MetricReport& r);

/// Header line plus one data row.
void write_report_csv(const MetricReport& r, std::ostream& out);

}  // namespace hybridtrack
