// Benchmark-style metrics over road-confidence maps: pooled confusion counts,
// threshold sweeps with MaxF and AP, the ROI (x-upper-bound) study, and the
// paired comparison of two ground-truth mappings.
#ifndef LODNN_EVALUATOR_HPP
#define LODNN_EVALUATOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "lodnn/common.hpp"
#include "lodnn/label_grid.hpp"
#include "lodnn/png_io.hpp"
#include "lodnn/rasterizer.hpp"
#include "lodnn/tensor.hpp"

namespace lodnn {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::int64_t evaluated() const { return tp + fp + tn + fn; }
};

struct MetricPoint {
  double threshold = 0.0;
  double pre = 0.0, rec = 0.0, fpr = 0.0, fnr = 0.0, f1 = 0.0;
  bool zero_denominator = false;  // some ratio had an empty denominator
};

struct ThresholdSweep {
  std::vector<MetricPoint> points;  // ordered by threshold descending
  double max_f = 0.0;
  double ap = 0.0;
  std::int64_t unknown_excluded = 0;
};

inline double safe_ratio(std::int64_t num, std::int64_t den, bool* flagged = nullptr) {
  if (den == 0) {
    if (flagged) *flagged = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

inline MetricPoint metrics_from_counts(const ConfusionCounts& c, double threshold) {
  MetricPoint m;
  m.threshold = threshold;
  m.pre = safe_ratio(c.tp, c.tp + c.fp, &m.zero_denominator);
  m.rec = safe_ratio(c.tp, c.tp + c.fn, &m.zero_denominator);
  m.fpr = safe_ratio(c.fp, c.fp + c.tn, &m.zero_denominator);
  m.fnr = safe_ratio(c.fn, c.fn + c.tp, &m.zero_denominator);
  m.f1 = (m.pre + m.rec) > 0.0 ? 2.0 * m.pre * m.rec / (m.pre + m.rec) : 0.0;
  return m;
}

// F-measure from precision/recall expressed in percent (as benchmark tables
// report them), returned in percent.
inline double f1_percent(double pre_percent, double rec_percent) {
  if (pre_percent + rec_percent <= 0.0) return 0.0;
  return 2.0 * pre_percent * rec_percent / (pre_percent + rec_percent);
}

// ---------------------------------------------------------------------------
// Confusion counting. A pixel is predicted Road iff confidence >= tau.
// Unknown truth pixels are excluded. When eval_rows >= 0, only that many
// bottom (near-range) rows are evaluated, implementing the x-upper-bound ROI.
// ---------------------------------------------------------------------------

inline ConfusionCounts confusion(const Tensorf& confidence, const TopViewLabel& truth, double tau,
                                 int eval_rows = -1) {
  require(tau >= 0.0 && tau <= 1.0, "threshold must lie in [0, 1]");
  if (confidence.h != truth.height || confidence.w != truth.width)
    throw ContractViolation("confusion: prediction " + confidence.shape_str() +
                            " does not match truth " + std::to_string(truth.height) + "x" +
                            std::to_string(truth.width));
  const int H = truth.height, W = truth.width;
  const int first_row = eval_rows < 0 ? 0 : std::max(0, H - eval_rows);
  ConfusionCounts c;
  for (int r = first_row; r < H; ++r)
    for (int col = 0; col < W; ++col) {
      const Label t = truth.at(r, col);
      if (t == Label::Unknown) continue;
      const bool pred_road = static_cast<double>(confidence.data[static_cast<std::size_t>(r) * W + col]) >= tau;
      if (t == Label::Road)
        pred_road ? ++c.tp : ++c.fn;
      else
        pred_road ? ++c.fp : ++c.tn;
    }
  return c;
}

// ---------------------------------------------------------------------------
// Threshold sweep, pooled over an evaluation set. The grid is the sorted set
// of observed unique confidences, thinned to at most max_grid quantile-spaced
// values (0 = unlimited); MaxF is exact whenever no thinning occurs, and
// invariant under monotone transforms of the confidence map either way.
// ---------------------------------------------------------------------------

struct EvalPair {
  const Tensorf* confidence;
  const TopViewLabel* truth;
};

inline ThresholdSweep sweep(const std::vector<EvalPair>& pairs, int max_grid = 1000,
                            int eval_rows = -1) {
  require(!pairs.empty(), "sweep requires a non-empty evaluation set");
  ThresholdSweep out;

  // Gather (confidence, is_road) for every evaluated pixel.
  std::vector<std::pair<float, std::uint8_t>> samples;
  for (const EvalPair& pr : pairs) {
    const Tensorf& conf = *pr.confidence;
    const TopViewLabel& truth = *pr.truth;
    if (conf.h != truth.height || conf.w != truth.width)
      throw ContractViolation("sweep: prediction/truth shape mismatch");
    const int H = truth.height, W = truth.width;
    const int first_row = eval_rows < 0 ? 0 : std::max(0, H - eval_rows);
    for (int r = first_row; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        const Label t = truth.at(r, c);
        if (t == Label::Unknown) {
          ++out.unknown_excluded;
          continue;
        }
        samples.emplace_back(conf.data[static_cast<std::size_t>(r) * W + c],
                             t == Label::Road ? 1 : 0);
      }
  }
  if (samples.empty()) {
    out.points.push_back(metrics_from_counts(ConfusionCounts{}, 0.0));
    return out;
  }

  std::sort(samples.begin(), samples.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  std::int64_t total_road = 0;
  for (const auto& s : samples) total_road += s.second;
  const std::int64_t total_not = static_cast<std::int64_t>(samples.size()) - total_road;

  // Cumulative counts at each unique threshold (predicted road iff >= tau).
  struct GridPoint {
    double tau;
    std::int64_t tp, fp;
  };
  std::vector<GridPoint> grid;
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].second ? ++tp : ++fp;
    const bool last_of_value = i + 1 == samples.size() || samples[i + 1].first != samples[i].first;
    if (last_of_value) grid.push_back({static_cast<double>(samples[i].first), tp, fp});
  }

  // Quantile-space thinning when the unique-value count exceeds the cap.
  std::vector<std::size_t> keep;
  if (max_grid > 0 && static_cast<int>(grid.size()) > max_grid) {
    keep.reserve(static_cast<std::size_t>(max_grid));
    for (int k = 0; k < max_grid; ++k) {
      const std::size_t idx = static_cast<std::size_t>(
          (static_cast<double>(k) * static_cast<double>(grid.size() - 1)) / (max_grid - 1) + 0.5);
      if (keep.empty() || keep.back() != idx) keep.push_back(idx);
    }
  } else {
    keep.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) keep[i] = i;
  }

  for (std::size_t idx : keep) {
    ConfusionCounts c;
    c.tp = grid[idx].tp;
    c.fp = grid[idx].fp;
    c.fn = total_road - c.tp;
    c.tn = total_not - c.fp;
    out.points.push_back(metrics_from_counts(c, grid[idx].tau));
  }
  for (const MetricPoint& m : out.points) out.max_f = std::max(out.max_f, m.f1);

  // AP: trapezoidal area under the precision-recall curve. Points are already
  // ordered by threshold descending, hence recall ascending; the curve is
  // anchored at (recall 0, precision of the highest-threshold point).
  double ap = 0.0, prev_rec = 0.0, prev_pre = out.points.front().pre;
  for (const MetricPoint& m : out.points) {
    ap += (m.rec - prev_rec) * 0.5 * (m.pre + prev_pre);
    prev_rec = m.rec;
    prev_pre = m.pre;
  }
  out.ap = ap;
  return out;
}

// ---------------------------------------------------------------------------
// ROI study: one sweep per x-upper bound.
// ---------------------------------------------------------------------------

struct RoiRow {
  double x_upper;
  ThresholdSweep sweep;
};

inline std::vector<RoiRow> roi_study(const std::vector<EvalPair>& pairs, const GridSpec& grid,
                                     const std::vector<double>& x_upper_bounds,
                                     int max_grid = 1000) {
  std::vector<RoiRow> rows;
  for (double xu : x_upper_bounds) {
    const int eval_rows = grid.rows_within_x_upper(xu);
    rows.push_back({xu, sweep(pairs, max_grid, eval_rows)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Paired comparison of two ground-truth mappings over the same predictions.
// ---------------------------------------------------------------------------

struct MappingComparison {
  ThresholdSweep pcp;
  ThresholdSweep ipm;
  std::vector<std::int64_t> disagreement;  // per example: both known and different
  std::int64_t total_disagreement = 0;
};

inline MappingComparison compare_mappings(const std::vector<const Tensorf*>& preds,
                                          const std::vector<const TopViewLabel*>& pcp_truths,
                                          const std::vector<const TopViewLabel*>& ipm_truths,
                                          int max_grid = 1000) {
  if (preds.size() != pcp_truths.size() || preds.size() != ipm_truths.size())
    throw ConfigError("compare_mappings: example sets must align (same ids in all three sets)");
  MappingComparison out;
  std::vector<EvalPair> pcp_pairs, ipm_pairs;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const TopViewLabel& a = *pcp_truths[i];
    const TopViewLabel& b = *ipm_truths[i];
    if (a.height != b.height || a.width != b.width)
      throw ConfigError("compare_mappings: truth grids disagree in shape at example " +
                        std::to_string(i));
    std::int64_t d = 0;
    for (std::size_t j = 0; j < a.size(); ++j)
      if (a.cells[j] != Label::Unknown && b.cells[j] != Label::Unknown && a.cells[j] != b.cells[j])
        ++d;
    out.disagreement.push_back(d);
    out.total_disagreement += d;
    pcp_pairs.push_back({preds[i], pcp_truths[i]});
    ipm_pairs.push_back({preds[i], ipm_truths[i]});
  }
  out.pcp = sweep(pcp_pairs, max_grid);
  out.ipm = sweep(ipm_pairs, max_grid);
  return out;
}

// ---------------------------------------------------------------------------
// Text artifacts.
// ---------------------------------------------------------------------------

inline std::string metrics_csv_header() { return "MaxF,AP,PRE,REC,FPR,FNR"; }

inline std::string metrics_csv_row(const ThresholdSweep& s) {
  // report the operating point at MaxF, values in percent
  const MetricPoint* best = &s.points.front();
  for (const MetricPoint& m : s.points)
    if (m.f1 > best->f1) best = &m;
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * s.max_f << "," << 100.0 * s.ap << ","
     << 100.0 * best->pre << "," << 100.0 * best->rec << "," << 100.0 * best->fpr << ","
     << 100.0 * best->fnr;
  return os.str();
}

inline std::string roi_csv(const std::vector<RoiRow>& rows) {
  std::ostringstream os;
  os << "x_upper_bound_m,MaxF,PRE,REC,FPR,FNR\n";
  for (const RoiRow& r : rows) {
    const ThresholdSweep& s = r.sweep;
    const MetricPoint* best = &s.points.front();
    for (const MetricPoint& m : s.points)
      if (m.f1 > best->f1) best = &m;
    os << std::fixed << std::setprecision(0) << r.x_upper << "," << std::setprecision(2)
       << 100.0 * s.max_f << "," << 100.0 * best->pre << "," << 100.0 * best->rec << ","
       << 100.0 * best->fpr << "," << 100.0 * best->fnr << "\n";
  }
  return os.str();
}

inline std::string mapping_comparison_csv(const MappingComparison& cmp,
                                          const std::string& split_name) {
  std::ostringstream os;
  os << "Split,Mapping,MaxF,PRE,REC,FPR,FNR\n";
  auto row = [&](const std::string& mapping, const ThresholdSweep& s) {
    const MetricPoint* best = &s.points.front();
    for (const MetricPoint& m : s.points)
      if (m.f1 > best->f1) best = &m;
    os << split_name << "," << mapping << "," << std::fixed << std::setprecision(2)
       << 100.0 * s.max_f << "," << 100.0 * best->pre << "," << 100.0 * best->rec << ","
       << 100.0 * best->fpr << "," << 100.0 * best->fnr << "\n";
  };
  row("PCP", cmp.pcp);
  row("IPM", cmp.ipm);
  return os.str();
}

// Two-column precision-recall curve for plotting.
inline void write_pr_curve(const std::string& path, const ThresholdSweep& s) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "# recall precision\n";
  os.precision(9);
  for (const MetricPoint& m : s.points) os << m.rec << " " << m.pre << "\n";
  if (!os) throw IoError("write failed: " + path);
}

// Blue-intensity road-probability overlay.
inline void write_confidence_overlay(const std::string& path, const Tensorf& confidence) {
  ImageRgb8 img;
  img.width = confidence.w;
  img.height = confidence.h;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * 3, 0);
  for (std::size_t i = 0; i < static_cast<std::size_t>(img.width) * img.height; ++i) {
    const double v = std::clamp(static_cast<double>(confidence.data[i]), 0.0, 1.0);
    img.pixels[3 * i + 0] = static_cast<std::uint8_t>(std::lround(32.0 * (1.0 - v)));
    img.pixels[3 * i + 1] = static_cast<std::uint8_t>(std::lround(32.0 * (1.0 - v)));
    img.pixels[3 * i + 2] = static_cast<std::uint8_t>(std::lround(255.0 * v));
  }
  write_png_rgb8(path, img);
}

}  // namespace lodnn

#endif  // LODNN_EVALUATOR_HPP
