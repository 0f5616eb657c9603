#pragma once

// Classification evaluation: confusion counts, the scalar metrics derived
// from them, average precision (AUPRC), and AUPRC stratified by post length.

#include <algorithm>
#include <cstddef>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "mtd/error.hpp"

namespace mtd {

struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
};

struct ScalarMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct PRPoint {
  double recall = 0.0;
  double precision = 0.0;
};

// Precision-recall pairs at every descending-score prefix; recall is
// nondecreasing along the list.
struct PRCurve {
  std::vector<PRPoint> points;
};

enum class LengthBin { Short, Medium, Long };

inline const char* length_bin_name(LengthBin b) {
  switch (b) {
    case LengthBin::Short: return "SHORT";
    case LengthBin::Medium: return "MEDIUM";
    case LengthBin::Long: return "LONG";
  }
  return "?";
}

// Short: fewer than 50 words; Medium: 50 to 150 inclusive; Long: more.
inline LengthBin length_bin(std::size_t word_count) {
  if (word_count < 50) return LengthBin::Short;
  if (word_count <= 150) return LengthBin::Medium;
  return LengthBin::Long;
}

inline void require_label(int label, const char* what) {
  if (label != 0 && label != 1)
    throw SchemaError(std::string(what) + ": label must be 0 or 1, got " +
                      std::to_string(label));
}

inline ConfusionMatrix confusion(const std::vector<int>& preds,
                                 const std::vector<int>& labels) {
  if (preds.size() != labels.size())
    throw DimensionError("confusion: " + std::to_string(preds.size()) +
                         " predictions vs " + std::to_string(labels.size()) +
                         " labels");
  if (preds.empty()) throw SizeError("confusion: empty input");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    require_label(preds[i], "confusion");
    require_label(labels[i], "confusion");
    if (labels[i] == 1)
      (preds[i] == 1 ? cm.tp : cm.fn)++;
    else
      (preds[i] == 1 ? cm.fp : cm.tn)++;
  }
  return cm;
}

// Zero-denominator metrics are defined as 0 so reports stay total.
inline ScalarMetrics scalar_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw SizeError("scalar_metrics: empty confusion");
  ScalarMetrics m;
  m.accuracy = static_cast<double>(cm.tp + cm.tn) /
               static_cast<double>(cm.total());
  m.precision = (cm.tp + cm.fp) == 0
                    ? 0.0
                    : static_cast<double>(cm.tp) /
                          static_cast<double>(cm.tp + cm.fp);
  m.recall = (cm.tp + cm.fn) == 0
                 ? 0.0
                 : static_cast<double>(cm.tp) /
                       static_cast<double>(cm.tp + cm.fn);
  m.f1 = (m.precision + m.recall) == 0.0
             ? 0.0
             : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

namespace detail {

// Indices ordered by score descending; ties keep input order (stable).
inline std::vector<std::size_t> rank_by_score(
    const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return scores[a] > scores[b];
                   });
  return order;
}

}  // namespace detail

// Average precision: mean over positives of precision at each positive's rank.
inline double auprc(const std::vector<double>& scores,
                    const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw DimensionError("auprc: " + std::to_string(scores.size()) +
                         " scores vs " + std::to_string(labels.size()) +
                         " labels");
  std::size_t positives = 0;
  for (int y : labels) {
    require_label(y, "auprc");
    if (y == 1) ++positives;
  }
  if (positives == 0)
    throw UndefinedMetricError("auprc: undefined without positive labels");
  const auto order = detail::rank_by_score(scores);
  double ap = 0.0;
  std::size_t seen_pos = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] == 1) {
      ++seen_pos;
      ap += static_cast<double>(seen_pos) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(positives);
}

inline PRCurve pr_curve(const std::vector<double>& scores,
                        const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw DimensionError("pr_curve: scores/labels length mismatch");
  std::size_t positives = 0;
  for (int y : labels) {
    require_label(y, "pr_curve");
    if (y == 1) ++positives;
  }
  if (positives == 0)
    throw UndefinedMetricError("pr_curve: undefined without positive labels");
  const auto order = detail::rank_by_score(scores);
  PRCurve curve;
  std::size_t seen_pos = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] == 1) ++seen_pos;
    curve.points.push_back(
        {static_cast<double>(seen_pos) / static_cast<double>(positives),
         static_cast<double>(seen_pos) / static_cast<double>(k + 1)});
  }
  return curve;
}

// Per-bin AUPRC keyed by post length; bins without a positive are absent.
inline std::map<LengthBin, double> stratify_by_length(
    const std::vector<std::size_t>& word_counts,
    const std::vector<double>& scores, const std::vector<int>& labels) {
  if (word_counts.size() != scores.size() || scores.size() != labels.size())
    throw DimensionError("stratify_by_length: parallel lists differ in size");
  std::map<LengthBin, std::pair<std::vector<double>, std::vector<int>>> bins;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto& [s, l] = bins[length_bin(word_counts[i])];
    s.push_back(scores[i]);
    l.push_back(labels[i]);
  }
  std::map<LengthBin, double> out;
  for (const auto& [bin, data] : bins) {
    const auto& [s, l] = data;
    if (std::count(l.begin(), l.end(), 1) == 0) continue;
    out.emplace(bin, auprc(s, l));
  }
  return out;
}

struct EvalReport {
  ConfusionMatrix cm;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auprc = 0.0;
  std::map<LengthBin, double> per_bin;
};

inline EvalReport eval_report(const std::vector<std::size_t>& word_counts,
                              const std::vector<double>& scores,
                              const std::vector<int>& preds,
                              const std::vector<int>& labels) {
  EvalReport r;
  r.cm = confusion(preds, labels);
  const ScalarMetrics m = scalar_metrics(r.cm);
  r.accuracy = m.accuracy;
  r.precision = m.precision;
  r.recall = m.recall;
  r.f1 = m.f1;
  r.auprc = auprc(scores, labels);
  r.per_bin = stratify_by_length(word_counts, scores, labels);
  return r;
}

}  // namespace mtd
