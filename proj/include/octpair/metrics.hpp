#pragma once

#include <algorithm>
#include <array>
#include <numeric>
#include <string>
#include <vector>

#include "octpair/common.hpp"
#include "octpair/tissue.hpp"

namespace octpair {

// One-vs-rest average precision: area under the precision-recall curve with
// step-wise (non-interpolated) summation, ties grouped by score.
inline double average_precision(const std::vector<double>& scores,
                                const std::vector<bool>& positives) {
  if (scores.size() != positives.size())
    throw ConfigError("average_precision: size mismatch");
  const long total_pos = std::count(positives.begin(), positives.end(), true);
  if (total_pos == 0) throw ConfigError("average_precision: no positives");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  double recall_prev = 0.0;
  long tp = 0, seen = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (positives[order[j]]) ++tp;
      ++seen;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - recall_prev) * precision;
    recall_prev = recall;
    i = j;
  }
  return ap;
}

struct ClassMetrics {
  long support = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double average_precision = 0.0;  // meaningful only when support > 0
};

struct MetricsReport {
  double weighted_ap = 0.0;
  double weighted_f1 = 0.0;
  std::array<ClassMetrics, kNumClasses> per_class{};
  std::vector<std::string> absent_classes;  // support 0; AP term skipped
  long num_samples = 0;
};

// scores: N x 4 class scores (softmax); labels: true class indices.
// Predictions are the argmax (first index on ties).
inline MetricsReport evaluate_predictions(const MatrixD& scores,
                                          const std::vector<int>& labels) {
  const Eigen::Index n = scores.rows();
  if (scores.cols() != kNumClasses) throw ConfigError("expected 4 score columns");
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw ConfigError("labels size does not match scores");
  if (n == 0) throw ConfigError("no samples to evaluate");

  std::vector<int> preds(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index arg = 0;
    scores.row(i).maxCoeff(&arg);
    preds[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }

  MetricsReport report;
  report.num_samples = n;
  for (int c = 0; c < kNumClasses; ++c) {
    ClassMetrics& m = report.per_class[static_cast<std::size_t>(c)];
    long tp = 0, fp = 0, fn = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool is_true = labels[static_cast<std::size_t>(i)] == c;
      const bool is_pred = preds[static_cast<std::size_t>(i)] == c;
      if (is_true) ++m.support;
      if (is_pred && is_true) ++tp;
      if (is_pred && !is_true) ++fp;
      if (!is_pred && is_true) ++fn;
    }
    m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;

    if (m.support == 0) {
      report.absent_classes.emplace_back(to_string(static_cast<TissueClass>(c)));
      continue;
    }
    std::vector<double> class_scores(static_cast<std::size_t>(n));
    std::vector<bool> positives(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      class_scores[static_cast<std::size_t>(i)] = scores(i, c);
      positives[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)] == c;
    }
    m.average_precision = average_precision(class_scores, positives);
  }

  // support-normalized weights; absent classes contribute weight 0
  for (int c = 0; c < kNumClasses; ++c) {
    const ClassMetrics& m = report.per_class[static_cast<std::size_t>(c)];
    const double w = static_cast<double>(m.support) / static_cast<double>(n);
    report.weighted_f1 += w * m.f1;
    if (m.support > 0) report.weighted_ap += w * m.average_precision;
  }
  return report;
}

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single value
  int count = 0;
};

inline Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.count = static_cast<int>(values.size());
  if (values.empty()) return a;
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) /
           static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return a;
}

}  // namespace octpair
