#pragma once

#include <cstddef>
#include <string>

namespace mmfusion {

// Confusion counts with fake (label 1) as the positive class.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  void add(bool predicted_fake, bool is_fake);
  std::size_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& other);
  bool operator==(const ConfusionCounts&) const = default;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Ratios with a zero denominator are reported as 0.
double f1_score(double precision, double recall);

struct MetricsReport {
  double accuracy = 0.0;
  ClassMetrics fake;
  ClassMetrics real;
  ConfusionCounts counts;

  static MetricsReport from_counts(const ConfusionCounts& counts);
};

// Seven key=value lines: accuracy, then precision/recall/f1 for fake and real.
std::string format_metrics(const MetricsReport& report);

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace mmfusion
