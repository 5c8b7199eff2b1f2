#include "mmfusion/metrics.hpp"

#include <charconv>

namespace mmfusion {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

ClassMetrics class_metrics(std::size_t hit, std::size_t false_alarm, std::size_t miss) {
  ClassMetrics m;
  m.precision = ratio(hit, hit + false_alarm);
  m.recall = ratio(hit, hit + miss);
  m.f1 = f1_score(m.precision, m.recall);
  return m;
}

}  // namespace

void ConfusionCounts::add(bool predicted_fake, bool is_fake) {
  if (predicted_fake) {
    ++(is_fake ? tp : fp);
  } else {
    ++(is_fake ? fn : tn);
  }
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& other) {
  tp += other.tp;
  fp += other.fp;
  tn += other.tn;
  fn += other.fn;
  return *this;
}

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

MetricsReport MetricsReport::from_counts(const ConfusionCounts& counts) {
  MetricsReport r;
  r.counts = counts;
  r.accuracy = ratio(counts.tp + counts.tn, counts.total());
  r.fake = class_metrics(counts.tp, counts.fp, counts.fn);
  r.real = class_metrics(counts.tn, counts.fn, counts.fp);
  return r;
}

std::string format_double(double value) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return ec == std::errc{} ? std::string(buf, end) : std::string("nan");
}

std::string format_metrics(const MetricsReport& report) {
  std::string out;
  auto line = [&](const char* key, double v) { out += std::string(key) + "=" + format_double(v) + "\n"; };
  line("accuracy", report.accuracy);
  line("fake_precision", report.fake.precision);
  line("fake_recall", report.fake.recall);
  line("fake_f1", report.fake.f1);
  line("real_precision", report.real.precision);
  line("real_recall", report.real.recall);
  line("real_f1", report.real.f1);
  return out;
}

}  // namespace mmfusion
