#include "mtlfer/metrics.hpp"

#include <cstdio>
#include <string>

#include "mtlfer/errors.hpp"

namespace mtlfer {

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (const auto& row : counts) {
    for (std::size_t v : row) n += v;
  }
  return n;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth, std::span<const std::size_t> pred) {
  if (truth.size() != pred.size()) {
    throw UsageError("confusion_matrix: " + std::to_string(truth.size()) + " labels but " +
                     std::to_string(pred.size()) + " predictions");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= kNumClasses || pred[i] >= kNumClasses) {
      throw UsageError("confusion_matrix: class id out of range at index " + std::to_string(i));
    }
    cm.counts[truth[i]][pred[i]] += 1;
  }
  return cm;
}

MetricsReport macro_f1(const ConfusionMatrix& cm) {
  MetricsReport r;
  double total = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double tp = static_cast<double>(cm.counts[c][c]);
    double fp = 0.0, fn = 0.0;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      if (k == c) continue;
      fp += static_cast<double>(cm.counts[k][c]);
      fn += static_cast<double>(cm.counts[c][k]);
      r.support[c] += cm.counts[c][k];
    }
    r.support[c] += cm.counts[c][c];
    const double precision = (tp + fp) > 0.0 ? tp / (tp + fp) : 0.0;
    const double recall = (tp + fn) > 0.0 ? tp / (tp + fn) : 0.0;
    r.per_class_f1[c] =
        (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    total += r.per_class_f1[c];
  }
  r.macro_f1 = total / static_cast<double>(kNumClasses);
  return r;
}

std::string format_report(const MetricsReport& report) {
  std::string out;
  char buf[96];
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::snprintf(buf, sizeof buf, "f1[%s]=%.4f\n", std::string(kClassNames[c]).c_str(),
                  report.per_class_f1[c]);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "macro_f1=%.4f\n", report.macro_f1);
  out += buf;
  return out;
}

}  // namespace mtlfer
