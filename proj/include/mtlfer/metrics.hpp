#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>

#include "mtlfer/model.hpp"

namespace mtlfer {

/// Expression classes in label order.
inline constexpr std::array<std::string_view, kNumClasses> kClassNames{
    "anger", "disgust", "fear", "happiness", "sadness", "surprise"};

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> counts{};

  std::size_t total() const;
  bool operator==(const ConfusionMatrix&) const = default;
};

struct MetricsReport {
  std::array<double, kNumClasses> per_class_f1{};
  std::array<std::size_t, kNumClasses> support{};
  double macro_f1 = 0.0;

  bool operator==(const MetricsReport&) const = default;
};

/// Throws UsageError on unequal lengths or ids outside 0..5.
ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth, std::span<const std::size_t> pred);

/// Per-class F1 with zero-division defined as 0, and their unweighted mean.
MetricsReport macro_f1(const ConfusionMatrix& cm);

/// Six `f1[name]=v` lines and `macro_f1=v`, 4 decimal places.
std::string format_report(const MetricsReport& report);

}  // namespace mtlfer
