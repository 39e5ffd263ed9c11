#ifndef FRESH_METRICS_H_
#define FRESH_METRICS_H_

#include <optional>
#include <span>
#include <vector>

namespace fresh {

struct Metrics {
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::vector<double> per_class_f1;

  bool operator==(const Metrics&) const = default;
};

// Per-class F1 = 2TP / (2TP + FP + FN). A class absent from both the
// predictions and the gold labels has F1 0 and still counts toward the
// unweighted macro average.
Metrics classification_metrics(std::span<const int> gold,
                               std::span<const int> predicted, int num_classes);

struct TokenAgreement {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Set-overlap metrics between predicted and gold token indices. Returns
// nullopt when gold is empty.
std::optional<TokenAgreement> token_agreement(std::span<const int> predicted,
                                              std::span<const int> gold);

struct SummaryStats {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  // Sample standard deviation (n - 1 denominator); 0 for a single value.
  double stddev = 0.0;
};

SummaryStats summarize(std::span<const double> values);

}  // namespace fresh

#endif  // FRESH_METRICS_H_
