#include "fresh/metrics.h"

#include <algorithm>
#include <cmath>

#include "fresh/error.h"

namespace fresh {

Metrics classification_metrics(std::span<const int> gold,
                               std::span<const int> predicted, int num_classes) {
  if (gold.size() != predicted.size()) {
    throw Error(ErrorKind::kInvalidArgument, "gold/prediction size mismatch");
  }
  std::vector<double> tp(num_classes, 0.0), fp(num_classes, 0.0),
      fn(num_classes, 0.0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == predicted[i]) {
      ++correct;
      tp[gold[i]] += 1.0;
    } else {
      fp[predicted[i]] += 1.0;
      fn[gold[i]] += 1.0;
    }
  }
  Metrics m;
  m.per_class_f1.resize(num_classes);
  double sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    m.per_class_f1[c] = denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;
    sum += m.per_class_f1[c];
  }
  m.macro_f1 = sum / num_classes;
  m.accuracy = gold.empty() ? 0.0
                            : static_cast<double>(correct) /
                                  static_cast<double>(gold.size());
  return m;
}

std::optional<TokenAgreement> token_agreement(std::span<const int> predicted,
                                              std::span<const int> gold) {
  if (gold.empty()) return std::nullopt;
  std::vector<int> p(predicted.begin(), predicted.end());
  std::vector<int> g(gold.begin(), gold.end());
  std::sort(p.begin(), p.end());
  std::sort(g.begin(), g.end());
  std::vector<int> both;
  std::set_intersection(p.begin(), p.end(), g.begin(), g.end(),
                        std::back_inserter(both));
  TokenAgreement a;
  const double overlap = static_cast<double>(both.size());
  a.precision = p.empty() ? 0.0 : overlap / static_cast<double>(p.size());
  a.recall = overlap / static_cast<double>(g.size());
  a.f1 = (a.precision + a.recall) > 0.0
             ? 2.0 * a.precision * a.recall / (a.precision + a.recall)
             : 0.0;
  return a;
}

SummaryStats summarize(std::span<const double> values) {
  SummaryStats s;
  if (values.empty()) return s;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

}  // namespace fresh
