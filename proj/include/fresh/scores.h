#ifndef FRESH_SCORES_H_
#define FRESH_SCORES_H_

#include <string>
#include <string_view>
#include <vector>

namespace fresh {

enum class Scorer { kAttention, kGradient };

std::string_view scorer_name(Scorer scorer);
Scorer parse_scorer(std::string_view name);

// Word-level importance scores for one document.
struct ScoreVector {
  std::string doc_id;
  std::vector<double> scores;
  Scorer scorer = Scorer::kAttention;

  bool operator==(const ScoreVector&) const = default;
};

}  // namespace fresh

#endif  // FRESH_SCORES_H_
