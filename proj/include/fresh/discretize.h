#ifndef FRESH_DISCRETIZE_H_
#define FRESH_DISCRETIZE_H_

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fresh/corpus.h"
#include "fresh/scores.h"

namespace fresh {

// A discrete rationale: the token indices kept from one document.
struct RationaleMask {
  std::string doc_id;
  // Sorted, unique.
  std::vector<int> selected;
  bool contiguous = false;
  double ratio = 0.0;
  std::size_t k = 0;

  std::size_t size() const { return selected.size(); }
  bool operator==(const RationaleMask&) const = default;
};

enum class BudgetScope { kInstance, kGlobal };
enum class Strategy { kTopK, kContiguous };

std::string_view scope_name(BudgetScope scope);
std::string_view strategy_name(Strategy strategy);
BudgetScope parse_scope(std::string_view name);
Strategy parse_strategy(std::string_view name);

struct BudgetSpec {
  double ratio = 0.2;
  BudgetScope scope = BudgetScope::kInstance;
  Strategy strategy = Strategy::kTopK;
  // Per-document floor for global scope.
  double floor_ratio = 0.0;

  void validate() const;
};

// How global_contig divides the corpus budget among documents.
enum class ContigAllocation {
  // Exact maximum total mass over all per-document length assignments.
  kExact,
  // Repeatedly grant one token to the document with the largest marginal
  // gain of its best span.
  kGreedy,
};

// max(1, round_half_up(p * l)).
std::size_t resolve_k(std::size_t length, double ratio);

RationaleMask topk_instance(std::span<const double> scores, std::size_t k,
                            std::string doc_id = {});
RationaleMask topk_instance(const ScoreVector& scores, std::size_t k);

RationaleMask best_span(std::span<const double> scores, std::size_t k,
                        std::string doc_id = {});
RationaleMask best_span(const ScoreVector& scores, std::size_t k);

// Start index of the maximal-sum window of length k (ties: smallest start).
std::size_t best_window_start(std::span<const double> scores, std::size_t k);

// Corpus budget floor(p * total tokens). The small tolerance keeps products
// such as 0.3 * 10 from landing one below the intended integer.
std::size_t global_budget(std::size_t total_tokens, double ratio);

std::vector<RationaleMask> global_topk(const std::vector<ScoreVector>& corpus,
                                       double ratio, double floor_ratio);

std::vector<RationaleMask> global_contig(
    const std::vector<ScoreVector>& corpus, double ratio, std::size_t min_len,
    ContigAllocation allocation = ContigAllocation::kExact);

// Dispatches on spec.scope / spec.strategy.
std::vector<RationaleMask> discretize(const std::vector<ScoreVector>& corpus,
                                      const BudgetSpec& spec);

// Keeps exactly the selected tokens, in order. Query and label are preserved.
Document apply_rationale(const Document& doc, const RationaleMask& mask);
DatasetSplit apply_rationales(const DatasetSplit& split,
                              const std::vector<RationaleMask>& masks);

RationaleMask full_mask(const Document& doc);

// Total score mass covered by a mask.
double mask_mass(std::span<const double> scores, const RationaleMask& mask);

}  // namespace fresh

#endif  // FRESH_DISCRETIZE_H_
