#include "fresh/discretize.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <tuple>

#include "fresh/error.h"

namespace fresh {

namespace {

constexpr double kTieTolerance = 1e-12;

constexpr double kRoundingSlack = 1e-9;

void check_k(std::size_t k, std::size_t length) {
  if (k < 1 || k > length) {
    throw Error(ErrorKind::kInvalidArgument,
                "k=" + std::to_string(k) + " outside [1, " +
                    std::to_string(length) + "]");
  }
}

// Indices ordered by descending score, ties by ascending index.
std::vector<int> rank_indices(std::span<const double> scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

// best[k] = mass of the best window of length k, for k in [0, l].
std::vector<double> best_masses(std::span<const double> scores) {
  const std::size_t l = scores.size();
  std::vector<double> prefix(l + 1, 0.0);
  for (std::size_t i = 0; i < l; ++i) prefix[i + 1] = prefix[i] + scores[i];
  std::vector<double> best(l + 1, 0.0);
  for (std::size_t k = 1; k <= l; ++k) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s + k <= l; ++s) {
      m = std::max(m, prefix[s + k] - prefix[s]);
    }
    best[k] = m;
  }
  return best;
}

}  // namespace

std::string_view scope_name(BudgetScope scope) {
  return scope == BudgetScope::kInstance ? "instance" : "global";
}

std::string_view strategy_name(Strategy strategy) {
  return strategy == Strategy::kTopK ? "top-k" : "contiguous";
}

BudgetScope parse_scope(std::string_view name) {
  if (name == "instance") return BudgetScope::kInstance;
  if (name == "global") return BudgetScope::kGlobal;
  throw Error(ErrorKind::kConfig, "unknown scope: " + std::string(name));
}

Strategy parse_strategy(std::string_view name) {
  if (name == "top-k" || name == "topk") return Strategy::kTopK;
  if (name == "contiguous" || name == "contig") return Strategy::kContiguous;
  throw Error(ErrorKind::kConfig, "unknown strategy: " + std::string(name));
}

void BudgetSpec::validate() const {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw Error(ErrorKind::kConfig, "ratio must lie in (0, 1]");
  }
  if (floor_ratio < 0.0 || floor_ratio >= ratio) {
    throw Error(ErrorKind::kConfig, "floor ratio must lie in [0, ratio)");
  }
}

std::size_t resolve_k(std::size_t length, double ratio) {
  const double k = std::floor(ratio * static_cast<double>(length) + 0.5 +
                              kRoundingSlack);
  return std::max<std::size_t>(1, static_cast<std::size_t>(k));
}

RationaleMask topk_instance(std::span<const double> scores, std::size_t k,
                            std::string doc_id) {
  check_k(k, scores.size());
  auto order = rank_indices(scores);
  RationaleMask mask;
  mask.doc_id = std::move(doc_id);
  mask.selected.assign(order.begin(), order.begin() + k);
  std::sort(mask.selected.begin(), mask.selected.end());
  mask.contiguous = false;
  mask.k = k;
  mask.ratio = static_cast<double>(k) / static_cast<double>(scores.size());
  return mask;
}

RationaleMask topk_instance(const ScoreVector& scores, std::size_t k) {
  return topk_instance(scores.scores, k, scores.doc_id);
}

std::size_t best_window_start(std::span<const double> scores, std::size_t k) {
  check_k(k, scores.size());
  double window = 0.0;
  for (std::size_t i = 0; i < k; ++i) window += scores[i];
  double best = window;
  std::size_t best_start = 0;
  for (std::size_t s = 1; s + k <= scores.size(); ++s) {
    window += scores[s + k - 1] - scores[s - 1];
    // The running sum drifts by rounding; near-equal windows are ties and
    // the earlier one is kept.
    if (window > best + kTieTolerance * std::max(1.0, std::fabs(best))) {
      best = window;
      best_start = s;
    }
  }
  return best_start;
}

RationaleMask best_span(std::span<const double> scores, std::size_t k,
                        std::string doc_id) {
  const std::size_t start = best_window_start(scores, k);
  RationaleMask mask;
  mask.doc_id = std::move(doc_id);
  mask.selected.resize(k);
  std::iota(mask.selected.begin(), mask.selected.end(), static_cast<int>(start));
  mask.contiguous = true;
  mask.k = k;
  mask.ratio = static_cast<double>(k) / static_cast<double>(scores.size());
  return mask;
}

RationaleMask best_span(const ScoreVector& scores, std::size_t k) {
  return best_span(scores.scores, k, scores.doc_id);
}

std::size_t global_budget(std::size_t total_tokens, double ratio) {
  return static_cast<std::size_t>(
      std::floor(ratio * static_cast<double>(total_tokens) + kRoundingSlack));
}

std::vector<RationaleMask> global_topk(const std::vector<ScoreVector>& corpus,
                                       double ratio, double floor_ratio) {
  BudgetSpec{ratio, BudgetScope::kGlobal, Strategy::kTopK, floor_ratio}.validate();
  if (corpus.empty()) throw Error(ErrorKind::kInvalidArgument, "empty corpus");

  std::size_t total = 0;
  std::size_t floor_total = 0;
  std::vector<std::size_t> floors(corpus.size());
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const std::size_t l = corpus[d].scores.size();
    if (l == 0) throw Error(ErrorKind::kInvalidArgument, "empty score vector");
    total += l;
    // With no floor phase every document still keeps its top token.
    floors[d] = floor_ratio > 0.0 ? std::min(resolve_k(l, floor_ratio), l) : 1;
    floor_total += floors[d];
  }
  const std::size_t budget = global_budget(total, ratio);
  if (budget < floor_total) {
    throw Error(ErrorKind::kConfig,
                "global budget " + std::to_string(budget) +
                    " is smaller than the per-document floors (" +
                    std::to_string(floor_total) + ")");
  }

  std::vector<std::vector<char>> taken(corpus.size());
  struct Candidate {
    double score;
    std::size_t doc;
    int index;
  };
  std::vector<Candidate> rest;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const auto& s = corpus[d].scores;
    taken[d].assign(s.size(), 0);
    auto order = rank_indices(s);
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (r < floors[d]) {
        taken[d][order[r]] = 1;
      } else {
        rest.push_back({s[order[r]], d, order[r]});
      }
    }
  }
  std::stable_sort(rest.begin(), rest.end(),
                   [](const Candidate& a, const Candidate& b) {
                     if (a.score != b.score) return a.score > b.score;
                     if (a.doc != b.doc) return a.doc < b.doc;
                     return a.index < b.index;
                   });
  for (std::size_t i = 0; i < budget - floor_total; ++i) {
    taken[rest[i].doc][rest[i].index] = 1;
  }

  std::vector<RationaleMask> masks(corpus.size());
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    masks[d].doc_id = corpus[d].doc_id;
    for (std::size_t i = 0; i < taken[d].size(); ++i) {
      if (taken[d][i]) masks[d].selected.push_back(static_cast<int>(i));
    }
    masks[d].contiguous = false;
    masks[d].ratio = ratio;
    masks[d].k = masks[d].selected.size();
  }
  return masks;
}

std::vector<RationaleMask> global_contig(const std::vector<ScoreVector>& corpus,
                                         double ratio, std::size_t min_len,
                                         ContigAllocation allocation) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw Error(ErrorKind::kConfig, "ratio must lie in (0, 1]");
  }
  if (min_len < 1) throw Error(ErrorKind::kConfig, "min_len must be >= 1");
  if (corpus.empty()) throw Error(ErrorKind::kInvalidArgument, "empty corpus");

  const std::size_t n = corpus.size();
  std::size_t total = 0;
  std::size_t minimal_total = 0;
  std::vector<std::size_t> lengths(n);
  std::vector<std::vector<double>> best(n);
  for (std::size_t d = 0; d < n; ++d) {
    const std::size_t l = corpus[d].scores.size();
    if (l == 0) throw Error(ErrorKind::kInvalidArgument, "empty score vector");
    total += l;
    lengths[d] = std::min(min_len, l);
    minimal_total += lengths[d];
    best[d] = best_masses(corpus[d].scores);
  }
  const std::size_t budget = global_budget(total, ratio);
  if (minimal_total > budget) {
    throw Error(ErrorKind::kConfig,
                "global budget " + std::to_string(budget) +
                    " cannot cover minimal spans of total length " +
                    std::to_string(minimal_total));
  }

  if (allocation == ContigAllocation::kGreedy) {
    // Max-heap on gain; among equal gains the smaller ordinal wins.
    using Entry = std::tuple<double, std::size_t>;
    auto worse = [](const Entry& a, const Entry& b) {
      if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
      return std::get<1>(a) > std::get<1>(b);
    };
    std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
    auto push = [&](std::size_t d) {
      const std::size_t k = lengths[d];
      if (k < corpus[d].scores.size()) heap.emplace(best[d][k + 1] - best[d][k], d);
    };
    for (std::size_t d = 0; d < n; ++d) push(d);
    for (std::size_t it = minimal_total; it < budget; ++it) {
      const auto [gain, d] = heap.top();
      heap.pop();
      ++lengths[d];
      push(d);
    }
  } else {
    // dp[b] = best total mass of the documents seen so far using b tokens.
    const double kNone = -std::numeric_limits<double>::infinity();
    std::vector<double> dp(budget + 1, kNone);
    dp[0] = 0.0;
    std::vector<std::vector<std::uint16_t>> choice(
        n, std::vector<std::uint16_t>(budget + 1, 0));
    for (std::size_t d = 0; d < n; ++d) {
      const std::size_t l = corpus[d].scores.size();
      std::vector<double> next(budget + 1, kNone);
      for (std::size_t b = 0; b <= budget; ++b) {
        if (dp[b] == kNone) continue;
        for (std::size_t k = lengths[d]; k <= l && b + k <= budget; ++k) {
          const double v = dp[b] + best[d][k];
          if (v > next[b + k]) {
            next[b + k] = v;
            choice[d][b + k] = static_cast<std::uint16_t>(k);
          }
        }
      }
      dp = std::move(next);
    }
    if (dp[budget] == kNone) {
      throw Error(ErrorKind::kConfig, "global budget exceeds corpus length");
    }
    std::size_t b = budget;
    for (std::size_t d = n; d-- > 0;) {
      lengths[d] = choice[d][b];
      b -= lengths[d];
    }
  }

  std::vector<RationaleMask> masks(n);
  for (std::size_t d = 0; d < n; ++d) {
    masks[d] = best_span(corpus[d].scores, lengths[d], corpus[d].doc_id);
    masks[d].ratio = ratio;
  }
  return masks;
}

std::vector<RationaleMask> discretize(const std::vector<ScoreVector>& corpus,
                                      const BudgetSpec& spec) {
  spec.validate();
  if (spec.scope == BudgetScope::kGlobal) {
    if (corpus.empty()) return {};
    if (spec.strategy == Strategy::kTopK) {
      return global_topk(corpus, spec.ratio, spec.floor_ratio);
    }
    std::size_t min_len = 1;
    if (spec.floor_ratio > 0.0) {
      min_len = std::numeric_limits<std::size_t>::max();
      for (const auto& s : corpus) {
        min_len = std::min(min_len, resolve_k(s.scores.size(), spec.floor_ratio));
      }
    }
    return global_contig(corpus, spec.ratio, min_len);
  }
  std::vector<RationaleMask> masks;
  masks.reserve(corpus.size());
  for (const auto& s : corpus) {
    const std::size_t k = std::min(resolve_k(s.scores.size(), spec.ratio),
                                   s.scores.size());
    masks.push_back(spec.strategy == Strategy::kTopK ? topk_instance(s, k)
                                                     : best_span(s, k));
    masks.back().ratio = spec.ratio;
  }
  return masks;
}

Document apply_rationale(const Document& doc, const RationaleMask& mask) {
  if (mask.doc_id != doc.id) {
    throw Error(ErrorKind::kInvalidArgument,
                "mask for '" + mask.doc_id + "' applied to document '" +
                    doc.id + "'");
  }
  if (mask.selected.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "empty mask for " + doc.id);
  }
  Document out;
  out.id = doc.id;
  out.query = doc.query;
  out.label = doc.label;
  std::vector<int> gold;
  int prev = -1;
  for (int idx : mask.selected) {
    if (idx <= prev || idx >= static_cast<int>(doc.length())) {
      throw Error(ErrorKind::kInvalidArgument,
                  "mask index " + std::to_string(idx) + " invalid for " + doc.id);
    }
    prev = idx;
    if (doc.gold_rationale &&
        std::binary_search(doc.gold_rationale->begin(),
                           doc.gold_rationale->end(), idx)) {
      gold.push_back(static_cast<int>(out.tokens.size()));
    }
    out.tokens.push_back(doc.tokens[idx]);
  }
  if (doc.gold_rationale && !gold.empty()) out.gold_rationale = std::move(gold);
  return out;
}

DatasetSplit apply_rationales(const DatasetSplit& split,
                              const std::vector<RationaleMask>& masks) {
  if (masks.size() != split.documents.size()) {
    throw Error(ErrorKind::kInvalidArgument,
                "mask count does not match split size");
  }
  DatasetSplit out;
  out.name = split.name;
  out.num_classes = split.num_classes;
  out.vocabulary = split.vocabulary;
  out.documents.reserve(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) {
    out.documents.push_back(apply_rationale(split.documents[i], masks[i]));
  }
  return out;
}

RationaleMask full_mask(const Document& doc) {
  RationaleMask mask;
  mask.doc_id = doc.id;
  mask.selected.resize(doc.length());
  std::iota(mask.selected.begin(), mask.selected.end(), 0);
  mask.contiguous = true;
  mask.ratio = 1.0;
  mask.k = doc.length();
  return mask;
}

double mask_mass(std::span<const double> scores, const RationaleMask& mask) {
  double m = 0.0;
  for (int i : mask.selected) m += scores[i];
  return m;
}

}  // namespace fresh
