#include <numeric>

#include "gtest/gtest.h"

#include "fresh/corpus.h"
#include "fresh/discretize.h"
#include "fresh/error.h"
#include "test_util.h"

namespace fresh {
namespace {

using testing::as_corpus;
using testing::corpus_mass;

std::vector<int> ids(std::initializer_list<int> v) { return v; }

TEST(ResolveK, Examples) {
  EXPECT_EQ(resolve_k(20, 0.2), 4u);
  EXPECT_EQ(resolve_k(3, 0.1), 1u);
  EXPECT_EQ(resolve_k(10, 0.25), 3u);
  EXPECT_EQ(resolve_k(10, 1.0), 10u);
}

TEST(TopK, Examples) {
  EXPECT_EQ(topk_instance(std::vector<double>{0.1, 0.5, 0.2, 0.7}, 2).selected, ids({1, 3}));
  EXPECT_EQ(topk_instance(std::vector<double>{0.3, 0.3, 0.3}, 2).selected, ids({0, 1}));
  const auto all = topk_instance(std::vector<double>{0.4, 0.1, 0.9}, 3);
  EXPECT_EQ(all.selected, ids({0, 1, 2}));
  EXPECT_FALSE(all.contiguous);
}

TEST(TopK, RejectsBadK) {
  EXPECT_THROW(topk_instance(std::vector<double>{0.1, 0.2}, 0), Error);
  EXPECT_THROW(topk_instance(std::vector<double>{0.1, 0.2}, 3), Error);
}

TEST(BestSpan, Examples) {
  const auto m = best_span(std::vector<double>{0.1, 0.5, 0.2, 0.7, 0.6}, 2);
  EXPECT_EQ(m.selected, ids({3, 4}));
  EXPECT_TRUE(m.contiguous);
  EXPECT_EQ(best_span(std::vector<double>{1, 1, 1}, 2).selected, ids({0, 1}));
  EXPECT_THROW(best_span(std::vector<double>{1, 1}, 3), Error);
}

TEST(BestSpan, MatchesExhaustiveWindows) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(50);
    const auto s = testing::random_scores(rng, n);
    const std::size_t k = 1 + rng.below(n);
    const auto [start, mass] = testing::oracle_best_window(s, k);
    const auto m = best_span(s, k);
    ASSERT_EQ(m.selected.size(), k);
    EXPECT_EQ(static_cast<std::size_t>(m.selected.front()), start) << "trial " << trial;
    EXPECT_NEAR(mask_mass(s, m), mass, 1e-12);
  }
}

TEST(Selectors, TopKMassDominatesSpanMass) {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(30);
    const auto s = testing::random_scores(rng, n);
    const std::size_t k = 1 + rng.below(n);
    EXPECT_GE(mask_mass(s, topk_instance(s, k)) + 1e-12, mask_mass(s, best_span(s, k)));
  }
}

TEST(GlobalTopK, WorkedExample) {
  const std::vector<std::vector<double>> docs = {{0.9, 0.1}, {0.5, 0.4}};
  const auto masks = global_topk(as_corpus(docs), 0.5, 0.0);
  EXPECT_EQ(masks[0].selected, ids({0}));
  EXPECT_EQ(masks[1].selected, ids({0}));
}

TEST(GlobalTopK, FullBudgetSelectsEverything) {
  const std::vector<std::vector<double>> docs = {{0.9, 0.1, 0.3}, {0.5, 0.4}};
  const auto masks = global_topk(as_corpus(docs), 1.0, 0.0);
  EXPECT_EQ(masks[0].selected, ids({0, 1, 2}));
  EXPECT_EQ(masks[1].selected, ids({0, 1}));
}

TEST(GlobalTopK, EveryDocumentKeepsOneToken) {
  // The budget alone would go entirely to the first document.
  const std::vector<std::vector<double>> docs = {{0.9, 0.8, 0.7, 0.6}, {0.0, 0.0}};
  const auto masks = global_topk(as_corpus(docs), 0.5, 0.0);
  EXPECT_EQ(masks[0].size() + masks[1].size(), 3u);
  EXPECT_EQ(masks[1].size(), 1u);
}

TEST(GlobalTopK, InfeasibleFloorIsConfigError) {
  const std::vector<std::vector<double>> docs = {{0.9}, {0.5}, {0.1}};
  try {
    global_topk(as_corpus(docs), 0.4, 0.0);  // budget 1, three floors of 1
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(GlobalContig, WorkedExample) {
  const std::vector<std::vector<double>> docs = {{5, 0, 0}, {3, 3, 0}};
  for (auto alloc : {ContigAllocation::kExact, ContigAllocation::kGreedy}) {
    const auto masks = global_contig(as_corpus(docs), 0.5, 1, alloc);
    EXPECT_EQ(masks[0].selected, ids({0}));
    EXPECT_EQ(masks[1].selected, ids({0, 1}));
  }
}

TEST(GlobalContig, SingleDocumentEqualsBestSpan) {
  const std::vector<double> s = {0.1, 0.5, 0.2, 0.7, 0.6, 0.05, 0.3, 0.9, 0.2, 0.1};
  const auto masks = global_contig(as_corpus({s}), 0.3, 1);
  EXPECT_EQ(masks[0], [&] {
    auto m = best_span(s, 3, "doc0");
    m.ratio = masks[0].ratio;
    return m;
  }());
}

TEST(GlobalContig, GreedyMissesNonConcaveGains) {
  // A's best spans: 5 (k=1), 5, 5, 11 (k=4). B's: 1, 2. With 5 tokens the
  // marginal-gain rule spends them on B and A's second token; the optimum is
  // A at full length plus one token of B.
  const std::vector<std::vector<double>> docs = {{5, 0, 0, 6}, {1, 1}};
  const auto greedy = global_contig(as_corpus(docs), 5.0 / 6.0, 1, ContigAllocation::kGreedy);
  const auto exact = global_contig(as_corpus(docs), 5.0 / 6.0, 1, ContigAllocation::kExact);
  EXPECT_DOUBLE_EQ(corpus_mass(docs, greedy), 8.0);
  EXPECT_DOUBLE_EQ(corpus_mass(docs, exact), 12.0);
}

// Random corpora of at most 3 documents x 6 tokens, checked against full
// enumeration.
class GlobalOracle : public ::testing::Test {
 protected:
  std::vector<std::vector<double>> random_corpus(Rng& rng) {
    std::vector<std::vector<double>> docs(1 + rng.below(3));
    for (auto& d : docs) d = testing::random_scores(rng, 1 + rng.below(6));
    return docs;
  }
  static std::size_t total(const std::vector<std::vector<double>>& docs) {
    std::size_t t = 0;
    for (const auto& d : docs) t += d.size();
    return t;
  }
};

TEST_F(GlobalOracle, TopKMatchesExhaustiveSearch) {
  Rng rng(77);
  int checked = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const auto docs = random_corpus(rng);
    const double p = 0.05 + 0.95 * rng.uniform();
    const double q = rng.below(2) ? 0.0 : p * rng.uniform();
    std::vector<std::size_t> floors;
    std::size_t floor_total = 0;
    for (const auto& d : docs) {
      floors.push_back(q > 0.0 ? resolve_k(d.size(), q) : 1);
      floor_total += floors.back();
    }
    const std::size_t budget = global_budget(total(docs), p);
    if (floor_total > budget) {
      EXPECT_THROW(global_topk(as_corpus(docs), p, q), Error);
      continue;
    }
    const auto masks = global_topk(as_corpus(docs), p, q);
    std::size_t used = 0;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      EXPECT_GE(masks[i].size(), floors[i]);
      used += masks[i].size();
    }
    EXPECT_EQ(used, budget);
    EXPECT_NEAR(corpus_mass(docs, masks), testing::oracle_global_topk_mass(docs, floors, budget),
                1e-12)
        << "trial " << trial;
    ++checked;
  }
  EXPECT_GT(checked, 500);
}

TEST_F(GlobalOracle, ContigMatchesExhaustiveSearch) {
  Rng rng(91);
  int checked = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const auto docs = random_corpus(rng);
    const double p = 0.05 + 0.95 * rng.uniform();
    const std::size_t min_len = 1 + rng.below(2);
    std::vector<std::size_t> mins;
    std::size_t min_total = 0;
    for (const auto& d : docs) {
      mins.push_back(std::min(min_len, d.size()));
      min_total += mins.back();
    }
    const std::size_t budget = global_budget(total(docs), p);
    if (min_total > budget) {
      EXPECT_THROW(global_contig(as_corpus(docs), p, min_len), Error);
      continue;
    }
    const auto masks = global_contig(as_corpus(docs), p, min_len);
    std::size_t used = 0;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      EXPECT_GE(masks[i].size(), mins[i]);
      EXPECT_TRUE(masks[i].contiguous);
      const auto& sel = masks[i].selected;
      EXPECT_EQ(static_cast<std::size_t>(sel.back() - sel.front() + 1), sel.size());
      used += masks[i].size();
    }
    EXPECT_EQ(used, budget);
    EXPECT_NEAR(corpus_mass(docs, masks), testing::oracle_global_contig_mass(docs, mins, budget),
                1e-12)
        << "trial " << trial;
    ++checked;
  }
  EXPECT_GT(checked, 500);
}

TEST(Discretize, DispatchesOnSpec) {
  const std::vector<std::vector<double>> docs = {{0.1, 0.9, 0.2, 0.8, 0.3}};
  BudgetSpec spec;
  spec.ratio = 0.4;
  spec.strategy = Strategy::kTopK;
  EXPECT_EQ(discretize(as_corpus(docs), spec)[0].selected, ids({1, 3}));
  spec.strategy = Strategy::kContiguous;
  EXPECT_EQ(discretize(as_corpus(docs), spec)[0].selected, ids({1, 2}));
}

TEST(Discretize, DeterministicAcrossCalls) {
  Rng rng(3);
  std::vector<std::vector<double>> docs;
  for (int i = 0; i < 20; ++i) docs.push_back(testing::random_scores(rng, 5 + rng.below(20)));
  for (auto scope : {BudgetScope::kInstance, BudgetScope::kGlobal}) {
    for (auto strategy : {Strategy::kTopK, Strategy::kContiguous}) {
      BudgetSpec spec;
      spec.scope = scope;
      spec.strategy = strategy;
      EXPECT_EQ(discretize(as_corpus(docs), spec), discretize(as_corpus(docs), spec));
    }
  }
}

TEST(ApplyRationale, KeepsSelectedTokensInOrder) {
  const auto split = testing::split_from_texts({"alpha beta gamma delta"}, {1});
  Document doc = split.documents[0];
  doc.query = tokenize("which one");
  doc.gold_rationale = std::vector<int>{1, 2};
  RationaleMask mask;
  mask.doc_id = doc.id;
  mask.selected = {1, 3};
  const Document out = apply_rationale(doc, mask);
  ASSERT_EQ(out.length(), 2u);
  EXPECT_EQ(out.tokens[0].surface, "beta");
  EXPECT_EQ(out.tokens[1].surface, "delta");
  EXPECT_EQ(out.query, doc.query);
  EXPECT_EQ(out.label, 1);

  // Re-applying the now full mask is the identity.
  EXPECT_EQ(apply_rationale(out, full_mask(out)), out);
  EXPECT_EQ(apply_rationale(doc, full_mask(doc)), doc);
}

TEST(ApplyRationale, RejectsMismatchedId) {
  const auto split = testing::split_from_texts({"alpha beta"}, {0});
  RationaleMask mask;
  mask.doc_id = "other";
  mask.selected = {0};
  EXPECT_THROW(apply_rationale(split.documents[0], mask), Error);
}

TEST(BudgetSpec, Validation) {
  BudgetSpec spec;
  spec.ratio = 0.0;
  EXPECT_THROW(spec.validate(), Error);
  spec.ratio = 0.2;
  spec.scope = BudgetScope::kGlobal;
  spec.floor_ratio = 0.2;
  EXPECT_THROW(spec.validate(), Error);
  spec.floor_ratio = 0.1;
  EXPECT_NO_THROW(spec.validate());
}

}  // namespace
}  // namespace fresh
