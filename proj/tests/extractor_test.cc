#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <string>

#include "fresh/corpus.h"
#include "fresh/discretize.h"
#include "fresh/error.h"
#include "fresh/extractor.h"
#include "fresh/io.h"
#include "fresh/rng.h"
#include "test_util.h"

namespace fresh {
namespace {

RationaleMask mask_of(const std::string& id, std::vector<int> selected) {
  RationaleMask m;
  m.doc_id = id;
  m.k = selected.size();
  m.selected = std::move(selected);
  return m;
}

// A split of n documents; every other one carries a gold rationale when
// gold_every is 2, all of them when it is 1.
DatasetSplit gold_split(std::size_t n, std::size_t gold_every = 1) {
  std::vector<std::string> texts;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    texts.push_back("w" + std::to_string(i) + " x y z");
    labels.push_back(static_cast<int>(i % 2));
  }
  auto split = testing::split_from_texts(texts, labels);
  for (std::size_t i = 0; i < n; ++i) {
    if (i % gold_every == 0) split.documents[i].gold_rationale = std::vector<int>{0, 1};
  }
  return split;
}

std::vector<TokenTargets> pseudo_for(const DatasetSplit& split) {
  std::vector<RationaleMask> masks;
  for (const auto& d : split.documents) masks.push_back(mask_of(d.id, {3}));
  return make_pseudo_targets(masks, split);
}

TEST(PseudoTargets, SelectedIndicesBecomeOnes) {
  auto split = testing::split_from_texts({"a b c"}, {0});
  const auto t = make_pseudo_targets({mask_of("d0", {0, 2})}, split);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].labels, (std::vector<int>{1, 0, 1}));
  EXPECT_EQ(t[0].source, TargetSource::kPseudo);
  EXPECT_EQ(t[0].doc_id, "d0");
  const auto full = make_pseudo_targets({full_mask(split.documents[0])}, split);
  EXPECT_EQ(full[0].labels, (std::vector<int>{1, 1, 1}));
}

TEST(PseudoTargets, MissingMaskIsError) {
  auto split = testing::split_from_texts({"a b c", "d e"}, {0, 1});
  EXPECT_THROW(make_pseudo_targets({mask_of("d0", {0})}, split), Error);
}

TEST(PseudoTargets, SerializationRoundTrip) {
  auto split = gold_split(6);
  auto targets = mix_supervision(pseudo_for(split), split, 0.5, 3);
  const auto back = targets_from_jsonl(targets_to_jsonl(targets));
  EXPECT_EQ(back, targets);
}

TEST(MixSupervision, ZeroFractionIsIdentity) {
  auto split = gold_split(10);
  const auto pseudo = pseudo_for(split);
  EXPECT_EQ(mix_supervision(pseudo, split, 0.0, 1), pseudo);
}

TEST(MixSupervision, FullFractionUsesEveryGoldDocument) {
  auto split = gold_split(10, 2);
  const auto pseudo = pseudo_for(split);
  const auto mixed = mix_supervision(pseudo, split, 1.0, 1);
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split.documents[i].gold_rationale) {
      EXPECT_EQ(mixed[i].source, TargetSource::kHuman);
      EXPECT_EQ(mixed[i].labels, (std::vector<int>{1, 1, 0, 0}));
    } else {
      EXPECT_EQ(mixed[i], pseudo[i]);
    }
  }
}

TEST(MixSupervision, HalfReplacesExactlyHalfDeterministically) {
  auto split = gold_split(10);
  const auto pseudo = pseudo_for(split);
  const auto a = mix_supervision(pseudo, split, 0.5, 42);
  const auto b = mix_supervision(pseudo, split, 0.5, 42);
  EXPECT_EQ(a, b);
  std::size_t human = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].source == TargetSource::kHuman) {
      ++human;
    } else {
      EXPECT_EQ(a[i], pseudo[i]);
    }
  }
  EXPECT_EQ(human, 5u);
  // Different seeds pick different subsets somewhere among a few tries.
  bool differs = false;
  for (std::uint64_t s = 1; s < 6 && !differs; ++s) {
    differs = supervised_subset(split, 0.5, s) != supervised_subset(split, 0.5, 42);
  }
  EXPECT_TRUE(differs);
}

TEST(MixSupervision, SubsetSizeIsCeilingOverGoldBearingDocs) {
  // 5 of 10 documents carry gold; ceil(0.3 * 5) = 2.
  auto split = gold_split(10, 2);
  const auto subset = supervised_subset(split, 0.3, 9);
  EXPECT_EQ(subset.size(), 2u);
  for (std::size_t i : subset) EXPECT_TRUE(split.documents[i].gold_rationale.has_value());
}

TEST(MixSupervision, NoGoldWithPositiveFractionIsError) {
  auto split = testing::split_from_texts({"a b", "c d"}, {0, 1});
  std::vector<TokenTargets> pseudo = {{"d0", {1, 0}}, {"d1", {0, 1}}};
  EXPECT_THROW(mix_supervision(pseudo, split, 0.2, 1), Error);
  EXPECT_EQ(mix_supervision(pseudo, split, 0.0, 1), pseudo);
}

// Central-difference check of the tagger's binary cross-entropy gradients.
TEST(Tagger, GradientsMatchFiniteDifferences) {
  Rng rng(17);
  auto split = testing::split_from_texts(
      {"alpha beta gamma delta epsilon zeta", "eta theta iota", "kappa"}, {0, 1, 0});
  TaggerConfig cfg = tagger_config_for(split);
  cfg.embed_dim = 5;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    TaggerParams p = init_tagger(cfg, rng.next());
    for (auto& nt : p.tensors()) {
      for (double& w : nt.tensor->data) w += rng.uniform(-0.7, 0.7);
    }
    const Document& doc = split.documents[rng.below(split.size())];
    std::vector<int> labels(doc.length());
    for (auto& l : labels) l = rng.bernoulli(0.5) ? 1 : 0;
    TaggerParams grads = p.zeros_like();
    tagger_bce(p, doc, labels, grads);
    auto loss_at = [&](TaggerParams& q) {
      TaggerParams sink = q.zeros_like();
      return tagger_bce(q, doc, labels, sink);
    };
    auto named = p.tensors();
    auto gnamed = grads.tensors();
    for (std::size_t t = 0; t < named.size(); ++t) {
      for (std::size_t i = 0; i < named[t].tensor->size(); ++i) {
        double& w = named[t].tensor->data[i];
        const double keep = w;
        w = keep + 1e-6;
        const double up = loss_at(p);
        w = keep - 1e-6;
        const double down = loss_at(p);
        w = keep;
        const double fd = (up - down) / 2e-6;
        worst = std::max(worst,
                         testing::relative_error(gnamed[t].tensor->data[i], fd, 1e-4));
      }
    }
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(Tagger, L2TermMatchesDefinition) {
  auto split = testing::split_from_texts({"a b c"}, {0});
  const TaggerParams p = init_tagger(tagger_config_for(split), 2);
  double sq = 0.0;
  for (const auto& nt : p.tensors()) {
    if (nt.name == "bias") continue;
    for (double w : nt.tensor->data) sq += w * w;
  }
  TaggerParams grads = p.zeros_like();
  EXPECT_NEAR(tagger_add_l2(p, 0.01, &grads), 0.01 * sq, 1e-15);
}

TEST(Tagger, AllZeroTargetsFitTheConstant) {
  auto split = testing::split_from_texts(
      {"one two three", "four five", "six seven eight nine", "ten", "eleven twelve"},
      {0, 1, 0, 1, 0});
  std::vector<TokenTargets> targets;
  for (const auto& d : split.documents) {
    targets.push_back({d.id, std::vector<int>(d.length(), 0)});
  }
  TrainConfig tcfg;
  tcfg.batch_size = 1;
  const TaggerParams p = train_tagger(split, targets, tcfg);
  for (const auto& d : split.documents) {
    for (double prob : token_probabilities(p, d)) EXPECT_LE(prob, 0.5);
  }
}

// Signal-word targets from the generator's lexicon are linearly separable in
// the token embedding.
std::vector<TokenTargets> signal_targets(const DatasetSplit& split) {
  std::vector<TokenTargets> out;
  for (const auto& d : split.documents) {
    TokenTargets t{d.id, std::vector<int>(d.length(), 0)};
    for (std::size_t i = 0; i < d.length(); ++i) {
      const auto& w = d.tokens[i].surface;
      t.labels[i] = (w.size() == 4 && w[0] == 's') ? 1 : 0;
    }
    out.push_back(std::move(t));
  }
  return out;
}

TEST(Tagger, SeparableTargetsReachHighTokenAccuracy) {
  const Splits data = make_synthetic(testing::small_synthetic(200, 20, 20), 5);
  const auto targets = signal_targets(data.train);
  const TaggerParams p = train_tagger(data.train, targets, TrainConfig{});
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    const auto probs = token_probabilities(p, data.train.documents[i]);
    for (std::size_t t = 0; t < probs.size(); ++t) {
      correct += (probs[t] > 0.5 ? 1 : 0) == targets[i].labels[t];
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(total), 0.95);
}

TEST(Tagger, RealizablePseudoMasksAreReproduced) {
  // With every span position a signal word and k equal to the span length,
  // the top-k mask is exactly the set of signal words.
  SyntheticConfig cfg = testing::small_synthetic(200, 20, 20);
  cfg.signal_density = 1.0;
  const Splits data = make_synthetic(cfg, 5);
  std::vector<ScoreVector> scores;
  for (const auto& d : data.train.documents) {
    ScoreVector s{d.id, std::vector<double>(d.length(), 0.0)};
    for (std::size_t i = 0; i < d.length(); ++i) {
      const auto& w = d.tokens[i].surface;
      s.scores[i] = (w.size() == 4 && w[0] == 's') ? 1.0 : 0.0;
    }
    scores.push_back(std::move(s));
  }
  BudgetSpec spec;
  spec.ratio = cfg.planted_ratio;
  const auto masks = discretize(scores, spec);
  const auto targets = make_pseudo_targets(masks, data.train);
  const TaggerParams p = train_tagger(data.train, targets, TrainConfig{});
  const auto decoded = tag_and_decode(p, data.train, spec);
  double f1 = 0.0;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    f1 += rationale_agreement(decoded[i], masks[i].selected)->f1;
  }
  EXPECT_GE(f1 / static_cast<double>(masks.size()), 0.8);
}

TEST(Tagger, DeterministicGivenSeed) {
  const Splits data = make_synthetic(testing::small_synthetic(40, 10, 10), 5);
  const auto targets = signal_targets(data.train);
  TrainConfig tcfg;
  tcfg.epochs = 3;
  EXPECT_EQ(train_tagger(data.train, targets, tcfg), train_tagger(data.train, targets, tcfg));
  TrainConfig other = tcfg;
  other.seed = tcfg.seed + 1;
  EXPECT_NE(train_tagger(data.train, targets, tcfg), train_tagger(data.train, targets, other));
}

TEST(Tagger, MisalignedTargetsAreRejected) {
  auto split = testing::split_from_texts({"a b c"}, {0});
  EXPECT_THROW(train_tagger(split, {{"d0", {1, 0}}}, TrainConfig{}), Error);
}

// Tagger whose probability for each token is read from embedding coordinate
// 0 of its (single) piece.
TaggerParams probability_tagger(const DatasetSplit& split, const std::vector<double>& probs) {
  TaggerParams p = init_tagger(tagger_config_for(split), 1);
  p.embedding.fill(0.0);
  p.token_weight.fill(0.0);
  p.context_weight.fill(0.0);
  p.position_weight.fill(0.0);
  p.bias.fill(0.0);
  p.token_weight.at(0, 0) = 1.0;
  const Document& d = split.documents[0];
  for (std::size_t i = 0; i < probs.size(); ++i) {
    p.embedding.at(d.tokens[i].piece_ids[0], 0) = std::log(probs[i] / (1.0 - probs[i]));
  }
  return p;
}

TEST(Decode, TopKOverProbabilities) {
  auto split = testing::split_from_texts({"a b c"}, {0});
  const TaggerParams p = probability_tagger(split, {0.9, 0.1, 0.8});
  const auto probs = token_probabilities(p, split.documents[0]);
  EXPECT_NEAR(probs[0], 0.9, 1e-12);
  BudgetSpec spec;
  spec.ratio = 2.0 / 3.0;
  const RationaleMask m = tag_and_decode(p, split.documents[0], spec);
  EXPECT_EQ(m.selected, (std::vector<int>{0, 2}));
  EXPECT_EQ(m.k, 2u);
}

TEST(Decode, UniformContiguousTakesFirstSpan) {
  auto split = testing::split_from_texts({"a b c d"}, {0});
  const TaggerParams p = probability_tagger(split, {0.5, 0.5, 0.5, 0.5});
  BudgetSpec spec;
  spec.ratio = 0.5;
  spec.strategy = Strategy::kContiguous;
  const RationaleMask m = tag_and_decode(p, split.documents[0], spec);
  EXPECT_EQ(m.selected, (std::vector<int>{0, 1}));
  EXPECT_TRUE(m.contiguous);
}

TEST(Decode, BudgetAlwaysMetExactly) {
  const Splits data = make_synthetic(testing::small_synthetic(30, 5, 5), 2);
  const TaggerParams p = init_tagger(tagger_config_for(data.train), 8);
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    BudgetSpec spec;
    spec.ratio = rng.uniform(0.01, 1.0);
    spec.strategy = rng.bernoulli(0.5) ? Strategy::kTopK : Strategy::kContiguous;
    for (const auto& d : data.train.documents) {
      const RationaleMask m = tag_and_decode(p, d, spec);
      const std::size_t k = resolve_k(d.length(), spec.ratio);
      ASSERT_EQ(m.size(), std::min(k, d.length()));
      for (std::size_t i = 1; i < m.selected.size(); ++i) {
        EXPECT_LT(m.selected[i - 1], m.selected[i]);
        if (spec.strategy == Strategy::kContiguous) {
          EXPECT_EQ(m.selected[i], m.selected[i - 1] + 1);
        }
      }
      EXPECT_EQ(m.doc_id, d.id);
    }
  }
}

TEST(Decode, GlobalScopeIsRejected) {
  auto split = testing::split_from_texts({"a b c"}, {0});
  const TaggerParams p = init_tagger(tagger_config_for(split), 1);
  BudgetSpec spec;
  spec.scope = BudgetScope::kGlobal;
  EXPECT_THROW(tag_and_decode(p, split.documents[0], spec), Error);
}

TEST(Agreement, SetOverlapExamples) {
  const auto same = rationale_agreement(mask_of("x", {1, 2}), std::vector<int>{1, 2});
  EXPECT_DOUBLE_EQ(same->f1, 1.0);
  const auto disjoint = rationale_agreement(mask_of("x", {0}), std::vector<int>{1, 2});
  EXPECT_DOUBLE_EQ(disjoint->f1, 0.0);
  const auto half = rationale_agreement(mask_of("x", {0, 1}), std::vector<int>{1, 2});
  EXPECT_DOUBLE_EQ(half->precision, 0.5);
  EXPECT_DOUBLE_EQ(half->recall, 0.5);
  EXPECT_DOUBLE_EQ(half->f1, 0.5);
  EXPECT_FALSE(rationale_agreement(mask_of("x", {0}), std::vector<int>{}).has_value());
}

TEST(Agreement, MeanSkipsDocumentsWithoutGold) {
  auto split = gold_split(4, 2);  // docs 0 and 2 have gold {0, 1}
  std::vector<RationaleMask> masks = {mask_of("d0", {0, 1}), mask_of("d1", {0}),
                                      mask_of("d2", {1, 2}), mask_of("d3", {3})};
  const AgreementSummary s = mean_agreement(masks, split);
  EXPECT_EQ(s.evaluated, 2u);
  EXPECT_EQ(s.skipped, 2u);
  EXPECT_DOUBLE_EQ(s.f1, (1.0 + 0.5) / 2.0);
  EXPECT_DOUBLE_EQ(s.recall, (1.0 + 0.5) / 2.0);
}

}  // namespace
}  // namespace fresh
