#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>
#include <string>

#include "fresh/corpus.h"
#include "fresh/error.h"
#include "fresh/model.h"
#include "fresh/rng.h"
#include "fresh/saliency.h"
#include "test_util.h"

namespace fresh {
namespace {

// Two heads with head_dim 1 whose keys read embedding coordinates 0 and 1,
// so a piece embedding of (log a, log b, ...) gets unnormalized weights a
// and b.
ModelParams coordinate_heads(std::size_t vocab_size) {
  ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.embed_dim = 4;
  cfg.num_heads = 2;
  cfg.head_dim = 1;
  cfg.num_classes = 2;
  ModelParams p = init_params(cfg, 5);
  p.key.fill(0.0);
  p.key.at(0, 0) = 1.0;      // head 0 reads coordinate 0
  p.key.at(4 + 1, 0) = 1.0;  // head 1 reads coordinate 1
  p.query.at(0, 0) = 1.0;
  p.query.at(1, 0) = 1.0;
  return p;
}

TEST(Attention, SumsPiecesThenAveragesHeads) {
  // Token 0 has two pieces, token 1 has one.
  auto split = testing::split_from_texts({"abcdef zz"}, {0});
  const Document& doc = split.documents[0];
  ASSERT_EQ(doc.tokens[0].piece_count(), 2u);
  ModelParams p = coordinate_heads(split.vocabulary->size());
  auto set = [&](int id, double w0, double w1) {
    p.embedding.at(id, 0) = std::log(w0);
    p.embedding.at(id, 1) = std::log(w1);
  };
  set(doc.tokens[0].piece_ids[0], 0.1, 0.3);
  set(doc.tokens[0].piece_ids[1], 0.2, 0.1);
  set(doc.tokens[1].piece_ids[0], 0.7, 0.6);
  const ScoreVector s = attention_scores(p, doc);
  ASSERT_EQ(s.scores.size(), 2u);
  EXPECT_NEAR(s.scores[0], (0.3 + 0.4) / 2.0, 1e-12);
  EXPECT_NEAR(s.scores[1], (0.7 + 0.6) / 2.0, 1e-12);
  EXPECT_EQ(s.scorer, Scorer::kAttention);
  EXPECT_EQ(s.doc_id, doc.id);
}

TEST(Attention, SinglePieceDocumentScoresOne) {
  auto split = testing::split_from_texts({"ok"}, {0});
  const ModelParams p = init_params(model_config_for(split), 3);
  const ScoreVector s = attention_scores(p, split.documents[0]);
  ASSERT_EQ(s.scores.size(), 1u);
  EXPECT_DOUBLE_EQ(s.scores[0], 1.0);
}

TEST(Attention, NoQuerySumsToOneAndQueryMassIsDropped) {
  Rng rng(8);
  auto split = testing::split_from_texts({"the quick brownish fox jumps"}, {0});
  ModelParams p = init_params(model_config_for(split), 2);
  for (auto& nt : p.tensors()) {
    for (double& w : nt.tensor->data) w += rng.uniform(-0.8, 0.8);
  }
  Document doc = split.documents[0];
  double sum = 0.0;
  for (double v : attention_scores(p, doc).scores) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-12);

  doc.query = tokenize("the fox");
  encode_tokens(*doc.query, *split.vocabulary);
  const ForwardTrace tr = forward(p, doc);
  // Oracle: mean over heads of the weight left on document positions.
  double expected = 0.0;
  for (std::size_t h = 0; h < tr.attention.rows; ++h) {
    for (std::size_t t = 0; t < tr.length(); ++t) {
      if (tr.input.token_of[t] >= 0) expected += tr.attention.at(h, t);
    }
  }
  expected /= static_cast<double>(tr.attention.rows);
  sum = 0.0;
  for (double v : attention_scores(p, doc).scores) sum += v;
  EXPECT_LT(sum, 1.0);
  EXPECT_NEAR(sum, expected, 1e-12);
}

// Central differences of the predicted-class logit with respect to each
// embedding coordinate of every document piece. Pieces must be distinct
// within the document so a table row stands for one position.
std::vector<double> finite_difference_scores(ModelParams p, const Document& doc,
                                             double step = 1e-6) {
  const int cls = forward(p, doc).predicted();
  std::vector<double> out;
  for (const auto& tok : doc.tokens) {
    double score = 0.0;
    for (int id : tok.piece_ids) {
      double sq = 0.0;
      for (std::size_t j = 0; j < p.config.embed_dim; ++j) {
        double& w = p.embedding.at(id, j);
        const double keep = w;
        w = keep + step;
        const double up = forward(p, doc).logits[cls];
        w = keep - step;
        const double down = forward(p, doc).logits[cls];
        w = keep;
        const double g = (up - down) / (2.0 * step);
        sq += g * g;
      }
      score += std::sqrt(sq);
    }
    out.push_back(score);
  }
  return out;
}

TEST(Gradient, MatchesFiniteDifferences) {
  Rng rng(21);
  std::vector<std::string> words = {"alpha", "bravo", "charlie", "delta", "echo",
                                    "foxtrot", "golf", "hotel", "india", "juliett",
                                    "kilo", "lima", "mike", "november", "oscar"};
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    rng.shuffle(std::span<std::string>(words));
    const std::size_t n = 1 + rng.below(8);
    std::string text;
    for (std::size_t i = 0; i < n; ++i) text += words[i] + " ";
    auto split = testing::split_from_texts({text}, {0}, 3);
    Document doc = split.documents[0];
    std::set<int> seen;
    bool distinct = true;
    for (const auto& t : doc.tokens) {
      for (int id : t.piece_ids) distinct = distinct && seen.insert(id).second;
    }
    if (!distinct) continue;
    ModelConfig cfg = model_config_for(split);
    cfg.num_heads = 1 + rng.below(3);
    cfg.embed_dim = 2 * cfg.num_heads;
    cfg.head_dim = 1 + rng.below(4);
    ModelParams p = init_params(cfg, rng.next());
    for (auto& nt : p.tensors()) {
      for (double& w : nt.tensor->data) w += rng.uniform(-0.8, 0.8);
    }
    const auto got = gradient_scores(p, doc).scores;
    const auto want = finite_difference_scores(p, doc);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_LE(testing::relative_error(got[i], want[i]), 1e-3)
          << "trial " << trial << " token " << i << ": " << got[i] << " vs " << want[i];
    }
    ++checked;
  }
  EXPECT_GE(checked, 20);
}

TEST(Gradient, QueryPiecesAreExcluded) {
  auto split = testing::split_from_texts({"red green blue"}, {0});
  Document doc = split.documents[0];
  // "red" occurs in both query and document; only the document position may
  // contribute to its score.
  doc.query = tokenize("red red");
  encode_tokens(*doc.query, *split.vocabulary);
  ModelParams p = init_params(model_config_for(split), 9);
  Rng rng(2);
  for (auto& nt : p.tensors()) {
    for (double& w : nt.tensor->data) w += rng.uniform(-0.5, 0.5);
  }
  const ForwardTrace tr = forward(p, doc);
  std::vector<double> dlogits(p.config.num_classes, 0.0);
  dlogits[tr.predicted()] = 1.0;
  ModelParams sink = p.zeros_like();
  const Tensor dx = backward(p, tr, dlogits, sink);
  std::vector<double> expected(doc.length(), 0.0);
  for (std::size_t t = 0; t < tr.length(); ++t) {
    const int tok = tr.input.token_of[t];
    if (tok < 0) continue;
    double sq = 0.0;
    for (double v : dx.row(t)) sq += v * v;
    expected[tok] += std::sqrt(sq);
  }
  const auto scores = gradient_scores(p, doc).scores;
  ASSERT_EQ(scores.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(scores[i], expected[i], 1e-12);
}

TEST(Gradient, ZeroOutputWeightsGiveZeroScores) {
  auto split = testing::split_from_texts({"one two three four"}, {1});
  ModelParams p = init_params(model_config_for(split), 4);
  p.output.fill(0.0);
  for (double v : gradient_scores(p, split.documents[0]).scores) EXPECT_EQ(v, 0.0);
}

TEST(Gradient, TwoPieceTokenSumsPieceNorms) {
  auto split = testing::split_from_texts({"abcdefgh ij"}, {0});
  const Document& doc = split.documents[0];
  ASSERT_EQ(doc.tokens[0].piece_count(), 2u);
  ModelParams p = init_params(model_config_for(split), 6);
  Rng rng(4);
  for (auto& nt : p.tensors()) {
    for (double& w : nt.tensor->data) w += rng.uniform(-0.5, 0.5);
  }
  // Per-position embedding gradients straight from backprop.
  const ForwardTrace tr = forward(p, doc);
  std::vector<double> dlogits(p.config.num_classes, 0.0);
  dlogits[tr.predicted()] = 1.0;
  ModelParams sink = p.zeros_like();
  const Tensor dx = backward(p, tr, dlogits, sink);
  auto norm = [&](std::size_t t) {
    double s = 0.0;
    for (double v : dx.row(t)) s += v * v;
    return std::sqrt(s);
  };
  const auto scores = gradient_scores(p, doc).scores;
  EXPECT_NEAR(scores[0], norm(0) + norm(1), 1e-12);
  EXPECT_NEAR(scores[1], norm(2), 1e-12);
}

TEST(Saliency, PermutationEquivariantForIdenticalEmbeddings) {
  auto split = testing::split_from_texts({"aa bb cc dd", "bb aa cc dd"}, {0, 0});
  ModelParams p = init_params(model_config_for(split), 12);
  Rng rng(3);
  for (auto& nt : p.tensors()) {
    for (double& w : nt.tensor->data) w += rng.uniform(-0.5, 0.5);
  }
  const int a = split.vocabulary->id("aa");
  const int b = split.vocabulary->id("bb");
  for (std::size_t j = 0; j < p.config.embed_dim; ++j) {
    p.embedding.at(b, j) = p.embedding.at(a, j);
  }
  for (Scorer s : {Scorer::kAttention, Scorer::kGradient}) {
    const auto x = score_document(p, split.documents[0], s).scores;
    const auto y = score_document(p, split.documents[1], s).scores;
    EXPECT_NEAR(x[0], y[1], 1e-14);
    EXPECT_NEAR(x[1], y[0], 1e-14);
    EXPECT_NEAR(x[2], y[2], 1e-14);
    EXPECT_NEAR(x[3], y[3], 1e-14);
  }
}

TEST(ScoreCorpus, EmptyOrderedAndDeterministic) {
  auto split = testing::split_from_texts({"a b c", "d e", "f g h i"}, {0, 1, 0});
  const ModelParams p = init_params(model_config_for(split), 1);
  DatasetSplit empty = split;
  empty.documents.clear();
  EXPECT_TRUE(score_corpus(p, empty, Scorer::kAttention).empty());
  for (Scorer s : {Scorer::kAttention, Scorer::kGradient}) {
    const auto first = score_corpus(p, split, s);
    ASSERT_EQ(first.size(), 3u);
    for (std::size_t i = 0; i < first.size(); ++i) {
      EXPECT_EQ(first[i].doc_id, split.documents[i].id);
      EXPECT_EQ(first[i].scores.size(), split.documents[i].length());
      EXPECT_EQ(first[i].scorer, s);
      for (double v : first[i].scores) {
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_GE(v, 0.0);
      }
    }
    EXPECT_EQ(score_corpus(p, split, s), first);
  }
}

TEST(ScoreCorpus, ErrorsNameTheDocument) {
  auto split = testing::split_from_texts({"a b", "c d"}, {0, 1});
  ModelParams p = init_params(model_config_for(split), 1);
  p.embedding.at(split.vocabulary->id("c"), 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    score_corpus(p, split, Scorer::kGradient);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("d1"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace fresh
