#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "fresh/corpus.h"
#include "fresh/error.h"
#include "fresh/rng.h"
#include "test_util.h"

namespace fresh {
namespace {

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kInvalidArgument;
}

template <typename F>
std::string message_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

TEST(Tokenize, ChunksWordsIntoPieces) {
  const auto t = tokenize("The movie", 4);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].surface, "the");
  EXPECT_EQ(t[0].pieces, (std::vector<std::string>{"the"}));
  EXPECT_EQ(t[1].surface, "movie");
  EXPECT_EQ(t[1].pieces, (std::vector<std::string>{"movi", "e"}));
  EXPECT_EQ(t[1].piece_count(), 2u);
}

TEST(Tokenize, SingleShortWord) {
  const auto t = tokenize("a", 4);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].pieces, (std::vector<std::string>{"a"}));
}

TEST(Tokenize, BlankInputIsEmptyDocument) {
  EXPECT_EQ(kind_of([] { tokenize("", 4); }), ErrorKind::kEmptyDocument);
  EXPECT_EQ(kind_of([] { tokenize(" \t\n ", 4); }), ErrorKind::kEmptyDocument);
}

TEST(Tokenize, RejectsNonPositivePieceLength) {
  EXPECT_THROW(tokenize("abc", 0), Error);
}

TEST(Tokenize, PiecesConcatenateToSurfaceOnRandomText) {
  Rng rng(11);
  const std::string alphabet = "abcXYZ  \t";
  for (int trial = 0; trial < 300; ++trial) {
    std::string text = "w";
    const std::size_t n = rng.below(40);
    for (std::size_t i = 0; i < n; ++i) text += alphabet[rng.below(alphabet.size())];
    const int width = 1 + static_cast<int>(rng.below(6));
    const auto tokens = tokenize(text, width);
    for (const auto& tok : tokens) {
      std::string joined;
      for (const auto& p : tok.pieces) {
        EXPECT_GE(p.size(), 1u);
        EXPECT_LE(p.size(), static_cast<std::size_t>(width));
        joined += p;
      }
      EXPECT_EQ(joined, tok.surface);
      for (char c : tok.surface) EXPECT_FALSE(c >= 'A' && c <= 'Z');
    }
    // Lowercase fixed point.
    EXPECT_EQ(tokenize(detokenize(tokens), width), tokens);
  }
}

TEST(Vocabulary, ReservedIdsAndSortedAssignment) {
  const auto v = Vocabulary::from_pieces({"zeta", "alpha", "mid", "alpha"});
  EXPECT_EQ(v.id("<pad>"), kPadId);
  EXPECT_EQ(v.id("<unk>"), kUnknownId);
  EXPECT_EQ(v.id("<sep>"), kSeparatorId);
  EXPECT_EQ(v.size(), 6u);
  EXPECT_EQ(v.id("alpha"), 3);
  EXPECT_EQ(v.id("mid"), 4);
  EXPECT_EQ(v.id("zeta"), 5);
  EXPECT_EQ(v.id("never"), kUnknownId);
  EXPECT_EQ(v.piece(5), "zeta");
}

TEST(Vocabulary, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "fresh_vocab_test";
  std::filesystem::create_directories(dir);
  const auto v = Vocabulary::from_pieces({"b", "a", "cc"});
  const std::string path = (dir / "vocab.txt").string();
  v.save(path);
  EXPECT_EQ(Vocabulary::load(path), v);
  std::filesystem::remove_all(dir);
}

IngestConfig two_classes() {
  IngestConfig cfg;
  cfg.num_classes = 2;
  return cfg;
}

TEST(Jsonl, MinimalRecord) {
  const auto s = parse_jsonl(R"({"id":"d1","text":"good film","label":1})", two_classes(),
                             SplitName::kTrain);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.documents[0].id, "d1");
  EXPECT_EQ(s.documents[0].length(), 2u);
  EXPECT_EQ(s.documents[0].label, 1);
  EXPECT_FALSE(s.documents[0].gold_rationale.has_value());
  EXPECT_FALSE(s.documents[0].query.has_value());
}

TEST(Jsonl, TokenSpanMapsToIndices) {
  const auto s = parse_jsonl(R"({"id":"d2","text":"bad","label":0,"rationale_spans":[[0,1]]})",
                             two_classes(), SplitName::kTrain);
  ASSERT_TRUE(s.documents[0].gold_rationale.has_value());
  EXPECT_EQ(*s.documents[0].gold_rationale, (std::vector<int>{0}));
}

TEST(Jsonl, CharacterSpansCoverOverlappingWords) {
  IngestConfig cfg = two_classes();
  cfg.span_unit = SpanUnit::kCharacter;
  // "one two three": chars [4,9) touch "two" and "three".
  const auto s = parse_jsonl(
      R"({"id":"c","text":"one two three","label":0,"rationale_spans":[[4,9]]})", cfg,
      SplitName::kTrain);
  EXPECT_EQ(*s.documents[0].gold_rationale, (std::vector<int>{1, 2}));
}

TEST(Jsonl, QueryIsTokenized) {
  const auto s = parse_jsonl(R"({"id":"q","text":"a b","label":0,"query":"Is it"})",
                             two_classes(), SplitName::kTrain);
  ASSERT_TRUE(s.documents[0].query.has_value());
  EXPECT_EQ(s.documents[0].query->size(), 2u);
  EXPECT_EQ((*s.documents[0].query)[0].surface, "is");
  EXPECT_TRUE(s.vocabulary->contains("is"));
}

TEST(Jsonl, MissingLabelIsSchemaError) {
  EXPECT_EQ(kind_of([] {
              parse_jsonl(R"({"id":"d3","text":"x"})", two_classes(), SplitName::kTrain);
            }),
            ErrorKind::kSchema);
}

TEST(Jsonl, LabelOutsideClassSetIsSchemaError) {
  EXPECT_EQ(kind_of([] {
              parse_jsonl(R"({"id":"d","text":"x","label":2})", two_classes(),
                          SplitName::kTrain);
            }),
            ErrorKind::kSchema);
  EXPECT_EQ(kind_of([] {
              parse_jsonl(R"({"id":"d","text":"x","label":-1})", two_classes(),
                          SplitName::kTrain);
            }),
            ErrorKind::kSchema);
}

TEST(Jsonl, MalformedLineNamesLineNumber) {
  const std::string content =
      "{\"id\":\"a\",\"text\":\"x\",\"label\":0}\n{\"id\": broken\n";
  auto f = [&] { parse_jsonl(content, two_classes(), SplitName::kTrain); };
  EXPECT_EQ(kind_of(f), ErrorKind::kParse);
  EXPECT_NE(message_of(f).find("line 2"), std::string::npos);
}

TEST(Jsonl, BlankTextIsEmptyDocument) {
  EXPECT_EQ(kind_of([] {
              parse_jsonl(R"({"id":"e","text":"   ","label":0})", two_classes(),
                          SplitName::kTrain);
            }),
            ErrorKind::kEmptyDocument);
}

TEST(Jsonl, SpanBeyondDocumentIsSchemaError) {
  EXPECT_EQ(kind_of([] {
              parse_jsonl(R"({"id":"e","text":"a b","label":0,"rationale_spans":[[1,3]]})",
                          two_classes(), SplitName::kTrain);
            }),
            ErrorKind::kSchema);
}

TEST(Jsonl, PieceCapRejectsLongDocuments) {
  IngestConfig cfg = two_classes();
  cfg.max_pieces = 3;
  EXPECT_EQ(kind_of([&] {
              parse_jsonl(R"({"id":"l","text":"a b c d","label":0})", cfg, SplitName::kTrain);
            }),
            ErrorKind::kSchema);
  EXPECT_NO_THROW(
      parse_jsonl(R"({"id":"l","text":"a b c","label":0})", cfg, SplitName::kTrain));
}

TEST(Jsonl, FrozenVocabularyMapsUnknownPieces) {
  const auto train = parse_jsonl(R"({"id":"t","text":"known words","label":0})",
                                 two_classes(), SplitName::kTrain);
  const auto dev = parse_jsonl(R"({"id":"d","text":"known stranger","label":1})",
                               two_classes(), SplitName::kDev, train.vocabulary);
  EXPECT_EQ(dev.vocabulary, train.vocabulary);
  const auto& toks = dev.documents[0].tokens;
  EXPECT_NE(toks[0].piece_ids[0], kUnknownId);
  for (int id : toks[1].piece_ids) EXPECT_EQ(id, kUnknownId);
}

TEST(Jsonl, SerializeRoundTrip) {
  const std::string content =
      R"({"id":"a","text":"the movie was great","label":1,"rationale_spans":[[2,4]]})"
      "\n"
      R"({"id":"b","text":"Dull plot","label":0,"query":"Why so"})"
      "\n"
      R"({"id":"c","text":"x y z w","label":1,"rationale_spans":[[0,1],[2,4]]})"
      "\n";
  const auto first = parse_jsonl(content, two_classes(), SplitName::kTrain);
  const auto again =
      parse_jsonl(serialize_jsonl(first), two_classes(), SplitName::kTrain);
  EXPECT_EQ(first, again);
  EXPECT_EQ(*again.documents[2].gold_rationale, (std::vector<int>{0, 2, 3}));
}

TEST(Synthetic, Deterministic) {
  SyntheticConfig cfg = testing::small_synthetic(50, 20, 20);
  const Splits a = make_synthetic(cfg, 7);
  const Splits b = make_synthetic(cfg, 7);
  EXPECT_EQ(serialize_jsonl(a.train), serialize_jsonl(b.train));
  EXPECT_EQ(serialize_jsonl(a.dev), serialize_jsonl(b.dev));
  EXPECT_EQ(serialize_jsonl(a.test), serialize_jsonl(b.test));
  const Splits c = make_synthetic(cfg, 8);
  EXPECT_NE(serialize_jsonl(a.train), serialize_jsonl(c.train));
}

TEST(Synthetic, PlantedSpanLengthFollowsRatio) {
  SyntheticConfig cfg = testing::small_synthetic(50, 10, 10);
  cfg.planted_ratio = 0.2;
  const Splits s = make_synthetic(cfg, 7);
  for (const auto& d : s.train.documents) {
    ASSERT_EQ(d.length(), 20u);
    const auto& g = *d.gold_rationale;
    ASSERT_EQ(g.size(), 4u);
    for (std::size_t i = 1; i < g.size(); ++i) EXPECT_EQ(g[i], g[i - 1] + 1);
  }
}

TEST(Synthetic, RatioOutsideUnitIntervalIsConfigError) {
  SyntheticConfig cfg = testing::small_synthetic();
  cfg.planted_ratio = 0.0;
  EXPECT_EQ(kind_of([&] { make_synthetic(cfg, 1); }), ErrorKind::kConfig);
  cfg.planted_ratio = 1.0;
  EXPECT_EQ(kind_of([&] { make_synthetic(cfg, 1); }), ErrorKind::kConfig);
}

TEST(Synthetic, SignalOnlyInsideSpanAndLookupLabelsNoiseFree) {
  SyntheticConfig cfg;
  cfg.noise_rate = 0.0;
  cfg.train_docs = 400;
  const Splits s = make_synthetic(cfg, 7);
  for (const auto* split : {&s.train, &s.dev, &s.test}) {
    for (const auto& d : split->documents) {
      const std::set<int> gold(d.gold_rationale->begin(), d.gold_rationale->end());
      bool saw_signal = false;
      for (std::size_t i = 0; i < d.length(); ++i) {
        // Signal words are the four-letter "s<class>.." surfaces.
        const auto& w = d.tokens[i].surface;
        const bool signal = w.size() == 4 && w[0] == 's';
        if (signal) {
          EXPECT_TRUE(gold.count(static_cast<int>(i))) << d.id;
          EXPECT_EQ(w[1] - 'a', d.label) << d.id;
          saw_signal = true;
        }
      }
      EXPECT_TRUE(saw_signal) << d.id;
      EXPECT_EQ(synthetic_signal_class(d, cfg.num_classes), d.label);
    }
  }
}

TEST(Synthetic, NoiseRateMatchesFlippedFraction) {
  SyntheticConfig cfg;
  cfg.noise_rate = 0.1;
  const Splits s = make_synthetic(cfg, 7);
  std::size_t flipped = 0;
  for (const auto& d : s.train.documents) {
    if (synthetic_signal_class(d, cfg.num_classes) != d.label) ++flipped;
  }
  const double rate = static_cast<double>(flipped) / static_cast<double>(s.train.size());
  // Binomial std at n=2000 is about 0.0067.
  EXPECT_NEAR(rate, 0.1, 0.025);
}

TEST(Synthetic, MajorityBaselineNearMaxPrior) {
  const Splits s = make_synthetic(SyntheticConfig{}, 7);
  std::map<int, int> train_counts;
  for (const auto& d : s.train.documents) ++train_counts[d.label];
  int majority = 0;
  for (const auto& [label, count] : train_counts) {
    if (count > train_counts[majority]) majority = label;
  }
  std::map<int, int> test_counts;
  for (const auto& d : s.test.documents) ++test_counts[d.label];
  const double n = static_cast<double>(s.test.size());
  double max_prior = 0.0;
  for (const auto& [label, count] : test_counts) max_prior = std::max(max_prior, count / n);
  const double baseline = test_counts[majority] / n;
  EXPECT_NEAR(baseline, max_prior, 0.05);
}

TEST(Stats, LengthsAndLabelDistribution) {
  const auto split = testing::split_from_texts({"a b c d", "a b c d e f", "x y", "z"},
                                               {0, 0, 1, 1}, 2);
  const CorpusStats st = stats(split);
  EXPECT_EQ(st.count, 4u);
  EXPECT_DOUBLE_EQ(st.doc_length_mean, 13.0 / 4.0);
  EXPECT_EQ(st.doc_length_max, 6u);
  EXPECT_EQ(st.label_distribution, (std::vector<double>{0.5, 0.5}));
}

TEST(Stats, TwoDocsMeanAndMax) {
  const auto split = testing::split_from_texts({"a b c d", "a b c d e f"}, {0, 1}, 2);
  const CorpusStats st = stats(split);
  EXPECT_DOUBLE_EQ(st.doc_length_mean, 5.0);
  EXPECT_EQ(st.doc_length_max, 6u);
}

TEST(Stats, RationaleRatioOverDocsWithGold) {
  auto split = testing::split_from_texts({"a b c d", "a b", "q"}, {0, 1, 0}, 2);
  split.documents[0].gold_rationale = std::vector<int>{0};
  split.documents[1].gold_rationale = std::vector<int>{0, 1};
  split.documents[2].query = tokenize("w h y", 4);
  const CorpusStats st = stats(split);
  EXPECT_DOUBLE_EQ(st.rationale_ratio_mean, (0.25 + 1.0) / 2.0);
  EXPECT_DOUBLE_EQ(st.rationale_ratio_max, 1.0);
  EXPECT_DOUBLE_EQ(st.query_length_mean, 1.0);
  EXPECT_EQ(st.query_length_max, 3u);
}

TEST(Stats, SyntheticDistributionSumsToOne) {
  const Splits s = make_synthetic(SyntheticConfig{}, 3);
  const CorpusStats st = stats(s.train);
  double sum = 0.0;
  for (double p : st.label_distribution) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-9);
  EXPECT_GE(static_cast<double>(st.doc_length_max), st.doc_length_mean);
  EXPECT_NEAR(st.rationale_ratio_mean, 0.2, 1e-12);
}

TEST(Stats, EmptySplitIsError) {
  DatasetSplit empty;
  EXPECT_THROW(stats(empty), Error);
}

}  // namespace
}  // namespace fresh
