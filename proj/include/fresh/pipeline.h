#ifndef FRESH_PIPELINE_H_
#define FRESH_PIPELINE_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fresh/corpus.h"
#include "fresh/discretize.h"
#include "fresh/extractor.h"
#include "fresh/metrics.h"
#include "fresh/model.h"
#include "fresh/scores.h"

// Support model -> importance scores -> discrete rationales -> classifier
// trained and tested on the rationales alone.
namespace fresh {

enum class ExtractorMode { kHeuristic, kTagger };
std::string_view extractor_mode_name(ExtractorMode mode);
ExtractorMode parse_extractor_mode(std::string_view name);

struct FreshConfig {
  Scorer scorer = Scorer::kAttention;
  BudgetSpec budget;
  ExtractorMode extractor = ExtractorMode::kHeuristic;
  // Share of gold-bearing training documents whose human rationale replaces
  // the pseudo-targets. Only meaningful with the tagger extractor.
  double supervision_fraction = 0.0;
  ModelConfig support_model;
  TrainConfig support_train;
  ModelConfig classifier_model;
  TrainConfig classifier_train;
  TaggerConfig tagger;
  TrainConfig tagger_train;
  // Overrides the seeds of every stage.
  std::uint64_t seed = 13;

  void validate() const;
};

struct SplitMasks {
  std::vector<RationaleMask> train;
  std::vector<RationaleMask> dev;
  std::vector<RationaleMask> test;
};

struct AuditRecord {
  std::size_t evaluated = 0;
  std::size_t violations = 0;
  std::vector<std::string> violating_ids;
  // Rationale length (tokens) -> number of documents.
  std::map<std::size_t, std::size_t> length_histogram;
};

struct ClassifierStage {
  ModelParams params;
  std::vector<double> history;
  // The rationale-only splits the classifier was trained and tested on.
  Splits inputs;
  Metrics dev;
  Metrics test;
};

struct FreshResult {
  ModelParams support;
  std::vector<double> support_history;
  // Full-text reference from the support model.
  Metrics support_test;
  std::optional<TaggerParams> tagger;
  SplitMasks masks;
  ClassifierStage classifier;
  AgreementSummary train_agreement;
  AgreementSummary test_agreement;
  AuditRecord audit;
  // Mean |mask| / l over the test split.
  double test_rationale_ratio = 0.0;
};

// Builds the rationale-only splits from fixed masks and trains/evaluates the
// classifier on them. Independent of how the masks were produced.
ClassifierStage train_classifier_on_masks(const Splits& data,
                                          const SplitMasks& masks,
                                          const ModelConfig& mcfg,
                                          const TrainConfig& tcfg);

FreshResult run_fresh(const Splits& data, const FreshConfig& cfg);

// Checks, for every document the classifier saw, that its input sequence is
// exactly query + separator + the mask-selected tokens of the original.
AuditRecord verify_faithfulness(const FreshResult& result, const Splits& data);

// Throws kFaithfulness listing the violating ids when the audit is not clean.
void require_faithful(const AuditRecord& audit);

}  // namespace fresh

#endif  // FRESH_PIPELINE_H_
