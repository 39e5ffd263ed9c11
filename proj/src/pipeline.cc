#include "fresh/pipeline.h"

#include <functional>

#include "fresh/error.h"
#include "fresh/saliency.h"

namespace fresh {

namespace {

template <typename Fn>
auto run_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("stage '") + stage + "': " + e.what());
  }
}

double mean_ratio(const std::vector<RationaleMask>& masks, const DatasetSplit& split) {
  if (masks.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    sum += static_cast<double>(masks[i].size()) /
           static_cast<double>(split.documents[i].length());
  }
  return sum / static_cast<double>(masks.size());
}

}  // namespace

std::string_view extractor_mode_name(ExtractorMode mode) {
  return mode == ExtractorMode::kHeuristic ? "heuristic" : "tagger";
}

ExtractorMode parse_extractor_mode(std::string_view name) {
  if (name == "heuristic") return ExtractorMode::kHeuristic;
  if (name == "tagger") return ExtractorMode::kTagger;
  throw Error(ErrorKind::kConfig, "unknown extractor mode: " + std::string(name));
}

void FreshConfig::validate() const {
  budget.validate();
  support_train.validate();
  classifier_train.validate();
  tagger_train.validate();
  if (supervision_fraction < 0.0 || supervision_fraction > 1.0) {
    throw Error(ErrorKind::kConfig, "supervision fraction must lie in [0, 1]");
  }
  if (supervision_fraction > 0.0 && extractor != ExtractorMode::kTagger) {
    throw Error(ErrorKind::kConfig,
                "rationale supervision requires the tagger extractor");
  }
}

ClassifierStage train_classifier_on_masks(const Splits& data,
                                          const SplitMasks& masks,
                                          const ModelConfig& mcfg,
                                          const TrainConfig& tcfg) {
  ClassifierStage stage;
  stage.inputs.train = apply_rationales(data.train, masks.train);
  stage.inputs.dev = apply_rationales(data.dev, masks.dev);
  stage.inputs.test = apply_rationales(data.test, masks.test);
  const ModelConfig cfg = model_config_for(data.train, mcfg);
  TrainResult tr = train(stage.inputs.train, stage.inputs.dev, cfg, tcfg);
  stage.params = std::move(tr.params);
  stage.history = std::move(tr.history);
  stage.dev = evaluate(stage.params, stage.inputs.dev);
  stage.test = evaluate(stage.params, stage.inputs.test);
  return stage;
}

FreshResult run_fresh(const Splits& data, const FreshConfig& cfg) {
  cfg.validate();
  FreshResult result;
  TrainConfig support_train = cfg.support_train;
  support_train.seed = cfg.seed;
  TrainConfig classifier_train = cfg.classifier_train;
  classifier_train.seed = cfg.seed;
  TrainConfig tagger_train = cfg.tagger_train;
  tagger_train.seed = cfg.seed;

  run_stage("support", [&] {
    const ModelConfig mcfg = model_config_for(data.train, cfg.support_model);
    TrainResult tr = train(data.train, data.dev, mcfg, support_train);
    result.support = std::move(tr.params);
    result.support_history = std::move(tr.history);
    result.support_test = evaluate(result.support, data.test);
    return 0;
  });

  std::vector<ScoreVector> train_scores, dev_scores, test_scores;
  run_stage("score", [&] {
    train_scores = score_corpus(result.support, data.train, cfg.scorer);
    dev_scores = score_corpus(result.support, data.dev, cfg.scorer);
    test_scores = score_corpus(result.support, data.test, cfg.scorer);
    return 0;
  });

  run_stage("extract", [&] {
    if (cfg.extractor == ExtractorMode::kHeuristic) {
      result.masks.train = discretize(train_scores, cfg.budget);
      result.masks.dev = discretize(dev_scores, cfg.budget);
      result.masks.test = discretize(test_scores, cfg.budget);
      return 0;
    }
    const auto pseudo_masks = discretize(train_scores, cfg.budget);
    auto targets = make_pseudo_targets(pseudo_masks, data.train);
    targets = mix_supervision(targets, data.train, cfg.supervision_fraction, cfg.seed);
    result.tagger = train_tagger(data.train, targets, tagger_train,
                                 tagger_config_for(data.train, cfg.tagger));
    BudgetSpec decode = cfg.budget;
    decode.scope = BudgetScope::kInstance;
    decode.floor_ratio = 0.0;
    result.masks.train = tag_and_decode(*result.tagger, data.train, decode);
    result.masks.dev = tag_and_decode(*result.tagger, data.dev, decode);
    result.masks.test = tag_and_decode(*result.tagger, data.test, decode);
    return 0;
  });

  result.classifier = run_stage("classify", [&] {
    return train_classifier_on_masks(data, result.masks, cfg.classifier_model,
                                     classifier_train);
  });

  result.train_agreement = mean_agreement(result.masks.train, data.train);
  result.test_agreement = mean_agreement(result.masks.test, data.test);
  result.test_rationale_ratio = mean_ratio(result.masks.test, data.test);

  result.audit = verify_faithfulness(result, data);
  run_stage("audit", [&] {
    require_faithful(result.audit);
    return 0;
  });
  return result;
}

AuditRecord verify_faithfulness(const FreshResult& result, const Splits& data) {
  AuditRecord audit;
  const std::pair<const DatasetSplit*, const DatasetSplit*> splits[] = {
      {&data.train, &result.classifier.inputs.train},
      {&data.dev, &result.classifier.inputs.dev},
      {&data.test, &result.classifier.inputs.test}};
  const std::vector<RationaleMask>* masks[] = {
      &result.masks.train, &result.masks.dev, &result.masks.test};
  for (int s = 0; s < 3; ++s) {
    const DatasetSplit& original = *splits[s].first;
    const DatasetSplit& seen = *splits[s].second;
    const auto& split_masks = *masks[s];
    for (std::size_t i = 0; i < original.size(); ++i) {
      const Document& doc = original.documents[i];
      ++audit.evaluated;
      bool ok = i < split_masks.size() && i < seen.size();
      if (ok) {
        const RationaleMask& mask = split_masks[i];
        const Document& consumed = seen.documents[i];
        ++audit.length_histogram[mask.size()];
        try {
          ok = mask.doc_id == doc.id && consumed.id == doc.id &&
               build_input(doc, &mask).ids == build_input(consumed).ids &&
               consumed.length() == mask.size();
        } catch (const Error&) {
          ok = false;
        }
      }
      if (!ok && !(i < split_masks.size() && i < seen.size())) {
        ++audit.length_histogram[0];
      }
      if (!ok) {
        ++audit.violations;
        audit.violating_ids.push_back(doc.id);
      }
    }
  }
  return audit;
}

void require_faithful(const AuditRecord& audit) {
  if (audit.violations == 0) return;
  std::string ids;
  for (const auto& id : audit.violating_ids) {
    if (!ids.empty()) ids += ", ";
    ids += id;
  }
  throw Error(ErrorKind::kFaithfulness,
              std::to_string(audit.violations) +
                  " document(s) reached the classifier with unselected tokens: " +
                  ids);
}

}  // namespace fresh
