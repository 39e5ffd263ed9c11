#include "fresh/saliency.h"

#include <cmath>

#include "fresh/error.h"

namespace fresh {

std::string_view scorer_name(Scorer scorer) {
  return scorer == Scorer::kAttention ? "attention" : "gradient";
}

Scorer parse_scorer(std::string_view name) {
  if (name == "attention") return Scorer::kAttention;
  if (name == "gradient") return Scorer::kGradient;
  throw Error(ErrorKind::kConfig, "unknown scorer: " + std::string(name));
}

ScoreVector attention_scores(const ModelParams& params, const Document& doc) {
  const ForwardTrace tr = forward(params, doc);
  const std::size_t heads = params.config.num_heads;
  ScoreVector out;
  out.doc_id = doc.id;
  out.scorer = Scorer::kAttention;
  out.scores.assign(doc.length(), 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto a = tr.attention.row(h);
    std::vector<double> per_head(doc.length(), 0.0);
    for (std::size_t t = 0; t < tr.length(); ++t) {
      const int tok = tr.input.token_of[t];
      if (tok >= 0) per_head[tok] += a[t];
    }
    for (std::size_t i = 0; i < doc.length(); ++i) out.scores[i] += per_head[i];
  }
  for (auto& s : out.scores) s /= static_cast<double>(heads);
  return out;
}

ScoreVector gradient_scores(const ModelParams& params, const Document& doc) {
  const ForwardTrace tr = forward(params, doc);
  std::vector<double> onehot(params.config.num_classes, 0.0);
  onehot[tr.predicted()] = 1.0;
  ModelParams scratch = params.zeros_like();
  const Tensor dx = backward(params, tr, onehot, scratch);
  ScoreVector out;
  out.doc_id = doc.id;
  out.scorer = Scorer::kGradient;
  out.scores.assign(doc.length(), 0.0);
  for (std::size_t t = 0; t < tr.length(); ++t) {
    const int tok = tr.input.token_of[t];
    if (tok < 0) continue;
    const double norm = std::sqrt(squared_norm(dx.row(t)));
    if (!std::isfinite(norm)) {
      throw Error(ErrorKind::kNumeric,
                  "non-finite gradient score in document '" + doc.id + "'");
    }
    out.scores[tok] += norm;
  }
  return out;
}

ScoreVector score_document(const ModelParams& params, const Document& doc,
                           Scorer scorer) {
  return scorer == Scorer::kAttention ? attention_scores(params, doc)
                                      : gradient_scores(params, doc);
}

std::vector<ScoreVector> score_corpus(const ModelParams& params,
                                      const DatasetSplit& split, Scorer scorer) {
  std::vector<ScoreVector> out;
  out.reserve(split.size());
  for (const auto& doc : split.documents) {
    try {
      out.push_back(score_document(params, doc, scorer));
    } catch (const Error& e) {
      throw Error(e.kind(), "document '" + doc.id + "': " + e.what());
    }
    if (out.back().scores.size() != doc.length()) {
      throw Error(ErrorKind::kNumeric,
                  "score length mismatch for document '" + doc.id + "'");
    }
  }
  return out;
}

}  // namespace fresh
