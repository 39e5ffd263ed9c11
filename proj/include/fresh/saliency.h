#ifndef FRESH_SALIENCY_H_
#define FRESH_SALIENCY_H_

#include <vector>

#include "fresh/corpus.h"
#include "fresh/model.h"
#include "fresh/scores.h"

namespace fresh {

// Head-averaged attention mass per document token: each token sums the
// weights on its pieces, query and separator positions are dropped, and the
// result is not renormalized.
ScoreVector attention_scores(const ModelParams& params, const Document& doc);

// Per token, the sum over its pieces of the Euclidean norm of the gradient of
// the predicted-class logit with respect to that piece's input embedding.
ScoreVector gradient_scores(const ModelParams& params, const Document& doc);

ScoreVector score_document(const ModelParams& params, const Document& doc,
                           Scorer scorer);

std::vector<ScoreVector> score_corpus(const ModelParams& params,
                                      const DatasetSplit& split, Scorer scorer);

}  // namespace fresh

#endif  // FRESH_SALIENCY_H_
