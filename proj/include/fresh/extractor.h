#ifndef FRESH_EXTRACTOR_H_
#define FRESH_EXTRACTOR_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fresh/corpus.h"
#include "fresh/discretize.h"
#include "fresh/metrics.h"
#include "fresh/model.h"
#include "fresh/tensor.h"

namespace fresh {

enum class TargetSource { kPseudo, kHuman };
std::string_view target_source_name(TargetSource source);

struct TokenTargets {
  std::string doc_id;
  std::vector<int> labels;  // 0/1 per token
  TargetSource source = TargetSource::kPseudo;

  bool operator==(const TokenTargets&) const = default;
};

struct TaggerConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 16;
  // Neighbours on each side averaged into the context feature.
  std::size_t window = 2;

  bool operator==(const TaggerConfig&) const = default;
};

// Independent per-token logistic tagger:
//   p_i = sigmoid(w_tok . e_i + w_ctx . m_i + w_pos * i / l + b)
// where e_i is the mean piece embedding of token i and m_i is the mean of
// e_j over the neighbours within the window (excluding i itself).
struct TaggerParams {
  TaggerConfig config;
  Tensor embedding;        // vocab x E
  Tensor token_weight;     // 1 x E
  Tensor context_weight;   // 1 x E
  Tensor position_weight;  // 1 x 1
  Tensor bias;             // 1 x 1

  std::vector<NamedTensor> tensors();
  std::vector<ConstNamedTensor> tensors() const;
  TaggerParams zeros_like() const;
  bool operator==(const TaggerParams&) const = default;
};

struct TaggerTrace {
  Tensor token_embedding;  // l x E
  Tensor window_mean;      // l x E
  std::vector<double> position;
  std::vector<double> logits;
  std::vector<double> probs;
};

TaggerParams init_tagger(const TaggerConfig& cfg, std::uint64_t seed);
TaggerConfig tagger_config_for(const DatasetSplit& split, TaggerConfig base = {});

TaggerTrace tagger_forward(const TaggerParams& params, const Document& doc);
void tagger_backward(const TaggerParams& params, const Document& doc,
                     const TaggerTrace& trace, std::span<const double> dlogits,
                     TaggerParams& grads, double scale = 1.0);
double tagger_add_l2(const TaggerParams& params, double l2, TaggerParams* grads);

// Mean binary cross-entropy over the document's tokens, with gradients added
// into grads scaled by `scale`.
double tagger_bce(const TaggerParams& params, const Document& doc,
                  std::span<const int> labels, TaggerParams& grads,
                  double scale = 1.0);

std::vector<double> token_probabilities(const TaggerParams& params,
                                        const Document& doc);

// Masks are matched to documents by id.
std::vector<TokenTargets> make_pseudo_targets(
    const std::vector<RationaleMask>& masks, const DatasetSplit& split);

// Indices of the documents that receive human supervision: a seeded sample of
// ceil(f * N) of the N documents carrying gold rationales.
std::vector<std::size_t> supervised_subset(const DatasetSplit& split,
                                           double fraction, std::uint64_t seed);

std::vector<TokenTargets> mix_supervision(const std::vector<TokenTargets>& pseudo,
                                          const DatasetSplit& split,
                                          double fraction, std::uint64_t seed);

TaggerParams train_tagger(const DatasetSplit& split,
                          const std::vector<TokenTargets>& targets,
                          const TrainConfig& tcfg, TaggerConfig tagger_cfg = {});

// Decodes the tagger probabilities at budget k = resolve_k(l, spec.ratio).
RationaleMask tag_and_decode(const TaggerParams& params, const Document& doc,
                             const BudgetSpec& spec);
std::vector<RationaleMask> tag_and_decode(const TaggerParams& params,
                                          const DatasetSplit& split,
                                          const BudgetSpec& spec);

// nullopt when gold is empty (the document is skipped).
std::optional<TokenAgreement> rationale_agreement(const RationaleMask& pred,
                                                  std::span<const int> gold);

struct AgreementSummary {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
};

AgreementSummary mean_agreement(const std::vector<RationaleMask>& masks,
                                const DatasetSplit& split);

}  // namespace fresh

#endif  // FRESH_EXTRACTOR_H_
