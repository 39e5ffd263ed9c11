#ifndef FRESH_E2E_H_
#define FRESH_E2E_H_

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "fresh/corpus.h"
#include "fresh/discretize.h"
#include "fresh/extractor.h"
#include "fresh/metrics.h"
#include "fresh/model.h"
#include "fresh/optimizer.h"
#include "fresh/rng.h"

// End-to-end generator/encoder rationalizer trained with the score-function
// (REINFORCE) estimator. The generator shares the tagger architecture.
namespace fresh {

struct RegularizerConfig {
  double lambda1 = 1.0;  // conciseness
  double lambda2 = 0.5;  // contiguity
  double desired_ratio = 0.2;

  void validate() const;
};

using GeneratorParams = TaggerParams;

struct E2EConfig {
  RegularizerConfig regularizer;
  std::size_t samples = 1;
  double baseline_momentum = 0.9;
  TrainConfig train;
  ModelConfig encoder;
  TaggerConfig generator;
  // Inference budget: rationales are truncated/padded to resolve_k(l, ratio).
  double truncation_ratio = 0.2;
  // Weight of the generator's cross-entropy against gold token labels on the
  // supervised subset.
  double supervision_weight = 1.0;

  void validate() const;
};

// lambda1 * max(0, |z|/L - d) + lambda2 * sum_{t=1}^{L-1} |z_t - z_{t-1}| / (L-1).
// For L = 1 the contiguity term is 0.
double omega(std::span<const int> z, const RegularizerConfig& rcfg);

struct MaskSample {
  std::vector<int> z;
  double log_prob = 0.0;
};

MaskSample sample_from_probs(std::span<const double> probs, Rng& rng);
MaskSample sample_mask(const GeneratorParams& gen, const Document& doc, Rng& rng);

// Returns z unchanged unless it is all zero, in which case only the single
// highest-probability token (lowest index on ties) is selected.
std::vector<int> guard_empty(std::span<const int> z, std::span<const double> probs);

RationaleMask mask_from_binary(std::span<const int> z, std::string doc_id);

// Forces |z| to exactly min(k, L): drops the lowest-probability selected
// tokens or adds the highest-probability unselected ones (ties: lower index).
RationaleMask truncate_rationale(std::span<const int> z,
                                 std::span<const double> probs, std::size_t k,
                                 std::string doc_id = {});

// Inference rationale: the generator's most likely mask (p > 0.5), truncated
// to resolve_k(l, ratio).
RationaleMask e2e_rationale(const GeneratorParams& gen, const Document& doc,
                            double ratio);
std::vector<RationaleMask> e2e_rationales(const GeneratorParams& gen,
                                          const DatasetSplit& split, double ratio);

struct E2EStepStats {
  double mean_loss = 0.0;       // cross-entropy + omega, per sample
  double mean_cross_entropy = 0.0;
  double mean_omega = 0.0;
  double mean_ratio = 0.0;      // |z| / L of the raw samples
  double baseline = 0.0;        // baseline used for this step
};

struct E2EGradients {
  GeneratorParams generator;
  ModelParams encoder;
  E2EStepStats stats;
};

// Gradient estimate for one batch without touching the parameters. Encoder
// gradients are exact and averaged over samples; generator gradients use
// (loss - baseline) * d log p(z). No l2 or clipping is applied here.
E2EGradients e2e_gradients(const GeneratorParams& gen, const ModelParams& enc,
                           std::span<const Document* const> batch,
                           std::span<const char> supervised,
                           const E2EConfig& cfg, double baseline, Rng& rng);

// Owns the parameters and optimizer state of one end-to-end run.
class E2ETrainer {
 public:
  E2ETrainer(GeneratorParams gen, ModelParams enc, const E2EConfig& cfg);
  E2ETrainer(const E2ETrainer&) = delete;
  E2ETrainer& operator=(const E2ETrainer&) = delete;

  // One update over the batch. `supervised` flags (may be empty) mark
  // documents whose gold rationale supervises the generator.
  E2EStepStats step(std::span<const Document* const> batch,
                    std::span<const char> supervised, Rng& rng);

  const GeneratorParams& generator() const { return gen_; }
  const ModelParams& encoder() const { return enc_; }
  double baseline() const { return baseline_; }

 private:
  E2EConfig cfg_;
  GeneratorParams gen_;
  ModelParams enc_;
  Adam gen_opt_;
  Adam enc_opt_;
  double baseline_ = 0.0;
};

struct E2EEpoch {
  double dev_macro_f1 = 0.0;
  double train_mean_ratio = 0.0;
  double train_mean_loss = 0.0;
};

struct E2EResult {
  GeneratorParams generator;
  ModelParams encoder;
  std::vector<E2EEpoch> history;
  int best_epoch = 0;
};

E2EResult train_e2e(const Splits& data, const E2EConfig& cfg,
                    double supervision_fraction, std::uint64_t seed);

// Test-time evaluation on truncated rationales.
Metrics evaluate_e2e(const E2EResult& model, const DatasetSplit& split,
                     double ratio);

// Mean |z|/L of the generator's most likely (untruncated) masks.
double mean_mode_ratio(const GeneratorParams& gen, const DatasetSplit& split);

}  // namespace fresh

#endif  // FRESH_E2E_H_
