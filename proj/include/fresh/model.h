#ifndef FRESH_MODEL_H_
#define FRESH_MODEL_H_

#include <cstdint>
#include <span>
#include <vector>

#include "fresh/corpus.h"
#include "fresh/discretize.h"
#include "fresh/metrics.h"
#include "fresh/tensor.h"

namespace fresh {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 32;
  std::size_t num_heads = 2;
  // Dimension of each head's query/key space.
  std::size_t head_dim = 16;
  int num_classes = 2;
  int separator_id = kSeparatorId;
  int padding_id = kPadId;

  void validate() const;
  // Width of the embedding slice each head reads its values from.
  std::size_t value_dim() const { return embed_dim / num_heads; }
  bool operator==(const ModelConfig&) const = default;
};

// Embedding -> H pooled-query attention heads -> linear classifier.
//
// Head h scores position t by q_h . (K_h^T x_t) / sqrt(head_dim), softmaxes
// over positions, and averages slice h of the embeddings with those weights.
// The concatenated head outputs feed the output layer.
struct ModelParams {
  ModelConfig config;
  Tensor embedding;  // vocab x E
  Tensor query;      // H x head_dim
  Tensor key;        // (H * E) x head_dim; rows [h*E, (h+1)*E) are K_h
  Tensor output;     // E x C
  Tensor bias;       // 1 x C

  std::vector<NamedTensor> tensors();
  std::vector<ConstNamedTensor> tensors() const;
  // Same shapes, all zeros.
  ModelParams zeros_like() const;
  bool operator==(const ModelParams&) const = default;
};

struct TrainConfig {
  double learning_rate = 2e-3;
  int epochs = 20;
  std::size_t batch_size = 32;
  double l2 = 1e-3;
  double clip_norm = 5.0;
  std::uint64_t seed = 13;

  void validate() const;
};

// Piece sequence actually consumed by the classifier: query pieces, the
// separator (only when a query exists), then the pieces of the selected
// document tokens. Unselected tokens are absent, not zeroed.
struct InputSequence {
  std::vector<int> ids;
  // Document token index per position; -1 for query and separator positions.
  std::vector<int> token_of;

  bool operator==(const InputSequence&) const = default;
};

InputSequence build_input(const Document& doc,
                          const RationaleMask* mask = nullptr);

struct ForwardTrace {
  InputSequence input;
  Tensor attention;  // H x T
  std::vector<double> context;  // E
  std::vector<double> logits;   // C
  std::vector<double> probs;    // C
  // K_h q_h / sqrt(head_dim), one row per head.
  Tensor score_vectors;  // H x E

  std::size_t length() const { return input.ids.size(); }
  int predicted() const;
};

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

ForwardTrace forward(const ModelParams& params, const Document& doc,
                     const RationaleMask* mask = nullptr);
ForwardTrace forward(const ModelParams& params, const InputSequence& input);

// Backpropagates an upstream gradient on the logits. Parameter gradients are
// added into grads scaled by `scale`; the gradient with respect to each
// position's input embedding is returned (T x E).
Tensor backward(const ModelParams& params, const ForwardTrace& trace,
                std::span<const double> dlogits, ModelParams& grads,
                double scale = 1.0);

// Adds l2 * ||w||^2 over every weight tensor (the output bias is not a
// weight) and returns that term. Gradients are added into grads.
double add_l2(const ModelParams& params, double l2, ModelParams* grads);

struct LossAndGrads {
  double loss = 0.0;
  double l2_term = 0.0;
  ModelParams grads;
};

LossAndGrads loss_and_grads(const ModelParams& params,
                            const ForwardTrace& trace, int label, double l2);

struct TrainResult {
  ModelParams params;
  // Dev macro-F1 after each epoch.
  std::vector<double> history;
  // Mean dev cross-entropy after each epoch.
  std::vector<double> dev_loss;
  int best_epoch = 0;
};

// Minibatch Adam with global-norm clipping. Returns the epoch checkpoint with
// the best dev macro-F1. Epochs within half a dev document (0.5 / |dev|) of
// the best are tied; ties go to the lower dev loss, then the earlier epoch. When mask spans are non-empty they must align with the split
// documents.
TrainResult train(const DatasetSplit& train_split, const DatasetSplit& dev,
                  const ModelConfig& mcfg, const TrainConfig& tcfg,
                  std::span<const RationaleMask> train_masks = {},
                  std::span<const RationaleMask> dev_masks = {});

std::vector<int> predict(const ModelParams& params, const DatasetSplit& split,
                         std::span<const RationaleMask> masks = {});

Metrics evaluate(const ModelParams& params, const DatasetSplit& split,
                 std::span<const RationaleMask> masks = {});

// Config matching a split's vocabulary and class count.
ModelConfig model_config_for(const DatasetSplit& split, ModelConfig base = {});

}  // namespace fresh

#endif  // FRESH_MODEL_H_
