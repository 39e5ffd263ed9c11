#include "fresh/extractor.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "fresh/error.h"
#include "fresh/optimizer.h"
#include "fresh/rng.h"

namespace fresh {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double z = std::exp(x);
  return z / (1.0 + z);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

std::string_view target_source_name(TargetSource source) {
  return source == TargetSource::kPseudo ? "pseudo" : "human";
}

std::vector<NamedTensor> TaggerParams::tensors() {
  return {{"embedding", &embedding},
          {"token_weight", &token_weight},
          {"context_weight", &context_weight},
          {"position_weight", &position_weight},
          {"bias", &bias}};
}

std::vector<ConstNamedTensor> TaggerParams::tensors() const {
  return {{"embedding", &embedding},
          {"token_weight", &token_weight},
          {"context_weight", &context_weight},
          {"position_weight", &position_weight},
          {"bias", &bias}};
}

TaggerParams TaggerParams::zeros_like() const {
  TaggerParams z;
  z.config = config;
  z.embedding = Tensor(embedding.rows, embedding.cols);
  z.token_weight = Tensor(token_weight.rows, token_weight.cols);
  z.context_weight = Tensor(context_weight.rows, context_weight.cols);
  z.position_weight = Tensor(1, 1);
  z.bias = Tensor(1, 1);
  return z;
}

TaggerParams init_tagger(const TaggerConfig& cfg, std::uint64_t seed) {
  if (cfg.vocab_size <= kNumReservedIds || cfg.embed_dim == 0) {
    throw Error(ErrorKind::kConfig, "invalid tagger config");
  }
  TaggerParams p;
  p.config = cfg;
  p.embedding = Tensor(cfg.vocab_size, cfg.embed_dim);
  p.token_weight = Tensor(1, cfg.embed_dim);
  p.context_weight = Tensor(1, cfg.embed_dim);
  p.position_weight = Tensor(1, 1);
  p.bias = Tensor(1, 1);
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
  for (Tensor* t : {&p.embedding, &p.token_weight, &p.context_weight}) {
    for (auto& x : t->data) x = rng.uniform(-scale, scale);
  }
  p.position_weight.data[0] = rng.uniform(-1.0, 1.0);
  return p;
}

TaggerConfig tagger_config_for(const DatasetSplit& split, TaggerConfig base) {
  if (!split.vocabulary) {
    throw Error(ErrorKind::kInvalidArgument, "split has no vocabulary");
  }
  base.vocab_size = split.vocabulary->size();
  return base;
}

TaggerTrace tagger_forward(const TaggerParams& params, const Document& doc) {
  const std::size_t l = doc.length();
  const std::size_t e = params.config.embed_dim;
  const std::size_t w = params.config.window;
  if (l == 0) throw Error(ErrorKind::kInvalidArgument, "empty document");
  TaggerTrace tr;
  tr.token_embedding = Tensor(l, e);
  tr.window_mean = Tensor(l, e);
  tr.position.resize(l);
  tr.logits.resize(l);
  tr.probs.resize(l);
  for (std::size_t i = 0; i < l; ++i) {
    const auto& ids = doc.tokens[i].piece_ids;
    if (ids.empty()) {
      throw Error(ErrorKind::kInvalidArgument,
                  "document '" + doc.id + "' is not encoded");
    }
    auto row = tr.token_embedding.row(i);
    for (int id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= params.embedding.rows) {
        throw Error(ErrorKind::kInvalidArgument, "piece id outside vocabulary");
      }
      const auto src = params.embedding.row(id);
      for (std::size_t k = 0; k < e; ++k) row[k] += src[k];
    }
    for (auto& x : row) x /= static_cast<double>(ids.size());
  }
  for (std::size_t i = 0; i < l; ++i) {
    const std::size_t lo = i >= w ? i - w : 0;
    const std::size_t hi = std::min(l - 1, i + w);
    auto m = tr.window_mean.row(i);
    std::size_t n = 0;
    for (std::size_t j = lo; j <= hi; ++j) {
      if (j == i) continue;
      const auto src = tr.token_embedding.row(j);
      for (std::size_t k = 0; k < e; ++k) m[k] += src[k];
      ++n;
    }
    if (n > 0) {
      for (auto& x : m) x /= static_cast<double>(n);
    }
    tr.position[i] = static_cast<double>(i) / static_cast<double>(l);
    tr.logits[i] = dot(params.token_weight.data, tr.token_embedding.row(i)) +
                   dot(params.context_weight.data, m) +
                   params.position_weight.data[0] * tr.position[i] +
                   params.bias.data[0];
    tr.probs[i] = sigmoid(tr.logits[i]);
  }
  return tr;
}

void tagger_backward(const TaggerParams& params, const Document& doc,
                     const TaggerTrace& trace, std::span<const double> dlogits,
                     TaggerParams& grads, double scale) {
  const std::size_t l = doc.length();
  const std::size_t e = params.config.embed_dim;
  const std::size_t w = params.config.window;
  Tensor dtoken(l, e);
  for (std::size_t i = 0; i < l; ++i) {
    const double g = dlogits[i];
    if (g == 0.0) continue;
    const auto emb = trace.token_embedding.row(i);
    const auto m = trace.window_mean.row(i);
    for (std::size_t k = 0; k < e; ++k) {
      grads.token_weight.data[k] += scale * g * emb[k];
      grads.context_weight.data[k] += scale * g * m[k];
    }
    grads.position_weight.data[0] += scale * g * trace.position[i];
    grads.bias.data[0] += scale * g;

    auto dt = dtoken.row(i);
    for (std::size_t k = 0; k < e; ++k) dt[k] += g * params.token_weight.data[k];
    const std::size_t lo = i >= w ? i - w : 0;
    const std::size_t hi = std::min(l - 1, i + w);
    const std::size_t n = hi - lo;  // neighbours, excluding i
    if (n == 0) continue;
    const double share = g / static_cast<double>(n);
    for (std::size_t j = lo; j <= hi; ++j) {
      if (j == i) continue;
      auto dj = dtoken.row(j);
      for (std::size_t k = 0; k < e; ++k) dj[k] += share * params.context_weight.data[k];
    }
  }
  for (std::size_t i = 0; i < l; ++i) {
    const auto& ids = doc.tokens[i].piece_ids;
    const double share = scale / static_cast<double>(ids.size());
    const auto dt = dtoken.row(i);
    for (int id : ids) {
      auto row = grads.embedding.row(id);
      for (std::size_t k = 0; k < e; ++k) row[k] += share * dt[k];
    }
  }
}

double tagger_add_l2(const TaggerParams& params, double l2, TaggerParams* grads) {
  if (l2 == 0.0) return 0.0;
  const Tensor* weights[] = {&params.embedding, &params.token_weight,
                             &params.context_weight, &params.position_weight};
  Tensor* targets[] = {nullptr, nullptr, nullptr, nullptr};
  if (grads) {
    targets[0] = &grads->embedding;
    targets[1] = &grads->token_weight;
    targets[2] = &grads->context_weight;
    targets[3] = &grads->position_weight;
  }
  double term = 0.0;
  for (int i = 0; i < 4; ++i) {
    term += squared_norm(weights[i]->data);
    if (grads) {
      for (std::size_t j = 0; j < weights[i]->size(); ++j) {
        targets[i]->data[j] += 2.0 * l2 * weights[i]->data[j];
      }
    }
  }
  return l2 * term;
}

double tagger_bce(const TaggerParams& params, const Document& doc,
                  std::span<const int> labels, TaggerParams& grads, double scale) {
  if (labels.size() != doc.length()) {
    throw Error(ErrorKind::kInvalidArgument,
                "targets misaligned with document '" + doc.id + "'");
  }
  const TaggerTrace tr = tagger_forward(params, doc);
  const double inv_l = 1.0 / static_cast<double>(doc.length());
  double loss = 0.0;
  std::vector<double> dlogits(doc.length());
  for (std::size_t i = 0; i < doc.length(); ++i) {
    const double z = tr.logits[i];
    loss += labels[i] ? softplus(-z) : softplus(z);
    dlogits[i] = (tr.probs[i] - labels[i]) * inv_l;
  }
  tagger_backward(params, doc, tr, dlogits, grads, scale);
  return loss * inv_l;
}

std::vector<double> token_probabilities(const TaggerParams& params,
                                        const Document& doc) {
  return tagger_forward(params, doc).probs;
}

std::vector<TokenTargets> make_pseudo_targets(
    const std::vector<RationaleMask>& masks, const DatasetSplit& split) {
  std::unordered_map<std::string, const RationaleMask*> by_id;
  for (const auto& m : masks) by_id[m.doc_id] = &m;
  std::vector<TokenTargets> out;
  out.reserve(split.size());
  for (const auto& doc : split.documents) {
    auto it = by_id.find(doc.id);
    if (it == by_id.end()) {
      throw Error(ErrorKind::kInvalidArgument, "no mask for document '" + doc.id + "'");
    }
    TokenTargets t;
    t.doc_id = doc.id;
    t.labels.assign(doc.length(), 0);
    for (int i : it->second->selected) {
      if (i < 0 || static_cast<std::size_t>(i) >= doc.length()) {
        throw Error(ErrorKind::kInvalidArgument,
                    "mask index out of range for '" + doc.id + "'");
      }
      t.labels[i] = 1;
    }
    t.source = TargetSource::kPseudo;
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<std::size_t> supervised_subset(const DatasetSplit& split,
                                           double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) {
    throw Error(ErrorKind::kConfig, "supervision fraction must lie in [0, 1]");
  }
  if (fraction == 0.0) return {};
  std::vector<std::size_t> gold_docs;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto& g = split.documents[i].gold_rationale;
    if (g && !g->empty()) gold_docs.push_back(i);
  }
  if (gold_docs.empty()) {
    throw Error(ErrorKind::kConfig,
                "supervision requested but no document carries a gold rationale");
  }
  const auto count = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(gold_docs.size()) - 1e-9));
  Rng rng(seed ^ 0x6D6978ULL);
  rng.shuffle(std::span<std::size_t>(gold_docs));
  gold_docs.resize(std::min(count, gold_docs.size()));
  std::sort(gold_docs.begin(), gold_docs.end());
  return gold_docs;
}

std::vector<TokenTargets> mix_supervision(const std::vector<TokenTargets>& pseudo,
                                          const DatasetSplit& split,
                                          double fraction, std::uint64_t seed) {
  if (pseudo.size() != split.size()) {
    throw Error(ErrorKind::kInvalidArgument, "targets do not cover split");
  }
  std::vector<TokenTargets> out = pseudo;
  for (std::size_t i : supervised_subset(split, fraction, seed)) {
    const Document& doc = split.documents[i];
    if (out[i].doc_id != doc.id) {
      throw Error(ErrorKind::kInvalidArgument, "targets misaligned with split");
    }
    out[i].labels.assign(doc.length(), 0);
    for (int g : *doc.gold_rationale) out[i].labels[g] = 1;
    out[i].source = TargetSource::kHuman;
  }
  return out;
}

TaggerParams train_tagger(const DatasetSplit& split,
                          const std::vector<TokenTargets>& targets,
                          const TrainConfig& tcfg, TaggerConfig tagger_cfg) {
  tcfg.validate();
  if (targets.size() != split.size()) {
    throw Error(ErrorKind::kInvalidArgument, "targets do not cover split");
  }
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (targets[i].doc_id != split.documents[i].id) {
      throw Error(ErrorKind::kInvalidArgument,
                  "targets misaligned at document '" + split.documents[i].id + "'");
    }
  }
  if (tagger_cfg.vocab_size == 0) tagger_cfg = tagger_config_for(split, tagger_cfg);

  Rng rng(tcfg.seed ^ 0x746167ULL);
  Rng order_rng = rng.fork(1);
  TaggerParams params = init_tagger(tagger_cfg, rng.next());
  TaggerParams grads = params.zeros_like();
  Adam adam(params.tensors(), AdamConfig{tcfg.learning_rate});
  std::vector<std::size_t> order(split.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size();
         start += tcfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + tcfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      for (auto& g : grads.tensors()) g.tensor->fill(0.0);
      double loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        loss += scale * tagger_bce(params, split.documents[i], targets[i].labels,
                                   grads, scale);
      }
      loss += tagger_add_l2(params, tcfg.l2, &grads);
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::kTraining,
                    "tagger loss diverged at epoch " + std::to_string(epoch + 1) +
                        ", batch " + std::to_string(batch_index + 1));
      }
      clip_global_norm(grads.tensors(), tcfg.clip_norm);
      adam.step(grads.tensors());
    }
  }
  return params;
}

RationaleMask tag_and_decode(const TaggerParams& params, const Document& doc,
                             const BudgetSpec& spec) {
  spec.validate();
  if (spec.scope != BudgetScope::kInstance) {
    throw Error(ErrorKind::kConfig, "tagger decoding requires instance scope");
  }
  const auto probs = token_probabilities(params, doc);
  const std::size_t k = std::min(resolve_k(doc.length(), spec.ratio), doc.length());
  RationaleMask mask = spec.strategy == Strategy::kTopK
                           ? topk_instance(probs, k, doc.id)
                           : best_span(probs, k, doc.id);
  mask.ratio = spec.ratio;
  return mask;
}

std::vector<RationaleMask> tag_and_decode(const TaggerParams& params,
                                          const DatasetSplit& split,
                                          const BudgetSpec& spec) {
  std::vector<RationaleMask> out;
  out.reserve(split.size());
  for (const auto& doc : split.documents) out.push_back(tag_and_decode(params, doc, spec));
  return out;
}

std::optional<TokenAgreement> rationale_agreement(const RationaleMask& pred,
                                                  std::span<const int> gold) {
  return token_agreement(pred.selected, gold);
}

AgreementSummary mean_agreement(const std::vector<RationaleMask>& masks,
                                const DatasetSplit& split) {
  if (masks.size() != split.size()) {
    throw Error(ErrorKind::kInvalidArgument, "mask count does not match split");
  }
  AgreementSummary s;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto& g = split.documents[i].gold_rationale;
    std::optional<TokenAgreement> a;
    if (g) a = rationale_agreement(masks[i], *g);
    if (!a) {
      ++s.skipped;
      continue;
    }
    s.precision += a->precision;
    s.recall += a->recall;
    s.f1 += a->f1;
    ++s.evaluated;
  }
  if (s.evaluated) {
    const double n = static_cast<double>(s.evaluated);
    s.precision /= n;
    s.recall /= n;
    s.f1 /= n;
  }
  return s;
}

}  // namespace fresh
