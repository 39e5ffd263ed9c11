#include "fresh/e2e.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fresh/error.h"

namespace fresh {

namespace {

double cross_entropy(const ForwardTrace& trace, int label) {
  const double mx = *std::max_element(trace.logits.begin(), trace.logits.end());
  double sum = 0.0;
  for (double z : trace.logits) sum += std::exp(z - mx);
  return std::max(0.0, mx + std::log(sum) - trace.logits[label]);
}

std::vector<int> mode_mask(std::span<const double> probs) {
  std::vector<int> z(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) z[i] = probs[i] > 0.5 ? 1 : 0;
  return z;
}

}  // namespace

void RegularizerConfig::validate() const {
  if (lambda1 < 0.0 || lambda2 < 0.0) {
    throw Error(ErrorKind::kConfig, "regularizer weights must be >= 0");
  }
  if (!(desired_ratio > 0.0 && desired_ratio <= 1.0)) {
    throw Error(ErrorKind::kConfig, "desired ratio must lie in (0, 1]");
  }
}

void E2EConfig::validate() const {
  regularizer.validate();
  train.validate();
  if (samples < 1) throw Error(ErrorKind::kConfig, "samples must be >= 1");
  if (baseline_momentum < 0.0 || baseline_momentum >= 1.0) {
    throw Error(ErrorKind::kConfig, "baseline momentum must lie in [0, 1)");
  }
  if (!(truncation_ratio > 0.0 && truncation_ratio <= 1.0)) {
    throw Error(ErrorKind::kConfig, "truncation ratio must lie in (0, 1]");
  }
}

double omega(std::span<const int> z, const RegularizerConfig& rcfg) {
  const std::size_t l = z.size();
  if (l == 0) throw Error(ErrorKind::kInvalidArgument, "empty mask");
  double selected = 0.0;
  for (int v : z) selected += v ? 1.0 : 0.0;
  const double conciseness =
      std::max(0.0, selected / static_cast<double>(l) - rcfg.desired_ratio);
  double contiguity = 0.0;
  if (l >= 2) {
    double transitions = 0.0;
    for (std::size_t t = 1; t < l; ++t) transitions += (z[t] != 0) != (z[t - 1] != 0);
    contiguity = transitions / static_cast<double>(l - 1);
  }
  return rcfg.lambda1 * conciseness + rcfg.lambda2 * contiguity;
}

MaskSample sample_from_probs(std::span<const double> probs, Rng& rng) {
  MaskSample s;
  s.z.resize(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    s.z[i] = rng.uniform() < p ? 1 : 0;
    s.log_prob += s.z[i] ? std::log(p) : std::log1p(-p);
  }
  return s;
}

MaskSample sample_mask(const GeneratorParams& gen, const Document& doc, Rng& rng) {
  return sample_from_probs(token_probabilities(gen, doc), rng);
}

std::vector<int> guard_empty(std::span<const int> z, std::span<const double> probs) {
  std::vector<int> out(z.begin(), z.end());
  if (std::any_of(out.begin(), out.end(), [](int v) { return v != 0; })) return out;
  const auto best = std::max_element(probs.begin(), probs.end()) - probs.begin();
  out[best] = 1;
  return out;
}

RationaleMask mask_from_binary(std::span<const int> z, std::string doc_id) {
  RationaleMask m;
  m.doc_id = std::move(doc_id);
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i]) m.selected.push_back(static_cast<int>(i));
  }
  m.k = m.selected.size();
  m.ratio = z.empty() ? 0.0
                      : static_cast<double>(m.k) / static_cast<double>(z.size());
  m.contiguous = !m.selected.empty() &&
                 m.selected.back() - m.selected.front() + 1 ==
                     static_cast<int>(m.selected.size());
  return m;
}

RationaleMask truncate_rationale(std::span<const int> z,
                                 std::span<const double> probs, std::size_t k,
                                 std::string doc_id) {
  if (k < 1) throw Error(ErrorKind::kInvalidArgument, "k must be >= 1");
  if (z.size() != probs.size()) {
    throw Error(ErrorKind::kInvalidArgument, "mask/probability length mismatch");
  }
  const std::size_t target = std::min(k, z.size());
  std::vector<int> order(z.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs[a] > probs[b]; });
  std::vector<int> keep(z.begin(), z.end());
  std::size_t count = std::count_if(keep.begin(), keep.end(), [](int v) { return v != 0; });
  if (count > target) {
    // Drop selected tokens from the low-probability end.
    for (auto it = order.rbegin(); it != order.rend() && count > target; ++it) {
      if (keep[*it]) {
        keep[*it] = 0;
        --count;
      }
    }
  } else {
    for (auto it = order.begin(); it != order.end() && count < target; ++it) {
      if (!keep[*it]) {
        keep[*it] = 1;
        ++count;
      }
    }
  }
  RationaleMask m = mask_from_binary(keep, std::move(doc_id));
  m.k = target;
  return m;
}

RationaleMask e2e_rationale(const GeneratorParams& gen, const Document& doc,
                            double ratio) {
  const auto probs = token_probabilities(gen, doc);
  RationaleMask m = truncate_rationale(mode_mask(probs), probs,
                                       resolve_k(doc.length(), ratio), doc.id);
  m.ratio = ratio;
  return m;
}

std::vector<RationaleMask> e2e_rationales(const GeneratorParams& gen,
                                          const DatasetSplit& split, double ratio) {
  std::vector<RationaleMask> out;
  out.reserve(split.size());
  for (const auto& doc : split.documents) out.push_back(e2e_rationale(gen, doc, ratio));
  return out;
}

E2EGradients e2e_gradients(const GeneratorParams& gen, const ModelParams& enc,
                           std::span<const Document* const> batch,
                           std::span<const char> supervised,
                           const E2EConfig& cfg, double baseline, Rng& rng) {
  if (batch.empty()) throw Error(ErrorKind::kInvalidArgument, "empty batch");
  E2EGradients out;
  out.generator = gen.zeros_like();
  out.encoder = enc.zeros_like();
  out.stats.baseline = baseline;
  const double samples = static_cast<double>(cfg.samples);
  const double per_sample = 1.0 / (static_cast<double>(batch.size()) * samples);
  const double per_doc = 1.0 / static_cast<double>(batch.size());
  std::vector<double> dlogits;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Document& doc = *batch[b];
    const TaggerTrace gtr = tagger_forward(gen, doc);
    const std::size_t l = doc.length();
    dlogits.assign(l, 0.0);
    for (std::size_t s = 0; s < cfg.samples; ++s) {
      MaskSample sample = sample_from_probs(gtr.probs, rng);
      const RationaleMask view =
          mask_from_binary(guard_empty(sample.z, gtr.probs), doc.id);
      const ForwardTrace etr = forward(enc, doc, &view);
      const double ce = cross_entropy(etr, doc.label);
      const double reg = omega(sample.z, cfg.regularizer);
      const double loss = ce + reg;
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::kNumeric, "non-finite loss for '" + doc.id + "'");
      }
      std::vector<double> dz = etr.probs;
      dz[doc.label] -= 1.0;
      backward(enc, etr, dz, out.encoder, per_sample);
      // d log p(z) / d logit_t = z_t - p_t for independent Bernoullis.
      const double advantage = loss - baseline;
      for (std::size_t t = 0; t < l; ++t) {
        dlogits[t] += per_sample * advantage * (sample.z[t] - gtr.probs[t]);
      }
      double selected = 0.0;
      for (int v : sample.z) selected += v;
      out.stats.mean_loss += per_sample * loss;
      out.stats.mean_cross_entropy += per_sample * ce;
      out.stats.mean_omega += per_sample * reg;
      out.stats.mean_ratio += per_sample * selected / static_cast<double>(l);
    }
    if (!supervised.empty() && supervised[b] && doc.gold_rationale) {
      const double w = cfg.supervision_weight * per_doc / static_cast<double>(l);
      std::vector<int> gold(l, 0);
      for (int g : *doc.gold_rationale) gold[g] = 1;
      for (std::size_t t = 0; t < l; ++t) dlogits[t] += w * (gtr.probs[t] - gold[t]);
    }
    tagger_backward(gen, doc, gtr, dlogits, out.generator);
  }
  return out;
}

E2ETrainer::E2ETrainer(GeneratorParams gen, ModelParams enc, const E2EConfig& cfg)
    : cfg_(cfg),
      gen_(std::move(gen)),
      enc_(std::move(enc)),
      gen_opt_(gen_.tensors(), AdamConfig{cfg.train.learning_rate}),
      enc_opt_(enc_.tensors(), AdamConfig{cfg.train.learning_rate}) {
  cfg_.validate();
}

E2EStepStats E2ETrainer::step(std::span<const Document* const> batch,
                              std::span<const char> supervised, Rng& rng) {
  E2EGradients g = e2e_gradients(gen_, enc_, batch, supervised, cfg_, baseline_, rng);
  tagger_add_l2(gen_, cfg_.train.l2, &g.generator);
  add_l2(enc_, cfg_.train.l2, &g.encoder);
  check_finite(g.generator.tensors());
  check_finite(g.encoder.tensors());
  clip_global_norm(g.generator.tensors(), cfg_.train.clip_norm);
  clip_global_norm(g.encoder.tensors(), cfg_.train.clip_norm);
  gen_opt_.step(g.generator.tensors());
  enc_opt_.step(g.encoder.tensors());
  baseline_ = cfg_.baseline_momentum * baseline_ +
              (1.0 - cfg_.baseline_momentum) * g.stats.mean_loss;
  return g.stats;
}

Metrics evaluate_e2e(const E2EResult& model, const DatasetSplit& split,
                     double ratio) {
  const auto masks = e2e_rationales(model.generator, split, ratio);
  return evaluate(model.encoder, split, masks);
}

double mean_mode_ratio(const GeneratorParams& gen, const DatasetSplit& split) {
  if (split.documents.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& doc : split.documents) {
    const auto z = mode_mask(token_probabilities(gen, doc));
    sum += static_cast<double>(std::count(z.begin(), z.end(), 1)) /
           static_cast<double>(doc.length());
  }
  return sum / static_cast<double>(split.size());
}

E2EResult train_e2e(const Splits& data, const E2EConfig& cfg,
                    double supervision_fraction, std::uint64_t seed) {
  cfg.validate();
  const DatasetSplit& train_split = data.train;
  if (train_split.documents.empty()) {
    throw Error(ErrorKind::kConfig, "empty training split");
  }
  const ModelConfig enc_cfg = model_config_for(train_split, cfg.encoder);
  const TaggerConfig gen_cfg = tagger_config_for(train_split, cfg.generator);

  Rng rng(seed);
  GeneratorParams gen = init_tagger(gen_cfg, rng.next());
  ModelParams enc = init_params(enc_cfg, rng.next());
  Rng order_rng = rng.fork(1);
  Rng sample_rng = rng.fork(2);
  E2ETrainer trainer(std::move(gen), std::move(enc), cfg);

  std::vector<char> supervised(train_split.size(), 0);
  for (std::size_t i : supervised_subset(train_split, supervision_fraction, seed)) {
    supervised[i] = 1;
  }

  E2EResult result;
  std::vector<std::size_t> order(train_split.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const Document*> batch;
  std::vector<char> batch_supervised;
  double best = -1.0;
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double ratio_sum = 0.0;
    double loss_sum = 0.0;
    double weight = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.train.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.train.batch_size);
      batch.clear();
      batch_supervised.clear();
      for (std::size_t b = start; b < end; ++b) {
        batch.push_back(&train_split.documents[order[b]]);
        batch_supervised.push_back(supervised[order[b]]);
      }
      E2EStepStats st;
      try {
        st = trainer.step(batch, batch_supervised, sample_rng);
      } catch (const Error& e) {
        throw Error(ErrorKind::kTraining, "e2e training diverged at epoch " +
                                              std::to_string(epoch + 1) + ": " +
                                              e.what());
      }
      const double n = static_cast<double>(end - start);
      ratio_sum += n * st.mean_ratio;
      loss_sum += n * st.mean_loss;
      weight += n;
    }
    E2EEpoch rec;
    rec.train_mean_ratio = ratio_sum / weight;
    rec.train_mean_loss = loss_sum / weight;
    const auto dev_masks = e2e_rationales(trainer.generator(), data.dev, cfg.truncation_ratio);
    rec.dev_macro_f1 = evaluate(trainer.encoder(), data.dev, dev_masks).macro_f1;
    result.history.push_back(rec);
    if (rec.dev_macro_f1 > best) {
      best = rec.dev_macro_f1;
      result.generator = trainer.generator();
      result.encoder = trainer.encoder();
      result.best_epoch = epoch + 1;
    }
  }
  return result;
}

}  // namespace fresh
