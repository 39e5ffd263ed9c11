#include "fresh/model.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fresh/error.h"
#include "fresh/optimizer.h"
#include "fresh/rng.h"

namespace fresh {

namespace {

void softmax_inplace(std::span<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (auto& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (auto& x : v) x /= sum;
}

void fill_uniform(Tensor& t, double scale, Rng& rng) {
  for (auto& x : t.data) x = rng.uniform(-scale, scale);
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size <= kNumReservedIds) {
    throw Error(ErrorKind::kConfig, "vocab_size too small");
  }
  if (num_heads < 1 || embed_dim == 0 || embed_dim % num_heads != 0) {
    throw Error(ErrorKind::kConfig, "embed_dim must be divisible by num_heads");
  }
  if (head_dim < 1) throw Error(ErrorKind::kConfig, "head_dim must be >= 1");
  if (num_classes < 2) throw Error(ErrorKind::kConfig, "num_classes must be >= 2");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) {
    throw Error(ErrorKind::kConfig, "learning rate must be > 0");
  }
  if (!(clip_norm > 0.0)) throw Error(ErrorKind::kConfig, "clip must be > 0");
  if (epochs < 1) throw Error(ErrorKind::kConfig, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::kConfig, "batch size must be >= 1");
  if (l2 < 0.0) throw Error(ErrorKind::kConfig, "l2 must be >= 0");
}

std::vector<NamedTensor> ModelParams::tensors() {
  return {{"embedding", &embedding},
          {"query", &query},
          {"key", &key},
          {"output", &output},
          {"bias", &bias}};
}

std::vector<ConstNamedTensor> ModelParams::tensors() const {
  return {{"embedding", &embedding},
          {"query", &query},
          {"key", &key},
          {"output", &output},
          {"bias", &bias}};
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z;
  z.config = config;
  z.embedding = Tensor(embedding.rows, embedding.cols);
  z.query = Tensor(query.rows, query.cols);
  z.key = Tensor(key.rows, key.cols);
  z.output = Tensor(output.rows, output.cols);
  z.bias = Tensor(bias.rows, bias.cols);
  return z;
}

int ForwardTrace::predicted() const {
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) -
                          logits.begin());
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t e = cfg.embed_dim;
  const std::size_t h = cfg.num_heads;
  const std::size_t d = cfg.head_dim;
  const std::size_t c = static_cast<std::size_t>(cfg.num_classes);
  ModelParams p;
  p.config = cfg;
  p.embedding = Tensor(cfg.vocab_size, e);
  p.query = Tensor(h, d);
  p.key = Tensor(h * e, d);
  p.output = Tensor(e, c);
  p.bias = Tensor(1, c);
  Rng rng(seed);
  fill_uniform(p.embedding, 1.0 / std::sqrt(static_cast<double>(e)), rng);
  fill_uniform(p.query, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  fill_uniform(p.key, 1.0 / std::sqrt(static_cast<double>(e)), rng);
  fill_uniform(p.output, 1.0 / std::sqrt(static_cast<double>(e)), rng);
  return p;
}

InputSequence build_input(const Document& doc, const RationaleMask* mask) {
  InputSequence in;
  if (doc.query) {
    for (const auto& t : *doc.query) {
      for (int id : t.piece_ids) {
        in.ids.push_back(id);
        in.token_of.push_back(-1);
      }
    }
    in.ids.push_back(kSeparatorId);
    in.token_of.push_back(-1);
  }
  auto add_token = [&](std::size_t i) {
    if (doc.tokens[i].piece_ids.size() != doc.tokens[i].pieces.size()) {
      throw Error(ErrorKind::kInvalidArgument,
                  "document '" + doc.id + "' is not encoded");
    }
    for (int id : doc.tokens[i].piece_ids) {
      in.ids.push_back(id);
      in.token_of.push_back(static_cast<int>(i));
    }
  };
  if (mask) {
    if (mask->selected.empty()) {
      throw Error(ErrorKind::kInvalidArgument,
                  "mask for '" + doc.id + "' selects no tokens");
    }
    for (int i : mask->selected) {
      if (i < 0 || static_cast<std::size_t>(i) >= doc.length()) {
        throw Error(ErrorKind::kInvalidArgument,
                    "mask index out of range for '" + doc.id + "'");
      }
      add_token(static_cast<std::size_t>(i));
    }
  } else {
    for (std::size_t i = 0; i < doc.length(); ++i) add_token(i);
  }
  return in;
}

ForwardTrace forward(const ModelParams& params, const Document& doc,
                     const RationaleMask* mask) {
  return forward(params, build_input(doc, mask));
}

ForwardTrace forward(const ModelParams& params, const InputSequence& input) {
  const auto& cfg = params.config;
  const std::size_t t_len = input.ids.size();
  if (t_len == 0) {
    throw Error(ErrorKind::kInvalidArgument, "empty input sequence");
  }
  const std::size_t e = cfg.embed_dim;
  const std::size_t h_count = cfg.num_heads;
  const std::size_t d = cfg.head_dim;
  const std::size_t vdim = cfg.value_dim();
  const std::size_t c_count = static_cast<std::size_t>(cfg.num_classes);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (int id : input.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= params.embedding.rows) {
      throw Error(ErrorKind::kInvalidArgument,
                  "piece id " + std::to_string(id) + " outside vocabulary");
    }
  }

  ForwardTrace tr;
  tr.input = input;
  tr.score_vectors = Tensor(h_count, e);
  tr.attention = Tensor(h_count, t_len);
  tr.context.assign(e, 0.0);
  for (std::size_t h = 0; h < h_count; ++h) {
    auto u = tr.score_vectors.row(h);
    const auto q = params.query.row(h);
    for (std::size_t i = 0; i < e; ++i) {
      u[i] = dot(params.key.row(h * e + i), q) * inv_sqrt_d;
    }
    auto a = tr.attention.row(h);
    for (std::size_t t = 0; t < t_len; ++t) {
      a[t] = dot(params.embedding.row(input.ids[t]), u);
    }
    softmax_inplace(a);
    for (std::size_t t = 0; t < t_len; ++t) {
      const auto x = params.embedding.row(input.ids[t]);
      for (std::size_t v = h * vdim; v < (h + 1) * vdim; ++v) {
        tr.context[v] += a[t] * x[v];
      }
    }
  }
  tr.logits.assign(c_count, 0.0);
  for (std::size_t c = 0; c < c_count; ++c) {
    double z = params.bias.data[c];
    for (std::size_t i = 0; i < e; ++i) z += params.output.at(i, c) * tr.context[i];
    tr.logits[c] = z;
  }
  tr.probs = tr.logits;
  softmax_inplace(tr.probs);
  return tr;
}

Tensor backward(const ModelParams& params, const ForwardTrace& trace,
                std::span<const double> dlogits, ModelParams& grads,
                double scale) {
  const auto& cfg = params.config;
  const std::size_t e = cfg.embed_dim;
  const std::size_t h_count = cfg.num_heads;
  const std::size_t d = cfg.head_dim;
  const std::size_t vdim = cfg.value_dim();
  const std::size_t c_count = static_cast<std::size_t>(cfg.num_classes);
  const std::size_t t_len = trace.length();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<double> dcontext(e, 0.0);
  for (std::size_t i = 0; i < e; ++i) {
    for (std::size_t c = 0; c < c_count; ++c) {
      grads.output.at(i, c) += scale * trace.context[i] * dlogits[c];
      dcontext[i] += params.output.at(i, c) * dlogits[c];
    }
  }
  for (std::size_t c = 0; c < c_count; ++c) grads.bias.data[c] += scale * dlogits[c];

  Tensor dx(t_len, e);
  std::vector<double> dscore(t_len);
  std::vector<double> du(e);
  for (std::size_t h = 0; h < h_count; ++h) {
    const auto a = trace.attention.row(h);
    const auto u = trace.score_vectors.row(h);
    const std::size_t lo = h * vdim;
    const std::size_t hi = lo + vdim;
    double weighted = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) {
      const auto x = params.embedding.row(trace.input.ids[t]);
      double da = 0.0;
      for (std::size_t v = lo; v < hi; ++v) {
        da += dcontext[v] * x[v];
        dx.at(t, v) += a[t] * dcontext[v];
      }
      dscore[t] = da;
      weighted += a[t] * da;
    }
    std::fill(du.begin(), du.end(), 0.0);
    for (std::size_t t = 0; t < t_len; ++t) {
      const double ds = a[t] * (dscore[t] - weighted);
      const auto x = params.embedding.row(trace.input.ids[t]);
      auto dxt = dx.row(t);
      for (std::size_t i = 0; i < e; ++i) {
        du[i] += ds * x[i];
        dxt[i] += ds * u[i];
      }
    }
    // u = K_h q_h / sqrt(d)
    const auto q = params.query.row(h);
    auto dq = grads.query.row(h);
    for (std::size_t i = 0; i < e; ++i) {
      const auto k_row = params.key.row(h * e + i);
      auto dk_row = grads.key.row(h * e + i);
      const double g = du[i] * inv_sqrt_d;
      for (std::size_t j = 0; j < d; ++j) {
        dk_row[j] += scale * g * q[j];
        dq[j] += scale * g * k_row[j];
      }
    }
  }
  for (std::size_t t = 0; t < t_len; ++t) {
    auto row = grads.embedding.row(trace.input.ids[t]);
    const auto dxt = dx.row(t);
    for (std::size_t i = 0; i < e; ++i) row[i] += scale * dxt[i];
  }
  return dx;
}

double add_l2(const ModelParams& params, double l2, ModelParams* grads) {
  if (l2 == 0.0) return 0.0;
  double term = 0.0;
  const Tensor* weights[] = {&params.embedding, &params.query, &params.key,
                             &params.output};
  Tensor* targets[] = {nullptr, nullptr, nullptr, nullptr};
  if (grads) {
    targets[0] = &grads->embedding;
    targets[1] = &grads->query;
    targets[2] = &grads->key;
    targets[3] = &grads->output;
  }
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

namespace {

// Negative log-probability of `label` computed from the logits directly.
double cross_entropy(const ForwardTrace& trace, int label) {
  const double mx = *std::max_element(trace.logits.begin(), trace.logits.end());
  double sum = 0.0;
  for (double z : trace.logits) sum += std::exp(z - mx);
  return std::max(0.0, mx + std::log(sum) - trace.logits[label]);
}

std::vector<double> ce_logit_grad(const ForwardTrace& trace, int label) {
  std::vector<double> g = trace.probs;
  g[label] -= 1.0;
  return g;
}

}  // namespace

LossAndGrads loss_and_grads(const ModelParams& params, const ForwardTrace& trace,
                            int label, double l2) {
  if (label < 0 || label >= params.config.num_classes) {
    throw Error(ErrorKind::kInvalidArgument, "label outside class range");
  }
  // Parameters first, so a bad weight is reported under its own name rather
  // than under the first gradient it contaminates.
  check_finite(params.tensors());
  LossAndGrads out;
  out.grads = params.zeros_like();
  const double ce = cross_entropy(trace, label);
  backward(params, trace, ce_logit_grad(trace, label), out.grads);
  out.l2_term = add_l2(params, l2, &out.grads);
  out.loss = ce + out.l2_term;
  if (!std::isfinite(out.loss)) {
    throw Error(ErrorKind::kNumeric, "non-finite value in tensor 'loss'");
  }
  check_finite(out.grads.tensors());
  return out;
}

std::vector<int> predict(const ModelParams& params, const DatasetSplit& split,
                         std::span<const RationaleMask> masks) {
  if (!masks.empty() && masks.size() != split.size()) {
    throw Error(ErrorKind::kInvalidArgument, "mask count does not match split");
  }
  std::vector<int> out(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) {
    const RationaleMask* m = masks.empty() ? nullptr : &masks[i];
    out[i] = forward(params, split.documents[i], m).predicted();
  }
  return out;
}

Metrics evaluate(const ModelParams& params, const DatasetSplit& split,
                 std::span<const RationaleMask> masks) {
  const auto pred = predict(params, split, masks);
  std::vector<int> gold(split.size());
  for (std::size_t i = 0; i < split.size(); ++i) gold[i] = split.documents[i].label;
  return classification_metrics(gold, pred, params.config.num_classes);
}

TrainResult train(const DatasetSplit& train_split, const DatasetSplit& dev,
                  const ModelConfig& mcfg, const TrainConfig& tcfg,
                  std::span<const RationaleMask> train_masks,
                  std::span<const RationaleMask> dev_masks) {
  mcfg.validate();
  tcfg.validate();
  if (train_split.num_classes != dev.num_classes ||
      train_split.num_classes != mcfg.num_classes) {
    throw Error(ErrorKind::kConfig, "splits and model disagree on class count");
  }
  if (train_split.vocabulary && dev.vocabulary &&
      train_split.vocabulary != dev.vocabulary &&
      !(*train_split.vocabulary == *dev.vocabulary)) {
    throw Error(ErrorKind::kConfig, "train and dev vocabularies differ");
  }
  if (train_split.documents.empty()) {
    throw Error(ErrorKind::kConfig, "empty training split");
  }
  if (!train_masks.empty() && train_masks.size() != train_split.size()) {
    throw Error(ErrorKind::kInvalidArgument, "train mask count mismatch");
  }

  Rng rng(tcfg.seed);
  Rng order_rng = rng.fork(0x5348);
  TrainResult result;
  ModelParams params = init_params(mcfg, rng.next());
  ModelParams grads = params.zeros_like();
  Adam adam(params.tensors(), AdamConfig{tcfg.learning_rate});

  std::vector<std::size_t> order(train_split.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<ModelParams> snapshots;
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
        const Document& doc = train_split.documents[order[b]];
        const RationaleMask* m = train_masks.empty() ? nullptr : &train_masks[order[b]];
        const ForwardTrace tr = forward(params, doc, m);
        loss += scale * cross_entropy(tr, doc.label);
        backward(params, tr, ce_logit_grad(tr, doc.label), grads, scale);
      }
      loss += add_l2(params, tcfg.l2, &grads);
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::kTraining,
                    "loss diverged at epoch " + std::to_string(epoch + 1) +
                        ", batch " + std::to_string(batch_index + 1));
      }
      clip_global_norm(grads.tensors(), tcfg.clip_norm);
      adam.step(grads.tensors());
    }
    std::vector<int> gold(dev.size());
    std::vector<int> pred(dev.size());
    double dev_loss = 0.0;
    for (std::size_t i = 0; i < dev.size(); ++i) {
      const Document& doc = dev.documents[i];
      const ForwardTrace tr = forward(params, doc, dev_masks.empty() ? nullptr : &dev_masks[i]);
      gold[i] = doc.label;
      pred[i] = tr.predicted();
      dev_loss += cross_entropy(tr, doc.label);
    }
    if (!dev.documents.empty()) dev_loss /= static_cast<double>(dev.size());
    const double f1 = classification_metrics(gold, pred, mcfg.num_classes).macro_f1;
    result.history.push_back(f1);
    result.dev_loss.push_back(dev_loss);
    snapshots.push_back(params);
  }
  // Dev F1 often plateaus at the label-noise ceiling, where epochs differ by
  // less than one document's worth of F1. Those count as tied and the lower
  // dev loss decides, then the earlier epoch.
  const double tol = dev.documents.empty() ? 0.0 : 0.5 / static_cast<double>(dev.size());
  const double best = *std::max_element(result.history.begin(), result.history.end());
  std::size_t pick = 0;
  bool found = false;
  for (std::size_t e = 0; e < snapshots.size(); ++e) {
    if (result.history[e] < best - tol) continue;
    if (!found || result.dev_loss[e] < result.dev_loss[pick]) pick = e;
    found = true;
  }
  result.params = std::move(snapshots[pick]);
  result.best_epoch = static_cast<int>(pick) + 1;
  return result;
}

ModelConfig model_config_for(const DatasetSplit& split, ModelConfig base) {
  if (!split.vocabulary) {
    throw Error(ErrorKind::kInvalidArgument, "split has no vocabulary");
  }
  base.vocab_size = split.vocabulary->size();
  base.num_classes = split.num_classes;
  return base;
}

}  // namespace fresh
