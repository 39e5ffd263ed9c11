#include "fresh/harness.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "fresh/error.h"
#include "fresh/io.h"
#include "fresh/rng.h"
#include "json.hpp"

namespace fresh {

using json = nlohmann::ordered_json;

namespace {

constexpr std::string_view kNone = "none";

std::string uints_text(const std::vector<std::uint64_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(values[i]);
  }
  return out;
}

// Full precision so describe() round-trips exactly.
std::string exact(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

ModelConfig read_model(const KeyValueConfig& kv, const std::string& prefix,
                       ModelConfig base) {
  base.embed_dim = kv.get_int(prefix + ".embed_dim", base.embed_dim);
  base.num_heads = kv.get_int(prefix + ".num_heads", base.num_heads);
  base.head_dim = kv.get_int(prefix + ".head_dim", base.head_dim);
  return base;
}

TrainConfig read_train(const KeyValueConfig& kv, const std::string& prefix,
                       TrainConfig base) {
  base.learning_rate = kv.get_double(prefix + ".lr", base.learning_rate);
  base.epochs = kv.get_int(prefix + ".epochs", base.epochs);
  base.batch_size = kv.get_int(prefix + ".batch_size", base.batch_size);
  base.l2 = kv.get_double(prefix + ".l2", base.l2);
  base.clip_norm = kv.get_double(prefix + ".clip_norm", base.clip_norm);
  return base;
}

TaggerConfig read_tagger(const KeyValueConfig& kv, const std::string& prefix,
                         TaggerConfig base) {
  base.embed_dim = kv.get_int(prefix + ".embed_dim", base.embed_dim);
  base.window = kv.get_int(prefix + ".window", base.window);
  return base;
}

void put_model(std::map<std::string, std::string>& out, const std::string& prefix,
               const ModelConfig& m) {
  out[prefix + ".embed_dim"] = std::to_string(m.embed_dim);
  out[prefix + ".num_heads"] = std::to_string(m.num_heads);
  out[prefix + ".head_dim"] = std::to_string(m.head_dim);
}

void put_train(std::map<std::string, std::string>& out, const std::string& prefix,
               const TrainConfig& t) {
  out[prefix + ".lr"] = exact(t.learning_rate);
  out[prefix + ".epochs"] = std::to_string(t.epochs);
  out[prefix + ".batch_size"] = std::to_string(t.batch_size);
  out[prefix + ".l2"] = exact(t.l2);
  out[prefix + ".clip_norm"] = exact(t.clip_norm);
}

void put_tagger(std::map<std::string, std::string>& out, const std::string& prefix,
                const TaggerConfig& t) {
  out[prefix + ".embed_dim"] = std::to_string(t.embed_dim);
  out[prefix + ".window"] = std::to_string(t.window);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex16(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::vector<RationaleMask> full_masks(const DatasetSplit& split) {
  std::vector<RationaleMask> masks;
  for (const Document& doc : split.documents) masks.push_back(full_mask(doc));
  return masks;
}

double mean_ratio(const std::vector<RationaleMask>& masks, const DatasetSplit& split) {
  if (split.documents.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < split.documents.size(); ++i) {
    total += static_cast<double>(masks[i].size()) /
             static_cast<double>(split.documents[i].length());
  }
  return total / static_cast<double>(split.documents.size());
}

std::string replay_for(const ExperimentConfig& cfg, std::uint64_t seed, double ratio,
                       double fraction) {
  const std::string prefix = cfg.replay_prefix.empty() ? "fresh sweep" : cfg.replay_prefix;
  return prefix + " --seeds " + std::to_string(seed) + " --ratios " +
         format_number(ratio) + " --fractions " + format_number(fraction);
}

ReportRow run_cell(const ExperimentConfig& cfg, const Splits& data, std::uint64_t seed,
                   double ratio, double fraction) {
  ReportRow row = row_stub(cfg, seed, ratio, fraction);
  const auto start = std::chrono::steady_clock::now();
  try {
    switch (cfg.method) {
      case Method::kFullText: {
        const FreshConfig fc = fresh_cell(cfg, seed, ratio, fraction);
        const ModelConfig mcfg = model_config_for(data.train, fc.classifier_model);
        const TrainResult trained = train(data.train, data.dev, mcfg, fc.classifier_train);
        row.dev_macro_f1 = evaluate(trained.params, data.dev).macro_f1;
        const Metrics test = evaluate(trained.params, data.test);
        row.test_macro_f1 = test.macro_f1;
        row.test_accuracy = test.accuracy;
        row.mean_rationale_ratio = 1.0;
        row.gold_recall = mean_agreement(full_masks(data.test), data.test).recall;
        break;
      }
      case Method::kFresh: {
        const FreshConfig fc = fresh_cell(cfg, seed, ratio, fraction);
        const FreshResult result = run_fresh(data, fc);
        require_faithful(verify_faithfulness(result, data));
        row.dev_macro_f1 = result.classifier.dev.macro_f1;
        row.test_macro_f1 = result.classifier.test.macro_f1;
        row.test_accuracy = result.classifier.test.accuracy;
        row.mean_rationale_ratio = result.test_rationale_ratio;
        row.gold_recall = result.test_agreement.recall;
        break;
      }
      case Method::kE2E: {
        const E2EConfig ec = e2e_cell(cfg, seed, ratio);
        const E2EResult result = train_e2e(data, ec, fraction, seed);
        row.dev_macro_f1 = evaluate_e2e(result, data.dev, ec.truncation_ratio).macro_f1;
        const Metrics test = evaluate_e2e(result, data.test, ec.truncation_ratio);
        row.test_macro_f1 = test.macro_f1;
        row.test_accuracy = test.accuracy;
        const auto masks = e2e_rationales(result.generator, data.test, ec.truncation_ratio);
        row.mean_rationale_ratio = mean_ratio(masks, data.test);
        row.gold_recall = mean_agreement(masks, data.test).recall;
        break;
      }
    }
  } catch (const Error& e) {
    row.status = "error: " + std::string(error_kind_name(e.kind())) + ": " + e.what();
  } catch (const std::exception& e) {
    row.status = std::string("error: ") + e.what();
  }
  row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return row;
}

// RFC 4180 style quoting.
std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n\r") == std::string::npos) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
      }
      field.clear();
      record.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw Error(ErrorKind::kParse, "csv: unterminated quoted field");
  if (any || !field.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  return records;
}

const std::vector<std::string>& row_columns() {
  static const std::vector<std::string> cols = {
      "config_hash", "method", "scorer", "strategy", "scope", "extractor",
      "p", "f", "seed", "dev_macro_f1", "test_macro_f1", "test_accuracy",
      "mean_rationale_ratio", "gold_recall", "status", "replay"};
  return cols;
}

double parse_double_field(const std::string& text, const std::string& column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::kParse, "column '" + column + "': not a number: " + text);
  }
}

std::uint64_t parse_uint_field(const std::string& text, const std::string& column) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::kParse, "column '" + column + "': not an integer: " + text);
  }
}

// Rounds to the printed precision so JSON numbers match the CSV digits.
double rounded(double value) { return std::strtod(format_number(value).c_str(), nullptr); }

json row_json(const ReportRow& r, bool include_timing) {
  json j;
  j["config_hash"] = r.config_hash;
  j["method"] = r.method;
  j["scorer"] = r.scorer;
  j["strategy"] = r.strategy;
  j["scope"] = r.scope;
  j["extractor"] = r.extractor;
  j["p"] = rounded(r.ratio);
  j["f"] = rounded(r.fraction);
  j["seed"] = r.seed;
  j["dev_macro_f1"] = rounded(r.dev_macro_f1);
  j["test_macro_f1"] = rounded(r.test_macro_f1);
  j["test_accuracy"] = rounded(r.test_accuracy);
  j["mean_rationale_ratio"] = rounded(r.mean_rationale_ratio);
  j["gold_recall"] = rounded(r.gold_recall);
  j["status"] = r.status;
  j["replay"] = r.replay;
  if (include_timing) j["wall_time_s"] = rounded(r.wall_time_s);
  return j;
}

json aggregate_json(const AggregateRow& a) {
  json j;
  j["method"] = a.method;
  j["scorer"] = a.scorer;
  j["strategy"] = a.strategy;
  j["scope"] = a.scope;
  j["extractor"] = a.extractor;
  j["p"] = rounded(a.ratio);
  j["f"] = rounded(a.fraction);
  j["runs"] = a.runs;
  j["test_f1_mean"] = rounded(a.test_f1_mean);
  j["test_f1_min"] = rounded(a.test_f1_min);
  j["test_f1_max"] = rounded(a.test_f1_max);
  j["test_f1_std"] = rounded(a.test_f1_std);
  j["dev_f1_mean"] = rounded(a.dev_f1_mean);
  return j;
}

}  // namespace

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (value == 0.0) return "0";  // folds -0
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return buf;
}

ReportRow row_stub(const ExperimentConfig& cfg, std::uint64_t seed, double ratio,
                   double fraction) {
  ReportRow row;
  row.method = std::string(method_name(cfg.method));
  row.seed = seed;
  row.ratio = ratio;
  row.fraction = fraction;
  row.config_hash = cell_hash(cfg, seed, ratio, fraction);
  row.replay = replay_for(cfg, seed, ratio, fraction);
  row.scorer = row.strategy = row.scope = row.extractor = std::string(kNone);
  if (cfg.method == Method::kFresh) {
    row.scorer = std::string(scorer_name(cfg.fresh.scorer));
    row.strategy = std::string(strategy_name(cfg.fresh.budget.strategy));
    row.scope = std::string(scope_name(cfg.fresh.budget.scope));
    row.extractor = std::string(extractor_mode_name(cfg.fresh.extractor));
  } else if (cfg.method == Method::kE2E) {
    row.strategy = "truncate";
    row.scope = std::string(scope_name(BudgetScope::kInstance));
    row.extractor = "generator";
  }
  return row;
}

std::string_view method_name(Method method) {
  switch (method) {
    case Method::kFullText:
      return "full_text";
    case Method::kFresh:
      return "fresh";
    case Method::kE2E:
      return "e2e_baseline";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  if (name == "full_text") return Method::kFullText;
  if (name == "fresh") return Method::kFresh;
  if (name == "e2e_baseline" || name == "e2e") return Method::kE2E;
  throw Error(ErrorKind::kConfig, "unknown method: " + std::string(name));
}

Splits load_data(const DataSource& source) {
  if (source.dir.empty()) return make_synthetic(source.synthetic, source.synthetic_seed);
  return load_splits(source.dir, source.ingest);
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw Error(ErrorKind::kConfig, "experiment needs at least one seed");
  if (ratios.empty()) throw Error(ErrorKind::kConfig, "experiment needs at least one ratio");
  if (fractions.empty()) throw Error(ErrorKind::kConfig, "experiment needs at least one fraction");
  for (double p : ratios) {
    if (!(p > 0.0 && p <= 1.0)) {
      throw Error(ErrorKind::kConfig, "ratio must lie in (0, 1]: " + format_number(p));
    }
  }
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) {
      throw Error(ErrorKind::kConfig, "fraction must lie in [0, 1]: " + format_number(f));
    }
  }
  if (!(grid.lambda1_min > 0.0 && grid.lambda1_min <= grid.lambda1_max)) {
    throw Error(ErrorKind::kConfig, "sweep lambda1 range must satisfy 0 < min <= max");
  }
  if (grid.lambda2_choices.empty()) {
    throw Error(ErrorKind::kConfig, "sweep needs at least one lambda2 choice");
  }
  if (sweep_trials == 0) throw Error(ErrorKind::kConfig, "sweep needs at least one trial");
  for (double f : fractions) {
    fresh_cell(*this, seeds.front(), ratios.front(), f).validate();
  }
  e2e_cell(*this, seeds.front(), ratios.front()).validate();
}

ExperimentConfig experiment_config_from(const KeyValueConfig& kv) {
  ExperimentConfig cfg;
  DataSource& d = cfg.data;
  d.dir = kv.get_string("data.dir", d.dir);
  d.synthetic_seed = kv.get_uints("data.seed", {d.synthetic_seed}).at(0);
  const std::string unit = kv.get_string("data.span_unit", "token");
  if (unit == "token") {
    d.ingest.span_unit = SpanUnit::kToken;
  } else if (unit == "character") {
    d.ingest.span_unit = SpanUnit::kCharacter;
  } else {
    throw Error(ErrorKind::kConfig, "data.span_unit must be token or character");
  }
  d.ingest.num_classes = kv.get_int("data.num_classes", d.ingest.num_classes);
  d.ingest.max_piece_len = kv.get_int("data.max_piece_len", d.ingest.max_piece_len);
  d.ingest.max_pieces = kv.get_int("data.max_pieces", d.ingest.max_pieces);

  SyntheticConfig& s = d.synthetic;
  s.train_docs = kv.get_int("synth.train_docs", s.train_docs);
  s.dev_docs = kv.get_int("synth.dev_docs", s.dev_docs);
  s.test_docs = kv.get_int("synth.test_docs", s.test_docs);
  s.min_length = kv.get_int("synth.min_length", s.min_length);
  s.max_length = kv.get_int("synth.max_length", s.max_length);
  s.vocab_size = kv.get_int("synth.vocab_size", s.vocab_size);
  s.num_classes = kv.get_int("synth.num_classes", s.num_classes);
  s.planted_ratio = kv.get_double("synth.planted_ratio", s.planted_ratio);
  s.noise_rate = kv.get_double("synth.noise_rate", s.noise_rate);
  s.signal_density = kv.get_double("synth.signal_density", s.signal_density);

  // model.* and train.* set every network; the per-network groups override.
  const ModelConfig model = read_model(kv, "model", {});
  const TrainConfig trainer = read_train(kv, "train", {});
  const TaggerConfig tagger = read_tagger(kv, "tagger", {});

  FreshConfig& f = cfg.fresh;
  f.support_model = read_model(kv, "support_model", model);
  f.classifier_model = read_model(kv, "classifier_model", model);
  f.support_train = read_train(kv, "support_train", trainer);
  f.classifier_train = read_train(kv, "classifier_train", trainer);
  f.tagger = tagger;
  f.tagger_train = read_train(kv, "tagger_train", trainer);
  f.scorer = parse_scorer(kv.get_string("fresh.scorer", std::string(scorer_name(f.scorer))));
  f.budget.strategy = parse_strategy(
      kv.get_string("fresh.strategy", std::string(strategy_name(f.budget.strategy))));
  f.budget.scope =
      parse_scope(kv.get_string("fresh.scope", std::string(scope_name(f.budget.scope))));
  f.budget.floor_ratio = kv.get_double("fresh.floor_ratio", f.budget.floor_ratio);
  f.extractor = parse_extractor_mode(
      kv.get_string("fresh.extractor", std::string(extractor_mode_name(f.extractor))));

  E2EConfig& e = cfg.e2e;
  e.encoder = read_model(kv, "encoder", model);
  e.train = read_train(kv, "e2e_train", trainer);
  e.generator = read_tagger(kv, "generator", tagger);
  e.regularizer.lambda1 = kv.get_double("e2e.lambda1", e.regularizer.lambda1);
  e.regularizer.lambda2 = kv.get_double("e2e.lambda2", e.regularizer.lambda2);
  e.samples = kv.get_int("e2e.samples", e.samples);
  e.baseline_momentum = kv.get_double("e2e.baseline_momentum", e.baseline_momentum);
  e.supervision_weight = kv.get_double("e2e.supervision_weight", e.supervision_weight);

  cfg.method = parse_method(kv.get_string("experiment.method", std::string(method_name(cfg.method))));
  cfg.seeds = kv.get_uints("experiment.seeds", cfg.seeds);
  cfg.ratios = kv.get_doubles("experiment.ratios", cfg.ratios);
  cfg.fractions = kv.get_doubles("experiment.fractions", cfg.fractions);

  cfg.grid.lambda1_min = kv.get_double("sweep.lambda1_min", cfg.grid.lambda1_min);
  cfg.grid.lambda1_max = kv.get_double("sweep.lambda1_max", cfg.grid.lambda1_max);
  cfg.grid.lambda2_choices = kv.get_doubles("sweep.lambda2_choices", cfg.grid.lambda2_choices);
  cfg.sweep_trials = kv.get_int("sweep.trials", static_cast<long>(cfg.sweep_trials));
  cfg.sweep_seed = kv.get_uints("sweep.seed", {cfg.sweep_seed}).at(0);
  return cfg;
}

std::string describe(const ExperimentConfig& cfg) {
  std::map<std::string, std::string> out;
  out["version"] = std::to_string(kConfigVersion);
  const DataSource& d = cfg.data;
  out["data.dir"] = d.dir;
  out["data.seed"] = std::to_string(d.synthetic_seed);
  out["data.span_unit"] = d.ingest.span_unit == SpanUnit::kToken ? "token" : "character";
  out["data.num_classes"] = std::to_string(d.ingest.num_classes);
  out["data.max_piece_len"] = std::to_string(d.ingest.max_piece_len);
  out["data.max_pieces"] = std::to_string(d.ingest.max_pieces);
  const SyntheticConfig& s = d.synthetic;
  out["synth.train_docs"] = std::to_string(s.train_docs);
  out["synth.dev_docs"] = std::to_string(s.dev_docs);
  out["synth.test_docs"] = std::to_string(s.test_docs);
  out["synth.min_length"] = std::to_string(s.min_length);
  out["synth.max_length"] = std::to_string(s.max_length);
  out["synth.vocab_size"] = std::to_string(s.vocab_size);
  out["synth.num_classes"] = std::to_string(s.num_classes);
  out["synth.planted_ratio"] = exact(s.planted_ratio);
  out["synth.noise_rate"] = exact(s.noise_rate);
  out["synth.signal_density"] = exact(s.signal_density);

  const FreshConfig& f = cfg.fresh;
  put_model(out, "support_model", f.support_model);
  put_model(out, "classifier_model", f.classifier_model);
  put_train(out, "support_train", f.support_train);
  put_train(out, "classifier_train", f.classifier_train);
  put_tagger(out, "tagger", f.tagger);
  put_train(out, "tagger_train", f.tagger_train);
  out["fresh.scorer"] = std::string(scorer_name(f.scorer));
  out["fresh.strategy"] = std::string(strategy_name(f.budget.strategy));
  out["fresh.scope"] = std::string(scope_name(f.budget.scope));
  out["fresh.floor_ratio"] = exact(f.budget.floor_ratio);
  out["fresh.extractor"] = std::string(extractor_mode_name(f.extractor));

  const E2EConfig& e = cfg.e2e;
  put_model(out, "encoder", e.encoder);
  put_train(out, "e2e_train", e.train);
  put_tagger(out, "generator", e.generator);
  out["e2e.lambda1"] = exact(e.regularizer.lambda1);
  out["e2e.lambda2"] = exact(e.regularizer.lambda2);
  out["e2e.samples"] = std::to_string(e.samples);
  out["e2e.baseline_momentum"] = exact(e.baseline_momentum);
  out["e2e.supervision_weight"] = exact(e.supervision_weight);

  out["experiment.method"] = std::string(method_name(cfg.method));
  out["experiment.seeds"] = uints_text(cfg.seeds);
  std::vector<std::string> ratios, fractions, choices;
  for (double v : cfg.ratios) ratios.push_back(exact(v));
  for (double v : cfg.fractions) fractions.push_back(exact(v));
  for (double v : cfg.grid.lambda2_choices) choices.push_back(exact(v));
  auto join = [](const std::vector<std::string>& items) {
    std::string joined;
    for (std::size_t i = 0; i < items.size(); ++i) joined += (i ? "," : "") + items[i];
    return joined;
  };
  out["experiment.ratios"] = join(ratios);
  out["experiment.fractions"] = join(fractions);
  out["sweep.lambda1_min"] = exact(cfg.grid.lambda1_min);
  out["sweep.lambda1_max"] = exact(cfg.grid.lambda1_max);
  out["sweep.lambda2_choices"] = join(choices);
  out["sweep.trials"] = std::to_string(cfg.sweep_trials);
  out["sweep.seed"] = std::to_string(cfg.sweep_seed);

  std::string text;
  for (const auto& [key, value] : out) {
    if (key == "data.dir" && value.empty()) continue;
    text += key + " = " + value + "\n";
  }
  return text;
}

FreshConfig fresh_cell(const ExperimentConfig& cfg, std::uint64_t seed, double ratio,
                       double fraction) {
  FreshConfig f = cfg.fresh;
  f.budget.ratio = ratio;
  f.supervision_fraction = fraction;
  f.seed = seed;
  f.support_train.seed = f.classifier_train.seed = f.tagger_train.seed = seed;
  return f;
}

E2EConfig e2e_cell(const ExperimentConfig& cfg, std::uint64_t seed, double ratio) {
  E2EConfig e = cfg.e2e;
  e.regularizer.desired_ratio = ratio;
  e.truncation_ratio = ratio;
  e.train.seed = seed;
  return e;
}

std::string cell_hash(const ExperimentConfig& cfg, std::uint64_t seed, double ratio,
                      double fraction) {
  // Only the keys that influence a single cell: the cell coordinates replace
  // the experiment lists and the sweep settings are irrelevant.
  std::string text;
  std::istringstream lines(describe(cfg));
  for (std::string line; std::getline(lines, line);) {
    if (line.rfind("experiment.seeds", 0) == 0 || line.rfind("experiment.ratios", 0) == 0 ||
        line.rfind("experiment.fractions", 0) == 0 || line.rfind("sweep.", 0) == 0) {
      continue;
    }
    text += line + "\n";
  }
  text += "cell.seed = " + std::to_string(seed) + "\n";
  text += "cell.ratio = " + exact(ratio) + "\n";
  text += "cell.fraction = " + exact(fraction) + "\n";
  return hex16(fnv1a(text));
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const Splits& data,
                                const ExperimentReport* existing) {
  cfg.validate();
  std::map<std::string, const ReportRow*> done;
  if (existing) {
    for (const ReportRow& row : existing->rows) {
      if (row.status == "ok") done.emplace(row.config_hash, &row);
    }
  }
  // Full text ignores the budget and supervision axes.
  std::vector<double> ratios = cfg.ratios;
  std::vector<double> fractions = cfg.fractions;
  if (cfg.method == Method::kFullText) {
    ratios = {1.0};
    fractions = {0.0};
  }

  ExperimentReport report;
  std::set<std::string> emitted;
  for (double p : ratios) {
    for (double f : fractions) {
      for (std::uint64_t seed : cfg.seeds) {
        const std::string hash = cell_hash(cfg, seed, p, f);
        if (!emitted.insert(hash).second) continue;
        if (auto it = done.find(hash); it != done.end()) {
          report.rows.push_back(*it->second);
          continue;
        }
        report.rows.push_back(run_cell(cfg, data, seed, p, f));
      }
    }
  }
  report.aggregates = aggregate(report.rows);
  return report;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  return run_experiment(cfg, load_data(cfg.data));
}

std::vector<AggregateRow> aggregate(const std::vector<ReportRow>& rows) {
  using Key = std::tuple<std::string, std::string, std::string, std::string, std::string,
                         double, double>;
  std::vector<Key> order;
  std::map<Key, std::vector<const ReportRow*>> groups;
  for (const ReportRow& row : rows) {
    if (row.status != "ok") continue;
    Key key{row.method, row.scorer, row.strategy, row.scope, row.extractor, row.ratio,
            row.fraction};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(&row);
  }
  std::vector<AggregateRow> out;
  for (const Key& key : order) {
    const auto& members = groups.at(key);
    std::vector<double> test, dev;
    for (const ReportRow* r : members) {
      test.push_back(r->test_macro_f1);
      dev.push_back(r->dev_macro_f1);
    }
    const SummaryStats t = summarize(test);
    AggregateRow a;
    std::tie(a.method, a.scorer, a.strategy, a.scope, a.extractor, a.ratio, a.fraction) = key;
    a.runs = members.size();
    a.test_f1_mean = t.mean;
    a.test_f1_min = t.min;
    a.test_f1_max = t.max;
    a.test_f1_std = t.stddev;
    a.dev_f1_mean = summarize(dev).mean;
    out.push_back(std::move(a));
  }
  return out;
}

double expected_best(std::span<const double> scores, std::size_t n) {
  if (scores.empty()) throw Error(ErrorKind::kInvalidArgument, "expected_best: no scores");
  if (n == 0) throw Error(ErrorKind::kInvalidArgument, "expected_best: n must be >= 1");
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const double big_n = static_cast<double>(sorted.size());
  const double power = static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 1; i <= sorted.size(); ++i) {
    const double hi = std::pow(static_cast<double>(i) / big_n, power);
    const double lo = std::pow(static_cast<double>(i - 1) / big_n, power);
    total += sorted[i - 1] * (hi - lo);
  }
  return total;
}

std::vector<std::pair<double, double>> draw_grid(const GridSpec& grid, std::size_t trials,
                                                 std::uint64_t seed) {
  if (!(grid.lambda1_min > 0.0 && grid.lambda1_min <= grid.lambda1_max) ||
      grid.lambda2_choices.empty()) {
    throw Error(ErrorKind::kConfig, "invalid sweep grid");
  }
  Rng rng(seed);
  const double lo = std::log(grid.lambda1_min);
  const double hi = std::log(grid.lambda1_max);
  std::vector<std::pair<double, double>> draws;
  for (std::size_t t = 0; t < trials; ++t) {
    const double lambda1 = std::exp(rng.uniform(lo, hi));
    const double lambda2 = grid.lambda2_choices[rng.below(grid.lambda2_choices.size())];
    draws.emplace_back(lambda1, lambda2);
  }
  return draws;
}

SweepResult hyperparameter_sweep(const Splits& data, const E2EConfig& base,
                                 const GridSpec& grid, std::size_t trials,
                                 std::uint64_t seed) {
  SweepResult result;
  std::size_t ok = 0;
  std::size_t degenerate = 0;
  std::vector<double> dev_scores;
  std::size_t index = 0;
  for (const auto& [lambda1, lambda2] : draw_grid(grid, trials, seed)) {
    SweepTrial trial;
    trial.trial = index++;
    trial.lambda1 = lambda1;
    trial.lambda2 = lambda2;
    E2EConfig cfg = base;
    cfg.regularizer.lambda1 = lambda1;
    cfg.regularizer.lambda2 = lambda2;

    ExperimentConfig cell;
    cell.method = Method::kE2E;
    cell.e2e = cfg;
    ReportRow row;
    row.method = std::string(method_name(Method::kE2E));
    row.scorer = std::string(kNone);
    row.strategy = "truncate";
    row.scope = std::string(scope_name(BudgetScope::kInstance));
    row.extractor = "generator";
    row.ratio = cfg.truncation_ratio;
    row.seed = cfg.train.seed;
    row.config_hash = cell_hash(cell, cfg.train.seed, cfg.truncation_ratio, 0.0);
    row.replay = "fresh run-e2e --seed " + std::to_string(cfg.train.seed) + " --lambda1 " +
                 exact(lambda1) + " --lambda2 " + exact(lambda2);

    const auto start = std::chrono::steady_clock::now();
    try {
      const E2EResult trained = train_e2e(data, cfg, 0.0, cfg.train.seed);
      trial.mean_rationale_ratio = mean_mode_ratio(trained.generator, data.dev);
      trial.dev_macro_f1 = evaluate_e2e(trained, data.dev, cfg.truncation_ratio).macro_f1;
      const Metrics test = evaluate_e2e(trained, data.test, cfg.truncation_ratio);
      trial.test_macro_f1 = test.macro_f1;
      trial.degenerate = trial.mean_rationale_ratio < 0.02 || trial.mean_rationale_ratio > 0.98;
      row.dev_macro_f1 = trial.dev_macro_f1;
      row.test_macro_f1 = test.macro_f1;
      row.test_accuracy = test.accuracy;
      const auto masks = e2e_rationales(trained.generator, data.test, cfg.truncation_ratio);
      row.mean_rationale_ratio = mean_ratio(masks, data.test);
      row.gold_recall = mean_agreement(masks, data.test).recall;
      ++ok;
      if (trial.degenerate) ++degenerate;
      dev_scores.push_back(trial.dev_macro_f1);
    } catch (const std::exception& e) {
      trial.status = std::string("error: ") + e.what();
      row.status = trial.status;
    }
    row.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.trials.push_back(trial);
    result.report.rows.push_back(std::move(row));
  }
  result.degenerate_fraction = ok ? static_cast<double>(degenerate) / ok : 0.0;
  for (std::size_t n = 1; !dev_scores.empty() && n <= trials; ++n) {
    result.expected_best_curve.push_back(expected_best(dev_scores, n));
  }
  result.report.aggregates = aggregate(result.report.rows);
  return result;
}

ReportFormat parse_format(std::string_view name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "json") return ReportFormat::kJson;
  throw Error(ErrorKind::kConfig, "unknown format: " + std::string(name));
}

std::string report_rows_csv(const std::vector<ReportRow>& rows, bool include_timing) {
  std::string out;
  const auto& cols = row_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  if (include_timing) out += ",wall_time_s";
  out += "\n";
  for (const ReportRow& r : rows) {
    const std::vector<std::string> fields = {
        r.config_hash, r.method, r.scorer, r.strategy, r.scope, r.extractor,
        format_number(r.ratio), format_number(r.fraction), std::to_string(r.seed),
        format_number(r.dev_macro_f1), format_number(r.test_macro_f1),
        format_number(r.test_accuracy), format_number(r.mean_rationale_ratio),
        format_number(r.gold_recall), r.status,
        r.replay};
    for (std::size_t i = 0; i < fields.size(); ++i) out += (i ? "," : "") + csv_field(fields[i]);
    if (include_timing) out += "," + format_number(r.wall_time_s);
    out += "\n";
  }
  return out;
}

std::string aggregates_csv(const std::vector<AggregateRow>& rows) {
  std::string out =
      "method,scorer,strategy,scope,extractor,p,f,runs,test_f1_mean,test_f1_min,"
      "test_f1_max,test_f1_std,dev_f1_mean\n";
  for (const AggregateRow& a : rows) {
    const std::vector<std::string> fields = {
        a.method, a.scorer, a.strategy, a.scope, a.extractor, format_number(a.ratio),
        format_number(a.fraction), std::to_string(a.runs), format_number(a.test_f1_mean),
        format_number(a.test_f1_min), format_number(a.test_f1_max),
        format_number(a.test_f1_std), format_number(a.dev_f1_mean)};
    for (std::size_t i = 0; i < fields.size(); ++i) out += (i ? "," : "") + csv_field(fields[i]);
    out += "\n";
  }
  return out;
}

std::string report_json(const ExperimentReport& report, bool include_timing) {
  json j;
  j["rows"] = json::array();
  for (const ReportRow& r : report.rows) j["rows"].push_back(row_json(r, include_timing));
  j["aggregates"] = json::array();
  for (const AggregateRow& a : report.aggregates) j["aggregates"].push_back(aggregate_json(a));
  return j.dump(2) + "\n";
}

std::string sweep_csv(const SweepResult& sweep) {
  std::string out =
      "trial,lambda1,lambda2,mean_rationale_ratio,dev_macro_f1,test_macro_f1,degenerate,"
      "status\n";
  for (const SweepTrial& t : sweep.trials) {
    out += std::to_string(t.trial) + "," + format_number(t.lambda1) + "," +
           format_number(t.lambda2) + "," + format_number(t.mean_rationale_ratio) + "," +
           format_number(t.dev_macro_f1) + "," + format_number(t.test_macro_f1) + "," +
           (t.degenerate ? "1" : "0") + "," + csv_field(t.status) + "\n";
  }
  return out;
}

std::string sweep_summary_csv(const SweepResult& sweep) {
  std::string out = "n,expected_best_dev_macro_f1,degenerate_fraction\n";
  for (std::size_t i = 0; i < sweep.expected_best_curve.size(); ++i) {
    out += std::to_string(i + 1) + "," + format_number(sweep.expected_best_curve[i]) + "," +
           format_number(sweep.degenerate_fraction) + "\n";
  }
  return out;
}

std::vector<ReportRow> parse_report_csv(std::string_view csv) {
  const auto records = parse_csv(csv);
  if (records.empty()) throw Error(ErrorKind::kParse, "csv: missing header");
  const auto& header = records.front();
  const auto& cols = row_columns();
  const bool timing = header.size() == cols.size() + 1 && header.back() == "wall_time_s";
  if (!std::equal(cols.begin(), cols.end(), header.begin(), header.end() - (timing ? 1 : 0))) {
    throw Error(ErrorKind::kSchema, "csv: unexpected header");
  }
  std::vector<ReportRow> rows;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.size() != header.size()) {
      throw Error(ErrorKind::kParse, "csv line " + std::to_string(i + 1) + ": expected " +
                                         std::to_string(header.size()) + " fields");
    }
    ReportRow r;
    r.config_hash = rec[0];
    r.method = rec[1];
    r.scorer = rec[2];
    r.strategy = rec[3];
    r.scope = rec[4];
    r.extractor = rec[5];
    r.ratio = parse_double_field(rec[6], cols[6]);
    r.fraction = parse_double_field(rec[7], cols[7]);
    r.seed = parse_uint_field(rec[8], cols[8]);
    r.dev_macro_f1 = parse_double_field(rec[9], cols[9]);
    r.test_macro_f1 = parse_double_field(rec[10], cols[10]);
    r.test_accuracy = parse_double_field(rec[11], cols[11]);
    r.mean_rationale_ratio = parse_double_field(rec[12], cols[12]);
    r.gold_recall = parse_double_field(rec[13], cols[13]);
    r.status = rec[14];
    r.replay = rec[15];
    if (timing) r.wall_time_s = parse_double_field(rec[16], "wall_time_s");
    rows.push_back(std::move(r));
  }
  return rows;
}

ExperimentReport parse_report_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kParse, std::string("report json: ") + e.what());
  }
  ExperimentReport report;
  try {
    for (const auto& r : j.at("rows")) {
      ReportRow row;
      row.config_hash = r.at("config_hash").get<std::string>();
      row.method = r.at("method").get<std::string>();
      row.scorer = r.at("scorer").get<std::string>();
      row.strategy = r.at("strategy").get<std::string>();
      row.scope = r.at("scope").get<std::string>();
      row.extractor = r.at("extractor").get<std::string>();
      row.ratio = r.at("p").get<double>();
      row.fraction = r.at("f").get<double>();
      row.seed = r.at("seed").get<std::uint64_t>();
      row.dev_macro_f1 = r.at("dev_macro_f1").get<double>();
      row.test_macro_f1 = r.at("test_macro_f1").get<double>();
      row.test_accuracy = r.at("test_accuracy").get<double>();
      row.mean_rationale_ratio = r.at("mean_rationale_ratio").get<double>();
      row.gold_recall = r.at("gold_recall").get<double>();
      row.status = r.at("status").get<std::string>();
      row.replay = r.at("replay").get<std::string>();
      if (r.contains("wall_time_s")) row.wall_time_s = r.at("wall_time_s").get<double>();
      report.rows.push_back(std::move(row));
    }
    for (const auto& a : j.at("aggregates")) {
      AggregateRow agg;
      agg.method = a.at("method").get<std::string>();
      agg.scorer = a.at("scorer").get<std::string>();
      agg.strategy = a.at("strategy").get<std::string>();
      agg.scope = a.at("scope").get<std::string>();
      agg.extractor = a.at("extractor").get<std::string>();
      agg.ratio = a.at("p").get<double>();
      agg.fraction = a.at("f").get<double>();
      agg.runs = a.at("runs").get<std::size_t>();
      agg.test_f1_mean = a.at("test_f1_mean").get<double>();
      agg.test_f1_min = a.at("test_f1_min").get<double>();
      agg.test_f1_max = a.at("test_f1_max").get<double>();
      agg.test_f1_std = a.at("test_f1_std").get<double>();
      agg.dev_f1_mean = a.at("dev_f1_mean").get<double>();
      report.aggregates.push_back(std::move(agg));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kSchema, std::string("report json: ") + e.what());
  }
  return report;
}

void emit(const ExperimentReport& report, ReportFormat format, const std::string& path,
          bool include_timing) {
  if (format == ReportFormat::kJson) {
    write_file(path, report_json(report, include_timing));
    return;
  }
  write_file(path, report_rows_csv(report.rows, include_timing));
  std::string sibling = path;
  const auto dot = sibling.rfind('.');
  const auto slash = sibling.rfind('/');
  if (dot != std::string::npos && (slash == std::string::npos || dot > slash)) {
    sibling.insert(dot, "_aggregate");
  } else {
    sibling += "_aggregate";
  }
  write_file(sibling, aggregates_csv(report.aggregates));
}

}  // namespace fresh
