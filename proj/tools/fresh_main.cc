// Command-line front end for the rationale pipeline and experiment harness.
//
// Every command writes its artifacts under --out-dir. Metric CSVs contain no
// timing columns unless --timing is given, so reruns are byte-identical.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fresh/config_file.h"
#include "fresh/corpus.h"
#include "fresh/discretize.h"
#include "fresh/e2e.h"
#include "fresh/error.h"
#include "fresh/extractor.h"
#include "fresh/harness.h"
#include "fresh/io.h"
#include "fresh/model.h"
#include "fresh/pipeline.h"
#include "fresh/saliency.h"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace fresh;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::string format = "csv";
  std::string data_dir;
  bool timing = false;
};

struct Context {
  ExperimentConfig cfg;
  std::string out_dir;
  ReportFormat format = ReportFormat::kCsv;
  bool timing = false;

  std::string path(const std::string& name) const {
    return (fs::path(out_dir) / name).string();
  }
  std::uint64_t seed() const { return cfg.seeds.front(); }
};

Context make_context(const GlobalOptions& g) {
  KeyValueConfig kv;
  if (!g.config_path.empty()) kv = KeyValueConfig::load(g.config_path);
  Context ctx;
  ctx.cfg = experiment_config_from(kv);
  if (auto unused = kv.unused_keys(); !unused.empty()) {
    std::string keys;
    for (const auto& k : unused) keys += (keys.empty() ? "" : ", ") + k;
    throw Error(ErrorKind::kConfig, "unknown config keys: " + keys);
  }
  if (!g.data_dir.empty()) ctx.cfg.data.dir = g.data_dir;
  if (g.seed) ctx.cfg.seeds = {*g.seed};
  ctx.out_dir = g.out_dir;
  ctx.format = parse_format(g.format);
  ctx.timing = g.timing;
  ctx.cfg.replay_prefix = "fresh sweep";
  if (!g.config_path.empty()) ctx.cfg.replay_prefix += " --config " + g.config_path;
  if (!g.data_dir.empty()) ctx.cfg.replay_prefix += " --data " + g.data_dir;
  std::error_code ec;
  fs::create_directories(ctx.out_dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + ctx.out_dir + ": " + ec.message());
  // The effective configuration, loadable with --config.
  write_file(ctx.path("config.txt"), describe(ctx.cfg));
  return ctx;
}

const DatasetSplit& split_of(const Splits& s, SplitName name) {
  switch (name) {
    case SplitName::kTrain:
      return s.train;
    case SplitName::kDev:
      return s.dev;
    case SplitName::kTest:
      return s.test;
  }
  return s.train;
}

constexpr SplitName kAllSplits[] = {SplitName::kTrain, SplitName::kDev, SplitName::kTest};

std::string split_file(std::string_view stem, SplitName name) {
  return std::string(stem) + "_" + std::string(split_name(name)) + ".jsonl";
}

void write_stats(const Context& ctx, const Splits& splits) {
  std::string csv =
      "split,count,doc_length_mean,doc_length_max,query_length_mean,query_length_max,"
      "rationale_ratio_mean,rationale_ratio_max,label_distribution\n";
  for (SplitName name : kAllSplits) {
    const CorpusStats st = stats(split_of(splits, name));
    std::string labels;
    for (double p : st.label_distribution) labels += (labels.empty() ? "" : " ") + format_number(p);
    csv += std::string(split_name(name)) + "," + std::to_string(st.count) + "," +
           format_number(st.doc_length_mean) + "," + std::to_string(st.doc_length_max) + "," +
           format_number(st.query_length_mean) + "," + std::to_string(st.query_length_max) +
           "," + format_number(st.rationale_ratio_mean) + "," +
           format_number(st.rationale_ratio_max) + "," + labels + "\n";
  }
  write_file(ctx.path("stats.csv"), csv);
}

void write_report(const Context& ctx, const ExperimentReport& report, const std::string& stem) {
  emit(report, ctx.format, ctx.path(stem + (ctx.format == ReportFormat::kCsv ? ".csv" : ".json")),
       ctx.timing);
}

std::string history_csv(const std::vector<double>& history) {
  std::string csv = "epoch,dev_macro_f1\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    csv += std::to_string(i + 1) + "," + format_number(history[i]) + "\n";
  }
  return csv;
}

std::string mask_summary_csv(const Splits& data,
                             const std::vector<std::vector<RationaleMask>>& masks) {
  std::string csv = "split,documents,mean_ratio,gold_precision,gold_recall,gold_f1,gold_evaluated\n";
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const DatasetSplit& split = split_of(data, kAllSplits[i]);
    double ratio = 0.0;
    for (std::size_t d = 0; d < split.size(); ++d) {
      ratio += static_cast<double>(masks[i][d].size()) / split.documents[d].length();
    }
    if (split.size()) ratio /= static_cast<double>(split.size());
    const AgreementSummary agree = mean_agreement(masks[i], split);
    csv += std::string(split_name(kAllSplits[i])) + "," + std::to_string(split.size()) + "," +
           format_number(ratio) + "," + format_number(agree.precision) + "," +
           format_number(agree.recall) + "," + format_number(agree.f1) + "," +
           std::to_string(agree.evaluated) + "\n";
  }
  return csv;
}

std::string audit_json(const AuditRecord& audit) {
  nlohmann::ordered_json j;
  j["evaluated"] = audit.evaluated;
  j["violations"] = audit.violations;
  j["violating_ids"] = audit.violating_ids;
  nlohmann::ordered_json hist = nlohmann::ordered_json::object();
  for (const auto& [len, count] : audit.length_histogram) hist[std::to_string(len)] = count;
  j["length_histogram"] = hist;
  return j.dump(2) + "\n";
}

// --- commands -------------------------------------------------------------

void cmd_ingest(const Context& ctx, const std::string& input_dir) {
  DataSource source = ctx.cfg.data;
  if (!input_dir.empty()) source.dir = input_dir;
  if (source.dir.empty()) {
    throw Error(ErrorKind::kConfig, "ingest needs --input or data.dir");
  }
  const Splits splits = load_data(source);
  save_splits(splits, ctx.out_dir);
  write_stats(ctx, splits);
}

void cmd_synth(const Context& ctx, bool seed_given) {
  DataSource source = ctx.cfg.data;
  source.dir.clear();
  if (seed_given) source.synthetic_seed = ctx.seed();
  const Splits splits = load_data(source);
  save_splits(splits, ctx.out_dir);
  write_stats(ctx, splits);
}

void cmd_train_support(const Context& ctx) {
  const Splits data = load_data(ctx.cfg.data);
  const FreshConfig fc = fresh_cell(ctx.cfg, ctx.seed(), ctx.cfg.ratios.front(), 0.0);
  const ModelConfig mcfg = model_config_for(data.train, fc.support_model);
  const TrainResult trained = train(data.train, data.dev, mcfg, fc.support_train);
  write_file(ctx.path("support.json"), model_to_json(trained.params));
  write_file(ctx.path("support_history.csv"), history_csv(trained.history));
  std::string csv = "split,macro_f1,accuracy\n";
  for (SplitName name : kAllSplits) {
    const Metrics m = evaluate(trained.params, split_of(data, name));
    csv += std::string(split_name(name)) + "," + format_number(m.macro_f1) + "," +
           format_number(m.accuracy) + "\n";
  }
  write_file(ctx.path("support_metrics.csv"), csv);
}

void cmd_score(const Context& ctx, std::string checkpoint, const std::string& scorer) {
  if (checkpoint.empty()) checkpoint = ctx.path("support.json");
  const Splits data = load_data(ctx.cfg.data);
  const ModelParams params = model_from_json(read_file(checkpoint));
  const Scorer which = parse_scorer(scorer.empty() ? std::string(scorer_name(ctx.cfg.fresh.scorer))
                                                   : scorer);
  std::string csv = "split,documents,mean_score,max_score\n";
  for (SplitName name : kAllSplits) {
    const auto scores = score_corpus(params, split_of(data, name), which);
    write_file(ctx.path(split_file("scores", name)), scores_to_jsonl(scores));
    double total = 0.0, peak = 0.0;
    std::size_t count = 0;
    for (const auto& sv : scores) {
      for (double v : sv.scores) {
        total += v;
        peak = std::max(peak, v);
        ++count;
      }
    }
    csv += std::string(split_name(name)) + "," + std::to_string(scores.size()) + "," +
           format_number(count ? total / count : 0.0) + "," + format_number(peak) + "\n";
  }
  write_file(ctx.path("score_summary.csv"), csv);
}

void cmd_extract(const Context& ctx, std::string scores_dir) {
  if (scores_dir.empty()) scores_dir = ctx.out_dir;
  const Splits data = load_data(ctx.cfg.data);
  BudgetSpec spec = ctx.cfg.fresh.budget;
  spec.ratio = ctx.cfg.ratios.front();
  std::vector<std::vector<RationaleMask>> all;
  for (SplitName name : kAllSplits) {
    const auto scores =
        scores_from_jsonl(read_file((fs::path(scores_dir) / split_file("scores", name)).string()));
    auto masks = discretize(scores, spec);
    write_file(ctx.path(split_file("masks", name)), masks_to_jsonl(masks, "heuristic"));
    all.push_back(std::move(masks));
  }
  write_file(ctx.path("mask_summary.csv"), mask_summary_csv(data, all));
}

void cmd_train_extractor(const Context& ctx, std::string masks_dir,
                         std::optional<double> fraction) {
  if (masks_dir.empty()) masks_dir = ctx.out_dir;
  const Splits data = load_data(ctx.cfg.data);
  const double f = fraction.value_or(ctx.cfg.fractions.front());
  const FreshConfig fc = fresh_cell(ctx.cfg, ctx.seed(), ctx.cfg.ratios.front(), f);
  const auto train_masks = masks_from_jsonl(
      read_file((fs::path(masks_dir) / split_file("masks", SplitName::kTrain)).string()));
  auto targets = make_pseudo_targets(train_masks, data.train);
  targets = mix_supervision(targets, data.train, f, fc.seed);
  write_file(ctx.path("targets_train.jsonl"), targets_to_jsonl(targets));
  const TaggerParams tagger = train_tagger(data.train, targets, fc.tagger_train,
                                           tagger_config_for(data.train, fc.tagger));
  write_file(ctx.path("tagger.json"), tagger_to_json(tagger));
  std::vector<std::vector<RationaleMask>> all;
  for (SplitName name : kAllSplits) {
    auto masks = tag_and_decode(tagger, split_of(data, name), fc.budget);
    write_file(ctx.path(split_file("tagged", name)), masks_to_jsonl(masks, "tagger"));
    all.push_back(std::move(masks));
  }
  write_file(ctx.path("tagger_summary.csv"), mask_summary_csv(data, all));
}

void cmd_run_fresh(Context ctx, std::optional<double> ratio, std::optional<double> fraction) {
  ctx.cfg.method = Method::kFresh;
  ctx.cfg.replay_prefix += " --method fresh";
  const double p = ratio.value_or(ctx.cfg.ratios.front());
  const double f = fraction.value_or(ctx.cfg.fractions.front());
  const Splits data = load_data(ctx.cfg.data);
  const FreshConfig fc = fresh_cell(ctx.cfg, ctx.seed(), p, f);
  fc.validate();

  ReportRow row = row_stub(ctx.cfg, ctx.seed(), p, f);
  const auto start = std::chrono::steady_clock::now();
  const FreshResult result = run_fresh(data, fc);
  const AuditRecord audit = verify_faithfulness(result, data);
  row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_file(ctx.path("audit.json"), audit_json(audit));
  require_faithful(audit);

  row.dev_macro_f1 = result.classifier.dev.macro_f1;
  row.test_macro_f1 = result.classifier.test.macro_f1;
  row.test_accuracy = result.classifier.test.accuracy;
  row.mean_rationale_ratio = result.test_rationale_ratio;
  row.gold_recall = result.test_agreement.recall;
  ExperimentReport report;
  report.rows.push_back(row);
  report.aggregates = aggregate(report.rows);
  write_report(ctx, report, "report");

  const std::vector<RationaleMask>* masks[] = {&result.masks.train, &result.masks.dev,
                                               &result.masks.test};
  const std::string source(extractor_mode_name(fc.extractor));
  std::vector<std::vector<RationaleMask>> all;
  for (std::size_t i = 0; i < 3; ++i) {
    write_file(ctx.path(split_file("masks", kAllSplits[i])), masks_to_jsonl(*masks[i], source));
    all.push_back(*masks[i]);
  }
  write_file(ctx.path("mask_summary.csv"), mask_summary_csv(data, all));
  write_file(ctx.path("support.json"), model_to_json(result.support));
  write_file(ctx.path("classifier.json"), model_to_json(result.classifier.params));
  if (result.tagger) write_file(ctx.path("tagger.json"), tagger_to_json(*result.tagger));
  std::string csv = "stage,split,macro_f1,accuracy\n";
  csv += "support,test," + format_number(result.support_test.macro_f1) + "," +
         format_number(result.support_test.accuracy) + "\n";
  csv += "classifier,dev," + format_number(result.classifier.dev.macro_f1) + "," +
         format_number(result.classifier.dev.accuracy) + "\n";
  csv += "classifier,test," + format_number(result.classifier.test.macro_f1) + "," +
         format_number(result.classifier.test.accuracy) + "\n";
  write_file(ctx.path("stage_metrics.csv"), csv);
}

void cmd_run_e2e(Context ctx, std::optional<double> ratio, std::optional<double> fraction,
                 std::optional<double> lambda1, std::optional<double> lambda2) {
  ctx.cfg.method = Method::kE2E;
  ctx.cfg.replay_prefix += " --method e2e_baseline";
  if (lambda1) ctx.cfg.e2e.regularizer.lambda1 = *lambda1;
  if (lambda2) ctx.cfg.e2e.regularizer.lambda2 = *lambda2;
  const double p = ratio.value_or(ctx.cfg.ratios.front());
  const double f = fraction.value_or(ctx.cfg.fractions.front());
  const Splits data = load_data(ctx.cfg.data);
  const E2EConfig ec = e2e_cell(ctx.cfg, ctx.seed(), p);
  ec.validate();

  ReportRow row = row_stub(ctx.cfg, ctx.seed(), p, f);
  const auto start = std::chrono::steady_clock::now();
  const E2EResult result = train_e2e(data, ec, f, ctx.seed());
  row.dev_macro_f1 = evaluate_e2e(result, data.dev, p).macro_f1;
  const Metrics test = evaluate_e2e(result, data.test, p);
  row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  row.test_macro_f1 = test.macro_f1;
  row.test_accuracy = test.accuracy;

  std::vector<std::vector<RationaleMask>> all;
  for (SplitName name : kAllSplits) {
    auto masks = e2e_rationales(result.generator, split_of(data, name), p);
    write_file(ctx.path(split_file("masks", name)), masks_to_jsonl(masks, "generator"));
    all.push_back(std::move(masks));
  }
  const DatasetSplit& t = data.test;
  double ratio_sum = 0.0;
  for (std::size_t d = 0; d < t.size(); ++d) {
    ratio_sum += static_cast<double>(all[2][d].size()) / t.documents[d].length();
  }
  row.mean_rationale_ratio = t.size() ? ratio_sum / t.size() : 0.0;
  row.gold_recall = mean_agreement(all[2], t).recall;
  ExperimentReport report;
  report.rows.push_back(row);
  report.aggregates = aggregate(report.rows);
  write_report(ctx, report, "report");
  write_file(ctx.path("mask_summary.csv"), mask_summary_csv(data, all));
  write_file(ctx.path("e2e.json"), e2e_to_json(result.generator, result.encoder));

  std::string csv = "epoch,dev_macro_f1,train_mean_ratio,train_mean_loss\n";
  for (std::size_t i = 0; i < result.history.size(); ++i) {
    const E2EEpoch& e = result.history[i];
    csv += std::to_string(i + 1) + "," + format_number(e.dev_macro_f1) + "," +
           format_number(e.train_mean_ratio) + "," + format_number(e.train_mean_loss) + "\n";
  }
  write_file(ctx.path("e2e_history.csv"), csv);
}

void cmd_sweep(Context ctx, const std::string& method, const std::vector<std::uint64_t>& seeds,
               const std::vector<double>& ratios, const std::vector<double>& fractions,
               bool hparam, bool resume) {
  if (!method.empty()) {
    ctx.cfg.method = parse_method(method);
    ctx.cfg.replay_prefix += " --method " + method;
  }
  if (!seeds.empty()) ctx.cfg.seeds = seeds;
  if (!ratios.empty()) ctx.cfg.ratios = ratios;
  if (!fractions.empty()) ctx.cfg.fractions = fractions;
  ctx.cfg.validate();
  const Splits data = load_data(ctx.cfg.data);

  if (hparam) {
    const E2EConfig base = e2e_cell(ctx.cfg, ctx.seed(), ctx.cfg.ratios.front());
    const SweepResult sweep =
        hyperparameter_sweep(data, base, ctx.cfg.grid, ctx.cfg.sweep_trials, ctx.cfg.sweep_seed);
    write_file(ctx.path("sweep.csv"), sweep_csv(sweep));
    write_file(ctx.path("sweep_summary.csv"), sweep_summary_csv(sweep));
    write_report(ctx, sweep.report, "sweep_report");
    return;
  }

  std::optional<ExperimentReport> existing;
  const std::string csv_path = ctx.path("report.csv");
  const std::string json_path = ctx.path("report.json");
  if (resume) {
    if (ctx.format == ReportFormat::kCsv && fs::exists(csv_path)) {
      existing.emplace();
      existing->rows = parse_report_csv(read_file(csv_path));
    } else if (ctx.format == ReportFormat::kJson && fs::exists(json_path)) {
      existing = parse_report_json(read_file(json_path));
    }
  }
  const ExperimentReport report =
      run_experiment(ctx.cfg, data, existing ? &*existing : nullptr);
  write_report(ctx, report, "report");
}

void cmd_report(const Context& ctx, const std::string& input) {
  const std::string text = read_file(input);
  ExperimentReport report;
  if (input.size() >= 5 && input.substr(input.size() - 5) == ".json") {
    report = parse_report_json(text);
  } else {
    report.rows = parse_report_csv(text);
  }
  report.aggregates = aggregate(report.rows);
  if (ctx.format == ReportFormat::kCsv) {
    write_file(ctx.path("aggregate.csv"), aggregates_csv(report.aggregates));
  } else {
    write_file(ctx.path("aggregate.json"), report_json(report, ctx.timing));
  }
}

void print_error(std::string_view kind, std::string_view message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Faithful rationale extraction: pipeline stages and experiment harness"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config_path, "Versioned key-value config file");
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed (overrides experiment.seeds)");
  app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();
  app.add_option("--format", g.format, "Report format: csv or json")
      ->check(CLI::IsMember({"csv", "json"}))
      ->capture_default_str();
  app.add_option("--data", g.data_dir, "Directory with train/dev/test.jsonl (default: synthetic)");
  app.add_flag("--timing", g.timing, "Include wall time in reports");

  std::string input_dir;
  auto* ingest = app.add_subcommand("ingest", "Load JSONL splits, write normalized splits and stats");
  ingest->add_option("--input", input_dir, "Directory with train/dev/test.jsonl");

  app.add_subcommand("synth", "Generate the synthetic planted-rationale corpus");
  app.add_subcommand("train-support", "Train the full-text support model");

  std::string checkpoint, scorer;
  auto* score = app.add_subcommand("score", "Score every document with a support checkpoint");
  score->add_option("--checkpoint", checkpoint, "Support checkpoint (default: out-dir/support.json)");
  score->add_option("--scorer", scorer, "attention or gradient");

  std::string scores_dir;
  auto* extract = app.add_subcommand("extract", "Discretize scores into rationale masks");
  extract->add_option("--scores-dir", scores_dir, "Directory with scores_<split>.jsonl");

  std::string masks_dir;
  std::optional<double> fraction, ratio, lambda1, lambda2;
  auto* train_ext = app.add_subcommand("train-extractor", "Train the token tagger on pseudo-targets");
  train_ext->add_option("--masks-dir", masks_dir, "Directory with masks_train.jsonl");
  train_ext->add_option("--fraction", fraction, "Human-supervision fraction");

  auto* run_fresh_cmd = app.add_subcommand("run-fresh", "Run the full pipeline for one seed");
  run_fresh_cmd->add_option("--ratio", ratio, "Rationale length ratio");
  run_fresh_cmd->add_option("--fraction", fraction, "Human-supervision fraction");

  auto* run_e2e_cmd = app.add_subcommand("run-e2e", "Train the end-to-end baseline for one seed");
  run_e2e_cmd->add_option("--ratio", ratio, "Rationale length ratio");
  run_e2e_cmd->add_option("--fraction", fraction, "Human-supervision fraction");
  run_e2e_cmd->add_option("--lambda1", lambda1, "Conciseness weight");
  run_e2e_cmd->add_option("--lambda2", lambda2, "Contiguity weight");

  std::string method;
  std::vector<std::uint64_t> seeds;
  std::vector<double> ratios, fractions;
  bool hparam = false, resume = false;
  auto* sweep = app.add_subcommand("sweep", "Run seeds x ratios x fractions");
  sweep->add_option("--method", method, "full_text, fresh or e2e_baseline");
  sweep->add_option("--seeds", seeds, "Seeds")->delimiter(',');
  sweep->add_option("--ratios", ratios, "Rationale length ratios")->delimiter(',');
  sweep->add_option("--fractions", fractions, "Supervision fractions")->delimiter(',');
  sweep->add_flag("--hparam", hparam, "Random search over the baseline's regularizer weights");
  sweep->add_flag("--resume", resume, "Keep finished cells of an existing report");

  std::string report_input;
  auto* report = app.add_subcommand("report", "Aggregate an existing report");
  report->add_option("--input", report_input, "report.csv or report.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (*seed_opt) g.seed = seed_value;
    const Context ctx = make_context(g);
    if (ingest->parsed()) {
      cmd_ingest(ctx, input_dir);
    } else if (app.got_subcommand("synth")) {
      cmd_synth(ctx, g.seed.has_value());
    } else if (app.got_subcommand("train-support")) {
      cmd_train_support(ctx);
    } else if (score->parsed()) {
      cmd_score(ctx, checkpoint, scorer);
    } else if (extract->parsed()) {
      cmd_extract(ctx, scores_dir);
    } else if (train_ext->parsed()) {
      cmd_train_extractor(ctx, masks_dir, fraction);
    } else if (run_fresh_cmd->parsed()) {
      cmd_run_fresh(ctx, ratio, fraction);
    } else if (run_e2e_cmd->parsed()) {
      cmd_run_e2e(ctx, ratio, fraction, lambda1, lambda2);
    } else if (sweep->parsed()) {
      cmd_sweep(ctx, method, seeds, ratios, fractions, hparam, resume);
    } else if (report->parsed()) {
      cmd_report(ctx, report_input);
    }
  } catch (const Error& e) {
    print_error(error_kind_name(e.kind()), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
