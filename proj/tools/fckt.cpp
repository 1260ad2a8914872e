// fckt: command-line front end for data preparation, training, evaluation,
// prediction, sweeps, ablations and cross-validation.
//
// Exit codes: 0 success, 1 validation error (bad flags, config or data),
// 2 runtime failure.

#include "fckt/config.hpp"
#include "fckt/corpus.hpp"
#include "fckt/cross_validation.hpp"
#include "fckt/metrics.hpp"
#include "fckt/model.hpp"
#include "fckt/serialization.hpp"
#include "fckt/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace {

using fckt::ConfigError;
using fckt::RunConfig;
using json = nlohmann::json;
namespace fs = std::filesystem;

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --config FILE plus one --<dotted.key> flag per config key.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "JSON run configuration")->check(CLI::ExistingFile);
    for (const auto& key : fckt::config_keys()) {
      options.emplace_back(key.name, app->add_option("--" + key.name, values[key.name], key.help)->group("Config keys"));
    }
  }

  // File, then FCKT_SEED, then explicit flags.
  RunConfig build() const {
    RunConfig c = file.empty() ? RunConfig{} : RunConfig::load(file);
    if (const char* seed = std::getenv("FCKT_SEED"); seed != nullptr && *seed != '\0') {
      c.set_from_string("trainer.seed", seed);
    }
    for (const auto& [name, opt] : options) {
      if (opt->count() > 0) c.set_from_string(name, values.at(name));
    }
    c.validate();
    return c;
  }
};

fckt::corpus::DatasetFormat format_for(const std::string& path, const std::string& tag) {
  if (!tag.empty()) return fckt::corpus::parse_format(tag);
  return fs::path(path).extension() == ".xml" ? fckt::corpus::DatasetFormat::semeval_xml
                                              : fckt::corpus::DatasetFormat::jsonl;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fckt::write_text_atomic(path, text);
}

void write_report(const fs::path& prefix, const std::string& name, const fckt::metrics::EvalReport& report) {
  json j = report.to_json();
  j["dataset"] = name;
  write_file(fs::path(prefix.string() + ".json"), j.dump(2) + "\n");
  const std::pair<std::string, fckt::metrics::EvalReport> rows[] = {{name, report}};
  write_file(fs::path(prefix.string() + ".txt"), fckt::metrics::format_table(rows));
}

// ---------------------------------------------------------------------------

struct PrepareArgs {
  std::string input, format, output, manifest;
};

int cmd_prepare(const PrepareArgs& a) {
  using namespace fckt::corpus;
  const auto format = format_for(a.input, a.format);
  std::vector<AnnotatedSentence> sentences;
  ImportStats stats;
  if (format == DatasetFormat::semeval_xml) {
    sentences = import_semeval_xml(a.input, &stats);
  } else {
    sentences = load_dataset(a.input, format);
  }
  const auto split = split_sentences(sentences);
  save_jsonl(a.output, sentences);

  json manifest = {{"source", a.input},
                   {"sentences", sentences.size()},
                   {"aspects", count_aspects(sentences)},
                   {"examples", split.examples.size()},
                   {"zero_aspect_sentences", split.zero_aspect_sentences}};
  json origins = json::array();
  for (const auto& ex : split.examples) {
    origins.push_back({{"source_id", ex.origin.source_id},
                       {"aspect_index", ex.origin.aspect_index},
                       {"start", ex.start_index()},
                       {"end", ex.end_index()},
                       {"polarity", std::string(to_string(ex.polarity))}});
  }
  manifest["split"] = std::move(origins);
  if (format == DatasetFormat::semeval_xml) {
    manifest["import"] = {{"skipped_conflict", stats.skipped_conflict},
                          {"skipped_null_target", stats.skipped_null_target},
                          {"merged_duplicates", stats.merged_duplicates},
                          {"dropped_overlapping", stats.dropped_overlapping}};
  }
  const std::string manifest_path = a.manifest.empty() ? a.output + ".manifest.json" : a.manifest;
  write_file(manifest_path, manifest.dump(2) + "\n");

  std::cout << "sentences " << sentences.size() << "\naspects " << count_aspects(sentences) << "\nexamples "
            << split.examples.size() << "\nzero_aspect_sentences " << split.zero_aspect_sentences << "\n";
  if (format == DatasetFormat::semeval_xml) {
    std::cout << "skipped_conflict " << stats.skipped_conflict << "\nskipped_null_target " << stats.skipped_null_target
              << "\nmerged_duplicates " << stats.merged_duplicates << "\ndropped_overlapping "
              << stats.dropped_overlapping << "\n";
  }
  return 0;
}

struct SynthArgs {
  std::string output;
  std::size_t sentences = 1500;
  std::uint64_t seed = 7;
};

int cmd_synth(const SynthArgs& a) {
  fckt::corpus::SyntheticOptions o;
  o.sentences = a.sentences;
  o.seed = a.seed;
  const auto sentences = fckt::corpus::generate_synthetic(o);
  fckt::corpus::save_jsonl(a.output, sentences);
  std::cout << "sentences " << sentences.size() << "\naspects " << fckt::corpus::count_aspects(sentences) << "\n";
  return 0;
}

// Trains one configuration and scores it on data.test when given.
struct RunOutcome {
  fckt::trainer::TrainResult result;
  fckt::metrics::EvalReport test;
  bool has_test = false;
};

RunOutcome run_one(const RunConfig& config, bool persist) {
  RunOutcome out;
  const auto data = fckt::trainer::load_training_data(config);
  fckt::trainer::TrainOptions options;
  options.persist = persist;
  out.result = fckt::trainer::train(data, config, options);
  if (!config.data.test.empty()) {
    const auto test = fckt::corpus::load_dataset(config.data.test, format_for(config.data.test, config.data.format));
    out.test = fckt::evaluate(*out.result.best.model, test, config);
    out.has_test = true;
  }
  return out;
}

double valid_f1(const fckt::trainer::TrainResult& r) { return r.best.state.best_valid_f1; }

// Test report when data.test is set, otherwise the best model on the
// validation split.
fckt::metrics::EvalReport headline(const RunOutcome& outcome, const RunConfig& config) {
  if (outcome.has_test) return outcome.test;
  return fckt::evaluate(*outcome.result.best.model, fckt::trainer::load_training_data(config).valid, config);
}

int cmd_train(const ConfigFlags& flags) {
  const RunConfig config = flags.build();
  const auto outcome = run_one(config, true);
  const auto& r = outcome.result;
  std::cout << "run_dir " << r.run_dir.string() << "\nbest_epoch " << r.best.state.best_epoch << "\nbest_valid_tsa_f1 "
            << valid_f1(r) << "\n";
  if (outcome.has_test) {
    write_report(r.run_dir / "test_report", config.data.test, outcome.test);
    std::cout << "test_tsa_f1 " << outcome.test.f1 << "\n";
  }
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, format, predictions, output = "report";
  std::map<std::string, std::string> overrides;
  std::vector<std::pair<std::string, CLI::Option*>> options;
};

int cmd_eval(const EvalArgs& a) {
  using namespace fckt;
  const auto gold = corpus::load_dataset(a.data, format_for(a.data, a.format));
  metrics::EvalReport report;
  if (!a.predictions.empty()) {
    const auto pred = corpus::load_dataset(a.predictions, corpus::DatasetFormat::jsonl);
    if (pred.size() != gold.size()) {
      throw ValidationError("predictions hold " + std::to_string(pred.size()) + " sentences, gold holds " +
                            std::to_string(gold.size()));
    }
    std::vector<metrics::SentenceSpans> g, p;
    std::vector<std::pair<corpus::Polarity, corpus::Polarity>> sp;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (pred[i].tokens != gold[i].tokens) {
        throw ValidationError("prediction " + std::to_string(i + 1) + " has different tokens than the gold sentence");
      }
      g.push_back(metrics::gold_spans(gold[i]));
      p.push_back(metrics::gold_spans(pred[i]));
      for (const auto& ga : gold[i].aspects) {
        for (const auto& pa : pred[i].aspects) {
          if (pa.start == ga.start && pa.end == ga.end) {
            sp.emplace_back(ga.polarity, pa.polarity);
            break;
          }
        }
      }
    }
    report = metrics::tsa_scores(g, p);
    report.sp_accuracy = metrics::sp_accuracy(sp, &report.warnings);
    report.sp_total = sp.size();
    for (const auto& [x, y] : sp) report.sp_correct += x == y ? 1 : 0;
  } else {
    if (a.checkpoint.empty()) throw ValidationError("eval needs --checkpoint or --predictions");
    auto ckpt = trainer::load_checkpoint(a.checkpoint);
    RunConfig config = ckpt.config;
    for (const auto& [name, opt] : a.options) {
      if (opt->count() == 0) continue;
      const bool adjustable = name.rfind("decode.", 0) == 0 || name.rfind("metrics.", 0) == 0;
      RunConfig probe = config;
      probe.set_from_string(name, a.overrides.at(name));
      if (!adjustable && probe.to_json() != config.to_json()) {
        throw ValidationError("checkpoint/config mismatch: " + name + " is fixed by the checkpoint");
      }
      config = probe;
    }
    config.validate();
    report = evaluate(*ckpt.model, gold, config);
  }
  write_report(a.output, a.data, report);
  const std::pair<std::string, metrics::EvalReport> rows[] = {{fs::path(a.data).filename().string(), report}};
  std::cout << metrics::format_table(rows);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  return 0;
}

struct PredictArgs {
  std::string checkpoint, input, output;
};

int cmd_predict(const PredictArgs& a) {
  using namespace fckt;
  auto ckpt = trainer::load_checkpoint(a.checkpoint);
  std::ifstream in(a.input);
  if (!in) throw ValidationError("cannot read " + a.input);
  std::ofstream file;
  if (!a.output.empty()) {
    file.open(a.output);
    if (!file) throw std::runtime_error("cannot write " + a.output);
  }
  std::ostream& out = a.output.empty() ? std::cout : file;
  const auto options = ckpt.config.decode_options();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<std::string> tokens;
    json record;
    if (line.front() == '{') {
      try {
        record = json::parse(line);
        tokens = record.at("tokens").get<std::vector<std::string>>();
      } catch (const json::exception& e) {
        throw corpus::DataError(a.input + ":" + std::to_string(line_no) + ": " + e.what(), line_no);
      }
    } else {
      std::istringstream words(line);
      for (std::string w; words >> w;) tokens.push_back(w);
      record = {{"tokens", tokens}};
    }
    json aspects = json::array();
    for (const auto& p : ckpt.model->predict(tokens, options).aspects) {
      aspects.push_back({{"start", p.span.start},
                         {"end", p.span.end},
                         {"polarity", std::string(corpus::to_string(p.sentiment.label()))},
                         {"score", p.span.score},
                         {"probs", p.sentiment.probs}});
    }
    record["aspects"] = std::move(aspects);
    out << record.dump() << "\n";
  }
  return 0;
}

// Sweep grid keys and their config names.
const std::map<std::string, std::string>& sweep_keys() {
  static const std::map<std::string, std::string> keys = {
      {"xi", "transfer.xi"},         {"transfer.xi", "transfer.xi"}, {"h", "transfer.h"},
      {"transfer.h", "transfer.h"},  {"decode.h", "transfer.h"},     {"lambda", "trainer.lambda"},
      {"trainer.lambda", "trainer.lambda"}, {"tau", "contrast.tau"}, {"contrast.tau", "contrast.tau"}};
  return keys;
}

struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

std::vector<GridAxis> parse_grid(const std::vector<std::string>& entries) {
  std::vector<GridAxis> axes;
  for (const auto& entry : entries) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos) throw ValidationError("grid entry '" + entry + "' must look like key=v1,v2");
    const std::string name = entry.substr(0, eq);
    const auto it = sweep_keys().find(name);
    if (it == sweep_keys().end()) throw ValidationError("grid key '" + name + "' is not one of xi, h, lambda, tau");
    GridAxis axis{it->second, {}};
    std::stringstream ss(entry.substr(eq + 1));
    for (std::string v; std::getline(ss, v, ',');) {
      if (!v.empty()) axis.values.push_back(v);
    }
    if (axis.values.empty()) throw ValidationError("grid key '" + name + "' has no values");
    for (const auto& other : axes) {
      if (other.key == axis.key) throw ValidationError("grid key '" + name + "' given twice");
    }
    axes.push_back(std::move(axis));
  }
  if (axes.empty()) throw ValidationError("sweep grid is empty");
  return axes;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

struct SweepArgs {
  std::vector<std::string> grid;
  std::string output;
};

int cmd_sweep(const ConfigFlags& flags, const SweepArgs& a) {
  const RunConfig base = flags.build();
  const auto axes = parse_grid(a.grid);
  std::size_t cells = 1;
  for (const auto& axis : axes) cells *= axis.values.size();

  // Validate every cell before any training starts.
  std::vector<RunConfig> configs;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    RunConfig c = base;
    std::size_t rest = cell;
    for (auto it = axes.rbegin(); it != axes.rend(); ++it) {
      c.set_from_string(it->key, it->values[rest % it->values.size()]);
      rest /= it->values.size();
    }
    c.output_dir = (fs::path(base.output_dir) / base.run_id).string();
    c.run_id = "sweep_" + std::to_string(cell);
    c.validate();
    configs.push_back(std::move(c));
  }

  const fs::path prefix = a.output.empty() ? fs::path(base.output_dir) / base.run_id / "sweep" : fs::path(a.output);
  std::ostringstream csv;
  csv << "cell";
  for (const auto& axis : axes) csv << "," << axis.key;
  csv << ",status,tsa_f1,ae_f1,sp_accuracy,split,best_epoch,error\n";
  json rows = json::array();
  std::size_t failed = 0;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const RunConfig& c = configs[cell];
    json row = {{"cell", cell}};
    for (const auto& axis : axes) row[axis.key] = c.to_json().at(axis.key);
    try {
      const auto outcome = run_one(c, true);
      const auto report = headline(outcome, c);
      row["status"] = "ok";
      row["split"] = outcome.has_test ? "test" : "valid";
      row["tsa_f1"] = report.f1;
      row["ae_f1"] = report.ae_f1;
      row["sp_accuracy"] = report.sp_accuracy;
      row["best_epoch"] = outcome.result.best.state.best_epoch;
    } catch (const std::exception& e) {
      ++failed;
      row["status"] = "failed";
      row["error"] = e.what();
    }
    csv << cell;
    for (const auto& axis : axes) csv << "," << row[axis.key].dump();
    auto num = [&](const char* k) { return row.contains(k) ? row[k].dump() : std::string(); };
    csv << "," << row["status"].get<std::string>() << "," << num("tsa_f1") << "," << num("ae_f1") << ","
        << num("sp_accuracy") << "," << (row.contains("split") ? row["split"].get<std::string>() : "") << ","
        << num("best_epoch") << "," << csv_field(row.value("error", "")) << "\n";
    std::cerr << "cell " << cell << "/" << cells << ": " << row.dump() << "\n";
    rows.push_back(std::move(row));
  }
  write_file(fs::path(prefix.string() + ".csv"), csv.str());
  json grid = json::object();
  for (const auto& axis : axes) grid[axis.key] = axis.values;
  write_file(fs::path(prefix.string() + ".json"),
             json({{"base", base.to_json()}, {"grid", grid}, {"cells", rows}}).dump(2) + "\n");
  std::cout << csv.str();
  return failed == cells ? 2 : 0;
}

struct AblateArgs {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string output;
};

// full, TCL off, AKT off, both off; mean TSA-F1 over seeds.
int cmd_ablate(const ConfigFlags& flags, const AblateArgs& a) {
  const RunConfig base = flags.build();
  struct Variant {
    const char* name;
    bool contrast, transfer;
  };
  const Variant variants[] = {{"full", true, true}, {"tcl_off", false, true}, {"akt_off", true, false},
                              {"tcl_akt_off", false, false}};
  json out = json::array();
  std::vector<std::pair<std::string, fckt::metrics::EvalReport>> table;
  for (const auto& v : variants) {
    std::vector<fckt::metrics::EvalReport> reports;
    for (auto seed : a.seeds) {
      RunConfig c = base;
      c.contrast.enabled = v.contrast;
      c.transfer.enabled = v.transfer;
      c.trainer.seed = seed;
      c.output_dir = (fs::path(base.output_dir) / base.run_id).string();
      c.run_id = std::string(v.name) + "_seed" + std::to_string(seed);
      reports.push_back(headline(run_one(c, true), c));
      std::cerr << v.name << " seed " << seed << ": tsa_f1=" << reports.back().f1 << "\n";
    }
    const auto agg = fckt::metrics::aggregate(reports);
    out.push_back({{"variant", v.name}, {"seeds", a.seeds}, {"report", agg.to_json()}});
    table.emplace_back(v.name, agg.mean);
  }
  const fs::path prefix = a.output.empty() ? fs::path(base.output_dir) / base.run_id / "ablation" : fs::path(a.output);
  write_file(fs::path(prefix.string() + ".json"), out.dump(2) + "\n");
  write_file(fs::path(prefix.string() + ".txt"), fckt::metrics::format_table(table));
  std::cout << fckt::metrics::format_table(table);
  return 0;
}

struct CvArgs {
  std::size_t folds = 10;
  std::string output;
};

int cmd_cv(const ConfigFlags& flags, const CvArgs& a) {
  const RunConfig config = flags.build();
  if (config.data.train.empty()) throw ConfigError("data.train is required");
  const auto sentences =
      fckt::corpus::load_dataset(config.data.train, format_for(config.data.train, config.data.format));
  const fs::path dir = fs::path(config.output_dir) / config.run_id;
  fs::create_directories(dir);
  fckt::metrics::CrossValidationOptions o;
  o.folds = a.folds;
  o.seed = config.trainer.seed;
  o.folds_file = dir / "folds.json";
  o.persist_runs = true;
  o.log = &std::cerr;
  const auto result = fckt::metrics::cross_validate(sentences, config, o);
  const fs::path prefix = a.output.empty() ? dir / "cv" : fs::path(a.output);
  write_file(fs::path(prefix.string() + ".json"), result.report.to_json().dump(2) + "\n");
  const std::pair<std::string, fckt::metrics::EvalReport> rows[] = {{"mean", result.report.mean},
                                                                     {"stddev", result.report.stddev}};
  write_file(fs::path(prefix.string() + ".txt"), fckt::metrics::format_table(rows));
  std::cout << fckt::metrics::format_table(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Targeted sentiment analysis: joint aspect extraction and sentiment prediction"};
  app.require_subcommand(1);

  PrepareArgs prepare;
  auto* p = app.add_subcommand("prepare", "Ingest a dataset, write native JSONL and a split manifest");
  p->add_option("--input", prepare.input, "JSONL or SemEval XML file")->required()->check(CLI::ExistingFile);
  p->add_option("--format", prepare.format, "jsonl or semeval-xml (default: by extension)");
  p->add_option("--output", prepare.output, "JSONL output path")->required();
  p->add_option("--manifest", prepare.manifest, "split manifest path (default: OUTPUT.manifest.json)");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate the synthetic cue-token corpus");
  s->add_option("--output", synth.output, "JSONL output path")->required();
  s->add_option("--sentences", synth.sentences, "number of sentences")->capture_default_str();
  s->add_option("--seed", synth.seed, "generator seed")->capture_default_str();

  ConfigFlags train_flags;
  auto* t = app.add_subcommand("train", "Train a model and persist checkpoints and metrics");
  train_flags.attach(t);

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score a checkpoint or a predictions file against gold data");
  e->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->check(CLI::ExistingFile);
  e->add_option("--data", eval.data, "gold dataset")->required()->check(CLI::ExistingFile);
  e->add_option("--format", eval.format, "jsonl or semeval-xml (default: by extension)");
  e->add_option("--predictions", eval.predictions, "JSONL predictions to score instead of a checkpoint")
      ->check(CLI::ExistingFile);
  e->add_option("--output", eval.output, "report prefix; writes PREFIX.json and PREFIX.txt")->capture_default_str();
  for (const auto& key : fckt::config_keys()) {
    eval.options.emplace_back(key.name,
                              e->add_option("--" + key.name, eval.overrides[key.name], key.help)->group("Config keys"));
  }

  PredictArgs predict;
  auto* pr = app.add_subcommand("predict", "Extract aspects and sentiments from new sentences");
  pr->add_option("--checkpoint", predict.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  pr->add_option("--input", predict.input, "JSONL with tokens, or one whitespace-tokenized sentence per line")
      ->required()
      ->check(CLI::ExistingFile);
  pr->add_option("--output", predict.output, "JSONL output (default: stdout)");

  ConfigFlags sweep_flags;
  SweepArgs sweep;
  auto* sw = app.add_subcommand("sweep", "Train one run per grid point and tabulate F1");
  sweep_flags.attach(sw);
  sw->add_option("--grid", sweep.grid, "KEY=V1,V2,... with KEY in xi, h, lambda, tau (repeatable)");
  sw->add_option("--output", sweep.output, "report prefix; writes PREFIX.csv and PREFIX.json");

  ConfigFlags ablate_flags;
  AblateArgs ablate;
  auto* ab = app.add_subcommand("ablate", "Compare full, TCL-off, AKT-off and both-off over seeds");
  ablate_flags.attach(ab);
  ab->add_option("--seeds", ablate.seeds, "training seeds")->capture_default_str();
  ab->add_option("--output", ablate.output, "report prefix");

  ConfigFlags cv_flags;
  CvArgs cv;
  auto* c = app.add_subcommand("cv", "k-fold cross-validation over data.train");
  cv_flags.attach(c);
  c->add_option("--folds", cv.folds, "number of folds")->capture_default_str();
  c->add_option("--output", cv.output, "report prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (p->parsed()) return cmd_prepare(prepare);
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train(train_flags);
    if (e->parsed()) return cmd_eval(eval);
    if (pr->parsed()) return cmd_predict(predict);
    if (sw->parsed()) return cmd_sweep(sweep_flags, sweep);
    if (ab->parsed()) return cmd_ablate(ablate_flags, ablate);
    if (c->parsed()) return cmd_cv(cv_flags, cv);
  } catch (const fckt::corpus::DataError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const ValidationError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 1;
}
