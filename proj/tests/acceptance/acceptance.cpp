// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset; the exit status is nonzero if any selected
// criterion fails.

#include "fckt/boundary.hpp"
#include "fckt/contrast.hpp"
#include "fckt/metrics.hpp"
#include "fckt/trainer.hpp"
#include "fckt/transfer.hpp"

#include "support/oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>

using namespace fckt;
using fckt::testing::Gen;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// --- 1 ------------------------------------------------------------------------

Outcome expectation_oracle() {
  Gen gen(101);
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = gen.integer(1, 32), d = gen.integer(1, 16), h = gen.integer(1, 4);
    const Matrix words = gen.matrix(n, d);
    const boundary::BoundaryDistributions pred{gen.distribution(n, gen.real(0, 2)), gen.distribution(n, gen.real(0, 2))};
    const RowVector fast = transfer::expected_span_representation(words, pred, h);
    const RowVector slow = fckt::testing::naive_expected_span(words, pred.start_probs, pred.end_probs, h);
    worst = std::max(worst, (fast - slow).cwiseAbs().maxCoeff());
  }
  const double elapsed = seconds_since(t0);
  return {worst <= 1e-9 && elapsed < 10.0,
          fmt("max |prefix-sum - enumeration| = %.2e over 1000 instances (limit 1e-9), %.2f s (limit 10 s)", worst,
              elapsed)};
}

// --- 2 ------------------------------------------------------------------------

Outcome collapse_identity() {
  Gen gen(102);
  std::mt19937_64 init(1);
  transfer::SentimentClassifier clf(16, init);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = gen.integer(1, 24);
    const int s = gen.integer(0, n - 1);
    const int e = std::min(n - 1, s + gen.integer(0, 2));
    const Matrix words = gen.matrix(n, 16);
    const auto gold = static_cast<corpus::Polarity>(gen.integer(0, 2));
    auto loss = [&](double xi) {
      ag::Graph g;
      const std::vector<transfer::SentimentItem> items{{g.constant(words), g.constant(gen.one_hot(n, s)),
                                                        g.constant(gen.one_hot(n, e)), s, e, gold}};
      transfer::TransferOptions o;
      o.xi = xi;
      std::mt19937_64 rng(7);
      const auto out = transfer::mixed_sentiment_loss(g, items, o, rng, clf);
      if (out.paths.front() != (xi == 1.0 ? transfer::Path::real : transfer::Path::expected)) {
        throw std::logic_error("unexpected path");
      }
      return out.loss.scalar();
    };
    worst = std::max(worst, std::abs(loss(1.0) - loss(0.0)));
  }
  return {worst < 1e-9, fmt("max |real-path loss - expected-path loss| = %.2e over 100 one-hot instances (limit 1e-9)", worst)};
}

// --- 3 ------------------------------------------------------------------------

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  Gen gen(103);
  std::vector<std::pair<std::string, fckt::testing::GradReport>> reports;

  {
    std::mt19937_64 init(2);
    boundary::BoundaryPredictor heads(8, init);
    reports.emplace_back("boundary_loss (H, phi)", fckt::testing::check_gradients(
                                                       {gen.matrix(7, 8)},
                                                       [&](ag::Graph&, const std::vector<ag::Var>& v) {
                                                         return boundary::boundary_loss(heads.forward(*v[0].graph(), v[0]), 2, 4);
                                                       },
                                                       heads.parameters()));
  }
  {
    contrast::InfoNceTerms t;
    t.anchor_start = {0, 2, 4};
    t.anchor_end = {1, 3, 5};
    t.start_negatives = {{3, 5}, {1, 5}, {1, 3}};
    t.end_negatives = {{2, 4}, {0, 4}, {0, 2}};
    reports.emplace_back("contrastive_loss (embeddings)",
                         fckt::testing::check_gradients({gen.matrix(6, 8)}, [&](ag::Graph&, const std::vector<ag::Var>& v) {
                           return contrast::contrastive_loss(v[0], t, 0.07, contrast::Denominator::with_positive);
                         }));
  }
  {
    std::mt19937_64 init(3);
    transfer::SentimentClassifier clf(8, init);
    reports.emplace_back(
        "expected-path sentiment loss (H, p_s, p_e, theta)",
        fckt::testing::check_gradients(
            {gen.matrix(9, 8), gen.distribution(9), gen.distribution(9)},
            [&](ag::Graph& g, const std::vector<ag::Var>& v) {
              return ag::nll_from_logits(clf.logits(g, transfer::expected_span(v[0], v[1], v[2], 3)), 1,
                                         boundary::kLogEps);
            },
            clf.parameters()));
  }
  {
    // the whole objective with respect to every model weight, encoder embeddings included
    corpus::SyntheticOptions so;
    so.sentences = 12;
    const auto data = corpus::generate_synthetic(so);
    const auto split = corpus::split_sentences(data);
    RunConfig c;
    c.encoder.dim = 8;
    c.encoder.layers = 1;
    c.encoder.dropout = 0.0;
    c.transfer.xi = 0.5;
    c.trainer.lambda = 0.5;
    auto model = FcktModel::create(c, data);
    const std::span<const corpus::TrainingExample> batch(split.examples.data(), 4);
    reports.emplace_back("joint objective (all model weights)",
                         fckt::testing::check_gradients(
                             {},
                             [&](ag::Graph& g, const std::vector<ag::Var>&) {
                               std::mt19937_64 gate(11);
                               return trainer::split_objective(g, *model, batch, c, gate, encoder::Mode::inference).total;
                             },
                             model->parameters()));
  }

  bool ok = true;
  double worst = 0.0;
  std::string failures;
  for (const auto& [name, r] : reports) {
    ok &= r.ok;
    worst = std::max(worst, r.worst);
    if (!r.ok) failures += "; " + name + ": " + r.detail;
  }
  const double elapsed = seconds_since(t0);
  return {ok && elapsed < 60.0,
          fmt("%zu checks, worst relative error %.2e (limit 1e-4), %.1f s (limit 60 s)", reports.size(), worst, elapsed) +
              failures};
}

// --- 4 ------------------------------------------------------------------------

Outcome split_equivalence() {
  corpus::SyntheticOptions so;
  so.sentences = 200;
  so.seed = 17;
  std::vector<corpus::AnnotatedSentence> sentences;
  for (auto& s : corpus::generate_synthetic(so)) {
    if (s.aspects.size() >= 2 && sentences.size() < 8) sentences.push_back(std::move(s));
  }
  std::size_t aspects = 0;
  for (const auto& s : sentences) aspects += s.aspects.size();
  const auto split = corpus::split_sentences(sentences);
  RunConfig c;
  c.encoder.dropout = 0.0;
  auto model = FcktModel::create(c, sentences);
  std::mt19937_64 rng_a(5), rng_b(5);
  ag::Graph ga, gb;
  const auto a = trainer::split_objective(ga, *model, split.examples, c, rng_a, encoder::Mode::inference).report;
  const auto b = trainer::multi_aspect_objective(gb, *model, sentences, c, rng_b, encoder::Mode::inference).report;
  const double rel = std::abs(a.total - b.total) / std::abs(b.total);
  return {rel <= 1e-6 && split.examples.size() == aspects,
          fmt("%zu sentences / %zu aspects -> %zu split examples; split %.12f vs multi-aspect %.12f, relative diff %.2e "
              "(limit 1e-6)",
              sentences.size(), aspects, split.examples.size(), a.total, b.total, rel)};
}

// --- 5 ------------------------------------------------------------------------

Outcome transfer_channel() {
  corpus::SyntheticOptions so;
  so.sentences = 40;
  const auto data = corpus::generate_synthetic(so);
  const auto split = corpus::split_sentences(data);
  const std::span<const corpus::TrainingExample> batch(split.examples.data(), 16);
  auto sp_grad = [&](double xi, std::size_t* expected_paths) {
    RunConfig c;
    c.encoder.dropout = 0.0;
    c.transfer.xi = xi;
    auto model = FcktModel::create(c, data);
    for (Parameter* p : model->parameters()) p->zero_grad();
    std::mt19937_64 rng(3);
    ag::Graph g;
    auto obj = trainer::split_objective(g, *model, batch, c, rng, encoder::Mode::inference);
    g.backward(obj.sp);
    *expected_paths = static_cast<std::size_t>(
        std::count(obj.report.paths.begin(), obj.report.paths.end(), transfer::Path::expected));
    double s = 0.0;
    for (const Parameter* p : model->boundary().parameters()) s += p->grad.size() ? p->grad.cwiseAbs().sum() : 0.0;
    return s;
  };
  std::size_t paths_mixed = 0, paths_real = 0;
  const double mixed = sp_grad(0.8, &paths_mixed);
  const double real = sp_grad(1.0, &paths_real);
  return {mixed > 0.0 && paths_mixed > 0 && real == 0.0,
          fmt("|dL_sp/dphi|_1 = %.3e at xi=0.8 (%zu of 16 expected paths), %.1e at xi=1", mixed, paths_mixed, real)};
}

// --- 6 ------------------------------------------------------------------------

Outcome complexity_scaling() {
  Gen gen(106);
  struct Case {
    Matrix words;
    boundary::BoundaryDistributions pred;
    std::vector<double> times;
  };
  auto make = [&](int n) { return Case{gen.matrix(n, 64), {gen.distribution(n), gen.distribution(n)}, {}}; };
  Case small = make(256), large = make(512);
  volatile double sink = 0.0;
  auto time_once = [&](Case& c) {
    const auto t0 = Clock::now();
    for (int rep = 0; rep < 50; ++rep) sink = sink + transfer::expected_span_representation(c.words, c.pred, 3)(0);
    return seconds_since(t0);
  };
  time_once(small);  // warm-up
  time_once(large);
  // Interleaved so clock and cache drift affect both sizes alike.
  for (int trial = 0; trial < 20; ++trial) {
    small.times.push_back(time_once(small));
    large.times.push_back(time_once(large));
  }
  auto median = [](std::vector<double> t) {
    std::sort(t.begin(), t.end());
    return 0.5 * (t[9] + t[10]);
  };
  const double t256 = median(small.times), t512 = median(large.times);
  const double ratio = t512 / t256;
  return {ratio <= 2.5, fmt("median of 20 trials n=256 %.3f ms, n=512 %.3f ms, ratio %.2f (limit 2.5)", t256 * 1e3 / 50,
                            t512 * 1e3 / 50, ratio)};
}

// --- 7 ------------------------------------------------------------------------

Outcome decode_correctness() {
  Gen gen(107);
  int mismatches = 0, violations = 0, nonempty = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = gen.integer(1, 10), h = gen.integer(1, 4);
    const boundary::BoundaryDistributions pred{gen.distribution(n, gen.real(0, 3)), gen.distribution(n, gen.real(0, 3))};
    boundary::DecodeOptions o;
    o.h = h;
    const auto top = fckt::testing::exhaustive_top1(pred.start_probs, pred.end_probs, h, o.threshold);
    o.max_spans = 1;
    const auto one = boundary::decode_spans(pred, o);
    if (top.start < 0) {
      mismatches += one.empty() ? 0 : 1;
    } else {
      ++nonempty;
      mismatches += (one.size() == 1 && one[0].start == top.start && one[0].end == top.end) ? 0 : 1;
    }
    o.max_spans = 5;
    const auto many = boundary::decode_spans(pred, o);
    for (std::size_t i = 0; i < many.size(); ++i) {
      if (many[i].end - many[i].start + 1 > h || many[i].start > many[i].end) ++violations;
      if (i > 0 && many[i - 1].end >= many[i].start) ++violations;
    }
  }
  return {mismatches == 0 && violations == 0,
          fmt("%d top-1 mismatches against exhaustive search (%d non-empty cases), %d overlap/length violations over "
              "1000 pairs",
              mismatches, nonempty, violations)};
}

// --- 8 ------------------------------------------------------------------------

Outcome metric_oracle() {
  using metrics::LabeledSpan;
  using metrics::SentenceSpans;
  Gen gen(108);
  int mismatches = 0;
  auto random_spans = [&] {
    SentenceSpans s;
    const int n = gen.integer(0, 5);
    for (int i = 0; i < n; ++i) {
      const int start = gen.integer(0, 3);
      s.push_back({start, start + gen.integer(0, 1), static_cast<corpus::Polarity>(gen.integer(0, 2))});
    }
    return s;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<SentenceSpans> gold, pred;
    std::size_t g = 0, p = 0, correct = 0;
    for (int s = gen.integer(1, 3); s > 0; --s) {
      gold.push_back(random_spans());
      pred.push_back(random_spans());
      g += gold.back().size();
      p += pred.back().size();
      correct += fckt::testing::brute_force_matches(gold.back(), pred.back());
    }
    const auto r = metrics::tsa_scores(gold, pred);
    const auto o = fckt::testing::oracle_prf(g, p, correct);
    if (r.counts.gold != g || r.counts.pred != p || r.counts.correct != correct || r.precision != o.precision ||
        r.recall != o.recall || std::abs(r.f1 - o.f1) > 1e-15) {
      ++mismatches;
    }
  }
  const auto POS = corpus::Polarity::positive, NEG = corpus::Polarity::negative;
  const std::vector<SentenceSpans> gold{{LabeledSpan{1, 2, POS}}};
  const std::vector<SentenceSpans> pred{{LabeledSpan{1, 2, POS}, LabeledSpan{4, 5, NEG}}};
  const auto worked = metrics::tsa_scores(gold, pred);
  const bool example_ok = worked.precision == 0.5 && worked.recall == 1.0 && worked.f1 == 2.0 / 3.0;
  return {mismatches == 0 && example_ok,
          fmt("%d mismatches against brute-force matching over 1000 sets; worked example P=%.4f R=%.4f F1=%.6f", mismatches,
              worked.precision, worked.recall, worked.f1)};
}

// --- 9, 10 ----------------------------------------------------------------------

struct SyntheticSetting {
  std::vector<corpus::AnnotatedSentence> train;
  std::vector<corpus::AnnotatedSentence> test;
};

SyntheticSetting synthetic_setting() {
  corpus::SyntheticOptions so;
  so.sentences = 1500;
  so.seed = 7;
  auto all = corpus::generate_synthetic(so);
  const std::size_t cut = all.size() * 4 / 5;
  return {{all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cut)},
          {all.begin() + static_cast<std::ptrdiff_t>(cut), all.end()}};
}

RunConfig synthetic_config(std::uint64_t seed) {
  RunConfig c;
  c.encoder.dim = 32;
  c.encoder.layers = 2;
  c.trainer.epochs = 30;
  c.trainer.seed = seed;
  return c;
}

struct SeedRun {
  double f1 = 0.0;
  int best_epoch = 0;
  double seconds = 0.0;
};

SeedRun train_seed(const SyntheticSetting& s, RunConfig c) {
  const auto t0 = Clock::now();
  trainer::TrainOptions o;
  o.persist = false;
  const auto r = trainer::train(trainer::hold_out(s.train, 0.1, c.trainer.seed), c, o);
  SeedRun out;
  out.f1 = evaluate(*r.best.model, s.test, c).f1;
  out.best_epoch = r.best.state.best_epoch;
  out.seconds = seconds_since(t0);
  return out;
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

std::map<std::string, std::vector<SeedRun>> g_runs;

const std::vector<SeedRun>& variant_runs(const std::string& variant) {
  auto it = g_runs.find(variant);
  if (it != g_runs.end()) return it->second;
  static const SyntheticSetting setting = synthetic_setting();
  std::vector<SeedRun> runs;
  for (auto seed : kSeeds) {
    RunConfig c = synthetic_config(seed);
    c.contrast.enabled = variant != "tcl_off";
    c.transfer.enabled = variant != "akt_off";
    runs.push_back(train_seed(setting, c));
    std::cerr << "  " << variant << " seed " << seed << ": test tsa_f1 " << runs.back().f1 << " (best epoch "
              << runs.back().best_epoch << ", " << runs.back().seconds << " s)\n";
  }
  return g_runs[variant] = std::move(runs);
}

std::string list(const std::vector<SeedRun>& runs) {
  std::string s;
  for (const auto& r : runs) s += (s.empty() ? "" : " ") + fmt("%.4f", r.f1);
  return s;
}

double mean_f1(const std::vector<SeedRun>& runs) {
  double s = 0.0;
  for (const auto& r : runs) s += r.f1;
  return s / static_cast<double>(runs.size());
}

Outcome end_to_end() {
  const auto& runs = variant_runs("full");
  std::vector<double> f1;
  double seconds = 0.0;
  for (const auto& r : runs) {
    f1.push_back(r.f1);
    seconds += r.seconds;
  }
  std::sort(f1.begin(), f1.end());
  const double median = f1[f1.size() / 2];
  return {median >= 0.90 && seconds < 600.0,
          fmt("median test TSA-F1 %.4f over seeds 1-5 [%s] (limit >= 0.90), %.0f s for 5 runs (limit 600 s)", median,
              list(runs).c_str(), seconds)};
}

Outcome ablation_direction() {
  const double full = mean_f1(variant_runs("full"));
  const double tcl = mean_f1(variant_runs("tcl_off"));
  const double akt = mean_f1(variant_runs("akt_off"));
  return {full >= tcl && full >= akt,
          fmt("mean test TSA-F1 full %.4f, TCL-off %.4f [%s], AKT-off %.4f [%s]", full, tcl,
              list(variant_runs("tcl_off")).c_str(), akt, list(variant_runs("akt_off")).c_str())};
}

// --- 11 -----------------------------------------------------------------------

Outcome reproducibility() {
  corpus::SyntheticOptions so;
  so.sentences = 300;
  so.seed = 7;
  const auto data = trainer::hold_out(corpus::generate_synthetic(so), 0.1, 3);
  const fs::path root = fs::temp_directory_path() / "fckt_acceptance_repro";
  fs::remove_all(root);
  auto run = [&](const std::string& id) {
    RunConfig c = synthetic_config(3);
    c.trainer.epochs = 3;
    c.output_dir = root.string();
    c.run_id = id;
    const auto r = trainer::train(data, c);
    std::ifstream in(r.run_dir / "metrics.jsonl", std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  };
  const std::string a = run("first"), b = run("second");
  const auto lines = std::count(a.begin(), a.end(), '\n');
  return {!a.empty() && a == b, fmt("metrics.jsonl of two seeded runs: %zu vs %zu bytes, %ld lines, %s", a.size(), b.size(),
                                    static_cast<long>(lines), a == b ? "identical" : "DIFFERENT")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, Outcome (*)()>> criteria{
      {"Expectation-oracle equivalence", expectation_oracle},
      {"Collapse identity", collapse_identity},
      {"Gradient checks", gradient_checks},
      {"Split/multi-aspect objective equivalence", split_equivalence},
      {"Transfer channel", transfer_channel},
      {"Complexity scaling", complexity_scaling},
      {"Decode correctness", decode_correctness},
      {"Metric-oracle equivalence", metric_oracle},
      {"End-to-end synthetic learning", end_to_end},
      {"Ablation direction", ablation_direction},
      {"Reproducibility", reproducibility},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.empty() && selected.count(id) == 0) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << id << "] " << criteria[k].first << ": " << o.detail << std::endl;
  }
  std::cout << (failed == 0 ? "all selected criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
