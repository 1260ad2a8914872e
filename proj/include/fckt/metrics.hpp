#pragma once

// Exact-match scoring. A predicted (start, end, polarity) is correct only when
// the same triple is in the gold set of that sentence; each gold item is
// matched at most once, so duplicate predictions count against precision.

#include "fckt/corpus.hpp"

#include <json.hpp>

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fckt::metrics {

using corpus::Polarity;

struct LabeledSpan {
  int start = 0;
  int end = 0;
  Polarity polarity = Polarity::neutral;
  friend bool operator==(const LabeledSpan&, const LabeledSpan&) = default;
};

using SentenceSpans = std::vector<LabeledSpan>;

struct Counts {
  std::size_t gold = 0;
  std::size_t pred = 0;
  std::size_t correct = 0;
};

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

PRF prf(const Counts& c);

struct EvalReport {
  // targeted sentiment (span + polarity)
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Counts counts;
  // aspect extraction (span only)
  double ae_precision = 0.0;
  double ae_recall = 0.0;
  double ae_f1 = 0.0;
  Counts ae_counts;
  // sentiment prediction
  double sp_accuracy = 0.0;
  std::size_t sp_total = 0;
  std::size_t sp_correct = 0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

// Throws std::invalid_argument when the sentence counts differ.
Counts tsa_counts(std::span<const SentenceSpans> gold, std::span<const SentenceSpans> pred);
Counts ae_counts(std::span<const SentenceSpans> gold, std::span<const SentenceSpans> pred);

// Fills the TSA and AE fields; SP fields are left for sp_accuracy.
EvalReport tsa_scores(std::span<const SentenceSpans> gold, std::span<const SentenceSpans> pred);
double ae_f1(std::span<const SentenceSpans> gold, std::span<const SentenceSpans> pred);

// Fraction of (gold, predicted) pairs that agree; 0 with a warning when empty.
double sp_accuracy(std::span<const std::pair<Polarity, Polarity>> pairs, std::vector<std::string>* warnings = nullptr);

// Mean and sample standard deviation of a set of reports.
struct AggregateReport {
  EvalReport mean;
  EvalReport stddev;
  std::vector<EvalReport> folds;
  std::vector<std::size_t> excluded_from_sp;

  nlohmann::json to_json() const;
};

AggregateReport aggregate(std::span<const EvalReport> reports, std::span<const std::size_t> sp_excluded = {});

// Plain-text table with Prec./Rec./F1 per named row plus AE-F1 and SP-Acc.
std::string format_table(std::span<const std::pair<std::string, EvalReport>> rows);

SentenceSpans gold_spans(const corpus::AnnotatedSentence& sentence);

}  // namespace fckt::metrics
