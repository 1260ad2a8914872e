#include "fckt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace fckt::metrics {

using json = nlohmann::json;

PRF prf(const Counts& c) {
  PRF r;
  r.precision = c.pred == 0 ? 0.0 : static_cast<double>(c.correct) / static_cast<double>(c.pred);
  r.recall = c.gold == 0 ? 0.0 : static_cast<double>(c.correct) / static_cast<double>(c.gold);
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

namespace {

template <typename KeyFn>
Counts count_matches(std::span<const SentenceSpans> gold, std::span<const SentenceSpans> pred, KeyFn key) {
  if (gold.size() != pred.size()) {
    throw std::invalid_argument("gold has " + std::to_string(gold.size()) + " sentences but predictions have " +
                                std::to_string(pred.size()));
  }
  Counts c;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    // exact match on a key: the maximum matching pairs min(multiplicities)
    std::map<decltype(key(LabeledSpan{})), std::pair<std::size_t, std::size_t>> seen;
    for (const auto& g : gold[s]) ++seen[key(g)].first;
    for (const auto& p : pred[s]) ++seen[key(p)].second;
    for (const auto& [k, m] : seen) c.correct += std::min(m.first, m.second);
    c.gold += gold[s].size();
    c.pred += pred[s].size();
  }
  return c;
}

auto triple(const LabeledSpan& s) { return std::make_tuple(s.start, s.end, static_cast<int>(s.polarity)); }
auto span_only(const LabeledSpan& s) { return std::make_pair(s.start, s.end); }

}  // namespace

Counts tsa_counts(std::span<const SentenceSpans> gold, std::span<const SentenceSpans> pred) {
  return count_matches(gold, pred, triple);
}

Counts ae_counts(std::span<const SentenceSpans> gold, std::span<const SentenceSpans> pred) {
  return count_matches(gold, pred, span_only);
}

EvalReport tsa_scores(std::span<const SentenceSpans> gold, std::span<const SentenceSpans> pred) {
  EvalReport r;
  r.counts = tsa_counts(gold, pred);
  const PRF t = prf(r.counts);
  r.precision = t.precision;
  r.recall = t.recall;
  r.f1 = t.f1;
  r.ae_counts = ae_counts(gold, pred);
  const PRF a = prf(r.ae_counts);
  r.ae_precision = a.precision;
  r.ae_recall = a.recall;
  r.ae_f1 = a.f1;
  if (r.counts.pred == 0) r.warnings.push_back("no predicted aspects");
  return r;
}

double ae_f1(std::span<const SentenceSpans> gold, std::span<const SentenceSpans> pred) {
  return prf(ae_counts(gold, pred)).f1;
}

double sp_accuracy(std::span<const std::pair<Polarity, Polarity>> pairs, std::vector<std::string>* warnings) {
  if (pairs.empty()) {
    if (warnings != nullptr) warnings->push_back("sentiment accuracy over an empty set is reported as 0");
    return 0.0;
  }
  std::size_t hit = 0;
  for (const auto& [g, p] : pairs) hit += g == p ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pairs.size());
}

SentenceSpans gold_spans(const corpus::AnnotatedSentence& sentence) {
  SentenceSpans out;
  for (const auto& a : sentence.aspects) out.push_back({a.start, a.end, a.polarity});
  return out;
}

namespace {

json counts_json(const Counts& c) { return {{"gold", c.gold}, {"pred", c.pred}, {"correct", c.correct}}; }
Counts counts_from(const json& j) {
  return {j.at("gold").get<std::size_t>(), j.at("pred").get<std::size_t>(), j.at("correct").get<std::size_t>()};
}

}  // namespace

json EvalReport::to_json() const {
  return {{"tsa", {{"precision", precision}, {"recall", recall}, {"f1", f1}, {"counts", counts_json(counts)}}},
          {"ae", {{"precision", ae_precision}, {"recall", ae_recall}, {"f1", ae_f1}, {"counts", counts_json(ae_counts)}}},
          {"sp", {{"accuracy", sp_accuracy}, {"total", sp_total}, {"correct", sp_correct}}},
          {"warnings", warnings}};
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  const auto& t = j.at("tsa");
  r.precision = t.at("precision");
  r.recall = t.at("recall");
  r.f1 = t.at("f1");
  r.counts = counts_from(t.at("counts"));
  const auto& a = j.at("ae");
  r.ae_precision = a.at("precision");
  r.ae_recall = a.at("recall");
  r.ae_f1 = a.at("f1");
  r.ae_counts = counts_from(a.at("counts"));
  const auto& s = j.at("sp");
  r.sp_accuracy = s.at("accuracy");
  r.sp_total = s.at("total");
  r.sp_correct = s.at("correct");
  r.warnings = j.value("warnings", std::vector<std::string>{});
  return r;
}

namespace {

std::vector<double EvalReport::*> scalar_fields() {
  return {&EvalReport::precision, &EvalReport::recall,  &EvalReport::f1,
          &EvalReport::ae_precision, &EvalReport::ae_recall, &EvalReport::ae_f1};
}

}  // namespace

AggregateReport aggregate(std::span<const EvalReport> reports, std::span<const std::size_t> sp_excluded) {
  if (reports.empty()) throw std::invalid_argument("aggregate: no reports");
  AggregateReport out;
  out.folds.assign(reports.begin(), reports.end());
  out.excluded_from_sp.assign(sp_excluded.begin(), sp_excluded.end());
  const double n = static_cast<double>(reports.size());
  for (auto field : scalar_fields()) {
    double sum = 0.0;
    for (const auto& r : reports) sum += r.*field;
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& r : reports) ss += (r.*field - mean) * (r.*field - mean);
    out.mean.*field = mean;
    out.stddev.*field = reports.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  }
  std::vector<double> sp;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (std::find(sp_excluded.begin(), sp_excluded.end(), i) == sp_excluded.end()) sp.push_back(reports[i].sp_accuracy);
  }
  if (!sp.empty()) {
    double sum = 0.0;
    for (double v : sp) sum += v;
    const double mean = sum / static_cast<double>(sp.size());
    double ss = 0.0;
    for (double v : sp) ss += (v - mean) * (v - mean);
    out.mean.sp_accuracy = mean;
    out.stddev.sp_accuracy = sp.size() > 1 ? std::sqrt(ss / static_cast<double>(sp.size() - 1)) : 0.0;
  }
  for (const auto& r : reports) {
    out.mean.counts.gold += r.counts.gold;
    out.mean.counts.pred += r.counts.pred;
    out.mean.counts.correct += r.counts.correct;
    out.mean.ae_counts.gold += r.ae_counts.gold;
    out.mean.ae_counts.pred += r.ae_counts.pred;
    out.mean.ae_counts.correct += r.ae_counts.correct;
    out.mean.sp_total += r.sp_total;
    out.mean.sp_correct += r.sp_correct;
  }
  return out;
}

json AggregateReport::to_json() const {
  json folds_json = json::array();
  for (const auto& f : folds) folds_json.push_back(f.to_json());
  return {{"mean", mean.to_json()}, {"stddev", stddev.to_json()}, {"folds", folds_json},
          {"excluded_from_sp", excluded_from_sp}};
}

std::string format_table(std::span<const std::pair<std::string, EvalReport>> rows) {
  std::size_t width = 7;
  for (const auto& [name, r] : rows) width = std::max(width, name.size());
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-*s  %7s  %7s  %7s  %7s  %7s\n", static_cast<int>(width), "Dataset", "Prec.",
                "Rec.", "F1", "AE-F1", "SP-Acc");
  out << buf;
  out << std::string(width + 45, '-') << '\n';
  for (const auto& [name, r] : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %7.4f  %7.4f  %7.4f  %7.4f  %7.4f\n", static_cast<int>(width), name.c_str(),
                  r.precision, r.recall, r.f1, r.ae_f1, r.sp_accuracy);
    out << buf;
  }
  return out.str();
}

}  // namespace fckt::metrics
