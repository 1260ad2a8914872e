#include "fckt/metrics.hpp"

#include "support/oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace fckt;
using namespace fckt::metrics;
using fckt::testing::Gen;

namespace {

constexpr auto POS = Polarity::positive;
constexpr auto NEG = Polarity::negative;
constexpr auto NEU = Polarity::neutral;

EvalReport score(std::vector<SentenceSpans> gold, std::vector<SentenceSpans> pred) { return tsa_scores(gold, pred); }

SentenceSpans random_spans(Gen& gen, int max_items) {
  SentenceSpans s;
  const int n = gen.integer(0, max_items);
  for (int i = 0; i < n; ++i) {
    const int start = gen.integer(0, 3);
    s.push_back({start, start + gen.integer(0, 1), static_cast<Polarity>(gen.integer(0, 2))});
  }
  return s;
}

SentenceSpans strip_polarity(SentenceSpans s) {
  for (auto& x : s) x.polarity = NEU;
  return s;
}

}  // namespace

TEST_CASE("exact-match examples") {
  auto r = score({{{1, 2, POS}}}, {{{1, 2, POS}}});
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.f1 == 1.0);

  r = score({{{1, 2, POS}}}, {{{1, 2, NEG}}});
  CHECK(r.f1 == 0.0);
  CHECK(r.ae_f1 == 1.0);

  r = score({{{1, 2, POS}}}, {{{1, 2, POS}, {4, 5, NEG}}});
  CHECK(r.precision == 0.5);
  CHECK(r.recall == 1.0);
  CHECK(r.f1 == 2.0 / 3.0);
  CHECK(r.counts.gold == 1);
  CHECK(r.counts.pred == 2);
  CHECK(r.counts.correct == 1);
}

TEST_CASE("aspect extraction F1 ignores polarity") {
  CHECK(ae_f1(std::vector<SentenceSpans>{{{0, 0, POS}, {2, 3, NEG}}},
              std::vector<SentenceSpans>{{{0, 0, NEG}, {2, 3, POS}}}) == 1.0);
  CHECK(ae_f1(std::vector<SentenceSpans>{{{0, 0, POS}}}, std::vector<SentenceSpans>{{{1, 1, POS}}}) == 0.0);
  CHECK(ae_f1(std::vector<SentenceSpans>{{{0, 0, POS}, {2, 3, NEG}}},
              std::vector<SentenceSpans>{{{0, 0, POS}, {5, 5, NEG}}}) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("duplicate predictions match a gold item once") {
  const auto r = score({{{0, 1, POS}}}, {{{0, 1, POS}, {0, 1, POS}}});
  CHECK(r.counts.correct == 1);
  CHECK(r.precision == 0.5);
  CHECK(r.recall == 1.0);
}

TEST_CASE("empty sides and mismatched sentence counts") {
  const auto r = score({{}, {}}, {{}, {}});
  CHECK(r.precision == 0.0);
  CHECK(r.recall == 0.0);
  CHECK(r.f1 == 0.0);
  CHECK_THROWS_AS(score({{}}, {{}, {}}), std::invalid_argument);
}

TEST_CASE("sentiment accuracy") {
  using P = std::pair<Polarity, Polarity>;
  CHECK(sp_accuracy(std::vector<P>{{POS, POS}, {NEG, NEG}}) == 1.0);
  CHECK(sp_accuracy(std::vector<P>{{POS, NEG}, {NEG, NEU}}) == 0.0);
  CHECK(sp_accuracy(std::vector<P>{{POS, POS}, {NEG, NEG}, {NEU, NEU}, {POS, NEU}}) == 0.75);
  std::vector<std::string> warnings;
  CHECK(sp_accuracy(std::vector<P>{}, &warnings) == 0.0);
  CHECK(warnings.size() == 1);
}

TEST_CASE("property: counts match a brute-force matcher") {
  Gen gen(1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<SentenceSpans> gold, pred;
    const int sentences = gen.integer(1, 4);
    std::size_t g = 0, p = 0, correct = 0, ae_correct = 0;
    for (int s = 0; s < sentences; ++s) {
      gold.push_back(random_spans(gen, 5));
      pred.push_back(random_spans(gen, 5));
      g += gold.back().size();
      p += pred.back().size();
      correct += fckt::testing::brute_force_matches(gold.back(), pred.back());
      ae_correct += fckt::testing::brute_force_matches(strip_polarity(gold.back()), strip_polarity(pred.back()));
    }
    const auto r = tsa_scores(gold, pred);
    CHECK(r.counts.gold == g);
    CHECK(r.counts.pred == p);
    CHECK(r.counts.correct == correct);
    CHECK(r.ae_counts.correct == ae_correct);
    CHECK(r.counts.correct <= std::min(g, p));
    const auto o = fckt::testing::oracle_prf(g, p, correct);
    CHECK(r.precision == o.precision);
    CHECK(r.recall == o.recall);
    CHECK(r.f1 == doctest::Approx(o.f1).epsilon(1e-15));
  }
}

TEST_CASE("property: permutation invariance") {
  Gen gen(2);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<SentenceSpans> gold, pred;
    for (int s = 0; s < 5; ++s) {
      gold.push_back(random_spans(gen, 4));
      pred.push_back(random_spans(gen, 4));
    }
    const auto base = tsa_scores(gold, pred);
    std::vector<std::size_t> order{0, 1, 2, 3, 4};
    std::shuffle(order.begin(), order.end(), gen.engine());
    std::vector<SentenceSpans> g2, p2;
    for (auto i : order) {
      g2.push_back(gold[i]);
      p2.push_back(pred[i]);
      std::shuffle(g2.back().begin(), g2.back().end(), gen.engine());
      std::shuffle(p2.back().begin(), p2.back().end(), gen.engine());
    }
    const auto r = tsa_scores(g2, p2);
    CHECK(r.counts.correct == base.counts.correct);
    CHECK(r.ae_counts.correct == base.ae_counts.correct);
    CHECK(r.f1 == base.f1);
  }
}

TEST_CASE("aggregate reports mean and sample deviation") {
  Gen gen(3);
  std::vector<EvalReport> reports;
  for (int k = 0; k < 10; ++k) {
    EvalReport r;
    r.f1 = gen.real(0, 1);
    r.precision = gen.real(0, 1);
    r.sp_accuracy = gen.real(0, 1);
    r.counts = {3, 4, 2};
    reports.push_back(r);
  }
  const auto agg = aggregate(reports);
  double mean = 0.0;
  for (const auto& r : reports) mean += r.f1;
  mean /= 10.0;
  CHECK(std::abs(agg.mean.f1 - mean) < 1e-12);
  double ss = 0.0;
  for (const auto& r : reports) ss += (r.f1 - mean) * (r.f1 - mean);
  CHECK(agg.stddev.f1 == doctest::Approx(std::sqrt(ss / 9.0)).epsilon(1e-12));
  CHECK(agg.mean.counts.correct == 20);

  const std::vector<std::size_t> excluded{0, 3};
  const auto partial = aggregate(reports, excluded);
  double sp = 0.0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (i != 0 && i != 3) sp += reports[i].sp_accuracy;
  }
  CHECK(std::abs(partial.mean.sp_accuracy - sp / 8.0) < 1e-12);
  CHECK(std::abs(partial.mean.f1 - mean) < 1e-12);
  CHECK(partial.to_json()["excluded_from_sp"] == nlohmann::json::array({0, 3}));
  CHECK_THROWS_AS(aggregate(std::vector<EvalReport>{}), std::invalid_argument);
}

TEST_CASE("report JSON round trip and table layout") {
  auto r = score({{{1, 2, POS}}, {{0, 0, NEG}}}, {{{1, 2, POS}, {4, 5, NEG}}, {}});
  r.sp_accuracy = 0.75;
  r.sp_total = 4;
  r.sp_correct = 3;
  r.warnings.push_back("w");
  const auto back = EvalReport::from_json(r.to_json());
  CHECK(back.to_json() == r.to_json());

  const std::vector<std::pair<std::string, EvalReport>> rows{{"synthetic", r}, {"a-much-longer-name", back}};
  const std::string table = format_table(rows);
  std::vector<std::string> lines;
  std::size_t from = 0;
  for (std::size_t at; (at = table.find('\n', from)) != std::string::npos; from = at + 1) {
    lines.push_back(table.substr(from, at - from));
  }
  REQUIRE(lines.size() == 4);
  CHECK(lines[0].find("Prec.") != std::string::npos);
  CHECK(lines[0].find("SP-Acc") != std::string::npos);
  CHECK(lines[2].size() == lines[3].size());
  CHECK(lines[2].find("0.5000") != std::string::npos);
}

TEST_CASE("gold spans come from sentence annotations") {
  const auto s = fckt::testing::sentence(5, {{0, 1, POS}, {3, 3, NEG}});
  const auto g = gold_spans(s);
  REQUIRE(g.size() == 2);
  CHECK(g[1] == LabeledSpan{3, 3, NEG});
}
