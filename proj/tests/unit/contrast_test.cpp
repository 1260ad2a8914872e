#include "fckt/contrast.hpp"

#include "support/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace fckt;
using namespace fckt::contrast;
using fckt::testing::Gen;

namespace {

RowVector row(std::initializer_list<double> v) {
  RowVector r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

double oracle_cos(const RowVector& a, const RowVector& b) {
  double dot = 0, na = 0, nb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    dot += a(i) * b(i);
    na += a(i) * a(i);
    nb += b(i) * b(i);
  }
  return dot / std::sqrt(na * nb);
}

// Straight transcription of the loss with no shared code.
double oracle_loss(const PairBatch& b, double tau, bool with_positive) {
  double total = 0.0;
  for (std::size_t k = 0; k < b.positives.size(); ++k) {
    if (b.negatives_for_start[k].empty() && b.negatives_for_end[k].empty()) continue;
    const auto& [s, e] = b.positives[k];
    const double pos = std::exp(oracle_cos(s, e) / tau);
    double z = with_positive ? pos : 0.0;
    for (const auto& n : b.negatives_for_start[k]) z += std::exp(oracle_cos(s, n) / tau);
    for (const auto& n : b.negatives_for_end[k]) z += std::exp(oracle_cos(e, n) / tau);
    total += -std::log(pos / z);
  }
  return total;
}

PairBatch random_batch(Gen& gen, int aspects, int dim) {
  PairBatch b;
  for (int k = 0; k < aspects; ++k) b.positives.emplace_back(gen.matrix(1, dim), gen.matrix(1, dim));
  b.negatives_for_start.resize(static_cast<std::size_t>(aspects));
  b.negatives_for_end.resize(static_cast<std::size_t>(aspects));
  for (int k = 0; k < aspects; ++k) {
    for (int m = 0; m < aspects; ++m) {
      if (m == k) continue;
      b.negatives_for_start[static_cast<std::size_t>(k)].push_back(b.positives[static_cast<std::size_t>(m)].second);
      b.negatives_for_end[static_cast<std::size_t>(k)].push_back(b.positives[static_cast<std::size_t>(m)].first);
    }
  }
  return b;
}

corpus::TrainingExample example(const std::string& id, int start, int end, int n) {
  corpus::TrainingExample ex;
  for (int i = 0; i < n; ++i) ex.tokens.push_back("w" + std::to_string(i));
  const auto t = corpus::build_targets(start, end, n);
  ex.start_target = t.start;
  ex.end_target = t.end;
  ex.origin.source_id = id;
  return ex;
}

encoder::EncodedSequence encoded(Gen& gen, int n, int dim) {
  encoder::EncodedSequence e;
  e.embeddings = gen.matrix(n + 2, dim);
  for (int i = 0; i < n; ++i) e.token_map.push_back(i + 1);
  return e;
}

}  // namespace

TEST_CASE("worked example: one positive and two orthogonal negatives") {
  PairBatch b;
  b.positives = {{row({1, 0}), row({1, 0})}};
  b.negatives_for_start = {{row({0, 1})}};
  b.negatives_for_end = {{row({0, 1})}};
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  CHECK(expected == doctest::Approx(0.5514).epsilon(1e-4));
  CHECK(contrastive_loss(b, 1.0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(contrastive_loss(b, 1.0, Denominator::negatives_only) == doctest::Approx(-1.0 + std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("build_pairs negative counts") {
  Gen gen(1);
  std::vector<corpus::TrainingExample> ex{example("a", 0, 1, 4)};
  std::vector<encoder::EncodedSequence> enc{encoded(gen, 4, 6)};
  auto b = build_pairs(ex, enc);
  CHECK(b.positives.size() == 1);
  CHECK(b.active() == 0);
  CHECK(contrastive_loss(b, 0.07) == 0.0);

  ex.push_back(example("b", 2, 2, 3));
  enc.push_back(encoded(gen, 3, 6));
  b = build_pairs(ex, enc);
  CHECK(b.active() == 2);
  CHECK(b.negatives_for_start[0].size() == 1);
  CHECK(b.negatives_for_start[0][0] == enc[1].embeddings.row(3));  // end word of b
  CHECK(b.negatives_for_end[0][0] == enc[1].embeddings.row(3));    // start word of b, same token

  ex.push_back(example("a", 2, 3, 4));
  enc.push_back(encoded(gen, 4, 6));
  b = build_pairs(ex, enc);
  CHECK(b.active() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(b.negatives_for_start[k].size() == 2);
    CHECK(b.negatives_for_end[k].size() == 2);
  }
  CHECK(b.positives[0].first == enc[0].embeddings.row(1));
  CHECK(b.positives[0].second == enc[0].embeddings.row(2));

  std::vector<encoder::EncodedSequence> short_enc{enc[0], enc[1]};
  CHECK_THROWS_AS(build_pairs(ex, short_enc), std::invalid_argument);
}

TEST_CASE("the same aspect seen twice is never its own negative") {
  const std::vector<AspectKey> keys{{"s1", 0, 1}, {"s1", 0, 1}, {"s1", 3, 3}, {"s2", 0, 1}};
  const auto p = negative_partners(keys);
  CHECK(p[0] == std::vector<int>{2, 3});
  CHECK(p[1] == std::vector<int>{2, 3});
  CHECK(p[2] == std::vector<int>{0, 1, 3});
  CHECK(p[3] == std::vector<int>{0, 1, 2});
}

TEST_CASE("loss matches the oracle on random batches") {
  Gen gen(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto b = random_batch(gen, gen.integer(1, 6), gen.integer(2, 10));
    const double tau = gen.real(0.05, 2.0);
    CHECK(contrastive_loss(b, tau) == doctest::Approx(oracle_loss(b, tau, true)).epsilon(1e-10));
    CHECK(contrastive_loss(b, tau, Denominator::negatives_only) ==
          doctest::Approx(oracle_loss(b, tau, false)).epsilon(1e-10));
  }
}

TEST_CASE("property: invariance to embedding scale and negative order") {
  Gen gen(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto b = random_batch(gen, gen.integer(2, 5), 6);
    const double base = contrastive_loss(b, 0.07);
    CHECK(base >= 0.0);
    PairBatch scaled = b;
    for (auto& [s, e] : scaled.positives) {
      s *= gen.real(0.01, 100.0);
      e *= gen.real(0.01, 100.0);
    }
    for (auto& v : scaled.negatives_for_start) for (auto& n : v) n *= gen.real(0.01, 100.0);
    for (auto& v : scaled.negatives_for_end) for (auto& n : v) n *= gen.real(0.01, 100.0);
    CHECK(contrastive_loss(scaled, 0.07) == doctest::Approx(base).epsilon(1e-9));

    PairBatch permuted = b;
    for (auto& v : permuted.negatives_for_start) std::shuffle(v.begin(), v.end(), gen.engine());
    for (auto& v : permuted.negatives_for_end) std::shuffle(v.begin(), v.end(), gen.engine());
    CHECK(contrastive_loss(permuted, 0.07) == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("property: loss falls as the positive pair aligns and rises as a negative aligns") {
  Gen gen(4);
  for (int trial = 0; trial < 200; ++trial) {
    auto b = random_batch(gen, 3, 5);
    const double base = contrastive_loss(b, 0.5);
    PairBatch closer = b;
    auto& [s, e] = closer.positives[0];
    e = 0.5 * (e / e.norm() + s / s.norm());  // strictly raises cos(s, e) unless already aligned
    if (oracle_cos(s, e) > oracle_cos(b.positives[0].first, b.positives[0].second) + 1e-9) {
      // only the first anchor's positive changed; compare that anchor alone
      PairBatch one_base = b, one_closer = closer;
      for (PairBatch* p : {&one_base, &one_closer}) {
        p->negatives_for_start[1].clear();
        p->negatives_for_end[1].clear();
        p->negatives_for_start[2].clear();
        p->negatives_for_end[2].clear();
      }
      CHECK(contrastive_loss(one_closer, 0.5) < contrastive_loss(one_base, 0.5));
    }
    PairBatch harder = b;
    auto& n = harder.negatives_for_start[0][0];
    const double before = oracle_cos(harder.positives[0].first, n);
    n = 0.5 * (n / n.norm() + harder.positives[0].first / harder.positives[0].first.norm());
    if (oracle_cos(harder.positives[0].first, n) > before + 1e-9) CHECK(contrastive_loss(harder, 0.5) > base);
  }
}

TEST_CASE("zero-norm embeddings raise domain_error") {
  PairBatch b;
  b.positives = {{row({0, 0}), row({1, 0})}};
  b.negatives_for_start = {{row({0, 1})}};
  b.negatives_for_end = {{}};
  CHECK_THROWS_AS(contrastive_loss(b, 1.0), std::domain_error);
  CHECK_THROWS_AS(cosine(row({0, 0}), row({1, 1})), std::domain_error);
  b.positives[0].first = row({1, 1});
  CHECK_THROWS_AS(contrastive_loss(b, 0.0), std::invalid_argument);
}

TEST_CASE("graph loss gradient matches finite differences") {
  Gen gen(5);
  const Matrix pool = gen.matrix(6, 8);
  InfoNceTerms t;
  t.anchor_start = {0, 2, 4};
  t.anchor_end = {1, 3, 5};
  t.start_negatives = {{3, 5}, {1, 5}, {1, 3}};
  t.end_negatives = {{2, 4}, {0, 4}, {0, 2}};
  for (auto mode : {Denominator::with_positive, Denominator::negatives_only}) {
    const auto r = fckt::testing::check_gradients({pool}, [&](ag::Graph&, const std::vector<ag::Var>& v) {
      return contrastive_loss(v[0], t, 0.07, mode);
    });
    INFO(r.detail);
    CHECK(r.ok);
  }
  ag::Graph g;
  int active = -1;
  const double v = contrastive_loss(g.constant(pool), t, 0.07, Denominator::with_positive, &active).scalar();
  CHECK(active == 3);
  CHECK(v == doctest::Approx(info_nce(pool, t, 0.07, Denominator::with_positive, false).loss));
}

TEST_CASE("denominator parsing") {
  CHECK(parse_denominator("with_positive") == Denominator::with_positive);
  CHECK(parse_denominator("negatives_only") == Denominator::negatives_only);
  CHECK_THROWS_AS(parse_denominator("both"), std::invalid_argument);
  CHECK(to_string(Denominator::negatives_only) == "negatives_only");
}
