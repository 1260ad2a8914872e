#include "fckt/contrast.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fckt::contrast {

Denominator parse_denominator(std::string_view s) {
  if (s == "with_positive") return Denominator::with_positive;
  if (s == "negatives_only") return Denominator::negatives_only;
  throw std::invalid_argument("contrast.denominator must be with_positive or negatives_only");
}

std::string_view to_string(Denominator d) {
  return d == Denominator::with_positive ? "with_positive" : "negatives_only";
}

std::size_t PairBatch::active() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < positives.size(); ++k) {
    if (!negatives_for_start[k].empty() || !negatives_for_end[k].empty()) ++n;
  }
  return n;
}

std::vector<std::vector<int>> negative_partners(std::span<const AspectKey> keys) {
  std::vector<std::vector<int>> out(keys.size());
  for (std::size_t k = 0; k < keys.size(); ++k) {
    for (std::size_t m = 0; m < keys.size(); ++m) {
      if (m == k) continue;
      const bool same = keys[m].source_id == keys[k].source_id && keys[m].start == keys[k].start &&
                        keys[m].end == keys[k].end;
      if (!same) out[k].push_back(static_cast<int>(m));
    }
  }
  return out;
}

PairBatch build_pairs(std::span<const corpus::TrainingExample> examples,
                      std::span<const encoder::EncodedSequence> encoded) {
  if (examples.size() != encoded.size()) throw std::invalid_argument("build_pairs: examples/encodings size mismatch");
  std::vector<AspectKey> keys;
  PairBatch batch;
  for (std::size_t k = 0; k < examples.size(); ++k) {
    const auto& ex = examples[k];
    const auto& enc = encoded[k];
    const int s = ex.start_index();
    const int e = ex.end_index();
    if (s < 0 || e >= static_cast<int>(enc.token_map.size())) throw std::out_of_range("build_pairs: gold index");
    batch.positives.emplace_back(enc.embeddings.row(enc.token_map[static_cast<std::size_t>(s)]),
                                 enc.embeddings.row(enc.token_map[static_cast<std::size_t>(e)]));
    keys.push_back({ex.origin.source_id, s, e});
  }
  const auto partners = negative_partners(keys);
  batch.negatives_for_start.resize(examples.size());
  batch.negatives_for_end.resize(examples.size());
  for (std::size_t k = 0; k < examples.size(); ++k) {
    for (int m : partners[k]) {
      batch.negatives_for_start[k].push_back(batch.positives[static_cast<std::size_t>(m)].second);
      batch.negatives_for_end[k].push_back(batch.positives[static_cast<std::size_t>(m)].first);
    }
  }
  return batch;
}

double cosine(const RowVector& a, const RowVector& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw std::domain_error("cosine similarity of a zero-norm embedding");
  return a.dot(b) / (na * nb);
}

namespace {

struct Similarity {
  int x, y;
  double cos;
};

// d cos(x, y) / dx = y / (|x||y|) - cos * x / |x|^2
void add_cosine_grad(const Matrix& pool, const Vector& norms, const Similarity& s, double upstream, Matrix& grad) {
  const double nx = norms(s.x), ny = norms(s.y);
  grad.row(s.x) += upstream * (pool.row(s.y) / (nx * ny) - s.cos * pool.row(s.x) / (nx * nx));
  grad.row(s.y) += upstream * (pool.row(s.x) / (nx * ny) - s.cos * pool.row(s.y) / (ny * ny));
}

}  // namespace

InfoNceResult info_nce(const Matrix& pool, const InfoNceTerms& t, double tau, Denominator mode, bool want_grad) {
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive loss temperature must be positive");
  const std::size_t m = t.anchor_start.size();
  if (t.anchor_end.size() != m || t.start_negatives.size() != m || t.end_negatives.size() != m) {
    throw std::invalid_argument("info_nce: inconsistent term lists");
  }
  InfoNceResult r;
  if (want_grad) r.grad = Matrix::Zero(pool.rows(), pool.cols());
  const Vector norms = pool.rowwise().norm();

  std::vector<Similarity> sims;
  std::vector<double> logits;
  for (std::size_t k = 0; k < m; ++k) {
    if (t.start_negatives[k].empty() && t.end_negatives[k].empty()) continue;
    ++r.active;
    sims.clear();
    auto sim = [&](int x, int y) {
      if (norms(x) == 0.0 || norms(y) == 0.0) throw std::domain_error("cosine similarity of a zero-norm embedding");
      sims.push_back({x, y, pool.row(x).dot(pool.row(y)) / (norms(x) * norms(y))});
    };
    sim(t.anchor_start[k], t.anchor_end[k]);
    for (int j : t.start_negatives[k]) sim(t.anchor_start[k], j);
    for (int j : t.end_negatives[k]) sim(t.anchor_end[k], j);

    // softmax over the denominator terms; index 0 is the positive pair
    const std::size_t first = mode == Denominator::with_positive ? 0 : 1;
    logits.assign(sims.size(), 0.0);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = first; i < sims.size(); ++i) {
      logits[i] = sims[i].cos / tau;
      mx = std::max(mx, logits[i]);
    }
    double z = 0.0;
    for (std::size_t i = first; i < sims.size(); ++i) z += std::exp(logits[i] - mx);
    const double lse = mx + std::log(z);
    r.loss += lse - sims[0].cos / tau;

    if (!want_grad) continue;
    add_cosine_grad(pool, norms, sims[0], -1.0 / tau, r.grad);
    for (std::size_t i = first; i < sims.size(); ++i) {
      add_cosine_grad(pool, norms, sims[i], std::exp(logits[i] - lse) / tau, r.grad);
    }
  }
  return r;
}

double contrastive_loss(const PairBatch& pairs, double tau, Denominator mode) {
  const std::size_t m = pairs.positives.size();
  if (pairs.negatives_for_start.size() != m || pairs.negatives_for_end.size() != m) {
    throw std::invalid_argument("contrastive_loss: negative lists do not match positives");
  }
  std::vector<const RowVector*> rows;
  InfoNceTerms t;
  auto add = [&](const RowVector& v) {
    rows.push_back(&v);
    return static_cast<int>(rows.size()) - 1;
  };
  for (std::size_t k = 0; k < m; ++k) {
    t.anchor_start.push_back(add(pairs.positives[k].first));
    t.anchor_end.push_back(add(pairs.positives[k].second));
    t.start_negatives.emplace_back();
    t.end_negatives.emplace_back();
    for (const auto& v : pairs.negatives_for_start[k]) t.start_negatives.back().push_back(add(v));
    for (const auto& v : pairs.negatives_for_end[k]) t.end_negatives.back().push_back(add(v));
  }
  if (rows.empty()) return 0.0;
  Matrix pool(static_cast<Eigen::Index>(rows.size()), rows.front()->cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i]->cols() != pool.cols()) throw std::invalid_argument("contrastive_loss: embedding dimensions differ");
    pool.row(static_cast<Eigen::Index>(i)) = *rows[i];
  }
  return info_nce(pool, t, tau, mode, false).loss;
}

ag::Var contrastive_loss(ag::Var pool, InfoNceTerms terms, double tau, Denominator mode, int* active) {
  ag::Graph& g = *pool.graph();
  InfoNceResult r = info_nce(pool.value(), terms, tau, mode, pool.requires_grad());
  if (active != nullptr) *active = r.active;
  Matrix y(1, 1);
  y(0, 0) = r.loss;
  const ag::Var in[] = {pool};
  return g.make(std::move(y), in, [pool, grad = std::move(r.grad)](ag::Graph& g, std::size_t self) {
    const double d = g.grad(self)(0, 0);
    g.accumulate_with(pool.id(), [&](Matrix& gp) { gp += d * grad; });
  });
}

}  // namespace fckt::contrast
