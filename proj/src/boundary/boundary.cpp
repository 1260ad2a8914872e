#include "fckt/boundary.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fckt::boundary {

SpanBound parse_span_bound(std::string_view s) {
  if (s == "length") return SpanBound::length;
  if (s == "offset") return SpanBound::offset;
  throw std::invalid_argument("span bound must be length or offset, got '" + std::string(s) + "'");
}

std::string_view to_string(SpanBound b) { return b == SpanBound::length ? "length" : "offset"; }

void BoundaryDistributions::validate(double tol) const {
  if (start_probs.size() == 0 || start_probs.size() != end_probs.size()) {
    throw std::invalid_argument("boundary distributions must be non-empty and of equal length");
  }
  for (const Vector* v : {&start_probs, &end_probs}) {
    if ((v->array() < 0.0).any() || std::abs(v->sum() - 1.0) > tol) {
      throw std::invalid_argument("boundary distribution is not a probability vector");
    }
  }
}

namespace {

Matrix init_weight(int rows, int cols, std::mt19937_64& rng) {
  // Glorot uniform
  const double limit = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace

BoundaryHead::BoundaryHead(const std::string& name, int dim, std::mt19937_64& rng)
    : w1_(name + ".hidden.weight", init_weight(dim, dim, rng)),
      b1_(name + ".hidden.bias", Matrix::Zero(1, dim)),
      w2_(name + ".out.weight", init_weight(dim, 1, rng)),
      b2_(name + ".out.bias", Matrix::Zero(1, 1)) {}

ag::Var BoundaryHead::logits(ag::Graph& g, ag::Var words) {
  ag::Var hidden = ag::tanh(ag::add_row(ag::matmul(words, g.param(w1_)), g.param(b1_)));
  return ag::add_row(ag::matmul(hidden, g.param(w2_)), g.param(b2_));
}

BoundaryPredictor::BoundaryPredictor(int dim, std::mt19937_64& rng)
    : start_("boundary.start", dim, rng), end_("boundary.end", dim, rng) {}

BoundaryPredictor::Output BoundaryPredictor::forward(ag::Graph& g, ag::Var words) {
  Output out;
  out.start_logits = start_.logits(g, words);
  out.end_logits = end_.logits(g, words);
  out.start_probs = ag::softmax_all(out.start_logits);
  out.end_probs = ag::softmax_all(out.end_logits);
  return out;
}

BoundaryDistributions BoundaryPredictor::predict(const Matrix& word_embeddings) {
  ag::Graph g;
  return to_distributions(forward(g, g.constant(word_embeddings)));
}

ParameterList BoundaryPredictor::parameters() {
  ParameterList out = start_.parameters();
  for (Parameter* p : end_.parameters()) out.push_back(p);
  return out;
}

BoundaryDistributions to_distributions(const BoundaryPredictor::Output& out) {
  const Matrix& s = out.start_probs.value();
  const Matrix& e = out.end_probs.value();
  return {Eigen::Map<const Vector>(s.data(), s.size()), Eigen::Map<const Vector>(e.data(), e.size())};
}

double boundary_loss(const BoundaryDistributions& pred, std::span<const double> start_target,
                     std::span<const double> end_target, int* clamped) {
  const auto n = static_cast<std::size_t>(pred.size());
  if (start_target.size() != n || end_target.size() != n) {
    throw std::invalid_argument("boundary_loss: target length differs from prediction length");
  }
  auto term = [&](const Vector& p, std::span<const double> target) {
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (target[i] == 0.0) continue;
      double q = p(static_cast<Eigen::Index>(i));
      if (q < kLogEps) {
        q = kLogEps;
        if (clamped != nullptr) ++*clamped;
      }
      loss -= target[i] * std::log(q);
    }
    return loss;
  };
  return term(pred.start_probs, start_target) + term(pred.end_probs, end_target);
}

ag::Var boundary_loss(const BoundaryPredictor::Output& out, int start, int end, int* clamped) {
  const ag::Var parts[] = {ag::nll_from_logits(out.start_logits, start, kLogEps, clamped),
                           ag::nll_from_logits(out.end_logits, end, kLogEps, clamped)};
  return ag::add_scalars(parts);
}

std::vector<SpanPrediction> decode_spans(const BoundaryDistributions& pred, const DecodeOptions& options) {
  if (options.h < 1) throw std::invalid_argument("decode_spans: h must be >= 1");
  const int n = static_cast<int>(pred.size());
  const int max_len = max_span_length(options.h, options.bound);
  std::vector<SpanPrediction> candidates;
  candidates.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(max_len));
  for (int i = 0; i < n; ++i) {
    const double ls = std::log(pred.start_probs(i));
    for (int j = i; j < std::min(n, i + max_len); ++j) {
      candidates.push_back({i, j, ls + std::log(pred.end_probs(j))});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const SpanPrediction& a, const SpanPrediction& b) { return a.score > b.score; });

  std::vector<SpanPrediction> chosen;
  for (const auto& c : candidates) {
    if (static_cast<int>(chosen.size()) >= options.max_spans) break;
    if (!(c.score >= options.threshold)) break;
    const bool clash = std::any_of(chosen.begin(), chosen.end(), [&](const SpanPrediction& s) {
      return c.start <= s.end && s.start <= c.end;
    });
    if (!clash) chosen.push_back(c);
  }
  std::sort(chosen.begin(), chosen.end(), [](const SpanPrediction& a, const SpanPrediction& b) { return a.start < b.start; });
  return chosen;
}

}  // namespace fckt::boundary
