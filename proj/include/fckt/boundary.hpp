#pragma once

#include "fckt/autograd.hpp"
#include "fckt/encoder.hpp"
#include "fckt/tensor.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace fckt::boundary {

inline constexpr double kLogEps = 1e-12;

// How the maximum aspect length h bounds a span (i, j):
//   length: j - i + 1 <= h     (j <= i + h - 1)
//   offset: j - i     <= h     (j <= i + h, the literal index bound)
enum class SpanBound { length, offset };
SpanBound parse_span_bound(std::string_view s);
std::string_view to_string(SpanBound b);
inline int max_span_length(int h, SpanBound b) { return b == SpanBound::length ? h : h + 1; }

struct BoundaryDistributions {
  Vector start_probs;
  Vector end_probs;

  Eigen::Index size() const { return start_probs.size(); }
  // Throws std::invalid_argument unless both are length-n distributions.
  void validate(double tol = 1e-6) const;
};

struct SpanPrediction {
  int start = 0;
  int end = 0;  // inclusive
  double score = 0.0;
};

// One position-wise scoring MLP: d -> d (tanh) -> 1.
class BoundaryHead {
 public:
  BoundaryHead() = default;
  BoundaryHead(const std::string& name, int dim, std::mt19937_64& rng);

  // H (n x d) -> logits (n x 1).
  ag::Var logits(ag::Graph& g, ag::Var words);
  ParameterList parameters() { return {&w1_, &b1_, &w2_, &b2_}; }

 private:
  Parameter w1_, b1_, w2_, b2_;
};

// The start and end heads (phi_1, phi_2) with softmax over positions.
class BoundaryPredictor {
 public:
  struct Output {
    ag::Var start_logits;
    ag::Var end_logits;
    ag::Var start_probs;  // n x 1
    ag::Var end_probs;    // n x 1
  };

  BoundaryPredictor() = default;
  BoundaryPredictor(int dim, std::mt19937_64& rng);

  Output forward(ag::Graph& g, ag::Var words);
  BoundaryDistributions predict(const Matrix& word_embeddings);
  BoundaryDistributions predict(const encoder::EncodedSequence& encoded) {
    return predict(encoded.word_embeddings());
  }

  ParameterList parameters();
  ParameterList start_parameters() { return start_.parameters(); }
  ParameterList end_parameters() { return end_.parameters(); }

 private:
  BoundaryHead start_;
  BoundaryHead end_;
};

BoundaryDistributions to_distributions(const BoundaryPredictor::Output& out);

// -log p_s[start] - log p_e[end], each probability clamped at kLogEps.
// `clamped` counts clamped terms.
double boundary_loss(const BoundaryDistributions& pred, std::span<const double> start_target,
                     std::span<const double> end_target, int* clamped = nullptr);
// Same quantity on the graph, computed from logits.
ag::Var boundary_loss(const BoundaryPredictor::Output& out, int start, int end, int* clamped = nullptr);

struct DecodeOptions {
  int h = 3;
  SpanBound bound = SpanBound::length;
  int max_spans = 5;
  double threshold = -6.0;
};

// Greedy non-overlapping selection over all admissible (i, j) by
// log p_s[i] + log p_e[j]; result ordered by start.
std::vector<SpanPrediction> decode_spans(const BoundaryDistributions& pred, const DecodeOptions& options);

}  // namespace fckt::boundary
