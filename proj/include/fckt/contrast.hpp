#pragma once

// Token-level InfoNCE over aspect boundary embeddings.
//
// For each gold aspect k with start embedding s_k and end embedding e_k, and
// the other aspects m of the batch:
//
//   loss_k = -log exp(cos(s_k, e_k)/tau) / Z_k
//   Z_k    = [exp(cos(s_k, e_k)/tau)] + sum_m exp(cos(s_k, e_m)/tau) + sum_m exp(cos(e_k, s_m)/tau)
//
// The bracketed term is present for Denominator::with_positive only.
// Aspects without negatives contribute nothing.

#include "fckt/autograd.hpp"
#include "fckt/corpus.hpp"
#include "fckt/encoder.hpp"
#include "fckt/tensor.hpp"

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fckt::contrast {

enum class Denominator { with_positive, negatives_only };
Denominator parse_denominator(std::string_view s);
std::string_view to_string(Denominator d);

struct PairBatch {
  std::vector<std::pair<RowVector, RowVector>> positives;
  // per positive: end embeddings of the other aspects
  std::vector<std::vector<RowVector>> negatives_for_start;
  // per positive: start embeddings of the other aspects
  std::vector<std::vector<RowVector>> negatives_for_end;

  std::size_t active() const;
};

// Identity of an aspect occurrence; two entries with the same source and
// span are the same aspect and never serve as each other's negatives.
struct AspectKey {
  std::string source_id;
  int start = 0;
  int end = 0;
};

// For each aspect, indices of the other aspects usable as negatives.
std::vector<std::vector<int>> negative_partners(std::span<const AspectKey> keys);

PairBatch build_pairs(std::span<const corpus::TrainingExample> examples,
                      std::span<const encoder::EncodedSequence> encoded);

struct InfoNceTerms {
  std::vector<int> anchor_start;  // row of s_k in the pool
  std::vector<int> anchor_end;    // row of e_k in the pool
  std::vector<std::vector<int>> start_negatives;  // rows paired with s_k
  std::vector<std::vector<int>> end_negatives;    // rows paired with e_k
};

struct InfoNceResult {
  double loss = 0.0;
  Matrix grad;  // d loss / d pool, filled when requested
  int active = 0;
};

// Evaluates the loss over embeddings stored as rows of `pool`. Throws
// std::domain_error on a zero-norm embedding.
InfoNceResult info_nce(const Matrix& pool, const InfoNceTerms& terms, double tau, Denominator mode, bool want_grad);

double contrastive_loss(const PairBatch& pairs, double tau, Denominator mode = Denominator::with_positive);

// Graph version over a pool node (rows are embeddings).
ag::Var contrastive_loss(ag::Var pool, InfoNceTerms terms, double tau, Denominator mode, int* active = nullptr);

double cosine(const RowVector& a, const RowVector& b);

}  // namespace fckt::contrast
