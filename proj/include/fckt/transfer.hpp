#pragma once

#include "fckt/autograd.hpp"
#include "fckt/boundary.hpp"
#include "fckt/corpus.hpp"
#include "fckt/encoder.hpp"
#include "fckt/tensor.hpp"

#include <array>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace fckt::transfer {

using corpus::kNumPolarities;
using corpus::Polarity;

struct SentimentDistribution {
  std::array<double, kNumPolarities> probs{};

  Polarity label() const;
  double sum() const { return probs[0] + probs[1] + probs[2]; }
};

// Sum of word rows start..end inclusive.
RowVector span_representation(const Matrix& words, int start, int end);

// sum_i sum_{j=i}^{i+L-1} p_s[i] p_e[j] sum_{k=i}^{j} H_k with L the maximum
// span length, evaluated in O(n L d) through prefix sums of H.
RowVector expected_span_representation(const Matrix& words, const boundary::BoundaryDistributions& pred, int h,
                                       boundary::SpanBound bound = boundary::SpanBound::length);

// Graph op with the same value; backward is also O(n L d).
// `start_probs` / `end_probs` may be n x 1 or 1 x n.
ag::Var expected_span(ag::Var words, ag::Var start_probs, ag::Var end_probs, int max_len);

// C_theta: d -> d (tanh) -> K.
class SentimentClassifier {
 public:
  SentimentClassifier() = default;
  SentimentClassifier(int dim, std::mt19937_64& rng);

  ag::Var logits(ag::Graph& g, ag::Var representation);
  SentimentDistribution classify(const RowVector& representation);
  ParameterList parameters() { return {&w1_, &b1_, &w2_, &b2_}; }

 private:
  Parameter w1_, b1_, w2_, b2_;
};

SentimentDistribution classify_real(const Matrix& words, int start, int end, SentimentClassifier& classifier);
SentimentDistribution classify_expected(const Matrix& words, const boundary::BoundaryDistributions& pred, int h,
                                        SentimentClassifier& classifier,
                                        boundary::SpanBound bound = boundary::SpanBound::length);

enum class MixMode { gated, convex };
enum class GateGranularity { example, batch };
enum class Path { real, expected, convex };

MixMode parse_mix_mode(std::string_view s);
GateGranularity parse_granularity(std::string_view s);
std::string_view to_string(MixMode m);
std::string_view to_string(GateGranularity g);
std::string_view to_string(Path p);

struct TransferOptions {
  double xi = 0.8;  // fraction of examples on the gold-span path
  int h = 3;
  boundary::SpanBound bound = boundary::SpanBound::length;
  MixMode mix_mode = MixMode::gated;
  GateGranularity granularity = GateGranularity::example;
  bool enabled = true;  // false: gold spans only, no expected path

  double effective_xi() const { return enabled ? xi : 1.0; }
};

// One element of a sentiment batch, already on the graph.
struct SentimentItem {
  ag::Var words;        // n x d
  ag::Var start_probs;  // n x 1
  ag::Var end_probs;    // n x 1
  int start = 0;
  int end = 0;
  Polarity gold = Polarity::neutral;
};

struct MixedLoss {
  ag::Var loss;
  std::vector<Path> paths;
  int clamped = 0;
};

// Gated: per example (or per batch) draw p ~ U(0,1); p <= xi takes the gold
// span, otherwise the expected span. Convex: -log(xi*y_real + (1-xi)*y_expected).
// With the transfer disabled no random values are drawn.
MixedLoss mixed_sentiment_loss(ag::Graph& g, std::span<const SentimentItem> batch, const TransferOptions& options,
                               std::mt19937_64& rng, SentimentClassifier& classifier);

}  // namespace fckt::transfer
