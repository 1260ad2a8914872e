#include "fckt/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fckt::transfer {

Polarity SentimentDistribution::label() const {
  return static_cast<Polarity>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

RowVector span_representation(const Matrix& words, int start, int end) {
  if (start < 0 || end < start || end >= words.rows()) {
    throw std::out_of_range("span_representation: span (" + std::to_string(start) + "," + std::to_string(end) +
                            ") outside " + std::to_string(words.rows()) + " words");
  }
  return words.middleRows(start, end - start + 1).colwise().sum();
}

namespace {

// Row k of the result is H_0 + ... + H_{k-1}.
Matrix prefix_sums(const Matrix& words) {
  Matrix p(words.rows() + 1, words.cols());
  p.row(0).setZero();
  for (Eigen::Index k = 0; k < words.rows(); ++k) p.row(k + 1) = p.row(k) + words.row(k);
  return p;
}

RowVector expected_forward(const Matrix& words, const double* ps, const double* pe, int max_len) {
  if (max_len < 1) throw std::invalid_argument("expected span: maximum length must be >= 1");
  const Eigen::Index n = words.rows();
  const Matrix prefix = prefix_sums(words);
  RowVector out = RowVector::Zero(words.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (ps[i] == 0.0) continue;
    const Eigen::Index last = std::min<Eigen::Index>(n - 1, i + max_len - 1);
    for (Eigen::Index j = i; j <= last; ++j) out += (ps[i] * pe[j]) * (prefix.row(j + 1) - prefix.row(i));
  }
  return out;
}

}  // namespace

RowVector expected_span_representation(const Matrix& words, const boundary::BoundaryDistributions& pred, int h,
                                       boundary::SpanBound bound) {
  if (pred.size() != words.rows()) throw std::invalid_argument("expected span: distribution length != word count");
  if (h < 1) throw std::invalid_argument("expected span: h must be >= 1");
  return expected_forward(words, pred.start_probs.data(), pred.end_probs.data(), boundary::max_span_length(h, bound));
}

ag::Var expected_span(ag::Var words, ag::Var start_probs, ag::Var end_probs, int max_len) {
  ag::Graph& g = *words.graph();
  const Eigen::Index n = words.rows();
  if (start_probs.value().size() != n || end_probs.value().size() != n) {
    throw std::invalid_argument("expected span: distribution length != word count");
  }
  Matrix y = expected_forward(words.value(), start_probs.value().data(), end_probs.value().data(), max_len);
  const ag::Var in[] = {words, start_probs, end_probs};
  return g.make(std::move(y), in, [words, start_probs, end_probs, max_len](ag::Graph& g, std::size_t self) {
    const Matrix& h = words.value();
    const double* ps = start_probs.value().data();
    const double* pe = end_probs.value().data();
    const Eigen::Index n = h.rows();
    const RowVector up = g.grad(self).row(0);

    // q[k] = (H_0 + ... + H_{k-1}) . up
    const Vector proj = h * up.transpose();
    std::vector<double> q(static_cast<std::size_t>(n) + 1, 0.0);
    for (Eigen::Index k = 0; k < n; ++k) q[static_cast<std::size_t>(k) + 1] = q[static_cast<std::size_t>(k)] + proj(k);

    std::vector<double> dps(static_cast<std::size_t>(n), 0.0), dpe(static_cast<std::size_t>(n), 0.0);
    // coverage[k] = sum of p_s[i] p_e[j] over admissible spans containing k,
    // accumulated as a difference array
    std::vector<double> diff(static_cast<std::size_t>(n) + 1, 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index last = std::min<Eigen::Index>(n - 1, i + max_len - 1);
      for (Eigen::Index j = i; j <= last; ++j) {
        const double span_dot = q[static_cast<std::size_t>(j) + 1] - q[static_cast<std::size_t>(i)];
        dps[static_cast<std::size_t>(i)] += pe[j] * span_dot;
        dpe[static_cast<std::size_t>(j)] += ps[i] * span_dot;
        const double w = ps[i] * pe[j];
        diff[static_cast<std::size_t>(i)] += w;
        diff[static_cast<std::size_t>(j) + 1] -= w;
      }
    }
    g.accumulate_with(start_probs.id(), [&](Matrix& gs) {
      for (Eigen::Index i = 0; i < n; ++i) gs.data()[i] += dps[static_cast<std::size_t>(i)];
    });
    g.accumulate_with(end_probs.id(), [&](Matrix& ge) {
      for (Eigen::Index j = 0; j < n; ++j) ge.data()[j] += dpe[static_cast<std::size_t>(j)];
    });
    g.accumulate_with(words.id(), [&](Matrix& gh) {
      double coverage = 0.0;
      for (Eigen::Index k = 0; k < n; ++k) {
        coverage += diff[static_cast<std::size_t>(k)];
        gh.row(k) += coverage * up;
      }
    });
  });
}

namespace {

Matrix glorot(int rows, int cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

SentimentDistribution to_distribution(const Matrix& probs) {
  SentimentDistribution d;
  for (int k = 0; k < kNumPolarities; ++k) d.probs[static_cast<std::size_t>(k)] = probs.data()[k];
  return d;
}

}  // namespace

SentimentClassifier::SentimentClassifier(int dim, std::mt19937_64& rng)
    : w1_("classifier.hidden.weight", glorot(dim, dim, rng)),
      b1_("classifier.hidden.bias", Matrix::Zero(1, dim)),
      w2_("classifier.out.weight", glorot(dim, kNumPolarities, rng)),
      b2_("classifier.out.bias", Matrix::Zero(1, kNumPolarities)) {}

ag::Var SentimentClassifier::logits(ag::Graph& g, ag::Var representation) {
  ag::Var hidden = ag::tanh(ag::add_row(ag::matmul(representation, g.param(w1_)), g.param(b1_)));
  return ag::add_row(ag::matmul(hidden, g.param(w2_)), g.param(b2_));
}

SentimentDistribution SentimentClassifier::classify(const RowVector& representation) {
  ag::Graph g;
  return to_distribution(ag::softmax_rows(logits(g, g.constant(representation))).value());
}

SentimentDistribution classify_real(const Matrix& words, int start, int end, SentimentClassifier& classifier) {
  return classifier.classify(span_representation(words, start, end));
}

SentimentDistribution classify_expected(const Matrix& words, const boundary::BoundaryDistributions& pred, int h,
                                        SentimentClassifier& classifier, boundary::SpanBound bound) {
  return classifier.classify(expected_span_representation(words, pred, h, bound));
}

MixMode parse_mix_mode(std::string_view s) {
  if (s == "gated") return MixMode::gated;
  if (s == "convex") return MixMode::convex;
  throw std::invalid_argument("transfer.mix_mode must be gated or convex");
}

GateGranularity parse_granularity(std::string_view s) {
  if (s == "example") return GateGranularity::example;
  if (s == "batch") return GateGranularity::batch;
  throw std::invalid_argument("transfer.gate_granularity must be example or batch");
}

std::string_view to_string(MixMode m) { return m == MixMode::gated ? "gated" : "convex"; }
std::string_view to_string(GateGranularity g) { return g == GateGranularity::example ? "example" : "batch"; }
std::string_view to_string(Path p) {
  switch (p) {
    case Path::real: return "real";
    case Path::expected: return "expected";
    case Path::convex: return "convex";
  }
  return "real";
}

MixedLoss mixed_sentiment_loss(ag::Graph& g, std::span<const SentimentItem> batch, const TransferOptions& options,
                               std::mt19937_64& rng, SentimentClassifier& classifier) {
  if (batch.empty()) throw std::invalid_argument("mixed_sentiment_loss: empty batch");
  const double xi = options.effective_xi();
  if (xi < 0.0 || xi > 1.0) throw std::invalid_argument("transfer.xi must lie in [0, 1]");
  const int max_len = boundary::max_span_length(options.h, options.bound);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  MixedLoss out;
  std::vector<ag::Var> terms;
  terms.reserve(batch.size());
  const bool gated = options.mix_mode == MixMode::gated || !options.enabled;
  double batch_draw = 0.0;
  if (gated && options.enabled && options.granularity == GateGranularity::batch) batch_draw = unit(rng);

  for (const SentimentItem& item : batch) {
    const auto target = static_cast<Eigen::Index>(item.gold);
    auto real_logits = [&] { return classifier.logits(g, ag::sum_rows(item.words, item.start, item.end)); };
    auto expected_logits = [&] {
      return classifier.logits(g, expected_span(item.words, item.start_probs, item.end_probs, max_len));
    };
    if (!gated) {
      ag::Var mixed = ag::add(ag::scale(ag::softmax_rows(real_logits()), xi),
                              ag::scale(ag::softmax_rows(expected_logits()), 1.0 - xi));
      terms.push_back(ag::nll_from_probs(mixed, target, boundary::kLogEps, &out.clamped));
      out.paths.push_back(Path::convex);
      continue;
    }
    double p = 0.0;  // transfer disabled: always the gold span
    if (options.enabled) p = options.granularity == GateGranularity::batch ? batch_draw : unit(rng);
    const bool real = p <= xi;
    terms.push_back(ag::nll_from_logits(real ? real_logits() : expected_logits(), target, boundary::kLogEps,
                                        &out.clamped));
    out.paths.push_back(real ? Path::real : Path::expected);
  }
  out.loss = ag::add_scalars(terms);
  return out;
}

}  // namespace fckt::transfer
