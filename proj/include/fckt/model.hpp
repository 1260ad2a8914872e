#pragma once

#include "fckt/autograd.hpp"
#include "fckt/boundary.hpp"
#include "fckt/config.hpp"
#include "fckt/corpus.hpp"
#include "fckt/encoder.hpp"
#include "fckt/metrics.hpp"
#include "fckt/transfer.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fckt {

// Encoder, boundary heads (phi_1, phi_2) and sentiment classifier (theta).
class FcktModel {
 public:
  FcktModel(std::unique_ptr<encoder::TransformerEncoder> encoder, std::uint64_t seed);

  // Builds the backbone named by config.encoder: a toy encoder with a word
  // vocabulary over `vocabulary_source`, or a pretrained one from disk.
  static std::unique_ptr<FcktModel> create(const RunConfig& config,
                                           std::span<const corpus::AnnotatedSentence> vocabulary_source);

  struct SentenceGraph {
    encoder::Tokenized tokens;
    ag::Var words;  // n x d word-level rows
    boundary::BoundaryPredictor::Output boundary;
  };

  SentenceGraph forward(ag::Graph& g, std::span<const std::string> tokens, encoder::Mode mode);

  struct PredictedAspect {
    boundary::SpanPrediction span;
    transfer::SentimentDistribution sentiment;
  };
  struct SentencePrediction {
    std::vector<PredictedAspect> aspects;
    boundary::BoundaryDistributions distributions;
    Matrix words;
  };

  // Inference: decode spans, then classify each decoded span on its own
  // embeddings.
  SentencePrediction predict(std::span<const std::string> tokens, const boundary::DecodeOptions& options);

  ParameterList parameters();
  encoder::TransformerEncoder& encoder() { return *encoder_; }
  boundary::BoundaryPredictor& boundary() { return boundary_; }
  transfer::SentimentClassifier& classifier() { return classifier_; }
  int dim() const { return encoder_->dim(); }

 private:
  std::unique_ptr<encoder::TransformerEncoder> encoder_;
  boundary::BoundaryPredictor boundary_;
  transfer::SentimentClassifier classifier_;
};

// Decodes and classifies every sentence, then scores against the gold
// annotations. SP accuracy follows config.metrics.sp_condition.
metrics::EvalReport evaluate(FcktModel& model, std::span<const corpus::AnnotatedSentence> sentences,
                             const RunConfig& config);

std::vector<metrics::SentenceSpans> predict_spans(FcktModel& model,
                                                  std::span<const corpus::AnnotatedSentence> sentences,
                                                  const boundary::DecodeOptions& options);

}  // namespace fckt
