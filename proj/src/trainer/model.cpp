#include "fckt/model.hpp"

namespace fckt {

namespace {
// Head and classifier initialization draws from a stream separate from the
// encoder's so the backbone init does not depend on them.
constexpr std::uint64_t kHeadStream = 0xA24BAED4963EE407ULL;
}  // namespace

FcktModel::FcktModel(std::unique_ptr<encoder::TransformerEncoder> enc, std::uint64_t seed) : encoder_(std::move(enc)) {
  std::mt19937_64 rng(seed ^ kHeadStream);
  boundary_ = boundary::BoundaryPredictor(encoder_->dim(), rng);
  classifier_ = transfer::SentimentClassifier(encoder_->dim(), rng);
}

std::unique_ptr<FcktModel> FcktModel::create(const RunConfig& config,
                                             std::span<const corpus::AnnotatedSentence> vocabulary_source) {
  const std::uint64_t seed = config.trainer.seed;
  std::unique_ptr<encoder::TransformerEncoder> enc;
  if (config.encoder.kind == encoder::Kind::pretrained) {
    enc = encoder::TransformerEncoder::load_pretrained(config.encoder.path, config.encoder, seed);
  } else {
    std::vector<std::vector<std::string>> sentences;
    sentences.reserve(vocabulary_source.size());
    for (const auto& s : vocabulary_source) sentences.push_back(s.tokens);
    auto vocab = std::make_unique<encoder::WordVocabulary>(encoder::WordVocabulary::build(sentences));
    enc = std::make_unique<encoder::TransformerEncoder>(config.encoder, std::move(vocab), seed);
  }
  return std::make_unique<FcktModel>(std::move(enc), seed);
}

FcktModel::SentenceGraph FcktModel::forward(ag::Graph& g, std::span<const std::string> tokens, encoder::Mode mode) {
  SentenceGraph out;
  out.tokens = encoder_->tokenize(tokens);
  out.words = encoder_->forward_words(g, out.tokens, mode);
  out.boundary = boundary_.forward(g, out.words);
  return out;
}

FcktModel::SentencePrediction FcktModel::predict(std::span<const std::string> tokens,
                                                 const boundary::DecodeOptions& options) {
  ag::Graph g;
  const SentenceGraph sg = forward(g, tokens, encoder::Mode::inference);
  SentencePrediction out;
  out.distributions = boundary::to_distributions(sg.boundary);
  out.words = sg.words.value();
  for (const auto& span : boundary::decode_spans(out.distributions, options)) {
    out.aspects.push_back({span, transfer::classify_real(out.words, span.start, span.end, classifier_)});
  }
  return out;
}

ParameterList FcktModel::parameters() {
  ParameterList out = encoder_->parameters();
  for (Parameter* p : boundary_.parameters()) out.push_back(p);
  for (Parameter* p : classifier_.parameters()) out.push_back(p);
  return out;
}

std::vector<metrics::SentenceSpans> predict_spans(FcktModel& model,
                                                  std::span<const corpus::AnnotatedSentence> sentences,
                                                  const boundary::DecodeOptions& options) {
  std::vector<metrics::SentenceSpans> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    metrics::SentenceSpans spans;
    for (const auto& a : model.predict(s.tokens, options).aspects) {
      spans.push_back({a.span.start, a.span.end, a.sentiment.label()});
    }
    out.push_back(std::move(spans));
  }
  return out;
}

metrics::EvalReport evaluate(FcktModel& model, std::span<const corpus::AnnotatedSentence> sentences,
                             const RunConfig& config) {
  std::vector<metrics::SentenceSpans> gold, pred;
  std::vector<std::pair<corpus::Polarity, corpus::Polarity>> sp_pairs;
  const auto options = config.decode_options();
  for (const auto& s : sentences) {
    const auto prediction = model.predict(s.tokens, options);
    metrics::SentenceSpans spans;
    for (const auto& a : prediction.aspects) spans.push_back({a.span.start, a.span.end, a.sentiment.label()});
    for (const auto& a : s.aspects) {
      if (config.metrics.sp_condition == SpCondition::gold) {
        const auto dist = transfer::classify_real(prediction.words, a.start, a.end, model.classifier());
        sp_pairs.emplace_back(a.polarity, dist.label());
      } else {
        for (const auto& p : spans) {
          if (p.start == a.start && p.end == a.end) {
            sp_pairs.emplace_back(a.polarity, p.polarity);
            break;
          }
        }
      }
    }
    gold.push_back(metrics::gold_spans(s));
    pred.push_back(std::move(spans));
  }
  metrics::EvalReport report = metrics::tsa_scores(gold, pred);
  report.sp_accuracy = metrics::sp_accuracy(sp_pairs, &report.warnings);
  report.sp_total = sp_pairs.size();
  for (const auto& [g, p] : sp_pairs) report.sp_correct += g == p ? 1 : 0;
  return report;
}

}  // namespace fckt
