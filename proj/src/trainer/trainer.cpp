#include "fckt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace fckt::trainer {

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(ParameterList params, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Parameter* p : params) {
    if (p->frozen) continue;
    if (p->adam_m.size() != p->value.size()) p->adam_m = Matrix::Zero(p->value.rows(), p->value.cols());
    if (p->adam_v.size() != p->value.size()) p->adam_v = Matrix::Zero(p->value.rows(), p->value.cols());
    params_.push_back(p);
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

double Adam::grad_norm() const {
  double sq = 0.0;
  for (const Parameter* p : params_) {
    if (p->grad.size() == p->value.size()) sq += p->grad.squaredNorm();
  }
  return std::sqrt(sq);
}

bool Adam::clip(double max_norm) {
  if (max_norm <= 0.0) return false;
  const double norm = grad_norm();
  if (norm <= max_norm) return false;
  const double scale = max_norm / norm;
  for (Parameter* p : params_) {
    if (p->grad.size() == p->value.size()) p->grad *= scale;
  }
  return true;
}

bool Adam::grads_finite() const {
  return std::all_of(params_.begin(), params_.end(),
                     [](const Parameter* p) { return p->grad.size() == 0 || p->grad.allFinite(); });
}

void Adam::step() {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (Parameter* p : params_) {
    if (p->grad.size() != p->value.size()) continue;
    p->adam_m = beta1_ * p->adam_m + (1.0 - beta1_) * p->grad;
    p->adam_v = beta2_ * p->adam_v + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
    p->value.array() -= lr_ * (p->adam_m.array() / c1) / ((p->adam_v.array() / c2).sqrt() + eps_);
  }
}

// ---------------------------------------------------------------------------
// objective

nlohmann::json LossReport::to_json() const {
  std::size_t real = 0, expected = 0, convex = 0;
  for (transfer::Path p : paths) {
    if (p == transfer::Path::real) ++real;
    if (p == transfer::Path::expected) ++expected;
    if (p == transfer::Path::convex) ++convex;
  }
  return {{"ae", ae},
          {"sp", sp},
          {"cl", cl},
          {"lambda", lambda},
          {"total", total},
          {"paths", {{"real", real}, {"expected", expected}, {"convex", convex}}},
          {"clamped", clamped},
          {"contrast_active", contrast_active},
          {"clipped", clipped},
          {"grad_norm", grad_norm}};
}

namespace {

// Per-aspect pieces gathered before the losses are combined.
struct AspectTerm {
  ag::Var words;
  contrast::AspectKey key;
};

Objective combine(ag::Graph& g, FcktModel& model, std::vector<ag::Var>& ae_terms,
                  std::vector<transfer::SentimentItem>& items, std::vector<AspectTerm>& aspects, int clamped,
                  const RunConfig& config, std::mt19937_64& gate_rng) {
  Objective out;
  out.report.clamped = clamped;
  out.ae = ag::add_scalars(ae_terms);

  transfer::MixedLoss mixed = transfer::mixed_sentiment_loss(g, items, config.transfer, gate_rng, model.classifier());
  out.sp = mixed.loss;
  out.report.paths = std::move(mixed.paths);
  out.report.clamped += mixed.clamped;

  const double lambda = config.effective_lambda();
  out.report.lambda = lambda;
  if (config.contrast.enabled && aspects.size() >= 2) {
    std::vector<contrast::AspectKey> keys;
    std::vector<ag::Var> rows;
    keys.reserve(aspects.size());
    rows.reserve(2 * aspects.size());
    for (const AspectTerm& a : aspects) {
      keys.push_back(a.key);
      const std::vector<int> idx{a.key.start, a.key.end};
      rows.push_back(ag::gather_rows(a.words, idx));
    }
    const ag::Var pool = ag::concat_rows(rows);
    const auto partners = contrast::negative_partners(keys);
    contrast::InfoNceTerms terms;
    for (std::size_t k = 0; k < aspects.size(); ++k) {
      terms.anchor_start.push_back(static_cast<int>(2 * k));
      terms.anchor_end.push_back(static_cast<int>(2 * k + 1));
      terms.start_negatives.emplace_back();
      terms.end_negatives.emplace_back();
      for (int m : partners[k]) {
        terms.start_negatives.back().push_back(2 * m + 1);
        terms.end_negatives.back().push_back(2 * m);
      }
    }
    out.cl = contrast::contrastive_loss(pool, std::move(terms), config.contrast.tau, config.contrast.denominator,
                                        &out.report.contrast_active);
  } else {
    out.cl = g.constant(Matrix::Zero(1, 1));
  }

  out.total = ag::add_scalars(std::vector<ag::Var>{out.ae, out.sp, ag::scale(out.cl, lambda)});
  out.report.ae = out.ae.scalar();
  out.report.sp = out.sp.scalar();
  out.report.cl = out.cl.scalar();
  out.report.total = out.total.scalar();
  return out;
}

void add_aspect(const FcktModel::SentenceGraph& sg, int start, int end, corpus::Polarity polarity,
                const std::string& source_id, std::vector<ag::Var>& ae_terms,
                std::vector<transfer::SentimentItem>& items, std::vector<AspectTerm>& aspects, int& clamped) {
  ae_terms.push_back(boundary::boundary_loss(sg.boundary, start, end, &clamped));
  items.push_back({sg.words, sg.boundary.start_probs, sg.boundary.end_probs, start, end, polarity});
  aspects.push_back({sg.words, {source_id, start, end}});
}

}  // namespace

Objective split_objective(ag::Graph& g, FcktModel& model, std::span<const corpus::TrainingExample> batch,
                          const RunConfig& config, std::mt19937_64& gate_rng, encoder::Mode mode) {
  if (batch.empty()) throw std::invalid_argument("split_objective: empty batch");
  std::vector<ag::Var> ae_terms;
  std::vector<transfer::SentimentItem> items;
  std::vector<AspectTerm> aspects;
  int clamped = 0;
  for (const auto& ex : batch) {
    const auto sg = model.forward(g, ex.tokens, mode);
    add_aspect(sg, ex.start_index(), ex.end_index(), ex.polarity, ex.origin.source_id, ae_terms, items, aspects,
               clamped);
  }
  return combine(g, model, ae_terms, items, aspects, clamped, config, gate_rng);
}

Objective multi_aspect_objective(ag::Graph& g, FcktModel& model, std::span<const corpus::AnnotatedSentence> sentences,
                                 const RunConfig& config, std::mt19937_64& gate_rng, encoder::Mode mode) {
  std::vector<ag::Var> ae_terms;
  std::vector<transfer::SentimentItem> items;
  std::vector<AspectTerm> aspects;
  int clamped = 0;
  for (const auto& s : sentences) {
    if (s.aspects.empty()) continue;
    const auto sg = model.forward(g, s.tokens, mode);
    for (const auto& a : s.aspects) {
      add_aspect(sg, a.start, a.end, a.polarity, s.source_id, ae_terms, items, aspects, clamped);
    }
  }
  if (items.empty()) throw std::invalid_argument("multi_aspect_objective: no aspects");
  return combine(g, model, ae_terms, items, aspects, clamped, config, gate_rng);
}

LossReport train_step(FcktModel& model, Adam& optimizer, std::span<const corpus::TrainingExample> batch,
                      const RunConfig& config, std::mt19937_64& rng) {
  optimizer.zero_grad();
  ag::Graph g;
  Objective obj = split_objective(g, model, batch, config, rng, encoder::Mode::training);
  LossReport& r = obj.report;
  const std::pair<const char*, double> parts[] = {{"ae", r.ae}, {"sp", r.sp}, {"cl", r.cl}, {"total", r.total}};
  for (const auto& [name, value] : parts) {
    if (!std::isfinite(value)) throw TrainingError(name, std::string("non-finite ") + name + " loss");
  }
  g.backward(obj.total);
  if (!optimizer.grads_finite()) {
    optimizer.zero_grad();
    throw TrainingError("gradient", "non-finite gradient");
  }
  r.grad_norm = optimizer.grad_norm();
  r.clipped = optimizer.clip(config.trainer.clip_norm);
  optimizer.step();
  return r;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr const char* kCheckpointFormat = "fckt-checkpoint";

template <typename Rng>
std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

template <typename Rng>
void restore_rng(Rng& rng, const std::string& state) {
  if (state.empty()) return;
  std::istringstream is(state);
  is >> rng;
  if (!is) throw ArchiveError("corrupt random generator state");
}

std::unique_ptr<encoder::Tokenizer> tokenizer_from_json(const nlohmann::json& j) {
  const std::string type = j.at("type");
  if (type == "word") return std::make_unique<encoder::WordVocabulary>(encoder::WordVocabulary::from_json(j));
  if (type == "wordpiece") {
    return std::make_unique<encoder::WordPieceTokenizer>(j.at("words").get<std::vector<std::string>>(),
                                                         j.value("lowercase", true));
  }
  throw ArchiveError("unknown tokenizer type '" + type + "'");
}

}  // namespace

TensorArchive to_archive(FcktModel& model, const RunConfig& config, const TrainState& state) {
  TensorArchive a;
  a.meta = {{"format", kCheckpointFormat},
            {"config", config.to_json()},
            {"encoder", model.encoder().config().to_json()},
            {"tokenizer", model.encoder().tokenizer().to_json()},
            {"state",
             {{"epoch", state.epoch},
              {"adam_steps", state.adam_steps},
              {"best_valid_f1", state.best_valid_f1},
              {"best_epoch", state.best_epoch},
              {"trainer_rng", state.trainer_rng}}},
            {"dropout_rng", rng_state(model.encoder().dropout_rng())}};
  for (Parameter* p : model.parameters()) {
    a.tensors[p->name] = p->value;
    if (p->adam_m.size() == p->value.size()) a.tensors["adam_m/" + p->name] = p->adam_m;
    if (p->adam_v.size() == p->value.size()) a.tensors["adam_v/" + p->name] = p->adam_v;
  }
  return a;
}

Checkpoint from_archive(const TensorArchive& archive) {
  const auto& meta = archive.meta;
  if (meta.value("format", "") != kCheckpointFormat) throw ArchiveError("not a model checkpoint");
  Checkpoint c;
  try {
    c.config = RunConfig::from_json(meta.at("config"));
    auto enc_config = encoder::EncoderConfig::from_json(meta.at("encoder"));
    auto enc = std::make_unique<encoder::TransformerEncoder>(enc_config, tokenizer_from_json(meta.at("tokenizer")),
                                                             c.config.trainer.seed);
    restore_rng(enc->dropout_rng(), meta.value("dropout_rng", ""));
    c.model = std::make_unique<FcktModel>(std::move(enc), c.config.trainer.seed);
    const auto& s = meta.at("state");
    c.state.epoch = s.at("epoch");
    c.state.adam_steps = s.at("adam_steps");
    c.state.best_valid_f1 = s.at("best_valid_f1");
    c.state.best_epoch = s.at("best_epoch");
    c.state.trainer_rng = s.at("trainer_rng");
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(std::string("malformed checkpoint metadata: ") + e.what());
  }
  for (Parameter* p : c.model->parameters()) {
    const auto it = archive.tensors.find(p->name);
    if (it == archive.tensors.end()) throw ArchiveError("checkpoint lacks tensor '" + p->name + "'");
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw ArchiveError("checkpoint tensor '" + p->name + "' has the wrong shape");
    }
    p->value = it->second;
    if (auto m = archive.tensors.find("adam_m/" + p->name); m != archive.tensors.end()) p->adam_m = m->second;
    if (auto v = archive.tensors.find("adam_v/" + p->name); v != archive.tensors.end()) p->adam_v = v->second;
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, FcktModel& model, const RunConfig& config,
                     const TrainState& state) {
  write_archive(path, to_archive(model, config, state));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return from_archive(read_archive(path)); }

// ---------------------------------------------------------------------------
// data

Dataset hold_out(std::vector<corpus::AnnotatedSentence> sentences, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_valid = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(sentences.size())));
  if (sentences.size() >= 2) n_valid = std::clamp<std::size_t>(n_valid, 1, sentences.size() - 1);
  std::vector<char> is_valid(sentences.size(), 0);
  for (std::size_t i = 0; i < n_valid && i < order.size(); ++i) is_valid[order[i]] = 1;
  Dataset d;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    (is_valid[i] ? d.valid : d.train).push_back(std::move(sentences[i]));
  }
  return d;
}

Dataset load_training_data(const RunConfig& config) {
  if (config.data.train.empty()) throw ConfigError("data.train is required");
  const auto format = corpus::parse_format(config.data.format);
  auto train = corpus::load_dataset(config.data.train, format);
  if (config.data.valid.empty()) return hold_out(std::move(train), 0.1, config.trainer.seed);
  Dataset d;
  d.train = std::move(train);
  d.valid = corpus::load_dataset(config.data.valid, format);
  return d;
}

// ---------------------------------------------------------------------------
// training loop

TrainResult train(const Dataset& data, const RunConfig& config, const TrainOptions& options) {
  config.validate();
  const auto split = corpus::split_sentences(data.train);
  if (split.examples.empty()) throw corpus::DataError("training data contains no aspects");

  TrainResult result;
  std::unique_ptr<FcktModel> model = FcktModel::create(config, data.train);
  Adam adam(model->parameters(), config.trainer.learning_rate);
  std::mt19937_64 rng(config.trainer.seed);

  if (options.persist) {
    result.run_dir = std::filesystem::path(config.output_dir) / config.run_id;
    std::filesystem::create_directories(result.run_dir);
    write_text_atomic(result.run_dir / "config.snapshot", config.to_json().dump(2) + "\n");
    std::ofstream(result.run_dir / "metrics.jsonl", std::ios::trunc);
  }

  TrainState state;
  TensorArchive best;
  auto snapshot = [&] {
    state.adam_steps = adam.steps();
    state.trainer_rng = rng_state(rng);
    return to_archive(*model, config, state);
  };

  auto record = [&](nlohmann::json line) {
    if (options.persist) {
      std::ofstream out(result.run_dir / "metrics.jsonl", std::ios::app);
      out << line.dump() << "\n";
    }
    if (options.log != nullptr) *options.log << line.dump() << "\n";
    result.metrics.push_back(std::move(line));
  };

  auto validate_epoch = [&]() -> metrics::EvalReport {
    if (data.valid.empty()) return metrics::EvalReport{};
    return evaluate(*model, data.valid, config);
  };

  if (config.trainer.epochs == 0) {
    const auto report = validate_epoch();
    state.best_valid_f1 = report.f1;
    best = snapshot();
    record({{"epoch", 0}, {"valid", report.to_json()}});
    if (options.persist) write_archive(result.run_dir / "epoch_0.ckpt", best);
  }

  std::vector<std::size_t> order(split.examples.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch_size = static_cast<std::size_t>(config.trainer.batch_size);
  int since_best = 0;

  for (int epoch = 1; epoch <= config.trainer.epochs; ++epoch) {
    state.epoch = epoch;
    std::shuffle(order.begin(), order.end(), rng);
    double ae = 0.0, sp = 0.0, cl = 0.0, total = 0.0;
    std::size_t batches = 0, clipped = 0;
    std::vector<corpus::TrainingExample> batch;
    for (std::size_t b = 0; b < order.size(); b += batch_size) {
      batch.clear();
      for (std::size_t i = b; i < std::min(order.size(), b + batch_size); ++i) batch.push_back(split.examples[order[i]]);
      const LossReport r = train_step(*model, adam, batch, config, rng);
      ae += r.ae;
      sp += r.sp;
      cl += r.cl;
      total += r.total;
      clipped += r.clipped ? 1 : 0;
      ++batches;
    }
    const double nb = static_cast<double>(batches);
    const auto report = validate_epoch();
    const bool improved = report.f1 > state.best_valid_f1;
    if (improved) {
      state.best_valid_f1 = report.f1;
      state.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    record({{"epoch", epoch},
            {"train", {{"ae", ae / nb}, {"sp", sp / nb}, {"cl", cl / nb}, {"total", total / nb},
                       {"batches", batches}, {"clipped_batches", clipped}}},
            {"valid", report.to_json()},
            {"best_epoch", state.best_epoch}});
    if (improved || config.trainer.keep_all_checkpoints) {
      TensorArchive a = snapshot();
      if (options.persist) write_archive(result.run_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"), a);
      if (improved) best = std::move(a);
    }
    if (config.trainer.patience > 0 && since_best >= config.trainer.patience) break;
  }

  result.best = from_archive(best);
  if (options.persist) write_archive(result.run_dir / "best.ckpt", best);
  return result;
}

}  // namespace fckt::trainer
