#pragma once

#include "fckt/autograd.hpp"
#include "fckt/config.hpp"
#include "fckt/corpus.hpp"
#include "fckt/metrics.hpp"
#include "fckt/model.hpp"
#include "fckt/serialization.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fckt::trainer {

// A step produced a non-finite value; `component` names it (ae, sp, cl,
// total or gradient).
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& component, const std::string& what)
      : std::runtime_error(what), component_(component) {}
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

class Adam {
 public:
  Adam(ParameterList params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  // Global L2 norm of all trainable gradients.
  double grad_norm() const;
  // Rescales gradients to `max_norm` when above it; returns true if it did.
  bool clip(double max_norm);
  bool grads_finite() const;
  void step();

  long steps() const { return steps_; }
  void set_steps(long s) { steps_ = s; }
  double learning_rate() const { return lr_; }

 private:
  ParameterList params_;
  double lr_, beta1_, beta2_, eps_;
  long steps_ = 0;
};

struct LossReport {
  double ae = 0.0;
  double sp = 0.0;
  double cl = 0.0;
  double lambda = 0.0;  // weight applied to cl
  double total = 0.0;   // ae + sp + lambda * cl
  std::vector<transfer::Path> paths;
  int clamped = 0;
  int contrast_active = 0;
  bool clipped = false;
  double grad_norm = 0.0;

  nlohmann::json to_json() const;
};

struct Objective {
  ag::Var total;
  ag::Var ae;
  ag::Var sp;
  ag::Var cl;
  LossReport report;
};

// L = L_ae + L_sp + lambda * L_cl over single-aspect examples, each encoded
// on its own. Contrastive negatives are the other aspects of the batch.
Objective split_objective(ag::Graph& g, FcktModel& model, std::span<const corpus::TrainingExample> batch,
                          const RunConfig& config, std::mt19937_64& gate_rng, encoder::Mode mode);

// The same objective over unsplit sentences: every sentence is encoded once
// and each of its aspects contributes its own terms.
Objective multi_aspect_objective(ag::Graph& g, FcktModel& model, std::span<const corpus::AnnotatedSentence> sentences,
                                 const RunConfig& config, std::mt19937_64& gate_rng, encoder::Mode mode);

// Forward, backward, clip, Adam update. Throws TrainingError on non-finite
// losses or gradients, leaving parameters untouched.
LossReport train_step(FcktModel& model, Adam& optimizer, std::span<const corpus::TrainingExample> batch,
                      const RunConfig& config, std::mt19937_64& rng);

struct TrainState {
  int epoch = 0;
  long adam_steps = 0;
  double best_valid_f1 = -1.0;
  int best_epoch = 0;
  std::string trainer_rng;
};

struct Checkpoint {
  RunConfig config;
  std::unique_ptr<FcktModel> model;
  TrainState state;
};

TensorArchive to_archive(FcktModel& model, const RunConfig& config, const TrainState& state);
Checkpoint from_archive(const TensorArchive& archive);
void save_checkpoint(const std::filesystem::path& path, FcktModel& model, const RunConfig& config,
                     const TrainState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct Dataset {
  std::vector<corpus::AnnotatedSentence> train;
  std::vector<corpus::AnnotatedSentence> valid;
};

// Loads data.train and data.valid; without data.valid a seeded tenth of the
// training sentences is held out.
Dataset load_training_data(const RunConfig& config);
Dataset hold_out(std::vector<corpus::AnnotatedSentence> sentences, double fraction, std::uint64_t seed);

struct TrainOptions {
  bool persist = true;       // write {output_dir}/{run_id}/...
  std::ostream* log = nullptr;
};

struct TrainResult {
  Checkpoint best;
  std::vector<nlohmann::json> metrics;  // one object per epoch
  std::filesystem::path run_dir;
};

// Epochs over shuffled split examples with early stopping on validation
// TSA-F1. The returned model carries the best epoch's weights.
TrainResult train(const Dataset& data, const RunConfig& config, const TrainOptions& options = {});

}  // namespace fckt::trainer
