#pragma once

#include "fckt/boundary.hpp"
#include "fckt/contrast.hpp"
#include "fckt/encoder.hpp"
#include "fckt/transfer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fckt {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string train;
  std::string valid;
  std::string test;
  std::string format = "jsonl";
};

struct ContrastConfig {
  bool enabled = true;
  double tau = 0.07;
  contrast::Denominator denominator = contrast::Denominator::with_positive;
};

struct DecodeConfig {
  int max_spans = 5;
  double threshold = -6.0;
};

struct TrainerConfig {
  double learning_rate = 1e-3;
  int batch_size = 16;
  double lambda = 0.1;
  int epochs = 30;
  int patience = 5;
  double clip_norm = 1.0;  // 0 disables clipping
  std::uint64_t seed = 13;
  bool keep_all_checkpoints = false;
};

enum class SpCondition { gold, extracted };

struct MetricsConfig {
  SpCondition sp_condition = SpCondition::gold;
};

struct RunConfig {
  DataConfig data;
  encoder::EncoderConfig encoder;
  DecodeConfig decode;
  ContrastConfig contrast;
  transfer::TransferOptions transfer;
  TrainerConfig trainer;
  MetricsConfig metrics;
  std::string run_id = "run";
  std::string output_dir = "runs";

  boundary::DecodeOptions decode_options() const {
    return {transfer.h, transfer.bound, decode.max_spans, decode.threshold};
  }
  // The weight actually applied to the contrastive term.
  double effective_lambda() const { return contrast.enabled ? trainer.lambda : 0.0; }

  // Throws ConfigError naming the first key outside its range.
  void validate() const;

  // Flat object keyed by dotted names, e.g. {"transfer.xi": 0.8, ...}.
  nlohmann::json to_json() const;
  // Accepts flat dotted keys, nested objects, or a mix. Unknown keys throw.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  // Sets one dotted key from JSON or from command-line text.
  void set(const std::string& key, const nlohmann::json& value);
  void set_from_string(const std::string& key, const std::string& text);
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
  std::function<nlohmann::json(const RunConfig&)> get;
};

const std::vector<ConfigKey>& config_keys();

std::string_view to_string(SpCondition c);

}  // namespace fckt
