#include "fckt/config.hpp"

#include <cmath>
#include <fstream>

namespace fckt {

using json = nlohmann::json;

std::string_view to_string(SpCondition c) { return c == SpCondition::gold ? "gold" : "extracted"; }

namespace {

SpCondition parse_sp_condition(const std::string& s) {
  if (s == "gold") return SpCondition::gold;
  if (s == "extracted") return SpCondition::extracted;
  throw std::invalid_argument("metrics.sp_condition must be gold or extracted");
}

template <typename T>
T as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + v.dump());
  }
}

template <typename T, typename Field>
ConfigKey scalar(std::string name, std::string help, Field field) {
  ConfigKey k;
  k.name = name;
  k.help = std::move(help);
  k.set = [field, name](RunConfig& c, const json& v) { field(c) = as<T>(v, name); };
  k.get = [field](const RunConfig& c) { return json(field(const_cast<RunConfig&>(c))); };
  return k;
}

template <typename Parse, typename Print, typename Field>
ConfigKey choice(std::string name, std::string help, Field field, Parse parse, Print print) {
  ConfigKey k;
  k.name = name;
  k.help = std::move(help);
  k.set = [field, parse, name](RunConfig& c, const json& v) {
    try {
      field(c) = parse(as<std::string>(v, name));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  };
  k.get = [field, print](const RunConfig& c) { return json(std::string(print(field(const_cast<RunConfig&>(c))))); };
  return k;
}

std::vector<ConfigKey> make_keys() {
  std::vector<ConfigKey> keys;
  keys.push_back(scalar<std::string>("data.train", "training set path", [](RunConfig& c) -> auto& { return c.data.train; }));
  keys.push_back(scalar<std::string>("data.valid", "validation set path", [](RunConfig& c) -> auto& { return c.data.valid; }));
  keys.push_back(scalar<std::string>("data.test", "test set path", [](RunConfig& c) -> auto& { return c.data.test; }));
  keys.push_back(scalar<std::string>("data.format", "jsonl or semeval-xml", [](RunConfig& c) -> auto& { return c.data.format; }));

  keys.push_back(choice("encoder.kind", "toy or pretrained", [](RunConfig& c) -> auto& { return c.encoder.kind; },
                        [](const std::string& s) { return encoder::parse_kind(s); },
                        [](encoder::Kind k) { return encoder::to_string(k); }));
  keys.push_back(scalar<int>("encoder.dim", "embedding size d", [](RunConfig& c) -> auto& { return c.encoder.dim; }));
  keys.push_back(scalar<int>("encoder.layers", "transformer layers", [](RunConfig& c) -> auto& { return c.encoder.layers; }));
  keys.push_back(scalar<int>("encoder.heads", "attention heads", [](RunConfig& c) -> auto& { return c.encoder.heads; }));
  keys.push_back(scalar<int>("encoder.ffn_dim", "feed-forward width (0 = 4d)", [](RunConfig& c) -> auto& { return c.encoder.ffn_dim; }));
  keys.push_back(scalar<int>("encoder.max_len", "maximum sub-word length", [](RunConfig& c) -> auto& { return c.encoder.max_len; }));
  keys.push_back(scalar<double>("encoder.dropout", "dropout probability", [](RunConfig& c) -> auto& { return c.encoder.dropout; }));
  keys.push_back(scalar<bool>("encoder.freeze", "freeze encoder weights", [](RunConfig& c) -> auto& { return c.encoder.freeze; }));
  keys.push_back(scalar<std::string>("encoder.path", "pretrained weight directory", [](RunConfig& c) -> auto& { return c.encoder.path; }));

  // decode.h and transfer.h are one value
  keys.push_back(scalar<int>("decode.h", "maximum aspect length (shared with transfer.h)", [](RunConfig& c) -> auto& { return c.transfer.h; }));
  keys.push_back(scalar<int>("decode.max_spans", "spans decoded per sentence", [](RunConfig& c) -> auto& { return c.decode.max_spans; }));
  keys.push_back(scalar<double>("decode.threshold", "minimum log-score of a decoded span", [](RunConfig& c) -> auto& { return c.decode.threshold; }));

  keys.push_back(scalar<bool>("contrast.enabled", "token-level contrastive term", [](RunConfig& c) -> auto& { return c.contrast.enabled; }));
  keys.push_back(scalar<double>("contrast.tau", "temperature", [](RunConfig& c) -> auto& { return c.contrast.tau; }));
  keys.push_back(choice("contrast.denominator", "with_positive or negatives_only",
                        [](RunConfig& c) -> auto& { return c.contrast.denominator; },
                        [](const std::string& s) { return contrast::parse_denominator(s); },
                        [](contrast::Denominator d) { return contrast::to_string(d); }));

  keys.push_back(scalar<bool>("transfer.enabled", "expected-span knowledge transfer", [](RunConfig& c) -> auto& { return c.transfer.enabled; }));
  keys.push_back(scalar<double>("transfer.xi", "fraction of gold-span sentiment examples", [](RunConfig& c) -> auto& { return c.transfer.xi; }));
  keys.push_back(scalar<int>("transfer.h", "maximum aspect length", [](RunConfig& c) -> auto& { return c.transfer.h; }));
  keys.push_back(choice("transfer.mix_mode", "gated or convex", [](RunConfig& c) -> auto& { return c.transfer.mix_mode; },
                        [](const std::string& s) { return transfer::parse_mix_mode(s); },
                        [](transfer::MixMode m) { return transfer::to_string(m); }));
  keys.push_back(choice("transfer.gate_granularity", "example or batch",
                        [](RunConfig& c) -> auto& { return c.transfer.granularity; },
                        [](const std::string& s) { return transfer::parse_granularity(s); },
                        [](transfer::GateGranularity g) { return transfer::to_string(g); }));
  keys.push_back(choice("transfer.span_bound", "length (j <= i+h-1) or offset (j <= i+h)",
                        [](RunConfig& c) -> auto& { return c.transfer.bound; },
                        [](const std::string& s) { return boundary::parse_span_bound(s); },
                        [](boundary::SpanBound b) { return boundary::to_string(b); }));

  keys.push_back(scalar<double>("trainer.lr", "Adam learning rate", [](RunConfig& c) -> auto& { return c.trainer.learning_rate; }));
  keys.push_back(scalar<int>("trainer.batch_size", "examples per batch", [](RunConfig& c) -> auto& { return c.trainer.batch_size; }));
  keys.push_back(scalar<double>("trainer.lambda", "contrastive weight", [](RunConfig& c) -> auto& { return c.trainer.lambda; }));
  keys.push_back(scalar<int>("trainer.epochs", "epoch budget", [](RunConfig& c) -> auto& { return c.trainer.epochs; }));
  keys.push_back(scalar<int>("trainer.patience", "early-stopping patience (epochs)", [](RunConfig& c) -> auto& { return c.trainer.patience; }));
  keys.push_back(scalar<double>("trainer.clip_norm", "global gradient-norm clip (0 = off)", [](RunConfig& c) -> auto& { return c.trainer.clip_norm; }));
  keys.push_back(scalar<std::uint64_t>("trainer.seed", "random seed", [](RunConfig& c) -> auto& { return c.trainer.seed; }));
  keys.push_back(scalar<bool>("trainer.keep_all_checkpoints", "keep every epoch checkpoint", [](RunConfig& c) -> auto& { return c.trainer.keep_all_checkpoints; }));

  keys.push_back(choice("metrics.sp_condition", "gold or extracted", [](RunConfig& c) -> auto& { return c.metrics.sp_condition; },
                        [](const std::string& s) { return parse_sp_condition(s); },
                        [](SpCondition s) { return to_string(s); }));

  keys.push_back(scalar<std::string>("run.id", "run identifier", [](RunConfig& c) -> auto& { return c.run_id; }));
  keys.push_back(scalar<std::string>("run.output_dir", "parent of run directories", [](RunConfig& c) -> auto& { return c.output_dir; }));
  return keys;
}

void flatten(const json& j, const std::string& prefix, json& out) {
  for (const auto& [k, v] : j.items()) {
    const std::string name = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      flatten(v, name, out);
    } else {
      out[name] = v;
    }
  }
}

const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = make_keys();
  return keys;
}

void RunConfig::set(const std::string& key, const json& value) {
  const ConfigKey* k = find_key(key);
  if (k == nullptr) throw ConfigError("unknown config key '" + key + "'");
  k->set(*this, value);
}

void RunConfig::set_from_string(const std::string& key, const std::string& text) {
  json v;
  try {
    v = json::parse(text);
  } catch (const json::exception&) {
    v = text;
  }
  // keep string-valued keys as given, e.g. a run id of "007"
  const ConfigKey* k = find_key(key);
  if (k != nullptr && k->get(*this).is_string()) v = text;
  set(key, v);
}

json RunConfig::to_json() const {
  json out = json::object();
  for (const auto& k : config_keys()) {
    if (k.name == "decode.h") continue;
    out[k.name] = k.get(*this);
  }
  return out;
}

RunConfig RunConfig::from_json(const json& j) {
  json flat = json::object();
  flatten(j, "", flat);
  RunConfig c;
  for (const auto& [k, v] : flat.items()) c.set(k, v);
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  try {
    encoder.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require(data.format == "jsonl" || data.format == "semeval-xml", "data.format must be jsonl or semeval-xml");
  require(transfer.h >= 1, "transfer.h must be >= 1");
  require(decode.max_spans >= 1, "decode.max_spans must be >= 1");
  require(std::isfinite(decode.threshold), "decode.threshold must be finite");
  require(contrast.tau > 0.0 && std::isfinite(contrast.tau), "contrast.tau must be > 0");
  require(transfer.xi >= 0.0 && transfer.xi <= 1.0, "transfer.xi must lie in [0, 1]");
  require(trainer.learning_rate > 0.0 && std::isfinite(trainer.learning_rate), "trainer.lr must be > 0");
  require(trainer.batch_size >= 1, "trainer.batch_size must be >= 1");
  require(trainer.lambda >= 0.0 && std::isfinite(trainer.lambda), "trainer.lambda must be >= 0");
  require(trainer.epochs >= 0, "trainer.epochs must be >= 0");
  require(trainer.patience >= 1, "trainer.patience must be >= 1");
  require(trainer.clip_norm >= 0.0, "trainer.clip_norm must be >= 0");
  require(!run_id.empty() && run_id.find('/') == std::string::npos && run_id != "." && run_id != "..",
          "run.id must be a plain directory name");
}

}  // namespace fckt
