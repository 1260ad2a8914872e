#pragma once

#include "fckt/autograd.hpp"
#include "fckt/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace fckt::encoder {

enum class Mode { training, inference };
enum class Kind { toy, pretrained };

Kind parse_kind(std::string_view s);
std::string_view to_string(Kind k);

class EncoderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sub-word ids plus, for each source word, the row of its first sub-word.
struct Tokenized {
  std::vector<int> ids;
  std::vector<int> word_rows;
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual Tokenized tokenize(std::span<const std::string> words) const = 0;
  virtual int vocab_size() const = 0;
  virtual nlohmann::json to_json() const = 0;
};

// One id per word; unseen words map to [UNK]. Used by the toy backbone.
class WordVocabulary final : public Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  WordVocabulary();
  // Words are assigned ids in sorted order so the mapping is independent of
  // corpus order.
  static WordVocabulary build(std::span<const std::vector<std::string>> sentences, std::size_t min_count = 1);
  static WordVocabulary from_json(const nlohmann::json& j);

  Tokenized tokenize(std::span<const std::string> words) const override;
  int vocab_size() const override { return static_cast<int>(words_.size()); }
  nlohmann::json to_json() const override;
  int id(const std::string& word) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// Greedy longest-match-first WordPiece over pre-split words, lower-cased,
// wrapped in [CLS] ... [SEP].
class WordPieceTokenizer final : public Tokenizer {
 public:
  explicit WordPieceTokenizer(std::vector<std::string> vocab, bool lowercase = true);
  static WordPieceTokenizer from_file(const std::filesystem::path& vocab_txt, bool lowercase = true);

  Tokenized tokenize(std::span<const std::string> words) const override;
  int vocab_size() const override { return static_cast<int>(vocab_.size()); }
  nlohmann::json to_json() const override;
  std::vector<int> word_pieces(const std::string& word) const;

 private:
  int lookup(const std::string& piece) const;

  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
  bool lowercase_;
  int cls_ = -1, sep_ = -1, unk_ = -1;
};

struct EncoderConfig {
  Kind kind = Kind::toy;
  int dim = 32;
  int layers = 2;
  int heads = 2;
  int ffn_dim = 0;  // 0 means 4 * dim
  int max_len = 128;
  int positions = 0;  // rows of the position table; 0 means max_len
  double dropout = 0.1;
  bool freeze = false;
  double layer_norm_eps = 1e-12;
  int type_vocab = 0;  // segment embeddings; BERT checkpoints carry 2
  std::string path;    // pretrained directory

  int ffn() const { return ffn_dim > 0 ? ffn_dim : 4 * dim; }
  int position_rows() const { return positions > 0 ? positions : max_len; }
  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

// Contextual embeddings H (rows = sub-words) with the word alignment.
struct EncodedSequence {
  Matrix embeddings;
  std::vector<int> token_map;

  // Word-level rows (first sub-word of each word).
  Matrix word_embeddings() const;
};

// Post-LayerNorm bidirectional transformer. The toy and pretrained backbones
// share this architecture and differ in tokenizer, size, and where the
// weights come from.
class TransformerEncoder {
 public:
  TransformerEncoder(EncoderConfig config, std::unique_ptr<Tokenizer> tokenizer, std::uint64_t seed);

  // Reads {dir}/config.json, {dir}/vocab.txt and {dir}/weights.fckt.
  static std::unique_ptr<TransformerEncoder> load_pretrained(const std::filesystem::path& dir, EncoderConfig overrides,
                                                             std::uint64_t seed);

  // Throws EncoderError for empty input or input longer than max_len.
  Tokenized tokenize(std::span<const std::string> words) const;

  // Rows are sub-words. Training mode applies dropout from the encoder's own
  // generator; inference mode is deterministic.
  ag::Var forward(ag::Graph& g, const Tokenized& tokens, Mode mode);
  // Rows are words.
  ag::Var forward_words(ag::Graph& g, const Tokenized& tokens, Mode mode);

  EncodedSequence encode(std::span<const std::string> words, Mode mode);

  ParameterList parameters();
  Parameter* find(const std::string& name);
  void set_frozen(bool frozen);

  const EncoderConfig& config() const { return config_; }
  const Tokenizer& tokenizer() const { return *tokenizer_; }
  int dim() const { return config_.dim; }

  std::mt19937_64& dropout_rng() { return dropout_rng_; }

 private:
  struct Layer {
    Parameter wq, bq, wk, bk, wv, bv, wo, bo, attn_gain, attn_bias;
    Parameter w1, b1, w2, b2, ffn_gain, ffn_bias;
  };

  ag::Var layer_forward(ag::Graph& g, Layer& layer, ag::Var x, Mode mode);

  EncoderConfig config_;
  std::unique_ptr<Tokenizer> tokenizer_;
  Parameter word_emb_, pos_emb_, type_emb_, emb_gain_, emb_bias_;
  std::vector<Layer> layers_;
  std::mt19937_64 dropout_rng_;
};

}  // namespace fckt::encoder
