#include "fckt/encoder.hpp"

#include "fckt/serialization.hpp"

#include <cmath>
#include <fstream>

namespace fckt::encoder {

Kind parse_kind(std::string_view s) {
  if (s == "toy") return Kind::toy;
  if (s == "pretrained") return Kind::pretrained;
  throw std::invalid_argument("encoder.kind must be toy or pretrained, got '" + std::string(s) + "'");
}

std::string_view to_string(Kind k) { return k == Kind::toy ? "toy" : "pretrained"; }

void EncoderConfig::validate() const {
  if (dim < 1) throw std::invalid_argument("encoder.dim must be positive");
  if (layers < 1) throw std::invalid_argument("encoder.layers must be positive");
  if (heads < 1 || dim % heads != 0) throw std::invalid_argument("encoder.heads must divide encoder.dim");
  if (max_len < 1) throw std::invalid_argument("encoder.max_len must be positive");
  if (positions > 0 && max_len > positions) throw std::invalid_argument("encoder.max_len exceeds the position table");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("encoder.dropout must lie in [0, 1)");
  if (kind == Kind::pretrained && path.empty()) throw std::invalid_argument("encoder.path is required for pretrained");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"kind", std::string(to_string(kind))},
          {"dim", dim},
          {"layers", layers},
          {"heads", heads},
          {"ffn_dim", ffn_dim},
          {"max_len", max_len},
          {"positions", positions},
          {"dropout", dropout},
          {"freeze", freeze},
          {"layer_norm_eps", layer_norm_eps},
          {"type_vocab", type_vocab},
          {"path", path}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.kind = parse_kind(j.at("kind").get<std::string>());
  c.dim = j.at("dim");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.ffn_dim = j.at("ffn_dim");
  c.max_len = j.at("max_len");
  c.positions = j.value("positions", 0);
  c.dropout = j.at("dropout");
  c.freeze = j.at("freeze");
  c.layer_norm_eps = j.at("layer_norm_eps");
  c.type_vocab = j.at("type_vocab");
  c.path = j.at("path");
  return c;
}

Matrix EncodedSequence::word_embeddings() const {
  Matrix out(static_cast<Eigen::Index>(token_map.size()), embeddings.cols());
  for (std::size_t i = 0; i < token_map.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = embeddings.row(token_map[i]);
  return out;
}

namespace {

Matrix normal(Eigen::Index r, Eigen::Index c, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

constexpr double kInitStd = 0.02;
constexpr std::uint64_t kDropoutStream = 0x9E3779B97F4A7C15ULL;

}  // namespace

TransformerEncoder::TransformerEncoder(EncoderConfig config, std::unique_ptr<Tokenizer> tokenizer, std::uint64_t seed)
    : config_(std::move(config)), tokenizer_(std::move(tokenizer)), dropout_rng_(seed ^ kDropoutStream) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const int d = config_.dim;
  const int f = config_.ffn();
  word_emb_ = Parameter("encoder.embeddings.word", normal(tokenizer_->vocab_size(), d, kInitStd, rng));
  pos_emb_ = Parameter("encoder.embeddings.position", normal(config_.position_rows(), d, kInitStd, rng));
  if (config_.type_vocab > 0) {
    type_emb_ = Parameter("encoder.embeddings.token_type", normal(config_.type_vocab, d, kInitStd, rng));
  }
  emb_gain_ = Parameter("encoder.embeddings.ln.gain", Matrix::Ones(1, d));
  emb_bias_ = Parameter("encoder.embeddings.ln.bias", Matrix::Zero(1, d));
  layers_.resize(static_cast<std::size_t>(config_.layers));
  for (int i = 0; i < config_.layers; ++i) {
    Layer& l = layers_[static_cast<std::size_t>(i)];
    const std::string p = "encoder.layer" + std::to_string(i) + ".";
    l.wq = Parameter(p + "attn.q.weight", normal(d, d, kInitStd, rng));
    l.bq = Parameter(p + "attn.q.bias", Matrix::Zero(1, d));
    l.wk = Parameter(p + "attn.k.weight", normal(d, d, kInitStd, rng));
    l.bk = Parameter(p + "attn.k.bias", Matrix::Zero(1, d));
    l.wv = Parameter(p + "attn.v.weight", normal(d, d, kInitStd, rng));
    l.bv = Parameter(p + "attn.v.bias", Matrix::Zero(1, d));
    l.wo = Parameter(p + "attn.out.weight", normal(d, d, kInitStd, rng));
    l.bo = Parameter(p + "attn.out.bias", Matrix::Zero(1, d));
    l.attn_gain = Parameter(p + "attn.ln.gain", Matrix::Ones(1, d));
    l.attn_bias = Parameter(p + "attn.ln.bias", Matrix::Zero(1, d));
    l.w1 = Parameter(p + "ffn.in.weight", normal(d, f, kInitStd, rng));
    l.b1 = Parameter(p + "ffn.in.bias", Matrix::Zero(1, f));
    l.w2 = Parameter(p + "ffn.out.weight", normal(f, d, kInitStd, rng));
    l.b2 = Parameter(p + "ffn.out.bias", Matrix::Zero(1, d));
    l.ffn_gain = Parameter(p + "ffn.ln.gain", Matrix::Ones(1, d));
    l.ffn_bias = Parameter(p + "ffn.ln.bias", Matrix::Zero(1, d));
  }
  set_frozen(config_.freeze);
}

std::unique_ptr<TransformerEncoder> TransformerEncoder::load_pretrained(const std::filesystem::path& dir,
                                                                        EncoderConfig overrides, std::uint64_t seed) {
  std::ifstream cfg_in(dir / "config.json");
  if (!cfg_in) throw EncoderError("cannot read " + (dir / "config.json").string());
  const auto hf = nlohmann::json::parse(cfg_in);
  if (const auto act = hf.value("hidden_act", std::string("gelu")); act != "gelu") {
    throw EncoderError("unsupported hidden_act '" + act + "', only exact gelu");
  }
  EncoderConfig c = overrides;
  c.kind = Kind::pretrained;
  c.path = dir.string();
  c.dim = hf.at("hidden_size");
  c.layers = hf.at("num_hidden_layers");
  c.heads = hf.at("num_attention_heads");
  c.ffn_dim = hf.at("intermediate_size");
  c.type_vocab = hf.value("type_vocab_size", 0);
  c.layer_norm_eps = hf.value("layer_norm_eps", 1e-12);
  const int max_pos = hf.at("max_position_embeddings");
  c.max_len = std::min(overrides.max_len > 0 ? overrides.max_len : max_pos, max_pos);
  c.positions = max_pos;
  const bool lower = hf.value("do_lower_case", true);

  auto tok = std::make_unique<WordPieceTokenizer>(WordPieceTokenizer::from_file(dir / "vocab.txt", lower));
  auto enc = std::make_unique<TransformerEncoder>(c, std::move(tok), seed);

  const TensorArchive weights = read_archive(dir / "weights.fckt");
  for (Parameter* p : enc->parameters()) {
    const auto it = weights.tensors.find(p->name);
    if (it == weights.tensors.end()) throw EncoderError("pretrained weights lack tensor '" + p->name + "'");
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw EncoderError("pretrained tensor '" + p->name + "' has the wrong shape");
    }
    p->value = it->second;
  }
  enc->set_frozen(c.freeze);
  return enc;
}

Tokenized TransformerEncoder::tokenize(std::span<const std::string> words) const {
  if (words.empty()) throw EncoderError("cannot encode an empty token list");
  Tokenized t = tokenizer_->tokenize(words);
  if (static_cast<int>(t.ids.size()) > config_.max_len) {
    throw EncoderError("sequence of " + std::to_string(t.ids.size()) + " sub-words exceeds encoder.max_len " +
                       std::to_string(config_.max_len));
  }
  return t;
}

ag::Var TransformerEncoder::layer_forward(ag::Graph& g, Layer& l, ag::Var x, Mode mode) {
  const double p = mode == Mode::training ? config_.dropout : 0.0;
  const int d = config_.dim;
  const int dh = d / config_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  ag::Var q = ag::add_row(ag::matmul(x, g.param(l.wq)), g.param(l.bq));
  ag::Var k = ag::add_row(ag::matmul(x, g.param(l.wk)), g.param(l.bk));
  ag::Var v = ag::add_row(ag::matmul(x, g.param(l.wv)), g.param(l.bv));
  std::vector<ag::Var> heads;
  heads.reserve(static_cast<std::size_t>(config_.heads));
  for (int h = 0; h < config_.heads; ++h) {
    ag::Var qh = ag::slice_cols(q, h * dh, dh);
    ag::Var kh = ag::slice_cols(k, h * dh, dh);
    ag::Var vh = ag::slice_cols(v, h * dh, dh);
    ag::Var att = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), inv_sqrt));
    heads.push_back(ag::matmul(att, vh));
  }
  ag::Var ctx = heads.size() == 1 ? heads[0] : ag::concat_cols(heads);
  ag::Var attn_out = ag::dropout(ag::add_row(ag::matmul(ctx, g.param(l.wo)), g.param(l.bo)), p, dropout_rng_);
  x = ag::layer_norm(ag::add(x, attn_out), g.param(l.attn_gain), g.param(l.attn_bias), config_.layer_norm_eps);

  ag::Var hidden = ag::gelu(ag::add_row(ag::matmul(x, g.param(l.w1)), g.param(l.b1)));
  ag::Var ffn_out = ag::dropout(ag::add_row(ag::matmul(hidden, g.param(l.w2)), g.param(l.b2)), p, dropout_rng_);
  return ag::layer_norm(ag::add(x, ffn_out), g.param(l.ffn_gain), g.param(l.ffn_bias), config_.layer_norm_eps);
}

ag::Var TransformerEncoder::forward(ag::Graph& g, const Tokenized& tokens, Mode mode) {
  const int n = static_cast<int>(tokens.ids.size());
  if (n == 0) throw EncoderError("cannot encode an empty token list");
  if (n > config_.max_len) throw EncoderError("sequence exceeds encoder.max_len");
  std::vector<int> positions(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) positions[static_cast<std::size_t>(i)] = i;

  ag::Var x = ag::add(ag::gather_rows(g.param(word_emb_), tokens.ids), ag::gather_rows(g.param(pos_emb_), positions));
  if (config_.type_vocab > 0) {
    const std::vector<int> zeros(static_cast<std::size_t>(n), 0);
    x = ag::add(x, ag::gather_rows(g.param(type_emb_), zeros));
  }
  x = ag::layer_norm(x, g.param(emb_gain_), g.param(emb_bias_), config_.layer_norm_eps);
  x = ag::dropout(x, mode == Mode::training ? config_.dropout : 0.0, dropout_rng_);
  for (Layer& l : layers_) x = layer_forward(g, l, x, mode);
  return x;
}

ag::Var TransformerEncoder::forward_words(ag::Graph& g, const Tokenized& tokens, Mode mode) {
  ag::Var h = forward(g, tokens, mode);
  bool identity = h.rows() == static_cast<Eigen::Index>(tokens.word_rows.size());
  for (std::size_t i = 0; identity && i < tokens.word_rows.size(); ++i) identity = tokens.word_rows[i] == static_cast<int>(i);
  return identity ? h : ag::gather_rows(h, tokens.word_rows);
}

EncodedSequence TransformerEncoder::encode(std::span<const std::string> words, Mode mode) {
  const Tokenized t = tokenize(words);
  ag::Graph g;
  ag::Var h = forward(g, t, mode);
  return EncodedSequence{h.value(), t.word_rows};
}

ParameterList TransformerEncoder::parameters() {
  ParameterList out{&word_emb_, &pos_emb_};
  if (config_.type_vocab > 0) out.push_back(&type_emb_);
  out.push_back(&emb_gain_);
  out.push_back(&emb_bias_);
  for (Layer& l : layers_) {
    for (Parameter* p : {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.attn_gain, &l.attn_bias, &l.w1,
                         &l.b1, &l.w2, &l.b2, &l.ffn_gain, &l.ffn_bias}) {
      out.push_back(p);
    }
  }
  return out;
}

Parameter* TransformerEncoder::find(const std::string& name) {
  for (Parameter* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

void TransformerEncoder::set_frozen(bool frozen) {
  config_.freeze = frozen;
  for (Parameter* p : parameters()) p->frozen = frozen;
}

}  // namespace fckt::encoder
