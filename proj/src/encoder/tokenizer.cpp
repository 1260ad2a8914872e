#include "fckt/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

namespace fckt::encoder {

WordVocabulary::WordVocabulary() : words_{"[PAD]", "[UNK]"} {
  index_.emplace("[PAD]", kPad);
  index_.emplace("[UNK]", kUnk);
}

WordVocabulary WordVocabulary::build(std::span<const std::vector<std::string>> sentences, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences)
    for (const auto& w : s) ++counts[w];
  WordVocabulary v;
  for (const auto& [w, c] : counts) {
    if (c < min_count || v.index_.count(w) != 0) continue;
    v.index_.emplace(w, static_cast<int>(v.words_.size()));
    v.words_.push_back(w);
  }
  return v;
}

WordVocabulary WordVocabulary::from_json(const nlohmann::json& j) {
  WordVocabulary v;
  v.words_ = j.at("words").get<std::vector<std::string>>();
  v.index_.clear();
  for (std::size_t i = 0; i < v.words_.size(); ++i) v.index_.emplace(v.words_[i], static_cast<int>(i));
  if (v.words_.size() < 2 || v.words_[kPad] != "[PAD]" || v.words_[kUnk] != "[UNK]") {
    throw EncoderError("word vocabulary must start with [PAD], [UNK]");
  }
  return v;
}

int WordVocabulary::id(const std::string& word) const {
  const auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

Tokenized WordVocabulary::tokenize(std::span<const std::string> words) const {
  Tokenized t;
  t.ids.reserve(words.size());
  t.word_rows.reserve(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    t.ids.push_back(id(words[i]));
    t.word_rows.push_back(static_cast<int>(i));
  }
  return t;
}

nlohmann::json WordVocabulary::to_json() const { return {{"type", "word"}, {"words", words_}}; }

// ---------------------------------------------------------------------------

WordPieceTokenizer::WordPieceTokenizer(std::vector<std::string> vocab, bool lowercase)
    : vocab_(std::move(vocab)), lowercase_(lowercase) {
  for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], static_cast<int>(i));
  cls_ = lookup("[CLS]");
  sep_ = lookup("[SEP]");
  unk_ = lookup("[UNK]");
  if (cls_ < 0 || sep_ < 0 || unk_ < 0) throw EncoderError("WordPiece vocabulary lacks [CLS], [SEP] or [UNK]");
}

WordPieceTokenizer WordPieceTokenizer::from_file(const std::filesystem::path& vocab_txt, bool lowercase) {
  std::ifstream in(vocab_txt);
  if (!in) throw EncoderError("cannot read vocabulary " + vocab_txt.string());
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    vocab.push_back(line);
  }
  return WordPieceTokenizer(std::move(vocab), lowercase);
}

int WordPieceTokenizer::lookup(const std::string& piece) const {
  const auto it = index_.find(piece);
  return it == index_.end() ? -1 : it->second;
}

std::vector<int> WordPieceTokenizer::word_pieces(const std::string& raw) const {
  std::string word = raw;
  if (lowercase_) {
    std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) {
      return c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c);
    });
  }
  constexpr std::size_t kMaxChars = 100;
  if (word.empty() || word.size() > kMaxChars) return {unk_};
  std::vector<int> pieces;
  std::size_t start = 0;
  while (start < word.size()) {
    std::size_t end = word.size();
    int found = -1;
    while (end > start) {
      std::string sub = word.substr(start, end - start);
      if (start > 0) sub = "##" + sub;
      found = lookup(sub);
      if (found >= 0) break;
      --end;
    }
    if (found < 0) return {unk_};
    pieces.push_back(found);
    start = end;
  }
  return pieces;
}

Tokenized WordPieceTokenizer::tokenize(std::span<const std::string> words) const {
  Tokenized t;
  t.ids.push_back(cls_);
  for (const auto& w : words) {
    t.word_rows.push_back(static_cast<int>(t.ids.size()));
    for (int id : word_pieces(w)) t.ids.push_back(id);
  }
  t.ids.push_back(sep_);
  return t;
}

nlohmann::json WordPieceTokenizer::to_json() const {
  return {{"type", "wordpiece"}, {"lowercase", lowercase_}, {"words", vocab_}};
}

}  // namespace fckt::encoder
