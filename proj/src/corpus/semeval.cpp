#include "fckt/corpus.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace fckt::corpus {

namespace pt = boost::property_tree;

namespace {

bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

struct RawTerm {
  std::size_t from = 0;
  std::size_t to = 0;
  std::string polarity;
  std::string target;
};

void collect_sentences(const pt::ptree& node, std::vector<const pt::ptree*>& out) {
  for (const auto& [name, child] : node) {
    if (name == "sentence") {
      out.push_back(&child);
    } else if (name != "<xmlattr>") {
      collect_sentences(child, out);
    }
  }
}

std::vector<RawTerm> raw_terms(const pt::ptree& sentence) {
  std::vector<RawTerm> terms;
  auto read = [&](const pt::ptree& list, const char* item, const char* target_attr) {
    for (const auto& [name, t] : list) {
      if (name != item) continue;
      RawTerm r;
      r.from = t.get<std::size_t>("<xmlattr>.from", 0);
      r.to = t.get<std::size_t>("<xmlattr>.to", 0);
      r.polarity = t.get<std::string>("<xmlattr>.polarity", "");
      r.target = t.get<std::string>(std::string("<xmlattr>.") + target_attr, "");
      terms.push_back(std::move(r));
    }
  };
  if (auto terms14 = sentence.get_child_optional("aspectTerms")) read(*terms14, "aspectTerm", "term");
  if (auto ops = sentence.get_child_optional("Opinions")) read(*ops, "Opinion", "target");
  return terms;
}

}  // namespace

std::vector<CharToken> tokenize_with_offsets(std::string_view text) {
  std::vector<CharToken> out;
  std::size_t i = 0;
  std::size_t cp = 0;
  CharToken cur;
  bool open = false;
  auto close = [&]() {
    if (open) {
      cur.end = cp;
      out.push_back(std::move(cur));
      cur = CharToken{};
      open = false;
    }
  };
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    const std::size_t len = std::min(utf8_length(c), text.size() - i);
    if (c < 0x80 && std::isspace(c) != 0) {
      close();
    } else if (is_ascii_punct(c)) {
      close();
      out.push_back(CharToken{std::string(1, static_cast<char>(c)), cp, cp + 1});
    } else {
      if (!open) {
        cur.begin = cp;
        open = true;
      }
      cur.text.append(text.substr(i, len));
    }
    i += len;
    ++cp;
  }
  close();
  return out;
}

std::vector<AnnotatedSentence> parse_semeval_xml(std::string_view xml, ImportStats* stats) {
  pt::ptree tree;
  std::istringstream in{std::string(xml)};
  try {
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    throw DataError(std::string("malformed SemEval XML: ") + e.message(), e.line());
  }
  std::vector<const pt::ptree*> nodes;
  collect_sentences(tree, nodes);

  ImportStats local;
  std::vector<AnnotatedSentence> out;
  for (const pt::ptree* node : nodes) {
    AnnotatedSentence s;
    s.source_id = node->get<std::string>("<xmlattr>.id", "s" + std::to_string(out.size()));
    const std::string text = node->get<std::string>("text", "");
    const auto toks = tokenize_with_offsets(text);
    for (const auto& t : toks) s.tokens.push_back(t.text);
    if (s.tokens.empty()) continue;

    // span -> polarity; a span seen with two different polarities is dropped
    std::map<std::pair<int, int>, std::string> spans;
    std::map<std::pair<int, int>, bool> conflicted;
    for (const RawTerm& r : raw_terms(*node)) {
      if (r.target == "NULL" || r.from == r.to) {
        ++local.skipped_null_target;
        continue;
      }
      if (r.polarity == "conflict") {
        ++local.skipped_conflict;
        continue;
      }
      int first = -1, last = -1;
      for (std::size_t k = 0; k < toks.size(); ++k) {
        if (toks[k].end > r.from && toks[k].begin < r.to) {
          if (first < 0) first = static_cast<int>(k);
          last = static_cast<int>(k);
        }
      }
      if (first < 0) throw DataError("sentence '" + s.source_id + "': aspect offsets outside the text");
      const auto key = std::make_pair(first, last);
      if (auto it = spans.find(key); it != spans.end()) {
        if (it->second != r.polarity) conflicted[key] = true;
        ++local.merged_duplicates;
        continue;
      }
      spans.emplace(key, r.polarity);
    }
    for (const auto& [key, pol] : spans) {
      if (conflicted.count(key) != 0) {
        ++local.skipped_conflict;
        continue;
      }
      AspectAnnotation a{key.first, key.second, Polarity::neutral};
      try {
        a.polarity = parse_polarity(pol);
      } catch (const std::invalid_argument& e) {
        throw DataError("sentence '" + s.source_id + "': " + e.what());
      }
      const bool clash = std::any_of(s.aspects.begin(), s.aspects.end(),
                                     [&](const AspectAnnotation& b) { return a.overlaps(b); });
      if (clash) {
        ++local.dropped_overlapping;
        continue;
      }
      s.aspects.push_back(a);
    }
    validate(s);
    local.aspects += s.aspects.size();
    out.push_back(std::move(s));
  }
  local.sentences = out.size();
  if (stats != nullptr) *stats = local;
  return out;
}

std::vector<AnnotatedSentence> import_semeval_xml(const std::filesystem::path& path, ImportStats* stats) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read dataset file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_semeval_xml(buf.str(), stats);
}

}  // namespace fckt::corpus
