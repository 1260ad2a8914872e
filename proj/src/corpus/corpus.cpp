#include "fckt/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace fckt::corpus {

using json = nlohmann::json;

std::string_view to_string(Polarity p) {
  switch (p) {
    case Polarity::positive: return "positive";
    case Polarity::negative: return "negative";
    case Polarity::neutral: return "neutral";
  }
  return "neutral";
}

Polarity parse_polarity(std::string_view label) {
  if (label == "positive" || label == "POS") return Polarity::positive;
  if (label == "negative" || label == "NEG") return Polarity::negative;
  if (label == "neutral" || label == "NEU") return Polarity::neutral;
  throw std::invalid_argument("unknown polarity label '" + std::string(label) + "'");
}

DatasetFormat parse_format(std::string_view tag) {
  if (tag == "jsonl") return DatasetFormat::jsonl;
  if (tag == "semeval-xml") return DatasetFormat::semeval_xml;
  throw std::invalid_argument("unknown dataset format '" + std::string(tag) + "' (expected jsonl or semeval-xml)");
}

int TrainingExample::start_index() const {
  return static_cast<int>(std::max_element(start_target.begin(), start_target.end()) - start_target.begin());
}

int TrainingExample::end_index() const {
  return static_cast<int>(std::max_element(end_target.begin(), end_target.end()) - end_target.begin());
}

void validate(const AnnotatedSentence& s) {
  const int n = static_cast<int>(s.tokens.size());
  if (n == 0) throw DataError("sentence '" + s.source_id + "' has no tokens");
  for (std::size_t i = 0; i < s.aspects.size(); ++i) {
    const auto& a = s.aspects[i];
    if (a.start < 0 || a.end >= n || a.start > a.end) {
      std::ostringstream msg;
      msg << "sentence '" << s.source_id << "': aspect " << i << " span (" << a.start << "," << a.end
          << ") out of range for " << n << " tokens";
      throw DataError(msg.str());
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (a.overlaps(s.aspects[j])) {
        std::ostringstream msg;
        msg << "sentence '" << s.source_id << "': aspects " << j << " and " << i << " overlap";
        throw DataError(msg.str());
      }
    }
  }
}

namespace {

AnnotatedSentence sentence_from_json(const json& j, std::size_t line) {
  AnnotatedSentence s;
  if (!j.is_object()) throw DataError("record is not a JSON object", line);
  if (!j.contains("tokens") || !j["tokens"].is_array()) throw DataError("record lacks a 'tokens' array", line);
  s.tokens = j["tokens"].get<std::vector<std::string>>();
  s.source_id = j.contains("id") ? j["id"].get<std::string>() : "line-" + std::to_string(line);
  if (j.contains("aspects")) {
    for (const auto& a : j["aspects"]) {
      AspectAnnotation ann;
      ann.start = a.at("start").get<int>();
      ann.end = a.at("end").get<int>();
      ann.polarity = parse_polarity(a.at("polarity").get<std::string>());
      s.aspects.push_back(ann);
    }
  }
  return s;
}

}  // namespace

std::vector<AnnotatedSentence> parse_jsonl(std::string_view text, std::string_view origin) {
  std::vector<AnnotatedSentence> out;
  std::vector<std::string> errors;
  std::size_t first_bad = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      AnnotatedSentence s = sentence_from_json(json::parse(line), lineno);
      validate(s);
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      if (first_bad == 0) first_bad = lineno;
      errors.push_back(std::string(origin) + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    std::ostringstream msg;
    msg << errors.size() << " malformed record(s); first: " << errors.front();
    for (std::size_t i = 1; i < errors.size() && i < 10; ++i) msg << "\n  " << errors[i];
    throw DataError(msg.str(), first_bad);
  }
  return out;
}

std::vector<AnnotatedSentence> load_dataset(const std::filesystem::path& path, DatasetFormat format) {
  if (format == DatasetFormat::semeval_xml) return import_semeval_xml(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read dataset file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_jsonl(buf.str(), path.string());
}

std::string to_jsonl_line(const AnnotatedSentence& s) {
  json j;
  j["tokens"] = s.tokens;
  j["aspects"] = json::array();
  for (const auto& a : s.aspects) {
    j["aspects"].push_back({{"start", a.start}, {"end", a.end}, {"polarity", std::string(to_string(a.polarity))}});
  }
  j["id"] = s.source_id;
  return j.dump();
}

void save_jsonl(const std::filesystem::path& path, const std::vector<AnnotatedSentence>& sentences) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : sentences) out << to_jsonl_line(s) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

OneHotTargets build_targets(int start, int end, int n) {
  if (n <= 0 || start < 0 || end >= n || start > end) {
    throw std::out_of_range("build_targets: span (" + std::to_string(start) + "," + std::to_string(end) +
                            ") invalid for length " + std::to_string(n));
  }
  OneHotTargets t{std::vector<double>(static_cast<std::size_t>(n), 0.0),
                  std::vector<double>(static_cast<std::size_t>(n), 0.0)};
  t.start[static_cast<std::size_t>(start)] = 1.0;
  t.end[static_cast<std::size_t>(end)] = 1.0;
  return t;
}

SplitResult split_sentences(const std::vector<AnnotatedSentence>& sentences) {
  SplitResult r;
  r.examples.reserve(count_aspects(sentences));
  for (const auto& s : sentences) {
    if (s.aspects.empty()) {
      ++r.zero_aspect_sentences;
      continue;
    }
    const int n = static_cast<int>(s.tokens.size());
    for (std::size_t i = 0; i < s.aspects.size(); ++i) {
      const auto& a = s.aspects[i];
      auto targets = build_targets(a.start, a.end, n);
      TrainingExample ex;
      ex.tokens = s.tokens;
      ex.start_target = std::move(targets.start);
      ex.end_target = std::move(targets.end);
      ex.polarity = a.polarity;
      ex.origin = {s.source_id, static_cast<int>(i)};
      r.examples.push_back(std::move(ex));
    }
  }
  return r;
}

std::size_t count_aspects(const std::vector<AnnotatedSentence>& sentences) {
  std::size_t m = 0;
  for (const auto& s : sentences) m += s.aspects.size();
  return m;
}

std::vector<std::vector<std::size_t>> make_folds(std::size_t n, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw std::invalid_argument("make_folds: need at least 2 folds");
  if (n < folds) throw std::invalid_argument("make_folds: fewer items than folds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the permutation does not depend on
  // the standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> out(folds);
  for (std::size_t i = 0; i < n; ++i) out[i % folds].push_back(order[i]);
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

void save_folds(const std::filesystem::path& path, const std::vector<std::vector<std::size_t>>& folds,
                std::uint64_t seed) {
  json j;
  j["seed"] = seed;
  j["folds"] = folds;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write folds file " + path.string());
  out << j.dump() << '\n';
}

std::vector<std::vector<std::size_t>> load_folds(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read folds file " + path.string());
  return json::parse(in).at("folds").get<std::vector<std::vector<std::size_t>>>();
}

}  // namespace fckt::corpus
