#include "fckt/corpus.hpp"

#include <array>
#include <cstdio>
#include <random>

namespace fckt::corpus {

namespace {

constexpr std::array<const char*, 4> kCues = {"the", "my", "this", "their"};
constexpr int kHeads = 40;
constexpr int kModifiers = 20;
constexpr int kPositive = 10;
constexpr int kNegative = 10;
constexpr int kNeutral = 6;
constexpr int kFillers = 107;

std::string numbered(const char* stem, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%02d", stem, i);
  return buf;
}

class Generator {
 public:
  explicit Generator(const SyntheticOptions& o) : opt_(o), rng_(o.seed) {}

  AnnotatedSentence sentence(std::size_t index) {
    AnnotatedSentence s;
    s.source_id = "syn-" + std::to_string(index);
    const int clauses = uniform(1, opt_.max_clauses);
    int prev_polarity = -1;
    for (int c = 0; c < clauses; ++c) {
      const bool contrast = c > 0 && prev_polarity >= 0 && prev_polarity != 2 && chance(opt_.contrast_rate);
      if (contrast) {
        s.tokens.push_back("except");
        const auto flipped = prev_polarity == 0 ? Polarity::negative : Polarity::positive;
        emit_aspect(s, flipped);
        fillers(s, 0, 1);
        prev_polarity = -1;
        continue;
      }
      if (c > 0) s.tokens.push_back("and");
      const int pol = uniform(0, 2);
      if (chance(0.6)) {
        fillers(s, 0, 2);
        emit_aspect(s, static_cast<Polarity>(pol));
        fillers(s, 0, 2);
        s.tokens.push_back(polarity_word(pol));
        fillers(s, 0, 1);
      } else {
        fillers(s, 0, 1);
        s.tokens.push_back(polarity_word(pol));
        fillers(s, 0, 1);
        emit_aspect(s, static_cast<Polarity>(pol));
        fillers(s, 0, 1);
      }
      prev_polarity = pol;
    }
    s.tokens.push_back(".");
    return s;
  }

 private:
  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool chance(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }

  void fillers(AnnotatedSentence& s, int lo, int hi) {
    const int k = uniform(lo, hi);
    for (int i = 0; i < k; ++i) s.tokens.push_back(numbered("w", uniform(0, kFillers - 1)));
  }

  std::string polarity_word(int pol) {
    if (pol == 0) return numbered("good", uniform(0, kPositive - 1));
    if (pol == 1) return numbered("bad", uniform(0, kNegative - 1));
    return numbered("meh", uniform(0, kNeutral - 1));
  }

  void emit_aspect(AnnotatedSentence& s, Polarity pol) {
    s.tokens.push_back(kCues[static_cast<std::size_t>(uniform(0, static_cast<int>(kCues.size()) - 1))]);
    AspectAnnotation a;
    a.start = static_cast<int>(s.tokens.size());
    const int mods = uniform(0, opt_.max_modifiers);
    for (int i = 0; i < mods; ++i) s.tokens.push_back(numbered("mod", uniform(0, kModifiers - 1)));
    s.tokens.push_back(numbered("item", uniform(0, kHeads - 1)));
    a.end = static_cast<int>(s.tokens.size()) - 1;
    a.polarity = pol;
    s.aspects.push_back(a);
  }

  SyntheticOptions opt_;
  std::mt19937_64 rng_;
};

}  // namespace

std::vector<std::string> synthetic_vocabulary() {
  std::vector<std::string> v(kCues.begin(), kCues.end());
  for (int i = 0; i < kHeads; ++i) v.push_back(numbered("item", i));
  for (int i = 0; i < kModifiers; ++i) v.push_back(numbered("mod", i));
  for (int i = 0; i < kPositive; ++i) v.push_back(numbered("good", i));
  for (int i = 0; i < kNegative; ++i) v.push_back(numbered("bad", i));
  for (int i = 0; i < kNeutral; ++i) v.push_back(numbered("meh", i));
  v.push_back("except");
  v.push_back("and");
  v.push_back(".");
  for (int i = 0; i < kFillers; ++i) v.push_back(numbered("w", i));
  return v;
}

std::vector<AnnotatedSentence> generate_synthetic(const SyntheticOptions& options) {
  if (options.max_clauses < 1 || options.max_modifiers < 0) {
    throw std::invalid_argument("generate_synthetic: bad clause/modifier limits");
  }
  Generator gen(options);
  std::vector<AnnotatedSentence> out;
  out.reserve(options.sentences);
  for (std::size_t i = 0; i < options.sentences; ++i) out.push_back(gen.sentence(i));
  return out;
}

}  // namespace fckt::corpus
