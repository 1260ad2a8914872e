#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fckt::corpus {

enum class Polarity : std::uint8_t { positive = 0, negative = 1, neutral = 2 };
inline constexpr int kNumPolarities = 3;

std::string_view to_string(Polarity p);
// Throws std::invalid_argument for anything but positive/negative/neutral.
Polarity parse_polarity(std::string_view label);

struct AspectAnnotation {
  int start = 0;
  int end = 0;  // inclusive
  Polarity polarity = Polarity::neutral;

  int length() const { return end - start + 1; }
  bool overlaps(const AspectAnnotation& o) const { return start <= o.end && o.start <= end; }
  friend bool operator==(const AspectAnnotation&, const AspectAnnotation&) = default;
};

struct AnnotatedSentence {
  std::vector<std::string> tokens;
  std::vector<AspectAnnotation> aspects;
  std::string source_id;
};

// Where a split example came from.
struct ExampleOrigin {
  std::string source_id;
  int aspect_index = 0;
};

struct OneHotTargets {
  std::vector<double> start;
  std::vector<double> end;
};

// One (sentence, single aspect) pair used for training.
struct TrainingExample {
  std::vector<std::string> tokens;
  std::vector<double> start_target;
  std::vector<double> end_target;
  Polarity polarity = Polarity::neutral;
  ExampleOrigin origin;

  int start_index() const;
  int end_index() const;
};

struct SplitResult {
  std::vector<TrainingExample> examples;
  std::size_t zero_aspect_sentences = 0;
};

enum class DatasetFormat { jsonl, semeval_xml };
DatasetFormat parse_format(std::string_view tag);

// Raised for any ingestion problem. `line` is 1-based, 0 when not applicable.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::size_t line = 0) : std::runtime_error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Throws DataError describing the first broken invariant.
void validate(const AnnotatedSentence& sentence);

std::vector<AnnotatedSentence> load_dataset(const std::filesystem::path& path, DatasetFormat format);
std::vector<AnnotatedSentence> parse_jsonl(std::string_view text, std::string_view origin = "<memory>");
void save_jsonl(const std::filesystem::path& path, const std::vector<AnnotatedSentence>& sentences);
std::string to_jsonl_line(const AnnotatedSentence& sentence);

OneHotTargets build_targets(int start, int end, int n);
SplitResult split_sentences(const std::vector<AnnotatedSentence>& sentences);

std::size_t count_aspects(const std::vector<AnnotatedSentence>& sentences);

// Seeded k-way partition of [0, n): a shuffled permutation dealt round-robin.
std::vector<std::vector<std::size_t>> make_folds(std::size_t n, std::size_t folds, std::uint64_t seed);
void save_folds(const std::filesystem::path& path, const std::vector<std::vector<std::size_t>>& folds,
                std::uint64_t seed);
std::vector<std::vector<std::size_t>> load_folds(const std::filesystem::path& path);

// --- SemEval XML ------------------------------------------------------------

struct ImportStats {
  std::size_t sentences = 0;
  std::size_t aspects = 0;
  std::size_t skipped_conflict = 0;
  std::size_t skipped_null_target = 0;
  std::size_t merged_duplicates = 0;
  std::size_t dropped_overlapping = 0;
};

// Whitespace and punctuation tokenization with code-point offsets.
struct CharToken {
  std::string text;
  std::size_t begin = 0;  // code points
  std::size_t end = 0;    // exclusive
};
std::vector<CharToken> tokenize_with_offsets(std::string_view text);

// Reads SemEval 2014 (<aspectTerm>) and 2015/2016 (<Opinion>) files.
std::vector<AnnotatedSentence> import_semeval_xml(const std::filesystem::path& path, ImportStats* stats = nullptr);
std::vector<AnnotatedSentence> parse_semeval_xml(std::string_view xml, ImportStats* stats = nullptr);

// --- synthetic corpus ---------------------------------------------------------

struct SyntheticOptions {
  std::size_t sentences = 1000;
  std::uint64_t seed = 7;
  int max_clauses = 3;
  int max_modifiers = 2;
  // probability that a clause after a polar clause is an "except" clause
  double contrast_rate = 0.3;
};

// Vocabulary of exactly 200 word types: cue tokens precede every aspect,
// aspects are [modifier]* head, polarity comes from a polarity word in the
// same clause, and an "except" clause inherits the flipped polarity of the
// clause before it.
std::vector<std::string> synthetic_vocabulary();
std::vector<AnnotatedSentence> generate_synthetic(const SyntheticOptions& options);

}  // namespace fckt::corpus
