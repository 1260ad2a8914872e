#pragma once

#include "fckt/config.hpp"
#include "fckt/corpus.hpp"
#include "fckt/metrics.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace fckt::metrics {

struct CrossValidationOptions {
  std::size_t folds = 10;
  std::uint64_t seed = 13;
  // Fold assignment file; read when it exists, written otherwise. Empty
  // disables persistence.
  std::filesystem::path folds_file;
  bool persist_runs = false;  // per-fold run directories under output_dir/run_id
  std::ostream* log = nullptr;
};

struct CrossValidationResult {
  AggregateReport report;
  std::vector<std::vector<std::size_t>> folds;
};

// Each fold in turn is the test set; the remaining sentences are trained on
// (with a seeded validation hold-out) and the fold is scored. Folds without
// gold aspects are kept for TSA and excluded from the SP aggregate.
CrossValidationResult cross_validate(const std::vector<corpus::AnnotatedSentence>& sentences, const RunConfig& config,
                                     const CrossValidationOptions& options);

}  // namespace fckt::metrics
