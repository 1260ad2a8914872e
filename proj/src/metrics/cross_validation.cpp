#include "fckt/cross_validation.hpp"

#include "fckt/trainer.hpp"

#include <ostream>
#include <stdexcept>

namespace fckt::metrics {

CrossValidationResult cross_validate(const std::vector<corpus::AnnotatedSentence>& sentences, const RunConfig& config,
                                     const CrossValidationOptions& options) {
  if (options.folds < 2) throw std::invalid_argument("cross-validation needs at least 2 folds");
  if (sentences.size() < options.folds) {
    throw std::invalid_argument("cannot make " + std::to_string(options.folds) + " folds from " +
                                std::to_string(sentences.size()) + " sentences");
  }
  CrossValidationResult out;
  if (!options.folds_file.empty() && std::filesystem::exists(options.folds_file)) {
    out.folds = corpus::load_folds(options.folds_file);
    std::size_t covered = 0;
    for (const auto& f : out.folds) covered += f.size();
    if (out.folds.size() != options.folds || covered != sentences.size()) {
      throw std::invalid_argument("fold file " + options.folds_file.string() + " does not match the dataset");
    }
  } else {
    out.folds = corpus::make_folds(sentences.size(), options.folds, options.seed);
    if (!options.folds_file.empty()) corpus::save_folds(options.folds_file, out.folds, options.seed);
  }

  std::vector<char> in_fold(sentences.size());
  std::vector<EvalReport> reports;
  std::vector<std::size_t> excluded;
  for (std::size_t k = 0; k < out.folds.size(); ++k) {
    std::fill(in_fold.begin(), in_fold.end(), 0);
    std::vector<corpus::AnnotatedSentence> test, rest;
    for (std::size_t i : out.folds[k]) in_fold.at(i) = 1;
    for (std::size_t i = 0; i < sentences.size(); ++i) (in_fold[i] ? test : rest).push_back(sentences[i]);

    RunConfig fold_config = config;
    fold_config.output_dir = (std::filesystem::path(config.output_dir) / config.run_id).string();
    fold_config.run_id = "fold_" + std::to_string(k);
    const auto data = trainer::hold_out(std::move(rest), 0.1, config.trainer.seed + k);
    trainer::TrainOptions train_options;
    train_options.persist = options.persist_runs;
    const auto result = trainer::train(data, fold_config, train_options);
    EvalReport report = evaluate(*result.best.model, test, fold_config);
    if (corpus::count_aspects(test) == 0) {
      excluded.push_back(k);
      report.warnings.push_back("fold " + std::to_string(k) + " has no gold aspects; excluded from SP aggregate");
    }
    if (options.log != nullptr) {
      *options.log << "fold " << k << ": tsa_f1=" << report.f1 << " ae_f1=" << report.ae_f1
                   << " sp_acc=" << report.sp_accuracy << "\n";
    }
    reports.push_back(std::move(report));
  }
  out.report = aggregate(reports, excluded);
  return out;
}

}  // namespace fckt::metrics
