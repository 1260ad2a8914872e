#include "fckt/cross_validation.hpp"
#include "fckt/trainer.hpp"

#include "support/oracles.hpp"

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

using namespace fckt;
using namespace fckt::trainer;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("fckt_trainer_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig tiny_config(const std::string& name = "t") {
  RunConfig c;
  c.encoder.dim = 8;
  c.encoder.layers = 1;
  c.encoder.heads = 2;
  c.encoder.max_len = 64;
  c.encoder.dropout = 0.0;
  c.trainer.batch_size = 4;
  c.trainer.epochs = 2;
  c.trainer.seed = 5;
  c.trainer.learning_rate = 5e-3;
  c.output_dir = scratch(name).string();
  c.run_id = "run";
  return c;
}

std::vector<corpus::AnnotatedSentence> corpus_of(std::size_t n, std::uint64_t seed = 3) {
  corpus::SyntheticOptions o;
  o.sentences = n;
  o.seed = seed;
  return corpus::generate_synthetic(o);
}

std::vector<corpus::AnnotatedSentence> multi_aspect(const std::vector<corpus::AnnotatedSentence>& all, std::size_t n) {
  std::vector<corpus::AnnotatedSentence> out;
  for (const auto& s : all) {
    if (s.aspects.size() >= 2 && out.size() < n) out.push_back(s);
  }
  return out;
}

double grad_abs_sum(const ParameterList& params) {
  double s = 0.0;
  for (const Parameter* p : params) s += p->grad.size() == 0 ? 0.0 : p->grad.cwiseAbs().sum();
  return s;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("total objective is the weighted sum of its components") {
  const auto data = corpus_of(40);
  const auto split = corpus::split_sentences(data);
  for (double lambda : {0.0, 0.1, 2.0}) {
    RunConfig c = tiny_config();
    c.trainer.lambda = lambda;
    auto model = FcktModel::create(c, data);
    std::mt19937_64 rng(1);
    ag::Graph g;
    const std::span<const corpus::TrainingExample> batch(split.examples.data(), 8);
    const auto obj = split_objective(g, *model, batch, c, rng, encoder::Mode::inference);
    CHECK(obj.report.cl > 0.0);
    CHECK(obj.report.lambda == lambda);
    CHECK(std::abs(obj.report.total - (obj.report.ae + obj.report.sp + lambda * obj.report.cl)) < 1e-9);
  }
}

TEST_CASE("lambda = 0 and a disabled contrast leave the same gradients") {
  const auto data = corpus_of(40);
  const auto split = corpus::split_sentences(data);
  const std::span<const corpus::TrainingExample> batch(split.examples.data(), 6);
  auto gradients = [&](bool enabled, double lambda) {
    RunConfig c = tiny_config();
    c.contrast.enabled = enabled;
    c.trainer.lambda = lambda;
    auto model = FcktModel::create(c, data);
    for (Parameter* p : model->parameters()) p->zero_grad();
    std::mt19937_64 rng(2);
    ag::Graph g;
    auto obj = split_objective(g, *model, batch, c, rng, encoder::Mode::inference);
    g.backward(obj.total);
    std::vector<Matrix> out;
    for (Parameter* p : model->parameters()) out.push_back(p->grad);
    return std::make_pair(obj.report, out);
  };
  const auto [r_zero, g_zero] = gradients(true, 0.0);
  const auto [r_off, g_off] = gradients(false, 0.1);
  const auto [r_on, g_on] = gradients(true, 0.1);
  CHECK(r_off.cl == 0.0);
  CHECK(r_off.lambda == 0.0);
  CHECK(r_zero.total == r_off.total);
  REQUIRE(g_zero.size() == g_off.size());
  bool identical = true, differs = false;
  for (std::size_t i = 0; i < g_zero.size(); ++i) {
    identical &= (g_zero[i] - g_off[i]).cwiseAbs().maxCoeff() < 1e-12;
    differs |= (g_on[i] - g_off[i]).cwiseAbs().maxCoeff() > 1e-9;
  }
  CHECK(identical);
  CHECK(differs);
}

TEST_CASE("split formulation equals the multi-aspect objective") {
  const auto all = corpus_of(120, 11);
  const auto sentences = multi_aspect(all, 6);
  REQUIRE(sentences.size() == 6);
  const auto split = corpus::split_sentences(sentences);
  for (double xi : {1.0, 0.5, 0.0}) {
    for (auto mode : {transfer::MixMode::gated, transfer::MixMode::convex}) {
      RunConfig c = tiny_config();
      c.transfer.xi = xi;
      c.transfer.mix_mode = mode;
      auto model = FcktModel::create(c, all);
      std::mt19937_64 rng_a(9), rng_b(9);
      ag::Graph ga, gb;
      const auto a = split_objective(ga, *model, split.examples, c, rng_a, encoder::Mode::inference).report;
      const auto b = multi_aspect_objective(gb, *model, sentences, c, rng_b, encoder::Mode::inference).report;
      INFO("xi " << xi);
      CHECK(a.paths == b.paths);
      CHECK(std::abs(a.total - b.total) <= 1e-6 * std::abs(b.total));
      CHECK(std::abs(a.ae - b.ae) <= 1e-6 * std::abs(b.ae));
      CHECK(std::abs(a.sp - b.sp) <= 1e-6 * std::abs(b.sp));
      CHECK(std::abs(a.cl - b.cl) <= 1e-6 * std::abs(b.cl));
    }
  }
}

TEST_CASE("sentiment loss reaches the boundary heads only through the expected path") {
  const auto data = corpus_of(40);
  const auto split = corpus::split_sentences(data);
  const std::span<const corpus::TrainingExample> batch(split.examples.data(), 8);
  auto sp_grad_on_heads = [&](double xi, bool enabled) {
    RunConfig c = tiny_config();
    c.transfer.xi = xi;
    c.transfer.enabled = enabled;
    auto model = FcktModel::create(c, data);
    for (Parameter* p : model->parameters()) p->zero_grad();
    std::mt19937_64 rng(4);
    ag::Graph g;
    auto obj = split_objective(g, *model, batch, c, rng, encoder::Mode::inference);
    g.backward(obj.sp);
    return grad_abs_sum(model->boundary().parameters());
  };
  CHECK(sp_grad_on_heads(0.5, true) > 1e-8);
  CHECK(sp_grad_on_heads(0.0, true) > 1e-8);
  CHECK(sp_grad_on_heads(1.0, true) == 0.0);
  CHECK(sp_grad_on_heads(0.0, false) == 0.0);
}

TEST_CASE("train_step is deterministic for equal seeds and loss falls") {
  const auto data = corpus_of(40);
  const auto split = corpus::split_sentences(data);
  const std::span<const corpus::TrainingExample> batch(split.examples.data(), 8);
  RunConfig c = tiny_config();
  c.encoder.dropout = 0.1;
  auto run = [&] {
    auto model = FcktModel::create(c, data);
    Adam adam(model->parameters(), c.trainer.learning_rate);
    std::mt19937_64 rng(c.trainer.seed);
    std::vector<double> totals;
    for (int step = 0; step < 40; ++step) totals.push_back(train_step(*model, adam, batch, c, rng).total);
    return totals;
  };
  const auto a = run(), b = run();
  CHECK(a == b);
  CHECK(a.back() < 0.5 * a.front());
}

TEST_CASE("non-finite losses raise TrainingError and leave parameters untouched") {
  const auto data = corpus_of(20);
  const auto split = corpus::split_sentences(data);
  const std::span<const corpus::TrainingExample> batch(split.examples.data(), 4);
  RunConfig c = tiny_config();
  auto model = FcktModel::create(c, data);
  Adam adam(model->parameters(), c.trainer.learning_rate);
  std::mt19937_64 rng(1);
  model->classifier().parameters()[3]->value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  std::vector<Matrix> before;
  for (Parameter* p : model->parameters()) before.push_back(p->value);
  try {
    train_step(*model, adam, batch, c, rng);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.component() == "sp");
  }
  CHECK(adam.steps() == 0);
  const auto params = model->parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(std::memcmp(params[i]->value.data(), before[i].data(), sizeof(double) * before[i].size()) == 0);
  }
}

TEST_CASE("adam clips to the global norm") {
  Parameter a("a", Matrix::Zero(1, 2)), b("b", Matrix::Zero(1, 1));
  Adam adam({&a, &b}, 0.1);
  a.grad = Matrix::Constant(1, 2, 3.0);
  b.grad = Matrix::Constant(1, 1, 4.0 * std::sqrt(2.0));
  CHECK(adam.grad_norm() == doctest::Approx(std::sqrt(50.0)));
  CHECK(adam.clip(1.0));
  CHECK(adam.grad_norm() == doctest::Approx(1.0));
  CHECK(!adam.clip(1.0 + 1e-9));
  CHECK(!adam.clip(0.0));
  adam.step();
  // first bias-corrected step moves every coordinate by about lr against its gradient sign
  CHECK(a.value(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(b.value(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("checkpoint reload restores the forward pass bitwise and resumes identically") {
  const auto data = corpus_of(40);
  const auto split = corpus::split_sentences(data);
  const std::span<const corpus::TrainingExample> batch(split.examples.data(), 8);
  RunConfig c = tiny_config("ckpt");
  c.encoder.dropout = 0.1;
  auto model = FcktModel::create(c, data);
  Adam adam(model->parameters(), c.trainer.learning_rate);
  std::mt19937_64 rng(c.trainer.seed);
  for (int step = 0; step < 3; ++step) train_step(*model, adam, batch, c, rng);

  TrainState state;
  state.adam_steps = adam.steps();
  const fs::path path = fs::path(c.output_dir) / "x.ckpt";
  save_checkpoint(path, *model, c, state);
  Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.config.to_json() == c.to_json());
  CHECK(loaded.state.adam_steps == 3);

  for (const auto& s : data) {
    const auto a = model->predict(s.tokens, c.decode_options());
    const auto b = loaded.model->predict(s.tokens, c.decode_options());
    REQUIRE(a.words.size() == b.words.size());
    CHECK(std::memcmp(a.words.data(), b.words.data(), sizeof(double) * a.words.size()) == 0);
    REQUIRE(a.aspects.size() == b.aspects.size());
    for (std::size_t k = 0; k < a.aspects.size(); ++k) {
      CHECK(a.aspects[k].span.start == b.aspects[k].span.start);
      CHECK(a.aspects[k].sentiment.probs == b.aspects[k].sentiment.probs);
    }
  }

  Adam resumed(loaded.model->parameters(), c.trainer.learning_rate);
  resumed.set_steps(loaded.state.adam_steps);
  std::mt19937_64 rng_copy = rng;
  const auto next_a = train_step(*model, adam, batch, c, rng);
  const auto next_b = train_step(*loaded.model, resumed, batch, c, rng_copy);
  CHECK(next_a.total == next_b.total);

  std::ofstream(path, std::ios::binary | std::ios::trunc) << "nope";
  CHECK_THROWS_AS(load_checkpoint(path), ArchiveError);
}

TEST_CASE("hold_out is a seeded partition") {
  const auto data = corpus_of(50);
  const auto a = hold_out(data, 0.1, 4), b = hold_out(data, 0.1, 4), other = hold_out(data, 0.1, 5);
  CHECK(a.valid.size() == 5);
  CHECK(a.train.size() == 45);
  CHECK(a.valid.front().source_id == b.valid.front().source_id);
  std::set<std::string> ids;
  for (const auto& s : a.train) ids.insert(s.source_id);
  for (const auto& s : a.valid) CHECK(ids.insert(s.source_id).second);
  bool differs = false;
  for (std::size_t i = 0; i < a.valid.size(); ++i) differs |= a.valid[i].source_id != other.valid[i].source_id;
  CHECK(differs);
  CHECK(hold_out(corpus_of(3), 0.1, 1).valid.size() == 1);
}

TEST_CASE("train persists the run directory and keeps the best epoch") {
  const auto data = corpus_of(60);
  RunConfig c = tiny_config("train");
  c.trainer.epochs = 3;
  const auto d = hold_out(data, 0.2, 1);
  const auto r = train(d, c);
  CHECK(r.metrics.size() == 3);
  CHECK(fs::exists(r.run_dir / "config.snapshot"));
  CHECK(fs::exists(r.run_dir / "best.ckpt"));
  const int best = r.best.state.best_epoch;
  CHECK(best >= 1);
  CHECK(fs::exists(r.run_dir / ("epoch_" + std::to_string(best) + ".ckpt")));
  std::size_t lines = 0;
  std::ifstream in(r.run_dir / "metrics.jsonl");
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("train"));
    CHECK(j["valid"]["tsa"].contains("f1"));
    ++lines;
  }
  CHECK(lines == 3);
  double best_f1 = -1.0;
  for (const auto& m : r.metrics) best_f1 = std::max(best_f1, m["valid"]["tsa"]["f1"].get<double>());
  CHECK(r.best.state.best_valid_f1 == best_f1);
  CHECK(evaluate(*r.best.model, d.valid, c).f1 == best_f1);

  const auto first = read_file(r.run_dir / "metrics.jsonl");
  train(d, c);
  CHECK(read_file(r.run_dir / "metrics.jsonl") == first);
}

TEST_CASE("zero epochs stores the initial model") {
  const auto data = corpus_of(20);
  RunConfig c = tiny_config("zero");
  c.trainer.epochs = 0;
  const auto r = train(hold_out(data, 0.2, 1), c);
  CHECK(r.metrics.size() == 1);
  CHECK(fs::exists(r.run_dir / "epoch_0.ckpt"));
  auto fresh = FcktModel::create(c, hold_out(data, 0.2, 1).train);
  const auto a = fresh->parameters(), b = r.best.model->parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
}

TEST_CASE("training without aspects is a data error") {
  std::vector<corpus::AnnotatedSentence> empty{fckt::testing::sentence(3, {}, "a"), fckt::testing::sentence(4, {}, "b")};
  CHECK_THROWS_AS(train({empty, empty}, tiny_config("empty")), corpus::DataError);
}

TEST_CASE("cross-validation persists folds, averages folds and drops empty folds from SP") {
  auto data = corpus_of(30);
  const std::size_t k = 3;
  const auto planned = corpus::make_folds(data.size(), k, 21);
  for (std::size_t i : planned[1]) data[i].aspects.clear();

  RunConfig c = tiny_config("cv");
  c.trainer.epochs = 1;
  metrics::CrossValidationOptions o;
  o.folds = k;
  o.seed = 21;
  o.folds_file = fs::path(c.output_dir) / "folds.json";
  const auto r = metrics::cross_validate(data, c, o);
  CHECK(fs::exists(o.folds_file));
  CHECK(r.folds == planned);
  REQUIRE(r.report.folds.size() == k);
  CHECK(r.report.excluded_from_sp == std::vector<std::size_t>{1});
  double mean = 0.0;
  for (const auto& f : r.report.folds) mean += f.f1;
  CHECK(std::abs(r.report.mean.f1 - mean / 3.0) < 1e-12);
  CHECK(std::abs(r.report.mean.sp_accuracy -
                 0.5 * (r.report.folds[0].sp_accuracy + r.report.folds[2].sp_accuracy)) < 1e-12);

  const std::string saved = read_file(o.folds_file);
  const auto again = metrics::cross_validate(data, c, o);
  CHECK(read_file(o.folds_file) == saved);
  CHECK(again.report.mean.f1 == r.report.mean.f1);

  o.folds = 4;
  CHECK_THROWS_AS(metrics::cross_validate(data, c, o), std::invalid_argument);
}
