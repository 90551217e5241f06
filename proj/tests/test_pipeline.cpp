#include <catch2/catch_amalgamated.hpp>

#include "dfopt/pipeline.hpp"

using namespace dfopt;

namespace {

Evaluator sim() { return make_sim_evaluator(CostParams{}); }

SearchConfig gen_cfg(int budget, uint64_t seed) {
  SearchConfig cfg;
  cfg.budget = budget;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("benchmark registry") {
  CHECK(benchmark_ids() == std::vector<std::string>{"logreg", "kmeans", "etl"});
  CHECK_THROWS(make_benchmark("nope"));
  Program etl = make_benchmark("etl");
  for (const Statement& s : etl.statements)
    CHECK_FALSE(std::holds_alternative<LoopStmt>(s.node));  // single-pass program
}

TEST_CASE("generate: dataset has one record per evaluation") {
  GenerateResult res = run_generate(make_benchmark("etl"), sim(), gen_cfg(50, 9));
  CHECK(res.report.evaluations == 51);
  CHECK(res.dataset.size() == 51);

  GenerateResult res2 = run_generate(make_benchmark("etl"), sim(), gen_cfg(50, 9));
  CHECK(write_dataset(res.dataset) == write_dataset(res2.dataset));
}

TEST_CASE("train on a kmeans tree: descending loss, useful held-out accuracy") {
  GenerateResult gen = run_generate(make_benchmark("kmeans"), sim(), gen_cfg(300, 7));
  TrainConfig cfg;
  cfg.seed = 11;
  TrainSummary ts = run_train(gen.dataset, cfg);
  REQUIRE(ts.epoch_losses.size() == static_cast<size_t>(cfg.epochs));
  for (size_t i = 1; i < ts.epoch_losses.size(); ++i)
    CHECK(ts.epoch_losses[i] <= ts.epoch_losses[i - 1] + 1e-6);
  CHECK(ts.heldout_accuracy >= ts.majority_baseline);

  // Round trip through the model file preserves behavior.
  ModelParams reparsed = parse_model(serialize_model(ts.params));
  DatasetRecord probe = gen.dataset.front();
  CHECK(forward_flat(reparsed, probe.features) == forward_flat(ts.params, probe.features));
}

TEST_CASE("training twice with one seed gives identical models") {
  GenerateResult gen = run_generate(make_benchmark("etl"), sim(), gen_cfg(80, 3));
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.seed = 4;
  CHECK(serialize_model(run_train(gen.dataset, cfg).params) ==
        serialize_model(run_train(gen.dataset, cfg).params));
}

TEST_CASE("oracle prior marches straight to the logreg target") {
  for (uint64_t seed : {1, 7, 1000, 424242}) {
    SearchConfig cfg;
    cfg.mode = SearchMode::kPrior;
    cfg.budget = 300;
    cfg.seed = seed;
    SearchReport rep = run_search(make_benchmark("logreg"), sim(), cfg, logreg_target(),
                                  logreg_oracle_prior());
    REQUIRE(rep.valid);
    REQUIRE(rep.steps_to_target.has_value());
    CHECK(*rep.steps_to_target == 4);
  }
}

TEST_CASE("uct on logreg reaches the target region within budget") {
  SearchConfig cfg;
  cfg.budget = 300;
  cfg.seed = 1;
  SearchReport rep = run_search(make_benchmark("logreg"), sim(), cfg, logreg_target());
  REQUIRE(rep.valid);
  REQUIRE(rep.best != nullptr);
  CHECK(rep.best->metric <= 4.5);
}

TEST_CASE("small experiment is deterministic byte for byte") {
  ExperimentConfig cfg;
  cfg.num_seeds = 3;
  cfg.budget = 60;
  cfg.source_budget = 60;
  cfg.train_cfg.epochs = 30;
  cfg.with_oracle = true;
  std::string a = experiment_to_jsonl(run_experiment(cfg));
  std::string b = experiment_to_jsonl(run_experiment(cfg));
  CHECK(a == b);
  CHECK(a.find("\"condition\":\"oracle\"") != std::string::npos);
}

TEST_CASE("experiment rows carry censoring and medians") {
  ExperimentConfig cfg;
  cfg.num_seeds = 2;
  cfg.budget = 12;  // tiny budget: baselines will censor
  cfg.source_budget = 40;
  cfg.train_cfg.epochs = 20;
  cfg.with_oracle = true;
  ExperimentReport rep = run_experiment(cfg);
  REQUIRE(rep.rows.size() == 6);
  CHECK(rep.rows[0].condition == "uniform");
  const ConditionRow* oracle = nullptr;
  for (const ConditionRow& row : rep.rows) {
    CHECK(row.steps.size() == 2);
    CHECK(row.seeds.size() == 2);
    if (row.condition == "oracle") oracle = &row;
    if (row.censored == static_cast<int>(row.steps.size()))
      CHECK(row.median_display == "> 12");
  }
  REQUIRE(oracle);
  CHECK(oracle->median_value == 4.0);

  // Parallel execution returns the same rows.
  cfg.jobs = 4;
  ExperimentReport par = run_experiment(cfg);
  CHECK(experiment_to_jsonl(par) == experiment_to_jsonl(rep));
}

TEST_CASE("no search can hit a depth-4 target in fewer than 4 steps") {
  ExperimentConfig cfg;
  cfg.num_seeds = 4;
  cfg.budget = 40;
  cfg.source_budget = 40;
  cfg.train_cfg.epochs = 20;
  ExperimentReport rep = run_experiment(cfg);
  for (const ConditionRow& row : rep.rows)
    for (int s : row.steps)
      if (s >= 0) CHECK(s >= 4);
}
