#pragma once

// End-to-end drivers shared by the CLI and the test suites: tree generation,
// model training with a held-out report, prior-guided search, and the
// transfer experiment that rebuilds the sources -> model -> logreg-search
// pipeline for every condition.

#include <algorithm>
#include <atomic>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dfopt/benchmarks.hpp"
#include "dfopt/mcts.hpp"

namespace dfopt {

struct GenerateResult {
  SearchReport report;
  std::vector<DatasetRecord> dataset;
};

inline GenerateResult run_generate(const Program& program, const Evaluator& evaluator,
                                   SearchConfig config, double percentile_cutoff = 0.9,
                                   int max_pairs = kDefaultMaxPairs) {
  config.mode = SearchMode::kUct;
  GenerateResult res;
  res.report = run_search(program, evaluator, config);
  if (!res.report.valid)
    throw SearchError("tree generation failed: " + res.report.error);
  res.dataset = export_dataset(*res.report.root, percentile_cutoff, max_pairs);
  return res;
}

struct TrainSummary {
  ModelParams params;
  std::vector<double> epoch_losses;
  size_t train_count = 0;
  size_t heldout_count = 0;
  double heldout_accuracy = 0;
  double majority_baseline = 0;
};

// Fixed seeded 80/20 split; the model is fit on the 80% side and the 20%
// side only produces the reported accuracy numbers.
inline TrainSummary run_train(const std::vector<DatasetRecord>& records,
                              const TrainConfig& cfg, int max_pairs = kDefaultMaxPairs) {
  if (records.empty()) throw ModelError("no training records");
  std::vector<size_t> order(records.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(cfg.seed + 0x51b11);
  std::shuffle(order.begin(), order.end(), rng);
  size_t heldout = records.size() / 5;
  size_t train_n = records.size() - heldout;

  std::vector<DatasetRecord> train_set, test_set;
  for (size_t i = 0; i < order.size(); ++i)
    (i < train_n ? train_set : test_set).push_back(records[order[i]]);

  TrainSummary out;
  TrainResult tr = train(train_set, cfg, max_pairs);
  out.params = std::move(tr.params);
  out.epoch_losses = std::move(tr.epoch_losses);
  out.train_count = train_set.size();
  out.heldout_count = test_set.size();
  if (!test_set.empty()) {
    int correct = 0, positives = 0;
    for (const DatasetRecord& r : test_set) {
      double p = forward_flat(out.params, r.features);
      if ((p >= 0.5 ? 1 : 0) == r.label) ++correct;
      positives += r.label;
    }
    out.heldout_accuracy = static_cast<double>(correct) / static_cast<double>(test_set.size());
    int majority = std::max(positives, static_cast<int>(test_set.size()) - positives);
    out.majority_baseline = static_cast<double>(majority) / static_cast<double>(test_set.size());
  }
  return out;
}

// ---- Transfer experiment (the Table-1 style study) ----

struct ExperimentConfig {
  int num_seeds = 20;
  uint64_t seed_base = 1000;      // search i uses seed_base + i
  int budget = 300;
  int max_depth = 5;
  double c_uct = 0.5;
  double c_prior = 1.0;
  double gamma = 1.0;
  int source_budget = 2000;       // UCT budget for source-tree generation
  uint64_t source_seed = 7;
  double percentile_cutoff = 0.9;
  TrainConfig train_cfg{0.3, 600, 1024, 11, 0.0};
  CostParams cost;
  int max_pairs = kDefaultMaxPairs;
  int jobs = 1;
  bool with_oracle = true;
};

struct ConditionRow {
  std::string condition;
  std::vector<uint64_t> seeds;
  std::vector<int> steps;   // -1 when the target was not found within budget
  int censored = 0;
  double median_value = 0;  // censored entries enter as budget + 1
  std::string median_display;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<ConditionRow> rows;
  std::vector<double> source_heldout_accuracy;  // logreg, kmeans, etl order
};

namespace detail {

inline void finalize_row(ConditionRow& row, int budget) {
  std::vector<double> vals;
  row.censored = 0;
  for (int s : row.steps) {
    if (s < 0) { vals.push_back(budget + 1); ++row.censored; }
    else vals.push_back(s);
  }
  std::sort(vals.begin(), vals.end());
  size_t n = vals.size();
  row.median_value = n % 2 ? vals[n / 2] : (vals[n / 2 - 1] + vals[n / 2]) / 2.0;
  if (row.median_value > budget) row.median_display = "> " + std::to_string(budget);
  else row.median_display = format_double(row.median_value);
}

}  // namespace detail

// Runs one condition: `num_seeds` searches on logreg with the given mode and
// prior factory, collecting steps-to-target. Searches are independent, so the
// seed loop can fan out over `jobs` threads.
inline ConditionRow run_condition(const std::string& name, SearchMode mode,
                                  const std::function<PriorFn()>& prior_factory,
                                  const ExperimentConfig& cfg) {
  Program root = make_benchmark("logreg");
  TargetSpec target = logreg_target();
  Evaluator evaluator = make_sim_evaluator(cfg.cost);

  ConditionRow row;
  row.condition = name;
  row.seeds.resize(cfg.num_seeds);
  row.steps.assign(cfg.num_seeds, -1);

  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::string first_error;
  auto worker = [&] {
    try {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= cfg.num_seeds) return;
        SearchConfig sc;
        sc.mode = mode;
        sc.budget = cfg.budget;
        sc.max_depth = cfg.max_depth;
        sc.c_uct = cfg.c_uct;
        sc.c_prior = cfg.c_prior;
        sc.gamma = cfg.gamma;
        sc.seed = cfg.seed_base + static_cast<uint64_t>(i);
        sc.check_invariants = false;  // validated by the bandit suite; hot path here
        PriorFn prior = prior_factory ? prior_factory() : nullptr;
        SearchReport rep = run_search(root, evaluator, sc, target, prior);
        if (!rep.valid) throw SearchError("condition '" + name + "': " + rep.error);
        row.seeds[i] = sc.seed;
        row.steps[i] = rep.steps_to_target && *rep.steps_to_target <= cfg.budget
                           ? *rep.steps_to_target : -1;
      }
    } catch (const std::exception& e) {
      std::lock_guard lk(err_mutex);
      if (first_error.empty()) first_error = e.what();
    }
  };
  int jobs = std::max(1, cfg.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (!first_error.empty()) throw SearchError(first_error);
  detail::finalize_row(row, cfg.budget);
  return row;
}

inline ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                       const std::function<void(const std::string&)>& log = {}) {
  auto say = [&](const std::string& msg) { if (log) log(msg); };
  ExperimentReport report;
  report.config = cfg;

  Evaluator evaluator = make_sim_evaluator(cfg.cost);

  // Source trees and per-source models.
  std::vector<ModelParams> models;
  for (const std::string& id : benchmark_ids()) {
    say("building source tree: " + id);
    SearchConfig sc;
    sc.mode = SearchMode::kUct;
    sc.budget = cfg.source_budget;
    sc.max_depth = cfg.max_depth;
    sc.c_uct = cfg.c_uct;
    sc.gamma = cfg.gamma;
    sc.seed = cfg.source_seed;
    sc.check_invariants = false;
    GenerateResult gen = run_generate(make_benchmark(id), evaluator, sc,
                                      cfg.percentile_cutoff, cfg.max_pairs);
    say("training prior from " + id + " (" + std::to_string(gen.dataset.size()) + " records)");
    TrainSummary ts = run_train(gen.dataset, cfg.train_cfg, cfg.max_pairs);
    report.source_heldout_accuracy.push_back(ts.heldout_accuracy);
    models.push_back(std::move(ts.params));
  }

  auto model_prior = [&](size_t idx) {
    ModelParams params = models[idx];
    return std::function<PriorFn()>([params] { return make_prior(params); });
  };

  say("condition: uniform");
  report.rows.push_back(run_condition("uniform", SearchMode::kUniform, nullptr, cfg));
  say("condition: uct-unaided");
  report.rows.push_back(run_condition("uct-unaided", SearchMode::kUct, nullptr, cfg));
  say("condition: prior-logreg");
  report.rows.push_back(run_condition("prior-logreg", SearchMode::kPrior, model_prior(0), cfg));
  say("condition: prior-kmeans");
  report.rows.push_back(run_condition("prior-kmeans", SearchMode::kPrior, model_prior(1), cfg));
  say("condition: prior-etl");
  report.rows.push_back(run_condition("prior-etl", SearchMode::kPrior, model_prior(2), cfg));
  if (cfg.with_oracle) {
    say("condition: oracle");
    report.rows.push_back(run_condition(
        "oracle", SearchMode::kPrior, [] { return logreg_oracle_prior(); }, cfg));
  }
  return report;
}

// Machine-readable report: one JSON object per line, first the configuration
// echo, then one line per condition. Byte-identical across repeated runs.
inline std::string experiment_to_jsonl(const ExperimentReport& report) {
  const ExperimentConfig& c = report.config;
  nlohmann::json hdr;
  hdr["experiment"] = {
      {"num_seeds", c.num_seeds}, {"seed_base", c.seed_base}, {"budget", c.budget},
      {"max_depth", c.max_depth}, {"c_uct", c.c_uct}, {"c_prior", c.c_prior},
      {"gamma", c.gamma}, {"source_budget", c.source_budget}, {"source_seed", c.source_seed},
      {"percentile_cutoff", c.percentile_cutoff},
      {"train", {{"learning_rate", c.train_cfg.learning_rate}, {"epochs", c.train_cfg.epochs},
                 {"batch_size", c.train_cfg.batch_size}, {"seed", c.train_cfg.seed},
                 {"l2_penalty", c.train_cfg.l2_penalty}}},
      {"cost", {{"alpha", c.cost.alpha}, {"mu", c.cost.mu}, {"sigma", c.cost.sigma},
                {"beta", c.cost.beta}, {"rho", c.cost.rho}, {"workers", c.cost.workers},
                {"kappa", c.cost.kappa}, {"memory_budget_bytes", c.cost.memory_budget_bytes}}},
      {"max_pairs", c.max_pairs}};
  std::string out = hdr.dump() + "\n";
  for (const ConditionRow& row : report.rows) {
    nlohmann::json j;
    j["condition"] = row.condition;
    j["seeds"] = row.seeds;
    j["steps"] = row.steps;
    j["censored"] = row.censored;
    j["median"] = row.median_value;
    j["median_display"] = row.median_display;
    out += j.dump() + "\n";
  }
  return out;
}

// Human-readable table.
inline std::string experiment_to_table(const ExperimentReport& report) {
  std::string out;
  out += "condition       median steps   censored\n";
  out += "---------       ------------   --------\n";
  char buf[128];
  for (const ConditionRow& row : report.rows) {
    std::snprintf(buf, sizeof(buf), "%-15s %-14s %d/%zu\n", row.condition.c_str(),
                  row.median_display.c_str(), row.censored, row.steps.size());
    out += buf;
  }
  return out;
}

}  // namespace dfopt
