// dfopt command line: generate search trees over program alterations, train
// sampling-policy priors from them, run prior-guided searches, and reproduce
// the transfer experiment.

#include <cstdio>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dfopt/benchmarks.hpp"
#include "dfopt/external.hpp"
#include "dfopt/mcts.hpp"
#include "dfopt/pipeline.hpp"

namespace {

using namespace dfopt;

struct CommonOpts {
  std::string bench;
  std::string program_file;
  std::string evaluator = "sim";
  double noise_rel = 0.1;
  uint64_t noise_seed = 0;
  std::string cost_params_file;
  int budget = 300;
  int max_depth = 5;
  double c_uct = 0.5;
  double c_prior = 1.0;
  double gamma = 1.0;
  uint64_t seed = 0;
  int max_pairs = kDefaultMaxPairs;
};

void add_program_opts(CLI::App* cmd, CommonOpts& o) {
  auto* b = cmd->add_option("--bench", o.bench, "built-in benchmark (logreg|kmeans|etl)");
  auto* p = cmd->add_option("--program", o.program_file, "program IR file");
  b->excludes(p);
}

void add_search_opts(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--budget", o.budget, "max node evaluations");
  cmd->add_option("--max-depth", o.max_depth, "tree depth cap");
  cmd->add_option("--c-uct", o.c_uct, "UCT exploration constant");
  cmd->add_option("--c-prior", o.c_prior, "prior-mode constant");
  cmd->add_option("--gamma", o.gamma, "backprop decay in (0,1]");
  cmd->add_option("--seed", o.seed, "search seed");
  cmd->add_option("--max-pairs", o.max_pairs, "feature padding length (pairs)");
}

void add_eval_opts(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--evaluator", o.evaluator, "sim | sim-noisy | extern:<cmd>");
  cmd->add_option("--noise-rel", o.noise_rel, "relative noise for sim-noisy");
  cmd->add_option("--noise-seed", o.noise_seed, "seed for sim-noisy");
  cmd->add_option("--cost-params", o.cost_params_file, "cost parameter file (key=value)");
}

Program load_program(const CommonOpts& o) {
  if (!o.bench.empty()) return make_benchmark(o.bench);
  if (!o.program_file.empty()) return parse_program(read_file(o.program_file));
  throw std::runtime_error("need --bench or --program");
}

CostParams load_cost(const CommonOpts& o) {
  if (o.cost_params_file.empty()) return CostParams{};
  return parse_cost_params(read_file(o.cost_params_file));
}

Evaluator build_evaluator(const CommonOpts& o) {
  if (o.evaluator == "sim") return make_sim_evaluator(load_cost(o));
  if (o.evaluator == "sim-noisy")
    return make_noisy_evaluator(load_cost(o), o.noise_rel, o.noise_seed);
  if (o.evaluator.rfind("extern:", 0) == 0) {
    ExternalEvalConfig cfg;
    cfg.command = o.evaluator.substr(7);
    return make_external_evaluator(cfg);
  }
  throw std::runtime_error("unknown evaluator '" + o.evaluator + "'");
}

SearchConfig build_config(const CommonOpts& o, SearchMode mode) {
  SearchConfig sc;
  sc.mode = mode;
  sc.budget = o.budget;
  sc.max_depth = o.max_depth;
  sc.c_uct = o.c_uct;
  sc.c_prior = o.c_prior;
  sc.gamma = o.gamma;
  sc.seed = o.seed;
  return sc;
}

void print_recommendation(const SearchReport& rep) {
  std::printf("evaluations: %d\n", rep.evaluations);
  std::printf("root metric: %s min\n", format_double(rep.root_metric).c_str());
  if (!rep.best) return;
  std::printf("best metric: %s min (q=%.4f)\n", format_double(rep.best->metric).c_str(),
              rep.best->q_mean());
  std::vector<Action> path = path_from_root(*rep.best);
  if (path.empty()) {
    std::printf("recommendation: keep the program as is\n");
    return;
  }
  std::printf("recommended alterations (in order):\n");
  for (size_t i = 0; i < path.size(); ++i)
    std::printf("  %zu. %s\n", i + 1, action_to_string(path[i]).c_str());
  std::printf("projected: %s min -> %s min\n", format_double(rep.root_metric).c_str(),
              format_double(rep.best->metric).c_str());
}

int cmd_bench(const std::string& sub, const std::string& id, const std::string& out,
              const std::string& target_out) {
  if (sub == "list") {
    for (const std::string& b : benchmark_ids()) std::printf("%s\n", b.c_str());
    return 0;
  }
  std::string text = benchmark_text(id);
  if (out.empty()) std::fputs(text.c_str(), stdout);
  else write_file(out, text);
  if (!target_out.empty()) {
    if (id != "logreg") throw std::runtime_error("only logreg ships a target spec");
    write_file(target_out, kLogRegTargetText);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"alteration search for dataflow programs"};
  app.require_subcommand(1);

  CommonOpts gen_o, search_o;
  std::string gen_tree_out, gen_data_out;
  double gen_cutoff = 0.9;

  auto* gen = app.add_subcommand("generate", "build a UCT tree and export training data");
  add_program_opts(gen, gen_o);
  add_search_opts(gen, gen_o);
  add_eval_opts(gen, gen_o);
  gen->add_option("--export-tree", gen_tree_out, "tree file (jsonl)");
  gen->add_option("--export-dataset", gen_data_out, "dataset file");
  gen->add_option("--cutoff", gen_cutoff, "label percentile cutoff");

  std::vector<std::string> train_files;
  std::string model_out;
  TrainConfig train_cfg;
  int train_max_pairs = kDefaultMaxPairs;
  auto* tr = app.add_subcommand("train", "train a sampling-policy prior from datasets");
  tr->add_option("--train-data", train_files, "dataset file(s)")->required()->expected(-1);
  tr->add_option("--model-out", model_out, "model output file")->required();
  tr->add_option("--lr", train_cfg.learning_rate, "learning rate");
  tr->add_option("--epochs", train_cfg.epochs, "training epochs");
  tr->add_option("--batch", train_cfg.batch_size, "mini-batch size");
  tr->add_option("--seed", train_cfg.seed, "training seed");
  tr->add_option("--l2", train_cfg.l2_penalty, "L2 penalty");
  tr->add_option("--max-pairs", train_max_pairs, "feature padding length (pairs)");

  std::string search_mode = "uct", model_file, target_file, report_out;
  std::string search_tree_out, search_data_out;
  bool bench_target = false;
  double search_cutoff = 0.9;
  auto* se = app.add_subcommand("search", "search a program for alterations");
  add_program_opts(se, search_o);
  add_search_opts(se, search_o);
  add_eval_opts(se, search_o);
  se->add_option("--mode", search_mode, "uct | prior | uniform");
  se->add_option("--model", model_file, "model file (required for prior mode)");
  se->add_option("--target", target_file, "target spec file");
  se->add_flag("--bench-target", bench_target, "use the built-in logreg target");
  se->add_option("--report", report_out, "write machine-readable report (jsonl)");
  se->add_option("--export-tree", search_tree_out, "tree file (jsonl)");
  se->add_option("--export-dataset", search_data_out, "dataset file");
  se->add_option("--cutoff", search_cutoff, "label percentile cutoff");

  ExperimentConfig exp_cfg;
  std::string exp_out, exp_table_out;
  auto* ex = app.add_subcommand("experiment", "run the transfer experiment on logreg");
  ex->add_option("--seeds", exp_cfg.num_seeds, "seeds per condition");
  ex->add_option("--seed-base", exp_cfg.seed_base, "first search seed");
  ex->add_option("--budget", exp_cfg.budget, "evaluations per search");
  ex->add_option("--max-depth", exp_cfg.max_depth, "tree depth cap");
  ex->add_option("--source-budget", exp_cfg.source_budget, "evaluations per source tree");
  ex->add_option("--jobs", exp_cfg.jobs, "concurrent searches");
  ex->add_option("--out", exp_out, "machine-readable report file (jsonl)");
  std::string exp_cost_file;
  ex->add_option("--cost-params", exp_cost_file, "cost parameter file");
  bool exp_quiet = false;
  ex->add_flag("--quiet", exp_quiet, "suppress progress lines");

  std::string bench_sub, bench_id, bench_out, bench_target_out;
  auto* be = app.add_subcommand("bench", "list or emit built-in benchmarks");
  be->add_option("action", bench_sub, "list | emit")->required();
  be->add_option("id", bench_id, "benchmark id (for emit)");
  be->add_option("-o,--out", bench_out, "output file (default stdout)");
  be->add_option("--target-out", bench_target_out, "also write the target spec (logreg)");

  std::string eval_cost_file;
  auto* ev = app.add_subcommand(
      "eval", "read program IR on stdin, print the simulated metric (external protocol)");
  ev->add_option("--cost-params", eval_cost_file, "cost parameter file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      Program prog = load_program(gen_o);
      GenerateResult res = run_generate(prog, build_evaluator(gen_o),
                                        build_config(gen_o, SearchMode::kUct), gen_cutoff,
                                        gen_o.max_pairs);
      if (!gen_tree_out.empty()) write_file(gen_tree_out, export_tree(*res.report.root));
      if (!gen_data_out.empty()) write_file(gen_data_out, write_dataset(res.dataset));
      std::printf("nodes: %d\n", res.report.evaluations);
      print_recommendation(res.report);
      return 0;
    }
    if (tr->parsed()) {
      std::vector<DatasetRecord> records;
      for (const std::string& f : train_files) {
        auto part = read_dataset(read_file(f));
        records.insert(records.end(), part.begin(), part.end());
      }
      TrainSummary ts = run_train(records, train_cfg, train_max_pairs);
      write_file(model_out, serialize_model(ts.params));
      std::printf("records: %zu train, %zu held out\n", ts.train_count, ts.heldout_count);
      for (size_t i = 0; i < ts.epoch_losses.size(); ++i)
        if ((i + 1) % 20 == 0 || i + 1 == ts.epoch_losses.size())
          std::printf("epoch %3zu  loss %.6f\n", i + 1, ts.epoch_losses[i]);
      std::printf("held-out accuracy: %.3f (majority baseline %.3f)\n", ts.heldout_accuracy,
                  ts.majority_baseline);
      std::printf("model written to %s\n", model_out.c_str());
      return 0;
    }
    if (se->parsed()) {
      Program prog = load_program(search_o);
      SearchMode mode = parse_mode(search_mode);
      PriorFn prior;
      if (mode == SearchMode::kPrior) {
        if (model_file.empty()) throw std::runtime_error("prior mode needs --model");
        prior = make_prior(parse_model(read_file(model_file)));
      } else if (!model_file.empty()) {
        throw std::runtime_error("--model is only valid with --mode prior");
      }
      std::optional<TargetSpec> target;
      if (bench_target) target = logreg_target();
      else if (!target_file.empty()) target = parse_target(read_file(target_file));
      if (target) validate_target(prog, *target);

      SearchReport rep = run_search(prog, build_evaluator(search_o),
                                    build_config(search_o, mode), target, prior);
      if (!rep.valid) {
        std::fprintf(stderr, "search aborted: %s\n", rep.error.c_str());
        return 1;
      }
      if (target) {
        if (rep.steps_to_target)
          std::printf("steps to target: %d\n", *rep.steps_to_target);
        else
          std::printf("steps to target: > %d\n", search_o.budget);
      }
      print_recommendation(rep);
      if (!search_tree_out.empty()) write_file(search_tree_out, export_tree(*rep.root));
      if (!search_data_out.empty())
        write_file(search_data_out, write_dataset(export_dataset(*rep.root, search_cutoff,
                                                                 search_o.max_pairs)));
      if (!report_out.empty()) {
        nlohmann::json j;
        j["mode"] = to_string(build_config(search_o, mode).mode);
        j["budget"] = search_o.budget;
        j["seed"] = search_o.seed;
        j["evaluations"] = rep.evaluations;
        j["root_metric"] = rep.root_metric;
        j["best_metric"] = rep.best ? rep.best->metric : 0.0;
        std::vector<std::string> path;
        if (rep.best)
          for (const Action& a : path_from_root(*rep.best)) path.push_back(action_to_string(a));
        j["best_path"] = path;
        if (rep.steps_to_target) j["steps_to_target"] = *rep.steps_to_target;
        else j["steps_to_target"] = nullptr;
        write_file(report_out, j.dump() + "\n");
      }
      return 0;
    }
    if (ex->parsed()) {
      if (!exp_cost_file.empty()) exp_cfg.cost = parse_cost_params(read_file(exp_cost_file));
      auto log = exp_quiet ? std::function<void(const std::string&)>{}
                           : [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); };
      ExperimentReport rep = run_experiment(exp_cfg, log);
      std::fputs(experiment_to_table(rep).c_str(), stdout);
      if (!exp_out.empty()) write_file(exp_out, experiment_to_jsonl(rep));
      return 0;
    }
    if (be->parsed()) return cmd_bench(bench_sub, bench_id, bench_out, bench_target_out);
    if (ev->parsed()) {
      std::string text((std::istreambuf_iterator<char>(std::cin)),
                       std::istreambuf_iterator<char>());
      CostParams cost =
          eval_cost_file.empty() ? CostParams{} : parse_cost_params(read_file(eval_cost_file));
      EvaluationResult res = evaluate(parse_program(text), cost);
      std::printf("%s\n", format_double(res.metric_minutes).c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
