#pragma once

// Deterministic surrogate for distributed execution of a program. The model
// reproduces the cost mechanics that matter for alteration search: shuffles
// on joins of non-co-partitioned inputs, lineage recomputation of uncached
// entities inside loops, and broadcast joins trading shuffles for replication.
//
// Execution model: a statement whose entity is never consumed later (a sink)
// demands its value once per enclosing-loop iteration product. Demands pull
// lineage lazily: an uncached entity re-runs its full upstream cost, a cached
// one is read at rho per byte. Caches of entities defined inside a loop are
// invalidated at every iteration of that loop, since the entity is redefined
// by each pass.

#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dfopt/actions.hpp"
#include "dfopt/program.hpp"

namespace dfopt {

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CostParams {
  double alpha = 1.5e-8;  // load cost per byte
  double mu = 2e-9;       // compute cost per byte per unit cost_factor
  double sigma = 2.5e-8;  // shuffle cost per byte
  double beta = 5e-9;     // broadcast cost per byte per worker
  double rho = 3e-9;      // cached-read cost per byte
  int workers = 40;
  double kappa = 0.02;    // cost units -> minutes
  double memory_budget_bytes = 1.5e9;  // <= 0 disables the cap

  void check() const {
    if (alpha < 0 || mu < 0 || sigma < 0 || beta < 0 || rho < 0)
      throw EvalError("cost rates must be >= 0");
    if (workers < 1) throw EvalError("workers must be >= 1");
    if (!(rho < sigma)) throw EvalError("rho must be < sigma");
    if (kappa <= 0) throw EvalError("kappa must be > 0");
  }
};

inline std::string serialize_cost_params(const CostParams& p) {
  std::string out;
  out += "alpha=" + format_double(p.alpha) + "\n";
  out += "mu=" + format_double(p.mu) + "\n";
  out += "sigma=" + format_double(p.sigma) + "\n";
  out += "beta=" + format_double(p.beta) + "\n";
  out += "rho=" + format_double(p.rho) + "\n";
  out += "workers=" + std::to_string(p.workers) + "\n";
  out += "kappa=" + format_double(p.kappa) + "\n";
  out += "memory_budget_bytes=" + format_double(p.memory_budget_bytes) + "\n";
  return out;
}

inline CostParams parse_cost_params(const std::string& text) {
  CostParams p;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw EvalError("cost params line " + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key == "alpha") p.alpha = parse_double(val, "alpha");
    else if (key == "mu") p.mu = parse_double(val, "mu");
    else if (key == "sigma") p.sigma = parse_double(val, "sigma");
    else if (key == "beta") p.beta = parse_double(val, "beta");
    else if (key == "rho") p.rho = parse_double(val, "rho");
    else if (key == "workers") p.workers = static_cast<int>(parse_ll(val, "workers"));
    else if (key == "kappa") p.kappa = parse_double(val, "kappa");
    else if (key == "memory_budget_bytes") p.memory_budget_bytes = parse_double(val, "memory_budget_bytes");
    else throw EvalError("cost params line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  p.check();
  return p;
}

struct StatementCost {
  int statement_index = 0;  // flattened position
  std::string op;
  double units = 0;
};

struct EvaluationResult {
  double metric_minutes = 0;
  std::vector<StatementCost> breakdown;  // sums to metric_minutes / kappa
};

namespace detail {

struct SimStatement {
  const Statement* stmt = nullptr;
  int flat_index = 0;
};

class CostSim {
 public:
  CostSim(const Program& prog, const CostParams& params)
      : prog_(prog), params_(params), sizes_(entity_sizes(prog)), aliases_(partition_aliases(prog)) {
    int idx = 0;
    for_each_flat(prog, [&](const Statement& s, long long, int) {
      if (const EntityId* t = detail_defined(s)) def_[*t] = {&s, idx};
      for (const EntityId* src : source_entities(s)) used_.insert(*src);
      if (auto* pe = std::get_if<PersistStmt>(&s.node)) persist_marked_.insert(pe->target);
      ++idx;
    });
    double persisted_bytes = 0;
    for (const EntityId& e : persist_marked_) persisted_bytes += bytes(e);
    spill_ = params_.memory_budget_bytes > 0 && persisted_bytes > params_.memory_budget_bytes;
  }

  EvaluationResult run() {
    exec_block(prog_.statements);
    EvaluationResult res;
    double total = 0;
    for (auto& [idx, entry] : ledger_) {
      res.breakdown.push_back({idx, entry.first, entry.second});
      total += entry.second;
    }
    res.metric_minutes = params_.kappa * total;
    return res;
  }

 private:
  static const EntityId* detail_defined(const Statement& s) { return defined_entity(s); }

  double bytes(const EntityId& e) const {
    auto it = sizes_.find(e);
    return it == sizes_.end() ? 0.0 : it->second.bytes;
  }

  bool co_partitioned(const EntityId& a, const EntityId& b) const {
    auto ia = aliases_.find(a), ib = aliases_.find(b);
    return ia != aliases_.end() && ib != aliases_.end() &&
           ia->second.second == ib->second.second;
  }

  void charge(int idx, const char* op, double units) {
    auto& entry = ledger_[idx];
    if (entry.first.empty()) entry.first = op;
    else if (entry.first.find(op) == std::string::npos) entry.first += std::string("+") + op;
    entry.second += units;
  }

  double read_cached(const EntityId& e, int idx) {
    double c = (spill_ ? params_.sigma : params_.rho) * bytes(e);
    charge(idx, spill_ ? "spill-read" : "cache-read", c);
    return c;
  }

  // Demand an entity's value: cache hit, or full lineage recomputation.
  double pull(const EntityId& e) {
    auto it = def_.find(e);
    if (it == def_.end()) return 0;  // undefined in ill-formed input; validate() precludes it
    const Statement& s = *it->second.stmt;
    int idx = it->second.flat_index;
    if (active_persist_.count(e) && cached_.count(e)) return read_cached(e, idx);

    double c = 0;
    if (auto* l = std::get_if<LoadStmt>(&s.node)) {
      c += params_.alpha * bytes(l->target);
      charge(idx, "load", params_.alpha * bytes(l->target));
    } else if (auto* m = std::get_if<MapStmt>(&s.node)) {
      c += pull(m->source);
      double op = params_.mu * bytes(m->source) * m->cost_factor;
      charge(idx, "map", op);
      c += op;
    } else if (auto* j = std::get_if<JoinStmt>(&s.node)) {
      c += pull(j->left);
      c += pull(j->right);
      double both = bytes(j->left) + bytes(j->right);
      if (!co_partitioned(j->left, j->right)) {
        charge(idx, "shuffle", params_.sigma * both);
        c += params_.sigma * both;
      }
      charge(idx, "join", params_.mu * both);
      c += params_.mu * both;
    } else if (auto* b = std::get_if<BroadcastJoinStmt>(&s.node)) {
      c += pull(b->left);
      c += pull(b->right);
      EntityId small = pick_small_side(*b);
      EntityId large = small == b->left ? b->right : b->left;
      bool skip = bcast_done_.count(idx) && active_persist_.count(small);
      if (!skip) {
        double bc = params_.beta * bytes(small) * params_.workers;
        charge(idx, "broadcast", bc);
        c += bc;
        bcast_done_.insert(idx);
      }
      charge(idx, "join", params_.mu * bytes(large));
      c += params_.mu * bytes(large);
    } else if (auto* pa = std::get_if<PartitionStmt>(&s.node)) {
      c += pull(pa->source);
      charge(idx, "shuffle", params_.sigma * bytes(pa->source));
      c += params_.sigma * bytes(pa->source);
    }
    if (active_persist_.count(e)) cached_.insert(e);
    return c;
  }

  EntityId pick_small_side(const BroadcastJoinStmt& b) const {
    auto l = sizes_.find(b.left)->second;
    auto r = sizes_.find(b.right)->second;
    if (l.small != r.small) return l.small ? b.left : b.right;
    return l.bytes <= r.bytes ? b.left : b.right;
  }

  void exec_block(const std::vector<Statement>& stmts) {
    for (const Statement& s : stmts) {
      if (auto* loop = std::get_if<LoopStmt>(&s.node)) {
        std::set<EntityId> body_defs;
        collect_defs(loop->body, body_defs);
        for (long long i = 0; i < loop->iterations; ++i) {
          for (const EntityId& e : body_defs) cached_.erase(e);
          exec_block(loop->body);
        }
      } else if (auto* pe = std::get_if<PersistStmt>(&s.node)) {
        active_persist_.insert(pe->target);
      } else if (const EntityId* t = detail_defined(s)) {
        if (!used_.count(*t)) pull(*t);  // sink: this statement drives execution
      }
    }
  }

  static void collect_defs(const std::vector<Statement>& stmts, std::set<EntityId>& out) {
    for (const Statement& s : stmts) {
      if (auto* loop = std::get_if<LoopStmt>(&s.node)) collect_defs(loop->body, out);
      else if (const EntityId* t = detail_defined(s)) out.insert(*t);
    }
  }

  const Program& prog_;
  const CostParams& params_;
  std::map<EntityId, EntitySize> sizes_;
  std::map<EntityId, std::pair<EntityId, std::string>> aliases_;
  struct DefSite { const Statement* stmt; int flat_index; };
  std::map<EntityId, DefSite> def_;
  std::set<EntityId> used_;
  std::set<EntityId> persist_marked_;
  std::set<EntityId> active_persist_;
  std::set<EntityId> cached_;
  std::set<int> bcast_done_;
  std::map<int, std::pair<std::string, double>> ledger_;
  bool spill_ = false;
};

}  // namespace detail

inline EvaluationResult evaluate(const Program& s, const CostParams& params) {
  params.check();
  return detail::CostSim(s, params).run();
}

// Deterministic multiplicative noise: a seeded uniform draw on
// [1 - noise_rel, 1 + noise_rel], mixed with the program content hash so one
// seed yields independent draws across distinct programs.
inline EvaluationResult evaluate_noisy(const Program& s, const CostParams& params,
                                       double noise_rel, uint64_t seed) {
  if (noise_rel < 0 || noise_rel >= 1) throw EvalError("noise_rel must be in [0, 1)");
  EvaluationResult res = evaluate(s, params);
  if (noise_rel == 0) return res;
  std::mt19937_64 rng(seed ^ (program_hash(s) * 0x9e3779b97f4a7c15ULL));
  std::uniform_real_distribution<double> dist(1.0 - noise_rel, 1.0 + noise_rel);
  double m = dist(rng);
  res.metric_minutes *= m;
  for (auto& b : res.breakdown) b.units *= m;
  return res;
}

using Evaluator = std::function<EvaluationResult(const Program&)>;

inline Evaluator make_sim_evaluator(CostParams params) {
  params.check();
  return [params](const Program& p) { return evaluate(p, params); };
}

inline Evaluator make_noisy_evaluator(CostParams params, double noise_rel, uint64_t seed) {
  params.check();
  return [params, noise_rel, seed](const Program& p) {
    return evaluate_noisy(p, params, noise_rel, seed);
  };
}

}  // namespace dfopt
