#pragma once

// Tree search over program alterations. Each iteration walks the tree from
// the root by a selection rule (UCT, prior-guided, or uniform), expands one
// new program variant, evaluates it, normalizes the reward against the root
// metric, and back-propagates with optional decay. There are no playouts: the
// expanded node's own evaluation is the sample.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfopt/actions.hpp"
#include "dfopt/cost.hpp"
#include "dfopt/model.hpp"
#include "dfopt/program.hpp"

namespace dfopt {

struct SearchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class SearchMode { kUct, kPrior, kUniform };

inline std::string to_string(SearchMode m) {
  switch (m) {
    case SearchMode::kUct: return "uct";
    case SearchMode::kPrior: return "prior";
    default: return "uniform";
  }
}

inline SearchMode parse_mode(const std::string& s) {
  if (s == "uct") return SearchMode::kUct;
  if (s == "prior") return SearchMode::kPrior;
  if (s == "uniform") return SearchMode::kUniform;
  throw SearchError("unknown search mode '" + s + "'");
}

enum class RewardKind { kRelativeImprovement, kSpeedupRatio };

struct SearchConfig {
  SearchMode mode = SearchMode::kUct;
  double c_uct = 0.5;    // Q + 2*C*sqrt(2*ln(n)/n_j)
  double c_prior = 1.0;  // Q + C*prior/(1+N)
  double gamma = 1.0;    // backprop decay, (0, 1]
  int max_depth = 5;
  int budget = 300;      // node evaluations, root excluded
  uint64_t seed = 0;
  RewardKind reward_kind = RewardKind::kRelativeImprovement;
  double speedup_cap = 10.0;     // full reward at this speedup, ratio mode
  double reward_floor = 0.0;
  double reward_cap = 1.0;
  bool check_invariants = true;  // validate tree bookkeeping after every iteration

  void check() const {
    if (budget < 1) throw SearchError("budget must be >= 1");
    if (max_depth < 1) throw SearchError("max_depth must be >= 1");
    if (!(gamma > 0 && gamma <= 1)) throw SearchError("gamma must be in (0, 1]");
    if (speedup_cap <= 1) throw SearchError("speedup_cap must be > 1");
    if (!(reward_floor >= 0 && reward_cap <= 1 && reward_floor <= reward_cap))
      throw SearchError("reward bounds must satisfy 0 <= floor <= cap <= 1");
  }
};

// Reward normalization to [0, 1] against the root metric. The default maps
// the root to 0 and a hypothetical zero-cost program to 1; regressions clamp
// to the floor. The ratio alternative saturates at `speedup_cap`x.
inline double normalize_reward(double metric_minutes, double root_metric_minutes,
                               const SearchConfig& cfg = {}) {
  if (metric_minutes <= 0 || root_metric_minutes <= 0)
    throw SearchError("metrics must be > 0 for reward normalization");
  double r;
  if (cfg.reward_kind == RewardKind::kRelativeImprovement) {
    r = (root_metric_minutes - metric_minutes) / root_metric_minutes;
  } else {
    r = (root_metric_minutes / metric_minutes - 1.0) / (cfg.speedup_cap - 1.0);
  }
  return std::min(cfg.reward_cap, std::max(cfg.reward_floor, r));
}

struct SearchNode {
  Program state;
  std::optional<Action> incoming;  // none at the root
  SearchNode* parent = nullptr;
  int depth = 0;
  int creation_index = 0;  // evaluation step that created this node

  double metric = 0;       // evaluator output, minutes
  double own_reward = 0;   // normalized
  double q_sum = 0;
  long visits = 0;
  long own_starts = 0;     // backprops that began at this node

  std::vector<Action> actions;  // legal actions, canonical order
  std::vector<std::unique_ptr<SearchNode>> child;  // parallel; null = untried
  std::vector<double> priors;   // parallel; filled on demand in prior mode
  bool priors_ready = false;
  bool saturated = false;

  double q_mean() const { return visits > 0 ? q_sum / static_cast<double>(visits) : 0.0; }

  bool fully_expanded() const {
    for (const auto& c : child)
      if (!c) return false;
    return true;
  }

  int untried_count() const {
    int n = 0;
    for (const auto& c : child)
      if (!c) ++n;
    return n;
  }

  bool terminal(int max_depth) const { return depth >= max_depth || actions.empty(); }
};

// Walks the whole tree in creation order-independent DFS (children in
// canonical action order).
template <typename F>
void for_each_node(const SearchNode& node, F&& fn) {
  fn(node);
  for (const auto& c : node.child)
    if (c) for_each_node(*c, fn);
}

struct SearchReport {
  std::unique_ptr<SearchNode> root;
  double root_metric = 0;
  int evaluations = 0;                  // total evaluator calls, root included
  std::optional<int> steps_to_target;   // 1-based evaluation index; 0 if the root satisfies
  // Best program found: the evaluated node with the lowest metric (ties to
  // the earliest created). In a saturated tree a node's q_mean averages over
  // its forced-exploration descendants, so the metric argmin is the honest
  // "best discovered state".
  const SearchNode* best = nullptr;
  bool valid = true;
  std::string error;
};

inline std::vector<Action> path_from_root(const SearchNode& node) {
  std::vector<Action> path;
  for (const SearchNode* n = &node; n->parent; n = n->parent) path.push_back(*n->incoming);
  std::reverse(path.begin(), path.end());
  return path;
}

// Adds `reward` at `leaf` and decays it by gamma per step toward the root.
// Visit counts are not decayed.
inline void backprop(SearchNode& leaf, double reward, double gamma) {
  if (reward < 0 || reward > 1) throw SearchError("backprop reward outside [0, 1]");
  leaf.own_starts += 1;
  double value = reward;
  for (SearchNode* n = &leaf; n; n = n->parent) {
    n->q_sum += value;
    n->visits += 1;
    value *= gamma;
  }
}

// UCB1 selection (doubled exploration coefficient form). Requires a fully
// expanded node; ties resolve to the lowest canonical action index.
inline int select_uct(const SearchNode& node, double c) {
  if (node.child.empty() || !node.fully_expanded())
    throw SearchError("select_uct requires a fully expanded node with children");
  if (node.visits < 1) throw SearchError("select_uct requires a visited parent");
  double best = -std::numeric_limits<double>::infinity();
  int best_i = -1;
  for (size_t i = 0; i < node.child.size(); ++i) {
    const SearchNode& ch = *node.child[i];
    double score = ch.q_mean() +
                   2.0 * c * std::sqrt(2.0 * std::log(static_cast<double>(node.visits)) /
                                       static_cast<double>(ch.visits));
    if (score > best) { best = score; best_i = static_cast<int>(i); }
  }
  return best_i;
}

// Prior-guided selection: all legal actions compete in one argmax, with
// unvisited actions contributing q = 0 and N = 0. `priors[i]` holds
// f(T(s, a_i)). Ties resolve to the lowest canonical index.
inline int select_prior(const SearchNode& node, double c, const std::vector<double>& priors) {
  if (node.actions.empty()) throw SearchError("select_prior on a node with no actions");
  double best = -std::numeric_limits<double>::infinity();
  int best_i = -1;
  for (size_t i = 0; i < node.actions.size(); ++i) {
    double q = node.child[i] ? node.child[i]->q_mean() : 0.0;
    double n = node.child[i] ? static_cast<double>(node.child[i]->visits) : 0.0;
    double score = q + c * priors[i] / (1.0 + n);
    if (score > best) { best = score; best_i = static_cast<int>(i); }
  }
  return best_i;
}

namespace detail {

// Saturation is monotone: a node saturates once its whole reachable subtree
// is exhausted (terminal, or fully expanded with all children saturated).
inline void refresh_saturation(SearchNode* node, int max_depth) {
  for (; node; node = node->parent) {
    if (node->saturated) return;
    bool sat = node->terminal(max_depth);
    if (!sat) {
      if (!node->fully_expanded()) return;
      sat = true;
      for (const auto& c : node->child)
        if (!c->saturated) { sat = false; break; }
    }
    if (!sat) return;
    node->saturated = true;
  }
}

inline void fill_priors(SearchNode& node, const PriorFn& prior) {
  if (node.priors_ready) return;
  node.priors.resize(node.actions.size());
  for (size_t i = 0; i < node.actions.size(); ++i)
    node.priors[i] = prior(apply_action(node.state, node.actions[i]));
  node.priors_ready = true;
}

}  // namespace detail

// Checks reward ranges and the visit bookkeeping identity
// visits == own_starts + sum(child visits) at every node. Throws SearchError.
inline void validate_tree(const SearchNode& root) {
  for_each_node(root, [](const SearchNode& n) {
    if (n.own_reward < 0 || n.own_reward > 1)
      throw SearchError("node reward outside [0, 1]");
    if (n.visits > 0 && (n.q_mean() < 0 || n.q_mean() > 1))
      throw SearchError("node q_mean outside [0, 1]");
    long child_visits = 0;
    for (const auto& c : n.child)
      if (c) child_visits += c->visits;
    if (n.visits != n.own_starts + child_visits)
      throw SearchError("visit bookkeeping identity violated");
  });
}

inline SearchReport run_search(const Program& root_program, const Evaluator& evaluator,
                               const SearchConfig& config,
                               const std::optional<TargetSpec>& target = std::nullopt,
                               const PriorFn& prior = nullptr) {
  config.check();
  validate(root_program);
  if (config.mode == SearchMode::kPrior && !prior)
    throw SearchError("prior mode requires a prior function");

  SearchReport report;
  std::mt19937_64 rng(config.seed);

  auto make_node = [&](Program state, std::optional<Action> via, SearchNode* parent,
                       int step) -> std::unique_ptr<SearchNode> {
    auto node = std::make_unique<SearchNode>();
    node->state = std::move(state);
    node->incoming = std::move(via);
    node->parent = parent;
    node->depth = parent ? parent->depth + 1 : 0;
    node->creation_index = step;
    node->actions = legal_actions(node->state);
    node->child.resize(node->actions.size());
    EvaluationResult ev = evaluator(node->state);
    if (ev.metric_minutes <= 0)
      throw EvalError("evaluator returned non-positive metric");
    node->metric = ev.metric_minutes;
    return node;
  };

  try {
    report.root = make_node(root_program, std::nullopt, nullptr, 0);
    report.evaluations = 1;
    report.root_metric = report.root->metric;
    report.root->own_reward = normalize_reward(report.root->metric, report.root_metric, config);
    backprop(*report.root, report.root->own_reward, config.gamma);
    detail::refresh_saturation(report.root.get(), config.max_depth);
    if (target && satisfies(report.root->state, *target)) report.steps_to_target = 0;

    auto expand = [&](SearchNode& at, int action_index, int step) -> SearchNode* {
      at.child[action_index] =
          make_node(apply_action(at.state, at.actions[action_index]), at.actions[action_index], &at, step);
      SearchNode* node = at.child[action_index].get();
      report.evaluations += 1;
      node->own_reward = normalize_reward(node->metric, report.root_metric, config);
      backprop(*node, node->own_reward, config.gamma);
      detail::refresh_saturation(node, config.max_depth);
      if (target && !report.steps_to_target && satisfies(node->state, *target))
        report.steps_to_target = step;
      return node;
    };

    auto pick_untried = [&](SearchNode& node) {
      std::vector<int> open;
      for (size_t i = 0; i < node.child.size(); ++i)
        if (!node.child[i]) open.push_back(static_cast<int>(i));
      std::uniform_int_distribution<size_t> dist(0, open.size() - 1);
      return open[dist(rng)];
    };

    int step = 1;
    long iterations = 0;
    const long iteration_cap = static_cast<long>(config.budget) * 1000;
    while (step <= config.budget && !report.root->saturated && iterations++ < iteration_cap) {
      SearchNode* node = report.root.get();
      bool expanded = false;

      if (config.mode == SearchMode::kUct || config.mode == SearchMode::kUniform) {
        while (!node->terminal(config.max_depth) && node->fully_expanded() &&
               !node->child.empty()) {
          if (config.mode == SearchMode::kUct) {
            node = node->child[select_uct(*node, config.c_uct)].get();
          } else {
            std::uniform_int_distribution<size_t> dist(0, node->child.size() - 1);
            node = node->child[dist(rng)].get();
          }
        }
        if (!node->terminal(config.max_depth) && node->untried_count() > 0) {
          expand(*node, pick_untried(*node), step);
          expanded = true;
        }
      } else {  // prior mode
        for (;;) {
          if (node->terminal(config.max_depth)) break;
          detail::fill_priors(*node, prior);
          int i = select_prior(*node, config.c_prior, node->priors);
          if (!node->child[i]) {
            expand(*node, i, step);
            expanded = true;
            break;
          }
          node = node->child[i].get();
        }
      }

      if (!expanded) {
        // Terminal revisit: re-propagate the node's own evaluation.
        backprop(*node, node->own_reward, config.gamma);
        detail::refresh_saturation(node, config.max_depth);
      } else {
        ++step;
      }
      if (config.check_invariants) validate_tree(*report.root);
    }
  } catch (const std::exception& e) {
    report.valid = false;
    report.error = e.what();
  }

  if (report.root) {
    const SearchNode* best = nullptr;
    for_each_node(*report.root, [&](const SearchNode& n) {
      if (n.visits < 1) return;
      if (!best || n.metric < best->metric ||
          (n.metric == best->metric && n.creation_index < best->creation_index))
        best = &n;
    });
    report.best = best;
  }
  return report;
}

// ---- Tree and dataset export ----

inline std::vector<const SearchNode*> nodes_in_creation_order(const SearchNode& root) {
  std::vector<const SearchNode*> nodes;
  for_each_node(root, [&](const SearchNode& n) { nodes.push_back(&n); });
  std::sort(nodes.begin(), nodes.end(),
            [](const SearchNode* a, const SearchNode* b) {
              return a->creation_index < b->creation_index;
            });
  return nodes;
}

// One JSON object per node, in creation order.
inline std::string export_tree(const SearchNode& root) {
  std::string out;
  for (const SearchNode* n : nodes_in_creation_order(root)) {
    nlohmann::json j;
    j["id"] = n->creation_index;
    j["parent"] = n->parent ? n->parent->creation_index : -1;
    j["action"] = n->incoming ? nlohmann::json(action_to_string(*n->incoming))
                              : nlohmann::json(nullptr);
    j["hash"] = hex64(program_hash(n->state));
    j["metric"] = n->metric;
    j["q_sum"] = n->q_sum;
    j["visits"] = n->visits;
    out += j.dump() + "\n";
  }
  return out;
}

// Extracts one record per visited node: padded pair-vector features, q_mean,
// and a binary label marking q_mean at or above the percentile cutoff of all
// q_means in the tree. A degenerate tree (all q_means equal) labels nothing.
inline std::vector<DatasetRecord> export_dataset(const SearchNode& root,
                                                 double percentile_cutoff,
                                                 int max_pairs = kDefaultMaxPairs) {
  if (percentile_cutoff < 0 || percentile_cutoff > 1)
    throw SearchError("percentile cutoff must be in [0, 1]");
  std::vector<const SearchNode*> nodes;
  for_each_node(root, [&](const SearchNode& n) {
    if (n.visits >= 1) nodes.push_back(&n);
  });
  if (nodes.size() < 2) throw SearchError("dataset export needs at least 2 visited nodes");
  std::sort(nodes.begin(), nodes.end(),
            [](const SearchNode* a, const SearchNode* b) {
              return a->creation_index < b->creation_index;
            });

  std::vector<double> qs;
  for (const SearchNode* n : nodes) qs.push_back(n->q_mean());
  std::vector<double> sorted = qs;
  std::sort(sorted.begin(), sorted.end());
  bool degenerate = sorted.front() == sorted.back();
  if (degenerate)
    std::fprintf(stderr, "warning: degenerate tree (all q estimates equal); labels all 0\n");

  // Linearly interpolated quantile. When the quantile collapses into a tie
  // mass at the minimum (common: most alterations clamp to reward 0), nodes
  // sitting at the minimum stay negative, otherwise everything would be
  // labeled positive.
  double pos = percentile_cutoff * static_cast<double>(sorted.size() - 1);
  size_t lo = static_cast<size_t>(pos);
  size_t hi = std::min(lo + 1, sorted.size() - 1);
  double threshold = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);

  std::vector<DatasetRecord> out;
  for (size_t i = 0; i < nodes.size(); ++i) {
    DatasetRecord rec;
    rec.features = flatten_features(
        pad_sequence(featurize(nodes[i]->state), static_cast<size_t>(max_pairs)));
    rec.q_mean = qs[i];
    rec.label = (!degenerate && qs[i] >= threshold && qs[i] > sorted.front()) ? 1 : 0;
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::string write_dataset(const std::vector<DatasetRecord>& records) {
  std::string out;
  for (const DatasetRecord& r : records) {
    std::string line;
    for (uint8_t f : r.features) {
      line += f ? '1' : '0';
      line += ' ';
    }
    line += format_double(r.q_mean);
    line += ' ';
    line += std::to_string(r.label);
    out += line + "\n";
  }
  return out;
}

inline std::vector<DatasetRecord> read_dataset(const std::string& text) {
  std::vector<DatasetRecord> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  size_t feat_len = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto tok = split_ws(line);
    if (tok.size() < 3)
      throw SearchError("dataset line " + std::to_string(lineno) + ": too few fields");
    size_t n = tok.size() - 2;
    if (feat_len == 0) {
      if (n % kChannels != 0)
        throw SearchError("dataset line " + std::to_string(lineno) +
                          ": feature count not a multiple of 6");
      feat_len = n;
    } else if (n != feat_len) {
      throw SearchError("dataset line " + std::to_string(lineno) + ": inconsistent feature count");
    }
    DatasetRecord rec;
    rec.features.reserve(n);
    for (size_t i = 0; i < n; ++i) {
      if (tok[i] != "0" && tok[i] != "1")
        throw SearchError("dataset line " + std::to_string(lineno) + ": features must be 0/1");
      rec.features.push_back(tok[i] == "1" ? 1 : 0);
    }
    rec.q_mean = parse_double(tok[n], "q_mean");
    rec.label = static_cast<int>(parse_ll(tok[n + 1], "label"));
    if (rec.label != 0 && rec.label != 1)
      throw SearchError("dataset line " + std::to_string(lineno) + ": label must be 0/1");
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace dfopt
