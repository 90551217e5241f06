#pragma once

// Alteration action space over programs: persist an entity, partition an
// entity through a new alias, or turn a join into a broadcast join. Pure
// functions over immutable programs.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "dfopt/program.hpp"

namespace dfopt {

struct ActionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TargetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PersistAction {
  EntityId entity;
  bool operator==(const PersistAction&) const = default;
};

struct PartitionAction {
  EntityId entity;
  std::string key;
  bool operator==(const PartitionAction&) const = default;
};

// join_index addresses the flattened position of a Join statement.
struct BroadcastAction {
  int join_index = 0;
  bool operator==(const BroadcastAction&) const = default;
};

using Action = std::variant<PersistAction, PartitionAction, BroadcastAction>;

inline std::string action_to_string(const Action& a) {
  if (auto* p = std::get_if<PersistAction>(&a)) return "persist " + p->entity;
  if (auto* q = std::get_if<PartitionAction>(&a))
    return "partition " + q->entity + " " + q->key;
  return "bcast " + std::to_string(std::get<BroadcastAction>(a).join_index);
}

inline Action parse_action(const std::string& text) {
  auto tok = split_ws(text);
  if (tok.size() == 2 && tok[0] == "persist") return PersistAction{tok[1]};
  if (tok.size() == 3 && tok[0] == "partition") return PartitionAction{tok[1], tok[2]};
  if (tok.size() == 2 && tok[0] == "bcast")
    return BroadcastAction{static_cast<int>(parse_ll(tok[1], "join index"))};
  throw ActionError("bad action: '" + text + "'");
}

// Per-entity size facts derived from the IR. Map and partition targets keep
// their source's size and small flag; join targets concatenate operands and
// are small only when both operands are.
struct EntitySize {
  double bytes = 0;
  bool small = false;
};

inline std::map<EntityId, EntitySize> entity_sizes(const Program& p) {
  std::map<EntityId, EntitySize> out;
  for_each_flat(p, [&](const Statement& s, long long, int) {
    if (auto* l = std::get_if<LoadStmt>(&s.node)) {
      out[l->target] = {static_cast<double>(l->records) * l->record_bytes, l->small};
    } else if (auto* m = std::get_if<MapStmt>(&s.node)) {
      out[m->target] = out[m->source];
    } else if (auto* j = std::get_if<JoinStmt>(&s.node)) {
      out[j->target] = {out[j->left].bytes + out[j->right].bytes,
                        out[j->left].small && out[j->right].small};
    } else if (auto* b = std::get_if<BroadcastJoinStmt>(&s.node)) {
      out[b->target] = {out[b->left].bytes + out[b->right].bytes,
                        out[b->left].small && out[b->right].small};
    } else if (auto* pa = std::get_if<PartitionStmt>(&s.node)) {
      out[pa->target] = out[pa->source];
    }
  });
  return out;
}

// Candidate partition keys for a program: the canonical key k0 plus any keys
// already used by partition statements, in order of appearance.
inline std::vector<std::string> candidate_keys(const Program& p) {
  std::vector<std::string> keys{"k0"};
  for_each_flat(p, [&](const Statement& s, long long, int) {
    if (auto* pa = std::get_if<PartitionStmt>(&s.node))
      if (std::find(keys.begin(), keys.end(), pa->key) == keys.end())
        keys.push_back(pa->key);
  });
  return keys;
}

// Fresh alias name for a partitioned copy of `source`.
inline EntityId partition_alias_name(const Program& p, const EntityId& source) {
  std::set<EntityId> taken;
  for (const EntityId& e : entities(p)) taken.insert(e);
  EntityId base = source + "_p";
  if (!taken.count(base)) return base;
  for (int i = 2;; ++i) {
    EntityId cand = base + std::to_string(i);
    if (!taken.count(cand)) return cand;
  }
}

// Legal alterations in canonical order: persists by entity appearance, then
// partitions by (entity appearance, key order), then broadcasts by flattened
// join position. Every returned action applies to a well-formed program.
inline std::vector<Action> legal_actions(const Program& p) {
  std::vector<Action> out;
  std::vector<EntityId> ents = entities(p);
  std::set<EntityId> persisted = persisted_entities(p);
  auto aliases = partition_aliases(p);

  for (const EntityId& e : ents)
    if (!persisted.count(e)) out.push_back(PersistAction{e});

  std::vector<std::string> keys = candidate_keys(p);
  for (const EntityId& e : ents) {
    for (const std::string& k : keys) {
      bool already = false;
      for (const auto& [alias, src_key] : aliases)
        if (src_key.first == e && src_key.second == k) already = true;
      if (!already) out.push_back(PartitionAction{e, k});
    }
  }

  auto sizes = entity_sizes(p);
  int idx = 0;
  for_each_flat(p, [&](const Statement& s, long long, int) {
    if (auto* j = std::get_if<JoinStmt>(&s.node)) {
      if (sizes[j->left].small || sizes[j->right].small)
        out.push_back(BroadcastAction{idx});
    }
    ++idx;
  });
  return out;
}

namespace detail {

// Inserts `st` immediately after the statement defining `entity`.
inline bool insert_after_definition(std::vector<Statement>& stmts, const EntityId& entity,
                                    Statement st) {
  for (size_t i = 0; i < stmts.size(); ++i) {
    if (auto* loop = std::get_if<LoopStmt>(&stmts[i].node)) {
      if (insert_after_definition(loop->body, entity, st)) return true;
      continue;
    }
    const EntityId* def = defined_entity(stmts[i]);
    if (def && *def == entity) {
      stmts.insert(stmts.begin() + static_cast<long>(i) + 1, std::move(st));
      return true;
    }
  }
  return false;
}

// Rewrites map/join sources equal to `from` into `to`, for every primitive
// statement after the partition statement defining `to`. Partition sources and
// persist targets keep referring to the original entity.
inline void rewrite_uses_after_alias(std::vector<Statement>& stmts, const EntityId& from,
                                     const EntityId& to, bool& active) {
  for (Statement& s : stmts) {
    if (auto* loop = std::get_if<LoopStmt>(&s.node)) {
      rewrite_uses_after_alias(loop->body, from, to, active);
    } else if (auto* pa = std::get_if<PartitionStmt>(&s.node)) {
      if (pa->target == to) active = true;
    } else if (active) {
      if (auto* m = std::get_if<MapStmt>(&s.node)) {
        if (m->source == from) m->source = to;
      } else if (auto* j = std::get_if<JoinStmt>(&s.node)) {
        if (j->left == from) j->left = to;
        if (j->right == from) j->right = to;
      } else if (auto* b = std::get_if<BroadcastJoinStmt>(&s.node)) {
        if (b->left == from) b->left = to;
        if (b->right == from) b->right = to;
      }
    }
  }
}

inline bool action_is_legal(const Program& p, const Action& a) {
  auto legal = legal_actions(p);
  return std::find(legal.begin(), legal.end(), a) != legal.end();
}

}  // namespace detail

// Deterministic transition. Throws ActionError when `a` is not legal in `s`.
inline Program apply_action(const Program& s, const Action& a) {
  if (!detail::action_is_legal(s, a))
    throw ActionError("illegal action '" + action_to_string(a) + "'");
  Program out = s;
  if (auto* pe = std::get_if<PersistAction>(&a)) {
    if (!detail::insert_after_definition(out.statements, pe->entity,
                                         Statement{PersistStmt{pe->entity}}))
      throw ActionError("no defining statement for entity '" + pe->entity + "'");
  } else if (auto* pa = std::get_if<PartitionAction>(&a)) {
    EntityId alias = partition_alias_name(s, pa->entity);
    if (!detail::insert_after_definition(
            out.statements, pa->entity,
            Statement{PartitionStmt{alias, pa->entity, pa->key}}))
      throw ActionError("no defining statement for entity '" + pa->entity + "'");
    bool active = false;
    detail::rewrite_uses_after_alias(out.statements, pa->entity, alias, active);
  } else {
    int want = std::get<BroadcastAction>(a).join_index;
    int idx = 0;
    bool done = false;
    std::function<void(std::vector<Statement>&)> walk = [&](std::vector<Statement>& stmts) {
      for (Statement& st : stmts) {
        if (auto* loop = std::get_if<LoopStmt>(&st.node)) {
          walk(loop->body);
          continue;
        }
        if (idx == want) {
          if (auto* j = std::get_if<JoinStmt>(&st.node)) {
            st.node = BroadcastJoinStmt{j->target, j->left, j->right};
            done = true;
          }
        }
        ++idx;
      }
    };
    walk(out.statements);
    if (!done) throw ActionError("no join statement at index " + std::to_string(want));
  }
  validate(out);
  return out;
}

// ---- Target specifications ----

struct PersistedFact {
  EntityId entity;
  bool operator==(const PersistedFact&) const = default;
};
struct PartitionedFact {
  EntityId entity;       // the partition alias
  std::string key;       // concrete key, or $-prefixed shared wildcard
  bool operator==(const PartitionedFact&) const = default;
};
struct BroadcastFact {
  EntityId join_target;  // target entity of the join site
  bool operator==(const BroadcastFact&) const = default;
};

using TargetFact = std::variant<PersistedFact, PartitionedFact, BroadcastFact>;

struct TargetSpec {
  std::vector<TargetFact> facts;
  bool operator==(const TargetSpec&) const = default;
};

inline std::string serialize_target(const TargetSpec& t) {
  std::string out;
  for (const TargetFact& f : t.facts) {
    if (auto* pe = std::get_if<PersistedFact>(&f))
      out += "persisted " + pe->entity + "\n";
    else if (auto* pa = std::get_if<PartitionedFact>(&f))
      out += "partitioned " + pa->entity + " " + pa->key + "\n";
    else
      out += "broadcast " + std::get<BroadcastFact>(f).join_target + "\n";
  }
  return out;
}

inline TargetSpec parse_target(const std::string& text) {
  TargetSpec t;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto tok = split_ws(line);
    if (tok.size() == 2 && tok[0] == "persisted") {
      t.facts.push_back(PersistedFact{tok[1]});
    } else if (tok.size() == 3 && tok[0] == "partitioned") {
      t.facts.push_back(PartitionedFact{tok[1], tok[2]});
    } else if (tok.size() == 2 && tok[0] == "broadcast") {
      t.facts.push_back(BroadcastFact{tok[1]});
    } else {
      throw TargetError("line " + std::to_string(lineno) + ": bad target fact: '" +
                        line + "'");
    }
  }
  if (t.facts.empty()) throw TargetError("target spec has no facts");
  return t;
}

// Entity names in a target may be root entities or partition-alias names
// derived from them (alias naming appends _p / _pN suffixes). Throws
// TargetError for anything else.
inline void validate_target(const Program& root, const TargetSpec& t) {
  std::set<EntityId> root_ents;
  for (const EntityId& e : entities(root)) root_ents.insert(e);
  auto resolves = [&](EntityId name) {
    while (!root_ents.count(name)) {
      size_t us = name.rfind("_p");
      if (us == std::string::npos || us == 0) return false;
      for (size_t i = us + 2; i < name.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(name[i]))) return false;
      name = name.substr(0, us);
    }
    return true;
  };
  for (const TargetFact& f : t.facts) {
    if (auto* pe = std::get_if<PersistedFact>(&f)) {
      if (!resolves(pe->entity))
        throw TargetError("target references unknown entity '" + pe->entity + "'");
    } else if (auto* pa = std::get_if<PartitionedFact>(&f)) {
      if (!resolves(pa->entity))
        throw TargetError("target references unknown entity '" + pa->entity + "'");
    } else {
      const EntityId& jt = std::get<BroadcastFact>(f).join_target;
      bool found = false;
      for_each_flat(root, [&](const Statement& s, long long, int) {
        if (auto* j = std::get_if<JoinStmt>(&s.node))
          if (j->target == jt) found = true;
        if (auto* b = std::get_if<BroadcastJoinStmt>(&s.node))
          if (b->target == jt) found = true;
      });
      if (!found)
        throw TargetError("target references unknown join site '" + jt + "'");
    }
  }
}

// True iff every fact holds in `s`, with $-wildcard keys unified consistently
// across facts. Facts about entities absent from `s` do not hold.
inline bool satisfies(const Program& s, const TargetSpec& t) {
  std::set<EntityId> persisted = persisted_entities(s);
  auto aliases = partition_aliases(s);
  std::map<std::string, std::string> bindings;
  for (const TargetFact& f : t.facts) {
    if (auto* pe = std::get_if<PersistedFact>(&f)) {
      if (!persisted.count(pe->entity)) return false;
    } else if (auto* pa = std::get_if<PartitionedFact>(&f)) {
      auto it = aliases.find(pa->entity);
      if (it == aliases.end()) return false;
      const std::string& concrete = it->second.second;
      if (!pa->key.empty() && pa->key[0] == '$') {
        auto [bit, inserted] = bindings.emplace(pa->key, concrete);
        if (!inserted && bit->second != concrete) return false;
      } else if (pa->key != concrete) {
        return false;
      }
    } else {
      const EntityId& jt = std::get<BroadcastFact>(f).join_target;
      bool ok = false;
      for_each_flat(s, [&](const Statement& st, long long, int) {
        if (auto* b = std::get_if<BroadcastJoinStmt>(&st.node))
          if (b->target == jt) ok = true;
      });
      if (!ok) return false;
    }
  }
  return true;
}

}  // namespace dfopt
