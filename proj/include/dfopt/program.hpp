#pragma once

// Dataflow program IR: an ordered list of statements over named entities.
// This is the search state. Programs are immutable after construction and
// safe to share across threads.

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "dfopt/util.hpp"

namespace dfopt {

using EntityId = std::string;

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Statement;

struct LoadStmt {
  EntityId target;
  long long records = 0;
  long long record_bytes = 0;
  bool small = false;
  bool operator==(const LoadStmt&) const = default;
};

struct MapStmt {
  EntityId target;
  EntityId source;
  double cost_factor = 1.0;
  bool operator==(const MapStmt&) const = default;
};

struct JoinStmt {
  EntityId target;
  EntityId left;
  EntityId right;
  bool operator==(const JoinStmt&) const = default;
};

struct BroadcastJoinStmt {
  EntityId target;
  EntityId left;
  EntityId right;
  bool operator==(const BroadcastJoinStmt&) const = default;
};

struct PartitionStmt {
  EntityId target;
  EntityId source;
  std::string key;
  bool operator==(const PartitionStmt&) const = default;
};

struct PersistStmt {
  EntityId target;
  bool operator==(const PersistStmt&) const = default;
};

struct LoopStmt {
  long long iterations = 1;
  std::vector<Statement> body;
  bool operator==(const LoopStmt&) const = default;
};

using StatementNode = std::variant<LoadStmt, MapStmt, JoinStmt, BroadcastJoinStmt,
                                   PartitionStmt, PersistStmt, LoopStmt>;

struct Statement {
  StatementNode node;
  bool operator==(const Statement&) const = default;
};

struct Program {
  std::string name;
  std::vector<Statement> statements;

  // Structural equality; the name is metadata and does not participate.
  bool operator==(const Program& o) const { return statements == o.statements; }
};

namespace detail {

// Defined entity of a statement, if any. Persist and Loop define nothing.
inline const EntityId* defined_entity(const Statement& s) {
  if (auto* l = std::get_if<LoadStmt>(&s.node)) return &l->target;
  if (auto* m = std::get_if<MapStmt>(&s.node)) return &m->target;
  if (auto* j = std::get_if<JoinStmt>(&s.node)) return &j->target;
  if (auto* b = std::get_if<BroadcastJoinStmt>(&s.node)) return &b->target;
  if (auto* p = std::get_if<PartitionStmt>(&s.node)) return &p->target;
  return nullptr;
}

inline std::vector<const EntityId*> source_entities(const Statement& s) {
  if (auto* m = std::get_if<MapStmt>(&s.node)) return {&m->source};
  if (auto* j = std::get_if<JoinStmt>(&s.node)) return {&j->left, &j->right};
  if (auto* b = std::get_if<BroadcastJoinStmt>(&s.node)) return {&b->left, &b->right};
  if (auto* p = std::get_if<PartitionStmt>(&s.node)) return {&p->source};
  return {};
}

}  // namespace detail

// Primitive (non-loop) statements in execution order, loop bodies flattened in
// place. The visitor also receives the iteration multiplier (product of
// enclosing loop counts) and the innermost loop nesting depth.
template <typename F>
void for_each_flat(const std::vector<Statement>& stmts, F&& fn, long long mult = 1,
                   int loop_depth = 0) {
  for (const Statement& s : stmts) {
    if (auto* loop = std::get_if<LoopStmt>(&s.node)) {
      for_each_flat(loop->body, fn, mult * loop->iterations, loop_depth + 1);
    } else {
      fn(s, mult, loop_depth);
    }
  }
}

template <typename F>
void for_each_flat(const Program& p, F&& fn) {
  for_each_flat(p.statements, fn);
}

// Flattened primitive statements, in order. Pointers remain valid while the
// program is alive.
inline std::vector<const Statement*> flatten(const Program& p) {
  std::vector<const Statement*> out;
  for_each_flat(p, [&](const Statement& s, long long, int) { out.push_back(&s); });
  return out;
}

// Entities sorted by order of first mention in the flattened statement list.
inline std::vector<EntityId> entities(const Program& p) {
  std::vector<EntityId> out;
  std::set<EntityId> seen;
  auto note = [&](const EntityId& e) {
    if (seen.insert(e).second) out.push_back(e);
  };
  for_each_flat(p, [&](const Statement& s, long long, int) {
    if (auto* l = std::get_if<LoadStmt>(&s.node)) {
      note(l->target);
    } else if (auto* m = std::get_if<MapStmt>(&s.node)) {
      note(m->target), note(m->source);
    } else if (auto* j = std::get_if<JoinStmt>(&s.node)) {
      note(j->target), note(j->left), note(j->right);
    } else if (auto* b = std::get_if<BroadcastJoinStmt>(&s.node)) {
      note(b->target), note(b->left), note(b->right);
    } else if (auto* pa = std::get_if<PartitionStmt>(&s.node)) {
      note(pa->target), note(pa->source);
    } else if (auto* pe = std::get_if<PersistStmt>(&s.node)) {
      note(pe->target);
    }
  });
  return out;
}

// Checks topological well-formedness: sources defined before use, unique
// definitions, no loads inside loops, at most one persist per entity, and
// persist targets that exist. Throws ValidationError.
inline void validate(const Program& p) {
  std::set<EntityId> defined;
  std::set<EntityId> persisted;
  for_each_flat(p, [&](const Statement& s, long long, int loop_depth) {
    for (const EntityId* src : detail::source_entities(s)) {
      if (!defined.count(*src))
        throw ValidationError("entity '" + *src + "' used before definition");
    }
    if (auto* pe = std::get_if<PersistStmt>(&s.node)) {
      if (!defined.count(pe->target))
        throw ValidationError("persist of undefined entity '" + pe->target + "'");
      if (!persisted.insert(pe->target).second)
        throw ValidationError("entity '" + pe->target + "' persisted more than once");
      return;
    }
    if (std::holds_alternative<LoadStmt>(s.node) && loop_depth > 0)
      throw ValidationError("load inside loop body");
    if (const EntityId* t = detail::defined_entity(s)) {
      if (!defined.insert(*t).second)
        throw ValidationError("duplicate definition of entity '" + *t + "'");
    }
  });
  // Loop iteration counts.
  std::function<void(const std::vector<Statement>&)> check_loops =
      [&](const std::vector<Statement>& stmts) {
        for (const Statement& s : stmts)
          if (auto* loop = std::get_if<LoopStmt>(&s.node)) {
            if (loop->iterations < 1)
              throw ValidationError("loop iteration count must be >= 1");
            check_loops(loop->body);
          }
      };
  check_loops(p.statements);
}

inline bool is_well_formed(const Program& p) {
  try {
    validate(p);
    return true;
  } catch (const ValidationError&) {
    return false;
  }
}

namespace detail {

inline void serialize_stmts(const std::vector<Statement>& stmts, std::string& out,
                            int indent) {
  std::string pad(static_cast<size_t>(indent) * 2, ' ');
  for (const Statement& s : stmts) {
    if (auto* l = std::get_if<LoadStmt>(&s.node)) {
      out += pad + "load " + l->target + " " + std::to_string(l->records) + " " +
             std::to_string(l->record_bytes) + (l->small ? " small" : " big") + "\n";
    } else if (auto* m = std::get_if<MapStmt>(&s.node)) {
      out += pad + "map " + m->target + " " + m->source + " " +
             format_double(m->cost_factor) + "\n";
    } else if (auto* j = std::get_if<JoinStmt>(&s.node)) {
      out += pad + "join " + j->target + " " + j->left + " " + j->right + "\n";
    } else if (auto* b = std::get_if<BroadcastJoinStmt>(&s.node)) {
      out += pad + "bjoin " + b->target + " " + b->left + " " + b->right + "\n";
    } else if (auto* pa = std::get_if<PartitionStmt>(&s.node)) {
      out += pad + "partition " + pa->target + " " + pa->source + " " + pa->key + "\n";
    } else if (auto* pe = std::get_if<PersistStmt>(&s.node)) {
      out += pad + "persist " + pe->target + "\n";
    } else if (auto* loop = std::get_if<LoopStmt>(&s.node)) {
      out += pad + "loop " + std::to_string(loop->iterations) + " {\n";
      serialize_stmts(loop->body, out, indent + 1);
      out += pad + "}\n";
    }
  }
}

}  // namespace detail

// Canonical line-oriented text form. parse_program(serialize_program(p)) is
// structurally identical to p and preserves the program name.
inline std::string serialize_program(const Program& p) {
  std::string out;
  if (!p.name.empty()) out += "# program: " + p.name + "\n";
  detail::serialize_stmts(p.statements, out, 0);
  return out;
}

inline uint64_t program_hash(const Program& p) { return fnv1a(serialize_program(p)); }

inline Program parse_program(const std::string& text) {
  Program prog;
  std::vector<std::vector<Statement>*> stack{&prog.statements};
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw ParseError("line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) {
      std::string comment = trim(line.substr(hash + 1));
      if (comment.rfind("program:", 0) == 0 && prog.name.empty())
        prog.name = trim(comment.substr(8));
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line == "}") {
      if (stack.size() == 1) fail("unmatched '}'");
      stack.pop_back();
      continue;
    }
    std::vector<std::string> tok = split_ws(line);
    const std::string& op = tok[0];
    Statement st;
    try {
    if (op == "load") {
      if (tok.size() != 5) fail("expected: load <entity> <records> <record_bytes> <big|small>");
      if (tok[4] != "big" && tok[4] != "small") fail("size flag must be 'big' or 'small'");
      st.node = LoadStmt{tok[1], parse_ll(tok[2], "records"),
                         parse_ll(tok[3], "record_bytes"), tok[4] == "small"};
    } else if (op == "map") {
      if (tok.size() != 4) fail("expected: map <target> <source> <cost_factor>");
      double f = parse_double(tok[3], "cost_factor");
      if (f < 0) fail("cost_factor must be >= 0");
      st.node = MapStmt{tok[1], tok[2], f};
    } else if (op == "join") {
      if (tok.size() != 4) fail("expected: join <target> <left> <right>");
      st.node = JoinStmt{tok[1], tok[2], tok[3]};
    } else if (op == "bjoin") {
      if (tok.size() != 4) fail("expected: bjoin <target> <left> <right>");
      st.node = BroadcastJoinStmt{tok[1], tok[2], tok[3]};
    } else if (op == "partition") {
      if (tok.size() != 4) fail("expected: partition <target> <source> <key>");
      st.node = PartitionStmt{tok[1], tok[2], tok[3]};
    } else if (op == "persist") {
      if (tok.size() != 2) fail("expected: persist <entity>");
      st.node = PersistStmt{tok[1]};
    } else if (op == "loop") {
      if (tok.size() != 3 || tok[2] != "{") fail("expected: loop <N> {");
      long long n = parse_ll(tok[1], "loop count");
      if (n < 1) fail("loop count must be >= 1");
      st.node = LoopStmt{n, {}};
      stack.back()->push_back(std::move(st));
      stack.push_back(&std::get<LoopStmt>(stack.back()->back().node).body);
      continue;
    } else {
      fail("unknown statement '" + op + "'");
    }
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      fail(e.what());
    }
    stack.back()->push_back(std::move(st));
  }
  if (stack.size() != 1) throw ParseError("unterminated loop block at end of input");
  try {
    validate(prog);
  } catch (const ValidationError& e) {
    throw ParseError(e.what());
  }
  return prog;
}

// ---- Derived per-entity queries used by actions, cost, and features. ----

inline bool is_persisted(const Program& p, const EntityId& e) {
  bool found = false;
  for_each_flat(p, [&](const Statement& s, long long, int) {
    if (auto* pe = std::get_if<PersistStmt>(&s.node))
      if (pe->target == e) found = true;
  });
  return found;
}

inline std::set<EntityId> persisted_entities(const Program& p) {
  std::set<EntityId> out;
  for_each_flat(p, [&](const Statement& s, long long, int) {
    if (auto* pe = std::get_if<PersistStmt>(&s.node)) out.insert(pe->target);
  });
  return out;
}

// target -> (source, key) for every partition alias in the program.
inline std::map<EntityId, std::pair<EntityId, std::string>> partition_aliases(
    const Program& p) {
  std::map<EntityId, std::pair<EntityId, std::string>> out;
  for_each_flat(p, [&](const Statement& s, long long, int) {
    if (auto* pa = std::get_if<PartitionStmt>(&s.node))
      out[pa->target] = {pa->source, pa->key};
  });
  return out;
}

}  // namespace dfopt
