#include "generators.hpp"

#include <string>

namespace dfopt_test {

using namespace dfopt;

Program random_program(std::mt19937_64& rng) {
  auto pick = [&](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };
  Program p;
  p.name = "random";
  int n_loads = pick(1, 4);
  std::vector<EntityId> defined;
  int counter = 0;
  for (int i = 0; i < n_loads; ++i) {
    EntityId e = "e" + std::to_string(counter++);
    long long records = 1000LL * pick(1, 500);
    long long bytes = 8LL * pick(1, 16);
    bool small = pick(0, 3) == 0;
    p.statements.push_back(Statement{LoadStmt{e, records, bytes, small}});
    defined.push_back(e);
  }
  std::set<EntityId> persisted;

  auto gen_body = [&](auto&& self, std::vector<Statement>& out, int budget,
                      bool in_loop) -> void {
    while (budget-- > 0) {
      int kind = pick(0, in_loop ? 3 : 4);
      if (kind == 0) {  // map
        EntityId src = defined[pick(0, static_cast<int>(defined.size()) - 1)];
        EntityId t = "e" + std::to_string(counter++);
        out.push_back(Statement{MapStmt{t, src, 0.25 * pick(1, 8)}});
        defined.push_back(t);
      } else if (kind == 1 && defined.size() >= 2) {  // join
        EntityId l = defined[pick(0, static_cast<int>(defined.size()) - 1)];
        EntityId r = defined[pick(0, static_cast<int>(defined.size()) - 1)];
        EntityId t = "e" + std::to_string(counter++);
        out.push_back(Statement{JoinStmt{t, l, r}});
        defined.push_back(t);
      } else if (kind == 2) {  // persist
        EntityId e = defined[pick(0, static_cast<int>(defined.size()) - 1)];
        if (persisted.insert(e).second)
          out.push_back(Statement{PersistStmt{e}});
      } else if (kind == 3) {  // partition
        EntityId src = defined[pick(0, static_cast<int>(defined.size()) - 1)];
        EntityId t = "e" + std::to_string(counter++);
        out.push_back(Statement{PartitionStmt{t, src, "k" + std::to_string(pick(0, 1))}});
        defined.push_back(t);
      } else if (!in_loop) {  // loop
        LoopStmt loop{pick(2, 6), {}};
        self(self, loop.body, pick(1, 3), true);
        if (!loop.body.empty()) out.push_back(Statement{std::move(loop)});
      }
    }
  };
  gen_body(gen_body, p.statements, pick(2, 7), false);
  validate(p);
  return p;
}

}  // namespace dfopt_test
