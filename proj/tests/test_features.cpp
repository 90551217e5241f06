#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "dfopt/actions.hpp"
#include "dfopt/benchmarks.hpp"
#include "dfopt/features.hpp"
#include "generators.hpp"

using namespace dfopt;

TEST_CASE("empty program produces empty relations") {
  RelationTensor t = extract_relations(Program{});
  CHECK(t.entities.empty());
  CHECK(synthesize_pairs(t).vectors.empty());
}

TEST_CASE("assign relation is transitively closed over map chains") {
  Program p = parse_program("load a 10 10 big\nmap b a 1\nmap c b 1\n");
  RelationTensor t = extract_relations(p);
  // a=0, b=1, c=2 by appearance
  CHECK(t.assign[1][0] == 1);
  CHECK(t.assign[2][1] == 1);
  CHECK(t.assign[2][0] == 1);  // closure
  CHECK(t.assign[0][1] == 0);  // directed
}

TEST_CASE("partition and persist relations on the logreg target variant") {
  Program p = make_benchmark("logreg");
  for (const Action& a : logreg_target_path()) p = apply_action(p, a);
  RelationTensor t = extract_relations(p);
  auto idx = [&](const EntityId& e) {
    for (size_t i = 0; i < t.entities.size(); ++i)
      if (t.entities[i] == e) return i;
    FAIL("missing entity " << e);
    return size_t{0};
  };
  CHECK(t.partition[idx("data_p")][idx("data")] == 1);
  CHECK(t.partition[idx("labels_p")][idx("labels")] == 1);
  CHECK(t.unary[idx("data_p")] == 1);
  CHECK(t.unary[idx("labels_p")] == 1);
  CHECK(t.unary[idx("data")] == 0);
  // The rewritten join now relates the aliases.
  CHECK(t.join[idx("data_p")][idx("labels_p")] == 1);
  CHECK(t.join[idx("labels_p")][idx("data_p")] == 1);
}

TEST_CASE("pair vector layout for a two-entity join") {
  Program p = parse_program("load a 10 10 big\nload b 10 10 big\njoin c a b\n");
  // entities a, b, c; pair (a,b) carries the join edge
  PairVectorSequence seq = featurize(p);
  REQUIRE(seq.vectors.size() == 3);  // 3*(3-1)/2
  CHECK(seq.vectors[0] == PairVector{0, 0, 1, 0, 0, 0});
}

TEST_CASE("single entity yields no pairs") {
  Program p = parse_program("load a 10 10 big\n");
  CHECK(featurize(p).vectors.empty());
}

TEST_CASE("unary slots follow the pair's entities") {
  Program p = parse_program("load a 10 10 big\nload b 10 10 big\nload c 10 10 big\npersist a\n");
  PairVectorSequence seq = featurize(p);
  REQUIRE(seq.vectors.size() == 3);  // (a,b), (a,c), (b,c)
  CHECK(seq.vectors[0][4] == 1);
  CHECK(seq.vectors[1][4] == 1);
  CHECK(seq.vectors[2][4] == 0);
  CHECK(seq.vectors[2][5] == 0);
}

TEST_CASE("padding appends zero vectors and rejects overflow") {
  Program p = parse_program("load a 10 10 big\nload b 10 10 big\njoin c a b\n");
  PairVectorSequence seq = pad_sequence(featurize(p), 10);
  REQUIRE(seq.vectors.size() == 10);
  for (size_t i = 3; i < 10; ++i) CHECK(seq.vectors[i] == PairVector{});
  CHECK(pad_sequence(PairVectorSequence{}, 10).vectors.size() == 10);
  PairVectorSequence big = featurize(p);
  CHECK_THROWS_AS(pad_sequence(big, 2), FeatureError);
  CHECK(pad_sequence(featurize(p), 3).vectors.size() == 3);  // exact fit is a no-op
}

TEST_CASE("feature count is 6 * E*(E-1)/2 for every benchmark") {
  for (const std::string& id : benchmark_ids()) {
    Program p = make_benchmark(id);
    size_t e = entities(p).size();
    PairVectorSequence seq = featurize(p);
    CHECK(seq.vectors.size() == e * (e - 1) / 2);
    CHECK(flatten_features(seq).size() == 6 * e * (e - 1) / 2);
  }
}

TEST_CASE("property: features are invariant under entity renaming") {
  std::mt19937_64 rng(4242);
  for (int i = 0; i < 60; ++i) {
    Program p = dfopt_test::random_program(rng);
    // Rename every entity, preserving order of appearance.
    std::map<EntityId, EntityId> rename;
    for (const EntityId& e : entities(p)) rename[e] = "x" + std::to_string(rename.size());
    std::string text = serialize_program(p);
    Program q = p;
    std::function<void(std::vector<Statement>&)> walk = [&](std::vector<Statement>& stmts) {
      for (Statement& s : stmts) {
        if (auto* l = std::get_if<LoadStmt>(&s.node)) l->target = rename[l->target];
        else if (auto* m = std::get_if<MapStmt>(&s.node)) {
          m->target = rename[m->target];
          m->source = rename[m->source];
        } else if (auto* j = std::get_if<JoinStmt>(&s.node)) {
          j->target = rename[j->target]; j->left = rename[j->left]; j->right = rename[j->right];
        } else if (auto* b = std::get_if<BroadcastJoinStmt>(&s.node)) {
          b->target = rename[b->target]; b->left = rename[b->left]; b->right = rename[b->right];
        } else if (auto* pa = std::get_if<PartitionStmt>(&s.node)) {
          pa->target = rename[pa->target]; pa->source = rename[pa->source];
        } else if (auto* pe = std::get_if<PersistStmt>(&s.node)) {
          pe->target = rename[pe->target];
        } else if (auto* loop = std::get_if<LoopStmt>(&s.node)) {
          walk(loop->body);
        }
      }
    };
    walk(q.statements);
    REQUIRE(flatten_features(featurize(p)) == flatten_features(featurize(q)));
  }
}

TEST_CASE("property: persisting touches only unary slots") {
  std::mt19937_64 rng(555);
  int checked = 0;
  for (int i = 0; i < 80; ++i) {
    Program p = dfopt_test::random_program(rng);
    for (const Action& a : legal_actions(p)) {
      auto* pe = std::get_if<PersistAction>(&a);
      if (!pe) continue;
      Program q = apply_action(p, a);
      PairVectorSequence before = featurize(p);
      PairVectorSequence after = featurize(q);
      REQUIRE(before.vectors.size() == after.vectors.size());
      auto ents = entities(p);
      size_t n = ents.size(), pair = 0;
      for (size_t x = 0; x < n; ++x) {
        for (size_t y = x + 1; y < n; ++y, ++pair) {
          for (int slot = 0; slot < 4; ++slot)
            REQUIRE(before.vectors[pair][slot] == after.vectors[pair][slot]);
          bool involves = ents[x] == pe->entity || ents[y] == pe->entity;
          if (!involves) REQUIRE(before.vectors[pair] == after.vectors[pair]);
          if (ents[x] == pe->entity) REQUIRE(after.vectors[pair][4] == 1);
          if (ents[y] == pe->entity) REQUIRE(after.vectors[pair][5] == 1);
        }
      }
      ++checked;
    }
  }
  CHECK(checked > 50);
}
