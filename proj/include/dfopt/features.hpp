#pragma once

// Relational state encoding: four E x E binary relation matrices plus a
// per-entity persist flag, synthesized into one length-6 binary vector per
// unordered entity pair. Entities are ordered by first appearance, pairs
// lexicographically by (i, j), i < j. Vector layout:
//   [assign, partition, join, broadcast, persisted_i, persisted_j]

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "dfopt/program.hpp"

namespace dfopt {

struct FeatureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RelationTensor {
  std::vector<EntityId> entities;              // length E, appearance order
  std::vector<std::vector<uint8_t>> assign;    // assign[i][j]: i reachable from j
  std::vector<std::vector<uint8_t>> partition; // partition[i][j]: i = partitionBy(j)
  std::vector<std::vector<uint8_t>> join;      // symmetric
  std::vector<std::vector<uint8_t>> broadcast; // symmetric
  std::vector<uint8_t> unary;                  // persisted flag
};

using PairVector = std::array<uint8_t, 6>;

struct PairVectorSequence {
  std::vector<PairVector> vectors;  // E*(E-1)/2 entries before padding
};

inline RelationTensor extract_relations(const Program& p) {
  RelationTensor t;
  t.entities = entities(p);
  size_t e = t.entities.size();
  std::map<EntityId, size_t> index;
  for (size_t i = 0; i < e; ++i) index[t.entities[i]] = i;

  auto grid = [e] { return std::vector<std::vector<uint8_t>>(e, std::vector<uint8_t>(e, 0)); };
  t.assign = grid();
  t.partition = grid();
  t.join = grid();
  t.broadcast = grid();
  t.unary.assign(e, 0);

  for_each_flat(p, [&](const Statement& s, long long, int) {
    if (auto* m = std::get_if<MapStmt>(&s.node)) {
      t.assign[index[m->target]][index[m->source]] = 1;
    } else if (auto* pa = std::get_if<PartitionStmt>(&s.node)) {
      t.assign[index[pa->target]][index[pa->source]] = 1;
      t.partition[index[pa->target]][index[pa->source]] = 1;
    } else if (auto* j = std::get_if<JoinStmt>(&s.node)) {
      t.join[index[j->left]][index[j->right]] = 1;
      t.join[index[j->right]][index[j->left]] = 1;
    } else if (auto* b = std::get_if<BroadcastJoinStmt>(&s.node)) {
      t.broadcast[index[b->left]][index[b->right]] = 1;
      t.broadcast[index[b->right]][index[b->left]] = 1;
    } else if (auto* pe = std::get_if<PersistStmt>(&s.node)) {
      t.unary[index[pe->target]] = 1;
    }
  });

  // Reachability through assignment chains (Floyd-Warshall on the tiny grid).
  for (size_t k = 0; k < e; ++k)
    for (size_t i = 0; i < e; ++i)
      if (t.assign[i][k])
        for (size_t j = 0; j < e; ++j)
          if (t.assign[k][j]) t.assign[i][j] = 1;

  return t;
}

// Direction of assign/partition edges collapses here: each pair slot is the
// OR of the (i,j) and (j,i) cells.
inline PairVectorSequence synthesize_pairs(const RelationTensor& t) {
  PairVectorSequence seq;
  size_t e = t.entities.size();
  for (size_t i = 0; i < e; ++i) {
    for (size_t j = i + 1; j < e; ++j) {
      PairVector v{};
      v[0] = t.assign[i][j] | t.assign[j][i];
      v[1] = t.partition[i][j] | t.partition[j][i];
      v[2] = t.join[i][j] | t.join[j][i];
      v[3] = t.broadcast[i][j] | t.broadcast[j][i];
      v[4] = t.unary[i];
      v[5] = t.unary[j];
      seq.vectors.push_back(v);
    }
  }
  return seq;
}

inline PairVectorSequence pad_sequence(PairVectorSequence seq, size_t max_pairs) {
  if (seq.vectors.size() > max_pairs)
    throw FeatureError("pair sequence length " + std::to_string(seq.vectors.size()) +
                       " exceeds max_pairs " + std::to_string(max_pairs));
  seq.vectors.resize(max_pairs, PairVector{});
  return seq;
}

inline PairVectorSequence featurize(const Program& p) {
  return synthesize_pairs(extract_relations(p));
}

inline std::vector<uint8_t> flatten_features(const PairVectorSequence& seq) {
  std::vector<uint8_t> out;
  out.reserve(seq.vectors.size() * 6);
  for (const PairVector& v : seq.vectors) out.insert(out.end(), v.begin(), v.end());
  return out;
}

}  // namespace dfopt
