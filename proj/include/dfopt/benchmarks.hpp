#pragma once

// Built-in benchmark programs. Each mirrors a familiar workload shape:
// logreg joins a large feature matrix with its label vector inside a
// gradient loop, kmeans repeatedly joins points against a small centroid
// table, and etl is a single-pass load/transform/join chain.

#include <set>
#include <string>
#include <vector>

#include "dfopt/actions.hpp"
#include "dfopt/model.hpp"
#include "dfopt/program.hpp"

namespace dfopt {

inline const char* kLogRegText =
    "# program: logreg\n"
    "load data 8000000 100 big\n"
    "load labels 8000000 25 big\n"
    "loop 20 {\n"
    "  join joined data labels\n"
    "  map grads joined 1\n"
    "  map weights grads 0.5\n"
    "}\n";

inline const char* kKMeansText =
    "# program: kmeans\n"
    "load points 10000000 80 big\n"
    "load centroids 2000000 80 small\n"
    "loop 15 {\n"
    "  join assigned points centroids\n"
    "  map dists assigned 1.2\n"
    "  map newcent dists 0.4\n"
    "}\n";

inline const char* kEtlText =
    "# program: etl\n"
    "load events 6000000 100 big\n"
    "load dims 50000 80 small\n"
    "map cleaned events 0.8\n"
    "join enriched cleaned dims\n"
    "map output enriched 0.5\n";

// The logreg optimization target: both join inputs partitioned by one shared
// key and their partitioned aliases persisted (four alterations).
inline const char* kLogRegTargetText =
    "partitioned data_p $K\n"
    "persisted data_p\n"
    "partitioned labels_p $K\n"
    "persisted labels_p\n";

inline std::vector<std::string> benchmark_ids() { return {"logreg", "kmeans", "etl"}; }

inline std::string benchmark_text(const std::string& id) {
  if (id == "logreg") return kLogRegText;
  if (id == "kmeans") return kKMeansText;
  if (id == "etl") return kEtlText;
  throw std::runtime_error("unknown benchmark '" + id + "' (have: logreg, kmeans, etl)");
}

inline Program make_benchmark(const std::string& id) {
  return parse_program(benchmark_text(id));
}

inline TargetSpec logreg_target() { return parse_target(kLogRegTargetText); }

// The known optimal alteration sequence for logreg, in canonical order.
inline std::vector<Action> logreg_target_path() {
  return {PartitionAction{"data", "k0"}, PersistAction{"data_p"},
          PartitionAction{"labels", "k0"}, PersistAction{"labels_p"}};
}

// Hand-coded optimum prior: probability 1 exactly on the states along the
// known 4-step path to the logreg target, 0 elsewhere. Used as the OPTIMUM
// reference condition in the transfer experiment.
inline PriorFn logreg_oracle_prior() {
  auto on_path = std::make_shared<std::set<uint64_t>>();
  Program p = make_benchmark("logreg");
  for (const Action& a : logreg_target_path()) {
    p = apply_action(p, a);
    on_path->insert(program_hash(p));
  }
  return [on_path](const Program& s) {
    return on_path->count(program_hash(s)) ? 1.0 : 0.0;
  };
}

}  // namespace dfopt
