// Method sweep used by the command-line runner and the acceptance suite.

#ifndef DGNC_BENCH_HPP
#define DGNC_BENCH_HPP

#include "dgnc/dgnc.hpp"
#include "dgnc/pcm.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dgnc {

enum class Method { L2, Pcm, PcmGnc, Gnc, Dgnc, DgncNaive, DgncEs, CentralGnc };

[[nodiscard]] const char* to_string(Method m);
/// Accepts the names printed by to_string, case-insensitive.
[[nodiscard]] std::optional<Method> method_from_string(const std::string& name);
[[nodiscard]] const std::vector<Method>& all_methods();
[[nodiscard]] bool is_distributed(Method m);

/// True when every initial pose lies in the z = 0 plane with a yaw-only rotation.
[[nodiscard]] bool is_planar(const MultiRobotPoseGraph& graph);

struct BenchOptions {
  RbcdConfig rbcd;
  int es_cap = 50;
  PcmConfig pcm;
  /// Residual dof for the TLS threshold; 0 picks 3 for planar data, else 6.
  int dof = 0;
};

struct MethodRun {
  Method method = Method::L2;
  PoseMap poses;
  std::vector<double> weights;
  double cost = 0.0;
  std::size_t bytes = 0;
  double wall_ms = 0.0;
  std::string status = "ok";
  std::optional<Ledger> ledger;
  std::size_t block_updates = 0;
  std::vector<std::size_t> weight_round_messages;
};

/// One method on one graph. Centralized methods start from the stored
/// initial estimates; CentralGnc starts from the robust distributed
/// initialization instead. Errors are caught and reported in `status`.
[[nodiscard]] MethodRun run_method(Method method, const MultiRobotPoseGraph& graph, double probability,
                                   const BenchOptions& opts = {}, const DgncConfig* dgnc_base = nullptr);

struct BenchRow {
  std::string method;
  std::uint64_t seed = 0;
  double outlier_ratio = 0.0;
  double threshold = 0.0;
  double ate_m = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double cost = 0.0;
  std::size_t bytes = 0;
  double wall_ms = 0.0;
  std::string status;
};

[[nodiscard]] std::string csv_header();
/// Without timing the wall_ms field is written empty, keeping reruns byte-identical.
[[nodiscard]] std::string to_csv(const BenchRow& row, bool with_timing = true);

}  // namespace dgnc

#endif  // DGNC_BENCH_HPP
