#pragma once

// Strategy ablation: query counts as the tracer's accelerations are switched on
// one at a time (batched-all-rays, dynamic mask, aggressive step, coarse-to-fine).

#include <chrono>
#include <string>
#include <vector>

#include "difftrace/tracer.hpp"

namespace difftrace {

struct BenchRecord {
  std::string strategy;
  bool parallel = true;
  bool dynamic = false;
  bool aggressive = false;
  bool coarse_to_fine = false;
  int width = 0;
  int height = 0;
  int max_steps = 0;
  std::size_t queries = 0;
  std::size_t foreground = 0;
  double seconds = 0.0;
};

/// `full` supplies alpha, coarse_start_scale, epsilon and max_steps for the last row.
template <SignedDistanceField Field>
std::vector<BenchRecord> run_bench(const Field& field, std::span<const double> code, const Intrinsics& intr,
                                   const Pose& pose, const TraceConfig& full) {
  full.validate();
  if (full.alpha == 1.0 || full.coarse_start_scale == 1) {
    throw ConfigError("bench needs alpha > 1 and coarse_start_scale > 1 to ablate");
  }
  std::vector<BenchRecord> rows;
  auto run = [&](const std::string& name, bool dynamic, bool aggressive, bool c2f) {
    TraceConfig cfg = full;
    cfg.dynamic = dynamic;
    cfg.alpha = aggressive ? full.alpha : 1.0;
    cfg.coarse_start_scale = c2f ? full.coarse_start_scale : 1;
    const auto t0 = std::chrono::steady_clock::now();
    const TraceResult r = trace(field, code, intr, pose, cfg);
    BenchRecord rec{name, true, dynamic, aggressive, c2f, intr.width, intr.height, cfg.max_steps, r.queries, 0,
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    for (std::size_t i = 0; i < r.pixel_count(); ++i) rec.foreground += r.converged(i) ? 1 : 0;
    rows.push_back(rec);
  };
  run("parallel", false, false, false);
  run("+dynamic", true, false, false);
  run("+aggressive", true, true, false);
  run("+coarse-to-fine", true, true, true);
  return rows;
}

inline bool strictly_decreasing(const std::vector<BenchRecord>& rows) {
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (!(rows[i].queries < rows[i - 1].queries)) return false;
  }
  return true;
}

}  // namespace difftrace
