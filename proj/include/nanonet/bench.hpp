#pragma once

#include <functional>
#include <string>

#include "nanonet/model.hpp"

namespace nanonet {

/// Monotonic clock returning milliseconds; injectable so tests can script
/// exact tick sequences. Called twice per inference (begin/end).
using ClockFn = std::function<double()>;

ClockFn steady_clock_ms();

struct LatencyStats {
  double mean_ms = 0;
  double p50_ms = 0;
  double p95_ms = 0;
  double min_ms = 0;
};

struct BenchReport {
  std::string model;
  int runs = 0;
  LatencyStats latency;
  double fps = 0;  // 1000 / mean latency, batch 1
  double watts = 0;
  double images_per_sec_per_watt = 0;
  // optional batched-throughput side report (0 = not measured)
  int batch = 0;
  double batched_images_per_sec = 0;
};

/// Batch-1 forward latency over `runs` passes after `warmup` discarded
/// passes. Stats cover the post-warmup runs only. Requires runs >= 10 and
/// warmup >= 1. Single-threaded by contract.
BenchReport measure(const Network& net, int warmup, int runs,
                    const ClockFn& clock = steady_clock_ms(),
                    uint64_t input_seed = 7);

double energy_efficiency(double fps, double watts);  // throws on watts <= 0

/// Optional side metric: images/sec at a fixed batch size, same
/// warmup/runs discipline as measure().
double batched_throughput(const Network& net, int batch, int warmup, int runs,
                          const ClockFn& clock = steady_clock_ms());

std::string report_json(const BenchReport& report);

}  // namespace nanonet
