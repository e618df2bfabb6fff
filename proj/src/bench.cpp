#include "nanonet/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <nlohmann/json.hpp>

#include "nanonet/rng.hpp"

namespace nanonet {

ClockFn steady_clock_ms() {
  return [] {
    const auto now = std::chrono::steady_clock::now().time_since_epoch();
    return std::chrono::duration<double, std::milli>(now).count();
  };
}

namespace {

// nearest-rank percentile over a sorted sequence
double percentile(const std::vector<double>& sorted, double q) {
  const size_t n = sorted.size();
  const size_t rank = static_cast<size_t>(std::ceil(q * n));
  return sorted[std::min(n - 1, rank > 0 ? rank - 1 : 0)];
}

}  // namespace

BenchReport measure(const Network& net, int warmup, int runs,
                    const ClockFn& clock, uint64_t input_seed) {
  if (runs < 10) throw ValueError("measure: runs >= 10 required");
  if (warmup < 1) throw ValueError("measure: warmup >= 1 required");

  const auto& in = net.spec().input_shape;
  Tensor input(1, in[0], in[1], in[2]);
  Rng rng(input_seed);
  for (float& v : input.data) v = static_cast<float>(rng.uniform());

  std::vector<double> samples;
  samples.reserve(runs);
  for (int i = 0; i < warmup + runs; ++i) {
    const double t0 = clock();
    const Tensor probs = net.probs(input);
    const double t1 = clock();
    (void)probs;
    if (i >= warmup) samples.push_back(t1 - t0);
  }

  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0;
  for (double v : samples) sum += v;

  BenchReport r;
  r.model = net.spec().name;
  r.runs = runs;
  r.latency.mean_ms = sum / runs;
  r.latency.p50_ms = percentile(sorted, 0.50);
  r.latency.p95_ms = percentile(sorted, 0.95);
  r.latency.min_ms = sorted.front();
  r.fps = 1000.0 / r.latency.mean_ms;
  return r;
}

double energy_efficiency(double fps, double watts) {
  if (watts <= 0.0)
    throw ValueError("energy_efficiency: watts must be > 0, got " +
                     std::to_string(watts));
  return fps / watts;
}

double batched_throughput(const Network& net, int batch, int warmup, int runs,
                          const ClockFn& clock) {
  if (batch < 1) throw ValueError("batched_throughput: batch >= 1 required");
  if (runs < 10) throw ValueError("batched_throughput: runs >= 10 required");
  if (warmup < 1) throw ValueError("batched_throughput: warmup >= 1 required");
  const auto& in = net.spec().input_shape;
  Tensor input(batch, in[0], in[1], in[2]);
  Rng rng(7);
  for (float& v : input.data) v = static_cast<float>(rng.uniform());
  double total_ms = 0;
  for (int i = 0; i < warmup + runs; ++i) {
    const double t0 = clock();
    const Tensor probs = net.probs(input);
    const double t1 = clock();
    (void)probs;
    if (i >= warmup) total_ms += t1 - t0;
  }
  return 1000.0 * batch * runs / total_ms;
}

std::string report_json(const BenchReport& report) {
  nlohmann::ordered_json j;
  j["model"] = report.model;
  j["runs"] = report.runs;
  j["latency_ms"] = {{"mean", report.latency.mean_ms},
                     {"p50", report.latency.p50_ms},
                     {"p95", report.latency.p95_ms},
                     {"min", report.latency.min_ms}};
  j["fps"] = report.fps;
  j["watts"] = report.watts;
  j["images_per_sec_per_watt"] = report.images_per_sec_per_watt;
  if (report.batch > 0) {
    j["batch"] = report.batch;
    j["batched_images_per_sec"] = report.batched_images_per_sec;
  }
  return j.dump(2) + "\n";
}

}  // namespace nanonet
