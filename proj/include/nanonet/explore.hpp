#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nanonet/arch.hpp"
#include "nanonet/data.hpp"
#include "nanonet/train.hpp"

namespace nanonet {

/// Hard feasibility predicate a candidate must satisfy. Boundary values
/// pass (closed inequalities).
struct Constraints {
  double min_accuracy = 0.92;
  long long max_params = 1'000'000;
};

struct CandidateRecord {
  ArchSpec spec;
  double accuracy = 0;  // proxy-evaluated
  long long params = 0;
  long long macs = 0;
  double u_score = 0;
  bool feasible = false;
};

int indicator(const CandidateRecord& record, const Constraints& c);

struct UCoeffs {
  double alpha = 2.0;
  double beta = 0.5;
  double gamma = 0.5;
};

/// NetScore-style trade-off:
///   U = 20*log10((100*accuracy)^alpha / (params_M^beta * macs_M^gamma)),
/// with params/macs in millions floored at 1e-3 M. Throws on accuracy <= 0.
double u_score(double accuracy, long long params, long long macs,
               const UCoeffs& coeffs = {});

struct MutationRates {
  double channel_scale = 1.0;
  double toggle_edge = 1.0;
  double kernel_size = 1.0;
  double block = 1.0;
  /// Upper bound on conv out_channels when > 0 (bounds the search space).
  int max_channels = 0;
};

/// One structural mutation: scale a conv's width by 0.75/1.25 (min 4),
/// toggle a shape-compatible skip edge on an add merge, flip a conv kernel
/// between 1x1 and 3x3, or insert/remove a residual block. The result
/// always validates; infeasible draws are resampled (up to 100), then the
/// input is returned unchanged.
ArchSpec mutate(const ArchSpec& spec, Rng& rng, const MutationRates& rates);

struct SearchConfig {
  int iterations = 20;
  int population = 4;
  MutationRates rates;
  int proxy_epochs = 40;
  int proxy_max_samples = 0;  // 0 = use all
  double proxy_val_fraction = 0.2;
  /// Probability of drawing a parent uniformly from everything evaluated
  /// instead of the top-ranked pool; keeps the search out of local basins.
  double parent_eps = 0.25;
  UCoeffs u;
  uint64_t seed = 1;
  TrainConfig proxy_train;  // epochs/schedule replaced by proxy_epochs
};

struct ExploreResult {
  std::optional<CandidateRecord> best;            // feasible argmax-U
  std::vector<CandidateRecord> archive;           // feasible candidates only
  std::vector<CandidateRecord> log;               // every evaluation, in order
  std::optional<CandidateRecord> best_infeasible; // reported when archive is empty
  std::vector<double> best_u_trace;               // archive max after each eval
};

/// Proxy evaluation used by explore: subject-independent 80/20 split,
/// reduced epoch budget, seeded by (seed, arch content hash) so a given
/// architecture always scores the same. Exposed for enumeration oracles.
CandidateRecord evaluate_candidate(const ArchSpec& spec,
                                   const std::vector<Sample>& data,
                                   const Constraints& constraints,
                                   const SearchConfig& cfg);

/// Seeded mutate-evaluate-filter loop over architectures. The archive
/// admits only indicator-feasible candidates; best is the archive argmax
/// by U. Deterministic for a fixed seed. When a log stream is given, one
/// JSON line per evaluation is appended.
ExploreResult explore(const ArchSpec& seed_spec, const std::vector<Sample>& data,
                      const Constraints& constraints, const SearchConfig& cfg,
                      std::ostream* jsonl_log = nullptr);

std::string candidate_jsonl(const CandidateRecord& r, int iteration);

}  // namespace nanonet
