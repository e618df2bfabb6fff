#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nanonet/data.hpp"
#include "nanonet/model.hpp"

namespace nanonet {

struct LrStep {
  int epoch = 0;
  double multiplier = 1.0;
};

struct TrainConfig {
  int epochs = 200;
  double base_lr = 1e-3;
  // multipliers apply to base_lr, not cumulatively
  std::vector<LrStep> lr_schedule = {{81, 1e-1}, {121, 1e-2}, {161, 1e-3}, {181, 0.5e-3}};
  int batch_size = 32;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 1;
  bool augment_enabled = true;
  AugmentConfig augment;
  /// Inverse-frequency class weighting of the loss; off by default to match
  /// the plain protocol.
  bool class_weighting = false;
  int threads = 1;  // fold-level parallelism in cross_validate
  bool verbose = false;

  void validate() const;  // throws ValueError on a bad schedule
  /// Copy with the epoch budget replaced; schedule steps at or past the new
  /// budget are dropped.
  TrainConfig with_epochs(int n) const;
};

double lr_at(int epoch, const TrainConfig& cfg);

/// Network weights plus Adam moment estimates, congruent by construction.
struct ModelState {
  Network net;
  std::unordered_map<std::string, LayerParams> m;  // first moments
  std::unordered_map<std::string, LayerParams> v;  // second moments
  long long step = 0;

  static ModelState init(const ArchSpec& spec, uint64_t seed);

  /// Warm start for derived architectures: fresh init, then weights copied
  /// from `parent` wherever a node id exists in both networks with matching
  /// shapes; everything else keeps its fresh initialization. Optimizer
  /// moments start at zero either way.
  static ModelState init_inherited(const ArchSpec& spec, const ModelState& parent,
                                   uint64_t seed);
};

/// Elementwise bias-corrected Adam update; `step` is the post-increment
/// step count. Shared by the float training path and the double-precision
/// tests.
template <typename T>
void adam_apply(T* theta, T* m, T* v, const T* grad, size_t count, double lr,
                double beta1, double beta2, double eps, long long step) {
  const double corr1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double corr2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (size_t i = 0; i < count; ++i) {
    const double g = grad[i];
    const double mi = beta1 * m[i] + (1.0 - beta1) * g;
    const double vi = beta2 * v[i] + (1.0 - beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    theta[i] -= static_cast<T>(lr * (mi / corr1) / (std::sqrt(vi / corr2) + eps));
  }
}

/// One bias-corrected Adam update. Throws ValueError (naming the node) on a
/// non-finite gradient.
void adam_step(ModelState& state, const GradMap& grads, double lr,
               const TrainConfig& cfg);

/// Guard used by cross_validate on every fold before training.
void assert_no_subject_leak(const std::vector<Sample>& train_set,
                            const std::vector<Sample>& test_set, int fold);

struct EpochStats {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_acc = 0;
  double val_acc = -1;  // -1 when no validation set was given
};

struct TrainResult {
  ModelState state;
  std::vector<EpochStats> history;
};

/// Full training loop: seeded per-epoch shuffling, augmentation on training
/// batches only, no early stopping. Deterministic for a fixed seed. When
/// warm_start is given, compatible weights are inherited from it (see
/// ModelState::init_inherited).
TrainResult train(const ArchSpec& spec, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& cfg,
                  const ModelState* warm_start = nullptr);

struct EvalResult {
  double accuracy = 0;
  std::array<std::array<int, kNumClasses>, kNumClasses> confusion{};  // [true][pred]
};

EvalResult evaluate(const Network& net, const std::vector<Sample>& data);

struct FoldResult {
  int fold = 0;
  int test_count = 0;
  double accuracy = 0;
  std::vector<std::string> test_subjects;
};

struct CrossValResult {
  std::vector<FoldResult> folds;
  double mean_accuracy = 0;
};

/// Trains one fresh model per fold (fresh init and optimizer, per-fold
/// derived seed) and reports per-fold test accuracy plus the unweighted
/// mean. Every fold is checked for subject leakage before training.
CrossValResult cross_validate(const ArchSpec& spec,
                              const std::vector<Sample>& samples, int k,
                              const TrainConfig& cfg,
                              std::optional<FoldPlan> plan = std::nullopt);

/// Checkpoint: header (magic+version, spec content hash, scalar count)
/// followed by little-endian f32 blocks in topological node order
/// (weights then bias per node). Loading refuses a hash mismatch.
void save_checkpoint(const std::string& path, const ModelState& state);
ModelState load_checkpoint(const std::string& path, const ArchSpec& spec);

}  // namespace nanonet
