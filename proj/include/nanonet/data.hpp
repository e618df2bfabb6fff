#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "nanonet/rng.hpp"
#include "nanonet/tensor.hpp"

namespace nanonet {

constexpr int kNumClasses = 7;

/// Class order matches the dataset's 1..7 label coding minus one.
extern const std::array<const char*, kNumClasses> kClassNames;

struct Sample {
  Tensor image;  // (1,1,H,W), grayscale in [0,1]
  int label = 0;
  std::string subject_id;
  std::string sequence_id;
};

struct FoldPlan {
  int k = 0;
  std::unordered_map<std::string, int> assignments;  // subject -> fold
};

/// Subject-level partition into k folds, sizes differing by at most one
/// subject. Deterministic for a fixed seed. Throws if k exceeds the number
/// of distinct subjects.
FoldPlan make_folds(const std::vector<Sample>& samples, int k, uint64_t seed);

struct AugmentConfig {
  double rotation_deg = 10.0;
  double shift_frac = 0.10;
  double zoom_frac = 0.10;
  double flip_prob = 0.5;

  static AugmentConfig none() { return {0.0, 0.0, 0.0, 0.0}; }
};

/// Deterministic warp backing augment: rotation (radians, about the image
/// center), pixel shifts, zoom about the center and horizontal flip,
/// applied in that order with bilinear resampling and edge-replicate fill.
Tensor warp_image(const Tensor& img, double theta_rad, double shift_x,
                  double shift_y, double zoom, bool flip);

/// Random rotation, shift, zoom and horizontal flip with bilinear
/// resampling and edge-replicate fill. Consumes exactly five draws from
/// rng; an identity draw returns the image bit-for-bit.
Sample augment(const Sample& sample, Rng& rng, const AugmentConfig& cfg);

/// License-free surrogate dataset: seven parametric grayscale patterns with
/// per-subject style jitter. Deterministic in (seed); class of sample i is
/// i % 7, subject of sample i is i / per_subject.
std::vector<Sample> synth_dataset(int n_subjects, int per_subject, uint64_t seed,
                                  int resolution = 48);

struct IngestStats {
  int sequences = 0;    // labeled sequences ingested
  int subjects = 0;     // distinct subjects seen in ingested sequences
  int samples = 0;
  int skipped_unlabeled = 0;
  int label_failures = 0;
  int short_sequences = 0;  // labeled sequences with fewer than 3 frames
};

/// Reads the stock directory layout (cohn-kanade-images/Sxxx/yyy/*.png plus
/// Emotion/Sxxx/yyy/*_emotion.txt), keeping the last three frames of every
/// labeled sequence: grayscale, center-cropped square, bilinear-resized to
/// `resolution`, scaled to [0,1].
std::vector<Sample> ingest_ckplus(const std::string& root_dir, int resolution,
                                  IngestStats* stats = nullptr);

/// Cache: raw little-endian f32 image blocks, with a JSON sidecar index at
/// path + ".json".
void save_cache(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> load_cache(const std::string& path);

/// Center crop to square + bilinear resize of an 8-bit grayscale buffer,
/// scaled to [0,1]. Exposed for ingest tests.
Tensor gray_to_tensor(const std::vector<uint8_t>& pixels, int width, int height,
                      int resolution);

}  // namespace nanonet
