#include "nanonet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace nanonet {

const std::array<const char*, kNumClasses> kClassNames = {
    "anger", "contempt", "disgust", "fear", "happiness", "sadness", "surprise"};

FoldPlan make_folds(const std::vector<Sample>& samples, int k, uint64_t seed) {
  if (k < 1) throw ValueError("make_folds: k must be >= 1, got " + std::to_string(k));
  std::vector<std::string> subjects;
  for (const auto& s : samples)
    if (std::find(subjects.begin(), subjects.end(), s.subject_id) == subjects.end())
      subjects.push_back(s.subject_id);
  if (k > static_cast<int>(subjects.size()))
    throw ValueError("make_folds: k=" + std::to_string(k) + " exceeds " +
                     std::to_string(subjects.size()) + " distinct subjects");

  Rng rng(derive_seed(seed, {0xf01d}));
  rng.shuffle(subjects);
  FoldPlan plan;
  plan.k = k;
  for (size_t i = 0; i < subjects.size(); ++i)
    plan.assignments[subjects[i]] = static_cast<int>(i % k);
  return plan;
}

namespace {

float bilinear_clamped(const Tensor& img, double x, double y) {
  const int w = img.w(), h = img.h();
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;
  const double v00 = img.at(0, 0, y0, x0), v01 = img.at(0, 0, y0, x1);
  const double v10 = img.at(0, 0, y1, x0), v11 = img.at(0, 0, y1, x1);
  return static_cast<float>((v00 * (1 - fx) + v01 * fx) * (1 - fy) +
                            (v10 * (1 - fx) + v11 * fx) * fy);
}

}  // namespace

Tensor warp_image(const Tensor& img, double theta_rad, double shift_x,
                  double shift_y, double zoom, bool flip) {
  const int h = img.h(), w = img.w();
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double cosb = std::cos(-theta_rad), sinb = std::sin(-theta_rad);
  Tensor dst(1, 1, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // invert: flip, zoom about center, shift, rotation (applied forward
      // in the order rotate -> shift -> zoom -> flip)
      double qx = flip ? (w - 1) - static_cast<double>(x) : x;
      double qy = y;
      qx = cx + (qx - cx) / zoom;
      qy = cy + (qy - cy) / zoom;
      qx -= shift_x;
      qy -= shift_y;
      const double rx = cx + (qx - cx) * cosb - (qy - cy) * sinb;
      const double ry = cy + (qx - cx) * sinb + (qy - cy) * cosb;
      dst.at(0, 0, y, x) = std::clamp(bilinear_clamped(img, rx, ry), 0.0f, 1.0f);
    }
  }
  return dst;
}

Sample augment(const Sample& sample, Rng& rng, const AugmentConfig& cfg) {
  const Tensor& img = sample.image;
  const int h = img.h(), w = img.w();

  const double theta = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg) *
                       3.14159265358979323846 / 180.0;
  const double sx = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * w;
  const double sy = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * h;
  const double zoom = rng.uniform(1.0 - cfg.zoom_frac, 1.0 + cfg.zoom_frac);
  const bool flip = rng.bernoulli(cfg.flip_prob);

  Sample out = sample;
  if (theta == 0.0 && sx == 0.0 && sy == 0.0 && zoom == 1.0 && !flip)
    return out;  // identity transform, bitwise no-op
  out.image = warp_image(img, theta, sx, sy, zoom, flip);
  return out;
}

namespace {

struct SubjectStyle {
  double off_u, off_v, scale, fg, bg;
};

SubjectStyle subject_style(uint64_t seed, int subject) {
  Rng rng(derive_seed(seed, {0x5b, static_cast<uint64_t>(subject)}));
  SubjectStyle s;
  s.off_u = rng.uniform(-0.18, 0.18);
  s.off_v = rng.uniform(-0.18, 0.18);
  s.scale = rng.uniform(0.85, 1.15);
  s.fg = rng.uniform(0.75, 1.0);
  s.bg = rng.uniform(0.0, 0.12);
  return s;
}

bool pattern_hit(int cls, double u, double v) {
  const double t = 0.22;
  const double r = std::sqrt(u * u + v * v);
  switch (cls) {
    case 0: return std::abs(v) < t;                            // horizontal band
    case 1: return std::abs(u) < t;                            // vertical band
    case 2: return r < 0.55;                                   // disk
    case 3: return r > 0.38 && r < 0.68;                       // ring
    case 4: return std::abs(u) < t * 0.7 || std::abs(v) < t * 0.7;  // cross
    case 5: return std::abs(u - v) < t;                        // diagonal stripe
    default: {
      const double m = std::max(std::abs(u), std::abs(v));     // square frame
      return m > 0.42 && m < 0.72;
    }
  }
}

}  // namespace

std::vector<Sample> synth_dataset(int n_subjects, int per_subject, uint64_t seed,
                                  int resolution) {
  if (n_subjects < 1 || per_subject < 1)
    throw ValueError("synth_dataset: counts must be >= 1");
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(n_subjects) * per_subject);
  const double half = (resolution - 1) / 2.0;

  for (int i = 0; i < n_subjects * per_subject; ++i) {
    const int subject = i / per_subject;
    const int cls = i % kNumClasses;
    const SubjectStyle st = subject_style(seed, subject);
    Rng rng(derive_seed(seed, {0x5a, static_cast<uint64_t>(i)}));
    const double ju = rng.uniform(-0.05, 0.05);
    const double jv = rng.uniform(-0.05, 0.05);

    Sample s;
    s.label = cls;
    s.subject_id = "synth" + std::to_string(subject);
    s.sequence_id = "seq" + std::to_string(i);
    s.image = Tensor(1, 1, resolution, resolution);
    for (int y = 0; y < resolution; ++y) {
      for (int x = 0; x < resolution; ++x) {
        const double u = ((x - half) / half - st.off_u - ju) / st.scale;
        const double v = ((y - half) / half - st.off_v - jv) / st.scale;
        double val = st.bg + (pattern_hit(cls, u, v) ? st.fg - st.bg : 0.0);
        val += rng.uniform(0.0, 0.04);
        s.image.at(0, 0, y, x) = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

Tensor gray_to_tensor(const std::vector<uint8_t>& pixels, int width, int height,
                      int resolution) {
  if (static_cast<size_t>(width) * height != pixels.size())
    throw ValueError("gray_to_tensor: pixel buffer does not match dims");
  const int side = std::min(width, height);
  const int ox = (width - side) / 2;
  const int oy = (height - side) / 2;

  Tensor crop(1, 1, side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      crop.at(0, 0, y, x) =
          pixels[static_cast<size_t>(oy + y) * width + (ox + x)] / 255.0f;
  if (side == resolution) return crop;

  Tensor out(1, 1, resolution, resolution);
  const double scale = static_cast<double>(side) / resolution;
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      // align centers of the source and destination grids
      const double sx2 = (x + 0.5) * scale - 0.5;
      const double sy2 = (y + 0.5) * scale - 0.5;
      out.at(0, 0, y, x) = bilinear_clamped(crop, sx2, sy2);
    }
  return out;
}

void save_cache(const std::string& path, const std::vector<Sample>& samples) {
  if (samples.empty()) throw ValueError("save_cache: no samples");
  const int h = samples[0].image.h(), w = samples[0].image.w();
  std::ofstream bin(path, std::ios::binary | std::ios::trunc);
  if (!bin) throw ValueError("save_cache: cannot open '" + path + "'");

  nlohmann::ordered_json idx;
  idx["v"] = 1;
  idx["height"] = h;
  idx["width"] = w;
  idx["samples"] = nlohmann::ordered_json::array();
  uint64_t offset = 0;
  for (const auto& s : samples) {
    if (s.image.h() != h || s.image.w() != w)
      throw ValueError("save_cache: mixed image sizes");
    static_assert(sizeof(float) == 4);
    bin.write(reinterpret_cast<const char*>(s.image.data.data()),
              static_cast<std::streamsize>(s.image.data.size() * 4));
    nlohmann::ordered_json e;
    e["subject"] = s.subject_id;
    e["sequence"] = s.sequence_id;
    e["label"] = s.label;
    e["offset"] = offset;
    idx["samples"].push_back(std::move(e));
    offset += s.image.data.size() * 4;
  }
  bin.close();
  std::ofstream side(path + ".json", std::ios::trunc);
  side << idx.dump(2) << "\n";
}

std::vector<Sample> load_cache(const std::string& path) {
  std::ifstream side(path + ".json");
  if (!side)
    throw ValueError("load_cache: missing sidecar index '" + path + ".json'");
  nlohmann::json idx;
  try {
    side >> idx;
  } catch (const nlohmann::json::parse_error& e) {
    throw ValueError(std::string("load_cache: bad sidecar: ") + e.what());
  }
  if (idx.value("v", 0) != 1) throw ValueError("load_cache: unsupported cache version");
  const int h = idx.at("height").get<int>();
  const int w = idx.at("width").get<int>();

  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw ValueError("load_cache: missing data file '" + path + "'");
  std::vector<Sample> out;
  for (const auto& e : idx.at("samples")) {
    Sample s;
    s.subject_id = e.at("subject").get<std::string>();
    s.sequence_id = e.at("sequence").get<std::string>();
    s.label = e.at("label").get<int>();
    if (s.label < 0 || s.label >= kNumClasses)
      throw ValueError("load_cache: label out of range: " + std::to_string(s.label));
    s.image = Tensor(1, 1, h, w);
    bin.seekg(static_cast<std::streamoff>(e.at("offset").get<uint64_t>()));
    bin.read(reinterpret_cast<char*>(s.image.data.data()),
             static_cast<std::streamsize>(s.image.data.size() * 4));
    if (!bin) throw ValueError("load_cache: truncated data file");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace nanonet
