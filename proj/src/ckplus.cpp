#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "nanonet/data.hpp"
#include "nanonet/pngio.hpp"

namespace nanonet {

namespace fs = std::filesystem;

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir, bool dirs_only,
                                     const std::string& ext = "") {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (dirs_only && !e.is_directory()) continue;
    if (!dirs_only && !e.is_regular_file()) continue;
    if (!ext.empty()) {
      std::string got = e.path().extension().string();
      std::transform(got.begin(), got.end(), got.begin(), ::tolower);
      if (got != ext) continue;
    }
    out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Label files hold one float-coded class, e.g. "   3.0000000e+00".
bool parse_emotion_label(const fs::path& file, int& label_out) {
  std::ifstream in(file);
  double v;
  if (!(in >> v)) return false;
  const int code = static_cast<int>(std::lround(v));
  if (std::abs(v - code) > 1e-6 || code < 1 || code > kNumClasses) return false;
  label_out = code - 1;
  return true;
}

}  // namespace

std::vector<Sample> ingest_ckplus(const std::string& root_dir, int resolution,
                                  IngestStats* stats) {
  const fs::path root(root_dir);
  const fs::path images = root / "cohn-kanade-images";
  const fs::path emotions = root / "Emotion";
  if (!fs::is_directory(root))
    throw ValueError("ingest: missing root directory '" + root_dir + "'");
  if (!fs::is_directory(images))
    throw ValueError("ingest: '" + images.string() +
                     "' not found; expected the stock layout");

  IngestStats st;
  std::set<std::string> subjects;
  std::vector<Sample> out;

  for (const fs::path& subj_dir : sorted_entries(images, true)) {
    const std::string subject = subj_dir.filename().string();
    for (const fs::path& seq_dir : sorted_entries(subj_dir, true)) {
      const std::string sequence = seq_dir.filename().string();
      const auto frames = sorted_entries(seq_dir, false, ".png");
      if (frames.empty()) continue;

      const fs::path label_dir = emotions / subject / sequence;
      const auto label_files = sorted_entries(label_dir, false, ".txt");
      if (label_files.empty()) {
        ++st.skipped_unlabeled;
        continue;
      }
      int label;
      if (!parse_emotion_label(label_files.front(), label)) {
        std::cerr << "warning: unparseable label file " << label_files.front()
                  << ", sequence skipped\n";
        ++st.label_failures;
        continue;
      }

      const size_t take = std::min<size_t>(3, frames.size());
      if (frames.size() < 3) {
        std::cerr << "warning: sequence " << subject << "/" << sequence
                  << " has only " << frames.size() << " frame(s)\n";
        ++st.short_sequences;
      }
      for (size_t i = frames.size() - take; i < frames.size(); ++i) {
        const GrayImage img = read_png_gray(frames[i].string());
        Sample s;
        s.image = gray_to_tensor(img.pixels, img.width, img.height, resolution);
        s.label = label;
        s.subject_id = subject;
        s.sequence_id = subject + "/" + sequence;
        out.push_back(std::move(s));
      }
      ++st.sequences;
      subjects.insert(subject);
    }
  }
  st.subjects = static_cast<int>(subjects.size());
  st.samples = static_cast<int>(out.size());
  if (stats) *stats = st;
  return out;
}

}  // namespace nanonet
