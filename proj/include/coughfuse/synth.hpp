#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "coughfuse/audio_io.hpp"

namespace coughfuse::synth {

/// Two-class corpus of cough-like noise bursts. Class 0 bursts sit in a low
/// band; class 1 bursts sit higher and carry an amplitude-modulated envelope.
/// The bands overlap and background noise is mixed at a random SNR.
struct SynthSpec {
  std::size_t n_files = 200;
  double imbalance = 9.0;  // negatives per positive
  int sample_rate = 44100;
  double min_duration_s = 1.0;
  double max_duration_s = 3.4;
  double class0_low_hz = 500.0, class0_high_hz = 1500.0;
  double class1_low_hz = 900.0, class1_high_hz = 2400.0;
  double am_low_hz = 10.0, am_high_hz = 25.0;
  double am_depth_low = 0.3, am_depth_high = 0.8;
  double snr_low_db = 0.0, snr_high_db = 20.0;
  std::uint64_t seed = 0;

  std::size_t n_positive() const;
  void validate() const;
};

/// One synthesized clip, fully determined by (spec, label, index).
std::vector<double> generate_clip(const SynthSpec& spec, Label label, std::uint64_t index);

/// Class-stratified fold assignment: each class is shuffled and dealt
/// round-robin, so per-fold counts differ by at most one file per class.
std::vector<int> stratified_folds(const std::vector<Label>& labels, std::uint64_t seed);

/// Writes clip_NNNN.wav files and manifest.csv into `out_dir`. Returns the
/// manifest entries (paths relative to `out_dir`).
std::vector<ManifestEntry> write_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace coughfuse::synth
