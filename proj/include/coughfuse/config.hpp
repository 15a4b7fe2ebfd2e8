#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "coughfuse/dsp.hpp"
#include "coughfuse/nnet.hpp"

namespace coughfuse {

/// How the positive-class loss weight is chosen for each training split.
enum class PosWeightMode {
  kNegOverPos,  // N_negative / N_positive ("auto")
  kPosOverNeg,  // N_positive / N_negative, the literal ratio direction
  kFixed,
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  nn::LrSchedule schedule;  // 0.001, x0.1 every 10 epochs
  nn::MixupConfig mixup;
  PosWeightMode pos_weight_mode = PosWeightMode::kNegOverPos;
  double pos_weight = 1.0;  // used when mode is kFixed

  double resolve_pos_weight(std::size_t n_pos, std::size_t n_neg) const;
};

struct MelBins {
  std::size_t handcrafted = dsp::kHandcraftedMels;
  std::size_t image_slot = dsp::kImageSlotMels;
  std::size_t audio_slot = dsp::kAudioSlotMels;
  bool operator==(const MelBins&) const = default;
};

struct Config {
  int sample_rate = kPipelineRateHz;
  std::size_t segment_len = kSegmentLen;
  dsp::StftConfig stft;
  MelBins mel_bins;
  std::size_t mfcc_coeffs = dsp::kMfccCoeffs;
  TrainConfig train;
  double target_sensitivity = 0.8;
  std::uint64_t seed = 0;

  /// Applies one `key = value` setting; throws InvalidArgument on unknown
  /// keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  /// Flat `key = value` lines in a fixed key order; parse(to_text()) == *this.
  std::string to_text() const;
  std::map<std::string, std::string> to_map() const;
  void validate() const;

  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  bool operator==(const Config& o) const;
};

std::string to_string(PosWeightMode mode, double fixed);

}  // namespace coughfuse
