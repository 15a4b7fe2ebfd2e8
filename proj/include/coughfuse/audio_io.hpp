#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace coughfuse {

inline constexpr int kPipelineRateHz = 16000;
/// 3.6 s at 16 kHz; yields exactly 224 STFT frames at 512/256.
inline constexpr std::size_t kSegmentLen = 57600;

/// Decoded mono waveform, amplitudes in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate_hz = 0;
  std::string source_id;

  // Throws FormatError if empty, non-finite or the rate is not positive.
  void validate() const;
};

struct Segment {
  std::vector<double> samples;
  std::string parent_id;
  std::size_t index = 0;
};

enum class Label : int { kNegative = 0, kPositive = 1 };

struct ManifestEntry {
  std::filesystem::path path;
  Label label = Label::kNegative;
  int fold = 0;
};

inline constexpr int kNumFolds = 5;

/// Reads a PCM WAV file (8/16/24/32-bit integer or 32-bit float, any channel
/// count, plain or WAVE_FORMAT_EXTENSIBLE). Channels are averaged to mono.
AudioClip decode_wav(const std::filesystem::path& path);

/// Parses WAV bytes already in memory; `source_id` is copied into the clip.
AudioClip decode_wav_bytes(std::span<const unsigned char> bytes, const std::string& source_id);

/// Writes a mono 16-bit PCM WAV. Samples are clipped to [-1, 1].
void write_wav16(const std::filesystem::path& path, std::span<const double> samples,
                 int sample_rate_hz);

/// Band-limited resampling with a Kaiser-windowed sinc kernel. Output length
/// is round(n * target / source). Resampling to the clip's own rate returns
/// the clip unchanged.
AudioClip resample(const AudioClip& clip, int target_hz);

/// Cuts a clip into non-overlapping windows of `segment_len` samples. A short
/// clip or trailing remainder is tile-padded: the remainder is repeated
/// cyclically and truncated to exactly `segment_len`.
std::vector<Segment> segment(const AudioClip& clip, std::size_t segment_len = kSegmentLen);

/// CSV with header `path,label,fold`. Relative paths are resolved against the
/// manifest's directory.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
std::vector<ManifestEntry> parse_manifest(const std::string& text,
                                          const std::filesystem::path& base_dir = {});
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

/// Convenience: decode, resample to `rate_hz` and segment.
std::vector<Segment> load_segments(const std::filesystem::path& path, int rate_hz = kPipelineRateHz,
                                   std::size_t segment_len = kSegmentLen);

}  // namespace coughfuse
