#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "coughfuse/audio_io.hpp"

namespace coughfuse::dsp {

struct StftConfig {
  std::size_t window_len = 512;
  std::size_t hop = 256;

  void validate() const;
  std::size_t fft_bins() const { return window_len / 2 + 1; }
  /// floor((n - window_len) / hop) + 1, no centering or padding.
  std::size_t num_frames(std::size_t n_samples) const;
};

inline constexpr double kLogFloor = 1e-10;
inline constexpr std::size_t kHandcraftedMels = 26;
inline constexpr std::size_t kImageSlotMels = 128;
inline constexpr std::size_t kAudioSlotMels = 64;
inline constexpr std::size_t kMfccCoeffs = 14;

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

/// Hann-windowed |FFT|^2 per frame, shape [window_len/2+1 x n_frames]. Frame t
/// covers samples [t*hop, t*hop + window_len).
Eigen::MatrixXd stft_power(std::span<const double> signal, const StftConfig& cfg = {});

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Centre frequencies (Hz) of `n_mels` filters spaced evenly on the HTK Mel
/// scale strictly inside (fmin, fmax).
std::vector<double> mel_center_frequencies(std::size_t n_mels, double fmin_hz, double fmax_hz);

/// Triangular filters over FFT bins, each row rescaled to a peak of exactly 1.
/// A filter narrower than one bin collapses onto its nearest bin.
Eigen::MatrixXd mel_filterbank(std::size_t n_mels, std::size_t fft_bins, double sample_rate_hz,
                               double fmin_hz, double fmax_hz);

struct LogMelSpectrogram {
  Eigen::MatrixXd values;  // [n_mels x n_frames]
  double frame_hop_s = 0.0;

  std::size_t n_mels() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t n_frames() const { return static_cast<std::size_t>(values.cols()); }
};

/// Shareable log-Mel front end; the filterbank is built once.
class LogMelExtractor {
 public:
  LogMelExtractor(std::size_t n_mels, int sample_rate_hz = kPipelineRateHz, StftConfig cfg = {});

  LogMelSpectrogram operator()(std::span<const double> signal) const;
  /// Applies the filterbank to a precomputed power spectrogram.
  LogMelSpectrogram from_power(const Eigen::MatrixXd& power) const;

  const Eigen::MatrixXd& filterbank() const { return filterbank_; }
  std::size_t n_mels() const { return static_cast<std::size_t>(filterbank_.rows()); }
  const StftConfig& stft() const { return cfg_; }

 private:
  StftConfig cfg_;
  int sample_rate_hz_;
  Eigen::MatrixXd filterbank_;
};

/// ln(FB * power + 1e-10) over [0, Nyquist].
LogMelSpectrogram log_mel(std::span<const double> signal, const StftConfig& cfg, std::size_t n_mels,
                          int sample_rate_hz = kPipelineRateHz);

/// Orthonormal DCT-II along the Mel axis of a 26-band log-Mel, keeping
/// coefficients 0 .. n_coeffs-1. Returns [n_coeffs x n_frames].
Eigen::MatrixXd mfcc(const LogMelSpectrogram& logmel, std::size_t n_coeffs = kMfccCoeffs);

enum class Functional {
  kMean,
  kStd,
  kMin,
  kMax,
  kRange,
  kMedian,
  kQuartile1,
  kQuartile3,
  kIqr,
  kPercentile1,
  kPercentile99,
  kSkewness,
  kKurtosis,
  kLinregSlope,
  kLinregOffset,
  kLinregMse,
  kMeanCrossingRate,
  kPosMax,
  kPosMin,
  kRms,
};

std::string functional_name(Functional f);
Functional functional_from_name(const std::string& name);

/// The 20-functional default catalog, in declaration order.
const std::vector<Functional>& default_functionals();

/// Evaluates one functional on a contour of at least two frames.
///   std, skewness, kurtosis: population moments (kurtosis is m4/m2^2, not
///   excess); both are 0 for a constant contour.
///   percentiles: linear interpolation between order statistics.
///   linreg: least squares against the frame index 0..n-1; offset is the
///   value at index 0, mse the mean squared residual.
///   mean-crossing rate: sign changes of (x - mean) per frame step.
///   pos max/min: first argmax/argmin index divided by n-1.
double compute_functional(Functional f, std::span<const double> contour);

struct FeatureVector {
  std::vector<double> values;
  std::vector<std::string> lld_names;
  std::vector<Functional> functionals;

  std::size_t index(std::size_t lld, std::size_t functional) const {
    return lld * functionals.size() + functional;
  }
  std::string name(std::size_t i) const;
  std::vector<std::string> layout_names() const;
};

/// Applies every functional of `catalog` to every row of `llds`
/// ([n_llds x n_frames]). `lld_names` may be empty, giving lld0, lld1, ...
FeatureVector apply_functionals(const Eigen::MatrixXd& llds, const std::vector<Functional>& catalog,
                                std::vector<std::string> lld_names = {});

}  // namespace coughfuse::dsp
