#include "coughfuse/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <unsupported/Eigen/FFT>

#include "coughfuse/error.hpp"

namespace coughfuse::dsp {

void StftConfig::validate() const {
  if (window_len == 0 || (window_len & (window_len - 1)) != 0)
    throw InvalidArgument("STFT window length must be a power of two");
  if (hop == 0 || hop > window_len) throw InvalidArgument("STFT hop must be in (0, window_len]");
}

std::size_t StftConfig::num_frames(std::size_t n_samples) const {
  if (n_samples < window_len) return 0;
  return (n_samples - window_len) / hop + 1;
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n));
  return w;
}

Eigen::MatrixXd stft_power(std::span<const double> signal, const StftConfig& cfg) {
  cfg.validate();
  if (signal.size() < cfg.window_len)
    throw ShapeError("signal of " + std::to_string(signal.size()) + " samples is shorter than one " +
                     std::to_string(cfg.window_len) + "-sample window");

  const std::size_t frames = cfg.num_frames(signal.size());
  const std::size_t bins = cfg.fft_bins();
  const auto window = hann_window(cfg.window_len);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(cfg.window_len);
  std::vector<std::complex<double>> spectrum;

  Eigen::MatrixXd power(bins, frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* src = signal.data() + t * cfg.hop;
    for (std::size_t i = 0; i < cfg.window_len; ++i) frame[i] = src[i] * window[i];
    fft.fwd(spectrum, frame);
    for (std::size_t k = 0; k < bins; ++k) power(Eigen::Index(k), Eigen::Index(t)) = std::norm(spectrum[k]);
  }
  return power;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_edges(std::size_t n_mels, double fmin_hz, double fmax_hz) {
  const double lo = hz_to_mel(fmin_hz);
  const double hi = hz_to_mel(fmax_hz);
  std::vector<double> hz(n_mels + 2);
  for (std::size_t i = 0; i < hz.size(); ++i)
    hz[i] = mel_to_hz(lo + (hi - lo) * double(i) / double(n_mels + 1));
  return hz;
}

}  // namespace

std::vector<double> mel_center_frequencies(std::size_t n_mels, double fmin_hz, double fmax_hz) {
  auto edges = mel_edges(n_mels, fmin_hz, fmax_hz);
  return {edges.begin() + 1, edges.end() - 1};
}

Eigen::MatrixXd mel_filterbank(std::size_t n_mels, std::size_t fft_bins, double sample_rate_hz,
                               double fmin_hz, double fmax_hz) {
  if (n_mels == 0) throw InvalidArgument("need at least one Mel filter");
  if (fft_bins < 2) throw InvalidArgument("need at least two FFT bins");
  if (!(fmin_hz >= 0.0 && fmin_hz < fmax_hz && fmax_hz <= sample_rate_hz / 2.0))
    throw InvalidArgument("Mel range must satisfy 0 <= fmin < fmax <= sample_rate/2");

  const auto edges = mel_edges(n_mels, fmin_hz, fmax_hz);
  const double bin_hz = sample_rate_hz / (2.0 * double(fft_bins - 1));

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(Eigen::Index(n_mels), Eigen::Index(fft_bins));
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < fft_bins; ++k) {
      const double f = double(k) * bin_hz;
      const double w = std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid));
      if (w > 0.0) fb(Eigen::Index(m), Eigen::Index(k)) = w;
    }
    auto row = fb.row(Eigen::Index(m));
    const double peak = row.maxCoeff();
    if (peak > 0.0) {
      row /= peak;
    } else {
      const auto nearest = static_cast<Eigen::Index>(std::lround(mid / bin_hz));
      row(std::min<Eigen::Index>(nearest, Eigen::Index(fft_bins) - 1)) = 1.0;
    }
  }
  return fb;
}

LogMelExtractor::LogMelExtractor(std::size_t n_mels, int sample_rate_hz, StftConfig cfg)
    : cfg_(cfg), sample_rate_hz_(sample_rate_hz) {
  cfg_.validate();
  if (sample_rate_hz <= 0) throw InvalidArgument("sample rate must be positive");
  filterbank_ = mel_filterbank(n_mels, cfg_.fft_bins(), sample_rate_hz, 0.0, sample_rate_hz / 2.0);
}

LogMelSpectrogram LogMelExtractor::from_power(const Eigen::MatrixXd& power) const {
  if (power.rows() != filterbank_.cols()) throw ShapeError("power spectrogram has the wrong bin count");
  LogMelSpectrogram out;
  out.values = ((filterbank_ * power).array() + kLogFloor).log().matrix();
  out.frame_hop_s = double(cfg_.hop) / double(sample_rate_hz_);
  return out;
}

LogMelSpectrogram LogMelExtractor::operator()(std::span<const double> signal) const {
  return from_power(stft_power(signal, cfg_));
}

LogMelSpectrogram log_mel(std::span<const double> signal, const StftConfig& cfg, std::size_t n_mels,
                          int sample_rate_hz) {
  return LogMelExtractor(n_mels, sample_rate_hz, cfg)(signal);
}

Eigen::MatrixXd mfcc(const LogMelSpectrogram& logmel, std::size_t n_coeffs) {
  const auto n = logmel.n_mels();
  if (n != kHandcraftedMels)
    throw ShapeError("MFCC expects a " + std::to_string(kHandcraftedMels) + "-band log-Mel, got " +
                     std::to_string(n));
  if (n_coeffs == 0 || n_coeffs > n) throw InvalidArgument("MFCC coefficient count out of range");

  Eigen::MatrixXd dct(static_cast<Eigen::Index>(n_coeffs), static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n_coeffs; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / double(n));
    for (std::size_t j = 0; j < n; ++j)
      dct(Eigen::Index(k), Eigen::Index(j)) =
          scale * std::cos(std::numbers::pi * double(k) * (2.0 * double(j) + 1.0) / (2.0 * double(n)));
  }
  return dct * logmel.values;
}

namespace {

const std::vector<std::pair<Functional, const char*>>& functional_table() {
  static const std::vector<std::pair<Functional, const char*>> table = {
      {Functional::kMean, "mean"},
      {Functional::kStd, "std"},
      {Functional::kMin, "min"},
      {Functional::kMax, "max"},
      {Functional::kRange, "range"},
      {Functional::kMedian, "median"},
      {Functional::kQuartile1, "quartile1"},
      {Functional::kQuartile3, "quartile3"},
      {Functional::kIqr, "iqr"},
      {Functional::kPercentile1, "percentile1"},
      {Functional::kPercentile99, "percentile99"},
      {Functional::kSkewness, "skewness"},
      {Functional::kKurtosis, "kurtosis"},
      {Functional::kLinregSlope, "linreg_slope"},
      {Functional::kLinregOffset, "linreg_offset"},
      {Functional::kLinregMse, "linreg_mse"},
      {Functional::kMeanCrossingRate, "mean_crossing_rate"},
      {Functional::kPosMax, "pos_max"},
      {Functional::kPosMin, "pos_min"},
      {Functional::kRms, "rms"},
  };
  return table;
}

double percentile_sorted(const std::vector<double>& sorted, double p) {
  const double pos = p * double(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - double(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double mean_of(std::span<const double> x) { return std::accumulate(x.begin(), x.end(), 0.0) / double(x.size()); }

double central_moment(std::span<const double> x, double mean, int order) {
  double acc = 0.0;
  for (double v : x) acc += std::pow(v - mean, order);
  return acc / double(x.size());
}

struct LinearFit {
  double slope, offset, mse;
};

LinearFit linear_fit(std::span<const double> x) {
  const double n = double(x.size());
  const double t_mean = (n - 1.0) / 2.0;
  const double x_mean = mean_of(x);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dt = double(i) - t_mean;
    sxy += dt * (x[i] - x_mean);
    sxx += dt * dt;
  }
  LinearFit fit{};
  fit.slope = sxy / sxx;
  fit.offset = x_mean - fit.slope * t_mean;
  double err = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = x[i] - (fit.offset + fit.slope * double(i));
    err += r * r;
  }
  fit.mse = err / n;
  return fit;
}

}  // namespace

std::string functional_name(Functional f) {
  for (const auto& [id, name] : functional_table())
    if (id == f) return name;
  throw InvalidArgument("unknown functional");
}

Functional functional_from_name(const std::string& name) {
  for (const auto& [id, n] : functional_table())
    if (name == n) return id;
  throw InvalidArgument("unknown functional `" + name + "`");
}

const std::vector<Functional>& default_functionals() {
  static const std::vector<Functional> catalog = [] {
    std::vector<Functional> c;
    for (const auto& entry : functional_table()) c.push_back(entry.first);
    return c;
  }();
  return catalog;
}

double compute_functional(Functional f, std::span<const double> x) {
  if (x.size() < 2) throw InvalidArgument("functionals need at least two frames");
  const double mean = mean_of(x);

  auto sorted = [&] {
    std::vector<double> s(x.begin(), x.end());
    std::sort(s.begin(), s.end());
    return s;
  };

  switch (f) {
    case Functional::kMean:
      return mean;
    case Functional::kStd:
      return std::sqrt(central_moment(x, mean, 2));
    case Functional::kMin:
      return *std::min_element(x.begin(), x.end());
    case Functional::kMax:
      return *std::max_element(x.begin(), x.end());
    case Functional::kRange: {
      auto [lo, hi] = std::minmax_element(x.begin(), x.end());
      return *hi - *lo;
    }
    case Functional::kMedian:
      return percentile_sorted(sorted(), 0.5);
    case Functional::kQuartile1:
      return percentile_sorted(sorted(), 0.25);
    case Functional::kQuartile3:
      return percentile_sorted(sorted(), 0.75);
    case Functional::kIqr: {
      const auto s = sorted();
      return percentile_sorted(s, 0.75) - percentile_sorted(s, 0.25);
    }
    case Functional::kPercentile1:
      return percentile_sorted(sorted(), 0.01);
    case Functional::kPercentile99:
      return percentile_sorted(sorted(), 0.99);
    case Functional::kSkewness: {
      const double m2 = central_moment(x, mean, 2);
      return m2 > 0.0 ? central_moment(x, mean, 3) / std::pow(m2, 1.5) : 0.0;
    }
    case Functional::kKurtosis: {
      const double m2 = central_moment(x, mean, 2);
      return m2 > 0.0 ? central_moment(x, mean, 4) / (m2 * m2) : 0.0;
    }
    case Functional::kLinregSlope:
      return linear_fit(x).slope;
    case Functional::kLinregOffset:
      return linear_fit(x).offset;
    case Functional::kLinregMse:
      return linear_fit(x).mse;
    case Functional::kMeanCrossingRate: {
      std::size_t crossings = 0;
      for (std::size_t i = 1; i < x.size(); ++i)
        if ((x[i] - mean) * (x[i - 1] - mean) < 0.0) ++crossings;
      return double(crossings) / double(x.size() - 1);
    }
    case Functional::kPosMax:
      return double(std::max_element(x.begin(), x.end()) - x.begin()) / double(x.size() - 1);
    case Functional::kPosMin:
      return double(std::min_element(x.begin(), x.end()) - x.begin()) / double(x.size() - 1);
    case Functional::kRms: {
      double acc = 0.0;
      for (double v : x) acc += v * v;
      return std::sqrt(acc / double(x.size()));
    }
  }
  throw InvalidArgument("unknown functional");
}

std::string FeatureVector::name(std::size_t i) const {
  const std::size_t nf = functionals.size();
  return lld_names.at(i / nf) + "__" + functional_name(functionals.at(i % nf));
}

std::vector<std::string> FeatureVector::layout_names() const {
  std::vector<std::string> names(values.size());
  for (std::size_t i = 0; i < names.size(); ++i) names[i] = name(i);
  return names;
}

FeatureVector apply_functionals(const Eigen::MatrixXd& llds, const std::vector<Functional>& catalog,
                                std::vector<std::string> lld_names) {
  if (llds.cols() < 2) throw InvalidArgument("functionals need at least two frames");
  if (catalog.empty()) throw InvalidArgument("empty functional catalog");
  const auto n_llds = static_cast<std::size_t>(llds.rows());
  if (lld_names.empty()) {
    for (std::size_t i = 0; i < n_llds; ++i) lld_names.push_back("lld" + std::to_string(i));
  } else if (lld_names.size() != n_llds) {
    throw ShapeError("LLD name count does not match LLD rows");
  }

  FeatureVector fv;
  fv.lld_names = std::move(lld_names);
  fv.functionals = catalog;
  fv.values.resize(n_llds * catalog.size());
  std::vector<double> row(static_cast<std::size_t>(llds.cols()));
  for (std::size_t r = 0; r < n_llds; ++r) {
    for (Eigen::Index t = 0; t < llds.cols(); ++t) row[std::size_t(t)] = llds(Eigen::Index(r), t);
    for (std::size_t f = 0; f < catalog.size(); ++f) {
      const double v = compute_functional(catalog[f], row);
      if (!std::isfinite(v)) throw NumericError("non-finite functional value");
      fv.values[fv.index(r, f)] = v;
    }
  }
  return fv;
}

}  // namespace coughfuse::dsp
