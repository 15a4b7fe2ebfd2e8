#include "coughfuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "coughfuse/error.hpp"

namespace coughfuse::synth {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// RBJ constant-peak band-pass biquad.
void bandpass(std::vector<double>& x, double fc, double q, double fs) {
  const double w0 = 2.0 * std::numbers::pi * fc / fs;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  const double b0 = alpha / a0, b2 = -alpha / a0;
  const double a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (double& v : x) {
    const double y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = v;
    y2 = y1;
    y1 = y;
    v = y;
  }
}

double rms(const std::vector<double>& x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return x.empty() ? 0.0 : std::sqrt(acc / double(x.size()));
}

}  // namespace

std::size_t SynthSpec::n_positive() const {
  return static_cast<std::size_t>(std::llround(double(n_files) / (imbalance + 1.0)));
}

void SynthSpec::validate() const {
  if (!(imbalance > 0.0)) throw InvalidArgument("synth: imbalance must be positive");
  if (sample_rate <= 0) throw InvalidArgument("synth: sample_rate must be positive");
  if (!(min_duration_s > 0.0 && max_duration_s >= min_duration_s))
    throw InvalidArgument("synth: bad duration range");
  const std::size_t pos = n_positive();
  if (pos == 0 || pos >= n_files) throw InvalidArgument("synth: both classes need at least one file");
  if (pos < std::size_t(kNumFolds) || n_files - pos < std::size_t(kNumFolds))
    throw InvalidArgument("synth: every fold needs both classes; increase n_files");
  const double nyq = sample_rate / 2.0;
  if (!(am_depth_low >= 0.0 && am_depth_high <= 1.0 && am_depth_low <= am_depth_high))
    throw InvalidArgument("synth: AM depth must lie in [0, 1]");
  if (class0_high_hz >= nyq || class1_high_hz >= nyq) throw InvalidArgument("synth: bands exceed Nyquist");
}

std::vector<double> generate_clip(const SynthSpec& spec, Label label, std::uint64_t index) {
  Rng rng(spec.seed * 0x9E3779B97F4A7C15ull + index * 2 + (label == Label::kPositive ? 1 : 0));
  const double fs = spec.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(uniform(rng, spec.min_duration_s, spec.max_duration_s) * fs));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const bool positive = label == Label::kPositive;

  std::vector<double> signal(n, 0.0);
  const int bursts = std::uniform_int_distribution<int>(1, 3)(rng);
  for (int b = 0; b < bursts; ++b) {
    const auto len = std::min(n, static_cast<std::size_t>(uniform(rng, 0.15, 0.45) * fs));
    const auto start = std::uniform_int_distribution<std::size_t>(0, n - len)(rng);
    const double fc = positive ? uniform(rng, spec.class1_low_hz, spec.class1_high_hz)
                               : uniform(rng, spec.class0_low_hz, spec.class0_high_hz);
    const double am_hz = uniform(rng, spec.am_low_hz, spec.am_high_hz);
    const double am_depth = uniform(rng, spec.am_depth_low, spec.am_depth_high);
    const double gain = uniform(rng, 0.3, 1.0);

    std::vector<double> burst(len);
    for (auto& v : burst) v = gauss(rng);
    bandpass(burst, fc, 3.0, fs);
    bandpass(burst, fc, 3.0, fs);
    const double norm = rms(burst);
    for (std::size_t i = 0; i < len; ++i) {
      const double t = double(i) / fs;
      // fast attack, exponential decay
      double env = (1.0 - std::exp(-t / 0.01)) * std::exp(-t / (0.35 * double(len) / fs));
      if (positive) env *= 1.0 - am_depth * 0.5 * (1.0 + std::sin(2.0 * std::numbers::pi * am_hz * t));
      signal[start + i] += gain * env * burst[i] / (norm > 0 ? norm : 1.0);
    }
  }

  const double snr_db = uniform(rng, spec.snr_low_db, spec.snr_high_db);
  const double noise_rms = rms(signal) / std::pow(10.0, snr_db / 20.0);
  for (auto& v : signal) v += noise_rms * gauss(rng);

  double peak = 0.0;
  for (double v : signal) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (auto& v : signal) v *= 0.7 / peak;
  return signal;
}

std::vector<int> stratified_folds(const std::vector<Label>& labels, std::uint64_t seed) {
  std::vector<int> folds(labels.size(), 0);
  Rng rng(seed ^ 0xF01D5EEDull);
  for (Label cls : {Label::kNegative, Label::kPositive}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < idx.size(); ++k) folds[idx[k]] = int(k % kNumFolds);
  }
  return folds;
}

std::vector<ManifestEntry> write_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw IoError("cannot create directory " + out_dir.string());

  const std::size_t n_pos = spec.n_positive();
  std::vector<Label> labels(spec.n_files, Label::kNegative);
  std::fill(labels.end() - std::ptrdiff_t(n_pos), labels.end(), Label::kPositive);
  Rng rng(spec.seed ^ 0x5EEDC0DEull);
  std::shuffle(labels.begin(), labels.end(), rng);
  const auto folds = stratified_folds(labels, spec.seed);

  std::vector<ManifestEntry> entries;
  char name[32];
  for (std::size_t i = 0; i < spec.n_files; ++i) {
    std::snprintf(name, sizeof name, "clip_%04zu.wav", i);
    write_wav16(out_dir / name, generate_clip(spec, labels[i], i), spec.sample_rate);
    entries.push_back({name, labels[i], folds[i]});
  }
  write_manifest(out_dir / "manifest.csv", entries);
  return entries;
}

}  // namespace coughfuse::synth
