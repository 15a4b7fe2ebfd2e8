#include "coughfuse/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "coughfuse/error.hpp"

namespace coughfuse {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

double decode_sample(const unsigned char* p, std::uint16_t format, int bits) {
  if (format == kFormatFloat) {
    if (bits == 32) {
      float f;
      std::uint32_t u = read_u32(p);
      std::memcpy(&f, &u, sizeof f);
      return f;
    }
    std::uint64_t u = std::uint64_t(read_u32(p)) | (std::uint64_t(read_u32(p + 4)) << 32);
    double d;
    std::memcpy(&d, &u, sizeof d);
    return d;
  }
  switch (bits) {
    case 8:
      return (double(p[0]) - 128.0) / 128.0;
    case 16:
      return double(static_cast<std::int16_t>(read_u16(p))) / 32768.0;
    case 24: {
      std::int32_t v = std::int32_t(p[0]) | (std::int32_t(p[1]) << 8) | (std::int32_t(p[2]) << 16);
      if (v & 0x800000) v -= 0x1000000;
      return double(v) / 8388608.0;
    }
    default:
      return double(static_cast<std::int32_t>(read_u32(p))) / 2147483648.0;
  }
}

// Kaiser-windowed sinc interpolation kernel.
class SincKernel {
 public:
  SincKernel(double cutoff_cycles_per_sample, int zero_crossings, double beta)
      : fc_(cutoff_cycles_per_sample),
        half_width_(zero_crossings / (2.0 * cutoff_cycles_per_sample)),
        beta_(beta),
        i0_beta_(std::cyl_bessel_i(0.0, beta)) {}

  double half_width() const { return half_width_; }

  double operator()(double d) const {
    const double x = d / half_width_;
    if (std::abs(x) >= 1.0) return 0.0;
    const double arg = 2.0 * fc_ * d;
    const double sinc =
        arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
    const double window = std::cyl_bessel_i(0.0, beta_ * std::sqrt(1.0 - x * x)) / i0_beta_;
    return 2.0 * fc_ * sinc * window;
  }

 private:
  double fc_;
  double half_width_;
  double beta_;
  double i0_beta_;
};

constexpr int kZeroCrossings = 16;
constexpr double kKaiserBeta = 8.0;
constexpr double kCutoffFraction = 0.45;
constexpr std::int64_t kMaxPolyphaseTables = 4096;

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void AudioClip::validate() const {
  if (sample_rate_hz <= 0) throw FormatError("sample rate must be positive");
  if (samples.empty()) throw FormatError("zero-length audio: " + source_id);
  for (double s : samples)
    if (!std::isfinite(s)) throw FormatError("non-finite sample in " + source_id);
}

AudioClip decode_wav_bytes(std::span<const unsigned char> bytes, const std::string& source_id) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError("not a RIFF/WAVE file: " + source_id);
  }

  std::uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t available = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (available < 16) throw FormatError("truncated fmt chunk: " + source_id);
      const unsigned char* f = bytes.data() + body;
      format = read_u16(f);
      channels = read_u16(f + 2);
      rate = read_u32(f + 4);
      block_align = read_u16(f + 12);
      bits = read_u16(f + 14);
      if (format == kFormatExtensible) {
        if (available < 26) throw FormatError("truncated extensible fmt chunk: " + source_id);
        format = read_u16(f + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = available;
    }
    pos = body + size + (size & 1u);
  }

  if (!have_fmt) throw FormatError("missing fmt chunk: " + source_id);
  if (data == nullptr) throw FormatError("missing data chunk: " + source_id);
  const bool int_ok = format == kFormatPcm && (bits == 8 || bits == 16 || bits == 24 || bits == 32);
  const bool float_ok = format == kFormatFloat && (bits == 32 || bits == 64);
  if (!int_ok && !float_ok) {
    throw FormatError("unsupported WAV codec (format " + std::to_string(format) + ", " +
                      std::to_string(bits) + " bits): " + source_id);
  }
  if (channels == 0 || rate == 0) throw FormatError("invalid WAV header: " + source_id);
  const std::size_t sample_bytes = bits / 8;
  if (block_align != channels * sample_bytes) throw FormatError("inconsistent block align: " + source_id);

  const std::size_t frames = data_size / block_align;
  if (frames == 0) throw FormatError("zero-length audio: " + source_id);

  AudioClip clip;
  clip.sample_rate_hz = static_cast<int>(rate);
  clip.source_id = source_id;
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const unsigned char* frame = data + i * block_align;
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) acc += decode_sample(frame + c * sample_bytes, format, bits);
    clip.samples[i] = acc / channels;
  }
  clip.validate();
  return clip;
}

AudioClip decode_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav_bytes(bytes, path.string());
}

void write_wav16(const std::filesystem::path& path, std::span<const double> samples, int sample_rate_hz) {
  std::vector<unsigned char> out;
  out.reserve(44 + samples.size() * 2);
  auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
  };
  auto put_u16 = [&](std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v));
    out.push_back(static_cast<unsigned char>(v >> 8));
  };
  auto put_tag = [&](const char* tag) { out.insert(out.end(), tag, tag + 4); };

  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  put_tag("RIFF");
  put_u32(36 + data_bytes);
  put_tag("WAVE");
  put_tag("fmt ");
  put_u32(16);
  put_u16(kFormatPcm);
  put_u16(1);
  put_u32(static_cast<std::uint32_t>(sample_rate_hz));
  put_u32(static_cast<std::uint32_t>(sample_rate_hz) * 2);
  put_u16(2);
  put_u16(16);
  put_tag("data");
  put_u32(data_bytes);
  for (double s : samples) {
    const double clipped = std::clamp(s, -1.0, 1.0);
    const auto v = static_cast<std::int16_t>(std::lround(std::clamp(clipped * 32768.0, -32768.0, 32767.0)));
    put_u16(static_cast<std::uint16_t>(v));
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

AudioClip resample(const AudioClip& clip, int target_hz) {
  clip.validate();
  if (target_hz <= 0) throw InvalidArgument("target rate must be positive");
  if (target_hz == clip.sample_rate_hz) return clip;

  const std::int64_t src = clip.sample_rate_hz;
  const std::int64_t tgt = target_hz;
  const std::int64_t g = std::gcd(src, tgt);
  const std::int64_t up = tgt / g;    // output step denominator
  const std::int64_t down = src / g;  // input advance per `up` outputs
  const auto n_in = static_cast<std::int64_t>(clip.samples.size());
  const std::int64_t n_out = std::max<std::int64_t>(1, (2 * n_in * tgt + src) / (2 * src));

  const double cutoff_hz = kCutoffFraction * static_cast<double>(std::min(src, tgt));
  const SincKernel kernel(cutoff_hz / static_cast<double>(src), kZeroCrossings, kKaiserBeta);
  const auto reach = static_cast<std::int64_t>(std::ceil(kernel.half_width()));
  const std::int64_t taps = 2 * reach + 1;

  // Output j sits at input time j*down/up = base + phase/up. Offsets run over
  // base - reach + 1 .. base + reach + 1.
  auto fill_taps = [&](std::int64_t phase, double* w) {
    const double frac = static_cast<double>(phase) / static_cast<double>(up);
    for (std::int64_t k = 0; k < taps; ++k) w[k] = kernel(static_cast<double>(k - reach + 1) - frac);
  };

  std::vector<double> table;
  const bool polyphase = up <= kMaxPolyphaseTables;
  if (polyphase) {
    table.resize(static_cast<std::size_t>(up * taps));
    for (std::int64_t p = 0; p < up; ++p) fill_taps(p, table.data() + p * taps);
  }
  std::vector<double> scratch(static_cast<std::size_t>(taps));

  AudioClip out;
  out.sample_rate_hz = target_hz;
  out.source_id = clip.source_id;
  out.samples.resize(static_cast<std::size_t>(n_out));
  for (std::int64_t j = 0; j < n_out; ++j) {
    const std::int64_t pos = j * down;
    const std::int64_t base = pos / up;
    const std::int64_t phase = pos % up;
    const double* w;
    if (polyphase) {
      w = table.data() + phase * taps;
    } else {
      fill_taps(phase, scratch.data());
      w = scratch.data();
    }
    double acc = 0.0, norm = 0.0;
    const std::int64_t first = base - reach + 1;
    const std::int64_t k_lo = std::max<std::int64_t>(0, -first);
    const std::int64_t k_hi = std::min<std::int64_t>(taps, n_in - first);
    for (std::int64_t k = k_lo; k < k_hi; ++k) {
      acc += w[k] * clip.samples[static_cast<std::size_t>(first + k)];
      norm += w[k];
    }
    // Tap-sum normalization keeps DC exact, including near the edges.
    out.samples[static_cast<std::size_t>(j)] = norm != 0.0 ? acc / norm : 0.0;
  }
  return out;
}

std::vector<Segment> segment(const AudioClip& clip, std::size_t segment_len) {
  if (clip.samples.empty()) throw InvalidArgument("cannot segment an empty clip");
  if (segment_len == 0) throw InvalidArgument("segment length must be positive");

  const std::size_t n = clip.samples.size();
  const std::size_t full = n / segment_len;
  const std::size_t rem = n % segment_len;
  std::vector<Segment> out;
  out.reserve(full + (rem ? 1 : 0));
  for (std::size_t s = 0; s < full; ++s) {
    Segment seg;
    seg.parent_id = clip.source_id;
    seg.index = s;
    auto begin = clip.samples.begin() + static_cast<std::ptrdiff_t>(s * segment_len);
    seg.samples.assign(begin, begin + static_cast<std::ptrdiff_t>(segment_len));
    out.push_back(std::move(seg));
  }
  if (rem) {
    Segment seg;
    seg.parent_id = clip.source_id;
    seg.index = full;
    seg.samples.resize(segment_len);
    const double* tail = clip.samples.data() + full * segment_len;
    for (std::size_t i = 0; i < segment_len; ++i) seg.samples[i] = tail[i % rem];
    out.push_back(std::move(seg));
  }
  return out;
}

std::vector<ManifestEntry> parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::vector<ManifestEntry> entries;
  std::set<std::string> seen;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    const std::string where = "manifest line " + std::to_string(line_no) + ": ";
    if (!header_seen) {
      if (fields != std::vector<std::string>{"path", "label", "fold"})
        throw FormatError(where + "expected header `path,label,fold`");
      header_seen = true;
      continue;
    }
    if (fields.size() != 3 || fields[0].empty()) throw FormatError(where + "malformed row");

    ManifestEntry e;
    std::filesystem::path p(fields[0]);
    e.path = (p.is_relative() && !base_dir.empty()) ? base_dir / p : p;

    const std::string& label = fields[1];
    if (label == "0" || label == "negative")
      e.label = Label::kNegative;
    else if (label == "1" || label == "positive")
      e.label = Label::kPositive;
    else
      throw FormatError(where + "unknown label `" + label + "`");

    std::size_t used = 0;
    int fold = -1;
    try {
      fold = std::stoi(fields[2], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != fields[2].size() || fold < 0 || fold >= kNumFolds)
      throw FormatError(where + "fold must be an integer in [0, 4]");
    e.fold = fold;

    if (!seen.insert(e.path.lexically_normal().string()).second)
      throw FormatError(where + "duplicate path `" + fields[0] + "`");
    entries.push_back(std::move(e));
  }
  if (!header_seen) throw FormatError("manifest is empty");
  return entries;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str(), path.parent_path());
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "path,label,fold\n";
  for (const auto& e : entries)
    out << e.path.generic_string() << ',' << static_cast<int>(e.label) << ',' << e.fold << '\n';
}

std::vector<Segment> load_segments(const std::filesystem::path& path, int rate_hz, std::size_t segment_len) {
  return segment(resample(decode_wav(path), rate_hz), segment_len);
}

}  // namespace coughfuse
