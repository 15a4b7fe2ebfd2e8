#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

#include "coughfuse/audio_io.hpp"
#include "coughfuse/error.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace coughfuse;
using testutil::TempDir;

namespace {

AudioClip make_clip(std::vector<double> s, int rate) { return {std::move(s), rate, "test"}; }

std::vector<double> reference_tiler(const std::vector<double>& x, std::size_t len, std::size_t seg) {
  // Segment `seg` of the tiling rule, computed by plain index arithmetic.
  const std::size_t start = seg * len;
  const std::size_t rem = std::min(len, x.size() - start);
  std::vector<double> out(len);
  for (std::size_t i = 0; i < len; ++i) out[i] = x[start + i % rem];
  return out;
}

}  // namespace

TEST_CASE("decode 16-bit mono normalizes by full scale") {
  const auto bytes = testutil::wav_bytes(1, 1, 16000, 16, testutil::pcm16({0, 16384, -32768}));
  const auto clip = decode_wav_bytes(bytes, "x");
  REQUIRE(clip.samples.size() == 3);
  CHECK(clip.samples[0] == 0.0);
  CHECK(clip.samples[1] == 0.5);
  CHECK(clip.samples[2] == -1.0);
  CHECK(clip.sample_rate_hz == 16000);
}

TEST_CASE("decode stereo averages channels") {
  std::vector<unsigned char> data(8);
  const float frame[2] = {1.0f, 0.0f};
  std::memcpy(data.data(), frame, 8);
  const auto clip = decode_wav_bytes(testutil::wav_bytes(3, 2, 8000, 32, data), "x");
  REQUIRE(clip.samples.size() == 1);
  CHECK(clip.samples[0] == 0.5);
}

TEST_CASE("decode 8-bit and 24-bit PCM") {
  SUBCASE("8-bit is unsigned with midpoint 128") {
    const auto clip = decode_wav_bytes(testutil::wav_bytes(1, 1, 8000, 8, {128, 192, 0}), "x");
    CHECK(clip.samples == std::vector<double>{0.0, 0.5, -1.0});
  }
  SUBCASE("24-bit little endian") {
    // 0x400000 = 0.5, 0x800000 = -1
    const auto clip = decode_wav_bytes(testutil::wav_bytes(1, 1, 8000, 24, {0, 0, 0x40, 0, 0, 0x80}), "x");
    CHECK(clip.samples == std::vector<double>{0.5, -1.0});
  }
}

TEST_CASE("one second at 44.1 kHz has 44100 samples") {
  TempDir dir;
  std::vector<double> s(44100, 0.1);
  write_wav16(dir / "a.wav", s, 44100);
  const auto clip = decode_wav(dir / "a.wav");
  CHECK(clip.samples.size() == 44100);
  CHECK(clip.sample_rate_hz == 44100);
}

TEST_CASE("decode errors") {
  TempDir dir;
  CHECK_THROWS_AS(decode_wav(dir / "missing.wav"), IoError);
  // Compressed codec (ADPCM, format 2).
  CHECK_THROWS_AS(decode_wav_bytes(testutil::wav_bytes(2, 1, 8000, 4, {1, 2}), "x"), FormatError);
  CHECK_THROWS_AS(decode_wav_bytes(testutil::wav_bytes(1, 1, 8000, 16, {}), "x"), FormatError);
  const std::vector<unsigned char> junk = {'n', 'o', 'p', 'e'};
  CHECK_THROWS_AS(decode_wav_bytes(junk, "x"), FormatError);
}

TEST_CASE("decode is deterministic") {
  std::mt19937_64 rng(3);
  std::vector<std::int16_t> v(1000);
  for (auto& s : v) s = static_cast<std::int16_t>(rng());
  const auto bytes = testutil::wav_bytes(1, 1, 16000, 16, testutil::pcm16(v));
  CHECK(decode_wav_bytes(bytes, "a").samples == decode_wav_bytes(bytes, "b").samples);
}

TEST_CASE("resample output length and output rate") {
  const auto out = resample(make_clip(std::vector<double>(44100, 0.0), 44100), 16000);
  CHECK(out.samples.size() == 16000);
  CHECK(out.sample_rate_hz == 16000);
  CHECK(resample(make_clip(std::vector<double>(1000, 0.0), 22050), 16000).samples.size() ==
        std::size_t(std::llround(1000.0 * 16000 / 22050)));
}

TEST_CASE("resample preserves constants in the interior") {
  for (auto [src, dst] : {std::pair{44100, 16000}, std::pair{8000, 16000}, std::pair{48000, 16000}}) {
    const auto out = resample(make_clip(std::vector<double>(src / 2, 0.25), src), dst);
    const std::size_t guard = 64;
    for (std::size_t i = guard; i + guard < out.samples.size(); ++i) REQUIRE(std::abs(out.samples[i] - 0.25) < 1e-6);
  }
}

TEST_CASE("resampled 440 Hz sine peaks at 440 Hz") {
  const int src = 44100, dst = 16000;
  std::vector<double> s(src);
  for (int i = 0; i < src; ++i) s[std::size_t(i)] = 0.5 * std::sin(2.0 * std::numbers::pi * 440.0 * i / src);
  const auto out = resample(make_clip(s, src), dst);
  // Naive DFT magnitude scan around the expected bin, 1 Hz resolution.
  const std::size_t n = out.samples.size();
  double best_f = 0, best = -1;
  for (int f = 300; f <= 600; ++f) {
    std::complex<double> acc = 0;
    for (std::size_t t = 0; t < n; ++t)
      acc += out.samples[t] * std::polar(1.0, -2.0 * std::numbers::pi * f * double(t) / dst);
    if (std::abs(acc) > best) best = std::abs(acc), best_f = f;
  }
  CHECK(std::abs(best_f - 440.0) <= double(dst) / double(n));
}

TEST_CASE("resample removes content above the new Nyquist") {
  const int src = 44100;
  std::vector<double> s(src);
  for (int i = 0; i < src; ++i) s[std::size_t(i)] = std::sin(2.0 * std::numbers::pi * 12000.0 * i / src);
  const auto out = resample(make_clip(s, src), 16000);
  double energy = 0;
  for (std::size_t i = 200; i + 200 < out.samples.size(); ++i) energy += out.samples[i] * out.samples[i];
  CHECK(energy / double(out.samples.size()) < 1e-4);
}

TEST_CASE("resample is idempotent at the target rate") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> s(5000);
  for (auto& v : s) v = u(rng);
  const auto once = resample(make_clip(s, 44100), 16000);
  const auto twice = resample(once, 16000);
  REQUIRE(once.samples.size() == twice.samples.size());
  for (std::size_t i = 0; i < once.samples.size(); ++i) CHECK(std::abs(once.samples[i] - twice.samples[i]) <= 1e-6);
}

TEST_CASE("segment counts and exact fit") {
  CHECK(segment(make_clip(std::vector<double>(115200, 0.1), 16000)).size() == 2);
  std::vector<double> s(57600);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = double(i) / 57600.0;
  const auto segs = segment(make_clip(s, 16000));
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].samples == s);
  CHECK_THROWS_AS(segment(make_clip({}, 16000)), Error);
}

TEST_CASE("segment tiles the remainder cyclically") {
  std::vector<double> s(60000);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = double(i);
  const auto segs = segment(make_clip(s, 16000));
  REQUIRE(segs.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(segs[k].samples == reference_tiler(s, 57600, k));
    CHECK(segs[k].index == k);
  }
  CHECK(segs[1].samples[0] == 57600.0);
  CHECK(segs[1].samples[2400] == 57600.0);  // remainder of 2400 starts over
}

TEST_CASE("segment coverage reconstructs the clip") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t len = 100, n = 1 + rng() % 450;
    std::vector<double> s(n);
    for (auto& v : s) v = double(rng() % 1000);
    const auto segs = segment(make_clip(s, 16000), len);
    std::vector<double> joined;
    for (const auto& seg : segs) {
      REQUIRE(seg.samples.size() == len);
      joined.insert(joined.end(), seg.samples.begin(), seg.samples.end());
    }
    joined.resize(n);  // drop tile padding
    CHECK(joined == s);
  }
}

TEST_CASE("manifest parsing") {
  const auto entries = parse_manifest("path,label,fold\na.wav,1,0\r\nb.wav,negative,4\n", "/data");
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].path == std::filesystem::path("/data/a.wav"));
  CHECK(entries[0].label == Label::kPositive);
  CHECK(entries[0].fold == 0);
  CHECK(entries[1].label == Label::kNegative);
  CHECK(entries[1].fold == 4);

  CHECK_THROWS_AS(parse_manifest("path,label,fold\na.wav,2,0\n"), FormatError);
  CHECK_THROWS_AS(parse_manifest("path,label,fold\na.wav,1,5\n"), FormatError);
  CHECK_THROWS_AS(parse_manifest("path,label,fold\na.wav,1,0\na.wav,0,1\n"), FormatError);
  CHECK_THROWS_AS(parse_manifest("file,y,k\na.wav,1,0\n"), FormatError);
  CHECK_THROWS_AS(parse_manifest("path,label,fold\na.wav,1\n"), FormatError);
}

TEST_CASE("manifest round trip and fold partition") {
  TempDir dir;
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < 10; ++i)
    entries.push_back({"f" + std::to_string(i) + ".wav", i % 2 ? Label::kPositive : Label::kNegative, i % 5});
  write_manifest(dir / "m.csv", entries);
  const auto back = load_manifest(dir / "m.csv");
  REQUIRE(back.size() == 10);
  for (int k = 0; k < 5; ++k)
    CHECK(std::count_if(back.begin(), back.end(), [k](const auto& e) { return e.fold == k; }) == 2);
  CHECK(back[3].path == dir.path() / "f3.wav");
}

TEST_CASE("write_wav16 round trip within quantization") {
  TempDir dir;
  std::vector<double> s = {0.0, 0.25, -0.5, 0.999, -1.0, 1.5};
  write_wav16(dir / "r.wav", s, 16000);
  const auto back = decode_wav(dir / "r.wav");
  REQUIRE(back.samples.size() == s.size());
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(back.samples[i] - std::clamp(s[i], -1.0, 1.0)) <= 1.0 / 32768);
}
