#include "coughfuse/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "coughfuse/error.hpp"

namespace coughfuse {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw InvalidArgument("config: bad value `" + text + "` for `" + key + "`");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "on" || text == "1") return true;
  if (text == "false" || text == "off" || text == "0") return false;
  throw InvalidArgument("config: bad boolean `" + text + "` for `" + key + "`");
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double TrainConfig::resolve_pos_weight(std::size_t n_pos, std::size_t n_neg) const {
  switch (pos_weight_mode) {
    case PosWeightMode::kFixed:
      return pos_weight;
    case PosWeightMode::kNegOverPos:
      if (n_pos == 0) throw InvalidArgument("training split has no positive samples");
      return double(n_neg) / double(n_pos);
    case PosWeightMode::kPosOverNeg:
      if (n_neg == 0) throw InvalidArgument("training split has no negative samples");
      return double(n_pos) / double(n_neg);
  }
  return 1.0;
}

std::string to_string(PosWeightMode mode, double fixed) {
  switch (mode) {
    case PosWeightMode::kNegOverPos:
      return "auto";
    case PosWeightMode::kPosOverNeg:
      return "pos_over_neg";
    case PosWeightMode::kFixed:
      return format_double(fixed);
  }
  return "auto";
}

void Config::set(const std::string& key, const std::string& value) {
  if (key == "sample_rate") sample_rate = parse_number<int>(key, value);
  else if (key == "segment_len") segment_len = parse_number<std::size_t>(key, value);
  else if (key == "stft_window") stft.window_len = parse_number<std::size_t>(key, value);
  else if (key == "stft_hop") stft.hop = parse_number<std::size_t>(key, value);
  else if (key == "mel_handcrafted") mel_bins.handcrafted = parse_number<std::size_t>(key, value);
  else if (key == "mel_image_slot") mel_bins.image_slot = parse_number<std::size_t>(key, value);
  else if (key == "mel_audio_slot") mel_bins.audio_slot = parse_number<std::size_t>(key, value);
  else if (key == "mfcc_coeffs") mfcc_coeffs = parse_number<std::size_t>(key, value);
  else if (key == "epochs") train.epochs = parse_number<int>(key, value);
  else if (key == "batch_size") train.batch_size = parse_number<int>(key, value);
  else if (key == "lr") train.schedule.base_lr = parse_number<double>(key, value);
  else if (key == "lr_decay") train.schedule.decay = parse_number<double>(key, value);
  else if (key == "lr_decay_every") train.schedule.decay_every = parse_number<int>(key, value);
  else if (key == "mixup") train.mixup.enabled = parse_bool(key, value);
  else if (key == "beta_shape") train.mixup.beta_shape = parse_number<double>(key, value);
  else if (key == "pos_weight") {
    if (value == "auto") {
      train.pos_weight_mode = PosWeightMode::kNegOverPos;
    } else if (value == "pos_over_neg") {
      train.pos_weight_mode = PosWeightMode::kPosOverNeg;
    } else {
      train.pos_weight_mode = PosWeightMode::kFixed;
      train.pos_weight = parse_number<double>(key, value);
    }
  } else if (key == "target_sensitivity") target_sensitivity = parse_number<double>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else throw InvalidArgument("config: unknown key `" + key + "`");
}

std::map<std::string, std::string> Config::to_map() const {
  return {
      {"sample_rate", std::to_string(sample_rate)},
      {"segment_len", std::to_string(segment_len)},
      {"stft_window", std::to_string(stft.window_len)},
      {"stft_hop", std::to_string(stft.hop)},
      {"mel_handcrafted", std::to_string(mel_bins.handcrafted)},
      {"mel_image_slot", std::to_string(mel_bins.image_slot)},
      {"mel_audio_slot", std::to_string(mel_bins.audio_slot)},
      {"mfcc_coeffs", std::to_string(mfcc_coeffs)},
      {"epochs", std::to_string(train.epochs)},
      {"batch_size", std::to_string(train.batch_size)},
      {"lr", format_double(train.schedule.base_lr)},
      {"lr_decay", format_double(train.schedule.decay)},
      {"lr_decay_every", std::to_string(train.schedule.decay_every)},
      {"mixup", train.mixup.enabled ? "true" : "false"},
      {"beta_shape", format_double(train.mixup.beta_shape)},
      {"pos_weight", to_string(train.pos_weight_mode, train.pos_weight)},
      {"target_sensitivity", format_double(target_sensitivity)},
      {"seed", std::to_string(seed)},
  };
}

std::string Config::to_text() const {
  std::ostringstream out;
  for (const auto& [k, v] : to_map()) out << k << " = " << v << '\n';
  return out.str();
}

void Config::validate() const {
  if (sample_rate <= 0) throw InvalidArgument("config: sample_rate must be positive");
  if (segment_len < stft.window_len) throw InvalidArgument("config: segment_len shorter than the STFT window");
  stft.validate();
  if (mel_bins.handcrafted != dsp::kHandcraftedMels)
    throw InvalidArgument("config: MFCCs are defined over 26 Mel bands");
  if (mel_bins.image_slot == 0 || mel_bins.audio_slot == 0) throw InvalidArgument("config: Mel bins must be positive");
  if (mfcc_coeffs == 0 || mfcc_coeffs > mel_bins.handcrafted) throw InvalidArgument("config: bad mfcc_coeffs");
  if (train.epochs < 0 || train.batch_size < 1) throw InvalidArgument("config: bad epochs/batch_size");
  if (!(train.schedule.base_lr > 0.0) || train.schedule.decay_every < 1)
    throw InvalidArgument("config: bad learning-rate schedule");
  if (!(train.mixup.beta_shape > 0.0)) throw InvalidArgument("config: beta_shape must be positive");
  if (train.pos_weight_mode == PosWeightMode::kFixed && !(train.pos_weight > 0.0))
    throw InvalidArgument("config: pos_weight must be positive");
  if (!(target_sensitivity > 0.0 && target_sensitivity <= 1.0))
    throw InvalidArgument("config: target_sensitivity must lie in (0, 1]");
}

Config Config::parse(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument("config line " + std::to_string(line_no) + ": expected `key = value`");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

bool Config::operator==(const Config& o) const {
  return sample_rate == o.sample_rate && segment_len == o.segment_len && stft.window_len == o.stft.window_len &&
         stft.hop == o.stft.hop && mel_bins == o.mel_bins && mfcc_coeffs == o.mfcc_coeffs &&
         train.epochs == o.train.epochs && train.batch_size == o.train.batch_size &&
         train.schedule.base_lr == o.train.schedule.base_lr && train.schedule.decay == o.train.schedule.decay &&
         train.schedule.decay_every == o.train.schedule.decay_every &&
         train.mixup.enabled == o.train.mixup.enabled && train.mixup.beta_shape == o.train.mixup.beta_shape &&
         train.pos_weight_mode == o.train.pos_weight_mode &&
         (train.pos_weight_mode != PosWeightMode::kFixed || train.pos_weight == o.train.pos_weight) &&
         target_sensitivity == o.target_sensitivity && seed == o.seed;
}

}  // namespace coughfuse
