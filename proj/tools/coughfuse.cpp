// coughfuse command-line tool.
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "coughfuse/audio_io.hpp"
#include "coughfuse/checkpoint.hpp"
#include "coughfuse/config.hpp"
#include "coughfuse/error.hpp"
#include "coughfuse/fusion.hpp"
#include "coughfuse/harness.hpp"
#include "coughfuse/metrics.hpp"
#include "coughfuse/models.hpp"
#include "coughfuse/synth.hpp"

namespace fs = std::filesystem;
using namespace coughfuse;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::string out_dir = ".";
};

Config resolve_config(const Globals& g) {
  Config cfg = g.config_path.empty() ? Config{} : Config::load(g.config_path);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--set expects key=value, got `" + kv + "`");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

fs::path ensure_out(const Globals& g) {
  std::error_code ec;
  fs::create_directories(g.out_dir, ec);
  if (!fs::is_directory(g.out_dir)) throw IoError("cannot create output directory " + g.out_dir);
  return g.out_dir;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

/// `handcrafted_dnn[:logmel|:mfcc]`, `spec_cnn_a` or `spec_cnn_b`.
models::ModelSpec parse_model(const std::string& text, const std::string& default_features = "logmel") {
  const auto colon = text.find(':');
  const auto kind = models::model_kind_from_string(text.substr(0, colon));
  if (kind == models::ModelKind::kHandcraftedDnn) {
    const auto feats = colon == std::string::npos ? default_features : text.substr(colon + 1);
    return models::ModelSpec::handcrafted(models::feature_set_from_string(feats));
  }
  if (colon != std::string::npos) throw InvalidArgument("feature set only applies to handcrafted_dnn");
  return models::ModelSpec::spectrogram(kind);
}

harness::InputKind parse_input_kind(const std::string& s) {
  if (s == "logmel") return harness::InputKind::kLogMelFunctionals;
  if (s == "mfcc") return harness::InputKind::kMfccFunctionals;
  if (s == "mel_image") return harness::InputKind::kMelImageSlot;
  if (s == "mel_audio") return harness::InputKind::kMelAudioSlot;
  throw InvalidArgument("unknown feature kind `" + s + "` (logmel, mfcc, mel_image, mel_audio)");
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

harness::Corpus load_corpus(const std::string& manifest, const Config& cfg,
                            const std::vector<harness::InputKind>& kinds) {
  harness::Corpus corpus(load_manifest(manifest), cfg);
  corpus.prepare(kinds);
  return corpus;
}

double score_file(const fs::path& wav, const Config& cfg, const Checkpoint& ck, const fs::path& ck_path) {
  const harness::FeatureExtractor fx(cfg);
  const auto segments = load_segments(wav, cfg.sample_rate, cfg.segment_len);
  std::vector<double> probs;
  if (fusion::is_fusion_checkpoint(ck)) {
    const auto loaded = fusion::load_fusion(ck_path);
    std::vector<harness::Matrix> inputs;
    for (const auto& m : loaded.members) inputs.push_back(fx.extract(segments, harness::input_kind_for(m.spec())));
    probs = loaded.head.predict(fusion::member_rows(loaded.members, inputs));
  } else {
    const auto model = models::Model::from_checkpoint(ck);
    probs = models::predict_segment_probs(model, fx.extract(segments, harness::input_kind_for(model.spec())));
  }
  return metrics::aggregate_file_score(probs);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cough-audio screening: features, single models, fusion and cross-validation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Config file (key = value)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Random seed (overrides config)");
  app.add_option("--set", g.overrides, "Override one config key (key=value), repeatable");
  app.add_option("--out", g.out_dir, "Output directory")->capture_default_str();

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic two-class corpus with manifest.csv");
  synth::SynthSpec sspec;
  synth_cmd->add_option("--n-files", sspec.n_files)->capture_default_str();
  synth_cmd->add_option("--imbalance", sspec.imbalance, "Negatives per positive")->capture_default_str();
  synth_cmd->add_option("--sample-rate", sspec.sample_rate)->capture_default_str();
  synth_cmd->add_option("--min-duration", sspec.min_duration_s)->capture_default_str();
  synth_cmd->add_option("--max-duration", sspec.max_duration_s)->capture_default_str();
  std::pair<double, double> class0_band{sspec.class0_low_hz, sspec.class0_high_hz};
  std::pair<double, double> class1_band{sspec.class1_low_hz, sspec.class1_high_hz};
  std::pair<double, double> am_depth{sspec.am_depth_low, sspec.am_depth_high};
  std::pair<double, double> snr{sspec.snr_low_db, sspec.snr_high_db};
  synth_cmd->add_option("--class0-band", class0_band, "Class-0 burst center band, low high (Hz)")->capture_default_str();
  synth_cmd->add_option("--class1-band", class1_band, "Class-1 burst center band, low high (Hz)")->capture_default_str();
  synth_cmd->add_option("--am-depth", am_depth, "Class-1 AM depth range")->capture_default_str();
  synth_cmd->add_option("--snr", snr, "Background SNR range (dB)")->capture_default_str();

  // extract
  auto* extract_cmd = app.add_subcommand("extract", "Write per-segment features as CSV");
  std::string manifest;
  std::string kinds_text = "logmel,mfcc";
  std::string dump_dir;
  extract_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  extract_cmd->add_option("--kinds", kinds_text, "Comma list of logmel, mfcc, mel_image, mel_audio")
      ->capture_default_str();
  extract_cmd->add_option("--dump-segments", dump_dir, "Also write each 16 kHz segment as WAV");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one model on the whole manifest");
  std::string model_text, features = "logmel", name;
  train_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--model", model_text, "handcrafted_dnn, spec_cnn_a or spec_cnn_b")->required();
  train_cmd->add_option("--features", features, "logmel or mfcc (handcrafted_dnn)")->capture_default_str();
  train_cmd->add_option("--name", name, "Checkpoint file name (default <model>.ckpt)");

  // crossval
  auto* cv_cmd = app.add_subcommand("crossval", "Five-fold cross-validation");
  std::string strategy_text, members_text, fusion_path;
  int jobs = 1;
  cv_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  auto* cv_model = cv_cmd->add_option("--model", model_text, "Single model kind");
  cv_cmd->add_option("--features", features, "logmel or mfcc (handcrafted_dnn)")->capture_default_str();
  auto* cv_strategy = cv_cmd->add_option("--strategy", strategy_text, "Fusion strategy");
  cv_cmd->add_option("--members", members_text, "Comma list of member models, e.g. handcrafted_dnn:logmel,spec_cnn_a");
  auto* cv_fusion = cv_cmd->add_option("--fusion", fusion_path, "Fusion checkpoint defining strategy and members")
                        ->check(CLI::ExistingFile);
  cv_cmd->add_option("--jobs", jobs, "Folds trained in parallel")->capture_default_str();
  cv_model->excludes(cv_strategy)->excludes(cv_fusion);
  cv_strategy->excludes(cv_fusion);

  // fuse
  auto* fuse_cmd = app.add_subcommand("fuse", "Train a fusion head over three trained members");
  std::string member_ckpts;
  fuse_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("--strategy", strategy_text)->required();
  fuse_cmd->add_option("--members", member_ckpts, "Comma list of member checkpoints")->required();
  fuse_cmd->add_option("--name", name, "Checkpoint file name (default fusion_<strategy>.ckpt)");

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Score WAV files with a model or fusion checkpoint");
  std::string ckpt_path;
  std::vector<std::string> inputs;
  predict_cmd->add_option("--checkpoint", ckpt_path)->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--input", inputs, "WAV file(s)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: argument: " << e.what() << '\n';
    return 2;
  }

  try {
    const Config cfg = resolve_config(g);

    if (synth_cmd->parsed()) {
      sspec.seed = cfg.seed;
      std::tie(sspec.class0_low_hz, sspec.class0_high_hz) = class0_band;
      std::tie(sspec.class1_low_hz, sspec.class1_high_hz) = class1_band;
      std::tie(sspec.am_depth_low, sspec.am_depth_high) = am_depth;
      std::tie(sspec.snr_low_db, sspec.snr_high_db) = snr;
      const auto out = ensure_out(g);
      const auto entries = synth::write_corpus(sspec, out);
      std::cout << "wrote " << entries.size() << " files and " << (out / "manifest.csv").string() << '\n';
      return 0;
    }

    if (extract_cmd->parsed()) {
      const auto out = ensure_out(g);
      std::vector<harness::InputKind> kinds;
      std::vector<std::string> kind_names = split_list(kinds_text);
      for (const auto& k : kind_names) kinds.push_back(parse_input_kind(k));
      const harness::FeatureExtractor fx(cfg);
      std::vector<std::ofstream> files;
      for (std::size_t i = 0; i < kinds.size(); ++i) {
        files.emplace_back(out / ("features_" + kind_names[i] + ".csv"), std::ios::binary);
        if (!files.back()) throw IoError("cannot write features_" + kind_names[i] + ".csv");
        files.back() << "file,segment";
        for (const auto& c : fx.column_names(kinds[i])) files.back() << ',' << c;
        files.back() << '\n';
        files.back().precision(17);
      }
      if (!dump_dir.empty()) fs::create_directories(dump_dir);
      for (const auto& e : load_manifest(manifest)) {
        const auto segments = load_segments(e.path, cfg.sample_rate, cfg.segment_len);
        const auto all = fx.extract_all(segments, kinds);
        for (std::size_t i = 0; i < kinds.size(); ++i) {
          const auto& m = all.at(kinds[i]);
          for (Eigen::Index s = 0; s < m.rows(); ++s) {
            files[i] << e.path.generic_string() << ',' << s;
            for (Eigen::Index c = 0; c < m.cols(); ++c) files[i] << ',' << m(s, c);
            files[i] << '\n';
          }
        }
        if (!dump_dir.empty())
          for (const auto& seg : segments)
            write_wav16(fs::path(dump_dir) / (e.path.stem().string() + "_seg" + std::to_string(seg.index) + ".wav"),
                        seg.samples, cfg.sample_rate);
      }
      return 0;
    }

    if (train_cmd->parsed()) {
      const auto out = ensure_out(g);
      const auto spec = harness::ExperimentSpec::single(parse_model(model_text, features));
      const auto corpus = load_corpus(manifest, cfg, spec.input_kinds());
      const auto trained = harness::run_final_train(corpus, spec, cfg, cfg.seed);
      const fs::path path = out / (name.empty() ? model_text + ".ckpt" : name);
      trained.members.front().save(path);
      std::cout << path.string() << ',' << file_content_hash(path) << '\n';
      return 0;
    }

    if (cv_cmd->parsed()) {
      const auto out = ensure_out(g);
      harness::ExperimentSpec spec;
      if (!fusion_path.empty()) {
        const auto loaded = fusion::load_fusion(fusion_path);
        std::vector<models::ModelSpec> specs;
        for (const auto& m : loaded.members) specs.push_back(m.spec());
        spec = harness::ExperimentSpec::fused(loaded.info.strategy, specs);
        spec.member_hashes = loaded.info.member_hashes;
      } else if (!strategy_text.empty()) {
        std::vector<models::ModelSpec> specs;
        const auto names = members_text.empty()
                               ? std::vector<std::string>{"handcrafted_dnn:logmel", "spec_cnn_a", "spec_cnn_b"}
                               : split_list(members_text);
        for (const auto& m : names) specs.push_back(parse_model(m));
        spec = harness::ExperimentSpec::fused(fusion::strategy_from_string(strategy_text), specs);
      } else if (!model_text.empty()) {
        spec = harness::ExperimentSpec::single(parse_model(model_text, features));
      } else {
        throw InvalidArgument("crossval needs --model, --strategy or --fusion");
      }
      spec.validate();
      const auto corpus = load_corpus(manifest, cfg, spec.input_kinds());
      const auto result = harness::run_crossval(corpus, spec, cfg, cfg.seed, jobs);
      auto j = harness::results_to_json(result, spec, cfg, harness::version_string());
      j["meta"] = {{"timestamp", utc_timestamp()}, {"manifest", manifest}};
      write_text(out / "results.json", j.dump(2) + "\n");
      harness::write_scores_csv(out / "scores.csv", result);
      const auto& auc = result.aggregate.at("auc");
      std::printf("%s auc %.4f +- %.4f\n", spec.label().c_str(), auc.mean, auc.std);
      return 0;
    }

    if (fuse_cmd->parsed()) {
      const auto out = ensure_out(g);
      const auto strategy = fusion::strategy_from_string(strategy_text);
      const auto paths = split_list(member_ckpts);
      if (paths.size() != 3) throw InvalidArgument("fuse needs exactly three member checkpoints");
      std::vector<models::Model> members;
      harness::ExperimentSpec spec;
      spec.strategy = strategy;
      fusion::FusionCheckpointInfo info{strategy, {}, {}};
      const fs::path fused_path = out / (name.empty() ? "fusion_" + strategy_text + ".ckpt" : name);
      for (const auto& p : paths) {
        members.push_back(models::Model::load(p));
        spec.members.push_back(members.back().spec());
        info.member_paths.push_back(fs::relative(fs::absolute(p), fs::absolute(fused_path).parent_path()));
        info.member_hashes.push_back(file_content_hash(p));
      }
      spec.validate();
      const auto corpus = load_corpus(manifest, cfg, spec.input_kinds());
      const auto head = harness::train_fusion(strategy, members, corpus, corpus.all_files(), cfg, cfg.seed);
      fusion::save_fusion(fused_path, head, info);
      std::cout << fused_path.string() << ',' << file_content_hash(fused_path) << '\n';
      return 0;
    }

    if (predict_cmd->parsed()) {
      const auto ck = load_checkpoint(ckpt_path);
      for (const auto& in : inputs) std::printf("%s,%.6f\n", in.c_str(), score_file(in, cfg, ck, ckpt_path));
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
