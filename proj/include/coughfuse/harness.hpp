#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coughfuse/audio_io.hpp"
#include "coughfuse/config.hpp"
#include "coughfuse/fusion.hpp"
#include "coughfuse/metrics.hpp"
#include "coughfuse/models.hpp"

namespace coughfuse::harness {

using nn::Matrix;
using nn::Vector;

/// Model input representations derived from a segment.
enum class InputKind {
  kLogMelFunctionals,  // 26 log-Mel LLDs x functionals
  kMfccFunctionals,    // 14 MFCC LLDs x functionals
  kMelImageSlot,       // 128-band log-Mel, frame-major
  kMelAudioSlot,       // 64-band log-Mel, frame-major
};

std::string to_string(InputKind kind);
InputKind input_kind_for(const models::ModelSpec& spec);

/// Turns segments into model input rows. Filterbanks are built once and
/// shared; extraction is const and thread-safe.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(const Config& cfg);

  /// One row per segment.
  Matrix extract(const std::vector<Segment>& segments, InputKind kind) const;
  /// All requested kinds from a single STFT per segment.
  std::map<InputKind, Matrix> extract_all(const std::vector<Segment>& segments,
                                          const std::vector<InputKind>& kinds) const;
  dsp::FeatureVector handcrafted(std::span<const double> samples, models::FeatureSet set) const;
  /// Layout names for a kind's rows (functional names, or mel<b>_t<t>).
  std::vector<std::string> column_names(InputKind kind) const;

  const Config& config() const { return cfg_; }

 private:
  Config cfg_;
  dsp::LogMelExtractor mel26_, mel_image_, mel_audio_;
};

struct FileRecord {
  std::filesystem::path path;
  int label = 0;
  int fold = 0;
};

/// Manifest files with their extracted inputs cached per kind.
class Corpus {
 public:
  Corpus(std::vector<ManifestEntry> entries, const Config& cfg);

  /// Decodes every file once and extracts the kinds not already cached.
  void prepare(const std::vector<InputKind>& kinds);

  std::size_t size() const { return files_.size(); }
  const std::vector<FileRecord>& files() const { return files_; }
  const FeatureExtractor& extractor() const { return extractor_; }
  /// [n_segments x dim] for one file.
  const Matrix& inputs(std::size_t file, InputKind kind) const;
  std::size_t segment_count(std::size_t file) const;

  struct Rows {
    Matrix rows;
    Vector targets;
    std::vector<std::size_t> owner;  // file index of each row
  };
  /// Stacks the segments of `files` (in that order).
  Rows gather(const std::vector<std::size_t>& files, InputKind kind) const;

  std::vector<std::size_t> fold_files(int fold) const;
  std::vector<std::size_t> all_files_except(int fold) const;
  std::vector<std::size_t> all_files() const;

 private:
  std::vector<FileRecord> files_;
  FeatureExtractor extractor_;
  std::vector<std::map<InputKind, Matrix>> cache_;
};

struct TrainLog {
  std::vector<double> epoch_loss;
  double pos_weight = 1.0;
};

/// Mini-batch training with the configured recipe: seeded shuffle per epoch,
/// each batch extended by mixup copies (partner drawn from the rest of the
/// batch), weighted BCE with logits, Adam under the step schedule.
TrainLog train(nn::Trainable& model, const Matrix& rows, const Vector& targets, const TrainConfig& cfg,
               std::uint64_t seed);

/// Stable seed derivation for independent random streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// A single model (one member, no strategy) or a fusion over members.
struct ExperimentSpec {
  std::vector<models::ModelSpec> members;
  std::optional<fusion::Strategy> strategy;
  std::vector<std::string> member_hashes;  // echoed into results, may be empty

  bool is_fusion() const { return strategy.has_value(); }
  std::vector<InputKind> input_kinds() const;
  std::string label() const;
  nlohmann::json to_json() const;
  void validate() const;

  static ExperimentSpec single(models::ModelSpec spec);
  static ExperimentSpec fused(fusion::Strategy strategy, std::vector<models::ModelSpec> members);
};

struct TrainedExperiment {
  ExperimentSpec spec;
  std::vector<models::Model> members;
  std::optional<fusion::FusionHead> head;
  std::vector<TrainLog> member_logs;
  std::optional<TrainLog> head_log;
};

/// Trains every member on `files`, then the fusion head (if any) on the
/// frozen members' outputs for the same files.
TrainedExperiment train_experiment(const Corpus& corpus, const std::vector<std::size_t>& files,
                                   const ExperimentSpec& spec, const Config& cfg, std::uint64_t seed);

/// Fits a fusion head on frozen, already trained members.
fusion::FusionHead train_fusion(fusion::Strategy strategy, const std::vector<models::Model>& members,
                                const Corpus& corpus, const std::vector<std::size_t>& files, const Config& cfg,
                                std::uint64_t seed, TrainLog* log = nullptr);

/// Per-file scores (mean segment probability). `member` selects a single
/// member's own prediction; otherwise the full experiment is scored.
std::vector<double> score_files(const TrainedExperiment& trained, const Corpus& corpus,
                                const std::vector<std::size_t>& files, std::optional<std::size_t> member = {});

struct FileScore {
  std::string file;
  int label = 0;
  double score = 0.0;
};

struct FoldResult {
  int fold = 0;
  std::vector<FileScore> scores;
  metrics::MetricsReport metrics;
  std::vector<metrics::MetricsReport> member_metrics;  // fusion runs only
};

struct CrossvalResult {
  std::vector<FoldResult> folds;
  std::map<std::string, metrics::MeanStd> aggregate;  // sensitivity, specificity, auc, threshold
  std::vector<std::map<std::string, metrics::MeanStd>> member_aggregate;
};

/// Five-fold cross-validation: fold k trains on the other folds with seed
/// `seed + k` and is evaluated on fold k. Folds run on up to `jobs` threads;
/// results are ordered by fold index.
CrossvalResult run_crossval(const Corpus& corpus, const ExperimentSpec& spec, const Config& cfg,
                            std::uint64_t seed, int jobs = 1);

/// Trains on the whole manifest.
TrainedExperiment run_final_train(const Corpus& corpus, const ExperimentSpec& spec, const Config& cfg,
                                  std::uint64_t seed);

/// results.json body without the `meta` block.
nlohmann::json results_to_json(const CrossvalResult& result, const ExperimentSpec& spec, const Config& cfg,
                               const std::string& version);
void write_scores_csv(const std::filesystem::path& path, const CrossvalResult& result);

/// Build version string (git describe at configure time).
std::string version_string();

}  // namespace coughfuse::harness
