#include "coughfuse/harness.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <numeric>
#include <set>

#include "coughfuse/error.hpp"

#ifndef COUGHFUSE_VERSION
#define COUGHFUSE_VERSION "unknown"
#endif

namespace coughfuse::harness {

namespace {

Eigen::RowVectorXd flatten_frame_major(const Matrix& m) {
  return Eigen::Map<const Eigen::RowVectorXd>(m.data(), m.size());
}

std::vector<std::string> lld_names(const std::string& prefix, std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back(prefix + std::to_string(i));
  return names;
}

nlohmann::json report_json(const metrics::MetricsReport& r) {
  return {{"sensitivity", r.sensitivity},
          {"specificity", r.specificity},
          {"auc", r.auc},
          {"threshold", r.threshold},
          {"target_met", r.target_met}};
}

std::map<std::string, metrics::MeanStd> aggregate_reports(const std::vector<metrics::MetricsReport>& reports) {
  std::vector<double> sens, spec, auc, thr;
  for (const auto& r : reports) {
    sens.push_back(r.sensitivity);
    spec.push_back(r.specificity);
    auc.push_back(r.auc);
    thr.push_back(r.threshold);
  }
  return {{"sensitivity", metrics::mean_std(sens)},
          {"specificity", metrics::mean_std(spec)},
          {"auc", metrics::mean_std(auc)},
          {"threshold", metrics::mean_std(thr)}};
}

nlohmann::json aggregate_json(const std::map<std::string, metrics::MeanStd>& agg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : agg) j[k] = {{"mean", v.mean}, {"std", v.std}};
  return j;
}

std::vector<int> labels_of(const Corpus& corpus, const std::vector<std::size_t>& files) {
  std::vector<int> labels;
  for (auto f : files) labels.push_back(corpus.files()[f].label);
  return labels;
}

void require_both_classes(const Corpus& corpus, const std::vector<std::size_t>& files, const std::string& what) {
  const auto labels = labels_of(corpus, files);
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size()))
    throw InvalidArgument(what + " must contain both classes");
}

}  // namespace

std::string to_string(InputKind kind) {
  switch (kind) {
    case InputKind::kLogMelFunctionals:
      return "logmel_functionals";
    case InputKind::kMfccFunctionals:
      return "mfcc_functionals";
    case InputKind::kMelImageSlot:
      return "mel_image_slot";
    case InputKind::kMelAudioSlot:
      return "mel_audio_slot";
  }
  return "unknown";
}

InputKind input_kind_for(const models::ModelSpec& spec) {
  switch (spec.kind) {
    case models::ModelKind::kHandcraftedDnn:
      return spec.features == models::FeatureSet::kLogMel ? InputKind::kLogMelFunctionals
                                                          : InputKind::kMfccFunctionals;
    case models::ModelKind::kSpecCnnA:
      return InputKind::kMelImageSlot;
    case models::ModelKind::kSpecCnnB:
      return InputKind::kMelAudioSlot;
  }
  throw InvalidArgument("unknown model kind");
}

// FeatureExtractor

FeatureExtractor::FeatureExtractor(const Config& cfg)
    : cfg_(cfg),
      mel26_(cfg.mel_bins.handcrafted, cfg.sample_rate, cfg.stft),
      mel_image_(cfg.mel_bins.image_slot, cfg.sample_rate, cfg.stft),
      mel_audio_(cfg.mel_bins.audio_slot, cfg.sample_rate, cfg.stft) {}

dsp::FeatureVector FeatureExtractor::handcrafted(std::span<const double> samples, models::FeatureSet set) const {
  const auto logmel = mel26_(samples);
  if (set == models::FeatureSet::kLogMel)
    return dsp::apply_functionals(logmel.values, dsp::default_functionals(), lld_names("logmel", logmel.n_mels()));
  return dsp::apply_functionals(dsp::mfcc(logmel, cfg_.mfcc_coeffs), dsp::default_functionals(),
                                lld_names("mfcc", cfg_.mfcc_coeffs));
}

std::map<InputKind, Matrix> FeatureExtractor::extract_all(const std::vector<Segment>& segments,
                                                          const std::vector<InputKind>& kinds) const {
  std::map<InputKind, Matrix> out;
  const auto n = static_cast<Eigen::Index>(segments.size());
  const std::size_t nf = dsp::default_functionals().size();
  const std::size_t frames = cfg_.stft.num_frames(cfg_.segment_len);
  for (InputKind k : kinds) {
    switch (k) {
      case InputKind::kLogMelFunctionals:
        out[k].resize(n, Eigen::Index(cfg_.mel_bins.handcrafted * nf));
        break;
      case InputKind::kMfccFunctionals:
        out[k].resize(n, Eigen::Index(cfg_.mfcc_coeffs * nf));
        break;
      case InputKind::kMelImageSlot:
        out[k].resize(n, Eigen::Index(cfg_.mel_bins.image_slot * frames));
        break;
      case InputKind::kMelAudioSlot:
        out[k].resize(n, Eigen::Index(cfg_.mel_bins.audio_slot * frames));
        break;
    }
  }

  for (Eigen::Index s = 0; s < n; ++s) {
    const auto& seg = segments[std::size_t(s)].samples;
    if (seg.size() != cfg_.segment_len) throw ShapeError("segment length differs from the configured segment_len");
    const Matrix power = dsp::stft_power(seg, cfg_.stft);
    std::optional<dsp::LogMelSpectrogram> mel26;
    auto get26 = [&]() -> const dsp::LogMelSpectrogram& {
      if (!mel26) mel26 = mel26_.from_power(power);
      return *mel26;
    };
    for (auto& [k, m] : out) {
      switch (k) {
        case InputKind::kLogMelFunctionals: {
          const auto fv = dsp::apply_functionals(get26().values, dsp::default_functionals());
          m.row(s) = Eigen::Map<const Eigen::RowVectorXd>(fv.values.data(), Eigen::Index(fv.values.size()));
          break;
        }
        case InputKind::kMfccFunctionals: {
          const auto fv = dsp::apply_functionals(dsp::mfcc(get26(), cfg_.mfcc_coeffs), dsp::default_functionals());
          m.row(s) = Eigen::Map<const Eigen::RowVectorXd>(fv.values.data(), Eigen::Index(fv.values.size()));
          break;
        }
        case InputKind::kMelImageSlot:
          m.row(s) = flatten_frame_major(mel_image_.from_power(power).values);
          break;
        case InputKind::kMelAudioSlot:
          m.row(s) = flatten_frame_major(mel_audio_.from_power(power).values);
          break;
      }
    }
  }
  return out;
}

Matrix FeatureExtractor::extract(const std::vector<Segment>& segments, InputKind kind) const {
  return std::move(extract_all(segments, {kind}).at(kind));
}

std::vector<std::string> FeatureExtractor::column_names(InputKind kind) const {
  dsp::FeatureVector layout;
  layout.functionals = dsp::default_functionals();
  switch (kind) {
    case InputKind::kLogMelFunctionals:
      layout.lld_names = lld_names("logmel", cfg_.mel_bins.handcrafted);
      break;
    case InputKind::kMfccFunctionals:
      layout.lld_names = lld_names("mfcc", cfg_.mfcc_coeffs);
      break;
    case InputKind::kMelImageSlot:
    case InputKind::kMelAudioSlot: {
      const std::size_t mels = kind == InputKind::kMelImageSlot ? cfg_.mel_bins.image_slot : cfg_.mel_bins.audio_slot;
      std::vector<std::string> names;
      for (std::size_t t = 0; t < cfg_.stft.num_frames(cfg_.segment_len); ++t)
        for (std::size_t b = 0; b < mels; ++b) names.push_back("mel" + std::to_string(b) + "_t" + std::to_string(t));
      return names;
    }
  }
  layout.values.resize(layout.lld_names.size() * layout.functionals.size());
  return layout.layout_names();
}

// Corpus

Corpus::Corpus(std::vector<ManifestEntry> entries, const Config& cfg) : extractor_(cfg) {
  for (auto& e : entries) files_.push_back({e.path, static_cast<int>(e.label), e.fold});
  cache_.resize(files_.size());
}

void Corpus::prepare(const std::vector<InputKind>& kinds) {
  const auto& cfg = extractor_.config();
  for (std::size_t f = 0; f < files_.size(); ++f) {
    std::vector<InputKind> missing;
    for (InputKind k : kinds)
      if (!cache_[f].contains(k)) missing.push_back(k);
    if (missing.empty()) continue;
    const auto segments = load_segments(files_[f].path, cfg.sample_rate, cfg.segment_len);
    for (auto& [k, m] : extractor_.extract_all(segments, missing)) cache_[f][k] = std::move(m);
  }
}

const Matrix& Corpus::inputs(std::size_t file, InputKind kind) const {
  const auto it = cache_.at(file).find(kind);
  if (it == cache_[file].end())
    throw InvalidArgument("inputs `" + to_string(kind) + "` were not prepared for " + files_[file].path.string());
  return it->second;
}

std::size_t Corpus::segment_count(std::size_t file) const {
  if (cache_.at(file).empty()) throw InvalidArgument("file not prepared: " + files_[file].path.string());
  return static_cast<std::size_t>(cache_[file].begin()->second.rows());
}

Corpus::Rows Corpus::gather(const std::vector<std::size_t>& files, InputKind kind) const {
  Eigen::Index total = 0, dim = 0;
  for (auto f : files) {
    total += inputs(f, kind).rows();
    dim = inputs(f, kind).cols();
  }
  Rows out;
  out.rows.resize(total, dim);
  out.targets.resize(total);
  Eigen::Index r = 0;
  for (auto f : files) {
    const Matrix& m = inputs(f, kind);
    out.rows.middleRows(r, m.rows()) = m;
    out.targets.segment(r, m.rows()).setConstant(files_[f].label);
    out.owner.insert(out.owner.end(), std::size_t(m.rows()), f);
    r += m.rows();
  }
  return out;
}

std::vector<std::size_t> Corpus::fold_files(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < files_.size(); ++i)
    if (files_[i].fold == fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> Corpus::all_files_except(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < files_.size(); ++i)
    if (files_[i].fold != fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> Corpus::all_files() const {
  std::vector<std::size_t> out(files_.size());
  std::iota(out.begin(), out.end(), 0);
  return out;
}

// Training

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finalizer over a combined key
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

TrainLog train(nn::Trainable& model, const Matrix& rows, const Vector& targets, const TrainConfig& cfg,
               std::uint64_t seed) {
  const Eigen::Index n = rows.rows();
  if (n == 0) throw InvalidArgument("no training rows");
  if (targets.size() != n) throw ShapeError("one target per training row is required");
  std::size_t n_pos = 0;
  for (Eigen::Index i = 0; i < n; ++i) n_pos += targets(i) >= 0.5 ? 1 : 0;

  TrainLog log;
  log.pos_weight = cfg.resolve_pos_weight(n_pos, std::size_t(n) - n_pos);

  nn::Rng rng(seed);
  nn::Adam adam;
  const auto params = model.parameters();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.schedule.at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index b = std::min<Eigen::Index>(cfg.batch_size, n - start);
      const Eigen::Index extra = cfg.mixup.enabled ? b : 0;
      Matrix x(b + extra, rows.cols());
      Vector y(b + extra);
      for (Eigen::Index i = 0; i < b; ++i) {
        x.row(i) = rows.row(order[std::size_t(start + i)]);
        y(i) = targets(order[std::size_t(start + i)]);
      }
      for (Eigen::Index i = 0; i < extra; ++i) {
        Eigen::Index partner = i;
        if (b > 1) {
          partner = std::uniform_int_distribution<Eigen::Index>(0, b - 2)(rng);
          if (partner >= i) ++partner;
        }
        const auto mixed = nn::mixup(x.row(i).transpose(), y(i), x.row(partner).transpose(), y(partner), rng, cfg.mixup);
        x.row(b + i) = mixed.x.transpose();
        y(b + i) = mixed.y;
      }

      model.zero_grad();
      const Vector z = model.forward_logits(x);
      const auto loss = nn::bce_with_logits(z, y, log.pos_weight);
      model.backward_logits(loss.grad, false);
      adam.step(params, lr);
      loss_sum += loss.loss;
      ++batches;
    }
    log.epoch_loss.push_back(loss_sum / std::max(batches, 1));
  }
  return log;
}

// Experiments

ExperimentSpec ExperimentSpec::single(models::ModelSpec spec) { return {{spec}, std::nullopt, {}}; }

ExperimentSpec ExperimentSpec::fused(fusion::Strategy strategy, std::vector<models::ModelSpec> members) {
  return {std::move(members), strategy, {}};
}

void ExperimentSpec::validate() const {
  if (members.empty()) throw InvalidArgument("experiment has no models");
  if (!is_fusion()) {
    if (members.size() != 1) throw InvalidArgument("a single-model experiment takes exactly one model");
    return;
  }
  if (members.size() < 2) throw InvalidArgument("fusion needs at least two models");
  std::set<models::ModelKind> kinds;
  for (const auto& m : members)
    if (!kinds.insert(m.kind).second) throw InvalidArgument("fusion members must be of distinct kinds");
}

std::vector<InputKind> ExperimentSpec::input_kinds() const {
  std::vector<InputKind> kinds;
  for (const auto& m : members) {
    const auto k = input_kind_for(m);
    if (std::find(kinds.begin(), kinds.end(), k) == kinds.end()) kinds.push_back(k);
  }
  return kinds;
}

std::string ExperimentSpec::label() const {
  if (!is_fusion()) return members.front().label();
  return fusion::to_string(*strategy);
}

nlohmann::json ExperimentSpec::to_json() const {
  nlohmann::json j;
  j["type"] = is_fusion() ? "fusion" : "single";
  if (is_fusion()) j["strategy"] = fusion::to_string(*strategy);
  j["members"] = nlohmann::json::array();
  for (std::size_t i = 0; i < members.size(); ++i) {
    auto m = members[i].to_json();
    if (i < member_hashes.size()) m["hash"] = member_hashes[i];
    j["members"].push_back(m);
  }
  return j;
}

fusion::FusionHead train_fusion(fusion::Strategy strategy, const std::vector<models::Model>& members,
                                const Corpus& corpus, const std::vector<std::size_t>& files, const Config& cfg,
                                std::uint64_t seed, TrainLog* log) {
  if (members.size() < 2) throw InvalidArgument("fusion needs at least two models");
  std::vector<Matrix> inputs;
  Vector targets;
  for (const auto& m : members) {
    auto r = corpus.gather(files, input_kind_for(m.spec()));
    targets = r.targets;
    inputs.push_back(std::move(r.rows));
  }
  const Matrix rows = fusion::member_rows(members, inputs);
  fusion::FusionHead head(strategy, Eigen::Index(members.size()), derive_seed(seed, 0));
  if (fusion::is_trainable(strategy)) {
    auto trained_log = train(head, rows, targets, cfg.train, derive_seed(seed, 1));
    if (log) *log = std::move(trained_log);
  }
  return head;
}

TrainedExperiment train_experiment(const Corpus& corpus, const std::vector<std::size_t>& files,
                                   const ExperimentSpec& spec, const Config& cfg, std::uint64_t seed) {
  spec.validate();
  TrainedExperiment out;
  out.spec = spec;
  for (std::size_t m = 0; m < spec.members.size(); ++m) {
    models::Model model(spec.members[m], derive_seed(seed, 2 * m + 1));
    const auto rows = corpus.gather(files, input_kind_for(spec.members[m]));
    model.fit_normalizer(rows.rows);
    out.member_logs.push_back(train(model, rows.rows, rows.targets, cfg.train, derive_seed(seed, 2 * m + 2)));
    out.members.push_back(std::move(model));
  }
  if (spec.is_fusion()) {
    TrainLog log;
    out.head = train_fusion(*spec.strategy, out.members, corpus, files, cfg, derive_seed(seed, 1000), &log);
    if (fusion::is_trainable(*spec.strategy)) out.head_log = std::move(log);
  }
  return out;
}

std::vector<double> score_files(const TrainedExperiment& trained, const Corpus& corpus,
                                const std::vector<std::size_t>& files, std::optional<std::size_t> member) {
  std::vector<double> scores;
  scores.reserve(files.size());
  for (auto f : files) {
    std::vector<double> probs;
    if (member || !trained.head) {
      const auto& model = trained.members.at(member.value_or(0));
      probs = models::predict_segment_probs(model, corpus.inputs(f, input_kind_for(model.spec())));
    } else {
      std::vector<Matrix> inputs;
      for (const auto& m : trained.members) inputs.push_back(corpus.inputs(f, input_kind_for(m.spec())));
      probs = trained.head->predict(fusion::member_rows(trained.members, inputs));
    }
    scores.push_back(metrics::aggregate_file_score(probs));
  }
  return scores;
}

CrossvalResult run_crossval(const Corpus& corpus, const ExperimentSpec& spec, const Config& cfg, std::uint64_t seed,
                            int jobs) {
  spec.validate();
  for (int k = 0; k < kNumFolds; ++k) {
    const auto val = corpus.fold_files(k);
    if (val.empty()) throw InvalidArgument("fold " + std::to_string(k) + " is empty");
    require_both_classes(corpus, val, "validation fold " + std::to_string(k));
    require_both_classes(corpus, corpus.all_files_except(k), "training split for fold " + std::to_string(k));
  }

  auto run_fold = [&](int k) {
    const auto train_files = corpus.all_files_except(k);
    const auto val = corpus.fold_files(k);
    const auto trained = train_experiment(corpus, train_files, spec, cfg, seed + std::uint64_t(k));
    const auto labels = labels_of(corpus, val);

    FoldResult fr;
    fr.fold = k;
    const auto scores = score_files(trained, corpus, val);
    for (std::size_t i = 0; i < val.size(); ++i)
      fr.scores.push_back({corpus.files()[val[i]].path.generic_string(), labels[i], scores[i]});
    fr.metrics = metrics::evaluate(scores, labels, cfg.target_sensitivity);
    if (spec.is_fusion()) {
      for (std::size_t m = 0; m < trained.members.size(); ++m)
        fr.member_metrics.push_back(
            metrics::evaluate(score_files(trained, corpus, val, m), labels, cfg.target_sensitivity));
    }
    return fr;
  };

  CrossvalResult result;
  result.folds.resize(kNumFolds);
  if (jobs <= 1) {
    for (int k = 0; k < kNumFolds; ++k) result.folds[std::size_t(k)] = run_fold(k);
  } else {
    for (int first = 0; first < kNumFolds; first += jobs) {
      std::vector<std::future<FoldResult>> pending;
      for (int k = first; k < std::min(kNumFolds, first + jobs); ++k)
        pending.push_back(std::async(std::launch::async, run_fold, k));
      for (std::size_t i = 0; i < pending.size(); ++i) result.folds[std::size_t(first) + i] = pending[i].get();
    }
  }

  std::vector<metrics::MetricsReport> reports;
  for (const auto& fr : result.folds) reports.push_back(fr.metrics);
  result.aggregate = aggregate_reports(reports);
  if (spec.is_fusion()) {
    for (std::size_t m = 0; m < spec.members.size(); ++m) {
      std::vector<metrics::MetricsReport> member_reports;
      for (const auto& fr : result.folds) member_reports.push_back(fr.member_metrics[m]);
      result.member_aggregate.push_back(aggregate_reports(member_reports));
    }
  }
  return result;
}

TrainedExperiment run_final_train(const Corpus& corpus, const ExperimentSpec& spec, const Config& cfg,
                                  std::uint64_t seed) {
  const auto files = corpus.all_files();
  require_both_classes(corpus, files, "training manifest");
  return train_experiment(corpus, files, spec, cfg, seed);
}

nlohmann::json results_to_json(const CrossvalResult& result, const ExperimentSpec& spec, const Config& cfg,
                               const std::string& version) {
  nlohmann::json j;
  j["experiment"] = spec.to_json();
  j["folds"] = nlohmann::json::array();
  for (const auto& fr : result.folds) {
    auto f = report_json(fr.metrics);
    f["fold"] = fr.fold;
    f["n_files"] = fr.scores.size();
    j["folds"].push_back(f);
  }
  j["aggregate"] = aggregate_json(result.aggregate);
  if (spec.is_fusion()) {
    j["members"] = nlohmann::json::array();
    for (std::size_t m = 0; m < spec.members.size(); ++m) {
      nlohmann::json mj;
      mj["label"] = spec.members[m].label();
      mj["folds"] = nlohmann::json::array();
      for (const auto& fr : result.folds) mj["folds"].push_back(report_json(fr.member_metrics[m]));
      mj["aggregate"] = aggregate_json(result.member_aggregate[m]);
      j["members"].push_back(mj);
    }
  }
  nlohmann::json config;
  for (const auto& [k, v] : cfg.to_map()) config[k] = v;
  if (!spec.member_hashes.empty()) config["member_hashes"] = spec.member_hashes;
  config["version"] = version;
  j["config"] = config;
  return j;
}

void write_scores_csv(const std::filesystem::path& path, const CrossvalResult& result) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "file,label,score\n";
  out.precision(17);
  for (const auto& fr : result.folds)
    for (const auto& s : fr.scores) out << s.file << ',' << s.label << ',' << s.score << '\n';
}

std::string version_string() { return COUGHFUSE_VERSION; }

}  // namespace coughfuse::harness
