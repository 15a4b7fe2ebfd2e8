#include <algorithm>
#include <set>

#include "coughfuse/error.hpp"
#include "coughfuse/harness.hpp"
#include "coughfuse/synth.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace coughfuse;
using harness::ExperimentSpec;
using models::ModelKind;
using models::ModelSpec;

namespace {

/// 25 short clips at 16 kHz: five folds of one positive and four negatives.
struct SmallCorpus {
  testutil::TempDir dir;
  Config cfg;
  harness::Corpus corpus;

  SmallCorpus() : corpus(make()) { }

  harness::Corpus make() {
    synth::SynthSpec s;
    s.n_files = 25;
    s.imbalance = 4;
    s.sample_rate = 16000;
    s.min_duration_s = 0.4;
    s.max_duration_s = 0.8;
    synth::write_corpus(s, dir.path());
    cfg.train.epochs = 2;
    return harness::Corpus(load_manifest(dir / "manifest.csv"), cfg);
  }
};

SmallCorpus& shared() {
  static SmallCorpus c;
  return c;
}

}  // namespace

TEST_CASE("corpus inputs have the expected widths") {
  auto& c = shared();
  c.corpus.prepare({harness::InputKind::kLogMelFunctionals, harness::InputKind::kMfccFunctionals,
                    harness::InputKind::kMelAudioSlot});
  CHECK(c.corpus.size() == 25);
  CHECK(c.corpus.inputs(0, harness::InputKind::kLogMelFunctionals).cols() == 26 * 20);
  CHECK(c.corpus.inputs(0, harness::InputKind::kMfccFunctionals).cols() == 14 * 20);
  CHECK(c.corpus.inputs(0, harness::InputKind::kMelAudioSlot).cols() == 64 * 224);
  CHECK(c.corpus.segment_count(0) == 1);
  const auto names = c.corpus.extractor().column_names(harness::InputKind::kMelAudioSlot);
  CHECK(names[1] == "mel1_t0");
}

TEST_CASE("fold partition covers every file once") {
  auto& c = shared();
  std::multiset<std::size_t> seen;
  for (int k = 0; k < 5; ++k) {
    const auto val = c.corpus.fold_files(k), train = c.corpus.all_files_except(k);
    CHECK(val.size() + train.size() == 25);
    for (auto f : val) {
      seen.insert(f);
      CHECK(std::find(train.begin(), train.end(), f) == train.end());
    }
  }
  CHECK(seen.size() == 25);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 25);
}

TEST_CASE("crossval scores every file and is deterministic") {
  auto& c = shared();
  const auto spec = ExperimentSpec::single(ModelSpec::handcrafted(models::FeatureSet::kMfcc));
  const auto a = harness::run_crossval(c.corpus, spec, c.cfg, 7);
  REQUIRE(a.folds.size() == 5);
  std::set<std::string> files;
  for (const auto& f : a.folds) {
    CHECK(f.scores.size() == 5);
    for (const auto& s : f.scores) {
      files.insert(s.file);
      CHECK(s.score >= 0.0);
      CHECK(s.score <= 1.0);
    }
  }
  CHECK(files.size() == 25);
  CHECK(a.aggregate.count("auc") == 1);

  const auto b = harness::run_crossval(c.corpus, spec, c.cfg, 7, 2);
  const auto ja = harness::results_to_json(a, spec, c.cfg, "v").dump();
  CHECK(ja == harness::results_to_json(b, spec, c.cfg, "v").dump());
  const auto other = harness::run_crossval(c.corpus, spec, c.cfg, 8);
  CHECK(ja != harness::results_to_json(other, spec, c.cfg, "v").dump());
}

TEST_CASE("fusion crossval reports members and echoes hashes") {
  auto& c = shared();
  Config cfg = c.cfg;
  cfg.train.epochs = 1;
  auto spec = ExperimentSpec::fused(fusion::Strategy::kDecisionAvg,
                                    {ModelSpec::handcrafted(models::FeatureSet::kLogMel),
                                     ModelSpec::spectrogram(ModelKind::kSpecCnnB)});
  spec.member_hashes = {"aaaa", "bbbb"};
  const auto r = harness::run_crossval(c.corpus, spec, cfg, 1);
  CHECK(r.folds[0].member_metrics.size() == 2);
  CHECK(r.member_aggregate.size() == 2);
  const auto j = harness::results_to_json(r, spec, cfg, "v");
  CHECK(j["config"]["member_hashes"][1] == "bbbb");
  CHECK(j["folds"].size() == 5);
  CHECK(j["members"].size() == 2);
}

TEST_CASE("experiment specs are validated") {
  CHECK_THROWS_AS(ExperimentSpec::fused(fusion::Strategy::kFeatureAvg, {ModelSpec::spectrogram(ModelKind::kSpecCnnA)}).validate(),
                  InvalidArgument);
  CHECK_THROWS_AS(ExperimentSpec::fused(fusion::Strategy::kFeatureAvg, {ModelSpec::spectrogram(ModelKind::kSpecCnnA),
                                                                        ModelSpec::spectrogram(ModelKind::kSpecCnnA)})
                      .validate(),
                  InvalidArgument);
  CHECK_NOTHROW(ExperimentSpec::single(ModelSpec::spectrogram(ModelKind::kSpecCnnB)).validate());
}

TEST_CASE("training is seeded and reduces the loss on a learnable task") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  nn::Matrix x(64, 6);
  nn::Vector y(64);
  for (Eigen::Index i = 0; i < 64; ++i) {
    y(i) = i % 4 == 0;
    for (Eigen::Index j = 0; j < 6; ++j) x(i, j) = g(rng) + (y(i) ? 1.5 : 0.0);
  }
  ModelSpec spec;
  spec.input_dim = 6;
  TrainConfig cfg;
  cfg.epochs = 10;
  models::Model a(spec, 1), b(spec, 1);
  const auto la = harness::train(a, x, y, cfg, 5);
  const auto lb = harness::train(b, x, y, cfg, 5);
  CHECK(la.epoch_loss == lb.epoch_loss);
  CHECK(la.pos_weight == 3.0);
  CHECK(la.epoch_loss.back() < la.epoch_loss.front());
  CHECK(a.infer(x).logits == b.infer(x).logits);
}

TEST_CASE("derived seeds are distinct and stable") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 100; ++s) seen.insert(harness::derive_seed(0, s));
  CHECK(seen.size() == 100);
  CHECK(harness::derive_seed(5, 3) == harness::derive_seed(5, 3));
}

TEST_CASE("scores csv has one line per file") {
  auto& c = shared();
  Config cfg = c.cfg;
  cfg.train.epochs = 1;
  const auto r = harness::run_crossval(c.corpus, ExperimentSpec::single(ModelSpec::handcrafted(models::FeatureSet::kLogMel)),
                                       cfg, 2);
  testutil::TempDir out;
  harness::write_scores_csv(out / "s.csv", r);
  std::ifstream in(out / "s.csv");
  std::string line;
  int lines = 0;
  std::getline(in, line);
  CHECK(line == "file,label,score");
  while (std::getline(in, line)) lines++;
  CHECK(lines == 25);
}
