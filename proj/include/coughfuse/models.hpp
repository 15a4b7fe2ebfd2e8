#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "coughfuse/checkpoint.hpp"
#include "coughfuse/nnet.hpp"

namespace coughfuse::models {

using nn::Matrix;
using nn::Vector;

inline constexpr Eigen::Index kHiddenDim = 1024;
inline constexpr Eigen::Index kEmbeddingDim = 256;

enum class ModelKind { kHandcraftedDnn, kSpecCnnA, kSpecCnnB };

/// Hand-crafted feature sets the DNN can consume.
enum class FeatureSet { kLogMel, kMfcc };

std::string to_string(ModelKind kind);
std::string to_string(FeatureSet features);
ModelKind model_kind_from_string(const std::string& s);
FeatureSet feature_set_from_string(const std::string& s);

struct ModelSpec {
  ModelKind kind = ModelKind::kHandcraftedDnn;
  FeatureSet features = FeatureSet::kLogMel;  // handcrafted_dnn only
  std::size_t input_dim = 0;                  // handcrafted_dnn: feature length
  std::size_t n_mels = 0;                     // spectrogram backbones
  std::size_t conv1_channels = 32;
  std::size_t conv2_channels = 64;

  /// DNN over `n_llds x n_functionals` functionals of the chosen LLD set.
  static ModelSpec handcrafted(FeatureSet features, std::size_t n_functionals = 20);
  /// spec_cnn_a takes 128 Mel bands (image-model slot), spec_cnn_b 64 (audio-model slot).
  static ModelSpec spectrogram(ModelKind kind);

  bool is_spectrogram() const { return kind != ModelKind::kHandcraftedDnn; }
  /// Label used in reports, e.g. "handcrafted_dnn:logmel".
  std::string label() const;

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);

  bool operator==(const ModelSpec&) const = default;
};

struct ModelOutput {
  Vector logits;      // [batch]
  Matrix embeddings;  // [batch x 256], post-ReLU output of the second linear layer
};

/// linear(in -> 1024) -> ReLU -> linear(1024 -> 256) -> ReLU -> linear(256 -> 1).
class ClassifierHead {
 public:
  ClassifierHead() = default;
  explicit ClassifierHead(Eigen::Index in_features);

  ModelOutput forward(const Matrix& x);
  ModelOutput apply(const Matrix& x) const;
  Matrix backward(const Vector& dlogits);

  void init(nn::Rng& rng);
  std::vector<nn::Parameter*> parameters();

  nn::Linear linear1, linear2, linear3;

 private:
  nn::Relu relu1_, relu2_;
};

/// Per-feature affine standardization fitted on training data; not trained.
struct Normalizer {
  Vector mean;
  Vector stddev;
};

/// One of the three single-model classifiers. Inputs are flat rows:
///   handcrafted_dnn: the feature vector;
///   spectrogram kinds: an n_mels x n_frames log-Mel stored frame-major
///   (element (m, t) at index t * n_mels + m). n_frames may vary.
class Model : public nn::Trainable {
 public:
  Model() = default;
  Model(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }

  ModelOutput forward(const Matrix& rows);
  /// Stateless inference; safe to call concurrently on a shared model.
  ModelOutput infer(const Matrix& rows) const;

  nn::Vector forward_logits(const Matrix& rows) override { return forward(rows).logits; }
  Matrix backward_logits(const Vector& dlogits, bool need_input_grad) override;
  std::vector<nn::Parameter*> parameters() override;

  /// Standardizes each input feature (DNN) or each Mel band (CNNs) using
  /// statistics of `rows`.
  void fit_normalizer(const Matrix& rows);
  const Normalizer& normalizer() const { return normalizer_; }

  std::vector<NamedTensor> tensors() const;
  nlohmann::json header() const;
  void save(const std::filesystem::path& path) const;
  static Model from_checkpoint(const Checkpoint& ck);
  static Model load(const std::filesystem::path& path);

  std::size_t parameter_count();

 private:
  Matrix normalize(const Matrix& rows) const;
  nn::Sequence to_sequence(const Matrix& normalized) const;
  Matrix unnormalize_grad(const Matrix& grad) const;

  ModelSpec spec_;
  Normalizer normalizer_;
  nn::Conv1dK3 conv1_, conv2_;
  nn::Relu relu1_, relu2_;
  nn::MaxPool2 pool1_, pool2_;
  nn::GlobalAvgMaxPool global_pool_;
  ClassifierHead head_;
  Eigen::Index cached_frames_ = 0;
};

/// sigma(logit).
double predict_segment_prob(double logit);
std::vector<double> predict_segment_probs(const Model& model, const Matrix& rows);

}  // namespace coughfuse::models
