#pragma once

// Multi-model fusion over per-segment member outputs.
//
// An EmbeddingStack is one segment's member embeddings, [n_models x 256].
// For attention, the model axis plays the role of sequence positions and the
// 256 embedding units are channels, so one kernel-1 convolution is shared by
// all members.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "coughfuse/checkpoint.hpp"
#include "coughfuse/models.hpp"
#include "coughfuse/nnet.hpp"

namespace coughfuse::fusion {

using nn::Matrix;
using nn::Vector;
using EmbeddingStack = Matrix;

enum class Strategy {
  kFeatureMax,
  kFeatureAvg,
  kFeatureAttention,
  kDecisionMax,
  kDecisionAvg,
  kDecisionAttention,
};

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);
const std::vector<Strategy>& all_strategies();
/// Decision max/avg have nothing to train.
bool is_trainable(Strategy s);

void validate_stack(const EmbeddingStack& stack, Eigen::Index width = models::kEmbeddingDim);

/// Elementwise max over models; `argmax` (optional) receives the lowest
/// maximal model index per unit.
Vector max_pool_models(const EmbeddingStack& stack, std::vector<Eigen::Index>* argmax = nullptr);
Vector mean_pool_models(const EmbeddingStack& stack);

struct FeatureAttentionParams {
  Matrix conv_weight;  // [256 x 256], kernel-1 conv
  Vector conv_bias;    // [256]
  Vector out_weight;   // [256]
  double out_bias = 0.0;
};

struct DecisionAttentionParams {
  Vector value_weight;  // [256], kernel-1 conv to one channel
  double value_bias = 0.0;
  Vector gate_weight;   // [256], kernel-1 conv to one channel, then sigmoid
  double gate_bias = 0.0;
};

/// Per-channel convex weights w[m, c] = a[m, c] / sum_m' a[m', c] with
/// a = sigmoid(conv(stack)).
Matrix feature_attention_weights(const EmbeddingStack& stack, const FeatureAttentionParams& p);
/// sum_m w[m, c] * stack[m, c].
Vector feature_attention_fused(const EmbeddingStack& stack, const FeatureAttentionParams& p);

double feature_max(const EmbeddingStack& stack, const Vector& out_weight, double out_bias);
double feature_avg(const EmbeddingStack& stack, const Vector& out_weight, double out_bias);
double feature_attention(const EmbeddingStack& stack, const FeatureAttentionParams& p);

double decision_max(std::span<const double> probs);
double decision_avg(std::span<const double> probs);

/// Per-model weights u_m / sum u with u_m = sigmoid(gate(stack[m])).
Vector decision_attention_weights(const EmbeddingStack& stack, const DecisionAttentionParams& p);
/// The fused logit s = sum_m w_m * value(stack[m]).
double decision_attention_logit(const EmbeddingStack& stack, const DecisionAttentionParams& p);
/// sigma(s).
double decision_attention(const EmbeddingStack& stack, const DecisionAttentionParams& p);

/// Flat fusion input: each row is one segment, holding the n_models x 256
/// stack (model-major: element (m, c) at m * 256 + c) followed by the
/// n_models member logits.
struct FusionBatch {
  std::vector<EmbeddingStack> stacks;
  Matrix member_logits;  // [batch x n_models]
};

Matrix pack_rows(std::span<const EmbeddingStack> stacks, const Matrix& member_logits);
FusionBatch unpack_rows(const Matrix& rows, Eigen::Index n_models);

/// A trainable fusion head for one strategy. Consumes packed rows.
class FusionHead : public nn::Trainable {
 public:
  FusionHead() = default;
  FusionHead(Strategy strategy, Eigen::Index n_models, std::uint64_t seed);

  Strategy strategy() const { return strategy_; }
  Eigen::Index n_models() const { return n_models_; }

  /// Logits for trainable strategies. Decision max/avg return the logit of
  /// the fused probability.
  Vector forward_logits(const Matrix& rows) override;
  Matrix backward_logits(const Vector& dlogits, bool need_input_grad) override;
  std::vector<nn::Parameter*> parameters() override;

  /// Stateless; returns fused probabilities.
  std::vector<double> predict(const Matrix& rows) const;

  FeatureAttentionParams feature_attention_params() const;
  DecisionAttentionParams decision_attention_params() const;

  std::vector<NamedTensor> tensors() const;
  void load_tensors(const Checkpoint& ck);

 private:
  Vector logits_for(const FusionBatch& batch) const;

  Strategy strategy_ = Strategy::kFeatureAvg;
  Eigen::Index n_models_ = 0;
  nn::Parameter out_weight_, out_bias_;    // feature level: linear 256 -> 1
  nn::Parameter attn_weight_, attn_bias_;  // feature attention conv 256 -> 256
  nn::Parameter value_weight_, value_bias_, gate_weight_, gate_bias_;  // decision attention
  FusionBatch cache_;
  std::vector<std::vector<Eigen::Index>> argmax_cache_;
};

/// Member embeddings and logits for a batch of per-member input rows
/// (inputs[m] is the row matrix for member m).
Matrix member_rows(std::span<const models::Model> members, std::span<const Matrix> inputs);

/// Fusion checkpoint: strategy, member specs with content hashes, and head
/// parameters.
struct FusionCheckpointInfo {
  Strategy strategy;
  std::vector<std::filesystem::path> member_paths;
  std::vector<std::string> member_hashes;
};

void save_fusion(const std::filesystem::path& path, const FusionHead& head, const FusionCheckpointInfo& info);

struct LoadedFusion {
  FusionHead head;
  FusionCheckpointInfo info;
  std::vector<models::Model> members;
};

/// Loads members from the recorded paths (resolved relative to the fusion
/// checkpoint's directory) and rejects any whose content hash changed.
LoadedFusion load_fusion(const std::filesystem::path& path);
bool is_fusion_checkpoint(const Checkpoint& ck);

}  // namespace coughfuse::fusion
