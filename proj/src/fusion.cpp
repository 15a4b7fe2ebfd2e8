#include "coughfuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "coughfuse/error.hpp"

namespace coughfuse::fusion {

namespace {

constexpr const char* kFusionFormat = "coughfuse-fusion";
constexpr Eigen::Index kWidth = models::kEmbeddingDim;

double logit_of(double p) {
  const double clamped = std::clamp(p, 1e-15, 1.0 - 1e-15);
  return std::log(clamped / (1.0 - clamped));
}

std::vector<double> flatten(const Matrix& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[i++] = m(r, c);
  return out;
}

void unflatten(const std::vector<double>& v, Matrix& m) {
  if (v.size() != static_cast<std::size_t>(m.size())) throw FormatError("fusion checkpoint: tensor size mismatch");
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = v[i++];
}

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kFeatureMax:
      return "feature_max";
    case Strategy::kFeatureAvg:
      return "feature_avg";
    case Strategy::kFeatureAttention:
      return "feature_attention";
    case Strategy::kDecisionMax:
      return "decision_max";
    case Strategy::kDecisionAvg:
      return "decision_avg";
    case Strategy::kDecisionAttention:
      return "decision_attention";
  }
  return "unknown";
}

const std::vector<Strategy>& all_strategies() {
  static const std::vector<Strategy> all = {Strategy::kFeatureMax,  Strategy::kFeatureAvg,
                                            Strategy::kFeatureAttention, Strategy::kDecisionMax,
                                            Strategy::kDecisionAvg, Strategy::kDecisionAttention};
  return all;
}

Strategy strategy_from_string(const std::string& s) {
  for (Strategy st : all_strategies())
    if (to_string(st) == s) return st;
  throw InvalidArgument("unknown fusion strategy `" + s + "`");
}

bool is_trainable(Strategy s) { return s != Strategy::kDecisionMax && s != Strategy::kDecisionAvg; }

void validate_stack(const EmbeddingStack& stack, Eigen::Index width) {
  if (stack.rows() < 2) throw InvalidArgument("fusion needs at least two models");
  if (stack.cols() != width)
    throw ShapeError("embedding width " + std::to_string(stack.cols()) + " != " + std::to_string(width));
  nn::check_finite(stack, "embedding stack");
}

Vector max_pool_models(const EmbeddingStack& stack, std::vector<Eigen::Index>* argmax) {
  Vector fused(stack.cols());
  if (argmax) argmax->assign(static_cast<std::size_t>(stack.cols()), 0);
  for (Eigen::Index c = 0; c < stack.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index m = 1; m < stack.rows(); ++m)
      if (stack(m, c) > stack(best, c)) best = m;
    fused(c) = stack(best, c);
    if (argmax) (*argmax)[static_cast<std::size_t>(c)] = best;
  }
  return fused;
}

Vector mean_pool_models(const EmbeddingStack& stack) { return stack.colwise().mean().transpose(); }

Matrix feature_attention_weights(const EmbeddingStack& stack, const FeatureAttentionParams& p) {
  Matrix pre = stack * p.conv_weight.transpose();
  pre.rowwise() += p.conv_bias.transpose();
  const Matrix a = nn::sigmoid(pre);
  const Eigen::RowVectorXd total = a.colwise().sum();
  return a.array().rowwise() / total.array();
}

Vector feature_attention_fused(const EmbeddingStack& stack, const FeatureAttentionParams& p) {
  return feature_attention_weights(stack, p).cwiseProduct(stack).colwise().sum().transpose();
}

double feature_max(const EmbeddingStack& stack, const Vector& out_weight, double out_bias) {
  validate_stack(stack, out_weight.size());
  return max_pool_models(stack).dot(out_weight) + out_bias;
}

double feature_avg(const EmbeddingStack& stack, const Vector& out_weight, double out_bias) {
  validate_stack(stack, out_weight.size());
  return mean_pool_models(stack).dot(out_weight) + out_bias;
}

double feature_attention(const EmbeddingStack& stack, const FeatureAttentionParams& p) {
  validate_stack(stack, p.out_weight.size());
  return feature_attention_fused(stack, p).dot(p.out_weight) + p.out_bias;
}

namespace {

void check_probs(std::span<const double> probs) {
  if (probs.empty()) throw InvalidArgument("decision fusion needs at least one probability");
  for (double p : probs)
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("decision fusion inputs must be probabilities");
}

}  // namespace

double decision_max(std::span<const double> probs) {
  check_probs(probs);
  return *std::max_element(probs.begin(), probs.end());
}

double decision_avg(std::span<const double> probs) {
  check_probs(probs);
  const auto [lo, hi] = std::minmax_element(probs.begin(), probs.end());
  // Clamped so rounding never leaves the member interval.
  return std::clamp(std::accumulate(probs.begin(), probs.end(), 0.0) / double(probs.size()), *lo, *hi);
}

Vector decision_attention_weights(const EmbeddingStack& stack, const DecisionAttentionParams& p) {
  Vector u = (stack * p.gate_weight).array() + p.gate_bias;
  u = u.unaryExpr([](double z) { return nn::sigmoid(z); });
  return u / u.sum();
}

double decision_attention_logit(const EmbeddingStack& stack, const DecisionAttentionParams& p) {
  validate_stack(stack, p.value_weight.size());
  const Vector values = (stack * p.value_weight).array() + p.value_bias;
  return decision_attention_weights(stack, p).dot(values);
}

double decision_attention(const EmbeddingStack& stack, const DecisionAttentionParams& p) {
  return nn::sigmoid(decision_attention_logit(stack, p));
}

Matrix pack_rows(std::span<const EmbeddingStack> stacks, const Matrix& member_logits) {
  if (stacks.empty()) return {};
  const Eigen::Index n_models = stacks.front().rows();
  const Eigen::Index width = stacks.front().cols();
  if (member_logits.rows() != Eigen::Index(stacks.size()) || member_logits.cols() != n_models)
    throw ShapeError("member logits do not match the embedding stacks");
  Matrix rows(Eigen::Index(stacks.size()), n_models * width + n_models);
  for (std::size_t b = 0; b < stacks.size(); ++b) {
    const auto r = Eigen::Index(b);
    if (stacks[b].rows() != n_models || stacks[b].cols() != width) throw ShapeError("ragged embedding stacks");
    for (Eigen::Index m = 0; m < n_models; ++m) rows.row(r).segment(m * width, width) = stacks[b].row(m);
    rows.row(r).tail(n_models) = member_logits.row(r);
  }
  return rows;
}

FusionBatch unpack_rows(const Matrix& rows, Eigen::Index n_models) {
  if (n_models < 1 || rows.cols() != n_models * kWidth + n_models)
    throw ShapeError("fusion rows have " + std::to_string(rows.cols()) + " columns, expected " +
                     std::to_string(n_models * kWidth + n_models));
  FusionBatch batch;
  batch.stacks.resize(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    auto& s = batch.stacks[static_cast<std::size_t>(r)];
    s.resize(n_models, kWidth);
    for (Eigen::Index m = 0; m < n_models; ++m) s.row(m) = rows.row(r).segment(m * kWidth, kWidth);
  }
  batch.member_logits = rows.rightCols(n_models);
  return batch;
}

// FusionHead

FusionHead::FusionHead(Strategy strategy, Eigen::Index n_models, std::uint64_t seed)
    : strategy_(strategy), n_models_(n_models) {
  if (n_models < 2) throw InvalidArgument("fusion needs at least two models");
  nn::Rng rng(seed);
  switch (strategy_) {
    case Strategy::kFeatureAttention:
      attn_weight_ = nn::Parameter("fusion.attn_conv.weight", {kWidth, kWidth, 1}, kWidth, kWidth);
      attn_bias_ = nn::Parameter("fusion.attn_conv.bias", {kWidth}, kWidth, 1);
      nn::kaiming_uniform(attn_weight_, kWidth, rng);
      [[fallthrough]];
    case Strategy::kFeatureMax:
    case Strategy::kFeatureAvg:
      out_weight_ = nn::Parameter("fusion.out_linear.weight", {1, kWidth}, 1, kWidth);
      out_bias_ = nn::Parameter("fusion.out_linear.bias", {1}, 1, 1);
      nn::kaiming_uniform(out_weight_, kWidth, rng);
      break;
    case Strategy::kDecisionAttention:
      value_weight_ = nn::Parameter("fusion.value_conv.weight", {1, kWidth, 1}, 1, kWidth);
      value_bias_ = nn::Parameter("fusion.value_conv.bias", {1}, 1, 1);
      gate_weight_ = nn::Parameter("fusion.weight_conv.weight", {1, kWidth, 1}, 1, kWidth);
      gate_bias_ = nn::Parameter("fusion.weight_conv.bias", {1}, 1, 1);
      nn::kaiming_uniform(value_weight_, kWidth, rng);
      nn::kaiming_uniform(gate_weight_, kWidth, rng);
      break;
    case Strategy::kDecisionMax:
    case Strategy::kDecisionAvg:
      break;
  }
}

std::vector<nn::Parameter*> FusionHead::parameters() {
  switch (strategy_) {
    case Strategy::kFeatureMax:
    case Strategy::kFeatureAvg:
      return {&out_weight_, &out_bias_};
    case Strategy::kFeatureAttention:
      return {&attn_weight_, &attn_bias_, &out_weight_, &out_bias_};
    case Strategy::kDecisionAttention:
      return {&value_weight_, &value_bias_, &gate_weight_, &gate_bias_};
    default:
      return {};
  }
}

FeatureAttentionParams FusionHead::feature_attention_params() const {
  if (out_weight_.value.size() == 0) throw InvalidArgument("not a feature-level fusion head");
  FeatureAttentionParams p{attn_weight_.value, Vector(), out_weight_.value.row(0).transpose(), out_bias_.value(0, 0)};
  if (attn_bias_.value.size() > 0) p.conv_bias = attn_bias_.value.col(0);
  return p;
}

DecisionAttentionParams FusionHead::decision_attention_params() const {
  if (value_weight_.value.size() == 0) throw InvalidArgument("not a decision attention head");
  return {value_weight_.value.row(0).transpose(), value_bias_.value(0, 0), gate_weight_.value.row(0).transpose(),
          gate_bias_.value(0, 0)};
}

Vector FusionHead::logits_for(const FusionBatch& batch) const {
  const auto n = Eigen::Index(batch.stacks.size());
  Vector z(n);
  FeatureAttentionParams fa;
  DecisionAttentionParams da;
  if (strategy_ == Strategy::kFeatureAttention) fa = feature_attention_params();
  if (strategy_ == Strategy::kDecisionAttention) da = decision_attention_params();
  for (Eigen::Index b = 0; b < n; ++b) {
    const auto& stack = batch.stacks[std::size_t(b)];
    switch (strategy_) {
      case Strategy::kFeatureMax:
        z(b) = feature_max(stack, out_weight_.value.row(0).transpose(), out_bias_.value(0, 0));
        break;
      case Strategy::kFeatureAvg:
        z(b) = feature_avg(stack, out_weight_.value.row(0).transpose(), out_bias_.value(0, 0));
        break;
      case Strategy::kFeatureAttention:
        z(b) = feature_attention(stack, fa);
        break;
      case Strategy::kDecisionAttention:
        z(b) = decision_attention_logit(stack, da);
        break;
      case Strategy::kDecisionMax:
        z(b) = batch.member_logits.row(b).maxCoeff();
        break;
      case Strategy::kDecisionAvg: {
        std::vector<double> probs;
        for (Eigen::Index m = 0; m < n_models_; ++m) probs.push_back(nn::sigmoid(batch.member_logits(b, m)));
        z(b) = logit_of(decision_avg(probs));
        break;
      }
    }
  }
  return z;
}

Vector FusionHead::forward_logits(const Matrix& rows) {
  cache_ = unpack_rows(rows, n_models_);
  argmax_cache_.clear();
  if (strategy_ == Strategy::kFeatureMax) {
    argmax_cache_.resize(cache_.stacks.size());
    for (std::size_t b = 0; b < cache_.stacks.size(); ++b) max_pool_models(cache_.stacks[b], &argmax_cache_[b]);
  }
  Vector z = logits_for(cache_);
  nn::check_finite(z, "fusion forward");
  return z;
}

Matrix FusionHead::backward_logits(const Vector& dlogits, bool need_input_grad) {
  const auto n = Eigen::Index(cache_.stacks.size());
  if (dlogits.size() != n) throw ShapeError("fusion backward: gradient length mismatch");
  Matrix dstacks_rows = need_input_grad ? Matrix::Zero(n, n_models_ * kWidth + n_models_) : Matrix();

  for (Eigen::Index b = 0; b < n; ++b) {
    const Matrix& R = cache_.stacks[std::size_t(b)];
    const double dz = dlogits(b);
    Matrix dR = Matrix::Zero(R.rows(), R.cols());

    switch (strategy_) {
      case Strategy::kFeatureMax: {
        const auto& arg = argmax_cache_[std::size_t(b)];
        Vector fused(kWidth);
        for (Eigen::Index c = 0; c < kWidth; ++c) fused(c) = R(arg[std::size_t(c)], c);
        out_weight_.grad.row(0) += dz * fused.transpose();
        out_bias_.grad(0, 0) += dz;
        for (Eigen::Index c = 0; c < kWidth; ++c) dR(arg[std::size_t(c)], c) = dz * out_weight_.value(0, c);
        break;
      }
      case Strategy::kFeatureAvg: {
        out_weight_.grad.row(0) += dz * mean_pool_models(R).transpose();
        out_bias_.grad(0, 0) += dz;
        dR.rowwise() = (dz / double(R.rows())) * out_weight_.value.row(0);
        break;
      }
      case Strategy::kFeatureAttention: {
        Matrix pre = R * attn_weight_.value.transpose();
        pre.rowwise() += attn_bias_.value.col(0).transpose();
        const Matrix a = nn::sigmoid(pre);
        const Eigen::RowVectorXd total = a.colwise().sum();
        const Matrix w = a.array().rowwise() / total.array();
        const Eigen::RowVectorXd fused = w.cwiseProduct(R).colwise().sum();

        out_weight_.grad.row(0) += dz * fused;
        out_bias_.grad(0, 0) += dz;
        const Eigen::RowVectorXd dfused = dz * out_weight_.value.row(0);
        // fused[c] = sum_m w[m,c] R[m,c]
        dR = w.array().rowwise() * dfused.array();
        const Matrix dw = R.array().rowwise() * dfused.array();
        // w = a / total
        const Eigen::RowVectorXd inner = dw.cwiseProduct(w).colwise().sum();
        const Matrix da = (dw.rowwise() - inner).array().rowwise() / total.array();
        const Matrix dpre = da.cwiseProduct(a.cwiseProduct((1.0 - a.array()).matrix()));
        attn_weight_.grad.noalias() += dpre.transpose() * R;
        attn_bias_.grad.col(0) += dpre.colwise().sum().transpose();
        dR.noalias() += dpre * attn_weight_.value;
        break;
      }
      case Strategy::kDecisionAttention: {
        const Vector gw = gate_weight_.value.row(0).transpose();
        const Vector vw = value_weight_.value.row(0).transpose();
        const Vector values = (R * vw).array() + value_bias_.value(0, 0);
        Vector u = (R * gw).array() + gate_bias_.value(0, 0);
        u = u.unaryExpr([](double v) { return nn::sigmoid(v); });
        const double total = u.sum();
        const Vector w = u / total;

        const Vector dvalues = dz * w;
        const Vector dw = dz * values;
        const double inner = dw.dot(w);
        const Vector du = (dw.array() - inner) / total;
        const Vector dpre = du.cwiseProduct(u.cwiseProduct((1.0 - u.array()).matrix()));

        value_weight_.grad.row(0) += (R.transpose() * dvalues).transpose();
        value_bias_.grad(0, 0) += dvalues.sum();
        gate_weight_.grad.row(0) += (R.transpose() * dpre).transpose();
        gate_bias_.grad(0, 0) += dpre.sum();
        dR = dvalues * vw.transpose() + dpre * gw.transpose();
        break;
      }
      case Strategy::kDecisionMax:
      case Strategy::kDecisionAvg:
        throw InvalidArgument("decision " + to_string(strategy_) + " fusion has no backward pass");
    }

    if (need_input_grad)
      for (Eigen::Index m = 0; m < n_models_; ++m) dstacks_rows.row(b).segment(m * kWidth, kWidth) = dR.row(m);
  }
  return dstacks_rows;
}

std::vector<double> FusionHead::predict(const Matrix& rows) const {
  const auto batch = unpack_rows(rows, n_models_);
  std::vector<double> probs(batch.stacks.size());
  if (strategy_ == Strategy::kDecisionMax || strategy_ == Strategy::kDecisionAvg) {
    for (std::size_t b = 0; b < probs.size(); ++b) {
      std::vector<double> member(static_cast<std::size_t>(n_models_));
      for (Eigen::Index m = 0; m < n_models_; ++m)
        member[std::size_t(m)] = nn::sigmoid(batch.member_logits(Eigen::Index(b), m));
      probs[b] = strategy_ == Strategy::kDecisionMax ? decision_max(member) : decision_avg(member);
    }
    return probs;
  }
  const Vector z = logits_for(batch);
  for (std::size_t b = 0; b < probs.size(); ++b) probs[b] = nn::sigmoid(z(Eigen::Index(b)));
  return probs;
}

std::vector<NamedTensor> FusionHead::tensors() const {
  std::vector<NamedTensor> out;
  for (const nn::Parameter* p : const_cast<FusionHead*>(this)->parameters())
    out.push_back({p->name, p->shape, flatten(p->value)});
  return out;
}

void FusionHead::load_tensors(const Checkpoint& ck) {
  for (nn::Parameter* p : parameters()) {
    const auto& t = ck.tensor(p->name);
    if (t.shape != p->shape) throw FormatError("fusion checkpoint: shape mismatch for `" + p->name + "`");
    unflatten(t.data, p->value);
  }
}

Matrix member_rows(std::span<const models::Model> members, std::span<const Matrix> inputs) {
  if (members.size() != inputs.size()) throw InvalidArgument("one input matrix per member is required");
  if (members.size() < 2) throw InvalidArgument("fusion needs at least two models");
  const Eigen::Index n = inputs.front().rows();
  const auto n_models = Eigen::Index(members.size());
  std::vector<EmbeddingStack> stacks(static_cast<std::size_t>(n), Matrix(n_models, kWidth));
  Matrix logits(n, n_models);
  for (std::size_t m = 0; m < members.size(); ++m) {
    if (inputs[m].rows() != n) throw ShapeError("members received different segment counts");
    const auto out = members[m].infer(inputs[m]);
    for (Eigen::Index b = 0; b < n; ++b) stacks[std::size_t(b)].row(Eigen::Index(m)) = out.embeddings.row(b);
    logits.col(Eigen::Index(m)) = out.logits;
  }
  return pack_rows(stacks, logits);
}

void save_fusion(const std::filesystem::path& path, const FusionHead& head, const FusionCheckpointInfo& info) {
  nlohmann::json members = nlohmann::json::array();
  for (std::size_t i = 0; i < info.member_paths.size(); ++i)
    members.push_back({{"path", info.member_paths[i].generic_string()}, {"hash", info.member_hashes.at(i)}});
  const nlohmann::json header = {{"format", kFusionFormat},
                                 {"strategy", to_string(head.strategy())},
                                 {"n_models", head.n_models()},
                                 {"members", members}};
  const auto t = head.tensors();
  save_checkpoint(path, header, t);
}

bool is_fusion_checkpoint(const Checkpoint& ck) { return ck.header.value("format", "") == kFusionFormat; }

LoadedFusion load_fusion(const std::filesystem::path& path) {
  const auto ck = load_checkpoint(path);
  if (!is_fusion_checkpoint(ck)) throw FormatError("not a fusion checkpoint: " + path.string());
  LoadedFusion out;
  out.info.strategy = strategy_from_string(ck.header.at("strategy").get<std::string>());
  const auto n_models = ck.header.at("n_models").get<Eigen::Index>();
  for (const auto& m : ck.header.at("members")) {
    std::filesystem::path p = m.at("path").get<std::string>();
    const std::string expected = m.at("hash").get<std::string>();
    const auto resolved = p.is_relative() ? path.parent_path() / p : p;
    const auto bytes = read_file_bytes(resolved);
    const std::string actual = content_hash(bytes);
    if (actual != expected)
      throw Error("hash", "member checkpoint " + resolved.string() + " changed (hash " + actual + ", expected " +
                              expected + ")");
    out.info.member_paths.push_back(p);
    out.info.member_hashes.push_back(expected);
    out.members.push_back(models::Model::from_checkpoint(decode_checkpoint(bytes)));
  }
  if (Eigen::Index(out.members.size()) != n_models) throw FormatError("fusion checkpoint: member count mismatch");
  out.head = FusionHead(out.info.strategy, n_models, 0);
  out.head.load_tensors(ck);
  return out;
}

}  // namespace coughfuse::fusion
