#include "coughfuse/models.hpp"

#include <cmath>

#include "coughfuse/dsp.hpp"
#include "coughfuse/error.hpp"

namespace coughfuse::models {

namespace {

constexpr double kMinStddev = 1e-6;
constexpr const char* kModelFormat = "coughfuse-model";

std::vector<double> to_vector(const Matrix& m) {
  // Row-major flattening so a [out x in] weight reads naturally.
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[i++] = m(r, c);
  return out;
}

void from_vector(const std::vector<double>& v, Matrix& m) {
  if (v.size() != static_cast<std::size_t>(m.size())) throw FormatError("checkpoint: tensor size mismatch");
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = v[i++];
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kHandcraftedDnn:
      return "handcrafted_dnn";
    case ModelKind::kSpecCnnA:
      return "spec_cnn_a";
    case ModelKind::kSpecCnnB:
      return "spec_cnn_b";
  }
  return "unknown";
}

std::string to_string(FeatureSet features) { return features == FeatureSet::kLogMel ? "logmel" : "mfcc"; }

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "handcrafted_dnn") return ModelKind::kHandcraftedDnn;
  if (s == "spec_cnn_a") return ModelKind::kSpecCnnA;
  if (s == "spec_cnn_b") return ModelKind::kSpecCnnB;
  throw InvalidArgument("unknown model kind `" + s + "`");
}

FeatureSet feature_set_from_string(const std::string& s) {
  if (s == "logmel") return FeatureSet::kLogMel;
  if (s == "mfcc") return FeatureSet::kMfcc;
  throw InvalidArgument("unknown feature set `" + s + "`");
}

ModelSpec ModelSpec::handcrafted(FeatureSet features, std::size_t n_functionals) {
  ModelSpec s;
  s.kind = ModelKind::kHandcraftedDnn;
  s.features = features;
  s.input_dim = (features == FeatureSet::kLogMel ? dsp::kHandcraftedMels : dsp::kMfccCoeffs) * n_functionals;
  return s;
}

ModelSpec ModelSpec::spectrogram(ModelKind kind) {
  if (kind == ModelKind::kHandcraftedDnn) throw InvalidArgument("not a spectrogram model kind");
  ModelSpec s;
  s.kind = kind;
  s.n_mels = kind == ModelKind::kSpecCnnA ? dsp::kImageSlotMels : dsp::kAudioSlotMels;
  return s;
}

std::string ModelSpec::label() const {
  return is_spectrogram() ? to_string(kind) : to_string(kind) + ":" + to_string(features);
}

nlohmann::json ModelSpec::to_json() const {
  nlohmann::json j = {{"kind", to_string(kind)}};
  if (is_spectrogram()) {
    j["n_mels"] = n_mels;
    j["conv1_channels"] = conv1_channels;
    j["conv2_channels"] = conv2_channels;
  } else {
    j["features"] = to_string(features);
    j["input_dim"] = input_dim;
  }
  return j;
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.kind = model_kind_from_string(j.at("kind").get<std::string>());
  if (s.is_spectrogram()) {
    s.n_mels = j.at("n_mels").get<std::size_t>();
    s.conv1_channels = j.at("conv1_channels").get<std::size_t>();
    s.conv2_channels = j.at("conv2_channels").get<std::size_t>();
  } else {
    s.features = feature_set_from_string(j.at("features").get<std::string>());
    s.input_dim = j.at("input_dim").get<std::size_t>();
  }
  return s;
}

// ClassifierHead

ClassifierHead::ClassifierHead(Eigen::Index in_features)
    : linear1(in_features, kHiddenDim, "head.linear1"),
      linear2(kHiddenDim, kEmbeddingDim, "head.linear2"),
      linear3(kEmbeddingDim, 1, "head.linear3") {}

void ClassifierHead::init(nn::Rng& rng) {
  linear1.init(rng);
  linear2.init(rng);
  linear3.init(rng);
}

std::vector<nn::Parameter*> ClassifierHead::parameters() {
  return {&linear1.weight, &linear1.bias, &linear2.weight, &linear2.bias, &linear3.weight, &linear3.bias};
}

ModelOutput ClassifierHead::forward(const Matrix& x) {
  ModelOutput out;
  out.embeddings = relu2_.forward(linear2.forward(relu1_.forward(linear1.forward(x))));
  out.logits = linear3.forward(out.embeddings).col(0);
  return out;
}

ModelOutput ClassifierHead::apply(const Matrix& x) const {
  ModelOutput out;
  out.embeddings = linear2.apply(linear1.apply(x).cwiseMax(0.0)).cwiseMax(0.0);
  out.logits = linear3.apply(out.embeddings).col(0);
  return out;
}

Matrix ClassifierHead::backward(const Vector& dlogits) {
  Matrix d = linear3.backward(Matrix(dlogits));
  d = linear2.backward(relu2_.backward(d));
  return linear1.backward(relu1_.backward(d));
}

// Model

Model::Model(ModelSpec spec, std::uint64_t seed) : spec_(spec) {
  nn::Rng rng(seed);
  Eigen::Index norm_dim = 0;
  if (spec_.is_spectrogram()) {
    if (spec_.n_mels == 0) throw InvalidArgument("spectrogram model needs n_mels > 0");
    const auto c1 = static_cast<Eigen::Index>(spec_.conv1_channels);
    const auto c2 = static_cast<Eigen::Index>(spec_.conv2_channels);
    // Replicate padding keeps a frame-constant input constant through the convolutions.
    conv1_ = nn::Conv1dK3(static_cast<Eigen::Index>(spec_.n_mels), c1, "backbone.conv1", nn::Padding::kReplicate);
    conv2_ = nn::Conv1dK3(c1, c2, "backbone.conv2", nn::Padding::kReplicate);
    conv1_.init(rng);
    conv2_.init(rng);
    head_ = ClassifierHead(2 * c2);
    norm_dim = static_cast<Eigen::Index>(spec_.n_mels);
  } else {
    if (spec_.input_dim == 0) throw InvalidArgument("handcrafted model needs input_dim > 0");
    head_ = ClassifierHead(static_cast<Eigen::Index>(spec_.input_dim));
    norm_dim = static_cast<Eigen::Index>(spec_.input_dim);
  }
  head_.init(rng);
  normalizer_.mean = Vector::Zero(norm_dim);
  normalizer_.stddev = Vector::Ones(norm_dim);
}

std::vector<nn::Parameter*> Model::parameters() {
  std::vector<nn::Parameter*> params;
  if (spec_.is_spectrogram()) {
    for (auto* p : conv1_.parameters()) params.push_back(p);
    for (auto* p : conv2_.parameters()) params.push_back(p);
  }
  for (auto* p : head_.parameters()) params.push_back(p);
  return params;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->size();
  return n;
}

void Model::fit_normalizer(const Matrix& rows) {
  if (rows.rows() == 0) throw InvalidArgument("cannot fit a normalizer on zero rows");
  const Eigen::Index dim = normalizer_.mean.size();
  Vector sum = Vector::Zero(dim), sq = Vector::Zero(dim);
  double count = 0.0;
  if (spec_.is_spectrogram()) {
    if (rows.cols() % dim != 0) throw ShapeError("spectrogram row is not a multiple of n_mels");
    const Eigen::Index frames = rows.cols() / dim;
    for (Eigen::Index r = 0; r < rows.rows(); ++r)
      for (Eigen::Index t = 0; t < frames; ++t)
        for (Eigen::Index m = 0; m < dim; ++m) sum(m) += rows(r, t * dim + m);
    count = double(rows.rows() * frames);
    const Vector mean = sum / count;
    for (Eigen::Index r = 0; r < rows.rows(); ++r)
      for (Eigen::Index t = 0; t < frames; ++t)
        for (Eigen::Index m = 0; m < dim; ++m) sq(m) += std::pow(rows(r, t * dim + m) - mean(m), 2);
    normalizer_.mean = mean;
  } else {
    if (rows.cols() != dim) throw ShapeError("feature row has the wrong length");
    count = double(rows.rows());
    normalizer_.mean = rows.colwise().mean().transpose();
    sq = (rows.rowwise() - normalizer_.mean.transpose()).array().square().colwise().sum().transpose();
  }
  normalizer_.stddev = (sq / count).cwiseSqrt().cwiseMax(kMinStddev);
}

Matrix Model::normalize(const Matrix& rows) const {
  const Eigen::Index dim = normalizer_.mean.size();
  Matrix out(rows.rows(), rows.cols());
  if (spec_.is_spectrogram()) {
    if (rows.cols() % dim != 0 || rows.cols() == 0)
      throw ShapeError("spectrogram input has " + std::to_string(rows.cols()) + " values, not a multiple of " +
                       std::to_string(dim) + " Mel bands");
    const Eigen::Index frames = rows.cols() / dim;
    for (Eigen::Index t = 0; t < frames; ++t)
      out.middleCols(t * dim, dim) =
          (rows.middleCols(t * dim, dim).rowwise() - normalizer_.mean.transpose()).array().rowwise() /
          normalizer_.stddev.transpose().array();
  } else {
    if (rows.cols() != dim)
      throw ShapeError("feature vector has length " + std::to_string(rows.cols()) + ", expected " +
                       std::to_string(dim));
    out = (rows.rowwise() - normalizer_.mean.transpose()).array().rowwise() / normalizer_.stddev.transpose().array();
  }
  return out;
}

Matrix Model::unnormalize_grad(const Matrix& grad) const {
  const Eigen::Index dim = normalizer_.stddev.size();
  Matrix out(grad.rows(), grad.cols());
  for (Eigen::Index c = 0; c < grad.cols(); ++c) out.col(c) = grad.col(c) / normalizer_.stddev(c % dim);
  return out;
}

nn::Sequence Model::to_sequence(const Matrix& normalized) const {
  const auto mels = static_cast<Eigen::Index>(spec_.n_mels);
  const Eigen::Index frames = normalized.cols() / mels;
  nn::Sequence seq(static_cast<std::size_t>(normalized.rows()));
  for (Eigen::Index r = 0; r < normalized.rows(); ++r) {
    Matrix& x = seq[static_cast<std::size_t>(r)];
    x.resize(mels, frames);
    for (Eigen::Index t = 0; t < frames; ++t) x.col(t) = normalized.row(r).segment(t * mels, mels).transpose();
  }
  return seq;
}

ModelOutput Model::forward(const Matrix& rows) {
  const Matrix x = normalize(rows);
  ModelOutput out;
  if (spec_.is_spectrogram()) {
    cached_frames_ = x.cols() / static_cast<Eigen::Index>(spec_.n_mels);
    auto h = pool1_.forward(relu1_.forward(conv1_.forward(to_sequence(x))));
    h = pool2_.forward(relu2_.forward(conv2_.forward(h)));
    out = head_.forward(global_pool_.forward(h));
  } else {
    out = head_.forward(x);
  }
  nn::check_finite(out.logits, "model forward");
  return out;
}

ModelOutput Model::infer(const Matrix& rows) const {
  const Matrix x = normalize(rows);
  ModelOutput out;
  if (spec_.is_spectrogram()) {
    const auto seq = to_sequence(x);
    Matrix pooled(x.rows(), 2 * static_cast<Eigen::Index>(spec_.conv2_channels));
    for (std::size_t b = 0; b < seq.size(); ++b) {
      Matrix h = nn::MaxPool2::apply(conv1_.apply(seq[b]).cwiseMax(0.0));
      h = nn::MaxPool2::apply(conv2_.apply(h).cwiseMax(0.0));
      pooled.row(static_cast<Eigen::Index>(b)) = nn::GlobalAvgMaxPool::apply(h);
    }
    out = head_.apply(pooled);
  } else {
    out = head_.apply(x);
  }
  nn::check_finite(out.logits, "model inference");
  return out;
}

Matrix Model::backward_logits(const Vector& dlogits, bool need_input_grad) {
  Matrix d = head_.backward(dlogits);
  if (!spec_.is_spectrogram()) {
    nn::check_finite(d, "model backward");
    return need_input_grad ? unnormalize_grad(d) : Matrix();
  }
  auto s = global_pool_.backward(d);
  s = conv2_.backward(relu2_.backward(pool2_.backward(s)));
  s = conv1_.backward(relu1_.backward(pool1_.backward(s)), need_input_grad);
  if (!need_input_grad) return {};

  const auto mels = static_cast<Eigen::Index>(spec_.n_mels);
  Matrix grad(static_cast<Eigen::Index>(s.size()), mels * cached_frames_);
  for (std::size_t b = 0; b < s.size(); ++b)
    for (Eigen::Index t = 0; t < cached_frames_; ++t)
      grad.row(static_cast<Eigen::Index>(b)).segment(t * mels, mels) = s[b].col(t).transpose();
  nn::check_finite(grad, "model backward");
  return unnormalize_grad(grad);
}

nlohmann::json Model::header() const {
  return {{"format", kModelFormat}, {"spec", spec_.to_json()}};
}

std::vector<NamedTensor> Model::tensors() const {
  std::vector<NamedTensor> out;
  auto* self = const_cast<Model*>(this);
  for (const nn::Parameter* p : self->parameters()) out.push_back({p->name, p->shape, to_vector(p->value)});
  const auto n = static_cast<std::int64_t>(normalizer_.mean.size());
  out.push_back({"normalizer.mean", {n}, to_vector(normalizer_.mean)});
  out.push_back({"normalizer.stddev", {n}, to_vector(normalizer_.stddev)});
  return out;
}

void Model::save(const std::filesystem::path& path) const {
  const auto t = tensors();
  save_checkpoint(path, header(), t);
}

Model Model::from_checkpoint(const Checkpoint& ck) {
  if (ck.header.value("format", "") != kModelFormat) throw FormatError("checkpoint is not a single-model checkpoint");
  Model m(ModelSpec::from_json(ck.header.at("spec")), 0);
  for (nn::Parameter* p : m.parameters()) {
    const auto& t = ck.tensor(p->name);
    if (t.shape != p->shape) throw FormatError("checkpoint: shape mismatch for `" + p->name + "`");
    from_vector(t.data, p->value);
  }
  for (auto [name, target] : {std::pair{"normalizer.mean", &m.normalizer_.mean},
                               std::pair{"normalizer.stddev", &m.normalizer_.stddev}}) {
    const auto& data = ck.tensor(name).data;
    if (data.size() != static_cast<std::size_t>(m.normalizer_.mean.size()))
      throw FormatError(std::string("checkpoint: size mismatch for `") + name + "`");
    *target = Eigen::Map<const Vector>(data.data(), Eigen::Index(data.size()));
  }
  return m;
}

Model Model::load(const std::filesystem::path& path) { return from_checkpoint(load_checkpoint(path)); }

double predict_segment_prob(double logit) { return nn::sigmoid(logit); }

std::vector<double> predict_segment_probs(const Model& model, const Matrix& rows) {
  const auto out = model.infer(rows);
  std::vector<double> probs(static_cast<std::size_t>(out.logits.size()));
  for (Eigen::Index i = 0; i < out.logits.size(); ++i) probs[std::size_t(i)] = predict_segment_prob(out.logits(i));
  return probs;
}

}  // namespace coughfuse::models
