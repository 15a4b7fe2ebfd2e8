#include "coughfuse/nnet.hpp"

#include <algorithm>
#include <cmath>

#include "coughfuse/error.hpp"

namespace coughfuse::nn {

Parameter::Parameter(std::string n, std::vector<std::int64_t> s, Eigen::Index rows, Eigen::Index cols)
    : name(std::move(n)), shape(std::move(s)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

void check_finite(const Matrix& m, const char* where) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite value in ") + where);
}

void kaiming_uniform(Parameter& weight, std::int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index j = 0; j < weight.value.cols(); ++j)
    for (Eigen::Index i = 0; i < weight.value.rows(); ++i) weight.value(i, j) = dist(rng);
}

// Linear

Linear::Linear(Eigen::Index in, Eigen::Index out, const std::string& name)
    : weight(name + ".weight", {out, in}, out, in), bias(name + ".bias", {out}, out, 1) {}

void Linear::init(Rng& rng) {
  kaiming_uniform(weight, weight.value.cols(), rng);
  bias.value.setZero();
}

Matrix Linear::apply(const Matrix& x) const {
  if (x.cols() != weight.value.cols())
    throw ShapeError("linear: input has " + std::to_string(x.cols()) + " features, expected " +
                     std::to_string(weight.value.cols()));
  Matrix y = x * weight.value.transpose();
  y.rowwise() += bias.value.col(0).transpose();
  return y;
}

Matrix Linear::forward(const Matrix& x) {
  Matrix y = apply(x);
  input_ = x;
  return y;
}

Matrix Linear::backward(const Matrix& dy) {
  if (dy.rows() != input_.rows() || dy.cols() != weight.value.rows())
    throw ShapeError("linear: gradient shape mismatch");
  weight.grad.noalias() += dy.transpose() * input_;
  bias.grad.col(0) += dy.colwise().sum().transpose();
  return dy * weight.value;
}

// Conv1dK1

Conv1dK1::Conv1dK1(Eigen::Index in_ch, Eigen::Index out_ch, const std::string& name)
    : weight(name + ".weight", {out_ch, in_ch, 1}, out_ch, in_ch), bias(name + ".bias", {out_ch}, out_ch, 1) {}

void Conv1dK1::init(Rng& rng) {
  kaiming_uniform(weight, weight.value.cols(), rng);
  bias.value.setZero();
}

Matrix Conv1dK1::apply(const Matrix& x) const {
  if (x.rows() != weight.value.cols()) throw ShapeError("conv1d k1: channel mismatch");
  Matrix y = weight.value * x;
  y.colwise() += bias.value.col(0);
  return y;
}

Sequence Conv1dK1::forward(const Sequence& x) {
  Sequence y(x.size());
  for (std::size_t b = 0; b < x.size(); ++b) y[b] = apply(x[b]);
  input_ = x;
  return y;
}

Sequence Conv1dK1::backward(const Sequence& dy) {
  if (dy.size() != input_.size()) throw ShapeError("conv1d k1: batch mismatch in backward");
  Sequence dx(dy.size());
  for (std::size_t b = 0; b < dy.size(); ++b) {
    weight.grad.noalias() += dy[b] * input_[b].transpose();
    bias.grad.col(0) += dy[b].rowwise().sum();
    dx[b] = weight.value.transpose() * dy[b];
  }
  return dx;
}

// Conv1dK3

Conv1dK3::Conv1dK3(Eigen::Index in_ch, Eigen::Index out_ch, const std::string& name, Padding padding)
    : weight(name + ".weight", {out_ch, in_ch, 3}, out_ch, in_ch * 3),
      bias(name + ".bias", {out_ch}, out_ch, 1),
      padding_(padding) {}

void Conv1dK3::init(Rng& rng) {
  kaiming_uniform(weight, weight.value.cols(), rng);
  bias.value.setZero();
}

Matrix Conv1dK3::im2col(const Matrix& x) const {
  const Eigen::Index ch = x.rows(), len = x.cols();
  Matrix cols(ch * 3, len);
  for (Eigen::Index t = 0; t < len; ++t) {
    for (Eigen::Index k = 0; k < 3; ++k) {
      Eigen::Index src = t + k - 1;
      const bool outside = src < 0 || src >= len;
      if (outside && padding_ == Padding::kReplicate) src = std::clamp<Eigen::Index>(src, 0, len - 1);
      for (Eigen::Index c = 0; c < ch; ++c)
        cols(c * 3 + k, t) = (outside && padding_ == Padding::kZero) ? 0.0 : x(c, src);
    }
  }
  return cols;
}

Matrix Conv1dK3::col2im(const Matrix& cols, Eigen::Index len) const {
  const Eigen::Index ch = cols.rows() / 3;
  Matrix dx = Matrix::Zero(ch, len);
  for (Eigen::Index t = 0; t < len; ++t) {
    for (Eigen::Index k = 0; k < 3; ++k) {
      Eigen::Index dst = t + k - 1;
      if (dst < 0 || dst >= len) {
        if (padding_ == Padding::kZero) continue;
        dst = std::clamp<Eigen::Index>(dst, 0, len - 1);
      }
      for (Eigen::Index c = 0; c < ch; ++c) dx(c, dst) += cols(c * 3 + k, t);
    }
  }
  return dx;
}

Matrix Conv1dK3::apply(const Matrix& x) const {
  if (x.rows() != weight.value.cols() / 3) throw ShapeError("conv1d k3: channel mismatch");
  if (x.cols() < 1) throw ShapeError("conv1d k3: empty sequence");
  Matrix y = weight.value * im2col(x);
  y.colwise() += bias.value.col(0);
  return y;
}

Sequence Conv1dK3::forward(const Sequence& x) {
  const Eigen::Index in_ch = weight.value.cols() / 3;
  offsets_.assign(x.size() + 1, 0);
  for (std::size_t b = 0; b < x.size(); ++b) {
    if (x[b].rows() != in_ch) throw ShapeError("conv1d k3: channel mismatch");
    if (x[b].cols() < 1) throw ShapeError("conv1d k3: empty sequence");
    offsets_[b + 1] = offsets_[b] + x[b].cols();
  }
  columns_.resize(3 * in_ch, offsets_.back());
  for (std::size_t b = 0; b < x.size(); ++b) columns_.middleCols(offsets_[b], x[b].cols()) = im2col(x[b]);
  Matrix all = weight.value * columns_;
  all.colwise() += bias.value.col(0);
  Sequence y(x.size());
  for (std::size_t b = 0; b < x.size(); ++b) y[b] = all.middleCols(offsets_[b], offsets_[b + 1] - offsets_[b]);
  return y;
}

Sequence Conv1dK3::backward(const Sequence& dy, bool need_input_grad) {
  if (offsets_.empty() || dy.size() + 1 != offsets_.size()) throw ShapeError("conv1d k3: batch mismatch in backward");
  Matrix all(weight.value.rows(), offsets_.back());
  for (std::size_t b = 0; b < dy.size(); ++b) {
    if (dy[b].cols() != offsets_[b + 1] - offsets_[b]) throw ShapeError("conv1d k3: length mismatch in backward");
    all.middleCols(offsets_[b], dy[b].cols()) = dy[b];
  }
  weight.grad.noalias() += all * columns_.transpose();
  bias.grad.col(0) += all.rowwise().sum();
  Sequence dx;
  if (need_input_grad) {
    const Matrix dcols = weight.value.transpose() * all;
    dx.resize(dy.size());
    for (std::size_t b = 0; b < dy.size(); ++b)
      dx[b] = col2im(dcols.middleCols(offsets_[b], dy[b].cols()), dy[b].cols());
  }
  return dx;
}

// Activations

Matrix Relu::forward(const Matrix& x) {
  mask_ = (x.array() > 0.0).cast<double>().matrix();
  return x.cwiseMax(0.0);
}

Matrix Relu::backward(const Matrix& dy) const { return dy.cwiseProduct(mask_); }

Sequence Relu::forward(const Sequence& x) {
  seq_mask_.resize(x.size());
  Sequence y(x.size());
  for (std::size_t b = 0; b < x.size(); ++b) {
    seq_mask_[b] = (x[b].array() > 0.0).cast<double>().matrix();
    y[b] = x[b].cwiseMax(0.0);
  }
  return y;
}

Sequence Relu::backward(const Sequence& dy) const {
  Sequence dx(dy.size());
  for (std::size_t b = 0; b < dy.size(); ++b) dx[b] = dy[b].cwiseProduct(seq_mask_[b]);
  return dx;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Matrix sigmoid(const Matrix& z) { return z.unaryExpr([](double v) { return sigmoid(v); }); }

// Pooling

Sequence MaxPool2::forward(const Sequence& x) {
  argmax_.assign(x.size(), {});
  input_len_.resize(x.size());
  Sequence y(x.size());
  for (std::size_t b = 0; b < x.size(); ++b) {
    const Eigen::Index ch = x[b].rows(), out_len = x[b].cols() / 2;
    if (out_len == 0) throw ShapeError("max pool: sequence shorter than the pool width");
    channels_ = ch;
    input_len_[b] = x[b].cols();
    y[b].resize(ch, out_len);
    argmax_[b].resize(static_cast<std::size_t>(ch * out_len));
    for (Eigen::Index t = 0; t < out_len; ++t) {
      for (Eigen::Index c = 0; c < ch; ++c) {
        const double a = x[b](c, 2 * t), v = x[b](c, 2 * t + 1);
        const bool second = v > a;
        y[b](c, t) = second ? v : a;
        argmax_[b][static_cast<std::size_t>(t * ch + c)] = 2 * t + (second ? 1 : 0);
      }
    }
  }
  return y;
}

Matrix MaxPool2::apply(const Matrix& x) {
  const Eigen::Index out_len = x.cols() / 2;
  if (out_len == 0) throw ShapeError("max pool: sequence shorter than the pool width");
  Matrix y(x.rows(), out_len);
  for (Eigen::Index t = 0; t < out_len; ++t) y.col(t) = x.col(2 * t).cwiseMax(x.col(2 * t + 1));
  return y;
}

Sequence MaxPool2::backward(const Sequence& dy) const {
  Sequence dx(dy.size());
  for (std::size_t b = 0; b < dy.size(); ++b) {
    dx[b] = Matrix::Zero(channels_, input_len_[b]);
    for (Eigen::Index t = 0; t < dy[b].cols(); ++t)
      for (Eigen::Index c = 0; c < channels_; ++c)
        dx[b](c, argmax_[b][static_cast<std::size_t>(t * channels_ + c)]) += dy[b](c, t);
  }
  return dx;
}

Matrix GlobalAvgMaxPool::forward(const Sequence& x) {
  if (x.empty()) return {};
  channels_ = x.front().rows();
  argmax_.assign(x.size(), std::vector<Eigen::Index>(static_cast<std::size_t>(channels_)));
  input_len_.resize(x.size());
  Matrix y(static_cast<Eigen::Index>(x.size()), 2 * channels_);
  for (std::size_t b = 0; b < x.size(); ++b) {
    const auto row = static_cast<Eigen::Index>(b);
    input_len_[b] = x[b].cols();
    for (Eigen::Index c = 0; c < channels_; ++c) {
      Eigen::Index arg = 0;
      const double peak = x[b].row(c).maxCoeff(&arg);
      y(row, c) = x[b].row(c).mean();
      y(row, channels_ + c) = peak;
      argmax_[b][static_cast<std::size_t>(c)] = arg;
    }
  }
  return y;
}

Eigen::RowVectorXd GlobalAvgMaxPool::apply(const Matrix& x) {
  Eigen::RowVectorXd y(2 * x.rows());
  y.head(x.rows()) = x.rowwise().mean().transpose();
  y.tail(x.rows()) = x.rowwise().maxCoeff().transpose();
  return y;
}

Sequence GlobalAvgMaxPool::backward(const Matrix& dy) const {
  Sequence dx(static_cast<std::size_t>(dy.rows()));
  for (std::size_t b = 0; b < dx.size(); ++b) {
    const auto row = static_cast<Eigen::Index>(b);
    const Eigen::Index len = input_len_[b];
    dx[b] = Matrix::Zero(channels_, len);
    for (Eigen::Index c = 0; c < channels_; ++c) {
      dx[b].row(c).array() += dy(row, c) / static_cast<double>(len);
      dx[b](c, argmax_[b][static_cast<std::size_t>(c)]) += dy(row, channels_ + c);
    }
  }
  return dx;
}

// Loss

namespace {
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
}  // namespace

LossResult bce_with_logits(const Vector& logits, const Vector& targets, double pos_weight) {
  if (logits.size() != targets.size() || logits.size() == 0)
    throw ShapeError("bce: logits and targets must be non-empty and the same length");
  if (!(pos_weight > 0.0)) throw InvalidArgument("bce: pos_weight must be positive");
  const auto n = static_cast<double>(logits.size());
  LossResult r;
  r.grad.resize(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double z = logits(i), y = targets(i);
    if (!(y >= 0.0 && y <= 1.0)) throw InvalidArgument("bce: target outside [0, 1]");
    if (!std::isfinite(z)) throw NumericError("bce: non-finite logit");
    // -log s(z) = softplus(-z), -log(1 - s(z)) = softplus(z)
    r.loss += pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z);
    const double s = sigmoid(z);
    r.grad(i) = (pos_weight * y * (s - 1.0) + (1.0 - y) * s) / n;
  }
  r.loss /= n;
  return r;
}

// Optimizer

void Adam::step(std::span<Parameter* const> params, double lr) {
  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw ShapeError("adam: parameter list changed between steps");

  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    check_finite(p.grad, p.name.c_str());
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
    const auto m_hat = m_[i].array() / bc1;
    const auto v_hat = v_[i].array() / bc2;
    p.value.array() -= lr * m_hat / (v_hat.sqrt() + cfg_.epsilon);
  }
}

double LrSchedule::at(int epoch) const {
  if (epoch < 0) throw InvalidArgument("epoch must be non-negative");
  return base_lr * std::pow(decay, epoch / decay_every);
}

double lr_at(int epoch, const LrSchedule& schedule) { return schedule.at(epoch); }

// Mixup

double sample_beta(Rng& rng, double shape) {
  if (!(shape > 0.0)) throw InvalidArgument("beta shape must be positive");
  std::gamma_distribution<double> gamma(shape, 1.0);
  const double x = gamma(rng);
  const double y = gamma(rng);
  return (x + y) > 0.0 ? x / (x + y) : 0.5;
}

Mixed mix(const Vector& x1, double y1, const Vector& x2, double y2, double alpha) {
  if (x1.size() != x2.size()) throw ShapeError("mixup: inputs differ in shape");
  if (!(y1 >= 0.0 && y1 <= 1.0 && y2 >= 0.0 && y2 <= 1.0)) throw InvalidArgument("mixup: label outside [0, 1]");
  if (alpha == 1.0) return {x1, y1};
  // x2 + a(x1 - x2), clamped so rounding never leaves the member interval.
  Vector x = (x2 + alpha * (x1 - x2)).cwiseMax(x1.cwiseMin(x2)).cwiseMin(x1.cwiseMax(x2));
  const double y = std::clamp(y2 + alpha * (y1 - y2), std::min(y1, y2), std::max(y1, y2));
  return {std::move(x), y};
}

Mixed mixup(const Vector& x1, double y1, const Vector& x2, double y2, Rng& rng, const MixupConfig& cfg) {
  return mix(x1, y1, x2, y2, sample_beta(rng, cfg.beta_shape));
}

void Trainable::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

}  // namespace coughfuse::nn
