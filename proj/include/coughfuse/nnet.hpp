#pragma once

// Minimal differentiable layer vocabulary with hand-written backward passes.
//
// Dense activations are [batch x features] matrices. Sequence activations are
// one [channels x length] matrix per batch item. Every layer caches what its
// backward pass needs during forward, so calls must alternate
// forward -> backward on the same batch.

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace coughfuse::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Sequence = std::vector<Matrix>;
using Rng = std::mt19937_64;

/// A trainable tensor. `value` holds the data in a 2-D view; `shape` records
/// the logical shape (a [out x in x 3] kernel is stored as out x (in*3) with
/// column c*3 + k).
struct Parameter {
  std::string name;
  std::vector<std::int64_t> shape;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string name, std::vector<std::int64_t> shape, Eigen::Index rows, Eigen::Index cols);

  void zero_grad() { grad.setZero(); }
  std::size_t size() const { return static_cast<std::size_t>(value.size()); }
};

/// Throws NumericError if `m` contains NaN or infinity.
void check_finite(const Matrix& m, const char* where);

/// Kaiming-uniform (fan-in, ReLU gain) weights, zero bias.
void kaiming_uniform(Parameter& weight, std::int64_t fan_in, Rng& rng);

class Linear {
 public:
  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out, const std::string& name);

  /// y = x W^T + b.
  Matrix forward(const Matrix& x);
  /// Stateless forward for inference.
  Matrix apply(const Matrix& x) const;
  /// Accumulates weight/bias gradients and returns dL/dx.
  Matrix backward(const Matrix& dy);

  void init(Rng& rng);
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }

  Eigen::Index in_features() const { return weight.value.cols(); }
  Eigen::Index out_features() const { return weight.value.rows(); }

  Parameter weight;  // [out x in]
  Parameter bias;    // [out x 1]

 private:
  Matrix input_;
};

/// Kernel-1 convolution: the same linear map applied at every position.
class Conv1dK1 {
 public:
  Conv1dK1() = default;
  Conv1dK1(Eigen::Index in_ch, Eigen::Index out_ch, const std::string& name);

  Sequence forward(const Sequence& x);
  Matrix apply(const Matrix& x) const;
  Sequence backward(const Sequence& dy);

  void init(Rng& rng);
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }

  Parameter weight;  // [out x in]
  Parameter bias;    // [out x 1]

 private:
  Sequence input_;
};

enum class Padding { kZero, kReplicate };

/// Kernel-3, stride-1 cross-correlation with one sample of padding per side.
class Conv1dK3 {
 public:
  Conv1dK3() = default;
  Conv1dK3(Eigen::Index in_ch, Eigen::Index out_ch, const std::string& name, Padding padding = Padding::kZero);

  Sequence forward(const Sequence& x);
  Matrix apply(const Matrix& x) const;
  /// When `need_input_grad` is false the returned sequence is empty.
  Sequence backward(const Sequence& dy, bool need_input_grad = true);

  void init(Rng& rng);
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }

  Parameter weight;  // [out x in x 3]
  Parameter bias;    // [out x 1]

 private:
  Matrix im2col(const Matrix& x) const;
  Matrix col2im(const Matrix& cols, Eigen::Index len) const;

  Padding padding_ = Padding::kZero;
  Matrix columns_;  // im2col of the whole batch, samples side by side
  std::vector<Eigen::Index> offsets_;
};

class Relu {
 public:
  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& dy) const;
  Sequence forward(const Sequence& x);
  Sequence backward(const Sequence& dy) const;

 private:
  Matrix mask_;
  Sequence seq_mask_;
};

/// Numerically stable logistic function.
double sigmoid(double z);
Matrix sigmoid(const Matrix& z);

/// Non-overlapping max pooling of width 2 along length; an odd final sample
/// is dropped.
class MaxPool2 {
 public:
  Sequence forward(const Sequence& x);
  static Matrix apply(const Matrix& x);
  Sequence backward(const Sequence& dy) const;

 private:
  std::vector<std::vector<Eigen::Index>> argmax_;
  std::vector<Eigen::Index> input_len_;
  Eigen::Index channels_ = 0;
};

/// Concatenates the per-channel mean and max over length: [batch x 2C].
class GlobalAvgMaxPool {
 public:
  Matrix forward(const Sequence& x);
  /// One item: returns a row vector of length 2C.
  static Eigen::RowVectorXd apply(const Matrix& x);
  Sequence backward(const Matrix& dy) const;

 private:
  std::vector<std::vector<Eigen::Index>> argmax_;
  std::vector<Eigen::Index> input_len_;
  Eigen::Index channels_ = 0;
};

struct LossResult {
  double loss = 0.0;
  Vector grad;  // dLoss/dz
};

/// Mean over the batch of
///   -[pos_weight * y * log s(z) + (1 - y) * log(1 - s(z))]
/// evaluated with softplus so any finite z is safe. Targets may be soft.
LossResult bce_with_logits(const Vector& logits, const Vector& targets, double pos_weight);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam. Moments are keyed by parameter order, so the same
/// parameter list must be passed on every step.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(std::span<Parameter* const> params, double lr);
  std::int64_t steps() const { return step_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

 private:
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

struct LrSchedule {
  double base_lr = 0.001;
  double decay = 0.1;
  int decay_every = 10;

  /// base_lr * decay^floor(epoch / decay_every)
  double at(int epoch) const;
};

double lr_at(int epoch, const LrSchedule& schedule = {});

struct MixupConfig {
  double beta_shape = 1.0;
  bool enabled = true;
};

/// Draws from Beta(a, a) as X / (X + Y) with X, Y ~ Gamma(a, 1).
double sample_beta(Rng& rng, double shape);

struct Mixed {
  Vector x;
  double y;
};

/// x = a*x1 + (1-a)*x2, y = a*y1 + (1-a)*y2 for a given weight.
Mixed mix(const Vector& x1, double y1, const Vector& x2, double y2, double alpha);
/// Same, with alpha drawn from Beta(cfg.beta_shape, cfg.beta_shape).
Mixed mixup(const Vector& x1, double y1, const Vector& x2, double y2, Rng& rng, const MixupConfig& cfg);

/// Anything the training loop can fit: flat rows in, one logit per row out.
class Trainable {
 public:
  virtual ~Trainable() = default;
  virtual Vector forward_logits(const Matrix& rows) = 0;
  /// Accumulates parameter gradients; returns dLoss/d(rows).
  virtual Matrix backward_logits(const Vector& dlogits, bool need_input_grad) = 0;
  virtual std::vector<Parameter*> parameters() = 0;

  void zero_grad();
};

}  // namespace coughfuse::nn
