#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "outflip/corpus.hpp"

// Minimal reverse-mode machinery for the sentence classifier: parameters
// with gradient storage, hand-derived forward/backward pairs for each
// primitive, the three training losses, Adam, the step-decay schedule and a
// central-difference gradient checker. Instantiated for float (training) and
// double (gradient checks).
namespace outflip::gradnet {

template <class T>
struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, std::vector<std::size_t> s, bool train = true);

  std::size_t size() const noexcept { return value.size(); }
  void zero_grad() noexcept;
};

// Row-major dense matrix.
template <class T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T{0}) {}

  std::span<T> row(std::size_t i) noexcept { return {data.data() + i * cols, cols}; }
  std::span<const T> row(std::size_t i) const noexcept { return {data.data() + i * cols, cols}; }
  T& operator()(std::size_t i, std::size_t j) noexcept { return data[i * cols + j]; }
  T operator()(std::size_t i, std::size_t j) const noexcept { return data[i * cols + j]; }
};

enum class LossKind { softmax_ce, sigmoid_bce, lmcl };

LossKind parse_loss_kind(std::string_view name);
std::string_view to_string(LossKind kind);

// ---------------------------------------------------------------------------
// Primitives. Backward functions accumulate (+=) into their gradient outputs.
namespace ops {

// out.row(i) = table.row(tokens[i])
template <class T>
void gather(const Param<T>& table, std::span<const TokenId> tokens, Matrix<T>& out);
// table.grad.row(tokens[i]) += grad_rows.row(i), skipping PAD and MASK.
template <class T>
void scatter_add(std::span<const TokenId> tokens, const Matrix<T>& grad_rows, Param<T>& table);

// Valid 1-D convolution over positions. x: L x d, weights: F x (width*d),
// bias: F, out: (L - width + 1) x F.
template <class T>
void conv1d_forward(const Matrix<T>& x, std::span<const T> weights, std::span<const T> bias,
                    std::size_t width, std::size_t filters, Matrix<T>& out);
template <class T>
void conv1d_backward(const Matrix<T>& x, std::span<const T> weights, std::size_t width,
                     std::size_t filters, const Matrix<T>& grad_out, std::span<T> grad_weights,
                     std::span<T> grad_bias, Matrix<T>* grad_x);

// Column-wise max over rows; ties go to the lowest row index.
template <class T>
void max_over_time_forward(const Matrix<T>& in, std::span<T> out, std::span<std::size_t> argmax);
template <class T>
void max_over_time_backward(std::span<const std::size_t> argmax, std::span<const T> grad_out,
                            Matrix<T>& grad_in);

template <class T>
void relu_forward(std::span<const T> in, std::span<T> out);
template <class T>
void relu_backward(std::span<const T> in, std::span<const T> grad_out, std::span<T> grad_in);

// out = W h + b; W: C x H. An empty bias means no bias term.
template <class T>
void dense_forward(std::span<const T> weights, std::span<const T> bias, std::span<const T> h,
                   std::span<T> out);
template <class T>
void dense_backward(std::span<const T> weights, std::span<const T> h, std::span<const T> grad_out,
                    std::span<T> grad_weights, std::span<T> grad_bias, std::span<T> grad_h);

// out_j = cos(W_j, h). Throws on a zero-norm h or weight row.
template <class T>
void cosine_dense_forward(std::span<const T> weights, std::span<const T> h, std::span<T> out);
template <class T>
void cosine_dense_backward(std::span<const T> weights, std::span<const T> h, std::span<const T> cosines,
                           std::span<const T> grad_out, std::span<T> grad_weights, std::span<T> grad_h);

// Losses for one example; write d loss / d input into grad and return the loss.
template <class T>
T softmax_ce(std::span<const T> logits, std::size_t label, std::span<T> grad);
template <class T>
T sigmoid_bce(std::span<const T> logits, std::size_t label, std::span<T> grad);
// Cross-entropy over s * (cos_j - m [j == label]).
template <class T>
T margin_softmax(std::span<const T> cosines, std::size_t label, T scale, T margin, std::span<T> grad);

}  // namespace ops

template <class T>
std::vector<T> softmax(std::span<const T> logits);
template <class T>
T sigmoid(T x);

// Large-margin cosine loss over a batch: features (B x F) and class weights
// (C x F) are L2-normalized, the label cosine is reduced by margin, and the
// mean softmax cross-entropy over scale * cosines is returned. Gradient
// outputs are optional and accumulate.
template <class T>
T lmcl_loss(const Matrix<T>& features, const Matrix<T>& weights, std::span<const std::size_t> labels,
            T scale, T margin, Matrix<T>* grad_features = nullptr, Matrix<T>* grad_weights = nullptr);

// ---------------------------------------------------------------------------

// A model whose scalar batch loss can be differentiated.
template <class T>
class Differentiable {
 public:
  virtual ~Differentiable() = default;
  virtual std::vector<Param<T>*> parameters() = 0;
  // Mean loss over the batch; no side effects.
  virtual T batch_loss(std::span<const LabeledExample> batch) const = 0;
  // Zeroes all grads, then stores d(mean loss)/d(param); returns the loss.
  virtual T batch_gradient(std::span<const LabeledExample> batch) = 0;
};

// Mean loss and gradients for a batch; throws with the batch's example ids
// when the loss is not finite.
template <class T>
T forward_backward(Differentiable<T>& model, std::span<const LabeledExample> batch);

// Compares analytic gradients with (L(p + eps) - L(p - eps)) / 2 eps on up to
// `samples` randomly chosen trainable scalars (all of them when fewer).
// Relative error is |a - n| / max(|a|, |n|, floor).
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

inline constexpr double kGradCheckFloor = 1e-4;

template <class T>
GradCheckResult finite_diff_check(Differentiable<T>& model, std::span<const LabeledExample> batch,
                                  double eps, std::size_t samples = 200, std::uint64_t seed = 7);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::uint64_t step = 0;
};

template <class T>
AdamState<T> make_adam_state(std::span<Param<T>* const> params, AdamConfig config = {});

// One bias-corrected Adam update; frozen params are left untouched.
template <class T>
void adam_step(std::span<Param<T>* const> params, AdamState<T>& state, double lr);

// initial_lr * decay^(floor(epoch / every))
double lr_schedule(double initial_lr, std::size_t epoch, double decay = 0.8, std::size_t every = 2);

}  // namespace outflip::gradnet
