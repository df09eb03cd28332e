#include "outflip/gradnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "outflip/kernels.hpp"

namespace outflip::gradnet {

template <class T>
Param<T>::Param(std::string n, std::vector<std::size_t> s, bool train)
    : name(std::move(n)), shape(std::move(s)), trainable(train) {
  std::size_t total = 1;
  for (auto d : shape) total *= d;
  value.assign(total, T{0});
  grad.assign(total, T{0});
}

template <class T>
void Param<T>::zero_grad() noexcept {
  std::fill(grad.begin(), grad.end(), T{0});
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "softmax_ce" || name == "softmax") return LossKind::softmax_ce;
  if (name == "sigmoid_bce" || name == "sigmoid") return LossKind::sigmoid_bce;
  if (name == "lmcl") return LossKind::lmcl;
  throw Error("unknown loss kind: " + std::string(name));
}

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::softmax_ce: return "softmax_ce";
    case LossKind::sigmoid_bce: return "sigmoid_bce";
    case LossKind::lmcl: return "lmcl";
  }
  return "?";
}

namespace ops {

template <class T>
void gather(const Param<T>& table, std::span<const TokenId> tokens, Matrix<T>& out) {
  const std::size_t dim = table.shape.at(1);
  out = Matrix<T>(tokens.size(), dim);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::copy_n(table.value.data() + static_cast<std::size_t>(tokens[i]) * dim, dim, out.row(i).data());
  }
}

template <class T>
void scatter_add(std::span<const TokenId> tokens, const Matrix<T>& grad_rows, Param<T>& table) {
  const std::size_t dim = table.shape.at(1);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == Vocab::kPad || tokens[i] == Vocab::kMask) continue;
    std::span<T> dst(table.grad.data() + static_cast<std::size_t>(tokens[i]) * dim, dim);
    kernels::axpy(T{1}, grad_rows.row(i), dst);
  }
}

template <class T>
void conv1d_forward(const Matrix<T>& x, std::span<const T> weights, std::span<const T> bias,
                    std::size_t width, std::size_t filters, Matrix<T>& out) {
  if (x.rows < width) throw Error("conv1d: input shorter than kernel width");
  const std::size_t span_len = width * x.cols;
  const std::size_t steps = x.rows - width + 1;
  out = Matrix<T>(steps, filters);
  for (std::size_t t = 0; t < steps; ++t) {
    std::span<const T> window(x.data.data() + t * x.cols, span_len);
    auto dst = out.row(t);
    kernels::gemv(weights, filters, window, dst);
    for (std::size_t f = 0; f < filters; ++f) dst[f] += bias[f];
  }
}

template <class T>
void conv1d_backward(const Matrix<T>& x, std::span<const T> weights, std::size_t width,
                     std::size_t filters, const Matrix<T>& grad_out, std::span<T> grad_weights,
                     std::span<T> grad_bias, Matrix<T>* grad_x) {
  const std::size_t span_len = width * x.cols;
  for (std::size_t t = 0; t < grad_out.rows; ++t) {
    std::span<const T> window(x.data.data() + t * x.cols, span_len);
    for (std::size_t f = 0; f < filters; ++f) {
      const T g = grad_out(t, f);
      if (g == T{0}) continue;
      grad_bias[f] += g;
      kernels::axpy(g, window, grad_weights.subspan(f * span_len, span_len));
      if (grad_x) {
        std::span<T> gwin(grad_x->data.data() + t * x.cols, span_len);
        kernels::axpy(g, weights.subspan(f * span_len, span_len), gwin);
      }
    }
  }
}

template <class T>
void max_over_time_forward(const Matrix<T>& in, std::span<T> out, std::span<std::size_t> argmax) {
  for (std::size_t f = 0; f < in.cols; ++f) {
    std::size_t best = 0;
    T best_v = in(0, f);
    for (std::size_t t = 1; t < in.rows; ++t) {
      if (in(t, f) > best_v) {
        best_v = in(t, f);
        best = t;
      }
    }
    out[f] = best_v;
    argmax[f] = best;
  }
}

template <class T>
void max_over_time_backward(std::span<const std::size_t> argmax, std::span<const T> grad_out,
                            Matrix<T>& grad_in) {
  for (std::size_t f = 0; f < argmax.size(); ++f) grad_in(argmax[f], f) += grad_out[f];
}

template <class T>
void relu_forward(std::span<const T> in, std::span<T> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
}

template <class T>
void relu_backward(std::span<const T> in, std::span<const T> grad_out, std::span<T> grad_in) {
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] > T{0}) grad_in[i] += grad_out[i];
  }
}

template <class T>
void dense_forward(std::span<const T> weights, std::span<const T> bias, std::span<const T> h,
                   std::span<T> out) {
  kernels::gemv(weights, out.size(), h, out);
  if (!bias.empty()) {
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += bias[c];
  }
}

template <class T>
void dense_backward(std::span<const T> weights, std::span<const T> h, std::span<const T> grad_out,
                    std::span<T> grad_weights, std::span<T> grad_bias, std::span<T> grad_h) {
  const std::size_t width = h.size();
  for (std::size_t c = 0; c < grad_out.size(); ++c) {
    const T g = grad_out[c];
    if (g == T{0}) continue;
    if (!grad_bias.empty()) grad_bias[c] += g;
    if (!grad_weights.empty()) kernels::axpy(g, h, grad_weights.subspan(c * width, width));
    if (!grad_h.empty()) kernels::axpy(g, weights.subspan(c * width, width), grad_h);
  }
}

template <class T>
void cosine_dense_forward(std::span<const T> weights, std::span<const T> h, std::span<T> out) {
  const std::size_t width = h.size();
  const T hn = std::sqrt(kernels::dot(h, h));
  if (hn == T{0}) throw Error("cosine head: zero-norm feature vector");
  for (std::size_t c = 0; c < out.size(); ++c) {
    auto w = weights.subspan(c * width, width);
    const T wn = std::sqrt(kernels::dot(w, w));
    if (wn == T{0}) throw Error("cosine head: zero-norm weight row " + std::to_string(c));
    out[c] = kernels::dot(w, h) / (wn * hn);
  }
}

template <class T>
void cosine_dense_backward(std::span<const T> weights, std::span<const T> h, std::span<const T> cosines,
                           std::span<const T> grad_out, std::span<T> grad_weights, std::span<T> grad_h) {
  const std::size_t width = h.size();
  const T hn = std::sqrt(kernels::dot(h, h));
  for (std::size_t c = 0; c < grad_out.size(); ++c) {
    const T g = grad_out[c];
    if (g == T{0}) continue;
    auto w = weights.subspan(c * width, width);
    const T wn = std::sqrt(kernels::dot(w, w));
    const T inv = T{1} / (wn * hn);
    if (!grad_weights.empty()) {
      auto gw = grad_weights.subspan(c * width, width);
      kernels::axpy(g * inv, h, gw);
      kernels::axpy(-g * cosines[c] / (wn * wn), w, gw);
    }
    if (!grad_h.empty()) {
      kernels::axpy(g * inv, w, grad_h);
      kernels::axpy(-g * cosines[c] / (hn * hn), h, grad_h);
    }
  }
}

template <class T>
T softmax_ce(std::span<const T> logits, std::size_t label, std::span<T> grad) {
  const T mx = *std::max_element(logits.begin(), logits.end());
  T others = 0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    grad[j] = std::exp(logits[j] - mx);
    if (j != label) others += grad[j];
  }
  const T sum = grad[label] + others;
  for (std::size_t j = 0; j < logits.size(); ++j) grad[j] /= sum;
  if (logits[label] == mx) {
    // Truth on top: work from the other classes' mass so a small loss keeps
    // its relative precision.
    grad[label] = -others / sum;
    return std::log1p(others);
  }
  grad[label] -= T{1};
  return std::log(sum) + mx - logits[label];
}

template <class T>
T sigmoid_bce(std::span<const T> logits, std::size_t label, std::span<T> grad) {
  T loss = 0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const T z = logits[j];
    const T target = j == label ? T{1} : T{0};
    // softplus(z) - target * z, computed stably
    loss += std::max(z, T{0}) + std::log1p(std::exp(-std::abs(z))) - target * z;
    grad[j] = sigmoid(z) - target;
  }
  return loss;
}

template <class T>
T margin_softmax(std::span<const T> cosines, std::size_t label, T scale, T margin, std::span<T> grad) {
  std::vector<T> z(cosines.begin(), cosines.end());
  z[label] -= margin;
  for (auto& v : z) v *= scale;
  const T loss = softmax_ce<T>(z, label, grad);
  for (auto& g : grad) g *= scale;
  return loss;
}

}  // namespace ops

template <class T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> p(logits.size());
  if (logits.empty()) return p;
  const T mx = *std::max_element(logits.begin(), logits.end());
  T sum = 0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    p[j] = std::exp(logits[j] - mx);
    sum += p[j];
  }
  for (auto& v : p) v /= sum;
  return p;
}

template <class T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <class T>
T lmcl_loss(const Matrix<T>& features, const Matrix<T>& weights, std::span<const std::size_t> labels,
            T scale, T margin, Matrix<T>* grad_features, Matrix<T>* grad_weights) {
  if (!(scale > T{0})) throw Error("lmcl_loss: scale must be positive");
  if (!(margin >= T{0} && margin < T{1})) throw Error("lmcl_loss: margin must lie in [0, 1)");
  if (labels.size() != features.rows || features.rows == 0) throw Error("lmcl_loss: batch shape mismatch");
  const T inv_batch = T{1} / static_cast<T>(features.rows);
  std::vector<T> cosines(weights.rows), dcos(weights.rows);
  T total = 0;
  for (std::size_t b = 0; b < features.rows; ++b) {
    ops::cosine_dense_forward<T>(weights.data, features.row(b), cosines);
    total += ops::margin_softmax<T>(cosines, labels[b], scale, margin, dcos);
    if (grad_features || grad_weights) {
      for (auto& g : dcos) g *= inv_batch;
      std::span<T> gw = grad_weights ? std::span<T>(grad_weights->data) : std::span<T>();
      std::span<T> gh = grad_features ? grad_features->row(b) : std::span<T>();
      ops::cosine_dense_backward<T>(weights.data, features.row(b), cosines, dcos, gw, gh);
    }
  }
  return total * inv_batch;
}

template <class T>
T forward_backward(Differentiable<T>& model, std::span<const LabeledExample> batch) {
  if (batch.empty()) throw Error("forward_backward: empty batch");
  const T loss = model.batch_gradient(batch);
  if (!std::isfinite(static_cast<double>(loss))) {
    std::ostringstream msg;
    msg << "non-finite loss on batch with example ids:";
    for (const auto& ex : batch) msg << ' ' << ex.example_id;
    throw Error(msg.str());
  }
  return loss;
}

template <class T>
GradCheckResult finite_diff_check(Differentiable<T>& model, std::span<const LabeledExample> batch,
                                  double eps, std::size_t samples, std::uint64_t seed) {
  auto params = model.parameters();
  forward_backward(model, batch);
  std::vector<std::pair<std::size_t, std::size_t>> slots;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p]->trainable) continue;
    for (std::size_t i = 0; i < params[p]->size(); ++i) slots.emplace_back(p, i);
  }
  Rng rng(seed);
  std::shuffle(slots.begin(), slots.end(), rng);
  if (slots.size() > samples) slots.resize(samples);

  GradCheckResult result;
  for (auto [p, i] : slots) {
    const double analytic = static_cast<double>(params[p]->grad[i]);
    const T saved = params[p]->value[i];
    params[p]->value[i] = static_cast<T>(static_cast<double>(saved) + eps);
    const double up = static_cast<double>(model.batch_loss(batch));
    params[p]->value[i] = static_cast<T>(static_cast<double>(saved) - eps);
    const double down = static_cast<double>(model.batch_loss(batch));
    params[p]->value[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic - numeric) / denom);
    ++result.checked;
  }
  return result;
}

template <class T>
AdamState<T> make_adam_state(std::span<Param<T>* const> params, AdamConfig config) {
  AdamState<T> state;
  state.config = config;
  for (auto* p : params) {
    state.first_moment.emplace_back(p->size(), T{0});
    state.second_moment.emplace_back(p->size(), T{0});
  }
  return state;
}

template <class T>
void adam_step(std::span<Param<T>* const> params, AdamState<T>& state, double lr) {
  if (state.first_moment.size() != params.size()) throw Error("adam_step: state/param mismatch");
  ++state.step;
  const double b1 = state.config.beta1, b2 = state.config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const T eps = static_cast<T>(state.config.epsilon);
  const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
  const T step_size = static_cast<T>(lr / c1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto* param = params[p];
    if (!param->trainable) continue;
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    for (std::size_t i = 0; i < param->size(); ++i) {
      const T g = param->grad[i];
      m[i] = tb1 * m[i] + (T{1} - tb1) * g;
      v[i] = tb2 * v[i] + (T{1} - tb2) * g * g;
      param->value[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_c2 + eps);
    }
  }
}

double lr_schedule(double initial_lr, std::size_t epoch, double decay, std::size_t every) {
  return initial_lr * std::pow(decay, static_cast<double>(epoch / every));
}

#define OUTFLIP_INSTANTIATE(T)                                                                        \
  template struct Param<T>;                                                                           \
  template void ops::gather<T>(const Param<T>&, std::span<const TokenId>, Matrix<T>&);                \
  template void ops::scatter_add<T>(std::span<const TokenId>, const Matrix<T>&, Param<T>&);           \
  template void ops::conv1d_forward<T>(const Matrix<T>&, std::span<const T>, std::span<const T>,      \
                                       std::size_t, std::size_t, Matrix<T>&);                         \
  template void ops::conv1d_backward<T>(const Matrix<T>&, std::span<const T>, std::size_t,            \
                                        std::size_t, const Matrix<T>&, std::span<T>, std::span<T>,    \
                                        Matrix<T>*);                                                  \
  template void ops::max_over_time_forward<T>(const Matrix<T>&, std::span<T>, std::span<std::size_t>); \
  template void ops::max_over_time_backward<T>(std::span<const std::size_t>, std::span<const T>,      \
                                               Matrix<T>&);                                           \
  template void ops::relu_forward<T>(std::span<const T>, std::span<T>);                               \
  template void ops::relu_backward<T>(std::span<const T>, std::span<const T>, std::span<T>);          \
  template void ops::dense_forward<T>(std::span<const T>, std::span<const T>, std::span<const T>,     \
                                      std::span<T>);                                                  \
  template void ops::dense_backward<T>(std::span<const T>, std::span<const T>, std::span<const T>,    \
                                       std::span<T>, std::span<T>, std::span<T>);                     \
  template void ops::cosine_dense_forward<T>(std::span<const T>, std::span<const T>, std::span<T>);   \
  template void ops::cosine_dense_backward<T>(std::span<const T>, std::span<const T>,                 \
                                              std::span<const T>, std::span<const T>, std::span<T>,   \
                                              std::span<T>);                                          \
  template T ops::softmax_ce<T>(std::span<const T>, std::size_t, std::span<T>);                       \
  template T ops::sigmoid_bce<T>(std::span<const T>, std::size_t, std::span<T>);                      \
  template T ops::margin_softmax<T>(std::span<const T>, std::size_t, T, T, std::span<T>);             \
  template std::vector<T> softmax<T>(std::span<const T>);                                             \
  template T sigmoid<T>(T);                                                                           \
  template T lmcl_loss<T>(const Matrix<T>&, const Matrix<T>&, std::span<const std::size_t>, T, T,    \
                          Matrix<T>*, Matrix<T>*);                                                    \
  template T forward_backward<T>(Differentiable<T>&, std::span<const LabeledExample>);                \
  template GradCheckResult finite_diff_check<T>(Differentiable<T>&, std::span<const LabeledExample>,  \
                                                double, std::size_t, std::uint64_t);                  \
  template AdamState<T> make_adam_state<T>(std::span<Param<T>* const>, AdamConfig);                   \
  template void adam_step<T>(std::span<Param<T>* const>, AdamState<T>&, double);

OUTFLIP_INSTANTIATE(float)
OUTFLIP_INSTANTIATE(double)

#undef OUTFLIP_INSTANTIATE

}  // namespace outflip::gradnet
