#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "outflip/corpus.hpp"
#include "outflip/embeddings.hpp"
#include "outflip/gradnet.hpp"

namespace outflip {

using gradnet::LossKind;
using gradnet::Matrix;
using gradnet::Param;

// A word-level classifier as seen by the flip engine and the detectors:
// logits, losses and the loss gradient with respect to the embedding rows
// actually fed at each position. Example labels are class indices.
template <class T>
class TextModel : public gradnet::Differentiable<T> {
 public:
  virtual std::size_t num_classes() const = 0;
  virtual std::size_t embedding_dim() const = 0;
  virtual LossKind loss_kind() const = 0;
  virtual const Param<T>& embedding() const = 0;

  // Pre-softmax outputs; for cosine heads these are scale * cosine.
  virtual std::vector<T> logits(std::span<const TokenId> tokens) const = 0;
  // Same, from explicit per-position input rows (n x d).
  virtual std::vector<T> logits_embedded(const Matrix<T>& rows) const = 0;
  // The vector the output head consumes.
  virtual std::vector<T> features(std::span<const TokenId> tokens) const = 0;

  virtual T loss(std::span<const TokenId> tokens, std::size_t label) const = 0;
  virtual T loss_embedded(const Matrix<T>& rows, std::size_t label) const = 0;
  // grad becomes n x d with row i = dL/de_i; rows at PAD positions are zero.
  virtual T input_gradient(std::span<const TokenId> tokens, std::size_t label, Matrix<T>& grad) const = 0;
  // Adds scale * dL/dparam into every trainable parameter's grad.
  virtual T accumulate_gradient(std::span<const TokenId> tokens, std::size_t label, T scale) = 0;

  std::size_t predict(std::span<const TokenId> tokens) const;

  T batch_loss(std::span<const LabeledExample> batch) const override;
  T batch_gradient(std::span<const LabeledExample> batch) override;
};

struct CnnConfig {
  std::size_t vocab_size = 0;
  std::size_t embedding_dim = 0;
  std::vector<std::size_t> kernel_widths{2, 3, 4, 5};
  std::size_t filters = 32;
  std::size_t num_classes = 0;
  LossKind loss = LossKind::softmax_ce;
  double lmcl_scale = 30.0;
  double lmcl_margin = 0.35;
  bool trainable_embedding = false;
  std::uint64_t seed = 1;

  std::size_t feature_dim() const noexcept { return kernel_widths.size() * filters; }
  std::size_t min_length() const noexcept;
  std::string canonical() const;
  std::uint64_t hash() const;
};

// Embedding lookup, one valid convolution bank per kernel width, max-pool
// over time, ReLU, then a dense head (with bias) or, for the LMCL loss, a
// bias-free cosine head. Sentences shorter than the widest kernel are padded
// with PAD, whose row is zero.
template <class T>
class CnnClassifier final : public TextModel<T> {
 public:
  CnnClassifier(const CnnConfig& config, const EmbeddingTable& table);

  const CnnConfig& config() const noexcept { return config_; }
  std::size_t num_classes() const override { return config_.num_classes; }
  std::size_t embedding_dim() const override { return config_.embedding_dim; }
  LossKind loss_kind() const override { return config_.loss; }
  const Param<T>& embedding() const override { return params_.front(); }

  std::vector<T> logits(std::span<const TokenId> tokens) const override;
  std::vector<T> logits_embedded(const Matrix<T>& rows) const override;
  std::vector<T> features(std::span<const TokenId> tokens) const override;
  T loss(std::span<const TokenId> tokens, std::size_t label) const override;
  T loss_embedded(const Matrix<T>& rows, std::size_t label) const override;
  T input_gradient(std::span<const TokenId> tokens, std::size_t label, Matrix<T>& grad) const override;
  T accumulate_gradient(std::span<const TokenId> tokens, std::size_t label, T scale) override;
  std::vector<Param<T>*> parameters() override;

  std::vector<Param<T>>& params() noexcept { return params_; }
  const std::vector<Param<T>>& params() const noexcept { return params_; }
  Param<T>& dense_weight() { return params_[dense_index_]; }
  const Param<T>& dense_weight() const { return params_[dense_index_]; }

  // Copy with one more output row (the reserved OOD class). The new row is
  // zero for the linear head and seeded random for the cosine head.
  CnnClassifier with_extra_class() const;

 private:
  struct Forward {
    Matrix<T> x;
    std::vector<Matrix<T>> conv;
    std::vector<std::vector<std::size_t>> argmax;
    std::vector<T> pooled;
    std::vector<T> h;
    std::vector<T> head;  // logits, or cosines for the cosine head
  };

  CnnClassifier() = default;
  void forward(Matrix<T> x, Forward& fw) const;
  std::vector<T> outputs_to_logits(const std::vector<T>& head) const;
  T head_loss(const Forward& fw, std::size_t label, std::vector<T>& grad) const;
  // sinks: one grad span per parameter (empty to skip); grad_x: padded rows.
  void backward(const Forward& fw, std::span<const T> grad_head, const std::vector<std::span<T>>& sinks,
                Matrix<T>* grad_x) const;
  Matrix<T> embed(std::span<const TokenId> tokens) const;

  CnnConfig config_;
  std::vector<Param<T>> params_;  // embedding, (conv W, conv b) per width, dense W, [dense b]
  std::size_t dense_index_ = 0;
  bool cosine_head_ = false;

  template <class U>
  friend CnnClassifier<U> load_checkpoint(const std::filesystem::path& path, std::vector<std::string>* vocab_words);
};

struct TrainConfig {
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  double lr_decay = 0.8;
  std::size_t decay_every = 2;
  std::size_t patience = 5;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 1;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
  double learning_rate = 0.0;
};

struct TrainRecord {
  std::vector<EpochRecord> epochs;
  std::size_t chosen_epoch = 0;
  double best_dev_accuracy = 0.0;
  std::string stop_reason;
};

template <class T>
double accuracy(const TextModel<T>& model, std::span<const LabeledExample> examples);

// Adam with the step-decay schedule, early stopping on dev accuracy; the
// model is left holding the best-dev-accuracy parameters.
template <class T>
TrainRecord fit(CnnClassifier<T>& model, std::span<const LabeledExample> train,
                std::span<const LabeledExample> dev, const TrainConfig& config);

template <class T>
struct Trained {
  CnnClassifier<T> model;
  TrainRecord record;
};

template <class T>
Trained<T> train_classifier(const CnnConfig& model_config, const EmbeddingTable& table,
                            std::span<const LabeledExample> train, std::span<const LabeledExample> dev,
                            const TrainConfig& config);

// Gradient of the loss with respect to the embedding fed at every position.
template <class T>
Matrix<T> embedding_input_gradient(const TextModel<T>& model, std::span<const TokenId> tokens,
                                   std::size_t label);

// First-order loss change for flipping position i to `candidate`:
// dot(e(candidate) - e(current), dL/de_i), using the model's embedding rows.
template <class T>
T onehot_direction_score(const TextModel<T>& model, std::span<const TokenId> tokens, std::size_t label,
                         std::size_t position, TokenId candidate);
// Same score from a precomputed embedding_input_gradient.
template <class T>
T flip_score(const TextModel<T>& model, std::span<const TokenId> tokens, std::size_t position,
             TokenId candidate, const Matrix<T>& input_grad);

// Binary checkpoint: "OFCKPT01", u64 header length, JSON header (config,
// hashes, parameter table, optional vocabulary), raw little-endian values.
template <class T>
void save_checkpoint(const std::filesystem::path& path, const CnnClassifier<T>& model,
                     const Vocab* vocab = nullptr);
template <class T>
CnnClassifier<T> load_checkpoint(const std::filesystem::path& path,
                                 std::vector<std::string>* vocab_words = nullptr);

}  // namespace outflip
