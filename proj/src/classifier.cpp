#include "outflip/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "outflip/kernels.hpp"

namespace outflip {

using json = nlohmann::json;
namespace ops = gradnet::ops;

// ---------------------------------------------------------------------------
// TextModel

template <class T>
std::size_t TextModel<T>::predict(std::span<const TokenId> tokens) const {
  const auto z = logits(tokens);
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

template <class T>
T TextModel<T>::batch_loss(std::span<const LabeledExample> batch) const {
  T total = 0;
  for (const auto& ex : batch) total += loss(ex.tokens, static_cast<std::size_t>(ex.label));
  return total / static_cast<T>(batch.size());
}

template <class T>
T TextModel<T>::batch_gradient(std::span<const LabeledExample> batch) {
  for (auto* p : this->parameters()) p->zero_grad();
  const T scale = T{1} / static_cast<T>(batch.size());
  T total = 0;
  for (const auto& ex : batch) {
    total += accumulate_gradient(ex.tokens, static_cast<std::size_t>(ex.label), scale);
  }
  return total * scale;
}

// ---------------------------------------------------------------------------
// CnnConfig

std::size_t CnnConfig::min_length() const noexcept {
  return kernel_widths.empty() ? 1 : *std::max_element(kernel_widths.begin(), kernel_widths.end());
}

namespace {

json config_to_json(const CnnConfig& c) {
  return json{{"vocab_size", c.vocab_size},
              {"embedding_dim", c.embedding_dim},
              {"kernel_widths", c.kernel_widths},
              {"filters", c.filters},
              {"num_classes", c.num_classes},
              {"loss", std::string(gradnet::to_string(c.loss))},
              {"lmcl_scale", c.lmcl_scale},
              {"lmcl_margin", c.lmcl_margin},
              {"trainable_embedding", c.trainable_embedding},
              {"seed", c.seed}};
}

CnnConfig config_from_json(const json& j) {
  CnnConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.kernel_widths = j.at("kernel_widths").get<std::vector<std::size_t>>();
  c.filters = j.at("filters").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.loss = gradnet::parse_loss_kind(j.at("loss").get<std::string>());
  c.lmcl_scale = j.at("lmcl_scale").get<double>();
  c.lmcl_margin = j.at("lmcl_margin").get<double>();
  c.trainable_embedding = j.at("trainable_embedding").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

template <class T>
void glorot_uniform(Param<T>& p, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  Rng rng(seed);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : p.value) v = static_cast<T>(dist(rng));
}

}  // namespace

std::string CnnConfig::canonical() const { return config_to_json(*this).dump(); }

std::uint64_t CnnConfig::hash() const { return fnv1a(canonical()); }

// ---------------------------------------------------------------------------
// CnnClassifier

template <class T>
CnnClassifier<T>::CnnClassifier(const CnnConfig& config, const EmbeddingTable& table) : config_(config) {
  if (config_.vocab_size == 0) config_.vocab_size = table.rows();
  if (config_.embedding_dim == 0) config_.embedding_dim = table.dim();
  if (table.rows() != config_.vocab_size || table.dim() != config_.embedding_dim) {
    throw Error("CnnClassifier: embedding table does not match the model shape");
  }
  if (config_.num_classes < 1) throw Error("CnnClassifier: need at least one class");
  if (config_.kernel_widths.empty() || config_.filters == 0) throw Error("CnnClassifier: empty conv bank");
  cosine_head_ = config_.loss == LossKind::lmcl;
  const std::size_t d = config_.embedding_dim;
  const std::size_t f = config_.filters;

  Param<T> emb("embedding", {config_.vocab_size, d}, config_.trainable_embedding);
  std::transform(table.values().begin(), table.values().end(), emb.value.begin(),
                 [](double v) { return static_cast<T>(v); });
  params_.push_back(std::move(emb));

  std::uint64_t slot = 0;
  for (auto w : config_.kernel_widths) {
    Param<T> weight("conv" + std::to_string(w) + ".weight", {f, w * d});
    glorot_uniform(weight, w * d, w * f, derive_seed(config_.seed, ++slot));
    params_.push_back(std::move(weight));
    params_.emplace_back("conv" + std::to_string(w) + ".bias", std::vector<std::size_t>{f});
  }
  const std::size_t h = config_.feature_dim();
  Param<T> dense("dense.weight", {config_.num_classes, h});
  glorot_uniform(dense, h, config_.num_classes, derive_seed(config_.seed, ++slot));
  dense_index_ = params_.size();
  params_.push_back(std::move(dense));
  if (!cosine_head_) params_.emplace_back("dense.bias", std::vector<std::size_t>{config_.num_classes});
}

template <class T>
std::vector<Param<T>*> CnnClassifier<T>::parameters() {
  std::vector<Param<T>*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

template <class T>
Matrix<T> CnnClassifier<T>::embed(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw Error("CnnClassifier: empty sentence");
  for (auto t : tokens) {
    if (t >= config_.vocab_size) throw Error("CnnClassifier: token id out of range");
  }
  Matrix<T> x;
  ops::gather(params_.front(), tokens, x);
  return x;
}

template <class T>
void CnnClassifier<T>::forward(Matrix<T> x, Forward& fw) const {
  if (x.rows == 0) throw Error("CnnClassifier: empty sentence");
  if (x.cols != config_.embedding_dim) throw Error("CnnClassifier: input width mismatch");
  const std::size_t min_len = config_.min_length();
  if (x.rows < min_len) {
    x.data.resize(min_len * x.cols, T{0});
    x.rows = min_len;
  }
  fw.x = std::move(x);
  const std::size_t f = config_.filters;
  const std::size_t nb = config_.kernel_widths.size();
  fw.conv.resize(nb);
  fw.argmax.assign(nb, std::vector<std::size_t>(f));
  fw.pooled.assign(nb * f, T{0});
  for (std::size_t b = 0; b < nb; ++b) {
    const auto& w = params_[1 + 2 * b];
    const auto& bias = params_[2 + 2 * b];
    ops::conv1d_forward<T>(fw.x, w.value, bias.value, config_.kernel_widths[b], f, fw.conv[b]);
    ops::max_over_time_forward<T>(fw.conv[b], std::span<T>(fw.pooled).subspan(b * f, f), fw.argmax[b]);
  }
  fw.h.assign(fw.pooled.size(), T{0});
  ops::relu_forward<T>(fw.pooled, fw.h);
  fw.head.assign(config_.num_classes, T{0});
  const auto& dense = params_[dense_index_];
  if (cosine_head_) {
    // An all-zero feature vector has no direction; its cosines are zero.
    if (kernels::dot(std::span<const T>(fw.h), std::span<const T>(fw.h)) > T{0}) {
      ops::cosine_dense_forward<T>(dense.value, fw.h, fw.head);
    }
  } else {
    ops::dense_forward<T>(dense.value, params_[dense_index_ + 1].value, fw.h, fw.head);
  }
}

template <class T>
std::vector<T> CnnClassifier<T>::outputs_to_logits(const std::vector<T>& head) const {
  if (!cosine_head_) return head;
  std::vector<T> out(head);
  for (auto& v : out) v *= static_cast<T>(config_.lmcl_scale);
  return out;
}

template <class T>
T CnnClassifier<T>::head_loss(const Forward& fw, std::size_t label, std::vector<T>& grad) const {
  if (label >= config_.num_classes) throw Error("CnnClassifier: label out of range");
  grad.assign(fw.head.size(), T{0});
  switch (config_.loss) {
    case LossKind::softmax_ce: return ops::softmax_ce<T>(fw.head, label, grad);
    case LossKind::sigmoid_bce: return ops::sigmoid_bce<T>(fw.head, label, grad);
    case LossKind::lmcl:
      return ops::margin_softmax<T>(fw.head, label, static_cast<T>(config_.lmcl_scale),
                                    static_cast<T>(config_.lmcl_margin), grad);
  }
  return T{0};
}

template <class T>
void CnnClassifier<T>::backward(const Forward& fw, std::span<const T> grad_head,
                                const std::vector<std::span<T>>& sinks, Matrix<T>* grad_x) const {
  const std::size_t f = config_.filters;
  std::vector<T> grad_h(fw.h.size(), T{0});
  const auto& dense = params_[dense_index_];
  if (cosine_head_) {
    if (kernels::dot(std::span<const T>(fw.h), std::span<const T>(fw.h)) > T{0}) {
      ops::cosine_dense_backward<T>(dense.value, fw.h, fw.head, grad_head, sinks[dense_index_], grad_h);
    }
  } else {
    ops::dense_backward<T>(dense.value, fw.h, grad_head, sinks[dense_index_], sinks[dense_index_ + 1],
                           grad_h);
  }
  std::vector<T> grad_pooled(fw.pooled.size(), T{0});
  ops::relu_backward<T>(fw.pooled, grad_h, grad_pooled);
  for (std::size_t b = 0; b < config_.kernel_widths.size(); ++b) {
    std::span<const T> g = std::span<const T>(grad_pooled).subspan(b * f, f);
    if (std::all_of(g.begin(), g.end(), [](T v) { return v == T{0}; })) continue;
    Matrix<T> grad_conv(fw.conv[b].rows, f);
    ops::max_over_time_backward<T>(fw.argmax[b], g, grad_conv);
    const auto& w = params_[1 + 2 * b];
    auto gw = sinks[1 + 2 * b];
    auto gb = sinks[2 + 2 * b];
    if (gw.empty() && gb.empty() && !grad_x) continue;
    // conv1d_backward always writes weight/bias grads; route skipped ones to scratch.
    std::vector<T> scratch_w, scratch_b;
    if (gw.empty()) {
      scratch_w.assign(w.size(), T{0});
      gw = scratch_w;
    }
    if (gb.empty()) {
      scratch_b.assign(f, T{0});
      gb = scratch_b;
    }
    ops::conv1d_backward<T>(fw.x, w.value, config_.kernel_widths[b], f, grad_conv, gw, gb, grad_x);
  }
}

template <class T>
std::vector<T> CnnClassifier<T>::logits(std::span<const TokenId> tokens) const {
  return logits_embedded(embed(tokens));
}

template <class T>
std::vector<T> CnnClassifier<T>::logits_embedded(const Matrix<T>& rows) const {
  Forward fw;
  forward(rows, fw);
  return outputs_to_logits(fw.head);
}

template <class T>
std::vector<T> CnnClassifier<T>::features(std::span<const TokenId> tokens) const {
  Forward fw;
  forward(embed(tokens), fw);
  return fw.h;
}

template <class T>
T CnnClassifier<T>::loss(std::span<const TokenId> tokens, std::size_t label) const {
  return loss_embedded(embed(tokens), label);
}

template <class T>
T CnnClassifier<T>::loss_embedded(const Matrix<T>& rows, std::size_t label) const {
  Forward fw;
  forward(rows, fw);
  std::vector<T> grad;
  return head_loss(fw, label, grad);
}

template <class T>
T CnnClassifier<T>::input_gradient(std::span<const TokenId> tokens, std::size_t label,
                                   Matrix<T>& grad) const {
  Forward fw;
  forward(embed(tokens), fw);
  std::vector<T> grad_head;
  const T value = head_loss(fw, label, grad_head);
  Matrix<T> grad_x(fw.x.rows, fw.x.cols);
  const std::vector<std::span<T>> no_sinks(params_.size());
  backward(fw, grad_head, no_sinks, &grad_x);
  grad = Matrix<T>(tokens.size(), fw.x.cols);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == Vocab::kPad) continue;
    std::copy_n(grad_x.row(i).data(), grad_x.cols, grad.row(i).data());
  }
  return value;
}

template <class T>
T CnnClassifier<T>::accumulate_gradient(std::span<const TokenId> tokens, std::size_t label, T scale) {
  Forward fw;
  forward(embed(tokens), fw);
  std::vector<T> grad_head;
  const T value = head_loss(fw, label, grad_head);
  for (auto& g : grad_head) g *= scale;
  std::vector<std::span<T>> sinks(params_.size());
  for (std::size_t p = 1; p < params_.size(); ++p) {
    if (params_[p].trainable) sinks[p] = params_[p].grad;
  }
  const bool embed_grads = params_.front().trainable;
  Matrix<T> grad_x;
  if (embed_grads) grad_x = Matrix<T>(fw.x.rows, fw.x.cols);
  backward(fw, grad_head, sinks, embed_grads ? &grad_x : nullptr);
  if (embed_grads) {
    grad_x.rows = tokens.size();
    grad_x.data.resize(tokens.size() * grad_x.cols);
    ops::scatter_add<T>(tokens, grad_x, params_.front());
  }
  return value;
}

template <class T>
CnnClassifier<T> CnnClassifier<T>::with_extra_class() const {
  CnnClassifier<T> out(*this);
  const std::size_t h = config_.feature_dim();
  auto& dense = out.params_[out.dense_index_];
  const std::size_t old_size = dense.value.size();
  dense.shape[0] += 1;
  dense.value.resize(old_size + h, T{0});
  dense.grad.assign(dense.value.size(), T{0});
  if (cosine_head_) {
    Rng rng(derive_seed(config_.seed, 0x00dULL));
    const double limit = std::sqrt(6.0 / static_cast<double>(h + config_.num_classes + 1));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t k = old_size; k < dense.value.size(); ++k) dense.value[k] = static_cast<T>(dist(rng));
  } else {
    auto& bias = out.params_[out.dense_index_ + 1];
    bias.shape[0] += 1;
    bias.value.push_back(T{0});
    bias.grad.assign(bias.value.size(), T{0});
  }
  out.config_.num_classes += 1;
  return out;
}

// ---------------------------------------------------------------------------
// Training

template <class T>
double accuracy(const TextModel<T>& model, std::span<const LabeledExample> examples) {
  if (examples.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t hits = 0;
  for (const auto& ex : examples) {
    if (model.predict(ex.tokens) == static_cast<std::size_t>(ex.label)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

template <class T>
TrainRecord fit(CnnClassifier<T>& model, std::span<const LabeledExample> train,
                std::span<const LabeledExample> dev, const TrainConfig& config) {
  if (train.empty() || dev.empty()) throw Error("train: train and dev splits must be nonempty");
  if (config.batch_size == 0) throw Error("train: batch size must be positive");
  for (const auto* split : {&train, &dev}) {
    for (const auto& ex : *split) {
      if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= model.num_classes()) {
        throw Error("train: example " + std::to_string(ex.example_id) + " has a label outside the model");
      }
    }
  }
  auto params = model.parameters();
  auto adam = gradnet::make_adam_state<T>(params);
  std::vector<std::vector<T>> best(params.size());
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(config.seed);

  TrainRecord record;
  record.best_dev_accuracy = -1.0;
  record.stop_reason = "epoch_cap";
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double lr = gradnet::lr_schedule(config.learning_rate, epoch, config.lr_decay, config.decay_every);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      for (auto* p : params) {
        if (p->trainable) p->zero_grad();
      }
      const T scale = T{1} / static_cast<T>(end - start);
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& ex = train[order[k]];
        batch_loss += static_cast<double>(model.accumulate_gradient(ex.tokens, static_cast<std::size_t>(ex.label), scale));
      }
      if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << "train: non-finite loss at epoch " << epoch << ", batch example ids:";
        for (std::size_t k = start; k < end; ++k) msg << ' ' << train[order[k]].example_id;
        throw Error(msg.str());
      }
      epoch_loss += batch_loss;
      gradnet::adam_step<T>(params, adam, lr);
    }
    const double dev_acc = accuracy(model, dev);
    if (std::isnan(dev_acc)) throw Error("train: dev accuracy is NaN at epoch " + std::to_string(epoch));
    record.epochs.push_back({epoch, epoch_loss / static_cast<double>(train.size()), dev_acc, lr});
    if (dev_acc > record.best_dev_accuracy) {
      record.best_dev_accuracy = dev_acc;
      record.chosen_epoch = epoch;
      since_best = 0;
      for (std::size_t p = 0; p < params.size(); ++p) {
        if (params[p]->trainable) best[p] = params[p]->value;
      }
    } else if (++since_best >= config.patience) {
      record.stop_reason = "early_stop";
      break;
    }
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (params[p]->trainable && !best[p].empty()) params[p]->value = best[p];
    params[p]->zero_grad();
  }
  return record;
}

template <class T>
Trained<T> train_classifier(const CnnConfig& model_config, const EmbeddingTable& table,
                            std::span<const LabeledExample> train, std::span<const LabeledExample> dev,
                            const TrainConfig& config) {
  CnnClassifier<T> model(model_config, table);
  auto record = fit(model, train, dev, config);
  return {std::move(model), std::move(record)};
}

// ---------------------------------------------------------------------------
// Gradient views

template <class T>
Matrix<T> embedding_input_gradient(const TextModel<T>& model, std::span<const TokenId> tokens,
                                   std::size_t label) {
  Matrix<T> grad;
  model.input_gradient(tokens, label, grad);
  return grad;
}

template <class T>
T flip_score(const TextModel<T>& model, std::span<const TokenId> tokens, std::size_t position,
             TokenId candidate, const Matrix<T>& input_grad) {
  if (position >= tokens.size()) throw Error("flip_score: position out of range");
  const auto& emb = model.embedding();
  const std::size_t d = model.embedding_dim();
  const T* eb = emb.value.data() + static_cast<std::size_t>(candidate) * d;
  const T* ea = emb.value.data() + static_cast<std::size_t>(tokens[position]) * d;
  std::vector<T> diff(d);
  for (std::size_t k = 0; k < d; ++k) diff[k] = eb[k] - ea[k];
  return kernels::dot(std::span<const T>(diff), input_grad.row(position));
}

template <class T>
T onehot_direction_score(const TextModel<T>& model, std::span<const TokenId> tokens, std::size_t label,
                         std::size_t position, TokenId candidate) {
  return flip_score(model, tokens, position, candidate, embedding_input_gradient(model, tokens, label));
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kMagic[8] = {'O', 'F', 'C', 'K', 'P', 'T', '0', '1'};

template <class T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}
}  // namespace

template <class T>
void save_checkpoint(const std::filesystem::path& path, const CnnClassifier<T>& model, const Vocab* vocab) {
  json header;
  header["format"] = "outflip-checkpoint";
  header["version"] = 1;
  header["config"] = config_to_json(model.config());
  header["config_hash"] = hex64(model.config().hash());
  header["dtype"] = dtype_name<T>();
  if (vocab) {
    header["vocab_hash"] = hex64(vocab->hash());
    header["vocab"] = std::vector<std::string>(vocab->words().begin() + Vocab::kReservedCount,
                                               vocab->words().end());
  }
  std::size_t offset = 0;
  json table = json::array();
  for (const auto& p : model.params()) {
    table.push_back({{"name", p.name}, {"shape", p.shape}, {"trainable", p.trainable},
                     {"offset", offset}, {"count", p.size()}});
    offset += p.size();
  }
  header["params"] = table;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : model.params()) {
    out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.size() * sizeof(T)));
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

template <class T>
CnnClassifier<T> load_checkpoint(const std::filesystem::path& path, std::vector<std::string>* vocab_words) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw Error(path.string() + ": not an outflip checkpoint");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error(path.string() + ": truncated header");
  const json header = json::parse(text);
  if (header.at("dtype").get<std::string>() != dtype_name<T>()) {
    throw Error(path.string() + ": checkpoint dtype " + header.at("dtype").get<std::string>() +
                " does not match the requested precision");
  }
  CnnClassifier<T> model;
  model.config_ = config_from_json(header.at("config"));
  if (hex64(model.config_.hash()) != header.at("config_hash").get<std::string>()) {
    throw Error(path.string() + ": config hash mismatch");
  }
  model.cosine_head_ = model.config_.loss == LossKind::lmcl;
  for (const auto& entry : header.at("params")) {
    Param<T> p(entry.at("name").get<std::string>(), entry.at("shape").get<std::vector<std::size_t>>(),
               entry.at("trainable").get<bool>());
    if (p.size() != entry.at("count").get<std::size_t>()) throw Error(path.string() + ": bad param shape");
    in.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.size() * sizeof(T)));
    if (!in) throw Error(path.string() + ": truncated parameter data");
    if (p.name == "dense.weight") model.dense_index_ = model.params_.size();
    model.params_.push_back(std::move(p));
  }
  const std::size_t expected = 1 + 2 * model.config_.kernel_widths.size() + (model.cosine_head_ ? 1 : 2);
  if (model.params_.size() != expected) throw Error(path.string() + ": unexpected parameter count");
  if (header.contains("vocab")) {
    auto words = header.at("vocab").get<std::vector<std::string>>();
    if (hex64(Vocab::from_words(words).hash()) != header.at("vocab_hash").get<std::string>()) {
      throw Error(path.string() + ": vocab hash mismatch");
    }
    if (vocab_words) *vocab_words = std::move(words);
  }
  return model;
}

#define OUTFLIP_INSTANTIATE(T)                                                                          \
  template class TextModel<T>;                                                                          \
  template class CnnClassifier<T>;                                                                      \
  template double accuracy<T>(const TextModel<T>&, std::span<const LabeledExample>);                    \
  template TrainRecord fit<T>(CnnClassifier<T>&, std::span<const LabeledExample>,                       \
                              std::span<const LabeledExample>, const TrainConfig&);                     \
  template Trained<T> train_classifier<T>(const CnnConfig&, const EmbeddingTable&,                      \
                                          std::span<const LabeledExample>,                              \
                                          std::span<const LabeledExample>, const TrainConfig&);         \
  template Matrix<T> embedding_input_gradient<T>(const TextModel<T>&, std::span<const TokenId>,         \
                                                 std::size_t);                                          \
  template T onehot_direction_score<T>(const TextModel<T>&, std::span<const TokenId>, std::size_t,      \
                                       std::size_t, TokenId);                                           \
  template T flip_score<T>(const TextModel<T>&, std::span<const TokenId>, std::size_t, TokenId,        \
                           const Matrix<T>&);                                                           \
  template void save_checkpoint<T>(const std::filesystem::path&, const CnnClassifier<T>&, const Vocab*); \
  template CnnClassifier<T> load_checkpoint<T>(const std::filesystem::path&, std::vector<std::string>*);

OUTFLIP_INSTANTIATE(float)
OUTFLIP_INSTANTIATE(double)

#undef OUTFLIP_INSTANTIATE

}  // namespace outflip
