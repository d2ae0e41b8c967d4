#pragma once

#include <charconv>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "whilter/attention.hpp"
#include "whilter/error.hpp"
#include "whilter/features.hpp"
#include "whilter/labels.hpp"
#include "whilter/optim.hpp"
#include "whilter/rng.hpp"
#include "whilter/tensor.hpp"

namespace whilter {

struct ModelConfig {
  std::size_t n_classes = kNumClasses;
  std::size_t encoder_layers = 12;
  std::size_t frames = 1500;
  std::size_t enc_dim = 768;
  std::size_t model_dim = 256;
  std::size_t tf_layers = 4;
  std::size_t tf_heads = 4;
  std::size_t ff_dim = 1024;
  std::size_t head_hidden = 256;
  double dropout_p = 0.1;
  bool positional_encoding = true;
  double layer_norm_eps = 1e-5;

  void validate() const {
    if (n_classes < 1) throw ConfigError("n_classes must be >= 1");
    if (encoder_layers < 1 || frames < 1 || enc_dim < 1 || model_dim < 1 || ff_dim < 1 || head_hidden < 1) {
      throw ConfigError("model dimensions must be positive");
    }
    if (tf_heads == 0 || model_dim % tf_heads != 0) {
      throw ConfigError("model_dim (" + std::to_string(model_dim) + ") must be divisible by tf_heads (" +
                        std::to_string(tf_heads) + ")");
    }
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("dropout_p must be in [0, 1)");
  }

  std::map<std::string, std::string> to_kv() const {
    auto num = [](double v) {
      char buf[32];
      auto res = std::to_chars(buf, buf + sizeof buf, v);
      return std::string(buf, res.ptr);
    };
    return {{"n_classes", std::to_string(n_classes)},
            {"encoder_layers", std::to_string(encoder_layers)},
            {"frames", std::to_string(frames)},
            {"enc_dim", std::to_string(enc_dim)},
            {"model_dim", std::to_string(model_dim)},
            {"tf_layers", std::to_string(tf_layers)},
            {"tf_heads", std::to_string(tf_heads)},
            {"ff_dim", std::to_string(ff_dim)},
            {"head_hidden", std::to_string(head_hidden)},
            {"dropout_p", num(dropout_p)},
            {"positional_encoding", positional_encoding ? "1" : "0"},
            {"layer_norm_eps", num(layer_norm_eps)}};
  }

  static ModelConfig from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    auto get = [&](const char* key) -> const std::string& {
      auto it = kv.find(key);
      if (it == kv.end()) throw ConfigError(std::string("model config missing key '") + key + "'");
      return it->second;
    };
    auto size = [&](const char* key) {
      const auto& s = get(key);
      std::size_t v = 0;
      auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ConfigError(std::string("bad integer for '") + key + "': " + s);
      }
      return v;
    };
    auto real = [&](const char* key) {
      const auto& s = get(key);
      double v = 0;
      auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ConfigError(std::string("bad number for '") + key + "': " + s);
      }
      return v;
    };
    c.n_classes = size("n_classes");
    c.encoder_layers = size("encoder_layers");
    c.frames = size("frames");
    c.enc_dim = size("enc_dim");
    c.model_dim = size("model_dim");
    c.tf_layers = size("tf_layers");
    c.tf_heads = size("tf_heads");
    c.ff_dim = size("ff_dim");
    c.head_hidden = size("head_hidden");
    c.dropout_p = real("dropout_p");
    c.positional_encoding = get("positional_encoding") == "1";
    c.layer_norm_eps = real("layer_norm_eps");
    c.validate();
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

enum class Mode { train, eval };

/// Classifier output: logits and sigmoid probabilities in fixed class order.
struct Prediction {
  std::vector<double> logits;
  std::vector<double> probs;
};

inline double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Mean binary cross-entropy over classes with probabilities clamped to [eps, 1 - eps].
inline double bce_loss(std::span<const double> probs, std::span<const double> labels, double eps = 1e-7) {
  if (probs.size() != labels.size() || probs.empty()) throw std::invalid_argument("bce_loss: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], eps, 1.0 - eps);
    total -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  return total / static_cast<double>(probs.size());
}

template <std::floating_point T>
std::vector<T> label_targets(const LabelVector& y, std::size_t n_classes) {
  if (n_classes != kNumClasses) {
    throw ConfigError("labelled training needs n_classes == " + std::to_string(kNumClasses));
  }
  std::vector<T> out(kNumClasses);
  for (std::size_t i = 0; i < kNumClasses; ++i) out[i] = y.flags[i] ? T{1} : T{0};
  return out;
}

inline double bce_loss(const Prediction& pred, const LabelVector& y) {
  return bce_loss(pred.probs, label_targets<double>(y, pred.probs.size()));
}

template <std::floating_point T>
struct LinearLayer {
  Tensor<T> weight;  // [out x in]
  Tensor<T> bias;    // [out]
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <std::floating_point T>
struct NormLayer {
  Tensor<T> gain;
  Tensor<T> bias;
};

template <std::floating_point T>
struct TransformerLayer {
  NormLayer<T> ln1;
  AttentionParams<T> attn;
  NormLayer<T> ln2;
  LinearLayer<T> ff1;
  LinearLayer<T> ff2;
};

/// Attention-pooling classification head for one class.
template <std::floating_point T>
struct PoolingHead {
  LinearLayer<T> att1;  // model_dim -> head_hidden
  LinearLayer<T> att2;  // head_hidden -> 1
  LinearLayer<T> out;   // model_dim -> 1
};

template <std::floating_point T>
struct ForwardResult {
  Tensor<T> logits;                       // [1 x N]
  std::vector<Tensor<T>> head_attention;  // N tensors of [frames x 1]
};

/// Sinusoidal positional encodings, [frames x dim].
template <std::floating_point T>
Tensor<T> sinusoidal_encoding(std::size_t frames, std::size_t dim) {
  std::vector<T> pe(frames * dim);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double angle = static_cast<double>(t) * freq;
      pe[t * dim + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor<T>::from({frames, dim}, std::move(pe));
}

/// Layer fusion, transformer prediction network and per-class attention-pooling heads.
template <std::floating_point T>
class Model {
 public:
  /// An uninitialized model; forward() throws until a real model is assigned.
  Model() = default;

  Model(const ModelConfig& config, Rng& rng) : config_(config), initialized_(true) {
    config_.validate();
    const std::size_t d = config_.model_dim;
    fusion_raw_ = Tensor<T>::zeros({config_.encoder_layers}, true);
    input_proj_ = make_linear(config_.enc_dim, d, rng);
    layers_.resize(config_.tf_layers);
    for (auto& layer : layers_) {
      layer.ln1 = make_norm(d);
      auto q = make_linear(d, d, rng);
      auto k = make_linear(d, d, rng);
      auto v = make_linear(d, d, rng);
      auto o = make_linear(d, d, rng);
      layer.attn = {q.weight, q.bias, k.weight, k.bias, v.weight, v.bias, o.weight, o.bias};
      layer.ln2 = make_norm(d);
      layer.ff1 = make_linear(d, config_.ff_dim, rng);
      layer.ff2 = make_linear(config_.ff_dim, d, rng);
    }
    norm_out_ = make_norm(d);
    heads_.resize(config_.n_classes);
    for (auto& head : heads_) {
      head.att1 = make_linear(d, config_.head_hidden, rng);
      head.att2 = make_linear(config_.head_hidden, 1, rng);
      head.out = make_linear(d, 1, rng);
    }
    if (config_.positional_encoding) positional_ = sinusoidal_encoding<T>(config_.frames, d);
    name_parameters();
  }

  bool initialized() const { return initialized_; }
  const ModelConfig& config() const { return config_; }

  /// Trainable tensors in a fixed order. The returned handles alias the model's storage.
  std::vector<NamedParam<T>> parameters() const {
    std::vector<NamedParam<T>> out;
    auto add = [&](const Tensor<T>& t) { out.push_back({t.name(), t}); };
    add(fusion_raw_);
    add(input_proj_.weight);
    add(input_proj_.bias);
    for (const auto& l : layers_) {
      add(l.ln1.gain);
      add(l.ln1.bias);
      add(l.attn.wq);
      add(l.attn.bq);
      add(l.attn.wk);
      add(l.attn.bk);
      add(l.attn.wv);
      add(l.attn.bv);
      add(l.attn.wo);
      add(l.attn.bo);
      add(l.ln2.gain);
      add(l.ln2.bias);
      add(l.ff1.weight);
      add(l.ff1.bias);
      add(l.ff2.weight);
      add(l.ff2.bias);
    }
    add(norm_out_.gain);
    add(norm_out_.bias);
    for (const auto& h : heads_) {
      add(h.att1.weight);
      add(h.att1.bias);
      add(h.att2.weight);
      add(h.att2.bias);
      add(h.out.weight);
      add(h.out.bias);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  /// Normalized layer weights softmax(raw).
  Tensor<T> fusion_weights() const { return softmax(fusion_raw_, 0); }

  /// Weighted sum of the encoder layers, [frames x enc_dim].
  Tensor<T> fuse_layers(const LayerStack& stack) const {
    require_initialized();
    if (stack.layers != config_.encoder_layers) {
      throw DataError("fuse_layers: stack has " + std::to_string(stack.layers) + " layers, model expects " +
                      std::to_string(config_.encoder_layers));
    }
    if (stack.frames != config_.frames || stack.dim != config_.enc_dim) {
      throw DataError("fuse_layers: stack frames/dim " + std::to_string(stack.frames) + "x" +
                      std::to_string(stack.dim) + " do not match model " + std::to_string(config_.frames) + "x" +
                      std::to_string(config_.enc_dim));
    }
    return weighted_layer_sum<T>(stack.data, stack.layers, stack.frames, stack.dim, fusion_weights());
  }

  /// [frames x enc_dim] -> [frames x model_dim].
  Tensor<T> prediction_network(const Tensor<T>& fused) const {
    require_initialized();
    if (fused.rank() != 2 || fused.cols() != config_.enc_dim) {
      throw std::invalid_argument("prediction_network: input " + shape_str(fused.shape()));
    }
    const T eps = static_cast<T>(config_.layer_norm_eps);
    Tensor<T> x = input_proj_(fused);
    if (config_.positional_encoding) {
      if (fused.rows() != positional_.rows()) {
        throw std::invalid_argument("prediction_network: positional encoding built for " +
                                    std::to_string(positional_.rows()) + " frames");
      }
      x = add(x, positional_);
    }
    for (const auto& layer : layers_) {
      Tensor<T> h = layer_norm(x, layer.ln1.gain, layer.ln1.bias, eps);
      x = add(x, multi_head_attention(h, h, h, layer.attn, config_.tf_heads));
      h = layer_norm(x, layer.ln2.gain, layer.ln2.bias, eps);
      x = add(x, layer.ff2(gelu(layer.ff1(h))));
    }
    return layer_norm(x, norm_out_.gain, norm_out_.bias, eps);
  }

  /// Logit [1 x 1] of head `n`. The head's attention over frames is written to `attention` if given.
  Tensor<T> pooling_head(const Tensor<T>& features, std::size_t n, Mode mode, Rng* rng,
                         Tensor<T>* attention = nullptr) const {
    require_initialized();
    const auto& head = heads_.at(n);
    Tensor<T> hidden = dropout(relu(head.att1(features)), config_.dropout_p, rng, mode == Mode::train);
    Tensor<T> weights = softmax(head.att2(hidden), 0);  // over time
    if (attention) *attention = weights;
    Tensor<T> pooled = matmul_tn(weights, features);  // [1 x d]
    return head.out(add(pooled, mean_rows(features)));
  }

  ForwardResult<T> forward(const LayerStack& stack, Mode mode, Rng* rng = nullptr) const {
    require_initialized();
    Tensor<T> features = prediction_network(fuse_layers(stack));
    ForwardResult<T> result;
    std::vector<Tensor<T>> logits;
    logits.reserve(config_.n_classes);
    result.head_attention.resize(config_.n_classes);
    for (std::size_t n = 0; n < config_.n_classes; ++n) {
      logits.push_back(pooling_head(features, n, mode, rng, &result.head_attention[n]));
    }
    result.logits = concat_cols(logits);
    return result;
  }

  /// Eval-mode inference without graph recording.
  Prediction predict(const LayerStack& stack) const {
    NoGradGuard guard;
    auto result = forward(stack, Mode::eval);
    Prediction p;
    for (T v : result.logits.data()) {
      p.logits.push_back(static_cast<double>(v));
      p.probs.push_back(sigmoid_scalar(static_cast<double>(v)));
    }
    return p;
  }

  /// Copy with parameters converted to another scalar type.
  template <std::floating_point U>
  Model<U> cast() const {
    Model<U> out;
    out.config_ = config_;
    out.initialized_ = initialized_;
    auto conv = [](const Tensor<T>& t) {
      if (!t.defined()) return Tensor<U>();
      std::vector<U> data(t.data().begin(), t.data().end());
      return Tensor<U>::from(t.shape(), std::move(data), t.requires_grad());
    };
    auto conv_lin = [&](const LinearLayer<T>& l) { return LinearLayer<U>{conv(l.weight), conv(l.bias)}; };
    auto conv_norm = [&](const NormLayer<T>& l) { return NormLayer<U>{conv(l.gain), conv(l.bias)}; };
    out.fusion_raw_ = conv(fusion_raw_);
    out.input_proj_ = conv_lin(input_proj_);
    for (const auto& l : layers_) {
      TransformerLayer<U> c;
      c.ln1 = conv_norm(l.ln1);
      c.attn = {conv(l.attn.wq), conv(l.attn.bq), conv(l.attn.wk), conv(l.attn.bk),
                conv(l.attn.wv), conv(l.attn.bv), conv(l.attn.wo), conv(l.attn.bo)};
      c.ln2 = conv_norm(l.ln2);
      c.ff1 = conv_lin(l.ff1);
      c.ff2 = conv_lin(l.ff2);
      out.layers_.push_back(std::move(c));
    }
    out.norm_out_ = conv_norm(norm_out_);
    for (const auto& h : heads_) out.heads_.push_back({conv_lin(h.att1), conv_lin(h.att2), conv_lin(h.out)});
    out.positional_ = conv(positional_);
    out.name_parameters();
    return out;
  }

  /// Copies parameter values from `other`, which must share this model's config.
  void copy_parameters_from(const Model& other) {
    if (!(other.config_ == config_)) throw ConfigError("copy_parameters_from: config mismatch");
    auto dst = parameters();
    auto src = other.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), dst[i].tensor.data().begin());
    }
  }

 private:
  template <std::floating_point>
  friend class Model;

  void require_initialized() const {
    if (!initialized_) throw std::logic_error("model used before initialization");
  }

  static LinearLayer<T> make_linear(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<T> w(in * out);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    return {Tensor<T>::from({out, in}, std::move(w), true), Tensor<T>::zeros({out}, true)};
  }

  static NormLayer<T> make_norm(std::size_t d) {
    return {Tensor<T>::full({d}, T{1}, true), Tensor<T>::zeros({d}, true)};
  }

  void name_parameters() {
    fusion_raw_.set_name("fusion.raw");
    input_proj_.weight.set_name("input_proj.weight");
    input_proj_.bias.set_name("input_proj.bias");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string p = "layers." + std::to_string(i) + ".";
      auto& l = layers_[i];
      l.ln1.gain.set_name(p + "ln1.gain");
      l.ln1.bias.set_name(p + "ln1.bias");
      l.attn.wq.set_name(p + "attn.wq");
      l.attn.bq.set_name(p + "attn.bq");
      l.attn.wk.set_name(p + "attn.wk");
      l.attn.bk.set_name(p + "attn.bk");
      l.attn.wv.set_name(p + "attn.wv");
      l.attn.bv.set_name(p + "attn.bv");
      l.attn.wo.set_name(p + "attn.wo");
      l.attn.bo.set_name(p + "attn.bo");
      l.ln2.gain.set_name(p + "ln2.gain");
      l.ln2.bias.set_name(p + "ln2.bias");
      l.ff1.weight.set_name(p + "ff1.weight");
      l.ff1.bias.set_name(p + "ff1.bias");
      l.ff2.weight.set_name(p + "ff2.weight");
      l.ff2.bias.set_name(p + "ff2.bias");
    }
    norm_out_.gain.set_name("norm_out.gain");
    norm_out_.bias.set_name("norm_out.bias");
    for (std::size_t i = 0; i < heads_.size(); ++i) {
      const std::string p = "heads." + std::to_string(i) + ".";
      heads_[i].att1.weight.set_name(p + "att1.weight");
      heads_[i].att1.bias.set_name(p + "att1.bias");
      heads_[i].att2.weight.set_name(p + "att2.weight");
      heads_[i].att2.bias.set_name(p + "att2.bias");
      heads_[i].out.weight.set_name(p + "out.weight");
      heads_[i].out.bias.set_name(p + "out.bias");
    }
  }

  ModelConfig config_;
  bool initialized_ = false;
  Tensor<T> fusion_raw_;
  LinearLayer<T> input_proj_;
  std::vector<TransformerLayer<T>> layers_;
  NormLayer<T> norm_out_;
  std::vector<PoolingHead<T>> heads_;
  Tensor<T> positional_;
};

/// One labelled training example; the stack must outlive the step.
struct Example {
  const LayerStack* stack = nullptr;
  LabelVector labels;
};

/// Forward, mean BCE over the batch, backward and one Adam update.
/// Returns the batch loss measured before the update.
template <std::floating_point T>
double train_step(const Model<T>& model, Adam<T>& optimizer, std::span<const Example> batch, double lr, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  optimizer.zero_grad();
  const T inv_batch = T{1} / static_cast<T>(batch.size());
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto targets = label_targets<T>(batch[i].labels, model.config().n_classes);
    auto result = model.forward(*batch[i].stack, Mode::train, &rng);
    Tensor<T> loss = binary_cross_entropy<T>(result.logits, targets);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      std::string logits;
      for (T v : result.logits.data()) logits += std::to_string(v) + " ";
      throw NumericError("non-finite loss at batch item " + std::to_string(i) + "; logits: " + logits);
    }
    total += value;
    scale(loss, inv_batch).backward();
  }
  const double mean = total / static_cast<double>(batch.size());
  optimizer.step(lr);
  return mean;
}

}  // namespace whilter
