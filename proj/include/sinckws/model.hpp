// The keyword-spotting network: SincConv filterbank, log compression, five
// depthwise-separable blocks, global average pooling, and a linear head over
// the 12 classes. Covers assembly, the forward pass, and exact parameter and
// multiply-accumulate accounting.
#pragma once

#include <ostream>
#include <string>
#include <utility>

#include "sinckws/layers.hpp"
#include "sinckws/sinc.hpp"

namespace sinckws {

enum class Variant { base, grouped };

inline const char* variant_name(Variant v) {
  return v == Variant::base ? "base" : "grouped";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "base") return Variant::base;
  if (s == "grouped") return Variant::grouped;
  throw std::invalid_argument("unknown architecture variant: " + s);
}

struct ModelConfig {
  SincConvConfig sinc;
  std::vector<BlockSpec> blocks;
  int n_classes = 12;
  Variant variant = Variant::base;

  void validate() const {
    sinc.validate();
    if (n_classes < 2) throw std::invalid_argument("model: need at least two classes");
    if (blocks.size() != 5)
      throw std::invalid_argument("model: exactly five conv blocks expected");
    for (const auto& b : blocks) b.validate();
    if (blocks[0].conv.c_in != sinc.n_filters)
      throw std::invalid_argument("model: first block input must match the filter count");
    const int width = blocks[0].conv.c_out;
    for (std::size_t i = 1; i < blocks.size(); ++i) {
      if (blocks[i].conv.c_in != width || blocks[i].conv.c_out != width)
        throw std::invalid_argument("model: blocks after the first must keep a fixed width");
      if (blocks[i].conv.k >= blocks[0].conv.k)
        throw std::invalid_argument("model: first block must have the largest kernel");
    }
    static const int grouped_pattern[4] = {2, 3, 2, 3};
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const int want = (variant == Variant::base || i == 0)
                           ? 1
                           : grouped_pattern[i - 1];
      if (blocks[i].conv.g != want)
        throw std::invalid_argument("model: block " + std::to_string(i) +
                                    " group count does not match the " +
                                    variant_name(variant) + " variant");
    }
  }
};

inline ModelConfig default_base_config() {
  ModelConfig cfg;
  cfg.blocks.resize(5);
  cfg.blocks[0].conv = {cfg.sinc.n_filters, 160, 25, 2, 1};
  for (int i = 1; i < 5; ++i) cfg.blocks[static_cast<std::size_t>(i)].conv = {160, 160, 9, 1, 1};
  return cfg;
}

inline ModelConfig default_grouped_config() {
  ModelConfig cfg = default_base_config();
  cfg.variant = Variant::grouped;
  const int pattern[4] = {2, 3, 2, 3};
  for (int i = 1; i < 5; ++i) cfg.blocks[static_cast<std::size_t>(i)].conv.g = pattern[i - 1];
  return cfg;
}

inline ModelConfig default_config(Variant v) {
  return v == Variant::base ? default_base_config() : default_grouped_config();
}

template <typename T>
struct Model {
  ModelConfig config;
  TensorPtr<T> sinc_params;
  std::vector<BlockParams<T>> blocks;
  TensorPtr<T> head_weight;
  TensorPtr<T> head_bias;
  SincNormTable norm_table;

  int epoch = 0;
  double best_val_accuracy = 0.0;
  std::uint64_t seed = 0;

  std::vector<std::pair<std::string, TensorPtr<T>>> named_parameters() const {
    std::vector<std::pair<std::string, TensorPtr<T>>> out;
    out.emplace_back("sinc.params", sinc_params);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string base = "block" + std::to_string(i);
      out.emplace_back(base + ".depthwise", blocks[i].depthwise);
      for (std::size_t gidx = 0; gidx < blocks[i].pointwise.size(); ++gidx)
        out.emplace_back(base + ".pointwise.g" + std::to_string(gidx),
                         blocks[i].pointwise[gidx]);
      out.emplace_back(base + ".bn.gamma", blocks[i].bn.gamma);
      out.emplace_back(base + ".bn.beta", blocks[i].bn.beta);
    }
    out.emplace_back("head.weight", head_weight);
    out.emplace_back("head.bias", head_bias);
    return out;
  }

  std::vector<std::pair<std::string, TensorPtr<T>>> named_buffers() const {
    std::vector<std::pair<std::string, TensorPtr<T>>> out;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string base = "block" + std::to_string(i);
      out.emplace_back(base + ".bn.running_mean", blocks[i].bn.running_mean);
      out.emplace_back(base + ".bn.running_var", blocks[i].bn.running_var);
    }
    return out;
  }

  void zero_grad() {
    for (auto& [name, t] : named_parameters()) t->zero_grad();
  }
};

template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model<T> m;
  m.config = config;
  m.seed = seed;
  m.norm_table = make_sinc_norm_table(config.sinc);
  Rng rng(seed);

  m.sinc_params = mel_initialize<T>(config.sinc);
  for (const auto& spec : config.blocks)
    m.blocks.push_back(make_block_params<T>(spec, rng));

  const int width = config.blocks[0].conv.c_out;
  m.head_weight = glorot_uniform<T>({config.n_classes, width}, width, config.n_classes, rng);
  m.head_bias = make_tensor<T>({config.n_classes});
  m.head_bias->needs_grad = true;
  return m;
}

// audio [1, T] -> logits [n_classes]. Softmax is applied by the loss during
// training and by the caller for inference probabilities. A train-mode
// forward normalizes with minibatch statistics, so commit_batch_stats must
// have run on the same minibatch first.
template <typename T>
TensorPtr<T> model_forward(Tape<T>* tape, Model<T>& m, const TensorPtr<T>& audio,
                           Mode mode, Rng* rng) {
  auto taps = build_filters(tape, m.sinc_params, m.config.sinc, m.norm_table);
  auto x = sinc_forward(tape, audio, taps, m.config.sinc);
  x = log_compress(tape, x);
  for (std::size_t i = 0; i < m.blocks.size(); ++i)
    x = block_forward(tape, x, m.blocks[i], m.config.blocks[i], mode, rng);
  x = global_avg_pool(tape, x);
  return linear(tape, x, m.head_weight, m.head_bias);
}

// Commits every block's batch-normalization statistics for one minibatch by
// running the training forward layer by layer across all samples (no tape,
// one EMA step per block). Dropout draws from `rngs`, one generator per
// sample; passing clones of the generators later given to model_forward makes
// both passes see identical channel masks, so the committed statistics
// describe exactly the activations the gradient pass will normalize.
template <typename T>
void commit_batch_stats(Model<T>& m, const std::vector<TensorPtr<T>>& audios,
                        std::vector<Rng>& rngs) {
  if (audios.empty()) throw std::invalid_argument("commit_batch_stats: empty minibatch");
  if (rngs.size() != audios.size())
    throw std::invalid_argument("commit_batch_stats: one RNG per sample required");

  auto taps = build_filters<T>(nullptr, m.sinc_params, m.config.sinc, m.norm_table);
  std::vector<TensorPtr<T>> acts(audios.size());
  for (std::size_t i = 0; i < audios.size(); ++i)
    acts[i] = log_compress<T>(nullptr, sinc_forward<T>(nullptr, audios[i], taps,
                                                       m.config.sinc));

  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    auto& block = m.blocks[b];
    const auto& spec = m.config.blocks[b];
    block.bn.begin_batch();
    for (auto& x : acts) {
      x = block_conv<T>(nullptr, x, block, spec);
      block.bn.accumulate(*x);
    }
    block.bn.commit_batch();
    if (b + 1 == m.blocks.size()) break;  // nothing downstream needs the last post
    for (std::size_t i = 0; i < acts.size(); ++i)
      acts[i] = block_post<T>(nullptr, acts[i], block, spec, Mode::train, &rngs[i]);
  }
}

struct CountRow {
  std::string layer;
  std::string name;
  long long params = 0;
  long long macs = 0;
};

namespace detail {

inline std::string layer_of(const std::string& tensor_name) {
  const auto dot = tensor_name.find('.');
  return dot == std::string::npos ? tensor_name : tensor_name.substr(0, dot);
}

// Like conv_out_len, but tolerates inputs too short to convolve (0 frames),
// so MAC accounting is a total function of the hypothetical input length.
inline int counted_len(int t, int k, int stride, int pad) {
  if (t < 0 || t + 2 * pad < k) return 0;
  return conv_out_len(t, k, stride, pad);
}

}  // namespace detail

// One row per named tensor. MACs count multiplies in the convolutions and
// the linear head for a single clip of input_length samples; batchnorm,
// pooling, and elementwise stages contribute none.
template <typename T>
std::vector<CountRow> count_model(const Model<T>& m, int input_length = 16000) {
  const auto& cfg = m.config;
  std::vector<CountRow> rows;
  auto add = [&rows](const std::string& name, long long params, long long macs) {
    rows.push_back({detail::layer_of(name), name, params, macs});
  };

  int t = detail::counted_len(input_length, cfg.sinc.kernel_length, cfg.sinc.stride, 0);
  add("sinc.params", static_cast<long long>(m.sinc_params->size()),
      static_cast<long long>(cfg.sinc.n_filters) * cfg.sinc.kernel_length * t);

  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    const auto& spec = cfg.blocks[i];
    const auto& p = m.blocks[i];
    const std::string base = "block" + std::to_string(i);
    const int t_conv = detail::counted_len(t, spec.conv.k, spec.conv.s, spec.conv.same_pad());
    add(base + ".depthwise", static_cast<long long>(p.depthwise->size()),
        static_cast<long long>(spec.conv.c_in) * spec.conv.k * t_conv);
    for (std::size_t gidx = 0; gidx < p.pointwise.size(); ++gidx)
      add(base + ".pointwise.g" + std::to_string(gidx),
          static_cast<long long>(p.pointwise[gidx]->size()),
          static_cast<long long>(p.partition.in_sizes[gidx]) *
              p.partition.out_sizes[gidx] * t_conv);
    add(base + ".bn.gamma", static_cast<long long>(p.bn.gamma->size()), 0);
    add(base + ".bn.beta", static_cast<long long>(p.bn.beta->size()), 0);
    t = detail::counted_len(t_conv, spec.pool_width, spec.pool_stride, 0);
  }

  const long long head_macs =
      t >= 1 ? static_cast<long long>(m.head_weight->size()) : 0;
  add("head.weight", static_cast<long long>(m.head_weight->size()), head_macs);
  add("head.bias", static_cast<long long>(m.head_bias->size()), 0);
  return rows;
}

template <typename T>
long long total_parameters(const Model<T>& m) {
  long long total = 0;
  for (const auto& [name, tensor] : m.named_parameters())
    total += static_cast<long long>(tensor->size());
  return total;
}

template <typename T>
long long total_macs(const Model<T>& m, int input_length = 16000) {
  long long total = 0;
  for (const auto& row : count_model(m, input_length)) total += row.macs;
  return total;
}

template <typename T>
void write_count_csv(std::ostream& os, const Model<T>& m, int input_length = 16000) {
  os << "layer,name,params,macs\n";
  long long params = 0, macs = 0;
  for (const auto& row : count_model(m, input_length)) {
    os << row.layer << ',' << row.name << ',' << row.params << ',' << row.macs << '\n';
    params += row.params;
    macs += row.macs;
  }
  os << "total,total," << params << ',' << macs << '\n';
}

}  // namespace sinckws
