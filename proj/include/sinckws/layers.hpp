// Depthwise-separable convolution layers, their grouped variant with
// nearly-equal channel partitions, and the conv/BN/dropout/pool block that
// the model stacks five of.
#pragma once

#include <numeric>

#include "sinckws/ops.hpp"

namespace sinckws {

struct ConvSpec {
  int c_in = 1;
  int c_out = 1;
  int k = 1;
  int s = 1;
  int g = 1;

  void validate() const {
    if (c_in < 1 || c_out < 1 || k < 1 || s < 1 || g < 1)
      throw std::invalid_argument("conv spec: all dimensions must be >= 1");
    if (g > std::min(c_in, c_out))
      throw std::invalid_argument("conv spec: more groups than channels");
    if (k % 2 == 0)
      throw std::invalid_argument("conv spec: kernel length must be odd for same padding");
  }

  int same_pad() const { return (k - 1) / 2; }
};

struct GroupPartition {
  std::vector<int> in_sizes;
  std::vector<int> out_sizes;

  int groups() const { return static_cast<int>(in_sizes.size()); }

  void validate(const ConvSpec& spec) const {
    if (in_sizes.size() != out_sizes.size() ||
        static_cast<int>(in_sizes.size()) != spec.g)
      throw std::invalid_argument("group partition: group count mismatch");
    auto check = [](const std::vector<int>& sizes, int total, const char* what) {
      if (std::accumulate(sizes.begin(), sizes.end(), 0) != total)
        throw std::invalid_argument(std::string("group partition: ") + what +
                                    " sizes do not sum to the channel count");
      auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
      if (*lo < 1 || *hi - *lo > 1)
        throw std::invalid_argument(std::string("group partition: ") + what +
                                    " sizes must be nearly equal and positive");
    };
    check(in_sizes, spec.c_in, "input");
    check(out_sizes, spec.c_out, "output");
  }
};

// Nearly-equal split with the larger groups first: 160/3 -> 54, 53, 53.
inline GroupPartition make_partition(int c_in, int c_out, int g) {
  if (g < 1 || g > std::min(c_in, c_out))
    throw std::invalid_argument("make_partition: invalid group count");
  auto split = [g](int total) {
    std::vector<int> sizes(static_cast<std::size_t>(g), total / g);
    for (int i = 0; i < total % g; ++i) sizes[static_cast<std::size_t>(i)] += 1;
    return sizes;
  };
  return {split(c_in), split(c_out)};
}

// Trainable weight count of the conv stages (biases are disabled throughout;
// the batchnorm that follows each conv absorbs any shift).
inline long long separable_conv_params(const ConvSpec& spec, const GroupPartition& part) {
  long long total = static_cast<long long>(spec.k) * spec.c_in;
  for (int i = 0; i < part.groups(); ++i)
    total += static_cast<long long>(part.in_sizes[static_cast<std::size_t>(i)]) *
             part.out_sizes[static_cast<std::size_t>(i)];
  return total;
}

// Depthwise stage (carries the temporal stride) followed by per-group 1x1
// pointwise convs whose outputs concatenate in group order. g=1 degenerates
// to a plain depthwise-separable layer with a single full pointwise conv.
template <typename T>
TensorPtr<T> gdsconv_forward(Tape<T>* tape, const TensorPtr<T>& input,
                             const TensorPtr<T>& depthwise,
                             const std::vector<TensorPtr<T>>& pointwise,
                             const ConvSpec& spec, const GroupPartition& partition) {
  spec.validate();
  partition.validate(spec);
  if (depthwise->shape != std::vector<int>{spec.c_in, 1, spec.k})
    throw std::invalid_argument("gdsconv: depthwise weight must be [c_in, 1, k]");
  if (pointwise.size() != static_cast<std::size_t>(spec.g))
    throw std::invalid_argument("gdsconv: one pointwise weight per group expected");
  for (int i = 0; i < spec.g; ++i) {
    const auto want = std::vector<int>{partition.out_sizes[static_cast<std::size_t>(i)],
                                       partition.in_sizes[static_cast<std::size_t>(i)], 1};
    if (pointwise[static_cast<std::size_t>(i)]->shape != want)
      throw std::invalid_argument("gdsconv: pointwise weight shape mismatch in group " +
                                  std::to_string(i));
  }

  auto mixed = depthwise_conv1d(tape, input, depthwise, spec.s, spec.same_pad());
  if (spec.g == 1)
    return grouped_conv1d(tape, mixed, pointwise[0], 1, 0, 1);

  std::vector<TensorPtr<T>> parts;
  parts.reserve(static_cast<std::size_t>(spec.g));
  int begin = 0;
  for (int i = 0; i < spec.g; ++i) {
    const int width = partition.in_sizes[static_cast<std::size_t>(i)];
    auto piece = slice_channels(tape, mixed, begin, width);
    parts.push_back(grouped_conv1d(tape, piece, pointwise[static_cast<std::size_t>(i)], 1, 0, 1));
    begin += width;
  }
  return concat_channels(tape, parts);
}

template <typename T>
TensorPtr<T> dsconv_forward(Tape<T>* tape, const TensorPtr<T>& input,
                            const TensorPtr<T>& depthwise, const TensorPtr<T>& pointwise,
                            const ConvSpec& spec) {
  if (spec.g != 1) throw std::invalid_argument("dsconv: spec must have g = 1");
  return gdsconv_forward(tape, input, depthwise, {pointwise}, spec,
                         make_partition(spec.c_in, spec.c_out, 1));
}

struct BlockSpec {
  ConvSpec conv;
  int pool_width = 2;
  int pool_stride = 2;
  double dropout = 0.1;

  void validate() const {
    conv.validate();
    if (pool_width < 1 || pool_stride < 1)
      throw std::invalid_argument("block spec: pooling must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
      throw std::invalid_argument("block spec: dropout rate must be in [0, 1)");
  }
};

template <typename T>
struct BlockParams {
  TensorPtr<T> depthwise;
  std::vector<TensorPtr<T>> pointwise;
  GroupPartition partition;
  BNState<T> bn;
};

template <typename T>
TensorPtr<T> glorot_uniform(const std::vector<int>& shape, int fan_in, int fan_out,
                            Rng& rng) {
  auto t = make_tensor<T>(shape);
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : t->values) v = static_cast<T>(rng.uniform(-limit, limit));
  t->needs_grad = true;
  return t;
}

template <typename T>
BlockParams<T> make_block_params(const BlockSpec& spec, Rng& rng) {
  spec.validate();
  const auto& c = spec.conv;
  BlockParams<T> p;
  p.partition = make_partition(c.c_in, c.c_out, c.g);
  p.depthwise = glorot_uniform<T>({c.c_in, 1, c.k}, c.k, c.k, rng);
  for (int i = 0; i < c.g; ++i) {
    const int gi = p.partition.in_sizes[static_cast<std::size_t>(i)];
    const int go = p.partition.out_sizes[static_cast<std::size_t>(i)];
    p.pointwise.push_back(glorot_uniform<T>({go, gi, 1}, gi, go, rng));
  }
  p.bn.reset(c.c_out);
  return p;
}

// conv -> batchnorm -> spatial dropout -> average pooling, in that order.
template <typename T>
TensorPtr<T> block_conv(Tape<T>* tape, const TensorPtr<T>& input,
                        BlockParams<T>& params, const BlockSpec& spec) {
  return gdsconv_forward(tape, input, params.depthwise, params.pointwise, spec.conv,
                         params.partition);
}

// Everything after the convolution: normalize, drop channels, pool. The
// convolution output is what batch statistics are taken over, so the stats
// pass runs block_conv across the whole minibatch, commits, then applies this.
template <typename T>
TensorPtr<T> block_post(Tape<T>* tape, const TensorPtr<T>& conv_out,
                        BlockParams<T>& params, const BlockSpec& spec, Mode mode,
                        Rng* rng) {
  auto x = batchnorm1d(tape, conv_out, params.bn, mode);
  x = spatial_dropout(tape, x, spec.dropout, mode, rng);
  return avg_pool1d(tape, x, spec.pool_width, spec.pool_stride);
}

template <typename T>
TensorPtr<T> block_forward(Tape<T>* tape, const TensorPtr<T>& input,
                           BlockParams<T>& params, const BlockSpec& spec, Mode mode,
                           Rng* rng) {
  return block_post(tape, block_conv(tape, input, params, spec), params, spec, mode,
                    rng);
}

}  // namespace sinckws
