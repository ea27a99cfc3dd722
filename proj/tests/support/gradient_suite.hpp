// Finite-difference sweep over every differentiable op on random small
// shapes. Shared by the unit tests (few instances, fast) and the acceptance
// run (20+ instances per op).
#pragma once

#include "sinckws/layers.hpp"
#include "sinckws/ops.hpp"
#include "sinckws/sinc.hpp"
#include "support/finite_diff.hpp"

namespace testsupport {

using sinckws::make_tensor;
using sinckws::Rng;
using sinckws::Tape;
using sinckws::TensorPtr;

inline TensorPtr<double> random_tensor(const std::vector<int>& shape, Rng& rng,
                                       double lo = -1.0, double hi = 1.0) {
  auto t = make_tensor<double>(shape);
  for (auto& v : t->values) v = rng.uniform(lo, hi);
  return t;
}

// Magnitudes bounded away from zero, so losses that pass through |x| kinks
// stay finite-difference friendly.
inline TensorPtr<double> random_tensor_kink_safe(const std::vector<int>& shape,
                                                 Rng& rng) {
  auto t = make_tensor<double>(shape);
  for (auto& v : t->values) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    v = sign * rng.uniform(0.3, 1.5);
  }
  return t;
}

struct SuiteResult {
  double max_rel_err = 0.0;
  std::string worst;

  void fold(const char* op, const GradCheck& gc) {
    if (gc.max_rel_err > max_rel_err) {
      max_rel_err = gc.max_rel_err;
      worst = std::string(op) + ": " + gc.worst;
    }
  }
};

namespace detail {

// Position-dependent reduction to a scalar: the log nonlinearity gives each
// coordinate its own effective weight, so index bugs cannot cancel out.
inline TensorPtr<double> scalarize(Tape<double>* tape, const TensorPtr<double>& x,
                                   const TensorPtr<double>& mix_w,
                                   const TensorPtr<double>& mix_b) {
  auto y = sinckws::log_compress(tape, x);
  auto flat = y->shape.size() == 2 ? sinckws::global_avg_pool(tape, y) : y;
  return sinckws::linear(tape, flat, mix_w, mix_b);
}

inline std::pair<TensorPtr<double>, TensorPtr<double>> mixer(int channels, Rng& rng) {
  return {random_tensor({1, channels}, rng, 0.5, 1.5),
          random_tensor({1}, rng, -0.1, 0.1)};
}

}  // namespace detail

inline SuiteResult run_gradient_suite(int instances, std::uint64_t seed) {
  using namespace sinckws;
  Rng rng(seed);
  SuiteResult suite;

  for (int it = 0; it < instances; ++it) {
    {  // grouped_conv1d, including g > 1
      const int g = 1 + static_cast<int>(rng.uniform_int(3));
      const int c_in = g * (1 + static_cast<int>(rng.uniform_int(2)));
      const int c_out = g * (1 + static_cast<int>(rng.uniform_int(2)));
      const int k = 1 + 2 * static_cast<int>(rng.uniform_int(3));
      const int stride = 1 + static_cast<int>(rng.uniform_int(3));
      const int pad = static_cast<int>(rng.uniform_int(3));
      const int t = k + static_cast<int>(rng.uniform_int(20));
      auto x = random_tensor({c_in, t}, rng);
      auto w = random_tensor({c_out, c_in / g, k}, rng);
      auto [mw, mb] = detail::mixer(c_out, rng);
      suite.fold("grouped_conv1d",
                 check_gradients(
                     [&](Tape<double>* tape) {
                       auto out = grouped_conv1d(tape, x, w, stride, pad, g);
                       return detail::scalarize(tape, out, mw, mb);
                     },
                     {x, w}));
    }
    {  // depthwise_conv1d
      const int c = 1 + static_cast<int>(rng.uniform_int(6));
      const int k = 1 + 2 * static_cast<int>(rng.uniform_int(3));
      const int t = k + static_cast<int>(rng.uniform_int(20));
      auto x = random_tensor({c, t}, rng);
      auto w = random_tensor({c, 1, k}, rng);
      auto [mw, mb] = detail::mixer(c, rng);
      suite.fold("depthwise_conv1d",
                 check_gradients(
                     [&](Tape<double>* tape) {
                       auto out = depthwise_conv1d(tape, x, w, 1 + (it % 2), (k - 1) / 2);
                       return detail::scalarize(tape, out, mw, mb);
                     },
                     {x, w}));
    }
    {  // avg_pool1d
      const int c = 1 + static_cast<int>(rng.uniform_int(4));
      const int width = 1 + static_cast<int>(rng.uniform_int(3));
      const int stride = 1 + static_cast<int>(rng.uniform_int(3));
      const int t = width + static_cast<int>(rng.uniform_int(16));
      auto x = random_tensor({c, t}, rng);
      auto [mw, mb] = detail::mixer(c, rng);
      suite.fold("avg_pool1d", check_gradients(
                                   [&](Tape<double>* tape) {
                                     auto out = avg_pool1d(tape, x, width, stride);
                                     return detail::scalarize(tape, out, mw, mb);
                                   },
                                   {x}));
    }
    {  // global_avg_pool
      const int c = 1 + static_cast<int>(rng.uniform_int(6));
      const int t = 1 + static_cast<int>(rng.uniform_int(24));
      auto x = random_tensor({c, t}, rng);
      auto [mw, mb] = detail::mixer(c, rng);
      suite.fold("global_avg_pool",
                 check_gradients(
                     [&](Tape<double>* tape) {
                       auto out = global_avg_pool(tape, x);
                       return linear(tape, out, mw, mb);
                     },
                     {x}));
    }
    {  // linear
      const int c = 1 + static_cast<int>(rng.uniform_int(6));
      const int n_out = 1 + static_cast<int>(rng.uniform_int(4));
      auto x = random_tensor({c}, rng);
      auto w = random_tensor({n_out, c}, rng);
      auto b = random_tensor({n_out}, rng);
      auto [mw, mb] = detail::mixer(n_out, rng);
      suite.fold("linear", check_gradients(
                               [&](Tape<double>* tape) {
                                 auto out = linear(tape, x, w, b);
                                 return detail::scalarize(tape, out, mw, mb);
                               },
                               {x, w, b}));
    }
    {  // log_compress
      const int c = 1 + static_cast<int>(rng.uniform_int(4));
      const int t = 1 + static_cast<int>(rng.uniform_int(16));
      auto x = random_tensor_kink_safe({c, t}, rng);
      auto [mw, mb] = detail::mixer(c, rng);
      suite.fold("log_compress",
                 check_gradients(
                     [&](Tape<double>* tape) {
                       auto out = log_compress(tape, x);
                       auto pooled = global_avg_pool(tape, out);
                       return linear(tape, pooled, mw, mb);
                     },
                     {x}));
    }
    {  // batchnorm1d, train and eval modes
      const int c = 1 + static_cast<int>(rng.uniform_int(4));
      const int t = 4 + static_cast<int>(rng.uniform_int(20));
      auto x = random_tensor({c, t}, rng);
      BNState<double> bn(c);
      for (auto& v : bn.gamma->values) v = rng.uniform(0.5, 1.5);
      for (auto& v : bn.beta->values) v = rng.uniform(-0.5, 0.5);
      auto [mw, mb] = detail::mixer(c, rng);
      const Mode mode = it % 2 == 0 ? Mode::train : Mode::eval;
      if (mode == Mode::eval) {
        bn.updates = 1;
        for (auto& v : bn.running_mean->values) v = rng.uniform(-0.3, 0.3);
        for (auto& v : bn.running_var->values) v = rng.uniform(0.5, 2.0);
      } else {
        // Train mode normalizes by committed minibatch statistics; commit a
        // two-sample batch so they differ from this sample's own moments.
        bn.begin_batch();
        bn.accumulate(*x);
        auto peer = random_tensor({c, t + 3}, rng);
        bn.accumulate(*peer);
        bn.commit_batch();
      }
      suite.fold("batchnorm1d",
                 check_gradients(
                     [&](Tape<double>* tape) {
                       auto out = batchnorm1d(tape, x, bn, mode);
                       return detail::scalarize(tape, out, mw, mb);
                     },
                     {x, bn.gamma, bn.beta}));
    }
    {  // spatial_dropout in train mode, mask fixed by a per-call RNG reset
      const int c = 2 + static_cast<int>(rng.uniform_int(5));
      const int t = 2 + static_cast<int>(rng.uniform_int(16));
      auto x = random_tensor({c, t}, rng);
      const std::uint64_t mask_seed = rng.next_u64();
      auto [mw, mb] = detail::mixer(c, rng);
      suite.fold("spatial_dropout",
                 check_gradients(
                     [&](Tape<double>* tape) {
                       Rng mask_rng(mask_seed);
                       auto out = spatial_dropout(tape, x, 0.35, Mode::train, &mask_rng);
                       return detail::scalarize(tape, out, mw, mb);
                     },
                     {x}));
    }
    {  // weighted_softmax_cross_entropy
      const int n = 3 + static_cast<int>(rng.uniform_int(9));
      auto logits = random_tensor({n}, rng, -2.0, 2.0);
      const int target = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
      const double w = rng.uniform(0.25, 2.0);
      suite.fold("weighted_softmax_cross_entropy",
                 check_gradients(
                     [&](Tape<double>* tape) {
                       return weighted_softmax_cross_entropy(tape, logits, target, w);
                     },
                     {logits}));
    }
    {  // slice_channels + concat_channels round trip with reordering
      const int c = 3 + static_cast<int>(rng.uniform_int(5));
      const int t = 2 + static_cast<int>(rng.uniform_int(12));
      auto x = random_tensor({c, t}, rng);
      auto [mw, mb] = detail::mixer(c, rng);
      suite.fold("slice_concat_channels",
                 check_gradients(
                     [&](Tape<double>* tape) {
                       auto head = slice_channels(tape, x, 0, 1);
                       auto tail = slice_channels(tape, x, 1, c - 1);
                       auto swapped = concat_channels(tape, {tail, head});
                       return detail::scalarize(tape, swapped, mw, mb);
                     },
                     {x}));
    }
    {  // SincConv cutoffs through build_filters and the strided convolution
      SincConvConfig cfg;
      cfg.n_filters = 2 + static_cast<int>(rng.uniform_int(2));
      cfg.kernel_length = 9 + 2 * static_cast<int>(rng.uniform_int(4));
      cfg.stride = 2 + static_cast<int>(rng.uniform_int(3));
      auto params = make_tensor<double>({cfg.n_filters, 2});
      for (int f = 0; f < cfg.n_filters; ++f) {
        params->at(f, 0) = rng.uniform(20.0, 400.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        params->at(f, 1) = rng.uniform(50.0, 2000.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
      }
      const int t = cfg.kernel_length + static_cast<int>(rng.uniform_int(12));
      auto audio = random_tensor({1, t}, rng);
      auto [mw, mb] = detail::mixer(cfg.n_filters, rng);
      suite.fold("build_filters+sinc_forward",
                 check_gradients(
                     [&](Tape<double>* tape) {
                       auto taps = build_filters(tape, params, cfg);
                       auto out = sinc_forward(tape, audio, taps, cfg);
                       return detail::scalarize(tape, out, mw, mb);
                     },
                     {params, audio}));
    }
    {  // a whole grouped block: conv, BN, dropout, pooling composed
      BlockSpec spec;
      spec.conv = {6, 6, 3, 1 + (it % 2), 3};
      spec.dropout = 0.25;
      Rng init_rng(rng.next_u64());
      auto block = make_block_params<double>(spec, init_rng);
      auto x = random_tensor({6, 8 + static_cast<int>(rng.uniform_int(12))}, rng);
      block.bn.begin_batch();
      block.bn.accumulate(*block_conv<double>(nullptr, x, block, spec));
      block.bn.commit_batch();
      const std::uint64_t mask_seed = rng.next_u64();
      auto [mw, mb] = detail::mixer(6, rng);
      std::vector<TensorPtr<double>> wrt = {x, block.depthwise};
      for (auto& pw : block.pointwise) wrt.push_back(pw);
      wrt.push_back(block.bn.gamma);
      wrt.push_back(block.bn.beta);
      suite.fold("block_forward",
                 check_gradients(
                     [&](Tape<double>* tape) {
                       Rng mask_rng(mask_seed);
                       auto out = block_forward(tape, x, block, spec, Mode::train, &mask_rng);
                       return detail::scalarize(tape, out, mw, mb);
                     },
                     wrt));
    }
  }
  return suite;
}

}  // namespace testsupport
