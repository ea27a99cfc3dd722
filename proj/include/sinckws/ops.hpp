// The op set this network needs, forward + backward. Convolutions follow the
// cross-correlation convention; all temporal shapes obey
// T_out = floor((T + 2*pad - k) / stride) + 1.
#pragma once

#include <algorithm>
#include <cmath>

#include "sinckws/tensor.hpp"

namespace sinckws {

enum class Mode { train, eval };

namespace detail {

inline int conv_out_len(int t, int k, int stride, int pad) {
  return (t + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// input [c_in, T] * weight [c_out, c_in/g, k] -> [c_out, T_out], zero padding.
// Output channels are split into g equal blocks; block i sees only input
// channel block i.
template <typename T>
TensorPtr<T> grouped_conv1d(Tape<T>* tape, const TensorPtr<T>& input,
                            const TensorPtr<T>& weight, int stride, int pad,
                            int groups) {
  if (input->shape.size() != 2 || weight->shape.size() != 3)
    throw std::invalid_argument("grouped_conv1d: input must be [c,T], weight [c_out,c_in/g,k]");
  const int c_in = input->shape[0], t_in = input->shape[1];
  const int c_out = weight->shape[0], k = weight->shape[2];
  if (stride < 1) throw std::invalid_argument("grouped_conv1d: stride must be >= 1");
  if (pad < 0) throw std::invalid_argument("grouped_conv1d: negative padding");
  if (groups < 1 || c_in % groups != 0 || c_out % groups != 0)
    throw std::invalid_argument("grouped_conv1d: groups must divide c_in and c_out");
  if (weight->shape[1] != c_in / groups)
    throw std::invalid_argument("grouped_conv1d: weight shape disagrees with c_in/groups");
  if (t_in + 2 * pad < k)
    throw std::invalid_argument("grouped_conv1d: input shorter than kernel");

  const int gc_in = c_in / groups, gc_out = c_out / groups;
  const int t_out = detail::conv_out_len(t_in, k, stride, pad);
  auto out = make_tensor<T>({c_out, t_out});

  for (int oc = 0; oc < c_out; ++oc) {
    const int g = oc / gc_out;
    const T* wrow = weight->values.data() + static_cast<std::size_t>(oc) * gc_in * k;
    T* orow = out->values.data() + static_cast<std::size_t>(oc) * t_out;
    for (int t = 0; t < t_out; ++t) {
      const int start = t * stride - pad;
      const int j0 = std::max(0, -start);
      const int j1 = std::min(k, t_in - start);
      T acc = T(0);
      for (int icr = 0; icr < gc_in; ++icr) {
        const T* xrow = input->values.data() +
                        static_cast<std::size_t>(g * gc_in + icr) * t_in + start;
        const T* wk = wrow + static_cast<std::size_t>(icr) * k;
        for (int j = j0; j < j1; ++j) acc += xrow[j] * wk[j];
      }
      orow[t] = acc;
    }
  }
  check_finite(*out, "grouped_conv1d");

  out->needs_grad = input->needs_grad || weight->needs_grad;
  if (tape && out->needs_grad) {
    tape->record([=]() {
      const auto& go = out->grad;
      T* gi = input->needs_grad ? input->ensure_grad().data() : nullptr;
      T* gw = weight->needs_grad ? weight->ensure_grad().data() : nullptr;
      for (int oc = 0; oc < c_out; ++oc) {
        const int g = oc / gc_out;
        const T* wrow = weight->values.data() + static_cast<std::size_t>(oc) * gc_in * k;
        const T* gorow = go.data() + static_cast<std::size_t>(oc) * t_out;
        for (int t = 0; t < t_out; ++t) {
          const T gout = gorow[t];
          if (gout == T(0)) continue;
          const int start = t * stride - pad;
          const int j0 = std::max(0, -start);
          const int j1 = std::min(k, t_in - start);
          for (int icr = 0; icr < gc_in; ++icr) {
            const std::size_t xoff =
                static_cast<std::size_t>(g * gc_in + icr) * t_in + start;
            const T* xrow = input->values.data() + xoff;
            const std::size_t woff = static_cast<std::size_t>(oc) * gc_in * k +
                                     static_cast<std::size_t>(icr) * k;
            if (gw) {
              for (int j = j0; j < j1; ++j) gw[woff + j] += gout * xrow[j];
            }
            if (gi) {
              const T* wk = wrow + static_cast<std::size_t>(icr) * k;
              for (int j = j0; j < j1; ++j) gi[xoff + j] += gout * wk[j];
            }
          }
        }
      }
    });
  }
  return out;
}

// Per-channel temporal convolution: grouped_conv1d with g = c_in = c_out.
template <typename T>
TensorPtr<T> depthwise_conv1d(Tape<T>* tape, const TensorPtr<T>& input,
                              const TensorPtr<T>& weight, int stride, int pad) {
  if (input->shape.size() != 2 || weight->shape.size() != 3 ||
      weight->shape[0] != input->shape[0] || weight->shape[1] != 1)
    throw std::invalid_argument("depthwise_conv1d: weight must be [c,1,k]");
  return grouped_conv1d(tape, input, weight, stride, pad, input->shape[0]);
}

// [c, T] -> [c, T_out]; each output is the mean of w consecutive inputs.
template <typename T>
TensorPtr<T> avg_pool1d(Tape<T>* tape, const TensorPtr<T>& input, int width,
                        int stride) {
  if (input->shape.size() != 2) throw std::invalid_argument("avg_pool1d: input must be [c,T]");
  if (width < 1 || stride < 1) throw std::invalid_argument("avg_pool1d: width and stride must be >= 1");
  const int c = input->shape[0], t_in = input->shape[1];
  if (t_in < width) throw std::invalid_argument("avg_pool1d: input shorter than pool width");
  const int t_out = (t_in - width) / stride + 1;
  auto out = make_tensor<T>({c, t_out});
  const T inv = T(1) / T(width);
  for (int ch = 0; ch < c; ++ch) {
    const T* xrow = input->values.data() + static_cast<std::size_t>(ch) * t_in;
    T* orow = out->values.data() + static_cast<std::size_t>(ch) * t_out;
    for (int t = 0; t < t_out; ++t) {
      T acc = T(0);
      for (int j = 0; j < width; ++j) acc += xrow[t * stride + j];
      orow[t] = acc * inv;
    }
  }
  check_finite(*out, "avg_pool1d");

  out->needs_grad = input->needs_grad;
  if (tape && out->needs_grad) {
    tape->record([=]() {
      T* gi = input->ensure_grad().data();
      for (int ch = 0; ch < c; ++ch) {
        const T* gorow = out->grad.data() + static_cast<std::size_t>(ch) * t_out;
        for (int t = 0; t < t_out; ++t) {
          const T share = gorow[t] * inv;
          for (int j = 0; j < width; ++j)
            gi[static_cast<std::size_t>(ch) * t_in + t * stride + j] += share;
        }
      }
    });
  }
  return out;
}

// [c, T] -> [c]: per-channel mean over the whole temporal axis.
template <typename T>
TensorPtr<T> global_avg_pool(Tape<T>* tape, const TensorPtr<T>& input) {
  if (input->shape.size() != 2) throw std::invalid_argument("global_avg_pool: input must be [c,T]");
  const int c = input->shape[0], t_in = input->shape[1];
  if (t_in == 0) throw std::invalid_argument("global_avg_pool: empty temporal axis");
  auto out = make_tensor<T>({c});
  const T inv = T(1) / T(t_in);
  for (int ch = 0; ch < c; ++ch) {
    T acc = T(0);
    const T* xrow = input->values.data() + static_cast<std::size_t>(ch) * t_in;
    for (int t = 0; t < t_in; ++t) acc += xrow[t];
    out->values[ch] = acc * inv;
  }
  check_finite(*out, "global_avg_pool");

  out->needs_grad = input->needs_grad;
  if (tape && out->needs_grad) {
    tape->record([=]() {
      T* gi = input->ensure_grad().data();
      for (int ch = 0; ch < c; ++ch) {
        const T share = out->grad[ch] * inv;
        for (int t = 0; t < t_in; ++t)
          gi[static_cast<std::size_t>(ch) * t_in + t] += share;
      }
    });
  }
  return out;
}

// [c] -> [out]: y = W x + b.
template <typename T>
TensorPtr<T> linear(Tape<T>* tape, const TensorPtr<T>& input,
                    const TensorPtr<T>& weight, const TensorPtr<T>& bias) {
  if (input->shape.size() != 1 || weight->shape.size() != 2 ||
      bias->shape.size() != 1)
    throw std::invalid_argument("linear: expected input [c], weight [out,c], bias [out]");
  const int c = input->shape[0], n_out = weight->shape[0];
  if (weight->shape[1] != c || bias->shape[0] != n_out)
    throw std::invalid_argument("linear: shape mismatch");
  auto out = make_tensor<T>({n_out});
  for (int o = 0; o < n_out; ++o) {
    T acc = bias->values[o];
    const T* wrow = weight->values.data() + static_cast<std::size_t>(o) * c;
    for (int i = 0; i < c; ++i) acc += wrow[i] * input->values[i];
    out->values[o] = acc;
  }
  check_finite(*out, "linear");

  out->needs_grad = input->needs_grad || weight->needs_grad || bias->needs_grad;
  if (tape && out->needs_grad) {
    tape->record([=]() {
      for (int o = 0; o < n_out; ++o) {
        const T gout = out->grad[o];
        if (bias->needs_grad) bias->ensure_grad()[o] += gout;
        const T* wrow = weight->values.data() + static_cast<std::size_t>(o) * c;
        for (int i = 0; i < c; ++i) {
          if (weight->needs_grad)
            weight->ensure_grad()[static_cast<std::size_t>(o) * c + i] +=
                gout * input->values[i];
          if (input->needs_grad) input->ensure_grad()[i] += gout * wrow[i];
        }
      }
    });
  }
  return out;
}

// Elementwise y = ln(|x| + 1); the subgradient of |x| at 0 is 0.
template <typename T>
TensorPtr<T> log_compress(Tape<T>* tape, const TensorPtr<T>& input) {
  auto out = make_tensor<T>(input->shape);
  const std::size_t n = input->values.size();
  for (std::size_t i = 0; i < n; ++i)
    out->values[i] = std::log(std::abs(input->values[i]) + T(1));
  check_finite(*out, "log_compress");

  out->needs_grad = input->needs_grad;
  if (tape && out->needs_grad) {
    tape->record([=]() {
      T* gi = input->ensure_grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        const T x = input->values[i];
        const T sgn = x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
        gi[i] += out->grad[i] * sgn / (std::abs(x) + T(1));
      }
    });
  }
  return out;
}

// Per-channel batch normalization state. Ops run one sample at a time, so the
// minibatch statistics train mode normalizes by are collected up front: call
// begin_batch, accumulate every sample's pre-normalization activations, then
// commit_batch, which fixes the batch mean/variance and folds them into the
// running estimates (one EMA step per minibatch). Eval mode normalizes with
// the running estimates.
template <typename T>
struct BNState {
  TensorPtr<T> gamma, beta;                // trainable affine
  TensorPtr<T> running_mean, running_var;  // EMA statistics, not trained
  std::vector<T> batch_mean, batch_var;    // committed minibatch, biased var
  double momentum = 0.1;
  double eps = 1e-5;
  std::int64_t updates = 0;  // committed minibatches
  bool has_batch = false;

  explicit BNState(int channels = 0) { reset(channels); }

  void reset(int channels) {
    gamma = make_tensor<T>({std::max(channels, 1)}, T(1));
    beta = make_tensor<T>({std::max(channels, 1)}, T(0));
    gamma->needs_grad = beta->needs_grad = true;
    running_mean = make_tensor<T>({std::max(channels, 1)}, T(0));
    running_var = make_tensor<T>({std::max(channels, 1)}, T(1));
    batch_mean.clear();
    batch_var.clear();
    sum_.clear();
    sum_sq_.clear();
    count_ = 0;
    updates = 0;
    has_batch = false;
  }

  int channels() const { return gamma->shape[0]; }

  void begin_batch() {
    sum_.assign(static_cast<std::size_t>(channels()), 0.0);
    sum_sq_.assign(static_cast<std::size_t>(channels()), 0.0);
    count_ = 0;
  }

  void accumulate(const Tensor<T>& input) {
    if (input.shape.size() != 2 || input.shape[0] != channels())
      throw std::invalid_argument("batchnorm1d: accumulated sample must be [c,T]");
    if (sum_.empty()) throw std::invalid_argument("batchnorm1d: accumulate before begin_batch");
    const int t_in = input.shape[1];
    for (int ch = 0; ch < channels(); ++ch) {
      const T* xrow = input.values.data() + static_cast<std::size_t>(ch) * t_in;
      double s = 0.0, sq = 0.0;
      for (int t = 0; t < t_in; ++t) {
        s += xrow[t];
        sq += static_cast<double>(xrow[t]) * xrow[t];
      }
      sum_[static_cast<std::size_t>(ch)] += s;
      sum_sq_[static_cast<std::size_t>(ch)] += sq;
    }
    count_ += t_in;
  }

  void commit_batch() {
    if (count_ == 0)
      throw std::invalid_argument("batchnorm1d: commit_batch with nothing accumulated");
    batch_mean.resize(static_cast<std::size_t>(channels()));
    batch_var.resize(static_cast<std::size_t>(channels()));
    const double n = static_cast<double>(count_);
    const T m = static_cast<T>(momentum);
    for (int ch = 0; ch < channels(); ++ch) {
      const auto c = static_cast<std::size_t>(ch);
      const double mean = sum_[c] / n;
      const double var = std::max(sum_sq_[c] / n - mean * mean, 0.0);
      batch_mean[c] = static_cast<T>(mean);
      batch_var[c] = static_cast<T>(var);
      const double var_unbiased = count_ > 1 ? var * n / (n - 1.0) : var;
      running_mean->values[c] =
          (T(1) - m) * running_mean->values[c] + m * static_cast<T>(mean);
      running_var->values[c] =
          (T(1) - m) * running_var->values[c] + m * static_cast<T>(var_unbiased);
    }
    sum_.clear();
    sum_sq_.clear();
    count_ = 0;
    has_batch = true;
    ++updates;
  }

 private:
  std::vector<double> sum_, sum_sq_;  // accumulated in double against cancellation
  long long count_ = 0;               // time positions accumulated per channel
};

// Normalizes one sample with the committed minibatch statistics (train) or
// the running estimates (eval). Either way the statistics are constants of
// the op, so the backward rule is a plain per-channel scale.
template <typename T>
TensorPtr<T> batchnorm1d(Tape<T>* tape, const TensorPtr<T>& input,
                         BNState<T>& state, Mode mode) {
  if (input->shape.size() != 2) throw std::invalid_argument("batchnorm1d: input must be [c,T]");
  const int c = input->shape[0], t_in = input->shape[1];
  if (c != state.channels()) throw std::invalid_argument("batchnorm1d: channel count mismatch");
  if (mode == Mode::eval && state.updates == 0)
    throw std::invalid_argument("batchnorm1d: eval before any statistics were recorded");
  if (mode == Mode::train && !state.has_batch)
    throw std::invalid_argument(
        "batchnorm1d: train mode requires committed minibatch statistics");

  auto out = make_tensor<T>({c, t_in});
  auto xhat = make_tensor<T>({c, t_in});  // saved for the backward rule
  std::vector<T> inv_std(static_cast<std::size_t>(c));
  const T eps = static_cast<T>(state.eps);

  for (int ch = 0; ch < c; ++ch) {
    const T* xrow = input->values.data() + static_cast<std::size_t>(ch) * t_in;
    const auto chu = static_cast<std::size_t>(ch);
    const T mean =
        mode == Mode::train ? state.batch_mean[chu] : state.running_mean->values[chu];
    const T var =
        mode == Mode::train ? state.batch_var[chu] : state.running_var->values[chu];
    const T istd = T(1) / std::sqrt(var + eps);
    inv_std[chu] = istd;
    const T g = state.gamma->values[chu], b = state.beta->values[chu];
    T* xh = xhat->values.data() + chu * t_in;
    T* orow = out->values.data() + chu * t_in;
    for (int t = 0; t < t_in; ++t) {
      xh[t] = (xrow[t] - mean) * istd;
      orow[t] = g * xh[t] + b;
    }
  }
  check_finite(*out, "batchnorm1d");

  out->needs_grad = input->needs_grad || state.gamma->needs_grad || state.beta->needs_grad;
  if (tape && out->needs_grad) {
    auto gamma = state.gamma;
    auto beta = state.beta;
    tape->record([=]() {
      for (int ch = 0; ch < c; ++ch) {
        const T* go = out->grad.data() + static_cast<std::size_t>(ch) * t_in;
        const T* xh = xhat->values.data() + static_cast<std::size_t>(ch) * t_in;
        T sum_go = T(0), sum_go_xh = T(0);
        for (int t = 0; t < t_in; ++t) {
          sum_go += go[t];
          sum_go_xh += go[t] * xh[t];
        }
        if (gamma->needs_grad) gamma->ensure_grad()[ch] += sum_go_xh;
        if (beta->needs_grad) beta->ensure_grad()[ch] += sum_go;
        if (input->needs_grad) {
          T* gi = input->ensure_grad().data() + static_cast<std::size_t>(ch) * t_in;
          const T scale =
              gamma->values[ch] * inv_std[static_cast<std::size_t>(ch)];
          for (int t = 0; t < t_in; ++t) gi[t] += scale * go[t];
        }
      }
    });
  }
  return out;
}

// Zeroes whole channels with probability p and rescales survivors by
// 1/(1-p). Identity in eval mode and for p = 0 (no RNG consumed).
template <typename T>
TensorPtr<T> spatial_dropout(Tape<T>* tape, const TensorPtr<T>& input, double p,
                             Mode mode, Rng* rng) {
  if (input->shape.size() != 2) throw std::invalid_argument("spatial_dropout: input must be [c,T]");
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("spatial_dropout: rate must be in [0,1)");
  if (mode == Mode::eval || p == 0.0) return input;
  if (!rng) throw std::invalid_argument("spatial_dropout: train mode requires an RNG");

  const int c = input->shape[0], t_in = input->shape[1];
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c));
  for (int ch = 0; ch < c; ++ch)
    (*mask)[static_cast<std::size_t>(ch)] = rng->uniform() < p ? T(0) : scale;

  auto out = make_tensor<T>({c, t_in});
  for (int ch = 0; ch < c; ++ch) {
    const T m = (*mask)[static_cast<std::size_t>(ch)];
    const T* xrow = input->values.data() + static_cast<std::size_t>(ch) * t_in;
    T* orow = out->values.data() + static_cast<std::size_t>(ch) * t_in;
    for (int t = 0; t < t_in; ++t) orow[t] = xrow[t] * m;
  }
  check_finite(*out, "spatial_dropout");

  out->needs_grad = input->needs_grad;
  if (tape && out->needs_grad) {
    tape->record([=]() {
      T* gi = input->ensure_grad().data();
      for (int ch = 0; ch < c; ++ch) {
        const T m = (*mask)[static_cast<std::size_t>(ch)];
        if (m == T(0)) continue;
        const T* go = out->grad.data() + static_cast<std::size_t>(ch) * t_in;
        for (int t = 0; t < t_in; ++t)
          gi[static_cast<std::size_t>(ch) * t_in + t] += go[t] * m;
      }
    });
  }
  return out;
}

// loss = -w * log softmax(logits)[target], max-subtracted for stability.
template <typename T>
TensorPtr<T> weighted_softmax_cross_entropy(Tape<T>* tape,
                                            const TensorPtr<T>& logits,
                                            int target, T weight) {
  if (logits->shape.size() != 1)
    throw std::invalid_argument("weighted_softmax_cross_entropy: logits must be rank 1");
  const int n = logits->shape[0];
  if (target < 0 || target >= n)
    throw std::invalid_argument("weighted_softmax_cross_entropy: target out of range");
  if (weight < T(0))
    throw std::invalid_argument("weighted_softmax_cross_entropy: negative class weight");

  T mx = logits->values[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits->values[i]);
  T sum = T(0);
  auto softmax = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const T e = std::exp(logits->values[i] - mx);
    (*softmax)[static_cast<std::size_t>(i)] = e;
    sum += e;
  }
  for (int i = 0; i < n; ++i) (*softmax)[static_cast<std::size_t>(i)] /= sum;

  auto loss = make_tensor<T>({1});
  loss->values[0] = weight * (std::log(sum) - (logits->values[target] - mx));
  check_finite(*loss, "weighted_softmax_cross_entropy");

  loss->needs_grad = logits->needs_grad;
  if (tape && loss->needs_grad) {
    tape->record([=]() {
      const T gl = loss->grad[0] * weight;
      T* gi = logits->ensure_grad().data();
      for (int i = 0; i < n; ++i) {
        T p = (*softmax)[static_cast<std::size_t>(i)];
        gi[i] += gl * (p - (i == target ? T(1) : T(0)));
      }
    });
  }
  return loss;
}

// [c, T] -> [count, T] channel window starting at `begin`.
template <typename T>
TensorPtr<T> slice_channels(Tape<T>* tape, const TensorPtr<T>& input, int begin,
                            int count) {
  if (input->shape.size() != 2) throw std::invalid_argument("slice_channels: input must be [c,T]");
  const int c = input->shape[0], t_in = input->shape[1];
  if (begin < 0 || count < 1 || begin + count > c)
    throw std::invalid_argument("slice_channels: window out of range");
  auto out = make_tensor<T>({count, t_in});
  std::copy_n(input->values.begin() + static_cast<std::size_t>(begin) * t_in,
              static_cast<std::size_t>(count) * t_in, out->values.begin());

  out->needs_grad = input->needs_grad;
  if (tape && out->needs_grad) {
    tape->record([=]() {
      T* gi = input->ensure_grad().data() + static_cast<std::size_t>(begin) * t_in;
      for (std::size_t i = 0; i < out->grad.size(); ++i) gi[i] += out->grad[i];
    });
  }
  return out;
}

// Stack tensors [c_i, T] into [sum c_i, T], in argument order.
template <typename T>
TensorPtr<T> concat_channels(Tape<T>* tape,
                             const std::vector<TensorPtr<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const int t_in = parts[0]->shape[1];
  int c_total = 0;
  for (const auto& p : parts) {
    if (p->shape.size() != 2 || p->shape[1] != t_in)
      throw std::invalid_argument("concat_channels: temporal lengths disagree");
    c_total += p->shape[0];
  }
  auto out = make_tensor<T>({c_total, t_in});
  std::size_t off = 0;
  bool needs = false;
  for (const auto& p : parts) {
    std::copy(p->values.begin(), p->values.end(), out->values.begin() + off);
    off += p->values.size();
    needs = needs || p->needs_grad;
  }

  out->needs_grad = needs;
  if (tape && needs) {
    tape->record([=]() {
      std::size_t o = 0;
      for (const auto& p : parts) {
        if (p->needs_grad) {
          T* gi = p->ensure_grad().data();
          for (std::size_t i = 0; i < p->values.size(); ++i) gi[i] += out->grad[o + i];
        }
        o += p->values.size();
      }
    });
  }
  return out;
}

}  // namespace sinckws
