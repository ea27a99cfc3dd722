// Dense rank<=3 tensor value type and the reverse-mode tape.
//
// The tape records one closure per executed op; backward() seeds
// d(loss)/d(loss) = 1 and replays the closures in exact reverse execution
// order. Gradients accumulate additively, so the same parameter tensor can
// feed many ops (and many per-sample tapes) and collect all contributions.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sinckws/common.hpp"

namespace sinckws {

template <typename T>
struct Tensor {
  std::vector<int> shape;  // rank 1..3
  std::vector<T> values;
  std::vector<T> grad;  // empty until a backward rule touches it
  bool needs_grad = false;

  Tensor() = default;
  Tensor(std::vector<int> s, T fill) : shape(std::move(s)) {
    values.assign(count(shape), fill);
  }

  static std::int64_t count(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }

  // Gradient buffer, zero-filled on first use.
  std::vector<T>& ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
    return grad;
  }

  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  }

  T& at(int i) { return values[static_cast<std::size_t>(i)]; }
  T& at(int i, int j) { return values[static_cast<std::size_t>(i) * shape[1] + j]; }
  T at(int i) const { return values[static_cast<std::size_t>(i)]; }
  T at(int i, int j) const { return values[static_cast<std::size_t>(i) * shape[1] + j]; }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
  }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
TensorPtr<T> make_tensor(std::vector<int> shape, T fill = T(0)) {
  if (shape.empty() || shape.size() > 3)
    throw std::invalid_argument("tensor rank must be 1..3");
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative tensor extent");
  }
  return std::make_shared<Tensor<T>>(std::move(shape), fill);
}

template <typename T>
TensorPtr<T> make_tensor(std::vector<int> shape, std::vector<T> values) {
  auto t = make_tensor<T>(std::move(shape));
  if (static_cast<std::int64_t>(values.size()) != t->size())
    throw std::invalid_argument("value count does not match shape");
  t->values = std::move(values);
  return t;
}

// Every op output is screened; NaN/Inf is surfaced, never propagated.
template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!all_finite(t.values))
    throw numeric_error(std::string("non-finite values produced by ") + op);
}

template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward_rule) {
    nodes_.push_back(std::move(backward_rule));
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Seeds d(loss)/d(loss) = 1 and replays all rules in reverse order.
  void backward(const TensorPtr<T>& loss) {
    if (!loss || loss->size() != 1)
      throw std::invalid_argument("backward requires a scalar loss");
    if (consumed_) throw std::invalid_argument("tape already consumed");
    consumed_ = true;
    loss->ensure_grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

template <typename T>
void backward(Tape<T>& tape, const TensorPtr<T>& loss) {
  tape.backward(loss);
}

}  // namespace sinckws
