#pragma once

// Dense rank-2 tensors with reverse-mode automatic differentiation.
//
// Every Tensor is a handle to an immutable node. Operations on tensors that
// depend on a trainable leaf record a backward closure; `backward(root)` walks
// the reachable nodes in reverse creation order (creation order is a valid
// topological order) and returns the gradients of the leaves. Nodes hold no
// gradient state, so independent graphs can be evaluated on different
// threads while sharing the same parameter leaves.
//
// Vectors are stored as (n, 1) columns and scalars as (1, 1).

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

namespace hlvae::ad {

using Shape = std::array<std::size_t, 2>;

struct Node;

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor parameter(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor full(std::size_t rows, std::size_t cols, double value);
  static Tensor scalar(double value);
  static Tensor identity(std::size_t n);
  static Tensor column(std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  Shape shape() const;
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const;

  std::span<const double> values() const;
  double operator()(std::size_t r, std::size_t c) const;
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;

  // Write access for leaves only (parameter updates, checkpoint restore).
  std::span<double> mutable_values();

  // Same values, no history: gradients do not flow through the result.
  Tensor detach() const;

  const Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& handle() const { return node_; }

  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

// Backward closure: receives the gradient of the node's output and an
// accumulator per input (nullptr when the input does not need a gradient).
using BackwardFn = std::function<void(std::span<const double> out_grad,
                                      std::span<std::vector<double>* const> in_grads)>;

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

// Gradient map over the leaves reachable from a root.
class Gradients {
 public:
  // Gradient of `leaf`; all zeros if the leaf is not on any path to the root.
  std::vector<double> of(const Tensor& leaf) const;
  bool contains(const Tensor& leaf) const;

 private:
  friend Gradients backward(const Tensor& root);
  std::unordered_map<const Node*, std::vector<double>> grads_;
};

// Reverse pass from a scalar root. Throws NotScalar otherwise.
Gradients backward(const Tensor& root);

// --- elementwise (with 2-D broadcasting of size-1 axes) ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor log1p(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);

// --- linear algebra ---
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);

enum class Triangle { lower, upper };

// Lower Cholesky factor of the symmetric part of `a`, with escalating jitter.
Tensor cholesky(const Tensor& a);
// Solves op(t) x = b where t is triangular and op is identity or transpose.
Tensor triangular_solve(const Tensor& t, const Tensor& b, Triangle side, bool transpose = false);

// --- reductions and structure ---
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis);  // axis 0 -> (1, cols), axis 1 -> (rows, 1)
Tensor mean(const Tensor& x);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& x, std::size_t row0, std::size_t nrows, std::size_t col0,
             std::size_t ncols);

// --- conveniences composed from the primitives above ---
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor operator+(const Tensor& a, double b);
Tensor operator+(double a, const Tensor& b);
Tensor operator-(const Tensor& a, double b);
Tensor operator-(double a, const Tensor& b);
Tensor operator*(const Tensor& a, double b);
Tensor operator*(double a, const Tensor& b);

Tensor rows(const Tensor& x, std::size_t row0, std::size_t nrows);
Tensor cols(const Tensor& x, std::size_t col0, std::size_t ncols);
Tensor diagonal(const Tensor& square_matrix);         // (n, 1)
Tensor diag_matrix(const Tensor& column);              // (n, n)
Tensor log_det_from_cholesky(const Tensor& chol);      // 2 * sum(log(diag))

// Max relative error between the analytic gradient of `fn` at `point` and
// central finite differences with the given step:
// max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
double gradient_check(const std::function<Tensor(const Tensor&)>& fn,
                      const Tensor& point, double step = 1e-5);

// Cholesky jitter schedule, relative to mean(diag): first attempt without
// jitter, then 1e-8 escalating by x10 up to 1e-4.
inline constexpr double kJitterStart = 1e-8;
inline constexpr double kJitterMax = 1e-4;

}  // namespace hlvae::ad
