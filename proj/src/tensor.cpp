#include "hlvae/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "hlvae/error.hpp"

namespace hlvae::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

std::atomic<std::uint64_t> g_seq{0};

std::string shape_str(std::size_t r, std::size_t c) {
  std::ostringstream os;
  os << "(" << r << ", " << c << ")";
  return os.str();
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NonFiniteValue(std::string(op) + " produced a non-finite value");
  }
}

std::shared_ptr<Node> make_node(std::size_t r, std::size_t c, std::vector<double> v,
                                bool requires_grad, bool leaf) {
  if (v.size() != r * c) {
    throw ShapeMismatch("value count " + std::to_string(v.size()) + " does not match shape " +
                        shape_str(r, c));
  }
  auto n = std::make_shared<Node>();
  n->rows = r;
  n->cols = c;
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  n->leaf = leaf;
  n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return n;
}

// Builds an op result; history is only kept when some input needs a gradient.
Tensor record(std::size_t r, std::size_t c, std::vector<double> v, const char* op,
              std::vector<std::shared_ptr<Node>> inputs, BackwardFn fn) {
  check_finite(v, op);
  bool needs = std::any_of(inputs.begin(), inputs.end(),
                           [](const auto& n) { return n->requires_grad; });
  auto node = make_node(r, c, std::move(v), needs, !needs);
  if (needs) {
    node->inputs = std::move(inputs);
    node->backward = std::move(fn);
  }
  return Tensor(node);
}

const Node& N(const Tensor& t) {
  if (!t.defined()) throw ShapeMismatch("use of an undefined tensor");
  return *t.node();
}

struct Broadcast {
  std::size_t rows, cols;
  std::size_t ar, ac, br, bc;
  std::size_t ia(std::size_t i, std::size_t j) const {
    return (ar == 1 ? 0 : i) * ac + (ac == 1 ? 0 : j);
  }
  std::size_t ib(std::size_t i, std::size_t j) const {
    return (br == 1 ? 0 : i) * bc + (bc == 1 ? 0 : j);
  }
};

Broadcast broadcast(const Node& a, const Node& b, const char* op) {
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeMismatch(std::string(op) + ": cannot broadcast " + shape_str(a.rows, a.cols) +
                        " with " + shape_str(b.rows, b.cols));
  };
  return {dim(a.rows, b.rows), dim(a.cols, b.cols), a.rows, a.cols, b.rows, b.cols};
}

template <class F, class DA, class DB>
Tensor binary(const Tensor& ta, const Tensor& tb, const char* op, F f, DA da, DB db) {
  const Node& a = N(ta);
  const Node& b = N(tb);
  Broadcast bc = broadcast(a, b, op);
  std::vector<double> out(bc.rows * bc.cols);
  for (std::size_t i = 0; i < bc.rows; ++i)
    for (std::size_t j = 0; j < bc.cols; ++j)
      out[i * bc.cols + j] = f(a.value[bc.ia(i, j)], b.value[bc.ib(i, j)]);
  auto an = ta.handle();
  auto bn = tb.handle();
  return record(bc.rows, bc.cols, std::move(out), op, {an, bn},
                [bc, an, bn, da, db](std::span<const double> g,
                                     std::span<std::vector<double>* const> in) {
                  for (std::size_t i = 0; i < bc.rows; ++i) {
                    for (std::size_t j = 0; j < bc.cols; ++j) {
                      double gij = g[i * bc.cols + j];
                      double x = an->value[bc.ia(i, j)];
                      double y = bn->value[bc.ib(i, j)];
                      if (in[0]) (*in[0])[bc.ia(i, j)] += gij * da(x, y);
                      if (in[1]) (*in[1])[bc.ib(i, j)] += gij * db(x, y);
                    }
                  }
                });
}

// Elementwise unary op; `d(x, y)` is the derivative given input x and output y.
template <class F, class D>
Tensor unary(const Tensor& tx, const char* op, F f, D d) {
  const Node& x = N(tx);
  std::vector<double> out(x.value.size());
  std::transform(x.value.begin(), x.value.end(), out.begin(), f);
  check_finite(out, op);
  auto xn = tx.handle();
  auto keep = std::make_shared<std::vector<double>>(out);
  return record(x.rows, x.cols, std::move(out), op, {xn},
                [xn, keep, d](std::span<const double> g, std::span<std::vector<double>* const> in) {
                  auto& gx = *in[0];
                  for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * d(xn->value[k], (*keep)[k]);
                });
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
  check_finite(values, "constant");
  return Tensor(make_node(rows, cols, std::move(values), false, true));
}

Tensor Tensor::parameter(std::size_t rows, std::size_t cols, std::vector<double> values) {
  check_finite(values, "parameter");
  return Tensor(make_node(rows, cols, std::move(values), true, true));
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return full(rows, cols, 0.0); }

Tensor Tensor::full(std::size_t rows, std::size_t cols, double value) {
  return constant(rows, cols, std::vector<double>(rows * cols, value));
}

Tensor Tensor::scalar(double value) { return constant(1, 1, {value}); }

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return constant(n, n, std::move(v));
}

Tensor Tensor::column(std::vector<double> values) {
  auto n = values.size();
  return constant(n, 1, std::move(values));
}

Shape Tensor::shape() const { return {N(*this).rows, N(*this).cols}; }
std::size_t Tensor::rows() const { return N(*this).rows; }
std::size_t Tensor::cols() const { return N(*this).cols; }
std::size_t Tensor::size() const { return N(*this).value.size(); }
std::span<const double> Tensor::values() const { return N(*this).value; }

double Tensor::operator()(std::size_t r, std::size_t c) const {
  const Node& n = N(*this);
  return n.value[r * n.cols + c];
}

double Tensor::item() const {
  if (size() != 1) throw NotScalar("item() on a tensor of shape " + shape_str(rows(), cols()));
  return N(*this).value[0];
}

bool Tensor::requires_grad() const { return N(*this).requires_grad; }
bool Tensor::is_leaf() const { return N(*this).leaf; }

std::span<double> Tensor::mutable_values() {
  if (!N(*this).leaf) throw ShapeMismatch("mutable_values() on a non-leaf tensor");
  return node_->value;
}

Tensor Tensor::detach() const { return constant(rows(), cols(), N(*this).value); }

// ---------------------------------------------------------------------------
// Backward

std::vector<double> Gradients::of(const Tensor& leaf) const {
  auto it = grads_.find(leaf.node());
  if (it == grads_.end()) return std::vector<double>(leaf.size(), 0.0);
  return it->second;
}

bool Gradients::contains(const Tensor& leaf) const { return grads_.count(leaf.node()) > 0; }

Gradients backward(const Tensor& root) {
  const Node& r = N(root);
  if (r.value.size() != 1) throw NotScalar("backward() needs a scalar root, got " + shape_str(r.rows, r.cols));

  // Collect reachable nodes that need a gradient.
  std::vector<Node*> order;
  std::unordered_map<const Node*, std::vector<double>> acc;
  std::vector<Node*> stack{root.handle().get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || acc.count(n)) continue;
    acc.emplace(n, std::vector<double>(n->value.size(), 0.0));
    order.push_back(n);
    for (auto& in : n->inputs) stack.push_back(in.get());
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

  Gradients out;
  if (order.empty()) return out;
  acc[root.node()][0] = 1.0;

  std::vector<std::vector<double>*> in_grads;
  for (Node* n : order) {
    if (n->leaf) continue;
    in_grads.clear();
    for (auto& in : n->inputs) {
      auto it = acc.find(in.get());
      in_grads.push_back(it == acc.end() ? nullptr : &it->second);
    }
    n->backward(acc[n], in_grads);
  }
  for (Node* n : order) {
    if (n->leaf) out.grads_.emplace(n, std::move(acc[n]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.values())
    if (!(v > 0)) throw NonFiniteValue("log of a non-positive value");
  return unary(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor log1p(const Tensor& x) {
  for (double v : x.values())
    if (!(v > -1)) throw NonFiniteValue("log1p of a value <= -1");
  return unary(
      x, "log1p", [](double v) { return std::log1p(v); },
      [](double v, double) { return 1.0 / (1.0 + v); });
}

Tensor softplus(const Tensor& x) {
  return unary(x, "softplus", stable_softplus, [](double v, double) { return stable_sigmoid(v); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.values())
    if (!(v > 0)) throw NonFiniteValue("sqrt of a non-positive value");
  return unary(
      x, "sqrt", [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& ta, const Tensor& tb, bool transpose_a, bool transpose_b) {
  const Node& a = N(ta);
  const Node& b = N(tb);
  std::size_t m = transpose_a ? a.cols : a.rows;
  std::size_t k = transpose_a ? a.rows : a.cols;
  std::size_t kb = transpose_b ? b.cols : b.rows;
  std::size_t n = transpose_b ? b.rows : b.cols;
  if (k != kb) {
    throw ShapeMismatch("matmul: inner dimensions differ, " + shape_str(m, k) + " x " +
                        shape_str(kb, n));
  }
  MapC A(a.value.data(), a.rows, a.cols);
  MapC B(b.value.data(), b.rows, b.cols);
  std::vector<double> out(m * n);
  MapM C(out.data(), m, n);
  if (!transpose_a && !transpose_b) C.noalias() = A * B;
  else if (transpose_a && !transpose_b) C.noalias() = A.transpose() * B;
  else if (!transpose_a && transpose_b) C.noalias() = A * B.transpose();
  else C.noalias() = A.transpose() * B.transpose();

  auto an = ta.handle();
  auto bn = tb.handle();
  return record(m, n, std::move(out), "matmul", {an, bn},
                [an, bn, m, n, transpose_a, transpose_b](std::span<const double> g,
                                                         std::span<std::vector<double>* const> in) {
                  MapC G(g.data(), m, n);
                  MapC A(an->value.data(), an->rows, an->cols);
                  MapC B(bn->value.data(), bn->rows, bn->cols);
                  // C = op(A) op(B): dop(A) = G op(B)^T, dop(B) = op(A)^T G
                  if (in[0]) {
                    MapM GA(in[0]->data(), an->rows, an->cols);
                    RowMat d = transpose_b ? RowMat(G * B) : RowMat(G * B.transpose());
                    if (transpose_a) GA += d.transpose();
                    else GA += d;
                  }
                  if (in[1]) {
                    MapM GB(in[1]->data(), bn->rows, bn->cols);
                    RowMat d = transpose_a ? RowMat(A * G) : RowMat(A.transpose() * G);
                    if (transpose_b) GB += d.transpose();
                    else GB += d;
                  }
                });
}

Tensor cholesky(const Tensor& ta) {
  const Node& a = N(ta);
  if (a.rows != a.cols) throw ShapeMismatch("cholesky of non-square " + shape_str(a.rows, a.cols));
  const std::size_t n = a.rows;
  MapC A(a.value.data(), n, n);
  RowMat S = 0.5 * (A + A.transpose());
  const double mean_diag = S.diagonal().mean();

  Eigen::LLT<RowMat> llt(S);
  double jitter = kJitterStart;
  while (llt.info() != Eigen::Success) {
    if (!(mean_diag > 0) || jitter > kJitterMax * (1 + 1e-12)) {
      throw FactorizationFailure("matrix of size " + std::to_string(n) +
                                 " is not positive definite after jitter escalation");
    }
    RowMat J = S;
    J.diagonal().array() += jitter * mean_diag;
    llt.compute(J);
    jitter *= 10.0;
  }
  RowMat L = llt.matrixL();
  std::vector<double> out(L.data(), L.data() + n * n);
  auto an = ta.handle();
  auto keep = std::make_shared<RowMat>(std::move(L));
  return record(n, n, std::move(out), "cholesky", {an},
                [keep, n](std::span<const double> g, std::span<std::vector<double>* const> in) {
                  const RowMat& L = *keep;
                  MapC Lbar(g.data(), n, n);
                  RowMat P = L.transpose() * Lbar.triangularView<Eigen::Lower>().toDenseMatrix();
                  RowMat Phi = P.triangularView<Eigen::Lower>();
                  Phi.diagonal() *= 0.5;
                  // S = L^-T Phi L^-1
                  RowMat T = L.transpose().triangularView<Eigen::Upper>().solve(Phi);
                  RowMat Sg =
                      L.transpose().triangularView<Eigen::Upper>().solve(T.transpose()).transpose();
                  MapM GA(in[0]->data(), n, n);
                  GA += 0.5 * (Sg + Sg.transpose());
                });
}

Tensor triangular_solve(const Tensor& tt, const Tensor& tb, Triangle side, bool transpose) {
  const Node& t = N(tt);
  const Node& b = N(tb);
  if (t.rows != t.cols || t.rows != b.rows) {
    throw ShapeMismatch("triangular_solve: " + shape_str(t.rows, t.cols) + " with rhs " +
                        shape_str(b.rows, b.cols));
  }
  const std::size_t n = t.rows;
  const std::size_t k = b.cols;
  for (std::size_t i = 0; i < n; ++i)
    if (t.value[i * n + i] == 0.0) throw SingularTriangular("zero on the diagonal at " + std::to_string(i));

  MapC T(t.value.data(), n, n);
  MapC B(b.value.data(), n, k);
  // Solve with op(T) and with the opposite transpose flag (used by backward).
  auto solve = [side](const MapC& T, const RowMat& rhs, bool tr) -> RowMat {
    bool lower = (side == Triangle::lower) != tr;
    if (!tr) {
      if (lower) return T.triangularView<Eigen::Lower>().solve(rhs);
      return T.triangularView<Eigen::Upper>().solve(rhs);
    }
    if (lower) return T.transpose().triangularView<Eigen::Lower>().solve(rhs);
    return T.transpose().triangularView<Eigen::Upper>().solve(rhs);
  };
  RowMat X = solve(T, RowMat(B), transpose);
  std::vector<double> out(X.data(), X.data() + n * k);
  auto tn = tt.handle();
  auto bn = tb.handle();
  auto keep = std::make_shared<RowMat>(std::move(X));
  return record(n, k, std::move(out), "triangular_solve", {tn, bn},
                [tn, keep, n, k, side, transpose, solve](std::span<const double> g,
                                                         std::span<std::vector<double>* const> in) {
                  MapC T(tn->value.data(), n, n);
                  MapC G(g.data(), n, k);
                  RowMat Bbar = solve(T, RowMat(G), !transpose);
                  if (in[1]) {
                    MapM GB(in[1]->data(), n, k);
                    GB += Bbar;
                  }
                  if (in[0]) {
                    RowMat D = transpose ? RowMat(-(*keep) * Bbar.transpose())
                                         : RowMat(-Bbar * keep->transpose());
                    MapM GT(in[0]->data(), n, n);
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < n; ++j)
                        if (side == Triangle::lower ? j <= i : j >= i) GT(i, j) += D(i, j);
                  }
                });
}

// ---------------------------------------------------------------------------
// Reductions and structure

Tensor sum(const Tensor& tx) {
  const Node& x = N(tx);
  double s = std::accumulate(x.value.begin(), x.value.end(), 0.0);
  auto xn = tx.handle();
  return record(1, 1, {s}, "sum", {xn},
                [](std::span<const double> g, std::span<std::vector<double>* const> in) {
                  for (double& v : *in[0]) v += g[0];
                });
}

Tensor sum(const Tensor& tx, int axis) {
  const Node& x = N(tx);
  const std::size_t r = x.rows, c = x.cols;
  if (axis == 0) {
    std::vector<double> out(c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[j] += x.value[i * c + j];
    return record(1, c, std::move(out), "sum", {tx.handle()},
                  [r, c](std::span<const double> g, std::span<std::vector<double>* const> in) {
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j) (*in[0])[i * c + j] += g[j];
                  });
  }
  if (axis == 1) {
    std::vector<double> out(r, 0.0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i] += x.value[i * c + j];
    return record(r, 1, std::move(out), "sum", {tx.handle()},
                  [r, c](std::span<const double> g, std::span<std::vector<double>* const> in) {
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j) (*in[0])[i * c + j] += g[i];
                  });
  }
  throw ShapeMismatch("sum: axis must be 0 or 1");
}

Tensor mean(const Tensor& x) { return sum(x) * (1.0 / static_cast<double>(x.size())); }

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat of zero tensors");
  if (axis != 0 && axis != 1) throw ShapeMismatch("concat: axis must be 0 or 1");
  std::size_t r = 0, c = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      if (c == 0) c = p.cols();
      if (p.cols() != c) throw ShapeMismatch("concat rows: column counts differ");
      r += p.rows();
    } else {
      if (r == 0) r = p.rows();
      if (p.rows() != r) throw ShapeMismatch("concat cols: row counts differ");
      c += p.cols();
    }
  }
  std::vector<double> out(r * c);
  std::vector<std::shared_ptr<Node>> inputs;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Node& n = N(p);
    offsets.push_back(off);
    for (std::size_t i = 0; i < n.rows; ++i)
      for (std::size_t j = 0; j < n.cols; ++j) {
        std::size_t oi = axis == 0 ? off + i : i;
        std::size_t oj = axis == 0 ? j : off + j;
        out[oi * c + oj] = n.value[i * n.cols + j];
      }
    off += axis == 0 ? n.rows : n.cols;
    inputs.push_back(p.handle());
  }
  auto shapes = std::make_shared<std::vector<std::pair<std::size_t, std::size_t>>>();
  for (const auto& p : parts) shapes->emplace_back(p.rows(), p.cols());
  return record(r, c, std::move(out), "concat", std::move(inputs),
                [shapes, offsets, axis, c](std::span<const double> g,
                                           std::span<std::vector<double>* const> in) {
                  for (std::size_t k = 0; k < in.size(); ++k) {
                    if (!in[k]) continue;
                    auto [pr, pc] = (*shapes)[k];
                    for (std::size_t i = 0; i < pr; ++i)
                      for (std::size_t j = 0; j < pc; ++j) {
                        std::size_t oi = axis == 0 ? offsets[k] + i : i;
                        std::size_t oj = axis == 0 ? j : offsets[k] + j;
                        (*in[k])[i * pc + j] += g[oi * c + oj];
                      }
                  }
                });
}

Tensor slice(const Tensor& tx, std::size_t row0, std::size_t nrows, std::size_t col0,
             std::size_t ncols) {
  const Node& x = N(tx);
  if (row0 + nrows > x.rows || col0 + ncols > x.cols) {
    throw ShapeMismatch("slice out of range for " + shape_str(x.rows, x.cols));
  }
  const std::size_t c = x.cols;
  std::vector<double> out(nrows * ncols);
  for (std::size_t i = 0; i < nrows; ++i)
    for (std::size_t j = 0; j < ncols; ++j) out[i * ncols + j] = x.value[(row0 + i) * c + col0 + j];
  return record(nrows, ncols, std::move(out), "slice", {tx.handle()},
                [=](std::span<const double> g, std::span<std::vector<double>* const> in) {
                  for (std::size_t i = 0; i < nrows; ++i)
                    for (std::size_t j = 0; j < ncols; ++j)
                      (*in[0])[(row0 + i) * c + col0 + j] += g[i * ncols + j];
                });
}

// ---------------------------------------------------------------------------
// Conveniences

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator-(const Tensor& a) { return mul(a, Tensor::scalar(-1.0)); }
Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }

Tensor rows(const Tensor& x, std::size_t row0, std::size_t nrows) {
  return slice(x, row0, nrows, 0, x.cols());
}

Tensor cols(const Tensor& x, std::size_t col0, std::size_t ncols) {
  return slice(x, 0, x.rows(), col0, ncols);
}

Tensor diagonal(const Tensor& m) {
  if (m.rows() != m.cols()) throw ShapeMismatch("diagonal of a non-square matrix");
  return sum(mul(m, Tensor::identity(m.rows())), 1);
}

Tensor diag_matrix(const Tensor& column) {
  if (column.cols() != 1) throw ShapeMismatch("diag_matrix expects a column vector");
  return mul(Tensor::identity(column.rows()), column);
}

Tensor log_det_from_cholesky(const Tensor& chol) { return 2.0 * sum(log(diagonal(chol))); }

// ---------------------------------------------------------------------------

double gradient_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point,
                      double step) {
  const auto r = point.rows(), c = point.cols();
  std::vector<double> base(point.values().begin(), point.values().end());
  Tensor x = Tensor::parameter(r, c, base);
  Tensor y = fn(x);
  std::vector<double> analytic = backward(y).of(x);

  double worst = 0.0;
  for (std::size_t k = 0; k < base.size(); ++k) {
    auto plus = base, minus = base;
    plus[k] += step;
    minus[k] -= step;
    double fp = fn(Tensor::constant(r, c, plus)).item();
    double fm = fn(Tensor::constant(r, c, minus)).item();
    double numeric = (fp - fm) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[k] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

}  // namespace hlvae::ad
