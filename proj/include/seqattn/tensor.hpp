#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace seqattn {

#ifdef SEQATTN_FLOAT32
using Scalar = float;
#else
using Scalar = double;
#endif

// A named trainable tensor living outside any tape. Forward passes bind it
// onto a tape as a leaf; Tape::backward accumulates d(loss)/d(param) here.
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;
  bool trainable = true;

  size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), Scalar(0)); }
};

inline size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

inline Param make_param(std::string name, std::vector<int> shape) {
  Param p;
  p.name = std::move(name);
  p.shape = std::move(shape);
  size_t n = shape_numel(p.shape);
  p.value.assign(n, Scalar(0));
  p.grad.assign(n, Scalar(0));
  return p;
}

enum class DropoutMode { Train, Eval };

namespace detail {

inline std::string shape_str(int rank, const std::array<int, 2>& d) {
  if (rank == 0) return "[scalar]";
  if (rank == 1) return "[" + std::to_string(d[0]) + "]";
  return "[" + std::to_string(d[0]) + "x" + std::to_string(d[1]) + "]";
}

inline Scalar sigmoid_scalar(Scalar x) {
  if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
  Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

enum class Op : uint8_t {
  Leaf,
  MatMul,    // [m×k]·[k×n]
  MatVec,    // [m×k]·[k]
  MatTVec,   // transpose([m×k])·[m] -> [k]
  Add,
  Sub,
  Mul,
  Sigmoid,
  Tanh,
  MaskedSoftmax,
  Concat0,
  Concat1,
  SumComponents,
  Dropout,
  NllLoss,
  LookupRow,
  Scale,
  StackScalars,
  AttentionContext,
};

}  // namespace detail

class Tape;

// Lightweight handle into a Tape. Values are written once at op creation and
// immutable afterwards; grad fills in during backward.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, int index) : tape_(tape), index_(index) {}

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int index() const { return index_; }

  int rank() const;
  int dim(int axis) const;
  std::vector<int> shape() const;
  size_t size() const;
  bool requires_grad() const;
  std::span<const Scalar> values() const;
  std::span<const Scalar> grad() const;  // zeros when backward never reached it
  Scalar item() const;                   // single-element tensors

 private:
  Tape* tape_ = nullptr;
  int index_ = -1;
};

class Tape {
 public:
  struct Node {
    detail::Op op = detail::Op::Leaf;
    int a = -1, b = -1;
    int rank = 0;
    std::array<int, 2> dims{1, 1};
    std::vector<Scalar> values;
    std::vector<Scalar> grad;
    bool requires_grad = false;
    Scalar scalar = 0;              // Scale factor / dropout keep-scale
    int aux = -1;                   // concat split / nll target / lookup row
    std::vector<uint8_t> mask;      // softmax mask, dropout keep-mask
    std::vector<Scalar> stash;      // nll softmax probabilities
    std::vector<int> ins;           // variadic inputs
    Param* param = nullptr;

    size_t numel() const { return values.size(); }
  };

  Tensor constant(std::vector<int> shape, std::vector<Scalar> values) {
    return push_leaf(std::move(shape), std::move(values), false, nullptr);
  }

  Tensor zeros(std::vector<int> shape) {
    size_t n = shape_numel(shape);
    return constant(std::move(shape), std::vector<Scalar>(n, Scalar(0)));
  }

  Tensor ones(std::vector<int> shape) {
    size_t n = shape_numel(shape);
    return constant(std::move(shape), std::vector<Scalar>(n, Scalar(1)));
  }

  Tensor scalar_value(Scalar v) { return constant({}, {v}); }

  // Differentiable leaf not backed by a Param (grad-check inputs).
  Tensor input(std::vector<int> shape, std::vector<Scalar> values, bool requires_grad = true) {
    return push_leaf(std::move(shape), std::move(values), requires_grad, nullptr);
  }

  // Bind a Param onto this tape. Repeated binds of the same Param return the
  // same node so gradients from all uses accumulate in one place.
  Tensor leaf(Param& p) {
    for (const auto& [ptr, idx] : leaf_cache_)
      if (ptr == &p) return Tensor(this, idx);
    Tensor t = push_leaf(p.shape, p.value, p.trainable, &p);
    leaf_cache_.emplace_back(&p, t.index());
    return t;
  }

  // Reverse pass from a scalar loss. Populates node grads for everything
  // reachable and flushes leaf grads into their bound Params.
  void backward(const Tensor& loss);

  void clear() {
    nodes_.clear();
    leaf_cache_.clear();
  }

  size_t size() const { return nodes_.size(); }
  Node& node(int i) { return nodes_[static_cast<size_t>(i)]; }
  const Node& node(int i) const { return nodes_[static_cast<size_t>(i)]; }

  int push(Node&& n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size() - 1);
  }

  std::span<Scalar> ensure_grad(int i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.grad.empty()) n.grad.assign(n.numel(), Scalar(0));
    return n.grad;
  }

 private:
  Tensor push_leaf(std::vector<int> shape, std::vector<Scalar> values, bool requires_grad,
                   Param* p) {
    if (shape_numel(shape) != values.size())
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match declared shape");
    Node n;
    n.op = detail::Op::Leaf;
    n.rank = static_cast<int>(shape.size());
    if (n.rank > 2) throw ShapeError("rank > 2 tensors are not supported");
    for (int i = 0; i < n.rank; ++i) n.dims[static_cast<size_t>(i)] = shape[static_cast<size_t>(i)];
    n.values = std::move(values);
    n.requires_grad = requires_grad;
    n.param = p;
    return Tensor(this, push(std::move(n)));
  }

  void backward_node(int i);

  std::vector<Node> nodes_;
  std::vector<std::pair<Param*, int>> leaf_cache_;
};

inline int Tensor::rank() const { return tape_->node(index_).rank; }
inline int Tensor::dim(int axis) const { return tape_->node(index_).dims[static_cast<size_t>(axis)]; }
inline std::vector<int> Tensor::shape() const {
  const auto& n = tape_->node(index_);
  std::vector<int> s;
  for (int i = 0; i < n.rank; ++i) s.push_back(n.dims[static_cast<size_t>(i)]);
  return s;
}
inline size_t Tensor::size() const { return tape_->node(index_).numel(); }
inline bool Tensor::requires_grad() const { return tape_->node(index_).requires_grad; }
inline std::span<const Scalar> Tensor::values() const { return tape_->node(index_).values; }
inline std::span<const Scalar> Tensor::grad() const {
  tape_->ensure_grad(index_);
  return tape_->node(index_).grad;
}
inline Scalar Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor with " + std::to_string(size()) + " elements");
  return values()[0];
}

namespace detail {

inline void check_same_tape(const Tensor& a, const Tensor& b) {
  if (a.tape() != b.tape()) throw ContractError("operands live on different tapes");
}

// C[m×n] += A[m×k]·B[k×n], with optional transposes realized by the caller
// through index arithmetic helpers below.
inline void gemm_acc(std::span<const Scalar> a, int am, int ak, std::span<const Scalar> b, int bk,
                     int bn, std::span<Scalar> c) {
  for (int i = 0; i < am; ++i)
    for (int k = 0; k < ak; ++k) {
      Scalar av = a[static_cast<size_t>(i * ak + k)];
      if (av == Scalar(0)) continue;
      const Scalar* brow = b.data() + static_cast<size_t>(k) * static_cast<size_t>(bn);
      Scalar* crow = c.data() + static_cast<size_t>(i) * static_cast<size_t>(bn);
      for (int j = 0; j < bn; ++j) crow[j] += av * brow[j];
    }
  (void)bk;
}

}  // namespace detail

// ---- operations ------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false) {
  detail::check_same_tape(a, b);
  Tape* t = a.tape();
  const auto& na = t->node(a.index());
  const auto& nb = t->node(b.index());
  if (na.rank != 2)
    throw ShapeError("matmul left operand must be rank 2, got " +
                     detail::shape_str(na.rank, na.dims));
  Tape::Node out;
  out.a = a.index();
  out.b = b.index();
  out.requires_grad = na.requires_grad || nb.requires_grad;
  int m = na.dims[0], k = na.dims[1];
  if (nb.rank == 2) {
    if (transpose_a) throw ShapeError("matmul transpose_a is only supported for vector operands");
    if (k != nb.dims[0])
      throw ShapeError("matmul inner dimensions disagree: " + detail::shape_str(2, na.dims) +
                       " vs " + detail::shape_str(2, nb.dims));
    int n = nb.dims[1];
    out.op = detail::Op::MatMul;
    out.rank = 2;
    out.dims = {m, n};
    out.values.assign(static_cast<size_t>(m) * static_cast<size_t>(n), Scalar(0));
    detail::gemm_acc(na.values, m, k, nb.values, k, n, out.values);
  } else if (nb.rank == 1) {
    int xlen = nb.dims[0];
    if (!transpose_a) {
      if (k != xlen)
        throw ShapeError("matmul dimensions disagree: " + detail::shape_str(2, na.dims) + " vs " +
                         detail::shape_str(1, nb.dims));
      out.op = detail::Op::MatVec;
      out.rank = 1;
      out.dims = {m, 1};
      out.values.assign(static_cast<size_t>(m), Scalar(0));
      for (int i = 0; i < m; ++i) {
        Scalar acc = 0;
        const Scalar* row = na.values.data() + static_cast<size_t>(i) * static_cast<size_t>(k);
        for (int j = 0; j < k; ++j) acc += row[j] * nb.values[static_cast<size_t>(j)];
        out.values[static_cast<size_t>(i)] = acc;
      }
    } else {
      if (m != xlen)
        throw ShapeError("matmul (transposed) dimensions disagree: " +
                         detail::shape_str(2, na.dims) + " vs " + detail::shape_str(1, nb.dims));
      out.op = detail::Op::MatTVec;
      out.rank = 1;
      out.dims = {k, 1};
      out.values.assign(static_cast<size_t>(k), Scalar(0));
      for (int i = 0; i < m; ++i) {
        Scalar xv = nb.values[static_cast<size_t>(i)];
        if (xv == Scalar(0)) continue;
        const Scalar* row = na.values.data() + static_cast<size_t>(i) * static_cast<size_t>(k);
        for (int j = 0; j < k; ++j) out.values[static_cast<size_t>(j)] += row[j] * xv;
      }
    }
  } else {
    throw ShapeError("matmul right operand must be rank 1 or 2");
  }
  return Tensor(t, t->push(std::move(out)));
}

namespace detail {

inline Tensor elementwise(Op op, const Tensor& a, const Tensor& b) {
  check_same_tape(a, b);
  Tape* t = a.tape();
  const auto& na = t->node(a.index());
  const auto& nb = t->node(b.index());
  bool a_scalar = na.rank == 0;
  bool b_scalar = nb.rank == 0;
  if (!a_scalar && !b_scalar) {
    if (na.rank != nb.rank || na.dims != nb.dims)
      throw ShapeError("elementwise shapes disagree: " + shape_str(na.rank, na.dims) + " vs " +
                       shape_str(nb.rank, nb.dims));
  }
  const auto& big = b_scalar ? na : nb;
  size_t n = big.numel();
  Tape::Node out;
  out.op = op;
  out.a = a.index();
  out.b = b.index();
  out.rank = big.rank;
  out.dims = big.dims;
  out.requires_grad = na.requires_grad || nb.requires_grad;
  out.values.resize(n);
  auto av = [&](size_t i) { return na.values[a_scalar ? 0 : i]; };
  auto bv = [&](size_t i) { return nb.values[b_scalar ? 0 : i]; };
  switch (op) {
    case Op::Add:
      for (size_t i = 0; i < n; ++i) out.values[i] = av(i) + bv(i);
      break;
    case Op::Sub:
      for (size_t i = 0; i < n; ++i) out.values[i] = av(i) - bv(i);
      break;
    case Op::Mul:
      for (size_t i = 0; i < n; ++i) out.values[i] = av(i) * bv(i);
      break;
    default:
      throw ContractError("not an elementwise op");
  }
  return Tensor(t, t->push(std::move(out)));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::elementwise(detail::Op::Add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::elementwise(detail::Op::Sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::elementwise(detail::Op::Mul, a, b); }

inline Tensor sigmoid(const Tensor& a) {
  Tape* t = a.tape();
  const auto& na = t->node(a.index());
  Tape::Node out;
  out.op = detail::Op::Sigmoid;
  out.a = a.index();
  out.rank = na.rank;
  out.dims = na.dims;
  out.requires_grad = na.requires_grad;
  out.values.resize(na.numel());
  for (size_t i = 0; i < na.numel(); ++i) out.values[i] = detail::sigmoid_scalar(na.values[i]);
  return Tensor(t, t->push(std::move(out)));
}

inline Tensor tanh(const Tensor& a) {
  Tape* t = a.tape();
  const auto& na = t->node(a.index());
  Tape::Node out;
  out.op = detail::Op::Tanh;
  out.a = a.index();
  out.rank = na.rank;
  out.dims = na.dims;
  out.requires_grad = na.requires_grad;
  out.values.resize(na.numel());
  for (size_t i = 0; i < na.numel(); ++i) out.values[i] = std::tanh(na.values[i]);
  return Tensor(t, t->push(std::move(out)));
}

// Stable masked softmax over a vector: masked positions get exactly 0, the
// rest exp(x - max)/sum. Requires at least one unmasked position.
inline Tensor masked_softmax(const Tensor& logits, std::span<const uint8_t> mask) {
  Tape* t = logits.tape();
  const auto& na = t->node(logits.index());
  if (na.rank != 1)
    throw ShapeError("masked_softmax expects a vector, got " + detail::shape_str(na.rank, na.dims));
  if (mask.size() != na.numel())
    throw ShapeError("masked_softmax mask length " + std::to_string(mask.size()) +
                     " does not match logits " + detail::shape_str(na.rank, na.dims));
  Scalar max = -std::numeric_limits<Scalar>::infinity();
  bool any = false;
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      any = true;
      max = std::max(max, na.values[i]);
    }
  if (!any) throw DegenerateInputError("masked_softmax: all positions masked");
  Tape::Node out;
  out.op = detail::Op::MaskedSoftmax;
  out.a = logits.index();
  out.rank = 1;
  out.dims = na.dims;
  out.requires_grad = na.requires_grad;
  out.mask.assign(mask.begin(), mask.end());
  out.values.assign(na.numel(), Scalar(0));
  Scalar sum = 0;
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      Scalar e = std::exp(na.values[i] - max);
      out.values[i] = e;
      sum += e;
    }
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.values[i] /= sum;
  return Tensor(t, t->push(std::move(out)));
}

inline Tensor masked_softmax(const Tensor& logits, const std::vector<uint8_t>& mask) {
  return masked_softmax(logits, std::span<const uint8_t>(mask));
}

inline Tensor concat(const Tensor& a, const Tensor& b, int axis = 0) {
  detail::check_same_tape(a, b);
  Tape* t = a.tape();
  const auto& na = t->node(a.index());
  const auto& nb = t->node(b.index());
  if (na.rank != nb.rank)
    throw ShapeError("concat rank mismatch: " + detail::shape_str(na.rank, na.dims) + " vs " +
                     detail::shape_str(nb.rank, nb.dims));
  if (na.rank == 0 || na.rank > 2) throw ShapeError("concat expects rank 1 or 2 tensors");
  if (axis < 0 || axis >= na.rank) throw ShapeError("concat axis out of range");
  Tape::Node out;
  out.a = a.index();
  out.b = b.index();
  out.rank = na.rank;
  out.requires_grad = na.requires_grad || nb.requires_grad;
  if (na.rank == 1) {
    out.op = detail::Op::Concat0;
    out.dims = {na.dims[0] + nb.dims[0], 1};
    out.aux = na.dims[0];
    out.values.reserve(na.numel() + nb.numel());
    out.values.insert(out.values.end(), na.values.begin(), na.values.end());
    out.values.insert(out.values.end(), nb.values.begin(), nb.values.end());
  } else if (axis == 0) {
    if (na.dims[1] != nb.dims[1])
      throw ShapeError("concat column counts disagree: " + detail::shape_str(2, na.dims) + " vs " +
                       detail::shape_str(2, nb.dims));
    out.op = detail::Op::Concat0;
    out.dims = {na.dims[0] + nb.dims[0], na.dims[1]};
    out.aux = na.dims[0];
    out.values.reserve(na.numel() + nb.numel());
    out.values.insert(out.values.end(), na.values.begin(), na.values.end());
    out.values.insert(out.values.end(), nb.values.begin(), nb.values.end());
  } else {
    if (na.dims[0] != nb.dims[0])
      throw ShapeError("concat row counts disagree: " + detail::shape_str(2, na.dims) + " vs " +
                       detail::shape_str(2, nb.dims));
    out.op = detail::Op::Concat1;
    out.dims = {na.dims[0], na.dims[1] + nb.dims[1]};
    out.aux = na.dims[1];
    out.values.resize(na.numel() + nb.numel());
    int rows = na.dims[0], ca = na.dims[1], cb = nb.dims[1];
    for (int r = 0; r < rows; ++r) {
      std::copy_n(na.values.begin() + static_cast<long>(r) * ca, ca,
                  out.values.begin() + static_cast<long>(r) * (ca + cb));
      std::copy_n(nb.values.begin() + static_cast<long>(r) * cb, cb,
                  out.values.begin() + static_cast<long>(r) * (ca + cb) + ca);
    }
  }
  return Tensor(t, t->push(std::move(out)));
}

inline Tensor sum_components(const Tensor& a) {
  Tape* t = a.tape();
  const auto& na = t->node(a.index());
  Tape::Node out;
  out.op = detail::Op::SumComponents;
  out.a = a.index();
  out.rank = 0;
  out.requires_grad = na.requires_grad;
  Scalar acc = 0;
  for (Scalar v : na.values) acc += v;
  out.values = {acc};
  return Tensor(t, t->push(std::move(out)));
}

// Inverted dropout: train mode zeroes components with probability `rate` and
// scales survivors by 1/(1-rate); eval mode (and rate 0) is the identity and
// returns the input handle untouched.
inline Tensor dropout(const Tensor& a, double rate, DropoutMode mode, Rng* rng = nullptr) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout rate must lie in [0,1), got " + std::to_string(rate));
  if (mode == DropoutMode::Eval || rate == 0.0) return a;
  if (rng == nullptr) throw ContractError("train-mode dropout requires an rng");
  Tape* t = a.tape();
  const auto& na = t->node(a.index());
  Tape::Node out;
  out.op = detail::Op::Dropout;
  out.a = a.index();
  out.rank = na.rank;
  out.dims = na.dims;
  out.requires_grad = na.requires_grad;
  out.scalar = Scalar(1.0 / (1.0 - rate));
  out.mask.resize(na.numel());
  out.values.resize(na.numel());
  for (size_t i = 0; i < na.numel(); ++i) {
    bool keep = rng->uniform() >= rate;
    out.mask[i] = keep ? 1 : 0;
    out.values[i] = keep ? na.values[i] * out.scalar : Scalar(0);
  }
  return Tensor(t, t->push(std::move(out)));
}

// -log(softmax(logits)[target]) restricted to unmasked candidates. The
// log1p form keeps the loss strictly positive short of an exact point mass.
inline Tensor nll_loss(const Tensor& logits, std::span<const uint8_t> candidate_mask, int target) {
  Tape* t = logits.tape();
  const auto& na = t->node(logits.index());
  if (na.rank != 1)
    throw ShapeError("nll_loss expects a logit vector, got " + detail::shape_str(na.rank, na.dims));
  if (candidate_mask.size() != na.numel())
    throw ShapeError("nll_loss mask length does not match logits");
  if (target < 0 || static_cast<size_t>(target) >= na.numel())
    throw InvalidTargetError("nll_loss target " + std::to_string(target) + " outside range [0," +
                             std::to_string(na.numel()) + ")");
  if (!candidate_mask[static_cast<size_t>(target)])
    throw InvalidTargetError("nll_loss target " + std::to_string(target) + " is masked out");
  Scalar max = -std::numeric_limits<Scalar>::infinity();
  for (size_t i = 0; i < candidate_mask.size(); ++i)
    if (candidate_mask[i]) max = std::max(max, na.values[i]);
  Scalar sum = 0, sum_rest = 0;
  std::vector<Scalar> probs(na.numel(), Scalar(0));
  for (size_t i = 0; i < candidate_mask.size(); ++i)
    if (candidate_mask[i]) {
      Scalar e = std::exp(na.values[i] - max);
      probs[i] = e;
      sum += e;
      if (static_cast<int>(i) != target) sum_rest += e;
    }
  for (size_t i = 0; i < probs.size(); ++i) probs[i] /= sum;
  Scalar tgt_shift = na.values[static_cast<size_t>(target)] - max;
  Scalar loss;
  if (tgt_shift == Scalar(0)) {
    loss = std::log1p(sum_rest);
  } else {
    loss = std::log(sum) - tgt_shift;
  }
  Tape::Node out;
  out.op = detail::Op::NllLoss;
  out.a = logits.index();
  out.rank = 0;
  out.requires_grad = na.requires_grad;
  out.aux = target;
  out.mask.assign(candidate_mask.begin(), candidate_mask.end());
  out.stash = std::move(probs);
  out.values = {loss};
  return Tensor(t, t->push(std::move(out)));
}

inline Tensor nll_loss(const Tensor& logits, const std::vector<uint8_t>& mask, int target) {
  return nll_loss(logits, std::span<const uint8_t>(mask), target);
}

// Row gather from a rank-2 tensor (embedding lookup). Backward scatters.
inline Tensor lookup_row(const Tensor& table, int row) {
  Tape* t = table.tape();
  const auto& na = t->node(table.index());
  if (na.rank != 2) throw ShapeError("lookup_row expects a matrix");
  if (row < 0 || row >= na.dims[0])
    throw ShapeError("lookup_row index " + std::to_string(row) + " outside " +
                     detail::shape_str(2, na.dims));
  Tape::Node out;
  out.op = detail::Op::LookupRow;
  out.a = table.index();
  out.rank = 1;
  out.dims = {na.dims[1], 1};
  out.requires_grad = na.requires_grad;
  out.aux = row;
  int cols = na.dims[1];
  out.values.assign(na.values.begin() + static_cast<long>(row) * cols,
                    na.values.begin() + static_cast<long>(row + 1) * cols);
  return Tensor(t, t->push(std::move(out)));
}

inline Tensor scale(const Tensor& a, Scalar c) {
  Tape* t = a.tape();
  const auto& na = t->node(a.index());
  Tape::Node out;
  out.op = detail::Op::Scale;
  out.a = a.index();
  out.rank = na.rank;
  out.dims = na.dims;
  out.requires_grad = na.requires_grad;
  out.scalar = c;
  out.values.resize(na.numel());
  for (size_t i = 0; i < na.numel(); ++i) out.values[i] = na.values[i] * c;
  return Tensor(t, t->push(std::move(out)));
}

inline Tensor stack_scalars(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("stack_scalars on empty list");
  Tape* t = parts[0].tape();
  Tape::Node out;
  out.op = detail::Op::StackScalars;
  out.rank = 1;
  out.dims = {static_cast<int>(parts.size()), 1};
  out.values.resize(parts.size());
  out.ins.reserve(parts.size());
  for (size_t i = 0; i < parts.size(); ++i) {
    detail::check_same_tape(parts[0], parts[i]);
    const auto& n = t->node(parts[i].index());
    if (n.numel() != 1) throw ShapeError("stack_scalars expects single-element tensors");
    out.values[i] = n.values[0];
    out.requires_grad = out.requires_grad || n.requires_grad;
    out.ins.push_back(parts[i].index());
  }
  return Tensor(t, t->push(std::move(out)));
}

// o = sum_i alpha_i * h_i as one fused node (the attention-weighted context).
inline Tensor attention_context(const Tensor& alpha, std::span<const Tensor> h) {
  Tape* t = alpha.tape();
  const auto& nalpha = t->node(alpha.index());
  if (nalpha.rank != 1) throw ShapeError("attention_context weights must be a vector");
  if (static_cast<size_t>(nalpha.dims[0]) != h.size())
    throw ShapeError("attention_context: " + std::to_string(nalpha.dims[0]) + " weights vs " +
                     std::to_string(h.size()) + " positions");
  if (h.empty()) throw ShapeError("attention_context on empty sequence");
  const auto& h0 = t->node(h[0].index());
  int width = h0.dims[0];
  Tape::Node out;
  out.op = detail::Op::AttentionContext;
  out.a = alpha.index();
  out.rank = 1;
  out.dims = {width, 1};
  out.requires_grad = nalpha.requires_grad;
  out.values.assign(static_cast<size_t>(width), Scalar(0));
  out.ins.reserve(h.size());
  for (size_t i = 0; i < h.size(); ++i) {
    detail::check_same_tape(alpha, h[i]);
    const auto& nh = t->node(h[i].index());
    if (nh.rank != 1 || nh.dims[0] != width)
      throw ShapeError("attention_context position " + std::to_string(i) + " has shape " +
                       detail::shape_str(nh.rank, nh.dims) + ", expected [" +
                       std::to_string(width) + "]");
    out.requires_grad = out.requires_grad || nh.requires_grad;
    Scalar w = nalpha.values[i];
    for (int c = 0; c < width; ++c) out.values[static_cast<size_t>(c)] += w * nh.values[static_cast<size_t>(c)];
    out.ins.push_back(h[i].index());
  }
  return Tensor(t, t->push(std::move(out)));
}

inline void backward(const Tensor& loss) { loss.tape()->backward(loss); }

// ---- reverse pass ----------------------------------------------------------

inline void Tape::backward_node(int i) {
  Node& n = nodes_[static_cast<size_t>(i)];
  const auto g = std::span<const Scalar>(n.grad);
  auto want = [&](int idx) { return idx >= 0 && nodes_[static_cast<size_t>(idx)].requires_grad; };
  switch (n.op) {
    case detail::Op::Leaf:
      if (n.param != nullptr && n.param->trainable)
        for (size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
      break;
    case detail::Op::MatMul: {
      const Node& a = nodes_[static_cast<size_t>(n.a)];
      const Node& b = nodes_[static_cast<size_t>(n.b)];
      int m = a.dims[0], k = a.dims[1], c = b.dims[1];
      if (want(n.a)) {
        auto da = ensure_grad(n.a);
        // dA += G·Bᵀ
        for (int r = 0; r < m; ++r)
          for (int j = 0; j < k; ++j) {
            Scalar acc = 0;
            for (int q = 0; q < c; ++q)
              acc += g[static_cast<size_t>(r * c + q)] * b.values[static_cast<size_t>(j * c + q)];
            da[static_cast<size_t>(r * k + j)] += acc;
          }
      }
      if (want(n.b)) {
        auto db = ensure_grad(n.b);
        // dB += Aᵀ·G
        for (int j = 0; j < k; ++j)
          for (int q = 0; q < c; ++q) {
            Scalar acc = 0;
            for (int r = 0; r < m; ++r)
              acc += a.values[static_cast<size_t>(r * k + j)] * g[static_cast<size_t>(r * c + q)];
            db[static_cast<size_t>(j * c + q)] += acc;
          }
      }
      break;
    }
    case detail::Op::MatVec: {
      const Node& a = nodes_[static_cast<size_t>(n.a)];
      const Node& b = nodes_[static_cast<size_t>(n.b)];
      int m = a.dims[0], k = a.dims[1];
      if (want(n.a)) {
        auto da = ensure_grad(n.a);
        for (int r = 0; r < m; ++r) {
          Scalar gv = g[static_cast<size_t>(r)];
          if (gv == Scalar(0)) continue;
          for (int j = 0; j < k; ++j)
            da[static_cast<size_t>(r * k + j)] += gv * b.values[static_cast<size_t>(j)];
        }
      }
      if (want(n.b)) {
        auto db = ensure_grad(n.b);
        for (int r = 0; r < m; ++r) {
          Scalar gv = g[static_cast<size_t>(r)];
          if (gv == Scalar(0)) continue;
          const Scalar* row = a.values.data() + static_cast<size_t>(r) * static_cast<size_t>(k);
          for (int j = 0; j < k; ++j) db[static_cast<size_t>(j)] += gv * row[j];
        }
      }
      break;
    }
    case detail::Op::MatTVec: {
      const Node& a = nodes_[static_cast<size_t>(n.a)];
      const Node& b = nodes_[static_cast<size_t>(n.b)];
      int m = a.dims[0], k = a.dims[1];
      if (want(n.a)) {
        auto da = ensure_grad(n.a);
        for (int r = 0; r < m; ++r) {
          Scalar xv = b.values[static_cast<size_t>(r)];
          if (xv == Scalar(0)) continue;
          for (int j = 0; j < k; ++j) da[static_cast<size_t>(r * k + j)] += xv * g[static_cast<size_t>(j)];
        }
      }
      if (want(n.b)) {
        auto db = ensure_grad(n.b);
        for (int r = 0; r < m; ++r) {
          const Scalar* row = a.values.data() + static_cast<size_t>(r) * static_cast<size_t>(k);
          Scalar acc = 0;
          for (int j = 0; j < k; ++j) acc += row[j] * g[static_cast<size_t>(j)];
          db[static_cast<size_t>(r)] += acc;
        }
      }
      break;
    }
    case detail::Op::Add:
    case detail::Op::Sub:
    case detail::Op::Mul: {
      const Node& a = nodes_[static_cast<size_t>(n.a)];
      const Node& b = nodes_[static_cast<size_t>(n.b)];
      bool a_scalar = a.numel() == 1 && n.numel() > 1;
      bool b_scalar = b.numel() == 1 && n.numel() > 1;
      if (want(n.a)) {
        auto da = ensure_grad(n.a);
        for (size_t q = 0; q < n.numel(); ++q) {
          Scalar contrib = g[q];
          if (n.op == detail::Op::Mul) contrib *= b.values[b_scalar ? 0 : q];
          da[a_scalar ? 0 : q] += contrib;
        }
      }
      if (want(n.b)) {
        auto db = ensure_grad(n.b);
        for (size_t q = 0; q < n.numel(); ++q) {
          Scalar contrib = g[q];
          if (n.op == detail::Op::Mul) contrib *= a.values[a_scalar ? 0 : q];
          if (n.op == detail::Op::Sub) contrib = -contrib;
          db[b_scalar ? 0 : q] += contrib;
        }
      }
      break;
    }
    case detail::Op::Sigmoid:
      if (want(n.a)) {
        auto da = ensure_grad(n.a);
        for (size_t q = 0; q < n.numel(); ++q) {
          Scalar y = n.values[q];
          da[q] += g[q] * y * (Scalar(1) - y);
        }
      }
      break;
    case detail::Op::Tanh:
      if (want(n.a)) {
        auto da = ensure_grad(n.a);
        for (size_t q = 0; q < n.numel(); ++q) {
          Scalar y = n.values[q];
          da[q] += g[q] * (Scalar(1) - y * y);
        }
      }
      break;
    case detail::Op::MaskedSoftmax:
      if (want(n.a)) {
        auto da = ensure_grad(n.a);
        Scalar dot = 0;
        for (size_t q = 0; q < n.numel(); ++q) dot += g[q] * n.values[q];
        for (size_t q = 0; q < n.numel(); ++q)
          if (n.mask[q]) da[q] += n.values[q] * (g[q] - dot);
      }
      break;
    case detail::Op::Concat0: {
      const Node& a = nodes_[static_cast<size_t>(n.a)];
      size_t na_len = a.numel();
      if (want(n.a)) {
        auto da = ensure_grad(n.a);
        for (size_t q = 0; q < na_len; ++q) da[q] += g[q];
      }
      if (want(n.b)) {
        auto db = ensure_grad(n.b);
        for (size_t q = 0; q < n.numel() - na_len; ++q) db[q] += g[na_len + q];
      }
      break;
    }
    case detail::Op::Concat1: {
      const Node& a = nodes_[static_cast<size_t>(n.a)];
      int rows = n.dims[0], ca = n.aux, cb = n.dims[1] - n.aux;
      if (want(n.a)) {
        auto da = ensure_grad(n.a);
        for (int r = 0; r < rows; ++r)
          for (int q = 0; q < ca; ++q)
            da[static_cast<size_t>(r * ca + q)] += g[static_cast<size_t>(r * (ca + cb) + q)];
      }
      if (want(n.b)) {
        auto db = ensure_grad(n.b);
        for (int r = 0; r < rows; ++r)
          for (int q = 0; q < cb; ++q)
            db[static_cast<size_t>(r * cb + q)] += g[static_cast<size_t>(r * (ca + cb) + ca + q)];
      }
      (void)a;
      break;
    }
    case detail::Op::SumComponents:
      if (want(n.a)) {
        auto da = ensure_grad(n.a);
        for (size_t q = 0; q < da.size(); ++q) da[q] += g[0];
      }
      break;
    case detail::Op::Dropout:
      if (want(n.a)) {
        auto da = ensure_grad(n.a);
        for (size_t q = 0; q < n.numel(); ++q)
          if (n.mask[q]) da[q] += g[q] * n.scalar;
      }
      break;
    case detail::Op::NllLoss:
      if (want(n.a)) {
        auto da = ensure_grad(n.a);
        for (size_t q = 0; q < da.size(); ++q)
          if (n.mask[q]) {
            Scalar delta = (static_cast<int>(q) == n.aux) ? Scalar(1) : Scalar(0);
            da[q] += g[0] * (n.stash[q] - delta);
          }
      }
      break;
    case detail::Op::LookupRow:
      if (want(n.a)) {
        auto da = ensure_grad(n.a);
        int cols = n.dims[0];
        for (int q = 0; q < cols; ++q)
          da[static_cast<size_t>(n.aux * cols + q)] += g[static_cast<size_t>(q)];
      }
      break;
    case detail::Op::Scale:
      if (want(n.a)) {
        auto da = ensure_grad(n.a);
        for (size_t q = 0; q < n.numel(); ++q) da[q] += g[q] * n.scalar;
      }
      break;
    case detail::Op::StackScalars:
      for (size_t q = 0; q < n.ins.size(); ++q)
        if (want(n.ins[q])) ensure_grad(n.ins[q])[0] += g[q];
      break;
    case detail::Op::AttentionContext: {
      const Node& alpha = nodes_[static_cast<size_t>(n.a)];
      int width = n.dims[0];
      if (want(n.a)) {
        auto da = ensure_grad(n.a);
        for (size_t q = 0; q < n.ins.size(); ++q) {
          const Node& h = nodes_[static_cast<size_t>(n.ins[q])];
          Scalar acc = 0;
          for (int c = 0; c < width; ++c) acc += g[static_cast<size_t>(c)] * h.values[static_cast<size_t>(c)];
          da[q] += acc;
        }
      }
      for (size_t q = 0; q < n.ins.size(); ++q)
        if (want(n.ins[q])) {
          auto dh = ensure_grad(n.ins[q]);
          Scalar w = alpha.values[q];
          for (int c = 0; c < width; ++c) dh[static_cast<size_t>(c)] += g[static_cast<size_t>(c)] * w;
        }
      break;
    }
  }
}

inline void Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) throw ContractError("loss lives on a different tape");
  const Node& l = node(loss.index());
  if (l.numel() != 1)
    throw ContractError("backward requires a scalar loss, got " +
                        detail::shape_str(l.rank, l.dims));
  ensure_grad(loss.index())[0] = Scalar(1);
  for (int i = loss.index(); i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.requires_grad || n.grad.empty()) continue;
    backward_node(i);
  }
}

}  // namespace seqattn
