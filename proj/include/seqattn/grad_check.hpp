#pragma once
#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "tensor.hpp"

namespace seqattn {

struct GradCheckFailure {
  int input = -1;          // which input (or param) the component belongs to
  size_t component = 0;
  Scalar analytic = 0;
  Scalar numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  double tolerance = 0;
  size_t components_checked = 0;
  GradCheckFailure worst;
  std::vector<GradCheckFailure> failures;

  bool passed() const { return failures.empty(); }
};

namespace detail {

inline double rel_error(Scalar analytic, Scalar numeric) {
  double denom = std::max({1.0, std::abs(static_cast<double>(analytic)),
                           std::abs(static_cast<double>(numeric))});
  return std::abs(static_cast<double>(analytic) - static_cast<double>(numeric)) / denom;
}

inline bool bit_equal(std::span<const Scalar> a, std::span<const Scalar> b) {
  if (a.size() != b.size()) return false;
  return a.empty() ||
         std::memcmp(a.data(), b.data(), a.size() * sizeof(Scalar)) == 0;
}

inline void record(GradCheckReport& rep, int input, size_t comp, Scalar analytic, Scalar numeric) {
  double err = rel_error(analytic, numeric);
  ++rep.components_checked;
  if (err >= rep.max_rel_error) {
    rep.max_rel_error = err;
    rep.worst = {input, comp, analytic, numeric, err};
  }
  if (err > rep.tolerance) rep.failures.push_back({input, comp, analytic, numeric, err});
}

}  // namespace detail

// Central-difference check of a scalar-valued tape function against its own
// backward pass. f must be deterministic; this is enforced by running the
// forward twice and bit-comparing.
inline GradCheckReport grad_check(
    const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
    const std::vector<std::vector<int>>& shapes, const std::vector<std::vector<Scalar>>& point,
    double step = 1e-5, double tolerance = 1e-5) {
  if (shapes.size() != point.size())
    throw ContractError("grad_check: shapes and point lists differ in length");
  auto eval = [&](const std::vector<std::vector<Scalar>>& at, bool with_grad,
                  std::vector<std::vector<Scalar>>* grads_out) -> Scalar {
    Tape tape;
    std::vector<Tensor> inputs;
    inputs.reserve(shapes.size());
    for (size_t i = 0; i < shapes.size(); ++i)
      inputs.push_back(tape.input(shapes[i], at[i], /*requires_grad=*/true));
    Tensor out = f(tape, inputs);
    if (out.size() != 1) throw ContractError("grad_check: f must produce a scalar");
    Scalar v = out.values()[0];
    if (with_grad) {
      tape.backward(out);
      grads_out->clear();
      for (const Tensor& in : inputs)
        grads_out->emplace_back(in.grad().begin(), in.grad().end());
    }
    return v;
  };

  std::vector<std::vector<Scalar>> analytic;
  Scalar base = eval(point, true, &analytic);
  Scalar again = eval(point, false, nullptr);
  Scalar base_bits[1] = {base}, again_bits[1] = {again};
  if (!detail::bit_equal(base_bits, again_bits))
    throw ContractError("grad_check: f is not deterministic across repeated forwards");

  GradCheckReport rep;
  rep.tolerance = tolerance;
  std::vector<std::vector<Scalar>> probe = point;
  for (size_t i = 0; i < point.size(); ++i) {
    for (size_t c = 0; c < point[i].size(); ++c) {
      Scalar saved = probe[i][c];
      probe[i][c] = saved + static_cast<Scalar>(step);
      Scalar plus = eval(probe, false, nullptr);
      probe[i][c] = saved - static_cast<Scalar>(step);
      Scalar minus = eval(probe, false, nullptr);
      probe[i][c] = saved;
      Scalar numeric = (plus - minus) / static_cast<Scalar>(2 * step);
      detail::record(rep, static_cast<int>(i), c, analytic[i][c], numeric);
    }
  }
  return rep;
}

// Same check but against named model parameters: loss_builder reruns the
// forward pass from current param values on a fresh tape each call.
inline GradCheckReport grad_check_params(const std::vector<Param*>& params,
                                         const std::function<Tensor(Tape&)>& loss_builder,
                                         double step = 1e-5, double tolerance = 1e-4) {
  auto eval = [&]() -> Scalar {
    Tape tape;
    Tensor out = loss_builder(tape);
    if (out.size() != 1) throw ContractError("grad_check_params: loss must be a scalar");
    return out.values()[0];
  };

  for (Param* p : params) p->zero_grad();
  Tape tape;
  Tensor loss = loss_builder(tape);
  if (loss.size() != 1) throw ContractError("grad_check_params: loss must be a scalar");
  Scalar base = loss.values()[0];
  tape.backward(loss);
  std::vector<std::vector<Scalar>> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);

  Scalar again = eval();
  Scalar base_bits[1] = {base}, again_bits[1] = {again};
  if (!detail::bit_equal(base_bits, again_bits))
    throw ContractError("grad_check_params: loss builder is not deterministic");

  GradCheckReport rep;
  rep.tolerance = tolerance;
  for (size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    for (size_t c = 0; c < p.value.size(); ++c) {
      Scalar saved = p.value[c];
      p.value[c] = saved + static_cast<Scalar>(step);
      Scalar plus = eval();
      p.value[c] = saved - static_cast<Scalar>(step);
      Scalar minus = eval();
      p.value[c] = saved;
      Scalar numeric = (plus - minus) / static_cast<Scalar>(2 * step);
      detail::record(rep, static_cast<int>(i), c, analytic[i][c], numeric);
    }
  }
  return rep;
}

}  // namespace seqattn
