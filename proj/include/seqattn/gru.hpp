#pragma once
#include <span>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace seqattn {

// One direction of a GRU layer. Gate equations:
//   z = sigmoid(Wz x + Uz h + bz)
//   r = sigmoid(Wr x + Ur h + br)
//   c = tanh(Wc x + Uc (r*h) + bc)
//   h' = (1-z)*h + z*c
struct GruDirectionParams {
  Param wz, uz, bz, wr, ur, br, wc, uc, bc;
  int input = 0, hidden = 0;

  std::vector<Param*> params() {
    return {&wz, &uz, &bz, &wr, &ur, &br, &wc, &uc, &bc};
  }
};

inline GruDirectionParams make_gru_params(const std::string& prefix, int input, int hidden) {
  if (input <= 0 || hidden <= 0)
    throw ConfigError("gru sizes must be positive, got input=" + std::to_string(input) +
                      " hidden=" + std::to_string(hidden));
  GruDirectionParams g;
  g.input = input;
  g.hidden = hidden;
  g.wz = make_param(prefix + ".Wz", {hidden, input});
  g.uz = make_param(prefix + ".Uz", {hidden, hidden});
  g.bz = make_param(prefix + ".bz", {hidden});
  g.wr = make_param(prefix + ".Wr", {hidden, input});
  g.ur = make_param(prefix + ".Ur", {hidden, hidden});
  g.br = make_param(prefix + ".br", {hidden});
  g.wc = make_param(prefix + ".Wc", {hidden, input});
  g.uc = make_param(prefix + ".Uc", {hidden, hidden});
  g.bc = make_param(prefix + ".bc", {hidden});
  return g;
}

inline void randomize_gru(GruDirectionParams& g, Rng& rng, double stddev = 0.1) {
  for (Param* p : {&g.wz, &g.uz, &g.wr, &g.ur, &g.wc, &g.uc})
    for (Scalar& v : p->value) v = static_cast<Scalar>(rng.normal(0.0, stddev));
  // biases stay zero
}

struct BiGruLayer {
  GruDirectionParams fwd, bwd;

  int input_size() const { return fwd.input; }
  int hidden_size() const { return fwd.hidden; }
  std::vector<Param*> params() {
    auto out = fwd.params();
    auto b = bwd.params();
    out.insert(out.end(), b.begin(), b.end());
    return out;
  }
};

inline BiGruLayer make_bigru_layer(const std::string& prefix, int input, int hidden) {
  return {make_gru_params(prefix + ".fwd", input, hidden),
          make_gru_params(prefix + ".bwd", input, hidden)};
}

inline void randomize_bigru(BiGruLayer& layer, Rng& rng, double stddev = 0.1) {
  randomize_gru(layer.fwd, rng, stddev);
  randomize_gru(layer.bwd, rng, stddev);
}

inline Tensor gru_step(Tape& tape, GruDirectionParams& g, const Tensor& prev_hidden,
                       const Tensor& input) {
  if (static_cast<int>(input.size()) != g.input || static_cast<int>(prev_hidden.size()) != g.hidden)
    throw ShapeError("gru_step got input length " + std::to_string(input.size()) +
                     " and hidden length " + std::to_string(prev_hidden.size()) + ", expected " +
                     std::to_string(g.input) + " and " + std::to_string(g.hidden));
  Tensor z = sigmoid(add(add(matmul(tape.leaf(g.wz), input), matmul(tape.leaf(g.uz), prev_hidden)),
                         tape.leaf(g.bz)));
  Tensor r = sigmoid(add(add(matmul(tape.leaf(g.wr), input), matmul(tape.leaf(g.ur), prev_hidden)),
                         tape.leaf(g.br)));
  Tensor cand = seqattn::tanh(add(
      add(matmul(tape.leaf(g.wc), input), matmul(tape.leaf(g.uc), mul(r, prev_hidden))),
      tape.leaf(g.bc)));
  Tensor keep = mul(sub(tape.ones({g.hidden}), z), prev_hidden);
  return add(keep, mul(z, cand));
}

// Per-position hidden states of one bidirectional pass. fwd[i] is the forward
// state after consuming position i; bwd[i] the backward state after consuming
// down to position i. Masked positions carry the neighboring state through
// unchanged, so endpoint states are correct under right-padding.
struct BiGruStates {
  std::vector<Tensor> fwd, bwd;
};

inline BiGruStates bigru_states(Tape& tape, BiGruLayer& layer, std::span<const Tensor> inputs,
                                std::span<const uint8_t> mask) {
  if (inputs.empty()) throw DegenerateInputError("bigru over an empty sequence");
  if (mask.size() != inputs.size())
    throw ShapeError("bigru mask length " + std::to_string(mask.size()) + " vs " +
                     std::to_string(inputs.size()) + " inputs");
  size_t n = inputs.size();
  BiGruStates out;
  out.fwd.resize(n);
  out.bwd.resize(n);
  Tensor h = tape.zeros({layer.hidden_size()});
  for (size_t i = 0; i < n; ++i) {
    if (mask[i]) h = gru_step(tape, layer.fwd, h, inputs[i]);
    out.fwd[i] = h;
  }
  h = tape.zeros({layer.hidden_size()});
  for (size_t i = n; i-- > 0;) {
    if (mask[i]) h = gru_step(tape, layer.bwd, h, inputs[i]);
    out.bwd[i] = h;
  }
  return out;
}

inline std::vector<Tensor> bigru_encode(Tape& tape, BiGruLayer& layer,
                                        std::span<const Tensor> inputs,
                                        std::span<const uint8_t> mask) {
  BiGruStates st = bigru_states(tape, layer, inputs, mask);
  std::vector<Tensor> out;
  out.reserve(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) out.push_back(concat(st.fwd[i], st.bwd[i]));
  return out;
}

inline std::vector<uint8_t> all_ones_mask(size_t n) { return std::vector<uint8_t>(n, 1); }

// j = concat(final forward state, final backward state), i.e. the two reading
// endpoints of the question.
inline Tensor encode_question(Tape& tape, BiGruLayer& layer, std::span<const Tensor> inputs,
                              std::span<const uint8_t> mask) {
  if (inputs.empty()) throw DegenerateInputError("empty question");
  bool any = false;
  for (uint8_t m : mask) any = any || (m != 0);
  if (!any) throw DegenerateInputError("question mask excludes every token");
  BiGruStates st = bigru_states(tape, layer, inputs, mask);
  return concat(st.fwd.back(), st.bwd.front());
}

inline Tensor encode_question(Tape& tape, BiGruLayer& layer, std::span<const Tensor> inputs) {
  return encode_question(tape, layer, inputs, all_ones_mask(inputs.size()));
}

// Sequential layer application with dropout on every layer's input. Returns
// the top layer's per-position outputs plus its endpoint states (the 2-layer
// question encoding reads the top layer's endpoints).
struct StackResult {
  std::vector<Tensor> outputs;
  BiGruStates top;
};

inline StackResult stack_layers_states(Tape& tape, std::span<BiGruLayer> layers,
                                       std::span<const Tensor> inputs,
                                       std::span<const uint8_t> mask, double dropout_rate,
                                       DropoutMode mode, Rng* rng = nullptr) {
  if (layers.empty()) throw ConfigError("layer stack is empty");
  std::vector<Tensor> cur(inputs.begin(), inputs.end());
  StackResult res;
  for (size_t li = 0; li < layers.size(); ++li) {
    BiGruLayer& layer = layers[li];
    if (li > 0 && layer.input_size() != 2 * layers[li - 1].hidden_size())
      throw ConfigError("layer " + std::to_string(li) + " expects input size " +
                        std::to_string(layer.input_size()) + " but gets " +
                        std::to_string(2 * layers[li - 1].hidden_size()));
    for (Tensor& x : cur) x = dropout(x, dropout_rate, mode, rng);
    res.top = bigru_states(tape, layer, cur, mask);
    cur.clear();
    cur.reserve(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i)
      cur.push_back(concat(res.top.fwd[i], res.top.bwd[i]));
  }
  res.outputs = std::move(cur);
  return res;
}

inline std::vector<Tensor> stack_layers(Tape& tape, std::span<BiGruLayer> layers,
                                        std::span<const Tensor> inputs,
                                        std::span<const uint8_t> mask, double dropout_rate,
                                        DropoutMode mode, Rng* rng = nullptr) {
  return stack_layers_states(tape, layers, inputs, mask, dropout_rate, mode, rng).outputs;
}

}  // namespace seqattn
