#pragma once
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gru.hpp"
#include "tensor.hpp"

namespace seqattn {

enum class ScoringVariant { DotProduct, Bilinear, PartialBilinearSA, ElementwiseSA };

inline bool uses_bilinear_w(ScoringVariant v) {
  return v == ScoringVariant::Bilinear || v == ScoringVariant::PartialBilinearSA;
}

inline bool is_sequential(ScoringVariant v) {
  return v == ScoringVariant::PartialBilinearSA || v == ScoringVariant::ElementwiseSA;
}

inline const char* variant_name(ScoringVariant v) {
  switch (v) {
    case ScoringVariant::DotProduct: return "dot";
    case ScoringVariant::Bilinear: return "bilinear";
    case ScoringVariant::PartialBilinearSA: return "sa-partial-bilinear";
    case ScoringVariant::ElementwiseSA: return "sa-elementwise";
  }
  return "?";
}

inline ScoringVariant parse_variant(const std::string& s) {
  if (s == "dot") return ScoringVariant::DotProduct;
  if (s == "bilinear") return ScoringVariant::Bilinear;
  if (s == "sa-partial-bilinear") return ScoringVariant::PartialBilinearSA;
  if (s == "sa-elementwise") return ScoringVariant::ElementwiseSA;
  throw ConfigError("unknown scoring variant '" + s +
                    "' (expected dot, bilinear, sa-partial-bilinear, or sa-elementwise)");
}

// Bidirectional GRU consuming the γ sequence; per-direction hidden size h_a.
struct AttentionRnn {
  BiGruLayer layer;

  int input_size() const { return layer.input_size(); }
  int hidden_size() const { return layer.hidden_size(); }
  std::vector<Param*> params() { return layer.params(); }
};

inline AttentionRnn make_attention_rnn(const std::string& prefix, int gamma_dim, int hidden) {
  return {make_bigru_layer(prefix, gamma_dim, hidden)};
}

// α from logits jᵀW h_i. Computed as (Wᵀj)ᵀ h_i, one matrix-vector product
// for the whole sequence.
inline Tensor score_bilinear(Tape& tape, const Tensor& j, std::span<const Tensor> h,
                             const Tensor& w, std::span<const uint8_t> mask) {
  if (h.empty()) throw DegenerateInputError("score_bilinear over an empty sequence");
  Tensor q = matmul(w, j, /*transpose_a=*/true);
  std::vector<Tensor> logits;
  logits.reserve(h.size());
  for (const Tensor& hi : h) logits.push_back(sum_components(mul(q, hi)));
  return masked_softmax(stack_scalars(logits), mask);
}

// α from logits jᵀh_i.
inline Tensor score_dot(Tape& tape, const Tensor& j, std::span<const Tensor> h,
                        std::span<const uint8_t> mask) {
  (void)tape;
  if (h.empty()) throw DegenerateInputError("score_dot over an empty sequence");
  std::vector<Tensor> logits;
  logits.reserve(h.size());
  for (const Tensor& hi : h) logits.push_back(sum_components(mul(j, hi)));
  return masked_softmax(stack_scalars(logits), mask);
}

// γ_i = j ∘ W h_i (partial-bilinear) or j ∘ h_i (elementwise).
inline std::vector<Tensor> gamma_vectors(Tape& tape, ScoringVariant variant, const Tensor& j,
                                         std::span<const Tensor> h, const Tensor* w = nullptr) {
  (void)tape;
  if (!is_sequential(variant))
    throw ConfigError("gamma_vectors is defined for the sequential-attention variants only");
  if (variant == ScoringVariant::PartialBilinearSA && w == nullptr)
    throw ConfigError("partial-bilinear scoring needs its W matrix");
  if (variant == ScoringVariant::ElementwiseSA && w != nullptr)
    throw ConfigError("elementwise scoring takes no W matrix");
  std::vector<Tensor> out;
  out.reserve(h.size());
  for (const Tensor& hi : h) {
    Tensor rhs = (variant == ScoringVariant::PartialBilinearSA) ? matmul(*w, hi) : hi;
    out.push_back(mul(j, rhs));
  }
  return out;
}

struct SaScores {
  std::vector<Tensor> raw;  // one scalar per position, pre-softmax
  std::vector<Tensor> eta;  // concat(→η, ←η) per position
};

// η from a bidirectional pass over γ; raw score is the component sum 1ᵀη_i.
inline SaScores sa_attention(Tape& tape, AttentionRnn& rnn, std::span<const Tensor> gammas,
                             std::span<const uint8_t> mask) {
  if (gammas.empty()) throw DegenerateInputError("sa_attention over an empty sequence");
  BiGruStates st = bigru_states(tape, rnn.layer, gammas, mask);
  SaScores out;
  out.raw.reserve(gammas.size());
  out.eta.reserve(gammas.size());
  for (size_t i = 0; i < gammas.size(); ++i) {
    Tensor eta = concat(st.fwd[i], st.bwd[i]);
    out.eta.push_back(eta);
    out.raw.push_back(sum_components(eta));
  }
  return out;
}

// o = Σ α_i h_i.
inline Tensor context_vector(const Tensor& alpha, std::span<const Tensor> h) {
  return attention_context(alpha, h);
}

struct AttentionResult {
  Tensor alpha;
  Tensor context;
  std::vector<Tensor> gamma, eta, raw;  // populated for SA variants only
};

// Variant dispatch producing α and o in one call. SA variants run γ through
// dropout (a vertical layer) before the attention RNN.
inline AttentionResult attend(Tape& tape, ScoringVariant variant, const Tensor& j,
                              std::span<const Tensor> h, std::span<const uint8_t> mask,
                              const Tensor* w = nullptr, AttentionRnn* rnn = nullptr,
                              double dropout_rate = 0.0, DropoutMode mode = DropoutMode::Eval,
                              Rng* rng = nullptr) {
  AttentionResult res;
  switch (variant) {
    case ScoringVariant::DotProduct:
      if (w != nullptr) throw ConfigError("dot-product scoring takes no W matrix");
      res.alpha = score_dot(tape, j, h, mask);
      break;
    case ScoringVariant::Bilinear:
      if (w == nullptr) throw ConfigError("bilinear scoring needs its W matrix");
      res.alpha = score_bilinear(tape, j, h, *w, mask);
      break;
    case ScoringVariant::PartialBilinearSA:
    case ScoringVariant::ElementwiseSA: {
      if (rnn == nullptr) throw ConfigError("sequential attention needs its rnn");
      res.gamma = gamma_vectors(tape, variant, j, h, w);
      std::vector<Tensor> fed;
      fed.reserve(res.gamma.size());
      for (const Tensor& g : res.gamma) fed.push_back(dropout(g, dropout_rate, mode, rng));
      SaScores sa = sa_attention(tape, *rnn, fed, mask);
      res.eta = std::move(sa.eta);
      res.raw = std::move(sa.raw);
      res.alpha = masked_softmax(stack_scalars(res.raw), mask);
      break;
    }
  }
  res.context = context_vector(res.alpha, h);
  return res;
}

// Tape-free snapshot of one attention evaluation, for dumps and inspection.
struct AttentionTrace {
  std::vector<double> alpha;
  std::vector<double> o;
  std::vector<double> raw_scores;
  std::vector<std::vector<double>> gamma;
  std::vector<std::vector<double>> eta;
};

inline AttentionTrace make_trace(const AttentionResult& res) {
  AttentionTrace tr;
  tr.alpha.assign(res.alpha.values().begin(), res.alpha.values().end());
  tr.o.assign(res.context.values().begin(), res.context.values().end());
  for (const Tensor& r : res.raw) tr.raw_scores.push_back(static_cast<double>(r.values()[0]));
  for (const Tensor& g : res.gamma) tr.gamma.emplace_back(g.values().begin(), g.values().end());
  for (const Tensor& e : res.eta) tr.eta.emplace_back(e.values().begin(), e.values().end());
  return tr;
}

}  // namespace seqattn
