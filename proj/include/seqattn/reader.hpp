#pragma once
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attention.hpp"
#include "data.hpp"
#include "embedding_io.hpp"
#include "gru.hpp"
#include "tensor.hpp"

namespace seqattn {

struct ReaderConfig {
  ScoringVariant variant = ScoringVariant::Bilinear;
  int encoder_layers = 1;
  int vocab_size = 0;
  int embed_dim = 0;
  int hidden_size = 0;
  int attn_hidden_size = 0;  // 0 means: same as hidden_size
  int max_entities = 0;
  double dropout_rate = 0.0;
  uint64_t seed = 0;
  bool train_embeddings = true;

  int attn_hidden() const { return attn_hidden_size > 0 ? attn_hidden_size : hidden_size; }
};

inline void validate(const ReaderConfig& c) {
  if (c.encoder_layers != 1 && c.encoder_layers != 2)
    throw ConfigError("encoder layer count must be 1 or 2, got " +
                      std::to_string(c.encoder_layers));
  if (c.vocab_size < Vocabulary::kReserved)
    throw ConfigError("vocabulary size must cover the reserved ids");
  if (c.embed_dim <= 0 || c.hidden_size <= 0 || c.max_entities <= 0)
    throw ConfigError("embedding dim, hidden size, and entity capacity must be positive");
  if (c.attn_hidden_size < 0) throw ConfigError("attention hidden size cannot be negative");
  if (c.dropout_rate < 0.0 || c.dropout_rate >= 1.0)
    throw ConfigError("dropout rate must lie in [0,1)");
}

struct ParamGroup {
  std::string name;
  std::vector<Param*> params;

  long long count() const {
    long long n = 0;
    for (const Param* p : params)
      if (p->trainable) n += static_cast<long long>(p->size());
    return n;
  }
};

class ReaderModel {
 public:
  ReaderConfig config;
  Param embedding;
  std::vector<BiGruLayer> passage_layers;
  std::vector<BiGruLayer> question_layers;
  std::optional<Param> attention_w;
  std::optional<AttentionRnn> attention_rnn;
  Param output_m;

  ReaderModel() = default;
  ReaderModel(ReaderModel&&) = default;
  ReaderModel& operator=(ReaderModel&&) = default;
  ReaderModel(const ReaderModel&) = delete;
  ReaderModel& operator=(const ReaderModel&) = delete;

  std::vector<ParamGroup> groups() {
    std::vector<ParamGroup> gs;
    gs.push_back({"embeddings", {&embedding}});
    ParamGroup pe{"passage_encoder", {}};
    for (auto& l : passage_layers) {
      auto ps = l.params();
      pe.params.insert(pe.params.end(), ps.begin(), ps.end());
    }
    gs.push_back(std::move(pe));
    ParamGroup qe{"question_encoder", {}};
    for (auto& l : question_layers) {
      auto ps = l.params();
      qe.params.insert(qe.params.end(), ps.begin(), ps.end());
    }
    gs.push_back(std::move(qe));
    ParamGroup at{"attention", {}};
    if (attention_w) at.params.push_back(&*attention_w);
    if (attention_rnn) {
      auto ps = attention_rnn->params();
      at.params.insert(at.params.end(), ps.begin(), ps.end());
    }
    gs.push_back(std::move(at));
    gs.push_back({"output", {&output_m}});
    return gs;
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (auto& g : groups()) out.insert(out.end(), g.params.begin(), g.params.end());
    return out;
  }

  void zero_grads() {
    for (Param* p : params()) p->zero_grad();
  }
};

// Parameter layout is fixed by the config; values are then drawn in a fixed
// order so a seed pins every bit. Encoder GRU weights ~ N(0, 0.1); attention
// (W, attention RNN) and output M ~ U(-0.01, 0.01); biases zero; embeddings
// from the pretrained initializer where given, else U(-0.01, 0.01).
inline ReaderModel build_model(const ReaderConfig& config,
                               const EmbeddingInit* pretrained = nullptr) {
  validate(config);
  if (pretrained != nullptr) {
    if (pretrained->vocab_size != config.vocab_size || pretrained->dim != config.embed_dim)
      throw ConfigError("embedding initializer is " + std::to_string(pretrained->vocab_size) +
                        "x" + std::to_string(pretrained->dim) + ", config wants " +
                        std::to_string(config.vocab_size) + "x" +
                        std::to_string(config.embed_dim));
  }
  ReaderModel m;
  m.config = config;
  m.embedding = make_param("embedding.E", {config.vocab_size, config.embed_dim});
  m.embedding.trainable = config.train_embeddings;

  int h = config.hidden_size;
  m.passage_layers.reserve(static_cast<size_t>(config.encoder_layers));
  m.question_layers.reserve(static_cast<size_t>(config.encoder_layers));
  for (int l = 0; l < config.encoder_layers; ++l) {
    int in = l == 0 ? config.embed_dim : 2 * h;
    m.passage_layers.push_back(make_bigru_layer("passage.l" + std::to_string(l), in, h));
    m.question_layers.push_back(make_bigru_layer("question.l" + std::to_string(l), in, h));
  }
  if (uses_bilinear_w(config.variant))
    m.attention_w = make_param("attention.W", {2 * h, 2 * h});
  if (is_sequential(config.variant))
    m.attention_rnn = make_attention_rnn("attention.rnn", 2 * h, config.attn_hidden());
  m.output_m = make_param("output.M", {2 * h, config.max_entities});

  Rng rng(mix_seed(config.seed, 0x9e3779b97f4a7c15ull));
  if (pretrained != nullptr) {
    m.embedding.value = pretrained->matrix;
  } else {
    for (Scalar& v : m.embedding.value) v = static_cast<Scalar>(rng.uniform(-0.01, 0.01));
  }
  for (auto& l : m.passage_layers) randomize_bigru(l, rng, 0.1);
  for (auto& l : m.question_layers) randomize_bigru(l, rng, 0.1);
  if (m.attention_w)
    for (Scalar& v : m.attention_w->value) v = static_cast<Scalar>(rng.uniform(-0.01, 0.01));
  if (m.attention_rnn)
    for (Param* p : m.attention_rnn->params()) {
      bool bias = p->shape.size() == 1;
      for (Scalar& v : p->value) v = bias ? Scalar(0) : static_cast<Scalar>(rng.uniform(-0.01, 0.01));
    }
  for (Scalar& v : m.output_m.value) v = static_cast<Scalar>(rng.uniform(-0.01, 0.01));
  return m;
}

struct ExampleForward {
  Tensor logits;                        // rank 1 over the entity capacity
  std::vector<uint8_t> candidate_mask;  // restriction to entities in the passage
  AttentionResult attention;
  Tensor question_vec;
};

inline ExampleForward forward_example(Tape& tape, ReaderModel& m, std::span<const int> passage,
                                      std::span<const uint8_t> passage_mask,
                                      std::span<const int> question,
                                      std::span<const uint8_t> question_mask,
                                      std::span<const int> candidates, DropoutMode mode,
                                      Rng* rng = nullptr) {
  if (candidates.empty()) throw InvalidExampleError("example has an empty candidate set");
  Tensor emb = tape.leaf(m.embedding);
  auto embed = [&](std::span<const int> ids) {
    std::vector<Tensor> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(lookup_row(emb, id));
    return out;
  };

  std::vector<Tensor> p_in = embed(passage);
  StackResult p_enc = stack_layers_states(tape, m.passage_layers, p_in, passage_mask,
                                          m.config.dropout_rate, mode, rng);

  std::vector<Tensor> q_in = embed(question);
  bool any_q = false;
  for (uint8_t x : question_mask) any_q = any_q || (x != 0);
  if (q_in.empty() || !any_q) throw DegenerateInputError("question has no unmasked tokens");
  StackResult q_enc = stack_layers_states(tape, m.question_layers, q_in, question_mask,
                                          m.config.dropout_rate, mode, rng);
  Tensor j = concat(q_enc.top.fwd.back(), q_enc.top.bwd.front());

  const Tensor* wp = nullptr;
  Tensor w_leaf;
  if (m.attention_w) {
    w_leaf = tape.leaf(*m.attention_w);
    wp = &w_leaf;
  }
  AttentionRnn* rp = m.attention_rnn ? &*m.attention_rnn : nullptr;
  ExampleForward out;
  out.attention = attend(tape, m.config.variant, j, p_enc.outputs, passage_mask, wp, rp,
                         m.config.dropout_rate, mode, rng);
  out.question_vec = j;
  out.logits = matmul(tape.leaf(m.output_m), out.attention.context, /*transpose_a=*/true);

  out.candidate_mask.assign(static_cast<size_t>(m.config.max_entities), 0);
  for (int c : candidates) {
    if (c < 0 || c >= m.config.max_entities)
      throw InvalidExampleError("candidate entity " + std::to_string(c) +
                                " outside the model's capacity");
    out.candidate_mask[static_cast<size_t>(c)] = 1;
  }
  return out;
}

inline ExampleForward forward_example(Tape& tape, ReaderModel& m, const ClozeExample& ex,
                                      DropoutMode mode, Rng* rng = nullptr) {
  return forward_example(tape, m, ex.passage, all_ones_mask(ex.passage.size()), ex.question,
                         all_ones_mask(ex.question.size()), ex.candidates, mode, rng);
}

inline std::vector<ExampleForward> forward(Tape& tape, ReaderModel& m, const Batch& batch,
                                           DropoutMode mode, Rng* rng = nullptr) {
  std::vector<ExampleForward> out;
  out.reserve(batch.size());
  for (size_t i = 0; i < batch.size(); ++i)
    out.push_back(forward_example(tape, m, batch.passage[i], batch.passage_mask[i],
                                  batch.question[i], batch.question_mask[i], batch.candidates[i],
                                  mode, rng));
  return out;
}

// Mean candidate-restricted NLL over the batch.
inline Tensor batch_loss(Tape& tape, ReaderModel& m, const Batch& batch, DropoutMode mode,
                         Rng* rng = nullptr) {
  if (batch.size() == 0) throw DegenerateInputError("loss over an empty batch");
  std::vector<ExampleForward> fwd = forward(tape, m, batch, mode, rng);
  std::vector<Tensor> losses;
  losses.reserve(fwd.size());
  for (size_t i = 0; i < fwd.size(); ++i) {
    int ans = batch.answer[i];
    if (ans < 0 || ans >= m.config.max_entities ||
        !fwd[i].candidate_mask[static_cast<size_t>(ans)])
      throw InvalidExampleError("answer entity " + std::to_string(ans) +
                                " is not among the candidates of batch row " + std::to_string(i));
    losses.push_back(nll_loss(fwd[i].logits, fwd[i].candidate_mask, ans));
  }
  Tensor stacked = stack_scalars(losses);
  return scale(sum_components(stacked), Scalar(1.0 / static_cast<double>(losses.size())));
}

struct Prediction {
  std::vector<int> candidates;
  std::vector<double> log_probs;  // aligned with candidates
  int entity = -1;
  AttentionTrace trace;
};

// Eval-mode argmax over candidate logits; ties go to the lowest entity id.
inline Prediction predict(ReaderModel& m, const ClozeExample& ex) {
  Tape tape;
  ExampleForward fwd = forward_example(tape, m, ex, DropoutMode::Eval);
  Prediction pred;
  pred.candidates = ex.candidates;
  pred.trace = make_trace(fwd.attention);
  std::span<const Scalar> logits = fwd.logits.values();
  double mx = -std::numeric_limits<double>::infinity();
  for (int c : ex.candidates) mx = std::max(mx, static_cast<double>(logits[static_cast<size_t>(c)]));
  double lse = 0.0;
  for (int c : ex.candidates) lse += std::exp(static_cast<double>(logits[static_cast<size_t>(c)]) - mx);
  lse = mx + std::log(lse);
  double best = -std::numeric_limits<double>::infinity();
  for (int c : ex.candidates) {
    double l = static_cast<double>(logits[static_cast<size_t>(c)]);
    pred.log_probs.push_back(l - lse);
    if (l > best || (l == best && c < pred.entity)) {
      best = l;
      pred.entity = c;
    }
  }
  return pred;
}

struct ParamCountReport {
  long long total = 0;
  std::vector<std::pair<std::string, long long>> by_group;
};

inline ParamCountReport count_parameters(ReaderModel& m) {
  ParamCountReport rep;
  for (auto& g : m.groups()) {
    long long n = g.count();
    rep.by_group.emplace_back(g.name, n);
    rep.total += n;
  }
  return rep;
}

}  // namespace seqattn
