#pragma once
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "checkpoint.hpp"
#include "data.hpp"
#include "reader.hpp"
#include "synthetic.hpp"
#include "vocab.hpp"

namespace seqattn {

struct TrainConfig {
  double learning_rate = 0.1;
  int batch_size = 32;
  double clip_norm = 10.0;
  double dropout = 0.2;
  int epochs = 30;
  uint64_t seed = 0;
  int patience = 0;                 // 0 disables dev-accuracy early stopping
  double stop_at_dev_accuracy = 0;  // 0 disables; stop once dev reaches this
};

inline void validate(const TrainConfig& c) {
  if (c.learning_rate <= 0) throw ConfigError("learning rate must be positive");
  if (c.batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (c.clip_norm <= 0) throw ConfigError("clip norm must be positive");
  if (c.dropout < 0 || c.dropout >= 1) throw ConfigError("dropout must lie in [0,1)");
  if (c.epochs < 0) throw ConfigError("epoch count cannot be negative");
  if (c.patience < 0) throw ConfigError("patience cannot be negative");
  if (c.stop_at_dev_accuracy < 0 || c.stop_at_dev_accuracy > 1)
    throw ConfigError("dev-accuracy stop threshold must lie in [0,1]");
}

struct MetricsRecord {
  int epoch = 0;
  double train_loss = 0;
  double dev_accuracy = 0;
  double seconds = 0;
  double grad_norm_mean = 0;
  double grad_norm_max = 0;
};

inline nlohmann::json to_json(const MetricsRecord& r) {
  return nlohmann::json{{"epoch", r.epoch},
                        {"train_loss", r.train_loss},
                        {"dev_accuracy", r.dev_accuracy},
                        {"seconds", r.seconds},
                        {"grad_norm_mean", r.grad_norm_mean},
                        {"grad_norm_max", r.grad_norm_max}};
}

inline void write_metrics(std::ostream& out, const std::vector<MetricsRecord>& records) {
  for (const MetricsRecord& r : records) out << to_json(r).dump() << "\n";
}

// Joint L2 rescale of all gradients when their global norm exceeds max_norm.
// Returns the pre-clip norm.
inline double clip_global_norm(const std::vector<Param*>& params, double max_norm) {
  double sq = 0;
  for (const Param* p : params)
    for (Scalar g : p->grad) sq += static_cast<double>(g) * static_cast<double>(g);
  double norm = std::sqrt(sq);
  if (norm > max_norm) {
    Scalar s = static_cast<Scalar>(max_norm / norm);
    for (Param* p : params)
      for (Scalar& g : p->grad) g *= s;
  }
  return norm;
}

inline void sgd_update(const std::vector<Param*>& params, double lr) {
  for (Param* p : params) {
    if (!p->trainable) continue;
    for (size_t i = 0; i < p->value.size(); ++i)
      p->value[i] -= static_cast<Scalar>(lr) * p->grad[i];
  }
}

struct StepStats {
  double loss = 0;
  double grad_norm = 0;  // pre-clip global norm
};

// One SGD step: train-mode loss, backward, global-norm clip, update. The tape
// lives only inside this call.
inline StepStats sgd_step(ReaderModel& model, const Batch& batch, const TrainConfig& cfg,
                          Rng& dropout_rng) {
  model.config.dropout_rate = cfg.dropout;
  model.zero_grads();
  StepStats stats;
  {
    Tape tape;
    Tensor loss = batch_loss(tape, model, batch, DropoutMode::Train, &dropout_rng);
    stats.loss = static_cast<double>(loss.item());
    if (!std::isfinite(stats.loss))
      throw TrainingError("non-finite training loss " + std::to_string(stats.loss));
    backward(loss);
  }
  std::vector<Param*> params = model.params();
  stats.grad_norm = clip_global_norm(params, cfg.clip_norm);
  sgd_update(params, cfg.learning_rate);
  return stats;
}

struct EvalResult {
  double accuracy = 0;
  std::vector<int> predictions;  // predicted entity per example, input order
};

inline EvalResult evaluate_accuracy(ReaderModel& model, const std::vector<ClozeExample>& data) {
  if (data.empty()) throw DegenerateInputError("evaluation over an empty dataset");
  EvalResult res;
  size_t hits = 0;
  for (const ClozeExample& ex : data) {
    Prediction p = predict(model, ex);
    res.predictions.push_back(p.entity);
    if (p.entity == ex.answer) ++hits;
  }
  res.accuracy = static_cast<double>(hits) / static_cast<double>(data.size());
  return res;
}

// Stub evaluation: score an arbitrary predictor against the gold answers.
inline double evaluate_accuracy(const std::vector<ClozeExample>& data,
                                const std::function<int(const ClozeExample&)>& stub) {
  if (data.empty()) throw DegenerateInputError("evaluation over an empty dataset");
  size_t hits = 0;
  for (const ClozeExample& ex : data)
    if (stub(ex) == ex.answer) ++hits;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

inline std::vector<std::vector<Scalar>> snapshot_params(ReaderModel& model) {
  std::vector<std::vector<Scalar>> snap;
  for (const Param* p : model.params()) snap.push_back(p->value);
  return snap;
}

inline void restore_params(ReaderModel& model, const std::vector<std::vector<Scalar>>& snap) {
  std::vector<Param*> ps = model.params();
  if (ps.size() != snap.size()) throw ContractError("snapshot does not match the model");
  for (size_t i = 0; i < ps.size(); ++i) {
    if (ps[i]->value.size() != snap[i].size())
      throw ContractError("snapshot tensor " + ps[i]->name + " has wrong size");
    ps[i]->value = snap[i];
  }
}

struct TrainResult {
  std::vector<MetricsRecord> metrics;
  std::vector<std::vector<Scalar>> best_params;  // highest dev accuracy, ties to earliest
  int best_epoch = -1;
  double best_dev_accuracy = -1;
};

// One epoch = one full shuffled pass. Shuffle order depends only on
// (seed, epoch), dropout noise only on (seed, epoch, step), so a fixed seed
// pins the whole trajectory. The best-dev snapshot starts as the
// initialization, so epochs=0 hands back the untrained parameters.
inline TrainResult train(ReaderModel& model, const std::vector<ClozeExample>& train_set,
                         const std::vector<ClozeExample>& dev_set, const TrainConfig& cfg,
                         const std::function<void(const MetricsRecord&)>& on_epoch = {}) {
  validate(cfg);
  if (train_set.empty()) throw DegenerateInputError("training set is empty");
  if (dev_set.empty()) throw DegenerateInputError("dev set is empty");
  model.config.dropout_rate = cfg.dropout;

  TrainResult res;
  res.best_params = snapshot_params(model);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<Batch> batches = make_batches(train_set, cfg.batch_size, cfg.seed, epoch);
    Rng dropout_rng(mix_seed(mix_seed(cfg.seed, 0xD120u), static_cast<uint64_t>(epoch)));
    double loss_sum = 0, norm_sum = 0, norm_max = 0;
    for (const Batch& b : batches) {
      StepStats st = sgd_step(model, b, cfg, dropout_rng);
      loss_sum += st.loss * static_cast<double>(b.size());
      norm_sum += st.grad_norm;
      norm_max = std::max(norm_max, st.grad_norm);
    }
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.dev_accuracy = evaluate_accuracy(model, dev_set).accuracy;
    rec.grad_norm_mean = norm_sum / static_cast<double>(batches.size());
    rec.grad_norm_max = norm_max;
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.metrics.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.dev_accuracy > res.best_dev_accuracy) {
      res.best_dev_accuracy = rec.dev_accuracy;
      res.best_epoch = epoch;
      res.best_params = snapshot_params(model);
    }
    if (cfg.stop_at_dev_accuracy > 0 && rec.dev_accuracy >= cfg.stop_at_dev_accuracy) break;
    if (cfg.patience > 0 && epoch - res.best_epoch >= cfg.patience) break;
  }
  return res;
}

struct GridRow {
  std::string name;
  ScoringVariant variant;
  int encoder_layers = 1;
  long long parameter_count = 0;
  double dev_accuracy = 0;
  double test_accuracy = 0;
  int best_epoch = -1;
};

// The six-variant comparison at a shared seed and shared data order. Rows come
// out in increasing parameter count: dot, bilinear, the two sequential-scoring
// variants, then the 2-layer encoders.
inline std::vector<GridRow> run_grid(const ReaderConfig& base, const TrainConfig& tcfg,
                                     const std::vector<ClozeExample>& train_set,
                                     const std::vector<ClozeExample>& dev_set,
                                     const std::vector<ClozeExample>& test_set,
                                     const std::function<void(const GridRow&)>& on_row = {}) {
  const std::pair<ScoringVariant, int> kGrid[] = {
      {ScoringVariant::DotProduct, 1},        {ScoringVariant::Bilinear, 1},
      {ScoringVariant::ElementwiseSA, 1},     {ScoringVariant::PartialBilinearSA, 1},
      {ScoringVariant::DotProduct, 2},        {ScoringVariant::Bilinear, 2}};
  std::vector<GridRow> rows;
  for (auto [variant, layers] : kGrid) {
    ReaderConfig cfg = base;
    cfg.variant = variant;
    cfg.encoder_layers = layers;
    ReaderModel model = build_model(cfg);
    TrainResult tr = train(model, train_set, dev_set, tcfg);
    restore_params(model, tr.best_params);
    GridRow row;
    row.name = std::string(variant_name(variant)) + (layers == 2 ? "-2layer" : "");
    row.variant = variant;
    row.encoder_layers = layers;
    row.parameter_count = count_parameters(model).total;
    row.dev_accuracy = tr.best_dev_accuracy;
    row.test_accuracy =
        test_set.empty() ? tr.best_dev_accuracy : evaluate_accuracy(model, test_set).accuracy;
    row.best_epoch = tr.best_epoch;
    rows.push_back(row);
    if (on_row) on_row(row);
  }
  return rows;
}

// Per-token attention record for external plotting. SA variants also get the
// per-position L2 of the score vectors and the attention-RNN outputs.
inline nlohmann::json attention_dump(ReaderModel& model, const Vocabulary& vocab,
                                     const ClozeExample& ex) {
  Prediction p = predict(model, ex);
  nlohmann::json j;
  j["example_id"] = ex.id;
  j["variant"] = variant_name(model.config.variant);
  std::vector<std::string> tokens;
  for (int id : ex.passage) tokens.push_back(vocab.token(id));
  j["tokens"] = tokens;
  j["alpha"] = p.trace.alpha;
  j["predicted_entity"] = p.entity;
  if (is_sequential(model.config.variant)) {
    auto l2 = [](const std::vector<double>& v) {
      double s = 0;
      for (double x : v) s += x * x;
      return std::sqrt(s);
    };
    std::vector<double> gamma_l2, eta_l2;
    for (const auto& g : p.trace.gamma) gamma_l2.push_back(l2(g));
    for (const auto& e : p.trace.eta) eta_l2.push_back(l2(e));
    j["gamma_l2"] = gamma_l2;
    j["eta_l2"] = eta_l2;
  }
  return j;
}

inline void dump_attention(ReaderModel& model, const Vocabulary& vocab, const ClozeExample& ex,
                           std::ostream& out) {
  out << attention_dump(model, vocab, ex).dump(2) << "\n";
}

inline void dump_attention_file(ReaderModel& model, const Vocabulary& vocab,
                                const ClozeExample& ex, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open attention dump for writing: " + path);
  dump_attention(model, vocab, ex, out);
  if (!out) throw IoError("attention dump write failed: " + path);
}

}  // namespace seqattn
