// Acceptance gate: each criterion prints exactly one [PASS]/[FAIL] line.
// Run with no arguments for all criteria, or pass criterion numbers (1-6).
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <map>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <seqattn/grad_check.hpp>
#include <seqattn/seqattn.hpp>

#include "task_fixtures.hpp"

using namespace seqattn;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

// --- criterion 1: summed score-vector attention equals its scalar twin ----

double equivalence_max_diff() {
  double worst = 0;
  Rng rng(20260822);
  for (int trial = 0; trial < 100; ++trial) {
    int n = 2 + static_cast<int>(rng.below(19));   // passage length <= 20
    int d = 1 + static_cast<int>(rng.below(16));   // vector width <= 16
    Tape tape;
    auto rand_vec = [&](int len) {
      std::vector<Scalar> v(static_cast<size_t>(len));
      for (Scalar& x : v) x = static_cast<Scalar>(rng.uniform(-0.5, 0.5));
      return tape.constant({len}, v);
    };
    Tensor j = rand_vec(d);
    std::vector<Tensor> h;
    for (int i = 0; i < n; ++i) h.push_back(rand_vec(d));
    std::vector<Scalar> wv(static_cast<size_t>(d) * static_cast<size_t>(d));
    for (Scalar& x : wv) x = static_cast<Scalar>(rng.uniform(-0.5, 0.5));
    Tensor w = tape.constant({d, d}, wv);
    std::vector<uint8_t> mask(static_cast<size_t>(n), 1);

    auto alpha_from_gammas = [&](ScoringVariant v, const Tensor* wp) {
      std::vector<Tensor> gammas = gamma_vectors(tape, v, j, h, wp);
      std::vector<Tensor> sums;
      for (const Tensor& g : gammas) sums.push_back(sum_components(g));
      return masked_softmax(stack_scalars(sums), mask);
    };
    Tensor pb = alpha_from_gammas(ScoringVariant::PartialBilinearSA, &w);
    Tensor bil = score_bilinear(tape, j, h, w, mask);
    Tensor el = alpha_from_gammas(ScoringVariant::ElementwiseSA, nullptr);
    Tensor dot = score_dot(tape, j, h, mask);
    for (int i = 0; i < n; ++i) {
      worst = std::max(worst, std::abs(static_cast<double>(pb.values()[i]) -
                                       static_cast<double>(bil.values()[i])));
      worst = std::max(worst, std::abs(static_cast<double>(el.values()[i]) -
                                       static_cast<double>(dot.values()[i])));
    }
  }
  return worst;
}

void criterion1() {
  double worst = equivalence_max_diff();
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "score-vector sums reproduce scalar attention, max |diff| %.3e over 100 "
                "instances (bound 1e-12)",
                worst);
  report(1, worst <= 1e-12, buf);
}

// --- criterion 2: finite-difference gradient oracle -----------------------

void criterion2() {
  ClozeExample a;
  a.passage = {3, 6, 4, 7, 5, 8};
  a.question = {2, 9, 10};
  a.answer = 1;
  a.candidates = {0, 1, 2};
  ClozeExample b = a;
  b.passage = {4, 9, 3, 6, 5, 11};
  b.answer = 0;
  Batch batch;
  for (const ClozeExample& ex : {a, b}) {
    batch.example_indices.push_back(static_cast<int>(batch.example_indices.size()));
    batch.passage.push_back(ex.passage);
    batch.passage_mask.push_back(std::vector<uint8_t>(ex.passage.size(), 1));
    batch.question.push_back(ex.question);
    batch.question_mask.push_back(std::vector<uint8_t>(ex.question.size(), 1));
    batch.answer.push_back(ex.answer);
    batch.candidates.push_back(ex.candidates);
  }

  const std::pair<ScoringVariant, int> variants[] = {
      {ScoringVariant::DotProduct, 1},    {ScoringVariant::Bilinear, 1},
      {ScoringVariant::DotProduct, 2},    {ScoringVariant::Bilinear, 2},
      {ScoringVariant::ElementwiseSA, 1}, {ScoringVariant::PartialBilinearSA, 1}};
  double worst = 0;
  std::string worst_name;
  bool pass = true;
  for (auto [v, layers] : variants) {
    ReaderConfig c;
    c.variant = v;
    c.encoder_layers = layers;
    c.vocab_size = 12;
    c.embed_dim = 4;
    c.hidden_size = 3;
    c.attn_hidden_size = 3;
    c.max_entities = 3;
    c.seed = 21;
    ReaderModel m = build_model(c);
    Rng rng(99);
    for (Param* p : m.params())
      for (Scalar& x : p->value) x = static_cast<Scalar>(rng.uniform(-0.4, 0.4));
    GradCheckReport rep = grad_check_params(
        m.params(), [&](Tape& tape) { return batch_loss(tape, m, batch, DropoutMode::Eval); },
        1e-5, 1e-4);
    if (rep.max_rel_error > worst) {
      worst = rep.max_rel_error;
      worst_name = std::string(variant_name(v)) + (layers == 2 ? "-2layer" : "");
    }
    pass = pass && rep.passed();
  }
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "all six variants match central differences, worst rel err %.3e (%s, bound 1e-4)",
                worst, worst_name.c_str());
  report(2, pass, buf);
}

// --- criterion 3: parameter accounting at the reference preset -------------

void criterion3() {
  auto count = [](ScoringVariant v, int layers) {
    ReaderConfig c;
    c.variant = v;
    c.encoder_layers = layers;
    c.vocab_size = 50000;
    c.embed_dim = 100;
    c.hidden_size = 128;
    c.attn_hidden_size = 128;
    c.max_entities = 330;
    ReaderModel m = build_model(c);
    return count_parameters(m).total;
  };
  long long dot1 = count(ScoringVariant::DotProduct, 1);
  long long bil1 = count(ScoringVariant::Bilinear, 1);
  long long el = count(ScoringVariant::ElementwiseSA, 1);
  long long pb = count(ScoringVariant::PartialBilinearSA, 1);
  long long dot2 = count(ScoringVariant::DotProduct, 2);
  long long bil2 = count(ScoringVariant::Bilinear, 2);

  bool ordering = dot1 < bil1 && bil1 < el && el < pb && pb < dot2 && dot2 < bil2;
  long long delta_bil = bil1 - dot1;
  long long delta_pb = pb - el;
  bool deltas = delta_bil == 65536 && delta_pb == 65536 &&
                std::llabs(delta_bil - 60000) <= 10000 && std::llabs(delta_pb - 70000) <= 10000;
  char buf[240];
  std::snprintf(buf, sizeof buf,
                "totals %lld < %lld < %lld < %lld < %lld < %lld, paired deltas %lld and %lld "
                "(expect (2h)^2 = 65536, within 1e4 of 6e4 and 7e4)",
                dot1, bil1, el, pb, dot2, bil2, delta_bil, delta_pb);
  report(3, ordering && deltas, buf);
}

// --- criterion 4: learning bars on the generated tasks ---------------------

struct BarResult {
  std::string name;
  int epochs_run = 0;
  double test_accuracy = 0;
  bool pass = false;
};

BarResult run_bar(const PreparedTask& task, ScoringVariant v, int layers, int max_epochs,
                  double bar, double stop_at) {
  ReaderConfig c;
  c.variant = v;
  c.encoder_layers = layers;
  c.vocab_size = task.vocab.size();
  c.embed_dim = 32;
  c.hidden_size = 32;
  c.attn_hidden_size = 32;
  c.max_entities = task.entities;
  c.seed = 404;
  ReaderModel m = build_model(c);
  TrainConfig tc;
  tc.learning_rate = 1.0;
  tc.batch_size = 16;
  tc.dropout = 0.2;
  tc.epochs = max_epochs;
  tc.seed = 14;
  tc.stop_at_dev_accuracy = stop_at;
  TrainResult tr = train(m, task.train, task.dev, tc);
  restore_params(m, tr.best_params);
  BarResult r;
  r.name = std::string(variant_name(v)) + (layers == 2 ? "-2layer" : "");
  r.epochs_run = static_cast<int>(tr.metrics.size());
  r.test_accuracy = evaluate_accuracy(m, task.test).accuracy;
  r.pass = r.test_accuracy >= bar && r.epochs_run <= max_epochs;
  return r;
}

void criterion4() {
  // Regime frozen from the first seeded pilot run: lr 1.0, batch 16,
  // dropout 0.2; every variant broke out of the chance plateau by epoch 8.
  PreparedTask easy = prepare_task(SyntheticRule::PositionalEasy, 2000, 500, 500, 13);
  const std::pair<ScoringVariant, int> all_variants[] = {
      {ScoringVariant::DotProduct, 1},    {ScoringVariant::Bilinear, 1},
      {ScoringVariant::ElementwiseSA, 1}, {ScoringVariant::PartialBilinearSA, 1},
      {ScoringVariant::DotProduct, 2},    {ScoringVariant::Bilinear, 2}};
  bool pass = true;
  std::string detail = "positional-easy (bar 0.95/15 epochs):";
  for (auto [v, layers] : all_variants) {
    BarResult r = run_bar(easy, v, layers, 15, 0.95, 0.99);
    char buf[96];
    std::snprintf(buf, sizeof buf, " %s %.3f@%d", r.name.c_str(), r.test_accuracy, r.epochs_run);
    detail += buf;
    pass = pass && r.pass;
  }
  PreparedTask trig = prepare_task(SyntheticRule::ContextTrigger, 2000, 500, 500, 13);
  detail += "; context-trigger (bar 0.90/25 epochs):";
  for (ScoringVariant v : {ScoringVariant::ElementwiseSA, ScoringVariant::PartialBilinearSA}) {
    BarResult r = run_bar(trig, v, 1, 25, 0.90, 0.95);
    char buf[96];
    std::snprintf(buf, sizeof buf, " %s %.3f@%d", r.name.c_str(), r.test_accuracy, r.epochs_run);
    detail += buf;
    pass = pass && r.pass;
  }
  report(4, pass, detail);
}

// --- criterion 5: invariant suite ------------------------------------------

bool softmax_normalization(std::string& why) {
  Rng rng(51);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 2 + static_cast<int>(rng.below(12));
    Tape tape;
    std::vector<Scalar> logits(static_cast<size_t>(n));
    for (Scalar& x : logits) x = static_cast<Scalar>(rng.uniform(-30, 30));
    std::vector<uint8_t> mask(static_cast<size_t>(n));
    bool any = false;
    for (uint8_t& m : mask) {
      m = rng.below(3) != 0;
      any = any || m;
    }
    if (!any) mask[0] = 1;
    Tensor alpha = masked_softmax(tape.constant({n}, logits), mask);
    double sum = 0;
    for (int i = 0; i < n; ++i) {
      double a = static_cast<double>(alpha.values()[i]);
      if (!mask[static_cast<size_t>(i)] && a != 0.0) {
        why = "masked weight is nonzero";
        return false;
      }
      if (a < 0) {
        why = "negative weight";
        return false;
      }
      sum += a;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      why = "weights sum to " + std::to_string(sum);
      return false;
    }
  }
  return true;
}

bool convex_hull(std::string& why) {
  Rng rng(52);
  for (int trial = 0; trial < 10; ++trial) {
    int n = 2 + static_cast<int>(rng.below(6));
    int d = 2 + static_cast<int>(rng.below(5));
    Tape tape;
    auto rand_vec = [&](int len) {
      std::vector<Scalar> v(static_cast<size_t>(len));
      for (Scalar& x : v) x = static_cast<Scalar>(rng.uniform(-2, 2));
      return tape.constant({len}, v);
    };
    Tensor j = rand_vec(d);
    std::vector<Tensor> h;
    for (int i = 0; i < n; ++i) h.push_back(rand_vec(d));
    std::vector<uint8_t> mask(static_cast<size_t>(n), 1);
    AttentionResult res = attend(tape, ScoringVariant::DotProduct, j, h, mask);
    for (int k = 0; k < d; ++k) {
      double lo = 1e300, hi = -1e300;
      for (int i = 0; i < n; ++i) {
        double v = static_cast<double>(h[static_cast<size_t>(i)].values()[k]);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      double o = static_cast<double>(res.context.values()[k]);
      if (o < lo - 1e-12 || o > hi + 1e-12) {
        why = "context component escapes the hull";
        return false;
      }
    }
  }
  return true;
}

bool candidate_restriction(std::string& why) {
  Rng rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    ReaderConfig c;
    c.variant = trial % 2 == 0 ? ScoringVariant::ElementwiseSA : ScoringVariant::Bilinear;
    c.vocab_size = 20;
    c.embed_dim = 4;
    c.hidden_size = 3;
    c.attn_hidden_size = 3;
    c.max_entities = 6;
    c.seed = 1000 + static_cast<uint64_t>(trial);
    ReaderModel m = build_model(c);
    for (Param* p : m.params())
      for (Scalar& x : p->value) x = static_cast<Scalar>(rng.uniform(-0.6, 0.6));
    ClozeExample ex;
    ex.passage = {3, 7, 4, 9, 5, 11, 6};
    ex.question = {2, 12};
    std::set<int> cand;
    int k = 2 + static_cast<int>(rng.below(4));
    while (static_cast<int>(cand.size()) < k) cand.insert(static_cast<int>(rng.below(6)));
    ex.candidates.assign(cand.begin(), cand.end());
    ex.answer = ex.candidates[0];
    Prediction p = predict(m, ex);
    if (!cand.count(p.entity)) {
      why = "prediction outside the candidate set";
      return false;
    }
  }
  return true;
}

bool padding_invariance(std::string& why) {
  ClozeExample ex;
  ex.passage = {3, 6, 4, 7, 5, 8};
  ex.question = {2, 9, 10};
  ex.answer = 1;
  ex.candidates = {0, 1, 2};
  for (ScoringVariant v : {ScoringVariant::DotProduct, ScoringVariant::Bilinear,
                           ScoringVariant::ElementwiseSA, ScoringVariant::PartialBilinearSA}) {
    ReaderConfig c;
    c.variant = v;
    c.vocab_size = 12;
    c.embed_dim = 4;
    c.hidden_size = 3;
    c.attn_hidden_size = 3;
    c.max_entities = 3;
    c.seed = 7;
    ReaderModel m = build_model(c);
    Tape t1;
    ExampleForward plain = forward_example(t1, m, ex, DropoutMode::Eval);
    std::vector<int> p = ex.passage, q = ex.question;
    p.insert(p.end(), 5, Vocabulary::kPad);
    q.insert(q.end(), 2, Vocabulary::kPad);
    std::vector<uint8_t> pm(p.size(), 0), qm(q.size(), 0);
    std::fill(pm.begin(), pm.begin() + 6, uint8_t(1));
    std::fill(qm.begin(), qm.begin() + 3, uint8_t(1));
    Tape t2;
    ExampleForward padded = forward_example(t2, m, p, pm, q, qm, ex.candidates,
                                            DropoutMode::Eval);
    for (size_t i = 0; i < plain.logits.size(); ++i)
      if (std::abs(static_cast<double>(plain.logits.values()[i]) -
                   static_cast<double>(padded.logits.values()[i])) > 1e-10) {
        why = std::string("padded logits drift for ") + variant_name(v);
        return false;
      }
  }
  return true;
}

bool relabel_canonical(std::string& why) {
  RawExample base;
  base.passage = {"@entity11", "went", "to", "@entity4", "with", "@entity19", "and", "@entity4"};
  base.question = {"@blank", "visited", "@entity4"};
  base.answer = "@entity11";
  base.entity_map = {{"@entity11", "alice"}, {"@entity4", "rome"}, {"@entity19", "bob"}};
  RawExample canon = relabel_entities(base);
  Rng rng(54);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> labels = {11, 4, 19};
    std::vector<int> fresh = {static_cast<int>(rng.below(500)), static_cast<int>(rng.below(500)),
                              static_cast<int>(rng.below(500))};
    std::sort(fresh.begin(), fresh.end());
    fresh.erase(std::unique(fresh.begin(), fresh.end()), fresh.end());
    if (fresh.size() < 3) continue;
    rng.shuffle(fresh);
    RawExample permuted = base;
    auto rename = [&](const std::string& tok) {
      for (size_t i = 0; i < labels.size(); ++i)
        if (tok == entity_token(labels[i])) return entity_token(fresh[i]);
      return tok;
    };
    for (auto& t : permuted.passage) t = rename(t);
    for (auto& t : permuted.question) t = rename(t);
    permuted.answer = rename(permuted.answer);
    std::map<std::string, std::string> remapped;
    for (const auto& [k, val] : permuted.entity_map) remapped.emplace(rename(k), val);
    permuted.entity_map = std::move(remapped);
    RawExample c2 = relabel_entities(permuted);
    if (c2.passage != canon.passage || c2.question != canon.question ||
        c2.answer != canon.answer || c2.entity_map != canon.entity_map) {
      why = "permuted labels do not reach the same canonical form";
      return false;
    }
  }
  return true;
}

bool training_determinism(std::string& why) {
  PreparedTask task = prepare_task(SyntheticRule::PositionalEasy, 48, 16, 0, 55);
  std::vector<std::vector<MetricsRecord>> metrics;
  std::vector<std::vector<std::vector<Scalar>>> finals;
  for (int run = 0; run < 2; ++run) {
    ReaderConfig c;
    c.variant = ScoringVariant::PartialBilinearSA;
    c.vocab_size = task.vocab.size();
    c.embed_dim = 8;
    c.hidden_size = 8;
    c.attn_hidden_size = 8;
    c.max_entities = task.entities;
    c.seed = 56;
    ReaderModel m = build_model(c);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 16;
    tc.seed = 57;
    TrainResult tr = train(m, task.train, task.dev, tc);
    metrics.push_back(tr.metrics);
    finals.push_back(snapshot_params(m));
  }
  for (size_t e = 0; e < metrics[0].size(); ++e) {
    const MetricsRecord &a = metrics[0][e], &b = metrics[1][e];
    if (a.train_loss != b.train_loss || a.dev_accuracy != b.dev_accuracy ||
        a.grad_norm_mean != b.grad_norm_mean || a.grad_norm_max != b.grad_norm_max) {
      why = "metrics differ between same-seed runs";
      return false;
    }
  }
  for (size_t i = 0; i < finals[0].size(); ++i)
    if (std::memcmp(finals[0][i].data(), finals[1][i].data(),
                    finals[0][i].size() * sizeof(Scalar)) != 0) {
      why = "final parameters differ between same-seed runs";
      return false;
    }
  return true;
}

void criterion5() {
  struct Piece {
    const char* name;
    bool (*fn)(std::string&);
  };
  const Piece pieces[] = {{"softmax-normalization", softmax_normalization},
                          {"context-convex-hull", convex_hull},
                          {"candidate-restriction", candidate_restriction},
                          {"padding-invariance", padding_invariance},
                          {"relabel-canonical-form", relabel_canonical},
                          {"training-determinism", training_determinism}};
  bool pass = true;
  std::string detail;
  for (const Piece& p : pieces) {
    std::string why;
    bool ok = false;
    try {
      ok = p.fn(why);
    } catch (const std::exception& e) {
      why = e.what();
    }
    if (!detail.empty()) detail += ", ";
    detail += std::string(p.name) + (ok ? " ok" : " FAILED (" + why + ")");
    pass = pass && ok;
  }
  report(5, pass, detail);
}

// --- criterion 6: import round-trip ----------------------------------------

std::string question_file(const std::string& url, const std::string& passage,
                          const std::string& question, const std::string& answer,
                          const std::vector<std::string>& mapping) {
  std::string s = url + "\n\n" + passage + "\n\n" + question + "\n\n" + answer + "\n\n";
  for (size_t i = 0; i < mapping.size(); ++i) s += mapping[i] + "\n";
  return s;
}

void criterion6() {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "seqattn-acceptance-c6";
  fs::remove_all(dir);
  fs::create_directories(dir);

  std::vector<std::string> files;
  auto put = [&](int idx, const std::string& content) {
    fs::path p = dir / (std::to_string(idx) + ".question");
    std::ofstream out(p);
    out << content;
    files.push_back(p.string());
  };
  int idx = 0;
  for (int i = 0; i < 6; ++i)
    put(idx++, question_file("http://a.test/" + std::to_string(i),
                             "@entity3 saw @entity8 near the gate of @entity3",
                             "@blank saw @entity8", "@entity3",
                             {"@entity3:guard", "@entity8:visitor"}));
  for (int i = 0; i < 3; ++i)
    put(idx++, question_file("http://b.test/" + std::to_string(i),
                             "@entity5 walked home alone", "@blank met @entity5", "@entity9",
                             {"@entity5:walker", "@entity9:stranger"}));

  bool pass = true;
  std::string detail;
  try {
    std::vector<RawExample> imported;
    for (size_t i = 0; i < files.size(); ++i) {
      RawExample ex = import_cnn_file(files[i]);
      ex.id = static_cast<int>(i);
      imported.push_back(std::move(ex));
    }
    auto [kept, rep] = validate_examples(imported);
    for (RawExample& ex : kept) ex = relabel_entities(ex);
    std::stringstream buf;
    write_canonical(buf, kept);
    std::vector<RawExample> reread = read_canonical(buf);

    bool same = reread.size() == kept.size();
    for (size_t i = 0; same && i < kept.size(); ++i)
      same = reread[i].id == kept[i].id && reread[i].passage == kept[i].passage &&
             reread[i].question == kept[i].question && reread[i].answer == kept[i].answer;
    char cbuf[160];
    std::snprintf(cbuf, sizeof cbuf,
                  "imported %zu, dropped %zu unanswerable (expect 3), re-import %s",
                  imported.size(), rep.dropped, same ? "matches" : "DIFFERS");
    detail = cbuf;
    pass = rep.dropped == 3 && rep.kept == 6 && same;
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
    pass = false;
  }
  fs::remove_all(dir);
  report(6, pass, detail);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
  auto want = [&](int c) {
    return wanted.empty() || std::find(wanted.begin(), wanted.end(), c) != wanted.end();
  };
  using Fn = void (*)();
  const Fn criteria[] = {criterion1, criterion2, criterion3, criterion4, criterion5, criterion6};
  for (int c = 1; c <= 6; ++c) {
    if (!want(c)) continue;
    try {
      criteria[c - 1]();
    } catch (const std::exception& e) {
      report(c, false, std::string("exception: ") + e.what());
    }
  }
  return g_failures == 0 ? 0 : 1;
}
