#pragma once
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "checkpoint.hpp"
#include "data.hpp"
#include "embedding_io.hpp"
#include "reader.hpp"
#include "synthetic.hpp"
#include "train.hpp"
#include "vocab.hpp"

namespace seqattn {
namespace cli_detail {

inline constexpr const char* kDataDirEnv = "SEQATTN_DATA_DIR";

// Relative inputs that do not exist as given fall back to the data directory
// from the environment. Outputs are never redirected.
inline std::string resolve_input(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::exists(path)) return path;
  const char* base = std::getenv(kDataDirEnv);
  if (base != nullptr && *base != '\0' && fs::path(path).is_relative()) {
    fs::path joined = fs::path(base) / path;
    if (fs::exists(joined)) return joined.string();
  }
  return path;
}

inline std::vector<RawExample> read_dataset(const std::string& path) {
  std::vector<RawExample> data = read_canonical_file(resolve_input(path));
  for (RawExample& ex : data) ex = relabel_entities(ex);
  return data;
}

struct ScaleFlags {
  std::string preset;
  std::string variant;
  int layers = -1;
  int vocab_limit = -1;
  int embed_dim = -1;
  int hidden = -1;
  int attn_hidden = -1;
  int entities = -1;
  uint64_t model_seed = 0;
  bool seed_given = false;
};

inline void add_scale_flags(CLI::App* sub, ScaleFlags& f, bool with_variant = true) {
  sub->add_option("--preset", f.preset, "hyperparameter bundle: reference (V=50k, d=100, h=128) or desk (d=32, h=32)")
      ->check(CLI::IsMember({"reference", "desk"}));
  if (with_variant) {
    sub->add_option("--variant", f.variant,
                    "scoring: dot, bilinear, sa-elementwise, sa-partial-bilinear");
    sub->add_option("--layers", f.layers, "encoder depth, 1 or 2")->check(CLI::Range(1, 2));
  }
  sub->add_option("--vocab-limit", f.vocab_limit, "vocabulary size cap");
  sub->add_option("--embed-dim", f.embed_dim, "embedding dimension");
  sub->add_option("--hidden", f.hidden, "encoder hidden size per direction");
  sub->add_option("--attn-hidden", f.attn_hidden, "attention RNN hidden size");
  sub->add_option("--entities", f.entities, "entity capacity of the output layer");
  sub->add_option("--model-seed", f.model_seed, "parameter initialization seed")
      ->trigger_on_parse()
      ->each([&f](const std::string&) { f.seed_given = true; });
}

struct ResolvedScale {
  ReaderConfig config;
  int vocab_limit = 50000;
};

inline ResolvedScale resolve_scale(const ScaleFlags& f) {
  ResolvedScale r;
  ReaderConfig& c = r.config;
  c.variant = ScoringVariant::Bilinear;
  c.encoder_layers = 1;
  c.embed_dim = 100;
  c.hidden_size = 128;
  c.attn_hidden_size = 128;
  c.max_entities = 330;
  c.dropout_rate = 0.2;
  if (f.preset == "desk") {
    c.embed_dim = 32;
    c.hidden_size = 32;
    c.attn_hidden_size = 32;
    c.max_entities = 10;
    r.vocab_limit = 10000;
  }
  if (!f.variant.empty()) c.variant = parse_variant(f.variant);
  if (f.layers > 0) c.encoder_layers = f.layers;
  if (f.vocab_limit > 0) r.vocab_limit = f.vocab_limit;
  if (f.embed_dim > 0) c.embed_dim = f.embed_dim;
  if (f.hidden > 0) c.hidden_size = f.hidden;
  if (f.attn_hidden > 0) c.attn_hidden_size = f.attn_hidden;
  if (f.entities > 0) c.max_entities = f.entities;
  if (f.seed_given) c.seed = f.model_seed;
  c.vocab_size = r.vocab_limit;
  return r;
}

struct TrainFlags {
  double lr = -1, clip = -1, dropout = -1, stop_at = -1;
  int batch = -1, epochs = -1, patience = -1;
  uint64_t seed = 0;
  bool seed_given = false;
};

inline void add_train_flags(CLI::App* sub, TrainFlags& f) {
  sub->add_option("--lr", f.lr, "SGD learning rate");
  sub->add_option("--batch", f.batch, "batch size");
  sub->add_option("--clip", f.clip, "global gradient norm cap");
  sub->add_option("--dropout", f.dropout, "dropout rate on the vertical layers");
  sub->add_option("--epochs", f.epochs, "training epochs");
  sub->add_option("--patience", f.patience, "stop after this many epochs without dev improvement");
  sub->add_option("--stop-at-dev", f.stop_at, "stop once dev accuracy reaches this");
  sub->add_option("--seed", f.seed, "shuffle and dropout seed")
      ->trigger_on_parse()
      ->each([&f](const std::string&) { f.seed_given = true; });
}

inline TrainConfig resolve_train(const TrainFlags& f) {
  TrainConfig c;
  if (f.lr > 0) c.learning_rate = f.lr;
  if (f.batch > 0) c.batch_size = f.batch;
  if (f.clip > 0) c.clip_norm = f.clip;
  if (f.dropout >= 0) c.dropout = f.dropout;
  if (f.epochs >= 0) c.epochs = f.epochs;
  if (f.patience >= 0) c.patience = f.patience;
  if (f.stop_at >= 0) c.stop_at_dev_accuracy = f.stop_at;
  if (f.seed_given) c.seed = f.seed;
  return c;
}

struct EncodedDataset {
  std::vector<ClozeExample> train, dev, test;
  Vocabulary vocab;
};

inline EncodedDataset load_and_encode(const std::string& train_path, const std::string& dev_path,
                                      const std::string& test_path, int vocab_limit,
                                      int max_entities) {
  EncodedDataset ds;
  std::vector<RawExample> train_raw = read_dataset(train_path);
  std::vector<RawExample> dev_raw = read_dataset(dev_path);
  std::vector<std::vector<std::string>> docs;
  for (const RawExample& ex : train_raw) {
    docs.push_back(ex.passage);
    docs.push_back(ex.question);
  }
  ds.vocab = build_vocabulary(docs, static_cast<size_t>(vocab_limit));
  ds.train = encode_examples(train_raw, ds.vocab, max_entities);
  ds.dev = encode_examples(dev_raw, ds.vocab, max_entities);
  if (!test_path.empty())
    ds.test = encode_examples(read_dataset(test_path), ds.vocab, max_entities);
  return ds;
}

}  // namespace cli_detail

inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  using namespace cli_detail;
  CLI::App app{"cloze reader with recurrent sequential attention"};
  app.name("seqattn");
  app.require_subcommand(1);

  // ---- import ----------------------------------------------------------
  auto* imp = app.add_subcommand("import", "convert question files to the canonical format");
  std::vector<std::string> imp_inputs;
  std::string imp_output;
  bool imp_keep_bad = false, imp_no_relabel = false;
  imp->add_option("inputs", imp_inputs, "question files or directories of them")->required();
  imp->add_option("-o,--output", imp_output, "canonical output path")->required();
  imp->add_flag("--keep-unanswerable", imp_keep_bad, "keep examples whose answer is absent");
  imp->add_flag("--no-relabel", imp_no_relabel, "keep original entity numbering");
  imp->callback([&] {
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    for (const std::string& in : imp_inputs) {
      std::string p = resolve_input(in);
      if (fs::is_directory(p)) {
        std::vector<std::string> found;
        for (const auto& e : fs::directory_iterator(p))
          if (e.is_regular_file()) found.push_back(e.path().string());
        std::sort(found.begin(), found.end());
        files.insert(files.end(), found.begin(), found.end());
      } else {
        files.push_back(p);
      }
    }
    std::vector<RawExample> data;
    for (size_t i = 0; i < files.size(); ++i) {
      RawExample ex = import_cnn_file(files[i]);
      ex.id = static_cast<int>(i);
      data.push_back(std::move(ex));
    }
    if (!imp_no_relabel)
      for (RawExample& ex : data) ex = relabel_entities(ex);
    nlohmann::json summary{{"imported", data.size()}, {"output", imp_output}};
    if (!imp_keep_bad) {
      auto [kept, report] = validate_examples(data);
      summary["kept"] = report.kept;
      summary["dropped"] = report.dropped;
      summary["dropped_ids"] = report.dropped_ids;
      data = std::move(kept);
    }
    write_canonical_file(imp_output, data);
    out << summary.dump() << "\n";
  });

  // ---- validate --------------------------------------------------------
  auto* val = app.add_subcommand("validate", "check a canonical dataset for answerability");
  std::string val_input, val_output;
  val->add_option("-i,--input", val_input, "canonical dataset")->required();
  val->add_option("-o,--output", val_output, "write the kept examples here");
  val->callback([&] {
    std::vector<RawExample> data = read_canonical_file(resolve_input(val_input));
    auto [kept, report] = validate_examples(data);
    nlohmann::json j{{"kept", report.kept},
                     {"dropped", report.dropped},
                     {"dropped_ids", report.dropped_ids}};
    out << j.dump() << "\n";
    if (!val_output.empty()) write_canonical_file(val_output, kept);
  });

  // ---- gen-synthetic ---------------------------------------------------
  auto* gen = app.add_subcommand("gen-synthetic", "generate a verification task dataset");
  SyntheticTaskSpec gen_spec;
  std::string gen_rule = "positional-easy", gen_output;
  gen->add_option("--rule", gen_rule, "positional-easy or context-trigger")
      ->check(CLI::IsMember({"positional-easy", "context-trigger"}));
  gen->add_option("--examples", gen_spec.examples, "number of examples");
  gen->add_option("--entities", gen_spec.entities, "entities per passage");
  gen->add_option("--passage-min", gen_spec.passage_min, "minimum passage length");
  gen->add_option("--passage-max", gen_spec.passage_max, "maximum passage length");
  gen->add_option("--filler-vocab", gen_spec.filler_vocab, "distinct filler tokens");
  gen->add_option("--seed", gen_spec.seed, "generation seed");
  gen->add_option("-o,--output", gen_output, "canonical output path")->required();
  gen->callback([&] {
    gen_spec.rule = parse_rule(gen_rule);
    std::vector<RawExample> data = generate_synthetic_task(gen_spec);
    for (RawExample& ex : data) ex = relabel_entities(ex);
    write_canonical_file(gen_output, data);
    out << nlohmann::json{{"generated", data.size()}, {"rule", gen_rule}, {"output", gen_output}}
               .dump()
        << "\n";
  });

  // ---- count-params ----------------------------------------------------
  auto* cnt = app.add_subcommand("count-params", "parameter totals by group");
  ScaleFlags cnt_scale;
  add_scale_flags(cnt, cnt_scale);
  cnt->callback([&] {
    ResolvedScale rs = resolve_scale(cnt_scale);
    ReaderModel model = build_model(rs.config);
    ParamCountReport rep = count_parameters(model);
    for (const auto& [name, n] : rep.by_group) out << name << " " << n << "\n";
    out << "total " << rep.total << "\n";
  });

  // ---- train -----------------------------------------------------------
  auto* trn = app.add_subcommand("train", "train a reader and keep the best-dev parameters");
  ScaleFlags trn_scale;
  TrainFlags trn_flags;
  std::string trn_train, trn_dev, trn_test, trn_embeddings, trn_ckpt, trn_vocab_out, trn_metrics;
  add_scale_flags(trn, trn_scale);
  add_train_flags(trn, trn_flags);
  trn->add_option("--train", trn_train, "canonical training set")->required();
  trn->add_option("--dev", trn_dev, "canonical dev set")->required();
  trn->add_option("--test", trn_test, "canonical test set, scored with the best parameters");
  trn->add_option("--embeddings", trn_embeddings, "pretrained word vector file");
  trn->add_option("--checkpoint", trn_ckpt, "write the best parameters here");
  trn->add_option("--save-vocab", trn_vocab_out,
                  "vocabulary output path (default: checkpoint path + .vocab)");
  trn->add_option("--metrics", trn_metrics, "metrics record file (default: stdout)");
  trn->callback([&] {
    ResolvedScale rs = resolve_scale(trn_scale);
    TrainConfig tc = resolve_train(trn_flags);
    EncodedDataset ds = load_and_encode(trn_train, trn_dev, trn_test, rs.vocab_limit,
                                        rs.config.max_entities);
    rs.config.vocab_size = ds.vocab.size();

    std::unique_ptr<EmbeddingInit> init;
    if (!trn_embeddings.empty()) {
      Rng fill_rng(mix_seed(rs.config.seed, 0xE0B0ull));
      init = std::make_unique<EmbeddingInit>(load_pretrained_embeddings(
          resolve_input(trn_embeddings), ds.vocab, rs.config.embed_dim, fill_rng));
    }
    ReaderModel model = build_model(rs.config, init.get());

    std::ofstream metrics_file;
    std::ostream* metrics_out = &out;
    if (!trn_metrics.empty()) {
      metrics_file.open(trn_metrics);
      if (!metrics_file) throw IoError("cannot open metrics file: " + trn_metrics);
      metrics_out = &metrics_file;
    }
    TrainResult res = train(model, ds.train, ds.dev, tc, [&](const MetricsRecord& r) {
      (*metrics_out) << to_json(r).dump() << "\n";
      metrics_out->flush();
    });
    restore_params(model, res.best_params);

    nlohmann::json summary{{"epochs_run", res.metrics.size()},
                           {"best_epoch", res.best_epoch},
                           {"best_dev_accuracy", res.best_dev_accuracy}};
    if (!trn_test.empty())
      summary["test_accuracy"] = evaluate_accuracy(model, ds.test).accuracy;
    if (!trn_ckpt.empty()) {
      save_checkpoint_file(trn_ckpt, model, ds.vocab.hash());
      std::string vpath = trn_vocab_out.empty() ? trn_ckpt + ".vocab" : trn_vocab_out;
      write_vocabulary_file(vpath, ds.vocab);
      summary["checkpoint"] = trn_ckpt;
      summary["vocab"] = vpath;
    }
    out << summary.dump() << "\n";
  });

  // ---- eval ------------------------------------------------------------
  auto* evl = app.add_subcommand("eval", "score a checkpoint on a dataset");
  std::string evl_ckpt, evl_vocab, evl_data;
  evl->add_option("--checkpoint", evl_ckpt, "model checkpoint")->required();
  evl->add_option("--vocab", evl_vocab, "vocabulary file written next to the checkpoint")
      ->required();
  evl->add_option("--data", evl_data, "canonical dataset")->required();
  evl->callback([&] {
    LoadedCheckpoint lc = load_checkpoint_file(resolve_input(evl_ckpt));
    Vocabulary vocab = read_vocabulary_file(resolve_input(evl_vocab));
    if (vocab.hash() != lc.vocab_hash)
      throw IoError("vocabulary does not match the checkpoint (hash mismatch)");
    std::vector<ClozeExample> data =
        encode_examples(read_dataset(evl_data), vocab, lc.model.config.max_entities);
    EvalResult res = evaluate_accuracy(lc.model, data);
    out << nlohmann::json{{"accuracy", res.accuracy}, {"examples", data.size()}}.dump() << "\n";
  });

  // ---- grid ------------------------------------------------------------
  auto* grd = app.add_subcommand("grid", "train and score all six scoring variants");
  ScaleFlags grd_scale;
  TrainFlags grd_flags;
  std::string grd_train, grd_dev, grd_test;
  bool grd_jsonl = false;
  add_scale_flags(grd, grd_scale, /*with_variant=*/false);
  add_train_flags(grd, grd_flags);
  grd->add_option("--train", grd_train, "canonical training set")->required();
  grd->add_option("--dev", grd_dev, "canonical dev set")->required();
  grd->add_option("--test", grd_test, "canonical test set");
  grd->add_flag("--jsonl", grd_jsonl, "emit one record per row instead of a table");
  grd->callback([&] {
    ResolvedScale rs = resolve_scale(grd_scale);
    TrainConfig tc = resolve_train(grd_flags);
    EncodedDataset ds = load_and_encode(grd_train, grd_dev, grd_test, rs.vocab_limit,
                                        rs.config.max_entities);
    rs.config.vocab_size = ds.vocab.size();
    auto emit = [&](const GridRow& r) {
      if (grd_jsonl) {
        out << nlohmann::json{{"name", r.name},
                              {"parameters", r.parameter_count},
                              {"dev_accuracy", r.dev_accuracy},
                              {"test_accuracy", r.test_accuracy},
                              {"best_epoch", r.best_epoch}}
                   .dump()
            << "\n";
      } else {
        out << std::left << std::setw(24) << r.name << std::right << std::setw(12)
            << r.parameter_count << std::setw(10) << std::fixed << std::setprecision(4)
            << r.dev_accuracy << std::setw(10) << r.test_accuracy << std::setw(6) << r.best_epoch
            << "\n";
      }
      out.flush();
    };
    if (!grd_jsonl)
      out << std::left << std::setw(24) << "variant" << std::right << std::setw(12) << "params"
          << std::setw(10) << "dev" << std::setw(10) << "test" << std::setw(6) << "best"
          << "\n";
    run_grid(rs.config, tc, ds.train, ds.dev, ds.test, emit);
  });

  // ---- dump-attention --------------------------------------------------
  auto* dmp = app.add_subcommand("dump-attention", "per-token attention weights for one example");
  std::string dmp_ckpt, dmp_vocab, dmp_data, dmp_output;
  int dmp_index = 0;
  dmp->add_option("--checkpoint", dmp_ckpt, "model checkpoint")->required();
  dmp->add_option("--vocab", dmp_vocab, "vocabulary file")->required();
  dmp->add_option("--data", dmp_data, "canonical dataset")->required();
  dmp->add_option("--index", dmp_index, "example index within the dataset");
  dmp->add_option("-o,--output", dmp_output, "write here instead of stdout");
  dmp->callback([&] {
    LoadedCheckpoint lc = load_checkpoint_file(resolve_input(dmp_ckpt));
    Vocabulary vocab = read_vocabulary_file(resolve_input(dmp_vocab));
    if (vocab.hash() != lc.vocab_hash)
      throw IoError("vocabulary does not match the checkpoint (hash mismatch)");
    std::vector<ClozeExample> data =
        encode_examples(read_dataset(dmp_data), vocab, lc.model.config.max_entities);
    if (dmp_index < 0 || static_cast<size_t>(dmp_index) >= data.size())
      throw ConfigError("example index " + std::to_string(dmp_index) + " outside dataset of " +
                        std::to_string(data.size()));
    if (dmp_output.empty())
      dump_attention(lc.model, vocab, data[static_cast<size_t>(dmp_index)], out);
    else
      dump_attention_file(lc.model, vocab, data[static_cast<size_t>(dmp_index)], dmp_output);
  });

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace seqattn
