#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>
#include <nlohmann/json.hpp>
#include <seqattn/cli.hpp>

using namespace seqattn;
using Catch::Matchers::ContainsSubstring;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("seqattn-cli-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  std::stringstream out, err;
  int code = run_cli(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

// One question-format file: passage, question, answer, entity mapping.
const char* kQuestionFile =
    "http://example.test/doc\n"
    "\n"
    "@entity7 spoke with @entity2 in rome before @entity7 left\n"
    "\n"
    "@blank met @entity2\n"
    "\n"
    "@entity7\n"
    "\n"
    "@entity2:ambassador\n"
    "@entity7:minister\n";

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

}  // namespace

TEST_CASE("help exits zero, unknown subcommands and flags exit nonzero") {
  REQUIRE(cli({"--help"}).code == 0);
  CliRun unknown = cli({"transmogrify"});
  REQUIRE(unknown.code != 0);
  CliRun badflag = cli({"count-params", "--frobnicate", "3"});
  REQUIRE(badflag.code != 0);
  CliRun none = cli({});
  REQUIRE(none.code != 0);
}

TEST_CASE("count-params prints the per-group breakdown and total") {
  CliRun r = cli({"count-params", "--variant", "sa-elementwise", "--preset", "reference"});
  REQUIRE(r.code == 0);
  REQUIRE_THAT(r.out, ContainsSubstring("embeddings 5000000"));
  REQUIRE_THAT(r.out, ContainsSubstring("attention 295680"));
  REQUIRE_THAT(r.out, ContainsSubstring("total 5731904"));

  CliRun dot = cli({"count-params", "--variant", "dot", "--preset", "reference"});
  REQUIRE_THAT(dot.out, ContainsSubstring("attention 0"));
  REQUIRE_THAT(dot.out, ContainsSubstring("total 5436224"));

  // Flags override the preset.
  CliRun small = cli({"count-params", "--variant", "dot", "--preset", "desk", "--vocab-limit",
                      "100", "--embed-dim", "4", "--hidden", "3", "--entities", "3"});
  REQUIRE(small.code == 0);
  REQUIRE_THAT(small.out, ContainsSubstring("embeddings 400"));
}

TEST_CASE("gen-synthetic writes a deterministic canonical dataset") {
  TempDir tmp;
  auto args = [&](const std::string& name) {
    return std::vector<std::string>{"gen-synthetic", "--rule",    "positional-easy",
                                    "--examples",    "12",        "--seed",
                                    "5",             "--output",  tmp.file(name)};
  };
  REQUIRE(cli(args("a.jsonl")).code == 0);
  REQUIRE(cli(args("b.jsonl")).code == 0);
  std::ifstream a(tmp.file("a.jsonl")), b(tmp.file("b.jsonl"));
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  REQUIRE(sa.str() == sb.str());
  REQUIRE(read_canonical_file(tmp.file("a.jsonl")).size() == 12);
}

TEST_CASE("import converts question files and rejects malformed ones with a line number") {
  TempDir tmp;
  {
    std::ofstream q(tmp.file("good.question"));
    q << kQuestionFile;
  }
  CliRun ok = cli({"import", tmp.file("good.question"), "--output", tmp.file("out.jsonl")});
  REQUIRE(ok.code == 0);
  std::vector<RawExample> data = read_canonical_file(tmp.file("out.jsonl"));
  REQUIRE(data.size() == 1);
  // Relabeled in order of first appearance: @entity7 -> @entity0.
  REQUIRE(data[0].passage[0] == "@entity0");
  REQUIRE(data[0].answer == "@entity0");

  {
    std::ofstream q(tmp.file("bad.question"));
    q << "http://example.test/doc\n\npassage only and then nothing\n";
  }
  CliRun bad = cli({"import", tmp.file("bad.question"), "--output", tmp.file("bad.jsonl")});
  REQUIRE(bad.code != 0);
  REQUIRE_THAT(bad.err, ContainsSubstring("line"));
}

TEST_CASE("validate reports drops on a dataset with unanswerable examples") {
  TempDir tmp;
  REQUIRE(cli({"gen-synthetic", "--rule", "positional-easy", "--examples", "6", "--seed", "9",
               "--output", tmp.file("ok.jsonl")})
              .code == 0);
  std::vector<RawExample> data = read_canonical_file(tmp.file("ok.jsonl"));
  data[2].answer = "@entity999";  // no longer present in its passage
  data[4].answer = "@entity998";
  write_canonical_file(tmp.file("mixed.jsonl"), data);

  CliRun r = cli({"validate", "--input", tmp.file("mixed.jsonl"), "--output",
                  tmp.file("clean.jsonl")});
  REQUIRE(r.code == 0);
  nlohmann::json j = nlohmann::json::parse(first_line(r.out));
  REQUIRE(j.at("kept").get<int>() == 4);
  REQUIRE(j.at("dropped").get<int>() == 2);
  REQUIRE(read_canonical_file(tmp.file("clean.jsonl")).size() == 4);
}

TEST_CASE("train, eval, and dump-attention round-trip through files") {
  TempDir tmp;
  for (auto [name, count] : {std::pair{"train.jsonl", 60}, {"dev.jsonl", 20}}) {
    REQUIRE(cli({"gen-synthetic", "--rule", "positional-easy", "--examples",
                 std::to_string(count), "--seed", name[0] == 't' ? "1" : "2", "--output",
                 tmp.file(name)})
                .code == 0);
  }
  CliRun tr = cli({"train",        "--train",      tmp.file("train.jsonl"),
                   "--dev",        tmp.file("dev.jsonl"),
                   "--embed-dim",  "8",            "--hidden",
                   "8",            "--attn-hidden", "8",
                   "--entities",   "3",            "--variant",
                   "bilinear",     "--epochs",     "2",
                   "--batch",      "16",           "--seed",
                   "3",            "--checkpoint", tmp.file("model.ckpt"),
                   "--metrics",    tmp.file("metrics.jsonl")});
  INFO(tr.err);
  REQUIRE(tr.code == 0);

  std::ifstream metrics(tmp.file("metrics.jsonl"));
  std::string line;
  int epochs = 0;
  while (std::getline(metrics, line)) {
    nlohmann::json j = nlohmann::json::parse(line);
    REQUIRE(j.at("epoch").get<int>() == epochs);
    REQUIRE(j.contains("train_loss"));
    REQUIRE(j.contains("grad_norm_max"));
    ++epochs;
  }
  REQUIRE(epochs == 2);
  nlohmann::json summary = nlohmann::json::parse(first_line(tr.out));
  REQUIRE(summary.at("epochs_run").get<int>() == 2);
  REQUIRE(fs::exists(tmp.file("model.ckpt")));
  REQUIRE(fs::exists(tmp.file("model.ckpt") + ".vocab"));

  CliRun ev = cli({"eval", "--checkpoint", tmp.file("model.ckpt"), "--vocab",
                   tmp.file("model.ckpt") + ".vocab", "--data", tmp.file("dev.jsonl")});
  INFO(ev.err);
  REQUIRE(ev.code == 0);
  nlohmann::json ej = nlohmann::json::parse(first_line(ev.out));
  REQUIRE(ej.at("examples").get<int>() == 20);
  REQUIRE(ej.at("accuracy").get<double>() >= 0.0);
  REQUIRE(ej.at("accuracy").get<double>() <= 1.0);

  CliRun dm = cli({"dump-attention", "--checkpoint", tmp.file("model.ckpt"), "--vocab",
                   tmp.file("model.ckpt") + ".vocab", "--data", tmp.file("dev.jsonl"),
                   "--index", "4"});
  INFO(dm.err);
  REQUIRE(dm.code == 0);
  nlohmann::json dj = nlohmann::json::parse(dm.out);
  REQUIRE(dj.at("tokens").size() == dj.at("alpha").size());
  double s = 0;
  for (double a : dj.at("alpha").get<std::vector<double>>()) s += a;
  REQUIRE(s > 1.0 - 1e-9);
  REQUIRE(s < 1.0 + 1e-9);
}

TEST_CASE("train with zero epochs still writes an initialization checkpoint") {
  TempDir tmp;
  REQUIRE(cli({"gen-synthetic", "--rule", "positional-easy", "--examples", "10", "--seed", "4",
               "--output", tmp.file("d.jsonl")})
              .code == 0);
  CliRun tr = cli({"train", "--train", tmp.file("d.jsonl"), "--dev", tmp.file("d.jsonl"),
                   "--embed-dim", "6", "--hidden", "4", "--entities", "3", "--epochs", "0",
                   "--checkpoint", tmp.file("init.ckpt"), "--model-seed", "77"});
  INFO(tr.err);
  REQUIRE(tr.code == 0);
  LoadedCheckpoint lc = load_checkpoint_file(tmp.file("init.ckpt"));
  REQUIRE(lc.model.config.seed == 77);

  // Same config, same seed: the checkpoint must hold the untouched init draw.
  ReaderModel fresh = build_model(lc.model.config);
  auto pa = fresh.params();
  auto pb = lc.model.params();
  for (size_t i = 0; i < pa.size(); ++i) REQUIRE(pa[i]->value == pb[i]->value);
}

TEST_CASE("eval rejects a vocabulary that does not match the checkpoint") {
  TempDir tmp;
  REQUIRE(cli({"gen-synthetic", "--rule", "positional-easy", "--examples", "10", "--seed", "6",
               "--output", tmp.file("d.jsonl")})
              .code == 0);
  REQUIRE(cli({"train", "--train", tmp.file("d.jsonl"), "--dev", tmp.file("d.jsonl"),
               "--embed-dim", "6", "--hidden", "4", "--entities", "3", "--epochs", "0",
               "--checkpoint", tmp.file("m.ckpt")})
              .code == 0);
  {
    std::ofstream v(tmp.file("wrong.vocab"));
    v << "<pad>\n<unk>\n@blank\nsomething\nelse\n";
  }
  CliRun ev = cli({"eval", "--checkpoint", tmp.file("m.ckpt"), "--vocab",
                   tmp.file("wrong.vocab"), "--data", tmp.file("d.jsonl")});
  REQUIRE(ev.code != 0);
  REQUIRE_THAT(ev.err, ContainsSubstring("hash mismatch"));
}

TEST_CASE("relative data paths resolve through the data directory variable") {
  TempDir tmp;
  REQUIRE(cli({"gen-synthetic", "--rule", "positional-easy", "--examples", "5", "--seed", "8",
               "--output", tmp.file("inside.jsonl")})
              .code == 0);
  ::setenv("SEQATTN_DATA_DIR", tmp.path.string().c_str(), 1);
  CliRun r = cli({"validate", "--input", "inside.jsonl"});
  ::unsetenv("SEQATTN_DATA_DIR");
  REQUIRE(r.code == 0);
  nlohmann::json j = nlohmann::json::parse(first_line(r.out));
  REQUIRE(j.at("kept").get<int>() == 5);
}

TEST_CASE("grid emits six rows with increasing parameter counts") {
  TempDir tmp;
  for (auto [name, seed] : {std::pair{"t.jsonl", "11"}, {"d.jsonl", "12"}}) {
    REQUIRE(cli({"gen-synthetic", "--rule", "positional-easy", "--examples", "24", "--seed",
                 seed, "--output", tmp.file(name)})
                .code == 0);
  }
  CliRun r = cli({"grid", "--train", tmp.file("t.jsonl"), "--dev", tmp.file("d.jsonl"),
                  "--embed-dim", "6", "--hidden", "4", "--attn-hidden", "4", "--entities", "3",
                  "--epochs", "1", "--batch", "12", "--jsonl"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  std::istringstream lines(r.out);
  std::string line;
  long long prev = -1;
  int rows = 0;
  while (std::getline(lines, line)) {
    nlohmann::json j = nlohmann::json::parse(line);
    long long params = j.at("parameters").get<long long>();
    REQUIRE(params > prev);
    prev = params;
    ++rows;
  }
  REQUIRE(rows == 6);
}
