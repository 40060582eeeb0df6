#pragma once
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "rng.hpp"
#include "vocab.hpp"

namespace seqattn {

// String-level example as ingested; entity symbols still in surface form.
struct RawExample {
  int id = 0;
  std::vector<std::string> passage;
  std::vector<std::string> question;
  std::string answer;
  std::map<std::string, std::string> entity_map;  // "@entityN" -> original string
};

// Id-level example ready for the model. `answer` and `candidates` are entity
// indices (the N of @entityN), not vocabulary ids.
struct ClozeExample {
  int id = 0;
  std::vector<int> passage;
  std::vector<int> question;
  int answer = -1;
  std::vector<int> candidates;
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

inline std::string join_ws(const std::vector<std::string>& toks) {
  std::string out;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

}  // namespace detail

// CNN questions layout: URL, blank, passage, blank, question, blank, answer,
// blank, then "@entityN:original" mapping lines. One example per stream.
inline RawExample import_cnn_format(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  size_t pos = 0;
  auto expect_blank = [&](const char* after) {
    if (pos >= lines.size() || !lines[pos].empty())
      throw ParseError("expected blank line after " + std::string(after), pos + 1);
    ++pos;
  };
  auto take = [&](const char* what) -> std::string {
    if (pos >= lines.size() || lines[pos].empty())
      throw ParseError("missing " + std::string(what) + " section", pos + 1);
    return lines[pos++];
  };

  take("url");
  expect_blank("url");
  RawExample ex;
  ex.passage = detail::split_ws(take("passage"));
  expect_blank("passage");
  ex.question = detail::split_ws(take("question"));
  expect_blank("question");
  ex.answer = take("answer");
  if (ex.answer.find(' ') != std::string::npos)
    throw ParseError("answer must be a single token", pos);
  expect_blank("answer");
  while (pos < lines.size() && !lines[pos].empty()) {
    const std::string& m = lines[pos];
    size_t colon = m.find(':');
    if (colon == std::string::npos)
      throw ParseError("entity mapping line lacks ':'", pos + 1);
    std::string sym = m.substr(0, colon);
    if (!is_entity_token(sym))
      throw ParseError("entity mapping key '" + sym + "' is not an entity symbol", pos + 1);
    if (ex.entity_map.count(sym))
      throw ParseError("duplicate entity id '" + sym + "' in mapping", pos + 1);
    ex.entity_map[sym] = m.substr(colon + 1);
    ++pos;
  }
  for (; pos < lines.size(); ++pos)
    if (!lines[pos].empty())
      throw ParseError("unexpected content after entity mapping", pos + 1);
  return ex;
}

inline RawExample import_cnn_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return import_cnn_format(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// Renumber entity symbols by first occurrence, scanning passage then
// question. Produces a canonical form: any permutation of the input labels
// relabels to the same output.
inline RawExample relabel_entities(const RawExample& ex) {
  std::unordered_map<std::string, int> order;
  auto visit = [&](const std::vector<std::string>& toks) {
    for (const std::string& t : toks)
      if (is_entity_token(t) && !order.count(t)) {
        int next = static_cast<int>(order.size());
        order.emplace(t, next);
      }
  };
  visit(ex.passage);
  visit(ex.question);
  if (!order.count(ex.answer))
    throw InvalidExampleError("answer entity '" + ex.answer +
                              "' does not occur in passage or question");
  auto rename = [&](const std::string& t) {
    auto it = order.find(t);
    return it == order.end() ? t : entity_token(it->second);
  };
  RawExample out;
  out.id = ex.id;
  for (const std::string& t : ex.passage) out.passage.push_back(rename(t));
  for (const std::string& t : ex.question) out.question.push_back(rename(t));
  out.answer = rename(ex.answer);
  for (const auto& [sym, orig] : ex.entity_map) out.entity_map[rename(sym)] = orig;
  return out;
}

struct ValidationReport {
  size_t kept = 0;
  size_t dropped = 0;
  std::vector<int> dropped_ids;
};

// Answerability filter: an example is kept only if its answer entity
// occurs in the passage.
inline std::pair<std::vector<RawExample>, ValidationReport> validate_examples(
    const std::vector<RawExample>& dataset) {
  std::vector<RawExample> kept;
  ValidationReport report;
  for (const RawExample& ex : dataset) {
    bool found = false;
    for (const std::string& t : ex.passage)
      if (t == ex.answer) {
        found = true;
        break;
      }
    if (found) {
      kept.push_back(ex);
      ++report.kept;
    } else {
      ++report.dropped;
      report.dropped_ids.push_back(ex.id);
    }
  }
  return {std::move(kept), report};
}

// ---- canonical dataset format: one JSON object per line -------------------

inline void write_canonical(std::ostream& out, const std::vector<RawExample>& dataset) {
  for (const RawExample& ex : dataset) {
    nlohmann::json j;
    j["id"] = ex.id;
    j["passage"] = detail::join_ws(ex.passage);
    j["question"] = detail::join_ws(ex.question);
    j["answer"] = ex.answer;
    out << j.dump() << '\n';
  }
}

inline std::vector<RawExample> read_canonical(std::istream& in) {
  std::vector<RawExample> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError("invalid record", lineno);
    if (!j.contains("passage") || !j.contains("question") || !j.contains("answer"))
      throw ParseError("record missing passage/question/answer field", lineno);
    RawExample ex;
    ex.id = j.value("id", static_cast<int>(lineno));
    if (!j["passage"].is_string() || !j["question"].is_string() || !j["answer"].is_string())
      throw ParseError("passage/question/answer must be strings", lineno);
    ex.passage = detail::split_ws(j["passage"].get<std::string>());
    ex.question = detail::split_ws(j["question"].get<std::string>());
    ex.answer = j["answer"].get<std::string>();
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<RawExample> read_canonical_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return read_canonical(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void write_canonical_file(const std::string& path, const std::vector<RawExample>& data) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_canonical(out, data);
}

// Map a relabeled string example onto vocabulary ids and entity indices.
inline ClozeExample encode_example(const RawExample& ex, const Vocabulary& vocab,
                                   int max_entities) {
  ClozeExample out;
  out.id = ex.id;
  out.passage = vocab.encode(ex.passage);
  out.question = vocab.encode(ex.question);

  int blanks = 0;
  for (const std::string& t : ex.question)
    if (t == "@blank") ++blanks;
  if (blanks != 1)
    throw InvalidExampleError("question of example " + std::to_string(ex.id) + " has " +
                              std::to_string(blanks) + " blank tokens, want exactly 1");

  std::unordered_set<int> cand;
  for (const std::string& t : ex.passage) {
    int e = entity_index(t);
    if (e < 0) continue;
    if (e >= max_entities)
      throw InvalidExampleError("entity index " + std::to_string(e) + " in example " +
                                std::to_string(ex.id) + " exceeds the model's entity capacity " +
                                std::to_string(max_entities));
    cand.insert(e);
  }
  if (cand.empty())
    throw InvalidExampleError("example " + std::to_string(ex.id) + " has no candidate entities");
  out.candidates.assign(cand.begin(), cand.end());
  std::sort(out.candidates.begin(), out.candidates.end());

  out.answer = entity_index(ex.answer);
  if (out.answer < 0)
    throw InvalidExampleError("answer '" + ex.answer + "' of example " + std::to_string(ex.id) +
                              " is not an entity symbol");
  if (!cand.count(out.answer))
    throw InvalidExampleError("answer entity of example " + std::to_string(ex.id) +
                              " is not among the passage candidates");
  return out;
}

inline std::vector<ClozeExample> encode_examples(const std::vector<RawExample>& data,
                                                 const Vocabulary& vocab, int max_entities) {
  std::vector<ClozeExample> out;
  out.reserve(data.size());
  for (const RawExample& ex : data) out.push_back(encode_example(ex, vocab, max_entities));
  return out;
}

// Padded minibatch with boolean masks; padding uses the reserved pad id.
struct Batch {
  std::vector<int> example_indices;
  std::vector<std::vector<int>> passage, question;
  std::vector<std::vector<uint8_t>> passage_mask, question_mask;
  std::vector<int> answer;
  std::vector<std::vector<int>> candidates;

  size_t size() const { return example_indices.size(); }
};

inline std::vector<Batch> make_batches(const std::vector<ClozeExample>& data, int batch_size,
                                       uint64_t seed, int epoch) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, static_cast<uint64_t>(epoch)));
  rng.shuffle(order);

  std::vector<Batch> out;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    Batch b;
    size_t pmax = 0, qmax = 0;
    for (size_t i = start; i < end; ++i) {
      pmax = std::max(pmax, data[order[i]].passage.size());
      qmax = std::max(qmax, data[order[i]].question.size());
    }
    for (size_t i = start; i < end; ++i) {
      const ClozeExample& ex = data[order[i]];
      b.example_indices.push_back(static_cast<int>(order[i]));
      std::vector<int> p(pmax, Vocabulary::kPad), q(qmax, Vocabulary::kPad);
      std::vector<uint8_t> pm(pmax, 0), qm(qmax, 0);
      for (size_t k = 0; k < ex.passage.size(); ++k) {
        p[k] = ex.passage[k];
        pm[k] = 1;
      }
      for (size_t k = 0; k < ex.question.size(); ++k) {
        q[k] = ex.question[k];
        qm[k] = 1;
      }
      b.passage.push_back(std::move(p));
      b.question.push_back(std::move(q));
      b.passage_mask.push_back(std::move(pm));
      b.question_mask.push_back(std::move(qm));
      b.answer.push_back(ex.answer);
      b.candidates.push_back(ex.candidates);
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace seqattn
