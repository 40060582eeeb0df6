#pragma once
#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "errors.hpp"

namespace seqattn {

inline bool is_entity_token(const std::string& tok) {
  if (tok.size() < 8 || tok.compare(0, 7, "@entity") != 0) return false;
  for (size_t i = 7; i < tok.size(); ++i)
    if (tok[i] < '0' || tok[i] > '9') return false;
  return true;
}

// -1 when the token is not an entity symbol.
inline int entity_index(const std::string& tok) {
  if (!is_entity_token(tok)) return -1;
  long v = 0;
  for (size_t i = 7; i < tok.size(); ++i) {
    v = v * 10 + (tok[i] - '0');
    if (v > 1'000'000) throw ParseError("entity index out of range in '" + tok + "'");
  }
  return static_cast<int>(v);
}

inline std::string entity_token(int index) { return "@entity" + std::to_string(index); }

// Dense token<->id table. Ids 0..2 are reserved (padding, unknown, blank);
// entity symbols follow in index order; remaining slots go to the most
// frequent ordinary tokens, ties broken lexicographically.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBlank = 2;
  static constexpr int kReserved = 3;

  Vocabulary() {
    add("<pad>");
    add("<unk>");
    add("@blank");
  }

  int id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& tok) const { return index_.count(tok) != 0; }

  const std::string& token(int id) const {
    if (id < 0 || id >= size()) throw ContractError("token id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<size_t>(id)];
  }

  int size() const { return static_cast<int>(tokens_.size()); }

  bool is_entity(int id) const { return is_entity_token(token(id)); }

  int64_t count(const std::string& tok) const {
    auto it = counts_.find(tok);
    return it == counts_.end() ? 0 : it->second;
  }

  // FNV-1a over the id-ordered token list; pins a checkpoint to its table.
  uint64_t hash() const {
    uint64_t h = 1469598103934665603ull;
    for (const std::string& t : tokens_) {
      for (char c : t) {
        h ^= static_cast<uint8_t>(c);
        h *= 1099511628211ull;
      }
      h ^= static_cast<uint8_t>('\n');
      h *= 1099511628211ull;
    }
    return h;
  }

  std::vector<int> encode(std::span<const std::string> toks) const {
    std::vector<int> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(id(t));
    return out;
  }

  // Construction hooks used by build_vocabulary and checkpoint loading.
  int add(const std::string& tok) {
    auto it = index_.find(tok);
    if (it != index_.end()) return it->second;
    int id = size();
    index_.emplace(tok, id);
    tokens_.push_back(tok);
    return id;
  }

  void set_counts(std::unordered_map<std::string, int64_t> counts) { counts_ = std::move(counts); }

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::unordered_map<std::string, int64_t> counts_;
};

// Frequency-ranked vocabulary over whitespace-pretokenized documents. `limit`
// caps the total size; reserved ids and entity symbols are always kept (a
// corpus with more entities than `limit` allows still keeps them all).
inline Vocabulary build_vocabulary(std::span<const std::vector<std::string>> docs, size_t limit) {
  std::unordered_map<std::string, int64_t> counts;
  std::vector<int> entity_ids;
  for (const auto& doc : docs)
    for (const std::string& tok : doc) {
      ++counts[tok];
      int e = entity_index(tok);
      if (e >= 0) entity_ids.push_back(e);
    }
  std::sort(entity_ids.begin(), entity_ids.end());
  entity_ids.erase(std::unique(entity_ids.begin(), entity_ids.end()), entity_ids.end());

  Vocabulary vocab;
  for (int e : entity_ids) vocab.add(entity_token(e));

  std::vector<std::pair<std::string, int64_t>> ranked;
  ranked.reserve(counts.size());
  for (const auto& [tok, n] : counts)
    if (!is_entity_token(tok) && tok != "@blank" && tok != "<pad>" && tok != "<unk>")
      ranked.emplace_back(tok, n);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [tok, n] : ranked) {
    if (static_cast<size_t>(vocab.size()) >= limit) break;
    vocab.add(tok);
  }
  vocab.set_counts(std::move(counts));
  return vocab;
}

// One token per line in id order; counts are not persisted (encoding does not
// need them).
inline void write_vocabulary(std::ostream& out, const Vocabulary& vocab) {
  for (const std::string& t : vocab.tokens()) out << t << "\n";
}

inline Vocabulary read_vocabulary(std::istream& in) {
  Vocabulary vocab;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw ParseError("empty vocabulary line", lineno);
    if (lineno <= Vocabulary::kReserved) {
      if (line != vocab.token(lineno - 1))
        throw ParseError("vocabulary row " + std::to_string(lineno - 1) + " must be '" +
                             vocab.token(lineno - 1) + "', got '" + line + "'",
                         lineno);
      continue;
    }
    if (vocab.contains(line)) throw ParseError("duplicate vocabulary token '" + line + "'", lineno);
    vocab.add(line);
  }
  if (lineno < Vocabulary::kReserved) throw ParseError("vocabulary is missing reserved rows", lineno);
  return vocab;
}

inline void write_vocabulary_file(const std::string& path, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open vocabulary for writing: " + path);
  write_vocabulary(out, vocab);
  if (!out) throw IoError("vocabulary write failed: " + path);
}

inline Vocabulary read_vocabulary_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary: " + path);
  try {
    return read_vocabulary(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace seqattn
