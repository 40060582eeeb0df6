#pragma once
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "tensor.hpp"
#include "vocab.hpp"

namespace seqattn {

struct EmbeddingInit {
  std::vector<Scalar> matrix;  // vocab.size() x dim, row-major
  int dim = 0;
  int covered = 0;  // vocabulary rows taken from the file
  int vocab_size = 0;
};

// Pretrained-vector file: "token v1 v2 ... vdim" per line. In-vocabulary rows
// come from the file; everything else (entity symbols included, which never
// exist in pretrained sets for anonymized data) falls back to U(-0.01,0.01),
// so no row is ever left uninitialized.
inline EmbeddingInit load_pretrained_embeddings(std::istream& in, const Vocabulary& vocab, int dim,
                                                Rng& rng) {
  if (dim <= 0) throw ConfigError("embedding dimension must be positive");
  EmbeddingInit init;
  init.dim = dim;
  init.vocab_size = vocab.size();
  init.matrix.resize(static_cast<size_t>(vocab.size()) * static_cast<size_t>(dim));
  for (Scalar& v : init.matrix) v = static_cast<Scalar>(rng.uniform(-0.01, 0.01));

  std::string line;
  size_t lineno = 0;
  std::vector<bool> seen(static_cast<size_t>(vocab.size()), false);
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    std::vector<Scalar> row;
    double v;
    while (ss >> v) row.push_back(static_cast<Scalar>(v));
    if (static_cast<int>(row.size()) != dim)
      throw ParseError("embedding row for '" + tok + "' has " + std::to_string(row.size()) +
                           " values, want " + std::to_string(dim),
                       lineno);
    if (!vocab.contains(tok) || is_entity_token(tok)) continue;
    int id = vocab.id(tok);
    if (seen[static_cast<size_t>(id)]) continue;
    seen[static_cast<size_t>(id)] = true;
    ++init.covered;
    std::copy(row.begin(), row.end(),
              init.matrix.begin() + static_cast<size_t>(id) * static_cast<size_t>(dim));
  }
  return init;
}

inline EmbeddingInit load_pretrained_embeddings(const std::string& path, const Vocabulary& vocab,
                                                int dim, Rng& rng) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return load_pretrained_embeddings(in, vocab, dim, rng);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace seqattn
