#pragma once
#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "data.hpp"
#include "rng.hpp"

namespace seqattn {

// positional-easy: a unique marker token sits immediately before the answer
// entity, and the question repeats the marker next to the blank. Pointwise
// attention on the marker suffices.
// context-trigger: the answer follows an adjacent two-token trigger "xta xtb";
// decoy blocks pair each trigger token alone with a wrong entity, and the
// question shows the trigger tokens separated. Disambiguation needs
// neighboring-token context, not single-token matching.
enum class SyntheticRule { PositionalEasy, ContextTrigger };

inline const char* rule_name(SyntheticRule r) {
  return r == SyntheticRule::PositionalEasy ? "positional-easy" : "context-trigger";
}

inline SyntheticRule parse_rule(const std::string& s) {
  if (s == "positional-easy") return SyntheticRule::PositionalEasy;
  if (s == "context-trigger") return SyntheticRule::ContextTrigger;
  throw ConfigError("unknown synthetic rule '" + s +
                    "' (expected positional-easy or context-trigger)");
}

struct SyntheticTaskSpec {
  SyntheticRule rule = SyntheticRule::PositionalEasy;
  int entities = 3;
  int passage_min = 8;
  int passage_max = 16;
  int filler_vocab = 16;
  int examples = 100;
  uint64_t seed = 0;
};

namespace detail {

inline std::string filler_token(int i) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "w%03d", i);
  return buf;
}

// k distinct surface labels drawn from a pool larger than k, so relabeling
// has real work to do.
inline std::vector<std::string> random_entity_labels(Rng& rng, int k) {
  int pool = std::max(10, 2 * k);
  std::vector<int> ids(static_cast<size_t>(pool));
  std::iota(ids.begin(), ids.end(), 0);
  rng.shuffle(ids);
  std::vector<std::string> out;
  for (int i = 0; i < k; ++i) out.push_back(entity_token(ids[static_cast<size_t>(i)]));
  return out;
}

inline std::string random_filler(Rng& rng, int filler_vocab) {
  return filler_token(static_cast<int>(rng.below(static_cast<size_t>(filler_vocab))));
}

// Shuffle blocks, then flatten with at least min_gap fillers between
// consecutive blocks and `extra` more fillers sprinkled into the gaps.
inline std::vector<std::string> assemble(Rng& rng, std::vector<std::vector<std::string>> blocks,
                                         int min_gap, int extra, int filler_vocab) {
  rng.shuffle(blocks);
  size_t gaps = blocks.size() + 1;
  std::vector<int> gap_fill(gaps, 0);
  for (size_t g = 1; g + 1 < gaps; ++g) gap_fill[g] = min_gap;
  for (int i = 0; i < extra; ++i) ++gap_fill[rng.below(gaps)];
  std::vector<std::string> out;
  for (size_t b = 0; b <= blocks.size(); ++b) {
    for (int i = 0; i < gap_fill[b]; ++i) out.push_back(random_filler(rng, filler_vocab));
    if (b < blocks.size()) out.insert(out.end(), blocks[b].begin(), blocks[b].end());
  }
  return out;
}

inline void check_spec(const SyntheticTaskSpec& spec, int min_needed) {
  if (spec.examples < 1) throw ConfigError("synthetic task needs at least one example");
  if (spec.filler_vocab < 1) throw ConfigError("synthetic task needs at least one filler token");
  if (spec.passage_min > spec.passage_max)
    throw ConfigError("passage length range is inverted: " + std::to_string(spec.passage_min) +
                      ".." + std::to_string(spec.passage_max));
  if (spec.passage_max < min_needed)
    throw ConfigError("passage_max " + std::to_string(spec.passage_max) +
                      " cannot hold the required " + std::to_string(min_needed) + " tokens");
}

}  // namespace detail

inline std::vector<RawExample> generate_synthetic_task(const SyntheticTaskSpec& spec) {
  bool positional = spec.rule == SyntheticRule::PositionalEasy;
  if (positional && spec.entities < 2)
    throw ConfigError("positional-easy needs at least 2 entities for a non-trivial task");
  if (!positional && spec.entities < 3)
    throw ConfigError("context-trigger needs at least 3 entities (answer plus two decoys)");

  int k = spec.entities;
  // positional: k singleton entity blocks, answer block is [marker, entity]
  // trigger: [xta xtb e], [xta e], [xtb e], singles, 1-filler gaps between blocks
  int n_blocks = positional ? k : k;
  int block_tokens = positional ? (k + 1) : (7 + (k - 3));
  int min_needed = positional ? block_tokens : block_tokens + (n_blocks - 1);
  detail::check_spec(spec, min_needed);
  int lo = std::max(spec.passage_min, min_needed);

  std::vector<RawExample> out;
  out.reserve(static_cast<size_t>(spec.examples));
  for (int idx = 0; idx < spec.examples; ++idx) {
    Rng rng(mix_seed(mix_seed(spec.seed, static_cast<uint64_t>(idx)),
                     static_cast<uint64_t>(spec.rule)));
    std::vector<std::string> labels = detail::random_entity_labels(rng, k);
    int ans = static_cast<int>(rng.below(static_cast<size_t>(k)));
    int len = lo + static_cast<int>(rng.below(static_cast<size_t>(spec.passage_max - lo + 1)));

    RawExample ex;
    ex.id = idx;
    std::vector<std::vector<std::string>> blocks;
    if (positional) {
      for (int e = 0; e < k; ++e) {
        if (e == ans)
          blocks.push_back({"xmark", labels[static_cast<size_t>(e)]});
        else
          blocks.push_back({labels[static_cast<size_t>(e)]});
      }
      ex.passage = detail::assemble(rng, std::move(blocks), 0, len - block_tokens,
                                    spec.filler_vocab);
      for (size_t i = rng.below(3); i-- > 0;)
        ex.question.push_back(detail::random_filler(rng, spec.filler_vocab));
      ex.question.push_back("xmark");
      ex.question.push_back("@blank");
      for (size_t i = rng.below(2); i-- > 0;)
        ex.question.push_back(detail::random_filler(rng, spec.filler_vocab));
    } else {
      int decoy_b = (ans + 1) % k;
      int decoy_c = (ans + 2) % k;
      blocks.push_back({"xta", "xtb", labels[static_cast<size_t>(ans)]});
      blocks.push_back({"xta", labels[static_cast<size_t>(decoy_b)]});
      blocks.push_back({"xtb", labels[static_cast<size_t>(decoy_c)]});
      for (int e = 0; e < k; ++e)
        if (e != ans && e != decoy_b && e != decoy_c)
          blocks.push_back({labels[static_cast<size_t>(e)]});
      ex.passage = detail::assemble(rng, std::move(blocks), 1, len - min_needed,
                                    spec.filler_vocab);
      for (size_t i = rng.below(2); i-- > 0;)
        ex.question.push_back(detail::random_filler(rng, spec.filler_vocab));
      ex.question.push_back("xta");
      for (size_t i = 1 + rng.below(2); i-- > 0;)
        ex.question.push_back(detail::random_filler(rng, spec.filler_vocab));
      ex.question.push_back("xtb");
      ex.question.push_back("@blank");
      for (size_t i = rng.below(2); i-- > 0;)
        ex.question.push_back(detail::random_filler(rng, spec.filler_vocab));
    }
    ex.answer = labels[static_cast<size_t>(ans)];
    out.push_back(std::move(ex));
  }
  return out;
}

// Rule-based solver reading the answer straight off the surface pattern;
// independent of the generator's bookkeeping.
inline std::string synthetic_oracle(const RawExample& ex, SyntheticRule rule) {
  const auto& p = ex.passage;
  if (rule == SyntheticRule::PositionalEasy) {
    for (size_t i = 0; i + 1 < p.size(); ++i)
      if (p[i] == "xmark") return p[i + 1];
    return "";
  }
  for (size_t i = 0; i + 2 < p.size(); ++i)
    if (p[i] == "xta" && p[i + 1] == "xtb") return p[i + 2];
  return "";
}

}  // namespace seqattn
