#pragma once
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reader.hpp"

namespace seqattn {

// Self-describing model container: magic, format version, config record,
// vocabulary hash, then named tensors with shapes and raw 64-bit values.
// Round-trips bit-exactly.
inline constexpr char kCheckpointMagic[4] = {'S', 'Q', 'C', 'K'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_bytes(std::ostream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
inline void put_u32(std::ostream& out, uint32_t v) { put_bytes(out, &v, sizeof v); }
inline void put_u64(std::ostream& out, uint64_t v) { put_bytes(out, &v, sizeof v); }

inline void get_bytes(std::istream& in, void* p, size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in.gcount()) != n) throw IoError("truncated checkpoint");
}
inline uint32_t get_u32(std::istream& in) {
  uint32_t v;
  get_bytes(in, &v, sizeof v);
  return v;
}
inline uint64_t get_u64(std::istream& in) {
  uint64_t v;
  get_bytes(in, &v, sizeof v);
  return v;
}

}  // namespace detail

inline nlohmann::json config_to_json(const ReaderConfig& c) {
  return nlohmann::json{{"variant", variant_name(c.variant)},
                        {"encoder_layers", c.encoder_layers},
                        {"vocab_size", c.vocab_size},
                        {"embed_dim", c.embed_dim},
                        {"hidden_size", c.hidden_size},
                        {"attn_hidden_size", c.attn_hidden_size},
                        {"max_entities", c.max_entities},
                        {"dropout_rate", c.dropout_rate},
                        {"seed", c.seed},
                        {"train_embeddings", c.train_embeddings}};
}

inline ReaderConfig config_from_json(const nlohmann::json& j) {
  ReaderConfig c;
  try {
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.encoder_layers = j.at("encoder_layers").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.hidden_size = j.at("hidden_size").get<int>();
    c.attn_hidden_size = j.at("attn_hidden_size").get<int>();
    c.max_entities = j.at("max_entities").get<int>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    c.train_embeddings = j.at("train_embeddings").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad checkpoint config record: ") + e.what());
  }
  return c;
}

inline void save_checkpoint(std::ostream& out, ReaderModel& model, uint64_t vocab_hash) {
  detail::put_bytes(out, kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  std::string cfg = config_to_json(model.config).dump();
  detail::put_u64(out, cfg.size());
  detail::put_bytes(out, cfg.data(), cfg.size());
  detail::put_u64(out, vocab_hash);
  std::vector<Param*> ps = model.params();
  detail::put_u32(out, static_cast<uint32_t>(ps.size()));
  for (const Param* p : ps) {
    detail::put_u32(out, static_cast<uint32_t>(p->name.size()));
    detail::put_bytes(out, p->name.data(), p->name.size());
    detail::put_u32(out, static_cast<uint32_t>(p->shape.size()));
    for (int d : p->shape) detail::put_u32(out, static_cast<uint32_t>(d));
    static_assert(sizeof(Scalar) == 8 || sizeof(Scalar) == 4);
    detail::put_bytes(out, p->value.data(), p->value.size() * sizeof(Scalar));
  }
  if (!out) throw IoError("checkpoint write failed");
}

struct LoadedCheckpoint {
  ReaderModel model;
  uint64_t vocab_hash = 0;
};

inline LoadedCheckpoint load_checkpoint(std::istream& in) {
  char magic[4];
  detail::get_bytes(in, magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("not a model checkpoint (bad magic)");
  uint32_t version = detail::get_u32(in);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  uint64_t cfg_len = detail::get_u64(in);
  std::string cfg(cfg_len, '\0');
  detail::get_bytes(in, cfg.data(), cfg_len);
  nlohmann::json j = nlohmann::json::parse(cfg, nullptr, false);
  if (j.is_discarded()) throw IoError("bad checkpoint config record: not parseable");

  LoadedCheckpoint out;
  out.model = build_model(config_from_json(j));
  out.vocab_hash = detail::get_u64(in);

  std::vector<Param*> ps = out.model.params();
  uint32_t count = detail::get_u32(in);
  if (count != ps.size())
    throw IoError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                  std::to_string(ps.size()));
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = detail::get_u32(in);
    std::string name(name_len, '\0');
    detail::get_bytes(in, name.data(), name_len);
    Param* target = nullptr;
    for (Param* p : ps)
      if (p->name == name) {
        target = p;
        break;
      }
    if (target == nullptr) throw IoError("checkpoint tensor '" + name + "' not in model");
    uint32_t rank = detail::get_u32(in);
    std::vector<int> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(detail::get_u32(in));
    if (shape != target->shape) throw IoError("checkpoint tensor '" + name + "' has wrong shape");
    detail::get_bytes(in, target->value.data(), target->value.size() * sizeof(Scalar));
  }
  return out;
}

inline void save_checkpoint_file(const std::string& path, ReaderModel& model,
                                 uint64_t vocab_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  save_checkpoint(out, model, vocab_hash);
}

inline LoadedCheckpoint load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  return load_checkpoint(in);
}

}  // namespace seqattn
