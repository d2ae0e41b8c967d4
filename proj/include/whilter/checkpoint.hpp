#pragma once

// Checkpoint directory layout (format version 1):
//   config  sectioned key=value text: [checkpoint] format_version, epoch;
//           [model] ModelConfig keys; [extra] free-form run metadata
//   params  "WHLP" u32 version, u32 count, then per tensor:
//           u32 name_len, name, u32 rank, u32 dims[rank], u32 dtype (0), f32 data
//   optim   "WHLO" u32 version, u64 step, f64 beta1, beta2, epsilon, u32 count,
//           then per slot: u32 name_len, name, u64 numel, f32 m[numel], f32 v[numel]
//   rng     textual engine state
// All binary fields little-endian.

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "whilter/binio.hpp"
#include "whilter/error.hpp"
#include "whilter/fileio.hpp"
#include "whilter/kvfile.hpp"
#include "whilter/model.hpp"
#include "whilter/optim.hpp"
#include "whilter/rng.hpp"

namespace whilter {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model<float> model;
  std::optional<AdamState<float>> optimizer;
  std::optional<std::string> rng_state;
  int epoch = 0;
  std::map<std::string, std::string> extra;
};

namespace detail {

inline void put_name(std::vector<char>& out, const std::string& name) {
  binio::put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
}

inline std::string get_name(binio::Reader& r, const std::string& file) {
  if (!r.has(4)) throw FormatError(FormatErrc::truncated_payload, file);
  const std::uint32_t n = r.u32();
  if (!r.has(n)) throw FormatError(FormatErrc::truncated_payload, file);
  return r.str(n);
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, const Model<float>& model,
                            const AdamState<float>* optimizer, const Rng* rng, int epoch,
                            const std::map<std::string, std::string>& extra = {}) {
  std::filesystem::create_directories(dir);

  KvSections config;
  config["checkpoint"] = {{"format_version", std::to_string(kCheckpointVersion)}, {"epoch", std::to_string(epoch)}};
  for (const auto& [k, v] : model.config().to_kv()) config["model"][k] = v;
  if (!extra.empty()) config["extra"] = extra;
  write_file_text(dir / "config", render_kv(config));

  const auto params = model.parameters();
  std::vector<char> blob{'W', 'H', 'L', 'P'};
  binio::put_u32(blob, kCheckpointVersion);
  binio::put_u32(blob, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put_name(blob, p.name);
    binio::put_u32(blob, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) binio::put_u32(blob, static_cast<std::uint32_t>(d));
    binio::put_u32(blob, kDtypeF32);
    binio::put_f32s(blob, p.tensor.data());
  }
  write_file_bytes(dir / "params", blob);

  if (optimizer) {
    std::vector<char> ob{'W', 'H', 'L', 'O'};
    binio::put_u32(ob, kCheckpointVersion);
    binio::put_u64(ob, static_cast<std::uint64_t>(optimizer->step));
    binio::put_f64(ob, optimizer->beta1);
    binio::put_f64(ob, optimizer->beta2);
    binio::put_f64(ob, optimizer->epsilon);
    binio::put_u32(ob, static_cast<std::uint32_t>(optimizer->m.size()));
    for (std::size_t i = 0; i < optimizer->m.size(); ++i) {
      detail::put_name(ob, i < params.size() ? params[i].name : std::string());
      binio::put_u64(ob, optimizer->m[i].size());
      binio::put_f32s(ob, optimizer->m[i]);
      binio::put_f32s(ob, optimizer->v[i]);
    }
    write_file_bytes(dir / "optim", ob);
  } else {
    std::filesystem::remove(dir / "optim");
  }

  if (rng) {
    write_file_text(dir / "rng", rng->state());
  } else {
    std::filesystem::remove(dir / "rng");
  }
}

/// Loads a checkpoint directory. If `expected` is given, the stored model
/// config must equal it.
inline Checkpoint load_checkpoint(const std::filesystem::path& dir, const ModelConfig* expected = nullptr) {
  if (!std::filesystem::is_directory(dir)) throw DataError("checkpoint directory not found: " + dir.string());
  const auto config = parse_kv(read_file_text(dir / "config"), (dir / "config").string());
  auto section = [&](const std::string& name) -> const std::map<std::string, std::string>& {
    static const std::map<std::string, std::string> empty;
    auto it = config.find(name);
    return it == config.end() ? empty : it->second;
  };
  const auto& meta = section("checkpoint");
  auto version = meta.find("format_version");
  if (version == meta.end() || version->second != std::to_string(kCheckpointVersion)) {
    throw FormatError(FormatErrc::unsupported_version, (dir / "config").string());
  }
  const ModelConfig model_config = ModelConfig::from_kv(section("model"));
  if (expected && !(*expected == model_config)) {
    std::string diff;
    const auto want = expected->to_kv();
    for (const auto& [k, v] : model_config.to_kv()) {
      if (want.at(k) != v) diff += " " + k + "=" + v + " (expected " + want.at(k) + ")";
    }
    throw ConfigError("checkpoint config mismatch:" + diff);
  }

  Checkpoint ck;
  ck.epoch = std::stoi(meta.count("epoch") ? meta.at("epoch") : "0");
  ck.extra = section("extra");
  Rng init_rng(0);
  ck.model = Model<float>(model_config, init_rng);

  const std::string params_name = (dir / "params").string();
  const auto blob = read_file_bytes(dir / "params");
  binio::Reader r(blob);
  if (!r.has(12)) throw FormatError(FormatErrc::truncated_payload, params_name);
  if (r.str(4) != "WHLP") throw FormatError(FormatErrc::bad_magic, params_name);
  if (r.u32() != kCheckpointVersion) throw FormatError(FormatErrc::unsupported_version, params_name);
  const std::uint32_t count = r.u32();
  auto params = ck.model.parameters();
  if (count != params.size()) {
    throw FormatError(FormatErrc::shape_mismatch, params_name + ": " + std::to_string(count) + " tensors, model has " +
                                                      std::to_string(params.size()));
  }
  for (auto& p : params) {
    const std::string name = detail::get_name(r, params_name);
    if (name != p.name) throw FormatError(FormatErrc::shape_mismatch, params_name + ": expected " + p.name + ", found " + name);
    if (!r.has(4)) throw FormatError(FormatErrc::truncated_payload, params_name);
    const std::uint32_t rank = r.u32();
    if (!r.has(4 * (rank + 1))) throw FormatError(FormatErrc::truncated_payload, params_name);
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    if (r.u32() != kDtypeF32) throw FormatError(FormatErrc::dtype_mismatch, params_name + ": " + name);
    if (shape != p.tensor.shape()) throw FormatError(FormatErrc::shape_mismatch, params_name + ": " + name);
    if (!r.has(p.tensor.numel() * 4)) throw FormatError(FormatErrc::truncated_payload, params_name + ": " + name);
    r.f32s(p.tensor.data());
  }

  if (std::filesystem::exists(dir / "optim")) {
    const std::string optim_name = (dir / "optim").string();
    const auto ob = read_file_bytes(dir / "optim");
    binio::Reader o(ob);
    if (!o.has(40)) throw FormatError(FormatErrc::truncated_payload, optim_name);
    if (o.str(4) != "WHLO") throw FormatError(FormatErrc::bad_magic, optim_name);
    if (o.u32() != kCheckpointVersion) throw FormatError(FormatErrc::unsupported_version, optim_name);
    AdamState<float> st;
    st.step = static_cast<std::int64_t>(o.u64());
    st.beta1 = o.f64();
    st.beta2 = o.f64();
    st.epsilon = o.f64();
    const std::uint32_t slots = o.u32();
    for (std::uint32_t i = 0; i < slots; ++i) {
      detail::get_name(o, optim_name);
      if (!o.has(8)) throw FormatError(FormatErrc::truncated_payload, optim_name);
      const std::uint64_t n = o.u64();
      if (!o.has(n * 8)) throw FormatError(FormatErrc::truncated_payload, optim_name);
      std::vector<float> m(n), v(n);
      o.f32s(m);
      o.f32s(v);
      st.m.push_back(std::move(m));
      st.v.push_back(std::move(v));
    }
    ck.optimizer = std::move(st);
  }
  if (std::filesystem::exists(dir / "rng")) ck.rng_state = read_file_text(dir / "rng");
  return ck;
}

}  // namespace whilter
