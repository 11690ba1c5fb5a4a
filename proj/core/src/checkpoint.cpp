#include "rwkvas/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"

namespace rwkvas {

namespace {

using json = nlohmann::ordered_json;

void put_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(bytes, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw CheckpointError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void put_doubles(std::ostream& out, std::span<const double> values) {
  for (double d : values) put_u64(out, std::bit_cast<std::uint64_t>(d));
}

void get_doubles(std::istream& in, std::span<double> values) {
  for (double& d : values) d = std::bit_cast<double>(get_u64(in));
}

std::string_view carry_name(ShiftCarry c) { return c == ShiftCarry::raw_input ? "raw_input" : "enhanced_output"; }

ShiftCarry parse_carry(const std::string& s) {
  if (s == "raw_input") return ShiftCarry::raw_input;
  if (s == "enhanced_output") return ShiftCarry::enhanced_output;
  throw CheckpointError("unknown shift carry mode '" + s + "'");
}

}  // namespace

void write_checkpoint(std::ostream& out, const RwkvModel& model, const CheckpointExtras& extras) {
  const auto& cfg = model.config();
  const auto params = model.parameters();

  json meta;
  meta["format_version"] = kCheckpointFormatVersion;
  meta["config"] = {{"num_layers", cfg.num_layers},         {"hidden_dim", cfg.hidden_dim},
                    {"vocab_size", cfg.vocab_size},         {"variant", std::string(variant_name(cfg.variant))},
                    {"seed", cfg.seed},                     {"context_len", cfg.context_len}};
  json layers = json::array();
  for (const auto& l : model.layers()) {
    if (l.enhancement) {
      layers.push_back({{"enhancement", true},
                        {"use_layernorm", l.enhancement->use_layernorm},
                        {"carry", std::string(carry_name(l.enhancement->carry))}});
    } else {
      layers.push_back({{"enhancement", false}});
    }
  }
  meta["layers"] = layers;
  meta["vocab"] = extras.vocab ? json(extras.vocab->bytes()) : json(nullptr);
  json manifest = json::array();
  for (const auto& p : params) manifest.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  meta["parameters"] = manifest;
  if (extras.optimizer) {
    if (extras.optimizer->first_moments.size() != params.size() ||
        extras.optimizer->second_moments.size() != params.size()) {
      throw CheckpointError("optimizer moments do not match the parameter list");
    }
    meta["optimizer"] = {{"step", extras.optimizer->step}, {"moments", true}};
  } else {
    meta["optimizer"] = nullptr;
  }
  meta["rng_state"] = extras.rng_state;

  const std::string header = meta.dump();
  out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  put_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& p : params) put_doubles(out, p.tensor.data());
  if (extras.optimizer) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (extras.optimizer->first_moments[i].size() != params[i].tensor.numel() ||
          extras.optimizer->second_moments[i].size() != params[i].tensor.numel()) {
        throw CheckpointError("optimizer moment size mismatch for " + params[i].name);
      }
    }
    for (const auto& m : extras.optimizer->first_moments) put_doubles(out, m);
    for (const auto& v : extras.optimizer->second_moments) put_doubles(out, v);
  }
  if (!out) throw CheckpointError("failed writing checkpoint");
}

LoadedCheckpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::string_view(magic, 8) != kCheckpointMagic) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const std::uint64_t header_len = get_u64(in);
  if (header_len > (1ULL << 30)) throw CheckpointError("checkpoint metadata length is implausible");
  std::string header(header_len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(header_len))) throw CheckpointError("checkpoint truncated");

  json meta;
  try {
    meta = json::parse(header);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint metadata: ") + e.what());
  }
  if (meta.at("format_version").get<int>() != kCheckpointFormatVersion) {
    throw CheckpointError("unsupported checkpoint format version");
  }
  ModelConfig cfg;
  const auto& c = meta.at("config");
  cfg.num_layers = c.at("num_layers").get<int>();
  cfg.hidden_dim = c.at("hidden_dim").get<int>();
  cfg.vocab_size = c.at("vocab_size").get<int>();
  cfg.variant = parse_variant(c.at("variant").get<std::string>());
  cfg.seed = c.at("seed").get<std::uint64_t>();
  cfg.context_len = c.at("context_len").get<int>();

  RwkvModel model(cfg);
  const auto& layers = meta.at("layers");
  if (layers.size() != model.layers().size()) throw CheckpointError("layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& lp = model.layers()[l];
    if (!layers[l].at("enhancement").get<bool>()) {
      lp.enhancement.reset();
    } else if (lp.enhancement) {
      lp.enhancement->use_layernorm = layers[l].at("use_layernorm").get<bool>();
      lp.enhancement->carry = parse_carry(layers[l].at("carry").get<std::string>());
    } else {
      throw CheckpointError("checkpoint has an enhancement the baseline variant cannot hold");
    }
  }

  auto params = model.parameters();
  const auto& manifest = meta.at("parameters");
  if (manifest.size() != params.size()) throw CheckpointError("parameter manifest does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (manifest[i].at("name").get<std::string>() != params[i].name ||
        manifest[i].at("shape").get<Shape>() != params[i].tensor.shape()) {
      throw CheckpointError("parameter manifest mismatch at " + params[i].name);
    }
  }
  for (auto& p : params) get_doubles(in, p.tensor.mutable_data());

  CheckpointExtras extras;
  if (!meta.at("vocab").is_null()) extras.vocab = Vocabulary::from_bytes(meta.at("vocab").get<std::vector<unsigned char>>());
  if (!meta.at("optimizer").is_null()) {
    OptimizerSnapshot opt;
    opt.step = meta.at("optimizer").at("step").get<long long>();
    for (auto* moments : {&opt.first_moments, &opt.second_moments}) {
      for (const auto& p : params) {
        std::vector<double> m(p.tensor.numel());
        get_doubles(in, m);
        moments->push_back(std::move(m));
      }
    }
    extras.optimizer = std::move(opt);
  }
  extras.rng_state = meta.value("rng_state", std::string{});
  return {std::move(model), std::move(extras)};
}

void save_checkpoint(const std::filesystem::path& path, const RwkvModel& model, const CheckpointExtras& extras) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, model, extras);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace rwkvas
