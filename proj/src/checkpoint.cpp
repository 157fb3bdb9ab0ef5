#include "mfdp/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mfdp/run_config.hpp"

namespace mfdp {

using nlohmann::json;
using Kind = CheckpointError::Kind;

namespace {

constexpr const char* kMagicPrefix = "MFDP-CHECKPOINT ";
constexpr const char* kVersion = "v1";

void put_f64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f64(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

void put_tensor(std::string& payload, json& index, const std::string& name, const Tensor& t) {
  index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size() / 8}});
  for (double v : t.data()) put_f64(payload, v);
}

Tensor get_tensor(const json& entry, const std::string& payload) {
  const Shape shape = entry.at("shape").get<Shape>();
  const auto offset = entry.at("offset").get<std::size_t>();
  Tensor t(shape);
  if ((offset + t.size()) * 8 > payload.size()) {
    throw CheckpointError(Kind::Format, "checkpoint: tensor '" + entry.at("name").get<std::string>() +
                                            "' runs past the payload");
  }
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = get_f64(payload.data() + 8 * (offset + i));
  return t;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string serialize_checkpoint(const MfdpModel& model, const AdamWState* optimizer) {
  std::string payload;
  json params = json::array();
  const auto leaves = model.parameters();
  for (const ParamLeaf* p : leaves) put_tensor(payload, params, p->name, p->value);
  json header{{"config", to_json(model.config())}, {"params", params}};
  if (optimizer) {
    if (!optimizer->m.empty() && optimizer->m.size() != leaves.size()) {
      throw ContractError("checkpoint: optimizer state does not match the model");
    }
    json m = json::array(), v = json::array();
    for (std::size_t i = 0; i < optimizer->m.size(); ++i) {
      put_tensor(payload, m, leaves[i]->name, optimizer->m[i]);
      put_tensor(payload, v, leaves[i]->name, optimizer->v[i]);
    }
    header["optimizer"] = {{"step", optimizer->step}, {"m", m}, {"v", v}};
  }
  const std::string rest = header.dump() + "\n" + payload;
  return std::string(kMagicPrefix) + kVersion + "\n" + hex16(fnv1a64(rest)) + " " +
         std::to_string(rest.size()) + "\n" + rest;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const ModelConfig* expected) {
  const auto nl1 = bytes.find('\n');
  const std::string magic = bytes.substr(0, nl1);
  if (magic.rfind(kMagicPrefix, 0) != 0) {
    throw CheckpointError(Kind::Format, "not an MFDP checkpoint");
  }
  if (magic.substr(std::strlen(kMagicPrefix)) != kVersion) {
    throw CheckpointError(Kind::Version, "unsupported checkpoint version '" +
                                             magic.substr(std::strlen(kMagicPrefix)) +
                                             "' (expected " + kVersion + ")");
  }
  const auto nl2 = bytes.find('\n', nl1 + 1);
  if (nl2 == std::string::npos) throw CheckpointError(Kind::Checksum, "checkpoint truncated");
  std::istringstream sums(bytes.substr(nl1 + 1, nl2 - nl1 - 1));
  std::string hex;
  std::size_t length = 0;
  if (!(sums >> hex >> length)) throw CheckpointError(Kind::Format, "malformed checksum line");
  const std::string rest = bytes.substr(nl2 + 1);
  if (rest.size() != length) {
    throw CheckpointError(Kind::Checksum, "checkpoint truncated or padded: " +
                                              std::to_string(rest.size()) + " of " +
                                              std::to_string(length) + " bytes");
  }
  if (hex16(fnv1a64(rest)) != hex) throw CheckpointError(Kind::Checksum, "checkpoint checksum mismatch");

  const auto nl3 = rest.find('\n');
  json header;
  try {
    header = json::parse(rest.substr(0, nl3));
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::Format, std::string("checkpoint header: ") + e.what());
  }
  const std::string payload = rest.substr(nl3 + 1);

  Checkpoint ck;
  try {
    const ModelConfig cfg = model_config_from_json(header.at("config"));
    if (expected && !(cfg == *expected)) {
      throw CheckpointError(Kind::ConfigMismatch,
                            "checkpoint config does not match: stored " + to_json(cfg).dump() +
                                ", expected " + to_json(*expected).dump());
    }
    ck.model = MfdpModel::build(cfg, 0);
    auto leaves = ck.model.parameters();
    const json& params = header.at("params");
    if (params.size() != leaves.size()) {
      throw CheckpointError(Kind::Format, "checkpoint has " + std::to_string(params.size()) +
                                              " tensors, model expects " +
                                              std::to_string(leaves.size()));
    }
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      const json& e = params[i];
      if (e.at("name").get<std::string>() != leaves[i]->name) {
        throw CheckpointError(Kind::Format, "checkpoint tensor " + std::to_string(i) + " is '" +
                                                e.at("name").get<std::string>() + "', expected '" +
                                                leaves[i]->name + "'");
      }
      Tensor t = get_tensor(e, payload);
      if (t.shape() != leaves[i]->value.shape()) {
        throw CheckpointError(Kind::Format, "shape mismatch for " + leaves[i]->name);
      }
      leaves[i]->value = std::move(t);
    }
    if (header.contains("optimizer")) {
      const json& o = header["optimizer"];
      AdamWState st;
      st.step = o.at("step").get<std::int64_t>();
      for (const json& e : o.at("m")) st.m.push_back(get_tensor(e, payload));
      for (const json& e : o.at("v")) st.v.push_back(get_tensor(e, payload));
      ck.optimizer = std::move(st);
    }
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::Format, std::string("checkpoint header: ") + e.what());
  } catch (const ContractError& e) {
    throw CheckpointError(Kind::Format, std::string("checkpoint config: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const std::string& path, const MfdpModel& model, const AdamWState* optimizer) {
  const std::string bytes = serialize_checkpoint(model, optimizer);
  std::ofstream out(path, std::ios::binary);
  if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    throw CheckpointError(Kind::Io, "cannot write checkpoint " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::Io, "cannot open checkpoint " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, expected);
}

}  // namespace mfdp
