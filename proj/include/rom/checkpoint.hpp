#pragma once

// Checkpoint files.
//
// Layout: 8-byte magic "ROMCKPT1", u64 little-endian header length, UTF-8
// JSON header, then little-endian float32 payload: every parameter tensor in
// Model::visit order, followed by the Adam first and second moments in the
// same order when the header says they are present.

#include <rom/model.hpp>
#include <rom/trainer.hpp>

#include <json.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace rom {

inline constexpr int kCheckpointVersion = 1;
inline constexpr std::array<char, 8> kCheckpointMagic{'R', 'O', 'M', 'C', 'K', 'P', 'T', '1'};

template <class T>
struct Checkpoint {
  Model<T> model;
  std::optional<AdamState<T>> optimizer;
  int epoch = 0;
  nlohmann::json extra = nlohmann::json::object();  // free-form training metadata
};

namespace detail {

inline std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
  return v;
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int b = 7; b >= 0; --b) v = (v << 8) | p[b];
  return v;
}

template <class T>
void put_floats(std::ostream& out, const Tensor<T>& t) {
  std::vector<std::uint32_t> words(static_cast<std::size_t>(t.size()));
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    words[static_cast<std::size_t>(i)] = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(t.data()[i])));
  }
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
}

template <class T>
void get_floats(const unsigned char*& p, Tensor<T>& t) {
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    std::uint32_t w;
    std::memcpy(&w, p, 4);
    p += 4;
    t.data()[i] = static_cast<T>(std::bit_cast<float>(to_little(w)));
  }
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ckpt) {
  Model<T> model = ckpt.model;
  nlohmann::json tensors = nlohmann::json::array();
  model.visit([&](const std::string& name, Tensor<T>& t) {
    tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  });
  nlohmann::json header{{"version", kCheckpointVersion},
                        {"config", model.config},
                        {"epoch", ckpt.epoch},
                        {"tensors", tensors},
                        {"extra", ckpt.extra}};
  if (ckpt.optimizer) {
    const AdamState<T>& s = *ckpt.optimizer;
    header["adam"] = {{"step", s.step},
                      {"learning_rate", s.learning_rate},
                      {"beta1", s.beta1},
                      {"beta2", s.beta2},
                      {"epsilon", s.epsilon}};
  } else {
    header["adam"] = nullptr;
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (Tensor<T>* t : model.parameters()) detail::put_floats(out, *t);
  if (ckpt.optimizer) {
    for (const auto& t : ckpt.optimizer->first) detail::put_floats(out, t);
    for (const auto& t : ckpt.optimizer->second) detail::put_floats(out, t);
  }
  if (!out) throw Error("write to '" + path + "' failed");
}

/// Reads a checkpoint. When `expected` is given the stored config must match
/// it exactly.
template <class T>
Checkpoint<T> load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t prefix = kCheckpointMagic.size() + 8;
  if (bytes.size() < prefix || std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
    throw Error("checkpoint '" + path + "': bad magic");
  }
  const std::uint64_t header_len = detail::get_u64(bytes.data() + kCheckpointMagic.size());
  if (header_len > bytes.size() - prefix) throw Error("checkpoint '" + path + "': truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(prefix),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(prefix + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint '" + path + "': corrupt header: " + e.what());
  }
  try {
    const int version = header.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw Error("checkpoint '" + path + "': version " + std::to_string(version) + ", expected " +
                  std::to_string(kCheckpointVersion));
    }
    const ModelConfig config = header.at("config").get<ModelConfig>();
    if (expected && nlohmann::json(*expected) != nlohmann::json(config)) {
      throw Error("checkpoint '" + path + "': config mismatch, stored " + nlohmann::json(config).dump() + " vs requested " +
                  nlohmann::json(*expected).dump());
    }
    Checkpoint<T> ckpt;
    ckpt.model = Model<T>::init(config, 0);
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.extra = header.value("extra", nlohmann::json::object());

    std::vector<Tensor<T>*> params = ckpt.model.parameters();
    std::vector<std::string> names = ckpt.model.parameter_names();
    const nlohmann::json& tensors = header.at("tensors");
    if (tensors.size() != params.size()) throw Error("checkpoint '" + path + "': tensor count does not match config");
    std::size_t floats = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
      const nlohmann::json& t = tensors[k];
      if (t.at("name") != names[k] || t.at("rows") != params[k]->rows() || t.at("cols") != params[k]->cols()) {
        throw Error("checkpoint '" + path + "': tensor " + std::to_string(k) + " is " + t.dump() + ", expected " + names[k] +
                    " " + shape_of(*params[k]));
      }
      floats += static_cast<std::size_t>(params[k]->size());
    }
    const bool has_adam = !header.at("adam").is_null();
    const std::size_t expected_bytes = floats * 4 * (has_adam ? 3 : 1);
    const std::size_t payload = bytes.size() - prefix - header_len;
    if (payload != expected_bytes) {
      throw Error("checkpoint '" + path + "': payload is " + std::to_string(payload) + " bytes, expected " +
                  std::to_string(expected_bytes) + (payload < expected_bytes ? " (truncated)" : ""));
    }
    const unsigned char* p = bytes.data() + prefix + header_len;
    for (Tensor<T>* t : params) detail::get_floats(p, *t);
    if (has_adam) {
      const nlohmann::json& a = header.at("adam");
      AdamState<T> s = AdamState<T>::for_parameters(params, a.at("learning_rate").get<double>());
      s.step = a.at("step").get<std::int64_t>();
      s.beta1 = a.at("beta1").get<double>();
      s.beta2 = a.at("beta2").get<double>();
      s.epsilon = a.at("epsilon").get<double>();
      for (auto& t : s.first) detail::get_floats(p, t);
      for (auto& t : s.second) detail::get_floats(p, t);
      ckpt.optimizer = std::move(s);
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint '" + path + "': malformed header: " + e.what());
  }
}

}  // namespace rom
