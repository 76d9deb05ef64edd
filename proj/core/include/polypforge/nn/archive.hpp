#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "polypforge/nn/module.hpp"
#include "polypforge/nn/optim.hpp"

namespace polypforge::nn {

/// Self-describing binary container: an 8-byte magic, a little-endian u64
/// header length, a JSON header (metadata plus a tensor table), then the raw
/// tensor payload as IEEE-754 doubles. The header records the SHA-256 of the
/// payload so truncation or bit rot is detected on load.
class Archive {
 public:
  nlohmann::json meta = nlohmann::json::object();

  void put(const std::string& name, const Tensor& tensor);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  std::vector<std::string> names() const;

  std::vector<std::uint8_t> to_bytes() const;
  static Archive from_bytes(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  std::map<std::string, Tensor> tensors_;
};

/// Parameters and buffers under `prefix`.
void store_module(Archive& archive, const Module& module, const std::string& prefix);
/// Restores parameters and buffers; every tensor must exist with the same shape.
void load_module(const Archive& archive, Module& module, const std::string& prefix);

void store_optimizer(Archive& archive, Optimizer& optimizer, const std::string& prefix);
void load_optimizer(const Archive& archive, Optimizer& optimizer, const std::string& prefix);

/// SHA-256 over parameter and buffer values in registration order.
std::string module_hash(const Module& module);

}  // namespace polypforge::nn
