#include "polypforge/nn/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "polypforge/error.hpp"
#include "polypforge/hash.hpp"

namespace polypforge::nn {

static_assert(std::endian::native == std::endian::little, "archive layout assumes little-endian");

namespace {
constexpr char kMagic[8] = {'P', 'F', 'A', 'R', 'C', 'H', '1', '\0'};
}

void Archive::put(const std::string& name, const Tensor& tensor) { tensors_[name] = tensor; }

const Tensor& Archive::get(const std::string& name) const {
  auto it = tensors_.find(name);
  require(it != tensors_.end(), ErrorKind::format, "archive has no tensor '" + name + "'");
  return it->second;
}

std::vector<std::string> Archive::names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : tensors_) out.push_back(name);
  return out;
}

std::vector<std::uint8_t> Archive::to_bytes() const {
  std::vector<std::uint8_t> payload;
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [name, t] : tensors_) {
    table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
    const auto* raw = reinterpret_cast<const std::uint8_t*>(t.data());
    payload.insert(payload.end(), raw, raw + t.numel() * sizeof(double));
  }
  nlohmann::json header = {{"format", "polypforge-archive"},
                           {"version", 1},
                           {"meta", meta},
                           {"tensors", table},
                           {"payload_bytes", payload.size()},
                           {"payload_sha256", sha256_hex(payload)}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  const std::uint64_t len = text.size();
  const auto* len_raw = reinterpret_cast<const std::uint8_t*>(&len);
  out.insert(out.end(), len_raw, len_raw + 8);
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Archive Archive::from_bytes(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kMagic, 8) == 0, ErrorKind::format,
          "not a polypforge archive");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  require(16 + len <= bytes.size(), ErrorKind::format, "archive header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("archive header: ") + e.what());
  }
  auto payload = bytes.subspan(16 + len);
  require(payload.size() == header.at("payload_bytes").get<std::size_t>(), ErrorKind::format,
          "archive payload truncated");
  require(sha256_hex(payload) == header.at("payload_sha256").get<std::string>(), ErrorKind::format,
          "archive payload checksum mismatch");
  Archive a;
  a.meta = header.at("meta");
  for (const auto& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = static_cast<std::size_t>(shape_numel(shape));
    require(offset + count * sizeof(double) <= payload.size(), ErrorKind::format,
            "archive tensor out of bounds");
    std::vector<double> data(count);
    std::memcpy(data.data(), payload.data() + offset, count * sizeof(double));
    a.tensors_[entry.at("name").get<std::string>()] = Tensor(std::move(shape), std::move(data));
  }
  return a;
}

void Archive::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = to_bytes();
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::missing_file, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_bytes(bytes);
}

void store_module(Archive& archive, const Module& module, const std::string& prefix) {
  for (const auto& nv : module.named_parameters()) archive.put(prefix + nv.name, nv.var.value());
  for (const auto& nv : module.named_buffers()) archive.put(prefix + nv.name, nv.var.value());
}

void load_module(const Archive& archive, Module& module, const std::string& prefix) {
  auto restore = [&](std::vector<NamedVar> vars) {
    for (auto& nv : vars) {
      const Tensor& t = archive.get(prefix + nv.name);
      require(t.shape() == nv.var.shape(), ErrorKind::size_mismatch,
              "archive tensor '" + prefix + nv.name + "' has shape " + shape_string(t.shape()) +
                  ", module expects " + shape_string(nv.var.shape()));
      nv.var.mutable_value() = t;
    }
  };
  restore(module.named_parameters());
  restore(module.named_buffers());
}

void store_optimizer(Archive& archive, Optimizer& optimizer, const std::string& prefix) {
  for (auto& [name, t] : optimizer.state()) archive.put(prefix + name, *t);
}

void load_optimizer(const Archive& archive, Optimizer& optimizer, const std::string& prefix) {
  for (auto& [name, t] : optimizer.state()) {
    const Tensor& src = archive.get(prefix + name);
    require(src.shape() == t->shape(), ErrorKind::size_mismatch, "optimizer state shape mismatch");
    *t = src;
  }
}

std::string module_hash(const Module& module) {
  std::vector<std::uint8_t> bytes;
  auto append = [&](const std::vector<NamedVar>& vars) {
    for (const auto& nv : vars) {
      bytes.insert(bytes.end(), nv.name.begin(), nv.name.end());
      const auto* raw = reinterpret_cast<const std::uint8_t*>(nv.var.value().data());
      bytes.insert(bytes.end(), raw, raw + nv.var.value().numel() * sizeof(double));
    }
  };
  append(module.named_parameters());
  append(module.named_buffers());
  return sha256_hex(bytes);
}

}  // namespace polypforge::nn
