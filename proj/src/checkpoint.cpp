#include "vlaforge/checkpoint.hpp"

#include "vlaforge/errors.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

namespace vlaforge {
namespace {

constexpr std::array<char, 8> kMagic = {'V', 'L', 'A', 'F', 'C', 'K', 'P', 'T'};

uint8_t dtype_code(torch::ScalarType type) {
  switch (type) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    default: throw ValidationError(std::string("unsupported checkpoint dtype ") + c10::toString(type));
  }
}

torch::ScalarType dtype_from_code(uint8_t code) {
  switch (code) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    default: throw IoError("corrupt checkpoint: dtype code " + std::to_string(code));
  }
}

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw IoError("truncated checkpoint: " + path.string());
  }
  return value;
}

}  // namespace

const torch::Tensor* CheckpointFile::find(const std::string& name) const {
  for (const auto& [key, tensor] : tensors) {
    if (key == name) {
      return &tensor;
    }
  }
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open checkpoint for writing: " + path.string());
  }
  out.write(kMagic.data(), kMagic.size());
  put<uint32_t>(out, file.version);
  const std::string header = file.header.dump();
  put<uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put<uint64_t>(out, file.tensors.size());
  for (const auto& [name, tensor] : file.tensors) {
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    put<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<uint8_t>(out, dtype_code(t.scalar_type()));
    put<uint32_t>(out, static_cast<uint32_t>(t.dim()));
    for (auto d : t.sizes()) {
      put<int64_t>(out, d);
    }
    out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
  }
  if (!out) {
    throw IoError("failed writing checkpoint: " + path.string());
  }
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open checkpoint: " + path.string());
  }
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) {
    throw IoError("not a checkpoint file: " + path.string());
  }
  CheckpointFile file;
  file.version = get<uint32_t>(in, path);
  if (file.version != CheckpointFile::kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(file.version) + " in " +
                  path.string());
  }
  std::string header(get<uint64_t>(in, path), '\0');
  in.read(header.data(), static_cast<std::streamsize>(header.size()));
  file.header = nlohmann::json::parse(header);
  const auto count = get<uint64_t>(in, path);
  for (uint64_t i = 0; i < count; ++i) {
    std::string name(get<uint32_t>(in, path), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto dtype = dtype_from_code(get<uint8_t>(in, path));
    std::vector<int64_t> dims(get<uint32_t>(in, path));
    for (auto& d : dims) {
      d = get<int64_t>(in, path);
    }
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    if (!in) {
      throw IoError("truncated checkpoint tensor '" + name + "': " + path.string());
    }
    file.tensors.emplace_back(std::move(name), std::move(t));
  }
  return file;
}

uint64_t fnv1a64(std::span<const std::byte> bytes, uint64_t state) {
  for (auto b : bytes) {
    state ^= static_cast<uint64_t>(b);
    state *= 0x100000001b3ULL;
  }
  return state;
}

uint64_t tensor_checksum(const std::vector<torch::Tensor>& tensors) {
  uint64_t state = 0xcbf29ce484222325ULL;
  for (const auto& tensor : tensors) {
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    state = fnv1a64({static_cast<const std::byte*>(t.data_ptr()), t.nbytes()}, state);
  }
  return state;
}

uint64_t file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open for checksum: " + path.string());
  }
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a64({reinterpret_cast<const std::byte*>(bytes.data()), bytes.size()});
}

std::string to_hex(uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace vlaforge
