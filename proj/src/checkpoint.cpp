#include "fsdm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fsdm {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', 'S', 'D', 'M', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::ifstream& in, const std::string& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw std::runtime_error("truncated checkpoint " + path);
  return value;
}

std::string take_string(std::ifstream& in, uint64_t n, const std::string& path) {
  if (n > (uint64_t{1} << 32)) throw std::runtime_error("corrupt length in checkpoint " + path);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw std::runtime_error("truncated checkpoint " + path);
  return s;
}

}  // namespace

const NamedArray* CheckpointFile::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const NamedArray& CheckpointFile::at(const std::string& name) const {
  const NamedArray* a = find(name);
  if (!a) throw std::runtime_error("checkpoint has no array '" + name + "'");
  return *a;
}

void CheckpointFile::add_real(const std::string& name, Shape shape, std::vector<double> values) {
  NamedArray a;
  a.name = name;
  a.dtype = DType::kF64;
  a.shape = std::move(shape);
  a.real = std::move(values);
  arrays.push_back(std::move(a));
}

void CheckpointFile::add_int(const std::string& name, int64_t value) {
  NamedArray a;
  a.name = name;
  a.dtype = DType::kI64;
  a.shape = {1};
  a.whole = {value};
  arrays.push_back(std::move(a));
}

int64_t CheckpointFile::get_int(const std::string& name) const {
  const NamedArray& a = at(name);
  if (a.dtype != DType::kI64 || a.whole.size() != 1) throw std::runtime_error("array '" + name + "' is not a scalar int");
  return a.whole[0];
}

void write_checkpoint(const std::string& path, const CheckpointFile& file) {
  // Write beside the target and rename, so an interrupted write never leaves
  // a truncated checkpoint under the final name.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out.write(kMagic, 8);
    put<uint32_t>(out, CheckpointFile::kVersion);
    put<uint64_t>(out, file.metadata.size());
    out.write(file.metadata.data(), static_cast<std::streamsize>(file.metadata.size()));
    put<uint64_t>(out, file.arrays.size());
    for (const auto& a : file.arrays) {
      put<uint32_t>(out, static_cast<uint32_t>(a.name.size()));
      out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
      put<uint8_t>(out, static_cast<uint8_t>(a.dtype));
      put<uint32_t>(out, static_cast<uint32_t>(a.shape.size()));
      for (int64_t d : a.shape) put<uint64_t>(out, static_cast<uint64_t>(d));
      const size_t n = static_cast<size_t>(numel_of(a.shape));
      switch (a.dtype) {
        case DType::kF64:
          if (a.real.size() != n) throw std::runtime_error("array '" + a.name + "' payload does not match shape");
          out.write(reinterpret_cast<const char*>(a.real.data()), static_cast<std::streamsize>(n * sizeof(double)));
          break;
        case DType::kF32:
          if (a.real.size() != n) throw std::runtime_error("array '" + a.name + "' payload does not match shape");
          for (double v : a.real) put<float>(out, static_cast<float>(v));
          break;
        case DType::kI64:
          if (a.whole.size() != n) throw std::runtime_error("array '" + a.name + "' payload does not match shape");
          out.write(reinterpret_cast<const char*>(a.whole.data()), static_cast<std::streamsize>(n * sizeof(int64_t)));
          break;
      }
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path);
  }
  std::filesystem::rename(tmp, path);
}

CheckpointFile read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("not a checkpoint: " + path);
  const auto version = take<uint32_t>(in, path);
  if (version != CheckpointFile::kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  }
  CheckpointFile file;
  file.metadata = take_string(in, take<uint64_t>(in, path), path);
  const auto count = take<uint64_t>(in, path);
  for (uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = take_string(in, take<uint32_t>(in, path), path);
    const auto tag = take<uint8_t>(in, path);
    if (tag > 2) throw std::runtime_error("unknown dtype tag in checkpoint " + path);
    a.dtype = static_cast<DType>(tag);
    const auto rank = take<uint32_t>(in, path);
    if (rank > 16) throw std::runtime_error("corrupt rank in checkpoint " + path);
    for (uint32_t r = 0; r < rank; ++r) a.shape.push_back(static_cast<int64_t>(take<uint64_t>(in, path)));
    const size_t n = static_cast<size_t>(numel_of(a.shape));
    if (a.dtype == DType::kI64) {
      a.whole.resize(n);
      if (n && !in.read(reinterpret_cast<char*>(a.whole.data()), static_cast<std::streamsize>(n * sizeof(int64_t)))) {
        throw std::runtime_error("truncated checkpoint " + path);
      }
    } else if (a.dtype == DType::kF64) {
      a.real.resize(n);
      if (n && !in.read(reinterpret_cast<char*>(a.real.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
        throw std::runtime_error("truncated checkpoint " + path);
      }
    } else {
      a.real.resize(n);
      for (size_t k = 0; k < n; ++k) a.real[k] = take<float>(in, path);
    }
    file.arrays.push_back(std::move(a));
  }
  return file;
}

}  // namespace fsdm
