#include "savt/container.hpp"

#include <cstring>
#include <fstream>

namespace savt {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'V', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kAlignment = 64;

std::string dtype_name(Dtype d) { return d == Dtype::kF32 ? "f32" : "f64"; }

Dtype dtype_from_name(const std::string& s) {
  if (s == "f32") return Dtype::kF32;
  if (s == "f64") return Dtype::kF64;
  throw IoError("container: unknown dtype '" + s + "' in manifest");
}

void write_le_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_le_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_le_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("container: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_le_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw IoError("container: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void pad_to_alignment(std::ostream& out, std::size_t& offset) {
  static const char zeros[kAlignment] = {};
  const std::size_t rem = offset % kAlignment;
  if (rem != 0) {
    out.write(zeros, static_cast<std::streamsize>(kAlignment - rem));
    offset += kAlignment - rem;
  }
}

}  // namespace

const Tensor& Container::find(const std::string& name) const {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw IoError("container: tensor '" + name + "' not present");
}

bool Container::contains(const std::string& name) const {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void write_container(const std::string& path, const nlohmann::json& meta,
                     const std::vector<NamedTensor>& tensors) {
  nlohmann::json manifest;
  manifest["meta"] = meta;
  nlohmann::json entries = nlohmann::json::array();
  for (const NamedTensor& t : tensors) {
    entries.push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"dtype", dtype_name(t.dtype)}});
  }
  manifest["tensors"] = entries;
  const std::string manifest_str = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("container: cannot open '" + path + "' for writing");
  out.write(kMagic, 4);
  write_le_u32(out, kVersion);
  write_le_u64(out, manifest_str.size());
  out.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
  std::size_t offset = 16 + manifest_str.size();

  for (const NamedTensor& t : tensors) {
    pad_to_alignment(out, offset);
    if (t.dtype == Dtype::kF64) {
      out.write(reinterpret_cast<const char*>(t.tensor.data()),
                static_cast<std::streamsize>(t.tensor.numel() * 8));
      offset += t.tensor.numel() * 8;
    } else {
      std::vector<float> buf(t.tensor.numel());
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(t.tensor[i]);
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * 4));
      offset += buf.size() * 4;
    }
  }
  if (!out) throw IoError("container: write to '" + path + "' failed");
}

Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("container: cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("container: '" + path + "' is not a SAVT container (bad magic)");
  }
  const std::uint32_t version = read_le_u32(in);
  if (version != kVersion) {
    throw IoError("container: unsupported version " + std::to_string(version) + " in '" + path +
                  "'");
  }
  const std::uint64_t manifest_len = read_le_u64(in);
  std::string manifest_str(manifest_len, '\0');
  in.read(manifest_str.data(), static_cast<std::streamsize>(manifest_len));
  if (!in) throw IoError("container: truncated manifest in '" + path + "'");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_str);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("container: manifest parse error in '" + path + "': " + e.what());
  }
  if (!manifest.contains("meta") || !manifest.contains("tensors") ||
      !manifest["tensors"].is_array()) {
    throw IoError("container: manifest error in '" + path + "': missing meta or tensors");
  }

  Container c;
  c.meta = manifest["meta"];
  std::size_t offset = 16 + manifest_str.size();
  for (const auto& entry : manifest["tensors"]) {
    if (!entry.contains("name") || !entry.contains("shape") || !entry.contains("dtype")) {
      throw IoError("container: manifest error in '" + path + "': malformed tensor entry");
    }
    NamedTensor t;
    t.name = entry["name"].get<std::string>();
    std::vector<std::size_t> shape;
    for (const auto& e : entry["shape"]) {
      if (!e.is_number_unsigned()) {
        throw IoError("container: manifest error in '" + path + "': bad shape for tensor '" +
                      t.name + "'");
      }
      shape.push_back(e.get<std::size_t>());
    }
    t.dtype = dtype_from_name(entry["dtype"].get<std::string>());

    const std::size_t rem = offset % kAlignment;
    if (rem != 0) {
      in.seekg(static_cast<std::streamoff>(kAlignment - rem), std::ios::cur);
      offset += kAlignment - rem;
    }
    const std::size_t count = shape_numel(shape);
    std::vector<double> data(count);
    if (t.dtype == Dtype::kF64) {
      in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * 8));
      offset += count * 8;
    } else {
      std::vector<float> buf(count);
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * 4));
      for (std::size_t i = 0; i < count; ++i) data[i] = static_cast<double>(buf[i]);
      offset += count * 4;
    }
    if (!in) {
      throw IoError("container: truncated payload for tensor '" + t.name + "' in '" + path + "'");
    }
    t.tensor = Tensor(std::move(shape), std::move(data));
    c.tensors.push_back(std::move(t));
  }
  return c;
}

}  // namespace savt
