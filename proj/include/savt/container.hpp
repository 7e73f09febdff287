#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "savt/tensor.hpp"

namespace savt {

// SAVT container: magic "SAVT", u32 version, u64 length-prefixed UTF-8 JSON
// manifest {meta, ordered tensor entries with shape and dtype}, then raw
// little-endian payloads in manifest order, each aligned to 64 bytes from the
// start of the file. Models store f32 payloads, feature dumps f64.
enum class Dtype { kF32, kF64 };

struct NamedTensor {
  std::string name;
  Tensor tensor;
  Dtype dtype = Dtype::kF64;
};

struct Container {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const Tensor& find(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void write_container(const std::string& path, const nlohmann::json& meta,
                     const std::vector<NamedTensor>& tensors);

Container read_container(const std::string& path);

}  // namespace savt
