#pragma once

// Tensor container shared by checkpoints and inference artifacts:
//   "SBCBTNSR" | u32 version | u64 header bytes | header JSON | raw values
// The header lists tensors in storage order with their NCHW shapes and the
// element type. Values are host-endian.

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "sbcb/tensor.hpp"

SBCB_NAMESPACE_BEGIN

struct Container {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void write_container(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors);
Container read_container(const std::filesystem::path& path);

SBCB_NAMESPACE_END
