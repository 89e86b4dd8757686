#pragma once

// Versioned model checkpoints:
//   "DVCK" | u32 version | string kind | string metadata (JSON) | ParamStore
// Strings are u32-length-prefixed UTF-8; all integers little-endian.

#include <memory>
#include <string>

#include <json.hpp>

#include "dutavc/nn/layers.hpp"

namespace dutavc::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::string kind;
  nlohmann::json meta;
};

void write_checkpoint(const std::string& path, const std::string& kind, const nlohmann::json& meta,
                      const ParamStore& params);

/// Reads the header; `build` constructs a model from it and returns its ParamStore,
/// into which the stored tensors are loaded.
template <typename Build>
auto read_checkpoint(const std::string& path, const std::string& expected_kind, Build&& build);

// implementation detail
CheckpointHeader read_checkpoint_header(std::istream& is, const std::string& path,
                                        const std::string& expected_kind);
std::unique_ptr<std::istream> open_checkpoint(const std::string& path);

template <typename Build>
auto read_checkpoint(const std::string& path, const std::string& expected_kind, Build&& build) {
  auto is = open_checkpoint(path);
  const CheckpointHeader header = read_checkpoint_header(*is, path, expected_kind);
  auto model = build(header);
  model.params().read(*is);
  return model;
}

}  // namespace dutavc::nn
