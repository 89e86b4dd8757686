#include "dutavc/nn/checkpoint.hpp"

#include <fstream>

#include "dutavc/binary_io.hpp"
#include "dutavc/error.hpp"

namespace dutavc::nn {

void write_checkpoint(const std::string& path, const std::string& kind, const nlohmann::json& meta,
                      const ParamStore& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write checkpoint: " + path);
  bin::put_magic(os, "DVCK");
  bin::put<std::uint32_t>(os, kCheckpointVersion);
  bin::put_string(os, kind);
  bin::put_string(os, meta.dump());
  params.write(os);
  if (!os) throw FormatError("failed writing checkpoint: " + path);
}

std::unique_ptr<std::istream> open_checkpoint(const std::string& path) {
  auto is = std::make_unique<std::ifstream>(path, std::ios::binary);
  if (!*is) throw FormatError("cannot open checkpoint: " + path);
  return is;
}

CheckpointHeader read_checkpoint_header(std::istream& is, const std::string& path,
                                        const std::string& expected_kind) {
  bin::expect_magic(is, "DVCK", path);
  const auto version = bin::get<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw FormatError(path + ": checkpoint version " + std::to_string(version) +
                      " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  CheckpointHeader h;
  h.kind = bin::get_string(is);
  if (h.kind != expected_kind)
    throw FormatError(path + ": checkpoint holds a '" + h.kind + "', expected '" + expected_kind + "'");
  try {
    h.meta = nlohmann::json::parse(bin::get_string(is));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": corrupt checkpoint metadata: " + e.what());
  }
  return h;
}

}  // namespace dutavc::nn
