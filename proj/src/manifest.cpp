#include "dutavc/manifest.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dutavc/error.hpp"

namespace dutavc {

namespace fs = std::filesystem;

namespace {

std::string resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path);
  const fs::path base = fs::path(path).parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": invalid JSON: " + e.what());
    }
    ManifestEntry e;
    try {
      e.id = j.at("id").get<std::string>();
      e.audio_path = resolve(base, j.at("audio_path").get<std::string>());
      e.speaker_id = j.at("speaker_id").get<std::string>();
      e.word = j.value("word", std::string{});
      if (j.contains("alignment_path")) e.alignment_path = resolve(base, j["alignment_path"].get<std::string>());
      if (j.contains("group")) e.group = j["group"].get<std::string>();
      if (j.contains("source_id")) e.source_id = j["source_id"].get<std::string>();
      if (j.contains("target_id")) e.target_id = j["target_id"].get<std::string>();
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(where + ": " + ex.what());
    }
    if (e.id.empty()) throw FormatError(where + ": empty id");
    out.push_back(std::move(e));
  }
  return out;
}

std::string manifest_line(const ManifestEntry& e) {
  nlohmann::ordered_json j;
  j["id"] = e.id;
  j["audio_path"] = e.audio_path;
  j["speaker_id"] = e.speaker_id;
  j["word"] = e.word;
  if (e.alignment_path) j["alignment_path"] = *e.alignment_path;
  if (e.group) j["group"] = *e.group;
  if (e.source_id) j["source_id"] = *e.source_id;
  if (e.target_id) j["target_id"] = *e.target_id;
  return j.dump();
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write manifest " + path);
  for (const auto& e : entries) out << manifest_line(e) << '\n';
  if (!out) throw Error("failed writing manifest " + path);
}

}  // namespace dutavc
