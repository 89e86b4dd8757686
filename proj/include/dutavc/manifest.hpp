#pragma once

// JSON-lines manifests: one object per utterance with keys
// id, audio_path, speaker_id, word and optional alignment_path, group.

#include <optional>
#include <string>
#include <vector>

namespace dutavc {

struct ManifestEntry {
  std::string id;
  std::string audio_path;
  std::string speaker_id;
  std::string word;
  std::optional<std::string> alignment_path;
  std::optional<std::string> group;
  /// Extra keys written by the augmentation generator.
  std::optional<std::string> source_id;
  std::optional<std::string> target_id;

  bool operator==(const ManifestEntry&) const = default;
};

/// Relative paths are resolved against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::string manifest_line(const ManifestEntry& e);

}  // namespace dutavc
