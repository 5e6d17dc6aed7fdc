#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace soundstage {

// One corpus clip. Serialized as one JSON object per line; optional fields
// are simply absent. `audio_path` is relative to the manifest's directory.
struct ManifestEntry {
  std::string id;
  std::string audio_path;
  std::string transcript;
  std::optional<std::string> hypothesis_transcript;
  std::optional<std::pair<double, double>> speech_span;  // seconds
  std::optional<std::string> env_caption;
  std::optional<double> snr_db;
  std::optional<std::string> rir_id;

  bool operator==(const ManifestEntry&) const = default;
};

ManifestEntry entry_from_json_line(const std::string& line);
std::string entry_to_json_line(const ManifestEntry& e);

std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

}  // namespace soundstage
