#include "soundstage/manifest.h"

#include <fstream>

#include "json.hpp"
#include "soundstage/common.h"

namespace soundstage {

// ordered_json keeps insertion order, so serialized manifests are
// byte-stable across runs (determinism is part of the datagen contract)
using json = nlohmann::ordered_json;

ManifestEntry entry_from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("manifest: bad JSON line: ") + e.what());
  }
  check(j.is_object(), "manifest: line is not a JSON object");
  ManifestEntry e;
  check(j.contains("id") && j["id"].is_string(), "manifest: missing string field 'id'");
  e.id = j["id"].get<std::string>();
  check(j.contains("audio_path") && j["audio_path"].is_string(),
        "manifest: missing string field 'audio_path' in entry " + e.id);
  e.audio_path = j["audio_path"].get<std::string>();
  e.transcript = j.value("transcript", std::string());
  if (j.contains("hypothesis_transcript"))
    e.hypothesis_transcript = j["hypothesis_transcript"].get<std::string>();
  if (j.contains("speech_span")) {
    const auto& s = j["speech_span"];
    check(s.is_array() && s.size() == 2, "manifest: speech_span must be [start, end] in " + e.id);
    double start = s[0].get<double>(), end = s[1].get<double>();
    check(start >= 0.0 && start < end, "manifest: need 0 <= start < end in " + e.id);
    e.speech_span = {start, end};
  }
  if (j.contains("env_caption")) e.env_caption = j["env_caption"].get<std::string>();
  if (j.contains("snr_db")) e.snr_db = j["snr_db"].get<double>();
  if (j.contains("rir_id")) e.rir_id = j["rir_id"].get<std::string>();
  return e;
}

std::string entry_to_json_line(const ManifestEntry& e) {
  json j;
  j["id"] = e.id;
  j["audio_path"] = e.audio_path;
  j["transcript"] = e.transcript;
  if (e.hypothesis_transcript) j["hypothesis_transcript"] = *e.hypothesis_transcript;
  if (e.speech_span) j["speech_span"] = {e.speech_span->first, e.speech_span->second};
  if (e.env_caption) j["env_caption"] = *e.env_caption;
  if (e.snr_db) j["snr_db"] = *e.snr_db;
  if (e.rir_id) j["rir_id"] = *e.rir_id;
  return j.dump();
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "manifest: cannot open " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(entry_from_json_line(line));
    } catch (const InputError& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream f(path, std::ios::trunc);
  check(f.good(), "manifest: cannot write " + path);
  for (const auto& e : entries) f << entry_to_json_line(e) << "\n";
  check(f.good(), "manifest: write failed " + path);
}

}  // namespace soundstage
