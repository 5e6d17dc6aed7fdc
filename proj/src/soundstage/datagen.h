#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "soundstage/dsp.h"
#include "soundstage/manifest.h"

namespace soundstage::datagen {

struct SynthesisSpec {
  double snr_min_db = 2.0;
  double snr_max_db = 10.0;
  double rir_probability = 0.5;
  uint64_t rng_seed = 0;
};

struct RirEntry {
  std::string id;
  dsp::Waveform w;
};

struct SynthesisResult {
  std::vector<ManifestEntry> manifest;
  std::vector<std::string> errors;  // "<id>: <what>" per failed entry
};

using AudioLoader = std::function<dsp::Waveform(const std::string& path)>;
using AudioWriter = std::function<void(const std::string& rel_path, const dsp::Waveform&)>;

// One noisy clip per clean entry: optional RIR on the clean speech (reverb
// before the scene mix), then noise mixed at a uniformly drawn SNR. The RNG
// is split per entry index from spec.rng_seed, so results do not depend on
// processing order. DSP failures are recorded per entry, not fatal.
SynthesisResult synthesize_corpus(const std::vector<ManifestEntry>& clean,
                                  const std::vector<ManifestEntry>& noise,
                                  const std::vector<RirEntry>& rirs,
                                  const SynthesisSpec& spec,
                                  const AudioLoader& load,
                                  const AudioWriter& write);

// Lowercase, strip punctuation, collapse runs of whitespace, trim.
std::string normalize_text(const std::string& s);

struct EditCounts {
  int edits = 0;      // substitutions + deletions + insertions
  int ref_words = 0;  // reference length after normalization
};

// Word-level Levenshtein on normalized text. Throws if the reference is
// empty after normalization (WER undefined).
EditCounts word_edit_counts(const std::string& ref, const std::string& hyp);
double word_error_rate(const std::string& ref, const std::string& hyp);

struct FilterResult {
  std::vector<ManifestEntry> kept;
  std::vector<ManifestEntry> discarded;
  std::vector<std::string> discard_reasons;  // parallel to discarded
};

// Keeps entries with WER(transcript, hypothesis) <= threshold. Entries with
// no hypothesis go to discarded with reason "no-hypothesis".
FilterResult filter_by_wer(const std::vector<ManifestEntry>& entries, double threshold);

// Samples in [start_sec, end_sec); length = round((end-start) * sample_rate).
dsp::Waveform truncate_to_speech(const dsp::Waveform& w, double start_sec, double end_sec);

}  // namespace soundstage::datagen
