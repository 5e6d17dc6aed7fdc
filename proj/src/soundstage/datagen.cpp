#include "soundstage/datagen.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "soundstage/common.h"
#include "soundstage/rng.h"

namespace soundstage::datagen {

SynthesisResult synthesize_corpus(const std::vector<ManifestEntry>& clean,
                                  const std::vector<ManifestEntry>& noise,
                                  const std::vector<RirEntry>& rirs,
                                  const SynthesisSpec& spec,
                                  const AudioLoader& load,
                                  const AudioWriter& write) {
  check(!clean.empty(), "synthesize: empty clean pool");
  check(!noise.empty(), "synthesize: empty noise pool");
  check(spec.snr_min_db <= spec.snr_max_db, "synthesize: snr_min must not exceed snr_max");
  check(spec.rir_probability >= 0.0 && spec.rir_probability <= 1.0,
        "synthesize: rir_probability must lie in [0,1]");

  SynthesisResult out;
  for (size_t i = 0; i < clean.size(); ++i) {
    const auto& c = clean[i];
    // fixed draw order per entry; entry streams are independent of each other
    Rng rng = Rng::from_stream(spec.rng_seed, static_cast<uint64_t>(i));
    int noise_idx = rng.uniform_int(static_cast<int>(noise.size()));
    double snr = rng.uniform(spec.snr_min_db, spec.snr_max_db);
    bool use_rir = rng.uniform() < spec.rir_probability && !rirs.empty();
    int rir_idx = rirs.empty() ? 0 : rng.uniform_int(static_cast<int>(rirs.size()));
    try {
      dsp::Waveform speech = load(c.audio_path);
      if (c.speech_span)
        speech = truncate_to_speech(speech, c.speech_span->first, c.speech_span->second);
      if (use_rir) speech = dsp::apply_rir(speech, rirs[static_cast<size_t>(rir_idx)].w);
      dsp::Waveform noisy = dsp::mix_at_snr(speech, load(noise[static_cast<size_t>(noise_idx)].audio_path), snr);

      ManifestEntry e;
      e.id = c.id;
      e.audio_path = c.id + ".wav";
      e.transcript = c.transcript;
      const auto& n = noise[static_cast<size_t>(noise_idx)];
      if (n.env_caption)
        e.env_caption = n.env_caption;
      else if (!n.transcript.empty())
        e.env_caption = n.transcript;
      e.snr_db = snr;
      if (use_rir) e.rir_id = rirs[static_cast<size_t>(rir_idx)].id;
      write(e.audio_path, noisy);
      out.manifest.push_back(std::move(e));
    } catch (const std::exception& ex) {
      out.errors.push_back(c.id + ": " + ex.what());
    }
  }
  return out;
}

std::string normalize_text(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char ch : s) {
    if (std::isalnum(ch)) {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(std::tolower(ch)));
    } else if (std::isspace(ch)) {
      pending_space = true;
    }
    // punctuation is dropped entirely ("don't" -> "dont")
  }
  return out;
}

namespace {

std::vector<std::string> words(const std::string& normalized) {
  std::vector<std::string> out;
  std::istringstream ss(normalized);
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

}  // namespace

EditCounts word_edit_counts(const std::string& ref, const std::string& hyp) {
  auto r = words(normalize_text(ref));
  auto h = words(normalize_text(hyp));
  check(!r.empty(), "wer: empty reference after normalization");
  size_t n = r.size(), m = h.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (r[i - 1] == h[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return {prev[m], static_cast<int>(n)};
}

double word_error_rate(const std::string& ref, const std::string& hyp) {
  EditCounts c = word_edit_counts(ref, hyp);
  return static_cast<double>(c.edits) / c.ref_words;
}

FilterResult filter_by_wer(const std::vector<ManifestEntry>& entries, double threshold) {
  FilterResult out;
  for (const auto& e : entries) {
    if (!e.hypothesis_transcript) {
      out.discarded.push_back(e);
      out.discard_reasons.push_back("no-hypothesis");
      continue;
    }
    double wer = word_error_rate(e.transcript, *e.hypothesis_transcript);
    if (wer <= threshold) {
      out.kept.push_back(e);
    } else {
      out.discarded.push_back(e);
      std::ostringstream r;
      r << "wer " << wer << " above threshold " << threshold;
      out.discard_reasons.push_back(r.str());
    }
  }
  return out;
}

dsp::Waveform truncate_to_speech(const dsp::Waveform& w, double start_sec, double end_sec) {
  check(end_sec > start_sec && start_sec >= 0.0, "truncate: need 0 <= start < end");
  long i0 = std::lround(start_sec * w.sample_rate_hz);
  long len = std::lround((end_sec - start_sec) * w.sample_rate_hz);
  check(len >= 1, "truncate: empty span");
  check(static_cast<size_t>(i0 + len) <= w.samples.size(), "truncate: span beyond clip end");
  dsp::Waveform out;
  out.sample_rate_hz = w.sample_rate_hz;
  out.samples.assign(w.samples.begin() + i0, w.samples.begin() + i0 + len);
  return out;
}

}  // namespace soundstage::datagen
