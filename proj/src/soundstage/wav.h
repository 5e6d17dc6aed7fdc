#pragma once

#include <string>

#include "soundstage/dsp.h"

namespace soundstage {

// 16-bit PCM mono little-endian RIFF only. Anything else is rejected with a
// format error rather than silently converted.
dsp::Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const dsp::Waveform& w);

}  // namespace soundstage
