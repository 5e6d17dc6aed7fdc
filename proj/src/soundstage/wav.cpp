#include "soundstage/wav.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "soundstage/common.h"

namespace soundstage {

namespace {

uint32_t read_u32(const char* p) {
  uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

uint16_t read_u16(const char* p) {
  uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

void put_u32(std::string& s, uint32_t v) { s.append(reinterpret_cast<const char*>(&v), 4); }
void put_u16(std::string& s, uint16_t v) { s.append(reinterpret_cast<const char*>(&v), 2); }

}  // namespace

dsp::Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "wav: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  check(bytes.size() >= 44, "wav: file too small: " + path);
  check(bytes.compare(0, 4, "RIFF") == 0 && bytes.compare(8, 4, "WAVE") == 0,
        "wav: not a RIFF/WAVE file: " + path);

  int sample_rate = 0;
  int bits = 0, channels = 0, format = 0;
  const char* data = nullptr;
  size_t data_len = 0;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    std::string id = bytes.substr(pos, 4);
    uint32_t sz = read_u32(bytes.data() + pos + 4);
    pos += 8;
    if (pos + sz > bytes.size()) sz = static_cast<uint32_t>(bytes.size() - pos);
    if (id == "fmt ") {
      check(sz >= 16, "wav: malformed fmt chunk: " + path);
      format = read_u16(bytes.data() + pos);
      channels = read_u16(bytes.data() + pos + 2);
      sample_rate = static_cast<int>(read_u32(bytes.data() + pos + 4));
      bits = read_u16(bytes.data() + pos + 14);
    } else if (id == "data") {
      data = bytes.data() + pos;
      data_len = sz;
    }
    pos += sz + (sz & 1);  // chunks are word-aligned
  }
  check(data != nullptr, "wav: no data chunk: " + path);
  check(format == 1, "wav: only PCM supported: " + path);
  check(bits == 16, "wav: only 16-bit supported: " + path);
  check(channels == 1, "wav: only mono supported: " + path);
  check(sample_rate > 0, "wav: bad sample rate: " + path);

  dsp::Waveform w;
  w.sample_rate_hz = sample_rate;
  size_t n = data_len / 2;
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    int16_t s;
    std::memcpy(&s, data + i * 2, 2);
    w.samples[i] = static_cast<double>(s) / 32768.0;
  }
  return w;
}

void write_wav(const std::string& path, const dsp::Waveform& w) {
  check(!w.samples.empty(), "wav: refusing to write empty waveform");
  check(w.sample_rate_hz > 0, "wav: bad sample rate");
  std::string out;
  uint32_t data_len = static_cast<uint32_t>(w.samples.size() * 2);
  out.reserve(44 + data_len);
  out += "RIFF";
  put_u32(out, 36 + data_len);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<uint32_t>(w.sample_rate_hz));
  put_u32(out, static_cast<uint32_t>(w.sample_rate_hz) * 2);  // byte rate
  put_u16(out, 2);   // block align
  put_u16(out, 16);  // bits
  out += "data";
  put_u32(out, data_len);
  for (double v : w.samples) {
    // same 1/32768 scale as the reader so a round-trip only quantizes
    long q = std::lround(std::clamp(v, -1.0, 1.0) * 32768.0);
    int16_t s = static_cast<int16_t>(std::clamp(q, -32768L, 32767L));
    out.append(reinterpret_cast<const char*>(&s), 2);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "wav: cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  check(f.good(), "wav: write failed " + path);
}

}  // namespace soundstage
