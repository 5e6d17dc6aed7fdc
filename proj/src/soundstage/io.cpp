#include "soundstage/io.h"

#include <cstring>
#include <fstream>
#include <sstream>

#include "soundstage/common.h"

namespace soundstage::io {

namespace {

void put_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void get_bytes(std::istream& is, void* p, size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  check(static_cast<size_t>(is.gcount()) == n,
        std::string("tensor io: truncated ") + what);
}

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  put_bytes(os, b, 4);
}

uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  get_bytes(is, b, 4, what);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

void put_u64(std::ostream& os, uint64_t v) {
  put_u32(os, static_cast<uint32_t>(v));
  put_u32(os, static_cast<uint32_t>(v >> 32));
}

uint64_t get_u64(std::istream& is, const char* what) {
  uint64_t lo = get_u32(is, what);
  uint64_t hi = get_u32(is, what);
  return lo | hi << 32;
}

void put_f64(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}

double get_f64(std::istream& is, const char* what) {
  uint64_t bits = get_u64(is, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  put_bytes(os, s.data(), s.size());
}

std::string get_string(std::istream& is, const char* what) {
  uint32_t n = get_u32(is, what);
  check(n <= (1u << 26), std::string("tensor io: unreasonable string length in ") + what);
  std::string s(n, '\0');
  if (n) get_bytes(is, s.data(), n, what);
  return s;
}

std::string strip(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void write_tensor_block(std::ostream& os, const Shape& shape,
                        const std::vector<double>& data, int dtype) {
  check(dtype == kDtypeF32 || dtype == kDtypeF64, "tensor io: unknown dtype");
  check(!shape.empty() && shape.size() <= 8, "tensor io: rank must be in [1,8]");
  size_t numel = 1;
  for (int d : shape) {
    check(d >= 1, "tensor io: dims must be positive");
    numel *= static_cast<size_t>(d);
  }
  check(numel == data.size(), "tensor io: payload length mismatch");
  put_bytes(os, "VDT1", 4);
  unsigned char hdr[2] = {static_cast<unsigned char>(dtype),
                          static_cast<unsigned char>(shape.size())};
  put_bytes(os, hdr, 2);
  for (int d : shape) put_u32(os, static_cast<uint32_t>(d));
  if (dtype == kDtypeF32) {
    for (double v : data) {
      float f = static_cast<float>(v);
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(os, bits);
    }
  } else {
    for (double v : data) put_f64(os, v);
  }
}

TensorData read_tensor_block(std::istream& is) {
  char magic[4];
  get_bytes(is, magic, 4, "magic");
  check(std::memcmp(magic, "VDT1", 4) == 0, "tensor io: bad magic");
  unsigned char hdr[2];
  get_bytes(is, hdr, 2, "header");
  int dtype = hdr[0];
  int rank = hdr[1];
  check(dtype == kDtypeF32 || dtype == kDtypeF64, "tensor io: unknown dtype");
  check(rank >= 1 && rank <= 8, "tensor io: rank must be in [1,8]");
  TensorData out;
  size_t numel = 1;
  for (int i = 0; i < rank; ++i) {
    uint32_t d = get_u32(is, "dims");
    check(d >= 1 && d <= (1u << 24), "tensor io: dim out of range");
    out.shape.push_back(static_cast<int>(d));
    numel *= d;
  }
  check(numel <= (1ull << 28), "tensor io: tensor too large");
  out.data.resize(numel);
  if (dtype == kDtypeF32) {
    for (size_t i = 0; i < numel; ++i) {
      uint32_t bits = get_u32(is, "payload");
      float f;
      std::memcpy(&f, &bits, 4);
      out.data[i] = f;
    }
  } else {
    for (size_t i = 0; i < numel; ++i) out.data[i] = get_f64(is, "payload");
  }
  return out;
}

void write_tensor_file(const std::string& path, const Shape& shape,
                       const std::vector<double>& data, int dtype) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(os.good(), "tensor io: cannot open for writing: " + path);
  write_tensor_block(os, shape, data, dtype);
  check(os.good(), "tensor io: write failed: " + path);
}

TensorData read_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "tensor io: cannot open: " + path);
  TensorData t = read_tensor_block(is);
  is.peek();
  check(is.eof(), "tensor io: trailing bytes in " + path);
  return t;
}

void write_embedding_index(const std::string& path, const std::vector<std::string>& ids) {
  std::ofstream os(path, std::ios::trunc);
  check(os.good(), "index io: cannot open for writing: " + path);
  for (size_t i = 0; i < ids.size(); ++i) {
    check(ids[i].find_first_of(" \t\r\n") == std::string::npos,
          "index io: id contains whitespace: " + ids[i]);
    os << ids[i] << ' ' << i << '\n';
  }
}

std::map<std::string, int> read_embedding_index(const std::string& path) {
  std::ifstream is(path);
  check(is.good(), "index io: cannot open: " + path);
  std::map<std::string, int> out;
  std::string line;
  while (std::getline(is, line)) {
    line = strip(line);
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id;
    int row;
    check(static_cast<bool>(ss >> id >> row), "index io: malformed line: " + line);
    check(!out.count(id), "index io: duplicate id: " + id);
    out[id] = row;
  }
  return out;
}

Config Config::parse_string(const std::string& text) {
  Config cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = strip(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    check(eq != std::string::npos,
          "config: missing '=' on line " + std::to_string(lineno));
    std::string key = strip(line.substr(0, eq));
    std::string value = strip(line.substr(eq + 1));
    check(!key.empty(), "config: empty key on line " + std::to_string(lineno));
    cfg.entries_[key] = value;
  }
  return cfg;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream is(path);
  check(is.good(), "config: cannot open: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_string(ss.str());
}

bool Config::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string Config::get_string(const std::string& key, const std::string& def) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? def : it->second;
}

int Config::get_int(const std::string& key, int def) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  try {
    size_t pos;
    int v = std::stoi(it->second, &pos);
    check(pos == it->second.size(), "config: bad integer for " + key);
    return v;
  } catch (const InputError&) {
    throw;
  } catch (const std::exception&) {
    throw InputError("config: bad integer for " + key);
  }
}

double Config::get_double(const std::string& key, double def) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  try {
    size_t pos;
    double v = std::stod(it->second, &pos);
    check(pos == it->second.size(), "config: bad number for " + key);
    return v;
  } catch (const InputError&) {
    throw;
  } catch (const std::exception&) {
    throw InputError("config: bad number for " + key);
  }
}

bool Config::get_bool(const std::string& key, bool def) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  const std::string& v = it->second;
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InputError("config: bad bool for " + key);
}

uint64_t Config::get_u64(const std::string& key, uint64_t def) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  try {
    size_t pos;
    uint64_t v = std::stoull(it->second, &pos);
    check(pos == it->second.size(), "config: bad integer for " + key);
    return v;
  } catch (const InputError&) {
    throw;
  } catch (const std::exception&) {
    throw InputError("config: bad integer for " + key);
  }
}

void Config::set(const std::string& key, const std::string& value) {
  check(!strip(key).empty(), "config: empty key");
  entries_[strip(key)] = strip(value);
}

std::string Config::serialize() const {
  std::ostringstream os;
  for (const auto& [k, v] : entries_) os << k << " = " << v << '\n';
  return os.str();
}

void write_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(os.good(), "checkpoint: cannot open for writing: " + path);
  put_bytes(os, "VDCK", 4);
  put_u32(os, c.version);
  put_string(os, c.config_text);
  put_u64(os, static_cast<uint64_t>(c.step));
  put_u32(os, static_cast<uint32_t>(c.phase));
  put_u64(os, c.rng_state);
  put_u32(os, static_cast<uint32_t>(c.params.size()));
  for (const auto& [name, t] : c.params) {
    put_string(os, name);
    write_tensor_block(os, t.shape, t.data, kDtypeF64);
  }
  put_u32(os, static_cast<uint32_t>(c.opt.size()));
  for (const auto& [name, m] : c.opt) {
    check(m.m.size() == m.v.size(), "checkpoint: moment size mismatch for " + name);
    put_string(os, name);
    put_u64(os, static_cast<uint64_t>(m.t));
    put_u32(os, static_cast<uint32_t>(m.m.size()));
    for (double v : m.m) put_f64(os, v);
    for (double v : m.v) put_f64(os, v);
  }
  check(os.good(), "checkpoint: write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "checkpoint: cannot open: " + path);
  char magic[4];
  get_bytes(is, magic, 4, "magic");
  check(std::memcmp(magic, "VDCK", 4) == 0, "checkpoint: bad magic");
  Checkpoint c;
  c.version = get_u32(is, "version");
  check(c.version == 1, "checkpoint: unsupported version");
  c.config_text = get_string(is, "config");
  c.step = static_cast<int64_t>(get_u64(is, "step"));
  c.phase = static_cast<int32_t>(get_u32(is, "phase"));
  c.rng_state = get_u64(is, "rng state");
  uint32_t n_params = get_u32(is, "param count");
  for (uint32_t i = 0; i < n_params; ++i) {
    std::string name = get_string(is, "param name");
    check(!c.params.count(name), "checkpoint: duplicate parameter " + name);
    c.params[name] = read_tensor_block(is);
  }
  uint32_t n_opt = get_u32(is, "optimizer count");
  for (uint32_t i = 0; i < n_opt; ++i) {
    std::string name = get_string(is, "optimizer name");
    check(!c.opt.count(name), "checkpoint: duplicate optimizer state " + name);
    Checkpoint::Moments m;
    m.t = static_cast<int64_t>(get_u64(is, "optimizer step"));
    uint32_t len = get_u32(is, "moment length");
    check(len <= (1u << 28), "checkpoint: moment vector too large");
    m.m.resize(len);
    m.v.resize(len);
    for (uint32_t j = 0; j < len; ++j) m.m[j] = get_f64(is, "moments");
    for (uint32_t j = 0; j < len; ++j) m.v[j] = get_f64(is, "moments");
    c.opt[name] = std::move(m);
  }
  is.peek();
  check(is.eof(), "checkpoint: trailing bytes in " + path);
  return c;
}

void store_params(const ParamStore& ps, Checkpoint& c) {
  for (const auto& [name, t] : ps.raw()) {
    TensorData td;
    td.shape = t.shape();
    td.data = t.data();
    c.params[name] = std::move(td);
  }
}

int load_params(const Checkpoint& c, ParamStore& ps, const std::string& prefix) {
  int loaded = 0;
  for (const auto& [name, td] : c.params) {
    if (name.rfind(prefix, 0) != 0) continue;
    if (!ps.has(name)) continue;
    Tensor t = ps.get(name);
    check(t.shape() == td.shape, "checkpoint: shape mismatch for " + name);
    t.data() = td.data;
    ++loaded;
  }
  return loaded;
}

void store_optimizer(const AdamW& opt, Checkpoint& c) {
  for (const auto& [name, st] : opt.states()) {
    Checkpoint::Moments m;
    m.m = st.m;
    m.v = st.v;
    m.t = st.t;
    c.opt[name] = std::move(m);
  }
}

void load_optimizer(const Checkpoint& c, AdamW& opt) {
  opt.states().clear();
  for (const auto& [name, m] : c.opt) {
    AdamW::State st;
    st.m = m.m;
    st.v = m.v;
    st.t = m.t;
    opt.states()[name] = std::move(st);
  }
}

}  // namespace soundstage::io
