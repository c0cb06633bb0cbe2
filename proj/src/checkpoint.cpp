#include "vcdi/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "vcdi/errors.hpp"
#include "vcdi/hash.hpp"

namespace vcdi {

namespace {

constexpr char kMagic[8] = {'V', 'C', 'D', 'I', 'C', 'K', 'P', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  put_u32(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw IoError("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i]))
           << (8 * i);
    }
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i]))
           << (8 * i);
    }
    pos += 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return f;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string serialize(const Checkpoint& ck) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, ck.format_version);
  put_u64(out, ck.config_hash);
  put_u64(out, ck.step);
  put_u64(out, ck.seed);
  put_u64(out, ck.arrays.size());
  for (const auto& [name, m] : ck.arrays) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u32(out, static_cast<std::uint32_t>(m.rows));
    put_u32(out, static_cast<std::uint32_t>(m.cols));
    for (double v : m.d) put_f32(out, static_cast<float>(v));
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string bytes = serialize(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  Reader r{bytes};
  if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw IoError("checkpoint: bad magic in " + path);
  }
  Checkpoint ck;
  ck.format_version = r.u32();
  if (ck.format_version != 1) {
    throw IoError("checkpoint: unsupported format version " +
                  std::to_string(ck.format_version));
  }
  ck.config_hash = r.u64();
  ck.step = r.u64();
  ck.seed = r.u64();
  const std::uint64_t n = r.u64();
  for (std::uint64_t e = 0; e < n; ++e) {
    const std::uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    Mat m(rows, cols);
    for (auto& v : m.d) v = static_cast<double>(r.f32());
    if (!ck.arrays.emplace(std::move(name), std::move(m)).second) {
      throw IoError("checkpoint: duplicate array name in " + path);
    }
  }
  if (r.pos != bytes.size()) throw IoError("checkpoint: trailing bytes in " + path);
  return ck;
}

void store_to_checkpoint(const ParamStore& store, Checkpoint& ck) {
  for (const std::string& name : store.names()) {
    ck.arrays[name] = store.value(name);
  }
}

void load_into_store(const Checkpoint& ck, ParamStore& store) {
  for (const std::string& name : store.names()) {
    const auto it = ck.arrays.find(name);
    if (it == ck.arrays.end()) {
      throw ValidationError("checkpoint: missing parameter " + name);
    }
    Mat& dst = store.value(name);
    if (!dst.same_shape(it->second)) {
      throw ValidationError("checkpoint: shape mismatch for " + name);
    }
    dst = it->second;
  }
}

std::uint64_t checkpoint_digest(const std::string& path) {
  const std::string bytes = read_file(path);
  return fnv1a(bytes.data(), bytes.size());
}

}  // namespace vcdi
