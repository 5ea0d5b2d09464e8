#include "hpm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "hpm/stats.hpp"

namespace hpm {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  buf.append(reinterpret_cast<const char*>(&v), 4);
}
void put_u64(std::string& buf, std::uint64_t v) {
  buf.append(reinterpret_cast<const char*>(&v), 8);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw std::runtime_error(std::string("checkpoint truncated reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  std::string buf;
  buf.append("HPMK", 4);
  put_u32(buf, kVersion);
  put_u64(buf, data.config_text.size());
  buf.append(data.config_text);
  put_u64(buf, static_cast<std::uint64_t>(data.epochs_done));
  put_u64(buf, data.adam_step);
  put_u64(buf, data.ema_updates);
  for (const auto& state : data.rng_states)
    for (std::uint64_t w : state) put_u64(buf, w);
  put_u32(buf, static_cast<std::uint32_t>(data.records.size()));
  for (const auto& rec : data.records) {
    put_u32(buf, static_cast<std::uint32_t>(rec.name.size()));
    buf.append(rec.name);
    put_u32(buf, static_cast<std::uint32_t>(rec.shape.size()));
    i64 numel = 1;
    for (i64 d : rec.shape) {
      put_u32(buf, static_cast<std::uint32_t>(d));
      numel *= d;
    }
    if (static_cast<std::size_t>(numel) != rec.data.size())
      throw std::invalid_argument("checkpoint: record '" + rec.name + "' shape/data mismatch");
    buf.append(reinterpret_cast<const char*>(rec.data.data()), rec.data.size() * sizeof(float));
  }
  const std::uint32_t crc = stats::crc32(buf.data(), buf.size());
  put_u32(buf, crc);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint for write: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 8 || std::memcmp(buf.data(), "HPMK", 4) != 0)
    throw std::runtime_error("not an HPMK checkpoint: " + path);
  std::uint32_t version;
  std::memcpy(&version, buf.data() + 4, 4);
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                             " in " + path);
  if (buf.size() < 12) throw std::runtime_error("checkpoint truncated: " + path);
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  const std::uint32_t actual_crc = stats::crc32(buf.data(), buf.size() - 4);
  if (stored_crc != actual_crc)
    throw std::runtime_error("checkpoint checksum mismatch (truncated or corrupt): " + path);

  Reader r{buf};
  r.pos = 8;  // past magic + version
  CheckpointData out;
  const std::uint64_t cfg_len = r.u64("config length");
  out.config_text = r.bytes(cfg_len, "config text");
  out.epochs_done = static_cast<std::int64_t>(r.u64("epoch counter"));
  out.adam_step = r.u64("optimizer step");
  out.ema_updates = r.u64("ema counter");
  for (auto& state : out.rng_states)
    for (auto& w : state) w = r.u64("rng state");
  const std::uint32_t n_records = r.u32("record count");
  out.records.reserve(n_records);
  for (std::uint32_t i = 0; i < n_records; ++i) {
    ParamRecord rec;
    const std::uint32_t name_len = r.u32("record name length");
    rec.name = r.bytes(name_len, "record name");
    const std::uint32_t ndim = r.u32("record rank");
    i64 numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      rec.shape.push_back(static_cast<i64>(r.u32("record dim")));
      numel *= rec.shape.back();
    }
    const std::string raw = r.bytes(static_cast<std::size_t>(numel) * sizeof(float), "record data");
    rec.data.resize(static_cast<std::size_t>(numel));
    std::memcpy(rec.data.data(), raw.data(), raw.size());
    out.records.push_back(std::move(rec));
  }
  if (r.pos != buf.size() - 4)
    throw std::runtime_error("checkpoint has trailing bytes: " + path);
  return out;
}

}  // namespace hpm
