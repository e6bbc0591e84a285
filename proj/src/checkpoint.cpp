#include "once/checkpoint.h"

#include <fstream>
#include <map>

#include "once/bytes.h"

namespace once {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open ", path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail("write failed for ", path);
}

static constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ParamRefsT<float>& params) {
  std::string out;
  out += "ONCE";
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<uint32_t>(params.size()));
  for (const auto* p : params) {
    put_u32(out, static_cast<uint32_t>(p->name.size()));
    out += p->name;
    put_u32(out, static_cast<uint32_t>(p->value.shape.size()));
    for (int d : p->value.shape) put_u32(out, static_cast<uint32_t>(d));
    for (float v : p->value.data) put_f32(out, v);
  }
  write_file(path, out);
}

void load_checkpoint(const std::string& path, ParamRefsT<float>& params) {
  const std::string buf = read_file(path);
  ByteReader r(buf, "checkpoint " + path);
  if (buf.size() < 4 || buf.compare(0, 4, "ONCE") != 0) {
    fail("checkpoint ", path, ": bad magic");
  }
  r.bytes(4);
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    fail("checkpoint ", path, ": unsupported version ", version);
  }
  const uint32_t count = r.u32();

  struct Entry {
    std::vector<int> shape;
    std::vector<float> data;
  };
  std::map<std::string, Entry> entries;
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.u32());
    Entry e;
    const uint32_t rank = r.u32();
    size_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      e.shape.push_back(static_cast<int>(r.u32()));
      numel *= static_cast<size_t>(e.shape.back());
    }
    e.data.resize(numel);
    r.f32_block(e.data.data(), numel);
    if (!entries.emplace(name, std::move(e)).second) {
      fail("checkpoint ", path, ": duplicate parameter ", name);
    }
  }
  r.expect_done();

  for (auto* p : params) {
    auto it = entries.find(p->name);
    if (it == entries.end()) {
      fail("checkpoint ", path, ": missing parameter ", p->name);
    }
    if (it->second.shape != p->value.shape) {
      fail("checkpoint ", path, ": parameter ", p->name, " has shape mismatch");
    }
    p->value.data = std::move(it->second.data);
    entries.erase(it);
  }
  if (!entries.empty()) {
    fail("checkpoint ", path, ": unexpected parameter ", entries.begin()->first);
  }
}

}  // namespace once
