#include <cstdio>
#include <string>

#include "once/bytes.h"
#include "once/encoder.h"

namespace once::encoder {

namespace {
constexpr char kMagic[4] = {'O', 'N', 'C', 'H'};
constexpr uint32_t kVersion = 1;
}  // namespace

void save_cache(const std::string& path, const HiddenCache& cache) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  out.append(reinterpret_cast<const char*>(cache.fingerprint.data()),
             cache.fingerprint.size());
  put_u32(out, static_cast<uint32_t>(cache.entries.size()));
  for (const auto& [id, tensor] : cache.entries) {
    check_2d(tensor, "save_cache", "entry");
    put_u32(out, static_cast<uint32_t>(id.size()));
    out.append(id);
    put_u32(out, static_cast<uint32_t>(tensor.shape[0]));
    put_u32(out, static_cast<uint32_t>(tensor.shape[1]));
    for (float v : tensor.data) put_f32(out, v);
  }
  write_file(path, out);
}

HiddenCache load_cache(const std::string& path) {
  const std::string buf = read_file(path);
  ByteReader r(buf, path);
  const auto magic = r.bytes(4);
  if (std::string(magic.begin(), magic.end()) != std::string(kMagic, 4)) {
    fail(path, ": not a hidden-state cache file (bad magic)");
  }
  const uint32_t version = r.u32();
  if (version != kVersion) {
    fail(path, ": unsupported cache version ", version);
  }
  HiddenCache cache;
  const auto fp = r.bytes(cache.fingerprint.size());
  std::copy(fp.begin(), fp.end(), cache.fingerprint.begin());
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t id_len = r.u32();
    const auto id_bytes = r.bytes(id_len);
    std::string id(id_bytes.begin(), id_bytes.end());
    const uint32_t seq_len = r.u32();
    const uint32_t width = r.u32();
    if (seq_len == 0 || width == 0) {
      fail(path, ": cache entry '", id, "' has an empty tensor");
    }
    TensorT<float> t({static_cast<int>(seq_len), static_cast<int>(width)});
    r.f32_block(t.data.data(), t.data.size());
    if (!cache.entries.emplace(std::move(id), std::move(t)).second) {
      fail(path, ": duplicate cache entry id");
    }
  }
  r.expect_done();
  return cache;
}

HiddenCache build_cache(const corpus::Corpus& corpus, EncoderT<float>& enc) {
  HiddenCache cache;
  cache.fingerprint = enc.frozen_fingerprint(corpus.vocab, corpus.tmpl);
  if (enc.frozen_below() == 0) {
    std::fprintf(stderr,
                 "warning: no frozen layers, hidden-state cache will be empty\n");
    return cache;
  }
  for (const auto& [id, item] : corpus.contents) {
    if (item.tokens.empty()) {
      fail("build_cache: content '", id, "' has no tokens; finalize the corpus first");
    }
    cache.entries.emplace(id, enc.boundary_activations(item.tokens));
  }
  return cache;
}

}  // namespace once::encoder
