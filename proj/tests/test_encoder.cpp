#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "once/bytes.h"
#include "once/checkpoint.h"
#include "once/corpus.h"
#include "once/encoder.h"
#include "support/grad_check.h"
#include "support/test_util.h"

using once::Rng;
using once::TensorT;
using once::encoder::EncoderConfig;
using once::encoder::EncoderT;
using once::encoder::LoraConfig;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.width = 8;
  cfg.heads = 2;
  cfg.ffn_width = 16;
  cfg.out_dim = 4;
  cfg.max_len = 6;
  cfg.tuned_layers = 2;
  return cfg;
}

once::corpus::Corpus tiny_corpus() {
  once::corpus::Corpus c;
  auto add = [&c](const std::string& id, const std::string& title,
                  const std::string& cat) {
    once::corpus::ContentItem item;
    item.id = id;
    item.fields["title"] = title;
    item.fields["category"] = cat;
    c.contents[id] = item;
  };
  add("C1", "alpha beta gamma", "sports");
  add("C2", "beta delta", "finance");
  add("C3", "gamma alpha alpha", "sports");
  c.finalize(once::corpus::ContentTemplate::news_default(), 1, 16);
  return c;
}

template <class S>
std::vector<once::ParameterT<S>*> trainable(EncoderT<S>& enc) {
  std::vector<once::ParameterT<S>*> out;
  for (auto* p : enc.params()) {
    if (!p->frozen) out.push_back(p);
  }
  return out;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("encoder config validation rejects bad shapes") {
  auto cfg = tiny_config();
  cfg.width = 9;  // not divisible by 2 heads
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("divisible"), once::Error);

  cfg = tiny_config();
  cfg.out_dim = 100;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("exceeds"), once::Error);

  cfg = tiny_config();
  cfg.tuned_layers = 3;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("outside"), once::Error);

  cfg = tiny_config();
  cfg.lora = LoraConfig{0, 16.0};
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("rank"), once::Error);
}

TEST_CASE("pooling over identical rows gives uniform weights and row 0") {
  Rng rng(7);
  TensorT<double> z({3, 4});
  for (int j = 0; j < 4; ++j) {
    const double v = rng.uniform() - 0.5;
    for (int i = 0; i < 3; ++i) z.at(i, j) = v;
  }
  auto wa = TensorT<double>::glorot(4, 4, rng);
  TensorT<double> ba({4});
  auto q = TensorT<double>::glorot(4, 1, rng);
  q.shape = {4};

  once::AdditivePoolCtxT<double> ctx;
  TensorT<double> out;
  once::additive_pool_fwd(z, wa, ba, q, ctx, out);

  for (double a : ctx.alpha) CHECK(a == doctest::Approx(1.0 / 3).epsilon(1e-12));
  for (int j = 0; j < 4; ++j) CHECK(out.at(0, j) == doctest::Approx(z.at(0, j)).epsilon(1e-12));
}

TEST_CASE("single-token encoding equals the projected hidden state") {
  auto cfg = tiny_config();
  cfg.tuned_layers = 0;  // whole stack frozen so boundary_activations covers it
  Rng rng(11);
  EncoderT<float> enc(cfg, 10, rng);

  std::vector<int> ids{5};
  once::encoder::EncodeCtxT<float> ctx;
  TensorT<float> v;
  enc.encode("X", ids, ctx, v);
  REQUIRE(v.shape == std::vector<int>{cfg.out_dim});

  auto h = enc.boundary_activations(ids);  // (1 x width), all layers applied
  auto params = enc.params();
  auto* pw = once::find_param(params, "enc.proj.w");
  auto* pb = once::find_param(params, "enc.proj.b");
  REQUIRE(pw != nullptr);
  once::LinearCtxT<float> lctx;
  TensorT<float> z;
  once::linear_fwd(h, pw->value, &pb->value, lctx, z);

  for (int j = 0; j < cfg.out_dim; ++j) CHECK(v.data[j] == z.at(0, j));
}

TEST_CASE("trailing pad tokens do not change the encoding") {
  auto cfg = tiny_config();
  Rng rng(3);
  EncoderT<float> enc(cfg, 12, rng);

  std::vector<int> bare{4, 7, 2};
  std::vector<int> padded{4, 7, 2, once::corpus::Vocabulary::PAD,
                          once::corpus::Vocabulary::PAD};
  once::encoder::EncodeCtxT<float> c1, c2;
  TensorT<float> v1, v2;
  enc.encode("A", bare, c1, v1);
  enc.encode("A", padded, c2, v2);
  CHECK(v1.data == v2.data);

  std::vector<int> only_pads{once::corpus::Vocabulary::PAD};
  CHECK_THROWS_WITH_AS(enc.encode("B", only_pads, c1, v1),
                       doctest::Contains("empty token sequence"), once::Error);
}

TEST_CASE("encoder output dimension is out_dim for all inputs") {
  auto cfg = tiny_config();
  Rng rng(5);
  EncoderT<float> enc(cfg, 12, rng);
  for (const auto& ids :
       {std::vector<int>{3}, std::vector<int>{3, 4}, std::vector<int>{5, 6, 7, 8, 9, 10}}) {
    once::encoder::EncodeCtxT<float> ctx;
    TensorT<float> v;
    enc.encode("A", ids, ctx, v);
    CHECK(v.shape == std::vector<int>{cfg.out_dim});
  }
}

TEST_CASE("full encoder gradient matches finite differences") {
  auto cfg = tiny_config();  // everything trainable
  Rng rng(21);
  EncoderT<double> enc(cfg, 12, rng);

  std::vector<int> ids{2, 3, 4, 2, 5};  // repeated id exercises accumulation
  TensorT<double> w({cfg.out_dim});
  for (auto& v : w.data) v = rng.uniform() * 2 - 1;

  auto loss = [&]() {
    once::encoder::EncodeCtxT<double> ctx;
    TensorT<double> v;
    enc.encode("A", ids, ctx, v);
    return once::dot(v.data.data(), w.data.data(), cfg.out_dim);
  };
  auto backward = [&]() {
    once::encoder::EncodeCtxT<double> ctx;
    TensorT<double> v;
    enc.encode("A", ids, ctx, v);
    enc.encode_bwd(ctx, w);
  };

  auto params = enc.params();
  Rng probe(31);
  auto res = once_test::grad_check(params, loss, backward, probe, 6);
  CAPTURE(res.worst);
  CHECK(res.max_rel_err < 1e-4);
  CHECK(res.checked > 100);
}

TEST_CASE("adapter gradients match finite differences under partial freeze") {
  auto cfg = tiny_config();
  cfg.tuned_layers = 1;
  cfg.lora = LoraConfig{2, 4.0};
  Rng rng(33);
  EncoderT<double> enc(cfg, 12, rng);

  // Zero-initialized B blocks gradient flow into A; give it real values.
  auto params = enc.params();
  for (auto* p : params) {
    if (p->name.find(".lora_b") != std::string::npos) {
      p->value = TensorT<double>::gaussian(p->value.shape, rng, 0.1);
    }
  }

  std::vector<int> ids{2, 3, 4};
  TensorT<double> w({cfg.out_dim});
  for (auto& v : w.data) v = rng.uniform() * 2 - 1;

  auto loss = [&]() {
    once::encoder::EncodeCtxT<double> ctx;
    TensorT<double> v;
    enc.encode("A", ids, ctx, v);
    return once::dot(v.data.data(), w.data.data(), cfg.out_dim);
  };
  auto backward = [&]() {
    for (auto* p : enc.params()) p->zero_grad();
    once::encoder::EncodeCtxT<double> ctx;
    TensorT<double> v;
    enc.encode("A", ids, ctx, v);
    enc.encode_bwd(ctx, w);
  };

  auto train = trainable(enc);
  Rng probe(41);
  auto res = once_test::grad_check(train, loss, backward, probe, 6);
  CAPTURE(res.worst);
  CHECK(res.max_rel_err < 1e-4);

  bool saw_adapter = false;
  for (auto* p : train) saw_adapter |= p->name.find(".lora_") != std::string::npos;
  CHECK(saw_adapter);
}

TEST_CASE("backward leaves frozen parameter gradients at exactly zero") {
  auto cfg = tiny_config();
  cfg.tuned_layers = 1;
  Rng rng(13);
  EncoderT<float> enc(cfg, 12, rng);

  std::vector<int> ids{2, 3, 4, 5};
  once::encoder::EncodeCtxT<float> ctx;
  TensorT<float> v;
  enc.encode("A", ids, ctx, v);
  TensorT<float> d_v({cfg.out_dim});
  d_v.fill(1.0f);
  enc.encode_bwd(ctx, d_v);

  int frozen_seen = 0;
  bool trainable_nonzero = false;
  for (auto* p : enc.params()) {
    if (p->frozen) {
      ++frozen_seen;
      for (float g : p->grad.data) CHECK(g == 0.0f);
    } else {
      for (float g : p->grad.data) trainable_nonzero |= g != 0.0f;
    }
  }
  CHECK(frozen_seen == 14);  // embeddings + the 12 tensors of layer 0
  CHECK(trainable_nonzero);
}

TEST_CASE("set_freeze tags groups and respects the boundary") {
  auto cfg = tiny_config();
  Rng rng(17);
  EncoderT<float> enc(cfg, 12, rng);

  SUBCASE("nothing tuned: only the fusion head trains") {
    enc.set_freeze(0);
    for (auto* p : enc.params()) {
      const bool fusion = p->name.rfind("enc.proj", 0) == 0 ||
                          p->name.rfind("enc.fuse", 0) == 0;
      CHECK(p->frozen == !fusion);
      CHECK((p->group == once::ParamGroup::fresh) == fusion);
    }
  }

  SUBCASE("everything tuned: nothing frozen, embeddings included") {
    enc.set_freeze(cfg.layers);
    for (auto* p : enc.params()) {
      CHECK_FALSE(p->frozen);
      CHECK(p->group == once::ParamGroup::fresh);
    }
  }

  SUBCASE("one tuned layer: boundary splits the stack") {
    enc.set_freeze(1);
    for (auto* p : enc.params()) {
      const bool lower = p->name.rfind("enc.layer0.", 0) == 0 ||
                         p->name.rfind("enc.tok_emb", 0) == 0 ||
                         p->name.rfind("enc.pos_emb", 0) == 0;
      CHECK(p->frozen == lower);
    }
  }

  SUBCASE("out of range throws") {
    CHECK_THROWS_WITH_AS(enc.set_freeze(3), doctest::Contains("outside"), once::Error);
    CHECK_THROWS_WITH_AS(enc.set_freeze(-1), doctest::Contains("outside"), once::Error);
  }
}

TEST_CASE("re-freezing drops adapters on newly frozen layers") {
  auto cfg = tiny_config();
  cfg.lora = LoraConfig{2, 4.0};
  Rng rng(19);
  EncoderT<float> enc(cfg, 12, rng);

  auto adapter_count = [&enc]() {
    int n = 0;
    for (auto* p : enc.params()) n += p->name.find(".lora_") != std::string::npos;
    return n;
  };
  CHECK(adapter_count() == 8);  // 2 layers x (q, v) x (A, B)

  enc.set_freeze(1);
  CHECK(adapter_count() == 4);
  auto params = enc.params();
  CHECK(once::find_param(params, "enc.layer0.wq.lora_a") == nullptr);
  CHECK(once::find_param(params, "enc.layer1.wq.lora_a") != nullptr);

  // Base q/v of the tuned layer stay frozen; its other weights train.
  CHECK(once::find_param(params, "enc.layer1.wq")->frozen);
  CHECK(once::find_param(params, "enc.layer1.wv")->frozen);
  CHECK_FALSE(once::find_param(params, "enc.layer1.wk")->frozen);
  CHECK_FALSE(once::find_param(params, "enc.layer1.wo")->frozen);
  CHECK_FALSE(once::find_param(params, "enc.layer1.wq.lora_a")->frozen);
}

TEST_CASE("zero-initialized adapters leave outputs unchanged") {
  auto cfg = tiny_config();
  Rng rng_a(23), rng_b(23);
  EncoderT<float> plain(cfg, 12, rng_a);
  cfg.lora = LoraConfig{2, 4.0};
  EncoderT<float> adapted(cfg, 12, rng_b);

  std::vector<int> ids{2, 5, 7, 3};
  once::encoder::EncodeCtxT<float> c1, c2;
  TensorT<float> v1, v2;
  plain.encode("A", ids, c1, v1);
  adapted.encode("A", ids, c2, v2);
  CHECK(v1.data == v2.data);
}

TEST_CASE("merging adapters into base weights preserves the output") {
  auto cfg = tiny_config();
  cfg.lora = LoraConfig{2, 4.0};
  Rng rng(29);
  EncoderT<float> enc(cfg, 12, rng);

  for (auto* p : enc.params()) {
    if (p->name.find(".lora_b") != std::string::npos) {
      p->value = TensorT<float>::gaussian(p->value.shape, rng, 0.1f);
    }
  }

  std::vector<int> ids{2, 5, 7, 3, 9};
  once::encoder::EncodeCtxT<float> ctx;
  TensorT<float> before, after;
  enc.encode("A", ids, ctx, before);
  enc.merge_lora();
  enc.encode("A", ids, ctx, after);

  int adapters = 0;
  for (auto* p : enc.params()) adapters += p->name.find(".lora_") != std::string::npos;
  CHECK(adapters == 0);
  for (int j = 0; j < cfg.out_dim; ++j) {
    const double denom = std::max(1.0, std::abs(static_cast<double>(before.data[j])));
    CHECK(std::abs(before.data[j] - after.data[j]) / denom < 1e-5);
  }
}

TEST_CASE("full-rank identity adapter reduces to a shifted weight matrix") {
  auto cfg = tiny_config();
  Rng rng_a(37), rng_b(37);
  EncoderT<float> shifted(cfg, 12, rng_a);
  cfg.lora = LoraConfig{cfg.width, static_cast<double>(cfg.width)};  // scale = 1
  EncoderT<float> adapted(cfg, 12, rng_b);

  Rng delta_rng(101);
  auto params = adapted.params();
  auto base = shifted.params();
  for (int layer = 0; layer < cfg.layers; ++layer) {
    for (const char* proj : {"wq", "wv"}) {
      const std::string stem = "enc.layer" + std::to_string(layer) + "." + proj;
      auto* a = once::find_param(params, stem + ".lora_a");
      auto* b = once::find_param(params, stem + ".lora_b");
      REQUIRE(a != nullptr);
      a->value.zero();
      for (int i = 0; i < cfg.width; ++i) a->value.at(i, i) = 1.0f;
      b->value = TensorT<float>::gaussian(b->value.shape, delta_rng, 0.05f);
      // y = xW + x B^T, so the plain encoder needs W' = W + B^T.
      auto* w = once::find_param(base, stem);
      for (int i = 0; i < cfg.width; ++i) {
        for (int j = 0; j < cfg.width; ++j) w->value.at(i, j) += b->value.at(j, i);
      }
    }
  }

  std::vector<int> ids{4, 8, 2};
  once::encoder::EncodeCtxT<float> c1, c2;
  TensorT<float> v1, v2;
  adapted.encode("A", ids, c1, v1);
  shifted.encode("A", ids, c2, v2);
  for (int j = 0; j < cfg.out_dim; ++j) {
    const double denom = std::max(1.0, std::abs(static_cast<double>(v1.data[j])));
    CHECK(std::abs(v1.data[j] - v2.data[j]) / denom < 1e-5);
  }
}

TEST_CASE("pretrained snapshot loads into an adapter-bearing encoder") {
  auto cfg = tiny_config();
  Rng rng_a(43), rng_b(99);
  EncoderT<float> source(cfg, 12, rng_a);
  const auto path = temp_path("enc_snapshot.bin");
  auto src_params = source.params();
  once::save_checkpoint(path, src_params);

  cfg.lora = LoraConfig{2, 4.0};
  EncoderT<float> target(cfg, 12, rng_b);  // different seed on purpose
  auto base = target.base_params();
  once::load_checkpoint(path, base);

  std::vector<int> ids{2, 5, 7};
  once::encoder::EncodeCtxT<float> c1, c2;
  TensorT<float> v1, v2;
  source.encode("A", ids, c1, v1);
  target.encode("A", ids, c2, v2);
  CHECK(v1.data == v2.data);
  std::remove(path.c_str());
}

TEST_CASE("cache round trip: build, save, load, byte-identical rebuild") {
  auto corpus = tiny_corpus();
  auto cfg = tiny_config();
  cfg.max_len = 16;
  cfg.tuned_layers = 1;
  Rng rng(47);
  EncoderT<float> enc(cfg, corpus.vocab.size(), rng);

  auto cache = once::encoder::build_cache(corpus, enc);
  CHECK(cache.entries.size() == 3);
  CHECK(cache.entries.count("C1") == 1);
  CHECK(cache.entries.count("C3") == 1);
  for (const auto& [id, t] : cache.entries) {
    CHECK(t.shape[0] == static_cast<int>(corpus.content(id).tokens.size()));
    CHECK(t.shape[1] == cfg.width);
  }

  const auto path = temp_path("enc_cache.bin");
  once::encoder::save_cache(path, cache);
  auto loaded = once::encoder::load_cache(path);
  CHECK(loaded.fingerprint == cache.fingerprint);
  REQUIRE(loaded.entries.size() == 3);
  for (const auto& [id, t] : cache.entries) CHECK(loaded.entries.at(id).data == t.data);

  const auto path2 = temp_path("enc_cache2.bin");
  auto rebuilt = once::encoder::build_cache(corpus, enc);
  once::encoder::save_cache(path2, rebuilt);
  CHECK(once::read_file(path) == once::read_file(path2));
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("cached encoding is bit-identical to the full path") {
  auto corpus = tiny_corpus();
  auto cfg = tiny_config();
  cfg.max_len = 16;
  cfg.tuned_layers = 1;
  Rng rng(53);
  EncoderT<float> enc(cfg, corpus.vocab.size(), rng);

  auto cache = once::encoder::build_cache(corpus, enc);
  for (const auto& [id, item] : corpus.contents) {
    once::encoder::EncodeCtxT<float> ctx;
    TensorT<float> plain, cached;
    enc.attach_cache(nullptr, corpus.vocab, corpus.tmpl);
    enc.encode(id, item.tokens, ctx, plain);
    enc.attach_cache(&cache, corpus.vocab, corpus.tmpl);
    enc.encode(id, item.tokens, ctx, cached);
    CHECK(plain.data == cached.data);
  }

  // Contents missing from the cache fall back to the full path.
  enc.attach_cache(&cache, corpus.vocab, corpus.tmpl);
  once::encoder::EncodeCtxT<float> ctx;
  TensorT<float> v;
  enc.encode("not-cached", corpus.content("C1").tokens, ctx, v);
  CHECK(v.shape == std::vector<int>{cfg.out_dim});
}

TEST_CASE("stale fingerprint is refused, trainable edits are not") {
  auto corpus = tiny_corpus();
  auto cfg = tiny_config();
  cfg.max_len = 16;
  cfg.tuned_layers = 1;
  Rng rng(59);
  EncoderT<float> enc(cfg, corpus.vocab.size(), rng);
  auto cache = once::encoder::build_cache(corpus, enc);

  auto params = enc.params();
  once::find_param(params, "enc.layer1.wq")->value.data[0] += 0.25f;  // trainable
  CHECK_NOTHROW(enc.attach_cache(&cache, corpus.vocab, corpus.tmpl));

  once::find_param(params, "enc.layer0.wq")->value.data[0] += 0.25f;  // frozen
  CHECK_THROWS_WITH_AS(enc.attach_cache(&cache, corpus.vocab, corpus.tmpl),
                       doctest::Contains("rebuild the cache"), once::Error);
}

TEST_CASE("fully tuned encoder yields an empty cache") {
  auto corpus = tiny_corpus();
  auto cfg = tiny_config();
  cfg.max_len = 16;
  cfg.tuned_layers = cfg.layers;
  Rng rng(61);
  EncoderT<float> enc(cfg, corpus.vocab.size(), rng);

  auto cache = once::encoder::build_cache(corpus, enc);
  CHECK(cache.entries.empty());

  // Attaching it is harmless: with no frozen prefix there is nothing to skip.
  enc.attach_cache(&cache, corpus.vocab, corpus.tmpl);
  once::encoder::EncodeCtxT<float> ctx;
  TensorT<float> v;
  enc.encode("C1", corpus.content("C1").tokens, ctx, v);
  CHECK(v.shape == std::vector<int>{cfg.out_dim});
}

TEST_CASE("cache file errors are reported with the path") {
  const auto path = temp_path("enc_cache_bad.bin");
  once::write_file(path, "XXXX not a cache");
  CHECK_THROWS_WITH_AS(once::encoder::load_cache(path), doctest::Contains("bad magic"),
                       once::Error);

  once::encoder::HiddenCache cache;
  cache.entries.emplace("C1", TensorT<float>({2, 4}));
  once::encoder::save_cache(path, cache);
  auto bytes = once::read_file(path);
  once::write_file(path, bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_WITH_AS(once::encoder::load_cache(path), doctest::Contains("truncated"),
                       once::Error);
  std::remove(path.c_str());
}
