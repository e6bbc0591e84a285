#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "once/checkpoint.h"
#include "once/corpus.h"
#include "once/encoder.h"
#include "once/genre.h"
#include "once/metrics.h"
#include "once/model.h"
#include "once/synth.h"
#include "once/train.h"

namespace fs = std::filesystem;
using namespace once;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// --------------------------- config loading ---------------------------

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config file ", path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) fail(path, ": not valid JSON");
  return j;
}

void check_fields(const json& j, const std::string& path,
                  const std::set<std::string>& allowed) {
  if (!j.is_object()) fail(path, ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) fail(path, ": unknown field ", key);
  }
}

int get_int(const json& j, const std::string& path, const std::string& key,
            int def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number_integer()) fail(path, ".", key, ": expected an integer");
  return j[key].get<int>();
}

uint64_t get_u64(const json& j, const std::string& path, const std::string& key,
                 uint64_t def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number_integer()) fail(path, ".", key, ": expected an integer");
  return j[key].get<uint64_t>();
}

double get_double(const json& j, const std::string& path, const std::string& key,
                  double def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number()) fail(path, ".", key, ": expected a number");
  return j[key].get<double>();
}

bool get_bool(const json& j, const std::string& path, const std::string& key,
              bool def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_boolean()) fail(path, ".", key, ": expected a boolean");
  return j[key].get<bool>();
}

std::string get_string(const json& j, const std::string& path,
                       const std::string& key, const std::string& def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_string()) fail(path, ".", key, ": expected a string");
  return j[key].get<std::string>();
}

struct RunConfig {
  encoder::EncoderConfig encoder;
  rec::HistoryConfig history;
  bool use_profiles = false;
  int vocab_min_frequency = 2;

  train::TrainConfig training;
  int runs = 1;
  std::string pretrained_checkpoint;

  genre::Scheme scheme = genre::Scheme::cs;
  std::string client = "mock";
  int generation_count = 2;
  int concurrency = 4;
  uint64_t mock_seed = 1;
  std::string fixture;
  std::string record_log;
  double fail_limit = 0.10;
  genre::HttpChatConfig http;
  genre::Pricing pricing;
};

void parse_encoder_section(const json& j, encoder::EncoderConfig& out) {
  check_fields(j, "encoder",
               {"layers", "width", "heads", "ffn_width", "out_dim", "max_len",
                "tuned_layers", "lora"});
  out.layers = get_int(j, "encoder", "layers", out.layers);
  out.width = get_int(j, "encoder", "width", out.width);
  out.heads = get_int(j, "encoder", "heads", out.heads);
  out.ffn_width = get_int(j, "encoder", "ffn_width", out.ffn_width);
  out.out_dim = get_int(j, "encoder", "out_dim", out.out_dim);
  out.max_len = get_int(j, "encoder", "max_len", out.max_len);
  out.tuned_layers = get_int(j, "encoder", "tuned_layers", out.layers);
  if (j.contains("lora")) {
    check_fields(j["lora"], "encoder.lora", {"rank", "alpha"});
    encoder::LoraConfig lc;
    lc.rank = get_int(j["lora"], "encoder.lora", "rank", lc.rank);
    lc.alpha = get_double(j["lora"], "encoder.lora", "alpha", lc.alpha);
    out.lora = lc;
  }
  out.validate();
}

void parse_history_section(const json& j, rec::HistoryConfig& out) {
  check_fields(j, "history", {"kind", "heads", "max_history"});
  const std::string kind = get_string(j, "history", "kind", "attention_pool");
  if (kind == "attention_pool") {
    out.kind = rec::HistoryKind::attention_pool;
  } else if (kind == "self_attention") {
    out.kind = rec::HistoryKind::self_attention;
  } else {
    fail("history.kind: expected attention_pool or self_attention, got ", kind);
  }
  out.heads = get_int(j, "history", "heads", out.heads);
  out.max_history = get_int(j, "history", "max_history", out.max_history);
  out.validate();
}

void parse_training_section(const json& j, RunConfig& out) {
  check_fields(j, "training",
               {"lr_fresh", "lr_pretrained", "epochs", "batch_size",
                "neg_ratio", "seed", "runs"});
  auto& t = out.training;
  t.lr_fresh = get_double(j, "training", "lr_fresh", t.lr_fresh);
  t.lr_pretrained = get_double(j, "training", "lr_pretrained", t.lr_pretrained);
  t.epochs = get_int(j, "training", "epochs", t.epochs);
  t.batch_size = get_int(j, "training", "batch_size", t.batch_size);
  t.neg_ratio = get_int(j, "training", "neg_ratio", t.neg_ratio);
  t.seed = get_u64(j, "training", "seed", t.seed);
  out.runs = get_int(j, "training", "runs", out.runs);
  if (out.runs < 1) fail("training.runs: must be >= 1");
  t.validate();
}

void parse_augment_section(const json& j, RunConfig& out) {
  check_fields(j, "augment",
               {"scheme", "client", "generation_count", "concurrency",
                "mock_seed", "fixture", "record_log", "fail_limit", "endpoint",
                "path", "model", "api_key_env", "timeout_s", "max_attempts",
                "pricing"});
  out.scheme = genre::scheme_from_name(
      get_string(j, "augment", "scheme", genre::scheme_name(out.scheme)));
  out.client = get_string(j, "augment", "client", out.client);
  out.generation_count =
      get_int(j, "augment", "generation_count", out.generation_count);
  out.concurrency = get_int(j, "augment", "concurrency", out.concurrency);
  out.mock_seed = get_u64(j, "augment", "mock_seed", out.mock_seed);
  out.fixture = get_string(j, "augment", "fixture", out.fixture);
  out.record_log = get_string(j, "augment", "record_log", out.record_log);
  out.fail_limit = get_double(j, "augment", "fail_limit", out.fail_limit);
  out.http.base_url = get_string(j, "augment", "endpoint", out.http.base_url);
  out.http.path = get_string(j, "augment", "path", out.http.path);
  out.http.model = get_string(j, "augment", "model", out.http.model);
  out.http.api_key_env =
      get_string(j, "augment", "api_key_env", out.http.api_key_env);
  out.http.timeout_s = get_int(j, "augment", "timeout_s", out.http.timeout_s);
  out.http.max_attempts =
      get_int(j, "augment", "max_attempts", out.http.max_attempts);
  if (j.contains("pricing")) {
    check_fields(j["pricing"], "augment.pricing",
                 {"input_per_1k", "output_per_1k"});
    out.pricing.input_per_1k = get_double(j["pricing"], "augment.pricing",
                                          "input_per_1k", 0.0);
    out.pricing.output_per_1k = get_double(j["pricing"], "augment.pricing",
                                           "output_per_1k", 0.0);
  }
}

RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  if (path.empty()) return cfg;
  const json j = read_json_file(path);
  check_fields(j, "config",
               {"encoder", "history", "use_profiles", "vocab_min_frequency",
                "training", "pretrained_checkpoint", "augment", "eval"});
  if (j.contains("encoder")) parse_encoder_section(j["encoder"], cfg.encoder);
  if (j.contains("history")) parse_history_section(j["history"], cfg.history);
  cfg.use_profiles = get_bool(j, "config", "use_profiles", cfg.use_profiles);
  cfg.vocab_min_frequency =
      get_int(j, "config", "vocab_min_frequency", cfg.vocab_min_frequency);
  if (j.contains("training")) parse_training_section(j["training"], cfg);
  cfg.pretrained_checkpoint = get_string(j, "config", "pretrained_checkpoint",
                                         cfg.pretrained_checkpoint);
  if (!cfg.pretrained_checkpoint.empty() &&
      !fs::exists(cfg.pretrained_checkpoint)) {
    fail("pretrained_checkpoint: path ", cfg.pretrained_checkpoint,
         " does not exist");
  }
  if (j.contains("augment")) parse_augment_section(j["augment"], cfg);
  if (j.contains("eval")) {
    check_fields(j["eval"], "eval", {"ndcg_cutoffs"});
    if (j["eval"].contains("ndcg_cutoffs")) {
      const auto& cuts = j["eval"]["ndcg_cutoffs"];
      // The metric report format pins the cutoffs; reject anything else
      // rather than silently ignoring the request.
      if (cuts != json::array({5, 10})) {
        fail("eval.ndcg_cutoffs: only [5, 10] is supported");
      }
    }
  }
  return cfg;
}

// --------------------------- display helpers ---------------------------

std::string fixed(double v, int places) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", places, v);
  return buf;
}

// Metrics are stored as fractions and displayed in points.
std::string pts(double v) { return fixed(100.0 * v, 2); }

void print_group(const char* name, const metrics::GroupSummary& g) {
  std::cout << "  " << name << ": auc " << pts(g.auc) << "  mrr " << pts(g.mrr)
            << "  ndcg@5 " << pts(g.ndcg5) << "  ndcg@10 " << pts(g.ndcg10)
            << "  (counted " << g.counted << ", skipped " << g.skipped << ")\n";
}

void print_report(const metrics::MetricReport& rep) {
  print_group("overall", rep.overall);
  print_group("new    ", rep.new_users);
  print_group("warm   ", rep.warm_users);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path);
  out << text;
}

corpus::Corpus load_corpus(const std::string& dir, const RunConfig& cfg) {
  auto c = corpus::import_jsonl(dir);
  c.finalize(corpus::ContentTemplate::news_default(), cfg.vocab_min_frequency,
             cfg.encoder.max_len);
  return c;
}

model::RecModel build_model(const RunConfig& cfg, const corpus::Corpus& c,
                            uint64_t seed) {
  model::ModelConfig mc;
  mc.encoder = cfg.encoder;
  mc.history = cfg.history;
  mc.use_profiles = cfg.use_profiles;
  Rng rng(seed);
  return model::RecModel(mc, c.vocab.size(), rec::ProfileVocab::build(c), rng);
}

// --------------------------- commands ---------------------------

void cmd_ingest(const std::string& news, const std::string& behaviors,
                const std::string& behaviors_dev, const std::string& out) {
  const auto c = corpus::parse_mind(news, behaviors, behaviors_dev);
  fs::create_directories(out);
  corpus::export_jsonl(c, out);
  std::cout << "ingested " << c.contents.size() << " contents, "
            << c.users.size() << " users, " << c.train.size()
            << " train impressions, " << c.dev.size()
            << " dev impressions into " << out << "\n";
}

void cmd_synth(const std::string& config_path, uint64_t seed,
               const std::string& out) {
  synth::WorldConfig wc;
  if (!config_path.empty()) {
    wc = synth::WorldConfig::from_json(read_json_file(config_path));
  }
  const auto world = synth::generate_world(wc, seed);
  synth::write_world(world, out);
  std::cout << "wrote world with " << world.corpus.contents.size()
            << " contents, " << world.corpus.users.size() << " users to "
            << out << "\n";
}

void cmd_augment(const RunConfig& cfg, const std::string& in,
                 const std::string& out, const std::string& ledger_out) {
  if (fs::weakly_canonical(in) == fs::weakly_canonical(out)) {
    fail("augment: --out must differ from --in; the input corpus is never "
         "rewritten in place");
  }
  auto c = corpus::import_jsonl(in);

  std::unique_ptr<genre::ChatClient> client;
  if (cfg.client == "mock") {
    client = std::make_unique<genre::MockChat>(cfg.mock_seed);
  } else if (cfg.client == "replay") {
    if (cfg.fixture.empty()) fail("augment: replay client needs a fixture file");
    client = std::make_unique<genre::ReplayChat>(cfg.fixture);
  } else if (cfg.client == "http") {
    client = std::make_unique<genre::HttpChat>(cfg.http);
  } else {
    fail("augment: unknown client '", cfg.client,
         "' (expected http, mock, or replay)");
  }

  genre::AugmentOptions opt;
  opt.scheme = cfg.scheme;
  opt.generation_count = cfg.generation_count;
  opt.concurrency = cfg.concurrency;
  opt.record_log = cfg.record_log;
  opt.fail_limit = cfg.fail_limit;
  const auto stats = genre::run_augmentation(c, *client, opt);

  fs::create_directories(out);
  corpus::export_jsonl(c, out);

  genre::CostLedger ledger;
  ledger.scheme = genre::scheme_name(cfg.scheme);
  ledger.prompt_tokens = stats.usage.prompt_tokens;
  ledger.completion_tokens = stats.usage.completion_tokens;
  ledger.pricing = cfg.pricing;
  const std::string ledger_path =
      ledger_out.empty() ? (fs::path(out) / "ledger.json").string() : ledger_out;
  write_text_file(ledger_path, genre::ledger_json(ledger).dump(2) + "\n");

  std::cout << "scheme " << genre::scheme_name(cfg.scheme) << ": attempted "
            << stats.attempted << ", succeeded " << stats.succeeded
            << ", failed " << stats.failed << ", resumed " << stats.resumed
            << "\n";
  std::cout << "tokens: prompt " << stats.usage.prompt_tokens << ", completion "
            << stats.usage.completion_tokens << "; projected cost $"
            << fixed(ledger.cost(), 2) << "\n";
  std::cout << "wrote corpus to " << out << " and ledger to " << ledger_path
            << "\n";
}

void cmd_cache(const RunConfig& cfg, const std::string& corpus_dir,
               const std::string& checkpoint, const std::string& out) {
  const auto c = load_corpus(corpus_dir, cfg);
  auto model = build_model(cfg, c, cfg.training.seed);
  // The cache captures frozen-prefix activations, so it is built from the
  // pretrained snapshot (base weights); adapters never touch the prefix.
  auto base = model.base_params();
  load_checkpoint(checkpoint, base);
  const auto cache = encoder::build_cache(c, model.content_encoder());
  encoder::save_cache(out, cache);
  std::cout << "cached boundary activations for " << cache.entries.size()
            << " contents (" << model.content_encoder().frozen_below()
            << " frozen layers) to " << out << "\n";
}

struct TrainFlags {
  std::optional<uint64_t> seed;
  std::optional<int> epochs, runs, batch_size, neg_ratio, tuned_layers,
      max_history;
  std::optional<double> lr_fresh, lr_pretrained;
  std::optional<bool> use_profiles;
  std::string pretrained, cache_path;
};

void apply_overrides(RunConfig& cfg, const TrainFlags& f) {
  if (f.seed) cfg.training.seed = *f.seed;
  if (f.epochs) cfg.training.epochs = *f.epochs;
  if (f.runs) cfg.runs = *f.runs;
  if (f.batch_size) cfg.training.batch_size = *f.batch_size;
  if (f.neg_ratio) cfg.training.neg_ratio = *f.neg_ratio;
  if (f.tuned_layers) cfg.encoder.tuned_layers = *f.tuned_layers;
  if (f.max_history) cfg.history.max_history = *f.max_history;
  if (f.lr_fresh) cfg.training.lr_fresh = *f.lr_fresh;
  if (f.lr_pretrained) cfg.training.lr_pretrained = *f.lr_pretrained;
  if (f.use_profiles) cfg.use_profiles = *f.use_profiles;
  if (!f.pretrained.empty()) cfg.pretrained_checkpoint = f.pretrained;
  cfg.encoder.validate();
  cfg.history.validate();
  if (cfg.runs < 1) fail("training.runs: must be >= 1");
}

ordered_json group_stats(const std::vector<double>& v) {
  double lo = v[0], hi = v[0], sum = 0.0;
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    sum += x;
  }
  ordered_json j;
  j["mean"] = sum / static_cast<double>(v.size());
  j["min"] = lo;
  j["max"] = hi;
  return j;
}

void cmd_train(const RunConfig& cfg, const std::string& corpus_dir,
               const std::string& out, const std::string& cache_path) {
  const auto c = load_corpus(corpus_dir, cfg);
  fs::create_directories(out);

  std::optional<encoder::HiddenCache> cache;
  if (!cache_path.empty()) cache = encoder::load_cache(cache_path);

  ordered_json runs_json = ordered_json::array();
  std::map<std::string, std::vector<double>> series;
  for (int r = 0; r < cfg.runs; ++r) {
    train::TrainConfig tc = cfg.training;
    tc.seed = cfg.training.seed + static_cast<uint64_t>(r);
    auto model = build_model(cfg, c, tc.seed);
    if (!cfg.pretrained_checkpoint.empty()) {
      auto base = model.base_params();
      load_checkpoint(cfg.pretrained_checkpoint, base);
    }
    if (cache) {
      model.content_encoder().attach_cache(&*cache, c.vocab, c.tmpl);
    }

    std::cout << "run " << r << " (seed " << tc.seed << ")\n";
    const auto result = train::fit(model, c, tc);

    std::string epoch_lines;
    for (const auto& rec : result.epochs) {
      epoch_lines += train::epoch_json(rec).dump() + "\n";
      std::cout << "  epoch " << rec.epoch << ": loss "
                << fixed(rec.train_loss, 4) << ", dev auc "
                << pts(rec.dev.overall.auc) << ", mrr "
                << pts(rec.dev.overall.mrr) << "\n";
    }
    write_text_file((fs::path(out) / format("epochs.run", r, ".jsonl")).string(),
                    epoch_lines);
    auto params = model.params();
    save_checkpoint((fs::path(out) / format("checkpoint.run", r, ".bin")).string(),
                    params);

    const auto& best = result.epochs[result.best_epoch - 1];
    std::cout << "  best epoch " << result.best_epoch << ", dev auc "
              << pts(result.best_dev_auc) << "\n";
    ordered_json run_json;
    run_json["seed"] = tc.seed;
    run_json["best_epoch"] = result.best_epoch;
    run_json["dev"] = metrics::report_json(best.dev);
    runs_json.push_back(std::move(run_json));

    series["auc"].push_back(best.dev.overall.auc);
    series["mrr"].push_back(best.dev.overall.mrr);
    series["ndcg5"].push_back(best.dev.overall.ndcg5);
    series["ndcg10"].push_back(best.dev.overall.ndcg10);
    series["new_auc"].push_back(best.dev.new_users.auc);
    series["warm_auc"].push_back(best.dev.warm_users.auc);
  }

  ordered_json report;
  report["runs"] = std::move(runs_json);
  ordered_json agg;
  for (const char* key :
       {"auc", "mrr", "ndcg5", "ndcg10", "new_auc", "warm_auc"}) {
    agg[key] = group_stats(series.at(key));
  }
  report["dev"] = std::move(agg);
  write_text_file((fs::path(out) / "report.json").string(),
                  report.dump(2) + "\n");
  std::cout << cfg.runs << " run(s); mean dev auc "
            << pts(report["dev"]["auc"]["mean"].get<double>()) << " (min "
            << pts(report["dev"]["auc"]["min"].get<double>()) << ", max "
            << pts(report["dev"]["auc"]["max"].get<double>()) << ")\n";
  std::cout << "wrote " << (fs::path(out) / "report.json").string() << "\n";
}

void cmd_eval(const RunConfig& cfg, const std::string& corpus_dir,
              const std::string& checkpoint, const std::string& report_path,
              const std::string& cache_path) {
  const auto c = load_corpus(corpus_dir, cfg);
  auto model = build_model(cfg, c, cfg.training.seed);
  auto params = model.params();
  load_checkpoint(checkpoint, params);

  std::optional<encoder::HiddenCache> cache;
  if (!cache_path.empty()) {
    cache = encoder::load_cache(cache_path);
    model.content_encoder().attach_cache(&*cache, c.vocab, c.tmpl);
  }

  const auto rep = train::evaluate_model(model, c, c.dev);
  write_text_file(report_path, metrics::report_json(rep).dump(2) + "\n");
  std::cout << "dev metrics (x100):\n";
  print_report(rep);
  std::cout << "wrote " << report_path << "\n";
}

void cmd_report(const std::vector<std::string>& metric_args,
                const std::vector<std::string>& ledger_paths,
                const std::string& out) {
  std::map<std::string, double> auc_by_name;
  for (const auto& arg : metric_args) {
    const auto eq = arg.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size()) {
      fail("report: --metrics expects name=path, got '", arg, "'");
    }
    const std::string name = arg.substr(0, eq);
    const json j = read_json_file(arg.substr(eq + 1));
    if (!j.contains("auc") || !j["auc"].is_number()) {
      fail("report: metric file for '", name, "' has no auc field");
    }
    auc_by_name[name] = j["auc"].get<double>();
  }

  ordered_json rows = ordered_json::array();
  std::printf("%-8s %10s %14s %8s\n", "scheme", "cost($)", "improvement", "ccr");
  for (const auto& path : ledger_paths) {
    auto ledger = genre::ledger_from_json(read_json_file(path));
    if (!ledger.improvement_points) {
      const auto it = auc_by_name.find(ledger.scheme);
      const auto base = auc_by_name.find("base");
      if (it == auc_by_name.end() || base == auc_by_name.end()) {
        fail("report: ledger '", ledger.scheme,
             "' has no improvement_points; pass --metrics ", ledger.scheme,
             "=... and --metrics base=... to derive it");
      }
      ledger.improvement_points = 100.0 * (it->second - base->second);
    }
    const double cost = ledger.cost();
    const double rate = genre::ccr(ledger);
    std::printf("%-8s %10s %14s %8s\n", ledger.scheme.c_str(),
                fixed(cost, 0).c_str(), fixed(*ledger.improvement_points, 2).c_str(),
                fixed(rate, 2).c_str());
    ordered_json row;
    row["scheme"] = ledger.scheme;
    row["cost"] = cost;
    row["improvement_points"] = *ledger.improvement_points;
    row["ccr"] = rate;
    rows.push_back(std::move(row));
  }
  if (!out.empty()) {
    write_text_file(out, rows.dump(2) + "\n");
    std::cout << "wrote " << out << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"content recommendation pipeline: ingest, synthesize, augment, "
               "cache, train, evaluate, report"};
  app.require_subcommand(1);

  std::string config_path, corpus_dir, out_dir, checkpoint, cache_path;
  std::string news, behaviors, behaviors_dev;
  std::string in_dir, ledger_out, report_path;
  uint64_t seed = 1;
  TrainFlags flags;
  std::string scheme_name, client_name;
  std::optional<int> count_flag, concurrency_flag;
  std::optional<uint64_t> mock_seed_flag;
  std::string fixture_flag, record_log_flag, endpoint_flag, model_flag;
  std::vector<std::string> metric_args, ledger_paths;

  auto* ingest = app.add_subcommand("ingest", "convert MIND TSV to JSONL");
  ingest->add_option("--mind-news", news, "news.tsv path")->required();
  ingest->add_option("--mind-behaviors", behaviors, "behaviors.tsv path")
      ->required();
  ingest->add_option("--mind-behaviors-dev", behaviors_dev,
                     "dev-split behaviors.tsv");
  ingest->add_option("--out", out_dir, "output corpus directory")->required();
  ingest->callback([&] { cmd_ingest(news, behaviors, behaviors_dev, out_dir); });

  auto* synth_cmd = app.add_subcommand("synth", "generate a planted world");
  synth_cmd->add_option("--config", config_path, "world config JSON");
  synth_cmd->add_option("--seed", seed, "world seed");
  synth_cmd->add_option("--out", out_dir, "output corpus directory")->required();
  synth_cmd->callback([&] { cmd_synth(config_path, seed, out_dir); });

  auto* augment = app.add_subcommand("augment", "run an augmentation scheme");
  augment->add_option("--scheme", scheme_name, "cs, up, cg, chain, or all");
  augment->add_option("--client", client_name, "http, mock, or replay");
  augment->add_option("--in", in_dir, "input corpus directory")->required();
  augment->add_option("--out", out_dir, "output corpus directory")->required();
  augment->add_option("--config", config_path, "run config JSON");
  augment->add_option("--count", count_flag, "generated items per new user");
  augment->add_option("--concurrency", concurrency_flag, "client calls in flight");
  augment->add_option("--mock-seed", mock_seed_flag, "mock client seed");
  augment->add_option("--fixture", fixture_flag, "replay fixture JSONL");
  augment->add_option("--record-log", record_log_flag,
                      "append-only record log (enables resume)");
  augment->add_option("--endpoint", endpoint_flag, "http client base url");
  augment->add_option("--model", model_flag, "http client model name");
  augment->add_option("--ledger-out", ledger_out,
                      "ledger path (default <out>/ledger.json)");
  augment->callback([&] {
    RunConfig cfg = load_run_config(config_path);
    if (!scheme_name.empty()) cfg.scheme = genre::scheme_from_name(scheme_name);
    if (!client_name.empty()) cfg.client = client_name;
    if (count_flag) cfg.generation_count = *count_flag;
    if (concurrency_flag) cfg.concurrency = *concurrency_flag;
    if (mock_seed_flag) cfg.mock_seed = *mock_seed_flag;
    if (!fixture_flag.empty()) cfg.fixture = fixture_flag;
    if (!record_log_flag.empty()) cfg.record_log = record_log_flag;
    if (!endpoint_flag.empty()) cfg.http.base_url = endpoint_flag;
    if (!model_flag.empty()) cfg.http.model = model_flag;
    cmd_augment(cfg, in_dir, out_dir, ledger_out);
  });

  auto* cache = app.add_subcommand("cache", "precompute frozen-prefix activations");
  cache->add_option("--corpus", corpus_dir, "corpus directory")->required();
  cache->add_option("--checkpoint", checkpoint, "pretrained snapshot")->required();
  cache->add_option("--out", out_dir, "cache file path")->required();
  cache->add_option("--config", config_path, "run config JSON");
  cache->add_option("--tuned-layers", flags.tuned_layers, "trainable top layers");
  cache->callback([&] {
    RunConfig cfg = load_run_config(config_path);
    if (flags.tuned_layers) cfg.encoder.tuned_layers = *flags.tuned_layers;
    cfg.encoder.validate();
    cmd_cache(cfg, corpus_dir, checkpoint, out_dir);
  });

  auto* train_cmd = app.add_subcommand("train", "train and snapshot the best epoch");
  train_cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();
  train_cmd->add_option("--config", config_path, "run config JSON");
  train_cmd->add_option("--out", out_dir, "output directory")->required();
  train_cmd->add_option("--seed", flags.seed, "base seed (run r uses seed+r)");
  train_cmd->add_option("--epochs", flags.epochs, "training epochs");
  train_cmd->add_option("--runs", flags.runs, "independent runs to average");
  train_cmd->add_option("--batch-size", flags.batch_size, "samples per step");
  train_cmd->add_option("--neg-ratio", flags.neg_ratio, "negatives per positive");
  train_cmd->add_option("--lr-fresh", flags.lr_fresh, "fresh-parameter rate");
  train_cmd->add_option("--lr-pretrained", flags.lr_pretrained,
                        "pretrained-parameter rate");
  train_cmd->add_option("--tuned-layers", flags.tuned_layers,
                        "trainable top layers");
  train_cmd->add_option("--max-history", flags.max_history, "history cutoff");
  train_cmd->add_option("--use-profiles", flags.use_profiles,
                        "enable profile fusion");
  train_cmd->add_option("--pretrained", flags.pretrained,
                        "checkpoint loaded before training");
  train_cmd->add_option("--cache", cache_path, "hidden-state cache file");
  train_cmd->callback([&] {
    RunConfig cfg = load_run_config(config_path);
    apply_overrides(cfg, flags);
    cmd_train(cfg, corpus_dir, out_dir, cache_path);
  });

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on the dev split");
  eval_cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();
  eval_cmd->add_option("--checkpoint", checkpoint, "model snapshot")->required();
  eval_cmd->add_option("--report", report_path, "metric report output path")
      ->required();
  eval_cmd->add_option("--config", config_path, "run config JSON");
  eval_cmd->add_option("--cache", cache_path, "hidden-state cache file");
  eval_cmd->add_option("--use-profiles", flags.use_profiles,
                       "enable profile fusion");
  eval_cmd->callback([&] {
    RunConfig cfg = load_run_config(config_path);
    if (flags.use_profiles) cfg.use_profiles = *flags.use_profiles;
    cmd_eval(cfg, corpus_dir, checkpoint, report_path, cache_path);
  });

  auto* report = app.add_subcommand("report", "join metric reports with cost ledgers");
  report->add_option("--metrics", metric_args,
                     "name=path metric report pairs (include base=...)");
  report->add_option("--ledger", ledger_paths, "cost ledger JSON files")
      ->required();
  report->add_option("--out", out_dir, "write the table as JSON");
  report->callback([&] { cmd_report(metric_args, ledger_paths, out_dir); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "once: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
