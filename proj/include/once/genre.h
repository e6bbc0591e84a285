#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "once/common.h"
#include "once/corpus.h"

namespace once::genre {

// Data augmentation through a chat-completion model in three one-pass roles
// (content summarizer, user profiler, personalized content generator) plus
// the profile-then-generate chain, with cost accounting per scheme.

enum class TaskKind {
  content_summarizer,
  user_profiler,
  content_generator,
  chain_content_generator,
};

const char* task_kind_name(TaskKind kind);

// Sampling temperature: generation wants diversity, extraction does not.
double task_temperature(TaskKind kind);

struct PromptTask {
  TaskKind kind = TaskKind::content_summarizer;
  std::string system;
  std::string user;
  std::string target;  // content id or user id
  int count = 0;       // generated items, content-generator kinds only
};

struct TokenUsage {
  long prompt_tokens = 0;
  long completion_tokens = 0;
};

struct ChatReply {
  std::string text;
  TokenUsage usage;
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  // Returns the reply or throws Error after exhausting any internal retries.
  // Implementations must tolerate concurrent calls from several threads.
  virtual ChatReply complete(const PromptTask& task) = 0;
};

struct PromptOptions {
  int max_history_lines = 50;  // most recent items, rendered newest-last
};

PromptTask render_content_summarizer(const corpus::ContentItem& item);
PromptTask render_user_profiler(const corpus::Corpus& c,
                                const corpus::UserRecord& user,
                                const PromptOptions& opt = {});
PromptTask render_content_generator(const corpus::Corpus& c,
                                    const corpus::UserRecord& user, int count,
                                    const PromptOptions& opt = {});
PromptTask render_chain_generator(const corpus::Corpus& c,
                                  const corpus::UserRecord& user,
                                  const corpus::Profile& profile, int count,
                                  const PromptOptions& opt = {});

// Raised when a reply does not match the shape the task demands.
class ParseFailure : public Error {
 public:
  ParseFailure(const std::string& what, std::string raw)
      : Error(what), raw_reply(std::move(raw)) {}
  std::string raw_reply;
};

// First non-empty line, stripped of surrounding quotes.
std::string parse_enhanced_title(const std::string& reply);

// Strict JSON {"topics": [...], "regions": [...]} with a lenient fallback
// that reads `topics:` / `regions:` labeled comma lists.
corpus::Profile parse_profile(const std::string& reply);

struct GeneratedItem {
  std::string title;
  std::string category;  // empty when the line has no separator
};

// One item per non-empty line, "title | category". A positive expect_count
// demands exactly that many lines.
std::vector<GeneratedItem> parse_generated(const std::string& reply,
                                           int expect_count = 0);

// Stable identity of a task for replay fixtures and the resume log.
std::string task_hash(const PromptTask& task);

// Deterministic offline stand-in. Replies are keyed by hash(seed, task), and
// carry real signal: the summarizer echoes the title plus the category word,
// the profiler extracts the most frequent history categories, the generator
// samples titles from the history's per-category word distribution.
class MockChat : public ChatClient {
 public:
  explicit MockChat(uint64_t seed) : seed_(seed) {}
  ChatReply complete(const PromptTask& task) override;

 private:
  uint64_t seed_;
};

// Plays back recorded replies from a JSONL fixture of
// {"task_hash":..,"reply":..,"prompt_tokens":..,"completion_tokens":..}.
class ReplayChat : public ChatClient {
 public:
  explicit ReplayChat(const std::string& fixture_path);
  ChatReply complete(const PromptTask& task) override;

 private:
  std::map<std::string, ChatReply> replies_;
};

void append_fixture(const std::string& path, const PromptTask& task,
                    const ChatReply& reply);

struct HttpChatConfig {
  std::string base_url;  // e.g. "http://127.0.0.1:8089"
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-3.5-turbo";
  std::string api_key_env = "ONCE_API_KEY";
  int timeout_s = 30;
  int max_attempts = 5;
  int backoff_base_ms = 1000;  // doubles per retry

  void validate() const;
};

// Chat-completions JSON over HTTP: POST {model, messages, temperature}.
// Transport errors, 429 and 5xx retry with exponential backoff; other
// statuses fail immediately.
class HttpChat : public ChatClient {
 public:
  explicit HttpChat(HttpChatConfig cfg,
                    std::function<void(int)> sleep_ms = {});
  ChatReply complete(const PromptTask& task) override;

 private:
  HttpChatConfig cfg_;
  std::function<void(int)> sleep_ms_;
};

enum class Scheme { cs, up, cg, chain, all };

Scheme scheme_from_name(const std::string& name);
const char* scheme_name(Scheme s);

struct AugmentOptions {
  Scheme scheme = Scheme::cs;
  int generation_count = 2;  // synthetic items per new user
  int concurrency = 4;
  PromptOptions prompt;
  std::string record_log;    // append-only JSONL; enables resume when set
  double fail_limit = 0.10;  // failed fraction above this aborts the run
};

struct AugmentStats {
  long attempted = 0;  // targets processed with fresh client calls
  long succeeded = 0;
  long failed = 0;
  long resumed = 0;  // targets replayed from the record log
  // Total over fresh calls plus resumed records, so the sum always matches
  // the record log even when a run is split across interruptions.
  TokenUsage usage;
};

// Applies the scheme to the corpus in memory: summaries replace titles,
// profiles attach to users, generated items join synthetic history. Failed
// targets keep their original data. Callers own persistence; the input
// directory is never touched here.
AugmentStats run_augmentation(corpus::Corpus& corpus, ChatClient& client,
                              const AugmentOptions& opt);

struct Pricing {
  double input_per_1k = 0.0;
  double output_per_1k = 0.0;
};

struct CostLedger {
  std::string scheme;
  long prompt_tokens = 0;
  long completion_tokens = 0;
  Pricing pricing;
  std::optional<double> improvement_points;  // AUC delta in percentage points

  double cost() const {
    return (static_cast<double>(prompt_tokens) * pricing.input_per_1k +
            static_cast<double>(completion_tokens) * pricing.output_per_1k) /
           1000.0;
  }
};

// Percentage ratio of metric improvement to dollar cost.
double ccr(const CostLedger& ledger);

nlohmann::ordered_json ledger_json(const CostLedger& ledger);
CostLedger ledger_from_json(const nlohmann::json& j);

}  // namespace once::genre
