#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "once/genre.h"

namespace once::genre {

void HttpChatConfig::validate() const {
  if (base_url.empty()) fail("http client: base_url must be set");
  if (path.empty() || path[0] != '/') {
    fail("http client: path must start with '/', got '", path, "'");
  }
  if (timeout_s < 1) fail("http client: timeout_s must be >= 1");
  if (max_attempts < 1) fail("http client: max_attempts must be >= 1");
  if (backoff_base_ms < 0) fail("http client: backoff_base_ms must be >= 0");
}

HttpChat::HttpChat(HttpChatConfig cfg, std::function<void(int)> sleep_ms)
    : cfg_(std::move(cfg)), sleep_ms_(std::move(sleep_ms)) {
  cfg_.validate();
  if (!sleep_ms_) {
    sleep_ms_ = [](int ms) {
      std::this_thread::sleep_for(std::chrono::milliseconds(ms));
    };
  }
}

namespace {

bool retryable(int status) { return status == 429 || status >= 500; }

std::string excerpt(const std::string& body) {
  return body.size() <= 200 ? body : body.substr(0, 200) + "...";
}

ChatReply parse_completion(const std::string& body) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) fail("chat reply is not JSON: ", excerpt(body));
  if (!j.contains("choices") || !j["choices"].is_array() ||
      j["choices"].empty()) {
    fail("chat reply has no choices: ", excerpt(body));
  }
  const auto& msg = j["choices"][0];
  if (!msg.contains("message") || !msg["message"].contains("content") ||
      !msg["message"]["content"].is_string()) {
    fail("chat reply choice has no message content: ", excerpt(body));
  }
  ChatReply r;
  r.text = msg["message"]["content"].get<std::string>();
  if (j.contains("usage") && j["usage"].is_object()) {
    r.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0L);
    r.usage.completion_tokens = j["usage"].value("completion_tokens", 0L);
  }
  return r;
}

}  // namespace

ChatReply HttpChat::complete(const PromptTask& task) {
  nlohmann::ordered_json body;
  body["model"] = cfg_.model;
  body["messages"] = {{{"role", "system"}, {"content", task.system}},
                      {{"role", "user"}, {"content", task.user}}};
  body["temperature"] = task_temperature(task.kind);
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!cfg_.api_key_env.empty()) {
    if (const char* key = std::getenv(cfg_.api_key_env.c_str())) {
      headers.emplace("Authorization", format("Bearer ", key));
    }
  }

  std::string last_error;
  for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
    if (attempt > 1) sleep_ms_(cfg_.backoff_base_ms << (attempt - 2));
    // A client per call keeps complete() safe to run from several threads.
    httplib::Client cli(cfg_.base_url);
    cli.set_connection_timeout(cfg_.timeout_s, 0);
    cli.set_read_timeout(cfg_.timeout_s, 0);
    cli.set_write_timeout(cfg_.timeout_s, 0);
    auto res = cli.Post(cfg_.path, headers, payload, "application/json");
    if (!res) {
      last_error = format("transport error: ", httplib::to_string(res.error()));
      continue;
    }
    if (res->status == 200) return parse_completion(res->body);
    if (!retryable(res->status)) {
      fail("chat request for ", task.target, " failed with status ",
           res->status, ": ", excerpt(res->body));
    }
    last_error = format("status ", res->status, ": ", excerpt(res->body));
  }
  fail("chat request for ", task.target, " failed after ", cfg_.max_attempts,
       " attempts; last error: ", last_error);
}

}  // namespace once::genre
