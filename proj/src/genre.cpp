#include "once/genre.h"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "once/sha256.h"

namespace once::genre {

const char* task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::content_summarizer: return "content_summarizer";
    case TaskKind::user_profiler: return "user_profiler";
    case TaskKind::content_generator: return "content_generator";
    case TaskKind::chain_content_generator: return "chain_content_generator";
  }
  fail("task_kind_name: bad kind");
}

double task_temperature(TaskKind kind) {
  switch (kind) {
    case TaskKind::content_summarizer:
    case TaskKind::user_profiler:
      return 0.0;
    case TaskKind::content_generator:
    case TaskKind::chain_content_generator:
      return 0.7;
  }
  fail("task_temperature: bad kind");
}

// ------------------------------ prompts ------------------------------

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur)) lines.push_back(cur);
  return lines;
}

std::string strip_quotes(std::string s) {
  if (s.size() >= 2) {
    const char a = s.front();
    const char b = s.back();
    if ((a == '"' && b == '"') || (a == '\'' && b == '\'')) {
      s = trim(s.substr(1, s.size() - 2));
    }
  }
  return s;
}

// The most recent items, rendered oldest to newest so the newest comes last.
std::string render_history_block(const corpus::Corpus& c,
                                 const corpus::UserRecord& user,
                                 const PromptOptions& opt) {
  std::string out = "Reading history, newest last:\n";
  const auto& h = user.history;
  const size_t limit = static_cast<size_t>(std::max(opt.max_history_lines, 0));
  const size_t start = h.size() > limit ? h.size() - limit : 0;
  size_t rendered = 0;
  for (size_t i = start; i < h.size(); ++i) {
    const auto& item = c.content(h[i]);
    const std::string* title = item.field("title");
    if (title == nullptr) fail("content ", item.id, " has no title field");
    const std::string* cat = item.field("category");
    out += format("- ", *title, " (", cat ? *cat : "uncategorized", ")\n");
    ++rendered;
  }
  if (rendered == 0) out += "(none)\n";
  return out;
}

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += sep;
    out += v[i];
  }
  return out;
}

std::string generator_system(int count) {
  return format(
      "You write news items a reader would enjoy next. Based on the reading "
      "history, reply with exactly ", count, " lines and nothing else. ",
      "Each line must have the form: title | category.");
}

int count_words(const std::string& text) {
  std::istringstream in(text);
  std::string w;
  int n = 0;
  while (in >> w) ++n;
  return n;
}

}  // namespace

PromptTask render_content_summarizer(const corpus::ContentItem& item) {
  for (const char* name : {"title", "abstract", "category"}) {
    if (item.field(name) == nullptr) {
      fail("content ", item.id, " has no ", name, " field");
    }
  }
  PromptTask t;
  t.kind = TaskKind::content_summarizer;
  t.system =
      "You improve news headlines. Given a content item's title, abstract, "
      "and category, reply with a single line containing a clearer, more "
      "informative title. Reply with the title only.";
  t.user = format("title: ", *item.field("title"),
                  "\nabstract: ", *item.field("abstract"),
                  "\ncategory: ", *item.field("category"));
  t.target = item.id;
  return t;
}

PromptTask render_user_profiler(const corpus::Corpus& c,
                                const corpus::UserRecord& user,
                                const PromptOptions& opt) {
  PromptTask t;
  t.kind = TaskKind::user_profiler;
  t.system =
      "You analyze a reader's news history. Reply with a JSON object of the "
      "form {\"topics\": [...], \"regions\": [...]} listing the reader's "
      "topics of interest and regions of interest as short lowercase strings. "
      "Reply with the JSON object only.";
  t.user = render_history_block(c, user, opt);
  t.target = user.id;
  return t;
}

PromptTask render_content_generator(const corpus::Corpus& c,
                                    const corpus::UserRecord& user, int count,
                                    const PromptOptions& opt) {
  if (count < 1) fail("render_content_generator: count must be >= 1");
  PromptTask t;
  t.kind = TaskKind::content_generator;
  t.system = generator_system(count);
  t.user = render_history_block(c, user, opt);
  t.target = user.id;
  t.count = count;
  return t;
}

PromptTask render_chain_generator(const corpus::Corpus& c,
                                  const corpus::UserRecord& user,
                                  const corpus::Profile& profile, int count,
                                  const PromptOptions& opt) {
  if (count < 1) fail("render_chain_generator: count must be >= 1");
  PromptTask t;
  t.kind = TaskKind::chain_content_generator;
  t.system = generator_system(count);
  t.user = format("Reader interests:\ntopics: ", join(profile.topics, ", "),
                  "\nregions: ", join(profile.regions, ", "), "\n\n",
                  render_history_block(c, user, opt));
  t.target = user.id;
  t.count = count;
  return t;
}

// ------------------------------ parsers ------------------------------

std::string parse_enhanced_title(const std::string& reply) {
  for (const auto& line : split_lines(reply)) {
    std::string t = strip_quotes(trim(line));
    if (!t.empty()) return t;
  }
  throw ParseFailure("summarizer reply has no usable line", reply);
}

namespace {

std::vector<std::string> parse_name_list(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, ',')) {
    std::string name = trim(cur);
    // Tolerate JSON-ish leftovers around the names.
    while (!name.empty() && (name.front() == '[' || name.front() == '"' ||
                             name.front() == '\'')) {
      name.erase(name.begin());
    }
    while (!name.empty() && (name.back() == ']' || name.back() == '"' ||
                             name.back() == '\'' || name.back() == '.' ||
                             name.back() == '}')) {
      name.pop_back();
    }
    name = trim(name);
    if (!name.empty() && name != "(none)") out.push_back(name);
  }
  return out;
}

bool read_string_array(const nlohmann::json& j, const char* key,
                       std::vector<std::string>& out) {
  auto it = j.find(key);
  if (it == j.end()) return true;
  if (!it->is_array()) return false;
  for (const auto& e : *it) {
    if (!e.is_string()) return false;
    out.push_back(e.get<std::string>());
  }
  return true;
}

}  // namespace

corpus::Profile parse_profile(const std::string& reply) {
  corpus::Profile p;
  const auto j = nlohmann::json::parse(reply, nullptr, false);
  if (j.is_object() && read_string_array(j, "topics", p.topics) &&
      read_string_array(j, "regions", p.regions)) {
    return p;
  }
  p = corpus::Profile{};
  bool found = false;
  for (const auto& line : split_lines(reply)) {
    const size_t colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string label = trim(line.substr(0, colon));
    label = strip_quotes(label);
    std::transform(label.begin(), label.end(), label.begin(),
                   [](unsigned char ch) { return std::tolower(ch); });
    if (label == "topics") {
      p.topics = parse_name_list(line.substr(colon + 1));
      found = true;
    } else if (label == "regions") {
      p.regions = parse_name_list(line.substr(colon + 1));
      found = true;
    }
  }
  if (!found) throw ParseFailure("profiler reply has no topics or regions", reply);
  return p;
}

std::vector<GeneratedItem> parse_generated(const std::string& reply,
                                           int expect_count) {
  std::vector<GeneratedItem> items;
  for (const auto& line : split_lines(reply)) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    GeneratedItem item;
    const size_t bar = t.find('|');
    if (bar == std::string::npos) {
      item.title = strip_quotes(trim(t));
    } else {
      item.title = strip_quotes(trim(t.substr(0, bar)));
      item.category = trim(t.substr(bar + 1));
    }
    if (item.title.empty()) {
      throw ParseFailure("generator line has an empty title", reply);
    }
    items.push_back(std::move(item));
  }
  if (expect_count > 0 && static_cast<int>(items.size()) != expect_count) {
    throw ParseFailure(format("generator reply has ", items.size(),
                              " items, expected ", expect_count),
                       reply);
  }
  return items;
}

std::string task_hash(const PromptTask& task) {
  return digest_hex(sha256(format(task_kind_name(task.kind), '\x1f', task.count,
                                  '\x1f', task.system, '\x1f', task.user)));
}

// ------------------------------ mock client ------------------------------

namespace {

struct HistoryLine {
  std::string title;
  std::string category;
};

// Reads back the "- {title} ({category})" lines of a rendered prompt, so the
// mock needs no access to the corpus the prompt came from.
std::vector<HistoryLine> parse_history_lines(const std::string& user_text) {
  std::vector<HistoryLine> out;
  for (const auto& raw : split_lines(user_text)) {
    const std::string line = trim(raw);
    if (line.size() < 3 || line.compare(0, 2, "- ") != 0) continue;
    const std::string body = line.substr(2);
    const size_t open = body.rfind(" (");
    if (open == std::string::npos || body.back() != ')') {
      out.push_back({trim(body), ""});
      continue;
    }
    out.push_back({trim(body.substr(0, open)),
                   body.substr(open + 2, body.size() - open - 3)});
  }
  return out;
}

std::string prompt_field(const std::string& user_text, const std::string& key) {
  const std::string prefix = key + ": ";
  for (const auto& line : split_lines(user_text)) {
    if (line.compare(0, prefix.size(), prefix) == 0) {
      return trim(line.substr(prefix.size()));
    }
  }
  return "";
}

// Distinct categories ordered by descending frequency, ties alphabetical.
std::vector<std::string> frequent_categories(
    const std::vector<HistoryLine>& lines) {
  std::map<std::string, int> freq;
  for (const auto& l : lines) {
    if (!l.category.empty()) ++freq[l.category];
  }
  std::vector<std::pair<int, std::string>> order;
  for (const auto& [name, n] : freq) order.emplace_back(-n, name);
  std::sort(order.begin(), order.end());
  std::vector<std::string> out;
  for (const auto& [n, name] : order) out.push_back(name);
  return out;
}

}  // namespace

ChatReply MockChat::complete(const PromptTask& task) {
  const Digest d = sha256(format(seed_, '\x1f', task_hash(task)));
  uint64_t s = 0;
  for (int i = 0; i < 8; ++i) s |= static_cast<uint64_t>(d[i]) << (8 * i);
  Rng rng(s);

  std::string text;
  switch (task.kind) {
    case TaskKind::content_summarizer: {
      const std::string title = prompt_field(task.user, "title");
      const std::string category = prompt_field(task.user, "category");
      text = trim(format(title, " ", category));
      if (text.empty()) text = "untitled";
      break;
    }
    case TaskKind::user_profiler: {
      const auto lines = parse_history_lines(task.user);
      nlohmann::ordered_json j;
      j["topics"] = frequent_categories(lines);
      j["regions"] = nlohmann::json::array();
      text = j.dump();
      break;
    }
    case TaskKind::content_generator:
    case TaskKind::chain_content_generator: {
      const auto lines = parse_history_lines(task.user);
      // Generated items target the dominant interest: every line takes the
      // modal history category, so occasional off-interest reads are voted
      // down rather than echoed back.
      std::map<std::string, std::vector<std::string>> words;
      for (const auto& l : lines) {
        const std::string cat = l.category.empty() ? "general" : l.category;
        std::istringstream in(l.title);
        std::string w;
        while (in >> w) words[cat].push_back(w);
      }
      const auto ranked = frequent_categories(lines);
      const std::string cat = ranked.empty() ? "general" : ranked.front();
      // Titles reuse distinct observed words so a generated item stays close
      // to the category's text rather than hammering one repeated word.
      auto pool = words[cat];
      std::sort(pool.begin(), pool.end());
      pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
      std::vector<std::string> out_lines;
      for (int i = 0; i < task.count; ++i) {
        std::vector<std::string> title_words;
        if (pool.empty()) {
          title_words.assign(4, "fresh");
        } else {
          rng.shuffle(pool);
          const auto len = std::min<size_t>(pool.size(),
                                            4 + static_cast<size_t>(rng.below(4)));
          title_words.assign(pool.begin(), pool.begin() + len);
        }
        out_lines.push_back(format(join(title_words, " "), " | ", cat));
      }
      text = join(out_lines, "\n");
      break;
    }
  }

  ChatReply reply;
  reply.text = text;
  reply.usage.prompt_tokens = count_words(task.system) + count_words(task.user);
  reply.usage.completion_tokens = count_words(text);
  return reply;
}

// ------------------------------ replay client ------------------------------

ReplayChat::ReplayChat(const std::string& fixture_path) {
  std::ifstream in(fixture_path);
  if (!in) fail("cannot open replay fixture ", fixture_path);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_object() || !j.contains("task_hash") || !j.contains("reply")) {
      fail("replay fixture ", fixture_path, " line ", line_no, " is malformed");
    }
    ChatReply r;
    r.text = j.at("reply").get<std::string>();
    r.usage.prompt_tokens = j.value("prompt_tokens", 0L);
    r.usage.completion_tokens = j.value("completion_tokens", 0L);
    replies_[j.at("task_hash").get<std::string>()] = std::move(r);
  }
}

ChatReply ReplayChat::complete(const PromptTask& task) {
  auto it = replies_.find(task_hash(task));
  if (it == replies_.end()) {
    fail("no recorded reply for ", task_kind_name(task.kind), " task on ",
         task.target);
  }
  return it->second;
}

void append_fixture(const std::string& path, const PromptTask& task,
                    const ChatReply& reply) {
  std::ofstream out(path, std::ios::app);
  if (!out) fail("cannot open replay fixture ", path, " for append");
  nlohmann::ordered_json j;
  j["task_hash"] = task_hash(task);
  j["kind"] = task_kind_name(task.kind);
  j["target"] = task.target;
  j["reply"] = reply.text;
  j["prompt_tokens"] = reply.usage.prompt_tokens;
  j["completion_tokens"] = reply.usage.completion_tokens;
  out << j.dump() << "\n";
}

// ------------------------------ schemes ------------------------------

Scheme scheme_from_name(const std::string& name) {
  if (name == "cs") return Scheme::cs;
  if (name == "up") return Scheme::up;
  if (name == "cg") return Scheme::cg;
  if (name == "chain") return Scheme::chain;
  if (name == "all") return Scheme::all;
  fail("unknown augmentation scheme '", name,
       "' (expected cs, up, cg, chain, or all)");
}

const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::cs: return "cs";
    case Scheme::up: return "up";
    case Scheme::cg: return "cg";
    case Scheme::chain: return "chain";
    case Scheme::all: return "all";
  }
  fail("scheme_name: bad scheme");
}

// ------------------------------ driver ------------------------------

namespace {

struct LogRecord {
  bool ok = false;
  std::string reply;  // raw reply when ok, error text otherwise
  TokenUsage usage;
  int retries = 0;
};

std::map<std::string, LogRecord> load_record_log(const std::string& path) {
  std::map<std::string, LogRecord> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_object() || !j.contains("task_hash") || !j.contains("ok")) {
      fail("record log ", path, " line ", line_no, " is malformed");
    }
    LogRecord r;
    r.ok = j.at("ok").get<bool>();
    r.reply = r.ok ? j.value("reply", "") : j.value("error", "");
    r.usage.prompt_tokens = j.value("prompt_tokens", 0L);
    r.usage.completion_tokens = j.value("completion_tokens", 0L);
    r.retries = j.value("retries", 0);
    out[j.at("task_hash").get<std::string>()] = std::move(r);
  }
  return out;
}

nlohmann::ordered_json parsed_payload_json(const PromptTask& task,
                                           const std::string& reply) {
  switch (task.kind) {
    case TaskKind::content_summarizer:
      return parse_enhanced_title(reply);
    case TaskKind::user_profiler: {
      const auto p = parse_profile(reply);
      nlohmann::ordered_json j;
      j["topics"] = p.topics;
      j["regions"] = p.regions;
      return j;
    }
    case TaskKind::content_generator:
    case TaskKind::chain_content_generator: {
      auto arr = nlohmann::ordered_json::array();
      for (const auto& g : parse_generated(reply, task.count)) {
        nlohmann::ordered_json j;
        j["title"] = g.title;
        j["category"] = g.category;
        arr.push_back(std::move(j));
      }
      return arr;
    }
  }
  fail("parsed_payload_json: bad kind");
}

class Driver {
 public:
  Driver(ChatClient& client, const AugmentOptions& opt)
      : client_(client), opt_(opt) {
    if (!opt.record_log.empty()) {
      done_ = load_record_log(opt.record_log);
      log_.open(opt.record_log, std::ios::app);
      if (!log_) fail("cannot open record log ", opt.record_log, " for append");
    }
  }

  // A target that cannot even render a prompt counts as a failed target,
  // recorded under a sentinel hash so a resumed run skips it again.
  void note_render_failure(TaskKind kind, const std::string& target,
                           const std::string& error) {
    const std::string hash = digest_hex(
        sha256(format("render-failure\x1f", task_kind_name(kind), '\x1f', target)));
    if (done_.find(hash) != done_.end()) {
      ++stats_.resumed;
      ++stats_.failed;
      return;
    }
    ++stats_.attempted;
    ++stats_.failed;
    PromptTask t;
    t.kind = kind;
    t.target = target;
    write_record(t, hash, LogRecord{false, error, {}, 0}, error);
  }

  // Renders one task per target, resolves each from the record log or the
  // client, and applies successful parses in sorted target order.
  void run_phase(const std::vector<PromptTask>& tasks,
                 const std::function<void(const PromptTask&,
                                          const std::string&)>& apply) {
    std::vector<const PromptTask*> fresh;
    std::vector<std::string> hashes(tasks.size());
    for (size_t i = 0; i < tasks.size(); ++i) {
      hashes[i] = task_hash(tasks[i]);
      if (done_.find(hashes[i]) == done_.end()) fresh.push_back(&tasks[i]);
    }

    std::map<std::string, LogRecord> results = collect(fresh);

    for (size_t i = 0; i < tasks.size(); ++i) {
      const PromptTask& task = tasks[i];
      const auto done_it = done_.find(hashes[i]);
      const bool from_log = done_it != done_.end();
      LogRecord rec = from_log ? done_it->second : results.at(hashes[i]);
      if (from_log) {
        ++stats_.resumed;
      } else {
        ++stats_.attempted;
      }
      stats_.usage.prompt_tokens += rec.usage.prompt_tokens;
      stats_.usage.completion_tokens += rec.usage.completion_tokens;

      std::string error;
      if (rec.ok) {
        try {
          apply(task, rec.reply);
          ++stats_.succeeded;
        } catch (const Error& e) {
          rec.ok = false;
          error = e.what();
        }
      } else {
        error = rec.reply;
      }
      if (!rec.ok) ++stats_.failed;
      if (!from_log) write_record(task, hashes[i], rec, error);
    }
  }

  AugmentStats finish() {
    const long total = stats_.attempted + stats_.resumed;
    if (total > 0 &&
        static_cast<double>(stats_.failed) > opt_.fail_limit * total) {
      fail("augmentation failed for ", stats_.failed, " of ", total,
           " targets, above the limit of ", opt_.fail_limit * 100, "%");
    }
    return stats_;
  }

 private:
  // Issues fresh calls with up to opt_.concurrency worker threads. Parse
  // failures retry once, sequentially, since they are expected to be rare.
  std::map<std::string, LogRecord> collect(
      const std::vector<const PromptTask*>& fresh) {
    std::vector<LogRecord> raw(fresh.size());
    std::atomic<size_t> next{0};
    auto worker = [&]() {
      for (size_t i = next.fetch_add(1); i < fresh.size();
           i = next.fetch_add(1)) {
        try {
          const ChatReply r = client_.complete(*fresh[i]);
          raw[i] = {true, r.text, r.usage, 0};
        } catch (const Error& e) {
          raw[i] = {false, e.what(), {}, 0};
        }
      }
    };
    const size_t n_threads =
        std::min<size_t>(std::max(opt_.concurrency, 1), fresh.size());
    if (n_threads > 1) {
      std::vector<std::thread> pool;
      for (size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    } else {
      worker();
    }

    std::map<std::string, LogRecord> out;
    for (size_t i = 0; i < fresh.size(); ++i) {
      LogRecord rec = std::move(raw[i]);
      if (rec.ok && !parses(*fresh[i], rec.reply)) {
        try {
          const ChatReply r = client_.complete(*fresh[i]);
          rec.reply = r.text;
          rec.usage.prompt_tokens += r.usage.prompt_tokens;
          rec.usage.completion_tokens += r.usage.completion_tokens;
          rec.retries = 1;
        } catch (const Error& e) {
          rec = {false, e.what(), rec.usage, 1};
        }
      }
      out.emplace(task_hash(*fresh[i]), std::move(rec));
    }
    return out;
  }

  bool parses(const PromptTask& task, const std::string& reply) const {
    try {
      parsed_payload_json(task, reply);
      return true;
    } catch (const ParseFailure&) {
      return false;
    }
  }

  void write_record(const PromptTask& task, const std::string& hash,
                    const LogRecord& rec, const std::string& error) {
    if (!log_.is_open()) return;
    nlohmann::ordered_json j;
    j["kind"] = task_kind_name(task.kind);
    j["target"] = task.target;
    j["task_hash"] = hash;
    j["ok"] = rec.ok;
    if (rec.ok) {
      j["reply"] = rec.reply;
      j["parsed"] = parsed_payload_json(task, rec.reply);
    } else {
      // On a parse or apply failure the raw reply is still worth keeping;
      // on a client failure there is none and rec.reply holds the error.
      if (error != rec.reply) j["reply"] = rec.reply;
      j["error"] = error;
    }
    j["prompt_tokens"] = rec.usage.prompt_tokens;
    j["completion_tokens"] = rec.usage.completion_tokens;
    j["retries"] = rec.retries;
    j["timestamp"] = std::chrono::duration_cast<std::chrono::seconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    log_ << j.dump() << "\n";
    log_.flush();
  }

  ChatClient& client_;
  AugmentOptions opt_;
  AugmentStats stats_;
  std::map<std::string, LogRecord> done_;
  std::ofstream log_;
};

std::vector<const corpus::UserRecord*> new_users(const corpus::Corpus& c) {
  std::vector<const corpus::UserRecord*> out;
  for (const auto& [id, user] : c.users) {
    if (corpus::classify_user(user) == corpus::UserClass::New) {
      out.push_back(&user);
    }
  }
  return out;
}

void run_summarizer(Driver& driver, corpus::Corpus& c) {
  std::vector<PromptTask> tasks;
  for (const auto& [id, item] : c.contents) {
    try {
      tasks.push_back(render_content_summarizer(item));
    } catch (const Error& e) {
      // Items missing a required field keep their original title.
      driver.note_render_failure(TaskKind::content_summarizer, id, e.what());
    }
  }
  driver.run_phase(tasks, [&](const PromptTask& t, const std::string& reply) {
    c.contents.at(t.target).fields["title"] = parse_enhanced_title(reply);
  });
}

void run_profiler(Driver& driver, corpus::Corpus& c, const AugmentOptions& opt,
                  bool new_only) {
  std::vector<PromptTask> tasks;
  if (new_only) {
    for (const auto* user : new_users(c)) {
      tasks.push_back(render_user_profiler(c, *user, opt.prompt));
    }
  } else {
    for (const auto& [id, user] : c.users) {
      tasks.push_back(render_user_profiler(c, user, opt.prompt));
    }
  }
  driver.run_phase(tasks, [&](const PromptTask& t, const std::string& reply) {
    c.users.at(t.target).profile = parse_profile(reply);
  });
}

void run_generator(Driver& driver, corpus::Corpus& c,
                   const AugmentOptions& opt, bool chained) {
  if (opt.generation_count == 0) return;
  std::vector<PromptTask> tasks;
  for (const auto* user : new_users(c)) {
    // A chained run uses the profile when the profiler produced one and
    // falls back to the history-only prompt when it failed.
    if (chained && user->profile.has_value()) {
      tasks.push_back(render_chain_generator(c, *user, *user->profile,
                                             opt.generation_count, opt.prompt));
    } else {
      tasks.push_back(render_content_generator(c, *user, opt.generation_count,
                                               opt.prompt));
    }
  }
  driver.run_phase(tasks, [&](const PromptTask& t, const std::string& reply) {
    const auto items = parse_generated(reply, t.count);
    auto& user = c.users.at(t.target);
    std::vector<std::string> ids;
    for (size_t i = 0; i < items.size(); ++i) {
      const std::string id = format("G-", t.target, "-", i + 1);
      if (c.contents.count(id) > 0) {
        fail("generated content id ", id, " already exists");
      }
      ids.push_back(id);
    }
    for (size_t i = 0; i < items.size(); ++i) {
      corpus::ContentItem item;
      item.id = ids[i];
      item.fields["title"] = items[i].title;
      if (!items[i].category.empty()) {
        item.fields["category"] = items[i].category;
      }
      item.synthetic = true;
      c.contents.emplace(item.id, std::move(item));
      user.synthetic_history.push_back(ids[i]);
    }
  });
}

}  // namespace

AugmentStats run_augmentation(corpus::Corpus& corpus, ChatClient& client,
                              const AugmentOptions& opt) {
  if (opt.generation_count < 0) {
    fail("augment: generation_count must be >= 0");
  }
  if (opt.concurrency < 1) fail("augment: concurrency must be >= 1");
  if (opt.fail_limit < 0.0 || opt.fail_limit > 1.0) {
    fail("augment: fail_limit must be in [0, 1]");
  }
  corpus.validate();

  Driver driver(client, opt);
  switch (opt.scheme) {
    case Scheme::cs:
      run_summarizer(driver, corpus);
      break;
    case Scheme::up:
      run_profiler(driver, corpus, opt, false);
      break;
    case Scheme::cg:
      run_generator(driver, corpus, opt, false);
      break;
    case Scheme::chain:
      run_profiler(driver, corpus, opt, true);
      run_generator(driver, corpus, opt, true);
      break;
    case Scheme::all:
      run_summarizer(driver, corpus);
      run_profiler(driver, corpus, opt, true);
      run_generator(driver, corpus, opt, true);
      break;
  }
  return driver.finish();
}

// ------------------------------ cost ledger ------------------------------

double ccr(const CostLedger& ledger) {
  if (!ledger.improvement_points.has_value()) {
    fail("ccr: ledger for scheme '", ledger.scheme,
         "' has no measured improvement");
  }
  const double dollars = ledger.cost();
  if (dollars <= 0.0) fail("ccr: cost must be positive");
  return 100.0 * *ledger.improvement_points / dollars;
}

nlohmann::ordered_json ledger_json(const CostLedger& ledger) {
  nlohmann::ordered_json j;
  j["scheme"] = ledger.scheme;
  j["prompt_tokens"] = ledger.prompt_tokens;
  j["completion_tokens"] = ledger.completion_tokens;
  j["pricing"] = {{"input_per_1k", ledger.pricing.input_per_1k},
                  {"output_per_1k", ledger.pricing.output_per_1k}};
  j["cost"] = ledger.cost();
  if (ledger.improvement_points.has_value()) {
    j["improvement_points"] = *ledger.improvement_points;
  }
  return j;
}

CostLedger ledger_from_json(const nlohmann::json& j) {
  CostLedger l;
  if (!j.is_object()) fail("ledger: expected a JSON object");
  l.scheme = j.value("scheme", "");
  l.prompt_tokens = j.value("prompt_tokens", 0L);
  l.completion_tokens = j.value("completion_tokens", 0L);
  if (j.contains("pricing")) {
    const auto& p = j.at("pricing");
    l.pricing.input_per_1k = p.value("input_per_1k", 0.0);
    l.pricing.output_per_1k = p.value("output_per_1k", 0.0);
  }
  if (j.contains("improvement_points")) {
    l.improvement_points = j.at("improvement_points").get<double>();
  }
  return l;
}

}  // namespace once::genre
