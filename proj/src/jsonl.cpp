#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "once/corpus.h"

namespace once::corpus {
namespace {

using nlohmann::json;

void write_lines(const std::string& path, const std::vector<json>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("export_jsonl: cannot write ", path);
  for (const auto& j : lines) out << j.dump() << "\n";
}

std::vector<json> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("import_jsonl: cannot open ", path);
  std::vector<json> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      fail("import_jsonl: ", path, " line ", line_no, ": ", e.what());
    }
  }
  return out;
}

json impression_to_json(const Impression& imp) {
  json j;
  j["id"] = imp.id;
  j["user_id"] = imp.user_id;
  j["candidates"] = imp.candidates;
  j["labels"] = imp.labels;
  return j;
}

Impression impression_from_json(const json& j) {
  Impression imp;
  imp.id = j.at("id").get<std::string>();
  imp.user_id = j.at("user_id").get<std::string>();
  imp.candidates = j.at("candidates").get<std::vector<std::string>>();
  imp.labels = j.at("labels").get<std::vector<int>>();
  return imp;
}

}  // namespace

void export_jsonl(const Corpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);

  std::vector<json> lines;
  for (const auto& [id, c] : corpus.contents) {
    (void)id;
    json j;
    j["id"] = c.id;
    if (c.synthetic) j["synthetic"] = true;
    for (const auto& [name, text] : c.fields) j[name] = text;
    lines.push_back(std::move(j));
  }
  write_lines(dir + "/contents.jsonl", lines);

  lines.clear();
  for (const auto& [id, u] : corpus.users) {
    (void)id;
    json j;
    j["id"] = u.id;
    j["history"] = u.history;
    if (u.profile) {
      j["profile"] = {{"topics", u.profile->topics}, {"regions", u.profile->regions}};
    }
    if (!u.synthetic_history.empty()) j["synthetic_history"] = u.synthetic_history;
    lines.push_back(std::move(j));
  }
  write_lines(dir + "/users.jsonl", lines);

  lines.clear();
  for (const auto& imp : corpus.train) lines.push_back(impression_to_json(imp));
  write_lines(dir + "/impressions.train.jsonl", lines);

  lines.clear();
  for (const auto& imp : corpus.dev) lines.push_back(impression_to_json(imp));
  write_lines(dir + "/impressions.dev.jsonl", lines);
}

Corpus import_jsonl(const std::string& dir) {
  Corpus corpus;
  for (const auto& j : read_lines(dir + "/contents.jsonl")) {
    ContentItem c;
    c.id = j.at("id").get<std::string>();
    for (const auto& [key, value] : j.items()) {
      if (key == "id") continue;
      if (key == "synthetic") {
        c.synthetic = value.get<bool>();
        continue;
      }
      c.fields[key] = value.get<std::string>();
    }
    if (corpus.contents.count(c.id)) fail("import_jsonl: duplicate content id ", c.id);
    corpus.contents.emplace(c.id, std::move(c));
  }
  for (const auto& j : read_lines(dir + "/users.jsonl")) {
    UserRecord u;
    u.id = j.at("id").get<std::string>();
    u.history = j.at("history").get<std::vector<std::string>>();
    if (j.contains("profile")) {
      Profile p;
      p.topics = j["profile"].at("topics").get<std::vector<std::string>>();
      p.regions = j["profile"].at("regions").get<std::vector<std::string>>();
      u.profile = std::move(p);
    }
    if (j.contains("synthetic_history")) {
      u.synthetic_history = j["synthetic_history"].get<std::vector<std::string>>();
    }
    if (corpus.users.count(u.id)) fail("import_jsonl: duplicate user id ", u.id);
    corpus.users.emplace(u.id, std::move(u));
  }
  for (const auto& j : read_lines(dir + "/impressions.train.jsonl")) {
    corpus.train.push_back(impression_from_json(j));
  }
  for (const auto& j : read_lines(dir + "/impressions.dev.jsonl")) {
    corpus.dev.push_back(impression_from_json(j));
  }
  corpus.validate();
  return corpus;
}

}  // namespace once::corpus
