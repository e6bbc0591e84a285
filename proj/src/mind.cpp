#include <fstream>

#include "once/corpus.h"

namespace once::corpus {
namespace {

std::vector<std::string> split_on(const std::string& line, char sep) {
  std::vector<std::string> cols;
  size_t start = 0;
  while (true) {
    const size_t p = line.find(sep, start);
    if (p == std::string::npos) {
      cols.push_back(line.substr(start));
      break;
    }
    cols.push_back(line.substr(start, p - start));
    start = p + 1;
  }
  return cols;
}

std::vector<std::string> split_space(const std::string& s) {
  std::vector<std::string> out;
  for (auto& tok : split_on(s, ' ')) {
    if (!tok.empty()) out.push_back(std::move(tok));
  }
  return out;
}

void parse_news(const std::string& path, Corpus& corpus) {
  std::ifstream in(path);
  if (!in) fail("parse_mind: cannot open ", path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_on(line, '\t');
    if (cols.size() < 5) {
      fail("parse_mind: ", path, " line ", line_no, " has ", cols.size(),
           " columns, expected at least 5");
    }
    ContentItem item;
    item.id = cols[0];
    if (item.id.empty()) fail("parse_mind: ", path, " line ", line_no, " has empty id");
    if (corpus.contents.count(item.id)) {
      fail("parse_mind: ", path, " line ", line_no, " duplicates id ", item.id);
    }
    if (!cols[1].empty()) item.fields["category"] = cols[1];
    if (!cols[2].empty()) item.fields["subcategory"] = cols[2];
    if (!cols[3].empty()) item.fields["title"] = cols[3];
    if (!cols[4].empty()) item.fields["abstract"] = cols[4];
    corpus.contents.emplace(item.id, std::move(item));
  }
}

struct HistorySnapshot {
  size_t length = 0;
  bool seen = false;
};

void parse_behaviors(const std::string& path, Corpus& corpus,
                     std::vector<Impression>& out,
                     std::map<std::string, HistorySnapshot>& snapshots) {
  std::ifstream in(path);
  if (!in) fail("parse_mind: cannot open ", path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_on(line, '\t');
    if (cols.size() != 5) {
      fail("parse_mind: ", path, " line ", line_no, " has ", cols.size(),
           " columns, expected 5");
    }
    Impression imp;
    imp.id = cols[0];
    imp.user_id = cols[1];
    const auto history = split_space(cols[3]);
    for (const auto& cid : history) {
      if (!corpus.contents.count(cid)) {
        fail("parse_mind: ", path, " line ", line_no,
             " history references unknown news id ", cid);
      }
    }
    for (const auto& tok : split_space(cols[4])) {
      const size_t dash = tok.rfind('-');
      if (dash == std::string::npos || dash == 0 || dash + 2 != tok.size() ||
          (tok[dash + 1] != '0' && tok[dash + 1] != '1')) {
        fail("parse_mind: ", path, " line ", line_no,
             " has malformed candidate entry \"", tok, "\"");
      }
      const std::string cid = tok.substr(0, dash);
      if (!corpus.contents.count(cid)) {
        fail("parse_mind: ", path, " line ", line_no,
             " candidate references unknown news id ", cid);
      }
      imp.candidates.push_back(cid);
      imp.labels.push_back(tok[dash + 1] - '0');
    }

    // Keep the longest history snapshot per user; earlier lines win ties.
    auto& snap = snapshots[imp.user_id];
    auto& user = corpus.users[imp.user_id];
    if (!snap.seen || history.size() > snap.length) {
      snap.seen = true;
      snap.length = history.size();
      user.id = imp.user_id;
      user.history = history;
    }
    out.push_back(std::move(imp));
  }
}

}  // namespace

Corpus parse_mind(const std::string& news_tsv, const std::string& behaviors_tsv,
                  const std::string& behaviors_dev_tsv) {
  Corpus corpus;
  parse_news(news_tsv, corpus);
  std::map<std::string, HistorySnapshot> snapshots;
  parse_behaviors(behaviors_tsv, corpus, corpus.train, snapshots);
  if (!behaviors_dev_tsv.empty()) {
    parse_behaviors(behaviors_dev_tsv, corpus, corpus.dev, snapshots);
  }
  corpus.validate();
  return corpus;
}

}  // namespace once::corpus
