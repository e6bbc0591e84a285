#include "once/corpus.h"

#include <algorithm>
#include <cctype>

namespace once::corpus {

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab) {
  std::vector<int> out;
  for (const auto& w : split_words(text)) out.push_back(vocab.lookup(w));
  return out;
}

std::string ContentTemplate::render(const ContentItem& item) const {
  std::string s = label;
  for (const auto& [field, prefix] : fields) {
    const std::string* text = item.field(field);
    if (!text) continue;
    s += " ";
    s += prefix;
    s += " ";
    s += *text;
  }
  return s;
}

std::string ContentTemplate::describe() const {
  std::string s = "label=" + label;
  for (const auto& [field, prefix] : fields) {
    s += ";" + field + "=" + prefix;
  }
  return s;
}

ContentTemplate ContentTemplate::news_default() {
  ContentTemplate t;
  t.label = "news article:";
  t.fields = {{"title", "title:"},
              {"abstract", "abstract:"},
              {"category", "category:"},
              {"subcategory", "subcategory:"},
              {"description", "description:"}};
  return t;
}

Vocabulary build_vocabulary(const std::vector<const ContentItem*>& contents,
                            int min_frequency, const ContentTemplate& tmpl) {
  if (min_frequency < 1) fail("build_vocabulary: min_frequency must be >= 1");
  std::map<std::string, long> freq;  // sorted keys make tie order lexicographic
  for (const ContentItem* c : contents) {
    for (const auto& w : split_words(tmpl.render(*c))) ++freq[w];
  }
  std::vector<std::pair<long, std::string>> ranked;
  for (const auto& [tok, n] : freq) {
    if (n >= min_frequency) ranked.emplace_back(n, tok);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  Vocabulary v;
  v.min_frequency = min_frequency;
  v.tokens = {"<pad>", "<unk>"};
  for (const auto& [n, tok] : ranked) {
    (void)n;
    v.index[tok] = v.size();
    v.tokens.push_back(tok);
  }
  return v;
}

void Corpus::finalize(const ContentTemplate& tmpl_in, int min_frequency,
                      int max_len_in) {
  tmpl = tmpl_in;
  max_len = max_len_in;
  std::vector<const ContentItem*> refs;
  refs.reserve(contents.size());
  for (const auto& [id, c] : contents) {
    (void)id;
    refs.push_back(&c);
  }
  vocab = build_vocabulary(refs, min_frequency, tmpl);
  for (auto& [id, c] : contents) {
    (void)id;
    c.tokens = tokenize(tmpl.render(c), vocab);
    if (static_cast<int>(c.tokens.size()) > max_len) c.tokens.resize(max_len);
  }
}

void Corpus::validate() const {
  for (const auto& [id, c] : contents) {
    if (id.empty()) fail("corpus: content with empty id");
    if (id != c.id) fail("corpus: content keyed ", id, " carries id ", c.id);
  }
  for (const auto& [id, u] : users) {
    if (id != u.id) fail("corpus: user keyed ", id, " carries id ", u.id);
    for (const auto& cid : u.history) {
      if (!contents.count(cid)) {
        fail("corpus: user ", id, " history references unknown content ", cid);
      }
    }
    for (const auto& cid : u.synthetic_history) {
      if (!contents.count(cid)) {
        fail("corpus: user ", id, " synthetic history references unknown content ", cid);
      }
      if (std::find(u.history.begin(), u.history.end(), cid) != u.history.end()) {
        fail("corpus: user ", id, " lists ", cid, " as both real and synthetic history");
      }
    }
  }
  auto check_impressions = [&](const std::vector<Impression>& list, const char* split) {
    for (const auto& imp : list) {
      if (imp.candidates.size() != imp.labels.size()) {
        fail("corpus: ", split, " impression ", imp.id, " has ",
             imp.candidates.size(), " candidates but ", imp.labels.size(), " labels");
      }
      if (!users.count(imp.user_id)) {
        fail("corpus: impression ", imp.id, " references unknown user ", imp.user_id);
      }
      for (const auto& cid : imp.candidates) {
        if (!contents.count(cid)) {
          fail("corpus: impression ", imp.id, " references unknown content ", cid);
        }
      }
      for (int l : imp.labels) {
        if (l != 0 && l != 1) fail("corpus: impression ", imp.id, " has label ", l);
      }
    }
  };
  check_impressions(train, "train");
  check_impressions(dev, "dev");
}

const ContentItem& Corpus::content(const std::string& id) const {
  auto it = contents.find(id);
  if (it == contents.end()) fail("corpus: unknown content id ", id);
  return it->second;
}

const UserRecord& Corpus::user(const std::string& id) const {
  auto it = users.find(id);
  if (it == users.end()) fail("corpus: unknown user id ", id);
  return it->second;
}

}  // namespace once::corpus
