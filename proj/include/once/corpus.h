#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "once/common.h"

namespace once::corpus {

struct ContentItem {
  std::string id;
  // Field name -> text, normalized to sorted order. Absent fields are simply
  // missing, never empty strings.
  std::map<std::string, std::string> fields;
  std::vector<int> tokens;  // filled by Corpus::finalize
  bool synthetic = false;

  const std::string* field(const std::string& name) const {
    auto it = fields.find(name);
    return it == fields.end() ? nullptr : &it->second;
  }
};

struct Profile {
  std::vector<std::string> topics;
  std::vector<std::string> regions;
  bool operator==(const Profile&) const = default;
};

struct UserRecord {
  std::string id;
  std::vector<std::string> history;            // real browsed content ids
  std::optional<Profile> profile;
  std::vector<std::string> synthetic_history;  // generated items, never counted
                                               // for new/warm classification
};

enum class UserClass { New, Warm };

// New means at most five real history items; synthetic items never count.
inline UserClass classify_user(const UserRecord& u) {
  return u.history.size() <= 5 ? UserClass::New : UserClass::Warm;
}

struct Impression {
  std::string id;
  std::string user_id;
  std::vector<std::string> candidates;
  std::vector<int> labels;
  bool operator==(const Impression&) const = default;
};

struct Vocabulary {
  static constexpr int PAD = 0;
  static constexpr int UNK = 1;

  std::unordered_map<std::string, int> index;
  std::vector<std::string> tokens;  // position = index; [0]="<pad>", [1]="<unk>"
  int min_frequency = 2;

  int size() const { return static_cast<int>(tokens.size()); }
  int lookup(const std::string& tok) const {
    auto it = index.find(tok);
    return it == index.end() ? UNK : it->second;
  }
};

// Lowercases and splits on maximal runs of non-alphanumeric characters.
std::vector<std::string> split_words(const std::string& text);

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab);

// Rendering scheme for one content item: a leading label, then each present
// field's prefix followed by the field text, joined with single spaces.
struct ContentTemplate {
  std::string label;
  std::vector<std::pair<std::string, std::string>> fields;  // {field, prefix}

  std::string render(const ContentItem& item) const;
  // Stable serialized form, hashed into the encoder cache fingerprint.
  std::string describe() const;

  static ContentTemplate news_default();
};

// Frequencies are counted over the rendered text of every content, so the
// template's own label and prefix words tokenize to real indices rather
// than UNK. Ties at equal frequency break lexicographically.
Vocabulary build_vocabulary(const std::vector<const ContentItem*>& contents,
                            int min_frequency, const ContentTemplate& tmpl);

struct Corpus {
  std::map<std::string, ContentItem> contents;
  std::map<std::string, UserRecord> users;
  std::vector<Impression> train;
  std::vector<Impression> dev;

  Vocabulary vocab;
  ContentTemplate tmpl;
  int max_len = 32;

  // Builds the vocabulary from rendered content text and tokenizes every
  // content (truncated to max_len). Idempotent for fixed arguments.
  void finalize(const ContentTemplate& tmpl_in, int min_frequency, int max_len_in);

  // Checks referential integrity; throws Error naming the first violation.
  void validate() const;

  const ContentItem& content(const std::string& id) const;
  const UserRecord& user(const std::string& id) const;
};

// MIND-format TSV import (news + behaviors). A second behaviors file, when
// given, fills the dev impression list. A user seen in several behavior
// lines keeps the longest history snapshot (earliest on ties).
Corpus parse_mind(const std::string& news_tsv, const std::string& behaviors_tsv,
                  const std::string& behaviors_dev_tsv = "");

// JSONL interchange: contents.jsonl, users.jsonl, impressions.train.jsonl,
// impressions.dev.jsonl under dir. Export then import is the identity.
void export_jsonl(const Corpus& corpus, const std::string& dir);
Corpus import_jsonl(const std::string& dir);

}  // namespace once::corpus
