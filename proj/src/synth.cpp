#include "once/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "once/common.h"

namespace once::synth {

namespace {

constexpr const char* kSyllables[10] = {"ba", "de", "ki", "lo", "mu",
                                        "na", "po", "ri", "su", "ta"};

std::string topic_word(int t, int j) {
  std::string w;
  w += kSyllables[t % 10];
  w += kSyllables[(t / 10) % 10];
  w += kSyllables[j % 10];
  w += kSyllables[(j / 10) % 10];
  return w;
}

std::string padded_id(char prefix, int n) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%c%06d", prefix, n);
  return buf;
}

std::string sentence(const std::vector<std::string>& pool, int words, Rng& rng) {
  std::string out;
  for (int i = 0; i < words; ++i) {
    if (i > 0) out += ' ';
    out += pool[rng.below(pool.size())];
  }
  return out;
}

int require_int(const nlohmann::json& j, const char* key, int fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_integer()) fail("world config: ", key, ": expected an integer");
  return j[key].get<int>();
}

double require_num(const nlohmann::json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) fail("world config: ", key, ": expected a number");
  return j[key].get<double>();
}

}  // namespace

void WorldConfig::validate() const {
  if (topics < 2 || topics > 100) fail("world config: topics must be in [2, 100]");
  if (words_per_topic < 4 || words_per_topic > 100) {
    fail("world config: words_per_topic must be in [4, 100]");
  }
  if (users < 1) fail("world config: users must be >= 1");
  if (new_user_fraction < 0.0 || new_user_fraction > 1.0) {
    fail("world config: new_user_fraction must be in [0, 1]");
  }
  if (history_max < 6) fail("world config: history_max must be >= 6");
  if (candidates_per_impression < 2) {
    fail("world config: candidates_per_impression must be >= 2");
  }
  if (train_impressions_per_user < 0 || dev_impressions_per_user < 0) {
    fail("world config: impression counts must be >= 0");
  }
  if (p_match < 0.0 || p_match > 1.0 || p_mismatch < 0.0 || p_mismatch > 1.0) {
    fail("world config: click probabilities must be in [0, 1]");
  }
  if (history_noise < 0.0 || history_noise > 0.9) {
    fail("world config: history_noise must be in [0, 0.9]");
  }
  // Histories and matched candidates are drawn without replacement from one
  // topic's contents, so each topic needs enough slack.
  const int per_topic = contents / topics;
  if (per_topic < history_max + candidates_per_impression) {
    fail("world config: contents/topics = ", per_topic,
         " cannot cover history_max + candidates_per_impression = ",
         history_max + candidates_per_impression);
  }
}

WorldConfig WorldConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail("world config: expected a JSON object");
  static const std::set<std::string> known = {
      "topics",          "words_per_topic",
      "contents",        "users",
      "new_user_fraction", "history_max",
      "candidates_per_impression", "train_impressions_per_user",
      "dev_impressions_per_user",  "p_match",
      "p_mismatch",      "history_noise"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) fail("world config: unknown field ", key);
  }
  WorldConfig cfg;
  cfg.topics = require_int(j, "topics", cfg.topics);
  cfg.words_per_topic = require_int(j, "words_per_topic", cfg.words_per_topic);
  cfg.contents = require_int(j, "contents", cfg.contents);
  cfg.users = require_int(j, "users", cfg.users);
  cfg.new_user_fraction =
      require_num(j, "new_user_fraction", cfg.new_user_fraction);
  cfg.history_max = require_int(j, "history_max", cfg.history_max);
  cfg.candidates_per_impression =
      require_int(j, "candidates_per_impression", cfg.candidates_per_impression);
  cfg.train_impressions_per_user =
      require_int(j, "train_impressions_per_user", cfg.train_impressions_per_user);
  cfg.dev_impressions_per_user =
      require_int(j, "dev_impressions_per_user", cfg.dev_impressions_per_user);
  cfg.p_match = require_num(j, "p_match", cfg.p_match);
  cfg.p_mismatch = require_num(j, "p_mismatch", cfg.p_mismatch);
  cfg.history_noise = require_num(j, "history_noise", cfg.history_noise);
  cfg.validate();
  return cfg;
}

std::string topic_name(int t) {
  std::string name;
  name += kSyllables[t % 10];
  name += kSyllables[(t / 10) % 10];
  name += "ia";
  return name;
}

World generate_world(const WorldConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  World world;
  auto& c = world.corpus;

  std::vector<std::vector<std::string>> pools(cfg.topics);
  for (int t = 0; t < cfg.topics; ++t) {
    for (int j = 0; j < cfg.words_per_topic; ++j) {
      pools[t].push_back(topic_word(t, j));
    }
  }

  std::vector<std::vector<std::string>> by_topic(cfg.topics);
  for (int i = 0; i < cfg.contents; ++i) {
    const int t = i % cfg.topics;
    corpus::ContentItem item;
    item.id = padded_id('S', i + 1);
    item.fields["title"] = sentence(pools[t], 4 + static_cast<int>(rng.below(4)), rng);
    item.fields["abstract"] =
        sentence(pools[t], 8 + static_cast<int>(rng.below(5)), rng);
    item.fields["category"] = topic_name(t);
    by_topic[t].push_back(item.id);
    c.contents.emplace(item.id, std::move(item));
  }

  const auto n_new =
      static_cast<int>(std::llround(cfg.users * cfg.new_user_fraction));

  for (int i = 0; i < cfg.users; ++i) {
    corpus::UserRecord u;
    u.id = padded_id('U', i + 1);

    // A second preferred topic needs at least one non-preferred topic left
    // over for the mismatched candidate pool.
    std::vector<int> prefs{static_cast<int>(rng.below(cfg.topics))};
    if (cfg.topics >= 3 && rng.below(2) == 1) {
      int second = static_cast<int>(rng.below(cfg.topics - 1));
      if (second >= prefs[0]) ++second;
      prefs.push_back(second);
    }

    const bool is_new = i < n_new;
    const int hist_len = is_new ? 1 + static_cast<int>(rng.below(5))
                                : 6 + static_cast<int>(rng.below(cfg.history_max - 5));

    // Draw the history without replacement from the preferred topics by
    // shuffling a per-topic allotment.
    std::vector<std::vector<std::string>> shuffled(prefs.size());
    for (size_t p = 0; p < prefs.size(); ++p) {
      shuffled[p] = by_topic[prefs[p]];
      rng.shuffle(shuffled[p]);
    }
    std::vector<size_t> cursor(prefs.size(), 0);

    // Off-preference contamination pools, one per non-preferred topic.
    std::vector<std::vector<std::string>> noise_pool;
    std::vector<size_t> noise_cursor;
    if (cfg.history_noise > 0.0) {
      for (int t = 0; t < cfg.topics; ++t) {
        if (std::find(prefs.begin(), prefs.end(), t) != prefs.end()) continue;
        noise_pool.push_back(by_topic[t]);
        rng.shuffle(noise_pool.back());
      }
      noise_cursor.assign(noise_pool.size(), 0);
    }
    for (int h = 0; h < hist_len; ++h) {
      if (!noise_pool.empty() && rng.uniform() < cfg.history_noise) {
        const size_t p = rng.below(noise_pool.size());
        u.history.push_back(noise_pool[p][noise_cursor[p]++]);
      } else {
        const size_t p = rng.below(prefs.size());
        u.history.push_back(shuffled[p][cursor[p]++]);
      }
    }

    std::vector<std::string> names;
    for (int t : prefs) names.push_back(topic_name(t));
    std::sort(names.begin(), names.end());
    world.user_topics[u.id] = std::move(names);

    // Candidates are unseen contents, half matched and half not, so a
    // preference-aware scorer separates them up to the click noise.
    const std::set<std::string> seen(u.history.begin(), u.history.end());
    std::vector<std::string> matched_pool;
    for (size_t p = 0; p < prefs.size(); ++p) {
      for (const auto& id : shuffled[p]) {
        if (!seen.count(id)) matched_pool.push_back(id);
      }
    }
    std::vector<std::string> other_pool;
    for (int t = 0; t < cfg.topics; ++t) {
      if (std::find(prefs.begin(), prefs.end(), t) != prefs.end()) continue;
      for (const auto& id : by_topic[t]) {
        if (!seen.count(id)) other_pool.push_back(id);
      }
    }

    const int total =
        cfg.train_impressions_per_user + cfg.dev_impressions_per_user;
    for (int k = 0; k < total; ++k) {
      rng.shuffle(matched_pool);
      rng.shuffle(other_pool);
      const int n_match = cfg.candidates_per_impression / 2;
      const int n_other = cfg.candidates_per_impression - n_match;

      std::vector<std::pair<std::string, bool>> cands;
      for (int m = 0; m < n_match; ++m) cands.emplace_back(matched_pool[m], true);
      for (int m = 0; m < n_other; ++m) cands.emplace_back(other_pool[m], false);
      rng.shuffle(cands);

      corpus::Impression imp;
      imp.user_id = u.id;
      for (const auto& [id, match] : cands) {
        imp.candidates.push_back(id);
        const double p = match ? cfg.p_match : cfg.p_mismatch;
        imp.labels.push_back(rng.uniform() < p ? 1 : 0);
      }
      auto& dest = k < cfg.train_impressions_per_user ? c.train : c.dev;
      imp.id = padded_id('I', 0);  // renumbered below
      dest.push_back(std::move(imp));
    }

    c.users.emplace(u.id, std::move(u));
  }

  int counter = 0;
  for (auto& imp : c.train) imp.id = padded_id('I', ++counter);
  for (auto& imp : c.dev) imp.id = padded_id('I', ++counter);

  c.validate();
  return world;
}

void write_world(const World& w, const std::string& dir) {
  corpus::export_jsonl(w.corpus, dir);
  nlohmann::json gt;
  for (const auto& [id, topics] : w.user_topics) gt[id] = topics;
  std::ofstream out(dir + "/ground_truth.json", std::ios::binary);
  if (!out) fail("write_world: cannot write ", dir, "/ground_truth.json");
  out << gt.dump(2) << "\n";
}

}  // namespace once::synth
