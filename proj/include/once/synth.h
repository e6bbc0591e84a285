#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "once/corpus.h"

namespace once::synth {

// Planted-preference world: every content belongs to one topic, every user
// prefers one or two topics, histories are drawn from preferred topics, and
// click labels follow a two-rate Bernoulli model on topic match. An oracle
// that knows the preferences separates candidates up to the click noise.
struct WorldConfig {
  int topics = 8;
  int words_per_topic = 40;
  int contents = 2000;
  int users = 1000;
  double new_user_fraction = 0.2;  // users with history length <= 5
  int history_max = 20;
  int candidates_per_impression = 10;
  int train_impressions_per_user = 2;
  int dev_impressions_per_user = 1;
  double p_match = 0.9;
  double p_mismatch = 0.1;
  // Fraction of history entries drawn from non-preferred topics, so short
  // histories under-determine the user's actual interests.
  double history_noise = 0.0;

  void validate() const;
  static WorldConfig from_json(const nlohmann::json& j);
};

struct World {
  corpus::Corpus corpus;  // raw fields, not finalized
  // Ground truth: user id -> sorted preferred topic names.
  std::map<std::string, std::vector<std::string>> user_topics;
};

std::string topic_name(int t);

World generate_world(const WorldConfig& cfg, uint64_t seed);

// Corpus JSONL files plus ground_truth.json under dir.
void write_world(const World& w, const std::string& dir);

}  // namespace once::synth
