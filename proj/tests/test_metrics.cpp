#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "once/common.h"
#include "once/metrics.h"
#include "support/oracles.h"

using once::Rng;
using once::corpus::Corpus;
using once::corpus::Impression;
using once::metrics::auc;
using once::metrics::ndcg_at;
using once::metrics::reciprocal_rank;

namespace {

struct RandomImpression {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Random instance with deliberate tie mass: half the time scores come from a
// five-point grid so tied positive/negative pairs are common.
RandomImpression random_impression(Rng& rng, int max_len, bool need_both) {
  RandomImpression imp;
  while (true) {
    const int n = 2 + static_cast<int>(rng.below(max_len - 1));
    const bool gridded = rng.below(2) == 0;
    imp.scores.clear();
    imp.labels.clear();
    for (int i = 0; i < n; ++i) {
      double s = gridded ? 0.25 * static_cast<double>(rng.below(5))
                         : rng.uniform(-1.0, 1.0);
      imp.scores.push_back(s);
      imp.labels.push_back(rng.below(3) == 0 ? 1 : 0);
    }
    int pos = 0;
    for (int l : imp.labels) pos += l;
    if (pos == 0) continue;
    if (need_both && pos == n) continue;
    return imp;
  }
}

}  // namespace

TEST_CASE("auc handles perfect, reversed and tied rankings") {
  CHECK(auc({0.9, 0.1, 0.2}, {1, 0, 0}) == 1.0);
  CHECK(auc({0.1, 0.9, 0.8}, {1, 0, 0}) == 0.0);
  CHECK(auc({0.5, 0.5}, {1, 0}) == 0.5);
  // Pairs: 0.9 beats both negatives, 0.5 ties one and beats the other.
  CHECK(auc({0.9, 0.5, 0.5, 0.1}, {1, 0, 1, 0}) == 0.875);
}

TEST_CASE("auc rejects degenerate input") {
  CHECK_THROWS_WITH_AS(auc({0.5, 0.6}, {1, 1}), doctest::Contains("no negative"),
                       once::Error);
  CHECK_THROWS_WITH_AS(auc({0.5, 0.6}, {0, 0}), doctest::Contains("no positive"),
                       once::Error);
  CHECK_THROWS_WITH_AS(auc({0.5}, {1, 0}), doctest::Contains("scores"),
                       once::Error);
  CHECK_THROWS_WITH_AS(auc({0.5, 0.6}, {1, 2}), doctest::Contains("not 0 or 1"),
                       once::Error);
  CHECK_THROWS_WITH_AS(auc({}, {}), doctest::Contains("empty"), once::Error);
}

TEST_CASE("reciprocal rank takes the first positive in stable order") {
  CHECK(reciprocal_rank({0.9, 0.1}, {1, 0}) == 1.0);
  CHECK(reciprocal_rank({0.9, 0.1}, {0, 1}) == 0.5);
  // Two positives at ranks 2 and 3: only the first one counts.
  CHECK(reciprocal_rank({0.9, 0.5, 0.4, 0.1}, {0, 1, 1, 0}) == 0.5);
  // Tied scores keep input order, so the positive at index 1 has rank 2.
  CHECK(reciprocal_rank({0.7, 0.7}, {0, 1}) == 0.5);
  CHECK(reciprocal_rank({0.7, 0.7}, {1, 0}) == 1.0);
  CHECK_THROWS_WITH_AS(reciprocal_rank({0.5}, {0}),
                       doctest::Contains("no positive"), once::Error);
}

TEST_CASE("ndcg matches hand-computed values and truncation rules") {
  CHECK(ndcg_at({0.9, 0.2, 0.1}, {1, 0, 0}, 5) == 1.0);

  // Positives land at sorted positions 1 and 3 of 5.
  std::vector<double> s{0.9, 0.5, 0.7, 0.3, 0.1};
  std::vector<int> l{1, 1, 0, 0, 0};
  const double expected = (1.0 + 1.0 / std::log2(4.0)) / (1.0 + 1.0 / std::log2(3.0));
  CHECK(ndcg_at(s, l, 5) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(ndcg_at(s, l, 5) == doctest::Approx(0.9198).epsilon(1e-4));

  // k beyond the list length behaves like k = length.
  CHECK(ndcg_at(s, l, 100) == ndcg_at(s, l, 5));

  CHECK_THROWS_WITH_AS(ndcg_at(s, l, 0), doctest::Contains("k must be"),
                       once::Error);
  CHECK_THROWS_WITH_AS(ndcg_at(s, {0, 0, 0, 0, 0}, 5),
                       doctest::Contains("no positive"), once::Error);
}

TEST_CASE("perfect rankings score 1.0 on every metric") {
  std::vector<double> s{0.9, 0.8, 0.7, 0.2, 0.1};
  std::vector<int> l{1, 1, 1, 0, 0};
  CHECK(auc(s, l) == 1.0);
  CHECK(reciprocal_rank(s, l) == 1.0);
  for (int k = 1; k <= 8; ++k) CHECK(ndcg_at(s, l, k) == 1.0);
}

TEST_CASE("auc equals the pairwise oracle exactly on random instances") {
  Rng rng(101);
  for (int t = 0; t < 1000; ++t) {
    const auto imp = random_impression(rng, 12, true);
    CHECK(auc(imp.scores, imp.labels) ==
          once_test::auc_pairwise(imp.scores, imp.labels));
  }
}

TEST_CASE("mrr equals the exhaustive rank scan exactly on random instances") {
  Rng rng(103);
  for (int t = 0; t < 1000; ++t) {
    const auto imp = random_impression(rng, 12, false);
    CHECK(reciprocal_rank(imp.scores, imp.labels) ==
          once_test::mrr_rank_scan(imp.scores, imp.labels));
  }
}

TEST_CASE("ndcg agrees with the rank-counting oracle") {
  Rng rng(107);
  for (int t = 0; t < 1000; ++t) {
    const auto imp = random_impression(rng, 12, false);
    for (int k : {1, 3, 5, 10}) {
      CHECK(ndcg_at(imp.scores, imp.labels, k) ==
            doctest::Approx(once_test::ndcg_by_ranks(imp.scores, imp.labels, k))
                .epsilon(1e-12));
    }
  }
}

TEST_CASE("metrics are bit-identical under strictly monotone score maps") {
  Rng rng(109);
  for (int t = 0; t < 1000; ++t) {
    const auto imp = random_impression(rng, 12, true);
    const auto mapped = once_test::random_monotone_map(imp.scores, rng);
    CHECK(auc(imp.scores, imp.labels) == auc(mapped, imp.labels));
    CHECK(reciprocal_rank(imp.scores, imp.labels) ==
          reciprocal_rank(mapped, imp.labels));
    for (int k : {2, 5, 10}) {
      CHECK(ndcg_at(imp.scores, imp.labels, k) == ndcg_at(mapped, imp.labels, k));
    }
  }
}

TEST_CASE("random scores over balanced labels average to AUC one half") {
  Rng rng(113);
  double sum = 0.0;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 10; ++i) {
      scores.push_back(rng.uniform(0.0, 1.0));
      labels.push_back(i < 5 ? 1 : 0);
    }
    sum += auc(scores, labels);
  }
  CHECK(sum / trials == doctest::Approx(0.5).epsilon(0.04));
}

namespace {

Corpus eval_corpus() {
  Corpus c;
  once::corpus::UserRecord warm;
  warm.id = "U-warm";
  for (int i = 0; i < 8; ++i) warm.history.push_back("C" + std::to_string(i));
  c.users[warm.id] = warm;

  once::corpus::UserRecord fresh;
  fresh.id = "U-new";
  fresh.history = {"C0"};
  c.users[fresh.id] = fresh;
  return c;
}

Impression make_impression(const std::string& id, const std::string& user,
                           std::vector<int> labels) {
  Impression imp;
  imp.id = id;
  imp.user_id = user;
  for (size_t i = 0; i < labels.size(); ++i) {
    imp.candidates.push_back("C" + std::to_string(i));
  }
  imp.labels = std::move(labels);
  return imp;
}

}  // namespace

TEST_CASE("evaluate averages counted impressions and splits user groups") {
  const auto c = eval_corpus();
  std::vector<Impression> imps;
  imps.push_back(make_impression("I1", "U-warm", {1, 0, 0}));   // AUC 1.0
  imps.push_back(make_impression("I2", "U-new", {1, 0}));       // AUC 0.5 (tie)
  imps.push_back(make_impression("I3", "U-warm", {0, 0, 0}));   // skipped
  imps.push_back(make_impression("I4", "U-new", {1, 1}));       // skipped

  std::map<std::string, std::vector<double>> fixed{
      {"I1", {0.9, 0.1, 0.2}},
      {"I2", {0.5, 0.5}},
      {"I3", {0.3, 0.2, 0.1}},
      {"I4", {0.3, 0.2}},
  };
  auto score = [&](const Impression& imp) { return fixed.at(imp.id); };

  const auto rep = once::metrics::evaluate(c, imps, score);
  CHECK(rep.overall.counted == 2);
  CHECK(rep.overall.skipped == 2);
  CHECK(rep.overall.auc == doctest::Approx(0.75));
  CHECK(rep.new_users.counted == 1);
  CHECK(rep.new_users.skipped == 1);
  CHECK(rep.new_users.auc == doctest::Approx(0.5));
  CHECK(rep.warm_users.counted == 1);
  CHECK(rep.warm_users.auc == doctest::Approx(1.0));
  CHECK(rep.overall.counted + rep.overall.skipped ==
        static_cast<long>(imps.size()));
}

TEST_CASE("evaluate reports an empty group when no user falls in it") {
  const auto c = eval_corpus();
  std::vector<Impression> imps;
  imps.push_back(make_impression("I1", "U-warm", {1, 0}));
  auto score = [](const Impression&) { return std::vector<double>{0.9, 0.1}; };

  const auto rep = once::metrics::evaluate(c, imps, score);
  CHECK(rep.new_users.counted == 0);
  CHECK(rep.new_users.skipped == 0);
  CHECK(rep.new_users.auc == 0.0);
  CHECK(rep.warm_users.counted == 1);
}

TEST_CASE("evaluate fails on unknown users and score count mismatches") {
  const auto c = eval_corpus();
  std::vector<Impression> imps;
  imps.push_back(make_impression("I1", "U-missing", {1, 0}));
  auto score = [](const Impression&) { return std::vector<double>{0.9, 0.1}; };
  CHECK_THROWS_AS(once::metrics::evaluate(c, imps, score), once::Error);

  imps[0].user_id = "U-warm";
  auto bad_score = [](const Impression&) { return std::vector<double>{0.9}; };
  CHECK_THROWS_WITH_AS(once::metrics::evaluate(c, imps, bad_score),
                       doctest::Contains("1 scores for 2"), once::Error);
}

TEST_CASE("report json keeps the documented key order") {
  const auto c = eval_corpus();
  std::vector<Impression> imps;
  imps.push_back(make_impression("I1", "U-warm", {1, 0, 0}));
  imps.push_back(make_impression("I2", "U-new", {0, 1}));
  std::map<std::string, std::vector<double>> fixed{
      {"I1", {0.9, 0.1, 0.2}},
      {"I2", {0.4, 0.6}},
  };
  auto score = [&](const Impression& imp) { return fixed.at(imp.id); };

  const auto j = once::metrics::report_json(
      once::metrics::evaluate(c, imps, score));

  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  CHECK(keys == std::vector<std::string>{"auc", "mrr", "ndcg", "groups",
                                         "counted", "skipped"});
  CHECK(j["ndcg"].contains("5"));
  CHECK(j["ndcg"].contains("10"));
  CHECK(j["groups"]["new"]["counted"] == 1);
  CHECK(j["groups"]["warm"]["counted"] == 1);
  CHECK(j["groups"]["warm"]["auc"] == 1.0);
  CHECK(j["auc"] == 1.0);
  CHECK(j["counted"] == 2);
  CHECK(j["skipped"] == 0);

  std::vector<std::string> group_keys;
  for (auto it = j["groups"]["new"].begin(); it != j["groups"]["new"].end(); ++it) {
    group_keys.push_back(it.key());
  }
  CHECK(group_keys == std::vector<std::string>{"auc", "mrr", "ndcg", "counted",
                                               "skipped"});
}
