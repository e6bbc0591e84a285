#include "once/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "once/common.h"

namespace once::metrics {

namespace {

struct LabelCounts {
  int64_t pos = 0;
  int64_t neg = 0;
};

LabelCounts check_impression(const std::vector<double>& scores,
                             const std::vector<int>& labels, const char* op) {
  if (scores.size() != labels.size()) {
    fail(op, ": ", scores.size(), " scores vs ", labels.size(), " labels");
  }
  if (scores.empty()) fail(op, ": empty candidate list");
  LabelCounts c;
  for (int l : labels) {
    if (l == 1) {
      ++c.pos;
    } else if (l == 0) {
      ++c.neg;
    } else {
      fail(op, ": label ", l, " is not 0 or 1");
    }
  }
  return c;
}

std::vector<int> stable_order_desc(const std::vector<double>& scores) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  const auto counts = check_impression(scores, labels, "auc");
  if (counts.pos == 0) fail("auc: no positive candidate");
  if (counts.neg == 0) fail("auc: no negative candidate");

  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](int a, int b) { return scores[a] < scores[b]; });

  // Twice the tie-averaged rank is an integer, so the rank sum stays exact
  // and the result equals the pairwise tie-half count bit for bit.
  int64_t pos_rank2 = 0;
  const size_t n = idx.size();
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const auto avg2 = static_cast<int64_t>(i + j + 1);  // ranks are 1-based
    for (size_t t = i; t < j; ++t) {
      if (labels[idx[t]] == 1) pos_rank2 += avg2;
    }
    i = j;
  }
  const int64_t num2 = pos_rank2 - counts.pos * (counts.pos + 1);
  return static_cast<double>(num2) /
         static_cast<double>(2 * counts.pos * counts.neg);
}

double reciprocal_rank(const std::vector<double>& scores,
                       const std::vector<int>& labels) {
  const auto counts = check_impression(scores, labels, "reciprocal_rank");
  if (counts.pos == 0) fail("reciprocal_rank: no positive candidate");
  const auto idx = stable_order_desc(scores);
  for (size_t r = 0; r < idx.size(); ++r) {
    if (labels[idx[r]] == 1) return 1.0 / static_cast<double>(r + 1);
  }
  fail("reciprocal_rank: unreachable");
}

double ndcg_at(const std::vector<double>& scores, const std::vector<int>& labels,
               int k) {
  const auto counts = check_impression(scores, labels, "ndcg_at");
  if (counts.pos == 0) fail("ndcg_at: no positive candidate");
  if (k < 1) fail("ndcg_at: k must be >= 1, got ", k);

  const auto idx = stable_order_desc(scores);
  const size_t limit = std::min(static_cast<size_t>(k), idx.size());
  double dcg = 0.0;
  for (size_t r = 0; r < limit; ++r) {
    if (labels[idx[r]] == 1) dcg += 1.0 / std::log2(static_cast<double>(r + 2));
  }
  const size_t ideal_hits = std::min(limit, static_cast<size_t>(counts.pos));
  double ideal = 0.0;
  for (size_t r = 0; r < ideal_hits; ++r) {
    ideal += 1.0 / std::log2(static_cast<double>(r + 2));
  }
  return dcg / ideal;
}

namespace {

struct GroupSums {
  double auc = 0.0;
  double mrr = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
  long counted = 0;
  long skipped = 0;
};

GroupSummary finish(const GroupSums& s) {
  GroupSummary g;
  g.counted = s.counted;
  g.skipped = s.skipped;
  if (s.counted > 0) {
    const auto n = static_cast<double>(s.counted);
    g.auc = s.auc / n;
    g.mrr = s.mrr / n;
    g.ndcg5 = s.ndcg5 / n;
    g.ndcg10 = s.ndcg10 / n;
  }
  return g;
}

}  // namespace

MetricReport evaluate(const corpus::Corpus& c,
                      const std::vector<corpus::Impression>& impressions,
                      const ScoreFn& score) {
  GroupSums overall;
  GroupSums by_class[2];
  for (const auto& imp : impressions) {
    const auto& user = c.user(imp.user_id);
    auto& group =
        by_class[corpus::classify_user(user) == corpus::UserClass::New ? 0 : 1];

    const auto scores = score(imp);
    if (scores.size() != imp.labels.size()) {
      fail("evaluate: impression ", imp.id, " got ", scores.size(),
           " scores for ", imp.labels.size(), " candidates");
    }
    const auto counts = check_impression(scores, imp.labels, "evaluate");
    if (counts.pos == 0 || counts.neg == 0) {
      ++overall.skipped;
      ++group.skipped;
      continue;
    }

    const double a = auc(scores, imp.labels);
    const double m = reciprocal_rank(scores, imp.labels);
    const double n5 = ndcg_at(scores, imp.labels, 5);
    const double n10 = ndcg_at(scores, imp.labels, 10);
    for (auto* g : {&overall, &group}) {
      g->auc += a;
      g->mrr += m;
      g->ndcg5 += n5;
      g->ndcg10 += n10;
      ++g->counted;
    }
  }

  MetricReport rep;
  rep.overall = finish(overall);
  rep.new_users = finish(by_class[0]);
  rep.warm_users = finish(by_class[1]);
  return rep;
}

namespace {

nlohmann::ordered_json group_json(const GroupSummary& g) {
  nlohmann::ordered_json j;
  j["auc"] = g.auc;
  j["mrr"] = g.mrr;
  j["ndcg"]["5"] = g.ndcg5;
  j["ndcg"]["10"] = g.ndcg10;
  j["counted"] = g.counted;
  j["skipped"] = g.skipped;
  return j;
}

}  // namespace

nlohmann::ordered_json report_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["auc"] = r.overall.auc;
  j["mrr"] = r.overall.mrr;
  j["ndcg"]["5"] = r.overall.ndcg5;
  j["ndcg"]["10"] = r.overall.ndcg10;
  j["groups"]["new"] = group_json(r.new_users);
  j["groups"]["warm"] = group_json(r.warm_users);
  j["counted"] = r.overall.counted;
  j["skipped"] = r.overall.skipped;
  return j;
}

}  // namespace once::metrics
