#pragma once

#include <functional>
#include <vector>

#include <json.hpp>

#include "once/corpus.h"

namespace once::metrics {

// Per-impression ranking metrics. Higher scores rank earlier. AUC counts
// tied positive/negative pairs as half wins; MRR and nDCG resolve ties by
// the stable order of the input list.

// Mann-Whitney statistic: the fraction of (positive, negative) pairs ranked
// correctly. Computed from tie-averaged ranks in half-integer arithmetic, so
// the result is bit-identical to the direct pairwise count.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// 1/rank of the highest-ranked positive.
double reciprocal_rank(const std::vector<double>& scores,
                       const std::vector<int>& labels);

// Binary-relevance DCG@k over the score-sorted order, divided by the ideal
// DCG@k for the same number of positives.
double ndcg_at(const std::vector<double>& scores, const std::vector<int>& labels,
               int k);

struct GroupSummary {
  double auc = 0.0;
  double mrr = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
  long counted = 0;
  long skipped = 0;
};

struct MetricReport {
  GroupSummary overall;
  GroupSummary new_users;
  GroupSummary warm_users;
};

using ScoreFn = std::function<std::vector<double>(const corpus::Impression&)>;

// Scores every impression and averages the three metrics uniformly over the
// impressions that contain at least one positive and one negative candidate.
// Single-class impressions are tallied as skipped. The same averages are
// reported per user class (new: at most 5 real history items).
MetricReport evaluate(const corpus::Corpus& c,
                      const std::vector<corpus::Impression>& impressions,
                      const ScoreFn& score);

nlohmann::ordered_json report_json(const MetricReport& r);

}  // namespace once::metrics
