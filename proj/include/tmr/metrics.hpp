#pragma once

#include <map>
#include <vector>

#include "tmr/retrieval.hpp"

namespace tmr {

/// Ranking metrics for one result set, all on a 0..100 scale.
struct RankingSummary {
  std::map<int, double> rr_at;
  std::map<int, double> ndcg_at;
  double mrr = 0.0;
  int n_queries = 0;
};

/// Percentage of queries whose ground truth lands in the top k (inclusive).
double recall_rate(const std::vector<RankedResult>& results, int k);

/// Mean of 1/log2(1 + gt_rank) for ranks <= k, else 0, times 100. With a
/// single relevant object per query the ideal DCG is 1.
double ndcg_at_k(const std::vector<RankedResult>& results, int k);

/// Mean reciprocal ground-truth rank, times 100.
double mean_reciprocal_rank(const std::vector<RankedResult>& results);

RankingSummary summarize_ranking(const std::vector<RankedResult>& results, const std::vector<int>& ks);

/// Closed forms under a uniformly random ranking of n candidates:
///   RR@k = 100*k/n, NDCG@k = (100/n) * sum_{r=1..k} 1/log2(1+r),
///   MRR = 100*H(n)/n  with H the harmonic number.
RankingSummary expected_random(int n_candidates, const std::vector<int>& ks);

}  // namespace tmr
