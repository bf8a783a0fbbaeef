#include "tmr/metrics.hpp"

#include <cmath>

namespace tmr {

namespace {

void check_results(const std::vector<RankedResult>& results, const char* what) {
  if (results.empty()) throw std::invalid_argument(std::string(what) + ": empty result set");
  for (const auto& r : results)
    if (r.gt_rank < 1)
      throw std::invalid_argument(std::string(what) + ": query '" + r.query_id + "' has no ground-truth rank");
}

}  // namespace

double recall_rate(const std::vector<RankedResult>& results, int k) {
  if (k < 1) throw std::invalid_argument("recall_rate: k must be positive");
  check_results(results, "recall_rate");
  int hits = 0;
  for (const auto& r : results)
    if (r.gt_rank <= k) ++hits;
  return 100.0 * hits / static_cast<double>(results.size());
}

double ndcg_at_k(const std::vector<RankedResult>& results, int k) {
  if (k < 1) throw std::invalid_argument("ndcg_at_k: k must be positive");
  check_results(results, "ndcg_at_k");
  double sum = 0.0;
  for (const auto& r : results)
    if (r.gt_rank <= k) sum += 1.0 / std::log2(1.0 + r.gt_rank);
  return 100.0 * sum / static_cast<double>(results.size());
}

double mean_reciprocal_rank(const std::vector<RankedResult>& results) {
  check_results(results, "mean_reciprocal_rank");
  double sum = 0.0;
  for (const auto& r : results) sum += 1.0 / r.gt_rank;
  return 100.0 * sum / static_cast<double>(results.size());
}

RankingSummary summarize_ranking(const std::vector<RankedResult>& results, const std::vector<int>& ks) {
  RankingSummary s;
  s.n_queries = static_cast<int>(results.size());
  for (int k : ks) {
    s.rr_at[k] = recall_rate(results, k);
    s.ndcg_at[k] = ndcg_at_k(results, k);
  }
  s.mrr = mean_reciprocal_rank(results);
  return s;
}

RankingSummary expected_random(int n_candidates, const std::vector<int>& ks) {
  if (n_candidates < 1) throw std::invalid_argument("expected_random: need at least one candidate");
  RankingSummary s;
  s.n_queries = 0;
  for (int k : ks) {
    if (k < 1) throw std::invalid_argument("expected_random: k must be positive");
    int kk = std::min(k, n_candidates);
    s.rr_at[k] = 100.0 * kk / static_cast<double>(n_candidates);
    double dcg = 0.0;
    for (int r = 1; r <= kk; ++r) dcg += 1.0 / std::log2(1.0 + r);
    s.ndcg_at[k] = 100.0 * dcg / static_cast<double>(n_candidates);
  }
  double harmonic = 0.0;
  for (int r = 1; r <= n_candidates; ++r) harmonic += 1.0 / r;
  s.mrr = 100.0 * harmonic / static_cast<double>(n_candidates);
  return s;
}

}  // namespace tmr
