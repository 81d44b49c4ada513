#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_set>
#include <vector>

#include "raise/data.hpp"
#include "raise/gmf.hpp"

namespace ranking {

// Ranking quality metrics over binary relevance, plus the experiment table
// they are reported in. All metrics look at the top-k prefix of a ranked
// item list against the user's full positive set.

using ItemSet = std::unordered_set<uint32_t>;

// |top-k ∩ relevant| / k. When k exceeds the list length the full length
// becomes both cutoff and denominator.
double precision_at_k(const std::vector<uint32_t>& ranked, const ItemSet& relevant,
                      size_t k);

// Average precision's normalizer. MinKRelevant (default) divides by
// min(k, |relevant|); MinKHits divides by the hit count inside the cutoff.
enum class ApDenominator { MinKRelevant, MinKHits };

// AP@k = (sum over hit positions j <= k of Precision@j) / denominator.
double ap_at_k(const std::vector<uint32_t>& ranked, const ItemSet& relevant, size_t k,
               ApDenominator denom = ApDenominator::MinKRelevant);

// Binary-gain NDCG with DCG@k = sum rel_j / log2(j+1) over 1-indexed
// positions; the ideal DCG places min(k, |relevant|) hits first. 0 when the
// relevant set is empty.
double ndcg_at_k(const std::vector<uint32_t>& ranked, const ItemSet& relevant, size_t k);

struct MetricRow {
    std::string method;
    size_t k = 0;
    double precision = 0.0;
    double map = 0.0;
    double ndcg = 0.0;
};

struct MetricTable {
    std::vector<MetricRow> rows;
};

// Produces one ranked list per user; throws DataError naming the user when
// it has none.
using ListSource = std::function<RankedList(uint32_t user)>;

// Per-k averages over `users`. Precision and NDCG average over every user;
// MAP averages only over users with a non-empty relevant set. Relevance is
// the user's full observed positive set.
MetricTable evaluate_lists(const std::string& method, const ListSource& source,
                           const std::vector<uint32_t>& users, const ImplicitDataset& ds,
                           const std::vector<size_t>& ks,
                           ApDenominator denom = ApDenominator::MinKRelevant);

// TSV with header line `method\tk\tprecision\tmap\tndcg`, values printed
// round-trip exact.
std::string metric_table_tsv(const MetricTable& table);

}  // namespace ranking
