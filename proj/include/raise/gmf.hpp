#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "raise/data.hpp"
#include "raise/numerics.hpp"

namespace ranking {

// Generalized matrix factorization: score(u,i) = sigmoid(h . (p_u ⊙ q_i)).
// This is the prior global model whose latents and top-n lists seed the
// re-ranker, so its dimension d matches the re-ranker's.
struct GmfModel {
    Parameter p;  // |U| x d user latents
    Parameter q;  // |I| x d item latents
    Parameter h;  // 1 x d output weights
    size_t dim = 0;

    static GmfModel init(size_t users, size_t items, size_t d, uint64_t seed);
    double score(uint32_t user, uint32_t item) const;
    size_t user_count() const { return p.value.rows; }
    size_t item_count() const { return q.value.rows; }
};

// sigmoid(sum_k h_k * p_k * q_k) on raw 1 x d vectors.
double gmf_score(const DenseMatrix& p, const DenseMatrix& q, const DenseMatrix& h);

struct GmfTrainStats {
    std::vector<double> epoch_loss;  // mean BCE over the fixed sample set
};

// Binary cross-entropy over all positives plus neg_per_pos uniformly sampled
// negatives per positive. Negatives are sampled once up front (the loss curve
// is over a fixed set); mini-batch Adam; deterministic under seed.
GmfModel train_gmf(const ImplicitDataset& ds, size_t d, size_t epochs, double lr,
                   size_t neg_per_pos, uint64_t seed, GmfTrainStats* stats = nullptr);

struct RankedList {
    uint32_t user = 0;             // dense user index
    std::vector<uint32_t> items;   // dense item indices, pairwise distinct
    std::vector<double> scores;    // parallel, non-increasing
};

// Top-n eligible items by score, ties broken by ascending item index (the
// registry sorts indices by numeric id, so this is ascending item id).
RankedList initial_list(const GmfModel& model, uint32_t user, size_t n,
                        const std::unordered_set<uint32_t>* exclude = nullptr);

// TSV persistence: user_id<TAB>item_id<TAB>score, lists grouped by user in
// ascending user index, items in rank order, scores printed round-trip-exact.
void save_ranked_lists(const std::vector<RankedList>& lists, const EntityRegistry& registry,
                       const std::string& path);
std::vector<RankedList> load_ranked_lists(const std::string& path,
                                          const EntityRegistry& registry);

}  // namespace ranking
