#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "raise/data.hpp"
#include "raise/mlp.hpp"
#include "raise/numerics.hpp"

namespace ranking {

// Intention Discovering Module: co-attention over the user's and the item's
// review embeddings. Matching scores C pick out review pairs expressing the
// same intention; row/column means of C re-weight each side's reviews, which
// are then pooled into one intention-aware vector per side.

enum class CoAttentionVariant { bilinear, soft, mlp };
enum class AggregationMode { sum, mean };

CoAttentionVariant parse_co_attention(const std::string& name);
AggregationMode parse_aggregation(const std::string& name);

struct CoAttentionParams {
    CoAttentionVariant variant = CoAttentionVariant::bilinear;
    size_t dim = 0;
    Parameter m;        // d x d bilinear form (bilinear variant only)
    Mlp f_user, f_item; // d -> d review encoders (bilinear + soft)
    Mlp f_pair;         // 2d -> 1 pair scorer (mlp variant only)

    static CoAttentionParams init(CoAttentionVariant variant, size_t dim,
                                  size_t encoder_depth, uint64_t seed,
                                  const std::string& name_prefix = "idm");
    // Only the parameters the active variant actually uses.
    void collect_parameters(std::vector<Parameter*>& out);
};

struct MatchMatrix {
    DenseMatrix c;  // l_u x l_i; entries touching masked reviews are exactly 0
    std::vector<uint8_t> user_mask, item_mask;
};

struct IdmCache {
    MlpCache f_user_cache, f_item_cache, f_pair_cache;
    DenseMatrix user_encoded, item_encoded;  // bilinear/soft intermediates
    DenseMatrix user_mid;                    // bilinear: f_user(Ru) * M
    DenseMatrix pair_inputs;                 // mlp: (l_u*l_i) x 2d concat rows
    MatchMatrix match;
    DenseMatrix row_mean, col_mean;          // l_u x 1 and 1 x l_i
    double inv_user_count = 0.0, inv_item_count = 0.0;
    // Raw (masked-row-zeroed) review matrices the refinement scales.
    DenseMatrix user_raw, item_raw;
    AggregationMode mode = AggregationMode::sum;
};

// C per the active variant, with masked entries forced to exact zeros:
//   bilinear: c_kj = f_user(r_k)^T M f_item(r_j)
//   soft:     c_kj = f_user(r_k)^T f_item(r_j)
//   mlp:      c_kj = f_pair(concat(r_k, r_j))
MatchMatrix match_scores(const CoAttentionParams& params, const PaddedReviews& user,
                         const PaddedReviews& item, IdmCache* cache = nullptr);

// Refinement: each user review scaled by the mean of its row of C, each item
// review by the mean of its column; means divide by the REAL review count of
// the opposite side (zero reviews on either side yield zero vectors).
std::pair<DenseMatrix, DenseMatrix> refine(const MatchMatrix& match,
                                           const PaddedReviews& user,
                                           const PaddedReviews& item);

// Pooling over refined reviews: sum, or mean over the side's real count.
std::pair<DenseMatrix, DenseMatrix> aggregate(const DenseMatrix& user_refined,
                                              const DenseMatrix& item_refined,
                                              size_t user_real, size_t item_real,
                                              AggregationMode mode);

struct IdmOutput {
    DenseMatrix r_user;  // 1 x d intention-aware user-side vector
    DenseMatrix r_item;  // 1 x d item-side vector
    MatchMatrix match;   // exposed raw for explanations
};

IdmOutput idm_forward(const CoAttentionParams& params, const PaddedReviews& user,
                      const PaddedReviews& item, AggregationMode mode,
                      IdmCache* cache = nullptr);

// Accumulates gradients into params from d(loss)/d(r_user), d(loss)/d(r_item).
// Review embeddings are inputs, not parameters, so no input gradient returns.
void idm_backward(CoAttentionParams& params, const IdmCache& cache,
                  const DenseMatrix& d_r_user, const DenseMatrix& d_r_item);

}  // namespace ranking
