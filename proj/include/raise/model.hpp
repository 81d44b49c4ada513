#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "raise/data.hpp"
#include "raise/dte.hpp"
#include "raise/gmf.hpp"
#include "raise/idm.hpp"
#include "raise/mlp.hpp"
#include "raise/numerics.hpp"
#include "raise/rng.hpp"

namespace ranking {

// Full re-ranking model: per-item representations fed from the base ranker's
// latents and the co-attention module, a learned positional vector per list
// slot, an intention gate shared across encoder blocks, and a softmax head
// over the n candidates of one list.

// ---- configuration ----

enum class Ablation { full, no_idm, no_dte, no_both, no_user_reviews, no_item_reviews };

Ablation parse_ablation(const std::string& name);
std::string ablation_name(Ablation a);

// The orthogonal switches an ablation resolves to. no_both is exactly the
// union of no_idm and no_dte, which tests assert bit-for-bit.
struct AblationFlags {
    bool drop_intention = false;   // zero r vectors, skip the review-pair MLP
    bool static_encoders = false;  // collapse the expert mixture to one expert
    bool zero_user_reviews = false;
    bool zero_item_reviews = false;

    bool operator==(const AblationFlags&) const = default;
};

AblationFlags ablation_flags(Ablation a);
AblationFlags merge_flags(const AblationFlags& x, const AblationFlags& y);

struct RaiseConfig {
    size_t d = 32;   // latent dimension
    size_t n = 50;   // re-ranked list length
    size_t t = 4;    // expert count (collapses to 1 under static encoders)
    size_t b = 1;    // encoder blocks
    size_t l_u = 20; // user review sequence length
    size_t l_i = 20; // item review sequence length
    double lr = 1e-3;
    size_t batch_size = 16;
    double dropout = 0.1;
    size_t epochs = 30;
    uint64_t seed = 42;
    CoAttentionVariant co_attention = CoAttentionVariant::bilinear;
    AggregationMode aggregation = AggregationMode::sum;
    size_t encoder_depth = 1;  // depth of the review encoders and f_im/f_re
    Ablation ablation = Ablation::full;
    bool shared_experts = false;  // one expert bank reused by every block
    bool finetune_base = false;   // unfreeze the base ranker's latents

    // Throws ConfigError naming the offending field and its accepted range.
    void validate() const;
    AblationFlags flags() const { return ablation_flags(ablation); }
    size_t effective_experts() const { return flags().static_encoders ? 1 : t; }
};

// ---- parameters ----

struct RaiseParameters {
    RaiseConfig config;   // resolved copy (dims, variant, flags source)
    AblationFlags flags;  // resolved at construction; tests may inject merges
    GmfModel gmf;
    CoAttentionParams idm;
    Mlp f_im, f_re;       // 2d -> d item-content and review-pair encoders
    Parameter w_s;        // 2d x d combiner
    Parameter positions;  // n x d, one learned vector per list slot
    IntentionGate gate;
    std::vector<EncoderBlock> blocks;
    Parameter w_p;  // d x 1 scoring head
    Parameter b_p;  // 1 x 1

    static RaiseParameters init(const RaiseConfig& cfg, GmfModel gmf);
    static RaiseParameters init(const RaiseConfig& cfg, GmfModel gmf, AblationFlags flags);

    // Parameters updated by training under the current flags; the base
    // ranker's latents join only when finetune_base is set.
    std::vector<Parameter*> trainable();
    // Every tensor, for checkpoints: fixed construction order, unique names.
    std::vector<Parameter*> all_parameters();
    std::vector<const Parameter*> all_parameters() const;

    // Expert bank used by block k (block 0's bank when sharing is on).
    const ExpertBank& bank_for(size_t k) const;
};

// ---- examples ----

struct ListBatchExample {
    uint32_t user = 0;
    RankedList list;             // exactly n items
    std::vector<double> labels;  // 1.0 where the item is in the user's positives
    const PaddedReviews* user_reviews = nullptr;
    std::vector<const PaddedReviews*> item_reviews;  // n entries
};

// Owns the padded review blocks the examples point into. Move-only in
// spirit: do not copy while examples reference the pads.
struct ExamplePool {
    std::vector<PaddedReviews> user_pads;  // indexed by user
    std::vector<PaddedReviews> item_pads;  // indexed by item
    std::vector<ListBatchExample> examples;
};

// One example per ranked list; labels from the dataset's positive sets;
// review streams zeroed (content only, masks kept) per the config's flags.
// Lists shorter or longer than cfg.n raise DataError naming the user.
ExamplePool build_examples(const ImplicitDataset& ds, const std::vector<RankedList>& lists,
                           const ReviewStore& reviews, const RaiseConfig& cfg);

// ---- forward pass ----

struct ItemCache {
    IdmCache idm;
    MlpCache f_im_cache, f_re_cache;
    DenseMatrix pq_concat;    // 1 x 2d input to f_im
    DenseMatrix rr_concat;    // 1 x 2d input to f_re
    DenseMatrix imre_concat;  // 1 x 2d combiner input
    DenseMatrix r_user, r_item;  // 1 x d intention vectors (post-ablation)
};

struct ForwardCache {
    DenseMatrix p_u;                 // 1 x d user latent
    std::vector<DenseMatrix> q_rows; // n item latents, 1 x d each
    std::vector<ItemCache> items;
    DenseMatrix s;  // n x d sequence
    DenseMatrix p_bar, q_bar;
    GateCache gate;
    DenseMatrix a;
    std::vector<BlockCache> blocks;
    DenseMatrix f_final;  // n x d encoder output
    DenseMatrix logits;   // 1 x n
    DenseMatrix scores;   // 1 x n
};

// s = W_S' concat(f_im(p,q), f_re(r_u,r_i)) + positions[position]; the
// review half is zeroed (and f_re skipped) when intention is ablated.
DenseMatrix item_repr(const RaiseParameters& params, const DenseMatrix& p_u,
                      const DenseMatrix& q_i, const DenseMatrix& r_u,
                      const DenseMatrix& r_i, size_t position, ItemCache* cache = nullptr);

// n x d sequence: row j is item_repr of list slot j, with the co-attention
// module run once per (user, item) pair.
DenseMatrix build_sequence(const RaiseParameters& params, const ListBatchExample& ex,
                           ForwardCache* cache = nullptr);

// Pooled context: p_bar = (1/n) sum_j (p_u + r_j_user), q_bar likewise on the
// item side. Reads the vectors cached by build_sequence.
std::pair<DenseMatrix, DenseMatrix> list_context(const RaiseParameters& params,
                                                 const ForwardCache& cache);

// Scores over the n list slots: sequence -> gate -> b encoder blocks ->
// per-item logits -> softmax. Rows sum to 1.
DenseMatrix raise_forward(const RaiseParameters& params, const ListBatchExample& ex,
                          bool training, Rng& rng, ForwardCache* cache = nullptr);
DenseMatrix raise_forward(const RaiseParameters& params, const ListBatchExample& ex);

// ---- loss ----

struct NllResult {
    double loss = 0.0;
    size_t clamped = 0;  // positives whose score hit the 1e-12 log floor
};

// -sum_j labels_j * log(max(scores_j, 1e-12)).
NllResult nll_loss(const DenseMatrix& scores, const std::vector<double>& labels);

// Accumulates gradients of nll_loss into every trainable parameter.
void raise_backward(RaiseParameters& params, const ListBatchExample& ex,
                    const ForwardCache& cache, const std::vector<double>& labels);

// ---- training ----

struct EpochStats {
    double train_nll = 0.0;  // clean (dropout-off) mean NLL after the epoch
    double val_map5 = 0.0;
    size_t clamped = 0;  // log-floor hits during the epoch's updates
};

struct RaiseTrainStats {
    double epoch0_nll = 0.0;  // mean train NLL before any update
    std::vector<EpochStats> epochs;
    size_t best_epoch = 0;  // 0 = initial parameters, e = after epoch e
    double best_val_map5 = 0.0;
    size_t total_clamped = 0;
};

// Mini-batch Adam over the training users' list examples; deterministic
// under cfg.seed; returns the parameters at the best validation MAP@5
// (ties keep the earlier snapshot). Users without a list raise DataError.
RaiseParameters train_reranker(const ImplicitDataset& ds, GmfModel gmf,
                               const std::vector<RankedList>& lists,
                               const ReviewStore& reviews, const RaiseConfig& cfg,
                               RaiseTrainStats* stats = nullptr);

// ---- inference ----

// Reorders the list by descending score; ties keep original list order.
RankedList rerank_by_scores(const RankedList& list, const DenseMatrix& scores);
RankedList rerank(const RaiseParameters& params, const ListBatchExample& ex);

// ---- explanations ----

struct ExplanationPair {
    size_t user_review = 0;
    size_t item_review = 0;
    double score = 0.0;
};

struct Explanation {
    std::vector<ExplanationPair> pairs;  // descending score, ties by (k, j)
};

// Top match-matrix pairs between the two entities' real reviews. Throws
// DataError when either side has no reviews to explain with.
Explanation explain(const RaiseParameters& params, const PaddedReviews& user,
                    const PaddedReviews& item, size_t top_m);

}  // namespace ranking
