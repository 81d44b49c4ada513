#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "raise/numerics.hpp"
#include "raise/rng.hpp"

namespace ranking {

// Dynamic Transformer Encoder machinery: scaled dot-product self-attention,
// the multi-head baseline it is compared against, the intention gate that
// turns gated user/list context into expert weights, expert mixing, and the
// full encoder block (post-layer-norm, 4d FFN, dropout).

// ---- plain self-attention ----

struct AttnCache {
    DenseMatrix s, q, k, v;
    DenseMatrix probs;  // row-stochastic attention weights
};

// softmax_rows(S Wq (S Wk)^T / sqrt(d_k)) * (S Wv); d_k is Wq's column count.
DenseMatrix self_attention(const DenseMatrix& s, const DenseMatrix& wq,
                           const DenseMatrix& wk, const DenseMatrix& wv,
                           AttnCache* cache = nullptr);

// Returns dS; accumulates projection-weight gradients into dwq/dwk/dwv.
DenseMatrix self_attention_backward(const AttnCache& cache, const DenseMatrix& wq,
                                    const DenseMatrix& wk, const DenseMatrix& wv,
                                    const DenseMatrix& dout, DenseMatrix& dwq,
                                    DenseMatrix& dwk, DenseMatrix& dwv);

// ---- multi-head baseline (forward-only comparison mechanism) ----

struct StaticAttentionParams {
    size_t heads = 1;
    std::vector<Parameter> wq, wk, wv;  // per head, d x (d/h)
    Parameter wo;                       // (h * d/h) x d

    static StaticAttentionParams init(size_t d, size_t h, uint64_t seed,
                                      const std::string& prefix = "mha");
};

DenseMatrix multi_head(const DenseMatrix& s, const StaticAttentionParams& params);

// ---- intention gate ----

struct IntentionGate {
    // Row-vector convention: a = softmax(relu(x W_E + b_E) W_A + b_A),
    // where x = p_bar ⊙ q_bar is 1 x d and a is 1 x t.
    Parameter w_e;  // d x d
    Parameter b_e;  // 1 x d
    Parameter w_a;  // d x t
    Parameter b_a;  // 1 x t

    static IntentionGate init(size_t d, size_t t, uint64_t seed,
                              const std::string& prefix = "gate");
    void collect_parameters(std::vector<Parameter*>& out);
    size_t expert_count() const { return w_a.value.cols; }
};

struct GateCache {
    DenseMatrix x;       // p_bar ⊙ q_bar
    DenseMatrix p_bar, q_bar;
    DenseMatrix preact;  // x W_E + b_E
    DenseMatrix hidden;  // relu(preact)
    DenseMatrix a;       // softmax output
};

DenseMatrix intention_gate(const IntentionGate& gate, const DenseMatrix& p_bar,
                           const DenseMatrix& q_bar, GateCache* cache = nullptr);

// Returns (d p_bar, d q_bar); accumulates gate parameter gradients.
std::pair<DenseMatrix, DenseMatrix> intention_gate_backward(IntentionGate& gate,
                                                            const GateCache& cache,
                                                            const DenseMatrix& da);

// ---- expert bank and dynamic attention ----

struct ExpertBank {
    size_t t = 0;
    size_t dim = 0;
    std::vector<Parameter> wq, wk, wv;  // t experts each, d x d

    static ExpertBank init(size_t t, size_t d, uint64_t seed,
                           const std::string& prefix = "experts");
    void collect_parameters(std::vector<Parameter*>& out);
    bool empty() const { return t == 0; }
};

struct MixedMatrices {
    DenseMatrix wq, wk, wv;  // a-weighted sums over the bank, d x d each
};

// One pass per matrix: W^u = sum_t a_t * W_t.
MixedMatrices mix_experts(const DenseMatrix& a, const ExpertBank& bank);

// Accumulates expert gradients from the mixed-matrix gradients; returns da.
DenseMatrix mix_experts_backward(ExpertBank& bank, const DenseMatrix& a,
                                 const MixedMatrices& dmixed);

struct DynAttnCache {
    MixedMatrices mixed;
    DenseMatrix a;
    AttnCache attn;
};

// Single-head attention under the user's mixed projection matrices.
DenseMatrix dynamic_self_attention(const DenseMatrix& s, const DenseMatrix& a,
                                   const ExpertBank& bank, DynAttnCache* cache = nullptr);

// Returns (dS, da); accumulates expert gradients.
std::pair<DenseMatrix, DenseMatrix> dynamic_self_attention_backward(
    ExpertBank& bank, const DynAttnCache& cache, const DenseMatrix& dout);

// ---- layer norm ----

struct LayerNormCache {
    DenseMatrix xhat;
    std::vector<double> inv_std;  // per row
};

DenseMatrix layer_norm(const DenseMatrix& x, const Parameter& gain, const Parameter& bias,
                       LayerNormCache* cache = nullptr);
DenseMatrix layer_norm_backward(Parameter& gain, Parameter& bias,
                                const LayerNormCache& cache, const DenseMatrix& dy);

// ---- encoder block ----

struct EncoderBlock {
    size_t dim = 0;
    double dropout_rate = 0.0;  // 0 disables; training-only
    ExpertBank bank;            // empty when the model shares one bank
    Parameter ffn_w1, ffn_b1;   // d x 4d, 1 x 4d
    Parameter ffn_w2, ffn_b2;   // 4d x d, 1 x d
    Parameter ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // 1 x d each

    static EncoderBlock init(size_t d, size_t t, double dropout, uint64_t seed,
                             const std::string& prefix);
    void collect_parameters(std::vector<Parameter*>& out);
};

struct BlockCache {
    DenseMatrix s_in;
    DynAttnCache attn;
    DenseMatrix drop1_mask, res1;
    LayerNormCache ln1;
    DenseMatrix x1;
    DenseMatrix ffn_pre, ffn_hidden, ffn_out;
    DenseMatrix drop2_mask, res2;
    LayerNormCache ln2;
};

// x1 = LN(S + dropout(dyn_attn(S))); out = LN(x1 + dropout(FFN(x1))).
// `bank_override` lets the model share block 0's bank across blocks.
DenseMatrix encoder_block_forward(const DenseMatrix& s, const DenseMatrix& a,
                                  const EncoderBlock& block, bool training, Rng& rng,
                                  BlockCache* cache = nullptr,
                                  const ExpertBank* bank_override = nullptr);

// Returns (dS, da); accumulates all block (and bank) gradients.
std::pair<DenseMatrix, DenseMatrix> encoder_block_backward(
    EncoderBlock& block, const BlockCache& cache, const DenseMatrix& dout,
    ExpertBank* bank_override = nullptr);

// ---- cost model ----

struct CostRow {
    std::string mechanism;  // "static" | "multihead" | "dynamic"
    uint64_t attn_madds = 0;   // total multiply-adds of the mechanism, per block
    uint64_t extra_madds = 0;  // overhead vs the static core
    uint64_t params = 0;       // attention parameters of the mechanism
};

struct CostBreakdown {
    size_t n = 0, d = 0, t = 0, h = 0, b = 0;
    CostRow static_row, multihead_row, dynamic_row;
};

// Closed-form multiply-add counts per encoder block:
//   static core      3nd^2 + 2n^2 d
//   multihead extra  nd^2           (the W_O projection)
//   dynamic extra    3td^2          (mixing three matrices)
// Tests assert these equal an instrumented count of the real forward pass.
CostBreakdown cost_report(size_t n, size_t d, size_t t, size_t h, size_t b);
std::string cost_report_tsv(const CostBreakdown& report);

// Instrumented counterparts: run the real mechanism once under the madd
// counter on deterministic random inputs and return the tally.
uint64_t measured_static_madds(size_t n, size_t d, uint64_t seed);
uint64_t measured_multihead_madds(size_t n, size_t d, size_t h, uint64_t seed);
uint64_t measured_dynamic_madds(size_t n, size_t d, size_t t, uint64_t seed);

}  // namespace ranking
