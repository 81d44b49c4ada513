#include "raise/dte.hpp"

#include <cmath>
#include <cstdio>
#include <utility>

#include "raise/errors.hpp"
#include "raise/kernels.hpp"

namespace ranking {

namespace {

void require_shape(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

// Accumulation target for weight gradients: size on first use.
void accumulate(DenseMatrix& acc, const DenseMatrix& delta) {
    if (acc.rows == 0 && acc.cols == 0) acc = DenseMatrix(delta.rows, delta.cols);
    add_inplace(acc, delta);
}

// Inverted dropout: survivors are scaled by 1/(1-rate) so inference needs no
// rescaling. The mask is left empty when dropout is inactive.
DenseMatrix apply_dropout(const DenseMatrix& x, double rate, bool training, Rng& rng,
                          DenseMatrix& mask_out) {
    mask_out = DenseMatrix();
    if (!training || rate <= 0.0) return x;
    DenseMatrix mask(x.rows, x.cols);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (size_t r = 0; r < mask.rows; ++r)
        for (size_t c = 0; c < mask.cols; ++c)
            mask(r, c) = rng.next_double() >= rate ? keep_scale : 0.0;
    mask_out = mask;
    return hadamard(x, mask);
}

DenseMatrix dropout_backward(const DenseMatrix& dy, const DenseMatrix& mask) {
    if (mask.rows == 0) return dy;
    return hadamard(dy, mask);
}

}  // namespace

// ---- plain self-attention ----

DenseMatrix self_attention(const DenseMatrix& s, const DenseMatrix& wq,
                           const DenseMatrix& wk, const DenseMatrix& wv,
                           AttnCache* cache) {
    require_shape(wq.rows == s.cols && wk.rows == s.cols && wv.rows == s.cols,
                  "self_attention: projection rows must equal item dim, got S " +
                      s.shape_str() + " Wq " + wq.shape_str() + " Wk " + wk.shape_str() +
                      " Wv " + wv.shape_str());
    require_shape(wq.cols == wk.cols,
                  "self_attention: Wq and Wk must share a key dim, got Wq " +
                      wq.shape_str() + " Wk " + wk.shape_str());
    DenseMatrix q = matmul(s, wq);
    DenseMatrix k = matmul(s, wk);
    DenseMatrix v = matmul(s, wv);
    DenseMatrix scores = matmul(q, transpose(k));
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(wq.cols));
    DenseMatrix probs = softmax_rows(scale(scores, inv_sqrt_dk));
    DenseMatrix out = matmul(probs, v);
    if (cache) {
        cache->s = s;
        cache->q = q;
        cache->k = k;
        cache->v = v;
        cache->probs = probs;
    }
    return out;
}

DenseMatrix self_attention_backward(const AttnCache& cache, const DenseMatrix& wq,
                                    const DenseMatrix& wk, const DenseMatrix& wv,
                                    const DenseMatrix& dout, DenseMatrix& dwq,
                                    DenseMatrix& dwk, DenseMatrix& dwv) {
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(wq.cols));
    DenseMatrix dprobs = matmul(dout, transpose(cache.v));
    DenseMatrix dv = matmul(transpose(cache.probs), dout);
    DenseMatrix dscaled = softmax_rows_backward(cache.probs, dprobs);
    DenseMatrix dq = scale(matmul(dscaled, cache.k), inv_sqrt_dk);
    DenseMatrix dk = scale(matmul(transpose(dscaled), cache.q), inv_sqrt_dk);

    DenseMatrix st = transpose(cache.s);
    accumulate(dwq, matmul(st, dq));
    accumulate(dwk, matmul(st, dk));
    accumulate(dwv, matmul(st, dv));

    DenseMatrix ds = matmul(dq, transpose(wq));
    add_inplace(ds, matmul(dk, transpose(wk)));
    add_inplace(ds, matmul(dv, transpose(wv)));
    return ds;
}

// ---- multi-head baseline ----

StaticAttentionParams StaticAttentionParams::init(size_t d, size_t h, uint64_t seed,
                                                  const std::string& prefix) {
    if (h == 0) throw ConfigError("multi-head attention needs at least one head");
    if (d % h != 0)
        throw ConfigError("head count " + std::to_string(h) + " must divide dim " +
                          std::to_string(d));
    const size_t dk = d / h;
    StaticAttentionParams p;
    p.heads = h;
    for (size_t i = 0; i < h; ++i) {
        const std::string head = prefix + ".h" + std::to_string(i);
        p.wq.emplace_back(head + ".wq", glorot_init(d, dk, Rng::derive(seed, 3 * i + 1)));
        p.wk.emplace_back(head + ".wk", glorot_init(d, dk, Rng::derive(seed, 3 * i + 2)));
        p.wv.emplace_back(head + ".wv", glorot_init(d, dk, Rng::derive(seed, 3 * i + 3)));
    }
    p.wo = Parameter(prefix + ".wo", glorot_init(h * dk, d, Rng::derive(seed, 0x0f0f)));
    return p;
}

DenseMatrix multi_head(const DenseMatrix& s, const StaticAttentionParams& params) {
    require_shape(!params.wq.empty() && params.wq[0].value.rows == s.cols,
                  "multi_head: head projections must match item dim, got S " + s.shape_str());
    const size_t h = params.heads;
    const size_t dv = params.wv[0].value.cols;
    DenseMatrix concat(s.rows, h * dv);
    for (size_t i = 0; i < h; ++i) {
        DenseMatrix head = self_attention(s, params.wq[i].value, params.wk[i].value,
                                          params.wv[i].value);
        for (size_t r = 0; r < head.rows; ++r)
            for (size_t c = 0; c < dv; ++c) concat(r, i * dv + c) = head(r, c);
    }
    return matmul(concat, params.wo.value);
}

// ---- intention gate ----

IntentionGate IntentionGate::init(size_t d, size_t t, uint64_t seed,
                                  const std::string& prefix) {
    if (t == 0) throw ConfigError("intention gate needs at least one expert");
    IntentionGate g;
    g.w_e = Parameter(prefix + ".w_e", glorot_init(d, d, Rng::derive(seed, 1)));
    g.b_e = Parameter(prefix + ".b_e", DenseMatrix(1, d));
    g.w_a = Parameter(prefix + ".w_a", glorot_init(d, t, Rng::derive(seed, 2)));
    g.b_a = Parameter(prefix + ".b_a", DenseMatrix(1, t));
    return g;
}

void IntentionGate::collect_parameters(std::vector<Parameter*>& out) {
    out.push_back(&w_e);
    out.push_back(&b_e);
    out.push_back(&w_a);
    out.push_back(&b_a);
}

DenseMatrix intention_gate(const IntentionGate& gate, const DenseMatrix& p_bar,
                           const DenseMatrix& q_bar, GateCache* cache) {
    require_shape(p_bar.rows == 1 && q_bar.rows == 1 && p_bar.cols == q_bar.cols &&
                      p_bar.cols == gate.w_e.value.rows,
                  "intention_gate: expected matching 1 x d context rows, got " +
                      p_bar.shape_str() + " and " + q_bar.shape_str());
    DenseMatrix x = hadamard(p_bar, q_bar);
    DenseMatrix preact = add_row_broadcast(matmul(x, gate.w_e.value), gate.b_e.value);
    DenseMatrix hidden = relu(preact);
    DenseMatrix logits = add_row_broadcast(matmul(hidden, gate.w_a.value), gate.b_a.value);
    DenseMatrix a = softmax_rows(logits);
    if (cache) {
        cache->x = x;
        cache->p_bar = p_bar;
        cache->q_bar = q_bar;
        cache->preact = preact;
        cache->hidden = hidden;
        cache->a = a;
    }
    return a;
}

std::pair<DenseMatrix, DenseMatrix> intention_gate_backward(IntentionGate& gate,
                                                            const GateCache& cache,
                                                            const DenseMatrix& da) {
    DenseMatrix dlogits = softmax_rows_backward(cache.a, da);
    add_inplace(gate.b_a.grad, dlogits);
    add_inplace(gate.w_a.grad, matmul(transpose(cache.hidden), dlogits));
    DenseMatrix dhidden = matmul(dlogits, transpose(gate.w_a.value));
    DenseMatrix dpreact = relu_backward(cache.preact, dhidden);
    add_inplace(gate.b_e.grad, dpreact);
    add_inplace(gate.w_e.grad, matmul(transpose(cache.x), dpreact));
    DenseMatrix dx = matmul(dpreact, transpose(gate.w_e.value));
    return {hadamard(dx, cache.q_bar), hadamard(dx, cache.p_bar)};
}

// ---- expert bank and dynamic attention ----

ExpertBank ExpertBank::init(size_t t, size_t d, uint64_t seed, const std::string& prefix) {
    if (t == 0) throw ConfigError("expert bank needs at least one expert");
    ExpertBank bank;
    bank.t = t;
    bank.dim = d;
    for (size_t i = 0; i < t; ++i) {
        const std::string expert = prefix + ".e" + std::to_string(i);
        bank.wq.emplace_back(expert + ".wq", glorot_init(d, d, Rng::derive(seed, 3 * i + 1)));
        bank.wk.emplace_back(expert + ".wk", glorot_init(d, d, Rng::derive(seed, 3 * i + 2)));
        bank.wv.emplace_back(expert + ".wv", glorot_init(d, d, Rng::derive(seed, 3 * i + 3)));
    }
    return bank;
}

void ExpertBank::collect_parameters(std::vector<Parameter*>& out) {
    for (size_t i = 0; i < t; ++i) {
        out.push_back(&wq[i]);
        out.push_back(&wk[i]);
        out.push_back(&wv[i]);
    }
}

MixedMatrices mix_experts(const DenseMatrix& a, const ExpertBank& bank) {
    require_shape(a.rows == 1 && a.cols == bank.t,
                  "mix_experts: gate must be 1 x " + std::to_string(bank.t) + ", got " +
                      a.shape_str());
    if (bank.empty()) throw ConfigError("mix_experts: empty expert bank");
    MixedMatrices mixed{DenseMatrix(bank.dim, bank.dim), DenseMatrix(bank.dim, bank.dim),
                        DenseMatrix(bank.dim, bank.dim)};
    for (size_t i = 0; i < bank.t; ++i) {
        axpy_inplace(mixed.wq, a(0, i), bank.wq[i].value);
        axpy_inplace(mixed.wk, a(0, i), bank.wk[i].value);
        axpy_inplace(mixed.wv, a(0, i), bank.wv[i].value);
    }
    return mixed;
}

DenseMatrix mix_experts_backward(ExpertBank& bank, const DenseMatrix& a,
                                 const MixedMatrices& dmixed) {
    DenseMatrix da(1, bank.t);
    for (size_t i = 0; i < bank.t; ++i) {
        axpy_inplace(bank.wq[i].grad, a(0, i), dmixed.wq);
        axpy_inplace(bank.wk[i].grad, a(0, i), dmixed.wk);
        axpy_inplace(bank.wv[i].grad, a(0, i), dmixed.wv);
        da(0, i) = dot(dmixed.wq, bank.wq[i].value) + dot(dmixed.wk, bank.wk[i].value) +
                   dot(dmixed.wv, bank.wv[i].value);
    }
    return da;
}

DenseMatrix dynamic_self_attention(const DenseMatrix& s, const DenseMatrix& a,
                                   const ExpertBank& bank, DynAttnCache* cache) {
    require_shape(s.cols == bank.dim, "dynamic_self_attention: S " + s.shape_str() +
                                          " does not match expert dim " +
                                          std::to_string(bank.dim));
    MixedMatrices mixed = mix_experts(a, bank);
    DenseMatrix out =
        self_attention(s, mixed.wq, mixed.wk, mixed.wv, cache ? &cache->attn : nullptr);
    if (cache) {
        cache->mixed = std::move(mixed);
        cache->a = a;
    }
    return out;
}

std::pair<DenseMatrix, DenseMatrix> dynamic_self_attention_backward(
    ExpertBank& bank, const DynAttnCache& cache, const DenseMatrix& dout) {
    MixedMatrices dmixed{DenseMatrix(bank.dim, bank.dim), DenseMatrix(bank.dim, bank.dim),
                         DenseMatrix(bank.dim, bank.dim)};
    DenseMatrix ds = self_attention_backward(cache.attn, cache.mixed.wq, cache.mixed.wk,
                                             cache.mixed.wv, dout, dmixed.wq, dmixed.wk,
                                             dmixed.wv);
    DenseMatrix da = mix_experts_backward(bank, cache.a, dmixed);
    return {std::move(ds), std::move(da)};
}

// ---- layer norm ----

namespace {
constexpr double kLayerNormEps = 1e-5;
}

DenseMatrix layer_norm(const DenseMatrix& x, const Parameter& gain, const Parameter& bias,
                       LayerNormCache* cache) {
    require_shape(gain.value.rows == 1 && gain.value.cols == x.cols &&
                      bias.value.rows == 1 && bias.value.cols == x.cols,
                  "layer_norm: gain/bias must be 1 x " + std::to_string(x.cols));
    DenseMatrix xhat(x.rows, x.cols);
    std::vector<double> inv_std(x.rows);
    DenseMatrix y(x.rows, x.cols);
    for (size_t r = 0; r < x.rows; ++r) {
        double mean = 0.0;
        for (size_t c = 0; c < x.cols; ++c) mean += x(r, c);
        mean /= static_cast<double>(x.cols);
        double var = 0.0;
        for (size_t c = 0; c < x.cols; ++c) {
            const double delta = x(r, c) - mean;
            var += delta * delta;
        }
        var /= static_cast<double>(x.cols);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        inv_std[r] = inv;
        for (size_t c = 0; c < x.cols; ++c) {
            xhat(r, c) = (x(r, c) - mean) * inv;
            y(r, c) = gain.value(0, c) * xhat(r, c) + bias.value(0, c);
        }
    }
    if (cache) {
        cache->xhat = xhat;
        cache->inv_std = inv_std;
    }
    return y;
}

DenseMatrix layer_norm_backward(Parameter& gain, Parameter& bias,
                                const LayerNormCache& cache, const DenseMatrix& dy) {
    const DenseMatrix& xhat = cache.xhat;
    DenseMatrix dx(dy.rows, dy.cols);
    const double inv_n = 1.0 / static_cast<double>(dy.cols);
    for (size_t r = 0; r < dy.rows; ++r) {
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (size_t c = 0; c < dy.cols; ++c) {
            const double dxhat = dy(r, c) * gain.value(0, c);
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat(r, c);
            gain.grad(0, c) += dy(r, c) * xhat(r, c);
            bias.grad(0, c) += dy(r, c);
        }
        mean_dxhat *= inv_n;
        mean_dxhat_xhat *= inv_n;
        for (size_t c = 0; c < dy.cols; ++c) {
            const double dxhat = dy(r, c) * gain.value(0, c);
            dx(r, c) = cache.inv_std[r] * (dxhat - mean_dxhat - xhat(r, c) * mean_dxhat_xhat);
        }
    }
    return dx;
}

// ---- encoder block ----

EncoderBlock EncoderBlock::init(size_t d, size_t t, double dropout, uint64_t seed,
                                const std::string& prefix) {
    if (dropout != 0.0 && (dropout < 0.1 || dropout > 0.5))
        throw ConfigError("dropout rate must be 0 or in [0.1, 0.5], got " +
                          std::to_string(dropout));
    EncoderBlock block;
    block.dim = d;
    block.dropout_rate = dropout;
    if (t > 0) block.bank = ExpertBank::init(t, d, Rng::derive(seed, 1), prefix + ".experts");
    block.ffn_w1 = Parameter(prefix + ".ffn.w1", glorot_init(d, 4 * d, Rng::derive(seed, 2)));
    block.ffn_b1 = Parameter(prefix + ".ffn.b1", DenseMatrix(1, 4 * d));
    block.ffn_w2 = Parameter(prefix + ".ffn.w2", glorot_init(4 * d, d, Rng::derive(seed, 3)));
    block.ffn_b2 = Parameter(prefix + ".ffn.b2", DenseMatrix(1, d));
    DenseMatrix ones(1, d);
    ones.fill(1.0);
    block.ln1_gain = Parameter(prefix + ".ln1.g", ones);
    block.ln1_bias = Parameter(prefix + ".ln1.b", DenseMatrix(1, d));
    block.ln2_gain = Parameter(prefix + ".ln2.g", ones);
    block.ln2_bias = Parameter(prefix + ".ln2.b", DenseMatrix(1, d));
    return block;
}

void EncoderBlock::collect_parameters(std::vector<Parameter*>& out) {
    bank.collect_parameters(out);
    out.push_back(&ffn_w1);
    out.push_back(&ffn_b1);
    out.push_back(&ffn_w2);
    out.push_back(&ffn_b2);
    out.push_back(&ln1_gain);
    out.push_back(&ln1_bias);
    out.push_back(&ln2_gain);
    out.push_back(&ln2_bias);
}

DenseMatrix encoder_block_forward(const DenseMatrix& s, const DenseMatrix& a,
                                  const EncoderBlock& block, bool training, Rng& rng,
                                  BlockCache* cache, const ExpertBank* bank_override) {
    const ExpertBank& bank = bank_override ? *bank_override : block.bank;
    BlockCache local;
    BlockCache& c = cache ? *cache : local;
    c.s_in = s;

    DenseMatrix attn_out = dynamic_self_attention(s, a, bank, &c.attn);
    DenseMatrix dropped1 = apply_dropout(attn_out, block.dropout_rate, training, rng,
                                         c.drop1_mask);
    c.res1 = add(s, dropped1);
    c.x1 = layer_norm(c.res1, block.ln1_gain, block.ln1_bias, &c.ln1);

    c.ffn_pre = add_row_broadcast(matmul(c.x1, block.ffn_w1.value), block.ffn_b1.value);
    c.ffn_hidden = relu(c.ffn_pre);
    c.ffn_out =
        add_row_broadcast(matmul(c.ffn_hidden, block.ffn_w2.value), block.ffn_b2.value);
    DenseMatrix dropped2 =
        apply_dropout(c.ffn_out, block.dropout_rate, training, rng, c.drop2_mask);
    c.res2 = add(c.x1, dropped2);
    return layer_norm(c.res2, block.ln2_gain, block.ln2_bias, &c.ln2);
}

std::pair<DenseMatrix, DenseMatrix> encoder_block_backward(EncoderBlock& block,
                                                           const BlockCache& cache,
                                                           const DenseMatrix& dout,
                                                           ExpertBank* bank_override) {
    DenseMatrix dres2 = layer_norm_backward(block.ln2_gain, block.ln2_bias, cache.ln2, dout);

    DenseMatrix dx1 = dres2;  // residual branch
    DenseMatrix dffn_out = dropout_backward(dres2, cache.drop2_mask);
    add_inplace(block.ffn_b2.grad, column_sums(dffn_out));
    add_inplace(block.ffn_w2.grad, matmul(transpose(cache.ffn_hidden), dffn_out));
    DenseMatrix dhidden = matmul(dffn_out, transpose(block.ffn_w2.value));
    DenseMatrix dpre = relu_backward(cache.ffn_pre, dhidden);
    add_inplace(block.ffn_b1.grad, column_sums(dpre));
    add_inplace(block.ffn_w1.grad, matmul(transpose(cache.x1), dpre));
    add_inplace(dx1, matmul(dpre, transpose(block.ffn_w1.value)));

    DenseMatrix dres1 = layer_norm_backward(block.ln1_gain, block.ln1_bias, cache.ln1, dx1);

    DenseMatrix ds = dres1;  // residual branch
    DenseMatrix dattn = dropout_backward(dres1, cache.drop1_mask);
    ExpertBank& bank = bank_override ? *bank_override : block.bank;
    auto [ds_attn, da] = dynamic_self_attention_backward(bank, cache.attn, dattn);
    add_inplace(ds, ds_attn);
    return {std::move(ds), std::move(da)};
}

// ---- cost model ----

CostBreakdown cost_report(size_t n, size_t d, size_t t, size_t h, size_t b) {
    if (n == 0 || d == 0 || t == 0 || h == 0 || b == 0)
        throw ConfigError("cost_report: n, d, t, h, b must all be positive");
    if (d % h != 0)
        throw ConfigError("cost_report: head count " + std::to_string(h) +
                          " must divide dim " + std::to_string(d));
    const uint64_t nn = n, dd = d, tt = t;
    const uint64_t core = 3 * nn * dd * dd + 2 * nn * nn * dd;

    CostBreakdown report;
    report.n = n;
    report.d = d;
    report.t = t;
    report.h = h;
    report.b = b;
    report.static_row = {"static", core, 0, 3 * dd * dd};
    report.multihead_row = {"multihead", core + nn * dd * dd, nn * dd * dd,
                            3 * dd * dd + dd * dd};
    report.dynamic_row = {"dynamic", core + 3 * tt * dd * dd, 3 * tt * dd * dd,
                          3 * tt * dd * dd};
    return report;
}

std::string cost_report_tsv(const CostBreakdown& report) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof(line),
                  "# n=%zu d=%zu t=%zu h=%zu blocks=%zu; multiply-add counts per encoder block\n",
                  report.n, report.d, report.t, report.h, report.b);
    out += line;
    out += "mechanism\tattn_madds\textra_madds\tparams\n";
    for (const CostRow* row :
         {&report.static_row, &report.multihead_row, &report.dynamic_row}) {
        std::snprintf(line, sizeof(line), "%s\t%llu\t%llu\t%llu\n", row->mechanism.c_str(),
                      static_cast<unsigned long long>(row->attn_madds),
                      static_cast<unsigned long long>(row->extra_madds),
                      static_cast<unsigned long long>(row->params));
        out += line;
    }
    return out;
}

uint64_t measured_static_madds(size_t n, size_t d, uint64_t seed) {
    DenseMatrix s = glorot_init(n, d, Rng::derive(seed, 1));
    DenseMatrix wq = glorot_init(d, d, Rng::derive(seed, 2));
    DenseMatrix wk = glorot_init(d, d, Rng::derive(seed, 3));
    DenseMatrix wv = glorot_init(d, d, Rng::derive(seed, 4));
    kernels::counting_begin();
    self_attention(s, wq, wk, wv);
    return kernels::counting_end();
}

uint64_t measured_multihead_madds(size_t n, size_t d, size_t h, uint64_t seed) {
    StaticAttentionParams params = StaticAttentionParams::init(d, h, Rng::derive(seed, 1));
    DenseMatrix s = glorot_init(n, d, Rng::derive(seed, 2));
    kernels::counting_begin();
    multi_head(s, params);
    return kernels::counting_end();
}

uint64_t measured_dynamic_madds(size_t n, size_t d, size_t t, uint64_t seed) {
    ExpertBank bank = ExpertBank::init(t, d, Rng::derive(seed, 1));
    DenseMatrix s = glorot_init(n, d, Rng::derive(seed, 2));
    DenseMatrix logits = glorot_init(1, t, Rng::derive(seed, 3));
    DenseMatrix a = softmax_rows(logits);
    kernels::counting_begin();
    dynamic_self_attention(s, a, bank);
    return kernels::counting_end();
}

}  // namespace ranking
