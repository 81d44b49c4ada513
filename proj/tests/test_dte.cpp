#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "raise/dte.hpp"
#include "raise/errors.hpp"
#include "raise/kernels.hpp"
#include "raise/numerics.hpp"
#include "raise/rng.hpp"

using namespace ranking;

namespace {

DenseMatrix random_matrix(size_t rows, size_t cols, uint64_t seed, double lo = -1.0,
                          double hi = 1.0) {
    Rng rng(seed);
    DenseMatrix m(rows, cols);
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
    return m;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
    REQUIRE(a.rows == b.rows);
    REQUIRE(a.cols == b.cols);
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a.values[i] - b.values[i]));
    return worst;
}

double min_abs(const DenseMatrix& m) {
    double best = std::numeric_limits<double>::infinity();
    for (double v : m.values) best = std::min(best, std::abs(v));
    return best;
}

// Gradient comparison: pass if |a-n| <= 1e-4 * max(|a|,|n|) or |a-n| <= 1e-7.
void check_grad_close(const DenseMatrix& analytic, const DenseMatrix& numeric,
                      const std::string& label) {
    REQUIRE(analytic.rows == numeric.rows);
    REQUIRE(analytic.cols == numeric.cols);
    for (size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic.values[i];
        const double n = numeric.values[i];
        const double diff = std::abs(a - n);
        const double tol = 1e-4 * std::max(std::abs(a), std::abs(n));
        INFO(label << " entry " << i << ": analytic=" << a << " numeric=" << n);
        CHECK((diff <= tol || diff <= 1e-7));
    }
}

}  // namespace

TEST_CASE("self-attention on a single item returns its value projection") {
    DenseMatrix s = random_matrix(1, 4, 11);
    DenseMatrix wq = random_matrix(4, 4, 12);
    DenseMatrix wk = random_matrix(4, 4, 13);
    DenseMatrix wv = random_matrix(4, 4, 14);
    DenseMatrix out = self_attention(s, wq, wk, wv);
    DenseMatrix expected = matmul(s, wv);
    CHECK(max_abs_diff(out, expected) == 0.0);
}

TEST_CASE("zero query/key projections mean-pool the value rows") {
    const size_t n = 4, d = 3;
    DenseMatrix s = random_matrix(n, d, 21);
    DenseMatrix zero(d, d);
    DenseMatrix wv = random_matrix(d, d, 22);
    AttnCache cache;
    DenseMatrix out = self_attention(s, zero, zero, wv, &cache);

    DenseMatrix v = matmul(s, wv);
    for (size_t r = 0; r < n; ++r) {
        for (size_t j = 0; j < n; ++j) CHECK(cache.probs(r, j) == doctest::Approx(1.0 / n).epsilon(1e-12));
        for (size_t c = 0; c < d; ++c) {
            double mean = 0.0;
            for (size_t j = 0; j < n; ++j) mean += v(j, c);
            mean /= static_cast<double>(n);
            CHECK(out(r, c) == doctest::Approx(mean).epsilon(1e-12));
        }
    }
}

TEST_CASE("self-attention matches an independently coded oracle on a 3x2 case") {
    DenseMatrix s(3, 2, {1.0, 2.0, -1.0, 0.5, 0.25, -0.75});
    DenseMatrix wq(2, 2, {0.3, -0.2, 0.1, 0.4});
    DenseMatrix wk(2, 2, {-0.5, 0.2, 0.6, -0.1});
    DenseMatrix wv(2, 2, {0.7, 0.05, -0.3, 0.9});

    // Straight scalar re-computation, no shared matrix code.
    double q[3][2], k[3][2], v[3][2];
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 2; ++c) {
            q[r][c] = s(r, 0) * wq(0, c) + s(r, 1) * wq(1, c);
            k[r][c] = s(r, 0) * wk(0, c) + s(r, 1) * wk(1, c);
            v[r][c] = s(r, 0) * wv(0, c) + s(r, 1) * wv(1, c);
        }
    const double inv = 1.0 / std::sqrt(2.0);
    double probs[3][3];
    for (int r = 0; r < 3; ++r) {
        double row[3], mx = -1e300;
        for (int j = 0; j < 3; ++j) {
            row[j] = (q[r][0] * k[j][0] + q[r][1] * k[j][1]) * inv;
            mx = std::max(mx, row[j]);
        }
        double denom = 0.0;
        for (int j = 0; j < 3; ++j) denom += std::exp(row[j] - mx);
        for (int j = 0; j < 3; ++j) probs[r][j] = std::exp(row[j] - mx) / denom;
    }
    DenseMatrix expected(3, 2);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 2; ++c)
            expected(r, c) =
                probs[r][0] * v[0][c] + probs[r][1] * v[1][c] + probs[r][2] * v[2][c];

    DenseMatrix out = self_attention(s, wq, wk, wv);
    CHECK(max_abs_diff(out, expected) <= 1e-12);
}

TEST_CASE("attention weight rows are stochastic even for large inputs") {
    for (uint64_t seed : {101ULL, 102ULL, 103ULL}) {
        DenseMatrix s = scale(random_matrix(5, 6, seed), 1e3);
        DenseMatrix wq = random_matrix(6, 6, seed + 10);
        DenseMatrix wk = random_matrix(6, 6, seed + 20);
        DenseMatrix wv = random_matrix(6, 6, seed + 30);
        AttnCache cache;
        DenseMatrix out = self_attention(s, wq, wk, wv, &cache);
        CHECK(out.all_finite());
        for (size_t r = 0; r < cache.probs.rows; ++r) {
            double sum = 0.0;
            for (size_t c = 0; c < cache.probs.cols; ++c) {
                CHECK(cache.probs(r, c) >= 0.0);
                sum += cache.probs(r, c);
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("one head with identity output projection reduces to plain attention") {
    const size_t d = 4;
    StaticAttentionParams params = StaticAttentionParams::init(d, 1, 31);
    for (size_t i = 0; i < d; ++i) params.wo.value(i, i) = 0.0;
    for (size_t i = 0; i < d; ++i)
        for (size_t j = 0; j < d; ++j) params.wo.value(i, j) = (i == j) ? 1.0 : 0.0;

    DenseMatrix s = random_matrix(3, d, 32);
    DenseMatrix out = multi_head(s, params);
    DenseMatrix expected =
        self_attention(s, params.wq[0].value, params.wk[0].value, params.wv[0].value);
    CHECK(max_abs_diff(out, expected) == 0.0);
}

TEST_CASE("permuting heads together with output-projection rows leaves multi-head unchanged") {
    const size_t d = 6, h = 2, dv = d / h;
    StaticAttentionParams a = StaticAttentionParams::init(d, h, 41);
    StaticAttentionParams b = StaticAttentionParams::init(d, h, 41);
    std::swap(b.wq[0].value, b.wq[1].value);
    std::swap(b.wk[0].value, b.wk[1].value);
    std::swap(b.wv[0].value, b.wv[1].value);
    for (size_t r = 0; r < dv; ++r)
        for (size_t c = 0; c < d; ++c)
            std::swap(b.wo.value(r, c), b.wo.value(dv + r, c));

    DenseMatrix s = random_matrix(4, d, 42);
    CHECK(max_abs_diff(multi_head(s, a), multi_head(s, b)) <= 1e-12);
}

TEST_CASE("two-head attention matches the per-head composition oracle") {
    const size_t d = 4, h = 2, dv = d / h, n = 3;
    StaticAttentionParams params = StaticAttentionParams::init(d, h, 51);
    DenseMatrix s = random_matrix(n, d, 52);

    DenseMatrix concat(n, h * dv);
    for (size_t i = 0; i < h; ++i) {
        DenseMatrix head = self_attention(s, params.wq[i].value, params.wk[i].value,
                                          params.wv[i].value);
        for (size_t r = 0; r < n; ++r)
            for (size_t c = 0; c < dv; ++c) concat(r, i * dv + c) = head(r, c);
    }
    DenseMatrix expected(n, d);
    for (size_t r = 0; r < n; ++r)
        for (size_t c = 0; c < d; ++c) {
            double sum = 0.0;
            for (size_t j = 0; j < h * dv; ++j) sum += concat(r, j) * params.wo.value(j, c);
            expected(r, c) = sum;
        }
    CHECK(max_abs_diff(multi_head(s, params), expected) <= 1e-12);
}

TEST_CASE("head count must divide the model dimension") {
    CHECK_THROWS_AS(StaticAttentionParams::init(6, 4, 1), ConfigError);
    CHECK_THROWS_AS(cost_report(10, 6, 2, 4, 1), ConfigError);
}

TEST_CASE("zeroed gate head yields a uniform intention distribution") {
    const size_t d = 5, t = 3;
    IntentionGate gate = IntentionGate::init(d, t, 61);
    gate.w_a.value.fill(0.0);
    gate.b_a.value.fill(0.0);
    DenseMatrix p_bar = random_matrix(1, d, 62);
    DenseMatrix q_bar = random_matrix(1, d, 63);
    DenseMatrix a = intention_gate(gate, p_bar, q_bar);
    for (size_t i = 0; i < t; ++i) CHECK(a(0, i) == doctest::Approx(1.0 / t).epsilon(1e-12));
}

TEST_CASE("a single expert always receives the full gate weight") {
    IntentionGate gate = IntentionGate::init(4, 1, 71);
    DenseMatrix a = intention_gate(gate, random_matrix(1, 4, 72), random_matrix(1, 4, 73));
    CHECK(a.rows == 1);
    CHECK(a.cols == 1);
    CHECK(a(0, 0) == 1.0);
}

TEST_CASE("intention gate matches a hand-stepped oracle") {
    IntentionGate gate = IntentionGate::init(3, 2, 81);
    gate.w_e.value = DenseMatrix(3, 3, {0.2, -0.1, 0.3, 0.4, 0.5, -0.2, -0.3, 0.1, 0.6});
    gate.b_e.value = DenseMatrix(1, 3, {0.05, -0.05, 0.1});
    gate.w_a.value = DenseMatrix(3, 2, {1.0, -0.5, 0.2, 0.3, -0.4, 0.8});
    gate.b_a.value = DenseMatrix(1, 2, {0.1, -0.2});
    DenseMatrix p_bar(1, 3, {0.5, -1.0, 2.0});
    DenseMatrix q_bar(1, 3, {1.5, 0.25, -0.5});

    // x = p ⊙ q = [0.75, -0.25, -1.0]; relu(x W_E + b_E) = [0.40, 0, 0];
    // logits = [0.5, -0.4]; softmax over a 0.9 gap.
    const double e1 = std::exp(-0.9);
    const double a0 = 1.0 / (1.0 + e1);
    const double a1 = e1 / (1.0 + e1);

    GateCache cache;
    DenseMatrix a = intention_gate(gate, p_bar, q_bar, &cache);
    CHECK(cache.preact(0, 0) == doctest::Approx(0.40).epsilon(1e-12));
    CHECK(cache.preact(0, 1) == doctest::Approx(-0.35).epsilon(1e-12));
    CHECK(cache.preact(0, 2) == doctest::Approx(-0.225).epsilon(1e-12));
    CHECK(a(0, 0) == doctest::Approx(a0).epsilon(1e-12));
    CHECK(a(0, 1) == doctest::Approx(a1).epsilon(1e-12));
}

TEST_CASE("gate outputs always sum to one") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        IntentionGate gate = IntentionGate::init(6, 4, seed);
        DenseMatrix a = intention_gate(gate, random_matrix(1, 6, seed + 100, -3.0, 3.0),
                                       random_matrix(1, 6, seed + 200, -3.0, 3.0));
        double sum = 0.0;
        for (size_t i = 0; i < a.cols; ++i) {
            CHECK(a(0, i) >= 0.0);
            sum += a(0, i);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("mixing degenerates to the lone expert when t is one") {
    ExpertBank bank = ExpertBank::init(1, 4, 91);
    DenseMatrix a(1, 1, {1.0});
    MixedMatrices mixed = mix_experts(a, bank);
    CHECK(max_abs_diff(mixed.wq, bank.wq[0].value) == 0.0);
    CHECK(max_abs_diff(mixed.wk, bank.wk[0].value) == 0.0);
    CHECK(max_abs_diff(mixed.wv, bank.wv[0].value) == 0.0);
}

TEST_CASE("a one-hot gate selects exactly that expert") {
    ExpertBank bank = ExpertBank::init(3, 4, 92);
    DenseMatrix a(1, 3, {0.0, 1.0, 0.0});
    MixedMatrices mixed = mix_experts(a, bank);
    CHECK(max_abs_diff(mixed.wq, bank.wq[1].value) == 0.0);
    CHECK(max_abs_diff(mixed.wk, bank.wk[1].value) == 0.0);
    CHECK(max_abs_diff(mixed.wv, bank.wv[1].value) == 0.0);
}

TEST_CASE("mixing matches the convex-combination oracle for three experts") {
    const size_t d = 5;
    ExpertBank bank = ExpertBank::init(3, d, 93);
    DenseMatrix a = softmax_rows(random_matrix(1, 3, 94));
    MixedMatrices mixed = mix_experts(a, bank);
    for (size_t r = 0; r < d; ++r)
        for (size_t c = 0; c < d; ++c) {
            double expect = a(0, 0) * bank.wq[0].value(r, c) +
                            a(0, 1) * bank.wq[1].value(r, c) +
                            a(0, 2) * bank.wq[2].value(r, c);
            CHECK(mixed.wq(r, c) == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("dynamic attention with one expert equals plain attention") {
    ExpertBank bank = ExpertBank::init(1, 4, 95);
    DenseMatrix s = random_matrix(3, 4, 96);
    DenseMatrix a(1, 1, {1.0});
    DenseMatrix dyn = dynamic_self_attention(s, a, bank);
    DenseMatrix plain = self_attention(s, bank.wq[0].value, bank.wk[0].value,
                                       bank.wv[0].value);
    CHECK(max_abs_diff(dyn, plain) <= 1e-12);
}

TEST_CASE("different gate vectors attend the same list differently") {
    ExpertBank bank = ExpertBank::init(3, 4, 97);
    DenseMatrix s = random_matrix(5, 4, 98);
    DenseMatrix a1(1, 3, {0.8, 0.1, 0.1});
    DenseMatrix a2(1, 3, {0.1, 0.1, 0.8});
    CHECK(max_abs_diff(dynamic_self_attention(s, a1, bank),
                       dynamic_self_attention(s, a2, bank)) > 1e-6);
}

TEST_CASE("encoder block is deterministic at inference and matches its composition") {
    const size_t n = 4, d = 6, t = 2;
    EncoderBlock block = EncoderBlock::init(d, t, 0.0, 111, "blk");
    DenseMatrix s = random_matrix(n, d, 112);
    DenseMatrix a = softmax_rows(random_matrix(1, t, 113));
    Rng rng(1);

    DenseMatrix out1 = encoder_block_forward(s, a, block, false, rng);
    DenseMatrix out2 = encoder_block_forward(s, a, block, false, rng);
    CHECK(max_abs_diff(out1, out2) == 0.0);

    DenseMatrix attn = dynamic_self_attention(s, a, block.bank);
    DenseMatrix x1 = layer_norm(add(s, attn), block.ln1_gain, block.ln1_bias);
    DenseMatrix hidden =
        relu(add_row_broadcast(matmul(x1, block.ffn_w1.value), block.ffn_b1.value));
    DenseMatrix ffn =
        add_row_broadcast(matmul(hidden, block.ffn_w2.value), block.ffn_b2.value);
    DenseMatrix expected = layer_norm(add(x1, ffn), block.ln2_gain, block.ln2_bias);
    CHECK(max_abs_diff(out1, expected) <= 1e-12);
}

TEST_CASE("dropout is reproducible under a seed and inert at inference") {
    const size_t n = 4, d = 6, t = 2;
    EncoderBlock block = EncoderBlock::init(d, t, 0.3, 121, "blk");
    DenseMatrix s = random_matrix(n, d, 122);
    DenseMatrix a = softmax_rows(random_matrix(1, t, 123));

    Rng rng1(7), rng2(7), rng3(8);
    BlockCache c1, c2, c3;
    DenseMatrix out1 = encoder_block_forward(s, a, block, true, rng1, &c1);
    DenseMatrix out2 = encoder_block_forward(s, a, block, true, rng2, &c2);
    CHECK(max_abs_diff(out1, out2) == 0.0);
    CHECK(c1.drop1_mask.rows == n);

    DenseMatrix out3 = encoder_block_forward(s, a, block, true, rng3, &c3);
    CHECK(max_abs_diff(out1, out3) > 0.0);

    BlockCache ci;
    Rng rng4(9);
    encoder_block_forward(s, a, block, false, rng4, &ci);
    CHECK(ci.drop1_mask.rows == 0);
    CHECK(ci.drop2_mask.rows == 0);

    CHECK_THROWS_AS(EncoderBlock::init(d, t, 0.05, 1, "bad"), ConfigError);
    CHECK_THROWS_AS(EncoderBlock::init(d, t, 0.6, 1, "bad"), ConfigError);
}

TEST_CASE("encoder block stays finite on large inputs") {
    const size_t n = 5, d = 8, t = 3;
    EncoderBlock block = EncoderBlock::init(d, t, 0.0, 131, "blk");
    DenseMatrix s = scale(random_matrix(n, d, 132), 1e3);
    DenseMatrix a = softmax_rows(random_matrix(1, t, 133));
    Rng rng(1);
    DenseMatrix out = encoder_block_forward(s, a, block, false, rng);
    CHECK(out.all_finite());
}

TEST_CASE("closed-form multiply-add counts match the instrumented forward passes") {
    for (size_t n : {1, 3, 5, 7}) {
        for (size_t d : {4, 8}) {
            const uint64_t core = 3ull * n * d * d + 2ull * n * n * d;
            CHECK(measured_static_madds(n, d, 1000 + n) == core);
            for (size_t h : {1, 2, 4}) {
                CHECK(measured_multihead_madds(n, d, h, 2000 + n) ==
                      core + 1ull * n * d * d);
            }
            for (size_t t : {1, 2, 4}) {
                CHECK(measured_dynamic_madds(n, d, t, 3000 + n) ==
                      core + 3ull * t * d * d);
            }
        }
    }
}

TEST_CASE("cost report reproduces the reference arithmetic") {
    CostBreakdown small = cost_report(10, 4, 2, 1, 1);
    CHECK(small.dynamic_row.extra_madds == 96);  // 3 t d^2 with d=4, t=2
    CHECK(small.dynamic_row.params - small.static_row.params == 96 - 48);

    CostBreakdown big = cost_report(50, 32, 4, 1, 2);
    CHECK(big.static_row.attn_madds == 313600);
    CHECK(big.dynamic_row.extra_madds == 12288);
    CHECK(big.multihead_row.extra_madds == 51200);
    CHECK(big.dynamic_row.extra_madds < big.multihead_row.extra_madds);

    CostBreakdown one = cost_report(10, 8, 1, 1, 1);
    CHECK(one.dynamic_row.params == one.static_row.params);  // 3(t-1)d^2 = 0 extra

    CHECK(cost_report_tsv(cost_report(2, 4, 2, 2, 1)) ==
          "# n=2 d=4 t=2 h=2 blocks=1; multiply-add counts per encoder block\n"
          "mechanism\tattn_madds\textra_madds\tparams\n"
          "static\t128\t0\t48\n"
          "multihead\t160\t32\t64\n"
          "dynamic\t224\t96\t96\n");
}

TEST_CASE("gradients of gate, experts and block parameters match finite differences") {
    const size_t n = 3, d = 4, t = 2;
    IntentionGate gate = IntentionGate::init(d, t, 141);
    EncoderBlock block = EncoderBlock::init(d, t, 0.0, 142, "blk");

    // Nudge ReLU inputs away from the kink so central differences are valid.
    Rng nudge(143);
    for (size_t i = 0; i < d; ++i) gate.b_e.value(0, i) += nudge.uniform(0.05, 0.25);
    for (size_t i = 0; i < 4 * d; ++i) block.ffn_b1.value(0, i) += nudge.uniform(0.05, 0.25);

    Parameter s_in("s", random_matrix(n, d, 144));
    Parameter p_in("p_bar", random_matrix(1, d, 145));
    Parameter q_in("q_bar", random_matrix(1, d, 146));
    DenseMatrix weights = random_matrix(n, d, 147);
    Rng unused(1);

    auto loss = [&]() {
        DenseMatrix a = intention_gate(gate, p_in.value, q_in.value);
        DenseMatrix out = encoder_block_forward(s_in.value, a, block, false, unused);
        return dot(out, weights);
    };

    GateCache gcache;
    BlockCache bcache;
    DenseMatrix a = intention_gate(gate, p_in.value, q_in.value, &gcache);
    REQUIRE(min_abs(gcache.preact) > 1e-4);
    DenseMatrix out = encoder_block_forward(s_in.value, a, block, false, unused, &bcache);
    REQUIRE(min_abs(bcache.ffn_pre) > 1e-4);

    auto [ds, da] = encoder_block_backward(block, bcache, weights);
    auto [dp, dq] = intention_gate_backward(gate, gcache, da);

    std::vector<Parameter*> params;
    gate.collect_parameters(params);
    block.collect_parameters(params);
    for (Parameter* p : params) {
        DenseMatrix numeric = finite_diff_grad(loss, *p, 1e-5);
        check_grad_close(p->grad, numeric, p->name);
    }
    check_grad_close(ds, finite_diff_grad(loss, s_in, 1e-5), "d/dS");
    check_grad_close(dp, finite_diff_grad(loss, p_in, 1e-5), "d/dp_bar");
    check_grad_close(dq, finite_diff_grad(loss, q_in, 1e-5), "d/dq_bar");
}

TEST_CASE("plain attention projection gradients match finite differences") {
    const size_t n = 3, d = 4;
    Parameter s_in("s", random_matrix(n, d, 151));
    Parameter wq("wq", random_matrix(d, d, 152, -0.5, 0.5));
    Parameter wk("wk", random_matrix(d, d, 153, -0.5, 0.5));
    Parameter wv("wv", random_matrix(d, d, 154, -0.5, 0.5));
    DenseMatrix weights = random_matrix(n, d, 155);

    auto loss = [&]() {
        return dot(self_attention(s_in.value, wq.value, wk.value, wv.value), weights);
    };

    AttnCache cache;
    self_attention(s_in.value, wq.value, wk.value, wv.value, &cache);
    DenseMatrix ds = self_attention_backward(cache, wq.value, wk.value, wv.value, weights,
                                             wq.grad, wk.grad, wv.grad);
    check_grad_close(wq.grad, finite_diff_grad(loss, wq, 1e-5), "wq");
    check_grad_close(wk.grad, finite_diff_grad(loss, wk, 1e-5), "wk");
    check_grad_close(wv.grad, finite_diff_grad(loss, wv, 1e-5), "wv");
    check_grad_close(ds, finite_diff_grad(loss, s_in, 1e-5), "d/dS");
}
